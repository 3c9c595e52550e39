#include <stdio.h>

int acc;

__attribute__((noinline)) void dispatch(int x) {
    switch (x) {
    case 0: acc += 11; break;
    case 1: puts("one"); break;
    case 2: acc *= 3; break;
    case 3: printf("%d\n", acc); break;
    case 4: acc -= 7; break;
    case 5: acc ^= 0x55; break;
    default: acc = -1; break;
    }
}

int main(int argc, char **argv) {
    for (int i = 0; i < argc + 6; i++)
        dispatch(i);
    printf("%d\n", acc);
    return acc & 1;
}
