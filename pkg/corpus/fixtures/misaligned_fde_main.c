#include <stdio.h>

extern void restore_stub(void);

void (*mis_handler)(void) = restore_stub;

int main(int argc, char **argv) {
    printf("%p\n", (void *)mis_handler);
    return 0;
}
