#include <stdio.h>

extern int asm_helper(int);

int main(int argc, char **argv) {
    printf("%d\n", asm_helper(argc));
    return 0;
}
