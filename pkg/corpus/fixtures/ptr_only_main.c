#include <stdio.h>

extern int ptr_only_fn(int);

int (*fn_table[2])(int) = {ptr_only_fn, 0};

int main(int argc, char **argv) {
    int r = fn_table[argc & 1] ? fn_table[argc & 1](argc) : 0;
    printf("%d\n", r);
    return 0;
}
