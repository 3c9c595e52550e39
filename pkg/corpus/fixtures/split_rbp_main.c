#include <stdio.h>

extern int split_rbp_fn(int);

int main(int argc, char **argv) {
    printf("%d\n", split_rbp_fn(argc - 1));
    return 0;
}
