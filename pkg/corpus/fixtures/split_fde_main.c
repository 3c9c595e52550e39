#include <stdio.h>

extern int split_fn(int);
extern int split_between(int);

int main(int argc, char **argv) {
    int r = split_fn(argc - 1) + split_between(argc);
    printf("%d\n", r);
    return 0;
}
