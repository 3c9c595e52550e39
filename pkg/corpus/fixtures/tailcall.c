#include <stdio.h>

__attribute__((noinline)) int tc_target(int x) { return x * 2 + 1; }

__attribute__((noinline)) int tc_caller(int x) { return tc_target(x + 3); }

int main(int argc, char **argv) {
    int r = tc_caller(argc) + tc_target(argc);
    printf("%d\n", r);
    return r & 1;
}
