#include <stdio.h>
#include <stdlib.h>

__attribute__((noinline)) void die(const char *msg) {
    puts(msg);
    exit(2);
}

__attribute__((noinline)) void die_hard(void) {
    die("fatal");
}

__attribute__((noinline)) int checked_div(int a, int b) {
    if (!b)
        die("div0");
    return a / b;
}

int main(int argc, char **argv) {
    if (argc > 9)
        die_hard();
    printf("%d\n", checked_div(10, argc));
    return 0;
}
