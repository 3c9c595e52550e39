#include <error.h>
#include <stdio.h>

int counter;

__attribute__((noinline)) void warn_zero(int x) {
    error(0, 0, "note %d", x);
    counter++;
}

__attribute__((noinline)) void fail_nonzero(int x) {
    error(1, 0, "bad %d", x);
    counter--;
}

int main(int argc, char **argv) {
    warn_zero(argc);
    if (argc > 5)
        fail_nonzero(argc);
    printf("%d\n", counter);
    return 0;
}
