#include <stdio.h>

extern int regalias_fn(int);

int main(int argc, char **argv) {
    printf("%d\n", regalias_fn(argc));
    return 0;
}
