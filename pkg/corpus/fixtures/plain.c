#include <stdio.h>

__attribute__((noinline)) long mix(long a, long b) { return a * 31 + b; }

__attribute__((noinline)) long triple(long x) { return mix(x, x << 1) + mix(x, 3); }

__attribute__((noinline)) long reduce(const long *v, int n) {
    long s = 0;
    for (int i = 0; i < n; i++)
        s = mix(s, v[i]);
    return s;
}

int main(void) {
    long v[4] = {1, 2, 3, 4};
    long r = reduce(v, 4) + triple(5);
    printf("%ld\n", r);
    return (int)(r & 1);
}
