/* Scripted allocation sequence: exactly 10 heap events, used by the
 * round-trip tests.  Expected trace multiset:
 *   A 100, A 16, A 32, F, A 32 (calloc 4x8), R -> 64, F, A 0, F, F
 */
#include <stdlib.h>
#include <string.h>

static void use(void *p, size_t n)
{
    if (p != NULL && n > 0)
        memset(p, 0x5A, n);
}

int main(void)
{
    char * volatile p1 = malloc(100);
    use(p1, 100);
    char * volatile p2 = malloc(16);
    use(p2, 16);
    char * volatile p3 = malloc(32);
    use(p3, 32);
    free(p2);
    char * volatile p4 = calloc(4, 8);
    use(p4, 32);
    char * volatile p5 = realloc(p3, 64);
    use(p5, 64);
    free(p1);
    char * volatile p6 = malloc(0);
    free(p6);
    free(p4);
    /* p5 stays live at exit on purpose */
    return p5 == NULL ? 1 : 0;
}
