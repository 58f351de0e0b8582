/* Multithreaded target: several workers allocate and free concurrently,
 * and half of each worker's blocks are freed by the main thread, so the
 * trace includes cross-thread frees.
 */
#include <pthread.h>
#include <stdlib.h>
#include <string.h>

#define WORKERS 4
#define BLOCKS 200

static void *kept[WORKERS][BLOCKS / 2];

static void *worker(void *arg)
{
    long index = (long)arg;
    int k = 0;
    for (int i = 0; i < BLOCKS; i++) {
        size_t size = 16 + (size_t)(i % 7) * 24;
        char *p = malloc(size);
        if (p == NULL)
            return (void *)1;
        memset(p, (int)index, size);
        if (i % 2 == 0)
            free(p);
        else
            kept[index][k++] = p;
    }
    return NULL;
}

int main(void)
{
    pthread_t threads[WORKERS];
    for (long i = 0; i < WORKERS; i++)
        if (pthread_create(&threads[i], NULL, worker, (void *)i) != 0)
            return 1;
    for (int i = 0; i < WORKERS; i++)
        pthread_join(threads[i], NULL);
    for (int i = 0; i < WORKERS; i++)
        for (int k = 0; k < BLOCKS / 2; k++)
            free(kept[i][k]);
    return 0;
}
