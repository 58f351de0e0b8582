/* heapreplay: replay a synthetic heap schedule through the C allocator.
 *
 * Reads a workload profile (line format: total_ops / free_probability /
 * max_live_blocks / size_bucket <lo> <weight> ...), expands it with a
 * splitmix64 stream seeded from --seed, and issues real malloc/free calls
 * so that preloaded allocators and environment tunables take effect.
 *
 * The generator must stay bit-identical to the Python synth_schedule:
 * same draw order, u64-only arithmetic, doubles only via (u64>>11)*2^-53
 * and via strtod of the same decimal text.
 *
 * Exit codes: 0 ok, 2 profile/usage error, 3 allocation failure.
 */

#include <errno.h>
#include <inttypes.h>
#include <math.h>
#include <stdint.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#define MAX_BUCKETS 80

typedef struct {
    uint64_t lo;
    uint64_t weight; /* floor(w * 1e9 + 0.5) */
} bucket_t;

typedef struct {
    void *ptr;
    uint64_t size;
} block_t;

static uint64_t sm_state;

static uint64_t next_u64(void)
{
    sm_state += UINT64_C(0x9E3779B97F4A7C15);
    uint64_t z = sm_state;
    z = (z ^ (z >> 30)) * UINT64_C(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)) * UINT64_C(0x94D049BB133111EB);
    return z ^ (z >> 31);
}

static double next_double(void)
{
    return (double)(next_u64() >> 11) * (1.0 / 9007199254740992.0);
}

static void die_profile(const char *path, const char *msg)
{
    fprintf(stderr, "heapreplay: %s: %s\n", path, msg);
    exit(2);
}

int main(int argc, char **argv)
{
    const char *profile_path = NULL;
    uint64_t seed = 0;
    int have_seed = 0;
    int touch = 0;
    uint64_t page = 4096;

    for (int i = 1; i < argc; i++) {
        if (strcmp(argv[i], "--seed") == 0 && i + 1 < argc) {
            seed = strtoull(argv[++i], NULL, 10);
            have_seed = 1;
        } else if (strcmp(argv[i], "--touch") == 0) {
            touch = 1;
        } else if (strcmp(argv[i], "--page-size") == 0 && i + 1 < argc) {
            page = strtoull(argv[++i], NULL, 10);
            if (page == 0) {
                fprintf(stderr, "heapreplay: --page-size must be > 0\n");
                return 2;
            }
        } else if (argv[i][0] == '-') {
            fprintf(stderr, "heapreplay: unknown option %s\n", argv[i]);
            fprintf(stderr, "usage: heapreplay <profile> --seed N [--touch] [--page-size B]\n");
            return 2;
        } else if (profile_path == NULL) {
            profile_path = argv[i];
        } else {
            fprintf(stderr, "heapreplay: unexpected argument %s\n", argv[i]);
            return 2;
        }
    }
    if (profile_path == NULL || !have_seed) {
        fprintf(stderr, "usage: heapreplay <profile> --seed N [--touch] [--page-size B]\n");
        return 2;
    }

    FILE *fh = fopen(profile_path, "r");
    if (fh == NULL) {
        fprintf(stderr, "heapreplay: %s: %s\n", profile_path, strerror(errno));
        return 2;
    }

    uint64_t total_ops = 0, max_live = 0;
    double free_probability = -1.0;
    bucket_t buckets[MAX_BUCKETS];
    int n_buckets = 0;
    int have_total = 0, have_live = 0;
    char line[4096];

    while (fgets(line, sizeof line, fh) != NULL) {
        char *p = line;
        while (*p == ' ' || *p == '\t')
            p++;
        if (*p == '#' || *p == '\n' || *p == '\0' || *p == '\r')
            continue;
        uint64_t lo;
        double w;
        if (sscanf(p, "total_ops %" SCNu64, &total_ops) == 1) {
            have_total = 1;
        } else if (sscanf(p, "free_probability %lf", &free_probability) == 1) {
            /* parsed */
        } else if (sscanf(p, "max_live_blocks %" SCNu64, &max_live) == 1) {
            have_live = 1;
        } else if (strncmp(p, "source", 6) == 0) {
            /* provenance only */
        } else if (sscanf(p, "size_bucket %" SCNu64 " %lf", &lo, &w) == 2) {
            if (n_buckets >= MAX_BUCKETS)
                die_profile(profile_path, "too many size buckets");
            if (w < 0.0)
                die_profile(profile_path, "negative bucket weight");
            buckets[n_buckets].lo = lo;
            buckets[n_buckets].weight = (uint64_t)floor(w * 1e9 + 0.5);
            n_buckets++;
        } else if (sscanf(p, "lifetime_bucket %" SCNu64 " %lf", &lo, &w) == 2) {
            /* recorded for provenance; the generator does not consume it */
        } else {
            die_profile(profile_path, "unrecognized line");
        }
    }
    fclose(fh);

    if (!have_total || total_ops < 1)
        die_profile(profile_path, "total_ops missing or < 1");
    if (!have_live || max_live < 1)
        die_profile(profile_path, "max_live_blocks missing or < 1");
    if (free_probability < 0.0 || free_probability > 1.0)
        die_profile(profile_path, "free_probability missing or outside [0, 1]");
    if (n_buckets == 0)
        die_profile(profile_path, "no size buckets");

    uint64_t total_weight = 0;
    for (int i = 0; i < n_buckets; i++)
        total_weight += buckets[i].weight;
    if (total_weight == 0)
        die_profile(profile_path, "all bucket weights are zero");

    /* Fixed live-block table: the only harness allocation, so measured heap
     * reflects the schedule rather than the replayer. */
    block_t *live = malloc((size_t)max_live * sizeof(block_t));
    if (live == NULL) {
        fprintf(stderr, "heapreplay: cannot allocate live table (%" PRIu64 " slots)\n",
                max_live);
        return 3;
    }

    sm_state = seed;
    uint64_t allocs = 0, live_n = 0;
    uint64_t live_bytes = 0, max_live_bytes = 0, ops_executed = 0;

    while (allocs < total_ops || live_n > 0) {
        int do_free;
        if (allocs == total_ops)
            do_free = 1;
        else if (live_n == 0)
            do_free = 0;
        else if (live_n == max_live)
            do_free = 1;
        else
            do_free = next_double() < free_probability;

        if (do_free) {
            uint64_t v = next_u64() % live_n;
            free(live[v].ptr);
            live_bytes -= live[v].size;
            live[v] = live[live_n - 1];
            live_n--;
        } else {
            uint64_t r = next_u64() % total_weight;
            uint64_t lo = buckets[n_buckets - 1].lo;
            for (int i = 0; i < n_buckets; i++) {
                if (r < buckets[i].weight) {
                    lo = buckets[i].lo;
                    break;
                }
                r -= buckets[i].weight;
            }
            uint64_t size = (lo == 0) ? 0 : lo + next_u64() % lo;
            void *p = malloc((size_t)size);
            if (p == NULL && size > 0) {
                fprintf(stderr, "heapreplay: allocation of %" PRIu64 " bytes failed\n",
                        size);
                return 3;
            }
            if (touch && p != NULL) {
                volatile char *c = p;
                for (uint64_t off = 0; off < size; off += page)
                    c[off] = (char)0xA5;
            }
            live[live_n].ptr = p;
            live[live_n].size = size;
            live_n++;
            live_bytes += size;
            if (live_bytes > max_live_bytes)
                max_live_bytes = live_bytes;
            allocs++;
        }
        ops_executed++;
    }

    free(live);
    printf("ops=%" PRIu64 " max_live_bytes=%" PRIu64 "\n", ops_executed,
           max_live_bytes);
    return 0;
}
