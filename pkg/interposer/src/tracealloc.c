/* tracealloc: LD_PRELOAD shim that logs heap allocation events.
 *
 * Intercepts malloc/free/calloc/realloc and the aligned entry points,
 * forwards every call to the real allocator unchanged, and appends one
 * line per event to the file named by ALLOC_TRACE_FILE:
 *
 *   A <id> <size>            allocation (calloc logs the product size)
 *   F <id>                   free
 *   R <old_id> <id> <size>   reallocation
 *
 * Ids come from a process-global atomic counter, never from addresses,
 * so address reuse cannot corrupt lifetime reconstruction.  Events are
 * buffered and flushed through one serialized writer so the file order
 * never shows a free before its allocation, even across threads.
 *
 * If the output path is missing or unwritable the shim disables logging
 * but keeps forwarding.  Internal bookkeeping uses mmap and a static
 * bootstrap arena only: the shim itself never calls the heap it traces.
 */

#define _GNU_SOURCE
#include <dlfcn.h>
#include <fcntl.h>
#include <pthread.h>
#include <stdarg.h>
#include <stdatomic.h>
#include <stdint.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <sys/mman.h>
#include <unistd.h>

#define ENV_TRACE_FILE "ALLOC_TRACE_FILE"
#define LOG_BUF_SIZE (1u << 16)
#define BOOT_ARENA_SIZE (1u << 16)

static void *(*real_malloc)(size_t);
static void (*real_free)(void *);
static void *(*real_calloc)(size_t, size_t);
static void *(*real_realloc)(void *, size_t);
static void *(*real_aligned_alloc)(size_t, size_t);
static void *(*real_memalign)(size_t, size_t);
static int (*real_posix_memalign)(void **, size_t, size_t);
static void *(*real_valloc)(size_t);

static atomic_uint_fast64_t next_id = 0;
static int trace_fd = -1;
static int logging_enabled = 0;
static pthread_once_t init_once = PTHREAD_ONCE_INIT;
static int initializing = 0;

/* bootstrap arena: serves allocations made while dlsym resolves symbols */
static char boot_arena[BOOT_ARENA_SIZE];
static size_t boot_used = 0;

static int from_boot_arena(const void *p)
{
    return (const char *)p >= boot_arena && (const char *)p < boot_arena + BOOT_ARENA_SIZE;
}

static void *boot_alloc(size_t size)
{
    size = (size + 15u) & ~(size_t)15u;
    if (boot_used + size > BOOT_ARENA_SIZE)
        return NULL;
    void *p = boot_arena + boot_used;
    boot_used += size;
    return p;
}

/* ---- pointer -> id map (mmap-backed open addressing) -------------------- */

typedef struct {
    uintptr_t key; /* 0 empty, 1 tombstone */
    uint64_t id;
} slot_t;

static pthread_mutex_t map_lock = PTHREAD_MUTEX_INITIALIZER;
static slot_t *map_slots;
static size_t map_cap; /* power of two */
static size_t map_live;

static uint64_t hash_ptr(uintptr_t p)
{
    uint64_t z = (uint64_t)p + UINT64_C(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)) * UINT64_C(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)) * UINT64_C(0x94D049BB133111EB);
    return z ^ (z >> 31);
}

static slot_t *map_mmap(size_t cap)
{
    void *mem = mmap(NULL, cap * sizeof(slot_t), PROT_READ | PROT_WRITE,
                     MAP_PRIVATE | MAP_ANONYMOUS, -1, 0);
    return mem == MAP_FAILED ? NULL : mem;
}

static void map_insert_raw(slot_t *slots, size_t cap, uintptr_t key, uint64_t id)
{
    size_t i = hash_ptr(key) & (cap - 1);
    while (slots[i].key != 0 && slots[i].key != 1)
        i = (i + 1) & (cap - 1);
    slots[i].key = key;
    slots[i].id = id;
}

static int map_grow(void)
{
    size_t new_cap = map_cap ? map_cap * 2 : 4096;
    slot_t *fresh = map_mmap(new_cap);
    if (fresh == NULL)
        return -1;
    for (size_t i = 0; i < map_cap; i++)
        if (map_slots[i].key > 1)
            map_insert_raw(fresh, new_cap, map_slots[i].key, map_slots[i].id);
    if (map_slots)
        munmap(map_slots, map_cap * sizeof(slot_t));
    map_slots = fresh;
    map_cap = new_cap;
    return 0;
}

/* caller holds map_lock */
static int map_put(const void *ptr, uint64_t id)
{
    if (map_cap == 0 || map_live * 10 >= map_cap * 6)
        if (map_grow() != 0)
            return -1;
    map_insert_raw(map_slots, map_cap, (uintptr_t)ptr, id);
    map_live++;
    return 0;
}

/* caller holds map_lock; returns 0 when the pointer was never tracked */
static uint64_t map_remove(const void *ptr)
{
    if (map_cap == 0)
        return 0;
    size_t i = hash_ptr((uintptr_t)ptr) & (map_cap - 1);
    while (map_slots[i].key != 0) {
        if (map_slots[i].key == (uintptr_t)ptr) {
            uint64_t id = map_slots[i].id;
            map_slots[i].key = 1; /* tombstone */
            map_live--;
            return id;
        }
        i = (i + 1) & (map_cap - 1);
    }
    return 0;
}

/* ---- serialized buffered writer ----------------------------------------- */

static pthread_mutex_t log_lock = PTHREAD_MUTEX_INITIALIZER;
static char log_buf[LOG_BUF_SIZE];
static size_t log_len = 0;

static void log_flush_locked(void)
{
    size_t off = 0;
    while (off < log_len) {
        ssize_t n = write(trace_fd, log_buf + off, log_len - off);
        if (n <= 0)
            break;
        off += (size_t)n;
    }
    log_len = 0;
}

static void log_event(const char *line, size_t len)
{
    if (!logging_enabled)
        return;
    pthread_mutex_lock(&log_lock);
    if (log_len + len > LOG_BUF_SIZE)
        log_flush_locked();
    memcpy(log_buf + log_len, line, len);
    log_len += len;
    pthread_mutex_unlock(&log_lock);
}

static void record_alloc(const void *ptr, size_t size)
{
    if (!logging_enabled || ptr == NULL)
        return;
    uint64_t id = atomic_fetch_add(&next_id, 1) + 1;
    char line[64];
    int len;
    pthread_mutex_lock(&map_lock);
    map_put(ptr, id);
    pthread_mutex_unlock(&map_lock);
    len = snprintf(line, sizeof line, "A %llu %zu\n", (unsigned long long)id, size);
    log_event(line, (size_t)len);
}

static void record_free(const void *ptr)
{
    if (!logging_enabled || ptr == NULL)
        return;
    pthread_mutex_lock(&map_lock);
    uint64_t id = map_remove(ptr);
    pthread_mutex_unlock(&map_lock);
    if (id == 0)
        return; /* allocated before the shim initialized, or not heap */
    char line[32];
    int len = snprintf(line, sizeof line, "F %llu\n", (unsigned long long)id);
    log_event(line, (size_t)len);
}

static void record_realloc(uint64_t old_id, const void *ptr, size_t size)
{
    if (!logging_enabled || ptr == NULL)
        return;
    uint64_t id = atomic_fetch_add(&next_id, 1) + 1;
    char line[96];
    int len;
    pthread_mutex_lock(&map_lock);
    map_put(ptr, id);
    pthread_mutex_unlock(&map_lock);
    len = snprintf(line, sizeof line, "R %llu %llu %zu\n", (unsigned long long)old_id,
                   (unsigned long long)id, size);
    log_event(line, (size_t)len);
}

/* ---- init / teardown ------------------------------------------------------ */

static void shim_init(void)
{
    initializing = 1;
    real_malloc = dlsym(RTLD_NEXT, "malloc");
    real_free = dlsym(RTLD_NEXT, "free");
    real_calloc = dlsym(RTLD_NEXT, "calloc");
    real_realloc = dlsym(RTLD_NEXT, "realloc");
    real_aligned_alloc = dlsym(RTLD_NEXT, "aligned_alloc");
    real_memalign = dlsym(RTLD_NEXT, "memalign");
    real_posix_memalign = dlsym(RTLD_NEXT, "posix_memalign");
    real_valloc = dlsym(RTLD_NEXT, "valloc");
    initializing = 0;

    const char *path = getenv(ENV_TRACE_FILE);
    if (path == NULL || path[0] == '\0')
        return;
    int fd = open(path, O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd < 0)
        return; /* unwritable: stay transparent, never alter the target */
    trace_fd = fd;
    logging_enabled = 1;
}

static void ensure_init(void)
{
    pthread_once(&init_once, shim_init);
}

__attribute__((destructor)) static void shim_fini(void)
{
    if (!logging_enabled)
        return;
    pthread_mutex_lock(&log_lock);
    log_flush_locked();
    logging_enabled = 0;
    pthread_mutex_unlock(&log_lock);
    close(trace_fd);
}

/* ---- intercepted entry points --------------------------------------------- */

void *malloc(size_t size)
{
    if (initializing)
        return boot_alloc(size);
    ensure_init();
    void *p = real_malloc(size);
    record_alloc(p, size);
    return p;
}

void free(void *ptr)
{
    if (ptr == NULL || from_boot_arena(ptr))
        return;
    ensure_init();
    record_free(ptr); /* unmap the id before the address can be reissued */
    real_free(ptr);
}

void *calloc(size_t nmemb, size_t size)
{
    if (initializing || real_calloc == NULL) {
        /* dlsym itself allocates via calloc on glibc */
        if (!initializing)
            ensure_init();
        if (real_calloc == NULL) {
            void *p = boot_alloc(nmemb * size);
            if (p != NULL)
                memset(p, 0, nmemb * size);
            return p;
        }
    }
    ensure_init();
    void *p = real_calloc(nmemb, size);
    record_alloc(p, nmemb * size);
    return p;
}

void *realloc(void *ptr, size_t size)
{
    ensure_init();
    if (ptr == NULL || from_boot_arena(ptr)) {
        void *p = real_malloc(size);
        record_alloc(p, size);
        return p;
    }
    if (size == 0) {
        record_free(ptr);
        return real_realloc(ptr, 0);
    }
    pthread_mutex_lock(&map_lock);
    uint64_t old_id = map_remove(ptr); /* remove first: realloc may move or free */
    pthread_mutex_unlock(&map_lock);
    void *p = real_realloc(ptr, size);
    if (p == NULL) {
        if (old_id != 0) { /* original block survives a failed realloc */
            pthread_mutex_lock(&map_lock);
            map_put(ptr, old_id);
            pthread_mutex_unlock(&map_lock);
        }
        return NULL;
    }
    if (old_id == 0)
        record_alloc(p, size); /* untracked origin: treat as a fresh allocation */
    else
        record_realloc(old_id, p, size);
    return p;
}

void *aligned_alloc(size_t alignment, size_t size)
{
    ensure_init();
    void *p = real_aligned_alloc(alignment, size);
    record_alloc(p, size);
    return p;
}

void *memalign(size_t alignment, size_t size)
{
    ensure_init();
    void *p = real_memalign(alignment, size);
    record_alloc(p, size);
    return p;
}

int posix_memalign(void **memptr, size_t alignment, size_t size)
{
    ensure_init();
    int rc = real_posix_memalign(memptr, alignment, size);
    if (rc == 0)
        record_alloc(*memptr, size);
    return rc;
}

void *valloc(size_t size)
{
    ensure_init();
    void *p = real_valloc(size);
    record_alloc(p, size);
    return p;
}
