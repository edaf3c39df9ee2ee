/* Build: cargo build -p timem-ffi --release
 *        cc crates/ffi/examples/recall.c -Icrates/ffi/include \
 *           target/release/libtimem_ffi.a -lpthread -ldl -lm -o recall
 * Usage: ./recall transcript.json user "question"
 */
#include <stdio.h>
#include <stdlib.h>

#include "timem.h"

static char *slurp(const char *path) {
    FILE *f = fopen(path, "rb");
    if (!f) return NULL;
    fseek(f, 0, SEEK_END);
    long n = ftell(f);
    rewind(f);
    char *buf = malloc(n + 1);
    if (buf && fread(buf, 1, n, f) == (size_t)n) buf[n] = '\0';
    fclose(f);
    return buf;
}

static int fail(TimemStatus s) {
    const char *msg = timem_last_error_message();
    fprintf(stderr, "timem error %d: %s\n", (int)s, msg ? msg : "");
    return 1;
}

int main(int argc, char **argv) {
    if (argc != 4) {
        fprintf(stderr, "usage: %s transcript.json user question\n", argv[0]);
        return 2;
    }
    char *json = slurp(argv[1]);
    if (!json) {
        perror(argv[1]);
        return 2;
    }

    TimemEngine *engine = NULL;
    TimemStatus s = timem_engine_open(NULL, NULL, &engine);
    if (s != TIMEM_STATUS_OK) return fail(s);

    s = timem_ingest_transcript(engine, json);
    free(json);
    if (s != TIMEM_STATUS_OK) return fail(s);

    char *result = NULL;
    s = timem_recall_json(engine, argv[2], argv[3], NULL, 0, TIMEM_COMPLEXITY_AUTO, &result);
    if (s != TIMEM_STATUS_OK) return fail(s);
    puts(result);

    timem_string_free(result);
    timem_engine_free(engine);
    return 0;
}
