/* C interface to the cbred library.
 *
 * Every fallible call returns a cbred_status. On failure the message and an
 * optional integer detail (offending line, arch id, ...) are kept per thread
 * and can be read back with cbred_last_error / cbred_last_error_detail until
 * the next failing call on that thread.
 *
 * Functions producing text take (buf, cap, needed): at most cap bytes are
 * written including the terminating NUL, *needed (if non-NULL) receives the
 * full size including the NUL, and CBRED_BUFFER_TOO_SMALL is returned when
 * the text was truncated. Passing buf = NULL, cap = 0 is a size query.
 */
#ifndef CBRED_H
#define CBRED_H

#include <stddef.h>
#include <stdint.h>

#if defined(CBRED_BUILDING)
#define CBRED_API __attribute__((visibility("default")))
#else
#define CBRED_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cbred_status {
  CBRED_OK = 0,
  CBRED_INVALID_INPUT = 1,
  CBRED_DEGENERATE_SPACE = 2,
  CBRED_SINGULAR_KERNEL = 3,
  CBRED_DEGENERATE_JACOBIAN = 4,
  CBRED_MISSING_STAT = 5,
  CBRED_PARSE_ERROR = 6,
  CBRED_DUPLICATE_KEY = 7,
  CBRED_INSUFFICIENT_CLUSTERS = 8,
  CBRED_MISSING_ACCURACY = 9,
  CBRED_MISSING_ARTIFACT = 10,
  CBRED_PROVENANCE_MISMATCH = 11,
  CBRED_IO = 12,
  CBRED_BUFFER_TOO_SMALL = 13,
  CBRED_INTERNAL = 14
} cbred_status;

CBRED_API const char* cbred_status_name(cbred_status status);
CBRED_API const char* cbred_last_error(void);
/* -1 when the last error carried no detail. */
CBRED_API int64_t cbred_last_error_detail(void);

CBRED_API const char* cbred_version(void);

/* ---- cells ------------------------------------------------------------ */

enum { CBRED_NUM_OPS = 5, CBRED_NUM_EDGES = 6, CBRED_SPACE_SIZE = 15625 };

/* Canonical cell string to ArchId. */
CBRED_API cbred_status cbred_cell_parse(const char* text, uint32_t* out_id);
CBRED_API cbred_status cbred_cell_render(uint32_t id, char* buf, size_t cap, size_t* needed);
/* ops receives CBRED_NUM_EDGES op codes in edge order. */
CBRED_API cbred_status cbred_cell_ops(uint32_t id, uint8_t* ops);
/* Op-frequency and path-incidence vectors, CBRED_NUM_OPS entries each. */
CBRED_API cbred_status cbred_cell_features(uint32_t id, int32_t* freq, int32_t* path);
/* Multiply-accumulates of the default macro skeleton built from this cell. */
CBRED_API cbred_status cbred_cell_macs(uint32_t id, uint64_t* out_macs);
/* Id after dead-edge pruning. */
CBRED_API cbred_status cbred_cell_canonical(uint32_t id, uint32_t* out_id);

/* Ids over the given op codes in ascending order, optionally deduplicated.
 * Writes min(cap, count) ids; *count receives the full count. */
CBRED_API cbred_status cbred_enumerate(const uint8_t* opset, size_t n_ops, int dedup, uint32_t* out_ids,
                                       size_t cap, size_t* count);

/* ---- run configuration and stages ------------------------------------- */

typedef struct cbred_config cbred_config;

CBRED_API cbred_status cbred_config_create(cbred_config** out);
CBRED_API void cbred_config_destroy(cbred_config* cfg);
/* Keys are the long CLI flag names without dashes, e.g. "min-pts". */
CBRED_API cbred_status cbred_config_set(cbred_config* cfg, const char* key, const char* value);
CBRED_API cbred_status cbred_config_load(cbred_config* cfg, const char* path);
/* 16 hex digits of the provenance hash. */
CBRED_API cbred_status cbred_config_hash(const cbred_config* cfg, char* buf, size_t cap, size_t* needed);
CBRED_API cbred_status cbred_config_serialize(const cbred_config* cfg, char* buf, size_t cap, size_t* needed);

/* stage: enumerate, distances, cluster, stats, select, evaluate, report or
 * pipeline. The human-readable summary is written to buf. A summary that does
 * not fit is truncated but the stage itself has completed. */
CBRED_API cbred_status cbred_run_stage(const cbred_config* cfg, const char* stage, char* buf, size_t cap,
                                       size_t* needed);

/* ---- distances and clustering ----------------------------------------- */

typedef struct cbred_distance cbred_distance;

CBRED_API cbred_status cbred_distance_compute(const uint32_t* ids, size_t n, double alpha, unsigned threads,
                                              cbred_distance** out);
/* ids must be the space the file was computed over. */
CBRED_API cbred_status cbred_distance_load(const char* path, const uint32_t* ids, size_t n,
                                           cbred_distance** out);
CBRED_API cbred_status cbred_distance_save(const cbred_distance* dm, const char* path);
CBRED_API size_t cbred_distance_size(const cbred_distance* dm);
/* i and j index the id array the matrix was built over. */
CBRED_API cbred_status cbred_distance_get(const cbred_distance* dm, size_t i, size_t j, float* out);
CBRED_API void cbred_distance_destroy(cbred_distance* dm);

/* labels receives one entry per point (-1 for noise). */
CBRED_API cbred_status cbred_dbscan(const cbred_distance* dm, double eps, size_t min_pts, int32_t* labels,
                                    int32_t* out_k);

/* ---- training-free statistics ----------------------------------------- */

typedef struct cbred_stat_record {
  uint32_t arch_id;
  double ntk_cond;
  int64_t lin_regions;
  double naswot_v1;
  double naswot_v2;
} cbred_stat_record;

/* Statistics on the toy network described by cfg. */
CBRED_API cbred_status cbred_compute_stats(const cbred_config* cfg, uint32_t id, cbred_stat_record* out);

#ifdef __cplusplus
}
#endif

#endif /* CBRED_H */
