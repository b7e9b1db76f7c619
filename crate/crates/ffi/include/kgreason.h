#ifndef KGREASON_H
#define KGREASON_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum KgrStatus {
  KGR_STATUS_OK = 0,
  KGR_STATUS_NULL_ARGUMENT = 1,
  KGR_STATUS_INVALID_UTF8 = 2,
  KGR_STATUS_IO = 3,
  KGR_STATUS_PARSE = 4,
  KGR_STATUS_INVALID_HANDLE = 5,
  KGR_STATUS_UNKNOWN_ENTITY = 6,
  KGR_STATUS_UNGROUNDED_PLAN = 7,
  KGR_STATUS_PLAN_SYNTAX = 8,
  KGR_STATUS_DOMAIN = 9,
  KGR_STATUS_JSON = 10,
  KGR_STATUS_PANIC = 11,
} KgrStatus;

/**
 * Loaded knowledge graph. Immutable once built; may be shared across threads.
 */
typedef struct KgrGraph KgrGraph;

typedef struct KgrGraphStats {
  uint64_t entities;
  uint64_t relations;
  uint64_t triples;
} KgrGraphStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call into this library from the same thread.
 */
const char *kgr_last_error(void);

/**
 * Library version as a static string.
 */
const char *kgr_version(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void kgr_string_free(char *s);

/**
 * Loads a TSV triple file, gzip-compressed or not.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum KgrStatus kgr_graph_load_file(const char *path, bool inverse_relations, struct KgrGraph **out);

/**
 * Loads triples from an in-memory buffer (TSV or gzip TSV).
 *
 * # Safety
 * `data` must point to `len` readable bytes; `out` must be writable.
 */
enum KgrStatus kgr_graph_load_bytes(const uint8_t *data,
                                    size_t len,
                                    bool inverse_relations,
                                    struct KgrGraph **out);

/**
 * Releases a graph. NULL is ignored.
 *
 * # Safety
 * `g` must come from a load call and not have been freed already.
 */
void kgr_graph_free(struct KgrGraph *g);

/**
 * # Safety
 * `g` must be a live handle; `out` must be writable.
 */
enum KgrStatus kgr_graph_stats(const struct KgrGraph *g, struct KgrGraphStats *out);

/**
 * Handle of an entity label; `UnknownEntity` when absent.
 *
 * # Safety
 * `g` must be a live handle, `label` NUL-terminated, `out` writable.
 */
enum KgrStatus kgr_entity_id(const struct KgrGraph *g, const char *label, uint32_t *out);

/**
 * Handle of a relation label; `UngroundedPlan` when absent.
 *
 * # Safety
 * `g` must be a live handle, `label` NUL-terminated, `out` writable.
 */
enum KgrStatus kgr_relation_id(const struct KgrGraph *g, const char *label, uint32_t *out);

/**
 * Label of an entity handle, as a caller-owned string.
 *
 * # Safety
 * `g` must be a live handle; `out` must be writable.
 */
enum KgrStatus kgr_entity_label(const struct KgrGraph *g, uint32_t id, char **out);

/**
 * Tails of `(head, relation)` in ascending handle order. Copies at most
 * `cap` handles into `buf` and stores the full count in `out_len`, so a
 * call with `cap == 0` sizes the buffer.
 *
 * # Safety
 * `g` must be a live handle; `buf` must hold `cap` values; `out_len` writable.
 */
enum KgrStatus kgr_neighbors(const struct KgrGraph *g,
                             uint32_t head,
                             uint32_t relation,
                             uint32_t *buf,
                             size_t cap,
                             size_t *out_len);

/**
 * Reasoning paths for a plan. `entities_json` is a JSON array of entity
 * labels; `plan` is plan text such as `<PATH> r1 <SEP> r2 </PATH>`. The
 * result is `{"paths": [[e0, r1, e1, ...], ...], "truncated": bool}`.
 *
 * # Safety
 * `g` must be a live handle; strings NUL-terminated; `out` writable.
 */
enum KgrStatus kgr_retrieve(const struct KgrGraph *g,
                            const char *entities_json,
                            const char *plan,
                            size_t max_paths,
                            char **out);

/**
 * Relation sequences of the minimal walks between two labeled entity sets:
 * `{"paths": [[r1, ...], ...], "distance": n | null, "truncated": bool}`.
 *
 * # Safety
 * `g` must be a live handle; strings NUL-terminated; `out` writable.
 */
enum KgrStatus kgr_shortest_paths(const struct KgrGraph *g,
                                  const char *question_json,
                                  const char *answer_json,
                                  size_t max_len,
                                  size_t max_paths,
                                  char **out);

/**
 * Plan text for a JSON array of relation labels.
 *
 * # Safety
 * `relations_json` must be NUL-terminated; `out` writable.
 */
enum KgrStatus kgr_plan_serialize(const char *relations_json, char **out);

/**
 * JSON array of relation labels parsed from plan text.
 *
 * # Safety
 * `text` must be NUL-terminated; `out` writable.
 */
enum KgrStatus kgr_plan_parse(const char *text, char **out);

/**
 * Macro-averaged Hits@1, precision, recall and F1 of prediction JSONL
 * against question JSONL, as a JSON report.
 *
 * # Safety
 * Strings must be NUL-terminated; `out` writable.
 */
enum KgrStatus kgr_score(const char *predictions_jsonl,
                         const char *gold_jsonl,
                         bool case_fold,
                         char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KGREASON_H */
