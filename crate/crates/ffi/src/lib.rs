//! C ABI for the kgreason graph store, path retrieval, plan text and scoring.
//!
//! Every fallible call returns a [`KgrStatus`]; on failure the message is
//! available from [`kgr_last_error`] on the same thread. Structured results
//! come back as NUL-terminated JSON strings owned by the caller and released
//! with [`kgr_string_free`]. Graphs are opaque [`KgrGraph`] handles released
//! with [`kgr_graph_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use kgreason::eval::score_with;
use kgreason::eval::ScoreOptions;
use kgreason::jsonl::read_jsonl;
use kgreason::kg::{load_graph, load_graph_file, resolve_entities, LoadOptions, TripleFormat};
use kgreason::paths::{parse_plan, retrieve_by_labels, serialize_plan, shortest_relation_paths};
use kgreason::planning::QaInstance;
use kgreason::reasoning::Prediction;
use kgreason::{EntityId, Error, KnowledgeGraph, RelationId};
use serde_json::json;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KgrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidHandle = 5,
    UnknownEntity = 6,
    UngroundedPlan = 7,
    PlanSyntax = 8,
    Domain = 9,
    Json = 10,
    Panic = 11,
}

/// Loaded knowledge graph. Immutable once built; may be shared across threads.
pub struct KgrGraph {
    inner: KnowledgeGraph,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct KgrGraphStats {
    pub entities: u64,
    pub relations: u64,
    pub triples: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: KgrStatus,
    message: String,
}

impl Failure {
    fn new(status: KgrStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) => KgrStatus::Io,
            Error::Parse { .. } => KgrStatus::Parse,
            Error::InvalidEntity(_) | Error::InvalidRelation(_) => KgrStatus::InvalidHandle,
            Error::UnknownEntity(_) => KgrStatus::UnknownEntity,
            Error::UngroundedPlan(_) => KgrStatus::UngroundedPlan,
            Error::PlanSyntax(_) => KgrStatus::PlanSyntax,
            Error::Json(_) => KgrStatus::Json,
            _ => KgrStatus::Domain,
        };
        Failure::new(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::new(KgrStatus::Json, e.to_string())
    }
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KgrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            KgrStatus::Ok
        }
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(_) => {
            set_last_error("internal panic");
            KgrStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(KgrStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(KgrStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn graph_arg<'a>(g: *const KgrGraph) -> Result<&'a KnowledgeGraph, Failure> {
    g.as_ref()
        .map(|g| &g.inner)
        .ok_or_else(|| Failure::new(KgrStatus::NullArgument, "graph is null"))
}

fn check_out<T>(out: *mut T) -> Result<(), Failure> {
    if out.is_null() {
        Err(Failure::new(KgrStatus::NullArgument, "output pointer is null"))
    } else {
        Ok(())
    }
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    check_out(out)?;
    let c = CString::new(s).map_err(|_| Failure::new(KgrStatus::Domain, "result contains NUL"))?;
    *out = c.into_raw();
    Ok(())
}

fn labels_arg(json_text: &str) -> Result<Vec<String>, Failure> {
    Ok(serde_json::from_str(json_text)?)
}

fn into_handle(g: KnowledgeGraph, out: *mut *mut KgrGraph) {
    unsafe { *out = Box::into_raw(Box::new(KgrGraph { inner: g })) };
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn kgr_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn kgr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn kgr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a TSV triple file, gzip-compressed or not.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kgr_graph_load_file(
    path: *const c_char,
    inverse_relations: bool,
    out: *mut *mut KgrGraph,
) -> KgrStatus {
    guard(|| {
        check_out(out)?;
        let path = str_arg(path, "path")?;
        let g = load_graph_file(Path::new(path), &LoadOptions { inverse_relations })?;
        into_handle(g, out);
        Ok(())
    })
}

/// Loads triples from an in-memory buffer (TSV or gzip TSV).
///
/// # Safety
/// `data` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kgr_graph_load_bytes(
    data: *const u8,
    len: usize,
    inverse_relations: bool,
    out: *mut *mut KgrGraph,
) -> KgrStatus {
    guard(|| {
        check_out(out)?;
        if data.is_null() && len > 0 {
            return Err(Failure::new(KgrStatus::NullArgument, "data is null"));
        }
        let bytes = if len == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(data, len)
        };
        let g = load_graph(bytes, TripleFormat::Auto, &LoadOptions { inverse_relations })?;
        into_handle(g, out);
        Ok(())
    })
}

/// Releases a graph. NULL is ignored.
///
/// # Safety
/// `g` must come from a load call and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn kgr_graph_free(g: *mut KgrGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// # Safety
/// `g` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kgr_graph_stats(g: *const KgrGraph, out: *mut KgrGraphStats) -> KgrStatus {
    guard(|| {
        let g = graph_arg(g)?;
        check_out(out)?;
        let s = g.stats();
        *out = KgrGraphStats {
            entities: s.entities as u64,
            relations: s.relations as u64,
            triples: s.triples as u64,
        };
        Ok(())
    })
}

/// Handle of an entity label; `UnknownEntity` when absent.
///
/// # Safety
/// `g` must be a live handle, `label` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgr_entity_id(g: *const KgrGraph, label: *const c_char, out: *mut u32) -> KgrStatus {
    guard(|| {
        let g = graph_arg(g)?;
        check_out(out)?;
        let label = str_arg(label, "label")?;
        let id = g
            .entity_id(label)
            .ok_or_else(|| Error::UnknownEntity(label.to_owned()))?;
        *out = id.0;
        Ok(())
    })
}

/// Handle of a relation label; `UngroundedPlan` when absent.
///
/// # Safety
/// `g` must be a live handle, `label` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgr_relation_id(g: *const KgrGraph, label: *const c_char, out: *mut u32) -> KgrStatus {
    guard(|| {
        let g = graph_arg(g)?;
        check_out(out)?;
        let label = str_arg(label, "label")?;
        let id = g
            .relation_id(label)
            .ok_or_else(|| Error::UngroundedPlan(vec![label.to_owned()]))?;
        *out = id.0;
        Ok(())
    })
}

/// Label of an entity handle, as a caller-owned string.
///
/// # Safety
/// `g` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kgr_entity_label(g: *const KgrGraph, id: u32, out: *mut *mut c_char) -> KgrStatus {
    guard(|| {
        let g = graph_arg(g)?;
        g.check_entity(EntityId(id))?;
        put_string(out, g.entity_label(EntityId(id)).to_owned())
    })
}

/// Tails of `(head, relation)` in ascending handle order. Copies at most
/// `cap` handles into `buf` and stores the full count in `out_len`, so a
/// call with `cap == 0` sizes the buffer.
///
/// # Safety
/// `g` must be a live handle; `buf` must hold `cap` values; `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn kgr_neighbors(
    g: *const KgrGraph,
    head: u32,
    relation: u32,
    buf: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> KgrStatus {
    guard(|| {
        let g = graph_arg(g)?;
        check_out(out_len)?;
        let tails = g.neighbors(EntityId(head), RelationId(relation))?;
        if cap > 0 {
            check_out(buf)?;
            for (i, t) in tails.iter().take(cap).enumerate() {
                *buf.add(i) = t.0;
            }
        }
        *out_len = tails.len();
        Ok(())
    })
}

/// Reasoning paths for a plan. `entities_json` is a JSON array of entity
/// labels; `plan` is plan text such as `<PATH> r1 <SEP> r2 </PATH>`. The
/// result is `{"paths": [[e0, r1, e1, ...], ...], "truncated": bool}`.
///
/// # Safety
/// `g` must be a live handle; strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgr_retrieve(
    g: *const KgrGraph,
    entities_json: *const c_char,
    plan: *const c_char,
    max_paths: usize,
    out: *mut *mut c_char,
) -> KgrStatus {
    guard(|| {
        let g = graph_arg(g)?;
        let starts = resolve_entities(g, &labels_arg(str_arg(entities_json, "entities_json")?)?)?;
        let relations = parse_plan(str_arg(plan, "plan")?)?;
        let got = retrieve_by_labels(g, &starts, &relations, max_paths)?;
        let paths: Vec<Vec<String>> = got.paths.iter().map(|p| p.to_labels(g)).collect();
        put_string(out, json!({"paths": paths, "truncated": got.truncated}).to_string())
    })
}

/// Relation sequences of the minimal walks between two labeled entity sets:
/// `{"paths": [[r1, ...], ...], "distance": n | null, "truncated": bool}`.
///
/// # Safety
/// `g` must be a live handle; strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgr_shortest_paths(
    g: *const KgrGraph,
    question_json: *const c_char,
    answer_json: *const c_char,
    max_len: usize,
    max_paths: usize,
    out: *mut *mut c_char,
) -> KgrStatus {
    guard(|| {
        let g = graph_arg(g)?;
        let q = resolve_entities(g, &labels_arg(str_arg(question_json, "question_json")?)?)?;
        let a = resolve_entities(g, &labels_arg(str_arg(answer_json, "answer_json")?)?)?;
        let sp = shortest_relation_paths(g, &q, &a, max_len, max_paths)?;
        let paths: Vec<Vec<String>> = sp.paths.iter().map(|p| p.labels(g)).collect();
        put_string(
            out,
            json!({"paths": paths, "distance": sp.distance, "truncated": sp.truncated}).to_string(),
        )
    })
}

/// Plan text for a JSON array of relation labels.
///
/// # Safety
/// `relations_json` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgr_plan_serialize(relations_json: *const c_char, out: *mut *mut c_char) -> KgrStatus {
    guard(|| {
        let labels = labels_arg(str_arg(relations_json, "relations_json")?)?;
        put_string(out, serialize_plan(&labels))
    })
}

/// JSON array of relation labels parsed from plan text.
///
/// # Safety
/// `text` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgr_plan_parse(text: *const c_char, out: *mut *mut c_char) -> KgrStatus {
    guard(|| {
        let labels = parse_plan(str_arg(text, "text")?)?;
        put_string(out, serde_json::to_string(&labels)?)
    })
}

/// Macro-averaged Hits@1, precision, recall and F1 of prediction JSONL
/// against question JSONL, as a JSON report.
///
/// # Safety
/// Strings must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgr_score(
    predictions_jsonl: *const c_char,
    gold_jsonl: *const c_char,
    case_fold: bool,
    out: *mut *mut c_char,
) -> KgrStatus {
    guard(|| {
        let preds: Vec<Prediction> = read_jsonl(str_arg(predictions_jsonl, "predictions_jsonl")?.as_bytes())?;
        let gold: Vec<QaInstance> = read_jsonl(str_arg(gold_jsonl, "gold_jsonl")?.as_bytes())?;
        let report = score_with(&preds, &gold, ScoreOptions { case_fold })?;
        put_string(out, serde_json::to_string(&report)?)
    })
}
