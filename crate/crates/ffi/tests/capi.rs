use std::ffi::{c_char, CStr, CString};
use std::ptr;

use kgreason_ffi::*;

const FAMILY: &str = "Alice\tmarry_to\tBob\nBob\tfather_of\tCharlie\nBob\tfather_of\tDora\n";

fn load(text: &str) -> *mut KgrGraph {
    let mut g = ptr::null_mut();
    let st = unsafe { kgr_graph_load_bytes(text.as_ptr(), text.len(), false, &mut g) };
    assert_eq!(st, KgrStatus::Ok);
    assert!(!g.is_null());
    g
}

fn take(s: *mut c_char) -> String {
    assert!(!s.is_null());
    let out = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_owned();
    unsafe { kgr_string_free(s) };
    out
}

fn last_error() -> String {
    let p = kgr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn stats_and_lookups() {
    let g = load(FAMILY);
    let mut stats = KgrGraphStats::default();
    assert_eq!(unsafe { kgr_graph_stats(g, &mut stats) }, KgrStatus::Ok);
    assert_eq!((stats.entities, stats.relations, stats.triples), (4, 2, 3));

    let mut bob = 0;
    assert_eq!(unsafe { kgr_entity_id(g, c("Bob").as_ptr(), &mut bob) }, KgrStatus::Ok);
    let mut label = ptr::null_mut();
    assert_eq!(unsafe { kgr_entity_label(g, bob, &mut label) }, KgrStatus::Ok);
    assert_eq!(take(label), "Bob");

    let mut id = 0;
    assert_eq!(
        unsafe { kgr_entity_id(g, c("Eve").as_ptr(), &mut id) },
        KgrStatus::UnknownEntity
    );
    assert!(last_error().contains("Eve"));
    assert_eq!(
        unsafe { kgr_relation_id(g, c("sister_of").as_ptr(), &mut id) },
        KgrStatus::UngroundedPlan
    );
    assert_eq!(unsafe { kgr_entity_label(g, 99, &mut label) }, KgrStatus::InvalidHandle);
    unsafe { kgr_graph_free(g) };
}

#[test]
fn neighbors_sizing_call() {
    let g = load(FAMILY);
    let (mut bob, mut father) = (0, 0);
    unsafe {
        kgr_entity_id(g, c("Bob").as_ptr(), &mut bob);
        kgr_relation_id(g, c("father_of").as_ptr(), &mut father);
    }
    let mut n = 0;
    assert_eq!(
        unsafe { kgr_neighbors(g, bob, father, ptr::null_mut(), 0, &mut n) },
        KgrStatus::Ok
    );
    assert_eq!(n, 2);
    let mut buf = vec![0u32; n];
    assert_eq!(
        unsafe { kgr_neighbors(g, bob, father, buf.as_mut_ptr(), n, &mut n) },
        KgrStatus::Ok
    );
    let labels: Vec<String> = buf
        .iter()
        .map(|&id| {
            let mut s = ptr::null_mut();
            unsafe { kgr_entity_label(g, id, &mut s) };
            take(s)
        })
        .collect();
    let mut sorted = labels.clone();
    sorted.sort();
    assert_eq!(sorted, ["Charlie", "Dora"]);
    unsafe { kgr_graph_free(g) };
}

#[test]
fn retrieve_and_shortest_paths() {
    let g = load(FAMILY);
    let mut out = ptr::null_mut();
    let st = unsafe {
        kgr_retrieve(
            g,
            c(r#"["Alice"]"#).as_ptr(),
            c("<PATH> marry_to <SEP> father_of </PATH>").as_ptr(),
            100,
            &mut out,
        )
    };
    assert_eq!(st, KgrStatus::Ok);
    let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
    assert_eq!(v["truncated"], false);
    assert_eq!(v["paths"].as_array().unwrap().len(), 2);
    assert_eq!(v["paths"][0][0], "Alice");

    let st = unsafe {
        kgr_retrieve(
            g,
            c(r#"["Alice"]"#).as_ptr(),
            c("<PATH> sister_of </PATH>").as_ptr(),
            100,
            &mut out,
        )
    };
    assert_eq!(st, KgrStatus::UngroundedPlan);
    let st = unsafe { kgr_retrieve(g, c(r#"["Alice"]"#).as_ptr(), c("marry_to").as_ptr(), 100, &mut out) };
    assert_eq!(st, KgrStatus::PlanSyntax);

    let st = unsafe {
        kgr_shortest_paths(
            g,
            c(r#"["Alice"]"#).as_ptr(),
            c(r#"["Charlie"]"#).as_ptr(),
            4,
            1000,
            &mut out,
        )
    };
    assert_eq!(st, KgrStatus::Ok);
    let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
    assert_eq!(v["distance"], 2);
    assert_eq!(v["paths"], serde_json::json!([["marry_to", "father_of"]]));

    let st = unsafe {
        kgr_shortest_paths(
            g,
            c(r#"["Charlie"]"#).as_ptr(),
            c(r#"["Alice"]"#).as_ptr(),
            4,
            1000,
            &mut out,
        )
    };
    assert_eq!(st, KgrStatus::Ok);
    let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
    assert!(v["distance"].is_null());
    unsafe { kgr_graph_free(g) };
}

#[test]
fn plan_text_round_trip() {
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { kgr_plan_serialize(c(r#"["a.b", "c"]"#).as_ptr(), &mut out) },
        KgrStatus::Ok
    );
    let text = take(out);
    assert_eq!(text, "<PATH> a.b <SEP> c </PATH>");
    assert_eq!(unsafe { kgr_plan_parse(c(&text).as_ptr(), &mut out) }, KgrStatus::Ok);
    assert_eq!(take(out), r#"["a.b","c"]"#);
    assert_eq!(
        unsafe { kgr_plan_serialize(c("not json").as_ptr(), &mut out) },
        KgrStatus::Json
    );
}

#[test]
fn score_reports_macro_metrics() {
    let gold = concat!(
        r#"{"id":"1","question":"q","question_entities":["A"],"answer_entities":["X"]}"#,
        "\n",
        r#"{"id":"2","question":"q","question_entities":["A"],"answer_entities":["Y","Z"]}"#,
        "\n"
    );
    let preds = concat!(
        r#"{"id":"1","prediction":["x"]}"#,
        "\n",
        r#"{"id":"2","prediction":["Y"]}"#,
        "\n"
    );
    let mut out = ptr::null_mut();
    let st = unsafe { kgr_score(c(preds).as_ptr(), c(gold).as_ptr(), true, &mut out) };
    assert_eq!(st, KgrStatus::Ok, "{}", last_error());
    let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
    assert_eq!(v["hits_at_1"], 1.0);
    assert_eq!(v["recall"], 0.75);

    let st = unsafe { kgr_score(c(preds).as_ptr(), c(gold).as_ptr(), false, &mut out) };
    assert_eq!(st, KgrStatus::Ok);
    let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
    assert_eq!(v["hits_at_1"], 0.5);
}

#[test]
fn null_and_bad_input() {
    let mut g = ptr::null_mut();
    assert_eq!(
        unsafe { kgr_graph_load_file(ptr::null(), false, &mut g) },
        KgrStatus::NullArgument
    );
    assert_eq!(
        unsafe { kgr_graph_load_file(c("/nonexistent/graph.tsv").as_ptr(), false, &mut g) },
        KgrStatus::Io
    );
    let bad = "a\tb\n";
    assert_eq!(
        unsafe { kgr_graph_load_bytes(bad.as_ptr(), bad.len(), false, &mut g) },
        KgrStatus::Parse
    );
    assert!(last_error().contains("line 1"));
    let mut stats = KgrGraphStats::default();
    assert_eq!(
        unsafe { kgr_graph_stats(ptr::null(), &mut stats) },
        KgrStatus::NullArgument
    );
    let invalid = [0xffu8, 0];
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { kgr_plan_parse(invalid.as_ptr().cast(), &mut out) },
        KgrStatus::InvalidUtf8
    );
    unsafe {
        kgr_graph_free(ptr::null_mut());
        kgr_string_free(ptr::null_mut());
    }
}

#[test]
fn gzip_file_and_inverse_relations() {
    use std::io::Write;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.tsv.gz");
    let mut enc = flate2::write::GzEncoder::new(std::fs::File::create(&path).unwrap(), flate2::Compression::default());
    enc.write_all(FAMILY.as_bytes()).unwrap();
    enc.finish().unwrap();
    let mut g = ptr::null_mut();
    let p = c(path.to_str().unwrap());
    assert_eq!(unsafe { kgr_graph_load_file(p.as_ptr(), true, &mut g) }, KgrStatus::Ok);
    let mut stats = KgrGraphStats::default();
    unsafe { kgr_graph_stats(g, &mut stats) };
    assert_eq!((stats.relations, stats.triples), (4, 6));
    let mut id = 0;
    assert_eq!(
        unsafe { kgr_relation_id(g, c("~father_of").as_ptr(), &mut id) },
        KgrStatus::Ok
    );
    unsafe { kgr_graph_free(g) };
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/kgreason.h")).unwrap();
    for name in [
        "kgr_last_error",
        "kgr_version",
        "kgr_string_free",
        "kgr_graph_load_file",
        "kgr_graph_load_bytes",
        "kgr_graph_free",
        "kgr_graph_stats",
        "kgr_entity_id",
        "kgr_relation_id",
        "kgr_entity_label",
        "kgr_neighbors",
        "kgr_retrieve",
        "kgr_shortest_paths",
        "kgr_plan_serialize",
        "kgr_plan_parse",
        "kgr_score",
        "typedef struct KgrGraph KgrGraph",
        "KGR_STATUS_UNGROUNDED_PLAN = 7",
    ] {
        assert!(header.contains(name), "header is missing {name}");
    }
    let v = unsafe { CStr::from_ptr(kgr_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
