//! Pins the plan text for the edge-mode corpus programs.
//!
//! The interesting claim is that compiling a vertex program with the edge
//! transform produces, byte for byte, the plan a hand-written edge version
//! compiles to. Local names are normalized on both sides first so the
//! comparison tracks structure, not spelling. The golden files under
//! `tests/golden/` pin the shared text; regenerate them with
//! `UPDATE_GOLDEN=1 cargo test -p falc --test golden_plans` after a
//! deliberate change and review the diff.

use std::fs;
use std::path::PathBuf;

use falc::cfg::HostCfg;
use falc::lower::{emit_text, lower, normalize_locals, CostModel, Target, TargetKind};
use falc::parser::parse;
use falc::{sema, transform};

fn corpus(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("corpus").join(name);
    fs::read_to_string(&path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Parse `name`, optionally rewrite it to edge form, normalize local names,
/// and return the plan text for a single-threaded sync cpu build.
fn edge_plan_text(name: &str, rewrite: bool) -> String {
    let mut p = parse(&corpus(name)).unwrap();
    if rewrite {
        p = transform::vertex_to_edge(&p).unwrap();
    }
    let p = normalize_locals(&p);
    let table = sema::resolve(&p).unwrap();
    let cfg = HostCfg::analyze(&p, &table);
    let target = Target { kind: TargetKind::HostThreads, threads: 1, cost: CostModel::default() };
    emit_text(&lower(&p, &table, &cfg, target, true).unwrap())
}

fn check_golden(file: &str, text: &str) {
    let path = golden_path(file);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&path, text).unwrap();
        return;
    }
    let pinned = fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("read {}: {e} (run with UPDATE_GOLDEN=1 to create)", path.display()));
    assert_eq!(text, pinned, "{file} drifted from the pinned plan");
}

#[test]
fn transformed_sssp_matches_the_handwritten_edge_version() {
    let from_vertex = edge_plan_text("sssp.fal", true);
    let handwritten = edge_plan_text("sssp_edge.fal", false);
    assert_eq!(from_vertex, handwritten);
    check_golden("sssp_edge.plan", &handwritten);
}

#[test]
fn transformed_bfs_matches_the_handwritten_edge_version() {
    let from_vertex = edge_plan_text("bfs.fal", true);
    let handwritten = edge_plan_text("bfs_edge.fal", false);
    assert_eq!(from_vertex, handwritten);
    check_golden("bfs_edge.plan", &handwritten);
}
