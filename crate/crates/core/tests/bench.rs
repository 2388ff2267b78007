mod common;

use std::sync::Arc;

use common::*;
use lmpvc_core::bench::{
    load_cases, run_suite, summarize, write_outputs, BenchOptions, OracleSpec, CHART_CSV, RUNS_CSV, SUMMARY_JSON,
};
use lmpvc_core::codegen::MockClient;
use lmpvc_core::policy::load_registry;
use lmpvc_core::session::{Session, SessionParts};
use lmpvc_core::world::{load_world, SimWorld};

fn session(mock: &str) -> Session {
    let world = Arc::new(SimWorld::new(load_world(fixture("world/pump.json")).unwrap()));
    let registry = load_registry(fixture("policies/registry.json")).unwrap();
    let mut parts = SessionParts::new(world, registry, Arc::new(MockClient::from_file(fixture(mock)).unwrap()));
    parts.exec = fast_exec();
    Session::new(parts).unwrap()
}

#[test]
fn fixture_has_fifty_distinct_cases() {
    let cases = load_cases(fixture("bench/cases.jsonl")).unwrap();
    assert_eq!(cases.len(), 50);
    let kinds = |k: fn(&OracleSpec) -> bool| cases.iter().filter(|c| k(&c.oracle)).count();
    assert!(kinds(|o| matches!(o, OracleSpec::PoseDelta { .. })) >= 10);
    assert!(kinds(|o| matches!(o, OracleSpec::SayMatches { .. })) >= 10);
    assert!(kinds(|o| matches!(o, OracleSpec::CallsPolicy { .. })) >= 3);
    assert!(kinds(|o| matches!(o, OracleSpec::WorldPredicate { .. })) >= 3);
}

#[test]
fn suite_leaves_the_session_as_found() {
    let cases = load_cases(fixture("bench/cases.jsonl")).unwrap();
    let mut s = session("bench/mock.json");
    s.set_approval_required(true);
    let before = s.world().snapshot();
    let records = run_suite(&mut s, &cases[..5], &BenchOptions::default());
    assert_eq!(records.len(), 5);
    assert_eq!(s.world().snapshot(), before);
    assert!(s.approval_required());
    assert!(s.context().is_empty());
}

#[test]
fn wrong_oracle_fails() {
    let cases = load_cases(fixture("bench/cases.jsonl")).unwrap();
    let mut rotate = cases.iter().find(|c| c.utterance == "Rotate 33 degrees clockwise.").unwrap().clone();
    let OracleSpec::PoseDelta { dyaw_deg, .. } = &mut rotate.oracle else { panic!() };
    *dyaw_deg = Some(33.0);
    let mut s = session("bench/mock.json");
    let r = run_suite(&mut s, &[rotate], &BenchOptions::default());
    assert!(!r[0].passed);
    assert!(r[0].reason.as_deref().unwrap().contains("dyaw"));
}

#[test]
fn broken_runs_carry_their_status() {
    let cases = load_cases(fixture("bench/cases.jsonl")).unwrap();
    let mut s = session("bench/mock_broken.json");
    let records = run_suite(&mut s, &cases, &BenchOptions::default());
    let failed: Vec<_> = records.iter().filter(|r| !r.passed).collect();
    assert_eq!(failed.len(), 11);
    assert!(failed.iter().all(|r| r.status == "static_check_failed"));
}

#[test]
fn outputs_are_written() {
    let cases = load_cases(fixture("bench/cases.jsonl")).unwrap();
    let mut s = session("bench/mock.json");
    let records = run_suite(&mut s, &cases[..3], &BenchOptions { repetitions: 2, ..Default::default() });
    let summary = summarize(&records);
    let dir = tempfile::tempdir().unwrap();
    write_outputs(dir.path(), &records, &summary).unwrap();
    let runs = std::fs::read_to_string(dir.path().join(RUNS_CSV)).unwrap();
    assert_eq!(runs.lines().count(), 7);
    let chart = std::fs::read_to_string(dir.path().join(CHART_CSV)).unwrap();
    assert_eq!(chart.lines().count(), 4);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join(SUMMARY_JSON)).unwrap()).unwrap();
    assert_eq!(json["cases"], 3);
    assert_eq!(json["repetitions"], 2);
    assert_eq!(json["success_rate"], 1.0);
    assert_eq!(json["commands"].as_array().unwrap().len(), 3);
}
