//! Acceptance suite: one pass/fail line per criterion.
//!
//! Run with `cargo test -p lmpvc-core --test acceptance -- --nocapture` to
//! see the report.

mod common;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use lmpvc_core::bench::{load_cases, run_suite, summarize, write_runs_csv, BenchOptions, RunRecord};
use lmpvc_core::codegen::{MockClient, MockFixture};
use lmpvc_core::policy::{load_registry, parse_policy_file, PolicyRegistry};
use lmpvc_core::pose::Vec3;
use lmpvc_core::scenario::{parse_scenario, run_scenario};
use lmpvc_core::script::{detect_undefined_calls, parse_program, ExecOptions, ExecStatus, ExecutionLimits};
use lmpvc_core::session::{CommandOutcome, CommandResult, Session, SessionParts, TurnOutcome};
use lmpvc_core::world::{load_world, SimWorld};

const TOL: f64 = 1e-6;

fn completed(session: &mut Session, utterance: &str) -> CommandResult {
    match session.run_command(utterance).expect("session accepted the command") {
        CommandOutcome::Completed(r) => r,
        other => panic!("{utterance}: unexpected outcome {other:?}"),
    }
}

fn assert_close(a: Vec3, b: Vec3, what: &str) {
    assert!(a.distance(b) <= TOL, "{what}: got ({}, {}, {}), expected ({}, {}, {})", a.x, a.y, a.z, b.x, b.y, b.z);
}

fn golden_listings() {
    let started = Instant::now();
    let bank = policy_bank(&[]);
    let (mut s, client) = mock_session(&bank, &["mock/golden.json"]);
    let start = s.world().snapshot().ee_pose.position;

    let r = completed(&mut s, "Twenty centimeters to the left.");
    assert!(r.report.is_ok(), "{:?}", r.report);
    let after_left = s.world().snapshot().ee_pose.position;
    assert_close(after_left, Vec3::new(start.x, start.y - 0.2, start.z), "twenty centimeters to the left");

    let r = completed(&mut s, "Move a little down.");
    assert!(r.report.is_ok());
    let after_down = s.world().snapshot().ee_pose.position;
    assert_close(after_down, Vec3::new(after_left.x, after_left.y, after_left.z - 0.05), "move a little down");

    let r = completed(&mut s, "Can you see the big bolt?");
    assert_eq!(r.report.say_outputs, ["Found the big bolt!"]);
    s.world().remove_object("big_bolt");
    let r = completed(&mut s, "Can you see the big bolt?");
    assert_eq!(r.report.say_outputs, ["Can't find the big bolt!"]);
    assert_close(s.world().snapshot().ee_pose.position, after_down, "detection does not move");

    // Circle of radius 35 mm, preceded by the helper's 5 cm descent.
    let r = completed(&mut s, "Move a little down, and then draw a circle with radius 35 millimeters.");
    assert!(r.report.is_ok(), "{:?}", r.report);
    let log = &r.report.motion_log;
    assert_eq!(log.len(), 27, "one descent waypoint plus 26 circle waypoints");
    let centre_start = Vec3::new(after_down.x, after_down.y, after_down.z - 0.05);
    assert_close(log[0].position, centre_start, "descent");
    for (i, p) in log[1..].iter().enumerate() {
        let a = 2.0 * PI * i as f64 / 25.0;
        let want = Vec3::new(centre_start.x + 0.035 * a.cos(), centre_start.y + 0.035 * a.sin(), centre_start.z);
        assert_close(p.position, want, &format!("circle waypoint {i}"));
    }

    // "Double the radius" only makes sense with the previous circle in context.
    s.clear_context();
    let r = completed(&mut s, "Draw a small circle.");
    assert!(r.report.is_ok());
    let before = s.world().snapshot().ee_pose.position;
    let r = completed(&mut s, "Double the radius.");
    assert!(r.report.is_ok());
    let prompt = client.prompts().pop().unwrap();
    assert!(prompt.contains("def draw_a_small_circle(robot):"), "prior circle missing from the prompt");
    assert_eq!(r.report.motion_log.len(), 26);
    for (i, p) in r.report.motion_log.iter().enumerate() {
        let a = 2.0 * PI * i as f64 / 25.0;
        let want = Vec3::new(before.x + 0.1 * a.cos(), before.y + 0.1 * a.sin(), before.z);
        assert_close(p.position, want, &format!("doubled circle waypoint {i}"));
    }
    assert!(started.elapsed() < Duration::from_secs(5), "took {:?}", started.elapsed());
}

fn hierarchical_generation() {
    let bank = policy_bank(&[]);
    let (mut s, client) = mock_session(&bank, &["mock/golden.json"]);
    let r = completed(&mut s, "Move a little down, and then draw a circle with radius 35 millimeters.");
    assert_eq!(r.rounds, 2);
    let directives: Vec<String> =
        client.prompts().iter().map(|p| p.lines().last().unwrap_or_default().to_string()).collect();
    assert_eq!(directives.last().unwrap(), "#define function: move a little down");
    let lmp = r.lmp.expect("program generated");
    let program = parse_program(&lmp.code_text).unwrap();
    let order: Vec<&str> = program.functions.keys().map(String::as_str).collect();
    let top = "move_a_little_down_and_then_draw_a_circle_with_radius_35_millimeters";
    assert_eq!(order.last(), Some(&top));
    let helper = order.iter().position(|n| *n == "move_a_little_down").expect("helper defined");
    assert!(helper < order.len() - 1);
    assert_eq!(lmp.top_level_function, top);
    assert!(detect_undefined_calls(&program, &s.registry().known_names()).is_empty());
    assert!(r.report.is_ok());
}

fn policy_round_trip() {
    let names = ["handover", "parts_check", "full_check"];
    let mut registry = PolicyRegistry::empty(None);
    let dir = tempfile::tempdir().unwrap();
    for name in names {
        let text = read_fixture(&format!("policies/{name}.policy"));
        let p = parse_policy_file(&text).unwrap();
        assert_eq!(p.name, name);
        let canonical = p.serialize();
        let again = parse_policy_file(&canonical).unwrap();
        assert!(p.same_structure(&again), "{name} changed on re-parse");
        assert_eq!(again.serialize(), canonical, "{name} serialization is not canonical");
        registry.add(p, dir.path().join(format!("{name}.policy"))).unwrap();
    }
    let ext = registry.prompt_extension();
    for name in names {
        let p = registry.get(name).unwrap();
        assert!(ext.contains(&p.hint_block()), "hint block of {name} missing");
        for f in p.function_names().into_iter().filter(|f| *f != p.alias_function) {
            assert!(!ext.contains(&format!("def {f}(")), "body function {f} leaked into the prompt");
        }
    }
    assert_eq!(ext.matches("import time").count(), 1);
}

fn teaching_equivalence() {
    let bank = policy_bank(&["full_check"]);
    let (mut s, _) = mock_session(&bank, &["mock/pump.json"]);
    let steps = parse_scenario(&read_fixture("scripts/teach_full_check.txt")).unwrap();
    let turns = run_scenario(&mut s, &steps, false);
    let saved = turns
        .iter()
        .find_map(|t| match &t.outcome {
            Some(TurnOutcome::PolicySaved(p)) => Some(p.clone()),
            _ => None,
        })
        .expect("policy saved through the keyword dialog");
    let expected = parse_policy_file(&read_fixture("policies/full_check.policy")).unwrap();
    assert_eq!(saved.name, "full_check");
    assert_eq!(saved.entry_function, "full_check");
    assert_eq!(saved.hint_utterance, "do a full inspection");
    assert!(saved.same_structure(&expected), "taught:\n{}", saved.serialize());
    assert_eq!(saved.serialize(), expected.serialize());
    let wrapper = saved.body().functions.get("full_check").unwrap();
    let calls: Vec<String> = wrapper.body.iter().map(|st| format!("{st:?}")).collect();
    let order = ["find_the_assembly_and_move_thirty_centimeters_above_it", "check_parts", "check_bolts"];
    assert_eq!(calls.len(), 3);
    for (c, want) in calls.iter().zip(order) {
        assert!(c.contains(want), "{c} should call {want}");
    }
    // The new policy is immediately usable.
    let r = completed(&mut s, "Do a full inspection.");
    assert!(r.report.is_ok(), "{:?}", r.report);
    assert!(r.report.call_trace.iter().any(|f| f == "full_check"));
}

fn pump_demo() {
    let bank = policy_bank(&[]);
    let (mut s, _) = mock_session(&bank, &["mock/golden.json", "mock/pump.json"]);
    let steps = parse_scenario(&read_fixture("scripts/pump_demo.txt")).unwrap();
    let turns = run_scenario(&mut s, &steps, false);
    for t in &turns {
        if let Some(TurnOutcome::Command(CommandOutcome::Completed(r))) = &t.outcome {
            assert!(r.report.is_ok(), "{}: {:?}", r.utterance, r.report);
        }
    }
    let said: Vec<Vec<String>> = turns.iter().filter(|t| t.outcome.is_some()).map(|t| t.say_outputs()).collect();
    let expected: Vec<Vec<&str>> = vec![
        vec!["Can't find the cover!", "Everything secured."],
        vec!["All parts found!", "Missing bolts!"],
        vec![],
        vec![],
        vec!["In handover position, releasing in two seconds!"],
        vec!["All parts found!", "Missing bolts!"],
        vec!["All parts found!", "All bolts secured!"],
    ];
    assert_eq!(said, expected);
    let world = s.world().snapshot();
    assert_eq!(world.held_object, None);
    let bolt = world.object_pose("big_bolt").unwrap().position;
    let handover = world.object_pose("handover").unwrap().position;
    assert_close(bolt, handover, "bolt released at the handover pose");
}

fn sandbox_fixture() -> MockFixture {
    let entries = [
        ("spin forever", "def spin_forever(robot):\n    while True:\n        waypoint = robot.get_pose()"),
        ("press the red button", "def press_the_red_button(robot):\n    robot.set_digital_output(0, True)"),
        ("take the first waypoint", "def take_the_first_waypoint(robot):\n    waypoints = robot.get_pose()\n    robot.add_waypoint(waypoints[0])\n    robot.go()"),
        ("list the files", "import os\ndef list_the_files(robot):\n    robot.say(os.listdir('/'))"),
        ("define a class", "class Evil:\n    pass\ndef define_a_class(robot):\n    robot.go()"),
    ];
    MockFixture {
        completions: entries.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        ..MockFixture::default()
    }
}

fn sandbox_safety() {
    let bank = policy_bank(&[]);

    let (mut s, _) = session_with(&bank, sandbox_fixture(), fast_exec());
    let r = completed(&mut s, "Spin forever.");
    assert_eq!(r.report.status, ExecStatus::Timeout);

    let deadline = 0.5;
    let exec = ExecOptions {
        limits: ExecutionLimits { wall_deadline: deadline, max_steps: u64::MAX, max_loop_iterations: u64::MAX },
        time_dilation: 0.0,
    };
    let (mut s, _) = session_with(&bank, sandbox_fixture(), exec);
    let t0 = Instant::now();
    let r = completed(&mut s, "Spin forever.");
    let took = t0.elapsed().as_secs_f64();
    assert_eq!(r.report.status, ExecStatus::Timeout);
    assert!(took < deadline + 0.5, "unbounded loop ran {took} s");

    let before = s.world().snapshot();
    let r = completed(&mut s, "Press the red button.");
    assert_eq!(r.report.status, ExecStatus::StaticCheckFailed);
    assert!(r.report.undefined_names.iter().any(|n| n.contains("set_digital_output")), "{:?}", r.report);
    assert_eq!(s.world().snapshot(), before);

    for utterance in ["Take the first waypoint.", "List the files.", "Define a class."] {
        let r = completed(&mut s, utterance);
        assert_eq!(r.report.status, ExecStatus::ParseError, "{utterance}: {:?}", r.report);
        assert_eq!(s.world().snapshot(), before, "{utterance} changed the world");
    }
}

fn bench_session(mock: &str) -> Session {
    let world = Arc::new(SimWorld::new(load_world(fixture("world/pump.json")).unwrap()));
    let registry = load_registry(fixture("policies/registry.json")).unwrap();
    let client = Arc::new(MockClient::from_file(fixture(mock)).unwrap());
    let mut parts = SessionParts::new(world, registry, client);
    parts.exec = fast_exec();
    Session::new(parts).unwrap()
}

fn suite(mock: &str, repetitions: usize) -> Vec<RunRecord> {
    let cases = load_cases(fixture("bench/cases.jsonl")).unwrap();
    let mut s = bench_session(mock);
    run_suite(&mut s, &cases, &BenchOptions { repetitions, inter_run_delay: Duration::ZERO })
}

fn bench_harness() {
    let records = suite("bench/mock.json", 10);
    assert_eq!(records.len(), 500);
    let failing: Vec<String> =
        records.iter().filter(|r| !r.passed).map(|r| format!("{}: {:?}", r.case_id, r.reason)).collect();
    assert!(failing.is_empty(), "failing runs: {failing:?}");
    let summary = summarize(&records);
    assert_eq!(summary.cases, 50);
    assert_eq!(summary.success_rate, 1.0);
    for c in &summary.commands {
        let xs: Vec<f64> = records.iter().filter(|r| r.case_id == c.case_id).map(|r| r.latency_ms).collect();
        assert_eq!(xs.len(), 10);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((c.mean_latency_ms - mean).abs() <= 1e-12, "case {} mean", c.case_id);
        assert!((c.std_latency_ms.unwrap() - var.sqrt()).abs() <= 1e-12, "case {} sigma", c.case_id);
    }

    let broken = summarize(&suite("bench/mock_broken.json", 1));
    assert_eq!(broken.first_run_passes, 39);
    assert_eq!(broken.success_rate, 0.78);
}

fn csv_without_timing(records: &[RunRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_runs_csv(records, &mut buf).unwrap();
    let mut rd = csv::Reader::from_reader(buf.as_slice());
    let headers = rd.headers().unwrap().clone();
    let keep: Vec<usize> =
        (0..headers.len()).filter(|i| !matches!(&headers[*i], "latency_ms" | "started_at")).collect();
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(keep.iter().map(|i| &headers[*i])).unwrap();
    for row in rd.records() {
        let row = row.unwrap();
        out.write_record(keep.iter().map(|i| &row[*i])).unwrap();
    }
    out.into_inner().unwrap()
}

fn determinism() {
    let a = csv_without_timing(&suite("bench/mock.json", 2));
    let b = csv_without_timing(&suite("bench/mock.json", 2));
    assert!(a.len() > 100);
    assert_eq!(a, b);
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn()); 8] = [
        ("golden listings end-to-end", golden_listings),
        ("hierarchical generation", hierarchical_generation),
        ("policy round-trip", policy_round_trip),
        ("teaching equivalence", teaching_equivalence),
        ("pump-assembly scripted demo", pump_demo),
        ("sandbox safety", sandbox_safety),
        ("bench harness", bench_harness),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check));
        match result {
            Ok(()) => println!("PASS  {}. {name}", i + 1),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL  {}. {name}: {msg}", i + 1);
                failed.push(*name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
