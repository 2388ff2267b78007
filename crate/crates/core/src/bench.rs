//! Command benchmark: runs a suite of spoken-command cases against a session,
//! judges each run with an oracle and aggregates latency and success.

use std::io::Write;
use std::path::Path;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::{CommandOutcome, CommandResult, Session};
use crate::world::{Gripper, WorldModel};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cases line {line}: {source}")]
    Case { line: usize, source: serde_json::Error },
    #[error("duplicate case id {0}")]
    DuplicateId(u32),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn default_tolerance() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum WorldPredicate {
    Holding { object: String },
    ObjectAt {
        object: String,
        x: f64,
        y: f64,
        z: f64,
        #[serde(default = "default_tolerance")]
        tolerance: f64,
    },
    GripperOpen,
    GripperClosed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleSpec {
    /// End-effector displacement in metres and optional yaw change in degrees.
    PoseDelta {
        #[serde(default)]
        dx: f64,
        #[serde(default)]
        dy: f64,
        #[serde(default)]
        dz: f64,
        #[serde(default)]
        dyaw_deg: Option<f64>,
        #[serde(default = "default_tolerance")]
        tolerance: f64,
    },
    /// Some `say` output contains `pattern`, ignoring case.
    SayMatches { pattern: String },
    /// The named policy was entered during execution.
    CallsPolicy { policy: String },
    WorldPredicate { predicate: WorldPredicate },
    /// The generated program text contains `text`.
    CodeContains { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandCase {
    pub id: u32,
    pub utterance: String,
    pub oracle: OracleSpec,
    #[serde(default)]
    pub tags: Vec<String>,
}

/// One case per line (JSON Lines); blank lines and `#` lines are skipped.
pub fn parse_cases(text: &str) -> Result<Vec<CommandCase>, BenchError> {
    let mut cases: Vec<CommandCase> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let case: CommandCase = serde_json::from_str(line).map_err(|source| BenchError::Case { line: i + 1, source })?;
        if cases.iter().any(|c| c.id == case.id) {
            return Err(BenchError::DuplicateId(case.id));
        }
        cases.push(case);
    }
    Ok(cases)
}

pub fn load_cases(path: impl AsRef<Path>) -> Result<Vec<CommandCase>, BenchError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io { path: path.display().to_string(), source })?;
    parse_cases(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub passed: bool,
    pub reason: Option<String>,
}

impl Verdict {
    fn pass() -> Self {
        Self { passed: true, reason: None }
    }

    fn fail(reason: impl Into<String>) -> Self {
        Self { passed: false, reason: Some(reason.into()) }
    }
}

fn wrap_degrees(d: f64) -> f64 {
    let r = d.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// Judges one run. A run that did not finish with status `ok` fails
/// whatever the oracle.
pub fn judge(oracle: &OracleSpec, result: &CommandResult, before: &WorldModel, after: &WorldModel) -> Verdict {
    if !result.report.is_ok() {
        let detail = result.report.error_detail.as_deref().unwrap_or("");
        return Verdict::fail(format!("status {}: {detail}", result.report.status.as_str()));
    }
    match oracle {
        OracleSpec::PoseDelta { dx, dy, dz, dyaw_deg, tolerance } => {
            let d = after.ee_pose.position.sub(before.ee_pose.position);
            for (axis, got, want) in [("x", d.x, dx), ("y", d.y, dy), ("z", d.z, dz)] {
                if (got - want).abs() > *tolerance {
                    return Verdict::fail(format!("d{axis} = {got}, expected {want}"));
                }
            }
            if let Some(want) = dyaw_deg {
                let got = wrap_degrees(after.ee_pose.orientation.yaw_from(&before.ee_pose.orientation).to_degrees());
                if wrap_degrees(got - want).abs() > *tolerance {
                    return Verdict::fail(format!("dyaw = {got} deg, expected {want}"));
                }
            }
            Verdict::pass()
        }
        OracleSpec::SayMatches { pattern } => {
            let p = pattern.to_lowercase();
            if result.report.say_outputs.iter().any(|s| s.to_lowercase().contains(&p)) {
                Verdict::pass()
            } else {
                Verdict::fail(format!("no output contains '{pattern}' (said {:?})", result.report.say_outputs))
            }
        }
        OracleSpec::CallsPolicy { policy } => {
            if result.report.call_trace.iter().any(|c| c == policy) {
                Verdict::pass()
            } else {
                Verdict::fail(format!("policy {policy} not called"))
            }
        }
        OracleSpec::WorldPredicate { predicate } => judge_predicate(predicate, after),
        OracleSpec::CodeContains { text } => {
            let code = result.lmp.as_ref().map(|l| l.code_text.as_str()).unwrap_or("");
            if code.contains(text.as_str()) {
                Verdict::pass()
            } else {
                Verdict::fail(format!("code does not contain '{text}'"))
            }
        }
    }
}

fn judge_predicate(p: &WorldPredicate, world: &WorldModel) -> Verdict {
    match p {
        WorldPredicate::Holding { object } => match &world.held_object {
            Some(h) if h == object => Verdict::pass(),
            other => Verdict::fail(format!("holding {other:?}, expected {object}")),
        },
        WorldPredicate::ObjectAt { object, x, y, z, tolerance } => match world.object_pose(object) {
            None => Verdict::fail(format!("{object} is not in the world")),
            Some(pose) => {
                let p = pose.position;
                if (p.x - x).abs() <= *tolerance && (p.y - y).abs() <= *tolerance && (p.z - z).abs() <= *tolerance {
                    Verdict::pass()
                } else {
                    Verdict::fail(format!("{object} at ({}, {}, {})", p.x, p.y, p.z))
                }
            }
        },
        WorldPredicate::GripperOpen if world.gripper == Gripper::Open => Verdict::pass(),
        WorldPredicate::GripperClosed if world.gripper == Gripper::Closed => Verdict::pass(),
        _ => Verdict::fail(format!("gripper is {:?}", world.gripper)),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    pub repetitions: usize,
    /// Pause between runs, e.g. to respect an endpoint's rate limit.
    pub inter_run_delay: Duration,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { repetitions: 1, inter_run_delay: Duration::ZERO }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub case_id: u32,
    pub repetition: usize,
    pub utterance: String,
    pub status: String,
    pub passed: bool,
    pub reason: Option<String>,
    /// Time spent waiting on the model, summed over resolution rounds.
    pub latency_ms: f64,
    pub rounds: usize,
    pub started_at: DateTime<Utc>,
}

/// Runs every case `repetitions` times. Each run starts from the world state
/// the session had on entry and with an empty context. Approval is bypassed
/// for the duration of the suite.
pub fn run_suite(session: &mut Session, cases: &[CommandCase], opts: &BenchOptions) -> Vec<RunRecord> {
    let initial = session.world().snapshot();
    let approval = session.approval_required();
    session.set_approval_required(false);
    let mut records = Vec::new();
    let mut first = true;
    for case in cases {
        for rep in 1..=opts.repetitions.max(1) {
            if !first && !opts.inter_run_delay.is_zero() {
                std::thread::sleep(opts.inter_run_delay);
            }
            first = false;
            session.world().restore(initial.clone());
            session.clear_context();
            let started_at = Utc::now();
            let outcome = session.run_command(&case.utterance);
            let after = session.world().snapshot();
            let record = match outcome {
                Ok(CommandOutcome::Completed(result)) => {
                    let verdict = judge(&case.oracle, &result, &initial, &after);
                    RunRecord {
                        case_id: case.id,
                        repetition: rep,
                        utterance: case.utterance.clone(),
                        status: result.report.status.as_str().to_string(),
                        passed: verdict.passed,
                        reason: verdict.reason,
                        latency_ms: result.latency.as_secs_f64() * 1000.0,
                        rounds: result.rounds,
                        started_at,
                    }
                }
                Ok(CommandOutcome::AwaitingApproval { .. }) => unreachable!("approval disabled during the suite"),
                Err(e) => RunRecord {
                    case_id: case.id,
                    repetition: rep,
                    utterance: case.utterance.clone(),
                    status: "session_error".into(),
                    passed: false,
                    reason: Some(e.to_string()),
                    latency_ms: 0.0,
                    rounds: 0,
                    started_at,
                },
            };
            tracing::info!(case = case.id, rep, passed = record.passed, "bench run");
            records.push(record);
        }
    }
    session.world().restore(initial);
    session.clear_context();
    session.set_approval_required(approval);
    records
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommandStats {
    pub case_id: u32,
    pub utterance: String,
    pub runs: usize,
    pub passes: usize,
    pub mean_latency_ms: f64,
    /// Sample standard deviation; absent with a single run.
    pub std_latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSummary {
    pub cases: usize,
    pub repetitions: usize,
    /// Cases whose first run passed.
    pub first_run_passes: usize,
    pub success_rate: f64,
    pub mean_latency_ms: f64,
    pub commands: Vec<CommandStats>,
}

/// Running mean and variance (Welford).
#[derive(Default)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn sample_std(&self) -> Option<f64> {
        (self.n > 1).then(|| (self.m2 / (self.n - 1) as f64).sqrt())
    }
}

pub fn summarize(records: &[RunRecord]) -> BenchSummary {
    let mut order: Vec<u32> = Vec::new();
    for r in records {
        if !order.contains(&r.case_id) {
            order.push(r.case_id);
        }
    }
    let mut overall = Moments::default();
    let mut commands = Vec::new();
    let mut first_run_passes = 0;
    let mut repetitions = 0;
    for id in &order {
        let runs: Vec<&RunRecord> = records.iter().filter(|r| r.case_id == *id).collect();
        let mut m = Moments::default();
        for r in &runs {
            m.push(r.latency_ms);
            overall.push(r.latency_ms);
        }
        if runs.iter().min_by_key(|r| r.repetition).is_some_and(|r| r.passed) {
            first_run_passes += 1;
        }
        repetitions = repetitions.max(runs.len());
        commands.push(CommandStats {
            case_id: *id,
            utterance: runs[0].utterance.clone(),
            runs: runs.len(),
            passes: runs.iter().filter(|r| r.passed).count(),
            mean_latency_ms: m.mean,
            std_latency_ms: m.sample_std(),
        });
    }
    let cases = order.len();
    BenchSummary {
        cases,
        repetitions,
        first_run_passes,
        success_rate: if cases == 0 { 0.0 } else { first_run_passes as f64 / cases as f64 },
        mean_latency_ms: overall.mean,
        commands,
    }
}

pub const RUNS_CSV: &str = "runs.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const CHART_CSV: &str = "latency_chart.csv";

pub fn write_runs_csv<W: Write>(records: &[RunRecord], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["case_id", "repetition", "utterance", "status", "passed", "reason", "latency_ms", "rounds", "started_at"])?;
    for r in records {
        w.write_record([
            r.case_id.to_string(),
            r.repetition.to_string(),
            r.utterance.clone(),
            r.status.clone(),
            r.passed.to_string(),
            r.reason.clone().unwrap_or_default(),
            format!("{:.3}", r.latency_ms),
            r.rounds.to_string(),
            r.started_at.to_rfc3339(),
        ])?;
    }
    w.flush().map_err(|source| BenchError::Io { path: RUNS_CSV.into(), source })?;
    Ok(())
}

/// Mean latency with a one-sigma error bar per command, in case order.
pub fn write_chart_csv<W: Write>(summary: &BenchSummary, out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["case_id", "label", "mean_latency_ms", "std_latency_ms"])?;
    for c in &summary.commands {
        w.write_record([
            c.case_id.to_string(),
            c.utterance.clone(),
            format!("{:.3}", c.mean_latency_ms),
            c.std_latency_ms.map(|s| format!("{s:.3}")).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|source| BenchError::Io { path: CHART_CSV.into(), source })?;
    Ok(())
}

/// Writes `runs.csv`, `summary.json` and `latency_chart.csv` into `dir`.
pub fn write_outputs(dir: &Path, records: &[RunRecord], summary: &BenchSummary) -> Result<(), BenchError> {
    let io = |path: &Path| {
        let p = path.display().to_string();
        move |source| BenchError::Io { path: p, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let runs = dir.join(RUNS_CSV);
    write_runs_csv(records, std::fs::File::create(&runs).map_err(io(&runs))?)?;
    let chart = dir.join(CHART_CSV);
    write_chart_csv(summary, std::fs::File::create(&chart).map_err(io(&chart))?)?;
    let sum = dir.join(SUMMARY_JSON);
    std::fs::write(&sum, serde_json::to_string_pretty(summary)? + "\n").map_err(io(&sum))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u32, rep: usize, passed: bool, latency_ms: f64) -> RunRecord {
        RunRecord {
            case_id: id,
            repetition: rep,
            utterance: format!("case {id}"),
            status: "ok".into(),
            passed,
            reason: None,
            latency_ms,
            rounds: 1,
            started_at: Utc::now(),
        }
    }

    #[test]
    fn parses_cases_and_rejects_duplicates() {
        let text = r#"{"id": 1, "utterance": "Say hi.", "oracle": {"kind": "say_matches", "pattern": "hi"}}
# comment
{"id": 2, "utterance": "Up.", "oracle": {"kind": "pose_delta", "dz": 0.05}, "tags": ["movement"]}"#;
        let cases = parse_cases(text).unwrap();
        assert_eq!(cases.len(), 2);
        assert_eq!(cases[1].oracle, OracleSpec::PoseDelta { dx: 0.0, dy: 0.0, dz: 0.05, dyaw_deg: None, tolerance: 1e-6 });
        let dup = format!("{}\n{}", text.lines().next().unwrap(), text.lines().next().unwrap());
        assert!(matches!(parse_cases(&dup), Err(BenchError::DuplicateId(1))));
        assert!(matches!(parse_cases("{\"id\": 1}"), Err(BenchError::Case { line: 1, .. })));
    }

    #[test]
    fn summary_uses_first_repetition_and_sample_sigma() {
        let records = vec![rec(7, 1, true, 100.0), rec(7, 2, false, 200.0), rec(8, 1, false, 50.0), rec(8, 2, true, 50.0)];
        let s = summarize(&records);
        assert_eq!(s.cases, 2);
        assert_eq!(s.first_run_passes, 1);
        assert_eq!(s.success_rate, 0.5);
        assert_eq!(s.commands[0].mean_latency_ms, 150.0);
        assert!((s.commands[0].std_latency_ms.unwrap() - 5000f64.sqrt()).abs() < 1e-9);
        assert_eq!(s.commands[1].std_latency_ms, Some(0.0));
        assert_eq!(summarize(&[rec(1, 1, true, 3.0)]).commands[0].std_latency_ms, None);
    }

    #[test]
    fn wrap_degrees_range() {
        assert_eq!(wrap_degrees(190.0), -170.0);
        assert_eq!(wrap_degrees(-33.0), -33.0);
        assert_eq!(wrap_degrees(180.0), 180.0);
    }

    #[test]
    fn csv_quotes_utterances() {
        let mut r = rec(1, 1, true, 1.0);
        r.utterance = "Move a little down, and then \"up\"".into();
        let mut buf = Vec::new();
        write_runs_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let row = rd.records().next().unwrap().unwrap();
        assert_eq!(&row[2], "Move a little down, and then \"up\"");
    }
}
