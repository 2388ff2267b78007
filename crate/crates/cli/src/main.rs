use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use lmpvc_core::bench::{load_cases, run_suite, summarize, write_outputs, BenchOptions};
use lmpvc_core::config::{ListenerKind, SessionConfig};
use lmpvc_core::listener::{Heard, LineStreamListener, Listener, TypedListener};
use lmpvc_core::policy::parse_policy_file;
use lmpvc_core::scenario::{parse_scenario, run_scenario, ScenarioStep, TurnRecord};
use lmpvc_core::session::{CommandOutcome, CommandResult, Session, TurnOutcome};
use lmpvc_gateway::{AppState, TOKEN_ENV};

#[derive(Parser)]
#[command(name = "lmpvc", version, about = "Voice commands to robot programs, on a simulated arm")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ListenerArg {
    Scripted,
    Typed,
    Stt,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a session in the terminal.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Overrides the listener kind from the config.
        #[arg(long, value_enum)]
        listener: Option<ListenerArg>,
        /// Session script for the scripted listener.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Approve every generated program without asking.
        #[arg(long)]
        yes: bool,
    },
    /// Serve the REST/WebSocket gateway.
    Serve {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8000")]
        addr: String,
    },
    /// Run a command benchmark and write runs.csv, summary.json and latency_chart.csv.
    Bench {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        cases: PathBuf,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        /// Pause between runs in milliseconds.
        #[arg(long, default_value_t = 0)]
        delay_ms: u64,
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
    },
    /// Play the bundled pump-assembly demo on a scratch copy of the fixtures.
    Demo {
        /// Keep the scratch files here instead of a temporary directory.
        #[arg(long)]
        dir: Option<PathBuf>,
        /// Sleep in real time instead of skipping waits.
        #[arg(long)]
        real_time: bool,
    },
    /// Parse policy files and report problems.
    CheckPolicy {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Cmd::Run { config, listener, script, yes } => run(&config, listener, script, yes),
        Cmd::Serve { config, addr } => serve(&config, &addr),
        Cmd::Bench { config, cases, reps, delay_ms, out } => bench(&config, &cases, reps, delay_ms, &out),
        Cmd::Demo { dir, real_time } => demo(dir, real_time),
        Cmd::CheckPolicy { files } => check_policies(&files),
    }
}

fn load_config(path: &Path) -> Result<SessionConfig> {
    SessionConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn print_result(r: &CommandResult) {
    let top = r.lmp.as_ref().map(|l| l.top_level_function.as_str()).unwrap_or("-");
    println!("  [{}] {top} ({:.2} ms)", r.report.status.as_str(), r.latency.as_secs_f64() * 1000.0);
    for line in &r.report.say_outputs {
        println!("  robot: {line}");
    }
    if let Some(detail) = &r.report.error_detail {
        println!("  error: {detail}");
    }
    if !r.report.undefined_names.is_empty() {
        println!("  undefined: {}", r.report.undefined_names.join(", "));
    }
}

fn print_outcome(outcome: &TurnOutcome) {
    match outcome {
        TurnOutcome::NoSpeech => {}
        TurnOutcome::Keyword(a) => println!("  keyword: {}", a.as_str()),
        TurnOutcome::Command(CommandOutcome::Completed(r)) => print_result(r),
        TurnOutcome::Command(CommandOutcome::AwaitingApproval { command_id, lmp, .. }) => {
            println!("  awaiting approval for command {command_id}:");
            for line in lmp.code_text.lines() {
                println!("    {line}");
            }
        }
        TurnOutcome::AwaitingName => println!("  robot: What should the new policy be called?"),
        TurnOutcome::AwaitingHint => println!("  robot: What is the hint for this policy?"),
        TurnOutcome::PolicySaved(p) => println!("  saved policy {} (hint: {})", p.name, p.hint_utterance),
        TurnOutcome::Refused(m) => println!("  refused: {m}"),
    }
}

fn print_turns(turns: &[TurnRecord]) {
    for t in turns {
        match &t.step {
            ScenarioStep::Utterance(u) => println!("> {u}"),
            ScenarioStep::Place { name, pose, .. } => {
                let p = pose.position;
                println!("! placed {name} at ({}, {}, {})", p.x, p.y, p.z);
            }
            ScenarioStep::Remove(name) => println!("! removed {name}"),
        }
        if let Some(o) = &t.outcome {
            print_outcome(o);
        }
    }
}

fn run(config: &Path, listener: Option<ListenerArg>, script: Option<PathBuf>, yes: bool) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(l) = listener {
        cfg.listener.kind = match l {
            ListenerArg::Scripted => ListenerKind::Scripted,
            ListenerArg::Typed => ListenerKind::Typed,
            ListenerArg::Stt => ListenerKind::Stt,
        };
    }
    if script.is_some() {
        cfg.listener.script = script;
    }
    let mut session = Session::from_config(&cfg)?;
    let timeout = Duration::from_secs_f64(cfg.listener.timeout_secs.max(0.01));
    match cfg.listener.kind {
        ListenerKind::Scripted => {
            let path = cfg.listener.script.clone().context("the scripted listener needs a script")?;
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let steps = parse_scenario(&text)?;
            if session.approval_required() && !yes {
                bail!("approval is required for this config; pass --yes to approve scripted commands");
            }
            print_turns(&run_scenario(&mut session, &steps, yes));
            Ok(())
        }
        ListenerKind::Typed => {
            let (tx, mut listener) = TypedListener::new();
            std::thread::spawn(move || {
                for line in std::io::stdin().lock().lines().map_while(Result::ok) {
                    if tx.send(line).is_err() {
                        break;
                    }
                }
            });
            println!("Type commands; end input to quit.");
            interactive(&mut session, &mut listener, timeout, yes)
        }
        ListenerKind::Stt => {
            let (program, args) = cfg.listener.command.split_first().context("listener.command is empty")?;
            let mut child = Command::new(program)
                .args(args)
                .stdout(Stdio::piped())
                .spawn()
                .with_context(|| format!("starting {program}"))?;
            let stdout = child.stdout.take().context("adapter has no stdout")?;
            let mut listener = LineStreamListener::new(BufReader::new(stdout));
            let result = interactive(&mut session, &mut listener, timeout, true);
            let _ = child.kill();
            result
        }
    }
}

fn interactive(session: &mut Session, listener: &mut dyn Listener, timeout: Duration, yes: bool) -> Result<()> {
    loop {
        let outcome = match session.listen_once(listener, timeout) {
            Ok(o) => o,
            Err(lmpvc_core::session::SessionError::Listener(e)) => {
                eprintln!("{e}");
                return Ok(());
            }
            Err(e) => return Err(e.into()),
        };
        print_outcome(&outcome);
        std::io::stdout().flush()?;
        if let TurnOutcome::Command(CommandOutcome::AwaitingApproval { command_id, .. }) = outcome {
            let approve = yes || {
                println!("  approve? [y/N]");
                std::io::stdout().flush()?;
                matches!(listener.next_transcript(Duration::from_secs(3600)),
                    Ok(Heard::Transcript(t)) if t.text.trim().to_lowercase().starts_with('y'))
            };
            if approve {
                print_result(&session.approve(command_id)?);
            } else {
                session.reject(command_id)?;
                println!("  rejected");
            }
        }
    }
}

fn serve(config: &Path, addr: &str) -> Result<()> {
    let cfg = load_config(config)?;
    let session = Session::from_config(&cfg)?;
    let token = std::env::var(TOKEN_ENV).ok();
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        println!("gateway on http://{}", listener.local_addr()?);
        lmpvc_gateway::serve(listener, AppState::new(session, token)).await?;
        Ok(())
    })
}

fn bench(config: &Path, cases: &Path, reps: usize, delay_ms: u64, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let cases = load_cases(cases)?;
    let mut session = Session::from_config(&cfg)?;
    let opts = BenchOptions { repetitions: reps, inter_run_delay: Duration::from_millis(delay_ms) };
    let records = run_suite(&mut session, &cases, &opts);
    let summary = summarize(&records);
    write_outputs(out, &records, &summary)?;
    for c in &summary.commands {
        let sd = c.std_latency_ms.map(|s| format!("{s:.1}")).unwrap_or_else(|| "-".into());
        println!("{:>3}  {}/{}  {:>8.1} ms ± {sd:>6}  {}", c.case_id, c.passes, c.runs, c.mean_latency_ms, c.utterance);
    }
    println!(
        "success rate {:.2} ({}/{} cases), {} runs, written to {}",
        summary.success_rate,
        summary.first_run_passes,
        summary.cases,
        records.len(),
        out.display()
    );
    Ok(())
}

const DEMO_FILES: &[(&str, &str)] = &[
    ("world/pump.json", include_str!("../../core/fixtures/world/pump.json")),
    ("policies/registry.json", include_str!("../../core/fixtures/policies/registry.json")),
    ("policies/handover.policy", include_str!("../../core/fixtures/policies/handover.policy")),
    ("policies/pick.policy", include_str!("../../core/fixtures/policies/pick.policy")),
    ("policies/parts_check.policy", include_str!("../../core/fixtures/policies/parts_check.policy")),
    ("policies/bolts_check.policy", include_str!("../../core/fixtures/policies/bolts_check.policy")),
    ("policies/full_check.policy", include_str!("../../core/fixtures/policies/full_check.policy")),
    ("mock/golden.json", include_str!("../../core/fixtures/mock/golden.json")),
    ("mock/pump.json", include_str!("../../core/fixtures/mock/pump.json")),
    ("scripts/pump_demo.txt", include_str!("../../core/fixtures/scripts/pump_demo.txt")),
    ("config/demo.json", include_str!("../../core/fixtures/config/demo.json")),
];

fn demo(dir: Option<PathBuf>, real_time: bool) -> Result<()> {
    // The session writes to its registry, so it runs on a copy.
    let scratch = tempfile::tempdir()?;
    let root = dir.unwrap_or_else(|| scratch.path().to_path_buf());
    for (rel, text) in DEMO_FILES {
        let path = root.join(rel);
        std::fs::create_dir_all(path.parent().unwrap_or(&root))?;
        std::fs::write(&path, text)?;
    }
    let mut cfg = load_config(&root.join("config/demo.json"))?;
    if !real_time {
        cfg.time_dilation = 0.0;
    }
    let mut session = Session::from_config(&cfg)?;
    let steps = parse_scenario(DEMO_FILES.iter().find(|(p, _)| *p == "scripts/pump_demo.txt").map(|f| f.1).unwrap_or(""))?;
    print_turns(&run_scenario(&mut session, &steps, true));
    let world = session.world().snapshot();
    if let Some(bolt) = world.object_pose("big_bolt") {
        let p = bolt.position;
        println!("big_bolt ends at ({:.3}, {:.3}, {:.3}), held: {:?}", p.x, p.y, p.z, world.held_object);
    }
    Ok(())
}

fn check_policies(files: &[PathBuf]) -> Result<()> {
    let mut bad = 0;
    for f in files {
        let text = std::fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
        match parse_policy_file(&text) {
            Ok(p) => println!("{}: ok  {} (hint: {}, functions: {})", f.display(), p.name, p.hint_utterance, p.function_names().join(", ")),
            Err(e) => {
                bad += 1;
                println!("{}: {e}", f.display());
            }
        }
    }
    if bad > 0 {
        bail!("{bad} of {} policy files have problems", files.len());
    }
    Ok(())
}
