mod common;

use std::time::Duration;

use common::*;
use lmpvc_core::config::{KeywordAction, SessionConfig};
use lmpvc_core::events::EventKind;
use lmpvc_core::listener::{ScriptedListener, Transcript, TranscriptSource};
use lmpvc_core::script::ExecStatus;
use lmpvc_core::session::{CommandOutcome, Session, SessionError, SessionStatus, TurnOutcome};

fn say(s: &mut Session, text: &str) -> TurnOutcome {
    s.handle_transcript(&Transcript::new(text, TranscriptSource::Typed))
}

#[test]
fn context_keeps_the_latest_successes() {
    let bank = policy_bank(&[]);
    let (mut s, _) = mock_session(&bank, &["mock/golden.json"]);
    for u in ["Move a little down.", "Draw a small circle.", "Twenty centimeters to the left.", "Can you see the big bolt?"] {
        s.run_command(u).unwrap();
    }
    let ctx: Vec<String> = s.context().iter().map(|l| l.top_level_function.clone()).collect();
    assert_eq!(ctx, ["draw_a_small_circle", "twenty_centimeters_to_the_left", "can_you_see_the_big_bolt"]);

    // A failed generation is not remembered.
    s.run_command("Fly to the moon.").unwrap();
    assert_eq!(s.context().len(), 3);
    assert!(matches!(say(&mut s, "clear context"), TurnOutcome::Keyword(KeywordAction::ClearContext)));
    assert!(s.context().is_empty());
}

#[test]
fn unknown_utterance_reports_generation_failure() {
    let bank = policy_bank(&[]);
    let (mut s, _) = mock_session(&bank, &["mock/golden.json"]);
    let before = s.world().snapshot();
    let CommandOutcome::Completed(r) = s.run_command("Fly to the moon.").unwrap() else { panic!() };
    assert_eq!(r.report.status, ExecStatus::GenerationFailed);
    assert_eq!(s.world().snapshot(), before);
    assert_eq!(s.status(), SessionStatus::Idle);
}

#[test]
fn approval_gate_holds_and_releases() {
    let bank = policy_bank(&[]);
    let (mut s, _) = mock_session(&bank, &["mock/golden.json"]);
    s.set_approval_required(true);
    let start = s.world().snapshot();
    let CommandOutcome::AwaitingApproval { command_id, .. } = s.run_command("Move a little down.").unwrap() else {
        panic!("expected approval gate")
    };
    assert_eq!(s.status(), SessionStatus::AwaitingApproval);
    assert_eq!(s.world().snapshot(), start);
    assert!(matches!(s.run_command("Move a little down."), Err(SessionError::Busy(_))));
    assert!(matches!(s.approve(command_id + 1), Err(SessionError::UnknownCommand(_))));
    let r = s.approve(command_id).unwrap();
    assert!(r.report.is_ok());
    assert!((s.world().snapshot().ee_pose.position.z - (start.ee_pose.position.z - 0.05)).abs() < 1e-9);

    let CommandOutcome::AwaitingApproval { command_id, .. } = s.run_command("Move a little down.").unwrap() else { panic!() };
    s.reject(command_id).unwrap();
    assert_eq!(s.status(), SessionStatus::Idle);
    assert!(s.pending_command().is_none());
}

#[test]
fn stop_cancels_the_naming_dialog() {
    let bank = policy_bank(&["full_check"]);
    let (mut s, _) = mock_session(&bank, &["mock/pump.json"]);
    assert!(matches!(say(&mut s, "Save policy."), TurnOutcome::Refused(_)));
    say(&mut s, "Record policy.");
    say(&mut s, "Check parts.");
    assert_eq!(s.recording().unwrap().steps.len(), 1);
    assert!(matches!(say(&mut s, "save policy"), TurnOutcome::AwaitingName));
    assert_eq!(s.status(), SessionStatus::RecordingName);
    assert!(matches!(say(&mut s, "stop"), TurnOutcome::Keyword(KeywordAction::Stop)));
    assert_eq!(s.status(), SessionStatus::Idle);
    // Recording continues after a cancelled dialog.
    assert!(s.recording().is_some());
    say(&mut s, "discard recording");
    assert!(s.recording().is_none());
}

#[test]
fn failed_commands_are_not_recorded() {
    let bank = policy_bank(&["full_check"]);
    let (mut s, _) = mock_session(&bank, &["mock/pump.json"]);
    say(&mut s, "record policy");
    say(&mut s, "Press the red button.");
    say(&mut s, "Check bolts.");
    let steps: Vec<String> = s.recording().unwrap().steps.iter().map(|l| l.top_level_function.clone()).collect();
    assert_eq!(steps, ["check_bolts"]);
}

#[test]
fn events_follow_a_command() {
    let bank = policy_bank(&[]);
    let (mut s, _) = mock_session(&bank, &["mock/golden.json"]);
    let (_, mut rx) = s.bus().subscribe();
    say(&mut s, "Can you see the big bolt?");
    let mut types = Vec::new();
    while let Ok(e) = rx.try_recv() {
        types.push(e.kind.type_name());
        if let EventKind::ExecutionFinished { status, .. } = e.kind {
            assert_eq!(status, ExecStatus::Ok);
        }
    }
    assert_eq!(types, ["transcript", "codegen_started", "codegen_result", "execution_started", "say", "execution_finished"]);
}

#[test]
fn demo_config_drives_a_scripted_session() {
    let mut cfg = SessionConfig::load(fixture("config/demo.json")).unwrap();
    let bank = policy_bank(&[]);
    cfg.registry = bank.registry.clone();
    cfg.time_dilation = 0.0;
    let mut s = Session::from_config(&cfg).unwrap();
    assert!(!s.approval_required());
    let mut l = ScriptedListener::new(["Do a full inspection.", "stop"]);
    let t = s.listen_once(&mut l, Duration::from_millis(10)).unwrap();
    let TurnOutcome::Command(CommandOutcome::Completed(r)) = t else { panic!("{t:?}") };
    assert_eq!(r.report.say_outputs, ["Can't find the cover!", "Everything secured."]);
    assert!(matches!(s.listen_once(&mut l, Duration::from_millis(10)).unwrap(), TurnOutcome::Keyword(KeywordAction::Stop)));
    assert!(matches!(s.listen_once(&mut l, Duration::from_millis(10)).unwrap(), TurnOutcome::NoSpeech));
}
