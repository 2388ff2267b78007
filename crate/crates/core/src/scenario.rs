//! Scripted sessions with operator actions.
//!
//! A scenario file is a session script in which lines starting with `!` are
//! changes the human operator makes to the world between utterances:
//!
//! ```text
//! Do a full inspection.
//! ! place cover 0.5 0.0 0.15
//! ! remove cover_bolts
//! Check again.
//! ```
//!
//! `place` takes an optional trailing `fixed` to mark the object as not
//! graspable.

use thiserror::Error;

use crate::listener::{Transcript, TranscriptSource};
use crate::pose::Pose;
use crate::session::{CommandOutcome, Session, TurnOutcome};

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioStep {
    Utterance(String),
    Place { name: String, pose: Pose, graspable: bool },
    Remove(String),
}

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub message: String,
}

pub fn parse_scenario(text: &str) -> Result<Vec<ScenarioStep>, ScenarioError> {
    let mut steps = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| ScenarioError { line: i + 1, message };
        let Some(action) = line.strip_prefix('!') else {
            steps.push(ScenarioStep::Utterance(line.to_string()));
            continue;
        };
        let words: Vec<&str> = action.split_whitespace().collect();
        match words.as_slice() {
            ["place", name, x, y, z, rest @ ..] => {
                let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("'{s}' is not a number")));
                let graspable = match rest {
                    [] => true,
                    ["fixed"] => false,
                    _ => return Err(err(format!("unexpected '{}'", rest.join(" ")))),
                };
                steps.push(ScenarioStep::Place {
                    name: name.to_string(),
                    pose: Pose::at(num(x)?, num(y)?, num(z)?),
                    graspable,
                });
            }
            ["remove", name] => steps.push(ScenarioStep::Remove(name.to_string())),
            _ => return Err(err(format!("unknown operator action '{action}'"))),
        }
    }
    Ok(steps)
}

#[derive(Debug, Clone)]
pub struct TurnRecord {
    pub step: ScenarioStep,
    pub outcome: Option<TurnOutcome>,
}

impl TurnRecord {
    /// Everything the robot said during this turn's program.
    pub fn say_outputs(&self) -> Vec<String> {
        match &self.outcome {
            Some(TurnOutcome::Command(CommandOutcome::Completed(r))) => r.report.say_outputs.clone(),
            _ => Vec::new(),
        }
    }
}

/// Plays `steps` against `session`. With `auto_approve`, commands held for
/// approval are approved immediately.
pub fn run_scenario(session: &mut Session, steps: &[ScenarioStep], auto_approve: bool) -> Vec<TurnRecord> {
    let mut records = Vec::new();
    for step in steps {
        let outcome = match step {
            ScenarioStep::Utterance(text) => {
                let mut outcome = session.handle_transcript(&Transcript::new(text.clone(), TranscriptSource::Scripted));
                if let TurnOutcome::Command(CommandOutcome::AwaitingApproval { command_id, .. }) = &outcome {
                    if auto_approve {
                        outcome = match session.approve(*command_id) {
                            Ok(r) => TurnOutcome::Command(CommandOutcome::Completed(r)),
                            Err(e) => TurnOutcome::Refused(e.to_string()),
                        };
                    }
                }
                Some(outcome)
            }
            ScenarioStep::Place { name, pose, graspable } => {
                session.world().place_object(name, *pose, *graspable);
                None
            }
            ScenarioStep::Remove(name) => {
                session.world().remove_object(name);
                None
            }
        };
        records.push(TurnRecord { step: step.clone(), outcome });
    }
    records
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_operator_lines() {
        let steps = parse_scenario("# c\nCheck again.\n! place cover 0.5 0 0.15\n! place pump 0 0 0 fixed\n! remove cover\n").unwrap();
        assert_eq!(
            steps,
            vec![
                ScenarioStep::Utterance("Check again.".into()),
                ScenarioStep::Place { name: "cover".into(), pose: Pose::at(0.5, 0.0, 0.15), graspable: true },
                ScenarioStep::Place { name: "pump".into(), pose: Pose::at(0.0, 0.0, 0.0), graspable: false },
                ScenarioStep::Remove("cover".into()),
            ]
        );
        assert_eq!(parse_scenario("ok\n! fly away").unwrap_err().line, 2);
        assert!(parse_scenario("! place a 1 two 3").is_err());
    }
}
