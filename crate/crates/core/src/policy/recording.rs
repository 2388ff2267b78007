use chrono::{DateTime, Utc};
use indexmap::IndexMap;

use super::{sanitize_name, Policy, PolicyError};
use crate::codegen::Lmp;
use crate::script::parse_program;

/// Programs captured between "record policy" and "save policy".
#[derive(Debug, Clone)]
pub struct RecordingSession {
    pub steps: Vec<Lmp>,
    pub started_at: DateTime<Utc>,
}

impl Default for RecordingSession {
    fn default() -> Self {
        Self::new()
    }
}

fn ordinal(n: usize) -> String {
    let suffix = match (n % 10, n % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    format!("{n}{suffix}")
}

impl RecordingSession {
    pub fn new() -> Self {
        Self { steps: Vec::new(), started_at: Utc::now() }
    }

    pub fn record_step(&mut self, lmp: Lmp) {
        self.steps.push(lmp);
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Turns the recorded steps into a learned policy: every step's
    /// definitions, then a wrapper named after `name` that calls each step's
    /// top-level function in order, then a hint block built from `hint`.
    pub fn finalize(&self, name: &str, hint: &str) -> Result<Policy, PolicyError> {
        if self.steps.is_empty() {
            return Err(PolicyError::EmptyRecording);
        }
        let wrapper = sanitize_name(name)?;
        let mut seen: IndexMap<String, String> = IndexMap::new();
        let mut body = String::new();
        for (i, step) in self.steps.iter().enumerate() {
            let program = parse_program(&step.code_text).map_err(PolicyError::Body)?;
            if self.steps.len() == 1 {
                body.push_str("# Generated code\n");
            } else {
                body.push_str(&format!("# Generated code based on {} command\n", ordinal(i + 1)));
            }
            for fname in program.functions.keys() {
                let src = program.function_source(fname).unwrap_or_default();
                let src = src.lines().map(str::trim_end).collect::<Vec<_>>().join("\n");
                match seen.get(fname) {
                    Some(prev) if *prev == src => continue,
                    Some(_) => return Err(PolicyError::RecordingClash(fname.clone())),
                    None => {}
                }
                body.push_str(&src);
                body.push('\n');
                seen.insert(fname.clone(), src);
            }
        }
        if seen.contains_key(&wrapper) {
            return Err(PolicyError::NameTaken(wrapper));
        }
        body.push_str("# Added by Policy Bank based on user input\n");
        body.push_str(&format!("def {wrapper}(robot):\n"));
        for step in &self.steps {
            body.push_str(&format!("    {}(robot)\n", step.top_level_function));
        }
        let mut policy = Policy::new(&wrapper, Vec::new(), &body, &wrapper, hint)?;
        policy.learned = true;
        Ok(policy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lmp(utterance: &str, code: &str) -> Lmp {
        Lmp::from_code(utterance, code).unwrap()
    }

    #[test]
    fn ordinals() {
        let got: Vec<String> = [1, 2, 3, 4, 11, 12, 13, 21, 22, 101].iter().map(|n| ordinal(*n)).collect();
        assert_eq!(got, ["1st", "2nd", "3rd", "4th", "11th", "12th", "13th", "21st", "22nd", "101st"]);
    }

    #[test]
    fn empty_recording_fails() {
        assert!(matches!(RecordingSession::new().finalize("x", "y"), Err(PolicyError::EmptyRecording)));
    }

    #[test]
    fn single_step_layout() {
        let mut rec = RecordingSession::new();
        rec.record_step(lmp("Say hi.", "def say_hi(robot):\n    robot.say('hi')"));
        let p = rec.finalize("greet", "greet the user").unwrap();
        assert!(p.learned);
        assert_eq!(
            p.body_source,
            "# Generated code\ndef say_hi(robot):\n    robot.say('hi')\n# Added by Policy Bank based on user input\ndef greet(robot):\n    say_hi(robot)"
        );
        assert_eq!(p.alias_function, "greet_the_user");
    }

    #[test]
    fn repeated_identical_steps_are_deduplicated() {
        let mut rec = RecordingSession::new();
        rec.record_step(lmp("Say hi.", "def say_hi(robot):\n    robot.say('hi')"));
        rec.record_step(lmp("Say hi.", "def say_hi(robot):\n    robot.say('hi')"));
        let p = rec.finalize("greet twice", "greet me twice").unwrap();
        assert_eq!(p.body().functions.len(), 2);
        assert!(p.body_source.ends_with("def greet_twice(robot):\n    say_hi(robot)\n    say_hi(robot)"));

        let mut rec = RecordingSession::new();
        rec.record_step(lmp("Say hi.", "def say_hi(robot):\n    robot.say('hi')"));
        rec.record_step(lmp("Say hi.", "def say_hi(robot):\n    robot.say('hello')"));
        assert!(matches!(rec.finalize("g", "g h"), Err(PolicyError::RecordingClash(_))));
    }
}
