//! Correctness oracles for extracted answers.
//!
//! A checker verdicts `(problem id, answer)` as correct, incorrect, or
//! error. The exact-match checker compares canonical forms against a
//! reference table. The command checker spawns a configured sandbox
//! command with the problem id and answer as trailing arguments: exit
//! status 0 means correct, any other exit status means incorrect, and a
//! spawn failure or timeout is an error verdict (never silently correct).

use crate::answer::canonicalize;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

pub const DEFAULT_CHECKER_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
    Error,
}

impl Verdict {
    /// Errors count as not-correct for pass@n but stay visible in pools.
    pub fn is_correct(&self) -> bool {
        matches!(self, Verdict::Correct)
    }
}

pub trait Checker: Send + Sync {
    fn check(&self, problem_id: &str, answer: &str) -> Verdict;
}

/// Reference-answer table compared on canonical forms.
#[derive(Debug, Clone, Default)]
pub struct ExactMatchChecker {
    references: HashMap<String, String>,
}

impl ExactMatchChecker {
    pub fn new<I, K, V>(references: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: AsRef<str>,
    {
        Self {
            references: references
                .into_iter()
                .map(|(k, v)| (k.into(), canonicalize(v.as_ref())))
                .collect(),
        }
    }
}

impl Checker for ExactMatchChecker {
    fn check(&self, problem_id: &str, answer: &str) -> Verdict {
        match self.references.get(problem_id) {
            Some(reference) if *reference == canonicalize(answer) => Verdict::Correct,
            Some(_) => Verdict::Incorrect,
            None => Verdict::Error,
        }
    }
}

/// External sandbox checker: `cmd args... <problem_id> <answer>`.
#[derive(Debug, Clone)]
pub struct CommandChecker {
    command: Vec<String>,
    timeout: Duration,
}

impl CommandChecker {
    pub fn new(command: Vec<String>, timeout: Duration) -> Self {
        Self { command, timeout }
    }

    fn run(&self, problem_id: &str, answer: &str) -> std::io::Result<Verdict> {
        let (program, args) = match self.command.split_first() {
            Some(split) => split,
            None => {
                return Ok(Verdict::Error);
            }
        };
        let mut child = Command::new(program)
            .args(args)
            .arg(problem_id)
            .arg(answer)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()?;
        let deadline = Instant::now() + self.timeout;
        loop {
            if let Some(status) = child.try_wait()? {
                return Ok(if status.success() {
                    Verdict::Correct
                } else {
                    Verdict::Incorrect
                });
            }
            if Instant::now() >= deadline {
                let _ = child.kill();
                let _ = child.wait();
                return Ok(Verdict::Error);
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }
}

impl Checker for CommandChecker {
    fn check(&self, problem_id: &str, answer: &str) -> Verdict {
        match self.run(problem_id, answer) {
            Ok(verdict) => verdict,
            Err(e) => {
                log::warn!("checker command failed to spawn: {e}");
                Verdict::Error
            }
        }
    }
}
