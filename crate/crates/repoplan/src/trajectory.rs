//! Append-only trajectory log: the audit stream for every pipeline stage.
//!
//! Each event is one JSONL record. The stream is the ground truth for
//! budget accounting (debug iterations, localization steps, judge rounds,
//! remediation attempts), so stages record events at the moment they spend
//! budget, never retroactively.

use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TrajectoryEvent {
    LeafStarted { leaf: String },
    DebugIteration { leaf: String, iteration: u32 },
    LocalizationStep { leaf: String, step: u32, tool: String, ok: bool },
    EditApplied { leaf: String, file: String, after_digest: String },
    EditRejected { leaf: String, message: String },
    TestExecution { leaf: String, node: String, passed: bool, result_digest: String },
    JudgeRound { leaf: String, round: u32, vote: String },
    RemediationAttempt { leaf: String, attempt: u32 },
    LeafOutcome { leaf: String, outcome: String, iterations: u32 },
    Note { leaf: String, message: String },
}

impl TrajectoryEvent {
    pub fn leaf(&self) -> &str {
        match self {
            TrajectoryEvent::LeafStarted { leaf }
            | TrajectoryEvent::DebugIteration { leaf, .. }
            | TrajectoryEvent::LocalizationStep { leaf, .. }
            | TrajectoryEvent::EditApplied { leaf, .. }
            | TrajectoryEvent::EditRejected { leaf, .. }
            | TrajectoryEvent::TestExecution { leaf, .. }
            | TrajectoryEvent::JudgeRound { leaf, .. }
            | TrajectoryEvent::RemediationAttempt { leaf, .. }
            | TrajectoryEvent::LeafOutcome { leaf, .. }
            | TrajectoryEvent::Note { leaf, .. } => leaf,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("trajectory log: {0}")]
pub struct TrajectoryError(String);

enum Sink {
    File(std::fs::File),
    Memory(Vec<TrajectoryEvent>),
}

/// Append-only event writer. The in-memory variant backs tests and keeps
/// the events readable without re-parsing.
pub struct TrajectoryLog {
    sink: Mutex<Sink>,
}

impl TrajectoryLog {
    pub fn to_file(path: &Path) -> Result<Self, TrajectoryError> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| TrajectoryError(format!("{}: {e}", path.display())))?;
        Ok(TrajectoryLog { sink: Mutex::new(Sink::File(file)) })
    }

    pub fn in_memory() -> Self {
        TrajectoryLog { sink: Mutex::new(Sink::Memory(Vec::new())) }
    }

    pub fn record(&self, event: TrajectoryEvent) -> Result<(), TrajectoryError> {
        let mut sink = self.sink.lock().expect("trajectory lock");
        match &mut *sink {
            Sink::File(file) => {
                let line = serde_json::to_string(&event).map_err(|e| TrajectoryError(e.to_string()))?;
                writeln!(file, "{line}").map_err(|e| TrajectoryError(e.to_string()))
            }
            Sink::Memory(events) => {
                events.push(event);
                Ok(())
            }
        }
    }

    /// Events recorded so far (in-memory sink only).
    pub fn events(&self) -> Vec<TrajectoryEvent> {
        match &*self.sink.lock().expect("trajectory lock") {
            Sink::Memory(events) => events.clone(),
            Sink::File(_) => Vec::new(),
        }
    }
}

/// Parses a JSONL trajectory file back into events.
pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryEvent>, TrajectoryError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| TrajectoryError(format!("{}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| TrajectoryError(format!("{l:?}: {e}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_log_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trajectory.jsonl");
        let log = TrajectoryLog::to_file(&path).unwrap();
        log.record(TrajectoryEvent::LeafStarted { leaf: "l1".into() }).unwrap();
        log.record(TrajectoryEvent::DebugIteration { leaf: "l1".into(), iteration: 1 }).unwrap();
        log.record(TrajectoryEvent::LeafOutcome {
            leaf: "l1".into(),
            outcome: "committed".into(),
            iterations: 1,
        })
        .unwrap();
        let events = read_trajectory(&path).unwrap();
        assert_eq!(events.len(), 3);
        assert!(matches!(&events[1], TrajectoryEvent::DebugIteration { iteration: 1, .. }));
    }

    #[test]
    fn memory_log_preserves_order() {
        let log = TrajectoryLog::in_memory();
        for step in 1..=3 {
            log.record(TrajectoryEvent::LocalizationStep {
                leaf: "l".into(),
                step,
                tool: "search_interface_by_functionality".into(),
                ok: true,
            })
            .unwrap();
        }
        let events = log.events();
        assert_eq!(events.len(), 3);
        let steps: Vec<u32> = events
            .iter()
            .map(|e| match e {
                TrajectoryEvent::LocalizationStep { step, .. } => *step,
                _ => panic!("unexpected event"),
            })
            .collect();
        assert_eq!(steps, vec![1, 2, 3]);
    }
}
