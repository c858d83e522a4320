use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use modpipe_core::detection::{TrustedVerdict, VerifierRegistry};
use modpipe_core::pipeline::{ReviewState, ReviewTask};
use modpipe_core::trust::Timestamp;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::JsonlFile;

/// Everything that happens to a review task, in the order it happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ReviewEvent {
    Opened {
        task: ReviewTask,
    },
    Verdict {
        task_id: String,
        verdict: TrustedVerdict,
    },
    Closed {
        task_id: String,
        state: ReviewState,
        at: Timestamp,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub task: ReviewTask,
    pub verdicts: Vec<TrustedVerdict>,
}

impl TaskRecord {
    pub fn quorum_reached(&self) -> bool {
        self.task.received >= self.task.required_quorum
    }

    fn judged_by(&self, verifier_id: &str) -> bool {
        self.verdicts.iter().any(|v| v.verifier_id == verifier_id)
    }
}

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown review task `{0}`")]
    UnknownTask(String),
    #[error("task `{task_id}` is {state:?}")]
    Closed { task_id: String, state: ReviewState },
    #[error("unknown verifier `{0}`")]
    UnknownVerifier(String),
    #[error("signature from `{0}` does not verify")]
    BadSignature(String),
    #[error("`{verifier_id}` already judged task `{task_id}`")]
    Duplicate {
        task_id: String,
        verifier_id: String,
    },
    #[error("verdict is for `{got}`, task is for `{expected}`")]
    ContentMismatch { expected: String, got: String },
    #[error("review store: {0}")]
    Storage(#[from] io::Error),
}

/// Review tasks and the verdicts they collected, persisted as an event log.
#[derive(Debug, Default)]
pub struct ReviewBook {
    tasks: BTreeMap<String, TaskRecord>,
    file: Option<JsonlFile>,
}

impl ReviewBook {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> io::Result<Self> {
        let (file, events) = JsonlFile::open::<ReviewEvent>(path)?;
        let mut book = Self {
            tasks: BTreeMap::new(),
            file: Some(file),
        };
        for ev in &events {
            book.apply(ev);
        }
        Ok(book)
    }

    fn apply(&mut self, ev: &ReviewEvent) {
        match ev {
            ReviewEvent::Opened { task } => {
                self.tasks
                    .entry(task.task_id.clone())
                    .or_insert_with(|| TaskRecord {
                        task: task.clone(),
                        verdicts: Vec::new(),
                    });
            }
            ReviewEvent::Verdict { task_id, verdict } => {
                if let Some(r) = self.tasks.get_mut(task_id) {
                    r.verdicts.push(verdict.clone());
                    r.task.received = r.verdicts.len();
                }
            }
            ReviewEvent::Closed { task_id, state, .. } => {
                if let Some(r) = self.tasks.get_mut(task_id) {
                    r.task.state = *state;
                }
            }
        }
    }

    /// Persists first, then applies, so memory never runs ahead of disk.
    fn record(&mut self, ev: ReviewEvent) -> Result<(), ReviewError> {
        if let Some(f) = self.file.as_mut() {
            f.append(&ev)?;
        }
        self.apply(&ev);
        Ok(())
    }

    /// Opens a task unless one with the same id already exists.
    pub fn open_task(&mut self, task: ReviewTask) -> Result<bool, ReviewError> {
        if self.tasks.contains_key(&task.task_id) {
            return Ok(false);
        }
        self.record(ReviewEvent::Opened { task })?;
        Ok(true)
    }

    pub fn get(&self, task_id: &str) -> Option<&TaskRecord> {
        self.tasks.get(task_id)
    }

    pub fn for_content(&self, content_id: &str) -> Option<&TaskRecord> {
        self.tasks.get(&ReviewTask::id_for(content_id))
    }

    /// Closes every open task whose deadline has passed.
    pub fn expire_due(&mut self, now: Timestamp) -> Result<Vec<String>, ReviewError> {
        let due: Vec<String> = self
            .tasks
            .values()
            .filter(|r| r.task.state == ReviewState::Open && r.task.expires_at <= now)
            .map(|r| r.task.task_id.clone())
            .collect();
        for task_id in &due {
            self.close(task_id, ReviewState::Expired, now)?;
        }
        Ok(due)
    }

    pub fn close(
        &mut self,
        task_id: &str,
        state: ReviewState,
        at: Timestamp,
    ) -> Result<(), ReviewError> {
        self.record(ReviewEvent::Closed {
            task_id: task_id.to_owned(),
            state,
            at,
        })
    }

    /// Records a signed verdict from a registered verifier.
    pub fn submit(
        &mut self,
        task_id: &str,
        verdict: TrustedVerdict,
        registry: &VerifierRegistry,
    ) -> Result<&TaskRecord, ReviewError> {
        let record = self
            .tasks
            .get(task_id)
            .ok_or_else(|| ReviewError::UnknownTask(task_id.to_owned()))?;
        if record.task.state != ReviewState::Open {
            return Err(ReviewError::Closed {
                task_id: task_id.to_owned(),
                state: record.task.state,
            });
        }
        if verdict.content_id != record.task.content_id {
            return Err(ReviewError::ContentMismatch {
                expected: record.task.content_id.clone(),
                got: verdict.content_id,
            });
        }
        let profile = registry
            .get(&verdict.verifier_id)
            .ok_or_else(|| ReviewError::UnknownVerifier(verdict.verifier_id.clone()))?;
        if !verdict.verifies_under(&profile.public_key) {
            return Err(ReviewError::BadSignature(verdict.verifier_id));
        }
        if record.judged_by(&verdict.verifier_id) {
            return Err(ReviewError::Duplicate {
                task_id: task_id.to_owned(),
                verifier_id: verdict.verifier_id,
            });
        }
        self.record(ReviewEvent::Verdict {
            task_id: task_id.to_owned(),
            verdict,
        })?;
        Ok(&self.tasks[task_id])
    }

    /// Open tasks the verifier has not judged yet.
    pub fn queue_for(&self, verifier_id: &str) -> Vec<&TaskRecord> {
        self.tasks
            .values()
            .filter(|r| r.task.state == ReviewState::Open && !r.judged_by(verifier_id))
            .collect()
    }

    pub fn open_tasks(&self) -> impl Iterator<Item = &TaskRecord> {
        self.tasks
            .values()
            .filter(|r| r.task.state == ReviewState::Open)
    }
}
