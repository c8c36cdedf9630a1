//! Per-instance scores: the most recently observed mean training loss.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreEntry {
    pub score: f64,
    pub last_update_epoch: usize,
}

/// Scores keyed by instance id. Instances absent from an update keep their
/// previous (stale) score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    entries: BTreeMap<String, ScoreEntry>,
    current_epoch: usize,
}

impl ScoreTable {
    pub fn init<I, S>(ids: I, initial_value: f64) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if !(initial_value.is_finite() && initial_value >= 0.0) {
            return Err(Error::Validation(format!(
                "initial score must be finite and >= 0, got {initial_value}"
            )));
        }
        let mut entries = BTreeMap::new();
        let entry = ScoreEntry {
            score: initial_value,
            last_update_epoch: 0,
        };
        for id in ids {
            let id = id.into();
            if entries.insert(id.clone(), entry).is_some() {
                return Err(Error::Validation(format!("duplicate id '{id}'")));
            }
        }
        if entries.is_empty() {
            return Err(Error::Validation("score table needs at least one id".into()));
        }
        Ok(Self {
            entries,
            current_epoch: 0,
        })
    }

    /// Applies observed losses for `epoch`. Validates everything before
    /// mutating, so a rejected update leaves the table untouched.
    pub fn update(&mut self, losses: &BTreeMap<String, f64>, epoch: usize) -> Result<()> {
        if epoch < self.current_epoch {
            return Err(Error::Validation(format!(
                "epoch {epoch} precedes current epoch {}",
                self.current_epoch
            )));
        }
        for (id, &loss) in losses {
            if !self.entries.contains_key(id) {
                return Err(Error::Validation(format!("unknown id '{id}'")));
            }
            if !(loss.is_finite() && loss >= 0.0) {
                return Err(Error::Validation(format!("non-finite or negative loss {loss} for '{id}'")));
            }
        }
        for (id, &loss) in losses {
            let e = self.entries.get_mut(id).expect("checked above");
            e.score = loss;
            e.last_update_epoch = epoch;
        }
        self.current_epoch = epoch;
        Ok(())
    }

    /// Owned `(id, score)` pairs in ascending id order.
    pub fn snapshot(&self) -> Vec<(String, f64)> {
        self.entries
            .iter()
            .map(|(id, e)| (id.clone(), e.score))
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<ScoreEntry> {
        self.entries.get(id).copied()
    }

    pub fn current_epoch(&self) -> usize {
        self.current_epoch
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ScoreEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Appends `epoch,id,score,last_update_epoch` rows for the current state.
    pub fn write_trace<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for (id, e) in &self.entries {
            writeln!(
                out,
                "{},{},{},{}",
                self.current_epoch, id, e.score, e.last_update_epoch
            )?;
        }
        Ok(())
    }
}

pub const TRACE_HEADER: &str = "epoch,id,score,last_update_epoch";
