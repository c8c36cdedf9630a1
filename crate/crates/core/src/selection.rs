//! Instance-wise kept-set policies.
//!
//! Given id-sorted scores, a policy returns exactly `kept_count(n, k)` ids:
//!
//! - `Easy`: the lowest-scoring ids.
//! - `Hard`: the highest-scoring ids.
//! - `Random`: a fresh uniform subset every epoch.
//! - `Static`: the epoch-0 uniform subset, reused for every later epoch.
//! - `Easy2hard`: `round((1 - ε) m)` hardest ids plus a uniform draw of the
//!   rest from the remaining pool, with ε decaying linearly over training.
//!
//! Score ties are broken by ascending id.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicyKind {
    Static,
    Random,
    Easy,
    Hard,
    Easy2hard,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Static,
        PolicyKind::Random,
        PolicyKind::Easy,
        PolicyKind::Hard,
        PolicyKind::Easy2hard,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Static => "static",
            PolicyKind::Random => "random",
            PolicyKind::Easy => "easy",
            PolicyKind::Hard => "hard",
            PolicyKind::Easy2hard => "easy2hard",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == lower)
            .ok_or_else(|| {
                let valid: Vec<_> = PolicyKind::ALL.iter().map(|p| p.name()).collect();
                Error::Argument(format!(
                    "unknown policy '{s}'; valid policies: {}",
                    valid.join(", ")
                ))
            })
    }
}

impl TryFrom<String> for PolicyKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PolicyKind> for String {
    fn from(p: PolicyKind) -> String {
        p.name().to_string()
    }
}

/// Linear ε schedule anchored at epoch 0 and the final epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    #[serde(default = "one")]
    pub start_value: f64,
    #[serde(default = "one_third")]
    pub end_value: f64,
    pub total_epochs: usize,
}

fn one() -> f64 {
    1.0
}

fn one_third() -> f64 {
    1.0 / 3.0
}

impl EpsilonSchedule {
    pub fn new(total_epochs: usize) -> Self {
        Self {
            start_value: 1.0,
            end_value: 1.0 / 3.0,
            total_epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 <= self.end_value
            && self.end_value <= self.start_value
            && self.start_value <= 1.0
            && self.total_epochs >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "epsilon schedule needs 0 <= end <= start <= 1 and total_epochs >= 1, got {self:?}"
            )))
        }
    }

    pub fn epsilon_at(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.total_epochs {
            return Err(Error::Argument(format!(
                "epoch {epoch} outside schedule of {} epochs",
                self.total_epochs
            )));
        }
        if self.total_epochs == 1 {
            return Ok(self.end_value);
        }
        if epoch == self.total_epochs - 1 {
            return Ok(self.end_value);
        }
        let t = epoch as f64 / (self.total_epochs - 1) as f64;
        Ok(self.start_value + (self.end_value - self.start_value) * t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub policy: PolicyKind,
    pub kept_ratio: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<EpsilonSchedule>,
}

impl SelectionConfig {
    pub fn new(policy: PolicyKind, kept_ratio: f64, seed: u64) -> Self {
        Self {
            policy,
            kept_ratio,
            seed,
            epsilon: None,
        }
    }

    pub fn with_epsilon(mut self, schedule: EpsilonSchedule) -> Self {
        self.epsilon = Some(schedule);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kept_ratio > 0.0 && self.kept_ratio <= 1.0) {
            return Err(Error::Validation(format!(
                "kept_ratio must lie in (0, 1], got {}",
                self.kept_ratio
            )));
        }
        match (self.policy, &self.epsilon) {
            (PolicyKind::Easy2hard, None) => Err(Error::Validation(
                "easy2hard requires an epsilon schedule".into(),
            )),
            (_, Some(s)) => s.validate(),
            _ => Ok(()),
        }
    }
}

/// `round(x)` with halves going up; tolerant of representation error just
/// below a half (e.g. `0.15 * 10`).
pub(crate) fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Kept-set size: `max(1, round_half_up(k n))`, never above `n`.
pub fn kept_count(n: usize, kept_ratio: f64) -> usize {
    round_half_up(kept_ratio * n as f64).clamp(1, n.max(1))
}

/// Result of one selection call.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Kept ids in ascending order.
    pub ids: Vec<String>,
    pub epsilon: Option<f64>,
    /// How many ids were chosen by score rather than at random.
    pub score_selected: usize,
}

/// Stateful front end for the policies; owns the Static cache.
#[derive(Debug, Clone)]
pub struct Selector {
    config: SelectionConfig,
    static_cache: Option<Vec<String>>,
}

fn draw_uniform<'a, R: Rng + ?Sized>(pool: &[&'a str], m: usize, rng: &mut R) -> Vec<&'a str> {
    index::sample(rng, pool.len(), m)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

/// Snapshot positions ordered by ascending score (stable, so ties stay in id order).
fn ascending(snapshot: &[(String, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..snapshot.len()).collect();
    order.sort_by(|&a, &b| snapshot[a].1.total_cmp(&snapshot[b].1));
    order
}

fn descending(snapshot: &[(String, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..snapshot.len()).collect();
    order.sort_by(|&a, &b| snapshot[b].1.total_cmp(&snapshot[a].1));
    order
}

fn sorted_ids(mut ids: Vec<&str>) -> Vec<String> {
    ids.sort_unstable();
    ids.into_iter().map(str::to_string).collect()
}

impl Selector {
    pub fn new(config: SelectionConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            static_cache: None,
        })
    }

    pub fn config(&self) -> &SelectionConfig {
        &self.config
    }

    /// Selects the kept set for `epoch`. `snapshot` must be in strictly
    /// ascending id order, as produced by [`crate::ScoreTable::snapshot`].
    pub fn select<R: Rng + ?Sized>(
        &mut self,
        snapshot: &[(String, f64)],
        epoch: usize,
        total_epochs: usize,
        rng: &mut R,
    ) -> Result<Selection> {
        if snapshot.is_empty() {
            return Err(Error::Argument("cannot select from an empty snapshot".into()));
        }
        if epoch >= total_epochs {
            return Err(Error::Argument(format!(
                "epoch {epoch} outside run of {total_epochs} epochs"
            )));
        }
        if snapshot.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Argument(
                "snapshot ids must be unique and ascending".into(),
            ));
        }
        let n = snapshot.len();
        let m = kept_count(n, self.config.kept_ratio);
        let all: Vec<&str> = snapshot.iter().map(|(id, _)| id.as_str()).collect();

        let (ids, epsilon, score_selected) = match self.config.policy {
            PolicyKind::Random => (sorted_ids(draw_uniform(&all, m, rng)), None, 0),
            PolicyKind::Static => {
                let ids = match &self.static_cache {
                    Some(cached) => cached.clone(),
                    None if epoch == 0 => {
                        let drawn = sorted_ids(draw_uniform(&all, m, rng));
                        self.static_cache = Some(drawn.clone());
                        drawn
                    }
                    None => {
                        return Err(Error::State(format!(
                            "static subset requested at epoch {epoch} before the epoch-0 draw"
                        )))
                    }
                };
                (ids, None, 0)
            }
            PolicyKind::Easy => {
                let ids = ascending(snapshot)[..m].iter().map(|&i| all[i]).collect();
                (sorted_ids(ids), None, m)
            }
            PolicyKind::Hard => {
                let ids = descending(snapshot)[..m].iter().map(|&i| all[i]).collect();
                (sorted_ids(ids), None, m)
            }
            PolicyKind::Easy2hard => {
                let schedule = self
                    .config
                    .epsilon
                    .as_ref()
                    .expect("validated at construction");
                let eps = schedule.epsilon_at(epoch)?;
                let m_hard = round_half_up((1.0 - eps) * m as f64).min(m);
                let order = descending(snapshot);
                let mut taken = vec![false; n];
                let mut ids: Vec<&str> = Vec::with_capacity(m);
                for &i in &order[..m_hard] {
                    taken[i] = true;
                    ids.push(all[i]);
                }
                let rest: Vec<&str> = (0..n).filter(|&i| !taken[i]).map(|i| all[i]).collect();
                ids.extend(draw_uniform(&rest, m - m_hard, rng));
                (sorted_ids(ids), Some(eps), m_hard)
            }
        };
        debug_assert_eq!(ids.len(), m);
        Ok(Selection {
            ids,
            epsilon,
            score_selected,
        })
    }
}

pub const TRACE_HEADER: &str = "epoch,policy,epsilon,kept_count,ids...";

/// One selection-trace CSV row; ids are omitted when there are more than
/// `elide_above` of them.
pub fn write_trace_row<W: Write>(
    out: &mut W,
    epoch: usize,
    policy: PolicyKind,
    selection: &Selection,
    elide_above: usize,
) -> std::io::Result<()> {
    let eps = selection.epsilon.map(|e| e.to_string()).unwrap_or_default();
    write!(out, "{epoch},{policy},{eps},{}", selection.ids.len())?;
    if selection.ids.len() <= elide_above {
        for id in &selection.ids {
            write!(out, ",{id}")?;
        }
    }
    writeln!(out)
}
