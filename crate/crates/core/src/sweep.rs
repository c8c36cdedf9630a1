//! Policy × kept-ratio × seed grids over one base experiment.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{run_on, BaselineCache, Dataset, ExperimentConfig};
use crate::selection::PolicyKind;
use crate::timewise::{DropMode, DropSpec, DEFAULT_CHUNK_LEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    pub policies: Vec<PolicyKind>,
    pub instance_kept: Vec<f64>,
    #[serde(default = "full")]
    pub time_kept: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_cap")]
    pub cap: usize,
}

fn full() -> Vec<f64> {
    vec![1.0]
}

fn default_cap() -> usize {
    256
}

/// One sweep cell's coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub policy: PolicyKind,
    pub instance_kept: f64,
    pub time_kept: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub policy: PolicyKind,
    pub instance_kept: f64,
    pub time_kept: f64,
    pub seed: u64,
    pub final_error: f64,
    /// Errors at the extra evaluation rates, in config order.
    pub rate_errors: Vec<(u32, f64)>,
    pub processed_ratio: f64,
    pub wall_clock_per_epoch_s: f64,
    pub baseline_wall_clock_per_epoch_s: f64,
    pub wall_clock_ratio: f64,
}

impl SweepSpec {
    pub fn cell_count(&self) -> usize {
        self.policies.len() * self.instance_kept.len() * self.time_kept.len() * self.seeds.len()
    }

    /// Cells in declaration order: policy, then instance ratio, time ratio, seed.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let count = self.cell_count();
        if count > self.cap {
            return Err(Error::Validation(format!(
                "sweep has {count} cells, above the cap of {}",
                self.cap
            )));
        }
        if count == 0 {
            return Err(Error::Validation("sweep has no cells".into()));
        }
        let mut cells = Vec::with_capacity(count);
        for &policy in &self.policies {
            for &instance_kept in &self.instance_kept {
                for &time_kept in &self.time_kept {
                    for &seed in &self.seeds {
                        cells.push(Cell {
                            policy,
                            instance_kept,
                            time_kept,
                            seed,
                        });
                    }
                }
            }
        }
        Ok(cells)
    }

    /// The base config specialised to one cell, with derived defaults filled.
    pub fn cell_config(&self, cell: &Cell) -> Result<ExperimentConfig> {
        let mut c = self.base.clone();
        c.selection.policy = cell.policy;
        c.selection.kept_ratio = cell.instance_kept;
        c.selection.seed = cell.seed;
        if cell.policy != PolicyKind::Easy2hard {
            c.selection.epsilon = None;
        }
        c.seed = cell.seed;
        c.drop = if cell.time_kept >= 1.0 {
            None
        } else {
            let (mode, chunk_len) = self
                .base
                .drop
                .map_or((DropMode::Chunk, DEFAULT_CHUNK_LEN), |d| (d.mode, d.chunk_len));
            Some(DropSpec {
                mode,
                time_kept_ratio: cell.time_kept,
                chunk_len,
            })
        };
        c.resolved()
    }

    /// Runs every cell. With `parallel > 1`, cells run concurrently on that
    /// many threads; rows keep declaration order either way.
    pub fn run(&self, dataset: &Dataset, parallel: usize) -> Result<Vec<SweepRow>> {
        self.run_with_cache(dataset, parallel, &BaselineCache::new())
    }

    /// As [`SweepSpec::run`], sharing full-data baselines through `cache`.
    pub fn run_with_cache(
        &self,
        dataset: &Dataset,
        parallel: usize,
        cache: &BaselineCache,
    ) -> Result<Vec<SweepRow>> {
        let cells = self.cells()?;
        let configs = cells
            .iter()
            .map(|c| self.cell_config(c))
            .collect::<Result<Vec<_>>>()?;
        let run_cell = |(cell, config): (&Cell, &ExperimentConfig)| -> Result<SweepRow> {
            let result = run_on(config, dataset, cache, &mut ())?;
            let s = &result.summary;
            Ok(SweepRow {
                policy: cell.policy,
                instance_kept: cell.instance_kept,
                time_kept: cell.time_kept,
                seed: cell.seed,
                final_error: s.final_eval_error[0].error,
                rate_errors: s.final_eval_error[1..]
                    .iter()
                    .map(|r| (r.sample_rate, r.error))
                    .collect(),
                processed_ratio: s.processed_ratio,
                wall_clock_per_epoch_s: s.wall_clock_per_epoch_s,
                baseline_wall_clock_per_epoch_s: s.baseline_wall_clock_per_epoch_s,
                wall_clock_ratio: s.wall_clock_per_epoch_s / s.baseline_wall_clock_per_epoch_s,
            })
        };
        if parallel > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(parallel)
                .build()
                .map_err(|e| Error::State(format!("thread pool: {e}")))?;
            // Baselines first, so concurrent cells do not race to compute them.
            pool.install(|| {
                configs
                    .par_iter()
                    .filter(|c| !c.is_full_data())
                    .map(|c| cache.get_or_run(c, dataset).map(|_| ()))
                    .collect::<Result<Vec<()>>>()
            })?;
            pool.install(|| cells.par_iter().zip(configs.par_iter()).map(run_cell).collect())
        } else {
            cells.iter().zip(configs.iter()).map(run_cell).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Stratum, SyntheticSpec};
    use crate::harness::DatasetSource;
    use crate::selection::SelectionConfig;

    fn spec() -> SweepSpec {
        SweepSpec {
            base: ExperimentConfig {
                train: DatasetSource::Synthetic(SyntheticSpec {
                    n_instances: 24,
                    n_classes: 4,
                    duration_range_s: (0.1, 0.2),
                    strata: vec![Stratum { fraction: 1.0, noise_sigma: 0.2 }],
                    seed: 4,
                    sample_rate: 16_000,
                    frame_len: 160,
                }),
                test: None,
                selection: SelectionConfig::new(PolicyKind::Random, 1.0, 0),
                drop: None,
                mask: None,
                epochs: 2,
                clip_cap_s: 0.5,
                batch_budget_s: 1.0,
                step_size: 0.5,
                eval_sample_rates: vec![],
                bucket_boundaries_s: vec![8.0, 16.0],
                frame_len: 160,
                prune_start_epoch: 0,
                seed: 0,
            },
            policies: PolicyKind::ALL.to_vec(),
            instance_kept: vec![0.5],
            time_kept: vec![1.0],
            seeds: vec![1],
            cap: 256,
        }
    }

    #[test]
    fn cap_is_enforced() {
        let mut s = spec();
        s.seeds = (0..60).collect();
        let err = s.cells().unwrap_err().to_string();
        assert!(err.contains("300"), "{err}");
    }

    #[test]
    fn rows_follow_declared_policy_order() {
        let s = spec();
        let data = Dataset::load(&s.cell_config(&s.cells().unwrap()[0]).unwrap()).unwrap();
        let rows = s.run(&data, 1).unwrap();
        let policies: Vec<_> = rows.iter().map(|r| r.policy).collect();
        assert_eq!(policies, PolicyKind::ALL.to_vec());
        let par = s.run(&data, 3).unwrap();
        for (a, b) in rows.iter().zip(&par) {
            assert_eq!((a.policy, a.final_error, a.processed_ratio), (b.policy, b.final_error, b.processed_ratio));
        }
    }

    #[test]
    fn time_ratio_below_one_enables_chunk_drop() {
        let mut s = spec();
        s.time_kept = vec![0.5];
        let c = s.cell_config(&s.cells().unwrap()[0]).unwrap();
        assert_eq!(c.drop.unwrap().mode, DropMode::Chunk);
        assert_eq!(c.drop.unwrap().chunk_len, DEFAULT_CHUNK_LEN);
    }
}
