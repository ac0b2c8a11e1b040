//! Particle merging: co-located ensemble members share their tangent.
//!
//! Replacing `T` by its average over a spatial bin approximates
//! `E[T_t | X_t]`, which leaves `E[∇f(X_t)·T_t]` unchanged and can only
//! shrink its variance (up to the binning bias).

use std::io::Write;

use crate::dynamics::{initial_position, NoiseStream, ParticleState, SimConfig, Stepper};
use crate::error::{Error, Result};
use crate::estimators::{ensemble_sensitivity, series_result, tally_replicas, EstimatorResult, Observable};
use crate::potentials::Model;
use crate::stats::RunningStats;

#[derive(Debug, Clone, PartialEq)]
pub struct MergeConfig {
    /// Mesh step, the same along every coordinate; bins are anchored at 0.
    pub bin_width: f64,
    pub merge_period_steps: usize,
    /// Particles advanced in lockstep and merged together.
    pub batch_size: usize,
    pub enabled: bool,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig { bin_width: 0.04, merge_period_steps: 10, batch_size: 1000, enabled: true }
    }
}

impl MergeConfig {
    pub fn validate(&self, config: &SimConfig) -> Result<()> {
        if !self.enabled {
            return Err(Error::usage("merging is disabled"));
        }
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return Err(Error::usage("bin width must be positive"));
        }
        if self.merge_period_steps == 0 {
            return Err(Error::usage("merge period must be at least one step"));
        }
        if self.batch_size < 2 {
            return Err(Error::usage("merging needs at least two particles per batch"));
        }
        if config.n_replicas % self.batch_size != 0 {
            return Err(Error::usage(format!(
                "n_replicas={} is not a multiple of the batch size {}",
                config.n_replicas, self.batch_size
            )));
        }
        Ok(())
    }

    pub fn n_batches(&self, config: &SimConfig) -> usize {
        config.n_replicas / self.batch_size
    }
}

/// Bin label of a position: `floor(x_k / w)` per coordinate. Positions
/// whose label is not finite get no label and are never merged.
fn bin_label(x: &[f64], w: f64) -> Option<Vec<u64>> {
    x.iter()
        .map(|&c| {
            let b = (c / w).floor();
            b.is_finite().then_some(b.to_bits())
        })
        .collect()
}

/// Replaces every tangent by the mean tangent of its bin, in place.
pub fn merge_tangents_in_place(positions: &[Vec<f64>], tangents: &mut [Vec<f64>], bin_width: f64) {
    assert_eq!(positions.len(), tangents.len(), "positions and tangents differ in length");
    let mut labelled: Vec<(Vec<u64>, usize)> = positions
        .iter()
        .enumerate()
        .filter_map(|(i, x)| bin_label(x, bin_width).map(|l| (l, i)))
        .collect();
    labelled.sort();
    let mut start = 0;
    while start < labelled.len() {
        let mut end = start + 1;
        while end < labelled.len() && labelled[end].0 == labelled[start].0 {
            end += 1;
        }
        if end - start > 1 {
            let d = tangents[labelled[start].1].len();
            let mut mean = vec![0.0; d];
            for (_, i) in &labelled[start..end] {
                for (m, t) in mean.iter_mut().zip(&tangents[*i]) {
                    *m += t;
                }
            }
            let n = (end - start) as f64;
            mean.iter_mut().for_each(|m| *m /= n);
            for (_, i) in &labelled[start..end] {
                tangents[*i].copy_from_slice(&mean);
            }
        }
        start = end;
    }
}

pub fn merge_tangents(positions: &[Vec<f64>], tangents: &[Vec<f64>], bin_width: f64) -> Vec<Vec<f64>> {
    let mut out = tangents.to_vec();
    merge_tangents_in_place(positions, &mut out, bin_width);
    out
}

/// Merged ensemble outcome plus the largest `|T|` seen at any step.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedRun {
    pub result: EstimatorResult,
    pub max_abs_tangent: f64,
}

struct BatchOutcome {
    means: Vec<f64>,
    max_abs_tangent: f64,
}

/// Ensemble sensitivity where batches of `batch_size` particles advance in
/// lockstep and merge tangents every `merge_period_steps` steps. The
/// estimator is the mean of per-batch means, its error the spread of batch
/// means. Particle `j` of batch `b` is replica `b·batch_size + j`, so
/// positions coincide with the unmerged ensemble of the same seed.
pub fn merged_ensemble_run(
    config: &SimConfig,
    merge: &MergeConfig,
    model: &Model,
    obs: &dyn Observable,
) -> Result<MergedRun> {
    config.validate()?;
    merge.validate(config)?;
    let times = config.record_times();
    let k = times.len();
    let batch_cfg = SimConfig { n_replicas: merge.n_batches(config), ..config.clone() };
    let ((stats, max_t), diverged) = tally_replicas(
        &batch_cfg,
        || (vec![RunningStats::new(); k], 0.0f64),
        |b| run_batch(config, merge, model, obs, b),
        |(acc, m), out: BatchOutcome| {
            acc.iter_mut().zip(&out.means).for_each(|(s, &v)| s.push(v));
            *m = m.max(out.max_abs_tangent);
        },
        |(a, ma), (b, mb)| {
            a.iter_mut().zip(&b).for_each(|(x, y)| x.merge(y));
            *ma = ma.max(mb);
        },
    )?;
    let mut result = series_result("merged", &times, &stats, diverged);
    result.n_effective *= merge.batch_size;
    result.n_diverged *= merge.batch_size;
    Ok(MergedRun { result, max_abs_tangent: max_t })
}

pub fn merged_ensemble_sensitivity(
    config: &SimConfig,
    merge: &MergeConfig,
    model: &Model,
    obs: &dyn Observable,
) -> Result<EstimatorResult> {
    merged_ensemble_run(config, merge, model, obs).map(|r| r.result)
}

fn run_batch(
    config: &SimConfig,
    merge: &MergeConfig,
    model: &Model,
    obs: &dyn Observable,
    batch: u64,
) -> Result<BatchOutcome> {
    let m = merge.batch_size;
    let first = batch * m as u64;
    let mut states = Vec::with_capacity(m);
    let mut noises = Vec::with_capacity(m);
    for j in 0..m as u64 {
        states.push(ParticleState::at(initial_position(config, model, first + j)?));
        noises.push(NoiseStream::new(config.master_seed, first + j));
    }
    let mut stepper = Stepper::new(model);
    let mut dw = vec![0.0; model.dim()];
    let batch_mean = |states: &[ParticleState]| {
        states.iter().map(|s| obs.directional(&s.x, &s.tangent)).sum::<f64>() / m as f64
    };
    let mut means = vec![batch_mean(&states)];
    let mut max_abs_tangent = 0.0f64;
    let mut positions: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut tangents: Vec<Vec<f64>> = Vec::with_capacity(m);
    for step in 1..=config.n_steps() {
        let time = step as f64 * config.dt;
        for (j, (s, noise)) in states.iter_mut().zip(noises.iter_mut()).enumerate() {
            noise.fill_increment(config.dt, &mut dw);
            stepper.step(s, config.dt, &dw);
            s.time = time;
            if s.is_diverged() {
                return Err(Error::Diverged { replica: first + j as u64, time });
            }
        }
        if step % merge.merge_period_steps == 0 {
            positions.clear();
            tangents.clear();
            for s in &states {
                positions.push(s.x.clone());
                tangents.push(s.tangent.clone());
            }
            merge_tangents_in_place(&positions, &mut tangents, merge.bin_width);
            for (s, t) in states.iter_mut().zip(tangents.drain(..)) {
                s.tangent = t;
            }
        }
        for s in &states {
            for t in &s.tangent {
                max_abs_tangent = max_abs_tangent.max(t.abs());
            }
        }
        if step % config.record_stride == 0 {
            means.push(batch_mean(&states));
        }
    }
    Ok(BatchOutcome { means, max_abs_tangent })
}

/// One row of the merged/plain comparison. `var_ratio` compares the two
/// estimators' variances at the same total particle count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareRow {
    pub time: f64,
    pub mean_merged: f64,
    pub se_merged: f64,
    pub mean_plain: f64,
    pub se_plain: f64,
    pub var_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeComparison {
    pub rows: Vec<CompareRow>,
    pub merged: MergedRun,
    pub plain: EstimatorResult,
}

/// Runs the merged and the plain ensemble on the same replicas.
pub fn merge_compare(
    config: &SimConfig,
    merge: &MergeConfig,
    model: &Model,
    obs: &dyn Observable,
) -> Result<MergeComparison> {
    let merged = merged_ensemble_run(config, merge, model, obs)?;
    let plain = ensemble_sensitivity(config, model, obs)?;
    let ms = merged.result.series.as_ref().expect("merged series");
    let ps = plain.series.as_ref().expect("plain series");
    let rows = ms
        .iter()
        .zip(ps)
        .map(|(m, p)| CompareRow {
            time: m.time,
            mean_merged: m.value,
            se_merged: m.std_error,
            mean_plain: p.value,
            se_plain: p.std_error,
            var_ratio: if m.std_error > 0.0 {
                (p.std_error / m.std_error).powi(2)
            } else if p.std_error > 0.0 {
                f64::INFINITY
            } else {
                1.0
            },
        })
        .collect();
    Ok(MergeComparison { rows, merged, plain })
}

pub fn write_compare_csv<W: Write>(w: &mut W, rows: &[CompareRow]) -> std::io::Result<()> {
    writeln!(w, "time,mean_merged,se_merged,mean_plain,se_plain,var_ratio")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.time, r.mean_merged, r.se_merged, r.mean_plain, r.se_plain, r.var_ratio
        )?;
    }
    Ok(())
}
