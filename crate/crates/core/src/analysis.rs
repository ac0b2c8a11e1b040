//! Post-processing: empirical tail of `|T|`, log-log slope fits and
//! plateau detection on estimator series.

use std::io::Write;

use crate::dynamics::{simulate_coupled_pair, SimConfig};
use crate::error::{Error, Result};
use crate::estimators::{tally_replicas, SeriesPoint};
use crate::potentials::Model;
use crate::stats::RunningStats;

pub const MIN_TAIL_SAMPLES: usize = 1000;
/// Minimum exceedance count for a point to enter the default fit.
pub const MIN_EXCEEDANCES: usize = 50;
pub const MIN_FIT_POINTS: usize = 20;

/// Sorted magnitudes with the empirical survival function
/// `S(x) = #{|T_i| ≥ x}/N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfTail {
    pub sorted_magnitudes: Vec<f64>,
}

/// `#{v ≥ x}/N` for ascending `sorted`.
pub fn survival_at(sorted: &[f64], x: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let below = sorted.partition_point(|&v| v < x);
    (sorted.len() - below) as f64 / sorted.len() as f64
}

pub fn empirical_tail_cdf(samples: &[f64]) -> Result<CdfTail> {
    if samples.len() < MIN_TAIL_SAMPLES {
        return Err(Error::usage(format!(
            "tail analysis needs at least {MIN_TAIL_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::usage("tail samples must be finite"));
    }
    let mut sorted: Vec<f64> = samples.iter().map(|s| s.abs()).collect();
    sorted.sort_by(f64::total_cmp);
    Ok(CdfTail { sorted_magnitudes: sorted })
}

impl CdfTail {
    pub fn len(&self) -> usize {
        self.sorted_magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted_magnitudes.is_empty()
    }

    pub fn survival(&self, x: f64) -> f64 {
        survival_at(&self.sorted_magnitudes, x)
    }

    /// `(x, S(x))` at each distinct sample value, ascending.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let s = &self.sorted_magnitudes;
        let n = s.len() as f64;
        let mut out = Vec::new();
        let mut i = 0;
        while i < s.len() {
            out.push((s[i], (s.len() - i) as f64 / n));
            let v = s[i];
            while i < s.len() && s[i] == v {
                i += 1;
            }
        }
        out
    }

    /// `q`-quantile by the nearest-rank rule.
    pub fn quantile(&self, q: f64) -> f64 {
        let s = &self.sorted_magnitudes;
        let idx = ((q * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1;
        s[idx]
    }

    /// `[q_0.9, largest x with at least 50 exceedances]`.
    pub fn default_fit_range(&self) -> (f64, f64) {
        let s = &self.sorted_magnitudes;
        let hi = s[s.len().saturating_sub(MIN_EXCEEDANCES)];
        (self.quantile(0.9), hi)
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "x,survival")?;
        for (x, s) in self.points() {
            writeln!(w, "{x},{s}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailFit {
    pub slope: f64,
    pub slope_se: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub fit_range: (f64, f64),
    pub n_points: usize,
}

impl TailFit {
    /// Heuristic reading: the `α`-th moment is finite roughly when the
    /// slope is below `-α`.
    pub fn interpretation(&self) -> String {
        let s = self.slope;
        let moment = if s < -2.0 {
            "variance likely finite"
        } else if s < -1.0 {
            "mean likely finite, variance likely infinite"
        } else {
            "mean likely infinite"
        };
        format!("slope {s:.3} ± {:.3}: {moment} (heuristic)", self.slope_se)
    }
}

/// Least squares of `log S` on `log x` over the distinct sample points in
/// `range` (default: [`CdfTail::default_fit_range`]).
pub fn fit_log_slope(tail: &CdfTail, range: Option<(f64, f64)>) -> Result<TailFit> {
    let (lo, hi) = range.unwrap_or_else(|| tail.default_fit_range());
    let pts: Vec<(f64, f64)> = tail
        .points()
        .into_iter()
        .filter(|&(x, s)| x >= lo && x <= hi && x > 0.0 && s > 0.0)
        .map(|(x, s)| (x.ln(), s.ln()))
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::usage(format!(
            "fit range [{lo}, {hi}] holds {} distinct abscissae; need {MIN_FIT_POINTS}",
            pts.len()
        )));
    }
    let m = pts.len() as f64;
    let xs: RunningStats = pts.iter().map(|p| p.0).collect();
    let ys: RunningStats = pts.iter().map(|p| p.1).collect();
    let (mx, my) = (xs.mean(), ys.mean());
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::usage("fit range has no spread in x"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let slope_se = (ssr / (m - 2.0) / sxx).sqrt();
    let r_squared = if syy > 0.0 { 1.0 - ssr / syy } else { 1.0 };
    Ok(TailFit { slope, slope_se, intercept, r_squared, fit_range: (lo, hi), n_points: pts.len() })
}

/// Ordinary least squares `y ≈ a + b·x`; returns `(b, se(b), a)`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::usage("line fit needs at least three (x, y) pairs"));
    }
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::usage("line fit needs distinct abscissae"));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let ssr: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    Ok((b, (ssr / (m - 2.0) / sxx).sqrt(), a))
}

/// Mean over `config.n_replicas` noise realizations of `log|Y^x_t - Y^y_t|`
/// for the duplicated dynamics; returns the series and the diverged count.
pub fn pair_log_separation(
    x: &[f64],
    y: &[f64],
    config: &SimConfig,
    model: &Model,
) -> Result<(Vec<SeriesPoint>, usize)> {
    config.validate()?;
    let times = config.record_times();
    let k = times.len();
    let (stats, diverged) = tally_replicas(
        config,
        || vec![RunningStats::new(); k],
        |r| simulate_coupled_pair(x, y, config, model, r).map(|(_, sep)| sep),
        |acc, sep: Vec<f64>| acc.iter_mut().zip(&sep).for_each(|(s, d)| s.push(d.ln())),
        |a, b| a.iter_mut().zip(&b).for_each(|(u, v)| u.merge(v)),
    )?;
    let series = times
        .iter()
        .zip(&stats)
        .map(|(&time, s)| SeriesPoint { time, value: s.mean(), std_error: s.std_error() })
        .collect();
    Ok((series, diverged))
}

/// Slope of a series on `[t_lo, t_hi]` by least squares.
pub fn series_slope(series: &[SeriesPoint], t_lo: f64, t_hi: f64) -> Result<(f64, f64)> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = series
        .iter()
        .filter(|p| p.time >= t_lo - 1e-12 && p.time <= t_hi + 1e-12 && p.value.is_finite())
        .map(|p| (p.time, p.value))
        .unzip();
    let (b, se, _) = fit_line(&xs, &ys)?;
    Ok((b, se))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plateau {
    pub value: f64,
    pub onset_time: f64,
    pub onset_index: usize,
}

/// A plateau exists when the last third of the series spans at most
/// `rel_tol·|mean| + 2·max se`; its value is the window mean and its
/// onset the first time after which the series stays within that band.
pub fn plateau_detect(series: &[SeriesPoint], rel_tol: f64) -> Option<Plateau> {
    let n = series.len();
    if n < 10 {
        return None;
    }
    let window = &series[n - n / 3..];
    let mean = window.iter().map(|p| p.value).sum::<f64>() / window.len() as f64;
    let max = window.iter().map(|p| p.value).fold(f64::NEG_INFINITY, f64::max);
    let min = window.iter().map(|p| p.value).fold(f64::INFINITY, f64::min);
    let max_se = window.iter().map(|p| p.std_error).fold(0.0, f64::max);
    let band = rel_tol * mean.abs() + 2.0 * max_se;
    if !(max - min <= band) {
        return None;
    }
    let onset_index = series
        .iter()
        .rposition(|p| (p.value - mean).abs() > band)
        .map_or(0, |i| i + 1);
    Some(Plateau { value: mean, onset_time: series[onset_index].time, onset_index })
}
