//! Estimators of `∂_λ ∫ f dπ_λ` at `λ = 0`: ergodic and ensemble tangent
//! averages, the Green-Kubo correlation integral and common-noise finite
//! differences.

use std::fmt;
use std::io::Write;

use crate::dynamics::{
    initial_position, is_diverged, run_replica, InitialCondition, NoiseStream, SimConfig, Stepper,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::parallel;
use crate::potentials::Model;
use crate::stats::{trapezoid, CoMoment, RunningStats};

/// Scalar observable with its gradient.
pub trait Observable: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient_into(&self, x: &[f64], out: &mut [f64]);

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.gradient_into(x, &mut g);
        g
    }

    /// `∇f(x)·v`.
    fn directional(&self, x: &[f64], v: &[f64]) -> f64 {
        linalg::dot(&self.gradient(x), v)
    }
}

/// `f(x) = x_k`.
#[derive(Debug, Clone)]
pub struct Coordinate {
    pub axis: usize,
    name: String,
}

impl Coordinate {
    pub fn new(axis: usize) -> Self {
        Coordinate { axis, name: format!("x{}", axis + 1) }
    }
}

impl Observable for Coordinate {
    fn name(&self) -> &str {
        &self.name
    }
    fn value(&self, x: &[f64]) -> f64 {
        x[self.axis]
    }
    fn gradient_into(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        out[self.axis] = 1.0;
    }
    fn directional(&self, _x: &[f64], v: &[f64]) -> f64 {
        v[self.axis]
    }
}

/// `f(x) = 1/2 + atan(k·x_1)/π`, a smoothed indicator of `x_1 > 0`.
#[derive(Debug, Clone)]
pub struct SmoothedIndicator {
    pub sharpness: f64,
}

impl Default for SmoothedIndicator {
    fn default() -> Self {
        SmoothedIndicator { sharpness: 10.0 }
    }
}

impl SmoothedIndicator {
    fn derivative(&self, x1: f64) -> f64 {
        let k = self.sharpness;
        k / (std::f64::consts::PI * (1.0 + k * k * x1 * x1))
    }
}

impl Observable for SmoothedIndicator {
    fn name(&self) -> &str {
        "indicator"
    }
    fn value(&self, x: &[f64]) -> f64 {
        0.5 + (self.sharpness * x[0]).atan() / std::f64::consts::PI
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        out[0] = self.derivative(x[0]);
    }
    fn directional(&self, x: &[f64], v: &[f64]) -> f64 {
        self.derivative(x[0]) * v[0]
    }
}

#[derive(Debug, Clone)]
pub struct Constant(pub f64);

impl Observable for Constant {
    fn name(&self) -> &str {
        "constant"
    }
    fn value(&self, _x: &[f64]) -> f64 {
        self.0
    }
    fn gradient_into(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
    fn directional(&self, _x: &[f64], _v: &[f64]) -> f64 {
        0.0
    }
}

/// Empirical covariance of the two coordinates of a planar particle cloud:
/// `Φ = (1/N)Σ(a_i - ā)(b_i - b̄)` for particles `(a_i, b_i)`.
#[derive(Debug, Clone)]
pub struct ParticleCovariance {
    pub n_particles: usize,
}

impl ParticleCovariance {
    fn means(&self, x: &[f64]) -> (f64, f64) {
        let n = self.n_particles as f64;
        let (mut a, mut b) = (0.0, 0.0);
        for p in x.chunks_exact(2) {
            a += p[0];
            b += p[1];
        }
        (a / n, b / n)
    }
}

impl Observable for ParticleCovariance {
    fn name(&self) -> &str {
        "phi"
    }
    fn value(&self, x: &[f64]) -> f64 {
        let (ma, mb) = self.means(x);
        x.chunks_exact(2).map(|p| (p[0] - ma) * (p[1] - mb)).sum::<f64>() / self.n_particles as f64
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let (ma, mb) = self.means(x);
        let n = self.n_particles as f64;
        for (o, p) in out.chunks_exact_mut(2).zip(x.chunks_exact(2)) {
            o[0] = (p[1] - mb) / n;
            o[1] = (p[0] - ma) / n;
        }
    }
    fn directional(&self, x: &[f64], v: &[f64]) -> f64 {
        let (ma, mb) = self.means(x);
        let s: f64 = x
            .chunks_exact(2)
            .zip(v.chunks_exact(2))
            .map(|(p, t)| (p[1] - mb) * t[0] + (p[0] - ma) * t[1])
            .sum();
        s / self.n_particles as f64
    }
}

pub const OBSERVABLES: &[&str] = &["x1", "x2", "...", "indicator", "constant", "phi"];

/// Observable by CLI name, checked against the model dimension.
pub fn build_observable(name: &str, dim: usize) -> Result<Box<dyn Observable>> {
    match name {
        "indicator" => Ok(Box::new(SmoothedIndicator::default())),
        "constant" => Ok(Box::new(Constant(1.0))),
        "phi" if dim % 2 == 0 => Ok(Box::new(ParticleCovariance { n_particles: dim / 2 })),
        "phi" => Err(Error::usage("observable phi needs planar particles (even dimension)")),
        _ => {
            let axis = name
                .strip_prefix('x')
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k >= 1 && k <= dim)
                .ok_or_else(|| {
                    Error::usage(format!(
                        "unknown observable '{name}'; known: x1..x{dim}, indicator, constant, phi"
                    ))
                })?;
            Ok(Box::new(Coordinate::new(axis - 1)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub time: f64,
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorResult {
    pub estimator: String,
    pub value: f64,
    pub std_error: f64,
    pub n_effective: usize,
    pub n_diverged: usize,
    pub ci95: (f64, f64),
    pub series: Option<Vec<SeriesPoint>>,
    /// Green-Kubo only: contribution of the last quarter of the
    /// integration window.
    pub truncation_tail: Option<f64>,
}

impl EstimatorResult {
    pub fn new(estimator: &str, value: f64, std_error: f64, n_effective: usize, n_diverged: usize) -> Self {
        EstimatorResult {
            estimator: estimator.to_string(),
            value,
            std_error,
            n_effective,
            n_diverged,
            ci95: (value - 1.96 * std_error, value + 1.96 * std_error),
            series: None,
            truncation_tail: None,
        }
    }

    pub const SUMMARY_HEADER: &'static str =
        "estimator,value,std_error,ci_lo,ci_hi,n_replicas,n_diverged";

    pub fn summary_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.estimator,
            self.value,
            self.std_error,
            self.ci95.0,
            self.ci95.1,
            self.n_effective,
            self.n_diverged
        )
    }

    pub fn write_series_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "time,estimate,std_error")?;
        for p in self.series.iter().flatten() {
            writeln!(w, "{},{},{}", p.time, p.value, p.std_error)?;
        }
        Ok(())
    }

    /// Fraction of replicas lost to divergence.
    pub fn diverged_fraction(&self) -> f64 {
        let total = self.n_effective + self.n_diverged;
        if total == 0 {
            0.0
        } else {
            self.n_diverged as f64 / total as f64
        }
    }
}

/// Per-chunk accumulator that tracks diverged replicas and the first hard
/// error next to the estimator data.
#[derive(Debug)]
pub(crate) struct Tally<T> {
    pub data: T,
    pub diverged: usize,
    pub error: Option<Error>,
}

impl<T> Tally<T> {
    pub fn new(data: T) -> Self {
        Tally { data, diverged: 0, error: None }
    }

    pub fn record<V>(&mut self, outcome: Result<V>, add: impl FnOnce(&mut T, V)) {
        match outcome {
            Ok(v) => add(&mut self.data, v),
            Err(Error::Diverged { .. }) => self.diverged += 1,
            Err(e) => {
                self.error.get_or_insert(e);
            }
        }
    }

    pub fn absorb(&mut self, other: Tally<T>, merge: impl FnOnce(&mut T, T)) {
        self.diverged += other.diverged;
        if self.error.is_none() {
            self.error = other.error;
        }
        merge(&mut self.data, other.data);
    }

    pub fn finish(self, n_replicas: usize) -> Result<(T, usize)> {
        if let Some(e) = self.error {
            return Err(e);
        }
        if self.diverged >= n_replicas {
            return Err(Error::AllDiverged { n_replicas });
        }
        Ok((self.data, self.diverged))
    }
}

/// Fold over replicas into a [`Tally`], chunk-deterministically.
pub(crate) fn tally_replicas<T, Init, Run, Add, Merge, V>(
    config: &SimConfig,
    init: Init,
    run: Run,
    add: Add,
    merge: Merge,
) -> Result<(T, usize)>
where
    T: Send,
    Init: Fn() -> T + Sync + Send,
    Run: Fn(u64) -> Result<V> + Sync + Send,
    Add: Fn(&mut T, V) + Sync + Send,
    Merge: Fn(&mut T, T),
{
    let tally = parallel::fold_chunked(
        config.n_replicas,
        config.workers,
        || Tally::new(init()),
        |t, r| t.record(run(r), &add),
        |a, b| a.absorb(b, &merge),
    );
    tally.finish(config.n_replicas)
}

/// Fraction of the horizon discarded before time averages.
pub const DEFAULT_DISCARD_FRACTION: f64 = 0.5;

/// Index of the first record kept and the averaging window length.
fn averaging_window(config: &SimConfig, discard_fraction: f64) -> Result<(usize, f64)> {
    if !(0.0..1.0).contains(&discard_fraction) {
        return Err(Error::usage("discard_fraction must lie in [0, 1)"));
    }
    let intervals = config.n_steps() / config.record_stride;
    if intervals == 0 {
        return Err(Error::usage("time averages need t_final > 0"));
    }
    let k0 = ((discard_fraction * intervals as f64).floor() as usize).min(intervals - 1);
    let h = config.record_stride as f64 * config.dt;
    Ok((k0, (intervals - k0) as f64 * h))
}

fn window_average(values: &[f64], k0: usize, h: f64, window: f64) -> f64 {
    trapezoid(&values[k0..], h) / window
}

/// Per replica: time average of `∇f(X_s)·T_s` over the kept window;
/// aggregated over replicas.
pub fn ergodic_sensitivity(
    config: &SimConfig,
    model: &Model,
    obs: &dyn Observable,
    discard_fraction: f64,
) -> Result<EstimatorResult> {
    config.validate()?;
    let (k0, window) = averaging_window(config, discard_fraction)?;
    let h = config.record_stride as f64 * config.dt;
    let (stats, diverged) = tally_replicas(
        config,
        RunningStats::new,
        |r| {
            let mut hs = Vec::with_capacity(config.n_steps() / config.record_stride + 1);
            run_replica(config, model, r, |s| hs.push(obs.directional(&s.x, &s.tangent)))?;
            Ok(window_average(&hs, k0, h, window))
        },
        |s, v| s.push(v),
        |a, b| a.merge(&b),
    )?;
    Ok(EstimatorResult::new("ergodic", stats.mean(), stats.std_error(), stats.count() as usize, diverged))
}

/// Per-time replica means of `∇f(X_t)·T_t`.
pub fn ensemble_sensitivity(config: &SimConfig, model: &Model, obs: &dyn Observable) -> Result<EstimatorResult> {
    config.validate()?;
    let times = config.record_times();
    let k = times.len();
    let (stats, diverged) = tally_replicas(
        config,
        || vec![RunningStats::new(); k],
        |r| {
            let mut hs = Vec::with_capacity(k);
            run_replica(config, model, r, |s| hs.push(obs.directional(&s.x, &s.tangent)))?;
            Ok(hs)
        },
        |acc, hs| acc.iter_mut().zip(hs).for_each(|(s, v)| s.push(v)),
        |a, b| a.iter_mut().zip(&b).for_each(|(x, y)| x.merge(y)),
    )?;
    Ok(series_result("ensemble", &times, &stats, diverged))
}

pub(crate) fn series_result(name: &str, times: &[f64], stats: &[RunningStats], diverged: usize) -> EstimatorResult {
    let series: Vec<SeriesPoint> = times
        .iter()
        .zip(stats)
        .map(|(&time, s)| SeriesPoint { time, value: s.mean(), std_error: s.std_error() })
        .collect();
    let last = stats[stats.len() - 1];
    let mut res = EstimatorResult::new(name, last.mean(), last.std_error(), last.count() as usize, diverged);
    res.series = Some(series);
    res
}

#[derive(Debug, Clone)]
struct GreenKuboAcc {
    /// `(f(X_0), ∫_0^{t_trunc} g(X_s) ds)` per replica, in replica order.
    pairs: Vec<(f64, f64)>,
    /// Per record time `t`: co-moment of `f(X_0)` with `G_t = ∫_0^t g(X_s) ds`,
    /// and the spread of `G_t`.
    partial: Vec<(CoMoment, RunningStats)>,
}

/// Running trapezoid integrals `∫_0^{t_k}` of values on a uniform grid.
fn cumulative_trapezoid(values: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            acc += 0.5 * h * (values[i - 1] + v);
        }
        out.push(acc);
    }
    out
}

/// `∫_0^{t_trunc} Cov_{π₀}(f(X_0), g(X_s)) ds` with the conjugate
/// observable `g = ∇V·∂_λF - ∇·∂_λF`, from stationary replicas.
///
/// Replicas always start from equilibrium (independent burn-in of length
/// `config.burn_in`). With `centered = false` the product of means is not
/// subtracted. Series errors use the Gaussian fourth-moment approximation
/// `Var(fG) ≈ Var f·Var G + Cov(f,G)²`; the final value uses the exact
/// replica spread.
pub fn green_kubo_sensitivity(
    config: &SimConfig,
    model: &Model,
    obs: &dyn Observable,
    t_trunc: f64,
    centered: bool,
) -> Result<EstimatorResult> {
    config.validate()?;
    model.conjugate_observable(&model.potential.default_start())?;
    if !(t_trunc > 0.0) || t_trunc > config.t_final * (1.0 + 1e-12) {
        return Err(Error::usage(format!(
            "t_trunc={t_trunc} must lie in (0, t_final={}]",
            config.t_final
        )));
    }
    let stride = config.record_stride;
    let steps = ((t_trunc / config.dt + 1e-9).floor() as usize / stride) * stride;
    if steps == 0 {
        return Err(Error::usage("t_trunc is shorter than one recording stride"));
    }
    let cfg = SimConfig {
        t_final: steps as f64 * config.dt,
        initial_condition: InitialCondition::Equilibrium,
        burn_in: if config.burn_in > 0.0 { config.burn_in } else { 40.0 },
        ..config.clone()
    };
    let times = cfg.record_times();
    let k = times.len();
    let h = stride as f64 * cfg.dt;
    let (acc, diverged) = tally_replicas(
        &cfg,
        || GreenKuboAcc {
            pairs: Vec::new(),
            partial: vec![(CoMoment::default(), RunningStats::new()); k],
        },
        |r| {
            let mut x = initial_position(&cfg, model, r)?;
            let f0 = obs.value(&x);
            let mut gs = Vec::with_capacity(k);
            gs.push(model.conjugate_observable(&x)?);
            let mut noise = NoiseStream::new(cfg.master_seed, r);
            let mut stepper = Stepper::new(model);
            let mut dw = vec![0.0; model.dim()];
            for step in 1..=steps {
                noise.fill_increment(cfg.dt, &mut dw);
                stepper.step_position(&mut x, 0.0, cfg.dt, &dw);
                if is_diverged(&x) {
                    return Err(Error::Diverged { replica: r, time: step as f64 * cfg.dt });
                }
                if step % stride == 0 {
                    gs.push(model.conjugate_observable(&x)?);
                }
            }
            Ok((f0, cumulative_trapezoid(&gs, h)))
        },
        |acc, (f0, big_g): (f64, Vec<f64>)| {
            acc.pairs.push((f0, big_g[k - 1]));
            for ((c, s), &g) in acc.partial.iter_mut().zip(&big_g) {
                c.push(f0, g);
                s.push(g);
            }
        },
        |a, b| {
            a.pairs.extend(b.pairs);
            for ((c, s), (c2, s2)) in a.partial.iter_mut().zip(&b.partial) {
                c.merge(c2);
                s.merge(s2);
            }
        },
    )?;

    let n = acc.pairs.len();
    let fs: RunningStats = acc.pairs.iter().map(|p| p.0).collect();
    let gs: RunningStats = acc.pairs.iter().map(|p| p.1).collect();
    let z: RunningStats = if centered {
        acc.pairs.iter().map(|&(f, g)| (f - fs.mean()) * (g - gs.mean())).collect()
    } else {
        acc.pairs.iter().map(|&(f, g)| f * g).collect()
    };
    let value = if centered && n > 1 { z.mean() * n as f64 / (n - 1) as f64 } else { z.mean() };

    let mut series: Vec<SeriesPoint> = times
        .iter()
        .zip(&acc.partial)
        .map(|(&time, (c, s))| {
            let v = if centered { c.covariance() } else { c.raw_moment() };
            let se = ((fs.variance() * s.variance() + v * v) / n as f64).sqrt();
            SeriesPoint { time, value: v, std_error: se }
        })
        .collect();
    series[k - 1] = SeriesPoint { time: times[k - 1], value, std_error: z.std_error() };
    let quarter = (3 * (k - 1)) / 4;
    let tail = (series[k - 1].value - series[quarter].value).abs();
    let mut res = EstimatorResult::new("greenkubo", value, z.std_error(), n, diverged);
    res.series = Some(series);
    res.truncation_tail = Some(tail);
    Ok(res)
}

/// Per replica: `(⟨f⟩_{X^ε} - ⟨f⟩_{X^0})/ε` over the kept window, both
/// trajectories on one noise stream.
pub fn nemd_finite_difference(
    config: &SimConfig,
    model: &Model,
    obs: &dyn Observable,
    eps: f64,
    discard_fraction: f64,
) -> Result<EstimatorResult> {
    config.validate()?;
    if !(eps > 0.0 && eps <= 0.1) {
        return Err(Error::usage(format!("eps must lie in (0, 0.1], got {eps}")));
    }
    let (k0, window) = averaging_window(config, discard_fraction)?;
    let stride = config.record_stride;
    let h = stride as f64 * config.dt;
    let (stats, diverged) = tally_replicas(
        config,
        RunningStats::new,
        |r| {
            let mut base = initial_position(config, model, r)?;
            let mut pert = base.clone();
            let mut noise = NoiseStream::new(config.master_seed, r);
            let mut stepper = Stepper::new(model);
            let mut dw = vec![0.0; model.dim()];
            let kmax = config.n_steps() / stride + 1;
            let (mut f0, mut fe) = (Vec::with_capacity(kmax), Vec::with_capacity(kmax));
            f0.push(obs.value(&base));
            fe.push(obs.value(&pert));
            for step in 1..=config.n_steps() {
                noise.fill_increment(config.dt, &mut dw);
                stepper.step_position(&mut base, 0.0, config.dt, &dw);
                stepper.step_position(&mut pert, eps, config.dt, &dw);
                if is_diverged(&base) || is_diverged(&pert) {
                    return Err(Error::Diverged { replica: r, time: step as f64 * config.dt });
                }
                if step % stride == 0 {
                    f0.push(obs.value(&base));
                    fe.push(obs.value(&pert));
                }
            }
            let d: Vec<f64> = fe.iter().zip(&f0).map(|(a, b)| a - b).collect();
            Ok(window_average(&d, k0, h, window) / eps)
        },
        |s, v| s.push(v),
        |a, b| a.merge(&b),
    )?;
    Ok(EstimatorResult::new("nemd", stats.mean(), stats.std_error(), stats.count() as usize, diverged))
}

/// Component `axis` of `T_{t_final}` for every non-diverged replica, in
/// replica order, with the diverged count.
pub fn terminal_tangents(config: &SimConfig, model: &Model, axis: usize) -> Result<(Vec<f64>, usize)> {
    config.validate()?;
    if axis >= model.dim() {
        return Err(Error::usage("tangent component out of range"));
    }
    let n = config.n_steps();
    tally_replicas(
        config,
        Vec::new,
        |r| {
            let mut last = 0.0;
            run_replica(config, model, r, |s| {
                if s.time >= n as f64 * config.dt - 0.5 * config.dt {
                    last = s.tangent[axis];
                }
            })?;
            Ok(last)
        },
        |v, t| v.push(t),
        |a, b| a.extend(b),
    )
}

/// `n_replicas` approximate draws from `π₀`, each from its own burn-in
/// trajectory started at the model's default start. Diverged draws are
/// dropped.
pub fn equilibrium_sampler(config: &SimConfig, model: &Model) -> Result<Vec<Vec<f64>>> {
    if !(config.burn_in > 0.0) {
        return Err(Error::usage("equilibrium sampling needs burn_in > 0"));
    }
    let cfg = SimConfig { initial_condition: InitialCondition::Equilibrium, ..config.clone() };
    cfg.validate()?;
    let (draws, _) = tally_replicas(
        &cfg,
        Vec::new,
        |r| initial_position(&cfg, model, r),
        |v, x| v.push(x),
        |a, b| a.extend(b),
    )?;
    Ok(draws)
}
