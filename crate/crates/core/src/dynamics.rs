//! Time integration of the trajectory/tangent pair
//!
//! ```text
//! dX = -∇V(X) dt + √2 dW
//! dT = (∂_λF(X) - ∇²V(X) T) dt,   T_0 = 0
//! ```
//!
//! by explicit Euler–Maruyama, every coefficient frozen at the pre-step
//! position. The same convention drives the resolvent `R(s,t)`, the
//! perturbed trajectory used by finite differences and the duplicated
//! (coupled) dynamics.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::parallel;
use crate::potentials::Model;

/// Any coordinate beyond this magnitude marks the replica as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Stream purposes; the purpose occupies the top 16 bits of the ChaCha
/// stream id, the replica index the low 48.
const PURPOSE_DYNAMICS: u64 = 0;
const PURPOSE_INIT: u64 = 1;

/// Reproducible standard-Gaussian source for one replica.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    replica_index: u64,
    step_counter: u64,
}

impl NoiseStream {
    pub fn new(master_seed: u64, replica_index: u64) -> Self {
        Self::with_purpose(master_seed, replica_index, PURPOSE_DYNAMICS)
    }

    /// Independent stream for drawing initial conditions and burn-in.
    pub fn for_initialization(master_seed: u64, replica_index: u64) -> Self {
        Self::with_purpose(master_seed, replica_index, PURPOSE_INIT)
    }

    fn with_purpose(master_seed: u64, replica_index: u64, purpose: u64) -> Self {
        assert!(replica_index < 1 << 48, "replica index out of range");
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream((purpose << 48) | replica_index);
        NoiseStream { rng, replica_index, step_counter: 0 }
    }

    pub fn replica_index(&self) -> u64 {
        self.replica_index
    }

    pub fn step_counter(&self) -> u64 {
        self.step_counter
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Brownian increment `N(0, dt·I)` for one step.
    pub fn fill_increment(&mut self, dt: f64, out: &mut [f64]) {
        let s = dt.sqrt();
        for o in out.iter_mut() {
            *o = s * self.rng.sample::<f64, _>(StandardNormal);
        }
        self.step_counter += 1;
    }
}

/// How replicas pick `X_0`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// The model's default start (e.g. the bottom of the right well).
    Default,
    Point(Vec<f64>),
    Gaussian { mean: Vec<f64>, sd: f64 },
    /// Each replica runs its own burn-in of length `burn_in` from the
    /// default start on an independent stream.
    Equilibrium,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_final: f64,
    pub n_replicas: usize,
    pub master_seed: u64,
    pub burn_in: f64,
    pub record_stride: usize,
    pub initial_condition: InitialCondition,
    /// Worker threads; 0 means all available cores.
    pub workers: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            t_final: 10.0,
            n_replicas: 1000,
            master_seed: 0,
            burn_in: 40.0,
            record_stride: 10,
            initial_condition: InitialCondition::Default,
            workers: 0,
        }
    }
}

impl SimConfig {
    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::usage(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(Error::usage(format!("t_final must be ≥ 0, got {}", self.t_final)));
        }
        if self.t_final > 0.0 && self.dt > self.t_final {
            return Err(Error::usage("dt must not exceed t_final"));
        }
        let n = self.t_final / self.dt;
        if (n - n.round()).abs() > 1e-6 * n.max(1.0) {
            return Err(Error::usage(format!(
                "t_final={} is not a multiple of dt={}",
                self.t_final, self.dt
            )));
        }
        if self.n_replicas == 0 {
            return Err(Error::usage("n_replicas must be positive"));
        }
        if self.record_stride == 0 {
            return Err(Error::usage("record_stride must be positive"));
        }
        if self.n_steps() % self.record_stride != 0 {
            return Err(Error::usage(format!(
                "record_stride={} does not divide the {} steps",
                self.record_stride,
                self.n_steps()
            )));
        }
        if !(self.burn_in >= 0.0) {
            return Err(Error::usage("burn_in must be ≥ 0"));
        }
        if self.initial_condition == InitialCondition::Equilibrium && self.burn_in <= 0.0 {
            return Err(Error::usage("equilibrium start needs burn_in > 0"));
        }
        Ok(())
    }

    /// Recording times `0, s·dt, 2s·dt, …, t_final`.
    pub fn record_times(&self) -> Vec<f64> {
        let n = self.n_steps();
        (0..=n).step_by(self.record_stride).map(|k| k as f64 * self.dt).collect()
    }

    /// Largest stride that divides the step count and keeps at most
    /// `max_records + 1` records.
    pub fn stride_for(n_steps: usize, max_records: usize) -> usize {
        if n_steps == 0 {
            return 1;
        }
        let mut s = n_steps.div_ceil(max_records.max(1)).max(1);
        while n_steps % s != 0 {
            s += 1;
        }
        s
    }
}

/// `(X_t, T_t, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub x: Vec<f64>,
    pub tangent: Vec<f64>,
    pub time: f64,
}

impl ParticleState {
    pub fn at(x: Vec<f64>) -> Self {
        let d = x.len();
        ParticleState { x, tangent: vec![0.0; d], time: 0.0 }
    }

    pub fn is_diverged(&self) -> bool {
        is_diverged(&self.x) || is_diverged(&self.tangent)
    }
}

#[inline]
pub fn is_diverged(v: &[f64]) -> bool {
    v.iter().any(|c| !c.is_finite() || c.abs() > DIVERGENCE_THRESHOLD)
}

/// Reusable scratch for the frozen-coefficient Euler step.
#[derive(Debug)]
pub struct Stepper<'m> {
    model: &'m Model,
    grad: Vec<f64>,
    hv: Vec<f64>,
    dforce: Vec<f64>,
    incr: Vec<f64>,
}

impl<'m> Stepper<'m> {
    pub fn new(model: &'m Model) -> Self {
        let d = model.dim();
        Stepper {
            model,
            grad: vec![0.0; d],
            hv: vec![0.0; d],
            dforce: vec![0.0; d],
            incr: vec![0.0; d],
        }
    }

    /// Advances `(x, tangent)` in place by one step of size `dt`.
    pub fn step(&mut self, state: &mut ParticleState, dt: f64, dw: &[f64]) {
        let pot = self.model.potential.as_ref();
        pot.gradient_into(&state.x, &mut self.grad);
        pot.hessian_vec_into(&state.x, &state.tangent, &mut self.hv);
        self.model.perturbation.dforce_into(&state.x, &mut self.dforce);
        let s2 = std::f64::consts::SQRT_2;
        for i in 0..state.x.len() {
            state.x[i] += -self.grad[i] * dt + s2 * dw[i];
            state.tangent[i] += (self.dforce[i] - self.hv[i]) * dt;
        }
        state.time += dt;
    }

    /// Position-only step at parameter λ: `x += F_λ(x) dt + √2 dw`.
    pub fn step_position(&mut self, x: &mut [f64], lambda: f64, dt: f64, dw: &[f64]) {
        self.model.potential.gradient_into(x, &mut self.grad);
        if lambda != 0.0 {
            self.model.perturbation.increment_into(x, lambda, &mut self.incr);
        } else {
            self.incr.iter_mut().for_each(|v| *v = 0.0);
        }
        let s2 = std::f64::consts::SQRT_2;
        for i in 0..x.len() {
            x[i] += (self.incr[i] - self.grad[i]) * dt + s2 * dw[i];
        }
    }
}

/// One explicit Euler step of the extended system.
pub fn step_euler(state: &ParticleState, model: &Model, dt: f64, dw: &[f64]) -> Result<ParticleState> {
    if state.x.len() != model.dim() || dw.len() != model.dim() || state.tangent.len() != model.dim()
    {
        return Err(Error::usage("step_euler: dimension mismatch"));
    }
    let mut next = state.clone();
    Stepper::new(model).step(&mut next, dt, dw);
    if next.is_diverged() {
        return Err(Error::Diverged { replica: 0, time: next.time });
    }
    Ok(next)
}

/// `X_0` for replica `replica` under `config.initial_condition`.
pub fn initial_position(config: &SimConfig, model: &Model, replica: u64) -> Result<Vec<f64>> {
    let d = model.dim();
    match &config.initial_condition {
        InitialCondition::Default => Ok(model.potential.default_start()),
        InitialCondition::Point(x0) => {
            if x0.len() != d {
                return Err(Error::usage(format!("initial point has dimension {}, model {d}", x0.len())));
            }
            Ok(x0.clone())
        }
        InitialCondition::Gaussian { mean, sd } => {
            if mean.len() != d {
                return Err(Error::usage("gaussian mean has the wrong dimension"));
            }
            let mut noise = NoiseStream::for_initialization(config.master_seed, replica);
            Ok(mean.iter().map(|m| m + sd * noise.standard_normal()).collect())
        }
        InitialCondition::Equilibrium => burn_in(config, model, replica),
    }
}

fn burn_in(config: &SimConfig, model: &Model, replica: u64) -> Result<Vec<f64>> {
    let mut x = model.potential.default_start();
    let mut noise = NoiseStream::for_initialization(config.master_seed, replica);
    let mut stepper = Stepper::new(model);
    let mut dw = vec![0.0; x.len()];
    let n = (config.burn_in / config.dt).round() as usize;
    for k in 0..n {
        noise.fill_increment(config.dt, &mut dw);
        stepper.step_position(&mut x, 0.0, config.dt, &dw);
        if is_diverged(&x) {
            return Err(Error::Diverged { replica, time: (k + 1) as f64 * config.dt });
        }
    }
    Ok(x)
}

/// Recorded observer values of one replica; `values[o][k]` is observer `o`
/// at `times[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaRecord {
    pub replica: u64,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

pub type StateObserver<'a> = &'a (dyn Fn(&ParticleState) -> f64 + Sync);

/// Runs one replica of the extended system, calling `visit` on every
/// recorded state (including `t = 0` and `t_final`).
pub fn run_replica<F>(config: &SimConfig, model: &Model, replica: u64, mut visit: F) -> Result<()>
where
    F: FnMut(&ParticleState),
{
    let x0 = initial_position(config, model, replica)?;
    let mut state = ParticleState::at(x0);
    let mut noise = NoiseStream::new(config.master_seed, replica);
    let mut stepper = Stepper::new(model);
    let mut dw = vec![0.0; model.dim()];
    visit(&state);
    let n = config.n_steps();
    for k in 1..=n {
        noise.fill_increment(config.dt, &mut dw);
        stepper.step(&mut state, config.dt, &dw);
        state.time = k as f64 * config.dt;
        if state.is_diverged() {
            return Err(Error::Diverged { replica, time: state.time });
        }
        if k % config.record_stride == 0 {
            visit(&state);
        }
    }
    Ok(())
}

pub fn simulate_replica(
    config: &SimConfig,
    model: &Model,
    replica: u64,
    observers: &[StateObserver<'_>],
) -> Result<ReplicaRecord> {
    config.validate()?;
    let mut times = Vec::new();
    let mut values = vec![Vec::new(); observers.len()];
    run_replica(config, model, replica, |s| {
        times.push(s.time);
        for (o, obs) in observers.iter().enumerate() {
            values[o].push(obs(s));
        }
    })?;
    Ok(ReplicaRecord { replica, times, values })
}

/// All replicas of an ensemble; diverged replicas are returned as errors
/// in their slot.
pub fn simulate_ensemble(
    config: &SimConfig,
    model: &Model,
    observers: &[StateObserver<'_>],
) -> Result<Vec<Result<ReplicaRecord>>> {
    config.validate()?;
    Ok(parallel::map_indexed(config.n_replicas, config.workers, |r| {
        simulate_replica(config, model, r, observers)
    }))
}

/// Recorded states of one replica, for trajectory dumps.
pub fn record_states(config: &SimConfig, model: &Model, replica: u64) -> Result<Vec<ParticleState>> {
    config.validate()?;
    let mut out = Vec::new();
    run_replica(config, model, replica, |s| out.push(s.clone()))?;
    Ok(out)
}

/// CSV `time,replica,x_0..x_{d-1},t_0..t_{d-1}`.
pub fn write_trajectory_csv<W: Write>(
    w: &mut W,
    dim: usize,
    replicas: &[(u64, Vec<ParticleState>)],
) -> std::io::Result<()> {
    let mut header = vec!["time".to_string(), "replica".to_string()];
    header.extend((0..dim).map(|i| format!("x_{i}")));
    header.extend((0..dim).map(|i| format!("t_{i}")));
    writeln!(w, "{}", header.join(","))?;
    for (r, states) in replicas {
        for s in states {
            let mut row = vec![s.time.to_string(), r.to_string()];
            row.extend(s.x.iter().map(|v| v.to_string()));
            row.extend(s.tangent.iter().map(|v| v.to_string()));
            writeln!(w, "{}", row.join(","))?;
        }
    }
    Ok(())
}

/// Fundamental matrix `R(s, t)` of `dR/dt = -∇²V(X_t) R`, `R(s,s) = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolventAccumulator {
    pub matrix: Matrix,
    pub s_anchor: f64,
    pub time: f64,
}

impl ResolventAccumulator {
    pub fn new(dim: usize, s_anchor: f64) -> Self {
        ResolventAccumulator { matrix: Matrix::identity(dim), s_anchor, time: s_anchor }
    }
}

/// `R' = R - ∇²V(X_t)·R·dt`.
pub fn propagate_resolvent(
    acc: &ResolventAccumulator,
    hessian_at_x: &Matrix,
    dt: f64,
) -> Result<ResolventAccumulator> {
    let hr = hessian_at_x.matmul(&acc.matrix);
    let mut matrix = acc.matrix.clone();
    for (m, h) in matrix.as_mut_slice().iter_mut().zip(hr.as_slice()) {
        *m -= h * dt;
    }
    if !matrix.is_finite() {
        return Err(Error::numeric(format!("resolvent became non-finite at t={}", acc.time + dt)));
    }
    Ok(ResolventAccumulator { matrix, s_anchor: acc.s_anchor, time: acc.time + dt })
}

/// A single trajectory stored at every step, with Hessians and the
/// directly integrated tangent.
#[derive(Debug, Clone)]
pub struct StoredTrajectory {
    pub dt: f64,
    pub stride: usize,
    pub positions: Vec<Vec<f64>>,
    pub hessians: Vec<Matrix>,
    pub tangents: Vec<Vec<f64>>,
    pub dforces: Vec<Vec<f64>>,
}

impl StoredTrajectory {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// `R(s_idx·dt, t_idx·dt)` by stepwise propagation.
    pub fn resolvent(&self, s_idx: usize, t_idx: usize) -> Result<Matrix> {
        if s_idx > t_idx || t_idx >= self.len() {
            return Err(Error::usage(format!("resolvent needs s ≤ t within the trajectory ({s_idx}, {t_idx})")));
        }
        let d = self.positions[0].len();
        let mut acc = ResolventAccumulator::new(d, s_idx as f64 * self.dt);
        for k in s_idx..t_idx {
            acc = propagate_resolvent(&acc, &self.hessians[k], self.dt)?;
        }
        Ok(acc.matrix)
    }
}

/// Runs one full-resolution replica from `x0` for `n_steps` steps.
pub fn record_trajectory(
    model: &Model,
    x0: &[f64],
    dt: f64,
    n_steps: usize,
    noise: &mut NoiseStream,
) -> Result<StoredTrajectory> {
    let d = model.dim();
    let mut state = ParticleState::at(x0.to_vec());
    let mut stepper = Stepper::new(model);
    let mut dw = vec![0.0; d];
    let mut traj = StoredTrajectory {
        dt,
        stride: 1,
        positions: Vec::with_capacity(n_steps + 1),
        hessians: Vec::with_capacity(n_steps + 1),
        tangents: Vec::with_capacity(n_steps + 1),
        dforces: Vec::with_capacity(n_steps + 1),
    };
    let push = |traj: &mut StoredTrajectory, s: &ParticleState| {
        traj.positions.push(s.x.clone());
        traj.hessians.push(model.potential.hessian(&s.x));
        traj.tangents.push(s.tangent.clone());
        traj.dforces.push(model.dforce(&s.x));
    };
    push(&mut traj, &state);
    for k in 1..=n_steps {
        noise.fill_increment(dt, &mut dw);
        stepper.step(&mut state, dt, &dw);
        state.time = k as f64 * dt;
        if state.is_diverged() {
            return Err(Error::Diverged { replica: noise.replica_index(), time: state.time });
        }
        push(&mut traj, &state);
    }
    Ok(traj)
}

/// `T_t = Σ_s R(s,t)·∂_λF(X_s)·dt` evaluated with explicit resolvent
/// matrices, accumulated backward from `t`. Independent of the direct
/// tangent recursion up to O(dt).
pub fn tangent_via_resolvent(traj: &StoredTrajectory, t_idx: usize) -> Result<Vec<f64>> {
    if traj.stride != 1 {
        return Err(Error::usage("tangent_via_resolvent needs a trajectory recorded at every step"));
    }
    if t_idx >= traj.len() {
        return Err(Error::usage("t index beyond the trajectory"));
    }
    let d = traj.positions[0].len();
    let mut r = Matrix::identity(d);
    let mut tangent = vec![0.0; d];
    let mut a = Matrix::identity(d);
    for k in (0..t_idx).rev() {
        // R(k, t) = R(k+1, t)·(I - H_k dt)
        for i in 0..d {
            for j in 0..d {
                let id = if i == j { 1.0 } else { 0.0 };
                a.set(i, j, id - traj.hessians[k].get(i, j) * traj.dt);
            }
        }
        r = r.matmul(&a);
        let contrib = r.mul_vec(&traj.dforces[k]);
        for (t, c) in tangent.iter_mut().zip(&contrib) {
            *t += c * traj.dt;
        }
    }
    Ok(tangent)
}

/// Divided difference `(X^ε_t - X^0_t)/ε` next to the tangent `T_t`,
/// both at the recording times.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub times: Vec<f64>,
    pub divided_difference: Vec<Vec<f64>>,
    pub tangent: Vec<Vec<f64>>,
    /// `f(X^0)` and `f(X^ε)` when an observable was supplied.
    pub observed: Option<(Vec<f64>, Vec<f64>)>,
}

/// Runs `X^0` (with its tangent) and `X^ε` on one shared noise stream.
pub fn simulate_perturbed_pair(
    config: &SimConfig,
    model: &Model,
    eps: f64,
    replica: u64,
    observable: Option<&(dyn Fn(&[f64]) -> f64 + Sync)>,
) -> Result<PairRecord> {
    config.validate()?;
    if !(eps > 0.0 && eps <= 0.1) {
        return Err(Error::usage(format!("eps must lie in (0, 0.1], got {eps}")));
    }
    let x0 = initial_position(config, model, replica)?;
    let mut base = ParticleState::at(x0.clone());
    let mut pert = x0;
    let mut noise = NoiseStream::new(config.master_seed, replica);
    let mut stepper = Stepper::new(model);
    let mut dw = vec![0.0; model.dim()];
    let mut rec = PairRecord {
        times: Vec::new(),
        divided_difference: Vec::new(),
        tangent: Vec::new(),
        observed: observable.map(|_| (Vec::new(), Vec::new())),
    };
    let record = |rec: &mut PairRecord, base: &ParticleState, pert: &[f64]| {
        rec.times.push(base.time);
        rec.divided_difference
            .push(pert.iter().zip(&base.x).map(|(p, b)| (p - b) / eps).collect());
        rec.tangent.push(base.tangent.clone());
        if let (Some(f), Some((f0, fe))) = (observable, rec.observed.as_mut()) {
            f0.push(f(&base.x));
            fe.push(f(pert));
        }
    };
    record(&mut rec, &base, &pert);
    for k in 1..=config.n_steps() {
        noise.fill_increment(config.dt, &mut dw);
        stepper.step_position(&mut pert, eps, config.dt, &dw);
        stepper.step(&mut base, config.dt, &dw);
        base.time = k as f64 * config.dt;
        if base.is_diverged() || is_diverged(&pert) {
            return Err(Error::Diverged { replica, time: base.time });
        }
        if k % config.record_stride == 0 {
            record(&mut rec, &base, &pert);
        }
    }
    Ok(rec)
}

/// Duplicated dynamics from `x` and `y` on one noise stream; returns
/// `(times, |Y^x_t - Y^y_t|)`.
pub fn simulate_coupled_pair(
    x: &[f64],
    y: &[f64],
    config: &SimConfig,
    model: &Model,
    replica: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    config.validate()?;
    if x.len() != model.dim() || y.len() != model.dim() {
        return Err(Error::usage("coupled pair: start points have the wrong dimension"));
    }
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    let mut noise = NoiseStream::new(config.master_seed, replica);
    let mut stepper = Stepper::new(model);
    let mut dw = vec![0.0; model.dim()];
    let sep = |a: &[f64], b: &[f64]| {
        a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
    };
    let mut times = vec![0.0];
    let mut separation = vec![sep(&a, &b)];
    for k in 1..=config.n_steps() {
        noise.fill_increment(config.dt, &mut dw);
        stepper.step_position(&mut a, 0.0, config.dt, &dw);
        stepper.step_position(&mut b, 0.0, config.dt, &dw);
        if is_diverged(&a) || is_diverged(&b) {
            return Err(Error::Diverged { replica, time: k as f64 * config.dt });
        }
        if k % config.record_stride == 0 {
            times.push(k as f64 * config.dt);
            separation.push(sep(&a, &b));
        }
    }
    Ok((times, separation))
}

/// `‖R(s,t)‖` against `exp(-∫_s^t min Spec ∇²V(X_u) du)` (left-point sum),
/// returned as `(norm, bound)`.
pub fn resolvent_norm_and_bound(traj: &StoredTrajectory, s_idx: usize, t_idx: usize) -> Result<(f64, f64)> {
    let r = traj.resolvent(s_idx, t_idx)?;
    let mut integral = 0.0;
    for k in s_idx..t_idx {
        integral += linalg::min_spec(&traj.hessians[k])? * traj.dt;
    }
    Ok((r.operator_norm(), (-integral).exp()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{build_model, select_perturbation};
    use approx::assert_relative_eq;
    use std::collections::BTreeMap;

    fn ou() -> Model {
        build_model("ou", &BTreeMap::new()).unwrap()
    }

    #[test]
    fn driftless_step_is_pure_noise() {
        let m = select_perturbation(
            build_model("quartic_tensor", &[("d".to_string(), 1.0)].into()).unwrap(),
            "null",
        )
        .unwrap();
        let s = ParticleState::at(vec![0.0]);
        let next = step_euler(&s, &m, 0.01, &[0.3]).unwrap();
        assert_eq!(next.x, vec![std::f64::consts::SQRT_2 * 0.3]);
        assert_eq!(next.tangent, vec![0.0]);
    }

    #[test]
    fn ou_single_tangent_step() {
        let s = ParticleState::at(vec![0.0]);
        let next = step_euler(&s, &ou(), 0.1, &[0.0]).unwrap();
        assert_relative_eq!(next.tangent[0], 0.1, epsilon = 1e-15);
        assert_relative_eq!(next.time, 0.1);
    }

    #[test]
    fn ou_noiseless_tangent_closed_form() {
        let m = ou();
        let mut s = ParticleState::at(vec![0.0]);
        for _ in 0..10_000 {
            s = step_euler(&s, &m, 1e-4, &[0.0]).unwrap();
        }
        assert!((s.tangent[0] - (1.0 - (-1.0f64).exp())).abs() < 1e-3);
    }

    #[test]
    fn zero_horizon_records_initial_state() {
        let cfg = SimConfig {
            t_final: 0.0,
            record_stride: 1,
            initial_condition: InitialCondition::Point(vec![2.5]),
            ..SimConfig::default()
        };
        let obs = |s: &ParticleState| s.x[0];
        let rec = simulate_replica(&cfg, &ou(), 0, &[&obs]).unwrap();
        assert_eq!(rec.times, vec![0.0]);
        assert_eq!(rec.values, vec![vec![2.5]]);
    }

    #[test]
    fn noise_streams_replay_and_differ() {
        let mut a = NoiseStream::new(7, 3);
        let mut b = NoiseStream::new(7, 3);
        let mut c = NoiseStream::new(7, 4);
        let (mut va, mut vb, mut vc) = ([0.0; 5], [0.0; 5], [0.0; 5]);
        a.fill_increment(1.0, &mut va);
        b.fill_increment(1.0, &mut vb);
        c.fill_increment(1.0, &mut vc);
        assert_eq!(va, vb);
        assert_ne!(va, vc);
        assert_eq!(a.step_counter(), 1);
    }

    #[test]
    fn config_validation() {
        let bad = SimConfig { record_stride: 3, t_final: 1.0, dt: 0.1, ..SimConfig::default() };
        assert!(bad.validate().is_err());
        let bad = SimConfig { dt: 2.0, t_final: 1.0, ..SimConfig::default() };
        assert!(bad.validate().is_err());
        assert_eq!(SimConfig::stride_for(10_000, 1000), 10);
        assert_eq!(SimConfig::stride_for(30, 7), 5);
    }

    #[test]
    fn resolvent_starts_at_identity() {
        let acc = ResolventAccumulator::new(3, 1.5);
        assert_eq!(acc.matrix, Matrix::identity(3));
        let traj = record_trajectory(&ou(), &[0.0], 0.01, 10, &mut NoiseStream::new(0, 0)).unwrap();
        assert_eq!(traj.resolvent(4, 4).unwrap(), Matrix::identity(1));
    }

    #[test]
    fn null_perturbation_resolvent_tangent_is_zero() {
        let m = select_perturbation(ou(), "null").unwrap();
        let traj = record_trajectory(&m, &[1.0], 0.01, 100, &mut NoiseStream::new(0, 0)).unwrap();
        assert_eq!(tangent_via_resolvent(&traj, 100).unwrap(), vec![0.0]);
    }

    #[test]
    fn strided_trajectory_rejected() {
        let mut traj = record_trajectory(&ou(), &[1.0], 0.01, 10, &mut NoiseStream::new(0, 0)).unwrap();
        traj.stride = 2;
        assert!(matches!(tangent_via_resolvent(&traj, 10), Err(Error::Usage(_))));
    }

    #[test]
    fn identical_starts_never_separate() {
        let m = build_model("mexican_hat", &BTreeMap::new()).unwrap();
        let cfg = SimConfig { t_final: 1.0, dt: 1e-3, record_stride: 10, ..SimConfig::default() };
        let (_, sep) = simulate_coupled_pair(&[0.3, 0.1], &[0.3, 0.1], &cfg, &m, 0).unwrap();
        assert!(sep.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn trajectory_csv_header() {
        let cfg = SimConfig { t_final: 0.002, dt: 1e-3, record_stride: 1, ..SimConfig::default() };
        let m = build_model("mexican_hat", &BTreeMap::new()).unwrap();
        let states = record_states(&cfg, &m, 0).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, 2, &[(0, states)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "time,replica,x_0,x_1,t_0,t_1");
        assert_eq!(lines.count(), 3);
    }
}
