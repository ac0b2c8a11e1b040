//! One-dimensional checks of the sufficient conditions for bounded tangent
//! moments: Poincaré constant of `e^{-V}`, the ρ criterion, the decay rate
//! β, and the combined assumption report.
//!
//! The Poincaré constant is the spectral gap of `L = ∂² - V'∂`, computed on
//! the unitarily equivalent symmetric operator `e^{-V/2} L e^{V/2}`
//! discretized by a three-point stencil with Dirichlet ends.

use crate::error::{Error, Result};
use crate::linalg::{self, SymTridiagonal, ThomasSolver};
use crate::potentials::{Model, Potential};
use crate::quadrature::GibbsQuadrature;

/// Uniform grid `{i·dx : -N ≤ i ≤ N}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralGrid {
    pub dx: f64,
    pub n_half: usize,
}

impl SpectralGrid {
    pub fn covering(halfwidth: f64, dx: f64) -> Self {
        SpectralGrid { dx, n_half: (halfwidth / dx).ceil() as usize }
    }

    pub fn len(&self) -> usize {
        2 * self.n_half + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn halfwidth(&self) -> f64 {
        self.n_half as f64 * self.dx
    }

    pub fn point(&self, k: usize) -> f64 {
        (k as f64 - self.n_half as f64) * self.dx
    }

    /// `e^{-V}` at both ends must be below `1e-16` of its maximum.
    pub fn validate(&self, potential: &dyn Potential) -> Result<()> {
        if !(self.dx > 0.0) || self.n_half == 0 {
            return Err(Error::usage("spectral grid needs dx > 0 and N ≥ 1"));
        }
        let l = self.halfwidth();
        let v_min = crate::quadrature::scan_min(|x| potential.value(&[x]), l);
        let gap = 16.0 * std::f64::consts::LN_10;
        for end in [-l, l] {
            if potential.value(&[end]) - v_min < gap {
                return Err(Error::usage(format!(
                    "grid half-width {l} too small: e^-V at {end} is not below 1e-16 of its maximum"
                )));
            }
        }
        Ok(())
    }
}

/// Tridiagonal discretization of `e^{V/2} ∂(e^{-V} ∂(e^{V/2} ·))`.
pub fn build_operator_matrix(potential: &dyn Potential, grid: &SpectralGrid) -> Result<SymTridiagonal> {
    if potential.dim() != 1 {
        return Err(Error::usage("operator matrix needs a one-dimensional potential"));
    }
    let n = grid.len();
    let dx = grid.dx;
    let inv = 1.0 / (dx * dx);
    let v = |x: f64| potential.value(&[x]);
    let mut diag = Vec::with_capacity(n);
    let mut off = Vec::with_capacity(n.saturating_sub(1));
    for k in 0..n {
        let x = grid.point(k);
        let vi = v(x);
        diag.push(-inv * ((vi - v(x + 0.5 * dx)).exp() + (vi - v(x - 0.5 * dx)).exp()));
        if k + 1 < n {
            off.push(inv * (0.5 * vi + 0.5 * v(x + dx) - v(x + 0.5 * dx)).exp());
        }
    }
    if diag.iter().chain(&off).any(|e| !e.is_finite()) {
        return Err(Error::numeric(
            "overflow in operator matrix exponentials; use a smaller domain",
        ));
    }
    SymTridiagonal::new(diag, off)
}

/// Shift keeping `-M + σI` nonsingular at the (near) zero mode.
const ZERO_MODE_SHIFT: f64 = 1e-12;

/// The two eigenpairs of `M` closest to zero, by inverse power iteration
/// with deflation against the first.
#[derive(Debug, Clone)]
pub struct LowestModes {
    pub first_value: f64,
    pub first_vector: Vec<f64>,
    pub second_value: f64,
    pub iterations: (usize, usize),
}

pub fn lowest_modes(m: &SymTridiagonal) -> Result<LowestModes> {
    let n = m.len();
    let neg = m.affine(-1.0, 0.0);
    let solver = ThomasSolver::new(&m.affine(-1.0, ZERO_MODE_SHIFT))?;
    let mut first: Vec<f64> = vec![1.0; n];
    let (first_value, it1) = inverse_power(&neg, &solver, &mut first, &[])?;
    let mut second: Vec<f64> = (0..n)
        .map(|i| {
            let t = 2.0 * i as f64 / (n - 1).max(1) as f64 - 1.0;
            t + 0.1 * (3.0 * t).cos()
        })
        .collect();
    let (second_value, it2) = inverse_power(&neg, &solver, &mut second, &[&first])?;
    Ok(LowestModes {
        first_value: -first_value,
        first_vector: first,
        second_value: -second_value,
        iterations: (it1, it2),
    })
}

fn project_out(v: &mut [f64], basis: &[&Vec<f64>]) {
    for b in basis {
        let c = linalg::dot(v, b);
        for (vi, bi) in v.iter_mut().zip(b.iter()) {
            *vi -= c * bi;
        }
    }
}

/// Smallest eigenvalue of `a` (positive semidefinite) orthogonal to `basis`.
fn inverse_power(
    a: &SymTridiagonal,
    solver: &ThomasSolver,
    v: &mut Vec<f64>,
    basis: &[&Vec<f64>],
) -> Result<(f64, usize)> {
    const MAX_ITER: usize = 200_000;
    let n = v.len();
    project_out(v, basis);
    linalg::normalize(v);
    let mut w = vec![0.0; n];
    let mut av = vec![0.0; n];
    let mut prev = f64::INFINITY;
    let mut last = f64::INFINITY;
    for it in 1..=MAX_ITER {
        solver.solve_into(v, &mut w);
        project_out(&mut w, basis);
        if linalg::normalize(&mut w) == 0.0 {
            return Err(Error::numeric("inverse power iteration collapsed to zero"));
        }
        std::mem::swap(v, &mut w);
        a.mul_vec_into(v, &mut av);
        let rq = linalg::dot(v, &av);
        if (rq - last).abs() <= 1e-12 * rq.abs() + 1e-11 {
            return Ok((rq, it));
        }
        prev = last;
        last = rq;
    }
    Err(Error::numeric(format!(
        "inverse power iteration did not converge (last estimates {prev}, {last})"
    )))
}

/// Grid-refined Poincaré constant.
#[derive(Debug, Clone)]
pub struct PoincareEstimate {
    pub eta: f64,
    /// `(dx, N, η)` for every grid tried.
    pub history: Vec<(f64, usize, f64)>,
}

pub const DEFAULT_DX: f64 = 0.01;
pub const DEFAULT_REFINEMENT_TOL: f64 = 1e-3;
pub const MAX_REFINEMENTS: usize = 4;

/// `η = -(second eigenvalue of M)`, refining `dx → dx/2`, `N → 2N` until
/// successive estimates agree to `tol` relative.
pub fn poincare_constant(potential: &dyn Potential, halfwidth: f64, tol: f64) -> Result<PoincareEstimate> {
    let mut grid = SpectralGrid::covering(halfwidth, DEFAULT_DX);
    grid.validate(potential)?;
    let mut history = Vec::new();
    for _ in 0..=MAX_REFINEMENTS {
        let m = build_operator_matrix(potential, &grid)?;
        let modes = lowest_modes(&m)?;
        let eta = -modes.second_value;
        history.push((grid.dx, grid.n_half, eta));
        if let [.., (_, _, a), (_, _, b)] = history.as_slice() {
            if (a - b).abs() <= tol * b.abs() {
                return Ok(PoincareEstimate { eta, history });
            }
        }
        grid = SpectralGrid { dx: grid.dx / 2.0, n_half: grid.n_half * 2 };
    }
    let k = history.len();
    Err(Error::numeric(format!(
        "Poincaré estimate not converged after {MAX_REFINEMENTS} refinements: {} then {}",
        history[k - 2].2,
        history[k - 1].2
    )))
}

/// `φ = min Spec ∇²V` of a one-dimensional potential.
fn curvature(potential: &dyn Potential, x: f64) -> f64 {
    potential.hessian(&[x]).get(0, 0)
}

/// Infimum of `g` over `[-l, l]`: scan, then golden-section refinement
/// around the best scan point.
pub fn minimize_1d<G: Fn(f64) -> f64>(g: G, l: f64) -> f64 {
    const SCAN: usize = 2000;
    let h = 2.0 * l / SCAN as f64;
    let (mut best_x, mut best) = (-l, g(-l));
    for i in 1..=SCAN {
        let x = -l + i as f64 * h;
        let v = g(x);
        if v < best {
            best = v;
            best_x = x;
        }
    }
    let (mut a, mut b) = ((best_x - h).max(-l), (best_x + h).min(l));
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (g(c), g(d));
    while b - a > 1e-12 * l.max(1.0) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = g(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = g(d);
        }
    }
    best.min(fc).min(fd).min(g(0.5 * (a + b)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhoStatus {
    Defined,
    /// `inf φ > 0`: the potential is uniformly convex, nothing to check.
    ConvexVacuous,
    /// `∫ φ dπ₀ ≤ 0`.
    ConvViolated,
}

/// Moments of `φ = scale·min Spec ∇²V` under `π₀` and the resulting ρ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureMoments {
    pub inf_phi: f64,
    pub mean: f64,
    pub second_moment: f64,
    pub variance: f64,
    pub rho: f64,
    pub status: RhoStatus,
}

pub fn curvature_moments(potential: &dyn Potential, halfwidth: f64, scale: f64) -> Result<CurvatureMoments> {
    let quad = GibbsQuadrature::new(potential, halfwidth, 1e-10)?;
    let phi = |x: f64| scale * curvature(potential, x);
    let inf_phi = minimize_1d(phi, halfwidth);
    let mean = quad.expectation(phi)?;
    let second_moment = quad.expectation(|x| phi(x).powi(2))?;
    let variance = quad.expectation(|x| (phi(x) - mean).powi(2))?.max(0.0);
    let (rho, status) = if inf_phi > 0.0 {
        (0.0, RhoStatus::ConvexVacuous)
    } else if mean <= 0.0 {
        (f64::INFINITY, RhoStatus::ConvViolated)
    } else {
        (-inf_phi * second_moment / (mean * mean), RhoStatus::Defined)
    };
    Ok(CurvatureMoments { inf_phi, mean, second_moment, variance, rho, status })
}

/// `ρ = -(inf φ)·∫φ²dπ₀/(∫φ dπ₀)²` with `φ = min Spec ∇²V`.
pub fn rho_criterion(model: &Model) -> Result<CurvatureMoments> {
    let m = curvature_moments(model.potential.as_ref(), model.domain_halfwidth(), 1.0)?;
    if m.status == RhoStatus::ConvViolated {
        return Err(Error::numeric(format!(
            "Conv violated: ∫ min Spec ∇²V dπ₀ = {} ≤ 0, ρ undefined",
            m.mean
        )));
    }
    Ok(m)
}

/// Exponential decay rate of `∫u²e^{-V}` for the Feynman-Kac equation
/// with potential `φ`:
///
/// ```text
/// β = (η + inf φ + (E² + V)/(2E)) - √((η + inf φ - (E² + V)/(2E))² + 2ηV/E)
/// ```
pub fn decay_rate_beta(eta: f64, inf_phi: f64, mean: f64, var: f64) -> Result<f64> {
    if !(mean > 0.0) {
        return Err(Error::usage(format!("decay rate needs ∫φ dπ₀ > 0, got {mean}")));
    }
    let k = (mean * mean + var) / (2.0 * mean);
    let a = eta + inf_phi;
    Ok((a + k) - ((a - k).powi(2) + 2.0 * eta * var / mean).sqrt())
}

/// `-(inf φ)·∫φ²/(∫φ)² < η`, with `∫φ² = V + E²`.
pub fn spectral_condition_holds(eta: f64, inf_phi: f64, mean: f64, var: f64) -> bool {
    -inf_phi * (var + mean * mean) / (mean * mean) < eta
}

/// Real root of `α³ + α/2 - 1/2 = 0` in `[0, 1]`.
pub fn torus_alpha0() -> f64 {
    let p = |a: f64| a * a * a + 0.5 * a - 0.5;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if p(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub eta: f64,
    pub inf_phi: f64,
    pub e: f64,
    pub var: f64,
    pub rho: f64,
    pub beta: Option<f64>,
    pub hyp_poincare_ok: bool,
    pub hyp_spec_ok: bool,
    pub conv_ok: bool,
    pub minspec_bounded_ok: bool,
    pub notes: Vec<String>,
}

impl AssumptionReport {
    pub fn flags(&self) -> String {
        let f = |name: &str, ok: bool| format!("{name}:{}", if ok { "ok" } else { "fail" });
        [
            f("poincare", self.hyp_poincare_ok),
            f("spec", self.hyp_spec_ok),
            f("conv", self.conv_ok),
            f("minspec", self.minspec_bounded_ok),
        ]
        .join(";")
    }
}

/// Full report with `φ = beta_moment·min Spec ∇²V`.
pub fn check_assumptions(model: &Model, beta_moment: f64) -> Result<AssumptionReport> {
    if model.dim() != 1 {
        return Err(Error::usage(
            "assumption checks are implemented for one-dimensional models only",
        ));
    }
    if !(beta_moment > 0.0) {
        return Err(Error::usage("beta_moment must be positive"));
    }
    let potential = model.potential.as_ref();
    let l = model.domain_halfwidth();
    let eta = poincare_constant(potential, l, DEFAULT_REFINEMENT_TOL)?.eta;
    check_with_eta(potential, l, eta, beta_moment)
}

/// As [`check_assumptions`] with a precomputed Poincaré constant.
pub fn check_with_eta(potential: &dyn Potential, l: f64, eta: f64, beta_moment: f64) -> Result<AssumptionReport> {
    let m = curvature_moments(potential, l, beta_moment)?;
    let mut notes = vec![format!(
        "integrability of max(0,-φ) holds trivially on the truncated domain [-{l:.3}, {l:.3}]"
    )];
    let conv_ok = m.mean > 0.0;
    let beta = if conv_ok { Some(decay_rate_beta(eta, m.inf_phi, m.mean, m.variance)?) } else { None };
    let hyp_spec_ok = match m.status {
        RhoStatus::ConvexVacuous => {
            notes.push("inf φ > 0: potential uniformly convex, spectral hypothesis vacuous".into());
            true
        }
        RhoStatus::ConvViolated => false,
        RhoStatus::Defined => m.rho < eta,
    };
    Ok(AssumptionReport {
        eta,
        inf_phi: m.inf_phi,
        e: m.mean,
        var: m.variance,
        rho: m.rho,
        beta,
        hyp_poincare_ok: eta > 0.0,
        hyp_spec_ok,
        conv_ok,
        minspec_bounded_ok: m.inf_phi.is_finite(),
        notes,
    })
}

/// One row of the double-well curvature sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub c: f64,
    pub eta: f64,
    pub rho: f64,
    pub beta: Option<f64>,
}

pub fn double_well_row(c: f64) -> Result<SweepRow> {
    let model = crate::potentials::build_model(
        "double_well",
        &[("c".to_string(), c)].into_iter().collect(),
    )?;
    let pot = model.potential.as_ref();
    let l = model.domain_halfwidth();
    let eta = poincare_constant(pot, l, DEFAULT_REFINEMENT_TOL)?.eta;
    let report = check_with_eta(pot, l, eta, 1.0)?;
    Ok(SweepRow { c, eta, rho: report.rho, beta: report.beta })
}

pub fn sweep_double_well(cs: &[f64]) -> Result<Vec<SweepRow>> {
    cs.iter().map(|&c| double_well_row(c)).collect()
}

/// Root of `g` in `[lo, hi]` by bisection; `g(lo)` and `g(hi)` must differ in sign.
pub fn bisect<G: FnMut(f64) -> Result<f64>>(mut g: G, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let mut glo = g(lo)?;
    let ghi = g(hi)?;
    if glo.signum() == ghi.signum() {
        return Err(Error::numeric(format!(
            "no sign change on [{lo}, {hi}]: {glo} and {ghi}"
        )));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid)?;
        if gm.signum() == glo.signum() {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Curvature `c` at which `η(c) = k·ρ(c)` for the double well.
pub fn double_well_crossing(k: f64, lo: f64, hi: f64) -> Result<f64> {
    bisect(
        |c| {
            let row = double_well_row(c)?;
            Ok(row.eta - k * row.rho)
        },
        lo,
        hi,
        1e-4,
    )
}
