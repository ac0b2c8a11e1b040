//! One-dimensional quadrature against the unnormalized Gibbs weight `e^{-V}`.

use crate::error::{Error, Result};
use crate::potentials::Potential;

/// Maximum bisection depth of the adaptive Simpson rule.
pub const MAX_DEPTH: u32 = 24;

/// Panels the interval is split into before adaptive refinement starts, so
/// that narrow peaks are never skipped by the first Simpson estimate.
const PANELS: usize = 64;

/// Adaptive composite Simpson on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    let h = (b - a) / PANELS as f64;
    let mut total = 0.0;
    for p in 0..PANELS {
        let lo = a + p as f64 * h;
        let hi = lo + h;
        let mid = 0.5 * (lo + hi);
        let (flo, fmid, fhi) = (f(lo), f(mid), f(hi));
        let whole = simpson(lo, hi, flo, fmid, fhi);
        total += refine(&f, lo, hi, flo, fmid, fhi, whole, tol / PANELS as f64, 0)?;
    }
    if !total.is_finite() {
        return Err(Error::numeric("quadrature produced a non-finite value"));
    }
    Ok(total)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn refine<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth >= MAX_DEPTH {
        return Err(Error::numeric(format!(
            "adaptive Simpson did not converge on [{a}, {b}] after {MAX_DEPTH} levels"
        )));
    }
    Ok(refine(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1)?
        + refine(f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1)?)
}

/// Minimum of `V` over `[-l, l]` by a fine scan.
pub fn scan_min<F: Fn(f64) -> f64>(v: F, l: f64) -> f64 {
    (0..=4000)
        .map(|i| v(-l + 2.0 * l * i as f64 / 4000.0))
        .fold(f64::INFINITY, f64::min)
}

/// `π₀`-expectations on `[-L, L]` for a one-dimensional potential, with the
/// partition integral computed once.
#[derive(Debug, Clone)]
pub struct GibbsQuadrature<'p> {
    potential: &'p dyn Potential,
    halfwidth: f64,
    v_min: f64,
    partition: f64,
    tol: f64,
}

impl<'p> GibbsQuadrature<'p> {
    pub fn new(potential: &'p dyn Potential, halfwidth: f64, tol: f64) -> Result<Self> {
        if potential.dim() != 1 {
            return Err(Error::usage(format!(
                "quadrature needs a one-dimensional model, got dimension {}",
                potential.dim()
            )));
        }
        if !(tol > 0.0) {
            return Err(Error::usage("quadrature tolerance must be positive"));
        }
        let v = |x: f64| potential.value(&[x]);
        let v_min = scan_min(v, halfwidth);
        // partition integral of e^{-(V - V_min)} is at least of order the well width
        let partition =
            adaptive_simpson(|x| (-(v(x) - v_min)).exp(), -halfwidth, halfwidth, tol * 1e-3)?;
        Ok(GibbsQuadrature { potential, halfwidth, v_min, partition, tol })
    }

    pub fn weight(&self, x: f64) -> f64 {
        (-(self.potential.value(&[x]) - self.v_min)).exp() / self.partition
    }

    /// `∫ φ dπ₀`.
    pub fn expectation<F: Fn(f64) -> f64>(&self, phi: F) -> Result<f64> {
        adaptive_simpson(|x| phi(x) * self.weight(x), -self.halfwidth, self.halfwidth, self.tol)
    }

    /// `Cov_{π₀}(f, g)`.
    pub fn covariance<F: Fn(f64) -> f64, G: Fn(f64) -> f64>(&self, f: F, g: G) -> Result<f64> {
        let ef = self.expectation(&f)?;
        let eg = self.expectation(&g)?;
        self.expectation(|x| (f(x) - ef) * (g(x) - eg))
    }

    pub fn halfwidth(&self) -> f64 {
        self.halfwidth
    }
}

/// `∫ φ dπ₀` on the model's truncation domain.
pub fn quad_expectation<F: Fn(f64) -> f64>(
    phi: F,
    potential: &dyn Potential,
    halfwidth: f64,
    tol: f64,
) -> Result<f64> {
    GibbsQuadrature::new(potential, halfwidth, tol)?.expectation(phi)
}

/// `E[φ(|X|)]` for a radial density `∝ r^{d-1} e^{-v(r)}` on `[0, r_max]`.
pub fn radial_expectation<P, V>(phi: P, v: V, dim: usize, r_max: f64, tol: f64) -> Result<f64>
where
    P: Fn(f64) -> f64,
    V: Fn(f64) -> f64,
{
    let v_min = (0..=4000).map(|i| v(r_max * i as f64 / 4000.0)).fold(f64::INFINITY, f64::min);
    let w = |r: f64| r.powi(dim as i32 - 1) * (-(v(r) - v_min)).exp();
    let z = adaptive_simpson(&w, 0.0, r_max, tol * 1e-3)?;
    Ok(adaptive_simpson(|r| phi(r) * w(r), 0.0, r_max, tol * z)? / z)
}
