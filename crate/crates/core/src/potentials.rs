//! Potentials `V`, drift perturbations `F_λ` and the built-in model catalog.
//!
//! The unperturbed drift is always `F_0 = -∇V`. A perturbation only
//! supplies the increment `F_λ - F_0`, its λ-derivative at 0 and the
//! divergence of that derivative.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// A C² potential on `R^d`. Stored unnormalized.
pub trait Potential: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    fn gradient_into(&self, x: &[f64], out: &mut [f64]);

    fn hessian(&self, x: &[f64]) -> Matrix;

    /// `out = ∇²V(x)·v`. Models with structured Hessians override this.
    fn hessian_vec_into(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        self.hessian(x).mul_vec_into(v, out);
    }

    /// Where trajectories start when no initial condition is given.
    fn default_start(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.gradient_into(x, &mut g);
        g
    }
}

/// Drift perturbation: `F_λ = -∇V + increment(x, λ)`.
pub trait Perturbation: Send + Sync + fmt::Debug {
    /// `F_λ(x) - F_0(x)`; must vanish identically at λ = 0.
    fn increment_into(&self, x: &[f64], lambda: f64, out: &mut [f64]);

    /// `∂_λ F_λ(x)` at λ = 0.
    fn dforce_into(&self, x: &[f64], out: &mut [f64]);

    /// `∇·∂_λ F_λ(x)`, when the perturbation knows it.
    fn div_dforce(&self, x: &[f64]) -> Option<f64>;

    /// Constant `C` with `|F_λ - F_0| ≤ C λ`.
    fn bound_c(&self) -> f64;

    /// True when the perturbation is identically zero.
    fn is_null(&self) -> bool {
        false
    }
}

/// `increment = λ·u` for a fixed vector `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantDrift {
    pub direction: Vec<f64>,
}

impl ConstantDrift {
    pub fn new(direction: Vec<f64>) -> Self {
        ConstantDrift { direction }
    }

    /// `λ·e_k` in dimension `dim`, scaled by `sign`.
    pub fn along_axis(dim: usize, axis: usize, sign: f64) -> Self {
        let mut direction = vec![0.0; dim];
        direction[axis] = sign;
        ConstantDrift { direction }
    }
}

impl Perturbation for ConstantDrift {
    fn increment_into(&self, _x: &[f64], lambda: f64, out: &mut [f64]) {
        for (o, u) in out.iter_mut().zip(&self.direction) {
            *o = lambda * u;
        }
    }

    fn dforce_into(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.direction);
    }

    fn div_dforce(&self, _x: &[f64]) -> Option<f64> {
        Some(0.0)
    }

    fn bound_c(&self) -> f64 {
        linalg::norm2(&self.direction)
    }

    fn is_null(&self) -> bool {
        self.direction.iter().all(|&u| u == 0.0)
    }
}

/// `increment = λ·amplitude·cos(x_1)·e_1`, a position-dependent drift
/// with nonzero divergence `-amplitude·sin(x_1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineDrift {
    pub dim: usize,
    pub amplitude: f64,
}

impl Perturbation for CosineDrift {
    fn increment_into(&self, x: &[f64], lambda: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        out[0] = lambda * self.amplitude * x[0].cos();
    }

    fn dforce_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        out[0] = self.amplitude * x[0].cos();
    }

    fn div_dforce(&self, x: &[f64]) -> Option<f64> {
        Some(-self.amplitude * x[0].sin())
    }

    fn bound_c(&self) -> f64 {
        self.amplitude.abs()
    }
}

/// Planar shear flow on 2-D particles: particle `i` at `(a_i, b_i)` feels
/// `λ·b_i·e_1`. Divergence free; unbounded, so it only enters through
/// its tangent.
#[derive(Debug, Clone, PartialEq)]
pub struct ShearFlow {
    pub n_particles: usize,
}

impl Perturbation for ShearFlow {
    fn increment_into(&self, x: &[f64], lambda: f64, out: &mut [f64]) {
        self.dforce_into(x, out);
        out.iter_mut().for_each(|o| *o *= lambda);
    }

    fn dforce_into(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.n_particles {
            out[2 * i] = x[2 * i + 1];
            out[2 * i + 1] = 0.0;
        }
    }

    fn div_dforce(&self, _x: &[f64]) -> Option<f64> {
        Some(0.0)
    }

    fn bound_c(&self) -> f64 {
        f64::INFINITY
    }
}

/// `V(x) = a|x|²/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub dim: usize,
    pub stiffness: f64,
}

impl Potential for Quadratic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.stiffness * linalg::dot(x, x)
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = self.stiffness * xi;
        }
    }

    fn hessian(&self, _x: &[f64]) -> Matrix {
        Matrix::from_diagonal(&vec![self.stiffness; self.dim])
    }

    fn hessian_vec_into(&self, _x: &[f64], v: &[f64], out: &mut [f64]) {
        for (o, vi) in out.iter_mut().zip(v) {
            *o = self.stiffness * vi;
        }
    }
}

/// `V(x) = x⁴ - (c/2)x²`: a double well for `c > 0`, wells at `±√c/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleWell {
    pub c: f64,
}

impl DoubleWell {
    #[inline]
    pub fn second_derivative(&self, x: f64) -> f64 {
        12.0 * x * x - self.c
    }
}

impl Potential for DoubleWell {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, x: &[f64]) -> f64 {
        let x2 = x[0] * x[0];
        x2 * x2 - 0.5 * self.c * x2
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 4.0 * x[0].powi(3) - self.c * x[0];
    }

    fn hessian(&self, x: &[f64]) -> Matrix {
        Matrix::from_diagonal(&[self.second_derivative(x[0])])
    }

    fn hessian_vec_into(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        out[0] = self.second_derivative(x[0]) * v[0];
    }

    /// Bottom of the right well.
    fn default_start(&self) -> Vec<f64> {
        vec![if self.c > 0.0 { 0.5 * self.c.sqrt() } else { 0.0 }]
    }
}

/// `V(x) = Σ x_i⁴`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuarticTensor {
    pub dim: usize,
}

impl Potential for QuarticTensor {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v.powi(4)).sum()
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = 4.0 * xi.powi(3);
        }
    }

    fn hessian(&self, x: &[f64]) -> Matrix {
        let d: Vec<f64> = x.iter().map(|v| 12.0 * v * v).collect();
        Matrix::from_diagonal(&d)
    }

    fn hessian_vec_into(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            out[i] = 12.0 * x[i] * x[i] * v[i];
        }
    }
}

/// `V(x) = β(|x|⁴ - γ|x|²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MexicanHat {
    pub dim: usize,
    pub beta: f64,
    pub gamma: f64,
}

impl MexicanHat {
    /// Lower convexity profile `v(x) = β(4|x|² - 2γ)` satisfying
    /// `(x-y)·(∇V(x)-∇V(y)) ≥ ½(v(x)+v(y))|x-y|²`.
    pub fn convexity_profile(&self, x: &[f64]) -> f64 {
        self.beta * (4.0 * linalg::dot(x, x) - 2.0 * self.gamma)
    }
}

impl Potential for MexicanHat {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        let r2 = linalg::dot(x, x);
        self.beta * (r2 * r2 - self.gamma * r2)
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let k = self.beta * (4.0 * linalg::dot(x, x) - 2.0 * self.gamma);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = k * xi;
        }
    }

    fn hessian(&self, x: &[f64]) -> Matrix {
        let d = self.dim;
        let k = self.beta * (4.0 * linalg::dot(x, x) - 2.0 * self.gamma);
        let mut h = Matrix::zeros(d);
        for i in 0..d {
            for j in 0..d {
                let mut v = 8.0 * self.beta * x[i] * x[j];
                if i == j {
                    v += k;
                }
                h.set(i, j, v);
            }
        }
        h
    }

    fn hessian_vec_into(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        let k = self.beta * (4.0 * linalg::dot(x, x) - 2.0 * self.gamma);
        let xv = 8.0 * self.beta * linalg::dot(x, v);
        for i in 0..self.dim {
            out[i] = k * v[i] + xv * x[i];
        }
    }

    /// A point on the bottom ring `|x|² = γ/2`.
    fn default_start(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        x[0] = (0.5 * self.gamma).sqrt();
        x
    }
}

/// Below this separation the colloid pair force is frozen.
pub const COLLOID_MIN_SEPARATION: f64 = 1e-8;

/// `N` two-dimensional particles in a harmonic trap with screened
/// Coulomb repulsion: `V = (κ/2)Σ|Y_i|² + Σ_{i<j} U(Y_i - Y_j)` with
/// `U(r) = Γe^{-r}/r`. Coordinates are `(Y_1^1, Y_1^2, Y_2^1, ...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Colloid {
    pub n_particles: usize,
    pub kappa: f64,
    pub gamma: f64,
}

impl Colloid {
    fn clamped(&self, dx: f64, dy: f64) -> (f64, f64, f64) {
        let r = dx.hypot(dy);
        if r < COLLOID_MIN_SEPARATION {
            if r == 0.0 {
                (COLLOID_MIN_SEPARATION, 1.0, 0.0)
            } else {
                (COLLOID_MIN_SEPARATION, dx / r, dy / r)
            }
        } else {
            (r, dx / r, dy / r)
        }
    }

    /// `U(r)`, `U'(r)`, `U''(r)`.
    fn pair_radial(&self, r: f64) -> (f64, f64, f64) {
        let e = self.gamma * (-r).exp();
        let inv = 1.0 / r;
        let u = e * inv;
        let du = -e * (inv + inv * inv);
        let d2u = e * (inv + 2.0 * inv * inv + 2.0 * inv * inv * inv);
        (u, du, d2u)
    }

    /// 2×2 Hessian of `U` at relative vector `(dx, dy)`: `(hxx, hxy, hyy)`.
    fn pair_hessian(&self, dx: f64, dy: f64) -> (f64, f64, f64) {
        let (r, ux, uy) = self.clamped(dx, dy);
        let (_, du, d2u) = self.pair_radial(r);
        let t = du / r;
        (
            d2u * ux * ux + t * (1.0 - ux * ux),
            (d2u - t) * ux * uy,
            d2u * uy * uy + t * (1.0 - uy * uy),
        )
    }

    /// Net interaction force `-Σ_j ∇U(Y_i - Y_j)` summed over all particles.
    pub fn total_interaction_force(&self, x: &[f64]) -> [f64; 2] {
        let mut g = vec![0.0; x.len()];
        let trap = Quadratic { dim: x.len(), stiffness: self.kappa };
        self.gradient_into(x, &mut g);
        let mut trap_g = vec![0.0; x.len()];
        trap.gradient_into(x, &mut trap_g);
        let mut total = [0.0; 2];
        for i in 0..self.n_particles {
            total[0] -= g[2 * i] - trap_g[2 * i];
            total[1] -= g[2 * i + 1] - trap_g[2 * i + 1];
        }
        total
    }
}

impl Potential for Colloid {
    fn dim(&self) -> usize {
        2 * self.n_particles
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut v = 0.5 * self.kappa * linalg::dot(x, x);
        for i in 0..self.n_particles {
            for j in (i + 1)..self.n_particles {
                let (r, _, _) = self.clamped(x[2 * i] - x[2 * j], x[2 * i + 1] - x[2 * j + 1]);
                v += self.pair_radial(r).0;
            }
        }
        v
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = self.kappa * xi;
        }
        for i in 0..self.n_particles {
            for j in (i + 1)..self.n_particles {
                let (r, ux, uy) = self.clamped(x[2 * i] - x[2 * j], x[2 * i + 1] - x[2 * j + 1]);
                let du = self.pair_radial(r).1;
                let (gx, gy) = (du * ux, du * uy);
                out[2 * i] += gx;
                out[2 * i + 1] += gy;
                out[2 * j] -= gx;
                out[2 * j + 1] -= gy;
            }
        }
    }

    fn hessian(&self, x: &[f64]) -> Matrix {
        let d = self.dim();
        let mut h = Matrix::from_diagonal(&vec![self.kappa; d]);
        for i in 0..self.n_particles {
            for j in (i + 1)..self.n_particles {
                let (hxx, hxy, hyy) =
                    self.pair_hessian(x[2 * i] - x[2 * j], x[2 * i + 1] - x[2 * j + 1]);
                let block = [[hxx, hxy], [hxy, hyy]];
                for a in 0..2 {
                    for b in 0..2 {
                        h.add_to(2 * i + a, 2 * i + b, block[a][b]);
                        h.add_to(2 * j + a, 2 * j + b, block[a][b]);
                        h.add_to(2 * i + a, 2 * j + b, -block[a][b]);
                        h.add_to(2 * j + a, 2 * i + b, -block[a][b]);
                    }
                }
            }
        }
        h
    }

    fn hessian_vec_into(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        for (o, vi) in out.iter_mut().zip(v) {
            *o = self.kappa * vi;
        }
        for i in 0..self.n_particles {
            for j in (i + 1)..self.n_particles {
                let (hxx, hxy, hyy) =
                    self.pair_hessian(x[2 * i] - x[2 * j], x[2 * i + 1] - x[2 * j + 1]);
                let ux = v[2 * i] - v[2 * j];
                let uy = v[2 * i + 1] - v[2 * j + 1];
                let wx = hxx * ux + hxy * uy;
                let wy = hxy * ux + hyy * uy;
                out[2 * i] += wx;
                out[2 * i + 1] += wy;
                out[2 * j] -= wx;
                out[2 * j + 1] -= wy;
            }
        }
    }

    /// Particles evenly spaced on a circle of radius 1.
    fn default_start(&self) -> Vec<f64> {
        let n = self.n_particles;
        let mut x = vec![0.0; 2 * n];
        for i in 0..n {
            let angle = 2.0 * PI * i as f64 / n as f64;
            x[2 * i] = angle.cos();
            x[2 * i + 1] = angle.sin();
        }
        x
    }
}

/// A potential paired with its drift perturbation.
#[derive(Debug, Clone)]
pub struct Model {
    pub name: String,
    pub params: BTreeMap<String, f64>,
    pub potential: Arc<dyn Potential>,
    pub perturbation: Arc<dyn Perturbation>,
    domain_halfwidth: f64,
}

impl Model {
    pub fn new(
        name: impl Into<String>,
        params: BTreeMap<String, f64>,
        potential: Arc<dyn Potential>,
        perturbation: Arc<dyn Perturbation>,
    ) -> Self {
        let domain_halfwidth = find_domain_halfwidth(potential.as_ref());
        Model { name: name.into(), params, potential, perturbation, domain_halfwidth }
    }

    /// Same potential, different perturbation.
    pub fn with_perturbation(&self, perturbation: Arc<dyn Perturbation>) -> Model {
        Model { perturbation, ..self.clone() }
    }

    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    /// Truncation radius `L` with `V(±L) - min V ≥ 40`.
    pub fn domain_halfwidth(&self) -> f64 {
        self.domain_halfwidth
    }

    /// `F_λ(x)`.
    pub fn force_into(&self, x: &[f64], lambda: f64, out: &mut [f64]) {
        self.potential.gradient_into(x, out);
        out.iter_mut().for_each(|g| *g = -*g);
        if lambda != 0.0 {
            let mut inc = vec![0.0; out.len()];
            self.perturbation.increment_into(x, lambda, &mut inc);
            for (o, i) in out.iter_mut().zip(&inc) {
                *o += i;
            }
        }
    }

    pub fn force(&self, x: &[f64], lambda: f64) -> Vec<f64> {
        let mut f = vec![0.0; self.dim()];
        self.force_into(x, lambda, &mut f);
        f
    }

    pub fn dforce(&self, x: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; self.dim()];
        self.perturbation.dforce_into(x, &mut f);
        f
    }

    /// Green-Kubo conjugate observable `∇V·∂_λF - ∇·∂_λF`.
    pub fn conjugate_observable(&self, x: &[f64]) -> Result<f64> {
        let div = self.perturbation.div_dforce(x).ok_or_else(|| {
            Error::usage(format!("perturbation of model {} has no divergence", self.name))
        })?;
        let g = self.potential.gradient(x);
        Ok(linalg::dot(&g, &self.dforce(x)) - div)
    }
}

/// Smallest `L` (to 1%) with `V(±L·e_k) - min V ≥ 40` for every axis `k`.
pub fn find_domain_halfwidth(potential: &dyn Potential) -> f64 {
    const GAP: f64 = 40.0;
    let d = potential.dim();
    let axis_point = |k: usize, t: f64| {
        let mut x = vec![0.0; d];
        x[k] = t;
        x
    };
    let min_on = |l: f64| {
        let mut m = f64::INFINITY;
        for k in 0..d {
            for i in 0..=400 {
                let t = -l + 2.0 * l * i as f64 / 400.0;
                m = m.min(potential.value(&axis_point(k, t)));
            }
        }
        m
    };
    let boundary_ok = |l: f64, vmin: f64| {
        (0..d).all(|k| {
            potential.value(&axis_point(k, l)) - vmin >= GAP
                && potential.value(&axis_point(k, -l)) - vmin >= GAP
        })
    };
    let mut hi = 1.0;
    while !boundary_ok(hi, min_on(hi)) {
        hi *= 2.0;
        if hi > 1e6 {
            return hi;
        }
    }
    let vmin = min_on(hi);
    let mut lo = hi / 2.0;
    if boundary_ok(lo, vmin) {
        return lo;
    }
    while hi - lo > 0.01 * hi {
        let mid = 0.5 * (lo + hi);
        if boundary_ok(mid, vmin) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Everything Assumption-(Pot)-style checks need at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub energy: f64,
    pub gradient: Vec<f64>,
    pub hessian: Matrix,
    pub min_spec: f64,
}

pub fn eval_bundle(potential: &dyn Potential, x: &[f64]) -> Result<Bundle> {
    if x.len() != potential.dim() {
        return Err(Error::usage(format!(
            "point has dimension {}, model has {}",
            x.len(),
            potential.dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::usage(format!("non-finite point {x:?}")));
    }
    let energy = potential.value(x);
    let gradient = potential.gradient(x);
    let hessian = potential.hessian(x);
    if !energy.is_finite() || gradient.iter().any(|g| !g.is_finite()) || !hessian.is_finite() {
        return Err(Error::numeric(format!("non-finite potential output at x={x:?}")));
    }
    let min_spec = linalg::min_spec(&hessian)?;
    Ok(Bundle { energy, gradient, hessian, min_spec })
}

/// One catalog entry: name, parameter keys with defaults, description.
#[derive(Debug, Clone, Copy)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub parameters: &'static [(&'static str, f64)],
    pub summary: &'static str,
}

pub const CATALOG: &[CatalogEntry] = &[
    CatalogEntry {
        name: "ou",
        parameters: &[("a", 1.0), ("d", 1.0)],
        summary: "V=a|x|^2/2, F_λ=-∇V+λe_1",
    },
    CatalogEntry {
        name: "double_well",
        parameters: &[("c", 2.0)],
        summary: "V=x^4-(c/2)x^2, tilt V+λx so ∂_λF=-1",
    },
    CatalogEntry {
        name: "quartic_tensor",
        parameters: &[("d", 2.0)],
        summary: "V=Σx_i^4, F_λ=-∇V+λe_1",
    },
    CatalogEntry {
        name: "mexican_hat",
        parameters: &[("beta", 1.0), ("gamma", 1.0), ("d", 2.0)],
        summary: "V=β(|x|^4-γ|x|^2), F_λ=-∇V+λe_1",
    },
    CatalogEntry {
        name: "colloid",
        parameters: &[("n", 10.0), ("kappa", 10.0), ("gamma", 25.0)],
        summary: "N trapped 2-D particles, U=Γe^{-r}/r, shear λ(e_1,...,e_1)",
    },
];

/// Perturbation names accepted by [`build_model`] through the `pert` key.
pub const PERTURBATIONS: &[&str] = &["default", "null", "cosine", "shear_flow"];

pub fn catalog_names() -> String {
    CATALOG.iter().map(|e| e.name).collect::<Vec<_>>().join(", ")
}

/// Resolves parameters against the entry defaults; unknown keys are errors.
pub fn resolve_params(
    entry: &CatalogEntry,
    given: &BTreeMap<String, f64>,
) -> Result<BTreeMap<String, f64>> {
    let mut params: BTreeMap<String, f64> =
        entry.parameters.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    for (k, v) in given {
        if !params.contains_key(k) {
            return Err(Error::usage(format!(
                "model {} has no parameter {k} (known: {})",
                entry.name,
                entry.parameters.iter().map(|p| p.0).collect::<Vec<_>>().join(", ")
            )));
        }
        if !v.is_finite() {
            return Err(Error::usage(format!("parameter {k} must be finite")));
        }
        params.insert(k.clone(), *v);
    }
    Ok(params)
}

fn positive(params: &BTreeMap<String, f64>, key: &str) -> Result<f64> {
    let v = params[key];
    if v > 0.0 {
        Ok(v)
    } else {
        Err(Error::usage(format!("parameter {key} must be positive, got {v}")))
    }
}

fn count(params: &BTreeMap<String, f64>, key: &str, min: usize) -> Result<usize> {
    let v = params[key];
    if v.fract() != 0.0 || v < min as f64 {
        return Err(Error::usage(format!("parameter {key} must be an integer ≥ {min}, got {v}")));
    }
    Ok(v as usize)
}

/// Builds a catalog model with its default perturbation.
pub fn build_model(name: &str, given: &BTreeMap<String, f64>) -> Result<Model> {
    let entry = CATALOG.iter().find(|e| e.name == name).ok_or_else(|| {
        Error::usage(format!("unknown model '{name}'; catalog: {}", catalog_names()))
    })?;
    let params = resolve_params(entry, given)?;
    let (potential, perturbation): (Arc<dyn Potential>, Arc<dyn Perturbation>) = match name {
        "ou" => {
            let dim = count(&params, "d", 1)?;
            (
                Arc::new(Quadratic { dim, stiffness: positive(&params, "a")? }),
                Arc::new(ConstantDrift::along_axis(dim, 0, 1.0)),
            )
        }
        "double_well" => (
            Arc::new(DoubleWell { c: params["c"] }),
            Arc::new(ConstantDrift::along_axis(1, 0, -1.0)),
        ),
        "quartic_tensor" => {
            let dim = count(&params, "d", 1)?;
            (Arc::new(QuarticTensor { dim }), Arc::new(ConstantDrift::along_axis(dim, 0, 1.0)))
        }
        "mexican_hat" => {
            let dim = count(&params, "d", 1)?;
            (
                Arc::new(MexicanHat {
                    dim,
                    beta: positive(&params, "beta")?,
                    gamma: positive(&params, "gamma")?,
                }),
                Arc::new(ConstantDrift::along_axis(dim, 0, 1.0)),
            )
        }
        "colloid" => {
            let n = count(&params, "n", 2)?;
            let mut drift = vec![0.0; 2 * n];
            for i in 0..n {
                drift[2 * i] = 1.0;
            }
            (
                Arc::new(Colloid {
                    n_particles: n,
                    kappa: positive(&params, "kappa")?,
                    gamma: positive(&params, "gamma")?,
                }),
                Arc::new(ConstantDrift::new(drift)),
            )
        }
        _ => unreachable!("catalog entry without builder"),
    };
    Ok(Model::new(name, params, potential, perturbation))
}

/// Swaps in a named perturbation (`default`, `null`, `cosine`).
pub fn select_perturbation(model: Model, name: &str) -> Result<Model> {
    let dim = model.dim();
    match name {
        "default" => Ok(model),
        "null" => Ok(model.with_perturbation(Arc::new(ConstantDrift::new(vec![0.0; dim])))),
        "cosine" => Ok(model.with_perturbation(Arc::new(CosineDrift { dim, amplitude: 1.0 }))),
        "shear_flow" if dim % 2 == 0 => {
            Ok(model.with_perturbation(Arc::new(ShearFlow { n_particles: dim / 2 })))
        }
        "shear_flow" => Err(Error::usage("shear_flow needs an even (planar particle) dimension")),
        other => Err(Error::usage(format!(
            "unknown perturbation '{other}'; known: {}",
            PERTURBATIONS.join(", ")
        ))),
    }
}
