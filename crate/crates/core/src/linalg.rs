//! Small dense and tridiagonal linear algebra used by the models, the
//! resolvent propagation and the spectral checks.
//!
//! Dimensions in this crate are small (d ≤ a few dozen), so everything is
//! row-major `Vec<f64>` storage without blocking.

use crate::error::{Error, Result};

/// Square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// Builds from row-major data; `data.len()` must be a perfect square.
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::usage(format!(
                "matrix of order {n} needs {} entries, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(Matrix { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
    }

    /// `out = self · v`
    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        let n = self.n;
        for (i, o) in out.iter_mut().enumerate().take(n) {
            let row = &self.data[i * n..(i + 1) * n];
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.mul_vec_into(v, &mut out);
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.data[j * n + i] = self.data[i * n + j];
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest `|m_ij - m_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.n;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Lower bound on the spectrum from Gershgorin discs.
    pub fn gershgorin_lower(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                let off: f64 = (0..self.n)
                    .filter(|&j| j != i)
                    .map(|j| self.get(i, j).abs())
                    .sum();
                self.get(i, i) - off
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Operator 2-norm, by power iteration on `MᵀM`.
    pub fn operator_norm(&self) -> f64 {
        let n = self.n;
        if n == 1 {
            return self.data[0].abs();
        }
        let mtm = self.transpose().matmul(self);
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
        normalize(&mut v);
        let mut lambda = 0.0;
        let mut w = vec![0.0; n];
        for _ in 0..10_000 {
            mtm.mul_vec_into(&v, &mut w);
            let next = dot(&v, &w);
            let norm = norm2(&w);
            if norm == 0.0 {
                return 0.0;
            }
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi / norm;
            }
            if (next - lambda).abs() <= 1e-14 * next.abs() {
                lambda = next;
                break;
            }
            lambda = next;
        }
        lambda.max(0.0).sqrt()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: &mut [f64]) -> f64 {
    let n = norm2(a);
    if n > 0.0 {
        a.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Smallest eigenvalue of a symmetric matrix.
///
/// Closed forms for d ≤ 3; for larger d, inverse iteration on `h - σI`
/// with `σ` one unit below the Gershgorin bound so the shifted matrix is
/// positive definite and can be factored by Cholesky.
pub fn min_spec(h: &Matrix) -> Result<f64> {
    let scale = h.frobenius_norm();
    if h.asymmetry() > 1e-9 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::usage(format!(
            "min_spec needs a symmetric matrix (asymmetry {:e}, norm {:e})",
            h.asymmetry(),
            scale
        )));
    }
    if !h.is_finite() {
        return Err(Error::numeric("min_spec: non-finite matrix entry"));
    }
    match h.dim() {
        0 => Err(Error::usage("min_spec of an empty matrix")),
        1 => Ok(h.get(0, 0)),
        2 => Ok(min_eig_2x2(h.get(0, 0), 0.5 * (h.get(0, 1) + h.get(1, 0)), h.get(1, 1))),
        3 => Ok(min_eig_3x3(h)),
        _ => min_eig_inverse_iteration(h),
    }
}

fn min_eig_2x2(a: f64, b: f64, c: f64) -> f64 {
    let mean = 0.5 * (a + c);
    let half_diff = 0.5 * (a - c);
    mean - half_diff.hypot(b)
}

/// Trigonometric solution of the characteristic cubic.
fn min_eig_3x3(h: &Matrix) -> f64 {
    let s = |i: usize, j: usize| 0.5 * (h.get(i, j) + h.get(j, i));
    let (a00, a11, a22) = (h.get(0, 0), h.get(1, 1), h.get(2, 2));
    let (a01, a02, a12) = (s(0, 1), s(0, 2), s(1, 2));
    let off = a01 * a01 + a02 * a02 + a12 * a12;
    if off == 0.0 {
        return a00.min(a11).min(a22);
    }
    let q = (a00 + a11 + a22) / 3.0;
    let p2 = (a00 - q).powi(2) + (a11 - q).powi(2) + (a22 - q).powi(2) + 2.0 * off;
    let p = (p2 / 6.0).sqrt();
    let b00 = (a00 - q) / p;
    let b11 = (a11 - q) / p;
    let b22 = (a22 - q) / p;
    let (b01, b02, b12) = (a01 / p, a02 / p, a12 / p);
    let det = b00 * (b11 * b22 - b12 * b12) - b01 * (b01 * b22 - b12 * b02)
        + b02 * (b01 * b12 - b11 * b02);
    let r = (0.5 * det).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos()
}

fn min_eig_inverse_iteration(h: &Matrix) -> Result<f64> {
    let n = h.dim();
    let sigma = h.gershgorin_lower() - 1.0;
    let mut shifted = h.clone();
    for i in 0..n {
        shifted.add_to(i, i, -sigma);
    }
    let chol = Cholesky::factor(&shifted)?;
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.7548776662).fract()).collect();
    normalize(&mut v);
    let mut w = vec![0.0; n];
    let mut hv = vec![0.0; n];
    let mut rayleigh = f64::INFINITY;
    for _ in 0..1_000_000 {
        chol.solve_into(&v, &mut w);
        normalize(&mut w);
        std::mem::swap(&mut v, &mut w);
        h.mul_vec_into(&v, &mut hv);
        let next = dot(&v, &hv);
        if (next - rayleigh).abs() <= 1e-10 * next.abs().max(1.0) {
            // residual check guards against stalling on a near-degenerate pair
            let resid: f64 = hv
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - next * b).powi(2))
                .sum::<f64>()
                .sqrt();
            if resid <= 1e-5 * next.abs().max(1.0) {
                return Ok(next);
            }
        }
        rayleigh = next;
    }
    Err(Error::numeric("min_spec: inverse iteration did not converge"))
}

/// Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &Matrix) -> Result<Self> {
        let n = a.dim();
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::numeric("Cholesky: matrix not positive definite"));
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(Cholesky { n, l })
    }

    pub fn solve_into(&self, b: &[f64], x: &mut [f64]) {
        let n = self.n;
        // forward: L y = b
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
    }
}

/// Symmetric tridiagonal matrix: `diag[i]` and `off[i]` = entry (i, i+1).
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiagonal {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Result<Self> {
        if diag.is_empty() || off.len() + 1 != diag.len() {
            return Err(Error::usage(format!(
                "tridiagonal: {} diagonal and {} off-diagonal entries",
                diag.len(),
                off.len()
            )));
        }
        Ok(SymTridiagonal { diag, off })
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let mut s = self.diag[i] * v[i];
            if i > 0 {
                s += self.off[i - 1] * v[i - 1];
            }
            if i + 1 < n {
                s += self.off[i] * v[i + 1];
            }
            out[i] = s;
        }
    }

    /// Returns the matrix `scale·self + shift·I`.
    pub fn affine(&self, scale: f64, shift: f64) -> SymTridiagonal {
        SymTridiagonal {
            diag: self.diag.iter().map(|d| scale * d + shift).collect(),
            off: self.off.iter().map(|o| scale * o).collect(),
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let n = self.len();
        let mut m = Matrix::zeros(n);
        for i in 0..n {
            m.set(i, i, self.diag[i]);
            if i + 1 < n {
                m.set(i, i + 1, self.off[i]);
                m.set(i + 1, i, self.off[i]);
            }
        }
        m
    }
}

/// Pre-factored tridiagonal solver (Thomas algorithm).
#[derive(Debug, Clone)]
pub struct ThomasSolver {
    c_prime: Vec<f64>,
    denom: Vec<f64>,
    sub: Vec<f64>,
}

impl ThomasSolver {
    pub fn new(m: &SymTridiagonal) -> Result<Self> {
        let n = m.len();
        let mut c_prime = vec![0.0; n];
        let mut denom = vec![0.0; n];
        let mut prev_c = 0.0;
        for i in 0..n {
            let a = if i > 0 { m.off[i - 1] } else { 0.0 };
            let d = m.diag[i] - a * prev_c;
            if d == 0.0 || !d.is_finite() {
                return Err(Error::numeric(format!("tridiagonal solve: zero pivot at row {i}")));
            }
            denom[i] = d;
            let c = if i + 1 < n { m.off[i] / d } else { 0.0 };
            c_prime[i] = c;
            prev_c = c;
        }
        let mut sub = vec![0.0; n];
        sub[1..].copy_from_slice(&m.off);
        Ok(ThomasSolver { c_prime, denom, sub })
    }

    pub fn solve_into(&self, rhs: &[f64], x: &mut [f64]) {
        let n = self.denom.len();
        let mut prev = 0.0;
        for i in 0..n {
            let v = (rhs[i] - self.sub[i] * prev) / self.denom[i];
            x[i] = v;
            prev = v;
        }
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] -= self.c_prime[i] * x[i + 1];
        }
    }
}
