use std::collections::BTreeMap;

use langevin_sensitivity::linalg::{min_spec, Matrix};
use langevin_sensitivity::potentials::{build_model, MexicanHat, Model, Potential};
use langevin_sensitivity::spectral::{
    build_operator_matrix, check_assumptions, decay_rate_beta, lowest_modes, poincare_constant,
    rho_criterion, spectral_condition_holds, torus_alpha0, SpectralGrid, DEFAULT_REFINEMENT_TOL,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model(name: &str, params: &[(&str, f64)]) -> Model {
    let p: BTreeMap<String, f64> = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    build_model(name, &p).unwrap()
}

fn dense_eigenvalues(m: &Matrix) -> Vec<f64> {
    let n = m.dim();
    let d = DMatrix::from_fn(n, n, |i, j| m.get(i, j));
    let mut ev: Vec<f64> = d.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ev
}

#[test]
fn ou_operator_spectrum_on_201_points() {
    let ou = model("ou", &[]);
    let grid = SpectralGrid { dx: 0.08, n_half: 100 };
    let m = build_operator_matrix(ou.potential.as_ref(), &grid).unwrap();
    let ev = dense_eigenvalues(&m.to_dense());
    for (k, v) in ev.iter().take(4).enumerate() {
        assert!((v + k as f64).abs() < 0.02, "eigenvalue {k}: {v}");
    }
    let modes = lowest_modes(&m).unwrap();
    assert!((modes.second_value - ev[1]).abs() < 1e-6, "{} vs {}", modes.second_value, ev[1]);
}

#[test]
fn gap_scales_with_stiffness() {
    for a in [0.5, 2.5] {
        let ou = model("ou", &[("a", a)]);
        let eta = poincare_constant(ou.potential.as_ref(), ou.domain_halfwidth(), DEFAULT_REFINEMENT_TOL)
            .unwrap()
            .eta;
        assert!((eta - a).abs() < 0.01 * a, "a={a}: {eta}");
    }
}

fn midpoint_moments(c: f64) -> (f64, f64) {
    let n = 400_000;
    let h = 8.0 / n as f64;
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let x = -4.0 + (i as f64 + 0.5) * h;
        let w = (-(x.powi(4) - 0.5 * c * x * x)).exp();
        let phi = 12.0 * x * x - c;
        z += w;
        m1 += w * phi;
        m2 += w * phi * phi;
    }
    (m1 / z, m2 / z)
}

#[test]
fn rho_matches_direct_formula() {
    for c in [0.3, 1.0, 2.0] {
        let (m1, m2) = midpoint_moments(c);
        let expected = c * m2 / (m1 * m1);
        let rho = rho_criterion(&model("double_well", &[("c", c)])).unwrap().rho;
        assert!((rho - expected).abs() < 1e-6 * expected, "c={c}: {rho} vs {expected}");
    }
}

#[test]
fn rho_matches_sampling_oracle() {
    // rejection sampling from e^{-V} on [-3, 3] with a flat envelope
    let c = 1.0;
    let v = |x: f64| x.powi(4) - 0.5 * c * x * x;
    let v_min = -c * c / 16.0;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut s1, mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0, 0.0);
    let mut n = 0usize;
    while n < 1_000_000 {
        let x = rng.random::<f64>() * 6.0 - 3.0;
        if rng.random::<f64>() < (-(v(x) - v_min)).exp() {
            let phi = 12.0 * x * x - c;
            s1 += phi;
            s2 += phi * phi;
            s3 += phi.powi(3);
            s4 += phi.powi(4);
            n += 1;
        }
    }
    let nf = n as f64;
    let (a, b) = (s1 / nf, s2 / nf);
    let rho_mc = c * b / (a * a);
    // delta method on (mean φ, mean φ²)
    let (var_a, var_b, cov_ab) = (b - a * a, s4 / nf - b * b, s3 / nf - a * b);
    let (ga, gb) = (-2.0 * c * b / a.powi(3), c / (a * a));
    let se = ((ga * ga * var_a + gb * gb * var_b + 2.0 * ga * gb * cov_ab) / nf).sqrt();
    let rho = rho_criterion(&model("double_well", &[("c", c)])).unwrap().rho;
    assert!((rho - rho_mc).abs() <= 3.0 * se, "{rho} vs {rho_mc} ± {se}");
}

#[test]
fn assumption_reports() {
    let small = check_assumptions(&model("double_well", &[("c", 0.4)]), 2.0).unwrap();
    assert!(small.hyp_spec_ok, "{small:?}");
    let large = check_assumptions(&model("double_well", &[("c", 2.0)]), 1.0).unwrap();
    assert!(!large.hyp_spec_ok);
    for bm in [0.5, 1.0, 3.0] {
        let ou = check_assumptions(&model("ou", &[]), bm).unwrap();
        assert!((ou.inf_phi - bm).abs() < 1e-9);
        assert_eq!(ou.flags(), "poincare:ok;spec:ok;conv:ok;minspec:ok");
        assert!(ou.notes.iter().any(|n| n.contains("convex")));
    }
}

#[test]
fn torus_root_and_threshold() {
    let p = |a: f64| a.powi(3) + a / 2.0 - 0.5;
    assert!(p(0.0) < 0.0 && p(1.0) > 0.0);
    let a0 = torus_alpha0();
    assert!(p(a0).abs() < 1e-8);
    for i in 1..200 {
        let alpha = i as f64 / 200.0;
        if (alpha - a0).abs() < 1e-6 {
            continue;
        }
        let beta = decay_rate_beta(1.0, alpha - 1.0, alpha, 0.5).unwrap();
        let closed_form = (1.0 - alpha) * (1.0 + 2.0 * alpha * alpha) / (2.0 * alpha * alpha) < 1.0;
        assert_eq!(beta > 0.0, alpha > a0, "alpha={alpha}");
        assert_eq!(closed_form, alpha > a0, "alpha={alpha}");
    }
}

/// Smallest root of the characteristic cubic of a symmetric 3×3 matrix
/// (trigonometric form).
fn cubic_min_eigenvalue(m: &Matrix) -> f64 {
    let a = |i, j| m.get(i, j);
    let q = (a(0, 0) + a(1, 1) + a(2, 2)) / 3.0;
    let p1 = a(0, 1).powi(2) + a(0, 2).powi(2) + a(1, 2).powi(2);
    let p2 = (a(0, 0) - q).powi(2) + (a(1, 1) - q).powi(2) + (a(2, 2) - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let b = |i, j| (a(i, j) - if i == j { q } else { 0.0 }) / p;
    let det = b(0, 0) * (b(1, 1) * b(2, 2) - b(1, 2) * b(2, 1)) - b(0, 1) * (b(1, 0) * b(2, 2) - b(1, 2) * b(2, 0))
        + b(0, 2) * (b(1, 0) * b(2, 1) - b(1, 1) * b(2, 0));
    let phi = (det / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
    q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos()
}

fn symmetric(vals: &[f64], n: usize) -> Matrix {
    let mut m = Matrix::zeros(n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            m.set(i, j, vals[k]);
            m.set(j, i, vals[k]);
            k += 1;
        }
    }
    m
}

#[test]
fn min_spec_matches_cubic_roots() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let vals: Vec<f64> = (0..6).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
        let m = symmetric(&vals, 3);
        let got = min_spec(&m).unwrap();
        assert!((got - cubic_min_eigenvalue(&m)).abs() < 1e-8, "{vals:?}");
    }
}

#[test]
fn mexican_hat_min_spec_matches_closed_form() {
    // ∇²V = k I + 8β x xᵀ with k = β(4|x|² - 2γ): eigenvalues k and k + 8β|x|²
    let pot = MexicanHat { dim: 2, beta: 1.0, gamma: 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..500 {
        let x = [rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0];
        let r2 = x[0] * x[0] + x[1] * x[1];
        let expected = 4.0 * r2 - 2.0;
        let got = min_spec(&pot.hessian(&x)).unwrap();
        assert!((got - expected).abs() < 1e-9 * (1.0 + expected.abs()), "{x:?}");
    }
}

#[test]
fn mexican_hat_convexity_profile_inequality() {
    let pot = MexicanHat { dim: 2, beta: 1.0, gamma: 2.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let x: Vec<f64> = (0..2).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
        let y: Vec<f64> = (0..2).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
        let (gx, gy) = (pot.gradient(&x), pot.gradient(&y));
        let lhs: f64 = (0..2).map(|i| (x[i] - y[i]) * (gx[i] - gy[i])).sum();
        let d2: f64 = (0..2).map(|i| (x[i] - y[i]).powi(2)).sum();
        let rhs = 0.5 * (pot.convexity_profile(&x) + pot.convexity_profile(&y)) * d2;
        assert!(lhs >= rhs - 1e-9 * (1.0 + rhs.abs()), "{x:?} {y:?}: {lhs} < {rhs}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn min_spec_is_one_lipschitz(a in prop::collection::vec(-3.0f64..3.0, 6), b in prop::collection::vec(-3.0f64..3.0, 6)) {
        let (ma, mb) = (symmetric(&a, 3), symmetric(&b, 3));
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let gap = (min_spec(&ma).unwrap() - min_spec(&mb).unwrap()).abs();
        prop_assert!(gap <= symmetric(&diff, 3).operator_norm() * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn beta_positive_iff_spectral_condition(
        eta in 1e-3f64..10.0,
        inf_phi in -10.0f64..0.0,
        mean in 1e-3f64..10.0,
        var in 0.0f64..20.0,
    ) {
        let beta = decay_rate_beta(eta, inf_phi, mean, var).unwrap();
        let lhs = -inf_phi * (var + mean * mean) / (mean * mean);
        // skip tuples on the boundary itself, where rounding decides
        prop_assume!((lhs - eta).abs() > 1e-9 * eta);
        prop_assert_eq!(beta > 0.0, spectral_condition_holds(eta, inf_phi, mean, var));
    }
}
