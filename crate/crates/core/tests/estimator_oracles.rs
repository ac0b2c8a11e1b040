use std::collections::BTreeMap;

use langevin_sensitivity::dynamics::{InitialCondition, SimConfig};
use langevin_sensitivity::estimators::{
    build_observable, ensemble_sensitivity, equilibrium_sampler, ergodic_sensitivity,
    nemd_finite_difference,
};
use langevin_sensitivity::potentials::{build_model, select_perturbation, Model};

fn model(name: &str, params: &[(&str, f64)]) -> Model {
    let p: BTreeMap<String, f64> = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    build_model(name, &p).unwrap()
}

/// `-Cov(f, x)` under `e^{-V}`, midpoint rule.
fn tilt_oracle(c: f64) -> f64 {
    let f = |x: f64| 0.5 + (10.0 * x).atan() / std::f64::consts::PI;
    let n = 200_000;
    let h = 12.0 / n as f64;
    let (mut z, mut ef, mut ex, mut efx) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        let x = -6.0 + (i as f64 + 0.5) * h;
        let w = (-(x.powi(4) - 0.5 * c * x * x)).exp();
        z += w;
        ef += w * f(x);
        ex += w * x;
        efx += w * f(x) * x;
    }
    -(efx / z - ef / z * ex / z)
}

#[test]
fn double_well_ensemble_matches_covariance_oracle() {
    let m = model("double_well", &[("c", 1.0)]);
    let obs = build_observable("indicator", 1).unwrap();
    let cfg = SimConfig { dt: 1e-3, t_final: 20.0, n_replicas: 4000, master_seed: 2, ..SimConfig::default() };
    let res = ensemble_sensitivity(&cfg, &m, obs.as_ref()).unwrap();
    let oracle = tilt_oracle(1.0);
    assert!((res.value - oracle).abs() <= 3.0 * res.std_error, "{} ± {} vs {oracle}", res.value, res.std_error);
}

#[test]
fn nemd_gap_to_ergodic_is_first_order_in_eps() {
    let m = model("double_well", &[("c", 1.0)]);
    let obs = build_observable("indicator", 1).unwrap();
    let cfg = SimConfig { dt: 1e-3, t_final: 10.0, n_replicas: 64, ..SimConfig::default() };
    let erg = ergodic_sensitivity(&cfg, &m, obs.as_ref(), 0.5).unwrap();
    let gaps: Vec<f64> = [4e-2, 1e-2, 2.5e-3]
        .iter()
        .map(|&eps| (nemd_finite_difference(&cfg, &m, obs.as_ref(), eps, 0.5).unwrap().value - erg.value).abs())
        .collect();
    for w in gaps.windows(2) {
        let ratio = w[0] / w[1];
        assert!((2.0..=8.0).contains(&ratio), "{gaps:?}");
    }
}

#[test]
fn nemd_is_exactly_zero_without_perturbation() {
    let m = select_perturbation(model("ou", &[]), "null").unwrap();
    let obs = build_observable("x1", 1).unwrap();
    let cfg = SimConfig { t_final: 2.0, n_replicas: 32, ..SimConfig::default() };
    let res = nemd_finite_difference(&cfg, &m, obs.as_ref(), 1e-2, 0.5).unwrap();
    assert_eq!(res.value, 0.0);
}

#[test]
fn ou_equilibrium_sampler_moments() {
    let m = model("ou", &[]);
    let n = 4000;
    let cfg = SimConfig { n_replicas: n, burn_in: 10.0, dt: 1e-2, initial_condition: InitialCondition::Equilibrium, ..SimConfig::default() };
    let xs: Vec<f64> = equilibrium_sampler(&cfg, &m).unwrap().into_iter().map(|v| v[0]).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let tol = 4.0 / (n as f64).sqrt();
    assert!(mean.abs() <= tol, "mean {mean}");
    // dt = 1e-2 Euler inflates the stationary variance by ~dt/2
    assert!((var - 1.0).abs() <= tol, "var {var}");
}

#[test]
fn standard_error_shrinks_as_root_n() {
    let m = model("double_well", &[("c", 2.0)]);
    let obs = build_observable("indicator", 1).unwrap();
    let se = |n| {
        let cfg = SimConfig { dt: 1e-3, t_final: 2.0, n_replicas: n, master_seed: 5, ..SimConfig::default() };
        ensemble_sensitivity(&cfg, &m, obs.as_ref()).unwrap().std_error
    };
    let ratio = se(1000) / se(4000);
    assert!((1.7..=2.3).contains(&ratio), "{ratio}");
}

#[test]
fn tangent_variance_stays_bounded_in_the_l2_regime() {
    // c = 0.4 sits where second tangent moments are bounded in time
    let m = model("double_well", &[("c", 0.4)]);
    let obs = build_observable("x1", 1).unwrap();
    let cfg = SimConfig { dt: 1e-3, t_final: 30.0, n_replicas: 2000, ..SimConfig::default() };
    let series = ensemble_sensitivity(&cfg, &m, obs.as_ref()).unwrap().series.unwrap();
    let se_at = |t: f64| series.iter().find(|p| (p.time - t).abs() < 1e-9).unwrap().std_error;
    let (mid, end) = (se_at(10.0), se_at(30.0));
    assert!(end <= 1.5 * mid, "se grew from {mid} to {end}");
}

#[test]
fn feynman_kac_weight_decays_at_least_at_beta() {
    use langevin_sensitivity::dynamics::{NoiseStream, Stepper};
    use langevin_sensitivity::spectral::check_assumptions;

    let c = 0.4;
    let m = model("double_well", &[("c", c)]);
    let beta = check_assumptions(&m, 1.0).unwrap().beta.unwrap();
    assert!(beta > 0.0);
    let n = 4000;
    let dt = 1e-3;
    let cfg = SimConfig { n_replicas: n, burn_in: 20.0, dt, initial_condition: InitialCondition::Equilibrium, ..SimConfig::default() };
    let starts = equilibrium_sampler(&cfg, &m).unwrap();
    let checkpoints = [2000usize, 6000];
    let mut sums = [0.0f64; 2];
    let mut stepper = Stepper::new(&m);
    for (r, x0) in starts.into_iter().enumerate() {
        let mut x = x0;
        let mut noise = NoiseStream::new(99, r as u64);
        let mut dw = [0.0];
        let mut integral = 0.0;
        for k in 1..=checkpoints[1] {
            integral += (12.0 * x[0] * x[0] - c) * dt;
            noise.fill_increment(dt, &mut dw);
            stepper.step_position(&mut x, 0.0, dt, &dw);
            if let Some(i) = checkpoints.iter().position(|&p| p == k) {
                sums[i] += (-integral).exp();
            }
        }
    }
    let rate = -(sums[1] / sums[0]).ln() / ((checkpoints[1] - checkpoints[0]) as f64 * dt);
    assert!(rate >= 0.9 * beta, "decay rate {rate} vs β {beta}");
}
