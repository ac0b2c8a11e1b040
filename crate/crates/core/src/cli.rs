//! `lsens` front end: `key=value` arguments (optionally layered over a
//! config file), dispatch to the library, CSV output with a `#` header
//! that echoes every resolved setting.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::analysis::{self, empirical_tail_cdf, fit_log_slope, plateau_detect};
use crate::dynamics::{self, InitialCondition, SimConfig};
use crate::error::{Error, Result};
use crate::estimators::{self, build_observable, EstimatorResult, SeriesPoint};
use crate::merging::{self, MergeConfig};
use crate::potentials::{build_model, select_perturbation, Model, CATALOG};
use crate::quadrature::radial_expectation;
use crate::spectral::{self, check_with_eta, poincare_constant, DEFAULT_REFINEMENT_TOL};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const SUBCOMMANDS: &[&str] = &[
    "simulate",
    "sensitivity",
    "greenkubo",
    "nemd",
    "spectral",
    "sweep",
    "tail",
    "merge-compare",
    "pair-contraction",
    "colloid",
    "figure1",
    "figure2",
    "figure3",
    "figure4",
    "figure5",
    "figure6",
];

/// Keys understood by every subcommand; anything else must be a parameter
/// of the selected model.
const KEYS: &[&str] = &[
    "model", "perturbation", "observable", "estimator", "dt", "t_final", "n_replicas", "seed",
    "burn_in", "stride", "init", "workers", "discard", "t_trunc", "centered", "eps",
    "beta_moment", "sweep", "bin", "period", "batch", "n_batches", "input", "output", "emit",
    "x", "y", "rel_tol", "tol", "component", "fit_lo", "fit_hi",
];

/// Settings that never change results and are kept out of the header.
const UNECHOED: &[&str] = &["workers", "output"];

/// A parameter range `name:lo:hi:step`, endpoints included.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub param: String,
    pub values: Vec<f64>,
}

impl Sweep {
    pub fn parse(text: &str) -> Result<Sweep> {
        let bad = || Error::usage(format!("malformed sweep '{text}', expected name:lo:hi:step"));
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 4 || parts[0].is_empty() {
            return Err(bad());
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
        let (lo, hi, step) = (num(parts[1])?, num(parts[2])?, num(parts[3])?);
        if !(step > 0.0) || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(bad());
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        let values = (0..count).map(|i| ((lo + i as f64 * step) * 1e12).round() / 1e12).collect();
        Ok(Sweep { param: parts[0].to_string(), values })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub subcommand: String,
    pub settings: BTreeMap<String, String>,
    pub desk: bool,
    pub warnings: Vec<String>,
}

impl RunSpec {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.settings.get(key).map(String::as_str)
    }

    pub fn sweep(&self) -> Result<Option<Sweep>> {
        self.get("sweep").map(Sweep::parse).transpose()
    }
}

fn split_pair(token: &str) -> Option<(String, String)> {
    let (k, v) = token.split_once('=')?;
    let k = k.trim();
    if k.is_empty() {
        return None;
    }
    Some((k.to_string(), v.trim().to_string()))
}

fn read_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::usage(format!("cannot read config file {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let pair = split_pair(line).ok_or_else(|| {
            Error::usage(format!("{}:{}: expected 'key = value', got '{line}'", path.display(), n + 1))
        })?;
        out.push(pair);
    }
    Ok(out)
}

/// Model implied by a subcommand when `model=` is absent.
fn implied_model(subcommand: &str) -> Option<&'static str> {
    match subcommand {
        "colloid" | "figure4" => Some("colloid"),
        "figure1" | "figure2" | "figure3" | "figure5" | "figure6" => Some("double_well"),
        _ => None,
    }
}

/// Parses `subcommand [key=value | --desk | --config FILE]...`. The config
/// file is applied first, flags override it; a key repeated among the
/// flags (or within the file) keeps its last value with a warning.
pub fn parse_config(args: &[String]) -> Result<RunSpec> {
    let sub = args.first().ok_or_else(|| {
        Error::usage(format!("missing subcommand; one of: {}", SUBCOMMANDS.join(", ")))
    })?;
    if !SUBCOMMANDS.contains(&sub.as_str()) {
        return Err(Error::usage(format!(
            "unknown subcommand '{sub}'; one of: {}",
            SUBCOMMANDS.join(", ")
        )));
    }
    let mut desk = false;
    let mut config_path: Option<String> = None;
    let mut flags = Vec::new();
    let mut it = args[1..].iter();
    while let Some(tok) = it.next() {
        match tok.as_str() {
            "--desk" => desk = true,
            "--config" => {
                config_path = Some(
                    it.next().ok_or_else(|| Error::usage("--config needs a file path"))?.clone(),
                )
            }
            _ => {
                let (k, v) = split_pair(tok)
                    .ok_or_else(|| Error::usage(format!("malformed argument '{tok}', expected key=value")))?;
                if k == "config" {
                    config_path = Some(v);
                } else {
                    flags.push((k, v));
                }
            }
        }
    }
    let mut warnings = Vec::new();
    let mut settings = BTreeMap::new();
    let mut layer = |pairs: Vec<(String, String)>, origin: &str, settings: &mut BTreeMap<String, String>| {
        let mut seen = BTreeMap::new();
        for (k, v) in pairs {
            if let Some(prev) = seen.insert(k.clone(), v.clone()) {
                if prev != v {
                    warnings.push(format!(
                        "duplicate {origin} key '{k}': '{prev}' replaced by '{v}' (last wins)"
                    ));
                }
            }
            settings.insert(k, v);
        }
    };
    if let Some(p) = &config_path {
        layer(read_config_file(Path::new(p))?, "config-file", &mut settings);
    }
    layer(flags, "argument", &mut settings);

    let model = settings.get("model").map(String::as_str).or(implied_model(sub));
    let entry = model.and_then(|m| CATALOG.iter().find(|e| e.name == m));
    if let (Some(m), None) = (model, entry) {
        return Err(Error::usage(format!(
            "unknown model '{m}'; catalog: {}",
            crate::potentials::catalog_names()
        )));
    }
    for k in settings.keys() {
        let model_param = entry.is_some_and(|e| e.parameters.iter().any(|p| p.0 == k));
        if !KEYS.contains(&k.as_str()) && !model_param {
            return Err(Error::usage(format!(
                "unknown key '{k}'{}",
                model.map(|m| format!(" for model {m}")).unwrap_or_default()
            )));
        }
    }
    let spec = RunSpec { subcommand: sub.clone(), settings, desk, warnings };
    spec.sweep()?;
    Ok(spec)
}

/// Resolved-setting recorder; every value a run reads ends up in the header.
struct Ctx<'a> {
    spec: &'a RunSpec,
    used: RefCell<BTreeMap<String, String>>,
    notes: RefCell<Vec<String>>,
    overrides: BTreeMap<String, String>,
}

impl<'a> Ctx<'a> {
    fn new(spec: &'a RunSpec) -> Self {
        Ctx { spec, used: RefCell::default(), notes: RefCell::default(), overrides: BTreeMap::new() }
    }

    /// Preset default, applied unless the user gave the key.
    fn preset(&mut self, key: &str, value: impl ToString) {
        self.overrides.insert(key.to_string(), value.to_string());
    }

    fn raw(&self, key: &str) -> Option<String> {
        self.spec.get(key).map(str::to_string).or_else(|| self.overrides.get(key).cloned())
    }

    fn mark(&self, key: &str, value: &str) {
        self.used.borrow_mut().insert(key.to_string(), value.to_string());
    }

    fn note(&self, line: impl Into<String>) {
        self.notes.borrow_mut().push(line.into());
    }

    fn parsed<T: std::str::FromStr + ToString>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            Some(v) => {
                let parsed = v
                    .parse::<T>()
                    .map_err(|_| Error::usage(format!("malformed value for {key}: '{v}'")))?;
                self.mark(key, &v);
                Ok(parsed)
            }
            None => {
                self.mark(key, &default.to_string());
                Ok(default)
            }
        }
    }

    fn f64(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.parsed(key, default)?;
        if !v.is_finite() {
            return Err(Error::usage(format!("{key} must be finite")));
        }
        Ok(v)
    }

    fn usize(&self, key: &str, default: usize) -> Result<usize> {
        self.parsed(key, default)
    }

    fn string(&self, key: &str, default: &str) -> String {
        let v = self.raw(key).unwrap_or_else(|| default.to_string());
        self.mark(key, &v);
        v
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key).as_deref() {
            None => {
                self.mark(key, &default.to_string());
                Ok(default)
            }
            Some(v @ ("true" | "1" | "yes")) => {
                self.mark(key, v);
                Ok(true)
            }
            Some(v @ ("false" | "0" | "no")) => {
                self.mark(key, v);
                Ok(false)
            }
            Some(v) => Err(Error::usage(format!("malformed value for {key}: '{v}'"))),
        }
    }

    fn vector(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        let xs = parse_vector(&v).ok_or_else(|| Error::usage(format!("malformed vector for {key}: '{v}'")))?;
        self.mark(key, &v);
        Ok(Some(xs))
    }

    fn model(&self) -> Result<Model> {
        let name = self
            .raw("model")
            .ok_or_else(|| Error::usage("missing required key 'model'"))?;
        self.mark("model", &name);
        let entry = CATALOG
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::usage(format!("unknown model '{name}'")))?;
        let mut params = BTreeMap::new();
        for (k, default) in entry.parameters {
            params.insert(k.to_string(), self.f64(k, *default)?);
        }
        let model = build_model(&name, &params)?;
        let pert = self.string("perturbation", "default");
        select_perturbation(model, &pert)
    }

    fn header(&self) -> String {
        let mut h = format!("# lsens {VERSION}\n# subcommand={}\n", self.spec.subcommand);
        if self.spec.desk {
            h.push_str("# scale=desk\n");
        }
        for (k, v) in self.used.borrow().iter() {
            if !UNECHOED.contains(&k.as_str()) {
                let _ = writeln!(h, "# {k}={v}");
            }
        }
        for n in self.notes.borrow().iter() {
            let _ = writeln!(h, "# {n}");
        }
        h
    }
}

fn parse_vector(text: &str) -> Option<Vec<f64>> {
    text.split(',').map(|s| s.trim().parse::<f64>().ok().filter(|v| v.is_finite())).collect()
}

/// Default burn-in: long enough for every catalog model to forget its
/// start; the Gaussian model needs much less.
fn default_burn_in(model: &Model) -> f64 {
    if model.name == "ou" {
        10.0
    } else {
        40.0
    }
}

fn parse_init(text: &str, dim: usize) -> Result<InitialCondition> {
    let bad = || Error::usage(format!("malformed init '{text}'"));
    let check = |v: Vec<f64>| if v.len() == dim { Ok(v) } else { Err(bad()) };
    match text.split_once(':') {
        None if text == "default" => Ok(InitialCondition::Default),
        None if text == "equilibrium" => Ok(InitialCondition::Equilibrium),
        Some(("point", rest)) => Ok(InitialCondition::Point(check(parse_vector(rest).ok_or_else(bad)?)?)),
        Some(("gaussian", rest)) => {
            let (mean, sd) = rest.rsplit_once(':').ok_or_else(bad)?;
            let sd: f64 = sd.parse().map_err(|_| bad())?;
            if !(sd >= 0.0) {
                return Err(bad());
            }
            Ok(InitialCondition::Gaussian { mean: check(parse_vector(mean).ok_or_else(bad)?)?, sd })
        }
        _ => Err(bad()),
    }
}

fn sim_config(ctx: &Ctx, model: &Model, t_default: f64, n_default: usize, init_default: &str) -> Result<SimConfig> {
    let dt = ctx.f64("dt", 1e-3)?;
    let t_final = ctx.f64("t_final", t_default)?;
    let n_replicas = ctx.usize("n_replicas", n_default)?;
    let master_seed = ctx.parsed("seed", 0u64)?;
    let burn_in = ctx.f64("burn_in", default_burn_in(model))?;
    let initial_condition = parse_init(&ctx.string("init", init_default), model.dim())?;
    let workers = ctx.usize("workers", 0)?;
    let n_steps = if dt > 0.0 { (t_final / dt).round() as usize } else { 0 };
    let record_stride = ctx.usize("stride", SimConfig::stride_for(n_steps, 1000))?;
    let cfg = SimConfig { dt, t_final, n_replicas, master_seed, burn_in, record_stride, initial_condition, workers };
    cfg.validate()?;
    Ok(cfg)
}

/// Result of one CLI run: the CSV text and the process exit status.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub text: String,
    pub exit_code: i32,
    pub messages: Vec<String>,
}

fn series_csv(series: &[SeriesPoint]) -> String {
    let mut s = String::from("time,estimate,std_error\n");
    for p in series {
        let _ = writeln!(s, "{},{},{}", p.time, p.value, p.std_error);
    }
    s
}

fn estimator_body(ctx: &Ctx, res: &EstimatorResult) -> Result<String> {
    ctx.note(format!("n_diverged={}", res.n_diverged));
    match ctx.string("emit", "summary").as_str() {
        "summary" => Ok(format!("{}\n{}\n", EstimatorResult::SUMMARY_HEADER, res.summary_line())),
        "series" => res
            .series
            .as_deref()
            .map(series_csv)
            .ok_or_else(|| Error::usage(format!("estimator {} has no series", res.estimator))),
        other => Err(Error::usage(format!("emit must be summary or series, got '{other}'"))),
    }
}

/// More than half the replicas lost counts as a divergence-dominated run.
fn divergence_exit(res: &EstimatorResult) -> i32 {
    if res.diverged_fraction() > 0.5 {
        4
    } else {
        0
    }
}

pub fn run(spec: &RunSpec) -> Result<Outcome> {
    let mut ctx = Ctx::new(spec);
    let mut messages = spec.warnings.iter().map(|w| format!("warning: {w}")).collect::<Vec<_>>();
    let (body, exit_code) = dispatch(&mut ctx, &mut messages)?;
    Ok(Outcome { text: ctx.header() + &body, exit_code, messages })
}

fn dispatch(ctx: &mut Ctx, messages: &mut Vec<String>) -> Result<(String, i32)> {
    let sub = ctx.spec.subcommand.clone();
    match sub.as_str() {
        "simulate" => run_simulate(ctx),
        "sensitivity" => run_sensitivity(ctx, messages),
        "greenkubo" => run_greenkubo(ctx, messages),
        "nemd" => run_nemd(ctx, messages),
        "spectral" | "sweep" => run_spectral(ctx),
        "tail" => run_tail(ctx),
        "merge-compare" => run_merge_compare(ctx, false),
        "pair-contraction" => run_pair_contraction(ctx),
        "colloid" => run_colloid(ctx),
        "figure1" => run_figure_sweep(ctx, false),
        "figure2" => run_figure_sweep(ctx, true),
        "figure3" => run_figure3(ctx),
        "figure4" => {
            preset_colloid(ctx);
            run_colloid(ctx)
        }
        "figure5" | "figure6" => {
            ctx.preset("model", "double_well");
            ctx.preset("c", 2.9);
            let (batch, n_batches) = if ctx.spec.desk { (200, 200) } else { (1000, 1000) };
            ctx.preset("batch", batch);
            ctx.preset("n_batches", n_batches);
            run_merge_compare(ctx, sub == "figure6")
        }
        other => Err(Error::usage(format!("unknown subcommand '{other}'"))),
    }
}

fn warn_divergence(res: &EstimatorResult, messages: &mut Vec<String>) {
    if res.n_diverged > 0 {
        messages.push(format!(
            "warning: {} of {} replicas diverged and were excluded",
            res.n_diverged,
            res.n_diverged + res.n_effective
        ));
    }
}

fn run_simulate(ctx: &Ctx) -> Result<(String, i32)> {
    let model = ctx.model()?;
    let cfg = sim_config(ctx, &model, 10.0, 4, "default")?;
    let mut reps = Vec::new();
    for r in 0..cfg.n_replicas as u64 {
        match dynamics::record_states(&cfg, &model, r) {
            Ok(states) => reps.push((r, states)),
            Err(Error::Diverged { replica, time }) => {
                ctx.note(format!("replica {replica} diverged at t={time}"))
            }
            Err(e) => return Err(e),
        }
    }
    let mut buf = Vec::new();
    dynamics::write_trajectory_csv(&mut buf, model.dim(), &reps).expect("in-memory write");
    let exit = if reps.len() * 2 < cfg.n_replicas { 4 } else { 0 };
    Ok((String::from_utf8(buf).expect("utf8 csv"), exit))
}

fn default_observable(model: &Model) -> &'static str {
    if model.name == "colloid" {
        "phi"
    } else {
        "x1"
    }
}

fn run_sensitivity(ctx: &Ctx, messages: &mut Vec<String>) -> Result<(String, i32)> {
    let model = ctx.model()?;
    let obs = build_observable(&ctx.string("observable", default_observable(&model)), model.dim())?;
    let cfg = sim_config(ctx, &model, 10.0, 1000, "default")?;
    let res = match ctx.string("estimator", "ensemble").as_str() {
        "ensemble" => estimators::ensemble_sensitivity(&cfg, &model, obs.as_ref())?,
        "ergodic" => {
            let discard = ctx.f64("discard", estimators::DEFAULT_DISCARD_FRACTION)?;
            estimators::ergodic_sensitivity(&cfg, &model, obs.as_ref(), discard)?
        }
        other => return Err(Error::usage(format!("estimator must be ensemble or ergodic, got '{other}'"))),
    };
    warn_divergence(&res, messages);
    Ok((estimator_body(ctx, &res)?, divergence_exit(&res)))
}

/// `5/η` from the spectral module for one-dimensional models, else 10.
fn default_t_trunc(model: &Model) -> Result<f64> {
    if model.dim() == 1 {
        let eta = poincare_constant(model.potential.as_ref(), model.domain_halfwidth(), DEFAULT_REFINEMENT_TOL)?.eta;
        Ok(5.0 / eta)
    } else {
        Ok(10.0)
    }
}

fn run_greenkubo(ctx: &Ctx, messages: &mut Vec<String>) -> Result<(String, i32)> {
    let model = ctx.model()?;
    let obs = build_observable(&ctx.string("observable", default_observable(&model)), model.dim())?;
    let dt = ctx.f64("dt", 1e-3)?;
    let t_default = (default_t_trunc(&model)? / dt).round() * dt;
    let t_trunc = ctx.f64("t_trunc", t_default)?;
    let cfg = sim_config(ctx, &model, t_trunc, 1000, "equilibrium")?;
    let centered = ctx.flag("centered", true)?;
    let res = estimators::green_kubo_sensitivity(&cfg, &model, obs.as_ref(), t_trunc, centered)?;
    if let Some(tail) = res.truncation_tail {
        ctx.note(format!("truncation_tail={tail}"));
    }
    warn_divergence(&res, messages);
    Ok((estimator_body(ctx, &res)?, divergence_exit(&res)))
}

fn run_nemd(ctx: &Ctx, messages: &mut Vec<String>) -> Result<(String, i32)> {
    let model = ctx.model()?;
    let obs = build_observable(&ctx.string("observable", default_observable(&model)), model.dim())?;
    let cfg = sim_config(ctx, &model, 10.0, 1000, "default")?;
    let eps = ctx.f64("eps", 1e-2)?;
    let discard = ctx.f64("discard", estimators::DEFAULT_DISCARD_FRACTION)?;
    let res = estimators::nemd_finite_difference(&cfg, &model, obs.as_ref(), eps, discard)?;
    warn_divergence(&res, messages);
    Ok((estimator_body(ctx, &res)?, divergence_exit(&res)))
}

fn opt(v: Option<f64>) -> String {
    v.map(|b| b.to_string()).unwrap_or_default()
}

struct SweepSpec {
    param: String,
    values: Vec<f64>,
    beta_moment: f64,
    tol: f64,
}

/// `η`, `ρ`, `β` per swept value of one model parameter.
fn sweep_rows(ctx: &Ctx, sweep: &SweepSpec) -> Result<Vec<(f64, spectral::AssumptionReport)>> {
    let name = ctx.raw("model").ok_or_else(|| Error::usage("missing required key 'model'"))?;
    let entry = CATALOG.iter().find(|e| e.name == name).ok_or_else(|| Error::usage("unknown model"))?;
    if !entry.parameters.iter().any(|p| p.0 == sweep.param) {
        return Err(Error::usage(format!("model {name} has no parameter '{}' to sweep", sweep.param)));
    }
    let mut base = BTreeMap::new();
    for (k, default) in entry.parameters {
        if *k != sweep.param {
            base.insert(k.to_string(), ctx.f64(k, *default)?);
        }
    }
    sweep
        .values
        .iter()
        .map(|&v| {
            let mut params = base.clone();
            params.insert(sweep.param.clone(), v);
            let model = build_model(&name, &params)?;
            if model.dim() != 1 {
                return Err(Error::usage("spectral checks need a one-dimensional model"));
            }
            let pot = model.potential.as_ref();
            let l = model.domain_halfwidth();
            let eta = poincare_constant(pot, l, sweep.tol)?.eta;
            Ok((v, check_with_eta(pot, l, eta, sweep.beta_moment)?))
        })
        .collect()
}

fn run_spectral(ctx: &mut Ctx) -> Result<(String, i32)> {
    let is_sweep = ctx.spec.subcommand == "sweep";
    if is_sweep && ctx.spec.get("sweep").is_none() {
        ctx.preset("sweep", "c:0.1:3:0.1");
        if ctx.spec.get("model").is_none() {
            ctx.preset("model", "double_well");
        }
    }
    let beta_moment = ctx.f64("beta_moment", 1.0)?;
    let tol = ctx.f64("tol", DEFAULT_REFINEMENT_TOL)?;
    if let Some(text) = ctx.raw("sweep") {
        ctx.mark("model", &ctx.raw("model").unwrap_or_default());
        ctx.mark("sweep", &text);
        let sw = Sweep::parse(&text)?;
        let rows = sweep_rows(ctx, &SweepSpec { param: sw.param.clone(), values: sw.values, beta_moment, tol })?;
        let mut out = format!("{},eta,rho,beta\n", sw.param);
        for (v, r) in rows {
            let _ = writeln!(out, "{v},{},{},{}", r.eta, r.rho, opt(r.beta));
        }
        return Ok((out, 0));
    }
    let model = ctx.model()?;
    let pot = model.potential.as_ref();
    if model.dim() != 1 {
        return Err(Error::usage("assumption checks are implemented for one-dimensional models only"));
    }
    let eta = poincare_constant(pot, model.domain_halfwidth(), tol)?.eta;
    let r = check_with_eta(pot, model.domain_halfwidth(), eta, beta_moment)?;
    for n in &r.notes {
        ctx.note(n.clone());
    }
    let beta = r.beta.map(|b| b.to_string()).unwrap_or_else(|| "undefined".into());
    Ok((
        format!(
            "eta={}, rho={}, beta={beta}, inf_phi={}, E={}, Var={}, flags={}\n",
            r.eta,
            r.rho,
            r.inf_phi,
            r.e,
            r.var,
            r.flags()
        ),
        0,
    ))
}

fn run_figure_sweep(ctx: &mut Ctx, exponent: bool) -> Result<(String, i32)> {
    ctx.preset("model", "double_well");
    let text = ctx.string("sweep", "c:0.1:3:0.1");
    let sw = Sweep::parse(&text)?;
    let beta_moment = ctx.f64("beta_moment", 1.0)?;
    let tol = ctx.f64("tol", DEFAULT_REFINEMENT_TOL)?;
    ctx.mark("model", "double_well");
    let rows = sweep_rows(ctx, &SweepSpec { param: sw.param.clone(), values: sw.values, beta_moment, tol })?;
    let mut out = if exponent {
        format!("{},eta,rho,critical_exponent\n", sw.param)
    } else {
        format!("{},eta,rho,beta\n", sw.param)
    };
    for (v, r) in rows {
        if exponent {
            let alpha = if r.rho > 0.0 { r.eta / r.rho } else { f64::INFINITY };
            let _ = writeln!(out, "{v},{},{},{alpha}", r.eta, r.rho);
        } else {
            let _ = writeln!(out, "{v},{},{},{}", r.eta, r.rho, opt(r.beta));
        }
    }
    Ok((out, 0))
}

fn read_samples(path: &str) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::usage(format!("cannot read {path}: {e}")))?;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let first = line.split(',').next().unwrap_or("");
        match first.trim().parse::<f64>() {
            Ok(v) => out.push(v),
            // a single non-numeric header row is allowed
            Err(_) if out.is_empty() => continue,
            Err(_) => return Err(Error::usage(format!("malformed sample '{first}' in {path}"))),
        }
    }
    Ok(out)
}

/// Tangent samples at `t_final` for the tail analysis.
fn tail_samples(ctx: &Ctx, model: &Model, n_default: usize) -> Result<(Vec<f64>, usize)> {
    let dt = ctx.f64("dt", 1e-3)?;
    let t_final = ctx.f64("t_final", 40.0)?;
    let n_steps = (t_final / dt).round().max(1.0) as usize;
    let cfg = SimConfig {
        dt,
        t_final,
        n_replicas: ctx.usize("n_replicas", n_default)?,
        master_seed: ctx.parsed("seed", 0u64)?,
        burn_in: 0.0,
        record_stride: n_steps,
        initial_condition: parse_init(&ctx.string("init", "default"), model.dim())?,
        workers: ctx.usize("workers", 0)?,
    };
    estimators::terminal_tangents(&cfg, model, ctx.usize("component", 0)?)
}

fn fit_range(ctx: &Ctx) -> Result<Option<(f64, f64)>> {
    match (ctx.raw("fit_lo"), ctx.raw("fit_hi")) {
        (None, None) => Ok(None),
        (Some(_), Some(_)) => Ok(Some((ctx.f64("fit_lo", 0.0)?, ctx.f64("fit_hi", 0.0)?))),
        _ => Err(Error::usage("fit_lo and fit_hi must be given together")),
    }
}

fn run_tail(ctx: &Ctx) -> Result<(String, i32)> {
    let (samples, diverged) = match ctx.raw("input") {
        Some(path) => {
            ctx.mark("input", &path);
            (read_samples(&path)?, 0)
        }
        None => {
            let model = ctx.model()?;
            tail_samples(ctx, &model, 100_000)?
        }
    };
    let tail = empirical_tail_cdf(&samples)?;
    let fit = fit_log_slope(&tail, fit_range(ctx)?)?;
    ctx.note(format!("n_diverged={diverged}"));
    ctx.note(format!(
        "fit slope={} slope_se={} intercept={} r_squared={} range={}:{} points={}",
        fit.slope, fit.slope_se, fit.intercept, fit.r_squared, fit.fit_range.0, fit.fit_range.1, fit.n_points
    ));
    ctx.note(fit.interpretation());
    let mut buf = Vec::new();
    tail.write_csv(&mut buf).expect("in-memory write");
    Ok((String::from_utf8(buf).expect("utf8 csv"), if diverged * 2 > samples.len() + diverged { 4 } else { 0 }))
}

fn run_figure3(ctx: &Ctx) -> Result<(String, i32)> {
    let n_default = if ctx.spec.desk { 100_000 } else { 1_000_000 };
    let mut out = String::from("c,x,survival\n");
    let mut exit = 0;
    ctx.mark("model", "double_well");
    for c in [2.0, 3.0, 4.0, 5.0] {
        let model = build_model("double_well", &[("c".to_string(), c)].into_iter().collect())?;
        let (samples, diverged) = tail_samples(ctx, &model, n_default)?;
        if diverged * 2 > samples.len() + diverged {
            exit = 4;
        }
        let tail = empirical_tail_cdf(&samples)?;
        let fit = fit_log_slope(&tail, None)?;
        ctx.note(format!("c={c} slope={} slope_se={} n_diverged={diverged}", fit.slope, fit.slope_se));
        for (x, s) in tail.points() {
            let _ = writeln!(out, "{c},{x},{s}");
        }
    }
    Ok((out, exit))
}

fn run_merge_compare(ctx: &Ctx, variance_view: bool) -> Result<(String, i32)> {
    let model = ctx.model()?;
    let obs = build_observable(&ctx.string("observable", "indicator"), model.dim())?;
    let batch = ctx.usize("batch", 200)?;
    let n_batches = ctx.usize("n_batches", 200)?;
    let mut cfg = sim_config(ctx, &model, 10.0, batch * n_batches, "default")?;
    cfg.n_replicas = batch * n_batches;
    ctx.mark("n_replicas", &cfg.n_replicas.to_string());
    let merge = MergeConfig {
        bin_width: ctx.f64("bin", 0.04)?,
        merge_period_steps: ctx.usize("period", 10)?,
        batch_size: batch,
        enabled: true,
    };
    let cmp = merging::merge_compare(&cfg, &merge, &model, obs.as_ref())?;
    ctx.note(format!("max_abs_tangent_merged={}", cmp.merged.max_abs_tangent));
    let mut out = String::new();
    if variance_view {
        out.push_str("time,var_merged,var_plain,var_ratio\n");
        for r in &cmp.rows {
            let _ = writeln!(out, "{},{},{},{}", r.time, r.se_merged.powi(2), r.se_plain.powi(2), r.var_ratio);
        }
    } else {
        let mut buf = Vec::new();
        merging::write_compare_csv(&mut buf, &cmp.rows).expect("in-memory write");
        out = String::from_utf8(buf).expect("utf8 csv");
    }
    let exit = divergence_exit(&cmp.plain).max(divergence_exit(&cmp.merged.result));
    Ok((out, exit))
}

/// `∫ v dπ₀` for the radial convexity profile of the Mexican hat.
pub fn mexican_hat_mean_convexity(model: &Model) -> Result<f64> {
    let (beta, gamma) = (model.params["beta"], model.params["gamma"]);
    let dim = model.dim();
    let v = |r: f64| beta * (r.powi(4) - gamma * r * r);
    radial_expectation(|r| beta * (4.0 * r * r - 2.0 * gamma), v, dim, model.domain_halfwidth(), 1e-10)
}

fn run_pair_contraction(ctx: &Ctx) -> Result<(String, i32)> {
    let model = ctx.model()?;
    let cfg = sim_config(ctx, &model, 10.0, 100, "default")?;
    let start = model.potential.default_start();
    let shifted = |s: f64| {
        let mut v = start.clone();
        v[0] += s;
        v
    };
    let x = ctx.vector("x")?.unwrap_or_else(|| shifted(1.0));
    let y = ctx.vector("y")?.unwrap_or_else(|| shifted(-1.0));
    let (series, diverged) = analysis::pair_log_separation(&x, &y, &cfg, &model)?;
    if let Ok((slope, se)) = analysis::series_slope(&series, 0.5 * cfg.t_final, cfg.t_final) {
        ctx.note(format!("slope={slope} slope_se={se} window={}:{}", 0.5 * cfg.t_final, cfg.t_final));
    }
    if model.name == "mexican_hat" {
        ctx.note(format!("mean_convexity={}", mexican_hat_mean_convexity(&model)?));
    }
    ctx.note(format!("n_diverged={diverged}"));
    let mut out = String::from("time,mean_log_separation,std_error\n");
    for p in &series {
        let _ = writeln!(out, "{},{},{}", p.time, p.value, p.std_error);
    }
    Ok((out, if diverged * 2 > cfg.n_replicas { 4 } else { 0 }))
}

fn preset_colloid(ctx: &mut Ctx) {
    ctx.preset("model", "colloid");
    if ctx.spec.desk {
        ctx.preset("dt", 1e-4);
        ctx.preset("n_replicas", 2000);
    } else {
        ctx.preset("dt", 1e-5);
        ctx.preset("n_replicas", 100_000);
    }
}

fn run_colloid(ctx: &mut Ctx) -> Result<(String, i32)> {
    if ctx.raw("model").is_none() {
        ctx.preset("model", "colloid");
    }
    if ctx.raw("dt").is_none() {
        ctx.preset("dt", 1e-4);
    }
    ctx.preset("burn_in", 0.5);
    let model = ctx.model()?;
    let obs = build_observable(&ctx.string("observable", "phi"), model.dim())?;
    let cfg = sim_config(ctx, &model, 1.0, 2000, "equilibrium")?;
    let res = estimators::ensemble_sensitivity(&cfg, &model, obs.as_ref())?;
    let rel_tol = ctx.f64("rel_tol", 0.1)?;
    let series = res.series.as_deref().unwrap_or(&[]);
    match plateau_detect(series, rel_tol) {
        Some(p) => ctx.note(format!("plateau value={} onset={}", p.value, p.onset_time)),
        None => ctx.note("plateau none"),
    }
    ctx.note(format!("n_diverged={}", res.n_diverged));
    Ok((series_csv(series), divergence_exit(&res)))
}

/// Parses, runs and writes output; returns the process exit code.
pub fn main_with_args(args: &[String]) -> i32 {
    let outcome = parse_config(args).and_then(|spec| {
        let out = run(&spec)?;
        match spec.get("output") {
            Some(path) => std::fs::write(path, &out.text)
                .map_err(|e| Error::usage(format!("cannot write {path}: {e}")))?,
            None => print!("{}", out.text),
        }
        Ok(out)
    });
    match outcome {
        Ok(out) => {
            for m in &out.messages {
                eprintln!("{m}");
            }
            out.exit_code
        }
        Err(e) => {
            let kind = match e.exit_code() {
                2 => "usage",
                3 => "numeric",
                _ => "divergence",
            };
            eprintln!("error,{kind},{}", e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}
