//! Seeded parameter sweeps over noise level and penalty `ρ`.
//!
//! Cells run in parallel; rows come back in cell order so identical
//! configurations produce byte-identical CSV.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostics::{
    clean_rho_bound, fixed_point_residual, kkt_check_csdp, kkt_residual_oreg, rank_estimate,
    stability_delta_bound, tightness_eta,
};
use crate::error::{Error, Result};
use crate::model::{
    build_clean_data_matrix, build_data_matrix, generate_instance, ground_truth_gram,
    random_feasible_gram, InstanceSpec, PatchScheme,
};
use crate::solver::{
    detect_oscillation, run, OscillationConfig, SolverConfig, Termination, Variant, Verdict,
};

/// Seed of stream `index` under `base`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index);
    rng.next_u64()
}

const INIT_STREAM: u64 = 0x1_0000;

/// Seed of the random initial Gram matrix used with an instance seed.
pub fn init_seed(instance_seed: u64) -> u64 {
    derive_seed(instance_seed, INIT_STREAM)
}

/// Starting point `H⁰` of a run (`Λ⁰ = 0` always).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Identity,
    /// Gram matrix of random orthogonal blocks seeded by [`init_seed`].
    Random,
}

impl InitKind {
    pub fn matrix(&self, m: usize, d: usize, instance_seed: u64) -> DMatrix<f64> {
        match self {
            InitKind::Identity => DMatrix::identity(m * d, m * d),
            InitKind::Random => random_feasible_gram(m, d, init_seed(instance_seed)),
        }
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitKind::Identity => "identity",
            InitKind::Random => "random",
        })
    }
}

impl FromStr for InitKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(InitKind::Identity),
            "random" => Ok(InitKind::Random),
            other => Err(Error::Parse(format!("unknown init '{other}'"))),
        }
    }
}

/// A grid entry for `ρ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoSpec {
    Value(f64),
    /// The clean-data guarantee `clean_rho_bound(C0, H⁰)`.
    Auto,
}

impl FromStr for RhoSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(RhoSpec::Auto);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::Parse(format!("invalid rho '{s}'")))?;
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Parse(format!("rho must be positive, got {s}")));
        }
        Ok(RhoSpec::Value(v))
    }
}

impl fmt::Display for RhoSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RhoSpec::Value(v) => write!(f, "{v}"),
            RhoSpec::Auto => f.write_str("auto"),
        }
    }
}

/// Parses `all_nodes` or `chained:<overlap>`.
pub fn parse_scheme(s: &str) -> Result<PatchScheme> {
    if s == "all_nodes" {
        return Ok(PatchScheme::AllNodes);
    }
    if let Some(c) = s.strip_prefix("chained:") {
        let overlap = c
            .parse()
            .map_err(|_| Error::Parse(format!("invalid overlap in '{s}'")))?;
        return Ok(PatchScheme::ChainedOverlap { overlap });
    }
    Err(Error::Parse(format!("unknown patch scheme '{s}'")))
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Parse(format!("invalid {what} entry '{t}'")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub scheme: PatchScheme,
    pub sigma_grid: Vec<f64>,
    pub rho_grid: Vec<RhoSpec>,
    pub trials_per_cell: usize,
    pub seed: u64,
    /// Iteration cap for REG-ADMM cells.
    pub max_iters: usize,
    /// Tolerance for REG-ADMM cells; `None` uses the solver default `1e-9 Md`.
    pub eps: Option<f64>,
    pub init: InitKind,
    pub oscillation: OscillationConfig,
    /// Penalty of the C-ADMM reference runs in the noise sweep.
    pub reference_rho: f64,
    pub reference_max_iters: usize,
    pub reference_eps: f64,
    pub out: Option<PathBuf>,
}

impl Default for SweepConfig {
    /// Ten nodes in the plane, three all-node patches.
    fn default() -> Self {
        Self {
            d: 2,
            n: 10,
            m: 3,
            scheme: PatchScheme::AllNodes,
            sigma_grid: vec![0.0],
            rho_grid: vec![RhoSpec::Auto],
            trials_per_cell: 1,
            seed: 0,
            max_iters: SolverConfig::DEFAULT_MAX_ITERS,
            eps: None,
            init: InitKind::Identity,
            oscillation: OscillationConfig::default(),
            reference_rho: 1.0,
            reference_max_iters: 50_000,
            reference_eps: 1e-10,
            out: None,
        }
    }
}

impl SweepConfig {
    /// Reads `key = value` lines over the defaults. `#` starts a comment;
    /// list values are comma separated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Parse(format!("invalid value '{v}' for {key}")))
        }
        match key {
            "d" => self.d = num(key, value)?,
            "n" | "N" => self.n = num(key, value)?,
            "m" | "M" => self.m = num(key, value)?,
            "scheme" => self.scheme = parse_scheme(value)?,
            "sigma" => self.sigma_grid = parse_list(value, "sigma")?,
            "rho" => self.rho_grid = parse_list(value, "rho")?,
            "trials" => self.trials_per_cell = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "max_iters" => self.max_iters = num(key, value)?,
            "eps" => self.eps = Some(num(key, value)?),
            "init" => self.init = value.parse()?,
            "window" => self.oscillation.window = num(key, value)?,
            "ratio_tol" => self.oscillation.ratio_tol = num(key, value)?,
            "reference_rho" => self.reference_rho = num(key, value)?,
            "reference_max_iters" => self.reference_max_iters = num(key, value)?,
            "reference_eps" => self.reference_eps = num(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            other => return Err(Error::Parse(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_grid.is_empty() || self.rho_grid.is_empty() {
            return Err(Error::InvalidParameter("sigma and rho grids must be nonempty".into()));
        }
        if self.trials_per_cell == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        if self.sigma_grid.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidParameter("sigma values must be finite and nonnegative".into()));
        }
        if let Some(eps) = self.eps {
            if eps.is_nan() || eps <= 0.0 {
                return Err(Error::InvalidParameter("eps must be positive".into()));
            }
        }
        self.oscillation.validate()?;
        Ok(())
    }

    /// Instance seed of a trial. It does not depend on `σ`, so each trial
    /// shares geometry (and noise direction) across the noise grid.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        derive_seed(self.seed, trial as u64)
    }

    fn instance_spec(&self, sigma: f64, seed: u64) -> InstanceSpec {
        InstanceSpec {
            d: self.d,
            n: self.n,
            m: self.m,
            scheme: self.scheme,
            sigma,
            seed,
        }
    }
}

/// One row of the noise sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseRow {
    pub sigma: f64,
    pub trial: usize,
    pub seed: u64,
    pub w_norm: Option<f64>,
    pub eta: Option<f64>,
    pub below_eta: Option<bool>,
    pub rank: Option<usize>,
    pub rank_ratio: Option<f64>,
    pub delta_norm: Option<f64>,
    pub delta_bound: Option<f64>,
    pub iterations: Option<usize>,
    pub termination: Option<String>,
    pub kkt_csdp_passed: Option<bool>,
    pub error: Option<String>,
}

fn noise_cell(cfg: &SweepConfig, sigma: f64, trial: usize) -> NoiseRow {
    let seed = cfg.trial_seed(trial);
    let mut row = NoiseRow {
        sigma,
        trial,
        seed,
        w_norm: None,
        eta: None,
        below_eta: None,
        rank: None,
        rank_ratio: None,
        delta_norm: None,
        delta_bound: None,
        iterations: None,
        termination: None,
        kkt_csdp_passed: None,
        error: None,
    };
    let mut body = || -> Result<()> {
        let inst = generate_instance(&cfg.instance_spec(sigma, seed))?;
        let c = build_data_matrix(&inst)?;
        let c0 = build_clean_data_matrix(&inst)?;
        let g0 = ground_truth_gram(&inst)?.into_matrix();
        let w = c.matrix() - c0.matrix();
        let eta = tightness_eta(&c0)?;
        row.w_norm = Some(w.norm());
        row.eta = Some(eta);
        row.below_eta = Some(w.norm() < eta);
        row.delta_bound = Some(stability_delta_bound(&c0, &w)?);
        let sc = SolverConfig::new(Variant::Convex, cfg.reference_rho, c.size())
            .with_eps(cfg.reference_eps)
            .with_max_iters(cfg.reference_max_iters);
        let (it, trace) = run(&c, &sc, None, None)?;
        let rank = rank_estimate(&it.g, inst.d)?;
        row.rank = Some(rank.rank);
        row.rank_ratio = Some(rank.rank_ratio);
        row.delta_norm = Some((&it.g - &g0).norm());
        row.iterations = Some(trace.len());
        row.termination = trace.termination.map(|t| t.to_string());
        row.kkt_csdp_passed = Some(kkt_check_csdp(&c, &it.g, &it.lambda, 1e-6)?.passed);
        Ok(())
    };
    if let Err(e) = body() {
        row.error = Some(e.to_string());
        if matches!(e, Error::Diverged { .. }) {
            row.termination = Some("diverged".into());
        }
    }
    row
}

/// For each `(σ, trial)`: solve the convex relaxation with a long C-ADMM run
/// and record `||W||`, `η`, the numerical rank of `G*`, and `||G* - G0||`
/// against its bound.
pub fn sweep_noise(cfg: &SweepConfig) -> Result<Vec<NoiseRow>> {
    cfg.validate()?;
    let cells: Vec<(f64, usize)> = cfg
        .sigma_grid
        .iter()
        .flat_map(|&s| (0..cfg.trials_per_cell).map(move |t| (s, t)))
        .collect();
    Ok(cells
        .par_iter()
        .map(|&(s, t)| noise_cell(cfg, s, t))
        .collect())
}

/// One row of the `ρ` sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhoRow {
    pub sigma: f64,
    pub rho: Option<f64>,
    pub rho_spec: String,
    pub trial: usize,
    pub seed: u64,
    pub init: String,
    pub iterations: Option<usize>,
    pub termination: Option<String>,
    pub verdict: Option<String>,
    /// `Tr(C G)` at the last iterate.
    pub objective: Option<f64>,
    /// `Tr(C)`, the objective at `G = I`.
    pub trace_c: Option<f64>,
    pub primal_residual: Option<f64>,
    pub fixed_point_residual: Option<f64>,
    pub kkt_oreg_residual: Option<f64>,
    pub error: Option<String>,
}

fn rho_cell(cfg: &SweepConfig, sigma: f64, rho: RhoSpec, trial: usize) -> RhoRow {
    let seed = cfg.trial_seed(trial);
    let mut row = RhoRow {
        sigma,
        rho: None,
        rho_spec: rho.to_string(),
        trial,
        seed,
        init: cfg.init.to_string(),
        iterations: None,
        termination: None,
        verdict: None,
        objective: None,
        trace_c: None,
        primal_residual: None,
        fixed_point_residual: None,
        kkt_oreg_residual: None,
        error: None,
    };
    let mut body = || -> Result<()> {
        let inst = generate_instance(&cfg.instance_spec(sigma, seed))?;
        let c = build_data_matrix(&inst)?;
        let h0 = cfg.init.matrix(inst.m, inst.d, seed);
        let rho = match rho {
            RhoSpec::Value(v) => v,
            RhoSpec::Auto => clean_rho_bound(&build_clean_data_matrix(&inst)?, &h0)?,
        };
        row.rho = Some(rho);
        row.trace_c = Some(c.matrix().trace());
        let mut sc = SolverConfig::new(Variant::Nonconvex, rho, c.size())
            .with_max_iters(cfg.max_iters);
        if let Some(eps) = cfg.eps {
            sc = sc.with_eps(eps);
        }
        let (it, trace) = run(&c, &sc, Some(&h0), None)?;
        let last = trace.last().copied();
        row.iterations = Some(trace.len());
        row.termination = trace.termination.map(|t| t.to_string());
        row.objective = last.map(|r| r.objective);
        row.primal_residual = last.map(|r| r.primal_residual);
        let verdict = if trace.termination == Some(Termination::Converged) {
            Verdict::Converging
        } else if trace.len() >= 2 * cfg.oscillation.window {
            detect_oscillation(&trace, cfg.oscillation.window, cfg.oscillation.ratio_tol)?
        } else {
            Verdict::Undecided
        };
        row.verdict = Some(verdict.to_string());
        row.fixed_point_residual = Some(fixed_point_residual(&c, &it.h, &it.lambda)?);
        row.kkt_oreg_residual = Some(kkt_residual_oreg(&c, &it.h)?);
        Ok(())
    };
    if let Err(e) = body() {
        row.error = Some(e.to_string());
        if matches!(e, Error::Diverged { .. }) {
            row.termination = Some("diverged".into());
        }
    }
    row
}

/// For each `(σ, ρ, trial)`: run REG-ADMM from the configured start and record
/// the final objective, the convergence verdict and the residuals.
pub fn sweep_rho(cfg: &SweepConfig) -> Result<Vec<RhoRow>> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for &s in &cfg.sigma_grid {
        for &r in &cfg.rho_grid {
            for t in 0..cfg.trials_per_cell {
                cells.push((s, r, t));
            }
        }
    }
    Ok(cells
        .par_iter()
        .map(|&(s, r, t)| rho_cell(cfg, s, r, t))
        .collect())
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
}
