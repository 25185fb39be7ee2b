//! REG-ADMM and C-ADMM iterations on the split `G = H`, `G ∈ Ω` (or PSD),
//! `H ∈ Θ`, with per-iteration telemetry and an oscillation detector.
//!
//! One step with multiplier `Λ` and penalty `ρ`:
//!
//! ```text
//! G ← Π(H - (C + Λ)/ρ)      Π = Π_Ω (nonconvex) or Π_PSD (convex)
//! H ← Π_Θ(G + Λ/ρ)
//! Λ ← Λ + ρ(G - H)
//! ```

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, diagonal_block_deviation, num_blocks, off_block_norm, same_shape};
use crate::model::DataMatrix;
use crate::proj::{project_omega_with, project_psd_with, project_theta, SpectralDecomposition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// REG-ADMM: G-update projects onto rank-`d` PSD matrices.
    Nonconvex,
    /// C-ADMM: G-update projects onto the PSD cone.
    Convex,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Nonconvex => "nonconvex",
            Variant::Convex => "convex",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nonconvex" | "reg" | "reg-admm" => Ok(Variant::Nonconvex),
            "convex" | "c" | "c-admm" => Ok(Variant::Convex),
            other => Err(Error::InvalidParameter(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rho: f64,
    pub max_iters: usize,
    /// Tolerance on `||G - H||`.
    pub eps_primal: f64,
    /// Tolerance on `||H^{k+1} - H^k||`.
    pub eps_change: f64,
    pub variant: Variant,
    /// When set, a run that hits `max_iters` is classified by
    /// [`detect_oscillation`] and marked [`Termination::Oscillating`] if so.
    #[serde(default)]
    pub oscillation: Option<OscillationConfig>,
}

impl SolverConfig {
    pub const DEFAULT_MAX_ITERS: usize = 5000;

    /// Defaults for an `Md x Md` problem: both tolerances `1e-9 Md`.
    pub fn new(variant: Variant, rho: f64, md: usize) -> Self {
        let eps = 1e-9 * md as f64;
        Self {
            rho,
            max_iters: Self::DEFAULT_MAX_ITERS,
            eps_primal: eps,
            eps_change: eps,
            variant,
            oscillation: None,
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps_primal = eps;
        self.eps_change = eps;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_oscillation(mut self, osc: OscillationConfig) -> Self {
        self.oscillation = Some(osc);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::InvalidParameter(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.eps_primal > 0.0 && self.eps_change > 0.0) {
            return Err(Error::InvalidParameter("tolerances must be positive".into()));
        }
        if let Some(osc) = &self.oscillation {
            osc.validate()?;
        }
        Ok(())
    }
}

/// The ADMM state `(G, H, Λ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramIterate {
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
}

impl GramIterate {
    /// Starts from `H⁰` and `Λ⁰`; `G⁰` is set to `H⁰` and never read by the update.
    pub fn new(h0: DMatrix<f64>, lambda0: DMatrix<f64>) -> Result<Self> {
        same_shape(&h0, &lambda0, "initial H and Lambda")?;
        Ok(Self {
            g: h0.clone(),
            h: h0,
            lambda: lambda0,
        })
    }

    /// `H⁰ = I`, `Λ⁰ = 0`.
    pub fn identity(md: usize) -> Self {
        Self {
            g: DMatrix::identity(md, md),
            h: DMatrix::identity(md, md),
            lambda: DMatrix::zeros(md, md),
        }
    }

    pub fn primal_residual(&self) -> f64 {
        (&self.g - &self.h).norm()
    }

    fn is_finite(&self) -> bool {
        all_finite(&self.g) && all_finite(&self.h) && all_finite(&self.lambda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// `Tr(C G^k)`.
    pub objective: f64,
    /// `||G^k - H^k||`.
    pub primal_residual: f64,
    /// `||Λ^k - Λ^{k-1}||`.
    pub dual_change: f64,
    /// `||H^k - H^{k-1}||`.
    pub h_change: f64,
    /// `λ_{d+1}` (descending) of the G-update argument `H^{k-1} - (C + Λ^{k-1})/ρ`.
    pub arg_lambda_d1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIters,
    Oscillating,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::Converged => "converged",
            Termination::MaxIters => "max_iters",
            Termination::Oscillating => "oscillating",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub records: Vec<IterationRecord>,
    /// `None` while a run is in progress or when it diverged.
    pub termination: Option<Termination>,
    /// Primal tolerance of the run, used by [`detect_oscillation`].
    pub eps_primal: f64,
}

impl SolverTrace {
    /// A trace holding only primal residuals, for feeding [`detect_oscillation`].
    pub fn from_residuals(residuals: &[f64], eps_primal: f64) -> Self {
        let records = residuals
            .iter()
            .enumerate()
            .map(|(k, &r)| IterationRecord {
                iter: k + 1,
                objective: f64::NAN,
                primal_residual: r,
                dual_change: f64::NAN,
                h_change: f64::NAN,
                arg_lambda_d1: f64::NAN,
            })
            .collect();
        Self {
            records,
            termination: None,
            eps_primal,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn primal_residuals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.primal_residual).collect()
    }

    pub const CSV_HEADER: &'static str = "iter,objective,primal_residual,dual_change,h_change";

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.iter, r.objective, r.primal_residual, r.dual_change, r.h_change
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv is ascii")
    }
}

/// The G-update argument `H - (C + Λ)/ρ`.
pub fn update_argument(c: &DMatrix<f64>, h: &DMatrix<f64>, lambda: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    h - (c + lambda) / rho
}

/// One step and the `λ_{d+1}` of its G-update argument.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next: GramIterate,
    pub arg_lambda_d1: f64,
}

/// One ADMM step of either variant.
pub fn admm_step(
    variant: Variant,
    iter: &GramIterate,
    c: &DataMatrix,
    rho: f64,
) -> Result<StepOutcome> {
    let d = c.d();
    let cm = c.matrix();
    same_shape(cm, &iter.h, "C and H")?;
    same_shape(cm, &iter.lambda, "C and Lambda")?;
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
    }
    let arg = update_argument(cm, &iter.h, &iter.lambda, rho);
    if !all_finite(&arg) {
        return Err(diverged(1, SolverTrace::default()));
    }
    let spec = SpectralDecomposition::of(&arg);
    let arg_lambda_d1 = if spec.len() > d { spec.largest(d) } else { f64::NAN };
    let g = match variant {
        Variant::Nonconvex => project_omega_with(&spec, d),
        Variant::Convex => project_psd_with(&spec),
    };
    let h = project_theta(&(&g + &iter.lambda / rho), d)?;
    let lambda = &iter.lambda + (&g - &h) * rho;
    let next = GramIterate { g, h, lambda };
    if !next.is_finite() {
        return Err(diverged(1, SolverTrace::default()));
    }
    Ok(StepOutcome {
        next,
        arg_lambda_d1,
    })
}

/// `G ← Π_Ω(H - ρ⁻¹(C+Λ))`, `H ← Π_Θ(G + ρ⁻¹Λ)`, `Λ ← Λ + ρ(G - H)`.
pub fn reg_admm_step(iter: &GramIterate, c: &DataMatrix, rho: f64) -> Result<GramIterate> {
    admm_step(Variant::Nonconvex, iter, c, rho).map(|s| s.next)
}

/// As [`reg_admm_step`] with the G-update projecting onto the PSD cone.
pub fn c_admm_step(iter: &GramIterate, c: &DataMatrix, rho: f64) -> Result<GramIterate> {
    admm_step(Variant::Convex, iter, c, rho).map(|s| s.next)
}

fn diverged(iteration: usize, trace: SolverTrace) -> Error {
    Error::Diverged {
        iteration,
        trace: Box::new(trace),
    }
}

/// Iterates from `(H⁰, Λ⁰)` (defaults `I` and `0`) until `||G - H|| ≤ eps_primal`
/// and `||H^{k+1} - H^k|| ≤ eps_change`, or `max_iters` steps.
pub fn run(
    c: &DataMatrix,
    config: &SolverConfig,
    h0: Option<&DMatrix<f64>>,
    lambda0: Option<&DMatrix<f64>>,
) -> Result<(GramIterate, SolverTrace)> {
    run_with(c, config, h0, lambda0, |_, _| {})
}

/// [`run`] with a callback invoked after every step with the iteration number
/// and the new iterate.
pub fn run_with(
    c: &DataMatrix,
    config: &SolverConfig,
    h0: Option<&DMatrix<f64>>,
    lambda0: Option<&DMatrix<f64>>,
    mut observe: impl FnMut(usize, &GramIterate),
) -> Result<(GramIterate, SolverTrace)> {
    config.validate()?;
    let d = c.d();
    let md = c.size();
    let h0 = h0.cloned().unwrap_or_else(|| DMatrix::identity(md, md));
    let lambda0 = lambda0.cloned().unwrap_or_else(|| DMatrix::zeros(md, md));
    same_shape(c.matrix(), &h0, "C and H0")?;
    same_shape(c.matrix(), &lambda0, "C and Lambda0")?;
    num_blocks(&h0, d)?;
    if !all_finite(&h0) || !all_finite(&lambda0) {
        return Err(Error::NonFinite("initial iterate".into()));
    }
    if diagonal_block_deviation(&h0, d) > 1e-9 {
        log::warn!("H0 is not in Theta (diagonal blocks differ from the identity)");
    }
    let block_diagonal_dual = off_block_norm(&lambda0, d) <= 1e-12 * (1.0 + lambda0.norm());

    let mut iter = GramIterate::new(h0, lambda0)?;
    let mut trace = SolverTrace {
        records: Vec::new(),
        termination: None,
        eps_primal: config.eps_primal,
    };
    for k in 1..=config.max_iters {
        let step = match admm_step(config.variant, &iter, c, config.rho) {
            Ok(s) => s,
            Err(Error::Diverged { .. }) => return Err(diverged(k, trace)),
            Err(e) => return Err(e),
        };
        let next = step.next;
        if cfg!(debug_assertions) && block_diagonal_dual {
            debug_check_block_structure(&next, d, config.rho);
        }
        let record = IterationRecord {
            iter: k,
            objective: c.matrix().component_mul(&next.g).sum(),
            primal_residual: next.primal_residual(),
            dual_change: (&next.lambda - &iter.lambda).norm(),
            h_change: (&next.h - &iter.h).norm(),
            arg_lambda_d1: step.arg_lambda_d1,
        };
        trace.records.push(record);
        iter = next;
        observe(k, &iter);
        if record.primal_residual <= config.eps_primal && record.h_change <= config.eps_change {
            trace.termination = Some(Termination::Converged);
            return Ok((iter, trace));
        }
    }
    let mut termination = Termination::MaxIters;
    if let Some(osc) = &config.oscillation {
        if trace.len() >= 2 * osc.window
            && detect_oscillation(&trace, osc.window, osc.ratio_tol)? == Verdict::Oscillating
        {
            termination = Termination::Oscillating;
        }
    }
    trace.termination = Some(termination);
    Ok((iter, trace))
}

/// With a block-diagonal multiplier the off-diagonal blocks of `Λ` stay zero
/// and the H-update reduces to `Π_Θ(G)`.
fn debug_check_block_structure(it: &GramIterate, d: usize, rho: f64) {
    let scale = 1.0 + it.lambda.norm();
    let off = off_block_norm(&it.lambda, d);
    debug_assert!(
        off <= 1e-10 * scale,
        "multiplier lost block-diagonal structure: off-block norm {off:e}"
    );
    let reduced = project_theta(&it.g, d).expect("shape checked");
    let gap = (&reduced - &it.h).norm();
    debug_assert!(
        gap <= 1e-9 * (1.0 + it.h.norm() + scale / rho),
        "H-update differs from Pi_Theta(G) by {gap:e}"
    );
}

/// Thresholds for [`detect_oscillation`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillationConfig {
    pub window: usize,
    pub ratio_tol: f64,
}

impl Default for OscillationConfig {
    fn default() -> Self {
        Self {
            window: 50,
            ratio_tol: 10.0,
        }
    }
}

impl OscillationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::InvalidParameter("oscillation window must be at least 2".into()));
        }
        if self.ratio_tol.is_nan() || self.ratio_tol <= 0.0 {
            return Err(Error::InvalidParameter("ratio_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Converging,
    Oscillating,
    Undecided,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Converging => "converging",
            Verdict::Oscillating => "oscillating",
            Verdict::Undecided => "undecided",
        })
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Classifies the primal-residual history by comparing the trailing window
/// with the window before it.
///
/// * converging: the trailing window is entirely below `eps_primal`, or its
///   mean dropped by at least a factor 10 from the previous window;
/// * oscillating: every trailing residual stays above `ratio_tol · eps_primal`
///   while neither the mean nor the variance fell below half of the previous
///   window's;
/// * undecided otherwise.
pub fn detect_oscillation(trace: &SolverTrace, window: usize, ratio_tol: f64) -> Result<Verdict> {
    OscillationConfig { window, ratio_tol }.validate()?;
    let r = trace.primal_residuals();
    if r.len() < 2 * window {
        return Err(Error::TraceTooShort {
            needed: 2 * window,
            have: r.len(),
        });
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("primal residual in trace".into()));
    }
    let tail = &r[r.len() - window..];
    let prev = &r[r.len() - 2 * window..r.len() - window];
    let eps = trace.eps_primal;
    let tail_max = tail.iter().copied().fold(0.0, f64::max);
    let tail_min = tail.iter().copied().fold(f64::INFINITY, f64::min);
    let (m_tail, m_prev) = (mean(tail), mean(prev));
    if tail_max <= eps || m_tail <= 0.1 * m_prev {
        return Ok(Verdict::Converging);
    }
    if tail_min > ratio_tol * eps
        && m_tail >= 0.5 * m_prev
        && variance(tail) >= 0.5 * variance(prev)
    {
        return Ok(Verdict::Oscillating);
    }
    Ok(Verdict::Undecided)
}
