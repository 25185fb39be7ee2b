//! Optimality certificates, thresholds and spectrum checks for Gram solutions.
//!
//! Eigenvalue conventions: `λ_{d+1}(C0)` and `λ_{d+1}(C+Λ)` count from the
//! bottom of the spectrum (the first eigenvalue past the `d`-dimensional
//! nullspace); ranks of Gram matrices count from the top.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    block, diagonal_block_deviation, num_blocks, off_block_norm, same_shape, set_block,
    spectral_norm, symmetrize,
};
use crate::model::{
    build_clean_data_matrix, build_data_matrix, ground_truth_gram, DataMatrix,
    RegistrationInstance,
};
use crate::proj::SpectralDecomposition;
use crate::solver::{run_with, update_argument, GramIterate, SolverConfig, SolverTrace};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// `λ_{d+1} ≤ RANK_GAP · λ_d` declares rank `d`.
pub const RANK_GAP: f64 = 1e-6;

/// Relative size (against `λ_max(C0)`) below which an eigenvalue of `C0` is zero.
pub const NULLITY_TOL: f64 = 1e-9;

/// Guards the denominators of the relative residuals.
const REL_EPS: f64 = 1e-300;

fn check_block_diagonal(lambda: &DMatrix<f64>, d: usize) -> Result<()> {
    let off = off_block_norm(lambda, d);
    if off > 1e-9 * (1.0 + lambda.norm()) {
        return Err(Error::ContractViolation(format!(
            "multiplier is not block diagonal (off-block norm {off:e})"
        )));
    }
    Ok(())
}

/// KKT residual of the orthogonal registration problem:
/// `max_i ||[G]_ii - I|| + max_i ||[CG]_ii - [CG]_iiᵀ||`.
pub fn kkt_residual_oreg(c: &DataMatrix, g: &DMatrix<f64>) -> Result<f64> {
    let d = c.d();
    same_shape(c.matrix(), g, "C and G")?;
    let m = num_blocks(g, d)?;
    let cg = c.matrix() * g;
    let sym = (0..m)
        .map(|i| {
            let b = block(&cg, d, i, i);
            (&b - b.transpose()).norm()
        })
        .fold(0.0, f64::max);
    Ok(diagonal_block_deviation(g, d) + sym)
}

/// Closed-form dual: block diagonal with `[Λ]_ii = -sym([CG]_ii)`.
pub fn dual_from_primal(c: &DataMatrix, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = c.d();
    same_shape(c.matrix(), g, "C and G")?;
    let m = num_blocks(g, d)?;
    let cg = c.matrix() * g;
    let mut lambda = DMatrix::zeros(g.nrows(), g.ncols());
    for i in 0..m {
        set_block(&mut lambda, d, i, i, &(-symmetrize(&block(&cg, d, i, i))));
    }
    Ok(lambda)
}

/// Residuals of the convex-relaxation optimality conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsdpKkt {
    /// `max_i ||[G]_ii - I||` plus `(-λ_min(G))⁺`.
    pub primal_feasibility: f64,
    /// `(-λ_min(C+Λ))⁺`.
    pub dual_infeasibility: f64,
    /// `||(C+Λ)G|| / (||C+Λ|| ||G|| + ε)`.
    pub complementarity: f64,
    pub passed: bool,
}

pub fn kkt_check_csdp(
    c: &DataMatrix,
    g: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    tol: f64,
) -> Result<CsdpKkt> {
    let d = c.d();
    same_shape(c.matrix(), g, "C and G")?;
    same_shape(c.matrix(), lambda, "C and Lambda")?;
    num_blocks(g, d)?;
    check_block_diagonal(lambda, d)?;
    let g_min = SpectralDecomposition::of(g).min();
    let primal_feasibility = diagonal_block_deviation(g, d) + (-g_min).max(0.0);
    let s = c.matrix() + lambda;
    let dual_infeasibility = (-SpectralDecomposition::of(&s).min()).max(0.0);
    let complementarity = (&s * g).norm() / (s.norm() * g.norm() + REL_EPS);
    let passed = primal_feasibility <= tol && dual_infeasibility <= tol && complementarity <= tol;
    Ok(CsdpKkt {
        primal_feasibility,
        dual_infeasibility,
        complementarity,
        passed,
    })
}

/// `λ_{d+1}(C0)`, the smallest eigenvalue past the `d`-dimensional nullspace.
/// Fails unless the nullity of `C0` is exactly `d`.
pub fn clean_spectral_gap(c0: &DataMatrix) -> Result<f64> {
    let d = c0.d();
    let s = c0.spectrum();
    if s.len() <= d {
        return Err(Error::IllPosed(format!(
            "data matrix of size {} has no eigenvalue past a {d}-dimensional nullspace",
            s.len()
        )));
    }
    let tol = NULLITY_TOL * s.max().abs().max(f64::MIN_POSITIVE);
    let gap = s.smallest(d);
    if gap <= tol {
        return Err(Error::IllPosed(format!(
            "lambda_(d+1)(C0) = {gap:e} vanishes; nullity exceeds d (patches not rigidly connected)"
        )));
    }
    if s.smallest(d - 1) > tol {
        return Err(Error::IllPosed(format!(
            "lambda_d(C0) = {:e} is not zero; C0 is not a clean data matrix",
            s.smallest(d - 1)
        )));
    }
    Ok(gap)
}

/// Noise level below which the convex relaxation is tight:
/// `η = λ_{d+1}(C0) / (1 + M√d + 2M||C0|| / λ_{d+1}(C0))`.
pub fn tightness_eta(c0: &DataMatrix) -> Result<f64> {
    let gap = clean_spectral_gap(c0)?;
    let m = c0.num_patches() as f64;
    let d = c0.d() as f64;
    Ok(gap / (1.0 + m * d.sqrt() + 2.0 * m * c0.matrix().norm() / gap))
}

/// `||G* - G0|| ≤ 2M||W|| / λ_{d+1}(C0)` with `W = C - C0`.
pub fn stability_delta_bound(c0: &DataMatrix, w: &DMatrix<f64>) -> Result<f64> {
    same_shape(c0.matrix(), w, "C0 and W")?;
    let gap = clean_spectral_gap(c0)?;
    Ok(2.0 * c0.num_patches() as f64 * w.norm() / gap)
}

/// Largest `ρ` for which REG-ADMM on clean data from `(H0, Λ⁰ = 0)` is
/// guaranteed to reach the global optimum:
/// `λ_{d+1}(C0) / √(||H0||² + 2M√d||H0|| + M²d)`.
pub fn clean_rho_bound(c0: &DataMatrix, h0: &DMatrix<f64>) -> Result<f64> {
    same_shape(c0.matrix(), h0, "C0 and H0")?;
    let gap = clean_spectral_gap(c0)?;
    let m = c0.num_patches() as f64;
    let d = c0.d() as f64;
    let hn = h0.norm();
    Ok(gap / (hn * hn + 2.0 * m * d.sqrt() * hn + m * m * d).sqrt())
}

/// Outcome of the low-noise ball condition
/// `||H⁰-G*||² + ρ⁻²||Λ⁰-Λ*||² ≤ ρ⁻² λ²_{d+1}(C+Λ*)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallCheck {
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`; nonnegative exactly when the check passes.
    pub margin: f64,
    pub passed: bool,
}

/// Radius² of the ball, `ρ⁻² λ²_{d+1}(C+Λ*)`, after checking that
/// `(G*, Λ*)` is a tight certified optimum.
pub fn ball_radius_squared(
    c: &DataMatrix,
    gstar: &DMatrix<f64>,
    lambdastar: &DMatrix<f64>,
    rho: f64,
) -> Result<f64> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
    }
    let d = c.d();
    let rank = rank_estimate(gstar, d)?;
    if rank.rank != d {
        return Err(Error::ContractViolation(format!(
            "relaxation is not tight (rank ratio {:e}); the ball check does not apply",
            rank.rank_ratio
        )));
    }
    let kkt = kkt_check_csdp(c, gstar, lambdastar, 1e-6)?;
    if !kkt.passed {
        return Err(Error::ContractViolation(format!(
            "(G*, Lambda*) is not a certified optimum: {kkt:?}"
        )));
    }
    let s = SpectralDecomposition::of(&(c.matrix() + lambdastar));
    let gap = s.smallest(d);
    Ok(gap * gap / (rho * rho))
}

pub fn low_noise_ball_check(
    h0: &DMatrix<f64>,
    lambda0: &DMatrix<f64>,
    gstar: &DMatrix<f64>,
    lambdastar: &DMatrix<f64>,
    c: &DataMatrix,
    rho: f64,
) -> Result<BallCheck> {
    same_shape(c.matrix(), h0, "C and H0")?;
    same_shape(c.matrix(), lambda0, "C and Lambda0")?;
    same_shape(c.matrix(), gstar, "C and G*")?;
    same_shape(c.matrix(), lambdastar, "C and Lambda*")?;
    let rhs = ball_radius_squared(c, gstar, lambdastar, rho)?;
    let lhs = (h0 - gstar).norm_squared() + (lambda0 - lambdastar).norm_squared() / (rho * rho);
    Ok(BallCheck {
        lhs,
        rhs,
        margin: rhs - lhs,
        passed: lhs <= rhs,
    })
}

/// `||(C+Λ)H|| / (||C+Λ|| ||H|| + ε)`; zero exactly at fixed points of REG-ADMM.
pub fn fixed_point_residual(c: &DataMatrix, h: &DMatrix<f64>, lambda: &DMatrix<f64>) -> Result<f64> {
    same_shape(c.matrix(), h, "C and H")?;
    same_shape(c.matrix(), lambda, "C and Lambda")?;
    let s = c.matrix() + lambda;
    Ok((&s * h).norm() / (s.norm() * h.norm() + REL_EPS))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstabilityThreshold {
    /// `max(0, -λ_min(C+Λ0))`.
    pub mu_squared: f64,
    /// `μ²/M`: below this `ρ` a rank-`d` candidate fixed point cannot persist.
    pub rho_threshold: f64,
}

pub fn instability_threshold(
    c: &DataMatrix,
    lambda0: &DMatrix<f64>,
    m: usize,
) -> Result<InstabilityThreshold> {
    same_shape(c.matrix(), lambda0, "C and Lambda0")?;
    if m == 0 {
        return Err(Error::InvalidParameter("M must be positive".into()));
    }
    check_block_diagonal(lambda0, c.d())?;
    let mu_squared = (-SpectralDecomposition::of(&(c.matrix() + lambda0)).min()).max(0.0);
    Ok(InstabilityThreshold {
        mu_squared,
        rho_threshold: mu_squared / m as f64,
    })
}

/// Numerical rank of a Gram matrix from the top of its spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankEstimate {
    /// Eigenvalues above `RANK_GAP · λ_1`, clamped to `[d, Md]`.
    pub rank: usize,
    /// `λ_{d+1}⁺ / λ_d`; rank `d` is declared when this is at most `RANK_GAP`.
    pub rank_ratio: f64,
    /// `λ_d` and `λ_{d+1}` coincide to relative `1e-9`, so the top-`d`
    /// eigenspace is not well defined.
    pub degenerate_tie: bool,
}

pub fn rank_estimate(g: &DMatrix<f64>, d: usize) -> Result<RankEstimate> {
    let m = num_blocks(g, d)?;
    let s = SpectralDecomposition::of(g);
    let md = m * d;
    let lam_d = s.largest(d - 1);
    let lam_d1 = if md > d { s.largest(d).max(0.0) } else { 0.0 };
    let rank_ratio = if lam_d > 0.0 { lam_d1 / lam_d } else { f64::INFINITY };
    let top = s.max();
    let counted = s.values.iter().filter(|&&v| v > RANK_GAP * top).count();
    let rank = if rank_ratio <= RANK_GAP { d } else { counted.clamp(d + 1, md.max(d + 1)).min(md) };
    let degenerate_tie = md > d && (lam_d - s.largest(d)).abs() <= 1e-9 * top.abs().max(1.0);
    Ok(RankEstimate {
        rank,
        rank_ratio,
        degenerate_tie,
    })
}

/// Spectral facts every feasible Gram matrix satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GramSpectrumCheck {
    /// `λ_d(G) > 0`.
    pub rank_at_least_d: bool,
    /// Largest top singular value over all blocks; at most one.
    pub max_block_sigma: f64,
    pub blocks_bounded: bool,
    /// For rank-`d` matrices, whether every nonzero eigenvalue equals `M`.
    /// `None` when the rank exceeds `d`.
    pub nonzero_eigenvalues_equal_m: Option<bool>,
    pub passed: bool,
}

pub fn gram_spectrum_checks(g: &DMatrix<f64>, m: usize, d: usize) -> Result<GramSpectrumCheck> {
    let blocks = num_blocks(g, d)?;
    if blocks != m {
        return Err(Error::DimensionMismatch(format!(
            "expected {m} blocks of size {d}, got {blocks}"
        )));
    }
    let dev = diagonal_block_deviation(g, d);
    if dev > 1e-8 {
        return Err(Error::ContractViolation(format!(
            "diagonal blocks differ from the identity by {dev:e}"
        )));
    }
    let s = SpectralDecomposition::of(g);
    let rank_at_least_d = s.largest(d - 1) > 1e-8;
    let mut max_block_sigma: f64 = 0.0;
    for i in 0..m {
        for j in 0..m {
            max_block_sigma = max_block_sigma.max(spectral_norm(&block(g, d, i, j)));
        }
    }
    let blocks_bounded = max_block_sigma <= 1.0 + 1e-8;
    let nonzero_eigenvalues_equal_m = if rank_estimate(g, d)?.rank == d {
        Some((0..d).all(|k| (s.largest(k) - m as f64).abs() <= 1e-8))
    } else {
        None
    };
    let passed = rank_at_least_d && blocks_bounded && nonzero_eigenvalues_equal_m != Some(false);
    Ok(GramSpectrumCheck {
        rank_at_least_d,
        max_block_sigma,
        blocks_bounded,
        nonzero_eigenvalues_equal_m,
        passed,
    })
}

/// Distances `||A^k - A*||` with `A^k = H^k - (C+Λ^k)/ρ`, from `k = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    pub distances: Vec<f64>,
    /// Largest step-to-step increase of the distance (negative if strictly decreasing).
    pub max_increase: f64,
    pub trace: SolverTrace,
    pub final_iterate: GramIterate,
}

impl ContractionReport {
    /// Nonincreasing up to `slack · ||A⁰ - A*||` per step.
    pub fn is_nonincreasing(&self, slack: f64) -> bool {
        let scale = self.distances.first().copied().unwrap_or(0.0);
        self.max_increase <= slack * scale
    }
}

/// Runs the solver and records the distance of `A^k` to a reference `A*`.
pub fn monitor_contraction(
    c: &DataMatrix,
    config: &SolverConfig,
    h0: Option<&DMatrix<f64>>,
    lambda0: Option<&DMatrix<f64>>,
    a_star: &DMatrix<f64>,
) -> Result<ContractionReport> {
    same_shape(c.matrix(), a_star, "C and A*")?;
    let md = c.size();
    let rho = config.rho;
    let h_init = h0.cloned().unwrap_or_else(|| DMatrix::identity(md, md));
    let l_init = lambda0.cloned().unwrap_or_else(|| DMatrix::zeros(md, md));
    let mut distances = vec![(update_argument(c.matrix(), &h_init, &l_init, rho) - a_star).norm()];
    let (final_iterate, trace) = run_with(c, config, Some(&h_init), Some(&l_init), |_, it| {
        distances.push((update_argument(c.matrix(), &it.h, &it.lambda, rho) - a_star).norm());
    })?;
    let max_increase = distances
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ContractionReport {
        distances,
        max_increase,
        trace,
        final_iterate,
    })
}

/// Summary of every certificate evaluated on one solution of one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub schema_version: u32,
    pub d: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub rho: f64,
    /// `Tr(C G)`.
    pub objective: f64,
    /// KKT residual of the orthogonal registration problem at `H`.
    pub kkt_oreg_residual: f64,
    /// Convex-relaxation certificate for `(G, Λ)`.
    pub kkt_csdp: CsdpKkt,
    /// `λ_{d+1}(C0)`.
    pub clean_gap: f64,
    pub eta: f64,
    /// `||W|| = ||C - C0||`.
    pub w_norm: f64,
    /// `||W|| < η`.
    pub tightness_guaranteed: bool,
    pub rank_estimate: usize,
    /// `λ_{d+1}/λ_d` of `G`.
    pub rank_ratio: f64,
    pub degenerate_tie: bool,
    pub fixed_point_residual: f64,
    pub mu_squared: f64,
    pub rho_instability_threshold: f64,
    /// `||G - G0||`.
    pub delta_norm: f64,
    /// `2M||W|| / λ_{d+1}(C0)`.
    pub delta_bound: f64,
    /// `clean_rho_bound(C0, I)`.
    pub clean_rho_bound: f64,
}

/// Evaluates all certificates on the final iterate of a run. A multiplier
/// that is not block diagonal is replaced by [`dual_from_primal`] of `G`.
pub fn diagnose(
    instance: &RegistrationInstance,
    iterate: &GramIterate,
    rho: f64,
) -> Result<DiagnosticsReport> {
    let d = instance.d;
    let c = build_data_matrix(instance)?;
    let c0 = build_clean_data_matrix(instance)?;
    let g0 = ground_truth_gram(instance)?.into_matrix();
    same_shape(c.matrix(), &iterate.g, "C and G")?;
    same_shape(c.matrix(), &iterate.h, "C and H")?;
    same_shape(c.matrix(), &iterate.lambda, "C and Lambda")?;
    let lambda = if check_block_diagonal(&iterate.lambda, d).is_ok() {
        iterate.lambda.clone()
    } else {
        dual_from_primal(&c, &iterate.g)?
    };
    let w = c.matrix() - c0.matrix();
    let w_norm = w.norm();
    let clean_gap = clean_spectral_gap(&c0)?;
    let eta = tightness_eta(&c0)?;
    let rank = rank_estimate(&iterate.g, d)?;
    let inst = instability_threshold(&c, &lambda, instance.m)?;
    let md = c.size();
    Ok(DiagnosticsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        d,
        m: instance.m,
        rho,
        objective: c.matrix().component_mul(&iterate.g).sum(),
        kkt_oreg_residual: kkt_residual_oreg(&c, &iterate.h)?,
        kkt_csdp: kkt_check_csdp(&c, &iterate.g, &lambda, 1e-6)?,
        clean_gap,
        eta,
        w_norm,
        tightness_guaranteed: w_norm < eta,
        rank_estimate: rank.rank,
        rank_ratio: rank.rank_ratio,
        degenerate_tie: rank.degenerate_tie,
        fixed_point_residual: fixed_point_residual(&c, &iterate.h, &lambda)?,
        mu_squared: inst.mu_squared,
        rho_instability_threshold: inst.rho_threshold,
        delta_norm: (&iterate.g - &g0).norm(),
        delta_bound: stability_delta_bound(&c0, &w)?,
        clean_rho_bound: clean_rho_bound(&c0, &DMatrix::identity(md, md))?,
    })
}
