//! Acceptance suite on desk-scale instances (d = 2, N = 10, M = 3).
//! Prints one PASS/FAIL line per criterion and exits nonzero on any failure.

mod common;

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use common::{best_fixed_point, candidate_state, csdp_reference, data, desk};
use rigreg::bench::{derive_seed, sweep_rho, InitKind, RhoSpec, SweepConfig};
use rigreg::diagnostics::{
    clean_rho_bound, dual_from_primal, gram_spectrum_checks, instability_threshold,
    kkt_check_csdp, low_noise_ball_check, monitor_contraction, rank_estimate,
    stability_delta_bound, tightness_eta,
};
use rigreg::linalg::{block_diagonal_part, gram_from_blocks};
use rigreg::model::{
    build_clean_data_matrix, generate_instance, ground_truth_gram, oreg_objective,
    random_feasible_gram, InstanceSpec, PatchScheme, RegistrationInstance,
};
use rigreg::solver::{
    c_admm_step, detect_oscillation, reg_admm_step, run, GramIterate, SolverConfig, Termination,
    Variant, Verdict,
};

type Check = (bool, String);

fn count(flags: &[bool]) -> usize {
    flags.iter().filter(|&&f| f).count()
}

/// Clean data, `H⁰ = I`, `Λ⁰ = 0`, `ρ` at the clean bound: the global optimum
/// within 5000 iterations on 20/20 instances.
fn clean_global_convergence() -> Check {
    let ok: Vec<bool> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let inst = desk(0.0, 1000 + seed);
            let c0 = build_clean_data_matrix(&inst).unwrap();
            let rho = clean_rho_bound(&c0, &DMatrix::identity(6, 6)).unwrap();
            let cfg = SolverConfig::new(Variant::Nonconvex, rho, 6).with_max_iters(5000);
            let (it, _) = run(&c0, &cfg, None, None).unwrap();
            let obj = oreg_objective(c0.matrix(), &it.g).unwrap();
            obj <= 1e-6 * c0.matrix().norm() && it.primal_residual() <= 1e-8
        })
        .collect();
    (count(&ok) == 20, format!("{}/20 reached the optimum", count(&ok)))
}

/// Every sweep cell ending with `||G - H|| ≤ 1e-9` is a KKT point of the
/// orthogonal problem to 1e-6.
fn fixed_point_is_kkt() -> Check {
    let mut rows = Vec::new();
    for init in [InitKind::Identity, InitKind::Random] {
        let cfg = SweepConfig {
            sigma_grid: vec![0.0, 0.01, 0.1, 0.5, 2.0],
            rho_grid: vec![
                RhoSpec::Auto,
                RhoSpec::Value(0.1),
                RhoSpec::Value(1.0),
                RhoSpec::Value(10.0),
            ],
            trials_per_cell: 3,
            seed: 2024,
            max_iters: 3000,
            eps: Some(1e-11),
            init,
            ..SweepConfig::default()
        };
        rows.extend(sweep_rho(&cfg).unwrap());
    }
    let fixed: Vec<_> = rows
        .iter()
        .filter(|r| r.primal_residual.is_some_and(|p| p <= 1e-9))
        .collect();
    let violations = fixed
        .iter()
        .filter(|r| !r.kkt_oreg_residual.is_some_and(|k| k <= 1e-6))
        .count();
    let errors = rows.iter().filter(|r| r.error.is_some()).count();
    (
        violations == 0 && !fixed.is_empty() && errors == 0,
        format!(
            "{} of {} cells at a fixed point, {violations} KKT violations, {errors} errors",
            fixed.len(),
            rows.len()
        ),
    )
}

struct LowNoiseTrial {
    inst: RegistrationInstance,
    w_norm: f64,
    eta: f64,
    reference: GramIterate,
}

/// Noise draws at `σ = 1e-3` on fixed geometries, kept when `||W|| < η`.
fn low_noise_trials(geometries: &[u64], per_geometry: usize) -> Vec<LowNoiseTrial> {
    geometries
        .par_iter()
        .flat_map(|&g| {
            let base = desk(0.0, g);
            let c0 = build_clean_data_matrix(&base).unwrap();
            let eta = tightness_eta(&c0).unwrap();
            let mut out = Vec::new();
            let mut k = 0;
            while out.len() < per_geometry && k < 10 * per_geometry as u64 {
                let inst = base.with_noise(1e-3, derive_seed(g, k)).unwrap();
                k += 1;
                let c = data(&inst);
                let w_norm = (c.matrix() - c0.matrix()).norm();
                if w_norm >= eta {
                    continue;
                }
                let (reference, _) = csdp_reference(&c, 1e-11);
                out.push(LowNoiseTrial {
                    inst,
                    w_norm,
                    eta,
                    reference,
                });
            }
            out
        })
        .collect()
}

/// `||W|| < η` forces a rank-`d` convex optimum, and `||G* - G0||` obeys the
/// stability bound.
fn tightness_and_stability(trials: &[LowNoiseTrial]) -> (Check, Check) {
    let mut tight = 0;
    let mut bounded = 0;
    let mut worst_ratio: f64 = 0.0;
    let mut worst_slack = f64::INFINITY;
    for t in trials {
        assert!(t.w_norm < t.eta);
        let r = rank_estimate(&t.reference.g, 2).unwrap();
        worst_ratio = worst_ratio.max(r.rank_ratio);
        tight += usize::from(r.rank_ratio <= 1e-6);
        let c0 = build_clean_data_matrix(&t.inst).unwrap();
        let c = data(&t.inst);
        let bound = stability_delta_bound(&c0, &(c.matrix() - c0.matrix())).unwrap();
        let g0 = ground_truth_gram(&t.inst).unwrap().into_matrix();
        let delta = (&t.reference.g - g0).norm();
        worst_slack = worst_slack.min(bound - delta);
        bounded += usize::from(delta <= bound);
    }
    let n = trials.len();
    (
        (
            tight == n && n >= 20,
            format!("{tight}/{n} rank d, worst lambda_(d+1)/lambda_d = {worst_ratio:.1e}"),
        ),
        (
            bounded == n && n >= 20,
            format!("{bounded}/{n} within bound, smallest slack {worst_slack:.3e}"),
        ),
    )
}

/// Converged C-ADMM triples pass the convex certificate and their multiplier
/// equals the closed-form dual.
fn dual_recovery() -> Check {
    let sigmas = [0.01, 0.05, 0.1, 0.3];
    let ok: Vec<(bool, f64)> = (0..20u64)
        .into_par_iter()
        .map(|k| {
            let inst = desk(sigmas[(k % 4) as usize], 3000 + k);
            let c = data(&inst);
            let (it, trace) = csdp_reference(&c, 1e-10);
            let kkt = kkt_check_csdp(&c, &it.g, &it.lambda, 1e-6).unwrap();
            let closed = dual_from_primal(&c, &it.g).unwrap();
            let rel = (&closed - &it.lambda).norm() / it.lambda.norm().max(1e-300);
            (
                kkt.passed && rel <= 1e-6 && trace.termination == Some(Termination::Converged),
                rel,
            )
        })
        .collect();
    let passed = ok.iter().filter(|o| o.0).count();
    let worst = ok.iter().map(|o| o.1).fold(0.0, f64::max);
    (
        passed == 20,
        format!("{passed}/20 certified, worst dual mismatch {worst:.1e}"),
    )
}

/// `||A^k - A*||` never increases along C-ADMM runs.
fn contraction() -> Check {
    let sigmas = [0.01, 0.1, 0.5, 1.0, 2.0];
    let out: Vec<(bool, f64)> = (0..20u64)
        .into_par_iter()
        .map(|k| {
            let inst = desk(sigmas[(k % 5) as usize], 4000 + k);
            let c = data(&inst);
            let rho = [0.5, 1.0, 2.0][(k % 3) as usize];
            let ref_cfg = SolverConfig::new(Variant::Convex, rho, 6)
                .with_eps(1e-13)
                .with_max_iters(50_000);
            let (star, _) = run(&c, &ref_cfg, None, None).unwrap();
            let a_star = &star.h - (c.matrix() + &star.lambda) / rho;
            let cfg = SolverConfig::new(Variant::Convex, rho, 6)
                .with_eps(1e-10)
                .with_max_iters(20_000);
            let h0 = random_feasible_gram(3, 2, derive_seed(k, 7));
            let rep = monitor_contraction(&c, &cfg, Some(&h0), None, &a_star).unwrap();
            let rel = rep.max_increase / rep.distances[0];
            (rep.is_nonincreasing(1e-9), rel)
        })
        .collect();
    let passed = out.iter().filter(|o| o.0).count();
    let worst = out.iter().map(|o| o.1).fold(f64::NEG_INFINITY, f64::max);
    (
        passed == 20,
        format!("{passed}/20 runs nonincreasing, largest relative step increase {worst:.1e}"),
    )
}

/// Inits inside the low-noise ball: REG-ADMM and C-ADMM produce the same
/// iterates and reach `G*`.
fn shadowing(trials: &[LowNoiseTrial]) -> Check {
    let rho = 1.0;
    let res: Vec<(bool, f64, f64)> = trials
        .par_iter()
        .take(10)
        .enumerate()
        .map(|(k, t)| {
            let c = data(&t.inst);
            let gstar = &t.reference.g;
            let lstar = block_diagonal_part(&t.reference.lambda, 2);
            let radius2 = low_noise_ball_check(gstar, &lstar, gstar, &lstar, &c, rho)
                .unwrap()
                .rhs;
            // a Θ-feasible direction at half the radius
            let e = random_feasible_gram(3, 2, derive_seed(k as u64, 11)) - DMatrix::identity(6, 6);
            let h0 = gstar + &e * (0.5 * radius2.sqrt() / e.norm());
            let lambda0 = lstar.clone();
            let ball = low_noise_ball_check(&h0, &lambda0, gstar, &lstar, &c, rho).unwrap();
            if !ball.passed {
                return (false, f64::NAN, f64::NAN);
            }
            let mut a = GramIterate::new(h0.clone(), lambda0.clone()).unwrap();
            let mut b = a.clone();
            let mut max_gap: f64 = 0.0;
            for _ in 0..5000 {
                a = reg_admm_step(&a, &c, rho).unwrap();
                b = c_admm_step(&b, &c, rho).unwrap();
                let gap = (&a.g - &b.g).norm() + (&a.h - &b.h).norm() + (&a.lambda - &b.lambda).norm();
                max_gap = max_gap.max(gap);
                if (&a.h - gstar).norm() <= 1e-7 && (&b.h - gstar).norm() <= 1e-7 {
                    break;
                }
            }
            let dist = (&a.h - gstar).norm().max((&b.h - gstar).norm());
            (max_gap <= 1e-8 && dist <= 1e-6, max_gap, dist)
        })
        .collect();
    let passed = res.iter().filter(|r| r.0).count();
    let gap = res.iter().map(|r| r.1).fold(0.0, f64::max);
    let dist = res.iter().map(|r| r.2).fold(0.0, f64::max);
    (
        passed == 10 && res.len() == 10,
        format!("{passed}/10 shadowed, max iterate gap {gap:.1e}, max final distance {dist:.1e}"),
    )
}

fn verdict_from(c: &rigreg::DataMatrix, h: &DMatrix<f64>, l: &DMatrix<f64>, rho: f64) -> Verdict {
    let cfg = SolverConfig::new(Variant::Nonconvex, rho, 6).with_max_iters(4000);
    let (_, trace) = run(c, &cfg, Some(h), Some(l)).unwrap();
    if trace.termination == Some(Termination::Converged) {
        return Verdict::Converging;
    }
    detect_oscillation(&trace, 500, 10.0).unwrap()
}

/// High noise: from the best candidate fixed point, `ρ = μ²/(2M)` oscillates
/// and `ρ = 4μ²/M` stays put. Low noise: the same small `ρ` values never
/// oscillate.
fn high_noise_instability() -> Check {
    struct Trial {
        low_rho: f64,
        lo: Verdict,
        hi: Verdict,
    }
    let candidates: Vec<Option<Trial>> = (0..200u64)
        .into_par_iter()
        .map(|k| {
            let inst = desk(2.0, 5000 + k);
            let c = data(&inst);
            let (reference, _) = csdp_reference(&c, 1e-10);
            let h = best_fixed_point(&inst, &c, &reference.g, 10.0)?;
            let (h, l) = candidate_state(&c, &h);
            let t = instability_threshold(&c, &l, 3).unwrap();
            if t.mu_squared <= 1e-6 * c.matrix().norm() {
                return None;
            }
            let lo = verdict_from(&c, &h, &l, 0.5 * t.rho_threshold);
            let hi = verdict_from(&c, &h, &l, 4.0 * t.rho_threshold);
            Some(Trial {
                low_rho: 0.5 * t.rho_threshold,
                lo,
                hi,
            })
        })
        .collect();
    let trials: Vec<Trial> = candidates.into_iter().flatten().take(20).collect();
    let n = trials.len();
    let osc = trials.iter().filter(|t| t.lo == Verdict::Oscillating).count();
    let conv = trials.iter().filter(|t| t.hi == Verdict::Converging).count();

    // low noise arm with the matched small penalties
    let low: Vec<Verdict> = trials
        .par_iter()
        .enumerate()
        .map(|(k, t)| {
            let base = desk(0.0, 6000 + k as u64);
            let c0 = build_clean_data_matrix(&base).unwrap();
            let eta = tightness_eta(&c0).unwrap();
            let mut j = 0;
            let inst = loop {
                let inst = base.with_noise(1e-3, derive_seed(6000 + k as u64, j)).unwrap();
                if (data(&inst).matrix() - c0.matrix()).norm() < eta {
                    break inst;
                }
                j += 1;
            };
            let c = data(&inst);
            let (reference, _) = csdp_reference(&c, 1e-10);
            let h = best_fixed_point(&inst, &c, &reference.g, 10.0).expect("low-noise candidate");
            let (h, l) = candidate_state(&c, &h);
            verdict_from(&c, &h, &l, t.low_rho)
        })
        .collect();
    let low_osc = low.iter().filter(|v| **v == Verdict::Oscillating).count();
    (
        n == 20 && osc >= 18 && conv >= 18 && low_osc == 0,
        format!(
            "{n} candidates: {osc}/{n} oscillating at mu^2/(2M), {conv}/{n} converging at 4 mu^2/M; low noise {low_osc}/{} oscillating",
            low.len()
        ),
    )
}

/// Dense least squares over `(z, t)` with `t_1 = 0` solved by QR, returning
/// the optimal residual `Σ ||z_k - O_i x_{k,i} - t_i||²`.
fn inner_least_squares(inst: &RegistrationInstance, rots: &[DMatrix<f64>]) -> f64 {
    let d = inst.d;
    let cols = (inst.n + inst.m - 1) * d;
    let rows = inst.local_coords.len() * d;
    let mut a = DMatrix::<f64>::zeros(rows, cols);
    let mut b = nalgebra::DVector::<f64>::zeros(rows);
    for (r, meas) in inst.local_coords.iter().enumerate() {
        let y = &rots[meas.patch] * &meas.coords;
        for c in 0..d {
            let row = r * d + c;
            a[(row, meas.node * d + c)] = 1.0;
            if meas.patch > 0 {
                a[(row, (inst.n + meas.patch - 1) * d + c)] = -1.0;
            }
            b[row] = y[c];
        }
    }
    let qr = a.clone().qr();
    let x = qr
        .r()
        .solve_upper_triangular(&(qr.q().transpose() * &b))
        .expect("full column rank");
    (&a * x - b).norm_squared()
}

fn construction_oracle() -> Check {
    let specs = [
        InstanceSpec::desk(0.0, 7001),
        InstanceSpec::desk(0.1, 7002),
        InstanceSpec::desk(1.0, 7003),
        InstanceSpec {
            n: 14,
            m: 4,
            scheme: PatchScheme::ChainedOverlap { overlap: 4 },
            ..InstanceSpec::desk(0.05, 7004)
        },
        InstanceSpec {
            d: 3,
            n: 12,
            m: 3,
            ..InstanceSpec::desk(0.2, 7005)
        },
    ];
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for spec in &specs {
        let inst = generate_instance(spec).unwrap();
        let c = data(&inst);
        for k in 0..20 {
            let g = random_feasible_gram(inst.m, inst.d, derive_seed(spec.seed, k));
            // recover the blocks O_i = [G]_{1i} (gauge O_1 = I)
            let rots: Vec<DMatrix<f64>> = (0..inst.m)
                .map(|i| g.view((0, i * inst.d), (inst.d, inst.d)).into_owned())
                .collect();
            assert!((gram_from_blocks(&rots) - &g).norm() < 1e-10);
            let quad = oreg_objective(c.matrix(), &g).unwrap();
            let oracle = inner_least_squares(&inst, &rots);
            let err = (quad - oracle).abs() / (1.0 + oracle.abs());
            worst = worst.max(err);
            violations += usize::from(err > 1e-8);
        }
    }
    (
        violations == 0,
        format!("100 transforms over 5 instances, {violations} violations, worst relative error {worst:.1e}"),
    )
}

fn gram_spectrum_suite() -> Check {
    let mut failures = 0;
    for k in 0..100u64 {
        let m = 2 + (k % 4) as usize;
        let d = 1 + (k % 3) as usize;
        let g = random_feasible_gram(m, d, derive_seed(8000, k));
        failures += usize::from(!gram_spectrum_checks(&g, m, d).unwrap().passed);
    }
    let mut instances = 0;
    for k in 0..20u64 {
        let spec = if k % 2 == 0 {
            InstanceSpec::desk(0.1, 8100 + k)
        } else {
            InstanceSpec {
                n: 15,
                m: 4,
                scheme: PatchScheme::ChainedOverlap { overlap: 3 },
                ..InstanceSpec::desk(0.0, 8100 + k)
            }
        };
        let inst = generate_instance(&spec).unwrap();
        let g0 = ground_truth_gram(&inst).unwrap().into_matrix();
        failures += usize::from(!gram_spectrum_checks(&g0, inst.m, inst.d).unwrap().passed);
        instances += 1;
    }
    (
        failures == 0,
        format!("100 random Grams and {instances} ground truths, {failures} failures"),
    )
}

/// Clean data with random starts: the bound penalty reaches the optimum while
/// some large penalty gets stuck.
fn large_rho_trapping() -> Check {
    let cfg = SweepConfig {
        sigma_grid: vec![0.0],
        rho_grid: vec![RhoSpec::Auto, RhoSpec::Value(1.0), RhoSpec::Value(10.0)],
        trials_per_cell: 10,
        seed: 9000,
        max_iters: 5000,
        init: InitKind::Random,
        ..SweepConfig::default()
    };
    let rows = sweep_rho(&cfg).unwrap();
    let auto_ok = rows
        .iter()
        .filter(|r| r.rho_spec == "auto")
        .all(|r| r.objective.is_some_and(|o| o <= 1e-6));
    let trapped = rows
        .iter()
        .filter(|r| r.rho_spec != "auto")
        .filter(|r| r.objective.unwrap_or(0.0) > 0.1 * r.trace_c.unwrap_or(f64::INFINITY))
        .count();
    (
        auto_ok && trapped >= 1,
        format!("bound penalty optimal in 10/10: {auto_ok}; {trapped} trapped large-penalty cells"),
    )
}

fn main() {
    let start = Instant::now();
    let mut failed = 0;
    let mut report = |id: &str, name: &str, (ok, detail): Check, t: f64| {
        println!(
            "[{}] criterion {id}: {name} ({detail}; {t:.1}s)",
            if ok { "PASS" } else { "FAIL" }
        );
        failed += usize::from(!ok);
    };
    let timed = |f: &dyn Fn() -> Check| {
        let t = Instant::now();
        let r = f();
        (r, t.elapsed().as_secs_f64())
    };

    let (r, t) = timed(&clean_global_convergence);
    report("1", "clean-case global convergence", r, t);
    let (r, t) = timed(&fixed_point_is_kkt);
    report("2", "fixed point implies KKT point", r, t);

    let t0 = Instant::now();
    let trials = low_noise_trials(&[101, 202], 20);
    let (tight, stable) = tightness_and_stability(&trials);
    let t = t0.elapsed().as_secs_f64();
    report("3", "tightness below the noise threshold", tight, t);
    report("4", "stability bound on the optimum perturbation", stable, t);

    let (r, t) = timed(&dual_recovery);
    report("5", "dual recovery and convex certificate", r, t);
    let (r, t) = timed(&contraction);
    report("6", "contraction of the convex iteration", r, t);
    let (r, t) = timed(&|| shadowing(&trials));
    report("7", "low-noise shadowing of the convex iteration", r, t);
    let (r, t) = timed(&high_noise_instability);
    report("8", "high-noise instability at small penalty", r, t);
    let (r, t) = timed(&construction_oracle);
    report("9", "data matrix equals the inner least-squares optimum", r, t);
    let (r, t) = timed(&gram_spectrum_suite);
    report("10", "spectral facts of feasible Gram matrices", r, t);
    let (r, t) = timed(&large_rho_trapping);
    report("extra", "large-penalty trapping on clean data", r, t);

    println!(
        "acceptance: {} failed, total {:.1}s",
        failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
