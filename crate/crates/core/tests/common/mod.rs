#![allow(dead_code)]

use nalgebra::DMatrix;
use rigreg::bench::derive_seed;
use rigreg::diagnostics::dual_from_primal;
use rigreg::model::{
    build_data_matrix, generate_instance, random_feasible_gram, round_to_transforms, DataMatrix,
    InstanceSpec, RegistrationInstance,
};
use rigreg::solver::{run, GramIterate, SolverConfig, SolverTrace, Termination, Variant};
use rigreg::linalg::gram_from_blocks;

pub fn desk(sigma: f64, seed: u64) -> RegistrationInstance {
    generate_instance(&InstanceSpec::desk(sigma, seed)).expect("desk instance")
}

/// Long C-ADMM run from `H = I`, `Λ = 0`: the reference convex optimum.
pub fn csdp_reference(c: &DataMatrix, eps: f64) -> (GramIterate, SolverTrace) {
    let cfg = SolverConfig::new(Variant::Convex, 1.0, c.size())
        .with_eps(eps)
        .with_max_iters(50_000);
    run(c, &cfg, None, None).expect("reference run")
}

/// Lowest-objective REG-ADMM fixed point at penalty `rho` over a handful of
/// starts: the rounded convex optimum, the identity and four random Grams.
pub fn best_fixed_point(
    inst: &RegistrationInstance,
    c: &DataMatrix,
    csdp_g: &DMatrix<f64>,
    rho: f64,
) -> Option<DMatrix<f64>> {
    let (m, d) = (inst.m, inst.d);
    let mut inits = Vec::new();
    if let Ok(rots) = round_to_transforms(csdp_g, d) {
        inits.push(gram_from_blocks(&rots));
    }
    inits.push(DMatrix::identity(m * d, m * d));
    for k in 0..4 {
        inits.push(random_feasible_gram(m, d, derive_seed(inst.seed, 100 + k)));
    }
    let cfg = SolverConfig::new(Variant::Nonconvex, rho, c.size())
        .with_eps(1e-10)
        .with_max_iters(5000);
    inits
        .iter()
        .filter_map(|h0| {
            let (it, trace) = run(c, &cfg, Some(h0), None).ok()?;
            let last = trace.last()?;
            (trace.termination == Some(Termination::Converged) && last.primal_residual <= 1e-9)
                .then_some((last.objective, it.h))
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, h)| h)
}

/// `(H, Λ)` starting pair at a candidate fixed point.
pub fn candidate_state(c: &DataMatrix, h: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    (h.clone(), dual_from_primal(c, h).expect("dual"))
}

pub fn data(inst: &RegistrationInstance) -> DataMatrix {
    build_data_matrix(inst).expect("data matrix")
}
