//! Spectral decomposition and the three projections used by the ADMM updates:
//! onto `Θ` (identity diagonal blocks), onto `Ω` (PSD with rank at most `d`)
//! and onto the PSD cone.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{num_blocks, symmetrize};

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order. Column `i` of `vectors` belongs to `values[i]`.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SpectralDecomposition {
    /// Decomposes the symmetric part of `x`.
    pub fn of(x: &DMatrix<f64>) -> Self {
        let n = x.nrows();
        let eig = symmetrize(x).symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
        let mut vectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Self { values, vectors }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `k`-th largest eigenvalue, zero based.
    pub fn largest(&self, k: usize) -> f64 {
        self.values[k]
    }

    /// `k`-th smallest eigenvalue, zero based.
    pub fn smallest(&self, k: usize) -> f64 {
        self.values[self.values.len() - 1 - k]
    }

    pub fn max(&self) -> f64 {
        self.largest(0)
    }

    pub fn min(&self) -> f64 {
        self.smallest(0)
    }

    /// `Σ f(λ_i) u_i u_iᵀ` over the first `count` eigenpairs (descending order).
    pub fn reconstruct_leading(&self, count: usize, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.values.len();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..count.min(n) {
            let w = f(self.values[i]);
            if w != 0.0 {
                let u = self.vectors.column(i);
                out.ger(w, &u, &u, 1.0);
            }
        }
        symmetrize(&out)
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.reconstruct_leading(self.values.len(), |v| v)
    }
}

/// `Π_Θ`: overwrite every `d x d` diagonal block with `I_d`.
pub fn project_theta(x: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    let m = num_blocks(x, d)?;
    let mut out = symmetrize(x);
    let eye = DMatrix::<f64>::identity(d, d);
    for i in 0..m {
        out.view_mut((i * d, i * d), (d, d)).copy_from(&eye);
    }
    Ok(out)
}

/// `Π_Ω(X) = Σ_{i≤d} max(λ_i, 0) u_i u_iᵀ`: keep the positive part of the
/// top `d` eigenpairs. A spectrum with no positive eigenvalue maps to zero.
pub fn project_omega(x: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    check_square(x)?;
    Ok(project_omega_with(&SpectralDecomposition::of(x), d))
}

/// `Π_Ω` from an already computed decomposition.
pub fn project_omega_with(spec: &SpectralDecomposition, d: usize) -> DMatrix<f64> {
    spec.reconstruct_leading(d, |v| v.max(0.0))
}

/// Projection onto the PSD cone: every negative eigenvalue clipped to zero.
pub fn project_psd(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(x)?;
    Ok(project_psd_with(&SpectralDecomposition::of(x)))
}

pub fn project_psd_with(spec: &SpectralDecomposition) -> DMatrix<f64> {
    spec.reconstruct_leading(spec.len(), |v| v.max(0.0))
}

fn check_square(x: &DMatrix<f64>) -> Result<()> {
    if !x.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::block_diagonal_part;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
        symmetrize(&a)
    }

    fn random_psd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
        &a * a.transpose()
    }

    #[test]
    fn decomposition_is_sorted_and_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_symmetric(7, &mut rng);
        let s = SpectralDecomposition::of(&x);
        for k in 1..s.len() {
            assert!(s.values[k - 1] >= s.values[k]);
        }
        assert!((s.reconstruct() - &x).norm() <= 1e-9 * x.norm());
        let utu = s.vectors.transpose() * &s.vectors;
        assert!((utu - DMatrix::<f64>::identity(7, 7)).norm() <= 1e-10);
        assert_eq!(s.smallest(0), s.min());
        assert_eq!(s.largest(0), s.max());
    }

    #[test]
    fn theta_sets_diagonal_blocks() {
        let x = DMatrix::from_row_slice(2, 2, &[0.5, 0.3, 0.3, 2.0]);
        let p = project_theta(&x, 1).unwrap();
        assert_eq!(p, DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]));
        // already in Θ
        assert_eq!(project_theta(&p, 1).unwrap(), p);
    }

    #[test]
    fn theta_rejects_indivisible_dimension() {
        let x = DMatrix::<f64>::zeros(3, 3);
        assert!(matches!(project_theta(&x, 2), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn theta_is_nearest_point_against_feasible_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 2;
        let x = random_symmetric(6, &mut rng);
        let p = project_theta(&x, d).unwrap();
        let base = (&x - &p).norm();
        for _ in 0..100 {
            // feasible directions keep the diagonal blocks fixed
            let e = random_symmetric(6, &mut rng);
            let e = &e - block_diagonal_part(&e, d);
            let cand = &p + e * 0.1;
            assert!((&x - cand).norm() >= base - 1e-12);
        }
    }

    #[test]
    fn omega_examples() {
        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let p = project_omega(&x, 1).unwrap();
        assert!((p - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]))).norm() < 1e-14);

        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let p = project_omega(&x, 1).unwrap();
        assert!((p - DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]))).norm() < 1e-14);

        let x = -DMatrix::<f64>::identity(3, 3);
        assert_eq!(project_omega(&x, 2).unwrap().norm(), 0.0);
    }

    #[test]
    fn omega_fixes_low_rank_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = DMatrix::<f64>::from_fn(6, 2, |_, _| StandardNormal.sample(&mut rng));
        let x = &b * b.transpose();
        assert!((project_omega(&x, 2).unwrap() - &x).norm() <= 1e-10 * x.norm());
    }

    #[test]
    fn psd_examples() {
        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -2.0]));
        let p = project_psd(&x).unwrap();
        assert!((p - DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 0.0]))).norm() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = random_psd(5, &mut rng);
        assert!((project_psd(&y).unwrap() - &y).norm() <= 1e-10 * y.norm());
    }

    #[test]
    fn psd_projection_beats_sampled_psd_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_symmetric(6, &mut rng);
        let p = project_psd(&x).unwrap();
        let best = (&p - &x).norm();
        for _ in 0..100 {
            let y = random_psd(6, &mut rng) * 0.2;
            assert!(best <= (&y - &x).norm() + 1e-12);
        }
    }

    fn sym_strategy(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-3.0f64..3.0, n * n)
            .prop_map(move |v| symmetrize(&DMatrix::from_vec(n, n, v)))
    }

    proptest! {
        #[test]
        fn projections_are_idempotent(x in sym_strategy(6)) {
            let t = project_theta(&x, 2).unwrap();
            prop_assert!((project_theta(&t, 2).unwrap() - &t).norm() <= 1e-10);
            let o = project_omega(&x, 2).unwrap();
            prop_assert!((project_omega(&o, 2).unwrap() - &o).norm() <= 1e-10 * (1.0 + o.norm()));
            let p = project_psd(&x).unwrap();
            prop_assert!((project_psd(&p).unwrap() - &p).norm() <= 1e-10 * (1.0 + p.norm()));
        }

        #[test]
        fn omega_equals_psd_when_only_top_d_nonnegative(x in sym_strategy(6)) {
            let s = SpectralDecomposition::of(&x);
            // shift so that λ_3 (third largest) is strictly negative
            let shift = s.largest(2) + 0.1;
            let y = &x - DMatrix::<f64>::identity(6, 6) * shift;
            let a = project_omega(&y, 2).unwrap();
            let b = project_psd(&y).unwrap();
            prop_assert!((a - b).norm() <= 1e-10 * (1.0 + y.norm()));
        }

        #[test]
        fn convex_projections_are_nonexpansive(x in sym_strategy(6), y in sym_strategy(6)) {
            let dist = (&x - &y).norm();
            let t = (project_theta(&x, 2).unwrap() - project_theta(&y, 2).unwrap()).norm();
            prop_assert!(t <= dist + 1e-12);
            let p = (project_psd(&x).unwrap() - project_psd(&y).unwrap()).norm();
            prop_assert!(p <= dist + 1e-10);
        }

        #[test]
        fn omega_output_is_psd_rank_at_most_d(x in sym_strategy(6)) {
            let o = project_omega(&x, 2).unwrap();
            let s = SpectralDecomposition::of(&o);
            prop_assert!(s.min() >= -1e-10);
            prop_assert!(s.largest(2) <= 1e-10 * (1.0 + s.max()));
            prop_assert_eq!(o.clone(), o.transpose());
        }
    }
}
