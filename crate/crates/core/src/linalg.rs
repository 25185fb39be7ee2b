//! Dense block-matrix helpers shared by the model, solvers and diagnostics.
//!
//! Matrices of size `Md x Md` are viewed as an `M x M` grid of `d x d` blocks.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Returns a copy of block `(i, j)`.
pub fn block(x: &DMatrix<f64>, d: usize, i: usize, j: usize) -> DMatrix<f64> {
    x.view((i * d, j * d), (d, d)).into_owned()
}

pub fn set_block(x: &mut DMatrix<f64>, d: usize, i: usize, j: usize, value: &DMatrix<f64>) {
    x.view_mut((i * d, j * d), (d, d)).copy_from(value);
}

/// Number of `d x d` block rows of a square matrix.
pub fn num_blocks(x: &DMatrix<f64>, d: usize) -> Result<usize> {
    if !x.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    if d == 0 || !x.nrows().is_multiple_of(d) {
        return Err(Error::DimensionMismatch(format!(
            "size {} is not divisible by block size {d}",
            x.nrows()
        )));
    }
    Ok(x.nrows() / d)
}

pub fn same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn symmetrize(x: &DMatrix<f64>) -> DMatrix<f64> {
    (x + x.transpose()) * 0.5
}

/// The block-diagonal part `bd(X)`: diagonal blocks kept, everything else zeroed.
pub fn block_diagonal_part(x: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let m = x.nrows() / d;
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for i in 0..m {
        out.view_mut((i * d, i * d), (d, d))
            .copy_from(&x.view((i * d, i * d), (d, d)));
    }
    out
}

/// Frobenius norm of everything outside the diagonal blocks.
pub fn off_block_norm(x: &DMatrix<f64>, d: usize) -> f64 {
    (x - block_diagonal_part(x, d)).norm()
}

/// `max_i ||[X]_ii - I_d||_F`.
pub fn diagonal_block_deviation(x: &DMatrix<f64>, d: usize) -> f64 {
    let m = x.nrows() / d;
    let eye = DMatrix::<f64>::identity(d, d);
    (0..m)
        .map(|i| (x.view((i * d, i * d), (d, d)) - &eye).norm())
        .fold(0.0, f64::max)
}

pub fn all_finite(x: &DMatrix<f64>) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Nearest orthogonal matrix in Frobenius norm (polar factor `U Vᵀ` of the SVD).
pub fn nearest_orthogonal(b: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = b.clone().svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    u * v_t
}

/// Moore-Penrose pseudoinverse; singular values below `rel_cutoff * sigma_max`
/// are treated as zero.
pub fn pseudo_inverse(x: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let svd = x.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd computed with u");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
    let smax = svd.singular_values.max();
    let cutoff = rel_cutoff * smax;
    let mut out = DMatrix::zeros(x.ncols(), x.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            let v = v_t.row(k).transpose();
            let uk = u.column(k);
            out += (v * uk.transpose()) / s;
        }
    }
    out
}

/// Largest singular value (spectral norm).
pub fn spectral_norm(x: &DMatrix<f64>) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.clone().singular_values().max()
}

/// Block Gram matrix `OᵀO` for a row of orthogonal blocks `O = [O_1 ... O_M]`.
pub fn gram_from_blocks(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let m = blocks.len();
    let d = blocks.first().map_or(0, |b| b.nrows());
    let mut g = DMatrix::zeros(m * d, m * d);
    for i in 0..m {
        for j in 0..m {
            let gij = blocks[i].transpose() * &blocks[j];
            set_block(&mut g, d, i, j, &gij);
        }
    }
    g
}
