//! Registration instances, the data matrix `C`, ground-truth Gram matrices and
//! the recovery of transforms and global points from a Gram solution.
//!
//! A patch `P_i` observes each of its nodes `k` in a local frame:
//! `x̄_k = Ō_i x_{k,i} + t̄_i`. The least-squares registration objective
//! `Σ_i Σ_{k∈P_i} ||z_k - (O_i x_{k,i} + t_i)||²` is quadratic in the
//! translations and global points, which are eliminated exactly; what remains is
//! the quadratic form `Tr(C OᵀO)` in the row of orthogonal blocks
//! `O = [O_1 ... O_M]`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    block, gram_from_blocks, nearest_orthogonal, pseudo_inverse, same_shape, symmetrize,
};
use crate::proj::SpectralDecomposition;

/// Relative singular-value cutoff for the elimination pseudoinverse.
pub const PINV_CUTOFF: f64 = 1e-10;

/// Relative threshold below which `λ_d(G)` counts as zero when rounding.
pub const ROUND_RANK_TOL: f64 = 1e-12;

const ORTHOGONALITY_TOL: f64 = 1e-10;

/// How nodes are distributed over patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PatchScheme {
    /// Every patch contains every node.
    AllNodes,
    /// Contiguous windows over the node order; each patch shares `overlap`
    /// nodes with its predecessor.
    ChainedOverlap { overlap: usize },
}

impl PatchScheme {
    /// Builds the patch index sets for `n` nodes and `m` patches in dimension `d`.
    pub fn patches(&self, d: usize, n: usize, m: usize) -> Result<Vec<Vec<usize>>> {
        match *self {
            PatchScheme::AllNodes => Ok(vec![(0..n).collect(); m]),
            PatchScheme::ChainedOverlap { overlap } => {
                if overlap < d + 1 {
                    return Err(Error::IllPosed(format!(
                        "chained overlap {overlap} is below d+1 = {}",
                        d + 1
                    )));
                }
                if overlap > n {
                    return Err(Error::IllPosed(format!(
                        "chained overlap {overlap} exceeds the node count {n}"
                    )));
                }
                let stride = (n - overlap).div_ceil(m.max(1));
                let patches: Vec<Vec<usize>> = (0..m)
                    .map(|i| {
                        let start = (i * stride).min(n - overlap);
                        let end = (start + overlap + stride).min(n);
                        (start..end).collect()
                    })
                    .collect();
                check_chained_overlap(&patches, d)?;
                Ok(patches)
            }
        }
    }
}

/// Patch 1 must hold at least `d+1` nodes and every later patch must share at
/// least `d+1` nodes with the union of its predecessors.
pub fn check_chained_overlap(patches: &[Vec<usize>], d: usize) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for (i, p) in patches.iter().enumerate() {
        let shared = if i == 0 {
            p.len()
        } else {
            p.iter().filter(|k| seen.contains(*k)).count()
        };
        if shared < d + 1 {
            return Err(Error::IllPosed(format!(
                "patch {i} has {shared} anchoring nodes, need at least {}",
                d + 1
            )));
        }
        seen.extend(p.iter().copied());
    }
    Ok(())
}

/// An orthogonal transform followed by a translation: `x ↦ O x + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidTransform {
    pub rotation: DMatrix<f64>,
    pub translation: DVector<f64>,
}

/// One local-coordinate observation `x_{k,i}` of node `k` in patch `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub patch: usize,
    pub node: usize,
    pub coords: DVector<f64>,
}

/// Parameters for [`generate_instance`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub scheme: PatchScheme,
    pub sigma: f64,
    pub seed: u64,
}

impl InstanceSpec {
    /// Ten nodes in the plane, three patches each holding all of them.
    pub fn desk(sigma: f64, seed: u64) -> Self {
        Self {
            d: 2,
            n: 10,
            m: 3,
            scheme: PatchScheme::AllNodes,
            sigma,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationInstance {
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub patches: Vec<Vec<usize>>,
    pub global_points: Vec<DVector<f64>>,
    pub true_transforms: Vec<RigidTransform>,
    /// Ordered patch by patch, nodes in patch order.
    pub local_coords: Vec<Measurement>,
    pub noise_sigma: f64,
    pub seed: u64,
}

fn random_orthogonal(d: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Sign correction makes the distribution Haar on O(d).
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Gram matrix of `m` independent Haar-distributed orthogonal `d x d` blocks:
/// a feasible rank-`d` point.
pub fn random_feasible_gram(m: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks: Vec<DMatrix<f64>> = (0..m).map(|_| random_orthogonal(d, &mut rng)).collect();
    gram_from_blocks(&blocks)
}

/// Synthesizes an instance: global points uniform in the unit cube, patch
/// transforms Haar-distributed on `O(d)` with uniform translations, and local
/// coordinates `Ō_iᵀ(x̄_k - t̄_i)` perturbed by iid `N(0, sigma²)` noise.
///
/// Geometry and noise come from separate streams of the same seed, so the
/// same seed with different `sigma` shares points and transforms.
pub fn generate_instance(spec: &InstanceSpec) -> Result<RegistrationInstance> {
    let InstanceSpec {
        d,
        n,
        m,
        scheme,
        sigma,
        seed,
    } = *spec;
    if d == 0 {
        return Err(Error::InvalidParameter("d must be at least 1".into()));
    }
    if n < d + 1 {
        return Err(Error::InvalidParameter(format!(
            "need at least d+1 = {} nodes, got {n}",
            d + 1
        )));
    }
    if m == 0 {
        return Err(Error::InvalidParameter("need at least one patch".into()));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("invalid noise sigma {sigma}")));
    }
    let patches = scheme.patches(d, n, m)?;

    let mut geo = ChaCha8Rng::seed_from_u64(seed);
    let global_points: Vec<DVector<f64>> = (0..n)
        .map(|_| DVector::from_fn(d, |_, _| geo.random::<f64>()))
        .collect();
    let true_transforms: Vec<RigidTransform> = (0..m)
        .map(|_| {
            let rotation = random_orthogonal(d, &mut geo);
            let translation = DVector::from_fn(d, |_, _| geo.random::<f64>());
            RigidTransform {
                rotation,
                translation,
            }
        })
        .collect();

    let inst = RegistrationInstance {
        d,
        n,
        m,
        patches,
        global_points,
        true_transforms,
        local_coords: Vec::new(),
        noise_sigma: 0.0,
        seed,
    };
    inst.with_noise(sigma, seed)
}

impl RegistrationInstance {
    /// Checks the structural invariants: nonempty patches covering every node,
    /// orthogonal ground-truth transforms, one finite observation per membership.
    pub fn validate(&self) -> Result<()> {
        let d = self.d;
        if d == 0 || self.m == 0 || self.n == 0 {
            return Err(Error::InvalidParameter("d, N and M must be positive".into()));
        }
        if self.patches.len() != self.m {
            return Err(Error::InvalidParameter(format!(
                "expected {} patches, got {}",
                self.m,
                self.patches.len()
            )));
        }
        let mut covered = vec![false; self.n];
        for (i, p) in self.patches.iter().enumerate() {
            if p.is_empty() {
                return Err(Error::InvalidParameter(format!("patch {i} is empty")));
            }
            for &k in p {
                if k >= self.n {
                    return Err(Error::InvalidParameter(format!(
                        "patch {i} references node {k} >= N = {}",
                        self.n
                    )));
                }
                covered[k] = true;
            }
        }
        if let Some(k) = covered.iter().position(|c| !c) {
            return Err(Error::InvalidParameter(format!("node {k} is in no patch")));
        }
        if self.global_points.len() != self.n || self.global_points.iter().any(|p| p.len() != d)
        {
            return Err(Error::DimensionMismatch("global points".into()));
        }
        if self.true_transforms.len() != self.m {
            return Err(Error::DimensionMismatch("transforms".into()));
        }
        let eye = DMatrix::<f64>::identity(d, d);
        for (i, t) in self.true_transforms.iter().enumerate() {
            if t.rotation.shape() != (d, d) || t.translation.len() != d {
                return Err(Error::DimensionMismatch(format!("transform {i}")));
            }
            if (t.rotation.transpose() * &t.rotation - &eye).norm() > ORTHOGONALITY_TOL {
                return Err(Error::InvalidParameter(format!(
                    "transform {i} is not orthogonal"
                )));
            }
        }
        let expected: usize = self.patches.iter().map(Vec::len).sum();
        if self.local_coords.len() != expected {
            return Err(Error::InvalidParameter(format!(
                "expected {expected} local coordinates, got {}",
                self.local_coords.len()
            )));
        }
        for (meas, (i, k)) in self.local_coords.iter().zip(self.memberships()) {
            if meas.patch != i || meas.node != k {
                return Err(Error::InvalidParameter(format!(
                    "local coordinate for (patch {}, node {}) out of order, expected ({i}, {k})",
                    meas.patch, meas.node
                )));
            }
            if meas.coords.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "local coordinate of node {k} in patch {i}"
                )));
            }
            if meas.coords.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "local coordinate of node {k} in patch {i}"
                )));
            }
        }
        Ok(())
    }

    /// `(patch, node)` pairs in measurement order.
    pub fn memberships(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.patches
            .iter()
            .enumerate()
            .flat_map(|(i, p)| p.iter().map(move |&k| (i, k)))
    }

    /// `Md`, the side of the data and Gram matrices.
    pub fn size(&self) -> usize {
        self.m * self.d
    }

    /// Noise-free local coordinates `Ō_iᵀ(x̄_k - t̄_i)` for every membership.
    pub fn clean_local_coords(&self) -> Vec<Measurement> {
        self.memberships()
            .map(|(i, k)| {
                let t = &self.true_transforms[i];
                Measurement {
                    patch: i,
                    node: k,
                    coords: t.rotation.transpose() * (&self.global_points[k] - &t.translation),
                }
            })
            .collect()
    }

    /// Redraws the observations as the clean values plus iid `N(0, sigma²)`
    /// noise from `noise_seed`. The geometry is unchanged.
    pub fn with_noise(&self, sigma: f64, noise_seed: u64) -> Result<RegistrationInstance> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!("invalid noise sigma {sigma}")));
        }
        let mut noise = ChaCha8Rng::seed_from_u64(noise_seed);
        noise.set_stream(1);
        let local_coords = self
            .clean_local_coords()
            .into_iter()
            .map(|mut meas| {
                let eps = DVector::from_fn(self.d, |_, _| noise.sample::<f64, _>(StandardNormal));
                meas.coords += eps * sigma;
                meas
            })
            .collect();
        let inst = RegistrationInstance {
            local_coords,
            noise_sigma: sigma,
            ..self.clone()
        };
        inst.validate()?;
        Ok(inst)
    }

    /// Replaces the noisy observations with their clean values.
    pub fn clean(&self) -> RegistrationInstance {
        RegistrationInstance {
            local_coords: self.clean_local_coords(),
            noise_sigma: 0.0,
            ..self.clone()
        }
    }

    /// Scalar incidence matrix of the elimination: one row per measurement,
    /// `+1` in the column of `z_k` and `-1` in the column of `t_i`
    /// (columns `0..N` are points, `N..N+M` translations).
    pub fn incidence(&self) -> DMatrix<f64> {
        let mut m0 = DMatrix::zeros(self.local_coords.len(), self.n + self.m);
        for (a, meas) in self.local_coords.iter().enumerate() {
            m0[(a, meas.node)] = 1.0;
            m0[(a, self.n + meas.patch)] = -1.0;
        }
        m0
    }
}

/// The symmetric PSD `Md x Md` matrix of the quadratic form `Tr(C OᵀO)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    matrix: DMatrix<f64>,
    d: usize,
}

impl DataMatrix {
    pub fn new(matrix: DMatrix<f64>, d: usize) -> Result<Self> {
        crate::linalg::num_blocks(&matrix, d)?;
        if !crate::linalg::all_finite(&matrix) {
            return Err(Error::NonFinite("data matrix".into()));
        }
        Ok(Self {
            matrix: symmetrize(&matrix),
            d,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_patches(&self) -> usize {
        self.matrix.nrows() / self.d
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        block(&self.matrix, self.d, i, j)
    }

    pub fn spectrum(&self) -> SpectralDecomposition {
        SpectralDecomposition::of(&self.matrix)
    }
}

/// Builds `C` from the instance's (possibly noisy) local coordinates.
pub fn build_data_matrix(instance: &RegistrationInstance) -> Result<DataMatrix> {
    instance.validate()?;
    data_matrix_from(instance)
}

/// Builds the clean `C0` from noise-free local coordinates.
pub fn build_clean_data_matrix(instance: &RegistrationInstance) -> Result<DataMatrix> {
    let clean = instance.clean();
    clean.validate()?;
    data_matrix_from(&clean)
}

fn data_matrix_from(instance: &RegistrationInstance) -> Result<DataMatrix> {
    let d = instance.d;
    let md = instance.size();
    let m0 = instance.incidence();
    let l = m0.nrows();
    // P0 projects onto the orthogonal complement of range(M0); the optimal
    // residual of the inner least squares is P0 Y with Y_a = O_i x_a.
    let p0 = DMatrix::<f64>::identity(l, l) - &m0 * pseudo_inverse(&m0, PINV_CUTOFF);
    let mut c = DMatrix::zeros(md, md);
    for (a, ma) in instance.local_coords.iter().enumerate() {
        for (b, mb) in instance.local_coords.iter().enumerate() {
            let w = p0[(a, b)];
            if w == 0.0 {
                continue;
            }
            let mut view = c.view_mut((ma.patch * d, mb.patch * d), (d, d));
            view.ger(w, &ma.coords, &mb.coords, 1.0);
        }
    }
    DataMatrix::new(c, d)
}

/// A symmetric `Md x Md` matrix viewed as the Gram matrix `OᵀO` of patch transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    matrix: DMatrix<f64>,
    d: usize,
}

impl GramMatrix {
    pub fn new(matrix: DMatrix<f64>, d: usize) -> Result<Self> {
        crate::linalg::num_blocks(&matrix, d)?;
        Ok(Self { matrix, d })
    }

    /// `[G]_ij = O_iᵀ O_j`.
    pub fn from_transforms(rotations: &[DMatrix<f64>]) -> Result<Self> {
        let d = rotations
            .first()
            .map(|r| r.nrows())
            .ok_or_else(|| Error::InvalidParameter("no transforms".into()))?;
        if rotations.iter().any(|r| r.shape() != (d, d)) {
            return Err(Error::DimensionMismatch("rotations must all be d x d".into()));
        }
        Ok(Self {
            matrix: gram_from_blocks(rotations),
            d,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_patches(&self) -> usize {
        self.matrix.nrows() / self.d
    }

    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        block(&self.matrix, self.d, i, j)
    }
}

/// `G0` with blocks `Ō_iᵀ Ō_j`.
pub fn ground_truth_gram(instance: &RegistrationInstance) -> Result<GramMatrix> {
    let rotations: Vec<DMatrix<f64>> = instance
        .true_transforms
        .iter()
        .map(|t| t.rotation.clone())
        .collect();
    GramMatrix::from_transforms(&rotations)
}

/// `Tr(C G)`.
pub fn oreg_objective(c: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<f64> {
    same_shape(c, g, "oreg objective")?;
    Ok(c.component_mul(&g.transpose()).sum())
}

/// Rounds a Gram-like matrix to `M` orthogonal transforms, gauge-fixed so that
/// the first one is the identity.
///
/// The top `d` eigenpairs give a factor `B = diag(√λ) Uᵀ` split into blocks
/// `B_i`; each `O_i` is the polar factor of `B_1ᵀ B_i`. When the top eigenvalues
/// are tied (for example `G = I`), the eigenvectors chosen are whatever the
/// eigensolver returns.
pub fn round_to_transforms(g: &DMatrix<f64>, d: usize) -> Result<Vec<DMatrix<f64>>> {
    let m = crate::linalg::num_blocks(g, d)?;
    let spec = SpectralDecomposition::of(g);
    let top = spec.largest(0);
    if top.is_nan() || top <= 0.0 || spec.largest(d - 1) <= ROUND_RANK_TOL * top {
        return Err(Error::DegenerateRank(format!(
            "lambda_d = {:e} carries no rank-{d} signal (lambda_1 = {top:e})",
            spec.largest(d - 1)
        )));
    }
    let mut b = DMatrix::zeros(d, m * d);
    for r in 0..d {
        let s = spec.values[r].sqrt();
        b.row_mut(r)
            .copy_from(&(spec.vectors.column(r).transpose() * s));
    }
    let b1 = b.view((0, 0), (d, d)).into_owned();
    Ok((0..m)
        .map(|i| {
            let bi = b.view((0, i * d), (d, d));
            nearest_orthogonal(&(b1.transpose() * bi))
        })
        .collect())
}

/// Estimated transforms and global coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformEstimate {
    pub rotations: Vec<DMatrix<f64>>,
    pub translations: Vec<DVector<f64>>,
    pub points: Vec<DVector<f64>>,
}

/// Solves the inner least squares over translations and global points for
/// fixed orthogonal transforms. The global translation ambiguity is resolved by
/// taking the minimum-norm solution.
pub fn recover_points(
    instance: &RegistrationInstance,
    rotations: &[DMatrix<f64>],
) -> Result<TransformEstimate> {
    let d = instance.d;
    if rotations.len() != instance.m || rotations.iter().any(|r| r.shape() != (d, d)) {
        return Err(Error::DimensionMismatch(format!(
            "expected {} rotations of size {d}x{d}",
            instance.m
        )));
    }
    let m0 = instance.incidence();
    let mut y = DMatrix::zeros(instance.local_coords.len(), d);
    for (a, meas) in instance.local_coords.iter().enumerate() {
        let v = &rotations[meas.patch] * &meas.coords;
        y.row_mut(a).copy_from(&v.transpose());
    }
    let sol = pseudo_inverse(&m0, PINV_CUTOFF) * y;
    let row = |r: usize| sol.row(r).transpose();
    Ok(TransformEstimate {
        rotations: rotations.to_vec(),
        translations: (0..instance.m).map(|i| row(instance.n + i)).collect(),
        points: (0..instance.n).map(row).collect(),
    })
}

/// The least-squares registration objective `Σ ||z_k - (O_i x_{k,i} + t_i)||²`.
pub fn registration_objective(instance: &RegistrationInstance, est: &TransformEstimate) -> f64 {
    instance
        .local_coords
        .iter()
        .map(|meas| {
            let pred = &est.rotations[meas.patch] * &meas.coords + &est.translations[meas.patch];
            (&est.points[meas.node] - pred).norm_squared()
        })
        .sum()
}

// ---------------------------------------------------------------------------
// JSON instance file

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TransformRecord {
    #[serde(rename = "O")]
    o: Vec<Vec<f64>>,
    t: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LocalCoordRecord {
    patch: usize,
    node: usize,
    x: Vec<f64>,
}

/// On-disk layout. Matrices are row-major nested arrays, indices zero based.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct InstanceFile {
    d: usize,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "M")]
    m: usize,
    patches: Vec<Vec<usize>>,
    global_points: Vec<Vec<f64>>,
    transforms: Vec<TransformRecord>,
    local_coords: Vec<LocalCoordRecord>,
    sigma: f64,
    seed: u64,
}

pub(crate) fn matrix_to_rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Parse("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nr, nc, |r, c| rows[r][c]))
}

impl RegistrationInstance {
    pub fn to_json(&self) -> Result<String> {
        let file = InstanceFile {
            d: self.d,
            n: self.n,
            m: self.m,
            patches: self.patches.clone(),
            global_points: self
                .global_points
                .iter()
                .map(|p| p.iter().copied().collect())
                .collect(),
            transforms: self
                .true_transforms
                .iter()
                .map(|t| TransformRecord {
                    o: matrix_to_rows(&t.rotation),
                    t: t.translation.iter().copied().collect(),
                })
                .collect(),
            local_coords: self
                .local_coords
                .iter()
                .map(|m| LocalCoordRecord {
                    patch: m.patch,
                    node: m.node,
                    x: m.coords.iter().copied().collect(),
                })
                .collect(),
            sigma: self.noise_sigma,
            seed: self.seed,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Parses and validates an instance file. Local coordinates may appear in
    /// any order; they are stored in patch order.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text)?;
        let mut transforms = Vec::with_capacity(file.transforms.len());
        for t in &file.transforms {
            transforms.push(RigidTransform {
                rotation: rows_to_matrix(&t.o)?,
                translation: DVector::from_vec(t.t.clone()),
            });
        }
        let mut by_key = std::collections::BTreeMap::new();
        for rec in file.local_coords {
            let key = (rec.patch, rec.node);
            if by_key
                .insert(key, DVector::from_vec(rec.x))
                .is_some()
            {
                return Err(Error::Parse(format!(
                    "duplicate local coordinate for patch {} node {}",
                    key.0, key.1
                )));
            }
        }
        let mut local_coords = Vec::with_capacity(by_key.len());
        for (i, p) in file.patches.iter().enumerate() {
            for &k in p {
                let coords = by_key.remove(&(i, k)).ok_or_else(|| {
                    Error::Parse(format!("missing local coordinate for patch {i} node {k}"))
                })?;
                local_coords.push(Measurement {
                    patch: i,
                    node: k,
                    coords,
                });
            }
        }
        if let Some(((i, k), _)) = by_key.into_iter().next() {
            return Err(Error::Parse(format!(
                "local coordinate for node {k} which is not in patch {i}"
            )));
        }
        let inst = RegistrationInstance {
            d: file.d,
            n: file.n,
            m: file.m,
            patches: file.patches,
            global_points: file
                .global_points
                .into_iter()
                .map(DVector::from_vec)
                .collect(),
            true_transforms: transforms,
            local_coords,
            noise_sigma: file.sigma,
            seed: file.seed,
        };
        inst.validate()?;
        Ok(inst)
    }
}
