// SPDX-License-Identifier: MIT OR Apache-2.0

//! Shared/unique decomposition of task vectors via chained column-space
//! projectors.
//!
//! Each weight matrix contributes an orthogonal projector onto its column
//! space. Chaining the projectors of several task vectors and
//! eigendecomposing the (symmetrized) chain exposes the directions all of
//! them span: eigenvalues near 1 mark shared directions, small eigenvalues
//! mark task-specific ones. Thresholding the spectrum yields a shared basis;
//! every vector then splits into a shared part inside that basis and a
//! unique remainder, and the shared parts merge into a single consensus
//! component.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::linalg;
use crate::matrix::Matrix;
use crate::tensor::{TaskVector, Tensor};
use crate::Result;

/// Eigenvalue threshold separating shared from unique directions.
pub const DEFAULT_TAU: f64 = 0.85;

/// Relative singular-value cutoff for numerical rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Columns of a thresholded spectrum are re-orthonormalized at this drop
/// tolerance before they become a shared basis.
const BASIS_DROP_TOL: f64 = 1e-12;

/// Pairwise union bases are orthonormalized at this drop tolerance; pair
/// bases overlap heavily, so near-duplicate directions must be discarded.
const UNION_DROP_TOL: f64 = 1e-8;

/// Orthogonal projector onto a subspace: symmetric, idempotent, eigenvalues
/// in {0, 1} up to floating-point error.
#[derive(Debug, Clone)]
pub struct Projector {
    p: Matrix,
    rank: usize,
}

impl Projector {
    /// Projector onto the span of an orthonormal basis, `u * u^T` symmetrized
    /// exactly. The basis must have orthonormal columns within 1e-8.
    pub fn from_basis(u: &Matrix) -> Result<Self> {
        if u.rows() == 0 {
            return Err(Error::InvalidMatrix("projector needs at least one row".into()));
        }
        let defect = linalg::orthonormality_defect(u);
        if defect > 1e-8 {
            return Err(Error::InvalidMatrix(format!(
                "basis columns are not orthonormal (defect {defect:.3e})"
            )));
        }
        let p = u.matmul(&u.transpose())?.symmetrized()?;
        Ok(Self { p, rank: u.cols() })
    }

    /// The projection matrix.
    pub fn matrix(&self) -> &Matrix {
        &self.p
    }

    /// Dimension of the projected-onto subspace.
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Ambient dimension.
    pub fn dim(&self) -> usize {
        self.p.rows()
    }

    /// `p * m`.
    pub fn apply(&self, m: &Matrix) -> Result<Matrix> {
        self.p.matmul(m)
    }
}

/// Eigendecomposition of the symmetrized chain of projectors. `values` are
/// descending and lie in [0, 1] up to floating-point error; `vectors` holds
/// the full orthonormal eigenbasis; `k` is the number of chained projectors.
#[derive(Debug, Clone)]
pub struct ChainSpectrum {
    pub values: Vec<f64>,
    pub vectors: Matrix,
    pub k: usize,
    pub symmetrized: bool,
}

/// Orthonormal basis of the shared subspace: the chain eigenvectors whose
/// eigenvalue exceeds `tau`, re-orthonormalized. May be empty.
#[derive(Debug, Clone)]
pub struct SharedBasis {
    pub z: Matrix,
    pub tau: f64,
    pub source_values: Vec<f64>,
}

impl SharedBasis {
    /// Number of shared directions.
    pub fn r_shared(&self) -> usize {
        self.z.cols()
    }

    /// Ambient dimension.
    pub fn dim(&self) -> usize {
        self.z.rows()
    }

    /// Projector onto the shared subspace.
    pub fn projector(&self) -> Result<Projector> {
        if self.z.cols() == 0 {
            let n = self.z.rows();
            return Ok(Projector { p: Matrix::zeros(n, n), rank: 0 });
        }
        Projector::from_basis(&self.z)
    }
}

/// Per-layer split of every input matrix against one shared basis.
#[derive(Debug, Clone)]
pub struct LayerDecomposition {
    pub shared_parts: Vec<Matrix>,
    pub unique_parts: Vec<Matrix>,
    pub merged_shared: Matrix,
    pub basis: SharedBasis,
}

/// Projector onto the column space of `w`, built from the left factor of the
/// truncated SVD at `rank_tol`.
pub fn column_projector(w: &Matrix, rank_tol: f64) -> Result<Projector> {
    if w.is_zero() {
        return Err(Error::ZeroTaskVector);
    }
    let (u, _s) = linalg::svd_basis(w, rank_tol)?;
    let p = u.matmul(&u.transpose())?.symmetrized()?;
    Ok(Projector { p, rank: u.cols() })
}

/// Spectrum of the chained projectors taken in the given order.
///
/// The ordered product M is made symmetric through its Gram form
/// `S = (M M^T + (M M^T)^T) / 2` before eigendecomposition. The eigenvalues
/// of S are the squared singular values of M: directions inside every
/// projector's range keep eigenvalue 1, annihilated directions get 0, and
/// for k = 2 the spectrum equals the squared cosines of the principal angles
/// between the two column spaces, invariant under swapping the projectors.
pub fn chain_projectors(ps: &[Projector], order: &[usize]) -> Result<ChainSpectrum> {
    if ps.len() < 2 {
        return Err(Error::NeedTwoProjectors(ps.len()));
    }
    let n = ps[0].dim();
    for p in ps {
        if p.dim() != n {
            return Err(Error::DimensionMismatch(format!(
                "projector dimensions differ: {} vs {}",
                n,
                p.dim()
            )));
        }
    }
    if order.len() != ps.len() {
        return Err(Error::InvalidPermutation(order.len()));
    }
    let mut seen = vec![false; ps.len()];
    for &i in order {
        if i >= ps.len() || seen[i] {
            return Err(Error::InvalidPermutation(i));
        }
        seen[i] = true;
    }

    let mut m = ps[order[0]].matrix().clone();
    for &i in &order[1..] {
        m = m.matmul(ps[i].matrix())?;
    }
    let s = m.matmul(&m.transpose())?.symmetrized()?;
    let eig = linalg::sym_eig(&s)?;
    Ok(ChainSpectrum {
        values: eig.values,
        vectors: eig.z,
        k: ps.len(),
        symmetrized: true,
    })
}

/// Shared basis from a chain spectrum: eigenvectors with eigenvalue strictly
/// greater than `tau`, re-orthonormalized by modified Gram-Schmidt. Ties at
/// exactly `tau` are excluded; the basis may be empty.
pub fn shared_basis(spectrum: &ChainSpectrum, tau: f64) -> Result<SharedBasis> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidThreshold(tau));
    }
    let retained: Vec<usize> = (0..spectrum.values.len())
        .filter(|&i| spectrum.values[i] > tau)
        .collect();
    let picked = spectrum.vectors.select_columns(&retained);
    let z = linalg::mgs_orthonormalize(&picked, BASIS_DROP_TOL);
    let mut source_values: Vec<f64> = retained.iter().map(|&i| spectrum.values[i]).collect();
    source_values.truncate(z.cols());
    Ok(SharedBasis { z, tau, source_values })
}

/// Splits `w` into its component inside the shared subspace and the
/// remainder: `shared = (z z^T) w`, `unique = w - shared`.
pub fn split(w: &Matrix, basis: &SharedBasis) -> Result<(Matrix, Matrix)> {
    if basis.dim() != w.rows() {
        return Err(Error::DimensionMismatch(format!(
            "basis dimension {} does not match matrix rows {}",
            basis.dim(),
            w.rows()
        )));
    }
    let shared = basis.projector()?.apply(w)?;
    let unique = w.sub(&shared)?;
    Ok((shared, unique))
}

/// Frobenius-norm-weighted average of the shared parts:
/// `sum(|S_i| * S_i) / sum(|S_i|)`. All-zero inputs merge to zero.
pub fn merge_shared(parts: &[Matrix]) -> Result<Matrix> {
    let first = parts.first().ok_or(Error::EmptyInput)?;
    let (rows, cols) = (first.rows(), first.cols());
    let mut weight_sum = 0.0;
    let mut acc = Matrix::zeros(rows, cols);
    for part in parts {
        if part.rows() != rows || part.cols() != cols {
            return Err(Error::DimensionMismatch(format!(
                "merge inputs disagree: {}x{} vs {}x{}",
                rows,
                cols,
                part.rows(),
                part.cols()
            )));
        }
        let w = part.frobenius_norm();
        weight_sum += w;
        acc = acc.add(&part.scale(w))?;
    }
    if weight_sum == 0.0 {
        return Ok(Matrix::zeros(rows, cols));
    }
    Ok(acc.scale(1.0 / weight_sum))
}

/// Full chain-mode pipeline for one layer: projectors, chain, threshold,
/// split, merge.
pub fn decompose_layer(ws: &[&Matrix], tau: f64, rank_tol: f64) -> Result<LayerDecomposition> {
    let (dec, _spectrum, _ps) = layer_chain(ws, tau, rank_tol)?;
    Ok(dec)
}

fn layer_chain(
    ws: &[&Matrix],
    tau: f64,
    rank_tol: f64,
) -> Result<(LayerDecomposition, ChainSpectrum, Vec<Projector>)> {
    if ws.len() < 2 {
        return Err(Error::NeedTwoVectors(ws.len()));
    }
    let ps: Vec<Projector> = ws
        .iter()
        .map(|w| column_projector(w, rank_tol))
        .collect::<Result<_>>()?;
    let order: Vec<usize> = (0..ps.len()).collect();
    let spectrum = chain_projectors(&ps, &order)?;
    let basis = shared_basis(&spectrum, tau)?;
    let mut shared_parts = Vec::with_capacity(ws.len());
    let mut unique_parts = Vec::with_capacity(ws.len());
    for w in ws {
        let (s, u) = split(w, &basis)?;
        shared_parts.push(s);
        unique_parts.push(u);
    }
    let merged_shared = merge_shared(&shared_parts)?;
    Ok((
        LayerDecomposition { shared_parts, unique_parts, merged_shared, basis },
        spectrum,
        ps,
    ))
}

/// How decompose_set combines more than two vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// One chain over all k projectors; one merged shared vector.
    Chain,
    /// The k = 2 pipeline per unordered pair; one merged vector per pair,
    /// uniques taken against the union of each vector's pair bases.
    Pairwise,
}

/// One merged shared vector and the input indices it was built from.
#[derive(Debug, Clone)]
pub struct MergedComponent {
    pub members: Vec<usize>,
    pub vector: TaskVector,
}

/// Chain-mode diagnostics for one layer.
#[derive(Debug, Clone)]
pub struct ChainLayerReport {
    pub spectrum: ChainSpectrum,
    pub basis: SharedBasis,
    /// Relative reconstruction error |shared + unique - original| / |original|
    /// per input vector.
    pub residuals: Vec<f64>,
    /// Largest eigenvalue deviation over three fixed reorderings of the
    /// chain; populated only for k > 2 (k = 2 is order-invariant).
    pub order_drift: Option<f64>,
}

/// One pair's decomposition inside a pairwise-mode layer.
#[derive(Debug, Clone)]
pub struct PairReport {
    pub i: usize,
    pub j: usize,
    pub spectrum: ChainSpectrum,
    pub basis: SharedBasis,
}

/// Pairwise-mode diagnostics for one layer.
#[derive(Debug, Clone)]
pub struct PairwiseLayerReport {
    pub pairs: Vec<PairReport>,
    /// Orthonormalized union of each vector's pair bases; uniques are taken
    /// against these.
    pub union_bases: Vec<Matrix>,
    pub residuals: Vec<f64>,
}

/// Per-layer outcome of decompose_set.
#[derive(Debug, Clone)]
pub enum LayerReport {
    /// Layer lacks a usable 2-D shape and was passed through to unique.
    Undecomposed,
    Chain(ChainLayerReport),
    Pairwise(PairwiseLayerReport),
}

/// Everything decompose_set produces: per-vector shared and unique task
/// vectors, merged shared vectors, and per-layer diagnostics.
#[derive(Debug, Clone)]
pub struct DecompositionResult {
    pub shared: Vec<TaskVector>,
    pub unique: Vec<TaskVector>,
    pub merged: Vec<MergedComponent>,
    pub layers: BTreeMap<String, LayerReport>,
    pub undecomposed: Vec<String>,
    pub tau: f64,
    pub rank_tol: f64,
    pub mode: Mode,
}

/// Decomposes a set of task vectors layer by layer.
///
/// Layers without a usable 2-D shape (1-D tensors, scalars, empty extents)
/// pass through entirely to the unique component and are listed as
/// undecomposed; tensors of 3 or more dimensions are reshaped to
/// (leading axis) x (everything else) for the duration of the split.
pub fn decompose_set(
    vectors: &[TaskVector],
    tau: f64,
    rank_tol: f64,
    mode: Mode,
) -> Result<DecompositionResult> {
    if vectors.len() < 2 {
        return Err(Error::NeedTwoVectors(vectors.len()));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidThreshold(tau));
    }
    if !(rank_tol >= 0.0) {
        return Err(Error::InvalidThreshold(rank_tol));
    }
    for v in &vectors[1..] {
        vectors[0].same_structure(v)?;
    }

    let k = vectors.len();
    let names: Vec<String> = vectors[0].layer_names().cloned().collect();
    let merged_members: Vec<Vec<usize>> = match mode {
        Mode::Chain => vec![(0..k).collect()],
        Mode::Pairwise => {
            let mut pairs = Vec::new();
            for i in 0..k {
                for j in i + 1..k {
                    pairs.push(vec![i, j]);
                }
            }
            pairs
        }
    };

    let mut shared: Vec<TaskVector> = (0..k).map(|_| TaskVector::new()).collect();
    let mut unique: Vec<TaskVector> = (0..k).map(|_| TaskVector::new()).collect();
    let mut merged_vectors: Vec<TaskVector> =
        merged_members.iter().map(|_| TaskVector::new()).collect();
    let mut layers = BTreeMap::new();
    let mut undecomposed = Vec::new();

    for name in &names {
        let tensors: Vec<&Tensor> = vectors.iter().map(|v| v.get(name).expect("checked")).collect();
        if !tensors[0].is_decomposable() {
            for i in 0..k {
                shared[i].insert(name.clone(), tensors[i].zeros_like())?;
                unique[i].insert(name.clone(), tensors[i].clone())?;
            }
            for m in &mut merged_vectors {
                m.insert(name.clone(), tensors[0].zeros_like())?;
            }
            layers.insert(name.clone(), LayerReport::Undecomposed);
            undecomposed.push(name.clone());
            continue;
        }

        let dims = tensors[0].dims().to_vec();
        let ws: Vec<Matrix> = tensors
            .iter()
            .map(|t| t.as_matrix_2d())
            .collect::<Result<_>>()?;
        let refs: Vec<&Matrix> = ws.iter().collect();

        match mode {
            Mode::Chain => {
                let (dec, spectrum, ps) = layer_chain(&refs, tau, rank_tol)?;
                let residuals = reconstruction_residuals(&refs, &dec.shared_parts, &dec.unique_parts)?;
                let order_drift = if k > 2 {
                    Some(order_drift(&ps, &spectrum)?)
                } else {
                    None
                };
                for i in 0..k {
                    shared[i].insert(
                        name.clone(),
                        Tensor::from_matrix_2d(dec.shared_parts[i].clone(), &dims)?,
                    )?;
                    unique[i].insert(
                        name.clone(),
                        Tensor::from_matrix_2d(dec.unique_parts[i].clone(), &dims)?,
                    )?;
                }
                merged_vectors[0]
                    .insert(name.clone(), Tensor::from_matrix_2d(dec.merged_shared, &dims)?)?;
                layers.insert(
                    name.clone(),
                    LayerReport::Chain(ChainLayerReport {
                        spectrum,
                        basis: dec.basis,
                        residuals,
                        order_drift,
                    }),
                );
            }
            Mode::Pairwise => {
                let ps: Vec<Projector> = refs
                    .iter()
                    .map(|w| column_projector(w, rank_tol))
                    .collect::<Result<_>>()?;
                let mut pair_reports = Vec::new();
                let mut member_bases: Vec<Vec<&Matrix>> = vec![Vec::new(); k];
                for (pair_idx, members) in merged_members.iter().enumerate() {
                    let (i, j) = (members[0], members[1]);
                    let spectrum =
                        chain_projectors(&[ps[i].clone(), ps[j].clone()], &[0, 1])?;
                    let basis = shared_basis(&spectrum, tau)?;
                    let (si, _) = split(refs[i], &basis)?;
                    let (sj, _) = split(refs[j], &basis)?;
                    let merged = merge_shared(&[si, sj])?;
                    merged_vectors[pair_idx]
                        .insert(name.clone(), Tensor::from_matrix_2d(merged, &dims)?)?;
                    pair_reports.push(PairReport { i, j, spectrum, basis });
                }
                for (p, members) in merged_members.iter().enumerate() {
                    for &m in members {
                        member_bases[m].push(&pair_reports[p].basis.z);
                    }
                }
                let union_bases: Vec<Matrix> = member_bases
                    .iter()
                    .map(|bs| union_basis(refs[0].rows(), bs))
                    .collect();
                let mut shared_parts = Vec::with_capacity(k);
                let mut unique_parts = Vec::with_capacity(k);
                for i in 0..k {
                    let proj = if union_bases[i].cols() == 0 {
                        Matrix::zeros(refs[i].rows(), refs[i].cols())
                    } else {
                        Projector::from_basis(&union_bases[i])?.apply(refs[i])?
                    };
                    let u = refs[i].sub(&proj)?;
                    shared_parts.push(proj);
                    unique_parts.push(u);
                }
                let residuals = reconstruction_residuals(&refs, &shared_parts, &unique_parts)?;
                for i in 0..k {
                    shared[i].insert(
                        name.clone(),
                        Tensor::from_matrix_2d(shared_parts[i].clone(), &dims)?,
                    )?;
                    unique[i].insert(
                        name.clone(),
                        Tensor::from_matrix_2d(unique_parts[i].clone(), &dims)?,
                    )?;
                }
                layers.insert(
                    name.clone(),
                    LayerReport::Pairwise(PairwiseLayerReport {
                        pairs: pair_reports,
                        union_bases,
                        residuals,
                    }),
                );
            }
        }
    }

    let merged = merged_members
        .into_iter()
        .zip(merged_vectors)
        .map(|(members, vector)| MergedComponent { members, vector })
        .collect();

    Ok(DecompositionResult {
        shared,
        unique,
        merged,
        layers,
        undecomposed,
        tau,
        rank_tol,
        mode,
    })
}

/// Orthonormalized concatenation of several bases sharing an ambient
/// dimension; empty input gives an n x 0 basis.
fn union_basis(n: usize, bases: &[&Matrix]) -> Matrix {
    let total: usize = bases.iter().map(|b| b.cols()).sum();
    let mut stacked = Matrix::zeros(n, total);
    let mut at = 0;
    for b in bases {
        for j in 0..b.cols() {
            for i in 0..n {
                stacked.set(i, at, b.get(i, j));
            }
            at += 1;
        }
    }
    linalg::mgs_orthonormalize(&stacked, UNION_DROP_TOL)
}

fn reconstruction_residuals(
    ws: &[&Matrix],
    shared: &[Matrix],
    unique: &[Matrix],
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(ws.len());
    for i in 0..ws.len() {
        let err = shared[i].add(&unique[i])?.sub(ws[i])?.frobenius_norm();
        let denom = ws[i].frobenius_norm();
        out.push(if denom == 0.0 { err } else { err / denom });
    }
    Ok(out)
}

/// Largest elementwise eigenvalue deviation between the ascending-order
/// chain and three deterministically shuffled reorderings.
fn order_drift(ps: &[Projector], reference: &ChainSpectrum) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let mut order: Vec<usize> = (0..ps.len()).collect();
        order.shuffle(&mut rng);
        let spectrum = chain_projectors(ps, &order)?;
        for (a, b) in spectrum.values.iter().zip(reference.values.iter()) {
            worst = worst.max(crate::fmath::abs(a - b));
        }
    }
    Ok(worst)
}
