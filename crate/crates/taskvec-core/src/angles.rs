// SPDX-License-Identifier: MIT OR Apache-2.0

//! Principal angles between subspaces and cross-validation of the two
//! shared-subspace recovery routes.
//!
//! Principal angles generalize the angle between lines: for subspaces of
//! dimensions p >= q they are the q values `acos(s_k)` where `s_k` are the
//! singular values of `Qa^T Qb` with orthonormal bases `Qa`, `Qb`. The
//! cross-check recovers the shared subspace once through chained projectors
//! and once through rank-revealing QR, then reports the angles between the
//! two answers; routes that agree produce angles near zero.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decompose::{self, DEFAULT_RANK_TOL};
use crate::error::Error;
use crate::fmath;
use crate::linalg;
use crate::matrix::Matrix;
use crate::synth;
use crate::tensor::TaskVector;
use crate::Result;

const RIGHT_ANGLE: f64 = core::f64::consts::FRAC_PI_2;

/// Noise level used when `cross_validate` generates its own instances.
pub const CROSS_VALIDATE_SIGMA: f64 = 0.1;

/// Principal angles between two subspaces, ascending, in radians.
///
/// `dims` records the two subspace dimensions as `(p, q)` with `p >= q`;
/// there are `q` angles. Two degenerate shapes appear only in
/// cross-validation output: `(0, 0)` means both routes returned an empty
/// subspace (perfect agreement, mean and max zero), and `(p, 0)` with
/// `p > 0` means exactly one route was empty (total disagreement, mean and
/// max pi/2).
#[derive(Debug, Clone, PartialEq)]
pub struct AngleReport {
    pub angles_rad: Vec<f64>,
    pub mean_rad: f64,
    pub max_rad: f64,
    pub dims: (usize, usize),
}

impl AngleReport {
    /// True when both compared subspaces were empty.
    pub fn both_empty(&self) -> bool {
        self.dims == (0, 0)
    }
}

/// Principal angles between the column spaces of `a` and `b`.
///
/// The inputs need not be orthonormal; each is replaced by an orthonormal
/// basis of its column space first, so only the spans matter. Angles come
/// back ascending in [0, pi/2]. Zero or column-less inputs are rejected:
/// they span no subspace to compare.
pub fn principal_angles(a: &Matrix, b: &Matrix) -> Result<AngleReport> {
    if a.rows() != b.rows() {
        return Err(Error::DimensionMismatch(alloc::format!(
            "subspaces live in different ambient dimensions {} and {}",
            a.rows(),
            b.rows()
        )));
    }
    if a.cols() == 0 || a.is_zero() || b.cols() == 0 || b.is_zero() {
        return Err(Error::ZeroSubspace);
    }
    let qa = linalg::qr_orthonormal(a)?;
    let qb = linalg::qr_orthonormal(b)?;
    angles_between_orthonormal(&qa, &qb)
}

/// Mean principal angle, a scalar measure of how far apart two subspaces
/// sit. Zero means one contains the other.
pub fn subspace_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    Ok(principal_angles(a, b)?.mean_rad)
}

/// Recovers the shared subspace along both routes and reports how well they
/// agree.
///
/// With two or more task vectors supplied, every matrix-shaped layer of the
/// first two is checked and one report per such layer is returned, in layer
/// order; `trials` is ignored. With an empty slice, `trials` synthetic
/// instances are generated instead (default geometry, noise
/// [`CROSS_VALIDATE_SIGMA`]), one report per trial, with trial `t` seeded
/// by `seed + t` so single trials can be replayed.
pub fn cross_validate(
    vectors: &[TaskVector],
    tau: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<AngleReport>> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidThreshold(tau));
    }
    if vectors.is_empty() {
        return cross_validate_generated(tau, trials, seed);
    }
    if vectors.len() < 2 {
        return Err(Error::NeedTwoVectors(vectors.len()));
    }
    let (a, b) = (&vectors[0], &vectors[1]);
    a.same_structure(b)?;
    let mut reports = Vec::new();
    for (name, tensor) in a.iter() {
        if !tensor.is_decomposable() {
            continue;
        }
        let wa = tensor.as_matrix_2d()?;
        let wb = b.get(name).expect("structures match").as_matrix_2d()?;
        reports.push(validate_pair(&wa, &wb, tau, DEFAULT_RANK_TOL, DEFAULT_RANK_TOL, None)?);
    }
    Ok(reports)
}

/// Generator for self-validation trials. Square instances with the same
/// shared-to-unique proportions as the sweep generator's default, sized so
/// that a hundred trials finish in seconds on one core; route agreement at
/// a fixed noise level does not depend on the ambient dimension.
fn generated_spec() -> synth::PlantSpec {
    synth::PlantSpec {
        ambient_dim: 128,
        cols: 128,
        shared_dim: 25,
        unique_dim_per_vector: 25,
        num_vectors: 2,
        coeff_scale: 1.0,
    }
}

fn cross_validate_generated(tau: f64, trials: usize, seed: u64) -> Result<Vec<AngleReport>> {
    if trials == 0 {
        return Err(Error::InvalidSpec("need at least one trial".into()));
    }
    let spec = generated_spec();
    let rho = spec.planted_rank();
    let one = |t: usize| -> Result<AngleReport> {
        let mut master = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
        let plant_seed: u64 = master.gen();
        let instance = synth::plant(&spec, plant_seed)?;
        let wa = synth::add_noise(&instance.vectors[0], CROSS_VALIDATE_SIGMA, master.gen())?;
        let wb = synth::add_noise(&instance.vectors[1], CROSS_VALIDATE_SIGMA, master.gen())?;
        // Noise makes the vectors numerically full rank; truncate at the
        // spectral gap so both routes see the planted rank.
        let rank_tol = synth::derived_rank_tol(&wa, rho)?;
        validate_pair(&wa, &wb, tau, rank_tol, DEFAULT_RANK_TOL, Some(rho))
    };
    // Trials are pure in their own seeds, so the parallel build collects the
    // serial results exactly, in trial order.
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..trials).into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..trials).map(one).collect()
    }
}

/// One two-route comparison. The chain route truncates by singular value
/// (`svd_rank_tol`); the QR route truncates by diagonal decay
/// (`qr_rel_tol`) and optionally caps the basis at `qr_cap` columns.
fn validate_pair(
    wa: &Matrix,
    wb: &Matrix,
    tau: f64,
    svd_rank_tol: f64,
    qr_rel_tol: f64,
    qr_cap: Option<usize>,
) -> Result<AngleReport> {
    let chain = chain_route(wa, wb, tau, svd_rank_tol)?;
    let qr = qr_route(wa, wb, tau, qr_rel_tol, qr_cap)?;
    match (chain.cols(), qr.cols()) {
        (0, 0) => Ok(AngleReport {
            angles_rad: Vec::new(),
            mean_rad: 0.0,
            max_rad: 0.0,
            dims: (0, 0),
        }),
        (0, d) | (d, 0) => Ok(AngleReport {
            angles_rad: Vec::new(),
            mean_rad: RIGHT_ANGLE,
            max_rad: RIGHT_ANGLE,
            dims: (d, 0),
        }),
        _ => principal_angles(&chain, &qr),
    }
}

/// Shared subspace via column-space projectors and the chained-projector
/// spectrum.
fn chain_route(wa: &Matrix, wb: &Matrix, tau: f64, rank_tol: f64) -> Result<Matrix> {
    let pa = decompose::column_projector(wa, rank_tol)?;
    let pb = decompose::column_projector(wb, rank_tol)?;
    let spectrum = decompose::chain_projectors(&[pa, pb], &[0, 1])?;
    let basis = decompose::shared_basis(&spectrum, tau)?;
    Ok(basis.z)
}

/// Refinement cycles for a rank-capped QR range. Each cycle contracts the
/// error of every captured direction by the square of its noise-to-signal
/// ratio, so a handful suffices for the directions the threshold keeps.
const QR_REFINE_CYCLES: usize = 6;

/// Shared subspace via rank-revealing QR of each vector and a small SVD of
/// the basis overlap. Directions whose squared cosine clears `tau` are
/// kept, expressed in the first vector's basis to match the anchoring of
/// the chain route.
fn qr_route(
    wa: &Matrix,
    wb: &Matrix,
    tau: f64,
    rel_tol: f64,
    cap: Option<usize>,
) -> Result<Matrix> {
    let qa = qr_range(wa, rel_tol, cap)?;
    let qb = qr_range(wb, rel_tol, cap)?;
    if qa.cols() == 0 || qb.cols() == 0 {
        return Ok(Matrix::zeros(wa.rows(), 0));
    }
    let overlap = qa.transpose().matmul(&qb)?;
    let f = linalg::svd(&overlap, 0.0)?;
    let retained: Vec<usize> =
        (0..f.s.len()).filter(|&k| f.s[k] * f.s[k] > tau).collect();
    if retained.is_empty() {
        return Ok(Matrix::zeros(wa.rows(), 0));
    }
    qa.matmul(&f.u.select_columns(&retained))
}

/// QR-based range of `w`. Uncapped, the pivoted factorization alone is
/// exact: it spans the full numerical column space. Capped, the greedy
/// column selection only approximates the dominant subspace of a noisy
/// matrix, so the basis is polished by orthogonal iteration (alternating
/// multiplication by `w^T` and `w` with a QR re-orthonormalization after
/// each product), which drives it toward the dominant subspace without
/// involving the factorization path the chain route uses.
fn qr_range(w: &Matrix, rel_tol: f64, cap: Option<usize>) -> Result<Matrix> {
    let mut q = linalg::pivoted_qr_basis(w, rel_tol, cap)?;
    if cap.is_none() || q.cols() == 0 {
        return Ok(q);
    }
    let rank = q.cols();
    for _ in 0..QR_REFINE_CYCLES {
        let z = w.transpose().matmul(&q)?;
        let qz = linalg::pivoted_qr_basis(&z, 0.0, Some(rank))?;
        let y = w.matmul(&qz)?;
        q = linalg::pivoted_qr_basis(&y, 0.0, Some(rank))?;
    }
    Ok(q)
}

/// Angles between two already-orthonormal bases: the arccosines of the
/// singular values of their overlap, clamped into [0, 1] first so roundoff
/// cannot push a cosine out of range.
fn angles_between_orthonormal(qa: &Matrix, qb: &Matrix) -> Result<AngleReport> {
    // Orient so the residual below is taken for the smaller subspace
    // against the larger; the angles themselves are symmetric.
    let (big, small) = if qa.cols() >= qb.cols() { (qa, qb) } else { (qb, qa) };
    let overlap = big.transpose().matmul(small)?;
    // Cosines descend, so the angles come out ascending.
    let cosines = linalg::singular_values(&overlap)?;
    // Singular values of the small basis minus its projection onto the big
    // subspace are the sines of the same angles. A well-aligned direction
    // has cosine within rounding distance of 1, where acos amplifies that
    // rounding into ~1e-8 of angle; its sine is near 0, where asin is
    // accurate to machine precision. Read each angle off whichever side is
    // well conditioned.
    let residual = small.sub(&big.matmul(&overlap)?)?;
    let mut sines = linalg::singular_values(&residual)?;
    sines.reverse();
    let angles_rad: Vec<f64> = cosines
        .iter()
        .zip(&sines)
        .map(|(&c, &s)| {
            if c * c > 0.5 {
                fmath::asin(s.clamp(0.0, 1.0))
            } else {
                fmath::acos(c.clamp(0.0, 1.0))
            }
        })
        .collect();
    let mean_rad = angles_rad.iter().sum::<f64>() / angles_rad.len() as f64;
    let max_rad = angles_rad.iter().fold(0.0f64, |m, a| m.max(*a));
    let p = qa.cols().max(qb.cols());
    let q = qa.cols().min(qb.cols());
    Ok(AngleReport { angles_rad, mean_rad, max_rad, dims: (p, q) })
}
