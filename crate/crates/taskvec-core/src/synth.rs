// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic task-vector sets with planted shared subspaces.
//!
//! A planted instance draws one orthonormal frame, reserves `r` of its
//! columns as the shared subspace and `u` disjoint columns per vector as
//! unique subspaces, then mixes both with Gaussian coefficients. Recovery is
//! measured as principal angles between the planted shared basis and
//! whatever the decomposition returns, across noise levels.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::angles;
use crate::decompose::{self, ChainSpectrum, Mode, SharedBasis};
use crate::error::Error;
use crate::linalg;
use crate::matrix::Matrix;
use crate::tensor::{TaskVector, Tensor};
use crate::Result;

/// Noise level at half a right angle is meaningless; angles live in [0, pi/2].
const RIGHT_ANGLE: f64 = core::f64::consts::FRAC_PI_2;

/// Layer name given to the planted matrices when they are run through the
/// task-vector pipeline.
pub const PLANTED_LAYER: &str = "weights";

/// Geometry of a planted instance. Defaults give two 512x512 vectors with a
/// 100-dimensional shared subspace and 100 unique dimensions each.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantSpec {
    pub ambient_dim: usize,
    pub cols: usize,
    pub shared_dim: usize,
    pub unique_dim_per_vector: usize,
    pub num_vectors: usize,
    pub coeff_scale: f64,
}

impl Default for PlantSpec {
    fn default() -> Self {
        Self {
            ambient_dim: 512,
            cols: 512,
            shared_dim: 100,
            unique_dim_per_vector: 100,
            num_vectors: 2,
            coeff_scale: 1.0,
        }
    }
}

impl PlantSpec {
    /// Checks the planted subspaces fit disjointly in the ambient space.
    /// `shared_dim = 0` (nothing shared) and `unique_dim_per_vector = 0`
    /// (everything shared) are both legal, but not together.
    pub fn validate(&self) -> Result<()> {
        if self.ambient_dim == 0 || self.cols == 0 {
            return Err(Error::InvalidSpec("ambient_dim and cols must be positive".into()));
        }
        if self.num_vectors < 2 {
            return Err(Error::InvalidSpec("num_vectors must be at least 2".into()));
        }
        if self.shared_dim + self.unique_dim_per_vector == 0 {
            return Err(Error::InvalidSpec(
                "shared_dim + unique_dim_per_vector must be at least 1".into(),
            ));
        }
        let needed = self.shared_dim + self.num_vectors * self.unique_dim_per_vector;
        if needed > self.ambient_dim {
            return Err(Error::InvalidSpec(alloc::format!(
                "planted subspaces need {} dimensions but ambient space has {}",
                needed,
                self.ambient_dim
            )));
        }
        if !(self.coeff_scale > 0.0 && self.coeff_scale.is_finite()) {
            return Err(Error::InvalidSpec("coeff_scale must be positive and finite".into()));
        }
        Ok(())
    }

    /// Total planted rank of each vector.
    pub fn planted_rank(&self) -> usize {
        self.shared_dim + self.unique_dim_per_vector
    }
}

/// A generated task-vector set together with its ground truth.
#[derive(Debug, Clone)]
pub struct PlantedInstance {
    pub vectors: Vec<Matrix>,
    pub truth_shared: Matrix,
    pub truth_uniques: Vec<Matrix>,
    pub seed: u64,
}

/// Recovery quality of one decomposition against the planted truth.
#[derive(Debug, Clone)]
pub struct RecoveryReport {
    pub mean_angle_rad: f64,
    pub max_angle_rad: f64,
    pub recovered_dim: usize,
    pub true_dim: usize,
    pub sigma: f64,
}

/// Eigenvalue histogram with uniform bins.
#[derive(Debug, Clone)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Generates a planted instance: one Gaussian frame orthonormalized, columns
/// partitioned into the shared basis and per-vector unique bases, and vector
/// `i` formed as `truth_shared * A_i + truth_unique_i * B_i` with Gaussian
/// coefficients scaled by `coeff_scale`. Deterministic in (spec, seed).
pub fn plant(spec: &PlantSpec, seed: u64) -> Result<PlantedInstance> {
    spec.validate()?;
    let n = spec.ambient_dim;
    let m = spec.cols;
    let r = spec.shared_dim;
    let u = spec.unique_dim_per_vector;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let g = gaussian_matrix(n, n, 1.0, &mut rng);
    let q = linalg::qr_orthonormal(&g)?;
    debug_assert_eq!(q.cols(), n);

    let truth_shared = q.select_columns(&(0..r).collect::<Vec<_>>());
    let mut truth_uniques = Vec::with_capacity(spec.num_vectors);
    for i in 0..spec.num_vectors {
        let start = r + i * u;
        truth_uniques.push(q.select_columns(&(start..start + u).collect::<Vec<_>>()));
    }

    let mut vectors = Vec::with_capacity(spec.num_vectors);
    for unique in &truth_uniques {
        let a = gaussian_matrix(r, m, spec.coeff_scale, &mut rng);
        let b = gaussian_matrix(u, m, spec.coeff_scale, &mut rng);
        let w = truth_shared.matmul(&a)?.add(&unique.matmul(&b)?)?;
        vectors.push(w);
    }

    Ok(PlantedInstance { vectors, truth_shared, truth_uniques, seed })
}

/// `m` plus i.i.d. Gaussian noise of standard deviation `sigma`. A zero
/// sigma returns the input bitwise.
pub fn add_noise(m: &Matrix, sigma: f64, seed: u64) -> Result<Matrix> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidSpec(alloc::format!("noise sigma must be nonnegative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(m.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(m.rows() * m.cols());
    for v in m.data() {
        let noise: f64 = rng.sample(StandardNormal);
        data.push(v + sigma * noise);
    }
    Matrix::new(m.rows(), m.cols(), data)
}

/// Principal angles between the planted shared subspace and a recovered
/// basis. An empty recovery against a nonzero truth reports the worst case
/// (pi/2); an empty recovery of an empty truth reports perfect agreement.
pub fn recovery_report(
    instance: &PlantedInstance,
    recovered: &SharedBasis,
    sigma: f64,
) -> Result<RecoveryReport> {
    let n = instance.truth_shared.rows();
    if recovered.dim() != n {
        return Err(Error::DimensionMismatch(alloc::format!(
            "recovered basis lives in dimension {}, truth in {}",
            recovered.dim(),
            n
        )));
    }
    let true_dim = instance.truth_shared.cols();
    let recovered_dim = recovered.r_shared();
    let (mean, max) = match (true_dim, recovered_dim) {
        (0, 0) => (0.0, 0.0),
        (0, _) | (_, 0) => (RIGHT_ANGLE, RIGHT_ANGLE),
        _ => {
            let report = angles::principal_angles(&instance.truth_shared, &recovered.z)?;
            (report.mean_rad, report.max_rad)
        }
    };
    Ok(RecoveryReport {
        mean_angle_rad: mean,
        max_angle_rad: max,
        recovered_dim,
        true_dim,
        sigma,
    })
}

/// Histogram of chain eigenvalues over uniform bins spanning at least [0, 1]
/// (wider if the spectrum overshoots). The last bin includes its upper edge.
pub fn eig_histogram(spectrum: &ChainSpectrum, bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::InvalidSpec(alloc::format!("need at least 2 bins, got {bins}")));
    }
    let mut lo: f64 = 0.0;
    let mut hi: f64 = 1.0;
    for v in &spectrum.values {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let width = (hi - lo) / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0usize; bins];
    for v in &spectrum.values {
        let raw = ((v - lo) / width) as usize;
        counts[raw.min(bins - 1)] += 1;
    }
    Ok(Histogram { bin_edges, counts })
}

/// Per-trial recovery outcome inside a sweep; `trial` indexes within the
/// sigma, the sigma itself lives in the report.
#[derive(Debug, Clone)]
pub struct SweepTrial {
    pub trial: usize,
    pub report: RecoveryReport,
}

/// Aggregate recovery over the trials of one sigma.
#[derive(Debug, Clone)]
pub struct SigmaSummary {
    pub sigma: f64,
    pub mean_angle_rad: f64,
    pub max_angle_rad: f64,
    pub mean_recovered_dim: f64,
    pub trials: usize,
}

/// Full sweep output: every trial plus per-sigma means.
#[derive(Debug, Clone)]
pub struct NoiseSweep {
    pub trials: Vec<SweepTrial>,
    pub per_sigma: Vec<SigmaSummary>,
}

/// Plants, perturbs, decomposes, and measures recovery for every
/// (sigma, trial) combination. Per-trial seeds are `seed + 1000003 * index`
/// with `index` running sigma-major, so any single trial can be replayed in
/// isolation.
pub fn noise_sweep(
    spec: &PlantSpec,
    sigmas: &[f64],
    trials: usize,
    tau: f64,
    seed: u64,
) -> Result<NoiseSweep> {
    spec.validate()?;
    if trials == 0 {
        return Err(Error::InvalidSpec("need at least one trial".into()));
    }
    for s in sigmas {
        if !(s >= &0.0 && s.is_finite()) {
            return Err(Error::InvalidSpec(alloc::format!("noise sigma must be nonnegative, got {s}")));
        }
    }

    let jobs: Vec<(f64, u64)> = sigmas
        .iter()
        .enumerate()
        .flat_map(|(si, &sigma)| {
            (0..trials).map(move |trial| {
                let flat = (si * trials + trial) as u64;
                (sigma, seed.wrapping_add(1_000_003u64.wrapping_mul(flat)))
            })
        })
        .collect();

    // Each trial is pure in its own seed, so the parallel build collects the
    // serial results exactly, in the same sigma-major order.
    #[cfg(feature = "parallel")]
    let reports: Vec<RecoveryReport> = {
        use rayon::prelude::*;
        jobs.par_iter().map(|&(sigma, s)| run_trial(spec, sigma, tau, s)).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let reports: Vec<RecoveryReport> =
        jobs.iter().map(|&(sigma, s)| run_trial(spec, sigma, tau, s)).collect::<Result<_>>()?;

    let mut all = Vec::with_capacity(sigmas.len() * trials);
    let mut per_sigma = Vec::with_capacity(sigmas.len());
    let mut it = reports.into_iter();
    for &sigma in sigmas {
        let mut mean_sum = 0.0;
        let mut max_all: f64 = 0.0;
        let mut dim_sum = 0.0;
        for trial in 0..trials {
            let report = it.next().expect("one report per job");
            mean_sum += report.mean_angle_rad;
            max_all = max_all.max(report.max_angle_rad);
            dim_sum += report.recovered_dim as f64;
            all.push(SweepTrial { trial, report });
        }
        per_sigma.push(SigmaSummary {
            sigma,
            mean_angle_rad: mean_sum / trials as f64,
            max_angle_rad: max_all,
            mean_recovered_dim: dim_sum / trials as f64,
            trials,
        });
    }
    Ok(NoiseSweep { trials: all, per_sigma })
}

/// One planted trial: noise on every vector, chain decomposition, recovery.
pub fn run_trial(spec: &PlantSpec, sigma: f64, tau: f64, trial_seed: u64) -> Result<RecoveryReport> {
    let (instance, rep) = trial_layer_report(spec, sigma, tau, trial_seed)?;
    recovery_report(&instance, &rep.basis, sigma)
}

/// Chain spectrum of the same trial [`run_trial`] would build for this seed,
/// for histogramming eigenvalue distributions.
pub fn trial_spectrum(
    spec: &PlantSpec,
    sigma: f64,
    tau: f64,
    trial_seed: u64,
) -> Result<ChainSpectrum> {
    Ok(trial_layer_report(spec, sigma, tau, trial_seed)?.1.spectrum)
}

fn trial_layer_report(
    spec: &PlantSpec,
    sigma: f64,
    tau: f64,
    trial_seed: u64,
) -> Result<(PlantedInstance, decompose::ChainLayerReport)> {
    let mut master = ChaCha8Rng::seed_from_u64(trial_seed);
    let plant_seed: u64 = master.gen();
    let instance = plant(spec, plant_seed)?;
    let noisy: Vec<Matrix> = instance
        .vectors
        .iter()
        .map(|w| add_noise(w, sigma, master.gen()))
        .collect::<Result<_>>()?;

    let rank_tol = if sigma == 0.0 {
        decompose::DEFAULT_RANK_TOL
    } else {
        derived_rank_tol(&noisy[0], spec.planted_rank())?
    };

    let task_vectors: Vec<TaskVector> = noisy
        .into_iter()
        .map(|w| {
            let mut v = TaskVector::new();
            v.insert(PLANTED_LAYER, Tensor::from_matrix(w))?;
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let mut result = decompose::decompose_set(&task_vectors, tau, rank_tol, Mode::Chain)?;
    match result.layers.remove(PLANTED_LAYER) {
        Some(decompose::LayerReport::Chain(rep)) => Ok((instance, rep)),
        _ => unreachable!("planted layer is always 2-D"),
    }
}

/// Rank tolerance sitting in the middle of the spectral gap at the planted
/// rank: with noise the vectors are numerically full rank, and truncating at
/// the gap keeps exactly the planted directions. Falls back to the default
/// tolerance when no gap exists (planted rank = full rank).
pub fn derived_rank_tol(w: &Matrix, planted_rank: usize) -> Result<f64> {
    let sv = linalg::singular_values(w)?;
    if planted_rank == 0 || planted_rank >= sv.len() || sv[0] == 0.0 {
        return Ok(decompose::DEFAULT_RANK_TOL);
    }
    Ok((sv[planted_rank - 1] + sv[planted_rank]) / (2.0 * sv[0]))
}

pub(crate) fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let x: f64 = rng.sample(StandardNormal);
        data.push(scale * x);
    }
    Matrix::new(rows, cols, data).expect("gaussian entries are finite")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> PlantSpec {
        PlantSpec {
            ambient_dim: 24,
            cols: 20,
            shared_dim: 4,
            unique_dim_per_vector: 3,
            num_vectors: 2,
            coeff_scale: 1.0,
        }
    }

    #[test]
    fn plant_rejects_oversized_subspaces() {
        let mut spec = small_spec();
        spec.unique_dim_per_vector = 11;
        assert!(matches!(plant(&spec, 0), Err(Error::InvalidSpec(_))));
        let mut nothing = small_spec();
        nothing.shared_dim = 0;
        nothing.unique_dim_per_vector = 0;
        assert!(matches!(plant(&nothing, 0), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn planted_truth_bases_are_mutually_orthogonal() {
        let inst = plant(&small_spec(), 3).unwrap();
        let mut bases = vec![&inst.truth_shared];
        bases.extend(inst.truth_uniques.iter());
        for i in 0..bases.len() {
            assert!(linalg::orthonormality_defect(bases[i]) <= 1e-10);
            for j in i + 1..bases.len() {
                let overlap = bases[i].transpose().matmul(bases[j]).unwrap();
                assert!(overlap.max_abs() <= 1e-8, "bases {i} and {j} overlap");
            }
        }
    }

    #[test]
    fn planted_vectors_contain_the_shared_directions() {
        let inst = plant(&small_spec(), 5).unwrap();
        for w in &inst.vectors {
            let p = decompose::column_projector(w, 1e-10).unwrap();
            let z = p.apply(&inst.truth_shared).unwrap();
            let err = z.sub(&inst.truth_shared).unwrap().frobenius_norm();
            assert!(err <= 1e-8 * inst.truth_shared.frobenius_norm());
        }
    }

    #[test]
    fn plant_is_bitwise_deterministic() {
        let a = plant(&small_spec(), 11).unwrap();
        let b = plant(&small_spec(), 11).unwrap();
        for (x, y) in a.vectors.iter().zip(b.vectors.iter()) {
            assert_eq!(x.data(), y.data());
        }
        assert_eq!(a.truth_shared.data(), b.truth_shared.data());
    }

    #[test]
    fn zero_noise_is_bitwise_identity() {
        let m = Matrix::new(2, 2, vec![1.0, -0.0, 3.5, -2.25]).unwrap();
        let out = add_noise(&m, 0.0, 99).unwrap();
        assert_eq!(out.data(), m.data());
    }

    #[test]
    fn noise_has_the_requested_spread() {
        let m = Matrix::zeros(1000, 1000);
        let out = add_noise(&m, 1.0, 42).unwrap();
        let n = out.data().len() as f64;
        let mean: f64 = out.data().iter().sum::<f64>() / n;
        let var: f64 = out.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!((std - 1.0).abs() < 0.05, "sample std {std}");
    }

    #[test]
    fn different_noise_seeds_differ() {
        let m = Matrix::zeros(4, 4);
        let a = add_noise(&m, 0.5, 1).unwrap();
        let b = add_noise(&m, 0.5, 2).unwrap();
        assert_ne!(a.data(), b.data());
    }

    #[test]
    fn add_noise_rejects_negative_sigma() {
        let m = Matrix::zeros(2, 2);
        assert!(matches!(add_noise(&m, -0.1, 0), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn histogram_covers_unit_interval_and_counts_everything() {
        let spectrum = ChainSpectrum {
            values: vec![1.0, 1.0, 0.0],
            vectors: Matrix::identity(3),
            k: 2,
            symmetrized: true,
        };
        let h = eig_histogram(&spectrum, 2).unwrap();
        assert_eq!(h.bin_edges.first().copied(), Some(0.0));
        assert_eq!(h.bin_edges.last().copied(), Some(1.0));
        // A value at the top edge lands in the last bin, not past it.
        assert_eq!(h.counts, vec![1, 2]);
        assert!(matches!(eig_histogram(&spectrum, 1), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn histogram_of_all_ones_fills_the_top_bin() {
        let spectrum = ChainSpectrum {
            values: vec![1.0; 7],
            vectors: Matrix::identity(7),
            k: 2,
            symmetrized: true,
        };
        let h = eig_histogram(&spectrum, 10).unwrap();
        assert_eq!(h.counts[9], 7);
        assert_eq!(h.counts.iter().sum::<usize>(), 7);
    }

    #[test]
    fn noise_free_trial_recovers_the_planted_subspace() {
        let report = run_trial(&small_spec(), 0.0, 0.85, 17).unwrap();
        assert_eq!(report.true_dim, 4);
        assert_eq!(report.recovered_dim, 4);
        assert!(report.mean_angle_rad <= 1e-6, "mean {}", report.mean_angle_rad);
    }

    #[test]
    fn nothing_planted_recovers_nothing() {
        let mut spec = small_spec();
        spec.shared_dim = 0;
        let report = run_trial(&spec, 0.0, 0.85, 21).unwrap();
        assert_eq!(report.true_dim, 0);
        assert_eq!(report.recovered_dim, 0);
        assert_eq!(report.mean_angle_rad, 0.0);
    }

    #[test]
    fn empty_recovery_reports_the_worst_angle() {
        let inst = plant(&small_spec(), 2).unwrap();
        let spectrum = ChainSpectrum {
            values: vec![0.1; 24],
            vectors: Matrix::identity(24),
            k: 2,
            symmetrized: true,
        };
        let empty = decompose::shared_basis(&spectrum, 0.85).unwrap();
        let report = recovery_report(&inst, &empty, 0.3).unwrap();
        assert_eq!(report.recovered_dim, 0);
        assert_eq!(report.mean_angle_rad, RIGHT_ANGLE);
        assert_eq!(report.max_angle_rad, RIGHT_ANGLE);
    }

    #[test]
    fn derived_rank_tol_sits_inside_the_gap() {
        // Singular values 10, 8, then noise-scale 0.1: the derived cutoff
        // must keep exactly the two planted directions.
        let mut m = Matrix::zeros(4, 4);
        for (i, s) in [10.0, 8.0, 0.1, 0.05].iter().enumerate() {
            m.set(i, i, *s);
        }
        let tol = derived_rank_tol(&m, 2).unwrap();
        let f = linalg::svd(&m, tol).unwrap();
        assert_eq!(f.rank(), 2);
    }

    #[test]
    fn sweep_is_deterministic_and_aggregated_per_sigma() {
        let spec = small_spec();
        let a = noise_sweep(&spec, &[0.0, 0.1], 2, 0.85, 9).unwrap();
        let b = noise_sweep(&spec, &[0.0, 0.1], 2, 0.85, 9).unwrap();
        assert_eq!(a.trials.len(), 4);
        assert_eq!(a.per_sigma.len(), 2);
        for (x, y) in a.trials.iter().zip(b.trials.iter()) {
            assert_eq!(x.report.mean_angle_rad.to_bits(), y.report.mean_angle_rad.to_bits());
        }
        assert!(a.per_sigma[0].mean_angle_rad <= 1e-6);
        assert_eq!(a.per_sigma[0].trials, 2);
    }
}
