// SPDX-License-Identifier: MIT OR Apache-2.0

//! Randomized checks of the library's algebraic contracts: factorization
//! laws, projector identities, spectrum bounds, order and rotation
//! invariance, threshold monotonicity, and edit algebra.

use proptest::prelude::*;
use taskvec_core::decompose::{
    self, chain_projectors, column_projector, shared_basis, Mode,
};
use taskvec_core::matrix::Matrix;
use taskvec_core::tensor::{TaskVector, Tensor};
use taskvec_core::{angles, linalg, synth, toy};

/// Matrix with independently drawn entries, shapes within the given caps.
fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 1..=max_cols)
        .prop_flat_map(|(r, c)| {
            prop::collection::vec(-2.0f64..2.0, r * c)
                .prop_map(move |data| Matrix::new(r, c, data).expect("finite entries"))
        })
}

fn sized_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |data| Matrix::new(rows, cols, data).expect("finite entries"))
}

/// Two matrices sharing a row count, so they describe subspaces of the same
/// ambient space.
fn matrix_pair(max_rows: usize, max_cols: usize) -> impl Strategy<Value = (Matrix, Matrix)> {
    (2..=max_rows, 1..=max_cols, 1..=max_cols)
        .prop_flat_map(|(n, ca, cb)| (sized_matrix(n, ca), sized_matrix(n, cb)))
}

/// Diagonally dominant square matrix, so its column space is full and the
/// orthonormalization below never drops a column.
fn orthonormal(size: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1.0f64..1.0, size * size).prop_map(move |data| {
        let mut m = Matrix::new(size, size, data).expect("finite entries");
        for i in 0..size {
            m.set(i, i, m.get(i, i) + 10.0);
        }
        linalg::qr_orthonormal(&m).expect("full rank by dominance")
    })
}

/// Planted pair with genuine shared structure, driven entirely by a seed.
fn planted_pair() -> impl Strategy<Value = (Matrix, Matrix)> {
    (1usize..=4, 1usize..=3, 14usize..=24, any::<u64>()).prop_map(
        |(shared, unique, ambient, seed)| {
            let spec = synth::PlantSpec {
                ambient_dim: ambient,
                cols: ambient,
                shared_dim: shared,
                unique_dim_per_vector: unique,
                num_vectors: 2,
                coeff_scale: 1.0,
            };
            let instance = synth::plant(&spec, seed).expect("valid spec");
            let mut vectors = instance.vectors.into_iter();
            (vectors.next().unwrap(), vectors.next().unwrap())
        },
    )
}

fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).expect("same shape").max_abs()
}

fn bits(m: &Matrix) -> Vec<u64> {
    m.data().iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #[test]
    fn svd_factors_are_orthonormal_and_reconstruct(m in matrix(10, 10)) {
        let f = linalg::svd(&m, 1e-10).unwrap();
        if f.rank() > 0 {
            let id = Matrix::identity(f.rank());
            let utu = f.u.transpose().matmul(&f.u).unwrap();
            prop_assert!(max_abs_diff(&utu, &id) <= 1e-10);
            let vtv = f.v.transpose().matmul(&f.v).unwrap();
            prop_assert!(max_abs_diff(&vtv, &id) <= 1e-10);
        }
        let rebuilt = f.reconstruct();
        let err = m.sub(&rebuilt).unwrap().frobenius_norm();
        prop_assert!(err <= 1e-8 * m.frobenius_norm().max(1.0));
    }

    #[test]
    fn sym_eig_recovers_planted_eigenvalues(
        q in orthonormal(6),
        mut values in prop::collection::vec(-5.0f64..5.0, 6),
    ) {
        let n = values.len();
        let d = Matrix::from_fn(n, n, |i, j| if i == j { values[i] } else { 0.0 });
        let a = q.matmul(&d).unwrap().matmul(&q.transpose()).unwrap().symmetrized().unwrap();
        let eig = linalg::sym_eig(&a).unwrap();
        values.sort_by(|x, y| y.total_cmp(x));
        for (got, want) in eig.values.iter().zip(&values) {
            prop_assert!((got - want).abs() <= 1e-8, "eigenvalue {got} vs planted {want}");
        }
    }

    #[test]
    fn qr_and_svd_agree_on_the_column_space(
        (a, b) in (2usize..=9, 1usize..=4, 1usize..=7)
            .prop_flat_map(|(n, k, m)| (sized_matrix(n, k), sized_matrix(k, m))),
    ) {
        let m = a.matmul(&b).unwrap();
        let f = linalg::svd(&m, 1e-10).unwrap();
        // Skip inputs whose numerical rank is ambiguous at the tolerance.
        prop_assume!(f.rank() > 0);
        prop_assume!(f.s[f.rank() - 1] > 1e-6 * f.s[0]);
        let q = linalg::qr_orthonormal(&m).unwrap();
        prop_assert_eq!(q.cols(), f.rank());
        let report = angles::principal_angles(&q, &f.u).unwrap();
        prop_assert!(report.max_rad <= 1e-6, "routes diverge by {} rad", report.max_rad);
    }

    #[test]
    fn factorizations_are_deterministic(m in matrix(8, 8)) {
        let f1 = linalg::svd(&m, 1e-10).unwrap();
        let f2 = linalg::svd(&m, 1e-10).unwrap();
        prop_assert_eq!(bits(&f1.u), bits(&f2.u));
        prop_assert_eq!(bits(&f1.v), bits(&f2.v));
        let s = m.matmul(&m.transpose()).unwrap().symmetrized().unwrap();
        let e1 = linalg::sym_eig(&s).unwrap();
        let e2 = linalg::sym_eig(&s).unwrap();
        prop_assert_eq!(bits(&e1.z), bits(&e2.z));
        prop_assert_eq!(e1.values, e2.values);
    }

    #[test]
    fn chain_spectrum_stays_in_the_unit_interval(
        ms in prop::collection::vec(matrix(10, 6), 2..=4),
    ) {
        let ps: Vec<_> = ms
            .iter()
            .map(|m| {
                let mut lifted = Matrix::zeros(10, m.cols());
                for i in 0..m.rows() {
                    for j in 0..m.cols() {
                        lifted.set(i, j, m.get(i, j));
                    }
                }
                column_projector(&lifted, 1e-10).unwrap()
            })
            .collect();
        let order: Vec<usize> = (0..ps.len()).collect();
        let spectrum = chain_projectors(&ps, &order).unwrap();
        for &v in &spectrum.values {
            prop_assert!((-1e-6..=1.0 + 1e-6).contains(&v), "eigenvalue {v} out of range");
        }
    }

    #[test]
    fn swapping_the_projector_pair_keeps_the_retained_subspace(
        (wa, wb) in planted_pair(),
    ) {
        let pa = column_projector(&wa, 1e-10).unwrap();
        let pb = column_projector(&wb, 1e-10).unwrap();
        let fwd = chain_projectors(&[pa.clone(), pb.clone()], &[0, 1]).unwrap();
        let rev = chain_projectors(&[pa, pb], &[1, 0]).unwrap();
        let basis_fwd = shared_basis(&fwd, decompose::DEFAULT_TAU).unwrap();
        let basis_rev = shared_basis(&rev, decompose::DEFAULT_TAU).unwrap();
        prop_assert_eq!(basis_fwd.z.cols(), basis_rev.z.cols());
        for (f, r) in basis_fwd.source_values.iter().zip(&basis_rev.source_values) {
            prop_assert!((f - r).abs() <= 1e-8, "retained eigenvalue {f} vs {r}");
        }
        if basis_fwd.z.cols() > 0 {
            // One chain order keeps the a-side principal directions, the
            // other the b-side; a retained direction with eigenvalue
            // lambda moves by at most acos(sqrt(lambda)) between them.
            let lambda_min = basis_fwd
                .source_values
                .iter()
                .chain(&basis_rev.source_values)
                .fold(1.0f64, |m, &v| m.min(v));
            let allowed = lambda_min.clamp(0.0, 1.0).sqrt().acos() + 1e-6;
            let report = angles::principal_angles(&basis_fwd.z, &basis_rev.z).unwrap();
            prop_assert!(
                report.max_rad <= allowed,
                "subspace moved {} rad, allowance {} (lambda_min {})",
                report.max_rad,
                allowed,
                lambda_min
            );
        }
    }

    #[test]
    fn raising_tau_never_grows_the_shared_rank(
        (wa, wb) in planted_pair(),
        lo in 0.05f64..0.95,
        delta in 0.0f64..0.5,
    ) {
        let hi = (lo + delta).min(1.0);
        let pa = column_projector(&wa, 1e-10).unwrap();
        let pb = column_projector(&wb, 1e-10).unwrap();
        let spectrum = chain_projectors(&[pa, pb], &[0, 1]).unwrap();
        let at_lo = shared_basis(&spectrum, lo).unwrap();
        let at_hi = shared_basis(&spectrum, hi).unwrap();
        prop_assert!(at_hi.z.cols() <= at_lo.z.cols());
    }

    #[test]
    fn decomposition_rebuilds_inputs_and_separates_components(
        (wa, wb) in planted_pair(),
        bias in prop::collection::vec(-1.0f64..1.0, 1..=6),
    ) {
        let mut va = TaskVector::new();
        va.insert("w", Tensor::from_matrix(wa.clone())).unwrap();
        va.insert("b", Tensor::from_vec(bias.clone()).unwrap()).unwrap();
        let mut vb = TaskVector::new();
        vb.insert("w", Tensor::from_matrix(wb.clone())).unwrap();
        vb.insert("b", Tensor::from_vec(bias).unwrap()).unwrap();

        let result = decompose::decompose_set(
            &[va.clone(), vb.clone()],
            decompose::DEFAULT_TAU,
            1e-10,
            Mode::Chain,
        )
        .unwrap();

        for (i, original) in [&va, &vb].into_iter().enumerate() {
            for (name, tensor) in original.iter() {
                let shared = result.shared[i].get(name).unwrap();
                let unique = result.unique[i].get(name).unwrap();
                let norm = tensor.data().iter().map(|v| v * v).sum::<f64>().sqrt();
                let err = tensor
                    .data()
                    .iter()
                    .zip(shared.data().iter().zip(unique.data()))
                    .map(|(o, (s, u))| (o - (s + u)).powi(2))
                    .sum::<f64>()
                    .sqrt();
                prop_assert!(err <= 1e-10 * norm.max(1.0), "layer {name}: residual {err:.3e}");
            }
        }

        let decompose::LayerReport::Chain(rep) = &result.layers["w"] else {
            panic!("weight layer should decompose");
        };
        if rep.basis.z.cols() > 0 {
            let p = rep.basis.projector().unwrap();
            let pm = p.matrix();
            prop_assert!(max_abs_diff(&pm.matmul(pm).unwrap(), pm) <= 1e-10);
            prop_assert!(max_abs_diff(&pm.transpose(), pm) <= 1e-8);
            for (i, w) in [&wa, &wb].into_iter().enumerate() {
                let unique = result.unique[i].get("w").unwrap().as_matrix_2d().unwrap();
                let leak = p.apply(&unique).unwrap().frobenius_norm();
                prop_assert!(
                    leak <= 1e-8 * w.frobenius_norm().max(1.0),
                    "vector {i}: leakage {leak:.3e}"
                );
            }
        }
    }

    #[test]
    fn principal_angles_are_symmetric((a, b) in matrix_pair(8, 4)) {
        prop_assume!(a.frobenius_norm() > 1e-6 && b.frobenius_norm() > 1e-6);
        let ab = angles::principal_angles(&a, &b).unwrap();
        let ba = angles::principal_angles(&b, &a).unwrap();
        prop_assert_eq!(ab.angles_rad.len(), ba.angles_rad.len());
        for (x, y) in ab.angles_rad.iter().zip(&ba.angles_rad) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn principal_angles_ignore_basis_rotation(
        (a, b, q) in (3usize..=8, 1usize..=3, 1usize..=4).prop_flat_map(|(n, ca, cb)| {
            (sized_matrix(n, ca), sized_matrix(n, cb), orthonormal(ca))
        }),
    ) {
        prop_assume!(a.frobenius_norm() > 1e-6 && b.frobenius_norm() > 1e-6);
        // Rotating a full set of basis columns preserves the span exactly.
        prop_assume!(linalg::svd(&a, 1e-10).unwrap().rank() == a.cols());
        let rotated = a.matmul(&q).unwrap();
        let before = angles::principal_angles(&a, &b).unwrap();
        let after = angles::principal_angles(&rotated, &b).unwrap();
        prop_assert_eq!(before.angles_rad.len(), after.angles_rad.len());
        for (x, y) in before.angles_rad.iter().zip(&after.angles_rad) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn pair_chain_eigenvalues_match_squared_cosines((a, b) in matrix_pair(12, 4)) {
        prop_assume!(a.frobenius_norm() > 1e-6 && b.frobenius_norm() > 1e-6);
        let pa = column_projector(&a, 1e-10).unwrap();
        let pb = column_projector(&b, 1e-10).unwrap();
        let spectrum = chain_projectors(&[pa, pb], &[0, 1]).unwrap();
        let mut values = spectrum.values.clone();
        values.sort_by(|x, y| y.total_cmp(x));
        let oracle = angles::principal_angles(&a, &b).unwrap();
        let mut expected: Vec<f64> =
            oracle.angles_rad.iter().map(|t| t.cos() * t.cos()).collect();
        expected.sort_by(|x, y| y.total_cmp(x));
        expected.resize(values.len(), 0.0);
        for (got, want) in values.iter().zip(&expected) {
            prop_assert!((got - want).abs() <= 1e-8, "eigenvalue {got} vs cosine^2 {want}");
        }
    }

    #[test]
    fn edits_compose_affinely(
        seed_base in any::<u64>(),
        seed_other in any::<u64>(),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let base = toy::ToyModel::classifier_init(seed_base);
        let other = toy::ToyModel::classifier_init(seed_other);
        let v = toy::task_vector(&other, &base).unwrap();

        let mut whole = toy::EditRecipe::new();
        whole.push(&v, a + b);
        let direct = toy::apply_edit(&base, &whole).unwrap();

        let mut first = toy::EditRecipe::new();
        first.push(&v, a);
        let mut second = toy::EditRecipe::new();
        second.push(&v, b);
        let staged = toy::apply_edit(&toy::apply_edit(&base, &first).unwrap(), &second).unwrap();

        for ((wd, bd), (ws, bs)) in direct.layers.iter().zip(&staged.layers) {
            prop_assert!(max_abs_diff(wd, ws) <= 1e-12);
            for (x, y) in bd.iter().zip(bs) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
