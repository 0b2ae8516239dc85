// SPDX-License-Identifier: MIT OR Apache-2.0

//! Factorizations the rest of the crate builds on: truncated SVD, symmetric
//! eigendecomposition, and a rank-revealing orthonormal column basis.
//!
//! All three are made deterministic by fixed ordering (descending spectra)
//! and by sign canonicalization: in every factor column the entry of largest
//! magnitude is nonnegative, with ties broken toward the lowest row index.
//! Two calls on identical inputs return bitwise-identical factors.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Error;
use crate::fmath;
use crate::matrix::Matrix;
use crate::Result;

/// Relative tolerance used by [`qr_orthonormal`] for rank decisions.
pub const QR_RANK_TOL: f64 = 1e-10;

/// Relative Frobenius asymmetry accepted by [`sym_eig`].
pub const SYMMETRY_REL_TOL: f64 = 1e-8;

/// Thin singular value decomposition truncated to numerical rank r:
/// `u` (n x r) and `v` (m x r) have orthonormal columns, `s` is strictly
/// positive and descending, and `u * diag(s) * v^T` reconstructs the input.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl SvdFactors {
    /// Number of retained singular values.
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `u * diag(s) * v^T`.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.u.rows();
        let m = self.v.rows();
        let r = self.s.len();
        let mut us = Matrix::zeros(n, r);
        for i in 0..n {
            for j in 0..r {
                us.set(i, j, self.u.get(i, j) * self.s[j]);
            }
        }
        let mut out = Matrix::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                let mut acc = 0.0;
                for k in 0..r {
                    acc += us.get(i, k) * self.v.get(j, k);
                }
                out.set(i, j, acc);
            }
        }
        out
    }
}

/// Full eigendecomposition of a symmetric matrix: `values` descending,
/// `z` orthogonal with one eigenvector per column.
#[derive(Debug, Clone)]
pub struct EigFactors {
    pub values: Vec<f64>,
    pub z: Matrix,
}

impl EigFactors {
    /// `z * diag(values) * z^T`.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.z.rows();
        Matrix::from_fn(n, n, |i, j| {
            let mut acc = 0.0;
            for k in 0..self.values.len() {
                acc += self.z.get(i, k) * self.values[k] * self.z.get(j, k);
            }
            acc
        })
    }
}

/// Relative Frobenius residual above which a factorization attempt is
/// rejected and recomputed by the Jacobi fallback. Backward-stable runs sit
/// below 1e-13; the misconvergence this guards against shows up at 1e-4 and
/// larger, so the gap is several orders of magnitude on both sides.
const FACTOR_RESID_TOL: f64 = 1e-10;

/// Sweep cap for the Jacobi fallbacks. Cyclic Jacobi converges quadratically
/// and never comes close to this in practice.
const JACOBI_MAX_SWEEPS: usize = 64;

fn bad_extents(m: &Matrix) -> Error {
    Error::InvalidMatrix(format!(
        "svd needs nonzero extents, got {}x{}",
        m.rows(),
        m.cols()
    ))
}

/// Thin SVD truncated at the relative threshold: singular values satisfying
/// `s_i > rank_tol * s_max` are kept, so `rank_tol = 0` keeps every strictly
/// positive singular value and the zero matrix yields an empty factorization.
///
/// Every factorization is checked against the input by Frobenius residual
/// before it is returned; an attempt that fails the check is recomputed with
/// one-sided Jacobi, which is slower but unconditionally accurate.
pub fn svd(m: &Matrix, rank_tol: f64) -> Result<SvdFactors> {
    if !(rank_tol >= 0.0) {
        return Err(Error::InvalidThreshold(rank_tol));
    }
    if m.rows() == 0 || m.cols() == 0 {
        return Err(bad_extents(m));
    }
    if let Some(fact) = m.to_na().try_svd(true, true, f64::EPSILON, 100_000) {
        let u_full = fact.u.expect("u requested");
        let v_t = fact.v_t.expect("v_t requested");
        let sv = fact.singular_values.as_slice();
        let u = Matrix::from_fn(m.rows(), sv.len(), |i, j| u_full[(i, j)]);
        let v = Matrix::from_fn(m.cols(), sv.len(), |i, j| v_t[(j, i)]);
        if full_factor_residual_ok(m, &u, sv, &v) {
            return Ok(finish_svd(&u, sv, &v, rank_tol));
        }
    }
    let (u, s, v) = jacobi_svd_full(m)?;
    if !full_factor_residual_ok(m, &u, &s, &v) {
        return Err(Error::ConvergenceFailed("svd"));
    }
    Ok(finish_svd(&u, &s, &v, rank_tol))
}

/// Left factor and singular values of the truncated SVD, with the right
/// factor never accumulated. Truncation and sign rules match [`svd`], and the
/// returned basis is bitwise identical to the `u` that [`svd`] would produce.
///
/// Without the right factor a reconstruction check is impossible, so the
/// basis is verified by energy attribution instead: the Frobenius mass of
/// `U_r^T m` must match the sum of the retained squared singular values.
pub(crate) fn svd_basis(m: &Matrix, rank_tol: f64) -> Result<(Matrix, Vec<f64>)> {
    if !(rank_tol >= 0.0) {
        return Err(Error::InvalidThreshold(rank_tol));
    }
    if m.rows() == 0 || m.cols() == 0 {
        return Err(bad_extents(m));
    }
    if let Some(fact) = m.to_na().try_svd(true, false, f64::EPSILON, 100_000) {
        let u_full = fact.u.expect("u requested");
        let (kept, s) = truncated_order(fact.singular_values.as_slice(), rank_tol);
        let mut u = Matrix::from_fn(m.rows(), kept.len(), |i, j| u_full[(i, kept[j])]);
        if basis_attribution_ok(m, &u, &s) {
            canonicalize_signs(&mut u, None);
            return Ok((u, s));
        }
    }
    let (u_all, s_all, v_all) = jacobi_svd_full(m)?;
    if !full_factor_residual_ok(m, &u_all, &s_all, &v_all) {
        return Err(Error::ConvergenceFailed("svd"));
    }
    let f = finish_svd(&u_all, &s_all, &v_all, rank_tol);
    Ok((f.u, f.s))
}

/// All singular values, descending, zeros included.
///
/// Verified against the Frobenius identity `sum(s_i^2) = |m|_F^2`; a value
/// set violating it is recomputed by the Jacobi fallback.
pub(crate) fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(bad_extents(m));
    }
    let fro2: f64 = m.data().iter().map(|x| x * x).sum();
    if let Some(fact) = m.to_na().try_svd(false, false, f64::EPSILON, 100_000) {
        let mut sv: Vec<f64> = fact.singular_values.iter().copied().collect();
        let total: f64 = sv.iter().map(|s| s * s).sum();
        if fmath::abs(total - fro2) <= FACTOR_RESID_TOL * fro2 {
            sv.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));
            return Ok(sv);
        }
    }
    let (_u, s, _v) = jacobi_svd_full(m)?;
    Ok(s)
}

/// Truncation and sign canonicalization shared by both svd paths. The raw
/// value list may be in any order; `truncated_order` sorts it.
fn finish_svd(u_full: &Matrix, sv_raw: &[f64], v_full: &Matrix, rank_tol: f64) -> SvdFactors {
    let (kept, s) = truncated_order(sv_raw, rank_tol);
    let mut u = u_full.select_columns(&kept);
    let mut v = v_full.select_columns(&kept);
    canonicalize_signs(&mut u, Some(&mut v));
    SvdFactors { u, s, v }
}

/// `|m - u diag(s) v^T|_F <= tol * |m|_F`, the reconstruction test applied to
/// the untruncated factors.
fn full_factor_residual_ok(m: &Matrix, u: &Matrix, s: &[f64], v: &Matrix) -> bool {
    let mut us = u.clone();
    for j in 0..us.cols() {
        for i in 0..us.rows() {
            let x = us.get(i, j);
            us.set(i, j, x * s[j]);
        }
    }
    let recon = match us.matmul(&v.transpose()) {
        Ok(r) => r,
        Err(_) => return false,
    };
    let resid = match recon.sub(m) {
        Ok(d) => d.frobenius_norm(),
        Err(_) => return false,
    };
    resid <= FACTOR_RESID_TOL * m.frobenius_norm()
}

/// Checks that the retained basis captures exactly the energy its singular
/// values claim: `|U_r^T m|_F^2` must equal the sum of the retained squared
/// values to within the residual tolerance (relative to `|m|_F^2`).
fn basis_attribution_ok(m: &Matrix, u_r: &Matrix, s_kept: &[f64]) -> bool {
    let fro2: f64 = m.data().iter().map(|x| x * x).sum();
    let proj = match u_r.transpose().matmul(m) {
        Ok(p) => p,
        Err(_) => return false,
    };
    let captured: f64 = proj.data().iter().map(|x| x * x).sum();
    let claimed: f64 = s_kept.iter().map(|s| s * s).sum();
    fmath::abs(captured - claimed) <= FACTOR_RESID_TOL * fro2
}

/// One-sided (Hestenes) Jacobi SVD producing full factors: `u` is n x k,
/// `v` is m x k with k = min(n, m), values descending. Columns belonging to
/// zero singular values are zero in `u`. Slow but unconditionally accurate;
/// used only when the primary backend fails its residual check.
fn jacobi_svd_full(m: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let n = m.rows();
    let mc = m.cols();
    if n < mc {
        let (u, s, v) = jacobi_svd_full(&m.transpose())?;
        return Ok((v, s, u));
    }
    // Column-major working copy of the matrix and of the accumulated V.
    let mut a: Vec<f64> = Vec::with_capacity(n * mc);
    for j in 0..mc {
        for i in 0..n {
            a.push(m.get(i, j));
        }
    }
    let mut v = vec![0.0f64; mc * mc];
    for j in 0..mc {
        v[j * mc + j] = 1.0;
    }

    let mut converged = false;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..mc.saturating_sub(1) {
            for j in i + 1..mc {
                let (bi, bj) = (i * n, j * n);
                let mut p = 0.0;
                let mut qii = 0.0;
                let mut qjj = 0.0;
                for t in 0..n {
                    let x = a[bi + t];
                    let y = a[bj + t];
                    p += x * y;
                    qii += x * x;
                    qjj += y * y;
                }
                if qii == 0.0 || qjj == 0.0 {
                    continue;
                }
                if fmath::abs(p) <= f64::EPSILON * fmath::sqrt(qii * qjj) {
                    continue;
                }
                let tau = (qjj - qii) / (2.0 * p);
                let t = if tau >= 0.0 {
                    1.0 / (tau + fmath::sqrt(1.0 + tau * tau))
                } else {
                    -1.0 / (-tau + fmath::sqrt(1.0 + tau * tau))
                };
                let c = 1.0 / fmath::sqrt(1.0 + t * t);
                let s = t * c;
                for r in 0..n {
                    let x = a[bi + r];
                    let y = a[bj + r];
                    a[bi + r] = c * x - s * y;
                    a[bj + r] = s * x + c * y;
                }
                let (vi, vj) = (i * mc, j * mc);
                for r in 0..mc {
                    let x = v[vi + r];
                    let y = v[vj + r];
                    v[vi + r] = c * x - s * y;
                    v[vj + r] = s * x + c * y;
                }
                rotated = true;
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged && mc > 1 {
        return Err(Error::ConvergenceFailed("jacobi svd"));
    }

    let mut order: Vec<usize> = (0..mc).collect();
    let norms: Vec<f64> = (0..mc)
        .map(|j| fmath::sqrt(a[j * n..j * n + n].iter().map(|x| x * x).sum()))
        .collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).expect("finite norms"));

    let s: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let u = Matrix::from_fn(n, mc, |i, j| {
        let src = order[j];
        if norms[src] > 0.0 {
            a[src * n + i] / norms[src]
        } else {
            0.0
        }
    });
    let vm = Matrix::from_fn(mc, mc, |i, j| v[order[j] * mc + i]);
    Ok((u, s, vm))
}

/// Cyclic two-sided Jacobi eigendecomposition for symmetric input: values
/// descending, eigenvectors in columns of `z`. Fallback for the same reason
/// as [`jacobi_svd_full`].
fn jacobi_eig_full(sym: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = sym.rows();
    let mut a: Vec<f64> = sym.data().to_vec();
    let idx = |i: usize, j: usize| i * n + j;
    let mut z = vec![0.0f64; n * n];
    for i in 0..n {
        z[idx(i, i)] = 1.0;
    }
    let fro = sym.frobenius_norm();

    let mut converged = n < 2;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut off2 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off2 += 2.0 * a[idx(i, j)] * a[idx(i, j)];
            }
        }
        if fmath::sqrt(off2) <= f64::EPSILON * fro {
            converged = true;
            break;
        }
        for i in 0..n.saturating_sub(1) {
            for j in i + 1..n {
                let apq = a[idx(i, j)];
                if apq == 0.0 {
                    continue;
                }
                let tau = (a[idx(j, j)] - a[idx(i, i)]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + fmath::sqrt(1.0 + tau * tau))
                } else {
                    -1.0 / (-tau + fmath::sqrt(1.0 + tau * tau))
                };
                let c = 1.0 / fmath::sqrt(1.0 + t * t);
                let s = t * c;
                let (aii, ajj) = (a[idx(i, i)], a[idx(j, j)]);
                a[idx(i, i)] = aii - t * apq;
                a[idx(j, j)] = ajj + t * apq;
                a[idx(i, j)] = 0.0;
                a[idx(j, i)] = 0.0;
                for k in 0..n {
                    if k == i || k == j {
                        continue;
                    }
                    let x = a[idx(k, i)];
                    let y = a[idx(k, j)];
                    a[idx(k, i)] = c * x - s * y;
                    a[idx(k, j)] = s * x + c * y;
                    a[idx(i, k)] = a[idx(k, i)];
                    a[idx(j, k)] = a[idx(k, j)];
                }
                for k in 0..n {
                    let x = z[idx(k, i)];
                    let y = z[idx(k, j)];
                    z[idx(k, i)] = c * x - s * y;
                    z[idx(k, j)] = s * x + c * y;
                }
            }
        }
    }
    if !converged {
        return Err(Error::ConvergenceFailed("jacobi eigendecomposition"));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        a[idx(y, y)]
            .partial_cmp(&a[idx(x, x)])
            .expect("finite eigenvalues")
    });
    let values: Vec<f64> = order.iter().map(|&i| a[idx(i, i)]).collect();
    let zm = Matrix::from_fn(n, n, |i, j| z[idx(i, order[j])]);
    Ok((values, zm))
}

/// `|s - z diag(values) z^T|_F <= tol * |s|_F`.
fn eig_residual_ok(s: &Matrix, values: &[f64], z: &Matrix) -> bool {
    let mut zl = z.clone();
    for j in 0..zl.cols() {
        for i in 0..zl.rows() {
            let x = zl.get(i, j);
            zl.set(i, j, x * values[j]);
        }
    }
    let recon = match zl.matmul(&z.transpose()) {
        Ok(r) => r,
        Err(_) => return false,
    };
    let resid = match recon.sub(s) {
        Ok(d) => d.frobenius_norm(),
        Err(_) => return false,
    };
    resid <= FACTOR_RESID_TOL * s.frobenius_norm()
}

/// Descending order of the raw singular values and the retained prefix:
/// indices and values with `s_i > rank_tol * s_max` and `s_i > 0`.
fn truncated_order(sv: &[f64], rank_tol: f64) -> (Vec<usize>, Vec<f64>) {
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).expect("finite singular values"));
    let s_max = if order.is_empty() { 0.0 } else { sv[order[0]] };

    let mut kept = Vec::new();
    let mut s = Vec::new();
    for &i in &order {
        if sv[i] > rank_tol * s_max && sv[i] > 0.0 {
            kept.push(i);
            s.push(sv[i]);
        } else {
            break;
        }
    }
    (kept, s)
}

/// Eigendecomposition of a (numerically) symmetric matrix. The input may
/// depart from exact symmetry by at most [`SYMMETRY_REL_TOL`] in relative
/// Frobenius norm; it is symmetrized exactly before factorization.
pub fn sym_eig(m: &Matrix) -> Result<EigFactors> {
    if m.rows() != m.cols() || m.rows() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "sym_eig needs a square nonempty matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let norm = m.frobenius_norm();
    let asym = m.sub(&m.transpose())?.frobenius_norm();
    if asym > SYMMETRY_REL_TOL * norm {
        return Err(Error::NotSymmetric {
            rel: if norm == 0.0 { 0.0 } else { asym / norm },
        });
    }
    let sym = m.symmetrized()?;
    let n = m.rows();
    if let Some(eig) = sym.to_na().try_symmetric_eigen(f64::EPSILON, 100_000) {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .expect("finite eigenvalues")
        });
        let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let z = Matrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
        if eig_residual_ok(&sym, &values, &z) {
            let mut z = z;
            canonicalize_signs(&mut z, None);
            return Ok(EigFactors { values, z });
        }
    }
    let (values, z) = jacobi_eig_full(&sym)?;
    if !eig_residual_ok(&sym, &values, &z) {
        return Err(Error::ConvergenceFailed("symmetric eigendecomposition"));
    }
    let mut z = z;
    canonicalize_signs(&mut z, None);
    Ok(EigFactors { values, z })
}

/// Orthonormal basis of the column space, with numerical rank decided at
/// relative tolerance [`QR_RANK_TOL`]. Returns an n x r matrix; the zero
/// matrix yields n x 0. Implemented as Householder QR with column pivoting,
/// independent of the SVD backend so the two routes can cross-check each
/// other.
pub fn qr_orthonormal(m: &Matrix) -> Result<Matrix> {
    pivoted_qr_basis(m, QR_RANK_TOL, None)
}

/// Frobenius norm of a matrix.
pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.frobenius_norm()
}

/// Column-pivoted Householder QR returning the leading `r` columns of Q,
/// where `r` is the numerical rank at `rel_tol`, optionally capped.
pub(crate) fn pivoted_qr_basis(
    m: &Matrix,
    rel_tol: f64,
    max_rank: Option<usize>,
) -> Result<Matrix> {
    if m.rows() == 0 {
        return Err(Error::InvalidMatrix("qr needs at least one row".into()));
    }
    let n = m.rows();
    let nc = m.cols();
    // A rank cap also caps the elimination: columns beyond the cap can never
    // become basis vectors, so their reduction is skipped entirely.
    let kmax = match max_rank {
        Some(cap) => n.min(nc).min(cap),
        None => n.min(nc),
    };

    // Column-major working copy; reflectors are appended as they are built.
    let mut a: Vec<f64> = Vec::with_capacity(n * nc);
    for j in 0..nc {
        for i in 0..n {
            a.push(m.get(i, j));
        }
    }
    let col = |j: usize| -> usize { j * n };

    let mut rdiag: Vec<f64> = Vec::new();
    let mut reflectors: Vec<(usize, Vec<f64>, f64)> = Vec::new();

    for k in 0..kmax {
        // Freshly computed residual norms keep pivoting robust; the extra
        // O(n * m) per step is irrelevant at the sizes this crate handles.
        let mut best_j = k;
        let mut best_norm2 = -1.0;
        for j in k..nc {
            let base = col(j);
            let norm2: f64 = a[base + k..base + n].iter().map(|x| x * x).sum();
            if norm2 > best_norm2 {
                best_norm2 = norm2;
                best_j = j;
            }
        }
        if best_norm2 <= 0.0 {
            break;
        }
        if best_j != k {
            let (lo, hi) = (col(k.min(best_j)), col(k.max(best_j)));
            let (head, tail) = a.split_at_mut(hi);
            head[lo..lo + n].swap_with_slice(&mut tail[..n]);
        }

        let base = col(k);
        let normx = fmath::sqrt(a[base + k..base + n].iter().map(|x| x * x).sum());
        let x0 = a[base + k];
        let beta = if x0 >= 0.0 { -normx } else { normx };
        let mut v: Vec<f64> = a[base + k..base + n].to_vec();
        v[0] -= beta;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();

        a[base + k] = beta;
        for t in base + k + 1..base + n {
            a[t] = 0.0;
        }
        if vnorm2 > 0.0 {
            let tau = 2.0 / vnorm2;
            for j in k + 1..nc {
                let jb = col(j);
                let mut dot = 0.0;
                for (t, vt) in v.iter().enumerate() {
                    dot += vt * a[jb + k + t];
                }
                let w = tau * dot;
                for (t, vt) in v.iter().enumerate() {
                    a[jb + k + t] -= w * vt;
                }
            }
            reflectors.push((k, v, tau));
        } else {
            reflectors.push((k, v, 0.0));
        }
        rdiag.push(beta);
    }

    // Pivoting makes |rdiag| non-increasing; rank is the longest prefix that
    // clears the relative threshold.
    let dmax = rdiag.first().map_or(0.0, |d| fmath::abs(*d));
    let mut rank = 0;
    for d in &rdiag {
        if fmath::abs(*d) > rel_tol * dmax && *d != 0.0 {
            rank += 1;
        } else {
            break;
        }
    }
    if let Some(cap) = max_rank {
        rank = rank.min(cap);
    }

    // Q's leading columns: apply the first `rank` reflectors to I(n x rank)
    // in reverse order. Later reflectors leave these columns unchanged.
    let mut q: Vec<f64> = vec![0.0; n * rank];
    for j in 0..rank {
        q[j * n + j] = 1.0;
    }
    for (k, v, tau) in reflectors.iter().take(rank).rev() {
        if *tau == 0.0 {
            continue;
        }
        for j in 0..rank {
            let jb = j * n;
            let mut dot = 0.0;
            for (t, vt) in v.iter().enumerate() {
                dot += vt * q[jb + k + t];
            }
            let w = tau * dot;
            for (t, vt) in v.iter().enumerate() {
                q[jb + k + t] -= w * vt;
            }
        }
    }

    let mut out = Matrix::from_fn(n, rank, |i, j| q[j * n + i]);
    canonicalize_signs(&mut out, None);
    Ok(out)
}

/// Modified Gram-Schmidt with one reorthogonalization pass. Columns whose
/// residual after orthogonalization falls to `drop_tol` times their original
/// norm (or that are zero) are dropped rather than normalized into noise.
pub(crate) fn mgs_orthonormalize(m: &Matrix, drop_tol: f64) -> Matrix {
    let n = m.rows();
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for j in 0..m.cols() {
        let mut v = m.column(j);
        let orig = fmath::sqrt(v.iter().map(|x| x * x).sum());
        if orig == 0.0 {
            continue;
        }
        for _pass in 0..2 {
            for q in &kept {
                let dot: f64 = q.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                for (t, qt) in q.iter().enumerate() {
                    v[t] -= dot * qt;
                }
            }
        }
        let nrm = fmath::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if nrm > drop_tol * orig {
            for t in v.iter_mut() {
                *t /= nrm;
            }
            kept.push(v);
        }
    }
    Matrix::from_fn(n, kept.len(), |i, j| kept[j][i])
}

/// Flips factor columns so the entry of largest magnitude in each column of
/// `u` is nonnegative (ties toward the lowest row). A coupled factor gets the
/// same flips so products like `u * diag(s) * v^T` are unchanged.
fn canonicalize_signs(u: &mut Matrix, mut coupled: Option<&mut Matrix>) {
    for j in 0..u.cols() {
        let mut pivot_row = 0;
        let mut pivot_abs = -1.0;
        for i in 0..u.rows() {
            let a = fmath::abs(u.get(i, j));
            if a > pivot_abs {
                pivot_abs = a;
                pivot_row = i;
            }
        }
        if u.rows() > 0 && u.get(pivot_row, j) < 0.0 {
            for i in 0..u.rows() {
                let x = u.get(i, j);
                u.set(i, j, -x);
            }
            if let Some(v) = coupled.as_deref_mut() {
                for i in 0..v.rows() {
                    let x = v.get(i, j);
                    v.set(i, j, -x);
                }
            }
        }
    }
}

/// Max absolute entry of `q^T q - I`; 0.0 for an empty basis.
pub(crate) fn orthonormality_defect(q: &Matrix) -> f64 {
    let r = q.cols();
    let mut worst: f64 = 0.0;
    for a in 0..r {
        for b in a..r {
            let mut dot = 0.0;
            for i in 0..q.rows() {
                dot += q.get(i, a) * q.get(i, b);
            }
            let target = if a == b { 1.0 } else { 0.0 };
            worst = worst.max(fmath::abs(dot - target));
        }
    }
    worst
}
