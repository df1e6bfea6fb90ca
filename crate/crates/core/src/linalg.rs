//! Small dense helpers on top of nalgebra: ranks, null spaces and the
//! symmetric-matrix functions used by the norm profiles.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

/// Singular values and right singular vectors, sorted by decreasing value.
fn sorted_svd_real(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.ncols();
    if a.nrows() == 0 {
        return (Vec::new(), DMatrix::identity(n, n));
    }
    // pad with zero rows so V is always n×n
    let padded = if a.nrows() < n {
        let mut p = DMatrix::zeros(n, n);
        p.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&i, &j| svd.singular_values[j].partial_cmp(&svd.singular_values[i]).unwrap());
    let s = idx.iter().map(|&i| svd.singular_values[i]).collect();
    let v = DMatrix::from_fn(n, idx.len(), |r, c| vt[(idx[c], r)]);
    (s, v)
}

pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = a.singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.partial_cmp(x).unwrap());
    s
}

/// Numerical rank with threshold `rel · max(floor, σ_max)`.
pub fn rank(a: &DMatrix<f64>, rel: f64, floor: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let s = singular_values(a);
    let thr = rel * s[0].max(floor);
    s.iter().filter(|&&x| x > thr).count()
}

/// Orthonormal basis (columns) of the null space, threshold `rel · σ_max`.
pub fn nullspace(a: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    let n = a.ncols();
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let (s, v) = sorted_svd_real(a);
    let thr = rel * s.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let r = s.iter().filter(|&&x| x > thr).count();
    v.columns(r, n - r).into_owned()
}

/// Null space of a complex matrix, returned as complex columns.
pub fn nullspace_complex(a: &DMatrix<Complex64>, rel: f64) -> DMatrix<Complex64> {
    let n = a.ncols();
    let svd = a.clone().svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let thr = rel * smax.max(f64::MIN_POSITIVE);
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] <= thr).collect();
    let extra = n.saturating_sub(svd.singular_values.len());
    let mut cols: Vec<DVector<Complex64>> = keep.iter().map(|&i| vt.row(i).adjoint()).collect();
    if extra > 0 {
        // wide matrix: complete with the orthogonal complement of the row space
        let full = {
            let mut p = DMatrix::zeros(n, n);
            p.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
            p
        };
        return nullspace_complex(&full, rel);
    }
    let mut out = DMatrix::zeros(n, cols.len());
    for (j, c) in cols.drain(..).enumerate() {
        out.set_column(j, &c);
    }
    out
}

/// Numerical rank of a complex matrix.
pub fn rank_complex(a: &DMatrix<Complex64>, rel: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let s = a.singular_values();
    let smax = s.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > rel * smax).count()
}

/// Real invariant subspace of `m` belonging to a conjugation-closed set of
/// eigenvalues (with multiplicities), as `dim` orthonormal columns.
pub fn real_invariant_subspace(m: &DMatrix<f64>, eigs: &[(Complex64, usize)], dim: usize) -> DMatrix<f64> {
    let n = m.nrows();
    if dim == 0 {
        return DMatrix::zeros(n, 0);
    }
    let mc: DMatrix<Complex64> = m.map(|x| Complex64::new(x, 0.0));
    let id = DMatrix::<Complex64>::identity(n, n);
    let mut p = id.clone();
    for &(mu, k) in eigs {
        for _ in 0..k {
            let f = &mc - &id * mu;
            p = f * p;
            let s = p.norm();
            if s > 0.0 {
                p /= Complex64::new(s, 0.0);
            }
        }
    }
    let pr = p.map(|c| c.re);
    let (_, v) = sorted_svd_real(&pr);
    v.columns(n - dim, dim).into_owned()
}

/// Eigenvalues of a real square matrix via a capped real Schur iteration.
/// On a stall the matrix is conjugated by fixed Givens rotations and retried.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    let n = m.nrows();
    let mut a = m.clone();
    for attempt in 0..8 {
        if let Some(schur) = nalgebra::Schur::try_new(a.clone(), f64::EPSILON, 20_000) {
            let (_, t) = schur.unpack();
            return quasi_triangular_eigenvalues(&t);
        }
        let theta = 0.3 + 0.17 * attempt as f64;
        let mut q = DMatrix::<f64>::identity(n, n);
        for i in 0..n.saturating_sub(1) {
            let mut g = DMatrix::<f64>::identity(n, n);
            g[(i, i)] = theta.cos();
            g[(i + 1, i + 1)] = theta.cos();
            g[(i, i + 1)] = -theta.sin();
            g[(i + 1, i)] = theta.sin();
            q = g * q;
        }
        a = &q * &a * q.transpose();
    }
    panic!("Schur iteration failed to converge");
}

fn quasi_triangular_eigenvalues(t: &DMatrix<f64>) -> Vec<Complex64> {
    let n = t.nrows();
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            let (a, b, c, d) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
            let half = (a + d) / 2.0;
            let disc = ((a - d) / 2.0).powi(2) + b * c;
            if disc >= 0.0 {
                let r = disc.sqrt();
                out.push(Complex64::new(half + r, 0.0));
                out.push(Complex64::new(half - r, 0.0));
            } else {
                let r = (-disc).sqrt();
                out.push(Complex64::new(half, r));
                out.push(Complex64::new(half, -r));
            }
            i += 2;
        } else {
            out.push(Complex64::new(t[(i, i)], 0.0));
            i += 1;
        }
    }
    out
}

/// Single-linkage clusters of radius `rel · max(1, |λ|)`, as (mean, size).
pub fn cluster_eigenvalues(eigs: &[Complex64], rel: f64) -> Vec<(Complex64, usize)> {
    let n = eigs.len();
    let mut label: Vec<usize> = (0..n).collect();
    fn find(l: &mut Vec<usize>, i: usize) -> usize {
        let mut r = i;
        while l[r] != r {
            r = l[r];
        }
        l[i] = r;
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            let scale = eigs[i].norm().max(eigs[j].norm()).max(1.0);
            if (eigs[i] - eigs[j]).norm() < rel * scale {
                let (a, b) = (find(&mut label, i), find(&mut label, j));
                label[a] = b;
            }
        }
    }
    let mut sums: Vec<(usize, Complex64, usize)> = Vec::new();
    for i in 0..n {
        let r = find(&mut label, i);
        match sums.iter_mut().find(|(k, _, _)| *k == r) {
            Some(e) => {
                e.1 += eigs[i];
                e.2 += 1;
            }
            None => sums.push((r, eigs[i], 1)),
        }
    }
    sums.into_iter().map(|(_, s, k)| (s / k as f64, k)).collect()
}

/// Symmetric part, to scrub roundoff asymmetry.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

fn sym_fn(a: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let e = SymmetricEigen::new(symmetrize(a));
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(f));
    symmetrize(&(&e.eigenvectors * d * e.eigenvectors.transpose()))
}

pub fn spd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(a, |x| x.max(0.0).sqrt())
}

pub fn spd_inv_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(a, |x| 1.0 / x.sqrt())
}

pub fn spd_log(a: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(a, f64::ln)
}

pub fn sym_exp(a: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(a, f64::exp)
}

/// Affine-invariant geodesic from `g0` (s = 0) to `g1` (s = 1).
pub fn spd_geodesic(g0: &DMatrix<f64>, g1: &DMatrix<f64>, s: f64) -> DMatrix<f64> {
    let h = spd_sqrt(g0);
    let hi = spd_inv_sqrt(g0);
    let inner = spd_log(&symmetrize(&(&hi * g1 * &hi)));
    symmetrize(&(&h * sym_exp(&(inner * s)) * &h))
}

pub fn is_spd(a: &DMatrix<f64>) -> bool {
    a.iter().all(|x| x.is_finite()) && symmetrize(a).cholesky().is_some()
}

/// Orthonormal basis of the column span.
pub fn orth(a: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    if a.ncols() == 0 {
        return a.clone();
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> =
        (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > rel * smax.max(f64::MIN_POSITIVE)).collect();
    DMatrix::from_fn(a.nrows(), keep.len(), |r, c| u[(r, keep[c])])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rank_of_rank_one() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(rank(&a, 1e-10, 1.0), 1);
        assert_eq!(nullspace(&a, 1e-10).ncols(), 1);
        assert_eq!(rank(&DMatrix::zeros(3, 3), 1e-10, 1.0), 0);
    }

    #[test]
    fn geodesic_endpoints() {
        let g0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let g1 = DMatrix::from_row_slice(2, 2, &[5.0, 3.0, 3.0, 2.0]);
        assert_relative_eq!(spd_geodesic(&g0, &g1, 0.0), g0, epsilon = 1e-12);
        assert_relative_eq!(spd_geodesic(&g0, &g1, 1.0), g1, epsilon = 1e-11);
        assert!(is_spd(&spd_geodesic(&g0, &g1, 0.37)));
    }

    #[test]
    fn invariant_subspace_of_rotation_block() {
        let m = DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
        let i = Complex64::new(0.0, 1.0);
        let v = real_invariant_subspace(&m, &[(i, 1), (-i, 1)], 2);
        assert_eq!(v.ncols(), 2);
        assert!(v.row(2).norm() < 1e-12);
    }

    #[test]
    fn wide_matrix_nullspace() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        assert_eq!(nullspace(&a, 1e-12).ncols(), 2);
        let ac = a.map(|x| Complex64::new(x, 0.0));
        assert_eq!(nullspace_complex(&ac, 1e-12).ncols(), 2);
    }
}
