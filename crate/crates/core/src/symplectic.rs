//! Integer symplectic matrices: validation, characteristic polynomials,
//! exact unit-circle tests and the growth decomposition of the monodromy.

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_complex::Complex64;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{nullspace_complex, real_invariant_subspace};
use crate::poly::{self, UnitCircleAnalysis};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymplecticError {
    #[error("matrix is not square ({rows} rows, row {row} has {cols} entries)")]
    NotSquare { rows: usize, row: usize, cols: usize },
    #[error("matrix dimension {0} is odd")]
    OddDimension(usize),
    #[error("matrix does not preserve the symplectic form")]
    NotSymplectic,
    #[error("numeric eigenvalues disagree with the exact certificate at tol {tol}: {detail}")]
    ToleranceConflict { tol: f64, detail: String },
}

pub type IntMatrix = Vec<Vec<BigInt>>;

pub fn int_matrix(rows: &[&[i64]]) -> IntMatrix {
    rows.iter().map(|r| r.iter().map(|&c| BigInt::from(c)).collect()).collect()
}

pub fn identity(n: usize) -> IntMatrix {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { BigInt::one() } else { BigInt::zero() }).collect())
        .collect()
}

pub fn mat_mul(a: &IntMatrix, b: &IntMatrix) -> IntMatrix {
    let n = a.len();
    let m = b.first().map_or(0, |r| r.len());
    let k = b.len();
    let mut out = vec![vec![BigInt::zero(); m]; n];
    for i in 0..n {
        for l in 0..k {
            if a[i][l].is_zero() {
                continue;
            }
            for j in 0..m {
                out[i][j] += &a[i][l] * &b[l][j];
            }
        }
    }
    out
}

pub fn transpose(a: &IntMatrix) -> IntMatrix {
    let n = a.len();
    let m = a.first().map_or(0, |r| r.len());
    (0..m).map(|j| (0..n).map(|i| a[i][j].clone()).collect()).collect()
}

/// The standard form J = [[0, I], [−I, 0]] of size 2g.
pub fn standard_form(g: usize) -> IntMatrix {
    let n = 2 * g;
    let mut j = vec![vec![BigInt::zero(); n]; n];
    for i in 0..g {
        j[i][g + i] = BigInt::one();
        j[g + i][i] = -BigInt::one();
    }
    j
}

pub fn block_diag(blocks: &[IntMatrix]) -> IntMatrix {
    let n: usize = blocks.iter().map(|b| b.len()).sum();
    let mut out = vec![vec![BigInt::zero(); n]; n];
    let mut off = 0;
    for b in blocks {
        for (i, row) in b.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                out[off + i][off + j] = c.clone();
            }
        }
        off += b.len();
    }
    out
}

pub fn to_f64(a: &IntMatrix) -> DMatrix<f64> {
    let n = a.len();
    let m = a.first().map_or(0, |r| r.len());
    DMatrix::from_fn(n, m, |i, j| a[i][j].to_f64().unwrap_or(f64::NAN))
}

/// A validated element of Sp(2g, ℤ).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSymplectic", into = "RawSymplectic")]
pub struct SymplecticMatrix {
    genus: usize,
    entries: IntMatrix,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSymplectic {
    #[serde(default)]
    genus: Option<usize>,
    #[serde(with = "crate::json::big_matrix")]
    entries: IntMatrix,
}

impl TryFrom<RawSymplectic> for SymplecticMatrix {
    type Error = String;
    fn try_from(raw: RawSymplectic) -> Result<Self, String> {
        let m = validate_symplectic(raw.entries).map_err(|e| e.to_string())?;
        if let Some(g) = raw.genus {
            if g != m.genus {
                return Err(format!("genus {g} does not match matrix size {}", 2 * m.genus));
            }
        }
        Ok(m)
    }
}

impl From<SymplecticMatrix> for RawSymplectic {
    fn from(m: SymplecticMatrix) -> Self {
        RawSymplectic { genus: Some(m.genus), entries: m.entries }
    }
}

pub fn validate_symplectic(entries: IntMatrix) -> Result<SymplecticMatrix, SymplecticError> {
    let n = entries.len();
    for (row, r) in entries.iter().enumerate() {
        if r.len() != n {
            return Err(SymplecticError::NotSquare { rows: n, row, cols: r.len() });
        }
    }
    if n % 2 != 0 || n == 0 {
        return Err(SymplecticError::OddDimension(n));
    }
    let g = n / 2;
    let j = standard_form(g);
    if mat_mul(&mat_mul(&transpose(&entries), &j), &entries) != j {
        return Err(SymplecticError::NotSymplectic);
    }
    debug_assert!(poly::det_int(&entries).is_one());
    Ok(SymplecticMatrix { genus: g, entries })
}

impl SymplecticMatrix {
    pub fn genus(&self) -> usize {
        self.genus
    }

    pub fn dim(&self) -> usize {
        2 * self.genus
    }

    pub fn entries(&self) -> &IntMatrix {
        &self.entries
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        to_f64(&self.entries)
    }

    /// Exact inverse, M⁻¹ = −J Mᵀ J.
    pub fn inverse(&self) -> SymplecticMatrix {
        let j = standard_form(self.genus);
        let inv = mat_mul(&mat_mul(&j, &transpose(&self.entries)), &j);
        let inv = inv.into_iter().map(|r| r.into_iter().map(|c| -c).collect()).collect();
        SymplecticMatrix { genus: self.genus, entries: inv }
    }

    pub fn compose(&self, other: &SymplecticMatrix) -> SymplecticMatrix {
        assert_eq!(self.genus, other.genus);
        SymplecticMatrix { genus: self.genus, entries: mat_mul(&self.entries, &other.entries) }
    }

    /// P M P⁻¹.
    pub fn conjugate_by(&self, p: &SymplecticMatrix) -> SymplecticMatrix {
        p.compose(self).compose(&p.inverse())
    }

    pub fn identity(g: usize) -> SymplecticMatrix {
        SymplecticMatrix { genus: g, entries: identity(2 * g) }
    }

    /// Symplectic direct sum, with the i-th block acting on (a_i, b_i)
    /// coordinates of the combined standard basis.
    pub fn direct_sum(parts: &[SymplecticMatrix]) -> SymplecticMatrix {
        let g: usize = parts.iter().map(|p| p.genus).sum();
        let n = 2 * g;
        let mut out = vec![vec![BigInt::zero(); n]; n];
        let mut off = 0;
        for p in parts {
            let h = p.genus;
            let idx = |k: usize| if k < h { off + k } else { g + off + (k - h) };
            for i in 0..2 * h {
                for jj in 0..2 * h {
                    out[idx(i)][idx(jj)] = p.entries[i][jj].clone();
                }
            }
            off += h;
        }
        SymplecticMatrix { genus: g, entries: out }
    }
}

/// Characteristic polynomial, coefficients listed from the leading term down.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CharPoly {
    #[serde(with = "crate::json::big_vec")]
    pub coefficients: Vec<BigInt>,
}

impl CharPoly {
    pub fn ascending(&self) -> Vec<BigInt> {
        self.coefficients.iter().rev().cloned().collect()
    }

    pub fn is_palindromic(&self) -> bool {
        poly::is_palindromic(&self.coefficients)
    }
}

pub fn char_poly(m: &SymplecticMatrix) -> CharPoly {
    let mut c = poly::char_poly(&m.entries);
    c.reverse();
    CharPoly { coefficients: c }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateBranch {
    RootAtPlusOne,
    RootAtMinusOne,
    Sturm,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub branch: CertificateBranch,
    pub sturm_count: usize,
}

#[derive(Debug, Clone)]
pub struct UnitCircleVerdict {
    pub verdict: bool,
    pub certificate: Certificate,
    pub analysis: UnitCircleAnalysis,
}

pub fn has_unit_circle_eigenvalue(m: &SymplecticMatrix) -> UnitCircleVerdict {
    let p = char_poly(m).ascending();
    let analysis = poly::unit_circle_roots(&p);
    let branch = if analysis.mult_at_one > 0 {
        CertificateBranch::RootAtPlusOne
    } else if analysis.mult_at_minus_one > 0 {
        CertificateBranch::RootAtMinusOne
    } else if analysis.sturm_count > 0 {
        CertificateBranch::Sturm
    } else {
        CertificateBranch::None
    };
    UnitCircleVerdict {
        verdict: analysis.has_unit_root(),
        certificate: Certificate { branch, sturm_count: analysis.sturm_count },
        analysis,
    }
}

/// One expanding/contracting pair of eigenspaces with common modulus.
#[derive(Debug, Clone)]
pub struct GrowthPair {
    /// Modulus λ > 1 of the expanding eigenvalues.
    pub lambda: f64,
    pub dim: usize,
    /// Columns span the real invariant subspace for modulus λ.
    pub basis_plus: DMatrix<f64>,
    /// Columns span the real invariant subspace for modulus 1/λ.
    pub basis_minus: DMatrix<f64>,
    /// True when the group contains non-real eigenvalues.
    pub complex: bool,
}

#[derive(Debug, Clone)]
pub struct EigenSplit {
    pub e0_dim: usize,
    pub pairs: Vec<GrowthPair>,
    pub e0_basis: DMatrix<f64>,
    pub semisimple_on_circle: bool,
}

impl EigenSplit {
    pub fn expanding_basis(&self) -> DMatrix<f64> {
        hcat(self.pairs.iter().map(|p| &p.basis_plus), self.e0_basis.nrows())
    }

    pub fn contracting_basis(&self) -> DMatrix<f64> {
        hcat(self.pairs.iter().map(|p| &p.basis_minus), self.e0_basis.nrows())
    }
}

pub(crate) fn hcat<'a>(mats: impl Iterator<Item = &'a DMatrix<f64>>, rows: usize) -> DMatrix<f64> {
    let mats: Vec<&DMatrix<f64>> = mats.collect();
    let cols: usize = mats.iter().map(|m| m.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut off = 0;
    for m in mats {
        out.view_mut((0, off), (rows, m.ncols())).copy_from(m);
        off += m.ncols();
    }
    out
}

/// Numeric eigenvalues of an integer matrix from a real Schur form.
///
/// The Schur iteration is capped; when it stalls the matrix is rotated by a
/// fixed orthogonal similarity and retried.
pub fn numeric_eigenvalues(m: &SymplecticMatrix) -> Vec<Complex64> {
    crate::linalg::eigenvalues(&m.to_f64())
}

/// Eigenvalues merged into clusters, each reported by its mean and size.
///
/// A Jordan block of size k splits under roundoff into a ring of radius
/// about (ε‖M‖)^{1/k}; the cluster mean stays accurate to O(ε‖M‖). The
/// radius used is `8·(ε‖M‖)^{1/n}`, capped at 0.05, which is below the
/// distance from the circle of any non-unit eigenvalue of an integer
/// reciprocal polynomial of degree ≤ 6.
pub fn clustered_eigenvalues(m: &SymplecticMatrix) -> Vec<(Complex64, usize)> {
    let mf = m.to_f64();
    let n = mf.nrows() as f64;
    let radius = (8.0 * (f64::EPSILON * mf.norm()).powf(1.0 / n)).clamp(1e-6, 0.05);
    crate::linalg::cluster_eigenvalues(&numeric_eigenvalues(m), radius)
}

pub fn eigen_split(m: &SymplecticMatrix, tol: f64) -> Result<EigenSplit, SymplecticError> {
    assert!(tol > 0.0, "tol must be positive");
    let n = m.dim();
    let exact = has_unit_circle_eigenvalue(m);
    let e0_dim: usize = exact.analysis.roots.iter().map(|r| r.multiplicity).sum();
    let mf = m.to_f64();
    let clusters = clustered_eigenvalues(m);
    let dev = |c: &Complex64| (c.norm() - 1.0).abs();
    let numeric_e0: usize = clusters.iter().filter(|(c, _)| dev(c) < tol).map(|(_, k)| k).sum();
    if numeric_e0 != e0_dim {
        return Err(SymplecticError::ToleranceConflict {
            tol,
            detail: format!("exact unit-circle multiplicity {e0_dim}, numeric {numeric_e0}"),
        });
    }
    let unit: Vec<(Complex64, usize)> = exact.analysis.roots.iter().map(|r| (r.value, r.multiplicity)).collect();
    let e0_basis = real_invariant_subspace(&mf, &unit, e0_dim);
    let semisimple_on_circle = if unit.is_empty() {
        true
    } else {
        let distinct: Vec<(Complex64, usize)> = unit.iter().map(|(v, _)| (*v, 1)).collect();
        nullspace_complex(&poly_in_matrix(&mf, &distinct), 1e-9).ncols() == e0_dim
    };

    let mut outside: Vec<(Complex64, usize)> = clusters.iter().copied().filter(|(c, _)| c.norm() > 1.0 + tol).collect();
    outside.sort_by(|a, b| b.0.norm().partial_cmp(&a.0.norm()).unwrap());
    let mut groups: Vec<Vec<(Complex64, usize)>> = Vec::new();
    for c in outside {
        match groups.last_mut() {
            Some(g) if (g[0].0.norm().ln() - c.0.norm().ln()).abs() < tol.max(1e-9) * g[0].0.norm().ln() => g.push(c),
            _ => groups.push(vec![c]),
        }
    }
    let mut pairs = Vec::new();
    for g in groups {
        let dim: usize = g.iter().map(|(_, k)| k).sum();
        let lambda = g.iter().map(|(c, k)| c.norm() * *k as f64).sum::<f64>() / dim as f64;
        let complex = g.iter().any(|(c, _)| c.im.abs() > tol.max(1e-9) * c.norm());
        let plus: Vec<(Complex64, usize)> = g.clone();
        let minus: Vec<(Complex64, usize)> = g.iter().map(|&(c, k)| (Complex64::new(1.0, 0.0) / c, k)).collect();
        pairs.push(GrowthPair {
            lambda,
            dim,
            basis_plus: real_invariant_subspace(&mf, &plus, dim),
            basis_minus: real_invariant_subspace(&mf, &minus, dim),
            complex,
        });
    }
    let total = e0_dim + 2 * pairs.iter().map(|p| p.dim).sum::<usize>();
    if total != n {
        return Err(SymplecticError::ToleranceConflict {
            tol,
            detail: format!("eigenvalue groups account for {total} of {n} dimensions"),
        });
    }
    Ok(EigenSplit { e0_dim, pairs, e0_basis, semisimple_on_circle })
}

fn poly_in_matrix(m: &DMatrix<f64>, roots: &[(Complex64, usize)]) -> DMatrix<Complex64> {
    let n = m.nrows();
    let mc: DMatrix<Complex64> = m.map(|x| Complex64::new(x, 0.0));
    let mut p = DMatrix::<Complex64>::identity(n, n);
    for &(mu, k) in roots {
        for _ in 0..k {
            let f = &mc - DMatrix::<Complex64>::identity(n, n) * mu;
            p = f * p;
        }
    }
    p
}

/// Standard generators of Sp(2g, ℤ): symplectic transvections along the
/// coordinate vectors a_i, b_i and a_i + a_j, plus the GL-embedded
/// elementary matrices. Inverses are included.
pub fn standard_generators(g: usize) -> Vec<SymplecticMatrix> {
    let n = 2 * g;
    let mut gens = Vec::new();
    let elem = |i: usize, j: usize, v: i64| {
        let mut e = identity(n);
        e[i][j] += BigInt::from(v);
        e
    };
    for s in [1i64, -1] {
        for i in 0..g {
            gens.push(elem(i, g + i, s));
            gens.push(elem(g + i, i, s));
        }
        for i in 0..g {
            for j in 0..g {
                if i != j {
                    // diag(A, A^{-T}) with A = I + s E_ij
                    let mut e = elem(i, j, s);
                    e[g + j][g + i] -= BigInt::from(s);
                    gens.push(e);
                }
            }
        }
    }
    gens.into_iter().map(|e| validate_symplectic(e).expect("generator is symplectic")).collect()
}

/// A random word of length `len` in the standard generators.
pub fn random_word<R: Rng>(g: usize, len: usize, rng: &mut R) -> SymplecticMatrix {
    let gens = standard_generators(g);
    let mut m = SymplecticMatrix::identity(g);
    for _ in 0..len {
        m = m.compose(&gens[rng.gen_range(0..gens.len())]);
    }
    m
}

/// Reference predicate from a float eigensolver: some |λ| within `tol` of 1.
pub fn numeric_unit_predicate(m: &SymplecticMatrix, tol: f64) -> bool {
    clustered_eigenvalues(m).iter().any(|(c, _)| (c.norm() - 1.0).abs() < tol)
}
