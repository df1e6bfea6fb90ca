//! Twisted cohomology of mapping tori through the Wang sequence, and the
//! Floquet-type spectral decisions for the infinite cyclic cover.

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_complex::Complex64;
use num_traits::{One, Signed};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::rank_complex;
use crate::poly::{self, UnitCircleAnalysis};
use crate::symplectic::{self, to_f64, IntMatrix, SymplecticMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MappingTorusError {
    #[error("degree {degree}: matrix is not square")]
    NotSquare { degree: usize },
    #[error("degree {degree}: determinant {det} is not ±1")]
    NotInvertible { degree: usize, det: String },
    #[error("|λ| = {modulus} is not 1 (tolerance 1e-12)")]
    NotUnitModulus { modulus: f64 },
    #[error("degree {p} outside 0..={max}")]
    DegreeOutOfRange { p: usize, max: usize },
    #[error("root index {index} out of range: polynomial has {count} unit-circle roots")]
    BadRootTag { index: usize, count: usize },
}

/// The maps φ_p* on H^p(F; ℝ), p = 0..dim F, in some integral basis.
/// A 0×0 matrix stands for a vanishing cohomology group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawFiber", into = "RawFiber")]
pub struct FiberAutomorphism {
    degree_maps: Vec<IntMatrix>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFiber {
    #[serde(with = "crate::json::big_matrices")]
    degree_maps: Vec<IntMatrix>,
}

impl TryFrom<RawFiber> for FiberAutomorphism {
    type Error = MappingTorusError;
    fn try_from(raw: RawFiber) -> Result<Self, Self::Error> {
        FiberAutomorphism::new(raw.degree_maps)
    }
}

impl From<FiberAutomorphism> for RawFiber {
    fn from(f: FiberAutomorphism) -> Self {
        RawFiber { degree_maps: f.degree_maps }
    }
}

impl FiberAutomorphism {
    pub fn new(degree_maps: Vec<IntMatrix>) -> Result<Self, MappingTorusError> {
        for (degree, m) in degree_maps.iter().enumerate() {
            if m.iter().any(|r| r.len() != m.len()) {
                return Err(MappingTorusError::NotSquare { degree });
            }
            let det = poly::det_int(m);
            if !det.abs().is_one() {
                return Err(MappingTorusError::NotInvertible { degree, det: det.to_string() });
            }
        }
        Ok(Self { degree_maps })
    }

    /// Closed oriented surface with orientation-preserving monodromy.
    pub fn surface(phi1: &SymplecticMatrix) -> Self {
        let one = vec![vec![BigInt::one()]];
        Self { degree_maps: vec![one.clone(), phi1.entries().clone(), one] }
    }

    /// Surface data with H⁰ and H² dropped, keeping φ₁* in degree 1.
    pub fn surface_h1_only(phi1: &SymplecticMatrix) -> Self {
        Self { degree_maps: vec![Vec::new(), phi1.entries().clone(), Vec::new()] }
    }

    pub fn top_degree(&self) -> usize {
        self.degree_maps.len().saturating_sub(1)
    }

    pub fn degree_map(&self, p: usize) -> Option<&IntMatrix> {
        self.degree_maps.get(p)
    }

    /// The mapping torus has cohomology up to one more than the fiber.
    pub fn max_degree(&self) -> usize {
        self.degree_maps.len()
    }

    pub fn inverse(&self) -> Self {
        let maps = self.degree_maps.iter().map(|m| int_inverse(m)).collect();
        Self { degree_maps: maps }
    }
}

/// Exact inverse of a unimodular integer matrix via the adjugate.
fn int_inverse(m: &IntMatrix) -> IntMatrix {
    let n = m.len();
    if n == 0 {
        return Vec::new();
    }
    let det = poly::det_int(m);
    let minor = |r: usize, c: usize| -> IntMatrix {
        (0..n)
            .filter(|&i| i != r)
            .map(|i| (0..n).filter(|&j| j != c).map(|j| m[i][j].clone()).collect())
            .collect()
    };
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let cof = poly::det_int(&minor(j, i));
                    let signed = if (i + j) % 2 == 0 { cof } else { -cof };
                    signed * &det // det = ±1, so 1/det = det
                })
                .collect()
        })
        .collect()
}

/// A point of U(1): exact root tag of an integer polynomial, or a float.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum UnitValue {
    Exact {
        /// Coefficients from the leading term down.
        #[serde(with = "crate::json::big_vec")]
        poly: Vec<BigInt>,
        /// Index among the polynomial's unit-circle roots, ordered by
        /// argument in [0, 2π).
        root_index: usize,
    },
    Float {
        re: f64,
        im: f64,
    },
}

impl UnitValue {
    pub fn float(z: Complex64) -> Self {
        UnitValue::Float { re: z.re, im: z.im }
    }

    pub fn resolve(&self) -> Result<Complex64, MappingTorusError> {
        match self {
            UnitValue::Float { re, im } => {
                let z = Complex64::new(*re, *im);
                if (z.norm() - 1.0).abs() > 1e-12 {
                    return Err(MappingTorusError::NotUnitModulus { modulus: z.norm() });
                }
                Ok(z)
            }
            UnitValue::Exact { poly, root_index } => {
                let asc: Vec<BigInt> = poly.iter().rev().cloned().collect();
                let roots = poly::unit_circle_roots(&asc).roots;
                roots
                    .get(*root_index)
                    .map(|r| r.value)
                    .ok_or(MappingTorusError::BadRootTag { index: *root_index, count: roots.len() })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WangDims {
    pub coker_dim: usize,
    pub ker_dim: usize,
    pub h_dim: usize,
}

/// I − λ⁻¹φ over ℂ.
fn twisted(m: &IntMatrix, lambda: Complex64) -> DMatrix<Complex64> {
    let n = m.len();
    let f = to_f64(m);
    let inv = Complex64::new(1.0, 0.0) / lambda;
    DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
        id - inv * f[(i, j)]
    })
}

fn nullity(m: &IntMatrix, lambda: Complex64) -> usize {
    let n = m.len();
    if n == 0 {
        return 0;
    }
    n - rank_complex(&twisted(m, lambda), 1e-10)
}

/// dim H^p(MT; E_λ) from the Wang sequence:
/// Coker(I − λ⁻¹φ*_{p−1}) ⊕ Ker(I − λ⁻¹φ*_p), ranks over ℂ with threshold
/// 1e−10·‖I − λ⁻¹φ‖.
pub fn wang_dims(phi: &FiberAutomorphism, p: usize, lambda: &UnitValue) -> Result<WangDims, MappingTorusError> {
    if p > phi.max_degree() {
        return Err(MappingTorusError::DegreeOutOfRange { p, max: phi.max_degree() });
    }
    let z = lambda.resolve()?;
    Ok(wang_dims_at(phi, p, z))
}

fn wang_dims_at(phi: &FiberAutomorphism, p: usize, z: Complex64) -> WangDims {
    // cokernel of a square map has the same dimension as its kernel
    let coker_dim = if p == 0 { 0 } else { phi.degree_map(p - 1).map_or(0, |m| nullity(m, z)) };
    let ker_dim = phi.degree_map(p).map_or(0, |m| nullity(m, z));
    WangDims { coker_dim, ker_dim, h_dim: coker_dim + ker_dim }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExceptionalLambda {
    pub tag: UnitValue,
    pub approx: UnitValue,
    pub dims: WangDims,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReducedReport {
    pub vanishes: bool,
    pub exceptional_lambdas: Vec<ExceptionalLambda>,
}

fn unit_roots_of(m: &IntMatrix) -> (Vec<BigInt>, UnitCircleAnalysis) {
    let asc = poly::char_poly(m);
    let analysis = poly::unit_circle_roots(&asc);
    (asc.into_iter().rev().collect(), analysis)
}

/// The reduced L² cohomology of the cyclic cover vanishes in every degree;
/// the finitely many λ with nonzero twisted cohomology are listed.
pub fn reduced_l2_vanishes(phi: &FiberAutomorphism, p: usize) -> Result<ReducedReport, MappingTorusError> {
    if p > phi.max_degree() {
        return Err(MappingTorusError::DegreeOutOfRange { p, max: phi.max_degree() });
    }
    let mut found: Vec<ExceptionalLambda> = Vec::new();
    let degrees = [p.checked_sub(1), Some(p)];
    for q in degrees.into_iter().flatten() {
        let Some(m) = phi.degree_map(q) else { continue };
        if m.is_empty() {
            continue;
        }
        let (desc, analysis) = unit_roots_of(m);
        for (k, r) in analysis.roots.iter().enumerate() {
            if found.iter().any(|e| (e.approx_value() - r.value).norm() < 1e-9) {
                continue;
            }
            let dims = wang_dims_at(phi, p, r.value);
            if dims.h_dim > 0 {
                found.push(ExceptionalLambda {
                    tag: UnitValue::Exact { poly: desc.clone(), root_index: k },
                    approx: UnitValue::float(r.value),
                    dims,
                });
            }
        }
    }
    found.sort_by(|a, b| arg(a.approx_value()).partial_cmp(&arg(b.approx_value())).unwrap());
    Ok(ReducedReport { vanishes: true, exceptional_lambdas: found })
}

fn arg(z: Complex64) -> f64 {
    let a = z.im.atan2(z.re);
    if a < -1e-15 {
        a + std::f64::consts::TAU
    } else {
        a.max(0.0)
    }
}

impl ExceptionalLambda {
    pub fn approx_value(&self) -> Complex64 {
        match self.approx {
            UnitValue::Float { re, im } => Complex64::new(re, im),
            UnitValue::Exact { .. } => self.approx.resolve().unwrap_or_default(),
        }
    }
}

/// Both unit-eigenvalue conditions that bear on zero in the unreduced
/// spectrum in degree p, reported separately.
#[derive(Debug, Clone, Serialize)]
pub struct UnreducedReport {
    /// φ*_p has a unit-modulus eigenvalue (kernel side).
    pub kernel_condition: bool,
    /// φ*_{p−1} has a unit-modulus eigenvalue (cokernel side).
    pub cokernel_condition: bool,
    pub certificate: Option<symplectic::Certificate>,
}

fn unit_eigenvalue_in(m: &IntMatrix) -> (bool, Option<symplectic::Certificate>) {
    if m.is_empty() {
        return (false, None);
    }
    if let Ok(s) = symplectic::validate_symplectic(m.clone()) {
        let v = symplectic::has_unit_circle_eigenvalue(&s);
        return (v.verdict, Some(v.certificate));
    }
    (unit_roots_of(m).1.has_unit_root(), None)
}

pub fn unreduced_conditions(phi: &FiberAutomorphism, p: usize) -> Result<UnreducedReport, MappingTorusError> {
    if p > phi.max_degree() {
        return Err(MappingTorusError::DegreeOutOfRange { p, max: phi.max_degree() });
    }
    let (kernel_condition, certificate) = phi.degree_map(p).map_or((false, None), unit_eigenvalue_in);
    let cokernel_condition = p.checked_sub(1).and_then(|q| phi.degree_map(q)).map_or(false, |m| unit_eigenvalue_in(m).0);
    Ok(UnreducedReport { kernel_condition, cokernel_condition, certificate })
}

/// Zero lies in the spectrum of δd on p-forms modulo closed forms of the
/// cyclic cover iff φ*_p has an eigenvalue of modulus one.
pub fn zero_in_spectrum_unreduced(phi: &FiberAutomorphism, p: usize) -> Result<bool, MappingTorusError> {
    Ok(unreduced_conditions(phi, p)?.kernel_condition)
}
