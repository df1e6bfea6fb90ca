//! Lagrangian subspaces of a boundary cohomology H¹(∂K; ℝ), their
//! intersections, and the reduced L² H¹ dimension count built from them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derivative::EndClass;
use crate::json;
use crate::linalg::{nullspace, orth, rank};
use crate::symplectic::{self, int_matrix, validate_symplectic, SymplecticMatrix};

pub const LAGRANGIAN_TOL: f64 = 1e-12;
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LagrangianError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("closed image at every end has not been attested")]
    PreconditionNotAttested,
    #[error("invalid component {index}: {reason}")]
    InvalidComponent { index: usize, reason: String },
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, LagrangianError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub genus: usize,
    pub sign: i8,
}

/// ⊕ H¹(S_i; ℝ) with J = blockdiag(ε_i J_{g_i}).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "RawSpace")]
pub struct SymplecticSpace {
    pub components: Vec<Component>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpace {
    components: Vec<Component>,
}

impl TryFrom<RawSpace> for SymplecticSpace {
    type Error = LagrangianError;
    fn try_from(r: RawSpace) -> Result<Self> {
        SymplecticSpace::new(r.components)
    }
}

impl SymplecticSpace {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(LagrangianError::Invalid("no components".into()));
        }
        for (index, c) in components.iter().enumerate() {
            if c.genus == 0 {
                return Err(LagrangianError::InvalidComponent { index, reason: "genus must be positive".into() });
            }
            if c.sign != 1 && c.sign != -1 {
                return Err(LagrangianError::InvalidComponent { index, reason: format!("sign {} is not ±1", c.sign) });
            }
        }
        Ok(Self { components })
    }

    /// 2n.
    pub fn dim(&self) -> usize {
        self.components.iter().map(|c| 2 * c.genus).sum()
    }

    pub fn form(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut j = DMatrix::zeros(n, n);
        let mut off = 0;
        for c in &self.components {
            let g = c.genus;
            let s = f64::from(c.sign);
            for i in 0..g {
                j[(off + i, off + g + i)] = s;
                j[(off + g + i, off + i)] = -s;
            }
            off += 2 * g;
        }
        j
    }
}

/// A subspace given by spanning columns; stored as an orthonormal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: DMatrix<f64>,
}

impl Subspace {
    pub fn new(span: &DMatrix<f64>) -> Self {
        Self { basis: orth(span, RANK_TOL) }
    }

    pub fn from_cols(cols: &[Vec<f64>], ambient: usize) -> Result<Self> {
        let m = json::from_cols(cols, ambient).map_err(LagrangianError::Invalid)?;
        Ok(Self::new(&m))
    }

    pub fn zero(ambient: usize) -> Self {
        Self { basis: DMatrix::zeros(ambient, 0) }
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient(&self) -> usize {
        self.basis.nrows()
    }

    pub fn image(&self, t: &DMatrix<f64>) -> Self {
        Self::new(&(t * &self.basis))
    }
}

fn check_ambient(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(LagrangianError::DimensionMismatch { expected: a, got: b });
    }
    Ok(())
}

/// WᵀJW = 0 (entrywise, on an orthonormal basis) and dim W = n.
pub fn is_lagrangian(w: &Subspace, v: &SymplecticSpace) -> Result<bool> {
    check_ambient(v.dim(), w.ambient())?;
    if 2 * w.dim() != v.dim() {
        return Ok(false);
    }
    let pairing = w.basis.transpose() * v.form() * &w.basis;
    Ok(pairing.amax() <= LAGRANGIAN_TOL * v.dim() as f64)
}

/// L₁ ∩ L₂ from the null space of [B₁ | −B₂].
pub fn intersect(l1: &Subspace, l2: &Subspace) -> Result<Subspace> {
    check_ambient(l1.ambient(), l2.ambient())?;
    let (k1, k2) = (l1.dim(), l2.dim());
    if k1 == 0 || k2 == 0 {
        return Ok(Subspace::zero(l1.ambient()));
    }
    let mut stacked = DMatrix::zeros(l1.ambient(), k1 + k2);
    stacked.columns_mut(0, k1).copy_from(&l1.basis);
    stacked.columns_mut(k1, k2).copy_from(&(-&l2.basis));
    let null = nullspace(&stacked, RANK_TOL);
    if null.ncols() == 0 {
        return Ok(Subspace::zero(l1.ambient()));
    }
    Ok(Subspace::new(&(&l1.basis * null.rows(0, k1))))
}

pub fn sum(l1: &Subspace, l2: &Subspace) -> Result<Subspace> {
    check_ambient(l1.ambient(), l2.ambient())?;
    let mut both = DMatrix::zeros(l1.ambient(), l1.dim() + l2.dim());
    both.columns_mut(0, l1.dim()).copy_from(&l1.basis);
    both.columns_mut(l1.dim(), l2.dim()).copy_from(&l2.basis);
    Ok(Subspace::new(&both))
}

/// How the closed-image hypothesis on the ends is supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attestation {
    None,
    Caller,
    EndVerdicts(Vec<EndClass>),
}

impl Attestation {
    pub fn holds(&self) -> bool {
        match self {
            Attestation::None => false,
            Attestation::Caller => true,
            Attestation::EndVerdicts(v) => !v.is_empty() && v.iter().all(|c| *c == EndClass::ClosedImage),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReducedH1 {
    pub dim: usize,
    pub interior_rank: usize,
    pub intersection_dim: usize,
    #[serde(serialize_with = "cols")]
    pub intersection_basis: DMatrix<f64>,
}

fn cols<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    serde::Serialize::serialize(&json::to_cols(m), s)
}

/// rank(H¹(K,∂K) → H¹(K)) + dim(L₁ ∩ L₂).
pub fn reduced_h1_dim(interior_map: &DMatrix<f64>, l1: &Subspace, l2: &Subspace, ends: &Attestation) -> Result<ReducedH1> {
    if !ends.holds() {
        return Err(LagrangianError::PreconditionNotAttested);
    }
    let cap = intersect(l1, l2)?;
    let interior_rank = numeric_rank(interior_map);
    Ok(ReducedH1 {
        dim: interior_rank + cap.dim(),
        interior_rank,
        intersection_dim: cap.dim(),
        intersection_basis: cap.basis,
    })
}

fn numeric_rank(m: &DMatrix<f64>) -> usize {
    rank(m, RANK_TOL, f64::MIN_POSITIVE)
}

/// Rank of the topological map in the geometrically finite case.
pub fn geom_finite_reduced_h1(map: &DMatrix<f64>) -> usize {
    numeric_rank(map)
}

/// Hyperbolic block [[i+2, 1], [i+1, 1]], trace i+3.
fn hyperbolic_block(i: usize) -> SymplecticMatrix {
    let a = i as i64;
    validate_symplectic(int_matrix(&[&[a + 2, 1], &[a + 1, 1]])).expect("unimodular 2×2")
}

/// A genus-g monodromy with no unit-circle eigenvalues (E₀ = 0).
pub fn hyperbolic_monodromy(g: usize) -> SymplecticMatrix {
    let blocks: Vec<SymplecticMatrix> = (0..g).map(hyperbolic_block).collect();
    SymplecticMatrix::direct_sum(&blocks)
}

#[derive(Debug, Clone)]
pub struct ProductPair {
    pub space: SymplecticSpace,
    pub l1: Subspace,
    /// E₊ ⊕ E₋: the cyclic cover of the mapping torus.
    pub l2_cyclic: Subspace,
    /// E₋ ⊕ E₋: the double of a half-infinite product.
    pub l2_double: Subspace,
}

/// K = [−1, 1] × S inside ℝ × S, with ∂K = S ⊔ S carrying opposite
/// orientations, L₁ the diagonal and L₂ built from the monodromy's
/// expanding and contracting subspaces.
pub fn product_pair(m: &SymplecticMatrix) -> Result<ProductPair> {
    let split = symplectic::eigen_split(m, 1e-9).map_err(|e| LagrangianError::Invalid(e.to_string()))?;
    if split.e0_dim != 0 {
        return Err(LagrangianError::Invalid(format!("monodromy has E₀ of dimension {}", split.e0_dim)));
    }
    let g = m.genus();
    let n = 2 * g;
    let space = SymplecticSpace::new(vec![Component { genus: g, sign: 1 }, Component { genus: g, sign: -1 }])?;
    let diag = DMatrix::from_fn(2 * n, n, |r, c| if r % n == c { 1.0 } else { 0.0 });
    let pair = |top: DMatrix<f64>, bottom: DMatrix<f64>| {
        let mut b = DMatrix::zeros(2 * n, top.ncols() + bottom.ncols());
        b.view_mut((0, 0), (n, top.ncols())).copy_from(&top);
        b.view_mut((n, top.ncols()), (n, bottom.ncols())).copy_from(&bottom);
        Subspace::new(&b)
    };
    let plus = split.expanding_basis();
    let minus = split.contracting_basis();
    Ok(ProductPair {
        space,
        l1: Subspace::new(&diag),
        l2_cyclic: pair(plus, minus.clone()),
        l2_double: pair(minus.clone(), minus),
    })
}

/// JSON input for a reduced-H¹ computation.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagrangianInput {
    pub ambient: SymplecticSpace,
    /// Columns spanning L₁.
    pub l1: Vec<Vec<f64>>,
    /// Columns spanning L₂.
    pub l2: Vec<Vec<f64>>,
    /// Rows of the interior map H¹(K,∂K) → H¹(K); omitted means zero.
    #[serde(default)]
    pub interior_map: Option<Vec<Vec<f64>>>,
    #[serde(default = "no_attestation")]
    pub attestation: Attestation,
}

fn no_attestation() -> Attestation {
    Attestation::None
}

#[derive(Debug, Clone, Serialize)]
pub struct LagrangianReport {
    pub ambient_dim: usize,
    pub l1_dim: usize,
    pub l2_dim: usize,
    pub l1_lagrangian: bool,
    pub l2_lagrangian: bool,
    pub sum_dim: usize,
    pub reduced_h1: ReducedH1,
}

pub fn run(input: &LagrangianInput) -> Result<LagrangianReport> {
    let n = input.ambient.dim();
    let l1 = Subspace::from_cols(&input.l1, n)?;
    let l2 = Subspace::from_cols(&input.l2, n)?;
    let interior = match &input.interior_map {
        Some(rows) => json::from_rows(rows).map_err(LagrangianError::Invalid)?,
        None => DMatrix::zeros(0, 0),
    };
    let reduced_h1 = reduced_h1_dim(&interior, &l1, &l2, &input.attestation)?;
    Ok(LagrangianReport {
        ambient_dim: n,
        l1_dim: l1.dim(),
        l2_dim: l2.dim(),
        l1_lagrangian: is_lagrangian(&l1, &input.ambient)?,
        l2_lagrangian: is_lagrangian(&l2, &input.ambient)?,
        sum_dim: sum(&l1, &l2)?.dim(),
        reduced_h1,
    })
}
