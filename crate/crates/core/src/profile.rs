//! Time-dependent inner products on H¹(S; ℝ), modeled as Gram-matrix
//! families t ↦ G(t).
//!
//! Every profile evaluates a factor L(t) with G(t) = L(t)ᵀL(t), so that
//! ‖v‖_t = |L(t)v|. For the periodic profiles this avoids forming G(t),
//! whose condition number grows like λ^{4t}.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::json::{from_cols, from_rows};
use crate::linalg::{eigenvalues, is_spd, spd_geodesic, spd_log, spd_sqrt, sym_exp, symmetrize};
use crate::symplectic::{eigen_split, EigenSplit, SymplecticError, SymplecticMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("Gram matrix is not positive definite at t = {t}")]
    NotPositiveDefinite { t: f64 },
    #[error("t = {t} outside the sampled range [{min}, {max}]")]
    OutOfRange { t: f64, min: f64, max: f64 },
    #[error("vector has dimension {got}, profile has dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("degenerate window: {0}")]
    DegenerateWindow(String),
    #[error("monodromy has a Jordan block on the unit circle; no periodic model")]
    NotSemisimple,
    #[error("invalid profile: {0}")]
    Invalid(String),
    #[error(transparent)]
    Symplectic(#[from] SymplecticError),
}

/// h(t) = scale · (1+t)^power · log(2+t)^log_power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weight {
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub power: f64,
    #[serde(default)]
    pub log_power: f64,
}

fn one() -> f64 {
    1.0
}

impl Weight {
    pub fn new(scale: f64, power: f64, log_power: f64) -> Self {
        Self { scale, power, log_power }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.scale * (1.0 + t).powf(self.power) * (2.0 + t).ln().powf(self.log_power)
    }
}

#[derive(Debug, Clone)]
pub struct ExponentialSplit {
    pub plus: DMatrix<f64>,
    pub minus: DMatrix<f64>,
    pub rate: f64,
    pub c_plus: f64,
    pub c_minus: f64,
    basis_inv: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct PeriodicPA {
    pub monodromy: SymplecticMatrix,
    pub split: EigenSplit,
    pub g0: DMatrix<f64>,
    g1: DMatrix<f64>,
    eigvecs: DMatrix<Complex64>,
    eigvecs_inv: DMatrix<Complex64>,
    eigvals: Vec<Complex64>,
}

#[derive(Debug, Clone)]
pub struct Polynomial {
    /// Columns are the directions carrying the individual weights.
    pub basis: DMatrix<f64>,
    pub weights: Vec<Weight>,
    pub envelope_c: Option<f64>,
    basis_inv: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct Sampled {
    pub times: Vec<f64>,
    pub grams: Vec<DMatrix<f64>>,
    pub extrapolate: bool,
    logs: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub enum ProfileKind {
    ExponentialSplit(ExponentialSplit),
    PeriodicPA(Box<PeriodicPA>),
    Polynomial(Polynomial),
    Sampled(Sampled),
}

#[derive(Debug, Clone)]
pub struct NormProfile {
    dim: usize,
    kind: ProfileKind,
}

fn invert(b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>, ProfileError> {
    if !b.is_square() {
        return Err(ProfileError::Invalid(format!("{what} is not square")));
    }
    let inv = b.clone().try_inverse().ok_or_else(|| ProfileError::Invalid(format!("{what} is singular")))?;
    let cond = b.norm() * inv.norm();
    if !cond.is_finite() || cond > 1e12 {
        return Err(ProfileError::Invalid(format!("{what} is numerically singular (condition {cond:e})")));
    }
    Ok(inv)
}

impl NormProfile {
    pub fn exponential_split(
        plus: DMatrix<f64>,
        minus: DMatrix<f64>,
        rate: f64,
        c_plus: f64,
        c_minus: f64,
    ) -> Result<Self, ProfileError> {
        if !(rate > 0.0 && c_plus > 0.0 && c_minus > 0.0) {
            return Err(ProfileError::Invalid("rate and constants must be positive".into()));
        }
        let n = plus.nrows();
        if minus.nrows() != n || plus.ncols() + minus.ncols() != n {
            return Err(ProfileError::Invalid("E+ and E- must be complementary".into()));
        }
        let basis = crate::symplectic::hcat([&plus, &minus].into_iter(), n);
        let basis_inv = invert(&basis, "E+ ⊕ E-")?;
        Ok(Self {
            dim: n,
            kind: ProfileKind::ExponentialSplit(ExponentialSplit { plus, minus, rate, c_plus, c_minus, basis_inv }),
        })
    }

    /// Periodic model of a monodromy with G(t+1) = φᵀG(t)φ, geodesic in
    /// the SPD cone on [0, 1].
    pub fn periodic_pa(monodromy: SymplecticMatrix, g0: DMatrix<f64>, tol: f64) -> Result<Self, ProfileError> {
        let n = monodromy.dim();
        if g0.nrows() != n || !is_spd(&g0) {
            return Err(ProfileError::NotPositiveDefinite { t: 0.0 });
        }
        let split = eigen_split(&monodromy, tol)?;
        if !split.semisimple_on_circle {
            return Err(ProfileError::NotSemisimple);
        }
        let phi = monodromy.to_f64();
        let g1 = symmetrize(&(phi.transpose() * &g0 * &phi));
        let phic: DMatrix<Complex64> = phi.map(|x| Complex64::new(x, 0.0));
        let eigvals = eigenvalues(&phi);
        let mut eigvecs = DMatrix::<Complex64>::zeros(n, n);
        let mut col = 0;
        // eigenvectors of each distinct eigenvalue cluster
        let clusters = crate::linalg::cluster_eigenvalues(&eigvals, 1e-6);
        let mut vals = Vec::with_capacity(n);
        for (mu, k) in clusters {
            let a = &phic - DMatrix::<Complex64>::identity(n, n) * mu;
            let ns = crate::linalg::nullspace_complex(&a, 1e-8);
            if ns.ncols() < k {
                return Err(ProfileError::NotSemisimple);
            }
            for j in 0..k {
                eigvecs.set_column(col, &ns.column(j));
                vals.push(mu);
                col += 1;
            }
        }
        let eigvecs_inv = eigvecs.clone().try_inverse().ok_or(ProfileError::NotSemisimple)?;
        Ok(Self {
            dim: n,
            kind: ProfileKind::PeriodicPA(Box::new(PeriodicPA {
                monodromy,
                split,
                g0,
                g1,
                eigvecs,
                eigvecs_inv,
                eigvals: vals,
            })),
        })
    }

    pub fn polynomial(basis: DMatrix<f64>, weights: Vec<Weight>, envelope_c: Option<f64>) -> Result<Self, ProfileError> {
        let n = basis.nrows();
        if weights.len() != n {
            return Err(ProfileError::Invalid(format!("{} weights for dimension {n}", weights.len())));
        }
        if weights.iter().any(|w| !(w.scale > 0.0) || !w.power.is_finite() || !w.log_power.is_finite()) {
            return Err(ProfileError::Invalid("weights need positive scale and finite exponents".into()));
        }
        let basis_inv = invert(&basis, "polynomial basis")?;
        Ok(Self { dim: n, kind: ProfileKind::Polynomial(Polynomial { basis, weights, envelope_c, basis_inv }) })
    }

    /// Diagonal polynomial profile in the standard basis.
    pub fn diagonal(weights: Vec<Weight>) -> Result<Self, ProfileError> {
        let n = weights.len();
        Self::polynomial(DMatrix::identity(n, n), weights, None)
    }

    /// The t-independent Gram matrix `g`.
    pub fn constant(g: DMatrix<f64>) -> Result<Self, ProfileError> {
        let chol = symmetrize(&g).cholesky().ok_or(ProfileError::NotPositiveDefinite { t: 0.0 })?;
        // G = LLᵀ, so the columns of L^{-T} are G-orthonormal
        let basis = invert(&chol.l().transpose(), "Cholesky factor")?;
        let n = g.nrows();
        Self::polynomial(basis, vec![Weight::new(1.0, 0.0, 0.0); n], None)
    }

    pub fn sampled(times: Vec<f64>, grams: Vec<DMatrix<f64>>, extrapolate: bool) -> Result<Self, ProfileError> {
        if times.is_empty() || times.len() != grams.len() {
            return Err(ProfileError::Invalid("need one Gram matrix per sample time".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ProfileError::Invalid("sample times must be strictly increasing".into()));
        }
        let n = grams[0].nrows();
        let mut logs = Vec::with_capacity(grams.len());
        for (t, g) in times.iter().zip(&grams) {
            if g.nrows() != n || g.ncols() != n {
                return Err(ProfileError::Invalid("Gram matrices differ in size".into()));
            }
            if (g - g.transpose()).norm() > 1e-12 * g.norm() || !is_spd(g) {
                return Err(ProfileError::NotPositiveDefinite { t: *t });
            }
            logs.push(spd_log(g));
        }
        Ok(Self { dim: n, kind: ProfileKind::Sampled(Sampled { times, grams, extrapolate, logs }) })
    }

    /// Rows of (t, G row-major) as produced by a CSV reader.
    pub fn sampled_from_rows(rows: &[Vec<f64>], extrapolate: bool) -> Result<Self, ProfileError> {
        let mut times = Vec::new();
        let mut grams = Vec::new();
        for r in rows {
            let m = r.len().saturating_sub(1);
            let n = (m as f64).sqrt().round() as usize;
            if n == 0 || n * n != m {
                return Err(ProfileError::Invalid(format!("row of length {} is not t followed by n² entries", r.len())));
            }
            times.push(r[0]);
            grams.push(DMatrix::from_row_slice(n, n, &r[1..]));
        }
        Self::sampled(times, grams, extrapolate)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &ProfileKind {
        &self.kind
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ProfileKind::ExponentialSplit(_) => "exponential_split",
            ProfileKind::PeriodicPA(_) => "periodic_pa",
            ProfileKind::Polynomial(_) => "polynomial",
            ProfileKind::Sampled(_) => "sampled",
        }
    }

    /// L(t) with G(t) = L(t)ᵀ L(t).
    pub fn factor(&self, t: f64) -> Result<DMatrix<f64>, ProfileError> {
        if !(t >= 0.0) {
            return Err(ProfileError::OutOfRange { t, min: 0.0, max: f64::INFINITY });
        }
        match &self.kind {
            ProfileKind::ExponentialSplit(e) => {
                let kp = e.plus.ncols();
                let scale = DMatrix::from_fn(self.dim, self.dim, |i, j| {
                    if i != j {
                        0.0
                    } else if i < kp {
                        e.c_plus * (e.rate * t).exp()
                    } else {
                        e.c_minus * (-e.rate * t).exp()
                    }
                });
                Ok(scale * &e.basis_inv)
            }
            ProfileKind::Polynomial(p) => {
                let scale = DMatrix::from_fn(self.dim, self.dim, |i, j| if i == j { p.weights[i].eval(t).sqrt() } else { 0.0 });
                Ok(scale * &p.basis_inv)
            }
            ProfileKind::PeriodicPA(pa) => {
                let n = t.floor();
                let s = t - n;
                let gs = spd_geodesic(&pa.g0, &pa.g1, s);
                let power = pa.power(n as i32);
                Ok(spd_sqrt(&gs) * power)
            }
            ProfileKind::Sampled(_) => Ok(spd_sqrt(&self.gram(t)?)),
        }
    }

    /// L(t₂) L(t₁)⁻¹, formed without the product of a large and a small
    /// factor when the profile structure allows it.
    pub fn transfer(&self, t1: f64, t2: f64) -> Result<DMatrix<f64>, ProfileError> {
        for t in [t1, t2] {
            if !(t >= 0.0) {
                return Err(ProfileError::OutOfRange { t, min: 0.0, max: f64::INFINITY });
            }
        }
        let diag = |f: &dyn Fn(usize) -> f64| DMatrix::from_fn(self.dim, self.dim, |i, j| if i == j { f(i) } else { 0.0 });
        match &self.kind {
            ProfileKind::ExponentialSplit(e) => {
                let kp = e.plus.ncols();
                Ok(diag(&|i| if i < kp { (e.rate * (t2 - t1)).exp() } else { (-e.rate * (t2 - t1)).exp() }))
            }
            ProfileKind::Polynomial(p) => Ok(diag(&|i| (p.weights[i].eval(t2) / p.weights[i].eval(t1)).sqrt())),
            ProfileKind::PeriodicPA(pa) => {
                let (n1, n2) = (t1.floor(), t2.floor());
                let l2 = spd_sqrt(&spd_geodesic(&pa.g0, &pa.g1, t2 - n2));
                let l1i = crate::linalg::spd_inv_sqrt(&spd_geodesic(&pa.g0, &pa.g1, t1 - n1));
                Ok(l2 * pa.power((n2 - n1) as i32) * l1i)
            }
            ProfileKind::Sampled(_) => Ok(self.factor(t2)? * crate::linalg::spd_inv_sqrt(&self.gram(t1)?)),
        }
    }

    /// Horizon beyond which float norms of contracting directions are
    /// dominated by roundoff from expanding ones (relative error 1e−6).
    pub fn reliable_horizon(&self) -> f64 {
        let budget = 1e10_f64.ln() / 2.0;
        match &self.kind {
            ProfileKind::ExponentialSplit(e) => {
                let b = crate::symplectic::hcat([&e.plus, &e.minus].into_iter(), self.dim);
                let mixed = (&e.basis_inv * b - DMatrix::identity(self.dim, self.dim)).amax() > 0.0;
                if mixed && e.plus.ncols() > 0 && e.minus.ncols() > 0 {
                    budget / e.rate
                } else {
                    f64::INFINITY
                }
            }
            ProfileKind::PeriodicPA(pa) => {
                let top = pa.eigvals.iter().map(|z| z.norm().ln()).fold(0.0, f64::max);
                if top > 0.0 {
                    (budget / top).max(2.0)
                } else {
                    f64::INFINITY
                }
            }
            _ => f64::INFINITY,
        }
    }

    pub fn gram(&self, t: f64) -> Result<DMatrix<f64>, ProfileError> {
        let g = match &self.kind {
            ProfileKind::Sampled(s) => s.gram(t)?,
            ProfileKind::PeriodicPA(pa) => {
                let n = t.floor();
                let gs = spd_geodesic(&pa.g0, &pa.g1, t - n);
                let p = pa.power(n as i32);
                symmetrize(&(p.transpose() * gs * p))
            }
            _ => {
                let l = self.factor(t)?;
                symmetrize(&(l.transpose() * l))
            }
        };
        if !is_spd(&g) {
            return Err(ProfileError::NotPositiveDefinite { t });
        }
        Ok(g)
    }

    pub fn norm(&self, t: f64, v: &[f64]) -> Result<f64, ProfileError> {
        if v.len() != self.dim {
            return Err(ProfileError::DimensionMismatch { expected: self.dim, got: v.len() });
        }
        let l = self.factor(t)?;
        Ok((l * nalgebra::DVector::from_column_slice(v)).norm())
    }

    /// ‖v‖_t for each column of `vs`.
    pub fn norms(&self, t: f64, vs: &DMatrix<f64>) -> Result<Vec<f64>, ProfileError> {
        if vs.nrows() != self.dim {
            return Err(ProfileError::DimensionMismatch { expected: self.dim, got: vs.nrows() });
        }
        let lv = self.factor(t)? * vs;
        Ok(lv.column_iter().map(|c| c.norm()).collect())
    }
}

impl PeriodicPA {
    /// φⁿ through the eigendecomposition, so that contracting directions
    /// are not swamped by roundoff from expanding ones.
    fn power(&self, n: i32) -> DMatrix<f64> {
        let d = DMatrix::from_fn(self.eigvals.len(), self.eigvals.len(), |i, j| {
            if i == j {
                self.eigvals[i].powi(n)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        (&self.eigvecs * d * &self.eigvecs_inv).map(|c| c.re)
    }
}

impl Sampled {
    fn gram(&self, t: f64) -> Result<DMatrix<f64>, ProfileError> {
        let (min, max) = (self.times[0], *self.times.last().unwrap());
        if let Some(k) = self.times.iter().position(|&s| s == t) {
            return Ok(self.grams[k].clone());
        }
        if (t < min || t > max) && !self.extrapolate {
            return Err(ProfileError::OutOfRange { t, min, max });
        }
        if self.times.len() == 1 {
            return Ok(self.grams[0].clone());
        }
        let k = match self.times.iter().position(|&s| s > t) {
            Some(0) => 0,
            Some(k) => k - 1,
            None => self.times.len() - 2,
        };
        let theta = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        let l = &self.logs[k] * (1.0 - theta) + &self.logs[k + 1] * theta;
        Ok(sym_exp(&l))
    }
}

/// JSON description of a profile, discriminated by "kind".
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    ExponentialSplit {
        /// Spanning vectors of E+.
        plus: Vec<Vec<f64>>,
        /// Spanning vectors of E-.
        minus: Vec<Vec<f64>>,
        rate: f64,
        #[serde(default = "one")]
        c_plus: f64,
        #[serde(default = "one")]
        c_minus: f64,
    },
    PeriodicPa {
        monodromy: SymplecticMatrix,
        #[serde(default)]
        g0: Option<Vec<Vec<f64>>>,
    },
    Polynomial {
        /// Direction vectors; defaults to the standard basis.
        #[serde(default)]
        basis: Option<Vec<Vec<f64>>>,
        weights: Vec<Weight>,
        #[serde(default)]
        envelope_c: Option<f64>,
    },
    Constant {
        gram: Vec<Vec<f64>>,
    },
    Sampled {
        times: Vec<f64>,
        grams: Vec<Vec<Vec<f64>>>,
        #[serde(default)]
        extrapolate: bool,
    },
}

impl ProfileSpec {
    pub fn build(&self) -> Result<NormProfile, ProfileError> {
        match self {
            ProfileSpec::ExponentialSplit { plus, minus, rate, c_plus, c_minus } => {
                let n = plus.first().or(minus.first()).map_or(0, |v| v.len());
                let p = from_cols(plus, n).map_err(ProfileError::Invalid)?;
                let m = from_cols(minus, n).map_err(ProfileError::Invalid)?;
                NormProfile::exponential_split(p, m, *rate, *c_plus, *c_minus)
            }
            ProfileSpec::PeriodicPa { monodromy, g0 } => {
                let n = monodromy.dim();
                let g = match g0 {
                    Some(rows) => from_rows(rows).map_err(ProfileError::Invalid)?,
                    None => DMatrix::identity(n, n),
                };
                NormProfile::periodic_pa(monodromy.clone(), g, 1e-6)
            }
            ProfileSpec::Polynomial { basis, weights, envelope_c } => {
                let n = weights.len();
                let b = match basis {
                    Some(cols) => from_cols(cols, n).map_err(ProfileError::Invalid)?,
                    None => DMatrix::identity(n, n),
                };
                NormProfile::polynomial(b, weights.clone(), *envelope_c)
            }
            ProfileSpec::Constant { gram } => NormProfile::constant(from_rows(gram).map_err(ProfileError::Invalid)?),
            ProfileSpec::Sampled { times, grams, extrapolate } => {
                let gs = grams.iter().map(|g| from_rows(g)).collect::<Result<Vec<_>, _>>().map_err(ProfileError::Invalid)?;
                NormProfile::sampled(times.clone(), gs, *extrapolate)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthFit {
    pub exponent_estimate: f64,
    pub r2: f64,
}

/// Least-squares slope of log‖v‖_t over `samples` equally spaced points of
/// [t0, t1]. At least ten sample steps are required.
pub fn classify_growth(profile: &NormProfile, v: &[f64], window: (f64, f64), samples: usize) -> Result<GrowthFit, ProfileError> {
    let (t0, t1) = window;
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() || t0 < 0.0 {
        return Err(ProfileError::DegenerateWindow(format!("[{t0}, {t1}]")));
    }
    if samples < 11 {
        return Err(ProfileError::DegenerateWindow(format!("{samples} samples is fewer than ten steps")));
    }
    let mut xs = Vec::with_capacity(samples);
    let mut ys = Vec::with_capacity(samples);
    for k in 0..samples {
        let t = t0 + (t1 - t0) * k as f64 / (samples - 1) as f64;
        let nv = profile.norm(t, v)?;
        if !(nv > 0.0) {
            return Err(ProfileError::DegenerateWindow("vector has zero norm".into()));
        }
        xs.push(t);
        ys.push(nv.ln());
    }
    let (slope, _, r2) = linear_fit(&xs, &ys);
    Ok(GrowthFit { exponent_estimate: slope, r2 })
}

/// Ordinary least squares y ≈ slope·x + intercept, with r².
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitWitness {
    pub s1: f64,
    pub s2: f64,
    pub direction: Vec<f64>,
    /// ‖v‖_{s1} / ‖v‖_{s2}.
    pub ratio: f64,
    /// The bound c·e^{±a(s1−s2)} the ratio is compared with.
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitCheck {
    pub holds: bool,
    pub plus_holds: bool,
    pub minus_holds: bool,
    /// Pair and direction with the least slack in the expanding inequality.
    pub plus_witness: Option<SplitWitness>,
    /// Pair and direction with the least slack in the contracting inequality.
    pub minus_witness: Option<SplitWitness>,
}

/// Unit directions in the column span of `basis`: the columns themselves
/// and `extra` seeded Gaussian combinations.
pub fn sample_directions(basis: &DMatrix<f64>, extra: usize, seed: u64) -> DMatrix<f64> {
    let n = basis.nrows();
    let k = basis.ncols();
    if k == 0 {
        return DMatrix::zeros(n, 0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = k + if k > 1 { extra } else { 0 };
    let mut out = DMatrix::zeros(n, total);
    for j in 0..total {
        let mut v = if j < k {
            basis.column(j).into_owned()
        } else {
            let c = nalgebra::DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
            basis * c
        };
        let nv = v.norm();
        if nv > 0.0 {
            v /= nv;
        }
        out.set_column(j, &v);
    }
    out
}

/// Checks ‖v₊‖_{s₁} ≥ c₊e^{a(s₁−s₂)}‖v₊‖_{s₂} and ‖v₋‖_{s₁} ≤ c₋e^{−a(s₁−s₂)}‖v₋‖_{s₂}
/// for all grid pairs s₁ ≥ s₂ and sampled directions.
#[allow(clippy::too_many_arguments)]
pub fn verify_split_hypothesis(
    profile: &NormProfile,
    plus: &DMatrix<f64>,
    minus: &DMatrix<f64>,
    a: f64,
    c_plus: f64,
    c_minus: f64,
    grid: &[f64],
    directions: usize,
    seed: u64,
) -> Result<SplitCheck, ProfileError> {
    let up = sample_directions(plus, directions, seed);
    let down = sample_directions(minus, directions, seed.wrapping_add(1));
    let mut logs_up = vec![Vec::with_capacity(grid.len()); up.ncols()];
    let mut logs_down = vec![Vec::with_capacity(grid.len()); down.ncols()];
    for &t in grid {
        for (j, nv) in profile.norms(t, &up)?.into_iter().enumerate() {
            logs_up[j].push(nv.ln());
        }
        for (j, nv) in profile.norms(t, &down)?.into_iter().enumerate() {
            logs_down[j].push(nv.ln());
        }
    }
    // expanding: φ_k = log‖v‖_{s_k} − a s_k must satisfy φ_k − φ_l ≥ log c₊ for k ≥ l
    let mut plus_worst: Option<(f64, SplitWitness)> = None;
    for (j, ls) in logs_up.iter().enumerate() {
        let mut best_l = 0;
        for k in 0..grid.len() {
            if ls[k] - a * grid[k] > ls[best_l] - a * grid[best_l] {
                best_l = k;
            }
            let slack = (ls[k] - a * grid[k]) - (ls[best_l] - a * grid[best_l]) - c_plus.ln();
            if plus_worst.as_ref().map_or(true, |(s, _)| slack < *s) {
                plus_worst = Some((
                    slack,
                    SplitWitness {
                        s1: grid[k],
                        s2: grid[best_l],
                        direction: up.column(j).iter().copied().collect(),
                        ratio: (ls[k] - ls[best_l]).exp(),
                        bound: c_plus * (a * (grid[k] - grid[best_l])).exp(),
                    },
                ));
            }
        }
    }
    // contracting: ψ_k = log‖v‖_{s_k} + a s_k must satisfy ψ_k − ψ_l ≤ log c₋ for k ≥ l
    let mut minus_worst: Option<(f64, SplitWitness)> = None;
    for (j, ls) in logs_down.iter().enumerate() {
        let mut best_l = 0;
        for k in 0..grid.len() {
            if ls[k] + a * grid[k] < ls[best_l] + a * grid[best_l] {
                best_l = k;
            }
            let slack = c_minus.ln() - ((ls[k] + a * grid[k]) - (ls[best_l] + a * grid[best_l]));
            if minus_worst.as_ref().map_or(true, |(s, _)| slack < *s) {
                minus_worst = Some((
                    slack,
                    SplitWitness {
                        s1: grid[k],
                        s2: grid[best_l],
                        direction: down.column(j).iter().copied().collect(),
                        ratio: (ls[k] - ls[best_l]).exp(),
                        bound: c_minus * (-a * (grid[k] - grid[best_l])).exp(),
                    },
                ));
            }
        }
    }
    let plus_holds = plus_worst.as_ref().map_or(true, |(s, _)| *s >= -1e-12);
    let minus_holds = minus_worst.as_ref().map_or(true, |(s, _)| *s >= -1e-12);
    Ok(SplitCheck {
        holds: plus_holds && minus_holds,
        plus_holds,
        minus_holds,
        plus_witness: plus_worst.map(|(_, w)| w),
        minus_witness: minus_worst.map(|(_, w)| w),
    })
}

pub fn uniform_grid(t_max: f64, step: f64) -> Vec<f64> {
    let n = (t_max / step).round().max(1.0) as usize;
    (0..=n).map(|k| t_max * k as f64 / n as f64).collect()
}

/// A candidate decomposition with the constants used to test it.
#[derive(Debug, Clone)]
pub struct CandidateSplit {
    pub plus: DMatrix<f64>,
    pub minus: DMatrix<f64>,
    pub a: f64,
    pub c_plus: f64,
    pub c_minus: f64,
    pub source: &'static str,
}

/// Proposes E₊ ⊕ E₋ from the profile's own structure, or from the spectrum
/// of G(0)^{-1/2} G(T) G(0)^{-1/2} for generic profiles.
pub fn auto_split(profile: &NormProfile, t_max: f64) -> Result<Option<CandidateSplit>, ProfileError> {
    let n = profile.dim();
    match profile.kind() {
        ProfileKind::ExponentialSplit(e) => Ok(Some(CandidateSplit {
            plus: e.plus.clone(),
            minus: e.minus.clone(),
            a: 0.9 * e.rate,
            c_plus: 0.9,
            c_minus: 1.0 / 0.9,
            source: "profile",
        })),
        ProfileKind::PeriodicPA(pa) => {
            if pa.split.e0_dim > 0 || pa.split.pairs.is_empty() {
                return Ok(None);
            }
            let a = 0.5 * pa.split.pairs.iter().map(|p| p.lambda.ln()).fold(f64::INFINITY, f64::min);
            // constants from the observed distortion over one period
            let plus = pa.split.expanding_basis();
            let minus = pa.split.contracting_basis();
            let grid = uniform_grid(t_max.min(profile.reliable_horizon()), 0.05);
            let c = calibrate_constants(profile, &plus, &minus, a, &grid)?;
            Ok(Some(CandidateSplit { plus, minus, a, c_plus: c.0, c_minus: c.1, source: "eigen_split" }))
        }
        _ => {
            let g0 = profile.gram(0.0)?;
            let gt = profile.gram(t_max)?;
            let hi = crate::linalg::spd_inv_sqrt(&g0);
            let eig = nalgebra::SymmetricEigen::new(symmetrize(&(&hi * gt * &hi)));
            let mut plus_cols = Vec::new();
            let mut minus_cols = Vec::new();
            let mut rate = f64::INFINITY;
            for i in 0..n {
                let r = eig.eigenvalues[i].ln() / (2.0 * t_max);
                let v = &hi * eig.eigenvectors.column(i);
                if r > 0.05 {
                    plus_cols.push(v);
                } else if r < -0.05 {
                    minus_cols.push(v);
                } else {
                    return Ok(None);
                }
                rate = rate.min(r.abs());
            }
            let plus = if plus_cols.is_empty() { DMatrix::zeros(n, 0) } else { DMatrix::from_columns(&plus_cols) };
            let minus = if minus_cols.is_empty() { DMatrix::zeros(n, 0) } else { DMatrix::from_columns(&minus_cols) };
            let a = 0.5 * rate;
            let grid = uniform_grid(t_max, 0.05);
            let c = calibrate_constants(profile, &plus, &minus, a, &grid)?;
            Ok(Some(CandidateSplit { plus, minus, a, c_plus: c.0, c_minus: c.1, source: "gram_spectrum" }))
        }
    }
}

/// Largest c₊ and smallest c₋ compatible with rate `a` on the grid, with a
/// 10% margin; c₊ is floored at 1e−2 and c₋ capped at 1e2.
fn calibrate_constants(
    profile: &NormProfile,
    plus: &DMatrix<f64>,
    minus: &DMatrix<f64>,
    a: f64,
    grid: &[f64],
) -> Result<(f64, f64), ProfileError> {
    let chk = verify_split_hypothesis(profile, plus, minus, a, 1.0, 1.0, grid, 16, 11)?;
    let cp = chk.plus_witness.map_or(1.0, |w| (w.ratio / (a * (w.s1 - w.s2)).exp()).min(1.0));
    let cm = chk.minus_witness.map_or(1.0, |w| (w.ratio / (-a * (w.s1 - w.s2)).exp()).max(1.0));
    Ok(((cp * 0.9).max(1e-2), (cm * 1.1).min(1e2)))
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeCheck {
    pub holds: bool,
    /// Smallest C with 1/(C√(1+t)) ≤ ‖v‖_t ≤ C√(1+t) on [0, T] for each T.
    pub constants: Vec<(f64, f64)>,
}

/// Tests the √(1+t) two-sided envelope for `v` over [0, T], [0, 2T],
/// [0, 4T]; the envelope is accepted when the required constant grows by
/// less than 5% from T to 4T.
pub fn envelope_check(profile: &NormProfile, v: &[f64], t: f64, step: f64) -> Result<EnvelopeCheck, ProfileError> {
    let grid = uniform_grid(4.0 * t, step);
    let mut worst: f64 = 0.0;
    let mut constants = Vec::new();
    let mut next = 0;
    let ends = [t, 2.0 * t, 4.0 * t];
    for &s in &grid {
        let nv = profile.norm(s, v)?;
        let root = (1.0 + s).sqrt();
        let c = (nv / root).max(1.0 / (nv * root));
        worst = worst.max(if c.is_finite() { c } else { f64::INFINITY });
        while next < ends.len() && s >= ends[next] - 1e-9 {
            constants.push((ends[next], worst));
            next += 1;
        }
    }
    let holds = constants.len() == 3 && constants[2].1.is_finite() && constants[2].1 <= 1.05 * constants[0].1;
    Ok(EnvelopeCheck { holds, constants })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symplectic::{int_matrix, validate_symplectic};
    use approx::assert_relative_eq;

    fn exp_split(a: f64) -> NormProfile {
        NormProfile::exponential_split(
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            a,
            1.0,
            1.0,
        )
        .unwrap()
    }

    fn cat_pa() -> NormProfile {
        let m = validate_symplectic(int_matrix(&[&[2, 1], &[1, 1]])).unwrap();
        NormProfile::periodic_pa(m, DMatrix::identity(2, 2), 1e-6).unwrap()
    }

    #[test]
    fn gram_examples() {
        let g = exp_split(1.0).gram(0.7).unwrap();
        assert_relative_eq!(g, DMatrix::from_row_slice(2, 2, &[(1.4f64).exp(), 0.0, 0.0, (-1.4f64).exp()]), epsilon = 1e-12);
        let p = NormProfile::diagonal(vec![Weight::new(1.0, 1.0, 0.0)]).unwrap();
        assert_relative_eq!(p.gram(3.0).unwrap()[(0, 0)], 4.0, epsilon = 1e-12);
        let g1 = cat_pa().gram(1.0).unwrap();
        assert_relative_eq!(g1, DMatrix::from_row_slice(2, 2, &[5.0, 3.0, 3.0, 2.0]), epsilon = 1e-9);
    }

    #[test]
    fn norm_examples() {
        assert_eq!(exp_split(1.0).norm(2.0, &[0.0, 0.0]).unwrap(), 0.0);
        assert_relative_eq!(exp_split(1.0).norm(2.0, &[1.0, 0.0]).unwrap(), (2.0f64).exp(), epsilon = 1e-12);
        let pa = cat_pa();
        let lam = (3.0 + 5f64.sqrt()) / 2.0;
        let v = [1.0, lam - 2.0];
        let n0 = pa.norm(0.0, &v).unwrap();
        for n in 1..=6 {
            let nt = pa.norm(n as f64, &v).unwrap();
            assert_relative_eq!(nt, lam.powi(n) * n0, max_relative = 1e-9);
        }
        assert!(matches!(pa.norm(0.0, &[1.0]), Err(ProfileError::DimensionMismatch { .. })));
    }

    #[test]
    fn periodicity_relation() {
        let pa = cat_pa();
        let phi = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]);
        for &t in &[0.0, 0.3, 1.7, 2.25] {
            let v = nalgebra::DVector::from_column_slice(&[0.4, -1.3]);
            let lhs = pa.norm(t + 1.0, v.as_slice()).unwrap();
            let rhs = pa.norm(t, (&phi * &v).as_slice()).unwrap();
            assert_relative_eq!(lhs, rhs, max_relative = 1e-9);
        }
    }

    #[test]
    fn growth_examples() {
        let f = classify_growth(&exp_split(1.0), &[1.0, 0.0], (0.0, 10.0), 101).unwrap();
        assert!((f.exponent_estimate - 1.0).abs() < 0.01);
        let p = NormProfile::diagonal(vec![Weight::new(1.0, 1.0, 0.0)]).unwrap();
        let a = classify_growth(&p, &[1.0], (0.0, 10.0), 101).unwrap().exponent_estimate;
        let b = classify_growth(&p, &[1.0], (0.0, 1000.0), 101).unwrap().exponent_estimate;
        assert!(b < a && b < 0.01);
        let lam = (3.0 + 5f64.sqrt()) / 2.0;
        let f = classify_growth(&cat_pa(), &[1.0, lam - 2.0], (0.0, 10.0), 101).unwrap();
        assert!((f.exponent_estimate - lam.ln()).abs() < 0.02);
        assert!(matches!(classify_growth(&p, &[1.0], (1.0, 1.0), 101), Err(ProfileError::DegenerateWindow(_))));
    }

    #[test]
    fn split_hypothesis_examples() {
        let e = exp_split(1.0);
        let grid = uniform_grid(20.0, 0.1);
        let plus = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let minus = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!(verify_split_hypothesis(&e, &plus, &minus, 0.9, 0.9, 1.0 / 0.9, &grid, 8, 1).unwrap().holds);
        // c₋ < 1 cannot hold at s₁ = s₂
        assert!(!verify_split_hypothesis(&e, &plus, &minus, 0.9, 0.9, 0.9, &grid, 8, 1).unwrap().minus_holds);
        let p = NormProfile::diagonal(vec![Weight::new(1.0, 1.0, 0.0), Weight::new(1.0, -1.0, 0.0)]).unwrap();
        let c = verify_split_hypothesis(&p, &plus, &minus, 0.1, 1.0, 1.0, &grid, 8, 1).unwrap();
        assert!(!c.holds);
        let w = c.plus_witness.unwrap();
        assert!(w.ratio < w.bound);
    }

    #[test]
    fn e0_directions_break_split() {
        let cat = validate_symplectic(int_matrix(&[&[2, 1], &[1, 1]])).unwrap();
        let id = crate::symplectic::SymplecticMatrix::identity(1);
        let m = crate::symplectic::SymplecticMatrix::direct_sum(&[cat, id]);
        let p = NormProfile::periodic_pa(m, DMatrix::identity(4, 4), 1e-6).unwrap();
        let ProfileKind::PeriodicPA(pa) = p.kind() else { unreachable!() };
        let plus = crate::symplectic::hcat([&pa.split.expanding_basis(), &pa.split.e0_basis].into_iter(), 4);
        let minus = pa.split.contracting_basis();
        let grid = uniform_grid(10.0, 0.1);
        let c = verify_split_hypothesis(&p, &plus, &minus, 0.4, 0.5, 2.0, &grid, 16, 3).unwrap();
        assert!(!c.plus_holds);
        assert!(auto_split(&p, 10.0).unwrap().is_none());
    }

    #[test]
    fn sampled_knots_and_range() {
        let g0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let g1 = DMatrix::from_row_slice(2, 2, &[1.0, -0.2, -0.2, 3.0]);
        let s = NormProfile::sampled(vec![0.0, 2.0], vec![g0.clone(), g1.clone()], false).unwrap();
        assert_eq!(s.gram(0.0).unwrap(), g0);
        assert_eq!(s.gram(2.0).unwrap(), g1);
        assert!(is_spd(&s.gram(1.3).unwrap()));
        assert!(matches!(s.gram(2.5), Err(ProfileError::OutOfRange { .. })));
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(NormProfile::sampled(vec![0.0], vec![bad], false), Err(ProfileError::NotPositiveDefinite { .. })));
    }

    #[test]
    fn jordan_monodromy_refused() {
        let m = validate_symplectic(int_matrix(&[&[1, 1], &[0, 1]])).unwrap();
        assert_eq!(NormProfile::periodic_pa(m, DMatrix::identity(2, 2), 1e-6).unwrap_err(), ProfileError::NotSemisimple);
    }

    #[test]
    fn envelope_detects_sqrt_growth_only() {
        let sq = NormProfile::diagonal(vec![Weight::new(1.0, 1.0, 0.0)]).unwrap();
        assert!(envelope_check(&sq, &[1.0], 50.0, 0.5).unwrap().holds);
        let c = NormProfile::constant(DMatrix::identity(1, 1)).unwrap();
        assert!(envelope_check(&c, &[1.0], 50.0, 0.5).unwrap().holds);
        assert!(!envelope_check(&exp_split(1.0), &[1.0, 0.0], 50.0, 0.5).unwrap().holds);
        let fast = NormProfile::diagonal(vec![Weight::new(1.0, 1.4, 0.0)]).unwrap();
        assert!(!envelope_check(&fast, &[1.0], 50.0, 0.5).unwrap().holds);
    }

    #[test]
    fn spec_json() {
        let s: ProfileSpec = serde_json::from_str(r#"{"kind":"polynomial","weights":[{"power":1}]}"#).unwrap();
        assert_relative_eq!(s.build().unwrap().norm(3.0, &[1.0]).unwrap(), 2.0, epsilon = 1e-12);
        let s: ProfileSpec =
            serde_json::from_str(r#"{"kind":"periodic_pa","monodromy":{"entries":[[2,1],[1,1]]}}"#).unwrap();
        assert_eq!(s.build().unwrap().kind_name(), "periodic_pa");
        assert!(serde_json::from_str::<ProfileSpec>(r#"{"kind":"polynomial","weights":[],"bogus":1}"#).is_err());
        assert!(serde_json::from_str::<ProfileSpec>(r#"{"kind":"nope"}"#).is_err());
    }

    #[test]
    fn transfer_matches_factor_quotient() {
        let skew = NormProfile::polynomial(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            vec![Weight::new(1.0, 1.0, 0.0), Weight::new(2.0, -0.5, 1.0)],
            None,
        )
        .unwrap();
        for p in [exp_split(0.7), cat_pa(), skew] {
            for (t1, t2) in [(0.3, 0.35), (2.9, 3.05), (1.0, 4.2)] {
                let direct = p.factor(t2).unwrap() * p.factor(t1).unwrap().try_inverse().unwrap();
                let tr = p.transfer(t1, t2).unwrap();
                assert!((direct - tr).amax() < 1e-9, "{} at ({t1}, {t2})", p.kind_name());
            }
        }
        assert_eq!(exp_split(1.0).reliable_horizon(), f64::INFINITY);
        assert!(cat_pa().reliable_horizon() < 20.0);
    }
}
