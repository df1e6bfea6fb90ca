//! The operator ∂_t between weighted section spaces over a norm profile:
//! kernel, explicit right inverses under a growth splitting, the
//! non-surjectivity witness for √(1+t)-type weights, and a discretized
//! closed-range diagnostic.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::json::to_cols;
use crate::linalg::{spd_inv_sqrt, symmetrize};
use crate::profile::{
    auto_split, envelope_check, linear_fit, sample_directions, uniform_grid, verify_split_hypothesis, CandidateSplit,
    EnvelopeCheck, NormProfile, ProfileError, ProfileKind, SplitCheck, Weight,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DerivativeError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("kernel test indeterminate at T = {t_max}: tail ratios {ratios:?}")]
    Indeterminate { t_max: f64, ratios: Vec<f64> },
    #[error("splitting hypothesis failed on the verification grid")]
    SplitHypothesisUnverified,
    #[error("tail of the expanding component is not exponentially decaying (fit slope {slope}, r² {r2})")]
    TailNotIntegrable { slope: f64, r2: f64 },
    #[error("grid too coarse at T = {t}: σ_min {coarse} vs {fine} after refinement")]
    GridTooCoarse { t: f64, coarse: f64, fine: f64 },
    #[error("weight violates 1/(C(1+t)) ≤ h(t) ≤ C(1+t) at t = {t} (h = {h}, C = {c})")]
    WeightEnvelopeViolated { t: f64, h: f64, c: f64 },
    #[error("end list is empty")]
    EmptyEndList,
    #[error("invalid argument: {0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, DerivativeError>;

/// Node values of a section on a grid of [0, T].
#[derive(Debug, Clone)]
pub struct WeightedPath {
    pub grid: Vec<f64>,
    pub values: Vec<DVector<f64>>,
}

impl WeightedPath {
    pub fn sample(grid: Vec<f64>, f: impl Fn(f64) -> DVector<f64>) -> Self {
        let values = grid.iter().map(|&t| f(t)).collect();
        Self { grid, values }
    }

    /// Σ_k w_k ‖values_k‖²_{t_k} with trapezoid weights.
    pub fn weighted_norm_sq(&self, profile: &NormProfile) -> Result<f64> {
        let w = trapezoid_weights(&self.grid);
        let mut s = 0.0;
        for (k, v) in self.values.iter().enumerate() {
            s += w[k] * profile.norm(self.grid[k], v.as_slice())?.powi(2);
        }
        Ok(s)
    }
}

pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut w = vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        let h = grid[k + 1] - grid[k];
        w[k] += h / 2.0;
        w[k + 1] += h / 2.0;
    }
    w
}

pub(crate) fn simpson(f: &[f64], h: f64) -> f64 {
    let n = f.len();
    if n < 3 {
        return f.iter().sum::<f64>() * h;
    }
    let m = if (n - 1) % 2 == 0 { n } else { n - 1 };
    let mut s = f[0] + f[m - 1];
    for (i, v) in f.iter().enumerate().take(m - 1).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    let mut total = s * h / 3.0;
    if m < n {
        total += (f[n - 2] + f[n - 1]) * h / 2.0;
    }
    total
}

/// Forward-difference discretization of ∂_t on a uniform grid of [0, T],
/// with the graph norm on the domain and the weighted L² norm (midpoint
/// rule) on the codomain.
///
/// The spectral computation runs in the scaled variables z_k = L(t_k) u_k,
/// where the difference operator has the well-conditioned blocks
/// F_k = L(m_k) L(t_k)⁻¹ and E_k = L(m_k) L(t_{k+1})⁻¹.
pub struct DiscretizedDerivative {
    pub t_max: f64,
    pub h: f64,
    pub nodes: usize,
    dim: usize,
    /// L(t_k) at the nodes.
    node_factors: Vec<DMatrix<f64>>,
    /// L(m_k) at the midpoints.
    mid_factors: Vec<DMatrix<f64>>,
    e_blocks: Vec<DMatrix<f64>>,
    f_blocks: Vec<DMatrix<f64>>,
    /// L(t_{k+1}) L(t_k)⁻¹.
    steps: Vec<DMatrix<f64>>,
    weights: Vec<f64>,
}

impl DiscretizedDerivative {
    pub fn new(profile: &NormProfile, t_max: f64, density: f64) -> Result<Self> {
        if !(t_max > 0.0 && density > 0.0) {
            return Err(DerivativeError::Invalid("T and grid density must be positive".into()));
        }
        let n_int = (t_max * density).round().max(2.0) as usize;
        let h = t_max / n_int as f64;
        let grid: Vec<f64> = (0..=n_int).map(|k| k as f64 * h).collect();
        let weights = trapezoid_weights(&grid);
        let node_factors = grid.iter().map(|&t| profile.factor(t)).collect::<std::result::Result<Vec<_>, _>>()?;
        let mid_factors = (0..n_int)
            .map(|k| profile.factor((k as f64 + 0.5) * h))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let f_blocks = (0..n_int)
            .map(|k| profile.transfer(grid[k], (k as f64 + 0.5) * h))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let e_blocks = (0..n_int)
            .map(|k| profile.transfer(grid[k + 1], (k as f64 + 0.5) * h))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let steps = (0..n_int)
            .map(|k| profile.transfer(grid[k], grid[k + 1]))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { t_max, h, nodes: n_int + 1, dim: profile.dim(), node_factors, mid_factors, e_blocks, f_blocks, steps, weights })
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.nodes).map(|k| k as f64 * self.h).collect()
    }

    /// (D u)_k = (u_{k+1} − u_k)/h.
    pub fn apply(&self, u: &[DVector<f64>]) -> Vec<DVector<f64>> {
        u.windows(2).map(|w| (&w[1] - &w[0]) / self.h).collect()
    }

    /// Codomain norm² Σ_k h ‖r_k‖²_{m_k}.
    pub fn codomain_norm_sq(&self, r: &[DVector<f64>]) -> f64 {
        r.iter().enumerate().map(|(k, v)| self.h * (&self.mid_factors[k] * v).norm_squared()).sum()
    }

    /// Graph norm² of the domain.
    pub fn domain_norm_sq(&self, u: &[DVector<f64>]) -> f64 {
        let body: f64 =
            u.iter().enumerate().map(|(k, v)| self.weights[k] * (&self.node_factors[k] * v).norm_squared()).sum();
        body + self.codomain_norm_sq(&self.apply(u))
    }

    fn w_inner(&self, x: &[DVector<f64>], y: &[DVector<f64>]) -> f64 {
        x.iter().zip(y).zip(&self.weights).map(|((a, b), w)| w * a.dot(b)).sum()
    }

    /// Block Cholesky factors of K + sW, where K = BᵀB in z-variables.
    fn factorize(&self, s: f64) -> Option<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
        let nint = self.nodes - 1;
        let ih = 1.0 / self.h;
        let mut diag = Vec::with_capacity(self.nodes);
        let mut sub: Vec<DMatrix<f64>> = Vec::with_capacity(nint);
        for k in 0..self.nodes {
            let mut a = DMatrix::identity(self.dim, self.dim) * (s * self.weights[k]);
            if k < nint {
                a += self.f_blocks[k].transpose() * &self.f_blocks[k] * ih;
            }
            if k > 0 {
                let e = &self.e_blocks[k - 1];
                a += e.transpose() * e * ih;
                // block (k, k−1) of the factor: C_{k−1}ᵀ L_{k−1}^{−T}, C_{k−1} = −F_{k−1}ᵀE_{k−1}/h
                let c = -(self.f_blocks[k - 1].transpose() * e) * ih;
                let lprev: &DMatrix<f64> = &diag[k - 1];
                let lsub = lprev.solve_lower_triangular(&c)?.transpose();
                a -= &lsub * lsub.transpose();
                sub.push(lsub);
            }
            diag.push(nalgebra::Cholesky::new(symmetrize(&a))?.l());
        }
        Some((diag, sub))
    }

    fn block_solve(diag: &[DMatrix<f64>], sub: &[DMatrix<f64>], b: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let n = diag.len();
        let mut y: Vec<DVector<f64>> = Vec::with_capacity(n);
        for k in 0..n {
            let mut r = b[k].clone();
            if k > 0 {
                r -= &sub[k - 1] * &y[k - 1];
            }
            y.push(diag[k].solve_lower_triangular(&r).expect("nonsingular Cholesky factor"));
        }
        let mut x = y;
        for k in (0..n).rev() {
            let mut r = x[k].clone();
            if k + 1 < n {
                r -= sub[k].transpose() * &x[k + 1];
            }
            x[k] = diag[k].transpose().solve_upper_triangular(&r).expect("nonsingular Cholesky factor");
        }
        x
    }

    /// W-orthonormal basis of the constant paths z_k = L(t_k) c, propagated
    /// from z_0 = e_i.
    fn kernel_basis(&self) -> Vec<Vec<DVector<f64>>> {
        let mut basis: Vec<Vec<DVector<f64>>> = Vec::new();
        for i in 0..self.dim {
            let mut v = Vec::with_capacity(self.nodes);
            v.push(DVector::from_fn(self.dim, |j, _| if i == j { 1.0 } else { 0.0 }));
            for st in &self.steps {
                let next = st * v.last().unwrap();
                v.push(next);
            }
            for _ in 0..2 {
                for b in &basis {
                    let c = self.w_inner(b, &v);
                    for (vi, bi) in v.iter_mut().zip(b) {
                        *vi -= bi * c;
                    }
                }
                let nv = self.w_inner(&v, &v).sqrt();
                for vi in v.iter_mut() {
                    *vi /= nv;
                }
            }
            basis.push(v);
        }
        basis
    }

    /// Smallest singular value of D on the graph-norm complement of its
    /// kernel, by shift-invert Lanczos on (K + sW)⁻¹W in the W-inner product.
    pub fn sigma_min(&self, seed: u64) -> f64 {
        let s = 1.0 / (self.t_max * self.t_max);
        let (diag, sub) = self.factorize(s).expect("K + sW is positive definite");
        let kernel = self.kernel_basis();
        let deflate = |x: &mut Vec<DVector<f64>>| {
            for b in kernel.iter().chain(kernel.iter()) {
                let c = self.w_inner(b, x);
                for (xi, bi) in x.iter_mut().zip(b) {
                    *xi -= bi * c;
                }
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let steps = ((self.nodes - 1) * self.dim).min(150);
        let mut q: Vec<DVector<f64>> =
            (0..self.nodes).map(|_| DVector::from_fn(self.dim, |_, _| rng.gen::<f64>() - 0.5)).collect();
        deflate(&mut q);
        let nq = self.w_inner(&q, &q).sqrt();
        q.iter_mut().for_each(|v| *v /= nq);
        let mut basis = vec![q];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut last = f64::NAN;
        for j in 0..steps {
            let wq: Vec<DVector<f64>> = basis[j].iter().zip(&self.weights).map(|(v, w)| v * *w).collect();
            let mut z = Self::block_solve(&diag, &sub, &wq);
            deflate(&mut z);
            alpha.push(self.w_inner(&basis[j], &z));
            for _ in 0..2 {
                for b in &basis {
                    let c = self.w_inner(b, &z);
                    for (zi, bi) in z.iter_mut().zip(b) {
                        *zi -= bi * c;
                    }
                }
            }
            let bnorm = self.w_inner(&z, &z).sqrt();
            let theta = largest_ritz(&alpha, &beta);
            let converged = j >= 4 && (theta - last).abs() <= 1e-13 * theta.abs();
            last = theta;
            if converged || bnorm <= 1e-14 * theta.abs() || j + 1 == steps {
                break;
            }
            beta.push(bnorm);
            z.iter_mut().for_each(|v| *v /= bnorm);
            basis.push(z);
        }
        // θ = 1/(ν + s) for the smallest nonzero ν, and σ² = ν/(1 + ν)
        let nu = (1.0 / last - s).max(0.0);
        (nu / (1.0 + nu)).sqrt()
    }

    /// Dense matrices (C^{1/2}D, M) in the original variables, for small
    /// problems; M is the graph-norm Gram matrix of the domain.
    pub fn dense(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.dim;
        let nint = self.nodes - 1;
        let mut cd = DMatrix::zeros(nint * n, self.nodes * n);
        for k in 0..nint {
            let l = &self.mid_factors[k] / self.h.sqrt();
            cd.view_mut((k * n, (k + 1) * n), (n, n)).copy_from(&l);
            cd.view_mut((k * n, k * n), (n, n)).copy_from(&(-l));
        }
        let mut m = cd.transpose() * &cd;
        for k in 0..self.nodes {
            let l = &self.node_factors[k];
            let g = l.transpose() * l * self.weights[k];
            let mut blk = m.view_mut((k * n, k * n), (n, n));
            blk += g;
        }
        (cd, symmetrize(&m))
    }
}

fn largest_ritz(alpha: &[f64], beta: &[f64]) -> f64 {
    let k = alpha.len();
    let t = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i == j + 1 {
            beta[j]
        } else if j == i + 1 {
            beta[i]
        } else {
            0.0
        }
    });
    SymmetricEigen::new(t).eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanVerdict {
    ClosedImageLikely,
    NotClosedLikely,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct SigmaScan {
    pub t_list: Vec<f64>,
    pub sigma_min: Vec<f64>,
    /// σ_min after doubling the grid density.
    pub sigma_min_refined: Vec<f64>,
    pub beta: f64,
    pub r2: f64,
    pub verdict: ScanVerdict,
    pub heuristic: bool,
}

/// Stability floor and fit thresholds of the scan verdict.
pub const SCAN_FLOOR_RATIO: f64 = 0.8;
pub const SCAN_FLOOR_MIN: f64 = 1e-3;
pub const SCAN_BETA_MAX: f64 = -0.5;
pub const SCAN_R2_MIN: f64 = 0.9;

pub fn sigma_min_scan(profile: &NormProfile, t_list: &[f64], density: f64) -> Result<SigmaScan> {
    if t_list.len() < 2 || t_list.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(DerivativeError::Invalid("T list must be increasing with at least two entries".into()));
    }
    let runs: Vec<Result<(f64, f64)>> = t_list
        .par_iter()
        .map(|&t| {
            let s1 = DiscretizedDerivative::new(profile, t, density)?.sigma_min(1);
            let s2 = DiscretizedDerivative::new(profile, t, 2.0 * density)?.sigma_min(1);
            Ok((s1, s2))
        })
        .collect();
    let mut sigma = Vec::new();
    let mut refined = Vec::new();
    for (t, r) in t_list.iter().zip(runs) {
        let (s1, s2) = r?;
        if (s1 - s2).abs() > 0.1 * s2 {
            return Err(DerivativeError::GridTooCoarse { t: *t, coarse: s1, fine: s2 });
        }
        sigma.push(s1);
        refined.push(s2);
    }
    let xs: Vec<f64> = t_list.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = sigma.iter().map(|s| s.ln()).collect();
    let (beta, _, r2) = linear_fit(&xs, &ys);
    let half = &sigma[sigma.len() / 2..];
    let hi = half.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = half.iter().cloned().fold(f64::INFINITY, f64::min);
    let verdict = if lo / hi >= SCAN_FLOOR_RATIO && lo >= SCAN_FLOOR_MIN {
        ScanVerdict::ClosedImageLikely
    } else if beta <= SCAN_BETA_MAX && r2 >= SCAN_R2_MIN {
        ScanVerdict::NotClosedLikely
    } else {
        ScanVerdict::Inconclusive
    };
    Ok(SigmaScan { t_list: t_list.to_vec(), sigma_min: sigma, sigma_min_refined: refined, beta, r2, verdict, heuristic: true })
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelReport {
    /// Columns span the constant sections with finite L² norm.
    #[serde(serialize_with = "ser_cols")]
    pub basis: DMatrix<f64>,
    /// ∫_{T/2}^{T} ‖v‖² / ∫_0^{T/2} ‖v‖² along the generalized eigenvectors.
    pub tail_ratios: Vec<f64>,
    pub method: &'static str,
}

fn ser_cols<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    to_cols(m).serialize(s)
}

/// Tail ratio at or above which a direction is treated as non-integrable.
pub const KERNEL_DIVERGENT_RATIO: f64 = 0.5;

/// Constant sections v with ∫₀^∞ ‖v‖²_t dt < ∞.
pub fn kernel(profile: &NormProfile, t_max: f64, tol: f64) -> Result<KernelReport> {
    let n = profile.dim();
    match profile.kind() {
        ProfileKind::ExponentialSplit(e) => {
            return Ok(KernelReport { basis: e.minus.clone(), tail_ratios: Vec::new(), method: "profile_structure" })
        }
        ProfileKind::PeriodicPA(pa) => {
            return Ok(KernelReport {
                basis: pa.split.contracting_basis(),
                tail_ratios: Vec::new(),
                method: "eigen_split",
            })
        }
        _ => {}
    }
    let step = 0.01_f64.max(t_max / 20000.0);
    let half = t_max / 2.0;
    let gram_integral = |a: f64, b: f64| -> Result<DMatrix<f64>> {
        let m = ((b - a) / step).ceil() as usize;
        let m = m + m % 2;
        let h = (b - a) / m as f64;
        let mut acc = DMatrix::zeros(n, n);
        for i in 0..=m {
            let w = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += profile.gram(a + i as f64 * h)? * (w * h / 3.0);
        }
        Ok(symmetrize(&acc))
    };
    let a1 = gram_integral(0.0, half)?;
    let a2 = gram_integral(half, t_max)?;
    let r = spd_inv_sqrt(&a1);
    let eig = SymmetricEigen::new(symmetrize(&(&r * a2 * &r)));
    let mut cols = Vec::new();
    let mut ratios = Vec::new();
    let mut undecided = false;
    for i in 0..n {
        let mu = eig.eigenvalues[i];
        ratios.push(mu);
        if mu < tol {
            let v = &r * eig.eigenvectors.column(i);
            cols.push(v.normalize());
        } else if mu < KERNEL_DIVERGENT_RATIO {
            undecided = true;
        }
    }
    if undecided {
        return Err(DerivativeError::Indeterminate { t_max, ratios });
    }
    let basis = if cols.is_empty() { DMatrix::zeros(n, 0) } else { DMatrix::from_columns(&cols) };
    Ok(KernelReport { basis, tail_ratios: ratios, method: "tail_ratio" })
}

#[derive(Debug, Clone)]
pub struct SplitSolution {
    pub w: WeightedPath,
    /// ‖∂_t w − v‖ in the codomain norm, with ∂_t w by forward differences
    /// and v evaluated at the midpoints.
    pub residual: f64,
    /// ‖w‖² over the grid plus an exponential tail estimate.
    pub w_norm_sq: f64,
    pub tail_estimate: f64,
    pub check: SplitCheck,
}

fn exp_tail_fit(grid: &[f64], vals: &[f64]) -> Option<(f64, f64)> {
    let start = grid.len() - (grid.len() / 10).max(3);
    let xs: Vec<f64> = grid[start..].to_vec();
    let ys: Vec<f64> = vals[start..].iter().map(|v| v.ln()).collect();
    if ys.iter().any(|y| !y.is_finite()) {
        return None;
    }
    let (slope, _, r2) = linear_fit(&xs, &ys);
    Some((slope, r2))
}

/// Solves ∂_t w = v for w(t) = −∫_t^∞ v₊ + ∫_0^t v₋ on [0, T], where
/// v = v₊ + v₋ along E₊ ⊕ E₋. The expanding tail beyond T is extrapolated
/// exponentially from the last tenth of the grid.
pub fn solve_split(
    profile: &NormProfile,
    split: &CandidateSplit,
    v: impl Fn(f64) -> DVector<f64>,
    t_max: f64,
    density: f64,
) -> Result<SplitSolution> {
    let n = profile.dim();
    let check_grid = uniform_grid(t_max.min(profile.reliable_horizon()), 0.05_f64.max(1.0 / density));
    let check = verify_split_hypothesis(profile, &split.plus, &split.minus, split.a, split.c_plus, split.c_minus, &check_grid, 16, 5)?;
    if !check.holds {
        return Err(DerivativeError::SplitHypothesisUnverified);
    }
    let basis = crate::symplectic::hcat([&split.plus, &split.minus].into_iter(), n);
    let binv = basis
        .clone()
        .try_inverse()
        .ok_or_else(|| DerivativeError::Invalid("E+ and E- do not span".into()))?;
    let kp = split.plus.ncols();
    let project = |x: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        let c = &binv * x;
        let mut cp = c.clone();
        let mut cm = c;
        for i in 0..n {
            if i < kp {
                cm[i] = 0.0;
            } else {
                cp[i] = 0.0;
            }
        }
        (&basis * cp, &basis * cm)
    };
    let nint = (t_max * density).round().max(2.0) as usize;
    let h = t_max / nint as f64;
    let grid: Vec<f64> = (0..=nint).map(|k| k as f64 * h).collect();
    let parts: Vec<(DVector<f64>, DVector<f64>)> = grid.iter().map(|&t| project(&v(t))).collect();

    // ∫_T^∞ v₊ from an exponential fit of the expanding component's size
    let plus_sizes: Vec<f64> = parts.iter().map(|(p, _)| p.norm()).collect();
    let tail_plus = if plus_sizes[grid.len() - (grid.len() / 10).max(3)..].iter().all(|&s| s == 0.0) {
        DVector::zeros(n)
    } else {
        match exp_tail_fit(&grid, &plus_sizes) {
            Some((slope, r2)) if slope < 0.0 && r2 >= 0.99 => &parts[nint].0 / (-slope),
            Some((slope, r2)) => return Err(DerivativeError::TailNotIntegrable { slope, r2 }),
            None => return Err(DerivativeError::TailNotIntegrable { slope: f64::NAN, r2: f64::NAN }),
        }
    };
    // cumulative trapezoid sums
    let mut up = vec![DVector::zeros(n); nint + 1];
    for k in (0..nint).rev() {
        up[k] = &up[k + 1] + (&parts[k].0 + &parts[k + 1].0) * (h / 2.0);
    }
    let mut down = vec![DVector::zeros(n); nint + 1];
    for k in 0..nint {
        down[k + 1] = &down[k] + (&parts[k].1 + &parts[k + 1].1) * (h / 2.0);
    }
    let values: Vec<DVector<f64>> = (0..=nint).map(|k| -(&up[k] + &tail_plus) + &down[k]).collect();
    let w = WeightedPath { grid: grid.clone(), values };

    let mut residual_sq = 0.0;
    for k in 0..nint {
        let m = (k as f64 + 0.5) * h;
        let dw = (&w.values[k + 1] - &w.values[k]) / h;
        residual_sq += h * profile.norm(m, (dw - v(m)).as_slice())?.powi(2);
    }
    let body = w.weighted_norm_sq(profile)?;
    let sizes: Vec<f64> = w.values.iter().zip(&grid).map(|(x, &t)| profile.norm(t, x.as_slice())).collect::<std::result::Result<_, _>>()?;
    let sq: Vec<f64> = sizes.iter().map(|s| s * s).collect();
    let tail_estimate = if sq[nint] == 0.0 {
        0.0
    } else {
        match exp_tail_fit(&grid, &sq) {
            Some((slope, _)) if slope < 0.0 => sq[nint] / (-slope),
            _ => f64::INFINITY,
        }
    };
    Ok(SplitSolution { w, residual: residual_sq.sqrt(), w_norm_sq: body + tail_estimate, tail_estimate, check })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VolterraSide {
    /// (Of)(t) = ∫_t^∞ f, weight c·e^{at}.
    Upper,
    /// (O′f)(t) = ∫_0^t f, weight c·e^{−at}.
    Lower,
}

#[derive(Debug, Clone, Serialize)]
pub struct VolterraReport {
    pub max_ratio: f64,
    pub bound: f64,
    pub ratios: Vec<f64>,
}

/// A random compactly supported smooth profile: a sum of bumps inside
/// [start, start + len].
#[derive(Debug, Clone)]
pub struct BumpSum {
    pub bumps: Vec<(f64, f64, f64)>,
    pub start: f64,
    pub end: f64,
}

fn bump(x: f64) -> f64 {
    if x <= -1.0 || x >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - x * x)).exp()
    }
}

impl BumpSum {
    pub fn random<R: Rng>(rng: &mut R, start: f64, len: f64) -> Self {
        let k = rng.gen_range(1..=4);
        let bumps = (0..k)
            .map(|_| {
                let width = rng.gen_range(0.1..=0.5) * len;
                let center = start + width + rng.gen::<f64>() * (len - 2.0 * width);
                let amp = rng.gen_range(-1.0..1.0);
                (center, width, amp)
            })
            .collect();
        Self { bumps, start, end: start + len }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.bumps.iter().map(|&(c, w, a)| a * bump((t - c) / w)).sum()
    }
}

/// ‖Of‖ and ‖f‖ for f = e^{∓at}·g on the exponential weight c·e^{±at};
/// the constant regions of Of outside the support are integrated exactly.
pub fn volterra_ratio(g: &BumpSum, a: f64, c: f64, side: VolterraSide, density: f64) -> f64 {
    let m = ((g.end - g.start) * density).ceil().max(2.0) as usize;
    let h = (g.end - g.start) / m as f64;
    let ts: Vec<f64> = (0..=m).map(|k| g.start + k as f64 * h).collect();
    let sgn = match side {
        VolterraSide::Upper => 1.0,
        VolterraSide::Lower => -1.0,
    };
    let weight = |t: f64| c * (sgn * a * t).exp();
    let f: Vec<f64> = ts.iter().map(|&t| (-sgn * a * t).exp() * g.eval(t)).collect();
    let fnorm_sq = simpson(&ts.iter().zip(&f).map(|(&t, fv)| (weight(t) * fv).powi(2)).collect::<Vec<_>>(), h);
    // running integral on the support
    let mut run = vec![0.0; m + 1];
    match side {
        VolterraSide::Upper => {
            for k in (0..m).rev() {
                run[k] = run[k + 1] + simpson_panel(&f, k, h, true);
            }
        }
        VolterraSide::Lower => {
            for k in 0..m {
                run[k + 1] = run[k] + simpson_panel(&f, k, h, false);
            }
        }
    }
    let inside = simpson(&ts.iter().zip(&run).map(|(&t, r)| (weight(t) * r).powi(2)).collect::<Vec<_>>(), h);
    let outside = match side {
        // ∫_0^{start} c² e^{2at} F² dt
        VolterraSide::Upper => c * c * run[0].powi(2) * ((2.0 * a * g.start).exp() - 1.0) / (2.0 * a),
        // ∫_{end}^∞ c² e^{−2at} F² dt
        VolterraSide::Lower => c * c * run[m].powi(2) * (-2.0 * a * g.end).exp() / (2.0 * a),
    };
    ((inside + outside) / fnorm_sq).sqrt()
}

/// Integral of f over [t_k, t_{k+1}] by a local quadratic through three
/// neighbouring samples.
fn simpson_panel(f: &[f64], k: usize, h: f64, _upper: bool) -> f64 {
    let n = f.len();
    if n < 3 {
        return (f[k] + f[k + 1]) * h / 2.0;
    }
    // quadratic through (k-1, k, k+1) or (k, k+1, k+2)
    if k + 2 < n {
        h * (5.0 * f[k] + 8.0 * f[k + 1] - f[k + 2]) / 12.0
    } else {
        h * (-f[k - 1] + 8.0 * f[k] + 5.0 * f[k + 1]) / 12.0
    }
}

/// Empirical norm of the Volterra operator over `trials` random inputs
/// supported in [start, start + 10].
pub fn volterra_norm_check(a: f64, c: f64, side: VolterraSide, trials: usize, density: f64, start: f64, seed: u64) -> VolterraReport {
    let ratios: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
            let g = BumpSum::random(&mut rng, start, 10.0);
            volterra_ratio(&g, a, c, side, density)
        })
        .collect();
    let max_ratio = ratios.iter().cloned().fold(0.0, f64::max);
    VolterraReport { max_ratio, bound: 1.0 / (c * a), ratios }
}

#[derive(Debug, Clone, Serialize)]
pub struct Lemma7Report {
    /// ‖g‖²_{Γ′} = ∫ g² h dt.
    pub norm_g_sq: f64,
    /// (T, min_c ‖c + ∫₀^t g‖_{L²(h dt), [0,T]}).
    pub divergence_table: Vec<(f64, f64)>,
    pub strictly_increasing: bool,
}

/// Witness g(t) = (2+t)^{−1/2} log(2+t)^{−3/4} h(t)^{−1/2}.
pub fn witness_g(h: &Weight, t: f64) -> f64 {
    (2.0 + t).powf(-0.5) * (2.0 + t).ln().powf(-0.75) / h.eval(t).sqrt()
}

/// Non-surjectivity witness for weights within 1/(C(1+t)) ≤ h ≤ C(1+t).
pub fn lemma7_witness(h: &Weight, c: f64, t0: f64, doublings: usize) -> Result<Lemma7Report> {
    let t_last = t0 * 2f64.powi(doublings as i32);
    // envelope on the grid actually used
    let step = 0.01;
    let m = (t_last / step).round() as usize;
    for k in 0..=m {
        let t = k as f64 * step;
        let hv = h.eval(t);
        if !(hv >= 1.0 / (c * (1.0 + t)) && hv <= c * (1.0 + t)) {
            return Err(DerivativeError::WeightEnvelopeViolated { t, h: hv, c });
        }
    }
    // ‖g‖² in u = log(2+t), with a power-law tail beyond u = 600
    let (u0, u1) = (2f64.ln(), 600.0);
    let nu = 600_000;
    let du = (u1 - u0) / nu as f64;
    let integrand = |u: f64| {
        let t = u.exp() - 2.0;
        let g = witness_g(h, t.max(0.0));
        g * g * h.eval(t.max(0.0)) * u.exp()
    };
    let vals: Vec<f64> = (0..=nu).map(|i| integrand(u0 + i as f64 * du)).collect();
    let body = simpson(&vals, du);
    let (ua, ub) = (60.0, u1);
    let p = -(integrand(ub) / integrand(ua)).ln() / (ub / ua).ln();
    let tail = if p > 1.0 { integrand(ub) * ub / (p - 1.0) } else { f64::INFINITY };
    let norm_g_sq = body + tail;

    // running integrals for the divergence table
    let mut big_g = 0.0;
    let (mut i_hh, mut i_gh, mut i_ggh) = (0.0, 0.0, 0.0);
    let mut prev = (0.0, h.eval(0.0));
    let mut table = Vec::new();
    let mut next = 0;
    let ends: Vec<f64> = (0..=doublings).map(|j| t0 * 2f64.powi(j as i32)).collect();
    let mut g_prev = witness_g(h, 0.0);
    for k in 1..=m {
        let t = k as f64 * step;
        let g_now = witness_g(h, t);
        let g_next = big_g + (g_prev + g_now) * step / 2.0;
        let hv = h.eval(t);
        i_hh += (prev.1 + hv) * step / 2.0;
        i_gh += (prev.0 * prev.1 + g_next * hv) * step / 2.0;
        i_ggh += (prev.0 * prev.0 * prev.1 + g_next * g_next * hv) * step / 2.0;
        big_g = g_next;
        g_prev = g_now;
        prev = (big_g, hv);
        while next < ends.len() && t >= ends[next] - 1e-9 {
            let val = (i_ggh - i_gh * i_gh / i_hh).max(0.0).sqrt();
            table.push((ends[next], val));
            next += 1;
        }
    }
    let strictly_increasing = table.windows(2).all(|w| w[1].1 > w[0].1);
    Ok(Lemma7Report { norm_g_sq, divergence_table: table, strictly_increasing })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EndClass {
    ClosedImage,
    NotClosedImage,
    Inconclusive,
}

#[derive(Debug, Clone)]
pub struct EndOptions {
    pub t_max: f64,
    pub density: f64,
    pub seed: u64,
    pub kernel_tol: f64,
    pub split: Option<CandidateSplit>,
}

impl Default for EndOptions {
    fn default() -> Self {
        Self { t_max: 50.0, density: 10.0, seed: 0, kernel_tol: 0.05, split: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EndVerdict {
    pub verdict: EndClass,
    /// 1: splitting hypothesis, 2: √(1+t) envelope, 3: σ_min scan.
    pub branch: u8,
    pub heuristic: bool,
    pub split_check: Option<SplitCheck>,
    pub split_source: Option<&'static str>,
    pub envelope: Option<(Vec<f64>, EnvelopeCheck)>,
    pub scan: Option<SigmaScan>,
    pub sigma_min: Vec<f64>,
    pub beta: Option<f64>,
    pub kernel_dim: Option<usize>,
    pub kernel_basis: Vec<Vec<f64>>,
    pub kernel_note: Option<String>,
}

fn envelope_candidates(profile: &NormProfile, seed: u64) -> DMatrix<f64> {
    let n = profile.dim();
    let mut cols: Vec<DVector<f64>> = (0..n).map(|i| DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 })).collect();
    let mut add = |m: &DMatrix<f64>| {
        for c in m.column_iter() {
            cols.push(c.into_owned());
        }
    };
    match profile.kind() {
        ProfileKind::ExponentialSplit(e) => {
            add(&e.plus);
            add(&e.minus);
        }
        ProfileKind::Polynomial(p) => add(&p.basis),
        ProfileKind::PeriodicPA(pa) => {
            add(&pa.split.e0_basis);
            add(&pa.split.expanding_basis());
            add(&pa.split.contracting_basis());
        }
        ProfileKind::Sampled(_) => {}
    }
    let random = sample_directions(&DMatrix::identity(n, n), 16, seed);
    add(&random.columns(n, random.ncols() - n).into_owned());
    DMatrix::from_columns(&cols)
}

/// Decision cascade for one degenerate end.
pub fn end_verdict(profile: &NormProfile, opts: &EndOptions) -> Result<EndVerdict> {
    let mut out = EndVerdict {
        verdict: EndClass::Inconclusive,
        branch: 3,
        heuristic: false,
        split_check: None,
        split_source: None,
        envelope: None,
        scan: None,
        sigma_min: Vec::new(),
        beta: None,
        kernel_dim: None,
        kernel_basis: Vec::new(),
        kernel_note: None,
    };
    match kernel(profile, opts.t_max, opts.kernel_tol) {
        Ok(k) => {
            out.kernel_dim = Some(k.basis.ncols());
            out.kernel_basis = to_cols(&k.basis);
        }
        Err(e) => out.kernel_note = Some(e.to_string()),
    }

    let split = match &opts.split {
        Some(s) => Some(s.clone()),
        None => auto_split(profile, opts.t_max)?,
    };
    if let Some(s) = split {
        let grid = uniform_grid(opts.t_max.min(profile.reliable_horizon()), 0.05);
        let chk = verify_split_hypothesis(profile, &s.plus, &s.minus, s.a, s.c_plus, s.c_minus, &grid, 32, opts.seed)?;
        let holds = chk.holds;
        out.split_check = Some(chk);
        out.split_source = Some(s.source);
        if holds {
            out.verdict = EndClass::ClosedImage;
            out.branch = 1;
            return Ok(out);
        }
    }

    let horizon = opts.t_max / 4.0;
    let cands = envelope_candidates(profile, opts.seed);
    for c in cands.column_iter() {
        let v: Vec<f64> = c.iter().copied().collect();
        if let Ok(chk) = envelope_check(profile, &v, horizon, 0.05) {
            if chk.holds {
                out.verdict = EndClass::NotClosedImage;
                out.branch = 2;
                out.envelope = Some((v, chk));
                return Ok(out);
            }
        }
    }

    let t_list: Vec<f64> = [8.0, 4.0, 2.0, 1.0].iter().map(|d| opts.t_max / d).collect();
    let scan = sigma_min_scan(profile, &t_list, opts.density)?;
    out.verdict = match scan.verdict {
        ScanVerdict::ClosedImageLikely => EndClass::ClosedImage,
        ScanVerdict::NotClosedLikely => EndClass::NotClosedImage,
        ScanVerdict::Inconclusive => EndClass::Inconclusive,
    };
    out.branch = 3;
    out.heuristic = true;
    out.sigma_min = scan.sigma_min.clone();
    out.beta = Some(scan.beta);
    out.scan = Some(scan);
    Ok(out)
}

#[derive(Debug, Clone)]
pub enum EndSpec {
    GeometricallyFinite,
    Degenerate(NormProfile),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldClass {
    /// 0 ∉ σ(δd on Λ¹/Ker d).
    Gap,
    ZeroInSpectrum,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifoldReport {
    pub verdict: ManifoldClass,
    pub reason: String,
    pub ends: Vec<Option<EndVerdict>>,
    /// For functions: zero is in the spectrum iff some end is degenerate
    /// (reported, not computed).
    pub zero_forms_zero_in_spectrum: bool,
}

pub fn manifold_verdict(ends: &[EndSpec], inj_radius_positive: bool, opts: &EndOptions) -> Result<ManifoldReport> {
    if ends.is_empty() {
        return Err(DerivativeError::EmptyEndList);
    }
    let zero_forms = ends.iter().any(|e| matches!(e, EndSpec::Degenerate(_)));
    let mut reports = Vec::with_capacity(ends.len());
    for e in ends {
        reports.push(match e {
            EndSpec::GeometricallyFinite => None,
            EndSpec::Degenerate(p) => Some(end_verdict(p, opts)?),
        });
    }
    let (verdict, reason) = if !inj_radius_positive {
        (ManifoldClass::ZeroInSpectrum, "injectivity radius not bounded below: zero in the essential spectrum".to_string())
    } else if let Some(i) = ends.iter().position(|e| matches!(e, EndSpec::GeometricallyFinite)) {
        (ManifoldClass::ZeroInSpectrum, format!("end {i} is geometrically finite"))
    } else if let Some(i) = reports.iter().position(|r| r.as_ref().is_some_and(|r| r.verdict == EndClass::NotClosedImage)) {
        (ManifoldClass::ZeroInSpectrum, format!("end {i}: ∂_t does not have closed image"))
    } else if let Some(i) = reports.iter().position(|r| r.as_ref().is_some_and(|r| r.verdict == EndClass::Inconclusive)) {
        (ManifoldClass::Inconclusive, format!("end {i}: closed-range test inconclusive"))
    } else {
        (ManifoldClass::Gap, "every end is degenerate with closed image".to_string())
    };
    Ok(ManifoldReport { verdict, reason, ends: reports, zero_forms_zero_in_spectrum: zero_forms })
}
