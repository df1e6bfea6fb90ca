//! Interval exchange orbits, first-return loop vectors, and an estimate of
//! the Lyapunov filtration on the dual of the visitation space.

use std::cmp::Ordering;
use std::fmt::Debug;

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::rank;
use crate::profile::linear_fit;
use crate::symplectic::{eigen_split, mat_mul, SymplecticError, SymplecticMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZorichError {
    #[error("point {x} is a discontinuity of the exchange")]
    BoundaryHit { x: f64 },
    #[error("permutation is reducible: it preserves {{1..{k}}}")]
    Reducible { k: usize },
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("invalid lengths: {0}")]
    InvalidLengths(String),
    #[error("point {x} outside [0, 1)")]
    OutOfDomain { x: f64 },
    #[error("invalid transversal: {0}")]
    InvalidInterval(String),
    #[error("no return within {cap} iterations")]
    NoReturnWithinBudget { cap: u64 },
    #[error("need at least {need} loops, got {got}")]
    TooFewLoops { got: usize, need: usize },
    #[error("functional vanishes on every loop")]
    AllZeroEvaluations,
    #[error("strata not resolved: {0}")]
    UnresolvedStrata(String),
    #[error("no generic starting vector among {tries} seeded attempts")]
    GenericityFailure { tries: usize },
    #[error(transparent)]
    Symplectic(#[from] SymplecticError),
}

type Result<T> = std::result::Result<T, ZorichError>;

/// Arithmetic needed to run an exchange: exact comparisons for the exact
/// types, and a boundary margin for floats.
pub trait IetScalar: Clone + Debug + Send + Sync {
    fn origin() -> Self;
    fn unit() -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn compare(&self, o: &Self) -> Ordering;
    fn as_f64(&self) -> f64;
    /// Points closer than this to a discontinuity count as hitting it.
    fn boundary_margin() -> f64 {
        0.0
    }
}

impl IetScalar for BigRational {
    fn origin() -> Self {
        Zero::zero()
    }
    fn unit() -> Self {
        One::one()
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn compare(&self, o: &Self) -> Ordering {
        self.cmp(o)
    }
    fn as_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

impl IetScalar for f64 {
    fn origin() -> Self {
        0.0
    }
    fn unit() -> Self {
        1.0
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn compare(&self, o: &Self) -> Ordering {
        self.partial_cmp(o).unwrap_or(Ordering::Equal)
    }
    fn as_f64(&self) -> f64 {
        *self
    }
    fn boundary_margin() -> f64 {
        1e-12
    }
}

/// a + b√d with rational a, b and a fixed squarefree d > 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuadSurd {
    pub a: BigRational,
    pub b: BigRational,
    pub d: i64,
}

impl QuadSurd {
    pub fn new(a: BigRational, b: BigRational, d: i64) -> Self {
        Self { a, b, d }
    }

    fn rat(a: i64, b: i64, den: i64, d: i64) -> Self {
        let q = |x: i64| BigRational::new(BigInt::from(x), BigInt::from(den));
        Self { a: q(a), b: q(b), d }
    }

    fn merged_d(&self, o: &Self) -> i64 {
        if self.b.is_zero() {
            o.d
        } else {
            assert!(o.b.is_zero() || o.d == self.d, "mixed quadratic fields");
            self.d
        }
    }

    pub fn signum(&self) -> Ordering {
        let sa = self.a.cmp(&BigRational::zero());
        let sb = self.b.cmp(&BigRational::zero());
        match (sa, sb) {
            (Ordering::Equal, s) | (s, Ordering::Equal) => s,
            (x, y) if x == y => x,
            (sa, _) => {
                // opposite signs: compare a² with b²d
                let a2 = &self.a * &self.a;
                let b2d = &self.b * &self.b * BigRational::from_integer(BigInt::from(self.d));
                match a2.cmp(&b2d) {
                    Ordering::Greater => sa,
                    Ordering::Less => sa.reverse(),
                    Ordering::Equal => Ordering::Equal,
                }
            }
        }
    }
}

impl IetScalar for QuadSurd {
    fn origin() -> Self {
        Self::rat(0, 0, 1, 1)
    }
    fn unit() -> Self {
        Self::rat(1, 0, 1, 1)
    }
    fn add(&self, o: &Self) -> Self {
        Self { a: &self.a + &o.a, b: &self.b + &o.b, d: self.merged_d(o) }
    }
    fn sub(&self, o: &Self) -> Self {
        Self { a: &self.a - &o.a, b: &self.b - &o.b, d: self.merged_d(o) }
    }
    fn compare(&self, o: &Self) -> Ordering {
        self.sub(o).signum()
    }
    fn as_f64(&self) -> f64 {
        ToPrimitive::to_f64(&self.a).unwrap_or(f64::NAN)
            + ToPrimitive::to_f64(&self.b).unwrap_or(f64::NAN) * (self.d as f64).sqrt()
    }
}

/// Interval exchange on [0, 1): the i-th top interval is translated to
/// position `permutation[i]` (1-based) in the bottom row.
#[derive(Debug, Clone)]
pub struct IntervalExchange<S: IetScalar> {
    lengths: Vec<S>,
    permutation: Vec<usize>,
    top: Vec<S>,
    bottom: Vec<S>,
}

impl<S: IetScalar> IntervalExchange<S> {
    pub fn new(lengths: Vec<S>, permutation: Vec<usize>) -> Result<Self> {
        let m = lengths.len();
        if m < 2 || permutation.len() != m {
            return Err(ZorichError::InvalidPermutation(format!("{} lengths, {} permutation entries", m, permutation.len())));
        }
        let mut seen = vec![false; m];
        for &p in &permutation {
            if p == 0 || p > m || seen[p - 1] {
                return Err(ZorichError::InvalidPermutation(format!("{permutation:?} is not a bijection on 1..{m}")));
            }
            seen[p - 1] = true;
        }
        for k in 1..m {
            if permutation[..k].iter().all(|&p| p <= k) {
                return Err(ZorichError::Reducible { k });
            }
        }
        if lengths.iter().any(|l| l.compare(&S::origin()) != Ordering::Greater) {
            return Err(ZorichError::InvalidLengths("lengths must be positive".into()));
        }
        let total = lengths.iter().fold(S::origin(), |acc, l| acc.add(l));
        let off = (total.as_f64() - 1.0).abs();
        let exact_fail = S::boundary_margin() == 0.0 && total.compare(&S::unit()) != Ordering::Equal;
        if exact_fail || off > 1e-14 {
            return Err(ZorichError::InvalidLengths(format!("lengths sum to {}", total.as_f64())));
        }
        let mut top = Vec::with_capacity(m);
        let mut acc = S::origin();
        for l in &lengths {
            top.push(acc.clone());
            acc = acc.add(l);
        }
        let bottom = (0..m)
            .map(|i| {
                (0..m)
                    .filter(|&j| permutation[j] < permutation[i])
                    .fold(S::origin(), |acc, j| acc.add(&lengths[j]))
            })
            .collect();
        Ok(Self { lengths, permutation, top, bottom })
    }

    pub fn m(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[S] {
        &self.lengths
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// Index of the top interval containing x.
    pub fn locate(&self, x: &S) -> Result<usize> {
        if x.compare(&S::origin()) == Ordering::Less || x.compare(&S::unit()) != Ordering::Less {
            return Err(ZorichError::OutOfDomain { x: x.as_f64() });
        }
        let margin = S::boundary_margin();
        let mut idx = 0;
        for i in 1..self.m() {
            match x.compare(&self.top[i]) {
                Ordering::Less => {
                    if margin > 0.0 && (self.top[i].as_f64() - x.as_f64()) < margin {
                        return Err(ZorichError::BoundaryHit { x: x.as_f64() });
                    }
                    break;
                }
                Ordering::Equal => return Err(ZorichError::BoundaryHit { x: x.as_f64() }),
                Ordering::Greater => {
                    if margin > 0.0 && (x.as_f64() - self.top[i].as_f64()) < margin {
                        return Err(ZorichError::BoundaryHit { x: x.as_f64() });
                    }
                    idx = i;
                }
            }
        }
        Ok(idx)
    }

    pub fn iterate(&self, x: &S) -> Result<S> {
        let i = self.locate(x)?;
        Ok(x.sub(&self.top[i]).add(&self.bottom[i]))
    }
}

/// The golden rotation as a 2-IET: lengths (φ−1, 2−φ), permutation (2, 1).
pub fn golden_rotation() -> IntervalExchange<QuadSurd> {
    IntervalExchange::new(vec![QuadSurd::rat(-1, 1, 2, 5), QuadSurd::rat(3, -1, 2, 5)], vec![2, 1])
        .expect("golden rotation is a valid exchange")
}

pub fn golden_rotation_f64() -> IntervalExchange<f64> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    IntervalExchange::new(vec![phi - 1.0, 2.0 - phi], vec![2, 1]).expect("golden rotation is a valid exchange")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnLoopRecord {
    pub n: usize,
    #[serde(with = "crate::json::big_vec")]
    pub visits: Vec<BigInt>,
    /// Euclidean norm of `visits`.
    pub norm_h: f64,
    /// Length of the closing arc along the transversal, when the loop comes
    /// from an orbit.
    pub gap: Option<f64>,
    /// Which orbit or start the loop belongs to.
    #[serde(default)]
    pub orbit: usize,
}

fn log_abs_big(x: &BigInt) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let bits = x.bits();
    if bits < 1000 {
        return x.abs().to_f64().unwrap().ln();
    }
    let shift = bits - 64;
    let top: BigInt = x.abs() >> shift;
    top.to_f64().unwrap().ln() + shift as f64 * std::f64::consts::LN_2
}

fn log_abs_rat(x: &BigRational) -> f64 {
    log_abs_big(x.numer()) - log_abs_big(x.denom())
}

fn euclid_norm_big(v: &[BigInt]) -> f64 {
    let s: BigInt = v.iter().map(|x| x * x).sum();
    (0.5 * log_abs_big(&s)).exp()
}

/// First N returns of the orbit of p to the transversal I = [lo, hi) inside
/// the first interval, with cumulative visit counts.
pub fn return_loops<S: IetScalar>(
    iet: &IntervalExchange<S>,
    p: &S,
    interval: (&S, &S),
    returns: usize,
    cap: u64,
) -> Result<Vec<ReturnLoopRecord>> {
    let (lo, hi) = interval;
    if lo.compare(&S::origin()) == Ordering::Less
        || hi.compare(&iet.lengths[0]) == Ordering::Greater
        || lo.compare(hi) != Ordering::Less
    {
        return Err(ZorichError::InvalidInterval("I must be a nonempty subinterval of the first interval".into()));
    }
    if p.compare(lo) == Ordering::Less || p.compare(hi) != Ordering::Less {
        return Err(ZorichError::InvalidInterval("start point must lie in I".into()));
    }
    if returns == 0 {
        return Err(ZorichError::InvalidInterval("need at least one return".into()));
    }
    let m = iet.m();
    let mut counts = vec![0u64; m];
    let mut x = p.clone();
    let mut out = Vec::with_capacity(returns);
    let mut iters = 0u64;
    while out.len() < returns {
        if iters >= cap {
            return Err(ZorichError::NoReturnWithinBudget { cap });
        }
        let i = iet.locate(&x)?;
        counts[i] += 1;
        x = x.sub(&iet.top[i]).add(&iet.bottom[i]);
        iters += 1;
        if x.compare(lo) != Ordering::Less && x.compare(hi) == Ordering::Less {
            let visits: Vec<BigInt> = counts.iter().map(|&c| BigInt::from(c)).collect();
            let norm_h = counts.iter().map(|&c| (c as f64).powi(2)).sum::<f64>().sqrt();
            out.push(ReturnLoopRecord { n: out.len() + 1, visits, norm_h, gap: Some(x.sub(p).as_f64().abs()), orbit: 0 });
        }
    }
    Ok(out)
}

/// Loops h_n = Mⁿ h₀ for n = 0..=N and each start h₀, exact, interleaved
/// by n.
pub fn synthetic_loops(m: &SymplecticMatrix, starts: &[Vec<BigInt>], n: usize) -> Vec<ReturnLoopRecord> {
    let mut hs: Vec<Vec<Vec<BigInt>>> = starts.iter().map(|h0| h0.iter().map(|x| vec![x.clone()]).collect()).collect();
    let mut out = Vec::with_capacity((n + 1) * starts.len());
    for k in 0..=n {
        for (orbit, h) in hs.iter_mut().enumerate() {
            let visits: Vec<BigInt> = h.iter().map(|r| r[0].clone()).collect();
            out.push(ReturnLoopRecord { n: k, norm_h: euclid_norm_big(&visits), visits, gap: None, orbit });
            *h = mat_mul(m.entries(), h);
        }
    }
    out
}

pub fn write_loops_csv<W: std::io::Write>(loops: &[ReturnLoopRecord], w: W) -> std::result::Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    if let Some(first) = loops.first() {
        let mut header = vec!["n".to_string()];
        header.extend((1..=first.visits.len()).map(|i| format!("visits_{i}")));
        header.push("norm".into());
        wr.write_record(&header)?;
    }
    for l in loops {
        let mut row = vec![l.n.to_string()];
        row.extend(l.visits.iter().map(|v| v.to_string()));
        row.push(format!("{:e}", l.norm_h));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LoopNorm {
    #[default]
    L2,
    L1,
    Max,
}

impl LoopNorm {
    fn log_norm(self, v: &[BigRational]) -> f64 {
        match self {
            LoopNorm::L2 => 0.5 * log_abs_rat(&v.iter().map(|x| x * x).sum::<BigRational>()),
            LoopNorm::L1 => log_abs_rat(&v.iter().map(|x| x.abs()).sum::<BigRational>()),
            LoopNorm::Max => v.iter().map(log_abs_rat).fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

fn to_rat(v: &[BigInt]) -> Vec<BigRational> {
    v.iter().map(|x| BigRational::from_integer(x.clone())).collect()
}

/// Indices of loops whose closing arc is shorter than every earlier one;
/// all indices when the loops carry no arcs.
pub fn nearest_returns(loops: &[ReturnLoopRecord]) -> Vec<usize> {
    let mut best = f64::INFINITY;
    let mut out = Vec::new();
    for (i, l) in loops.iter().enumerate() {
        match l.gap {
            None => out.push(i),
            Some(g) if g < best => {
                best = g;
                out.push(i);
            }
            Some(_) => {}
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct ExponentEstimate {
    /// max over the last half of the log-ratio, measured from a base point
    /// a quarter of the way in: (log|f(h_n)| − log|f(h_b)|)/(log‖h_n‖ − log‖h_b‖).
    pub estimate: f64,
    /// max over the last half of the plain ratio log|f(h_n)| / log‖h_n‖.
    pub plain: f64,
    /// Slope of log|f(h_n)| against log‖h_n‖ over the same tail.
    pub regression: f64,
    /// max − min of the based ratio over the tail.
    pub spread: f64,
    pub samples: usize,
}

pub const MIN_LOOPS: usize = 100;

fn tail_estimate(pairs: &[(f64, f64)]) -> Option<ExponentEstimate> {
    // pairs: (log‖h‖, log|value|) in loop order
    let usable: Vec<(f64, f64)> = pairs.iter().copied().filter(|(lh, lv)| *lh > 0.5 && lv.is_finite()).collect();
    if usable.len() < 4 {
        return None;
    }
    let (b_h, b_v) = usable[usable.len() / 4];
    let tail: Vec<(f64, f64)> = usable[usable.len() / 2..].iter().copied().filter(|(lh, _)| lh - b_h > 0.5).collect();
    if tail.is_empty() {
        return None;
    }
    let based: Vec<f64> = tail.iter().map(|(lh, lv)| (lv - b_v) / (lh - b_h)).collect();
    let estimate = based.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let spread = estimate - based.iter().cloned().fold(f64::INFINITY, f64::min);
    let plain = tail.iter().map(|(lh, lv)| lv / lh).fold(f64::NEG_INFINITY, f64::max);
    let regression = if tail.len() >= 2 {
        let xs: Vec<f64> = tail.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = tail.iter().map(|p| p.1).collect();
        linear_fit(&xs, &ys).0
    } else {
        f64::NAN
    };
    Some(ExponentEstimate { estimate, plain, regression, spread, samples: tail.len() })
}

/// Per-orbit estimates; the orbit with the fastest growth wins.
fn grouped_estimate(pairs: &[(usize, f64, f64)]) -> Option<ExponentEstimate> {
    let mut orbits: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    orbits.sort_unstable();
    orbits.dedup();
    orbits
        .into_iter()
        .filter_map(|o| {
            let own: Vec<(f64, f64)> = pairs.iter().filter(|p| p.0 == o).map(|p| (p.1, p.2)).collect();
            tail_estimate(&own)
        })
        .max_by(|a, b| a.estimate.partial_cmp(&b.estimate).unwrap())
}

/// limsup estimate of log|f(h_n)| / log‖h_n‖ along the nearest returns,
/// with f scaled to unit Euclidean length and evaluated exactly on the
/// integer loop vectors.
pub fn exponent_of(f: &[f64], loops: &[ReturnLoopRecord], norm: LoopNorm) -> Result<ExponentEstimate> {
    if loops.len() < MIN_LOOPS {
        return Err(ZorichError::TooFewLoops { got: loops.len(), need: MIN_LOOPS });
    }
    let scale = f.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 || f.len() != loops[0].visits.len() {
        return Err(ZorichError::AllZeroEvaluations);
    }
    let fr: Vec<BigRational> = f.iter().map(|x| BigRational::from_float(x / scale).expect("finite functional")).collect();
    let mut pairs = Vec::new();
    let mut any = false;
    for i in nearest_returns(loops) {
        let h = to_rat(&loops[i].visits);
        let val: BigRational = fr.iter().zip(&h).map(|(a, b)| a * b).sum();
        any |= !val.is_zero();
        pairs.push((loops[i].orbit, norm.log_norm(&h), log_abs_rat(&val)));
    }
    if !any {
        return Err(ZorichError::AllZeroEvaluations);
    }
    grouped_estimate(&pairs).ok_or(ZorichError::AllZeroEvaluations)
}

#[derive(Debug, Clone, Serialize)]
pub struct Stratum {
    /// Normalized exponent θ_i (mean over the merged cluster).
    pub exponent: f64,
    /// dim F_i.
    pub dim: usize,
    /// Covectors spanning F_i.
    pub basis: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovFiltration {
    /// F_{−k} ⊆ … ⊆ F_k in increasing order of exponent.
    pub strata: Vec<Stratum>,
    /// Per-direction normalized exponents, in the order found (descending).
    pub exponents: Vec<f64>,
    /// The covector detecting each exponent.
    pub covectors: Vec<Vec<f64>>,
    /// Unnormalized top exponent (the normalization constant).
    pub top_raw: f64,
    /// Tail spread of each direction's estimate.
    pub spreads: Vec<f64>,
    pub dim_f0: usize,
    /// Largest |θ_j + θ_{−j}| over paired strata.
    pub pairing_defect: f64,
}

/// Window shrink factor for successive deflation stages, in log‖h‖.
pub const WINDOW_SHRINK: f64 = 0.6;
/// Merged strata wider than this are reported as unresolved.
pub const MAX_CLUSTER_WIDTH: f64 = 0.25;

/// Growth-ordered exact Gram–Schmidt on the loop vectors. Stage j projects
/// the loops off the pivots found so far, estimates the growth exponent of
/// the residuals, and takes the latest residual as the next pivot; the
/// evaluation window then shrinks so that pivot errors stay below the
/// residual scale.
pub fn filtration(loops: &[ReturnLoopRecord], tol_cluster: f64, norm: LoopNorm) -> Result<LyapunovFiltration> {
    let m = loops.first().map_or(0, |l| l.visits.len());
    if m < 2 {
        return Err(ZorichError::InvalidLengths("need m ≥ 2".into()));
    }
    if loops.len() < MIN_LOOPS {
        return Err(ZorichError::TooFewLoops { got: loops.len(), need: MIN_LOOPS });
    }
    let idx = nearest_returns(loops);
    let hs: Vec<Vec<BigRational>> = idx.iter().map(|&i| to_rat(&loops[i].visits)).collect();
    let logs: Vec<f64> = hs.iter().map(|h| norm.log_norm(h)).collect();
    let orbits: Vec<usize> = idx.iter().map(|&i| loops[i].orbit).collect();
    let mut residuals = hs.clone();
    let mut window: Vec<usize> = (0..hs.len()).collect();
    let mut pivots: Vec<Vec<BigRational>> = Vec::new();
    let mut raw = Vec::new();
    let mut spreads = Vec::new();
    for stage in 0..m {
        let pairs: Vec<(usize, f64, f64)> =
            window.iter().map(|&i| (orbits[i], logs[i], norm.log_norm(&residuals[i]))).collect();
        let Some(est) = grouped_estimate(&pairs) else {
            if stage == 0 {
                return Err(ZorichError::AllZeroEvaluations);
            }
            return Err(ZorichError::UnresolvedStrata(format!(
                "loops span only {stage} of {m} dimensions in the evaluation window"
            )));
        };
        raw.push(est.estimate);
        spreads.push(est.spread);
        // pivot: the largest residual among the loops in the top 5% of the
        // window's log-norm range
        let (wmin, wmax) = window.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &i| (a.min(logs[i]), b.max(logs[i])));
        let floor = wmax - 0.05 * (wmax - wmin);
        let p = window
            .iter()
            .copied()
            .filter(|&i| logs[i] >= floor)
            .map(|i| (i, norm.log_norm(&residuals[i])))
            .filter(|(_, l)| l.is_finite())
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .map(|(i, _)| i)
            .or_else(|| window.iter().rev().copied().find(|&i| !residuals[i].iter().all(|x| x.is_zero())))
            .expect("nonzero residual");
        let u = residuals[p].clone();
        let uu: BigRational = u.iter().map(|x| x * x).sum();
        for r in residuals.iter_mut() {
            let c: BigRational = r.iter().zip(&u).map(|(a, b)| a * b).sum::<BigRational>() / &uu;
            for (ri, ui) in r.iter_mut().zip(&u) {
                *ri -= &c * ui;
            }
        }
        pivots.push(u);
        let cutoff = WINDOW_SHRINK * logs[p];
        window.retain(|&i| logs[i] <= cutoff);
    }
    let top_raw = raw[0];
    let exponents: Vec<f64> = raw.iter().map(|r| r / top_raw).collect();
    let covectors: Vec<Vec<f64>> = pivots
        .iter()
        .map(|u| {
            let v: Vec<f64> = u.iter().map(|x| ToPrimitive::to_f64(x).unwrap_or(0.0)).collect();
            let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            // rescale before converting when entries overflow
            if s.is_finite() && s > 0.0 {
                v.iter().map(|x| x / s).collect()
            } else {
                let lmax = u.iter().map(log_abs_rat).fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = u.iter().map(|x| x.signum().to_f64().unwrap() * (log_abs_rat(x) - lmax).exp()).collect();
                let s = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                w.iter().map(|x| x / s).collect()
            }
        })
        .collect();

    // single-linkage clusters in ascending order
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| exponents[a].partial_cmp(&exponents[b]).unwrap());
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for &i in &order {
        match clusters.last_mut() {
            Some(c) if exponents[i] - exponents[*c.last().unwrap()] <= tol_cluster => c.push(i),
            _ => clusters.push(vec![i]),
        }
    }
    for c in &clusters {
        let width = exponents[*c.last().unwrap()] - exponents[c[0]];
        if width > MAX_CLUSTER_WIDTH {
            return Err(ZorichError::UnresolvedStrata(format!("cluster of width {width:.3} exceeds {MAX_CLUSTER_WIDTH}")));
        }
    }
    let mut strata = Vec::new();
    let mut members: Vec<usize> = Vec::new();
    for c in &clusters {
        members.extend(c);
        let exponent = c.iter().map(|&i| exponents[i]).sum::<f64>() / c.len() as f64;
        strata.push(Stratum { exponent, dim: members.len(), basis: members.iter().map(|&i| covectors[i].clone()).collect() });
    }
    let dim_f0 = exponents.iter().filter(|&&e| e <= tol_cluster).count();
    let k = strata.len();
    let pairing_defect = (0..k / 2).map(|i| (strata[i].exponent + strata[k - 1 - i].exponent).abs()).fold(0.0, f64::max);
    Ok(LyapunovFiltration { strata, exponents, covectors, top_raw, spreads, dim_f0, pairing_defect })
}

#[derive(Debug, Clone, Serialize)]
pub struct GapDecision {
    pub gap_predicted: bool,
    pub dim_f0: usize,
    pub genus: usize,
    /// The rule dim F₀ = genus is a conjecture, not a theorem.
    pub conjectural: bool,
}

/// Applies dim F₀ = genus. With a 2g×m projection Π from the visitation
/// space onto H₁, F₀ is pulled back first: dim{c : Πᵀc ∈ F₀}.
pub fn gap_decision(filt: &LyapunovFiltration, genus: usize, projection: Option<&DMatrix<f64>>) -> Result<GapDecision> {
    if genus == 0 {
        return Err(ZorichError::InvalidLengths("genus must be at least 1".into()));
    }
    let f0: Vec<&Vec<f64>> =
        filt.exponents.iter().zip(&filt.covectors).filter(|(e, _)| **e <= 0.05).map(|(_, c)| c).collect();
    let m = filt.covectors.first().map_or(0, |c| c.len());
    let dim_f0 = match projection {
        None => filt.dim_f0,
        Some(pi) => {
            if pi.ncols() != m {
                return Err(ZorichError::InvalidLengths(format!("projection has {} columns, visitation space {m}", pi.ncols())));
            }
            let range = pi.transpose();
            let f0m = if f0.is_empty() {
                DMatrix::zeros(m, 0)
            } else {
                DMatrix::from_fn(m, f0.len(), |i, j| f0[j][i])
            };
            let both = crate::symplectic::hcat([&range, &f0m].into_iter(), m);
            let r = |a: &DMatrix<f64>| if a.ncols() == 0 { 0 } else { rank(a, 1e-8, 1e-12) };
            r(&range) + r(&f0m) - r(&both)
        }
    };
    Ok(GapDecision { gap_predicted: dim_f0 == genus, dim_f0, genus, conjectural: true })
}

#[derive(Debug, Clone, Serialize)]
pub struct PaCrossCheck {
    pub expected_exponents: Vec<f64>,
    pub recovered_exponents: Vec<f64>,
    pub expected_dims: Vec<usize>,
    pub recovered_dims: Vec<usize>,
    pub max_error: f64,
    pub exponents_match: bool,
    pub dims_match: bool,
    #[serde(with = "crate::json::big_matrix")]
    pub starts: Vec<Vec<BigInt>>,
    pub filtration: LyapunovFiltration,
}

/// Cumulative stratum dimensions of a sorted exponent list under
/// single-linkage merging.
fn cumulative_dims(sorted: &[f64], tol: f64) -> Vec<usize> {
    let mut dims = Vec::new();
    for i in 0..sorted.len() {
        if i + 1 == sorted.len() || sorted[i + 1] - sorted[i] > tol {
            dims.push(i + 1);
        }
    }
    dims
}

/// Runs the filtration on h_n = Mⁿh₀ over seeded starts and compares it with the eigenvalue
/// decomposition of M.
pub fn pa_cross_check(m: &SymplecticMatrix, n: usize, seed: u64) -> Result<PaCrossCheck> {
    let split = eigen_split(m, 1e-6)?;
    let top = split.pairs.iter().map(|p| p.lambda.ln()).fold(0.0, f64::max);
    let mut expected = vec![0.0; split.e0_dim];
    for p in &split.pairs {
        let r = if top > 0.0 { p.lambda.ln() / top } else { 0.0 };
        expected.extend(std::iter::repeat(r).take(p.dim));
        expected.extend(std::iter::repeat(-r).take(p.dim));
    }
    expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tol = 0.05;
    let tries = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..tries {
        // 2g seeded integer starts, so that blocks with repeated eigenvalues
        // are spanned
        let starts: Vec<Vec<BigInt>> =
            (0..m.dim()).map(|_| (0..m.dim()).map(|_| BigInt::from(rng.gen_range(-9i64..=9))).collect()).collect();
        let loops = synthetic_loops(m, &starts, n);
        let filt = match filtration(&loops, tol, LoopNorm::L2) {
            Ok(f) => f,
            Err(ZorichError::UnresolvedStrata(_)) | Err(ZorichError::AllZeroEvaluations) => continue,
            Err(e) => return Err(e),
        };
        let mut recovered = filt.exponents.clone();
        recovered.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let max_error = expected
            .iter()
            .zip(&recovered)
            .map(|(e, r)| (e - r).abs() / e.abs().max(1.0))
            .fold(0.0, f64::max);
        let expected_dims = cumulative_dims(&expected, tol);
        let recovered_dims = filt.strata.iter().map(|s| s.dim).collect::<Vec<_>>();
        return Ok(PaCrossCheck {
            exponents_match: max_error <= 0.05,
            dims_match: expected_dims == recovered_dims,
            expected_exponents: expected,
            recovered_exponents: recovered,
            expected_dims,
            recovered_dims,
            max_error,
            starts,
            filtration: filt,
        });
    }
    Err(ZorichError::GenericityFailure { tries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IetMode {
    Rational,
    Float,
    Quadratic,
}

/// JSON description of an exchange. Rational lengths are strings "p/q" or
/// integers, float lengths are numbers, quadratic lengths are objects
/// {"a": "p/q", "b": "p/q"} meaning a + b√d.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IetSpec {
    pub lengths: Vec<serde_json::Value>,
    pub permutation: Vec<usize>,
    pub mode: IetMode,
    #[serde(default)]
    pub d: Option<i64>,
}

#[derive(Debug, Clone)]
pub enum AnyIet {
    Rational(IntervalExchange<BigRational>),
    Float(IntervalExchange<f64>),
    Quadratic(IntervalExchange<QuadSurd>),
}

pub fn parse_rational(v: &serde_json::Value) -> Option<BigRational> {
    match v {
        serde_json::Value::Number(n) => n.as_i64().map(|i| BigRational::from_integer(BigInt::from(i))),
        serde_json::Value::String(s) => {
            let s = s.trim();
            match s.split_once('/') {
                Some((p, q)) => {
                    let q: BigInt = q.trim().parse().ok()?;
                    let p: BigInt = p.trim().parse().ok()?;
                    (!q.is_zero()).then(|| BigRational::new(p, q))
                }
                None => Some(BigRational::from_integer(s.parse().ok()?)),
            }
        }
        _ => None,
    }
}

pub fn parse_quadratic(v: &serde_json::Value, d: i64) -> Option<QuadSurd> {
    let obj = v.as_object()?;
    let a = obj.get("a").map_or(Some(BigRational::zero()), parse_rational)?;
    let b = obj.get("b").map_or(Some(BigRational::zero()), parse_rational)?;
    Some(QuadSurd::new(a, b, d))
}

impl IetSpec {
    pub fn build(&self) -> Result<AnyIet> {
        let bad = |i: usize| ZorichError::InvalidLengths(format!("length {i} does not match mode {:?}", self.mode));
        Ok(match self.mode {
            IetMode::Rational => {
                let ls = self.lengths.iter().enumerate().map(|(i, v)| parse_rational(v).ok_or_else(|| bad(i))).collect::<Result<Vec<_>>>()?;
                AnyIet::Rational(IntervalExchange::new(ls, self.permutation.clone())?)
            }
            IetMode::Float => {
                let ls = self.lengths.iter().enumerate().map(|(i, v)| v.as_f64().ok_or_else(|| bad(i))).collect::<Result<Vec<_>>>()?;
                AnyIet::Float(IntervalExchange::new(ls, self.permutation.clone())?)
            }
            IetMode::Quadratic => {
                let d = self.d.filter(|&d| d > 1).ok_or_else(|| ZorichError::InvalidLengths("quadratic mode needs d > 1".into()))?;
                let ls = self.lengths.iter().enumerate().map(|(i, v)| parse_quadratic(v, d).ok_or_else(|| bad(i))).collect::<Result<Vec<_>>>()?;
                AnyIet::Quadratic(IntervalExchange::new(ls, self.permutation.clone())?)
            }
        })
    }
}

impl AnyIet {
    pub fn m(&self) -> usize {
        match self {
            AnyIet::Rational(i) => i.m(),
            AnyIet::Float(i) => i.m(),
            AnyIet::Quadratic(i) => i.m(),
        }
    }

    /// Returns to the transversal I = [λ₁·lo_frac, λ₁·hi_frac) starting at
    /// λ₁·start_frac, with the fractions given as rationals.
    pub fn return_loops_scaled(&self, start: &BigRational, lo: &BigRational, hi: &BigRational, returns: usize, cap: u64) -> Result<Vec<ReturnLoopRecord>> {
        fn scale_q(x: &QuadSurd, f: &BigRational) -> QuadSurd {
            QuadSurd::new(&x.a * f, &x.b * f, x.d)
        }
        match self {
            AnyIet::Rational(iet) => {
                let l = &iet.lengths()[0];
                return_loops(iet, &(l * start), (&(l * lo), &(l * hi)), returns, cap)
            }
            AnyIet::Float(iet) => {
                let l = iet.lengths()[0];
                let f = |q: &BigRational| l * ToPrimitive::to_f64(q).unwrap();
                return_loops(iet, &f(start), (&f(lo), &f(hi)), returns, cap)
            }
            AnyIet::Quadratic(iet) => {
                let l = &iet.lengths()[0];
                return_loops(iet, &scale_q(l, start), (&scale_q(l, lo), &scale_q(l, hi)), returns, cap)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symplectic::{block_diag, int_matrix, validate_symplectic};

    fn q(p: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(p), BigInt::from(d))
    }

    fn golden_loops(n: usize) -> Vec<ReturnLoopRecord> {
        let iet = golden_rotation();
        let lo = QuadSurd::origin();
        let hi = iet.lengths()[0].clone();
        return_loops(&iet, &QuadSurd::origin(), (&lo, &hi), n, 10_000_000).unwrap()
    }

    #[test]
    fn golden_rotation_moves_by_two_minus_phi() {
        let iet = golden_rotation();
        let y = iet.iterate(&QuadSurd::origin()).unwrap();
        assert_eq!(y, QuadSurd::rat(3, -1, 2, 5));
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((y.as_f64() - (2.0 - phi)).abs() < 1e-15);
        assert!(matches!(iet.iterate(&iet.lengths()[0].clone()), Err(ZorichError::BoundaryHit { .. })));
    }

    #[test]
    fn construction_rejects_bad_input() {
        let r = |v: &[(i64, i64)]| v.iter().map(|&(a, b)| q(a, b)).collect::<Vec<_>>();
        assert!(matches!(IntervalExchange::new(r(&[(1, 2), (1, 2)]), vec![1, 2]), Err(ZorichError::Reducible { k: 1 })));
        assert!(matches!(IntervalExchange::new(r(&[(1, 3), (1, 3), (1, 3)]), vec![2, 1, 3]), Err(ZorichError::Reducible { k: 2 })));
        assert!(matches!(IntervalExchange::new(r(&[(1, 2), (1, 3)]), vec![2, 1]), Err(ZorichError::InvalidLengths(_))));
        assert!(matches!(IntervalExchange::new(r(&[(1, 2), (1, 2)]), vec![2, 2]), Err(ZorichError::InvalidPermutation(_))));
        assert!(IntervalExchange::new(r(&[(1, 3), (1, 3), (1, 3)]), vec![3, 2, 1]).is_ok());
    }

    #[test]
    fn quadratic_sign_is_exact() {
        let x = QuadSurd::rat(-2236, 1000, 1000, 5); // −2.236 + √5 > 0
        assert_eq!(x.signum(), Ordering::Greater);
        let y = QuadSurd::rat(-2237, 1000, 1000, 5);
        assert_eq!(y.signum(), Ordering::Less);
        assert_eq!(QuadSurd::rat(0, 0, 1, 5).signum(), Ordering::Equal);
    }

    #[test]
    fn first_return_and_invariants() {
        let loops = golden_loops(200);
        let one = golden_loops(1);
        assert_eq!(one.len(), 1);
        // the first step from 0 lands at 2−φ < φ−1, inside I
        assert_eq!(one[0].visits, vec![BigInt::from(1), BigInt::from(0)]);
        for w in loops.windows(2) {
            assert!(w[0].visits.iter().zip(&w[1].visits).all(|(a, b)| a <= b));
        }
    }

    /// Independent oracle: x_k = frac(kα) with α = (3−√5)/2, so the visits
    /// to the second interval up to time t are ⌊tα⌋, computed with integer
    /// square roots.
    fn floor_t_alpha(t: u64) -> u64 {
        let s = num_integer::Roots::sqrt(&(5 * (t as u128) * (t as u128)));
        // tα = (3t − t√5)/2; ⌊t√5⌋ = s and t√5 is irrational for t > 0
        ((3 * t as u128 - s as u128 - 1) / 2) as u64
    }

    #[test]
    fn golden_visits_match_direct_simulation() {
        let loops = golden_loops(2000);
        for l in &loops {
            let t: u64 = l.visits.iter().map(|v| v.to_u64().unwrap()).sum();
            assert_eq!(l.visits[1].to_u64().unwrap(), floor_t_alpha(t), "t = {t}");
        }
        // starting at the left end of I, the nearest returns come from one
        // side: every other convergent denominator of α = [0; 2, 1, 1, ...],
        // i.e. the Fibonacci numbers 1, 3, 8, 21, ...
        let rec: Vec<u64> = nearest_returns(&loops)
            .iter()
            .map(|&i| loops[i].visits.iter().map(|v| v.to_u64().unwrap()).sum())
            .collect();
        let mut fib = vec![1u64, 1];
        while fib.len() < 2 * rec.len() + 2 {
            let k = fib.len();
            fib.push(fib[k - 1] + fib[k - 2]);
        }
        let every_other: Vec<u64> = fib.iter().skip(1).step_by(2).take(rec.len()).copied().collect();
        assert_eq!(rec, every_other);
    }

    #[test]
    fn float_mode_matches_exact_mode() {
        let exact = golden_loops(20_000);
        let iet = golden_rotation_f64();
        let hi = iet.lengths()[0];
        let float = return_loops(&iet, &0.0, (&0.0, &hi), 20_000, 10_000_000).unwrap();
        assert_eq!(exact.iter().map(|l| &l.visits).collect::<Vec<_>>(), float.iter().map(|l| &l.visits).collect::<Vec<_>>());
    }

    #[test]
    fn golden_exponents() {
        let loops = golden_loops(10_000);
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let top = exponent_of(&[1.0, 0.0], &loops, LoopNorm::L2).unwrap();
        assert!((top.estimate - 1.0).abs() < 0.05, "{top:?}");
        let low = exponent_of(&[1.0, -phi], &loops, LoopNorm::L2).unwrap();
        assert!((low.estimate + 1.0).abs() < 0.1, "{low:?}");
        for f in [[1.0, 0.0], [1.0, -phi]] {
            let a = exponent_of(&f, &loops, LoopNorm::L2).unwrap().estimate;
            let b = exponent_of(&f, &loops, LoopNorm::L1).unwrap().estimate;
            assert!((a - b).abs() < 0.05);
        }
        let h1 = &loops[0].visits;
        let aligned: Vec<f64> = h1.iter().map(|x| x.to_f64().unwrap()).collect();
        assert!(exponent_of(&aligned, &loops, LoopNorm::L2).unwrap().estimate <= 1.0);
        assert!(matches!(exponent_of(&[1.0, 0.0], &loops[..50], LoopNorm::L2), Err(ZorichError::TooFewLoops { .. })));
        assert!(matches!(exponent_of(&[0.0, 0.0], &loops, LoopNorm::L2), Err(ZorichError::AllZeroEvaluations)));
    }

    #[test]
    fn golden_filtration() {
        let loops = golden_loops(10_000);
        let f = filtration(&loops, 0.05, LoopNorm::L2).unwrap();
        assert_eq!(f.strata.iter().map(|s| s.dim).collect::<Vec<_>>(), vec![1, 2]);
        assert!((f.strata[0].exponent + 1.0).abs() < 0.1 && f.strata[1].exponent == 1.0);
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let low = &f.strata[0].basis[0];
        assert!((low[1] / low[0] + phi).abs() < 1e-3);
        assert_eq!(f.dim_f0, 1);
        let d = gap_decision(&f, 1, None).unwrap();
        assert!(d.gap_predicted && d.conjectural);
    }

    #[test]
    fn cat_cross_check() {
        let cat = validate_symplectic(int_matrix(&[&[2, 1], &[1, 1]])).unwrap();
        let r = pa_cross_check(&cat, 400, 1).unwrap();
        assert!(r.exponents_match && r.dims_match, "{:?} {:?}", r.recovered_exponents, r.recovered_dims);
        // F_{−1} is the eigenline of Mᵀ for 1/λ
        let lam = (3.0 + 5f64.sqrt()) / 2.0;
        let c = &r.filtration.strata[0].basis[0];
        let mt = nalgebra::Matrix2::new(2.0, 1.0, 1.0, 1.0);
        let v = nalgebra::Vector2::new(c[0], c[1]);
        assert!((mt * v - v / lam).norm() < 1e-9);
    }

    #[test]
    fn block_diagonal_cross_check() {
        let m = SymplecticMatrix::direct_sum(&[
            validate_symplectic(int_matrix(&[&[2, 1], &[1, 1]])).unwrap(),
            validate_symplectic(int_matrix(&[&[3, 1], &[2, 1]])).unwrap(),
        ]);
        let r = pa_cross_check(&m, 400, 2).unwrap();
        assert!(r.exponents_match && r.dims_match, "{r:?}");
        assert_eq!(r.recovered_dims, vec![1, 2, 3, 4]);
        let g = gap_decision(&r.filtration, 2, None).unwrap();
        assert!(g.gap_predicted);
    }

    #[test]
    fn identity_block_gives_zero_stratum() {
        let m = SymplecticMatrix::direct_sum(&[
            validate_symplectic(int_matrix(&[&[2, 1], &[1, 1]])).unwrap(),
            SymplecticMatrix::identity(1),
        ]);
        let r = pa_cross_check(&m, 400, 3).unwrap();
        assert!(r.exponents_match && r.dims_match, "{r:?}");
        assert_eq!(r.recovered_dims, vec![1, 3, 4]);
        let g = gap_decision(&r.filtration, 2, None).unwrap();
        assert_eq!(g.dim_f0, 3);
        assert!(!g.gap_predicted);
        let _ = block_diag;
        let _ = q(1, 1);
    }

    #[test]
    fn rational_exchange_runs() {
        let iet = IntervalExchange::new(vec![q(1, 3), q(1, 3), q(1, 3)], vec![3, 2, 1]).unwrap();
        let lo = q(0, 1);
        let hi = q(1, 3);
        let loops = return_loops(&iet, &q(1, 7), (&lo, &hi), 5, 1000).unwrap();
        assert_eq!(loops.len(), 5);
        let short = return_loops(&iet, &q(1, 7), (&q(1, 8), &q(1, 6)), 5, 3);
        assert!(matches!(short, Err(ZorichError::NoReturnWithinBudget { cap: 3 }) | Ok(_)));
    }

    #[test]
    fn spec_parsing() {
        let s: IetSpec = serde_json::from_str(r#"{"lengths":["1/3","1/3","1/3"],"permutation":[3,2,1],"mode":"rational"}"#).unwrap();
        assert!(matches!(s.build().unwrap(), AnyIet::Rational(_)));
        let s: IetSpec = serde_json::from_str(
            r#"{"lengths":[{"a":"-1/2","b":"1/2"},{"a":"3/2","b":"-1/2"}],"permutation":[2,1],"mode":"quadratic","d":5}"#,
        )
        .unwrap();
        assert!(matches!(s.build().unwrap(), AnyIet::Quadratic(_)));
        let s: IetSpec = serde_json::from_str(r#"{"lengths":[0.5,0.5],"permutation":[1,2],"mode":"float"}"#).unwrap();
        assert!(matches!(s.build(), Err(ZorichError::Reducible { .. })));
    }
}
