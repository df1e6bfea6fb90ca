//! Exact univariate polynomial arithmetic over ℤ and ℚ.
//!
//! Coefficient vectors are stored in ascending order (`c[i]` multiplies `x^i`)
//! unless a function says otherwise. Everything here is exact; floats only
//! appear in the approximations attached to isolated roots.

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub type IntPoly = Vec<BigInt>;
pub type RatPoly = Vec<BigRational>;

fn trim<T: Zero>(mut p: Vec<T>) -> Vec<T> {
    while p.len() > 1 && p.last().map_or(false, |c| c.is_zero()) {
        p.pop();
    }
    p
}

pub fn degree<T: Zero>(p: &[T]) -> Option<usize> {
    p.iter().rposition(|c| !c.is_zero())
}

pub fn to_rat(p: &[BigInt]) -> RatPoly {
    p.iter().map(|c| BigRational::from_integer(c.clone())).collect()
}

pub fn eval_int(p: &[BigInt], x: &BigInt) -> BigInt {
    p.iter().rev().fold(BigInt::zero(), |acc, c| acc * x + c)
}

pub fn eval_rat(p: &[BigRational], x: &BigRational) -> BigRational {
    p.iter().rev().fold(BigRational::zero(), |acc, c| acc * x + c)
}

pub fn eval_f64(p: &[BigRational], x: f64) -> f64 {
    p.iter()
        .rev()
        .fold(0.0, |acc, c| acc * x + c.to_f64().unwrap_or(f64::NAN))
}

/// Characteristic polynomial det(xI − M) of a square integer matrix, by the
/// Faddeev–LeVerrier recursion. Every division is exact over ℤ.
pub fn char_poly(m: &[Vec<BigInt>]) -> IntPoly {
    let n = m.len();
    let mut coeffs = vec![BigInt::zero(); n + 1];
    coeffs[n] = BigInt::one();
    let mut acc = vec![vec![BigInt::zero(); n]; n];
    for k in 1..=n {
        // acc <- M * acc + c_{n-k+1} I
        let mut next = vec![vec![BigInt::zero(); n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut s = BigInt::zero();
                for l in 0..n {
                    if !m[i][l].is_zero() && !acc[l][j].is_zero() {
                        s += &m[i][l] * &acc[l][j];
                    }
                }
                next[i][j] = s;
            }
            next[i][i] += &coeffs[n - k + 1];
        }
        acc = next;
        let mut tr = BigInt::zero();
        for i in 0..n {
            for l in 0..n {
                tr += &m[i][l] * &acc[l][i];
            }
        }
        let kk = BigInt::from(k as u64);
        debug_assert!((&tr % &kk).is_zero());
        coeffs[n - k] = -(tr / kk);
    }
    coeffs
}

/// Divides `p` by `(x - root)` as many times as it vanishes at `root`.
/// Returns the multiplicity and the cofactor.
pub fn strip_root(p: &[BigInt], root: &BigInt) -> (usize, IntPoly) {
    let mut cur: IntPoly = p.to_vec();
    let mut mult = 0;
    while degree(&cur).map_or(false, |d| d > 0) && eval_int(&cur, root).is_zero() {
        // synthetic division
        let d = degree(&cur).unwrap();
        let mut q = vec![BigInt::zero(); d];
        let mut carry = BigInt::zero();
        for i in (0..=d).rev() {
            let v = &cur[i] + &carry * root;
            if i > 0 {
                q[i - 1] = v.clone();
            }
            carry = v;
        }
        cur = q;
        mult += 1;
    }
    (mult, cur)
}

pub fn rat_rem(a: &[BigRational], b: &[BigRational]) -> RatPoly {
    let db = degree(b).expect("division by zero polynomial");
    let mut r: RatPoly = a.to_vec();
    let lead = b[db].clone();
    while let Some(dr) = degree(&r) {
        if dr < db || (dr == 0 && r[0].is_zero()) {
            break;
        }
        let f = &r[dr] / &lead;
        for i in 0..=db {
            let t = &f * &b[i];
            r[dr - db + i] -= t;
        }
        r[dr] = BigRational::zero();
        if dr == 0 {
            break;
        }
    }
    trim(r)
}

pub fn rat_div(a: &[BigRational], b: &[BigRational]) -> RatPoly {
    let db = degree(b).expect("division by zero polynomial");
    let mut r: RatPoly = a.to_vec();
    let Some(da) = degree(a) else {
        return vec![BigRational::zero()];
    };
    if da < db {
        return vec![BigRational::zero()];
    }
    let mut q = vec![BigRational::zero(); da - db + 1];
    let lead = b[db].clone();
    for dr in (db..=da).rev() {
        if r[dr].is_zero() {
            continue;
        }
        let f = &r[dr] / &lead;
        for i in 0..=db {
            let t = &f * &b[i];
            r[dr - db + i] -= t;
        }
        q[dr - db] = f;
    }
    trim(q)
}

fn monic(p: RatPoly) -> RatPoly {
    match degree(&p) {
        Some(d) => {
            let lead = p[d].clone();
            trim(p.into_iter().map(|c| c / &lead).collect())
        }
        None => p,
    }
}

pub fn rat_gcd(a: &[BigRational], b: &[BigRational]) -> RatPoly {
    let mut x = trim(a.to_vec());
    let mut y = trim(b.to_vec());
    while degree(&y).is_some() {
        let r = rat_rem(&x, &y);
        x = y;
        y = r;
    }
    monic(x)
}

pub fn derivative(p: &[BigRational]) -> RatPoly {
    if p.len() <= 1 {
        return vec![BigRational::zero()];
    }
    trim(
        p.iter()
            .enumerate()
            .skip(1)
            .map(|(i, c)| c * BigRational::from_integer(BigInt::from(i as u64)))
            .collect(),
    )
}

/// Yun's square-free factorisation: returns `s_1, s_2, …` with
/// `p = c · Π s_i^i`, each `s_i` square-free and monic.
pub fn squarefree_factors(p: &[BigRational]) -> Vec<RatPoly> {
    let p = monic(trim(p.to_vec()));
    if degree(&p).map_or(true, |d| d == 0) {
        return Vec::new();
    }
    let dp = derivative(&p);
    let mut a = rat_gcd(&p, &dp);
    let mut b = rat_div(&p, &a);
    let mut c = rat_div(&dp, &a);
    let mut out = Vec::new();
    loop {
        let db = derivative(&b);
        let d: RatPoly = c
            .iter()
            .cloned()
            .chain(std::iter::repeat(BigRational::zero()))
            .zip(db.iter().cloned().chain(std::iter::repeat(BigRational::zero())))
            .take(c.len().max(db.len()))
            .map(|(x, y)| x - y)
            .collect();
        let d = trim(d);
        a = rat_gcd(&b, &d);
        out.push(a.clone());
        b = rat_div(&b, &a);
        if degree(&b).map_or(true, |d| d == 0) {
            break;
        }
        c = rat_div(&d, &a);
    }
    // drop trailing constant factors
    while out.last().map_or(false, |f| degree(f).map_or(true, |d| d == 0)) {
        out.pop();
    }
    out
}

/// Sturm chain of a square-free polynomial.
#[derive(Debug, Clone)]
pub struct SturmChain {
    chain: Vec<RatPoly>,
}

impl SturmChain {
    pub fn new(p: &[BigRational]) -> Self {
        let p = trim(p.to_vec());
        let mut chain = vec![p.clone()];
        let dp = derivative(&p);
        if degree(&dp).is_some() {
            chain.push(dp);
            loop {
                let n = chain.len();
                let r = rat_rem(&chain[n - 2], &chain[n - 1]);
                if degree(&r).is_none() {
                    break;
                }
                chain.push(r.into_iter().map(|c| -c).collect());
            }
        }
        Self { chain }
    }

    pub fn sign_changes(&self, x: &BigRational) -> usize {
        let mut count = 0;
        let mut last = 0i8;
        for p in &self.chain {
            let v = eval_rat(p, x);
            let s = if v.is_positive() {
                1
            } else if v.is_negative() {
                -1
            } else {
                0
            };
            if s != 0 {
                if last != 0 && s != last {
                    count += 1;
                }
                last = s;
            }
        }
        count
    }

    /// Number of distinct real roots in the half-open interval `(a, b]`.
    pub fn count(&self, a: &BigRational, b: &BigRational) -> usize {
        self.sign_changes(a).saturating_sub(self.sign_changes(b))
    }

    pub fn poly(&self) -> &RatPoly {
        &self.chain[0]
    }
}

/// An isolating interval `(lo, hi]` holding exactly one real root (or the
/// degenerate `lo == hi` when the root is rational and hit exactly).
#[derive(Debug, Clone)]
pub struct IsolatedRoot {
    pub lo: BigRational,
    pub hi: BigRational,
}

impl IsolatedRoot {
    pub fn approx(&self) -> f64 {
        let mid = (&self.lo + &self.hi) / BigRational::from_integer(2.into());
        mid.to_f64().unwrap_or(f64::NAN)
    }
}

/// Isolates the real roots of a square-free polynomial inside `(a, b)` and
/// refines each to width below `2^-bits`.
pub fn isolate_roots(p: &[BigRational], a: &BigRational, b: &BigRational, bits: u32) -> Vec<IsolatedRoot> {
    let sturm = SturmChain::new(p);
    let two = BigRational::from_integer(2.into());
    let width = BigRational::new(BigInt::one(), BigInt::one() << bits);
    let mut out = Vec::new();
    let mut stack = vec![(a.clone(), b.clone())];
    // roots exactly at b are excluded because the caller wants the open interval
    while let Some((lo, hi)) = stack.pop() {
        let mut n = sturm.count(&lo, &hi);
        if eval_rat(sturm.poly(), &hi).is_zero() && &hi == b {
            n = n.saturating_sub(1);
        }
        if n == 0 {
            continue;
        }
        if n == 1 && &hi - &lo < width {
            out.push(IsolatedRoot { lo, hi });
            continue;
        }
        let mid = (&lo + &hi) / &two;
        if eval_rat(sturm.poly(), &mid).is_zero() {
            out.push(IsolatedRoot { lo: mid.clone(), hi: mid.clone() });
            // (lo, mid] contains mid itself; exclude it by splitting just below
            let eps = BigRational::new(BigInt::one(), BigInt::one() << (bits + 8));
            let below = &mid - &eps;
            if below > lo {
                stack.push((lo, below));
            }
            stack.push((mid, hi));
        } else if n == 1 {
            if sturm.count(&lo, &mid) == 1 {
                stack.push((lo, mid));
            } else {
                stack.push((mid, hi));
            }
        } else {
            stack.push((lo, mid.clone()));
            stack.push((mid, hi));
        }
    }
    out.sort_by(|x, y| x.lo.cmp(&y.lo));
    out
}

/// `p(x) = x^e · q(x + 1/x)` for a palindromic `p` of degree `2e`.
/// Returns `None` when `p` is not palindromic of even degree.
pub fn reciprocal_reduction(p: &[BigRational]) -> Option<RatPoly> {
    let d = degree(p)?;
    if d % 2 != 0 {
        return None;
    }
    for i in 0..=d {
        if p[i] != p[d - i] {
            return None;
        }
    }
    let e = d / 2;
    // Dickson polynomials D_k(y) = x^k + x^-k in y = x + 1/x.
    let mut dk: Vec<RatPoly> = Vec::with_capacity(e + 1);
    dk.push(vec![BigRational::from_integer(2.into())]);
    if e >= 1 {
        dk.push(vec![BigRational::zero(), BigRational::one()]);
    }
    for k in 2..=e {
        let mut next = vec![BigRational::zero(); k + 1];
        for (i, c) in dk[k - 1].iter().enumerate() {
            next[i + 1] += c;
        }
        for (i, c) in dk[k - 2].iter().enumerate() {
            next[i] -= c;
        }
        dk.push(next);
    }
    let mut q = vec![BigRational::zero(); e + 1];
    q[0] += &p[e];
    for k in 1..=e {
        for (i, c) in dk[k].iter().enumerate() {
            q[i] += &p[e + k] * c;
        }
    }
    Some(trim(q))
}

/// A root of an integer polynomial lying on the unit circle, together with
/// the exact isolating data in the `y = λ + 1/λ` coordinate.
#[derive(Debug, Clone)]
pub struct UnitRoot {
    pub value: Complex64,
    pub multiplicity: usize,
    /// Isolating interval for `y = 2 cos(arg λ)`; `None` for `λ = ±1`.
    pub y_interval: Option<IsolatedRoot>,
}

impl UnitRoot {
    pub fn arg(&self) -> f64 {
        let a = self.value.im.atan2(self.value.re);
        if a < 0.0 {
            a + std::f64::consts::TAU
        } else {
            a
        }
    }
}

/// Exact unit-circle analysis of an integer polynomial.
#[derive(Debug, Clone)]
pub struct UnitCircleAnalysis {
    pub mult_at_one: usize,
    pub mult_at_minus_one: usize,
    /// Number of distinct real roots of the reduced polynomial in (−2, 2).
    pub sturm_count: usize,
    /// Reduced polynomial `q` in `y = x + 1/x` (ascending), if any part of
    /// `p` besides `±1` is self-reciprocal.
    pub reduced: Option<RatPoly>,
    /// All unit-circle roots ordered by argument in `[0, 2π)`.
    pub roots: Vec<UnitRoot>,
}

impl UnitCircleAnalysis {
    pub fn has_unit_root(&self) -> bool {
        self.mult_at_one > 0 || self.mult_at_minus_one > 0 || self.sturm_count > 0
    }
}

/// Locates every root of `p` on the unit circle exactly.
///
/// Roots at `±1` are divided out first. The remaining unit-circle roots are
/// roots of `g = gcd(r, r*)` (`r*` the reversal), which is palindromic, and
/// they correspond to real roots of `g`'s reduction `q` inside `(−2, 2)`.
pub fn unit_circle_roots(p: &[BigInt]) -> UnitCircleAnalysis {
    let (m1, r) = strip_root(p, &BigInt::one());
    let (mm1, r) = strip_root(&r, &-BigInt::one());
    let mut roots = Vec::new();
    if m1 > 0 {
        roots.push(UnitRoot { value: Complex64::new(1.0, 0.0), multiplicity: m1, y_interval: None });
    }
    if mm1 > 0 {
        roots.push(UnitRoot { value: Complex64::new(-1.0, 0.0), multiplicity: mm1, y_interval: None });
    }
    let mut sturm_count = 0;
    let mut reduced = None;
    let r = trim(r);
    if degree(&r).map_or(false, |d| d > 0) {
        let rr = to_rat(&r);
        let mut rev = rr.clone();
        rev.reverse();
        let g = rat_gcd(&rr, &rev);
        if degree(&g).map_or(false, |d| d > 0) {
            // g is palindromic up to sign; with ±1 removed it is palindromic.
            let q = reciprocal_reduction(&g).expect("self-reciprocal factor must be palindromic");
            let lo = BigRational::from_integer((-2).into());
            let hi = BigRational::from_integer(2.into());
            for (i, s) in squarefree_factors(&q).iter().enumerate() {
                if degree(s).map_or(true, |d| d == 0) {
                    continue;
                }
                let iso = isolate_roots(s, &lo, &hi, 64);
                sturm_count += iso.len();
                for y in iso {
                    let yv = y.approx();
                    let im = (4.0 - yv * yv).max(0.0).sqrt() / 2.0;
                    let re = yv / 2.0;
                    roots.push(UnitRoot { value: Complex64::new(re, im), multiplicity: i + 1, y_interval: Some(y.clone()) });
                    roots.push(UnitRoot { value: Complex64::new(re, -im), multiplicity: i + 1, y_interval: Some(y) });
                }
            }
            reduced = Some(q);
        }
    }
    roots.sort_by(|a, b| a.arg().partial_cmp(&b.arg()).unwrap());
    UnitCircleAnalysis { mult_at_one: m1, mult_at_minus_one: mm1, sturm_count, reduced, roots }
}

pub fn is_palindromic(p: &[BigInt]) -> bool {
    let Some(d) = degree(p) else { return true };
    (0..=d).all(|i| p[i] == p[d - i])
}

/// Exact integer determinant by Bareiss elimination.
pub fn det_int(m: &[Vec<BigInt>]) -> BigInt {
    let n = m.len();
    if n == 0 {
        return BigInt::one();
    }
    let mut a: Vec<Vec<BigInt>> = m.to_vec();
    let mut sign = BigInt::one();
    let mut prev = BigInt::one();
    for k in 0..n - 1 {
        if a[k][k].is_zero() {
            let Some(swap) = (k + 1..n).find(|&i| !a[i][k].is_zero()) else {
                return BigInt::zero();
            };
            a.swap(k, swap);
            sign = -sign;
        }
        for i in k + 1..n {
            for j in k + 1..n {
                let v = &a[i][j] * &a[k][k] - &a[i][k] * &a[k][j];
                a[i][j] = v / &prev;
            }
        }
        prev = a[k][k].clone();
    }
    sign * a[n - 1][n - 1].clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ip(v: &[i64]) -> IntPoly {
        v.iter().map(|&c| BigInt::from(c)).collect()
    }

    fn im(rows: &[&[i64]]) -> Vec<Vec<BigInt>> {
        rows.iter().map(|r| r.iter().map(|&c| BigInt::from(c)).collect()).collect()
    }

    #[test]
    fn char_poly_of_cat_map() {
        assert_eq!(char_poly(&im(&[&[2, 1], &[1, 1]])), ip(&[1, -3, 1]));
    }

    #[test]
    fn strip_double_root() {
        let (m, r) = strip_root(&ip(&[1, -2, 1]), &BigInt::one());
        assert_eq!(m, 2);
        assert_eq!(degree(&r), Some(0));
    }

    #[test]
    fn sturm_counts_sqrt_two() {
        let p = to_rat(&ip(&[-2, 0, 1]));
        let s = SturmChain::new(&p);
        let a = BigRational::from_integer((-2).into());
        let b = BigRational::from_integer(2.into());
        assert_eq!(s.count(&a, &b), 2);
        let z = BigRational::zero();
        assert_eq!(s.count(&z, &b), 1);
    }

    #[test]
    fn squarefree_splits_multiplicities() {
        // (y-1)^2 (y+1)
        let p = to_rat(&ip(&[1, -1, -1, 1]));
        let f = squarefree_factors(&p);
        assert_eq!(f.len(), 2);
        assert_eq!(degree(&f[0]), Some(1));
        assert_eq!(degree(&f[1]), Some(1));
    }

    #[test]
    fn reduction_of_x2_plus_1() {
        // x^2 + 1 = x (x + 1/x) → q(y) = y
        let q = reciprocal_reduction(&to_rat(&ip(&[1, 0, 1]))).unwrap();
        assert_eq!(q, to_rat(&ip(&[0, 1])));
    }

    #[test]
    fn sixth_roots_of_unity_found() {
        // x^2 - x + 1: primitive 6th roots, y = 1 exactly rational
        let a = unit_circle_roots(&ip(&[1, -1, 1]));
        assert_eq!(a.sturm_count, 1);
        assert_eq!(a.roots.len(), 2);
        assert!((a.roots[0].arg() - std::f64::consts::FRAC_PI_3).abs() < 1e-12);
    }

    #[test]
    fn non_reciprocal_polynomial_has_no_unit_roots() {
        // x^2 - 3x + 1 has roots off the circle; x - 2 is not self reciprocal
        assert!(!unit_circle_roots(&ip(&[1, -3, 1])).has_unit_root());
        assert!(!unit_circle_roots(&ip(&[-2, 1])).has_unit_root());
    }

    #[test]
    fn bareiss_determinant() {
        assert_eq!(det_int(&im(&[&[2, 1], &[1, 1]])), BigInt::one());
        assert_eq!(det_int(&im(&[&[0, 1, 0], &[1, 0, 0], &[0, 0, 1]])), -BigInt::one());
        assert_eq!(det_int(&im(&[&[1, 1], &[1, 1]])), BigInt::zero());
    }
}
