//! Radial 1-forms g(r) dt on a Margulis tube of core length l and radius R,
//! the operator −(1/tanh r)(tanh(r) g′)′, and the quasimodes built from a
//! bump profile that push k² into the essential spectrum.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use thiserror::Error;

use crate::derivative::simpson;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TubeError {
    #[error("profile does not vanish at r = 0 (|g(0)| = {value})")]
    SupportTouchesOrigin { value: f64 },
    #[error("wavenumber must be nonzero")]
    ZeroWavenumber,
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, TubeError>;

/// Points per unit of s ∈ [0, 1] used to normalize the bump.
const NORMALIZATION_POINTS: usize = 200_000;

/// exp(−1/(s(1−s))) on (0, 1), scaled so that ∫φ² = 1.
#[derive(Debug, Clone, Copy)]
pub struct Bump {
    scale: f64,
}

fn raw_bump(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        0.0
    } else {
        (-1.0 / (s * (1.0 - s))).exp()
    }
}

impl Bump {
    pub fn standard() -> Self {
        let h = 1.0 / NORMALIZATION_POINTS as f64;
        let sq: Vec<f64> = (0..=NORMALIZATION_POINTS).map(|i| raw_bump(i as f64 * h).powi(2)).collect();
        Self { scale: simpson(&sq, h).sqrt().recip() }
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.scale * raw_bump(s)
    }

    /// ∫₀¹ φ² by Simpson on n panels.
    pub fn l2_sq(&self, n: usize) -> f64 {
        let h = 1.0 / n as f64;
        let sq: Vec<f64> = (0..=n).map(|i| self.eval(i as f64 * h).powi(2)).collect();
        simpson(&sq, h)
    }
}

impl Default for Bump {
    fn default() -> Self {
        Self::standard()
    }
}

/// A complex radial profile on the uniform grid r_j = jR/N, j = 0..=N.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile {
    pub radius: f64,
    pub values: Vec<Complex64>,
}

impl RadialProfile {
    pub fn sample(radius: f64, points: usize, f: impl Fn(f64) -> Complex64) -> Self {
        let h = radius / points as f64;
        Self { radius, values: (0..=points).map(|j| f(j as f64 * h)).collect() }
    }

    pub fn step(&self) -> f64 {
        self.radius / (self.values.len() - 1) as f64
    }

    pub fn r(&self, j: usize) -> f64 {
        j as f64 * self.step()
    }

    pub fn scale(&self, a: Complex64) -> Self {
        Self { radius: self.radius, values: self.values.iter().map(|v| v * a).collect() }
    }

    pub fn axpy(&self, a: Complex64, other: &Self) -> Self {
        Self { radius: self.radius, values: self.values.iter().zip(&other.values).map(|(x, y)| x + a * y).collect() }
    }
}

/// −(1/tanh r)(tanh(r) g′)′ by the conservative three-point stencil with
/// tanh at the half points; zero at both ends.
pub fn sl_apply(g: &RadialProfile) -> Result<RadialProfile> {
    let n = g.values.len();
    if n < 3 {
        return Err(TubeError::Invalid("need at least 3 grid points".into()));
    }
    if g.values[0].norm() > 0.0 {
        return Err(TubeError::SupportTouchesOrigin { value: g.values[0].norm() });
    }
    let h = g.step();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for j in 1..n - 1 {
        let r = g.r(j);
        let up = (r + 0.5 * h).tanh();
        let down = (r - 0.5 * h).tanh();
        let flux = up * (g.values[j + 1] - g.values[j]) - down * (g.values[j] - g.values[j - 1]);
        out[j] = -flux / (h * h * r.tanh());
    }
    Ok(RadialProfile { radius: g.radius, values: out })
}

/// ⟨ω, ω⟩ = 2πl ∫₀^R |g|² tanh(r) dr.
pub fn tube_norm(g: &RadialProfile, l: f64) -> f64 {
    let f: Vec<f64> = g.values.iter().enumerate().map(|(j, v)| v.norm_sqr() * g.r(j).tanh()).collect();
    2.0 * PI * l * simpson(&f, g.step())
}

/// ∫₀^R g(r) tanh(r) dr; ⟨ω, dt⟩ up to the factor 2πl.
pub fn dt_pairing(g: &RadialProfile) -> Complex64 {
    let h = g.step();
    let weighted = |part: fn(&Complex64) -> f64| -> f64 {
        let f: Vec<f64> = g.values.iter().enumerate().map(|(j, v)| part(v) * g.r(j).tanh()).collect();
        simpson(&f, h)
    };
    Complex64::new(weighted(|v| v.re), weighted(|v| v.im))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TubeConfig {
    pub l: f64,
    pub radius: f64,
    pub k: f64,
    /// Grid points per unit radius.
    pub density: usize,
}

pub const DEFAULT_DENSITY: usize = 400;

impl TubeConfig {
    /// R = ½ log(1/l).
    pub fn new(l: f64, k: f64) -> Result<Self> {
        if !(l > 0.0 && l < 1.0) {
            return Err(TubeError::Invalid(format!("core length {l} must lie in (0, 1) for the default radius")));
        }
        Ok(Self { l, radius: 0.5 * (1.0 / l).ln(), k, density: DEFAULT_DENSITY })
    }

    pub fn with_radius(l: f64, radius: f64, k: f64) -> Result<Self> {
        if !(l > 0.0) || !(radius > 0.0) {
            return Err(TubeError::Invalid("l and R must be positive".into()));
        }
        Ok(Self { l, radius, k, density: DEFAULT_DENSITY })
    }

    pub fn with_density(mut self, density: usize) -> Self {
        self.density = density.max(4);
        self
    }

    fn points(&self) -> usize {
        let n = (self.radius * self.density as f64).ceil() as usize;
        n.max(16) + n % 2
    }
}

/// g_{k}(r) = e^{ikr} φ(r/R) / √(2πlR).
pub fn mode(config: &TubeConfig, bump: &Bump, k: f64) -> RadialProfile {
    let amp = (2.0 * PI * config.l * config.radius).sqrt().recip();
    let r_max = config.radius;
    RadialProfile::sample(r_max, config.points(), |r| Complex64::from_polar(amp * bump.eval(r / r_max), k * r))
}

#[derive(Debug, Clone, Serialize)]
pub struct Quasimode {
    pub k: f64,
    pub l: f64,
    pub radius: f64,
    pub c_re: f64,
    pub c_im: f64,
    pub c_abs: f64,
    /// ‖ω′‖ by quadrature on the tube.
    pub norm: f64,
    /// ‖ω′‖ from ∫|e^{ikRs} − c|² φ² tanh(Rs) ds on the unit interval.
    pub norm_unit_interval: f64,
    /// ‖(δd − k²)ω′‖.
    pub residual: f64,
    /// |⟨ω′, dt⟩| / |⟨ω₀, dt⟩|.
    pub dt_defect: f64,
}

/// ω′ = ω_k − c ω₀ with c = ⟨ω_k, dt⟩/⟨ω₀, dt⟩.
pub fn quasimode(config: &TubeConfig, bump: &Bump) -> Result<Quasimode> {
    if config.k == 0.0 {
        return Err(TubeError::ZeroWavenumber);
    }
    let (k, l, radius) = (config.k, config.l, config.radius);
    let gk = mode(config, bump, k);
    let g0 = mode(config, bump, 0.0);
    let p0 = dt_pairing(&g0);
    let c = dt_pairing(&gk) / p0;
    let omega = gk.axpy(-c, &g0);
    let dt_defect = dt_pairing(&omega).norm() / p0.norm();
    let applied = sl_apply(&omega)?;
    let shifted = applied.axpy(Complex64::new(-k * k, 0.0), &omega);
    let n = config.points();
    let h = 1.0 / n as f64;
    let unit: Vec<f64> = (0..=n)
        .map(|i| {
            let s = i as f64 * h;
            (Complex64::from_polar(1.0, k * radius * s) - c).norm_sqr() * bump.eval(s).powi(2) * (radius * s).tanh()
        })
        .collect();
    Ok(Quasimode {
        k,
        l,
        radius,
        c_re: c.re,
        c_im: c.im,
        c_abs: c.norm(),
        norm: tube_norm(&omega, l).sqrt(),
        norm_unit_interval: simpson(&unit, h).sqrt(),
        residual: tube_norm(&shifted, l).sqrt(),
        dt_defect,
    })
}

pub const NORM_BAND: (f64, f64) = (0.5, 1.5);
pub const RESIDUAL_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Serialize)]
pub struct WavenumberVerdict {
    pub k: f64,
    pub supported: bool,
    pub residual_decreasing: bool,
    pub c_decreasing: bool,
    pub norms_in_band: bool,
    pub final_residual: f64,
    /// residual·R at the smallest l; the residual decays like this over R.
    pub decay_constant: f64,
    /// Core length at which residual·R / R reaches the threshold.
    pub l_for_threshold: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumScan {
    pub threshold: f64,
    pub rows: Vec<Quasimode>,
    pub verdicts: Vec<WavenumberVerdict>,
}

fn nonincreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

/// Quasimodes over k × l; k² counts as supported when the residual falls
/// monotonically below `threshold` with ‖ω′‖ inside the band throughout.
pub fn essential_spectrum_scan(k_list: &[f64], l_list: &[f64], density: usize, threshold: f64) -> Result<SpectrumScan> {
    if k_list.is_empty() || l_list.is_empty() {
        return Err(TubeError::Invalid("k and l lists must be nonempty".into()));
    }
    if k_list.contains(&0.0) {
        return Err(TubeError::ZeroWavenumber);
    }
    let bump = Bump::standard();
    let cells: Vec<(f64, f64)> = k_list.iter().flat_map(|&k| l_list.iter().map(move |&l| (k, l))).collect();
    let rows: Vec<Quasimode> = cells
        .par_iter()
        .map(|&(k, l)| quasimode(&TubeConfig::new(l, k)?.with_density(density), &bump))
        .collect::<Result<_>>()?;
    let verdicts = k_list
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let own = &rows[i * l_list.len()..(i + 1) * l_list.len()];
            let res: Vec<f64> = own.iter().map(|q| q.residual).collect();
            let cs: Vec<f64> = own.iter().map(|q| q.c_abs).collect();
            let last = own.last().unwrap();
            let decay_constant = last.residual * last.radius;
            let residual_decreasing = nonincreasing(&res);
            let norms_in_band = own.iter().all(|q| q.norm >= NORM_BAND.0 && q.norm <= NORM_BAND.1);
            WavenumberVerdict {
                k,
                supported: residual_decreasing && norms_in_band && last.residual < threshold,
                residual_decreasing,
                c_decreasing: nonincreasing(&cs),
                norms_in_band,
                final_residual: last.residual,
                decay_constant,
                l_for_threshold: (-2.0 * decay_constant / threshold).exp(),
            }
        })
        .collect();
    Ok(SpectrumScan { threshold, rows, verdicts })
}

pub fn write_scan_csv<W: std::io::Write>(rows: &[Quasimode], w: W) -> std::result::Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["k", "l", "R", "c_nk", "norm", "residual"])?;
    for q in rows {
        wr.write_record(&[
            q.k.to_string(),
            format!("{:e}", q.l),
            q.radius.to_string(),
            format!("{:e}", q.c_abs),
            q.norm.to_string(),
            q.residual.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_is_normalized_and_flat_at_ends() {
        let b = Bump::standard();
        assert!((b.l2_sq(100_000) - 1.0).abs() < 1e-8);
        for s in [1e-3, 1.0 - 1e-3] {
            assert!(b.eval(s) < 1e-300);
        }
        assert_eq!(b.eval(0.0), 0.0);
    }

    #[test]
    fn constant_plateau_is_annihilated() {
        let g = RadialProfile::sample(5.0, 500, |r| Complex64::new(if r > 0.5 { 3.0 } else { 0.0 }, 0.0));
        let lg = sl_apply(&g).unwrap();
        for j in 60..499 {
            assert!(lg.values[j].norm() < 1e-9, "{j}");
        }
    }

    #[test]
    fn sine_matches_symbolic_second_order() {
        // oracle: −(1/tanh r)(tanh r·g′)′ = −g″ − g′/(sinh r cosh r)
        let radius = 6.0;
        let exact = |r: f64| {
            let w = PI / radius;
            let (gp, gpp) = (w * (w * r).cos(), -w * w * (w * r).sin());
            -gpp - gp / (r.sinh() * r.cosh())
        };
        let err = |n: usize| {
            let g = RadialProfile::sample(radius, n, |r| Complex64::new((PI * r / radius).sin(), 0.0));
            let lg = sl_apply(&g).unwrap();
            (n / 6..n - n / 6).map(|j| (lg.values[j].re - exact(g.r(j))).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(300), err(600));
        assert!(e1 < 1e-3);
        assert!((e1 / e2 - 4.0).abs() < 0.3, "ratio {}", e1 / e2);
    }

    #[test]
    fn plane_wave_tends_to_k_squared() {
        let k = 1.5;
        let g = RadialProfile::sample(30.0, 6000, |r| Complex64::from_polar(1.0, k * r));
        let g = RadialProfile { values: { let mut v = g.values; v[0] = Complex64::new(0.0, 0.0); v }, ..g };
        let lg = sl_apply(&g).unwrap();
        let j = 5000;
        assert!((lg.values[j] - k * k * g.values[j]).norm() < 1e-3);
    }

    #[test]
    fn norm_of_constant_and_homogeneity() {
        let (l, radius) = (0.01, 4.0);
        let one = RadialProfile::sample(radius, 4000, |_| Complex64::new(1.0, 0.0));
        let expected = 2.0 * PI * l * radius.cosh().ln();
        assert!((tube_norm(&one, l) - expected).abs() < 1e-9);
        let zero = one.scale(Complex64::new(0.0, 0.0));
        assert_eq!(tube_norm(&zero, l), 0.0);
        let a = Complex64::new(0.3, -2.0);
        assert!((tube_norm(&one.scale(a), l) - a.norm_sqr() * expected).abs() < 1e-9);
    }

    #[test]
    fn mode_is_nearly_unit() {
        let b = Bump::standard();
        let cfg = TubeConfig::new(1e-8, 1.0).unwrap();
        let n = tube_norm(&mode(&cfg, &b, 1.0), cfg.l);
        assert!((n - 1.0).abs() < 0.05, "{n}");
    }

    fn bump_derivative(b: &Bump, s: f64) -> f64 {
        if s <= 0.0 || s >= 1.0 {
            return 0.0;
        }
        b.eval(s) * (1.0 - 2.0 * s) / (s * (1.0 - s)).powi(2)
    }

    #[test]
    fn c_matches_unit_interval_midpoint_oracle() {
        let b = Bump::standard();
        for (l, k) in [(1e-4, 1.0), (1e-8, 1.0), (1e-6, 2.0)] {
            let q = quasimode(&TubeConfig::new(l, k).unwrap(), &b).unwrap();
            let radius = 0.5 * (1.0 / l).ln();
            let n = 200_000;
            let (mut num, mut den) = (Complex64::new(0.0, 0.0), 0.0);
            for i in 0..n {
                let s = (i as f64 + 0.5) / n as f64;
                let w = b.eval(s) * (radius * s).tanh();
                num += Complex64::from_polar(w, k * radius * s);
                den += w;
            }
            let c = num / den;
            assert!((q.c_re - c.re).abs() < 1e-8 && (q.c_im - c.im).abs() < 1e-8, "{l} {k}");
            assert!((q.norm - q.norm_unit_interval).abs() < 1e-6);
            assert!(q.dt_defect < 1e-6);
        }
    }

    #[test]
    fn residual_decays_like_two_k_phi_prime_over_r() {
        // leading term of (δd − k²)ω_k is −2ik φ′(r/R) e^{ikr}/R, so
        // residual·R → 2k‖φ′‖
        let b = Bump::standard();
        let n = 400_000;
        let dphi = ((0..n).map(|i| bump_derivative(&b, (i as f64 + 0.5) / n as f64).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!(dphi > PI);
        for k in [1.0, 2.0] {
            let q = quasimode(&TubeConfig::new(1e-40, k).unwrap(), &b).unwrap();
            let ratio = q.residual * q.radius / (2.0 * k * dphi);
            assert!((ratio - 1.0).abs() < 0.03, "k {k}: {ratio}");
        }
    }

    #[test]
    fn refinement_is_stable() {
        let b = Bump::standard();
        let cfg = TubeConfig::new(1e-8, 1.0).unwrap();
        let a = quasimode(&cfg.with_density(200), &b).unwrap();
        let c = quasimode(&cfg.with_density(400), &b).unwrap();
        assert!((a.residual - c.residual).abs() / c.residual < 0.05);
    }

    #[test]
    fn zero_wavenumber() {
        let b = Bump::standard();
        let cfg = TubeConfig::new(1e-4, 0.0).unwrap();
        assert_eq!(quasimode(&cfg, &b).unwrap_err(), TubeError::ZeroWavenumber);
        assert!(dt_pairing(&mode(&cfg, &b, 0.0)).norm() > 0.1);
    }

    #[test]
    fn origin_support_rejected() {
        let g = RadialProfile::sample(1.0, 10, |_| Complex64::new(1.0, 0.0));
        assert!(matches!(sl_apply(&g), Err(TubeError::SupportTouchesOrigin { .. })));
    }

    #[test]
    fn scan_rejects_empty_lists() {
        assert!(essential_spectrum_scan(&[1.0], &[], 100, RESIDUAL_THRESHOLD).is_err());
        assert!(essential_spectrum_scan(&[], &[1e-4], 100, RESIDUAL_THRESHOLD).is_err());
    }
}
