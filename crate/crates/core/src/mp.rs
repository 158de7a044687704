//! Marčenko–Pastur quantities evaluated at the almost-sure location of a
//! supercritical sample spike.
//!
//! Throughout, `F_{y/t}` denotes the Marčenko–Pastur law with ratio `y/t`
//! rescaled by `t`, i.e. the limiting spectrum of `(1/n) Σ_{i ≤ ⌊nt⌋} η_i η_iᵀ`.
//! The Stieltjes transform convention is `m(λ) = ∫ dF(x) / (x − λ)`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Spikes closer than this to the subcritical interval are rejected.
pub const SUPERCRITICAL_MARGIN: f64 = 1e-6;

/// Limiting and finite-sample dimension-to-sample-size ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AspectRatio {
    /// Limit of `p/n`.
    pub y: f64,
    /// Observed `p/n`.
    pub y_n: f64,
}

impl AspectRatio {
    pub fn new(y: f64, y_n: f64) -> Result<Self> {
        for (name, v) in [("y", y), ("y_n", y_n)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(domain(format!("{name} = {v} must lie in (0, 1)")));
            }
        }
        Ok(Self { y, y_n })
    }

    /// Ratio built from a noise dimension and sample size, using `p/n` for both fields.
    pub fn from_dims(p: usize, n: usize) -> Result<Self> {
        let r = p as f64 / n as f64;
        Self::new(r, r)
    }
}

/// A monitoring time `t` in `[t0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimePoint {
    pub t: f64,
    pub t0: f64,
}

impl TimePoint {
    pub fn new(t: f64, t0: f64) -> Result<Self> {
        if !(t0 > 0.0 && t0 < 1.0) {
            return Err(domain(format!("t0 = {t0} must lie in (0, 1)")));
        }
        if !(t >= t0 && t <= 1.0) {
            return Err(domain(format!("t = {t} must lie in [t0, 1] = [{t0}, 1]")));
        }
        Ok(Self { t, t0 })
    }

    /// Effective ratio `y/t` of the first `⌊nt⌋` observations.
    pub fn scaled_ratio(&self, y: f64) -> f64 {
        y / self.t
    }
}

/// A population spiked eigenvalue together with its (1-based) rank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spike {
    pub alpha: f64,
    pub index: usize,
}

impl Spike {
    pub fn new(alpha: f64, index: usize) -> Result<Self> {
        if index == 0 {
            return Err(domain("spike indices are 1-based"));
        }
        if !alpha.is_finite() || alpha == 0.0 || alpha == 1.0 {
            return Err(domain(format!("spike value {alpha} must be finite and not in {{0, 1}}")));
        }
        Ok(Self { alpha, index })
    }

    pub fn is_supercritical(&self, y: f64, t0: f64) -> bool {
        is_supercritical(self.alpha, y, t0)
    }
}

/// Closed interval `[1 − √(y/t0), 1 + √(y/t0)]` of subcritical spike values.
pub fn phase_interval(y: f64, t0: f64) -> Result<(f64, f64)> {
    if !(y >= 0.0 && t0 > 0.0) || !(y / t0).is_finite() {
        return Err(domain(format!("phase interval needs y >= 0 and t0 > 0 (y = {y}, t0 = {t0})")));
    }
    let r = (y / t0).sqrt();
    Ok((1.0 - r, 1.0 + r))
}

/// True when `alpha` lies outside the phase interval at `(y, t)` by at least
/// [`SUPERCRITICAL_MARGIN`].
pub fn is_supercritical(alpha: f64, y: f64, t: f64) -> bool {
    match phase_interval(y, t) {
        Ok((lo, hi)) => alpha >= hi + SUPERCRITICAL_MARGIN || alpha <= lo - SUPERCRITICAL_MARGIN,
        Err(_) => false,
    }
}

fn require_supercritical(alpha: f64, y: f64, t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(domain(format!("t = {t} must lie in (0, 1]")));
    }
    if !(y > 0.0) {
        return Err(domain(format!("y = {y} must be positive")));
    }
    if alpha == 0.0 {
        return Err(domain("spike value 0 is excluded"));
    }
    if !is_supercritical(alpha, y, t) {
        let (lo, hi) = phase_interval(y, t)?;
        return Err(domain(format!(
            "spike {alpha} is not supercritical at y = {y}, t = {t} (phase interval [{lo}, {hi}])"
        )));
    }
    Ok(())
}

/// Almost-sure limit `tα + yα/(α − 1)` of the sample spike of `S_{n,t}`.
pub fn phi(alpha: f64, y: f64, t: f64) -> Result<f64> {
    if alpha == 1.0 {
        return Err(domain("the bias map has a pole at alpha = 1"));
    }
    Ok(t * alpha + y * alpha / (alpha - 1.0))
}

/// Finite-sample centering `tα + y_n α/(α − 1)`.
pub fn phi_n(alpha: f64, y_n: f64, t: f64) -> Result<f64> {
    phi(alpha, y_n, t)
}

/// Supercritical preimage of an observed full-sample eigenvalue under `phi_n(·, y_n, 1)`.
pub fn invert_phi(lambda_obs: f64, y_n: f64) -> Result<f64> {
    let b = lambda_obs + 1.0 - y_n;
    let disc = b * b - 4.0 * lambda_obs;
    if !(disc >= 0.0) {
        return Err(domain(format!(
            "eigenvalue {lambda_obs} has no supercritical preimage at y_n = {y_n} (discriminant {disc})"
        )));
    }
    Ok((b + disc.sqrt()) / 2.0)
}

/// `m₁(λ) = ∫ x/(λ − x) dF_{y/t}` at `λ = phi(α, y, t)`.
pub fn m1(alpha: f64, y: f64, t: f64) -> Result<f64> {
    require_supercritical(alpha, y, t)?;
    checked_div(1.0, alpha - 1.0, "m1")
}

/// `m₃(λ) = ∫ x/(λ − x)² dF_{y/t}` at `λ = phi(α, y, t)`.
pub fn m3(alpha: f64, y: f64, t: f64) -> Result<f64> {
    require_supercritical(alpha, y, t)?;
    let d = t * (alpha - 1.0).powi(2) - y;
    checked_div(1.0, d, "m3")
}

/// Stieltjes transform of `F_{y/t}` at `λ = phi(α, y, t)`.
pub fn m_stieltjes(alpha: f64, y: f64, t: f64) -> Result<f64> {
    require_supercritical(alpha, y, t)?;
    let d = (alpha - 1.0) * t + y;
    checked_div(-1.0, d, "m")
}

/// Companion Stieltjes transform at `λ = phi(α, y, t)`.
pub fn m_dual(alpha: f64, y: f64, t: f64) -> Result<f64> {
    require_supercritical(alpha, y, t)?;
    checked_div(-1.0, t * alpha, "companion m")
}

fn checked_div(num: f64, den: f64, what: &str) -> Result<f64> {
    let v = num / den;
    if den == 0.0 || !v.is_finite() {
        return Err(domain(format!("{what}: vanishing denominator")));
    }
    Ok(v)
}

/// All Marčenko–Pastur quantities at one `(α, y, t)` evaluation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeLocation {
    pub alpha: f64,
    pub t: f64,
    /// `λ_{k,t} = phi(α, y, t)`.
    pub lambda: f64,
    pub m: f64,
    pub m_dual: f64,
    pub m1: f64,
    pub m3: f64,
}

impl SpikeLocation {
    pub fn new(alpha: f64, y: f64, t: f64) -> Result<Self> {
        Ok(Self {
            alpha,
            t,
            lambda: phi(alpha, y, t)?,
            m: m_stieltjes(alpha, y, t)?,
            m_dual: m_dual(alpha, y, t)?,
            m1: m1(alpha, y, t)?,
            m3: m3(alpha, y, t)?,
        })
    }
}

// Gauss–Kronrod 7/15 nodes and weights on [-1, 1] (QUADPACK qk15).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const QUAD_ABS_TOL: f64 = 1e-9;
const QUAD_MAX_INTERVALS: usize = 4000;

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Globally adaptive Gauss–Kronrod integration of `f` over `[a, b]`.
pub(crate) fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64) -> Result<f64> {
    let (v, e) = gk15(&f, a, b);
    let mut pieces = vec![(a, b, v, e)];
    loop {
        let total_err: f64 = pieces.iter().map(|p| p.3).sum();
        if total_err <= abs_tol {
            return Ok(pieces.iter().map(|p| p.2).sum());
        }
        if pieces.len() >= QUAD_MAX_INTERVALS {
            return Err(Error::NonConvergence(format!(
                "quadrature error estimate {total_err:.3e} above {abs_tol:.1e} after {} subintervals",
                pieces.len()
            )));
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .expect("non-empty");
        let (lo, hi, _, _) = pieces.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        if !(v1.is_finite() && v2.is_finite()) {
            return Err(Error::NonConvergence("integrand is not finite on the support".into()));
        }
        pieces.push((lo, mid, v1, e1));
        pieces.push((mid, hi, v2, e2));
    }
}

/// `∫ g dF_{y_t}` where `F_{y_t}(x) = F̃_{y_t}(x/t)` is the Marčenko–Pastur law with
/// ratio `y_t` rescaled by `t`. Includes the atom `(1 − 1/y_t)⁺` at zero.
///
/// The continuous part is integrated in the angle `θ` of
/// `x = t(1 + y_t + 2√y_t cos θ)`, which removes the square-root edges of the density.
pub fn mp_integral(g: impl Fn(f64) -> f64, y_t: f64, t: f64) -> Result<f64> {
    if !(y_t > 0.0 && y_t.is_finite()) || !(t > 0.0) {
        return Err(domain(format!("mp_integral needs y_t > 0 and t > 0 (y_t = {y_t}, t = {t})")));
    }
    let sq = y_t.sqrt();
    let integrand = |theta: f64| {
        let u = 1.0 + y_t + 2.0 * sq * theta.cos();
        let s = theta.sin();
        g(t * u) * 2.0 * s * s / (std::f64::consts::PI * u)
    };
    let continuous = integrate(integrand, 0.0, std::f64::consts::PI, QUAD_ABS_TOL)?;
    let atom = (1.0 - 1.0 / y_t).max(0.0);
    Ok(if atom > 0.0 { continuous + atom * g(0.0) } else { continuous })
}

/// Support `[t(1 − √y_t)², t(1 + √y_t)²]` of the continuous part of `F_{y_t}`.
pub fn mp_support(y_t: f64, t: f64) -> (f64, f64) {
    let sq = y_t.sqrt();
    (t * (1.0 - sq).powi(2), t * (1.0 + sq).powi(2))
}
