//! Limiting covariance kernel of the centered spiked-eigenvalue process.
//!
//! For spikes `α_{k′}` observed at time `s` and `α_k` observed at time `t`, six
//! scalar coefficients determine the covariance of the Gaussian entries `r_ij`.
//! The kernels of the limiting processes `G` (known baseline) and `H`
//! (estimated baseline) are assembled from them.

use std::sync::Arc;

use dashmap::DashMap;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{domain, Error, Result};
use crate::mp::{self, Spike, SpikeLocation};

/// The coefficients `(τ, ψ, κ, ζ, ω, θ)` at one `(s, t, k, k′)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelCoefficients {
    pub tau: f64,
    pub psi: f64,
    pub kappa: f64,
    pub zeta: f64,
    pub omega: f64,
    pub theta: f64,
}

/// Coefficients for spike `kprime` observed at `s` and spike `k` observed at `t`.
pub fn coefficients(s: f64, t: f64, k: &Spike, kprime: &Spike, y: f64) -> Result<KernelCoefficients> {
    let at_s = SpikeLocation::new(kprime.alpha, y, s)?;
    let at_t = SpikeLocation::new(k.alpha, y, t)?;
    Ok(coefficients_at(&at_s, &at_t, y))
}

pub(crate) fn coefficients_at(a: &SpikeLocation, b: &SpikeLocation, y: f64) -> KernelCoefficients {
    let (s, t) = (a.t, b.t);
    let u = s.min(t);
    let tau = u - u * y * ((1.0 + b.lambda * b.m) / t + (1.0 + a.lambda * a.m) / s);
    let psi = u * y * y * a.lambda * a.m * b.lambda * b.m
        / (a.lambda * b.lambda * (1.0 + y * a.m) * (1.0 + y * b.m));
    let cross = a.lambda * b.lambda * a.m_dual * b.m_dual * a.m * b.m;
    let kappa = u * y * a.m * b.m / (1.0 - u * y * cross);
    let zeta = 1.0 + y * a.lambda * a.m_dual * a.m + y * b.lambda * b.m_dual * b.m + y * y * cross;
    let omega = tau + psi;
    let theta = tau + u * zeta * (y * y * a.m * b.m + kappa * zeta);
    KernelCoefficients { tau, psi, kappa, zeta, omega, theta }
}

/// `ω` and `θ` written through `m₁` instead of `m`, as they arise when the
/// trace limits are multiplied out. Only `omega` and `theta` (and `tau`) are
/// meaningful in the returned value; `psi` is recovered as `ω − τ`.
pub fn coefficients_expanded(s: f64, t: f64, k: &Spike, kprime: &Spike, y: f64) -> Result<KernelCoefficients> {
    let (la, lb) = (mp::phi(kprime.alpha, y, s)?, mp::phi(k.alpha, y, t)?);
    let (ma, mb) = (mp::m_stieltjes(kprime.alpha, y, s)?, mp::m_stieltjes(k.alpha, y, t)?);
    let (mda, mdb) = (mp::m_dual(kprime.alpha, y, s)?, mp::m_dual(k.alpha, y, t)?);
    let (m1a, m1b) = (mp::m1(kprime.alpha, y, s)?, mp::m1(k.alpha, y, t)?);
    let u = s.min(t);

    let base = u - u * y * ((1.0 + lb * mb) / t + (1.0 + la * ma) / s);
    let diag_product = u * y * y * (1.0 + m1a) * (1.0 + m1b)
        / ((la - y * (1.0 + m1a)) * (lb - y * (1.0 + m1b)));
    let omega = base + diag_product;

    let bracket = 1.0 + y * la * mda * ma + y * lb * mdb * mb + y * y * la * lb * mda * mdb * ma * mb;
    let resolvent_pair = u * y * ma * mb / (1.0 - u * y * lb * la * mda * mdb * ma * mb);
    let theta = base + u * (y * y * ma * mb + resolvent_pair * bracket) * bracket;

    Ok(KernelCoefficients {
        tau: base,
        psi: omega - base,
        kappa: resolvent_pair,
        zeta: bracket,
        omega,
        theta,
    })
}

/// Second and fourth moments of the spiked block `ξ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentInputs {
    /// Row-major `M × M` covariance `Σ`.
    pub sigma: Vec<f64>,
    /// `E[ξ(i)ξ(j)ξ(m)ξ(l)]` stored at `((i·M + j)·M + m)·M + l`.
    pub fourth: Vec<f64>,
    pub dim: usize,
}

impl MomentInputs {
    pub fn new(dim: usize, sigma: Vec<f64>, fourth: Vec<f64>) -> Result<Self> {
        if dim == 0 || sigma.len() != dim * dim || fourth.len() != dim.pow(4) {
            return Err(Error::Dimension(format!(
                "moment inputs for M = {dim} need {} second and {} fourth moments (got {} and {})",
                dim * dim,
                dim.pow(4),
                sigma.len(),
                fourth.len()
            )));
        }
        let mom = Self { sigma, fourth, dim };
        mom.validate()?;
        Ok(mom)
    }

    /// Gaussian moments (Isserlis) for an arbitrary covariance.
    pub fn gaussian(dim: usize, sigma: Vec<f64>) -> Result<Self> {
        if sigma.len() != dim * dim {
            return Err(Error::Dimension(format!("sigma must be {dim} x {dim}")));
        }
        let s = |a: usize, b: usize| sigma[a * dim + b];
        let mut fourth = vec![0.0; dim.pow(4)];
        for i in 0..dim {
            for j in 0..dim {
                for m in 0..dim {
                    for l in 0..dim {
                        fourth[((i * dim + j) * dim + m) * dim + l] =
                            s(i, j) * s(m, l) + s(i, m) * s(j, l) + s(i, l) * s(j, m);
                    }
                }
            }
        }
        Self::new(dim, sigma, fourth)
    }

    /// Independent Gaussian coordinates with variances `alphas`.
    pub fn gaussian_diagonal(alphas: &[f64]) -> Result<Self> {
        let dim = alphas.len();
        let mut sigma = vec![0.0; dim * dim];
        for (i, a) in alphas.iter().enumerate() {
            sigma[i * dim + i] = *a;
        }
        Self::gaussian(dim, sigma)
    }

    pub fn sigma(&self, i: usize, j: usize) -> f64 {
        self.sigma[i * self.dim + j]
    }

    pub fn fourth(&self, i: usize, j: usize, m: usize, l: usize) -> f64 {
        self.fourth[((i * self.dim + j) * self.dim + m) * self.dim + l]
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim;
        let scale = self.sigma.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        for i in 0..d {
            for j in 0..d {
                if (self.sigma(i, j) - self.sigma(j, i)).abs() > 1e-10 * scale {
                    return Err(domain(format!("sigma is not symmetric at ({i}, {j})")));
                }
            }
        }
        let min_eig = DMatrix::from_row_slice(d, d, &self.sigma)
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |a, v| a.min(*v));
        if min_eig < -1e-10 * scale {
            return Err(domain(format!("sigma is not positive semidefinite (eigenvalue {min_eig})")));
        }
        let fscale = self.fourth.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        for i in 0..d {
            for j in 0..d {
                for m in 0..d {
                    for l in 0..d {
                        let v = self.fourth(i, j, m, l);
                        for w in [self.fourth(j, i, m, l), self.fourth(m, l, i, j), self.fourth(i, m, j, l)] {
                            if (v - w).abs() > 1e-9 * fscale {
                                return Err(domain(format!(
                                    "fourth moments are not symmetric at ({i}, {j}, {m}, {l})"
                                )));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Moments of `Uᵀξ`, where the columns of `U` are eigenvectors of `Σ` sorted by
    /// decreasing eigenvalue. Returns the eigenvalues alongside.
    pub fn in_eigenbasis(&self) -> (Vec<f64>, MomentInputs) {
        let d = self.dim;
        let eig = DMatrix::from_row_slice(d, d, &self.sigma).symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let u = DMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, order[c])]);
        let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

        let mut sigma = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                let mut acc = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        acc += u[(i, a)] * u[(j, b)] * self.sigma(i, j);
                    }
                }
                sigma[a * d + b] = acc;
            }
        }
        // one index at a time: O(M⁵)
        let mut cur = self.fourth.clone();
        for axis in 0..4 {
            let mut next = vec![0.0; cur.len()];
            for idx in 0..cur.len() {
                let mut digits = [idx / (d * d * d), (idx / (d * d)) % d, (idx / d) % d, idx % d];
                let target = digits[axis];
                let mut acc = 0.0;
                for src in 0..d {
                    digits[axis] = src;
                    let flat = ((digits[0] * d + digits[1]) * d + digits[2]) * d + digits[3];
                    acc += u[(src, target)] * cur[flat];
                }
                next[idx] = acc;
            }
            cur = next;
        }
        (values, MomentInputs { sigma, fourth: cur, dim: d })
    }
}

/// `cov(r_ij at (k′, s), r_ml at (k, t))`; indices are 0-based coordinates of `ξ`.
#[allow(clippy::too_many_arguments)]
pub fn r_covariance(
    (i, j, m, l): (usize, usize, usize, usize),
    k: &Spike,
    kprime: &Spike,
    s: f64,
    t: f64,
    mom: &MomentInputs,
    y: f64,
) -> Result<f64> {
    let d = mom.dim;
    if [i, j, m, l].iter().any(|&x| x >= d) {
        return Err(Error::Dimension(format!("index out of range for M = {d}: ({i}, {j}, {m}, {l})")));
    }
    let c = coefficients(s, t, k, kprime, y)?;
    Ok(r_covariance_with(&c, (i, j, m, l), mom))
}

fn r_covariance_with(c: &KernelCoefficients, (i, j, m, l): (usize, usize, usize, usize), mom: &MomentInputs) -> f64 {
    c.omega * (mom.fourth(i, j, m, l) - mom.sigma(i, j) * mom.sigma(m, l))
        + (c.theta - c.omega) * (mom.sigma(i, m) * mom.sigma(j, l) + mom.sigma(i, l) * mom.sigma(j, m))
}

type CacheKey = (u64, u64, usize, usize);

/// Covariance function of the limiting processes `G` (scale 1) or `H` (scale 2).
///
/// `eval(k, k′, s, t) = cov(X_{k,s}, X_{k′,t})` with 0-based spike indices.
#[derive(Debug, Clone)]
pub struct GKernel {
    alphas: Vec<f64>,
    y: f64,
    t0: f64,
    moments: MomentInputs,
    scale: f64,
    cache: Arc<DashMap<CacheKey, KernelCoefficients>>,
}

impl GKernel {
    /// Kernel of `G`. `moments` are rotated into the eigenbasis of their `Σ`, so
    /// spike `k` pairs with the `k`-th largest eigenvalue of `Σ`.
    pub fn new(alphas: &[f64], y: f64, t0: f64, moments: &MomentInputs) -> Result<Self> {
        if alphas.is_empty() {
            return Err(domain("at least one spike is required"));
        }
        if moments.dim != alphas.len() {
            return Err(Error::Dimension(format!(
                "{} spikes but moments of dimension {}",
                alphas.len(),
                moments.dim
            )));
        }
        for w in alphas.windows(2) {
            if !(w[0] > w[1]) {
                return Err(domain("spikes must be strictly decreasing (simple multiplicities)"));
            }
        }
        for (k, &a) in alphas.iter().enumerate() {
            if !mp::is_supercritical(a, y, t0) {
                return Err(domain(format!("spike {} = {a} is not supercritical at t0 = {t0}", k + 1)));
            }
        }
        let (_, rotated) = moments.in_eigenbasis();
        Ok(Self {
            alphas: alphas.to_vec(),
            y,
            t0,
            moments: rotated,
            scale: 1.0,
            cache: Arc::new(DashMap::new()),
        })
    }

    /// Kernel of `H`, the difference of two independent copies of `G`.
    pub fn doubled(&self) -> Self {
        Self {
            scale: 2.0 * self.scale,
            ..self.clone()
        }
    }

    /// Same kernel multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            scale: factor * self.scale,
            ..self.clone()
        }
    }

    pub fn spikes(&self) -> &[f64] {
        &self.alphas
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn moments(&self) -> &MomentInputs {
        &self.moments
    }

    fn coeffs(&self, k: usize, s: f64, kp: usize, t: f64) -> Result<KernelCoefficients> {
        let key = (s.to_bits(), t.to_bits(), k, kp);
        if let Some(c) = self.cache.get(&key) {
            return Ok(*c);
        }
        let a = SpikeLocation::new(self.alphas[k], self.y, s)?;
        let b = SpikeLocation::new(self.alphas[kp], self.y, t)?;
        let c = coefficients_at(&a, &b, self.y);
        self.cache.insert(key, c);
        Ok(c)
    }

    /// Normalizer `1 + y·m₃·α` of spike `k` at time `t`.
    pub fn normalizer(&self, k: usize, t: f64) -> Result<f64> {
        let a = self.alphas[k];
        let v = 1.0 + self.y * mp::m3(a, self.y, t)? * a;
        if v == 0.0 || !v.is_finite() {
            return Err(domain(format!("normalizer 1 + y m3 alpha vanishes for spike {} at t = {t}", k + 1)));
        }
        Ok(v)
    }

    pub fn eval(&self, k: usize, kp: usize, s: f64, t: f64) -> Result<f64> {
        let m = self.alphas.len();
        if k >= m || kp >= m {
            return Err(Error::Dimension(format!("spike index out of range for M = {m}")));
        }
        if !(s >= self.t0 && s <= 1.0 && t >= self.t0 && t <= 1.0) {
            return Err(domain(format!("times ({s}, {t}) outside [{}, 1]", self.t0)));
        }
        let c = self.coeffs(k, s, kp, t)?;
        let r = r_covariance_with(&c, (k, k, kp, kp), &self.moments);
        Ok(self.scale * r / (self.normalizer(k, s)? * self.normalizer(kp, t)?))
    }

    /// Hex SHA-256 digest of every input that determines the kernel.
    pub fn digest(&self) -> String {
        let payload = serde_json::json!({
            "alphas": self.alphas,
            "y": self.y,
            "t0": self.t0,
            "scale": self.scale,
            "sigma": self.moments.sigma,
            "fourth": self.moments.fourth,
        });
        hex::encode(Sha256::digest(payload.to_string().as_bytes()))
    }
}

/// Kernel of `G` for a model with concrete moments.
pub fn g_kernel(alphas: &[f64], y: f64, t0: f64, mom: &MomentInputs) -> Result<GKernel> {
    GKernel::new(alphas, y, t0, mom)
}

/// Kernel of `H = G − G⁰`, twice the kernel of `G`.
pub fn h_kernel(alphas: &[f64], y: f64, t0: f64, mom: &MomentInputs) -> Result<GKernel> {
    Ok(GKernel::new(alphas, y, t0, mom)?.doubled())
}
