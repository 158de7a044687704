//! Tests for a change in the spiked eigenvalues: against known baseline spikes
//! (`M_n`, `S_n`) and against an independent initial sample (`M̂_n`, `Ŝ_n`).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::{GKernel, MomentInputs};
use crate::mp::{self, AspectRatio};
use crate::quantile::{build_grid_covariance, simulate_sup_quantiles, GridSpec, QuantileTable};
use crate::spectrum::{centered_sup, eigen_path, path_difference_sup, DataMatrix, EigenPath, SupSummary};

/// Where the fourth-moment inputs of the limiting kernel come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentSource {
    /// Independent Gaussian spiked coordinates with variances equal to the spikes.
    GaussianDiagonal,
    Given(MomentInputs),
    EstimateFromInitialSample,
}

/// Baseline model under the null hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Baseline spikes, strictly decreasing.
    pub alphas: Vec<f64>,
    pub ratio: AspectRatio,
    pub t0: f64,
    pub moments: MomentSource,
}

impl ModelSpec {
    pub fn new(alphas: Vec<f64>, ratio: AspectRatio, t0: f64, moments: MomentSource) -> Result<Self> {
        let spec = Self { alphas, ratio, t0, moments };
        spec.validate()?;
        Ok(spec)
    }

    /// Known-spike model with Gaussian moments for data of dimension `n × (M + p)`.
    pub fn gaussian(alphas: Vec<f64>, n: usize, p: usize, t0: f64) -> Result<Self> {
        Self::new(alphas, AspectRatio::from_dims(p, n)?, t0, MomentSource::GaussianDiagonal)
    }

    pub fn m(&self) -> usize {
        self.alphas.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(Error::Config("at least one spike is required".into()));
        }
        if !(self.t0 > 0.0 && self.t0 < 1.0) {
            return Err(Error::Config(format!("t0 = {} must lie in (0, 1)", self.t0)));
        }
        if let Some(w) = self.alphas.windows(2).find(|w| !(w[0] > w[1])) {
            return Err(Error::Config(format!("spikes must be strictly decreasing ({} then {})", w[0], w[1])));
        }
        for (k, &a) in self.alphas.iter().enumerate() {
            if !mp::is_supercritical(a, self.ratio.y, self.t0) {
                let (lo, hi) = mp::phase_interval(self.ratio.y, self.t0)?;
                return Err(Error::Domain(format!(
                    "spike {} = {a} lies in the subcritical interval [{lo}, {hi}] at t0 = {}",
                    k + 1,
                    self.t0
                )));
            }
        }
        if let MomentSource::Given(m) = &self.moments {
            if m.dim != self.alphas.len() {
                return Err(Error::Dimension(format!(
                    "moments of dimension {} for {} spikes",
                    m.dim,
                    self.alphas.len()
                )));
            }
        }
        Ok(())
    }

    /// Kernel of the limiting process `G` for this model.
    pub fn kernel(&self) -> Result<GKernel> {
        let mom = match &self.moments {
            MomentSource::GaussianDiagonal => MomentInputs::gaussian_diagonal(&self.alphas)?,
            MomentSource::Given(m) => m.clone(),
            MomentSource::EstimateFromInitialSample => {
                return Err(Error::Config("moments must be estimated from an initial sample first".into()))
            }
        };
        GKernel::new(&self.alphas, self.ratio.y, self.t0, &mom)
    }
}

/// Settings for simulating critical values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileOptions {
    pub grid: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for QuantileOptions {
    fn default() -> Self {
        Self { grid: crate::quantile::DEFAULT_GRID, replicates: 10_000, seed: 0 }
    }
}

/// Quantile table for the known-spike statistics at confidence `1 − level`.
pub fn known_quantiles(spec: &ModelSpec, level: f64, opts: &QuantileOptions) -> Result<QuantileTable> {
    let kernel = spec.kernel()?;
    let grid = GridSpec::uniform(spec.t0, opts.grid)?;
    let cov = build_grid_covariance(&kernel, &grid)?;
    simulate_sup_quantiles(&cov, &[1.0 - level], opts.replicates, opts.seed)
}

/// Outcome of one test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic_max: f64,
    pub statistic_sum: f64,
    pub critical_max: f64,
    pub critical_sum: f64,
    pub reject_max: bool,
    pub reject_sum: bool,
    pub level: f64,
    /// Smallest time attaining the max-type supremum.
    pub argmax_t: f64,
    /// 1-based spike attaining the max-type supremum.
    pub argmax_spike: usize,
    /// Smallest time attaining the sum-type supremum.
    pub argmax_t_sum: f64,
    /// Monte Carlo tail fractions `[p_max, p_sum]`; empty when the table carries no samples.
    pub mc_p_values: Vec<f64>,
    pub version: String,
    pub input_digest: String,
    pub config_echo: serde_json::Value,
}

impl TestReport {
    pub fn rejects(&self) -> bool {
        self.reject_max || self.reject_sum
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Hex SHA-256 of the raw entries of a data matrix (column-major, little endian).
pub fn data_digest(data: &DataMatrix) -> String {
    let mut h = Sha256::new();
    h.update((data.n() as u64).to_le_bytes());
    h.update((data.d() as u64).to_le_bytes());
    for v in data.matrix().iter() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("level = {level} must lie in (0, 1)")));
    }
    Ok(())
}

fn noise_dim(data: &DataMatrix, m: usize) -> Result<usize> {
    if data.d() <= m {
        return Err(Error::Dimension(format!(
            "data has {} coordinates, need more than M = {m}",
            data.d()
        )));
    }
    Ok(data.d() - m)
}

fn report(
    sup: &SupSummary,
    table: &QuantileTable,
    level: f64,
    input_digest: String,
    config_echo: serde_json::Value,
) -> Result<TestReport> {
    let (critical_max, critical_sum) = table.critical_values(1.0 - level)?;
    let (statistic_max, statistic_sum) = (sup.max.value, sup.sum.value);
    let mc_p_values = table
        .p_values(statistic_max, statistic_sum)
        .map_or_else(Vec::new, |(a, b)| vec![a, b]);
    Ok(TestReport {
        statistic_max,
        statistic_sum,
        critical_max,
        critical_sum,
        reject_max: statistic_max > critical_max,
        reject_sum: statistic_sum > critical_sum,
        level,
        argmax_t: sup.max.t,
        argmax_spike: sup.argmax_spike + 1,
        argmax_t_sum: sup.sum.t,
        mc_p_values,
        version: env!("CARGO_PKG_VERSION").to_string(),
        input_digest,
        config_echo,
    })
}

fn table_echo(table: &QuantileTable) -> serde_json::Value {
    serde_json::json!({
        "levels": table.levels,
        "q_max": table.q_max,
        "q_sum": table.q_sum,
        "replicates": table.replicates,
        "seed": table.seed,
        "kernel_hash": table.kernel_hash,
    })
}

/// Statistics `M_n`, `S_n` of `data` against the baseline spikes of `spec`.
pub fn known_statistics(data: &DataMatrix, spec: &ModelSpec) -> Result<SupSummary> {
    spec.validate()?;
    let p = noise_dim(data, spec.m())?;
    let y_n = p as f64 / data.n() as f64;
    let path = eigen_path(data, spec.t0, spec.m())?;
    centered_sup(&path, &spec.alphas, y_n, spec.t0)
}

/// Known-baseline test: rejects when `M_n` (resp. `S_n`) exceeds its `1 − level` quantile.
pub fn test_known(data: &DataMatrix, spec: &ModelSpec, level: f64, quantiles: &QuantileTable) -> Result<TestReport> {
    check_level(level)?;
    let sup = known_statistics(data, spec)?;
    let echo = serde_json::json!({
        "mode": "known",
        "model": spec,
        "n": data.n(),
        "d": data.d(),
        "quantiles": table_echo(quantiles),
    });
    report(&sup, quantiles, level, data_digest(data), echo)
}

/// Top-`m` eigenvalues of the full-sample covariance `(1/N) Σ x_i x_iᵀ`.
pub fn full_sample_spikes(data: &DataMatrix, m: usize) -> Result<Vec<f64>> {
    if m == 0 || m > data.d().min(data.n()) {
        return Err(Error::Dimension(format!("cannot take {m} eigenvalues of a {} x {} sample", data.n(), data.d())));
    }
    let x = data.matrix();
    let a = if data.n() < data.d() { x * x.transpose() } else { x.transpose() * x } / data.n() as f64;
    let mut ev: Vec<f64> = a.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev.truncate(m);
    Ok(ev)
}

/// `α̂_k` solving `φ_{N,1}(α̂_k) = λ⁰_{N,k,1}` with `y_N = p/N`.
pub fn estimate_spikes(initial: &DataMatrix, m: usize) -> Result<Vec<f64>> {
    let p = noise_dim(initial, m)?;
    let y_n = p as f64 / initial.n() as f64;
    invert_spikes(&full_sample_spikes(initial, m)?, y_n)
}

/// Supercritical preimages of observed eigenvalues; names the first spike without one.
pub fn invert_spikes(lambdas: &[f64], y_n: f64) -> Result<Vec<f64>> {
    lambdas
        .iter()
        .enumerate()
        .map(|(k, &l)| {
            mp::invert_phi(l, y_n).map_err(|_| Error::NotIdentifiable { spike: k + 1, observed: l })
        })
        .collect()
}

/// Plug-in quantities from an initial sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialSampleSummary {
    pub lambda0_path: EigenPath,
    pub alpha_hats: Vec<f64>,
    pub sigma_hat: MomentInputs,
    /// `m₃` of the Marčenko–Pastur law with ratio `p/N` at each observed `λ⁰_{N,k,1}`, by quadrature.
    pub m3_hat: Vec<f64>,
    pub n_initial: usize,
    pub y_initial: f64,
}

/// Second and fourth sample moments `(1/N) Σ_l ξ_l(i)ξ_l(j)` and
/// `(1/N) Σ_l ξ_l(i)ξ_l(j)ξ_l(m)ξ_l(l)` of the first `m` coordinates.
pub fn sample_moments(data: &DataMatrix, m: usize) -> Result<MomentInputs> {
    if m == 0 || m > data.d() {
        return Err(Error::Dimension(format!("M = {m} exceeds the data dimension {}", data.d())));
    }
    let x = data.matrix();
    let n = data.n() as f64;
    let xi = x.columns(0, m);
    let sigma_m: DMatrix<f64> = xi.transpose() * xi / n;
    let mut sigma = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            sigma[i * m + j] = sigma_m[(i, j)];
        }
    }
    let mut fourth = vec![0.0; m.pow(4)];
    for row in xi.row_iter() {
        for i in 0..m {
            for j in 0..m {
                let a = row[i] * row[j];
                for k in 0..m {
                    let b = a * row[k];
                    for l in 0..m {
                        fourth[((i * m + j) * m + k) * m + l] += b * row[l];
                    }
                }
            }
        }
    }
    fourth.iter_mut().for_each(|v| *v /= n);
    MomentInputs::new(m, sigma, fourth)
}

/// Spike estimates, moment estimates and the eigenvalue path of an initial sample.
pub fn estimate_kernel_inputs(initial: &DataMatrix, m: usize, t0: f64) -> Result<InitialSampleSummary> {
    let p = noise_dim(initial, m)?;
    let y0 = p as f64 / initial.n() as f64;
    let lambdas = full_sample_spikes(initial, m)?;
    let alpha_hats = invert_spikes(&lambdas, y0)?;
    let m3_hat = lambdas
        .iter()
        .map(|&l| mp::mp_integral(|x| x / (l - x).powi(2), y0, 1.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(InitialSampleSummary {
        lambda0_path: eigen_path(initial, t0, m)?,
        alpha_hats,
        sigma_hat: sample_moments(initial, m)?,
        m3_hat,
        n_initial: initial.n(),
        y_initial: y0,
    })
}

/// Plug-in kernel of `H = G − (n/N)^{1/2} G⁰`: the `G` kernel at the estimated inputs,
/// scaled by `1 + n/N` (twice the `G` kernel when `N = n`).
pub fn estimated_kernel(summary: &InitialSampleSummary, n: usize, p: usize, t0: f64) -> Result<GKernel> {
    let y_n = p as f64 / n as f64;
    let g = GKernel::new(&summary.alpha_hats, y_n, t0, &summary.sigma_hat)?;
    Ok(g.scaled(1.0 + n as f64 / summary.n_initial as f64))
}

/// Statistics `M̂_n`, `Ŝ_n` comparing the paths of `data` and of the initial sample.
pub fn estimated_statistics(data: &DataMatrix, summary: &InitialSampleSummary, t0: f64) -> Result<SupSummary> {
    let m = summary.alpha_hats.len();
    let path = eigen_path(data, t0, m)?;
    path_difference_sup(&path, &summary.lambda0_path, t0)
}

/// Estimated-baseline test with critical values simulated from the plug-in kernel.
pub fn test_estimated(
    data: &DataMatrix,
    initial: &DataMatrix,
    m: usize,
    t0: f64,
    level: f64,
    opts: &QuantileOptions,
) -> Result<TestReport> {
    check_level(level)?;
    if data.d() != initial.d() {
        return Err(Error::Dimension(format!(
            "data has {} coordinates but the initial sample has {}",
            data.d(),
            initial.d()
        )));
    }
    let p = noise_dim(data, m)?;
    let summary = estimate_kernel_inputs(initial, m, t0)?;
    let kernel = estimated_kernel(&summary, data.n(), p, t0)?;
    let grid = GridSpec::uniform(t0, opts.grid)?;
    let cov = build_grid_covariance(&kernel, &grid)?;
    let table = simulate_sup_quantiles(&cov, &[1.0 - level], opts.replicates, opts.seed)?;
    let sup = estimated_statistics(data, &summary, t0)?;
    let echo = serde_json::json!({
        "mode": "estimated",
        "M": m,
        "t0": t0,
        "n": data.n(),
        "N": initial.n(),
        "d": data.d(),
        "alpha_hats": summary.alpha_hats,
        "quantile_options": opts,
        "quantiles": table_echo(&table),
        "initial_digest": data_digest(initial),
    });
    report(&sup, &table, level, data_digest(data), echo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn table(qm: f64, qs: f64) -> QuantileTable {
        QuantileTable {
            levels: vec![0.95],
            q_max: vec![qm],
            q_sum: vec![qs],
            replicates: 1000,
            seed: 0,
            kernel_hash: String::new(),
            samples_max: vec![],
            samples_sum: vec![],
        }
    }

    #[test]
    fn spec_validation() {
        let r = AspectRatio::new(0.5, 0.5).unwrap();
        assert!(ModelSpec::new(vec![7.0, 17.0], r, 0.1, MomentSource::GaussianDiagonal).is_err());
        assert!(matches!(
            ModelSpec::new(vec![17.0, 3.0], r, 0.1, MomentSource::GaussianDiagonal),
            Err(Error::Domain(_))
        ));
        assert!(ModelSpec::new(vec![17.0, 7.0], r, 0.1, MomentSource::GaussianDiagonal).is_ok());
    }

    #[test]
    fn estimate_spikes_round_trip_and_identifiability() {
        let y = 0.5;
        let alphas = [9.0, 4.0];
        let lam: Vec<f64> = alphas.iter().map(|&a| mp::phi_n(a, y, 1.0).unwrap()).collect();
        let back = invert_spikes(&lam, y).unwrap();
        for (a, b) in alphas.iter().zip(&back) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
        assert_eq!(
            invert_spikes(&[3.0, 1.9], 0.5),
            Err(Error::NotIdentifiable { spike: 2, observed: 1.9 })
        );
    }

    #[test]
    fn sample_moments_of_zero_and_single_row() {
        let z = DataMatrix::new(DMatrix::zeros(5, 4)).unwrap();
        let m = sample_moments(&z, 2).unwrap();
        assert!(m.sigma.iter().chain(&m.fourth).all(|&v| v == 0.0));
        let one = DataMatrix::new(DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, 0.0, 0.0])).unwrap();
        let m = sample_moments(&one, 2).unwrap();
        assert_relative_eq!(m.sigma(0, 1), 1.0);
        assert_relative_eq!(m.fourth(1, 1, 1, 0), 4.0);
        assert!(sample_moments(&one, 4).is_err());
    }

    #[test]
    fn decision_is_strict_comparison() {
        let sup = SupSummary {
            per_spike: vec![],
            max: crate::spectrum::SupPoint { value: 5.0, t: 0.5 },
            argmax_spike: 0,
            sum: crate::spectrum::SupPoint { value: 7.0, t: 0.5 },
        };
        let r = report(&sup, &table(5.0, 6.0), 0.05, String::new(), serde_json::Value::Null).unwrap();
        assert!(!r.reject_max);
        assert!(r.reject_sum);
        assert!(r.mc_p_values.is_empty());
        assert!(report(&sup, &table(5.0, 6.0), 0.1, String::new(), serde_json::Value::Null).is_err());
    }
}
