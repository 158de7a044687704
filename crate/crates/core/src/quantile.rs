//! Critical values for the max- and sum-type statistics by simulating the limiting
//! Gaussian process on a time grid.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::GKernel;
use crate::rng::stream_rng;

/// Default number of grid points on `[t0, 1]`.
pub const DEFAULT_GRID: usize = 200;
/// Default replicate count for published tables.
pub const DEFAULT_REPLICATES: usize = 100_000;
/// Smallest replicate count accepted for a reported table.
pub const MIN_REPORTED_REPLICATES: usize = 1000;

const NEGATIVE_TOL: f64 = 1e-8;
const JITTER: f64 = 1e-10;
const BATCH: usize = 256;

/// Ordered evaluation times in `[t0, 1]`, starting at `t0` and ending at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub t0: f64,
    pub points: Vec<f64>,
}

impl GridSpec {
    pub fn new(t0: f64, points: Vec<f64>) -> Result<Self> {
        let ok = points.first() == Some(&t0)
            && points.last() == Some(&1.0)
            && points.windows(2).all(|w| w[0] < w[1]);
        if !ok && !(points.len() == 1 && t0 == 1.0 && points[0] == 1.0) {
            return Err(Error::Config(format!(
                "grid must increase strictly from t0 = {t0} to 1 ({} points given)",
                points.len()
            )));
        }
        Ok(Self { t0, points })
    }

    /// `resolution` equally spaced points from `t0` to 1.
    pub fn uniform(t0: f64, resolution: usize) -> Result<Self> {
        if !(t0 > 0.0 && t0 < 1.0) {
            return Err(Error::Config(format!("t0 = {t0} must lie in (0, 1)")));
        }
        if resolution < 2 {
            return Err(Error::Config(format!("grid needs at least 2 points (got {resolution})")));
        }
        let h = (1.0 - t0) / (resolution - 1) as f64;
        let mut points: Vec<f64> = (0..resolution).map(|i| t0 + h * i as f64).collect();
        points[resolution - 1] = 1.0;
        Self::new(t0, points)
    }

    pub fn resolution(&self) -> usize {
        self.points.len()
    }
}

/// Covariance of the process values `X_{k,t}` over spikes `k` and grid times `t`,
/// indexed spike-major: row `k·|grid| + i` is `(k, points[i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCovariance {
    pub matrix: DMatrix<f64>,
    pub spikes: usize,
    pub times: usize,
    /// Ridge added to the diagonal, zero when none was needed.
    pub jitter: f64,
    pub kernel_hash: String,
}

impl GridCovariance {
    /// Wraps an explicit covariance, applying the same checks and jitter policy as
    /// [`build_grid_covariance`].
    pub fn from_matrix(matrix: DMatrix<f64>, spikes: usize, times: usize) -> Result<Self> {
        if matrix.nrows() != spikes * times || matrix.ncols() != spikes * times || spikes == 0 || times == 0 {
            return Err(Error::Dimension(format!(
                "covariance is {} x {}, expected {n} x {n}",
                matrix.nrows(),
                matrix.ncols(),
                n = spikes * times
            )));
        }
        let bytes: Vec<u8> = matrix.iter().flat_map(|v| v.to_le_bytes()).collect();
        let hash = hex::encode(Sha256::digest(&bytes));
        Self::checked(matrix, spikes, times, hash)
    }

    fn checked(mut matrix: DMatrix<f64>, spikes: usize, times: usize, kernel_hash: String) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Factorization("covariance has non-finite entries".into()));
        }
        let max_diag = matrix.diagonal().iter().fold(0.0f64, |a, v| a.max(*v));
        let min_eig = matrix.symmetric_eigenvalues().iter().fold(f64::INFINITY, |a, v| a.min(*v));
        let mut jitter = 0.0;
        if min_eig < -NEGATIVE_TOL * max_diag {
            return Err(Error::Factorization(format!(
                "covariance has eigenvalue {min_eig:.3e} below -{NEGATIVE_TOL:e} x max diagonal {max_diag:.3e}"
            )));
        }
        if min_eig < 0.0 {
            jitter = JITTER * max_diag;
            for i in 0..matrix.nrows() {
                matrix[(i, i)] += jitter;
            }
        }
        Ok(Self { matrix, spikes, times, jitter, kernel_hash })
    }

    pub fn dim(&self) -> usize {
        self.spikes * self.times
    }
}

/// `C[(k,s),(k′,t)] = kernel.eval(k, k′, s, t)` on the grid.
pub fn build_grid_covariance(kernel: &GKernel, grid: &GridSpec) -> Result<GridCovariance> {
    let m = kernel.spikes().len();
    let g = grid.resolution();
    let n = m * g;
    let mut c = DMatrix::zeros(n, n);
    for a in 0..n {
        let (k, s) = (a / g, grid.points[a % g]);
        for b in a..n {
            let (kp, t) = (b / g, grid.points[b % g]);
            let v = kernel.eval(k, kp, s, t).map_err(|e| match e {
                Error::Domain(msg) => Error::Domain(format!("kernel at (k = {}, s = {s}, k' = {}, t = {t}): {msg}", k + 1, kp + 1)),
                other => other,
            })?;
            c[(a, b)] = v;
            c[(b, a)] = v;
        }
    }
    let hash = {
        let payload = serde_json::json!({ "kernel": kernel.digest(), "grid": grid.points });
        hex::encode(Sha256::digest(payload.to_string().as_bytes()))
    };
    GridCovariance::checked(c, m, g, hash)
}

/// Lower factor `L` (`n × r`) with `L Lᵀ ≈ C`, by diagonally pivoted Cholesky that
/// stops once the largest remaining pivot is negligible.
pub fn pivoted_cholesky(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = c.nrows();
    let max_diag = c.diagonal().iter().fold(0.0f64, |a, v| a.max(*v));
    if n == 0 || max_diag <= 0.0 {
        return Ok(DMatrix::zeros(n, 0));
    }
    let stop = 1e-13 * max_diag;
    let mut diag: Vec<f64> = c.diagonal().iter().copied().collect();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut used = vec![false; n];
    loop {
        let (p, &dp) = diag
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap_or((0, &0.0));
        if used.iter().all(|&u| u) || dp <= stop {
            break;
        }
        used[p] = true;
        let root = dp.sqrt();
        let mut col = vec![0.0; n];
        for i in 0..n {
            if used[i] && i != p {
                continue;
            }
            let mut v = c[(i, p)];
            for prev in &cols {
                v -= prev[i] * prev[p];
            }
            col[i] = v / root;
        }
        col[p] = root;
        for i in 0..n {
            if !used[i] {
                diag[i] -= col[i] * col[i];
            }
        }
        cols.push(col);
    }
    let r = cols.len();
    Ok(DMatrix::from_fn(n, r, |i, j| cols[j][i]))
}

/// Simulated quantiles of `sup_{k,t} X²` and `sup_t Σ_k X²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTable {
    pub levels: Vec<f64>,
    pub q_max: Vec<f64>,
    pub q_sum: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub kernel_hash: String,
    /// Sorted simulated values of the max-type supremum.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples_max: Vec<f64>,
    /// Sorted simulated values of the sum-type supremum.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples_sum: Vec<f64>,
}

/// `⌈level·R⌉`-th order statistic of sorted `samples`.
pub fn order_statistic(sorted: &[f64], level: f64) -> f64 {
    let r = sorted.len();
    let idx = ((level * r as f64).ceil() as usize).clamp(1, r);
    sorted[idx - 1]
}

fn tail_fraction(sorted: &[f64], stat: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let below = sorted.partition_point(|&v| v < stat);
    Some((sorted.len() - below) as f64 / sorted.len() as f64)
}

impl QuantileTable {
    fn level_index(&self, level: f64) -> Result<usize> {
        self.levels
            .iter()
            .position(|&l| (l - level).abs() < 1e-12)
            .ok_or_else(|| Error::Config(format!("level {level} not in quantile table {:?}", self.levels)))
    }

    /// `(q_max, q_sum)` at `level`.
    pub fn critical_values(&self, level: f64) -> Result<(f64, f64)> {
        let i = self.level_index(level)?;
        Ok((self.q_max[i], self.q_sum[i]))
    }

    /// Fraction of simulated suprema at or above the observed statistics.
    pub fn p_values(&self, stat_max: f64, stat_sum: f64) -> Option<(f64, f64)> {
        Some((tail_fraction(&self.samples_max, stat_max)?, tail_fraction(&self.samples_sum, stat_sum)?))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(s).map_err(|e| Error::Config(format!("quantile table: {e}")))?;
        if t.levels.len() != t.q_max.len() || t.levels.len() != t.q_sum.len() {
            return Err(Error::Config("quantile table: levels and values differ in length".into()));
        }
        Ok(t)
    }
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() || levels.iter().any(|&l| !(l > 0.0 && l < 1.0)) {
        return Err(Error::Config(format!("levels must lie in (0, 1): {levels:?}")));
    }
    Ok(())
}

/// Sorted simulated suprema `(max-type, sum-type)` for `replicates` draws from `cov`.
/// Replicate `i` uses stream `i` of `seed`.
pub fn simulate_suprema(cov: &GridCovariance, replicates: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if replicates == 0 {
        return Err(Error::Config("replicates must be at least 1".into()));
    }
    let l = pivoted_cholesky(&cov.matrix)?;
    let (n, r) = (l.nrows(), l.ncols());
    let (m, g) = (cov.spikes, cov.times);
    let batches: Vec<usize> = (0..replicates.div_ceil(BATCH)).collect();
    let out: Vec<(f64, f64)> = batches
        .par_iter()
        .flat_map_iter(|&b| {
            let start = b * BATCH;
            let len = BATCH.min(replicates - start);
            let mut z = DMatrix::<f64>::zeros(r, len);
            for j in 0..len {
                let mut rng = stream_rng(seed, (start + j) as u64);
                for i in 0..r {
                    z[(i, j)] = StandardNormal.sample(&mut rng);
                }
            }
            let x = if r == 0 { DMatrix::zeros(n, len) } else { &l * z };
            (0..len)
                .map(|j| {
                    let col = x.column(j);
                    let mut smax = 0.0f64;
                    let mut ssum = 0.0f64;
                    for i in 0..g {
                        let mut tot = 0.0;
                        for k in 0..m {
                            let v = col[k * g + i] * col[k * g + i];
                            smax = smax.max(v);
                            tot += v;
                        }
                        ssum = ssum.max(tot);
                    }
                    (smax, ssum)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let (mut a, mut s): (Vec<f64>, Vec<f64>) = out.into_iter().unzip();
    a.sort_by(f64::total_cmp);
    s.sort_by(f64::total_cmp);
    Ok((a, s))
}

/// Quantile table at each requested level; deterministic given `seed`.
pub fn simulate_sup_quantiles(cov: &GridCovariance, levels: &[f64], replicates: usize, seed: u64) -> Result<QuantileTable> {
    check_levels(levels)?;
    let (samples_max, samples_sum) = simulate_suprema(cov, replicates, seed)?;
    let mut sorted_levels = levels.to_vec();
    sorted_levels.sort_by(f64::total_cmp);
    Ok(QuantileTable {
        q_max: sorted_levels.iter().map(|&l| order_statistic(&samples_max, l)).collect(),
        q_sum: sorted_levels.iter().map(|&l| order_statistic(&samples_sum, l)).collect(),
        levels: sorted_levels,
        replicates,
        seed,
        kernel_hash: cov.kernel_hash.clone(),
        samples_max,
        samples_sum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{g_kernel, MomentInputs};
    use approx::assert_relative_eq;

    #[test]
    fn uniform_grid_endpoints() {
        let g = GridSpec::uniform(0.1, 200).unwrap();
        assert_eq!(g.points[0], 0.1);
        assert_eq!(*g.points.last().unwrap(), 1.0);
        assert!(g.points.windows(2).all(|w| w[0] < w[1]));
        assert!(GridSpec::new(0.1, vec![0.2, 1.0]).is_err());
        assert!(GridSpec::uniform(0.1, 1).is_err());
    }

    #[test]
    fn pivoted_cholesky_reconstructs_and_handles_rank_deficiency() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.5, -1.0, 3.0, 0.0]);
        let c = &a * a.transpose();
        let l = pivoted_cholesky(&c).unwrap();
        assert_eq!(l.ncols(), 2);
        assert!((&l * l.transpose() - &c).abs().max() < 1e-12);
    }

    #[test]
    fn one_spike_one_point_is_the_variance() {
        let alphas = [17.2];
        let k = g_kernel(&alphas, 0.5, 0.1, &MomentInputs::gaussian_diagonal(&alphas).unwrap()).unwrap();
        let g = GridSpec::new(1.0, vec![1.0]).unwrap();
        let c = build_grid_covariance(&k, &g).unwrap();
        assert_eq!(c.matrix.shape(), (1, 1));
        assert_relative_eq!(c.matrix[(0, 0)], k.eval(0, 0, 1.0, 1.0).unwrap());
    }

    #[test]
    fn rejects_clearly_indefinite_input() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(GridCovariance::from_matrix(c, 1, 2), Err(Error::Factorization(_))));
    }

    #[test]
    fn tiny_negative_eigenvalue_gets_jitter() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 1.0 + 1e-12, 1.0 + 1e-12, 1.0]);
        let g = GridCovariance::from_matrix(c, 1, 2).unwrap();
        assert!(g.jitter > 0.0);
    }

    #[test]
    fn deterministic_and_monotone() {
        let c = GridCovariance::from_matrix(DMatrix::identity(3, 3), 3, 1).unwrap();
        let a = simulate_sup_quantiles(&c, &[0.5, 0.9, 0.95], 4000, 11).unwrap();
        let b = simulate_sup_quantiles(&c, &[0.95, 0.5, 0.9], 4000, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.q_max.windows(2).all(|w| w[0] <= w[1]));
        assert!(a.q_sum.iter().zip(&a.q_max).all(|(s, m)| s >= m));
        let (pm, ps) = a.p_values(a.q_max[2], a.q_sum[2]).unwrap();
        assert!((pm - 0.05).abs() < 0.01 && (ps - 0.05).abs() < 0.01);
    }

    #[test]
    fn single_spike_max_equals_sum() {
        let c = GridCovariance::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]), 1, 2).unwrap();
        let t = simulate_sup_quantiles(&c, &[0.95], 2000, 3).unwrap();
        assert_eq!(t.q_max, t.q_sum);
    }

    #[test]
    fn json_round_trip() {
        let c = GridCovariance::from_matrix(DMatrix::identity(1, 1), 1, 1).unwrap();
        let t = simulate_sup_quantiles(&c, &[0.95], 1000, 1).unwrap();
        let back = QuantileTable::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(t, back);
        assert!(back.critical_values(0.9).is_err());
    }
}
