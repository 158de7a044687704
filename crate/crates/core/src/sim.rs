//! Data generation under the null and the shift alternatives, and the Monte Carlo
//! harness for levels, power curves, histograms and kernel validation.

use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::changepoint::{
    estimate_kernel_inputs, estimated_kernel, estimated_statistics, known_statistics, ModelSpec, MomentSource,
    QuantileOptions,
};
use crate::error::{Error, Result};
use crate::kernel::{GKernel, MomentInputs};
use crate::mp::{self, AspectRatio};
use crate::quantile::{build_grid_covariance, simulate_sup_quantiles, GridSpec, QuantileTable};
use crate::rng::{derive_seed, stream_rng};
use crate::spectrum::{centered_sup, eigen_path, DataMatrix};

/// Fraction of the sample after which the spikes shift.
pub const DEFAULT_T_STAR: f64 = 0.6;

/// Which spikes move by `δ` after the change point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alternative {
    Null,
    /// `α₁ + δ`.
    Alt1,
    /// `α₂ + δ`.
    Alt2,
    /// `α₁ + δ` and `α₂ + δ`.
    Alt3,
}

impl Alternative {
    /// Variances of the spiked coordinates after the change.
    pub fn shifted(self, alphas: &[f64], delta: f64) -> Vec<f64> {
        let mut v = alphas.to_vec();
        let idx: &[usize] = match self {
            Alternative::Null => &[],
            Alternative::Alt1 => &[0],
            Alternative::Alt2 => &[1],
            Alternative::Alt3 => &[0, 1],
        };
        for &i in idx {
            if let Some(a) = v.get_mut(i) {
                *a += delta;
            }
        }
        v
    }

    pub fn name(self) -> &'static str {
        match self {
            Alternative::Null => "null",
            Alternative::Alt1 => "alt1",
            Alternative::Alt2 => "alt2",
            Alternative::Alt3 => "alt3",
        }
    }
}

impl FromStr for Alternative {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "null" => Ok(Alternative::Null),
            "alt1" => Ok(Alternative::Alt1),
            "alt2" => Ok(Alternative::Alt2),
            "alt3" => Ok(Alternative::Alt3),
            _ => Err(Error::Config(format!("unknown alternative '{s}' (expected null, alt1, alt2 or alt3)"))),
        }
    }
}

/// `α₃ = 2 + √(y/t0)`, `α₂ = α₃ + 3`, `α₁ = α₂ + 10`.
pub fn default_spikes(y: f64, t0: f64) -> Result<[f64; 3]> {
    if !(y > 0.0 && y < 1.0) || !(t0 > 0.0 && t0 <= 1.0) {
        return Err(Error::Domain(format!("default spikes need 0 < y < 1 and 0 < t0 <= 1 (got y = {y}, t0 = {t0})")));
    }
    let a3 = 2.0 + (y / t0).sqrt();
    Ok([a3 + 13.0, a3 + 3.0, a3])
}

/// One simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub n: usize,
    pub p: usize,
    pub t0: f64,
    pub t_star: f64,
    pub alternative: Alternative,
    pub delta: f64,
    pub spikes: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Null scenario with the default spikes for `y = p/n` and `t* = 0.6`.
    pub fn null(n: usize, p: usize, t0: f64, replicates: usize, seed: u64) -> Result<Self> {
        let r = AspectRatio::from_dims(p, n)?;
        let s = Self {
            n,
            p,
            t0,
            t_star: DEFAULT_T_STAR,
            alternative: Alternative::Null,
            delta: 0.0,
            spikes: default_spikes(r.y, t0)?.to_vec(),
            replicates,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_alternative(&self, alternative: Alternative, delta: f64) -> Self {
        Self { alternative, delta, ..self.clone() }
    }

    pub fn m(&self) -> usize {
        self.spikes.len()
    }

    pub fn d(&self) -> usize {
        self.spikes.len() + self.p
    }

    pub fn y(&self) -> f64 {
        self.p as f64 / self.n as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::Config("n and p must be positive".into()));
        }
        if !(self.t0 > 0.0 && self.t0 < self.t_star && self.t_star <= 1.0) {
            return Err(Error::Config(format!(
                "need 0 < t0 < t_star <= 1 (got t0 = {}, t_star = {})",
                self.t0, self.t_star
            )));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("delta = {} must be finite and >= 0", self.delta)));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be positive".into()));
        }
        if self.alternative != Alternative::Null && self.spikes.len() < 2 {
            return Err(Error::Config(format!("{} needs at least two spikes", self.alternative.name())));
        }
        self.model().map(|_| ())
    }

    /// Known-spike null model with Gaussian moments.
    pub fn model(&self) -> Result<ModelSpec> {
        ModelSpec::new(
            self.spikes.clone(),
            AspectRatio::from_dims(self.p, self.n)?,
            self.t0,
            MomentSource::GaussianDiagonal,
        )
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        config_digest(&serde_json::to_value(self).expect("scenario serializes"))
    }
}

/// Hex SHA-256 of a JSON value's compact serialization.
pub fn config_digest(config: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

/// Draws one `n × (M + p)` dataset. Coordinates are drawn row by row, so datasets
/// built from equal generator states differ only through the variances (common
/// random numbers across `δ`).
pub fn generate<R: Rng + ?Sized>(s: &ScenarioSpec, rng: &mut R) -> Result<DataMatrix> {
    s.validate()?;
    let d = s.d();
    let cut = (s.n as f64 * s.t_star + 1e-9).floor() as usize;
    let before: Vec<f64> = s.spikes.iter().map(|a| a.sqrt()).collect();
    let after: Vec<f64> = s.alternative.shifted(&s.spikes, s.delta).iter().map(|a| a.sqrt()).collect();
    let mut rows = Vec::with_capacity(s.n * d);
    for i in 0..s.n {
        let sd = if i < cut { &before } else { &after };
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            rows.push(if j < sd.len() { sd[j] * z } else { z });
        }
    }
    DataMatrix::new(nalgebra::DMatrix::from_row_slice(s.n, d, &rows))
}

/// Dataset of replicate `i`.
pub fn generate_replicate(s: &ScenarioSpec, i: usize) -> Result<DataMatrix> {
    generate(s, &mut stream_rng(s.seed, i as u64))
}

/// Null initial sample of size `n_initial` for replicate `i`, independent of the monitored data.
pub fn generate_initial(s: &ScenarioSpec, n_initial: usize, i: usize) -> Result<DataMatrix> {
    let base = ScenarioSpec { n: n_initial, alternative: Alternative::Null, delta: 0.0, ..s.clone() };
    generate(&base, &mut stream_rng(derive_seed(s.seed, "initial sample"), i as u64))
}

/// Which pair of tests a power experiment runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestSelector {
    /// `M_n`, `S_n` against the baseline spikes with a fixed table.
    Known { quantiles: QuantileTable },
    /// `M̂_n`, `Ŝ_n` against an independent null initial sample of size `initial_n`;
    /// critical values are simulated per replicate from the plug-in kernel.
    Estimated { initial_n: usize, options: QuantileOptions },
}

impl TestSelector {
    pub fn name(&self) -> &'static str {
        match self {
            TestSelector::Known { .. } => "known",
            TestSelector::Estimated { .. } => "estimated",
        }
    }
}

/// Empirical rejection rates over a list of shifts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub alternative: Alternative,
    pub test: String,
    pub level: f64,
    pub deltas: Vec<f64>,
    pub rejection_max: Vec<f64>,
    pub rejection_sum: Vec<f64>,
    /// Replicates left out of the rates (estimated spikes only).
    pub skipped: usize,
    pub config: ScenarioSpec,
}

/// Decisions `(max, sum)` for each `δ` in one replicate, or `None` when the initial
/// sample of an estimated-spike run gives no usable spike estimates.
fn replicate_decisions(
    base: &ScenarioSpec,
    alternative: Alternative,
    deltas: &[f64],
    selector: &TestSelector,
    level: f64,
    i: usize,
) -> Result<Option<Vec<(bool, bool)>>> {
    let (cm, cs, summary) = match selector {
        TestSelector::Known { quantiles } => {
            let (cm, cs) = quantiles.critical_values(1.0 - level)?;
            (cm, cs, None)
        }
        TestSelector::Estimated { initial_n, options } => {
            let initial = generate_initial(base, *initial_n, i)?;
            let estimated = estimate_kernel_inputs(&initial, base.m(), base.t0)
                .and_then(|s| Ok((estimated_kernel(&s, base.n, base.p, base.t0)?, s)));
            let (kernel, summary) = match estimated {
                Ok(v) => v,
                Err(Error::NotIdentifiable { .. } | Error::Domain(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let cov = build_grid_covariance(&kernel, &GridSpec::uniform(base.t0, options.grid)?)?;
            let seed = derive_seed(options.seed, &format!("replicate {i}"));
            let table = simulate_sup_quantiles(&cov, &[1.0 - level], options.replicates, seed)?;
            let (cm, cs) = table.critical_values(1.0 - level)?;
            (cm, cs, Some(summary))
        }
    };
    let model = base.model()?;
    deltas
        .iter()
        .map(|&delta| {
            let data = generate_replicate(&base.with_alternative(alternative, delta), i)?;
            let sup = match &summary {
                None => known_statistics(&data, &model)?,
                Some(s) => estimated_statistics(&data, s, base.t0)?,
            };
            Ok((sup.max.value > cm, sup.sum.value > cs))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Rejection rates of both tests for each `δ`, with common random numbers across `δ`.
/// Estimated-spike replicates whose initial sample yields a spike estimate that is not
/// supercritical on `[t0, 1]` are skipped and counted in `skipped`.
pub fn level_and_power(
    base: &ScenarioSpec,
    alternative: Alternative,
    deltas: &[f64],
    selector: &TestSelector,
    level: f64,
) -> Result<PowerCurve> {
    if deltas.is_empty() {
        return Err(Error::Config("the list of shifts is empty".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("level = {level} must lie in (0, 1)")));
    }
    for &d in deltas {
        base.with_alternative(alternative, d).validate()?;
    }
    let per: Vec<Option<Vec<(bool, bool)>>> = (0..base.replicates)
        .into_par_iter()
        .map(|i| replicate_decisions(base, alternative, deltas, selector, level, i))
        .collect::<Result<_>>()?;
    let used: Vec<&Vec<(bool, bool)>> = per.iter().flatten().collect();
    if used.is_empty() {
        return Err(Error::Domain("no replicate produced usable spike estimates".into()));
    }
    let r = used.len() as f64;
    let rate = |f: fn(&(bool, bool)) -> bool, j: usize| used.iter().filter(|v| f(&v[j])).count() as f64 / r;
    Ok(PowerCurve {
        alternative,
        test: selector.name().to_string(),
        level,
        deltas: deltas.to_vec(),
        rejection_max: (0..deltas.len()).map(|j| rate(|v| v.0, j)).collect(),
        rejection_sum: (0..deltas.len()).map(|j| rate(|v| v.1, j)).collect(),
        skipped: base.replicates - used.len(),
        config: base.clone(),
    })
}

/// Summary of one simulated dataset for the null experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub stat_max: f64,
    pub stat_sum: f64,
    /// `√n(λ_{n,k,s} − φ_s(α_k))` indexed `[time][spike]`.
    pub fluctuations: Vec<Vec<f64>>,
}

/// Statistics and scaled eigenvalue fluctuations at `times` for each replicate of `s`.
pub fn run_replicates(s: &ScenarioSpec, times: &[f64]) -> Result<Vec<ReplicateSummary>> {
    s.validate()?;
    if let Some(&t) = times.iter().find(|&&t| !(t >= s.t0 && t <= 1.0)) {
        return Err(Error::Domain(format!("time {t} outside [{}, 1]", s.t0)));
    }
    let y = s.y();
    let rn = (s.n as f64).sqrt();
    (0..s.replicates)
        .into_par_iter()
        .map(|i| {
            let data = generate_replicate(s, i)?;
            let path = eigen_path(&data, s.t0, s.m())?;
            let sup = centered_sup(&path, &s.spikes, y, s.t0)?;
            let fluctuations = times
                .iter()
                .map(|&t| {
                    s.spikes
                        .iter()
                        .enumerate()
                        .map(|(k, &a)| Ok(rn * (path.value_at_time(t, k) - mp::phi(a, y, t)?)))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ReplicateSummary { stat_max: sup.max.value, stat_sum: sup.sum.value, fluctuations })
        })
        .collect()
}

/// Max-type or sum-type statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Max,
    Sum,
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "max" => Ok(Statistic::Max),
            "sum" => Ok(Statistic::Sum),
            _ => Err(Error::Config(format!("unknown statistic '{s}' (expected max or sum)"))),
        }
    }
}

/// Equal-width histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` increasing edges; the last bin is closed.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn from_values(values: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Config("bins must be positive".into()));
        }
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("histogram needs finite values".into()));
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        let w = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|b| if b == bins { hi } else { lo + b as f64 * w }).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let b = (((v - lo) / w).floor() as usize).min(bins - 1);
            counts[b] += 1;
        }
        Ok(Self { edges, counts })
    }

    /// Number of local maxima of the counts after merging plateaus.
    pub fn modes(&self) -> usize {
        let mut c: Vec<usize> = self.counts.clone();
        c.dedup();
        (0..c.len())
            .filter(|&i| (i == 0 || c[i - 1] < c[i]) && (i + 1 == c.len() || c[i + 1] < c[i]))
            .count()
    }
}

/// Histogram of `log M_n` or `log S_n` under the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramResult {
    pub statistic: Statistic,
    pub log_values: Vec<f64>,
    pub histogram: Histogram,
    pub config: ScenarioSpec,
}

pub fn histogram_from_replicates(
    s: &ScenarioSpec,
    runs: &[ReplicateSummary],
    statistic: Statistic,
    bins: usize,
) -> Result<HistogramResult> {
    let log_values: Vec<f64> = runs
        .iter()
        .map(|r| match statistic {
            Statistic::Max => r.stat_max.ln(),
            Statistic::Sum => r.stat_sum.ln(),
        })
        .collect();
    let histogram = Histogram::from_values(&log_values, bins)?;
    Ok(HistogramResult { statistic, log_values, histogram, config: s.clone() })
}

pub fn histogram_experiment(s: &ScenarioSpec, statistic: Statistic, bins: usize) -> Result<HistogramResult> {
    histogram_from_replicates(s, &run_replicates(s, &[])?, statistic, bins)
}

/// Empirical against analytic covariance of the scaled fluctuations of spike `k` at `(s, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelValidationRow {
    /// 1-based spike.
    pub k: usize,
    pub s: f64,
    pub t: f64,
    pub empirical: f64,
    pub analytic: f64,
    pub rel_error: f64,
}

/// Compares sample covariances of `fluctuations` (indexed `[time][spike]` per
/// replicate) with the Gaussian kernel for every spike and pair `s ≤ t` of `times`.
pub fn kernel_validation_from_replicates(
    s: &ScenarioSpec,
    runs: &[ReplicateSummary],
    times: &[f64],
) -> Result<Vec<KernelValidationRow>> {
    if runs.len() < 2 {
        return Err(Error::Config("kernel validation needs at least two replicates".into()));
    }
    let kernel = GKernel::new(&s.spikes, s.y(), s.t0, &MomentInputs::gaussian_diagonal(&s.spikes)?)?;
    let r = runs.len() as f64;
    let mut rows = Vec::new();
    for k in 0..s.m() {
        for a in 0..times.len() {
            for b in a..times.len() {
                let xs: Vec<f64> = runs.iter().map(|x| x.fluctuations[a][k]).collect();
                let ys: Vec<f64> = runs.iter().map(|x| x.fluctuations[b][k]).collect();
                let (mx, my) = (xs.iter().sum::<f64>() / r, ys.iter().sum::<f64>() / r);
                let empirical = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (r - 1.0);
                let analytic = kernel.eval(k, k, times[a], times[b])?;
                rows.push(KernelValidationRow {
                    k: k + 1,
                    s: times[a],
                    t: times[b],
                    empirical,
                    analytic,
                    rel_error: (empirical - analytic).abs() / analytic.abs(),
                });
            }
        }
    }
    Ok(rows)
}

pub fn kernel_validation(s: &ScenarioSpec, times: &[f64]) -> Result<Vec<KernelValidationRow>> {
    kernel_validation_from_replicates(s, &run_replicates(s, times)?, times)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scenario() -> ScenarioSpec {
        ScenarioSpec::null(40, 20, 0.1, 4, 11).unwrap()
    }

    #[test]
    fn default_spike_values() {
        let a = default_spikes(0.05, 0.1).unwrap();
        assert_relative_eq!(a[2], 2.0 + 0.5f64.sqrt());
        assert_relative_eq!(a[1], a[2] + 3.0);
        assert_relative_eq!(a[0], a[1] + 10.0);
        let b = default_spikes(0.6, 1.0).unwrap();
        assert_relative_eq!(b[2], 2.0 + 0.6f64.sqrt());
        assert!(default_spikes(0.0, 0.1).is_err());
    }

    #[test]
    fn alternatives_shift_the_right_spikes() {
        let a = [10.0, 5.0, 3.0];
        assert_eq!(Alternative::Null.shifted(&a, 2.0), a.to_vec());
        assert_eq!(Alternative::Alt1.shifted(&a, 2.0), vec![12.0, 5.0, 3.0]);
        assert_eq!(Alternative::Alt2.shifted(&a, 2.0), vec![10.0, 7.0, 3.0]);
        assert_eq!(Alternative::Alt3.shifted(&a, 2.0), vec![12.0, 7.0, 3.0]);
        assert_eq!("ALT2".parse::<Alternative>().unwrap(), Alternative::Alt2);
        assert!("alt4".parse::<Alternative>().is_err());
    }

    #[test]
    fn scenario_validation() {
        let s = scenario();
        assert!(ScenarioSpec { t_star: 0.05, ..s.clone() }.validate().is_err());
        assert!(ScenarioSpec { delta: -1.0, ..s.clone() }.validate().is_err());
        assert!(ScenarioSpec { replicates: 0, ..s.clone() }.validate().is_err());
        assert!(ScenarioSpec { p: 40, ..s }.validate().is_err());
    }

    #[test]
    fn generation_is_deterministic_with_common_numbers() {
        let s = scenario();
        let a = generate_replicate(&s, 2).unwrap();
        assert_eq!(a.matrix(), generate_replicate(&s, 2).unwrap().matrix());
        assert_ne!(a.matrix(), generate_replicate(&s, 3).unwrap().matrix());
        let b = generate_replicate(&s.with_alternative(Alternative::Alt1, 5.0), 2).unwrap();
        let cut = 24;
        for i in 0..40 {
            for j in 0..s.d() {
                if i >= cut && j == 0 {
                    let ratio = b.matrix()[(i, j)] / a.matrix()[(i, j)];
                    assert_relative_eq!(ratio, ((s.spikes[0] + 5.0) / s.spikes[0]).sqrt(), epsilon = 1e-12);
                } else {
                    assert_eq!(a.matrix()[(i, j)], b.matrix()[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn initial_sample_is_independent_null() {
        let s = scenario().with_alternative(Alternative::Alt3, 4.0);
        let a = generate_initial(&s, 30, 0).unwrap();
        assert_eq!(a.n(), 30);
        assert_ne!(a.matrix().rows(0, 1), generate_replicate(&s, 0).unwrap().matrix().rows(0, 1));
    }

    #[test]
    fn histogram_bookkeeping() {
        let h = Histogram::from_values(&[2.0; 5], 8).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.counts.iter().sum::<usize>(), 5);
        let v: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let h = Histogram::from_values(&v, 10).unwrap();
        assert_eq!(h.counts, vec![10; 10]);
        assert_eq!(Histogram::from_values(&v, 20).unwrap().counts, vec![5; 20]);
        assert!(Histogram::from_values(&[], 3).is_err());
        let h = Histogram { edges: vec![], counts: vec![1, 3, 3, 2, 5, 1] };
        assert_eq!(h.modes(), 2);
    }

    #[test]
    fn empty_shift_list_is_rejected() {
        let s = scenario();
        let sel = TestSelector::Known {
            quantiles: QuantileTable {
                levels: vec![0.95],
                q_max: vec![1.0],
                q_sum: vec![1.0],
                replicates: 1000,
                seed: 0,
                kernel_hash: String::new(),
                samples_max: vec![],
                samples_sum: vec![],
            },
        };
        assert!(level_and_power(&s, Alternative::Alt1, &[], &sel, 0.05).is_err());
        let c = level_and_power(&s, Alternative::Alt1, &[0.0, 1e6], &sel, 0.05).unwrap();
        assert_eq!(c.rejection_max.len(), 2);
        assert!(c.rejection_max.iter().chain(&c.rejection_sum).all(|&r| (0.0..=1.0).contains(&r)));
        assert_eq!(c.rejection_max[1], 1.0);
    }
}
