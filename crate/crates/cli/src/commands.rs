use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_with::skip_serializing_none;
use spikeshift::artifact::{self, Metadata};
use spikeshift::changepoint::{
    estimate_kernel_inputs, estimated_kernel, known_quantiles, test_estimated, test_known, ModelSpec,
    QuantileOptions, TestReport,
};
use spikeshift::quantile::{build_grid_covariance, simulate_sup_quantiles, GridSpec, QuantileTable, DEFAULT_GRID};
use spikeshift::rng::derive_seed;
use spikeshift::sim::{self, Alternative, ScenarioSpec, Statistic, TestSelector};

use crate::config::{echo, is_false, merge};
use crate::io;

#[derive(Parser, Debug)]
#[command(
    name = "spikeshift",
    version,
    about = "Change-point tests for spiked eigenvalues of sequential sample covariance matrices"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Test a dataset for a change in its spiked eigenvalues
    Test(TestArgs),
    /// Write a simulated dataset as CSV
    Simulate(SimulateArgs),
    /// Simulate critical values and write them as JSON
    Quantiles(QuantilesArgs),
    /// Rejection rates over a list of shifts (CSV and SVG)
    Power(PowerArgs),
    /// Empirical against analytic fluctuation covariances (CSV and SVG)
    ValidateKernel(ValidateArgs),
    /// Histograms of the log statistics under the null (CSV and SVG)
    Histogram(HistogramArgs),
}

const DEFAULT_T0: f64 = 0.1;
const DEFAULT_LEVEL: f64 = 0.05;
const DEFAULT_QUANTILE_REPLICATES: usize = 10_000;
/// `(n, p, replicates)` for experiments without and with `--full-scale`.
const DESK: (usize, usize, usize) = (200, 100, 500);
const FULL: (usize, usize, usize) = (400, 200, 2000);
/// Replicates of the estimated-spike experiments at full scale.
const FULL_ESTIMATED_REPLICATES: usize = 500;
/// Per-replicate critical values in estimated-spike power runs.
const ESTIMATED_GRID: usize = 50;
const ESTIMATED_QUANTILE_REPLICATES: usize = 2000;

#[skip_serializing_none]
#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestArgs {
    /// Data CSV, one observation per row with the spiked coordinates first
    #[arg(long)]
    input: Option<PathBuf>,
    /// Initial-sample CSV; switches to estimated baseline spikes
    #[arg(long)]
    initial: Option<PathBuf>,
    /// Known baseline spikes, comma separated and decreasing
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Number of spikes (required with --initial)
    #[arg(long = "M")]
    #[serde(rename = "M")]
    m: Option<usize>,
    /// Start of monitoring [default: 0.1]
    #[arg(long)]
    t0: Option<f64>,
    /// Significance level [default: 0.05]
    #[arg(long)]
    level: Option<f64>,
    /// Time-grid resolution for critical values [default: 200]
    #[arg(long)]
    grid: Option<usize>,
    /// Simulated suprema for critical values [default: 10000]
    #[arg(long)]
    replicates: Option<usize>,
    /// Precomputed quantile table from `spikeshift quantiles` (known spikes only)
    #[arg(long)]
    quantiles: Option<PathBuf>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads [default: all cores]
    #[arg(long)]
    threads: Option<usize>,
    /// Directory for report.json [default: .]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// TOML file with any of these options, keys in snake_case (flags take precedence)
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[skip_serializing_none]
#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateArgs {
    /// Observations [default: 200]
    #[arg(long)]
    n: Option<usize>,
    /// Noise dimension [default: 100]
    #[arg(long)]
    p: Option<usize>,
    /// [default: 0.1]
    #[arg(long)]
    t0: Option<f64>,
    /// Change point as a fraction of the sample [default: 0.6]
    #[arg(long)]
    t_star: Option<f64>,
    /// null, alt1, alt2 or alt3 [default: null]
    #[arg(long)]
    alternative: Option<String>,
    /// Shift of the affected spikes [default: 0]
    #[arg(long)]
    delta: Option<f64>,
    /// Baseline spikes [default: 2 + sqrt(y/t0) plus 13, 3 and 0]
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Replicate index; each index is an independent dataset [default: 0]
    #[arg(long)]
    replicate: Option<usize>,
    /// Write the independent null initial sample of the replicate instead
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    initial_sample: bool,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Output file [default: <out-dir>/data.csv or initial.csv]
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[skip_serializing_none]
#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantilesArgs {
    /// Known baseline spikes (needs --n and --p)
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Monitored sample size (defaults to the initial sample size with --initial)
    #[arg(long)]
    n: Option<usize>,
    /// Noise dimension (derived from the columns with --initial)
    #[arg(long)]
    p: Option<usize>,
    /// Initial-sample CSV for the plug-in kernel of the estimated test
    #[arg(long)]
    initial: Option<PathBuf>,
    #[arg(long = "M")]
    #[serde(rename = "M")]
    m: Option<usize>,
    /// [default: 0.1]
    #[arg(long)]
    t0: Option<f64>,
    /// Significance levels; the table holds the 1 - level quantiles [default: 0.05]
    #[arg(long, value_delimiter = ',')]
    level: Option<Vec<f64>>,
    /// [default: 200]
    #[arg(long)]
    grid: Option<usize>,
    /// [default: 10000]
    #[arg(long)]
    replicates: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Directory for quantiles.json [default: .]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

/// Options shared by the Monte Carlo experiments.
#[skip_serializing_none]
#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentArgs {
    /// [default: 200, or 400 with --full-scale]
    #[arg(long)]
    n: Option<usize>,
    /// [default: 100, or 200 with --full-scale]
    #[arg(long)]
    p: Option<usize>,
    /// [default: 0.1]
    #[arg(long)]
    t0: Option<f64>,
    /// [default: 0.6]
    #[arg(long)]
    t_star: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Monte Carlo runs [default: 500, or 2000 with --full-scale]
    #[arg(long)]
    replicates: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Use the larger sample sizes and replicate counts
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    full_scale: bool,
    #[arg(long)]
    threads: Option<usize>,
    /// [default: .]
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[skip_serializing_none]
#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerArgs {
    /// alt1, alt2 or alt3 [default: alt1]
    #[arg(long)]
    alternative: Option<String>,
    /// Shifts, comma separated [default: 0,2,4,6,8,10]
    #[arg(long, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
    /// known or estimated baseline spikes [default: known]
    #[arg(long)]
    mode: Option<String>,
    /// [default: 0.05]
    #[arg(long)]
    level: Option<f64>,
    /// Grid for critical values [default: 200 known, 50 estimated]
    #[arg(long)]
    grid: Option<usize>,
    /// Simulated suprema for critical values [default: 10000 known, 2000 estimated]
    #[arg(long)]
    quantile_replicates: Option<usize>,
    /// Initial sample size in estimated mode [default: n]
    #[arg(long)]
    initial_n: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    exp: ExperimentArgs,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[skip_serializing_none]
#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateArgs {
    /// Times at which fluctuations are compared [default: 0.5,0.75,1]
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    #[command(flatten)]
    #[serde(flatten)]
    exp: ExperimentArgs,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[skip_serializing_none]
#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramArgs {
    /// max or sum [default: both]
    #[arg(long)]
    statistic: Option<String>,
    /// [default: 30]
    #[arg(long)]
    bins: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    exp: ExperimentArgs,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Test(a) => {
            let a = merge(&a, a.config.as_deref())?;
            threads(a.threads)?;
            cmd_test(a)
        }
        Command::Simulate(a) => {
            let a = merge(&a, a.config.as_deref())?;
            threads(a.threads)?;
            cmd_simulate(a).map(|_| 0)
        }
        Command::Quantiles(a) => {
            let a = merge(&a, a.config.as_deref())?;
            threads(a.threads)?;
            cmd_quantiles(a).map(|_| 0)
        }
        Command::Power(a) => {
            let a = merge(&a, a.config.as_deref())?;
            threads(a.exp.threads)?;
            cmd_power(a).map(|_| 0)
        }
        Command::ValidateKernel(a) => {
            let a = merge(&a, a.config.as_deref())?;
            threads(a.exp.threads)?;
            cmd_validate(a).map(|_| 0)
        }
        Command::Histogram(a) => {
            let a = merge(&a, a.config.as_deref())?;
            threads(a.exp.threads)?;
            cmd_histogram(a).map(|_| 0)
        }
    }
}

fn threads(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn noise_dim(d: usize, m: usize) -> Result<usize> {
    if d <= m {
        bail!("the data have {d} columns, need more than M = {m}");
    }
    Ok(d - m)
}

/// Reads a table written by `quantiles` (with metadata) or a bare table.
fn read_table(path: &Path) -> Result<QuantileTable> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let inner = v.get("table").cloned().unwrap_or(v);
    Ok(QuantileTable::from_json(&inner.to_string())?)
}

fn cmd_test(mut a: TestArgs) -> Result<u8> {
    let t0 = *a.t0.get_or_insert(DEFAULT_T0);
    let level = *a.level.get_or_insert(DEFAULT_LEVEL);
    let opts = QuantileOptions {
        grid: *a.grid.get_or_insert(DEFAULT_GRID),
        replicates: *a.replicates.get_or_insert(DEFAULT_QUANTILE_REPLICATES),
        seed: *a.seed.get_or_insert(0),
    };
    let input = a.input.clone().context("--input is required")?;
    let data = io::read_data(&input)?;
    let report: TestReport = match (&a.alphas, &a.initial) {
        (Some(alphas), None) => {
            let m = alphas.len();
            if a.m.is_some_and(|x| x != m) {
                bail!("--M = {} does not match the {m} values of --alphas", a.m.unwrap());
            }
            a.m = Some(m);
            let spec = ModelSpec::gaussian(alphas.clone(), data.n(), noise_dim(data.d(), m)?, t0)?;
            let table = match &a.quantiles {
                Some(p) => read_table(p)?,
                None => known_quantiles(&spec, level, &opts)?,
            };
            test_known(&data, &spec, level, &table)?
        }
        (None, Some(initial)) => {
            if a.quantiles.is_some() {
                bail!("--quantiles applies to known spikes; estimated critical values are simulated from the initial sample");
            }
            let m = a.m.context("--M is required with --initial")?;
            let init = io::read_data(initial)?;
            test_estimated(&data, &init, m, t0, level, &opts)?
        }
        (Some(_), Some(_)) => bail!("give either --alphas (known spikes) or --initial (estimated spikes), not both"),
        (None, None) => bail!("give --alphas (known spikes) or --initial (estimated spikes)"),
    };
    let mut report = report;
    report.config_echo["cli"] = echo(&a)?;
    let out = write(a.out_dir.as_deref().unwrap_or(Path::new(".")), "report.json", &report.to_json()?)?;
    let verdict = |r: bool| if r { "reject" } else { "no rejection" };
    println!(
        "max-type: {:.6} (critical {:.6}) {}",
        report.statistic_max,
        report.critical_max,
        verdict(report.reject_max)
    );
    println!(
        "sum-type: {:.6} (critical {:.6}) {}",
        report.statistic_sum,
        report.critical_sum,
        verdict(report.reject_sum)
    );
    println!("largest deviation: spike {} at t = {:.4}", report.argmax_spike, report.argmax_t);
    println!("report: {}", out.display());
    Ok(if report.rejects() { 2 } else { 0 })
}

fn default_alphas(alphas: &Option<Vec<f64>>, n: usize, p: usize, t0: f64) -> Result<Vec<f64>> {
    match alphas {
        Some(a) => Ok(a.clone()),
        None => Ok(sim::default_spikes(p as f64 / n as f64, t0)?.to_vec()),
    }
}

fn cmd_simulate(mut a: SimulateArgs) -> Result<()> {
    let n = *a.n.get_or_insert(DESK.0);
    let p = *a.p.get_or_insert(DESK.1);
    let t0 = *a.t0.get_or_insert(DEFAULT_T0);
    let alternative: Alternative = a.alternative.get_or_insert_with(|| "null".into()).parse()?;
    let s = ScenarioSpec {
        n,
        p,
        t0,
        t_star: *a.t_star.get_or_insert(sim::DEFAULT_T_STAR),
        alternative,
        delta: *a.delta.get_or_insert(0.0),
        spikes: default_alphas(&a.alphas, n, p, t0)?,
        replicates: 1,
        seed: *a.seed.get_or_insert(0),
    };
    a.alphas = Some(s.spikes.clone());
    let i = *a.replicate.get_or_insert(0);
    let data = if a.initial_sample { sim::generate_initial(&s, n, i)? } else { sim::generate_replicate(&s, i)? };
    let meta = Metadata::new("simulate", s.seed, &echo(&a)?)?;
    let text = io::format_data(&data, s.m(), &meta)?;
    let path = match &a.out {
        Some(p) => p.clone(),
        None => a
            .out_dir
            .clone()
            .unwrap_or_else(|| ".".into())
            .join(if a.initial_sample { "initial.csv" } else { "data.csv" }),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {} x {} dataset to {}", data.n(), data.d(), path.display());
    Ok(())
}

fn cmd_quantiles(mut a: QuantilesArgs) -> Result<()> {
    let t0 = *a.t0.get_or_insert(DEFAULT_T0);
    let levels = a.level.get_or_insert_with(|| vec![DEFAULT_LEVEL]).clone();
    let grid = *a.grid.get_or_insert(DEFAULT_GRID);
    let replicates = *a.replicates.get_or_insert(DEFAULT_QUANTILE_REPLICATES);
    let seed = *a.seed.get_or_insert(0);
    let kernel = match (&a.alphas, &a.initial) {
        (Some(alphas), None) => {
            let (n, p) = (a.n.context("--n is required with --alphas")?, a.p.context("--p is required with --alphas")?);
            a.m = Some(alphas.len());
            ModelSpec::gaussian(alphas.clone(), n, p, t0)?.kernel()?
        }
        (None, Some(initial)) => {
            let m = a.m.context("--M is required with --initial")?;
            let init = io::read_data(initial)?;
            let p = noise_dim(init.d(), m)?;
            if a.p.is_some_and(|x| x != p) {
                bail!("--p = {} does not match the {p} noise columns of the initial sample", a.p.unwrap());
            }
            a.p = Some(p);
            let n = *a.n.get_or_insert(init.n());
            let summary = estimate_kernel_inputs(&init, m, t0)?;
            estimated_kernel(&summary, n, p, t0)?
        }
        _ => bail!("give either --alphas (known spikes) or --initial (estimated spikes)"),
    };
    if levels.iter().any(|&l| !(l > 0.0 && l < 1.0)) {
        bail!("levels must lie in (0, 1): {levels:?}");
    }
    let cov = build_grid_covariance(&kernel, &GridSpec::uniform(t0, grid)?)?;
    let conf: Vec<f64> = levels.iter().map(|l| 1.0 - l).collect();
    let table = simulate_sup_quantiles(&cov, &conf, replicates, seed)?;
    let config = echo(&a)?;
    let meta = Metadata::new("quantiles", seed, &config)?;
    let doc = serde_json::json!({
        "generator": format!("spikeshift {}", env!("CARGO_PKG_VERSION")),
        "config_digest": meta.digest(),
        "seed": seed,
        "config": config,
        "table": table,
    });
    let path = write(
        a.out_dir.as_deref().unwrap_or(Path::new(".")),
        "quantiles.json",
        &serde_json::to_string_pretty(&doc)?,
    )?;
    for (i, l) in table.levels.iter().enumerate() {
        println!("{l}: max-type {:.6}  sum-type {:.6}", table.q_max[i], table.q_sum[i]);
    }
    println!("table: {}", path.display());
    Ok(())
}

impl ExperimentArgs {
    fn scenario(&mut self, full_replicates: usize) -> Result<ScenarioSpec> {
        let (n0, p0, r0) = if self.full_scale { (FULL.0, FULL.1, full_replicates) } else { DESK };
        let n = *self.n.get_or_insert(n0);
        let p = *self.p.get_or_insert(p0);
        let t0 = *self.t0.get_or_insert(DEFAULT_T0);
        let s = ScenarioSpec {
            n,
            p,
            t0,
            t_star: *self.t_star.get_or_insert(sim::DEFAULT_T_STAR),
            alternative: Alternative::Null,
            delta: 0.0,
            spikes: default_alphas(&self.alphas, n, p, t0)?,
            replicates: *self.replicates.get_or_insert(r0),
            seed: *self.seed.get_or_insert(0),
        };
        self.alphas = Some(s.spikes.clone());
        s.validate()?;
        Ok(s)
    }

    fn dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| ".".into())
    }
}

fn cmd_power(mut a: PowerArgs) -> Result<()> {
    let alternative: Alternative = a.alternative.get_or_insert_with(|| "alt1".into()).parse()?;
    let deltas = a.deltas.get_or_insert_with(|| vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]).clone();
    let level = *a.level.get_or_insert(DEFAULT_LEVEL);
    let mode = a.mode.get_or_insert_with(|| "known".into()).clone();
    let estimated = match mode.as_str() {
        "known" => false,
        "estimated" => true,
        _ => bail!("unknown mode '{mode}' (expected known or estimated)"),
    };
    let s = a.exp.scenario(if estimated { FULL_ESTIMATED_REPLICATES } else { FULL.2 })?;
    let grid = *a.grid.get_or_insert(if estimated { ESTIMATED_GRID } else { DEFAULT_GRID });
    let qreps = *a
        .quantile_replicates
        .get_or_insert(if estimated { ESTIMATED_QUANTILE_REPLICATES } else { DEFAULT_QUANTILE_REPLICATES });
    let options = QuantileOptions { grid, replicates: qreps, seed: derive_seed(s.seed, "quantiles") };
    let selector = if estimated {
        TestSelector::Estimated { initial_n: *a.initial_n.get_or_insert(s.n), options }
    } else {
        TestSelector::Known { quantiles: known_quantiles(&s.model()?, level, &options)? }
    };
    let curve = sim::level_and_power(&s, alternative, &deltas, &selector, level)?;
    let meta = Metadata::new("power", s.seed, &echo(&a)?)?;
    let dir = a.exp.dir();
    let stem = format!("power_{}_{}", alternative.name(), mode);
    write(&dir, &format!("{stem}.csv"), &artifact::power_curve_csv(&curve, &meta)?)?;
    write(&dir, &format!("{stem}.svg"), &artifact::power_curve_svg(&curve, &meta))?;
    println!("delta  max-type  sum-type");
    for i in 0..deltas.len() {
        println!("{:<6} {:<9.4} {:.4}", deltas[i], curve.rejection_max[i], curve.rejection_sum[i]);
    }
    println!("wrote {stem}.csv and {stem}.svg to {}", dir.display());
    Ok(())
}

fn cmd_validate(mut a: ValidateArgs) -> Result<()> {
    let times = a.times.get_or_insert_with(|| vec![0.5, 0.75, 1.0]).clone();
    let s = a.exp.scenario(FULL.2)?;
    let runs = sim::run_replicates(&s, &times)?;
    let rows = sim::kernel_validation_from_replicates(&s, &runs, &times)?;
    let meta = Metadata::new("validate-kernel", s.seed, &echo(&a)?)?;
    let dir = a.exp.dir();
    write(&dir, "kernel_validation.csv", &artifact::kernel_validation_csv(&rows, &meta)?)?;
    let idx = |f: fn(&sim::KernelValidationRow) -> f64| {
        rows.iter().enumerate().map(|(i, r)| (i as f64 + 1.0, f(r))).collect::<Vec<_>>()
    };
    let svg = artifact::line_chart_svg(
        "Fluctuation covariances by (k, s, t) row",
        "row",
        "covariance",
        &[("empirical", idx(|r| r.empirical)), ("analytic", idx(|r| r.analytic))],
        &meta,
    );
    write(&dir, "kernel_validation.svg", &svg)?;
    println!("k  s     t     empirical    analytic     rel_error");
    for r in &rows {
        println!(
            "{}  {:<5} {:<5} {:<12.4} {:<12.4} {:.4}",
            r.k, r.s, r.t, r.empirical, r.analytic, r.rel_error
        );
    }
    println!("wrote kernel_validation.csv and kernel_validation.svg to {}", dir.display());
    Ok(())
}

fn cmd_histogram(mut a: HistogramArgs) -> Result<()> {
    let stats: Vec<Statistic> = match &a.statistic {
        Some(s) => vec![s.parse()?],
        None => vec![Statistic::Max, Statistic::Sum],
    };
    let bins = *a.bins.get_or_insert(30);
    let s = a.exp.scenario(FULL.2)?;
    let runs = sim::run_replicates(&s, &[])?;
    let meta = Metadata::new("histogram", s.seed, &echo(&a)?)?;
    let dir = a.exp.dir();
    for st in stats {
        let h = sim::histogram_from_replicates(&s, &runs, st, bins)?;
        let name = match st {
            Statistic::Max => "max",
            Statistic::Sum => "sum",
        };
        write(&dir, &format!("histogram_{name}.csv"), &artifact::histogram_csv(&h, &meta)?)?;
        write(&dir, &format!("histogram_{name}.svg"), &artifact::histogram_svg(&h, &meta))?;
        let e = &h.histogram.edges;
        println!(
            "log {name}-type statistic: range [{:.3}, {:.3}], {} modes; wrote histogram_{name}.csv/.svg",
            e[0],
            e[e.len() - 1],
            h.histogram.modes()
        );
    }
    Ok(())
}
