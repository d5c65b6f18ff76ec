//! Replicated simulation studies: calibrate an assay from a simulated external
//! study, survey a simulated population, apply both estimators, and summarize
//! over replicates.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assay::{AssayProfile, BuiltinAssay, DEFAULT_T_STAR};
use crate::cross_section::{adjusted_estimate, simulate_cross_section, snapshot_estimate, IncidenceEstimate};
use crate::duration::DurationDistribution;
use crate::epidemic::{EpidemicScenario, IncidenceTrend};
use crate::error::{Error, Result};
use crate::estimation::{calibrate, AssayEstimates};
use crate::external_study::{simulate_long_infected, simulate_panel, LongInfectedDesign, PanelDesign};
use crate::rng::replicate_rng;

/// Tolerance for the tail diagnostics behind the assumption flags.
pub const ASSUMPTION_EPS: f64 = 1e-3;

/// Where the estimators get `mu`, `Omega` and `beta` from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssayParameters {
    /// Calibrated from a simulated external study in every replicate.
    #[default]
    Estimated,
    /// Exact values with zero variance: `mu` integrated to `tau`, `Omega`, and
    /// the false-recent rate averaged over the long-infected distribution.
    Truth,
}

/// A built-in assay name (`"1A"`) or an inline profile table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AssayChoice {
    Builtin(String),
    Profile(AssayProfile),
}

impl AssayChoice {
    fn resolve(&self, t_star: f64) -> Result<AssayProfile> {
        let p = match self {
            AssayChoice::Builtin(name) => name.parse::<BuiltinAssay>()?.profile(),
            AssayChoice::Profile(p) => p.clone(),
        };
        if p.t_star() == t_star {
            Ok(p)
        } else {
            p.with_t_star(t_star)
        }
    }
}

fn default_n() -> u64 {
    5000
}

fn default_t_star() -> f64 {
    DEFAULT_T_STAR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub name: String,
    pub master_seed: u64,
    #[serde(default = "default_n")]
    pub n_replicates: u64,
    #[serde(default = "default_n")]
    pub n_cross_section: u64,
    /// Defaults to the scenario's current incidence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_lambda: Option<f64>,
    #[serde(default = "default_t_star")]
    pub t_star: f64,
    #[serde(default)]
    pub assay_parameters: AssayParameters,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub assay: AssayChoice,
    pub scenario: EpidemicScenario,
    #[serde(default)]
    pub panel: PanelDesign,
    #[serde(default)]
    pub long_infected: LongInfectedDesign,
}

impl StudyConfig {
    pub fn new(name: impl Into<String>, master_seed: u64, assay: BuiltinAssay, trend: IncidenceTrend) -> Self {
        Self {
            name: name.into(),
            master_seed,
            n_replicates: default_n(),
            n_cross_section: default_n(),
            true_lambda: None,
            t_star: DEFAULT_T_STAR,
            assay_parameters: AssayParameters::Estimated,
            output: None,
            assay: AssayChoice::Builtin(assay.short_name().to_string()),
            scenario: EpidemicScenario::bangkok(trend),
            panel: PanelDesign::default(),
            long_infected: LongInfectedDesign::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn true_lambda(&self) -> f64 {
        self.true_lambda.unwrap_or(self.scenario.lambda0())
    }

    pub fn assay_profile(&self) -> Result<AssayProfile> {
        self.assay.resolve(self.t_star)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_replicates == 0 {
            return Err(Error::Config("n_replicates must be at least 1".into()));
        }
        if self.n_cross_section == 0 {
            return Err(Error::Config("n_cross_section must be at least 1".into()));
        }
        if !(self.true_lambda() > 0.0) {
            return Err(Error::Config(format!("true_lambda must be positive, got {}", self.true_lambda())));
        }
        let assay = self.assay_profile()?;
        self.panel.validate()?;
        self.long_infected.validate(assay.t_star())?;
        Ok(())
    }
}

/// Both estimates from one successful replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicateEstimates {
    pub assay: AssayEstimates,
    pub snapshot: IncidenceEstimate,
    pub adjusted: IncidenceEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub index: u64,
    /// `Err` holds the reason the replicate was dropped.
    pub outcome: std::result::Result<ReplicateEstimates, String>,
}

/// A validated configuration with its resolved assay.
#[derive(Debug, Clone)]
pub struct Study {
    config: StudyConfig,
    assay: AssayProfile,
    truth: Option<AssayEstimates>,
}

impl Study {
    pub fn new(config: StudyConfig) -> Result<Self> {
        config.validate()?;
        let assay = config.assay_profile()?;
        let truth = match config.assay_parameters {
            AssayParameters::Estimated => None,
            AssayParameters::Truth => Some(AssayEstimates {
                mu_hat: assay.mean_window(assay.tau())?,
                var_mu: 0.0,
                omega_hat: assay.mdri()?,
                var_omega: 0.0,
                beta_hat: assay.true_frr(&config.long_infected.duration_dist)?,
                var_beta: 0.0,
                t_star: assay.t_star(),
                upper_used: assay.tau(),
            }),
        };
        Ok(Self { config, assay, truth })
    }

    pub fn config(&self) -> &StudyConfig {
        &self.config
    }

    pub fn assay(&self) -> &AssayProfile {
        &self.assay
    }

    fn replicate(&self, index: u64) -> Result<ReplicateEstimates> {
        let c = &self.config;
        let mut rng = replicate_rng(c.master_seed, index);
        let params = match self.truth {
            Some(t) => t,
            None => {
                let panel = simulate_panel(&c.panel, &self.assay, &mut rng)?;
                let long = simulate_long_infected(&c.long_infected, &self.assay, &mut rng)?;
                calibrate(&panel, &long, self.assay.t_star())?.1
            }
        };
        let counts = simulate_cross_section(c.n_cross_section, &c.scenario, &self.assay, &mut rng)?;
        let snapshot = snapshot_estimate(counts, params.mu_hat, params.var_mu)?;
        let adjusted = adjusted_estimate(
            counts,
            params.omega_hat,
            params.var_omega,
            params.beta_hat,
            params.var_beta,
            params.t_star,
        )?;
        Ok(ReplicateEstimates {
            assay: params,
            snapshot,
            adjusted,
        })
    }

    /// Deterministic in `(master_seed, index)`. A failure in any stage drops
    /// the whole replicate.
    pub fn run_replicate(&self, index: u64) -> ReplicateRecord {
        ReplicateRecord {
            index,
            outcome: self.replicate(index).map_err(|e| e.to_string()),
        }
    }

    /// Runs every replicate, on `workers` threads if given. Records come back
    /// in index order whatever the parallelism.
    pub fn run(&self, workers: Option<usize>) -> Result<StudyResult> {
        let n = self.config.n_replicates;
        let go = || (0..n).into_par_iter().map(|i| self.run_replicate(i)).collect::<Vec<_>>();
        let records = match workers {
            Some(w) => rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?
                .install(go),
            None => go(),
        };
        let summary = summarize(&self.config, &self.assay, &records)?;
        Ok(StudyResult { summary, records })
    }
}

pub fn run_replicate(config: &StudyConfig, index: u64) -> Result<ReplicateRecord> {
    Ok(Study::new(config.clone())?.run_replicate(index))
}

pub fn run_study(config: &StudyConfig, workers: Option<usize>) -> Result<StudyResult> {
    Study::new(config.clone())?.run(workers)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyResult {
    pub summary: SummaryRow,
    pub records: Vec<ReplicateRecord>,
}

/// Replicate summary of one estimator. Bias and standard-error fields are in
/// units of 1e-2 per year; coverage is a percentage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub median_bias: f64,
    pub mean_bias: f64,
    pub empirical_se: f64,
    pub mean_see: f64,
    pub coverage_pct: f64,
}

impl EstimatorSummary {
    /// Monte Carlo standard error of the mean estimate, in 1e-2 units.
    pub fn mc_se_of_mean(&self, n: u64) -> f64 {
        self.empirical_se / (n as f64).sqrt()
    }

    fn from_estimates(est: &[IncidenceEstimate], truth: f64) -> Self {
        let n = est.len() as f64;
        let mut bias: Vec<f64> = est.iter().map(|e| e.point - truth).collect();
        let mean_bias = bias.iter().sum::<f64>() / n;
        let sd = if est.len() > 1 {
            (bias.iter().map(|b| (b - mean_bias).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        bias.sort_by(f64::total_cmp);
        let m = bias.len() / 2;
        let median = if bias.len() % 2 == 1 { bias[m] } else { 0.5 * (bias[m - 1] + bias[m]) };
        let see = est.iter().map(|e| e.se).sum::<f64>() / n;
        let covered = est.iter().filter(|e| e.covers(truth)).count() as f64;
        Self {
            median_bias: 100.0 * median,
            mean_bias: 100.0 * mean_bias,
            empirical_se: 100.0 * sd,
            mean_see: 100.0 * see,
            coverage_pct: 100.0 * covered / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub name: String,
    pub incidence: String,
    pub assay: String,
    pub long_infected: String,
    /// Assumption S1 holds and incidence is constant.
    pub snapshot_assumptions: bool,
    /// Assumption K1 holds and incidence is constant.
    pub adjusted_assumptions: bool,
    pub n_replicates: u64,
    pub n_failed: u64,
    pub snapshot: EstimatorSummary,
    pub adjusted: EstimatorSummary,
    /// First few failure messages, for diagnosis.
    pub failures: Vec<String>,
}

fn summarize(config: &StudyConfig, assay: &AssayProfile, records: &[ReplicateRecord]) -> Result<SummaryRow> {
    let ok: Vec<&ReplicateEstimates> = records.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    let failures: Vec<String> = records.iter().filter_map(|r| r.outcome.as_ref().err().cloned()).collect();
    if ok.is_empty() {
        return Err(Error::Estimation(format!(
            "all {} replicates failed; first error: {}",
            records.len(),
            failures.first().map(String::as_str).unwrap_or("none")
        )));
    }
    let truth = config.true_lambda();
    let snaps: Vec<IncidenceEstimate> = ok.iter().map(|r| r.snapshot).collect();
    let adjs: Vec<IncidenceEstimate> = ok.iter().map(|r| r.adjusted).collect();
    let constant = config.scenario.kind() == IncidenceTrend::Constant;
    Ok(SummaryRow {
        name: config.name.clone(),
        incidence: config.scenario.kind().label().to_string(),
        assay: assay.name().to_string(),
        long_infected: config.long_infected.duration_dist.label(),
        snapshot_assumptions: constant && assay.check_assumption_s1(ASSUMPTION_EPS).holds,
        adjusted_assumptions: constant && assay.check_assumption_k1(ASSUMPTION_EPS).holds,
        n_replicates: records.len() as u64,
        n_failed: failures.len() as u64,
        snapshot: EstimatorSummary::from_estimates(&snaps, truth),
        adjusted: EstimatorSummary::from_estimates(&adjs, truth),
        failures: failures.into_iter().take(5).collect(),
    })
}

/// Which table layout a report uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    /// Both estimators by incidence trend and assay.
    Table1,
    /// Adjusted estimator by assay and long-infected distribution.
    Table2,
}

pub fn write_report<W: Write>(kind: TableKind, rows: &[SummaryRow], out: W) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Config("report needs at least one study".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    let f = |x: f64| format!("{x:.2}");
    let stats = |s: &EstimatorSummary| vec![f(s.median_bias), f(s.empirical_se), f(s.mean_see), f(s.coverage_pct)];
    match kind {
        TableKind::Table1 => {
            w.write_record([
                "incidence",
                "assay",
                "snapshot_asm",
                "snapshot_bias",
                "snapshot_se",
                "snapshot_see",
                "snapshot_cov",
                "adjusted_asm",
                "adjusted_bias",
                "adjusted_se",
                "adjusted_see",
                "adjusted_cov",
                "n_ok",
                "n_failed",
            ])?;
            for r in rows {
                let mut rec = vec![r.incidence.clone(), r.assay.clone(), r.snapshot_assumptions.to_string()];
                rec.extend(stats(&r.snapshot));
                rec.push(r.adjusted_assumptions.to_string());
                rec.extend(stats(&r.adjusted));
                rec.push((r.n_replicates - r.n_failed).to_string());
                rec.push(r.n_failed.to_string());
                w.write_record(&rec)?;
            }
        }
        TableKind::Table2 => {
            w.write_record([
                "assay",
                "long_infected",
                "adjusted_bias",
                "adjusted_se",
                "adjusted_see",
                "adjusted_cov",
                "n_ok",
                "n_failed",
            ])?;
            for r in rows {
                let mut rec = vec![r.assay.clone(), r.long_infected.clone()];
                rec.extend(stats(&r.adjusted));
                rec.push((r.n_replicates - r.n_failed).to_string());
                rec.push(r.n_failed.to_string());
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One CSV row per replicate.
pub fn write_replicates<W: Write>(records: &[ReplicateRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "replicate",
        "status",
        "mu_hat",
        "omega_hat",
        "beta_hat",
        "n_neg",
        "n_pos",
        "n_rec",
        "snapshot",
        "snapshot_se",
        "adjusted",
        "adjusted_se",
        "error",
    ])?;
    for r in records {
        match &r.outcome {
            Ok(e) => {
                let c = e.snapshot.counts;
                w.write_record([
                    r.index.to_string(),
                    "ok".into(),
                    e.assay.mu_hat.to_string(),
                    e.assay.omega_hat.to_string(),
                    e.assay.beta_hat.to_string(),
                    c.n_neg.to_string(),
                    c.n_pos.to_string(),
                    c.n_rec.to_string(),
                    e.snapshot.point.to_string(),
                    e.snapshot.se.to_string(),
                    e.adjusted.point.to_string(),
                    e.adjusted.se.to_string(),
                    String::new(),
                ])?;
            }
            Err(msg) => {
                let mut rec = vec![r.index.to_string(), "failed".into()];
                rec.extend(std::iter::repeat_n(String::new(), 10));
                rec.push(msg.clone());
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn trend_slug(t: IncidenceTrend) -> &'static str {
    match t {
        IncidenceTrend::Constant => "constant",
        IncidenceTrend::LinearDecreasing => "linear",
        IncidenceTrend::ExponentialDecreasing => "exponential",
    }
}

/// The 24 trend-by-assay settings, seeded `1001..`.
pub fn table1_presets() -> Vec<StudyConfig> {
    let mut out = Vec::new();
    for a in BuiltinAssay::ALL {
        for t in IncidenceTrend::ALL {
            let seed = 1001 + out.len() as u64;
            out.push(StudyConfig::new(
                format!("table1-{}-{}", trend_slug(t), a.short_name()),
                seed,
                a,
                t,
            ));
        }
    }
    out
}

/// Assays 1C and 2C under constant incidence with three long-infected
/// duration distributions, seeded `2001..`.
pub fn table2_presets() -> Vec<StudyConfig> {
    let dists = [
        ("uniform", DurationDistribution::uniform_2_12()),
        ("duong", DurationDistribution::duong_like()),
        ("duong-truncated", DurationDistribution::duong_truncated()),
    ];
    let mut out = Vec::new();
    for a in [BuiltinAssay::A1C, BuiltinAssay::A2C] {
        for (slug, d) in &dists {
            let seed = 2001 + out.len() as u64;
            let mut c = StudyConfig::new(
                format!("table2-{}-{slug}", a.short_name()),
                seed,
                a,
                IncidenceTrend::Constant,
            );
            c.long_infected.duration_dist = d.clone();
            out.push(c);
        }
    }
    out
}

/// Writes each preset to `<dir>/<name>.toml`, returning the paths.
pub fn write_presets(configs: &[StudyConfig], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    configs
        .iter()
        .map(|c| {
            let path = dir.join(format!("{}.toml", c.name));
            fs::write(&path, c.to_toml_string()?)?;
            Ok(path)
        })
        .collect()
}

/// Loads every `*.toml` in `dir`, sorted by file name.
pub fn load_config_dir(dir: impl AsRef<Path>) -> Result<Vec<StudyConfig>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths.iter().map(StudyConfig::from_path).collect()
}

/// Machine-readable record of a run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub rng: &'static str,
    pub workers: Option<usize>,
    pub configs: Vec<StudyConfig>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(configs: Vec<StudyConfig>, workers: Option<usize>, outputs: Vec<PathBuf>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            rng: "chacha20; key = master_seed (u64 LE, zero padded); stream = replicate index",
            workers,
            configs,
            outputs,
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }
}
