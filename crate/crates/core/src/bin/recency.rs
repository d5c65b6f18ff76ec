use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use recency_core::assay::{AssayTruth, BuiltinAssay, DAYS_PER_YEAR};
use recency_core::bias::{expected_adjusted, expected_snapshot, shadow_adjusted, shadow_snapshot};
use recency_core::cross_section::{adjusted_estimate, snapshot_estimate, CrossSectionCounts, IncidenceEstimate};
use recency_core::duration::DurationDistribution;
use recency_core::epidemic::{EpidemicScenario, IncidenceTrend};
use recency_core::estimation::{estimate_frr, estimate_window_and_mdri, fit_gee};
use recency_core::external_study::{
    read_long_infected_csv, simulate_long_infected, simulate_panel, write_long_infected_csv, LongInfectedDesign,
    PanelDataset, PanelDesign,
};
use recency_core::harness::{
    load_config_dir, table1_presets, table2_presets, write_presets, write_replicates, write_report, RunManifest,
    Study, StudyConfig, TableKind,
};

#[derive(Parser)]
#[command(name = "recency", version, about = "Cross-sectional HIV incidence estimation from recency tests")]
struct Cli {
    /// Master seed (overrides config files).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of replicates (overrides config files).
    #[arg(long, global = true)]
    replicates: Option<u64>,
    /// Worker threads for replicate studies (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Table {
    Table1,
    Table2,
}

impl From<Table> for TableKind {
    fn from(t: Table) -> Self {
        match t {
            Table::Table1 => TableKind::Table1,
            Table::Table2 => TableKind::Table2,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Assay profile queries.
    Assay {
        #[command(subcommand)]
        cmd: AssayCmd,
    },
    /// Shadow times and expected estimates under a trend scenario.
    Theory {
        assay: BuiltinAssay,
        scenario: IncidenceTrend,
        /// False-recent rate plugged into the adjusted estimator
        /// (default: exact rate over Uniform[2,12]).
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Fit the recency curve to a panel CSV and report window estimates.
    Calibrate {
        panel: PathBuf,
        /// Long-infected sample CSV (duration_years,recent) for the false-recent rate.
        #[arg(long)]
        long: Option<PathBuf>,
        #[arg(long, default_value_t = 2.0)]
        t_star: f64,
        /// Integration limit for the window period (default: largest observed duration).
        #[arg(long)]
        upper: Option<f64>,
    },
    /// Incidence from survey counts and assay estimates.
    Estimate(EstimateArgs),
    /// Run one replicate study from a config file.
    Simulate { config: PathBuf },
    /// Run every config in a directory and write a summary table.
    Report { table: Table, config_dir: PathBuf },
    /// Write the built-in study configs to a directory.
    Presets { table: Table, dir: PathBuf },
    /// Simulate a calibration panel (and optionally a long-infected sample).
    Panel {
        assay: BuiltinAssay,
        /// Also write a long-infected sample here.
        #[arg(long)]
        long_out: Option<PathBuf>,
        /// Long-infected duration distribution: uniform, duong, duong-truncated.
        #[arg(long, default_value = "uniform")]
        long_dist: String,
    },
}

#[derive(Subcommand)]
enum AssayCmd {
    /// Exact window period, MDRI, false-recent rate and shadow times.
    Props {
        name: BuiltinAssay,
        /// Integration limit for the window period (default: tau).
        #[arg(long)]
        upper: Option<f64>,
        /// Long-infected duration distribution: uniform, duong, duong-truncated.
        #[arg(long, default_value = "uniform")]
        long_dist: String,
    },
}

#[derive(clap::Args)]
struct EstimateArgs {
    /// CSV file whose first row supplies any of the fields below by column name.
    #[arg(long)]
    row: Option<PathBuf>,
    #[arg(long)]
    n_neg: Option<u64>,
    #[arg(long)]
    n_pos: Option<u64>,
    #[arg(long)]
    n_rec: Option<u64>,
    #[arg(long)]
    mu_hat: Option<f64>,
    #[arg(long)]
    var_mu: Option<f64>,
    #[arg(long)]
    omega_hat: Option<f64>,
    #[arg(long)]
    var_omega: Option<f64>,
    #[arg(long)]
    beta_hat: Option<f64>,
    #[arg(long)]
    var_beta: Option<f64>,
    #[arg(long)]
    t_star: Option<f64>,
}

#[derive(serde::Deserialize, Default)]
struct EstimateRow {
    n_neg: Option<u64>,
    n_pos: Option<u64>,
    n_rec: Option<u64>,
    mu_hat: Option<f64>,
    var_mu: Option<f64>,
    omega_hat: Option<f64>,
    var_omega: Option<f64>,
    beta_hat: Option<f64>,
    var_beta: Option<f64>,
    t_star: Option<f64>,
}

fn output(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn key_values(out: &Option<PathBuf>, rows: &[(&str, String)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(output(out)?);
    w.write_record(["key", "value"])?;
    for (k, v) in rows {
        w.write_record([k, v.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

fn assay_props(cli: &Cli, name: BuiltinAssay, upper: Option<f64>, long_dist: &str) -> Result<()> {
    let a = name.profile();
    let g = DurationDistribution::preset(long_dist)?;
    let upper = upper.unwrap_or(a.tau());
    let t = AssayTruth::compute(&a, upper, &g)?;
    let s1 = a.check_assumption_s1(recency_core::harness::ASSUMPTION_EPS);
    let k1 = a.check_assumption_k1(recency_core::harness::ASSUMPTION_EPS);
    let d = |x: f64| format!("{:.2}", x * DAYS_PER_YEAR);
    key_values(
        &cli.out,
        &[
            ("assay", a.name().to_string()),
            ("tau", a.tau().to_string()),
            ("t_star", a.t_star().to_string()),
            ("upper", upper.to_string()),
            ("mean_window_years", t.mu.to_string()),
            ("mean_window_days", d(t.mu)),
            ("mdri_years", t.mdri.to_string()),
            ("mdri_days", d(t.mdri)),
            ("frr", t.frr.to_string()),
            ("long_infected", g.label()),
            ("shadow_snapshot_days", d(t.shadow_snapshot)),
            ("shadow_adjusted_days", d(t.shadow_adjusted)),
            ("assumption_s1", s1.holds.to_string()),
            ("s1_tail_max", s1.value.to_string()),
            ("assumption_k1", k1.holds.to_string()),
            ("k1_tail_range", k1.value.to_string()),
        ],
    )
}

fn theory(cli: &Cli, assay: BuiltinAssay, trend: IncidenceTrend, beta: Option<f64>) -> Result<()> {
    let a = assay.profile();
    let sc = EpidemicScenario::bangkok(trend);
    let beta = match beta {
        Some(b) => b,
        None => a.true_frr(&DurationDistribution::uniform_2_12())?,
    };
    let upper = a.tau();
    let mu = a.mean_window(upper)?;
    let mut w = csv::Writer::from_writer(output(&cli.out)?);
    w.write_record(["assay", "scenario", "estimator", "shadow_years", "expected", "bias"])?;
    let snap = expected_snapshot(&a, &sc, mu, upper)?;
    let adj = expected_adjusted(&a, &sc, beta)?;
    for (est, shadow, e) in [
        ("snapshot", shadow_snapshot(&a, upper)?, snap),
        ("adjusted", shadow_adjusted(&a, beta)?, adj),
    ] {
        w.write_record([
            a.name().to_string(),
            trend.label().to_string(),
            est.to_string(),
            format!("{shadow:.6}"),
            format!("{e:.8}"),
            format!("{:.8}", e - sc.lambda0()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn calibrate_cmd(cli: &Cli, panel: &Path, long: Option<&Path>, t_star: f64, upper: Option<f64>) -> Result<()> {
    let data = PanelDataset::from_path(panel)?;
    let fit = fit_gee(&data)?;
    let upper = upper.unwrap_or(fit.max_duration);
    let w = estimate_window_and_mdri(&fit, t_star, upper)?;
    let mut rows = vec![
        ("n_obs", fit.n_obs.to_string()),
        ("n_clusters", fit.n_clusters.to_string()),
        ("converged", fit.converged.to_string()),
        ("iterations", fit.iterations.to_string()),
        ("alpha", fit.alpha.to_string()),
    ];
    let names = ["gamma0", "gamma1", "gamma2", "gamma3"];
    for (k, n) in names.iter().enumerate() {
        rows.push((n, fit.gamma[k].to_string()));
    }
    rows.extend([
        ("t_star", t_star.to_string()),
        ("upper_used", upper.to_string()),
        ("mu_hat", w.mu.value.to_string()),
        ("var_mu", w.mu.variance.to_string()),
        ("omega_hat", w.omega.value.to_string()),
        ("var_omega", w.omega.variance.to_string()),
    ]);
    if let Some(p) = long {
        let sample = read_long_infected_csv(File::open(p).with_context(|| format!("opening {}", p.display()))?)?;
        let b = estimate_frr(&sample)?;
        rows.push(("beta_hat", b.value.to_string()));
        rows.push(("var_beta", b.variance.to_string()));
    }
    key_values(&cli.out, &rows)
}

fn estimate_cmd(cli: &Cli, a: &EstimateArgs) -> Result<()> {
    let row = match &a.row {
        Some(p) => {
            let mut r = csv::Reader::from_path(p).with_context(|| format!("opening {}", p.display()))?;
            match r.deserialize::<EstimateRow>().next() {
                Some(row) => row?,
                None => bail!("{} has no data row", p.display()),
            }
        }
        None => EstimateRow::default(),
    };
    let n_neg = a.n_neg.or(row.n_neg).context("--n-neg is required")?;
    let n_pos = a.n_pos.or(row.n_pos).context("--n-pos is required")?;
    let n_rec = a.n_rec.or(row.n_rec).context("--n-rec is required")?;
    let counts = CrossSectionCounts::new(n_neg, n_pos, n_rec)?;
    let mut out: Vec<IncidenceEstimate> = Vec::new();
    if let Some(mu) = a.mu_hat.or(row.mu_hat) {
        out.push(snapshot_estimate(counts, mu, a.var_mu.or(row.var_mu).unwrap_or(0.0))?);
    }
    if let Some(om) = a.omega_hat.or(row.omega_hat) {
        let beta = a.beta_hat.or(row.beta_hat).context("--beta-hat is required with --omega-hat")?;
        out.push(adjusted_estimate(
            counts,
            om,
            a.var_omega.or(row.var_omega).unwrap_or(0.0),
            beta,
            a.var_beta.or(row.var_beta).unwrap_or(0.0),
            a.t_star.or(row.t_star).unwrap_or(2.0),
        )?);
    }
    if out.is_empty() {
        bail!("give --mu-hat for the snapshot estimator and/or --omega-hat with --beta-hat for the adjusted one");
    }
    let mut w = csv::Writer::from_writer(output(&cli.out)?);
    w.write_record(["estimator", "point", "se", "ci_lo", "ci_hi"])?;
    for e in out {
        w.write_record([
            e.estimator.label().to_string(),
            e.point.to_string(),
            e.se.to_string(),
            e.ci95.0.to_string(),
            e.ci95.1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn apply_overrides(cli: &Cli, mut c: StudyConfig) -> StudyConfig {
    if let Some(s) = cli.seed {
        c.master_seed = s;
    }
    if let Some(n) = cli.replicates {
        c.n_replicates = n;
    }
    c
}

fn simulate(cli: &Cli, config: &Path) -> Result<()> {
    let c = apply_overrides(cli, StudyConfig::from_path(config)?);
    let out_dir = cli.out.clone().or_else(|| c.output.clone());
    let study = Study::new(c.clone())?;
    let result = study.run(cli.workers)?;
    let summary = serde_json::to_string_pretty(&result.summary)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(&dir)?;
        let s_path = dir.join(format!("{}_summary.json", c.name));
        let r_path = dir.join(format!("{}_replicates.csv", c.name));
        fs::write(&s_path, &summary)?;
        write_replicates(&result.records, File::create(&r_path)?)?;
        RunManifest::new(vec![c.clone()], cli.workers, vec![s_path, r_path]).write(dir.join(format!("{}_manifest.json", c.name)))?;
    }
    println!("{summary}");
    Ok(())
}

fn report(cli: &Cli, table: Table, dir: &Path) -> Result<()> {
    let configs: Vec<StudyConfig> = load_config_dir(dir)?.into_iter().map(|c| apply_overrides(cli, c)).collect();
    if configs.is_empty() {
        bail!("no .toml configs in {}", dir.display());
    }
    let mut rows = Vec::with_capacity(configs.len());
    for c in &configs {
        eprintln!("running {} ({} replicates)", c.name, c.n_replicates);
        rows.push(Study::new(c.clone())?.run(cli.workers)?.summary);
    }
    write_report(table.into(), &rows, output(&cli.out)?)?;
    if let Some(p) = &cli.out {
        let m = p.with_extension("manifest.json");
        RunManifest::new(configs, cli.workers, vec![p.clone()]).write(&m)?;
    }
    Ok(())
}

fn presets(cli: &Cli, table: Table, dir: &Path) -> Result<()> {
    let configs: Vec<StudyConfig> = match table {
        Table::Table1 => table1_presets(),
        Table::Table2 => table2_presets(),
    }
    .into_iter()
    .map(|c| apply_overrides(cli, c))
    .collect();
    for p in write_presets(&configs, dir)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn panel(cli: &Cli, assay: BuiltinAssay, long_out: Option<&Path>, long_dist: &str) -> Result<()> {
    let a = assay.profile();
    let mut rng = ChaCha20Rng::seed_from_u64(cli.seed.unwrap_or(1));
    let p = simulate_panel(&PanelDesign::default(), &a, &mut rng)?;
    p.write_csv(output(&cli.out)?)?;
    if let Some(path) = long_out {
        let design = LongInfectedDesign {
            duration_dist: DurationDistribution::preset(long_dist)?,
            ..LongInfectedDesign::default()
        };
        let s = simulate_long_infected(&design, &a, &mut rng)?;
        write_long_infected_csv(&s, File::create(path)?)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Assay {
            cmd: AssayCmd::Props { name, upper, long_dist },
        } => assay_props(&cli, *name, *upper, long_dist),
        Command::Theory { assay, scenario, beta } => theory(&cli, *assay, *scenario, *beta),
        Command::Calibrate {
            panel,
            long,
            t_star,
            upper,
        } => calibrate_cmd(&cli, panel, long.as_deref(), *t_star, *upper),
        Command::Estimate(a) => estimate_cmd(&cli, a),
        Command::Simulate { config } => simulate(&cli, config),
        Command::Report { table, config_dir } => report(&cli, *table, config_dir),
        Command::Presets { table, dir } => presets(&cli, *table, dir),
        Command::Panel {
            assay,
            long_out,
            long_dist,
        } => panel(&cli, *assay, long_out.as_deref(), long_dist),
    }
}
