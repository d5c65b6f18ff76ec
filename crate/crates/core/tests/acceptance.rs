//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use recency_core::assay::{BuiltinAssay, DAYS_PER_YEAR};
use recency_core::bias::{expected_adjusted, expected_snapshot};
use recency_core::duration::DurationDistribution;
use recency_core::epidemic::{EpidemicScenario, IncidenceTrend};
use recency_core::estimation::{estimate_window_and_mdri, fit_gee, fit_gee_with, GeeOptions, WorkingCorrelation};
use recency_core::external_study::{simulate_panel, PanelDataset, PanelDesign, PanelRow};
use recency_core::harness::{run_study, table1_presets, table2_presets, AssayParameters, StudyConfig, SummaryRow};

struct Check {
    label: String,
    pass: bool,
}

fn check(label: impl Into<String>, pass: bool) -> Check {
    Check {
        label: label.into(),
        pass,
    }
}

struct Criterion {
    id: u32,
    title: &'static str,
    checks: Vec<Check>,
    note: String,
}

impl Criterion {
    fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    fn print(&self) {
        let failed: Vec<&str> = self.checks.iter().filter(|c| !c.pass).map(|c| c.label.as_str()).collect();
        let status = if self.pass() { "PASS" } else { "FAIL" };
        let mut line = format!(
            "[{status}] criterion {}: {} ({}/{} checks)",
            self.id,
            self.title,
            self.checks.len() - failed.len(),
            self.checks.len()
        );
        if !self.note.is_empty() {
            line.push_str(&format!(" {}", self.note));
        }
        if !failed.is_empty() {
            line.push_str(&format!(" failed: {}", failed.join("; ")));
        }
        println!("{line}");
    }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn assay_truth_values() -> Criterion {
    let days = |x: f64| x * DAYS_PER_YEAR;
    let a1 = BuiltinAssay::A1A.profile();
    let a2 = BuiltinAssay::A2A.profile();
    let shadow = |a: &recency_core::assay::AssayProfile| recency_core::bias::shadow_snapshot(a, a.tau()).unwrap();
    let rows = [
        ("mean_window(1A)", days(a1.mean_window(12.0).unwrap()), 101.0, 2.0),
        ("mdri(1A)", days(a1.mdri().unwrap()), 98.0, 2.0),
        ("shadow(1A)", days(shadow(&a1)), 194.0, 5.0),
        ("mean_window(2A)", days(a2.mean_window(12.0).unwrap()), 248.0, 3.0),
        ("mdri(2A)", days(a2.mdri().unwrap()), 224.0, 3.0),
        ("shadow(2A)", days(shadow(&a2)), 306.0, 6.0),
        ("phi(1A,2)", a1.phi(2.0).unwrap(), 0.014, 0.002),
        ("phi(2A,2)", a2.phi(2.0).unwrap(), 0.0725, 0.003),
        ("phi(1D,12)", BuiltinAssay::A1D.profile().phi(12.0).unwrap(), 0.098, 0.002),
        ("phi(2D,12)", BuiltinAssay::A2D.profile().phi(12.0).unwrap(), 0.104, 0.002),
    ];
    Criterion {
        id: 1,
        title: "assay truth values",
        checks: rows
            .iter()
            .map(|(n, v, t, tol)| check(format!("{n}={v:.4} target {t}+/-{tol}"), within(*v, *t, *tol)))
            .collect(),
        note: String::new(),
    }
}

fn expected_bias_theory() -> Criterion {
    let mut checks = Vec::new();
    let snap = [
        (BuiltinAssay::A1A, IncidenceTrend::LinearDecreasing, 0.15),
        (BuiltinAssay::A1A, IncidenceTrend::ExponentialDecreasing, 0.12),
        (BuiltinAssay::A2A, IncidenceTrend::LinearDecreasing, 0.20),
        (BuiltinAssay::A2A, IncidenceTrend::ExponentialDecreasing, 0.23),
    ];
    for (a, t, target) in snap {
        let p = a.profile();
        let sc = EpidemicScenario::bangkok(t);
        let mu = p.mean_window(p.tau()).unwrap();
        let bias = 100.0 * (expected_snapshot(&p, &sc, mu, p.tau()).unwrap() - sc.lambda0());
        checks.push(check(
            format!("snapshot({a},{}) bias={bias:.4}e-2 target {target}e-2 +/-15%", t.label()),
            (bias - target).abs() <= 0.15 * target,
        ));
    }
    for (t, target) in [(IncidenceTrend::LinearDecreasing, 0.10), (IncidenceTrend::ExponentialDecreasing, 0.09)] {
        let p = BuiltinAssay::A1B.profile();
        let sc = EpidemicScenario::bangkok(t);
        let beta = p.true_frr(&DurationDistribution::uniform_2_12()).unwrap();
        let bias = 100.0 * (expected_adjusted(&p, &sc, beta).unwrap() - sc.lambda0());
        checks.push(check(
            format!("adjusted(1B,{}) bias={bias:.4}e-2 target {target}e-2 +/-15%", t.label()),
            (bias - target).abs() <= 0.15 * target,
        ));
    }
    Criterion {
        id: 2,
        title: "expected-bias theory",
        checks,
        note: String::new(),
    }
}

struct TableCell {
    name: &'static str,
    // bias, se, see, coverage for snapshot then adjusted
    snapshot: [f64; 4],
    adjusted: [f64; 4],
}

const TABLE1_CELLS: [TableCell; 6] = [
    TableCell {
        name: "table1-constant-1A",
        snapshot: [0.04, 0.63, 0.63, 94.54],
        adjusted: [0.05, 0.67, 0.66, 94.52],
    },
    TableCell {
        name: "table1-constant-1B",
        snapshot: [0.79, 0.68, 0.68, 84.24],
        adjusted: [0.11, 0.99, 0.99, 95.40],
    },
    TableCell {
        name: "table1-constant-1D",
        snapshot: [3.28, 0.98, 0.97, 3.86],
        adjusted: [1.01, 1.62, 1.63, 90.66],
    },
    TableCell {
        name: "table1-linear-1B",
        snapshot: [0.87, 0.69, 0.69, 81.42],
        adjusted: [0.23, 1.00, 1.00, 95.02],
    },
    TableCell {
        name: "table1-constant-2A",
        snapshot: [0.06, 0.40, 0.40, 95.10],
        adjusted: [0.05, 0.46, 0.46, 95.24],
    },
    TableCell {
        name: "table1-constant-2B",
        snapshot: [0.48, 0.43, 0.43, 83.74],
        adjusted: [0.08, 0.57, 0.57, 94.96],
    },
];

const DESK_REPLICATES: u64 = 1000;

fn run_preset(configs: &[StudyConfig], name: &str, replicates: u64) -> SummaryRow {
    let mut c = configs.iter().find(|c| c.name == name).expect("preset exists").clone();
    c.n_replicates = replicates;
    run_study(&c, None).expect("study runs").summary
}

fn table1_reproduction() -> Criterion {
    let start = Instant::now();
    let presets = table1_presets();
    let mut checks = Vec::new();
    for cell in &TABLE1_CELLS {
        let row = run_preset(&presets, cell.name, DESK_REPLICATES);
        for (est, got, want) in [("snapshot", row.snapshot, cell.snapshot), ("adjusted", row.adjusted, cell.adjusted)] {
            let tag = format!("{} {est}", cell.name.trim_start_matches("table1-"));
            checks.push(check(
                format!("{tag} median bias {:.2} vs {:.2}+/-0.20", got.median_bias, want[0]),
                within(got.median_bias, want[0], 0.20),
            ));
            checks.push(check(
                format!("{tag} coverage {:.2} vs {:.2}+/-2.5", got.coverage_pct, want[3]),
                within(got.coverage_pct, want[3], 2.5),
            ));
            let ratio = got.mean_see / got.empirical_se;
            checks.push(check(format!("{tag} SEE/SE {ratio:.3} in [0.9,1.1]"), (0.9..=1.1).contains(&ratio)));
        }
        checks.push(check(
            format!(
                "{} adjusted SE {:.2} > snapshot SE {:.2}",
                cell.name, row.adjusted.empirical_se, row.snapshot.empirical_se
            ),
            row.adjusted.empirical_se > row.snapshot.empirical_se,
        ));
        if cell.name == "table1-constant-1D" {
            checks.push(check(
                format!("constant-1D snapshot coverage {:.2} < 10", row.snapshot.coverage_pct),
                row.snapshot.coverage_pct < 10.0,
            ));
        }
        if cell.name == "table1-constant-1B" {
            checks.push(check(
                format!("constant-1B snapshot coverage {:.2} < 88", row.snapshot.coverage_pct),
                row.snapshot.coverage_pct < 88.0,
            ));
            checks.push(check(
                format!("constant-1B adjusted coverage {:.2} in [93,97]", row.adjusted.coverage_pct),
                (93.0..=97.0).contains(&row.adjusted.coverage_pct),
            ));
        }
    }
    Criterion {
        id: 3,
        title: "desk-scale reproduction of both-estimator table",
        checks,
        note: format!("({} replicates per setting, {:.0?})", DESK_REPLICATES, start.elapsed()),
    }
}

fn table2_reproduction() -> Criterion {
    let presets = table2_presets();
    let uni = run_preset(&presets, "table2-1C-uniform", DESK_REPLICATES).adjusted;
    let mid = run_preset(&presets, "table2-1C-duong", DESK_REPLICATES).adjusted;
    let trunc = run_preset(&presets, "table2-1C-duong-truncated", DESK_REPLICATES).adjusted;
    let checks = vec![
        check(format!("uniform |bias| {:.2} <= 0.3", uni.median_bias.abs()), uni.median_bias.abs() <= 0.3),
        check(format!("uniform coverage {:.2} >= 93", uni.coverage_pct), uni.coverage_pct >= 93.0),
        check(format!("[2,5] bias {:.2} >= 1.2", trunc.median_bias), trunc.median_bias >= 1.2),
        check(format!("[2,5] coverage {:.2} <= 75", trunc.coverage_pct), trunc.coverage_pct <= 75.0),
        check(
            format!(
                "bias increases {:.2} < {:.2} < {:.2}",
                uni.median_bias, mid.median_bias, trunc.median_bias
            ),
            uni.median_bias < mid.median_bias && mid.median_bias < trunc.median_bias,
        ),
        check(
            format!(
                "coverage decreases {:.2} > {:.2} > {:.2}",
                uni.coverage_pct, mid.coverage_pct, trunc.coverage_pct
            ),
            uni.coverage_pct > mid.coverage_pct && mid.coverage_pct > trunc.coverage_pct,
        ),
    ];
    Criterion {
        id: 4,
        title: "desk-scale reproduction of long-infected sensitivity table (1C adjusted)",
        checks,
        note: String::new(),
    }
}

fn unbiased_with_exact_parameters() -> Criterion {
    let mut checks = Vec::new();
    for (assay, seed) in [(BuiltinAssay::A1A, 501), (BuiltinAssay::A1B, 502)] {
        let mut c = StudyConfig::new(format!("exact-{assay}"), seed, assay, IncidenceTrend::Constant);
        c.n_replicates = 5000;
        c.assay_parameters = AssayParameters::Truth;
        let s = run_study(&c, None).unwrap().summary;
        let (est, name) = if assay == BuiltinAssay::A1A {
            (s.snapshot, "snapshot(1A)")
        } else {
            (s.adjusted, "adjusted(1B)")
        };
        let mc = est.mc_se_of_mean(s.n_replicates - s.n_failed);
        checks.push(check(
            format!("{name} mean bias {:.4}e-2 within 2 MC SE ({:.4}e-2)", est.mean_bias, 2.0 * mc),
            est.mean_bias.abs() <= 2.0 * mc,
        ));
    }
    Criterion {
        id: 5,
        title: "unbiasedness under exact assay parameters",
        checks,
        note: "(5000 replicates each)".into(),
    }
}

/// Kolmogorov distribution tail, `P(K > x)`.
fn kolmogorov_sf(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
    }
    s.clamp(0.0, 1.0)
}

fn sampler_distribution() -> Criterion {
    let n = 100_000;
    let mut rng = ChaCha20Rng::seed_from_u64(606);
    let mut checks = Vec::new();
    for trend in IncidenceTrend::ALL {
        let sc = EpidemicScenario::bangkok(trend);
        let (l0, rho, p) = (sc.lambda0(), sc.rho(), sc.prevalence());
        let q = p / (1.0 - p);
        // cumulative incidence looking back `u` years, normalized by its total
        let cum = |u: f64| match trend {
            IncidenceTrend::Constant => l0 * u,
            IncidenceTrend::LinearDecreasing => l0 * u + 0.5 * rho * u * u,
            IncidenceTrend::ExponentialDecreasing => l0 * (rho * u).exp_m1() / rho,
        };
        let mut xs: Vec<f64> = (0..n)
            .map(|_| sc.sample_infection_duration(rng.random()).unwrap())
            .collect();
        xs.sort_by(f64::total_cmp);
        let mut d: f64 = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            let f = cum(x) / q;
            d = d.max(f - i as f64 / n as f64).max((i + 1) as f64 / n as f64 - f);
        }
        let pval = kolmogorov_sf((n as f64).sqrt() * d);
        checks.push(check(format!("{} KS D={d:.5} p={pval:.3} > 0.01", trend.label()), pval > 0.01));
    }
    Criterion {
        id: 6,
        title: "infection-duration sampler distribution",
        checks,
        note: format!("({n} draws per scenario)"),
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn known_truth_panel(rng: &mut ChaCha20Rng, gamma: [f64; 4], clusters: u64, per: usize) -> PanelDataset {
    let mut rows = Vec::new();
    for s in 0..clusters {
        for _ in 0..per {
            let u: f64 = rng.random_range(0.0..2.5);
            let eta = gamma[0] + u * (gamma[1] + u * (gamma[2] + u * gamma[3]));
            rows.push(PanelRow {
                subject_id: s,
                duration: u,
                recent: rng.random::<f64>() < logistic(eta),
            });
        }
    }
    PanelDataset::new(rows).unwrap()
}

fn gee_suite() -> Criterion {
    let truth = [2.0, -3.0, 0.0, 0.0];
    let crit = ChiSquared::new(4.0).unwrap().inverse_cdf(0.95);
    let mut rng = ChaCha20Rng::seed_from_u64(707);
    let fits = 500;
    let mut inside = 0;
    for _ in 0..fits {
        let panel = known_truth_panel(&mut rng, truth, 2000, 5);
        let fit = fit_gee(&panel).unwrap();
        let d = fit.gamma - nalgebra::Vector4::from(truth);
        let inv = fit.robust_cov.try_inverse().unwrap();
        if (d.transpose() * inv * d)[(0, 0)] <= crit {
            inside += 1;
        }
    }
    let cover = 100.0 * inside as f64 / fits as f64;

    let design = PanelDesign::default();
    let assay = BuiltinAssay::A1A.profile();
    let panel = simulate_panel(&design, &assay, &mut rng).unwrap();
    let fit = fit_gee(&panel).unwrap();
    let delta = estimate_window_and_mdri(&fit, 2.0, fit.max_duration).unwrap().omega.variance;
    let clusters: Vec<&[PanelRow]> = panel.clusters().collect();
    let mut boot = Vec::new();
    let opts = GeeOptions {
        working: WorkingCorrelation::Exchangeable,
        ..GeeOptions::default()
    };
    while boot.len() < 200 {
        let mut rows = Vec::with_capacity(panel.len());
        for id in 0..clusters.len() {
            let c = clusters[rng.random_range(0..clusters.len())];
            rows.extend(c.iter().map(|r| PanelRow {
                subject_id: id as u64,
                ..*r
            }));
        }
        let resample = PanelDataset::new(rows).unwrap();
        if let Ok(f) = fit_gee_with(&resample, &opts) {
            if let Ok(w) = estimate_window_and_mdri(&f, 2.0, f.max_duration) {
                boot.push(w.omega.value);
            }
        }
    }
    let m = boot.iter().sum::<f64>() / boot.len() as f64;
    let bvar = boot.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (boot.len() - 1) as f64;
    let ratio = delta / bvar;
    Criterion {
        id: 7,
        title: "GEE coefficient recovery and variance",
        checks: vec![
            check(format!("joint 95% region coverage {cover:.1}% >= 93"), cover >= 93.0),
            check(
                format!("delta Var(Omega) / bootstrap Var = {ratio:.3} in [0.7,1.4]"),
                (0.7..=1.4).contains(&ratio),
            ),
        ],
        note: format!("({fits} panels, 200 cluster resamples)"),
    }
}

fn main() -> ExitCode {
    let all: [fn() -> Criterion; 7] = [
        assay_truth_values,
        expected_bias_theory,
        table1_reproduction,
        table2_reproduction,
        unbiased_with_exact_parameters,
        sampler_distribution,
        gee_suite,
    ];
    let mut ok = true;
    for f in all {
        let c = f();
        c.print();
        ok &= c.pass();
    }
    if ok {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: some criteria failed");
        ExitCode::FAILURE
    }
}
