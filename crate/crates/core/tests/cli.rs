use std::process::Command;

fn recency(args: &[&str]) -> (bool, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_recency")).args(args).output().unwrap();
    (
        out.status.success(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn value(kv: &str, key: &str) -> f64 {
    kv.lines()
        .find_map(|l| l.strip_prefix(&format!("{key},")))
        .unwrap_or_else(|| panic!("{key} missing in\n{kv}"))
        .parse()
        .unwrap()
}

#[test]
fn assay_props_reports_truth() {
    let (ok, out, _) = recency(&["assay", "props", "1A"]);
    assert!(ok);
    assert!(out.starts_with("key,value\n"));
    assert!((value(&out, "mean_window_days") - 101.0).abs() < 2.0);
    assert!(out.contains("assumption_s1,true"));
    let (ok, _, err) = recency(&["assay", "props", "9Z"]);
    assert!(!ok && !err.is_empty());
}

#[test]
fn theory_csv() {
    let (ok, out, _) = recency(&["theory", "1A", "linear"]);
    assert!(ok);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "assay,scenario,estimator,shadow_years,expected,bias");
    let bias: f64 = lines[1].split(',').nth(5).unwrap().parse().unwrap();
    assert!((bias - 0.0028 * 1.352 / (2.0 * 1.273)).abs() < 2e-5, "{bias}");
}

#[test]
fn estimate_from_flags_and_row() {
    let (ok, out, _) = recency(&[
        "estimate", "--n-neg", "3550", "--n-pos", "1450", "--n-rec", "48", "--omega-hat", "0.2683", "--beta-hat",
        "0.014",
    ]);
    assert!(ok);
    let row = out.lines().nth(1).unwrap();
    assert!(row.starts_with("adjusted,"));
    let point: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    assert!((point - 27.7 / (3550.0 * 0.2403)).abs() < 1e-9);

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("row.csv");
    std::fs::write(&csv, "n_neg,n_pos,n_rec,mu_hat,var_mu\n3550,1450,31,0.2765,0\n").unwrap();
    let (ok, out, _) = recency(&["estimate", "--row", csv.to_str().unwrap()]);
    assert!(ok);
    let point: f64 = out.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((point - 31.0 / (3550.0 * 0.2765)).abs() < 1e-12);

    let (ok, _, err) = recency(&["estimate", "--n-neg", "0", "--n-pos", "10", "--n-rec", "1", "--mu-hat", "0.3"]);
    assert!(!ok && err.contains("negative"));
}

#[test]
fn panel_then_calibrate() {
    let dir = tempfile::tempdir().unwrap();
    let panel = dir.path().join("panel.csv");
    let long = dir.path().join("long.csv");
    let (ok, _, err) = recency(&[
        "panel", "1B", "--seed", "3", "--out", panel.to_str().unwrap(), "--long-out", long.to_str().unwrap(),
    ]);
    assert!(ok, "{err}");
    let head = std::fs::read_to_string(&panel).unwrap();
    assert!(head.starts_with("subject_id,duration_years,recent\n"));
    let (ok, out, err) = recency(&["calibrate", panel.to_str().unwrap(), "--long", long.to_str().unwrap()]);
    assert!(ok, "{err}");
    assert!(out.contains("converged,true"));
    assert!((value(&out, "beta_hat") - 0.014).abs() < 0.01);
    assert!(value(&out, "mu_hat") > value(&out, "omega_hat"));
}

#[test]
fn presets_simulate_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg");
    let (ok, out, _) = recency(&["presets", "table2", cfg.to_str().unwrap(), "--replicates", "4"]);
    assert!(ok);
    assert_eq!(out.lines().count(), 6);

    let one = cfg.join("table2-1C-uniform.toml");
    let res = dir.path().join("res");
    let (ok, out, err) = recency(&[
        "simulate", one.to_str().unwrap(), "--seed", "9", "--workers", "2", "--out", res.to_str().unwrap(),
    ]);
    assert!(ok, "{err}");
    assert!(out.contains("\"n_replicates\": 4"));
    let reps = std::fs::read_to_string(res.join("table2-1C-uniform_replicates.csv")).unwrap();
    assert_eq!(reps.lines().count(), 5);
    let manifest = std::fs::read_to_string(res.join("table2-1C-uniform_manifest.json")).unwrap();
    assert!(manifest.contains("\"master_seed\": 9"));

    let table = dir.path().join("table2.csv");
    let (ok, _, err) = recency(&["report", "table2", cfg.to_str().unwrap(), "--out", table.to_str().unwrap()]);
    assert!(ok, "{err}");
    let text = std::fs::read_to_string(&table).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(dir.path().join("table2.manifest.json").exists());

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let (ok, _, _) = recency(&["report", "table1", empty.to_str().unwrap()]);
    assert!(!ok);
}
