use nalgebra::Vector4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use recency_core::assay::{BuiltinAssay, DAYS_PER_YEAR};
use recency_core::estimation::{calibrate, estimate_window_and_mdri, fit_gee, GeeFit, WorkingCorrelation};
use recency_core::external_study::{
    simulate_long_infected, simulate_panel, LongInfectedDesign, PanelDataset, PanelDesign, PanelRow,
};

fn logit_cubic_panel(rng: &mut ChaCha20Rng, gamma: [f64; 4], clusters: u64, per: usize) -> PanelDataset {
    let mut rows = Vec::new();
    for s in 0..clusters {
        for _ in 0..per {
            let u: f64 = rng.random_range(0.0..2.5);
            let eta = gamma[0] + u * (gamma[1] + u * (gamma[2] + u * gamma[3]));
            rows.push(PanelRow {
                subject_id: s,
                duration: u,
                recent: rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp()),
            });
        }
    }
    PanelDataset::new(rows).unwrap()
}

#[test]
fn singleton_clusters_fall_back_to_independence() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let p = logit_cubic_panel(&mut rng, [2.0, -3.0, 0.0, 0.0], 3000, 1);
    let f = fit_gee(&p).unwrap();
    assert_eq!(f.working, WorkingCorrelation::Independence);
    assert_eq!(f.alpha, 0.0);
    assert!(f.converged);
}

#[test]
fn sandwich_agrees_with_model_covariance_for_singletons() {
    let truth = Vector4::new(2.0, -3.0, 0.0, 0.0);
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let fits = 500;
    let (mut robust, mut naive) = (Vector4::zeros(), Vector4::zeros());
    let mut sq = Vector4::zeros();
    for _ in 0..fits {
        let p = logit_cubic_panel(&mut rng, [2.0, -3.0, 0.0, 0.0], 2000, 1);
        let f = fit_gee(&p).unwrap();
        robust += f.robust_cov.diagonal();
        naive += f.naive_cov.diagonal();
        sq += (f.gamma - truth).component_mul(&(f.gamma - truth));
    }
    let n = fits as f64;
    for k in 0..4 {
        let (r, m, e) = (robust[k] / n, naive[k] / n, sq[k] / n);
        // average variance estimates agree to a few percent; the
        // empirical variance has ~6% Monte Carlo error at 500 fits
        assert!((r / m - 1.0).abs() < 0.05, "coef {k}: robust {r} naive {m}");
        assert!((e / m - 1.0).abs() < 0.25, "coef {k}: empirical {e} naive {m}");
    }
}

#[test]
fn fitted_curve_tracks_truth_on_large_panel() {
    let mut d = PanelDesign::default();
    d.n_subjects = 175 * 55;
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let a = BuiltinAssay::A1A.profile();
    let p = simulate_panel(&d, &a, &mut rng).unwrap();
    assert!(p.len() >= 100_000, "{}", p.len());
    let f = fit_gee(&p).unwrap();
    assert!((f.phi_hat(1.0).unwrap() - a.phi(1.0).unwrap()).abs() < 0.03);
}

#[test]
fn window_estimates_cover_truth() {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let d = PanelDesign::default();
    let p = simulate_panel(&d, &BuiltinAssay::A1A.profile(), &mut rng).unwrap();
    let f = fit_gee(&p).unwrap();
    let w = estimate_window_and_mdri(&f, 2.0, f.max_duration).unwrap();
    assert!((w.mu.value - 101.0 / DAYS_PER_YEAR).abs() < 3.0 * w.mu.se(), "{:?}", w.mu);

    let p = simulate_panel(&d, &BuiltinAssay::A2A.profile(), &mut rng).unwrap();
    let f = fit_gee(&p).unwrap();
    let w = estimate_window_and_mdri(&f, 2.0, f.max_duration).unwrap();
    assert!((w.omega.value - 224.0 / DAYS_PER_YEAR).abs() < 3.0 * w.omega.se(), "{:?}", w.omega);
}

#[test]
fn fitting_is_deterministic() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let p = simulate_panel(&PanelDesign::default(), &BuiltinAssay::A2B.profile(), &mut rng).unwrap();
    let a = fit_gee(&p).unwrap();
    let b = fit_gee(&p.clone()).unwrap();
    assert_eq!(a, b);
    assert!(a.converged && a.iterations <= 100);
    let c = &a.robust_cov;
    assert!((c - c.transpose()).amax() < 1e-15);
    assert!(c.symmetric_eigenvalues().iter().all(|&e| e >= -1e-12));
}

#[test]
fn calibration_round_trip_through_csv() {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let a = BuiltinAssay::A1B.profile();
    let p = simulate_panel(&PanelDesign::default(), &a, &mut rng).unwrap();
    let long = simulate_long_infected(&LongInfectedDesign::default(), &a, &mut rng).unwrap();
    let mut buf = Vec::new();
    p.write_csv(&mut buf).unwrap();
    let back = PanelDataset::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back, p);
    let (fit, est) = calibrate(&back, &long, 2.0).unwrap();
    assert_eq!(est.upper_used, fit.max_duration);
    assert!(est.var_mu >= 0.0 && est.var_omega >= 0.0 && est.omega_hat >= 0.0);
    assert!((est.beta_hat - 0.014).abs() < 3.0 * (0.014f64 * 0.986 / 1500.0).sqrt());
}

#[test]
fn known_coefficients_evaluate_directly() {
    let f = GeeFit::from_coefficients([1.0, -2.0, 0.5, -0.1], nalgebra::Matrix4::zeros());
    let eta: f64 = 1.0 - 2.0 * 1.5 + 0.5 * 2.25 - 0.1 * 3.375;
    assert!((f.phi_hat(1.5).unwrap() - 1.0 / (1.0 + (-eta).exp())).abs() < 1e-15);
}
