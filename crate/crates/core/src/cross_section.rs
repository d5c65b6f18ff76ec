//! Cross-sectional survey simulation and the snapshot and adjusted
//! incidence estimators.
//!
//! Standard errors come from a first-order delta method. Survey counts
//! `(n_neg, n_rec, n_pos - n_rec)` are treated as multinomial and the
//! calibration quantities as independent of the survey.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::assay::AssayProfile;
use crate::epidemic::EpidemicScenario;
use crate::error::{Error, Result};

const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossSectionCounts {
    pub n_total: u64,
    pub n_neg: u64,
    pub n_pos: u64,
    pub n_rec: u64,
}

impl CrossSectionCounts {
    pub fn new(n_neg: u64, n_pos: u64, n_rec: u64) -> Result<Self> {
        if n_rec > n_pos {
            return Err(Error::domain(format!("n_rec = {n_rec} exceeds n_pos = {n_pos}")));
        }
        Ok(Self {
            n_total: n_neg + n_pos,
            n_neg,
            n_pos,
            n_rec,
        })
    }
}

pub fn simulate_cross_section<R: Rng + ?Sized>(
    n: u64,
    scenario: &EpidemicScenario,
    assay: &AssayProfile,
    rng: &mut R,
) -> Result<CrossSectionCounts> {
    if n == 0 {
        return Err(Error::domain("cross-sectional sample size must be at least 1"));
    }
    let n_pos = Binomial::new(n, scenario.prevalence())
        .map_err(|e| Error::domain(format!("prevalence: {e}")))?
        .sample(rng);
    let mut n_rec = 0;
    for _ in 0..n_pos {
        let e: f64 = rng.random();
        let u = scenario.sample_infection_duration(e)?;
        if rng.random::<f64>() < assay.phi_unchecked(u) {
            n_rec += 1;
        }
    }
    CrossSectionCounts::new(n - n_pos, n_pos, n_rec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    Snapshot,
    Adjusted,
}

impl Estimator {
    pub fn label(self) -> &'static str {
        match self {
            Estimator::Snapshot => "snapshot",
            Estimator::Adjusted => "adjusted",
        }
    }
}

/// Calibration inputs an estimate was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum EstimatorInputs {
    Snapshot { mu_hat: f64, var_mu: f64 },
    Adjusted { omega_hat: f64, var_omega: f64, beta_hat: f64, var_beta: f64, t_star: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IncidenceEstimate {
    pub estimator: Estimator,
    pub point: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub counts: CrossSectionCounts,
    pub inputs: EstimatorInputs,
}

impl IncidenceEstimate {
    fn build(estimator: Estimator, point: f64, variance: f64, counts: CrossSectionCounts, inputs: EstimatorInputs) -> Self {
        let se = variance.max(0.0).sqrt();
        Self {
            estimator,
            point,
            se,
            ci95: (point - Z95 * se, point + Z95 * se),
            counts,
            inputs,
        }
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.ci95.0 <= truth && truth <= self.ci95.1
    }
}

fn check_variance(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be finite and nonnegative, got {v}")))
    }
}

/// `n_rec / (n_neg * mu_hat)`.
pub fn snapshot_estimate(counts: CrossSectionCounts, mu_hat: f64, var_mu: f64) -> Result<IncidenceEstimate> {
    if counts.n_neg == 0 {
        return Err(Error::domain("no HIV-negative subjects in the survey"));
    }
    if !(mu_hat > 0.0 && mu_hat.is_finite()) {
        return Err(Error::domain(format!("mean window period must be positive, got {mu_hat}")));
    }
    check_variance("var_mu", var_mu)?;
    let nn = counts.n_neg as f64;
    let r = counts.n_rec as f64;
    let point = r / (nn * mu_hat);
    let var = r / (nn * mu_hat).powi(2) + point * point / nn + point * point * var_mu / (mu_hat * mu_hat);
    Ok(IncidenceEstimate::build(
        Estimator::Snapshot,
        point,
        var,
        counts,
        EstimatorInputs::Snapshot { mu_hat, var_mu },
    ))
}

/// `(n_rec - n_pos beta_hat) / (n_neg (omega_hat - beta_hat t_star))`.
/// Negative values are returned as computed.
pub fn adjusted_estimate(
    counts: CrossSectionCounts,
    omega_hat: f64,
    var_omega: f64,
    beta_hat: f64,
    var_beta: f64,
    t_star: f64,
) -> Result<IncidenceEstimate> {
    if counts.n_neg == 0 {
        return Err(Error::domain("no HIV-negative subjects in the survey"));
    }
    if !(0.0..=1.0).contains(&beta_hat) {
        return Err(Error::domain(format!("false-recent rate must lie in [0, 1], got {beta_hat}")));
    }
    check_variance("var_omega", var_omega)?;
    check_variance("var_beta", var_beta)?;
    let den = omega_hat - beta_hat * t_star;
    if !(den > 0.0 && den.is_finite()) {
        return Err(Error::domain(format!(
            "adjusted denominator omega_hat - beta_hat * t_star = {omega_hat} - {beta_hat} * {t_star} = {den} is not positive"
        )));
    }
    let nn = counts.n_neg as f64;
    let r = counts.n_rec as f64;
    let p = counts.n_pos as f64;
    let other = p - r;
    let point = (r - p * beta_hat) / (nn * den);
    let count_var = point * point / nn + (r * (1.0 - beta_hat).powi(2) + other * beta_hat * beta_hat) / (nn * den).powi(2);
    let d_omega = -point / den;
    let d_beta = (point * nn * t_star - p) / (nn * den);
    let var = count_var + d_omega * d_omega * var_omega + d_beta * d_beta * var_beta;
    Ok(IncidenceEstimate::build(
        Estimator::Adjusted,
        point,
        var,
        counts,
        EstimatorInputs::Adjusted {
            omega_hat,
            var_omega,
            beta_hat,
            var_beta,
            t_star,
        },
    ))
}
