//! Expected values and shadow times of the snapshot and adjusted estimators
//! when incidence varies but prevalence is constant.

use crate::assay::{AssayProfile, AssayTruth};
use crate::duration::DurationDistribution;
use crate::epidemic::EpidemicScenario;
use crate::error::{Error, Result};
use crate::quad;

/// Mean shadow time of the snapshot estimator,
/// `integral_0^upper u phi(u) du / integral_0^upper phi(u) du`.
pub fn shadow_snapshot(assay: &AssayProfile, upper: f64) -> Result<f64> {
    let mu = assay.mean_window(upper)?;
    if mu <= 0.0 {
        return Err(Error::domain("mean window period is zero; shadow time undefined"));
    }
    let first = quad::integral(|u| u * assay.phi_unchecked(u), 0.0, upper, &assay.breakpoints())?;
    Ok(first / mu)
}

/// Denominator `Omega - t_star beta` shared by the adjusted estimator formulas.
fn adjusted_denominator(assay: &AssayProfile, beta: f64) -> Result<(f64, f64)> {
    let omega = assay.mdri()?;
    let den = omega - assay.t_star() * beta;
    if !(den > 0.0) {
        return Err(Error::domain(format!(
            "Omega - T* beta = {omega} - {} * {beta} = {den} is not positive",
            assay.t_star()
        )));
    }
    Ok((omega, den))
}

/// Mean shadow time of the adjusted estimator,
/// `integral_0^T* u (phi(u) - beta) du / (Omega - T* beta)`.
pub fn shadow_adjusted(assay: &AssayProfile, beta: f64) -> Result<f64> {
    let (_, den) = adjusted_denominator(assay, beta)?;
    let t_star = assay.t_star();
    let num = quad::integral(
        |u| u * (assay.phi_unchecked(u) - beta),
        0.0,
        t_star,
        &assay.breakpoints(),
    )?;
    Ok(num / den)
}

/// `integral_0^upper phi(u) / mu * lambda(t - u) du` for an arbitrary
/// incidence history `incidence(back)`.
pub fn expected_snapshot_with<F>(assay: &AssayProfile, incidence: F, mu: f64, upper: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(mu > 0.0) {
        return Err(Error::domain(format!("mean window period must be positive, got {mu}")));
    }
    if !(upper.is_finite() && upper > 0.0) {
        return Err(Error::domain(format!("upper bound must be positive, got {upper}")));
    }
    let v = quad::integral(
        |u| assay.phi_unchecked(u) * incidence(u),
        0.0,
        upper,
        &assay.breakpoints(),
    )?;
    Ok(v / mu)
}

/// Expected snapshot estimate under `scenario`. The bias is the result minus
/// `scenario.lambda0()`.
pub fn expected_snapshot(assay: &AssayProfile, scenario: &EpidemicScenario, mu: f64, upper: f64) -> Result<f64> {
    expected_snapshot_with(assay, |u| scenario.incidence_unchecked(u), mu, upper)
}

pub fn expected_adjusted_with<F>(assay: &AssayProfile, incidence: F, beta: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let (_, den) = adjusted_denominator(assay, beta)?;
    let v = quad::integral(
        |u| (assay.phi_unchecked(u) - beta) * incidence(u),
        0.0,
        assay.t_star(),
        &assay.breakpoints(),
    )?;
    Ok(v / den)
}

/// Expected adjusted estimate under `scenario` when the false-recent rate
/// plugged into the estimator is `beta` (true or misspecified).
pub fn expected_adjusted(assay: &AssayProfile, scenario: &EpidemicScenario, beta: f64) -> Result<f64> {
    expected_adjusted_with(assay, |u| scenario.incidence_unchecked(u), beta)
}

impl AssayTruth {
    /// Exact summaries with the window integral cut at `upper` and the
    /// false-recent rate averaged over `g`.
    pub fn compute(assay: &AssayProfile, upper: f64, g: &DurationDistribution) -> Result<Self> {
        let mu = assay.mean_window(upper)?;
        let mdri = assay.mdri()?;
        let frr = assay.true_frr(g)?;
        Ok(AssayTruth {
            mu,
            mdri,
            frr,
            shadow_snapshot: shadow_snapshot(assay, upper)?,
            shadow_adjusted: shadow_adjusted(assay, frr)?,
            upper_bound_used: upper,
        })
    }
}
