//! Recency-assay calibration from external study data.
//!
//! `phi` is estimated by a marginal logistic model with a cubic polynomial in
//! duration, fitted by generalized estimating equations with an exchangeable
//! working correlation and a robust (sandwich) covariance. Window period and
//! MDRI are integrals of the fitted curve; their variances follow from the
//! delta method. The false-recent rate is the observed recent fraction among
//! long-infected subjects.

use nalgebra::{Matrix4, Vector4};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::external_study::{LongInfectedObs, PanelDataset};
use crate::quad;

const ALPHA_CEILING: f64 = 0.99;
const ETA_LIMIT: f64 = 30.0;
const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WorkingCorrelation {
    Independence,
    Exchangeable,
}

#[derive(Debug, Clone, Copy)]
pub struct GeeOptions {
    pub working: WorkingCorrelation,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GeeOptions {
    fn default() -> Self {
        Self {
            working: WorkingCorrelation::Exchangeable,
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

/// Fitted logit-cubic model, coefficients on the raw duration scale
/// (`gamma[k]` multiplies `u^k`).
#[derive(Debug, Clone, PartialEq)]
pub struct GeeFit {
    pub gamma: Vector4<f64>,
    pub robust_cov: Matrix4<f64>,
    /// Model-based covariance `H^-1`, for comparison with `robust_cov`.
    pub naive_cov: Matrix4<f64>,
    pub alpha: f64,
    pub working: WorkingCorrelation,
    pub n_clusters: usize,
    pub n_obs: usize,
    pub converged: bool,
    pub iterations: usize,
    pub max_duration: f64,
}

fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn cubic(gamma: &Vector4<f64>, u: f64) -> f64 {
    gamma[0] + u * (gamma[1] + u * (gamma[2] + u * gamma[3]))
}

impl GeeFit {
    /// Builds a fit from known coefficients, e.g. for evaluating a known curve.
    pub fn from_coefficients(gamma: [f64; 4], robust_cov: Matrix4<f64>) -> Self {
        Self {
            gamma: Vector4::from(gamma),
            robust_cov,
            naive_cov: robust_cov,
            alpha: 0.0,
            working: WorkingCorrelation::Independence,
            n_clusters: 0,
            n_obs: 0,
            converged: true,
            iterations: 0,
            max_duration: 0.0,
        }
    }

    pub fn linear_predictor(&self, u: f64) -> f64 {
        cubic(&self.gamma, u)
    }

    /// `phi_hat(u) = logistic(gamma0 + gamma1 u + gamma2 u^2 + gamma3 u^3)`.
    pub fn phi_hat(&self, u: f64) -> Result<f64> {
        if !(u >= 0.0 && u.is_finite()) {
            return Err(Error::domain(format!("duration must be finite and nonnegative, got {u}")));
        }
        Ok(logistic(self.linear_predictor(u)))
    }
}

/// Maps coefficients in the standardized covariate `x = (u - center) / scale`
/// onto powers of `u`: `gamma_u = T gamma_x`.
fn back_transform(center: f64, scale: f64) -> Matrix4<f64> {
    let a = -center / scale;
    let b = 1.0 / scale;
    let binom = [[1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [1.0, 2.0, 1.0, 0.0], [1.0, 3.0, 3.0, 1.0]];
    // x^k = sum_j C(k, j) a^(k-j) b^j u^j
    Matrix4::from_fn(|j, k| {
        if j > k {
            0.0
        } else {
            binom[k][j] * a.powi((k - j) as i32) * b.powi(j as i32)
        }
    })
}

struct Accumulated {
    hessian: Matrix4<f64>,
    score: Vector4<f64>,
    meat: Matrix4<f64>,
}

struct Workspace<'a> {
    clusters: Vec<(&'a [f64], &'a [f64])>,
    x: Vec<f64>,
    y: Vec<f64>,
}

/// Pearson residuals and mean-variance square roots at `beta`.
fn residuals(x: &[f64], y: &[f64], beta: &Vector4<f64>) -> (Vec<f64>, Vec<f64>, bool) {
    let mut r = Vec::with_capacity(x.len());
    let mut s = Vec::with_capacity(x.len());
    let mut saturated = false;
    for (&xi, &yi) in x.iter().zip(y) {
        let eta = cubic(beta, xi);
        if eta.abs() > ETA_LIMIT {
            saturated = true;
        }
        let mu = logistic(eta.clamp(-ETA_LIMIT, ETA_LIMIT));
        let sd = (mu * (1.0 - mu)).sqrt();
        s.push(sd);
        r.push((yi - mu) / sd);
    }
    (r, s, saturated)
}

fn moment_alpha(ws: &Workspace<'_>, r: &[f64], floor: f64) -> Option<f64> {
    let mut pair_sum = 0.0;
    let mut n_pairs = 0.0;
    let mut offset = 0;
    for (cx, _) in &ws.clusters {
        let n = cx.len();
        let rc = &r[offset..offset + n];
        let total: f64 = rc.iter().sum();
        let sq: f64 = rc.iter().map(|v| v * v).sum();
        pair_sum += 0.5 * (total * total - sq);
        n_pairs += 0.5 * (n * (n - 1)) as f64;
        offset += n;
    }
    let denom = n_pairs - 4.0;
    if n_pairs == 0.0 || denom <= 0.0 {
        return None;
    }
    Some((pair_sum / denom).clamp(floor, ALPHA_CEILING))
}

fn accumulate(ws: &Workspace<'_>, beta: &Vector4<f64>, alpha: f64) -> Accumulated {
    let (r, s, _) = residuals(&ws.x, &ws.y, beta);
    let mut hessian = Matrix4::zeros();
    let mut score = Vector4::zeros();
    let mut meat = Matrix4::zeros();
    let mut offset = 0;
    for (cx, _) in &ws.clusters {
        let n = cx.len();
        // R^-1 = (I - c 11') / (1 - alpha), c = alpha / (1 + (n - 1) alpha)
        let c = alpha / (1.0 + (n as f64 - 1.0) * alpha);
        let k = 1.0 / (1.0 - alpha);
        let mut zz = Matrix4::zeros();
        let mut zsum = Vector4::zeros();
        let mut zr = Vector4::zeros();
        let mut rsum = 0.0;
        for j in 0..n {
            let xi = cx[j];
            let sj = s[offset + j];
            let z = Vector4::new(sj, sj * xi, sj * xi * xi, sj * xi * xi * xi);
            zz += z * z.transpose();
            zsum += z;
            zr += z * r[offset + j];
            rsum += r[offset + j];
        }
        let h = (zz - zsum * zsum.transpose() * c) * k;
        let u = (zr - zsum * (c * rsum)) * k;
        hessian += h;
        score += u;
        meat += u * u.transpose();
        offset += n;
    }
    Accumulated { hessian, score, meat }
}

fn check_finite(beta: &Vector4<f64>) -> Result<()> {
    if beta.iter().all(|b| b.is_finite() && b.abs() < DIVERGENCE_LIMIT) {
        Ok(())
    } else {
        Err(Error::Estimation("coefficients diverged (quasi-complete separation)".into()))
    }
}

fn invert(m: &Matrix4<f64>) -> Result<Matrix4<f64>> {
    m.cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Estimation("working information matrix is singular".into()))
}

/// Fits the logit-cubic marginal model with default options.
pub fn fit_gee(panel: &PanelDataset) -> Result<GeeFit> {
    fit_gee_with(panel, &GeeOptions::default())
}

pub fn fit_gee_with(panel: &PanelDataset, opts: &GeeOptions) -> Result<GeeFit> {
    let n_clusters = panel.n_subjects();
    if n_clusters < 2 {
        return Err(Error::Estimation(format!("need at least 2 clusters, got {n_clusters}")));
    }
    let n_obs = panel.len();
    let n_recent = panel.rows().iter().filter(|r| r.recent).count();
    if n_recent == 0 || n_recent == n_obs {
        return Err(Error::Estimation(format!(
            "outcome is constant ({n_recent} of {n_obs} recent): complete separation"
        )));
    }
    let u: Vec<f64> = panel.rows().iter().map(|r| r.duration).collect();
    let center = u.iter().sum::<f64>() / n_obs as f64;
    let var = u.iter().map(|v| (v - center).powi(2)).sum::<f64>() / n_obs as f64;
    if !(var > 0.0) {
        return Err(Error::Estimation("all durations are identical; cubic model not identifiable".into()));
    }
    let scale = var.sqrt();
    let x: Vec<f64> = u.iter().map(|v| (v - center) / scale).collect();
    let y: Vec<f64> = panel.rows().iter().map(|r| if r.recent { 1.0 } else { 0.0 }).collect();

    let mut clusters = Vec::with_capacity(n_clusters);
    let mut offset = 0;
    let mut max_size = 1;
    for c in panel.clusters() {
        let n = c.len();
        clusters.push((&x[offset..offset + n], &y[offset..offset + n]));
        max_size = max_size.max(n);
        offset += n;
    }
    let ws = Workspace {
        clusters,
        x: x.clone(),
        y: y.clone(),
    };
    let floor = if max_size > 1 {
        (-1.0 / (max_size as f64 - 1.0) + 1e-6).max(-ALPHA_CEILING)
    } else {
        0.0
    };
    let has_pairs = max_size > 1;
    let working = match opts.working {
        WorkingCorrelation::Exchangeable if has_pairs => WorkingCorrelation::Exchangeable,
        _ => WorkingCorrelation::Independence,
    };

    let ybar = n_recent as f64 / n_obs as f64;
    let mut beta = Vector4::new((ybar / (1.0 - ybar)).ln(), 0.0, 0.0, 0.0);
    let mut alpha = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    // Independence fit first: with the canonical link this is plain Newton,
    // and it gives the first correlation estimate a sensible start.
    while iterations < opts.max_iter {
        iterations += 1;
        let acc = accumulate(&ws, &beta, 0.0);
        let step = invert(&acc.hessian)? * acc.score;
        beta += step;
        check_finite(&beta)?;
        if step.amax() < opts.tol {
            converged = true;
            break;
        }
    }
    if working == WorkingCorrelation::Exchangeable && converged {
        // Alternating scoring and moment updates can stall in a slowly
        // decaying 2-cycle, so solve U(beta, alpha(beta)) = 0 directly with
        // a finite-difference Jacobian and backtracking on the score norm.
        converged = false;
        let profiled = |b: &Vector4<f64>| {
            let (r, _, _) = residuals(&ws.x, &ws.y, b);
            let a = moment_alpha(&ws, &r, floor).unwrap_or(0.0);
            (accumulate(&ws, b, a), a)
        };
        while iterations < opts.max_iter {
            iterations += 1;
            let (acc, a) = profiled(&beta);
            alpha = a;
            let g = acc.score;
            let mut jac = Matrix4::zeros();
            for k in 0..4 {
                let h = 1e-6 * (1.0 + beta[k].abs());
                let mut bp = beta;
                bp[k] += h;
                let gp = profiled(&bp).0.score;
                jac.set_column(k, &((gp - g) / h));
            }
            let step = match jac.lu().solve(&(-g)) {
                Some(s) if s.iter().all(|v| v.is_finite()) => s,
                _ => invert(&acc.hessian)? * g,
            };
            let norm = g.norm();
            let mut t = 1.0;
            while t > 1e-3 && profiled(&(beta + step * t)).0.score.norm() > norm {
                t *= 0.5;
            }
            beta += step * t;
            check_finite(&beta)?;
            if (step * t).amax() < opts.tol {
                converged = true;
                break;
            }
        }
    }
    if working == WorkingCorrelation::Exchangeable && converged {
        let (r, _, _) = residuals(&ws.x, &ws.y, &beta);
        alpha = moment_alpha(&ws, &r, floor).unwrap_or(0.0);
    }
    let (_, _, saturated) = residuals(&ws.x, &ws.y, &beta);
    if saturated && converged {
        // fitted probabilities pinned at 0 or 1 for some observations
        let acc = accumulate(&ws, &beta, alpha);
        if acc.hessian.determinant().abs() < 1e-300 {
            return Err(Error::Estimation("fitted probabilities saturate: separation".into()));
        }
    }
    let acc = accumulate(&ws, &beta, alpha);
    let h_inv = invert(&acc.hessian)?;
    let robust_x = h_inv * acc.meat * h_inv;
    let t = back_transform(center, scale);
    let gamma = t * beta;
    let sym = |m: Matrix4<f64>| (m + m.transpose()) * 0.5;
    Ok(GeeFit {
        gamma,
        robust_cov: sym(t * robust_x * t.transpose()),
        naive_cov: sym(t * h_inv * t.transpose()),
        alpha,
        working,
        n_clusters,
        n_obs,
        converged,
        iterations,
        max_duration: panel.max_duration(),
    })
}

/// An estimate with its (delta-method or binomial) variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub variance: f64,
}

impl Estimate {
    pub fn se(&self) -> f64 {
        self.variance.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowEstimates {
    pub mu: Estimate,
    pub omega: Estimate,
}

/// Integral of `phi_hat` over `[0, upper]` and its gradient in `gamma`,
/// `d/d gamma_k = integral phi_hat (1 - phi_hat) u^k du`.
fn integral_with_gradient(fit: &GeeFit, upper: f64) -> Result<(f64, Vector4<f64>)> {
    let p = |u: f64| logistic(fit.linear_predictor(u));
    let value = quad::integral(p, 0.0, upper, &[])?;
    let mut grad = Vector4::zeros();
    for k in 0..4 {
        grad[k] = quad::integral(
            |u| {
                let v = p(u);
                v * (1.0 - v) * u.powi(k as i32)
            },
            0.0,
            upper,
            &[],
        )?;
    }
    Ok((value, grad))
}

fn delta_variance(grad: &Vector4<f64>, cov: &Matrix4<f64>) -> f64 {
    (grad.transpose() * cov * grad)[(0, 0)].max(0.0)
}

/// Mean window period (integrated to `upper`) and MDRI (to `t_star`) from a
/// fitted curve, with delta-method variances from the robust covariance.
pub fn estimate_window_and_mdri(fit: &GeeFit, t_star: f64, upper: f64) -> Result<WindowEstimates> {
    if !fit.converged {
        return Err(Error::Estimation("GEE fit did not converge".into()));
    }
    if !(t_star > 0.0 && upper > t_star && upper.is_finite()) {
        return Err(Error::domain(format!(
            "need 0 < t_star < upper, got t_star={t_star}, upper={upper}"
        )));
    }
    let (mu, g_mu) = integral_with_gradient(fit, upper)?;
    let (omega, g_omega) = integral_with_gradient(fit, t_star)?;
    Ok(WindowEstimates {
        mu: Estimate {
            value: mu,
            variance: delta_variance(&g_mu, &fit.robust_cov),
        },
        omega: Estimate {
            value: omega,
            variance: delta_variance(&g_omega, &fit.robust_cov),
        },
    })
}

/// Observed recent fraction among long-infected subjects with binomial variance.
pub fn estimate_frr(sample: &[LongInfectedObs]) -> Result<Estimate> {
    if sample.is_empty() {
        return Err(Error::domain("false-recent rate needs a nonempty long-infected sample"));
    }
    let n = sample.len() as f64;
    let beta = sample.iter().filter(|o| o.recent).count() as f64 / n;
    Ok(Estimate {
        value: beta,
        variance: beta * (1.0 - beta) / n,
    })
}

/// Everything the cross-sectional estimators need from calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssayEstimates {
    pub mu_hat: f64,
    pub var_mu: f64,
    pub omega_hat: f64,
    pub var_omega: f64,
    pub beta_hat: f64,
    pub var_beta: f64,
    pub t_star: f64,
    pub upper_used: f64,
}

/// Fits the panel, integrates to the largest observed duration and estimates
/// the false-recent rate from `long_sample`.
pub fn calibrate(panel: &PanelDataset, long_sample: &[LongInfectedObs], t_star: f64) -> Result<(GeeFit, AssayEstimates)> {
    let fit = fit_gee(panel)?;
    let upper = fit.max_duration;
    let w = estimate_window_and_mdri(&fit, t_star, upper)?;
    let b = estimate_frr(long_sample)?;
    Ok((
        fit,
        AssayEstimates {
            mu_hat: w.mu.value,
            var_mu: w.mu.variance,
            omega_hat: w.omega.value,
            var_omega: w.omega.variance,
            beta_hat: b.value,
            var_beta: b.variance,
            t_star,
            upper_used: upper,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::external_study::PanelRow;

    fn rows(data: &[(u64, f64, bool)]) -> PanelDataset {
        PanelDataset::new(
            data.iter()
                .map(|&(s, d, r)| PanelRow {
                    subject_id: s,
                    duration: d,
                    recent: r,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn phi_hat_link() {
        let zero = GeeFit::from_coefficients([0.0; 4], Matrix4::zeros());
        assert_eq!(zero.phi_hat(3.7).unwrap(), 0.5);
        let low = GeeFit::from_coefficients([-20.0, 0.0, 0.0, 0.0], Matrix4::zeros());
        assert!(low.phi_hat(1.0).unwrap() < 1e-8);
        assert!(zero.phi_hat(-1.0).is_err());
    }

    #[test]
    fn back_transform_reproduces_polynomial() {
        let (c, s) = (2.3, 1.7);
        let bx = Vector4::new(0.4, -1.2, 0.3, 0.05);
        let bu = back_transform(c, s) * bx;
        for u in [0.0, 0.5, 3.0, 8.0] {
            let x = (u - c) / s;
            assert!((cubic(&bx, x) - cubic(&bu, u)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_outcome_is_separation() {
        let p = rows(&[(0, 0.1, true), (0, 0.5, true), (1, 0.2, true), (1, 1.0, true)]);
        assert!(matches!(fit_gee(&p), Err(Error::Estimation(_))));
    }

    #[test]
    fn single_cluster_rejected() {
        let p = rows(&[(0, 0.1, true), (0, 0.5, false)]);
        assert!(matches!(fit_gee(&p), Err(Error::Estimation(_))));
    }

    #[test]
    fn saturated_fit_integrates_to_bounds() {
        let fit = GeeFit::from_coefficients([40.0, 0.0, 0.0, 0.0], Matrix4::identity() * 0.01);
        let w = estimate_window_and_mdri(&fit, 2.0, 8.0).unwrap();
        assert!((w.mu.value - 8.0).abs() < 1e-9);
        assert!((w.omega.value - 2.0).abs() < 1e-9);
        assert!(w.mu.variance < 1e-20 && w.omega.variance < 1e-20);
    }

    #[test]
    fn window_needs_ordered_bounds() {
        let fit = GeeFit::from_coefficients([0.0; 4], Matrix4::zeros());
        assert!(estimate_window_and_mdri(&fit, 2.0, 1.0).is_err());
        let mut nc = fit.clone();
        nc.converged = false;
        assert!(matches!(estimate_window_and_mdri(&nc, 2.0, 8.0), Err(Error::Estimation(_))));
    }

    #[test]
    fn frr_examples() {
        let mk = |k: usize, n: usize| -> Vec<LongInfectedObs> {
            (0..n)
                .map(|i| LongInfectedObs {
                    duration: 5.0,
                    recent: i < k,
                })
                .collect()
        };
        let z = estimate_frr(&mk(0, 1500)).unwrap();
        assert_eq!((z.value, z.variance), (0.0, 0.0));
        let b = estimate_frr(&mk(21, 1500)).unwrap();
        assert!((b.value - 0.014).abs() < 1e-15);
        assert!((b.variance - 0.014 * 0.986 / 1500.0).abs() < 1e-15);
        let o = estimate_frr(&mk(7, 7)).unwrap();
        assert_eq!((o.value, o.variance), (1.0, 0.0));
        assert!(estimate_frr(&[]).is_err());
    }
}
