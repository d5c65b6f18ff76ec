//! Distributions of infection duration among long-infected subjects.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DurationDistribution {
    Uniform { lo: f64, hi: f64 },
    PointMass { at: f64 },
    /// `lo + width * Beta(a, b)`, optionally conditioned on not exceeding `upper`.
    ScaledBeta {
        lo: f64,
        width: f64,
        a: f64,
        b: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        upper: Option<f64>,
    },
}

impl DurationDistribution {
    pub fn uniform_2_12() -> Self {
        DurationDistribution::Uniform { lo: 2.0, hi: 12.0 }
    }

    /// Right-skewed long-infected durations on [2, 8.25].
    pub fn duong_like() -> Self {
        DurationDistribution::ScaledBeta {
            lo: 2.0,
            width: 6.25,
            a: 1.2,
            b: 2.5,
            upper: None,
        }
    }

    /// [`Self::duong_like`] conditioned on durations of at most 5 years.
    pub fn duong_truncated() -> Self {
        DurationDistribution::ScaledBeta {
            lo: 2.0,
            width: 6.25,
            a: 1.2,
            b: 2.5,
            upper: Some(5.0),
        }
    }

    /// Looks up a preset by name: `uniform`, `duong` or `duong-truncated`.
    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "uniform" | "uniform-2-12" => Ok(Self::uniform_2_12()),
            "duong" | "duong-like" | "duong-2-8.25" => Ok(Self::duong_like()),
            "duong-truncated" | "duong-2-5" => Ok(Self::duong_truncated()),
            other => Err(Error::Config(format!("unknown duration distribution preset '{other}'"))),
        }
    }

    pub fn label(&self) -> String {
        match self {
            DurationDistribution::Uniform { lo, hi } => format!("Uniform[{lo},{hi}]"),
            DurationDistribution::PointMass { at } => format!("PointMass[{at}]"),
            DurationDistribution::ScaledBeta { .. } => {
                let (lo, hi) = self.support();
                format!("DuongLike[{lo},{hi}]")
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDesign(m));
        match *self {
            DurationDistribution::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && hi > lo) {
                    return bad(format!("uniform support [{lo}, {hi}] is empty or invalid"));
                }
            }
            DurationDistribution::PointMass { at } => {
                if !(at.is_finite() && at >= 0.0) {
                    return bad(format!("point mass location {at} invalid"));
                }
            }
            DurationDistribution::ScaledBeta { lo, width, a, b, upper } => {
                if !(lo.is_finite() && lo >= 0.0 && width > 0.0 && a > 0.0 && b > 0.0) {
                    return bad(format!("scaled beta parameters invalid (lo={lo}, width={width}, a={a}, b={b})"));
                }
                if let Some(u) = upper {
                    if !(u > lo) {
                        return bad(format!("truncation point {u} leaves empty support above {lo}"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Closed support `[lo, hi]`.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            DurationDistribution::Uniform { lo, hi } => (lo, hi),
            DurationDistribution::PointMass { at } => (at, at),
            DurationDistribution::ScaledBeta { lo, width, upper, .. } => {
                let hi = lo + width;
                (lo, upper.map_or(hi, |u| u.min(hi)))
            }
        }
    }

    pub fn point_mass(&self) -> Option<f64> {
        match *self {
            DurationDistribution::PointMass { at } => Some(at),
            _ => None,
        }
    }

    /// Normalised density on the support. Point masses have no density.
    pub fn density(&self, u: f64) -> f64 {
        let (lo, hi) = self.support();
        if u < lo || u > hi {
            return 0.0;
        }
        match *self {
            DurationDistribution::Uniform { lo, hi } => 1.0 / (hi - lo),
            DurationDistribution::PointMass { .. } => f64::NAN,
            DurationDistribution::ScaledBeta { lo, width, a, b, upper } => {
                let x = (u - lo) / width;
                let mass = upper.map_or(1.0, |up| beta_reg(a, b, ((up - lo) / width).min(1.0)));
                if x <= 0.0 || x >= 1.0 {
                    // endpoint values only matter on a null set
                    return 0.0;
                }
                let log_pdf = (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta(a, b);
                log_pdf.exp() / width / mass
            }
        }
    }

    /// Draws one duration. Truncated beta draws are resampled until they fall
    /// inside the truncation bound.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DurationDistribution::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            DurationDistribution::PointMass { at } => at,
            DurationDistribution::ScaledBeta { lo, width, a, b, upper } => {
                let dist = Beta::new(a, b).expect("validated beta parameters");
                loop {
                    let u = lo + width * dist.sample(rng);
                    if upper.map_or(true, |up| u <= up) {
                        return u;
                    }
                }
            }
        }
    }
}
