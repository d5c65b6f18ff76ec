//! Incidence scenarios with constant prevalence and closed-form sampling of
//! infection durations among prevalent cases.
//!
//! Infections among subjects positive at the survey time `t` are confined to
//! `[t - c_t, t]`, where `c_t` solves
//! `integral_{t-c_t}^t lambda(s) (1 - p) ds = p`. Within that window the
//! duration `u = t - T` has density `lambda(t - u) (1 - p) / p`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BANGKOK_PRESET: &str = "bangkok-msm";
pub const BANGKOK_LAMBDA: f64 = 0.032;
pub const BANGKOK_PREVALENCE: f64 = 0.29;
pub const BANGKOK_RHO_LINEAR: f64 = 0.0028;
pub const BANGKOK_RHO_EXPONENTIAL: f64 = 0.07;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncidenceTrend {
    /// `lambda(t - u) = lambda0`.
    Constant,
    /// `lambda(t - u) = lambda0 + rho u`.
    #[serde(alias = "linear")]
    LinearDecreasing,
    /// `lambda(t - u) = lambda0 exp(rho u)`.
    #[serde(alias = "exponential")]
    ExponentialDecreasing,
}

impl IncidenceTrend {
    pub const ALL: [IncidenceTrend; 3] = [
        IncidenceTrend::Constant,
        IncidenceTrend::LinearDecreasing,
        IncidenceTrend::ExponentialDecreasing,
    ];

    pub fn label(self) -> &'static str {
        match self {
            IncidenceTrend::Constant => "Constant",
            IncidenceTrend::LinearDecreasing => "Linear",
            IncidenceTrend::ExponentialDecreasing => "Exponential",
        }
    }
}

impl fmt::Display for IncidenceTrend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for IncidenceTrend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "constant" => Ok(IncidenceTrend::Constant),
            "linear" | "linear_decreasing" | "linear-decreasing" => Ok(IncidenceTrend::LinearDecreasing),
            "exponential" | "exp" | "exponential_decreasing" | "exponential-decreasing" => {
                Ok(IncidenceTrend::ExponentialDecreasing)
            }
            other => Err(Error::InvalidScenario(format!(
                "unknown incidence trend '{other}' (expected constant, linear or exponential)"
            ))),
        }
    }
}

/// Closed-form support bound `c_t` of past infections.
pub fn support_bound(kind: IncidenceTrend, lambda0: f64, rho: f64, prevalence: f64) -> Result<f64> {
    validate(lambda0, rho, prevalence)?;
    let odds = prevalence / (1.0 - prevalence);
    let c = duration_for_mass(kind, lambda0, rho, odds);
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::InvalidScenario(format!(
            "no positive support bound for {kind} (lambda0={lambda0}, rho={rho}, p={prevalence})"
        )));
    }
    Ok(c)
}

/// Duration `u` with `integral_0^u lambda(t - s) ds = mass`.
fn duration_for_mass(kind: IncidenceTrend, lambda0: f64, rho: f64, mass: f64) -> f64 {
    match kind {
        IncidenceTrend::Constant => mass / lambda0,
        // positive root of rho/2 u^2 + lambda0 u - mass = 0, in the
        // cancellation-free form that stays exact as rho -> 0
        IncidenceTrend::LinearDecreasing => {
            2.0 * mass / (lambda0 + (lambda0 * lambda0 + 2.0 * rho * mass).sqrt())
        }
        IncidenceTrend::ExponentialDecreasing => {
            if rho == 0.0 {
                mass / lambda0
            } else {
                (rho * mass / lambda0).ln_1p() / rho
            }
        }
    }
}

fn validate(lambda0: f64, rho: f64, prevalence: f64) -> Result<()> {
    if !(lambda0.is_finite() && lambda0 > 0.0) {
        return Err(Error::InvalidScenario(format!("lambda0 must be positive, got {lambda0}")));
    }
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(Error::InvalidScenario(format!("rho must be nonnegative, got {rho}")));
    }
    if !(prevalence > 0.0 && prevalence < 1.0) {
        return Err(Error::InvalidScenario(format!("prevalence must lie in (0, 1), got {prevalence}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioSpec", into = "ScenarioSpec")]
pub struct EpidemicScenario {
    kind: IncidenceTrend,
    lambda0: f64,
    rho: f64,
    prevalence: f64,
    c_t: f64,
}

/// Serialized form of a scenario. Omitted fields take the Bangkok MSM
/// preset values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub kind: IncidenceTrend,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prevalence: Option<f64>,
}

impl TryFrom<ScenarioSpec> for EpidemicScenario {
    type Error = Error;

    fn try_from(s: ScenarioSpec) -> Result<Self> {
        if let Some(p) = &s.preset {
            if p != BANGKOK_PRESET {
                return Err(Error::InvalidScenario(format!(
                    "unknown scenario preset '{p}' (available: {BANGKOK_PRESET})"
                )));
            }
        }
        let base = EpidemicScenario::bangkok(s.kind);
        EpidemicScenario::new(
            s.kind,
            s.lambda0.unwrap_or(base.lambda0),
            s.rho.unwrap_or(base.rho),
            s.prevalence.unwrap_or(base.prevalence),
        )
    }
}

impl From<EpidemicScenario> for ScenarioSpec {
    fn from(s: EpidemicScenario) -> Self {
        ScenarioSpec {
            preset: None,
            kind: s.kind,
            lambda0: Some(s.lambda0),
            rho: Some(s.rho),
            prevalence: Some(s.prevalence),
        }
    }
}

impl EpidemicScenario {
    pub fn new(kind: IncidenceTrend, lambda0: f64, rho: f64, prevalence: f64) -> Result<Self> {
        let rho = if kind == IncidenceTrend::Constant { 0.0 } else { rho };
        let c_t = support_bound(kind, lambda0, rho, prevalence)?;
        Ok(Self {
            kind,
            lambda0,
            rho,
            prevalence,
            c_t,
        })
    }

    /// Bangkok MSM settings: `lambda(t) = 0.032`, `p = 0.29`, with
    /// `rho = 0.0028` (linear) or `rho = 0.07` (exponential).
    pub fn bangkok(kind: IncidenceTrend) -> Self {
        let rho = match kind {
            IncidenceTrend::Constant => 0.0,
            IncidenceTrend::LinearDecreasing => BANGKOK_RHO_LINEAR,
            IncidenceTrend::ExponentialDecreasing => BANGKOK_RHO_EXPONENTIAL,
        };
        Self::new(kind, BANGKOK_LAMBDA, rho, BANGKOK_PREVALENCE).expect("preset is valid")
    }

    pub fn preset(name: &str, kind: IncidenceTrend) -> Result<Self> {
        if name == BANGKOK_PRESET {
            Ok(Self::bangkok(kind))
        } else {
            Err(Error::InvalidScenario(format!("unknown scenario preset '{name}'")))
        }
    }

    pub fn kind(&self) -> IncidenceTrend {
        self.kind
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn prevalence(&self) -> f64 {
        self.prevalence
    }

    pub fn c_t(&self) -> f64 {
        self.c_t
    }

    /// Incidence `back` years before the survey, `lambda(t - back)`.
    pub fn incidence_at(&self, back: f64) -> Result<f64> {
        if !(back >= 0.0) {
            return Err(Error::domain(format!("look-back time must be nonnegative, got {back}")));
        }
        Ok(self.incidence_unchecked(back))
    }

    pub(crate) fn incidence_unchecked(&self, back: f64) -> f64 {
        match self.kind {
            IncidenceTrend::Constant => self.lambda0,
            IncidenceTrend::LinearDecreasing => self.lambda0 + self.rho * back,
            IncidenceTrend::ExponentialDecreasing => self.lambda0 * (self.rho * back).exp(),
        }
    }

    /// Density of the infection duration of a prevalent case, on `[0, c_t]`.
    pub fn duration_density(&self, u: f64) -> f64 {
        if u < 0.0 || u > self.c_t {
            return 0.0;
        }
        self.incidence_unchecked(u) * (1.0 - self.prevalence) / self.prevalence
    }

    /// Maps a uniform variate `e` to an infection duration in `[0, c_t]`;
    /// `e = 1` is the newest infection and `e = 0` the oldest.
    pub fn sample_infection_duration(&self, e: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&e) {
            return Err(Error::domain(format!("uniform variate must lie in [0, 1], got {e}")));
        }
        let odds = self.prevalence / (1.0 - self.prevalence);
        let u = duration_for_mass(self.kind, self.lambda0, self.rho, odds * (1.0 - e));
        Ok(u.clamp(0.0, self.c_t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integral;

    #[test]
    fn incidence_examples() {
        let c = EpidemicScenario::bangkok(IncidenceTrend::Constant);
        assert_eq!(c.incidence_at(5.0).unwrap(), 0.032);
        let l = EpidemicScenario::bangkok(IncidenceTrend::LinearDecreasing);
        assert!((l.incidence_at(1.0).unwrap() - 0.0348).abs() < 1e-15);
        let e = EpidemicScenario::bangkok(IncidenceTrend::ExponentialDecreasing);
        let v = e.incidence_at(10.0).unwrap();
        assert!((v - 0.032 * 0.7f64.exp()).abs() < 1e-15);
        assert!((v - 0.0645).abs() < 1e-4);
        assert!(c.incidence_at(-1.0).is_err());
    }

    #[test]
    fn support_bounds() {
        let c = support_bound(IncidenceTrend::Constant, 0.032, 0.0, 0.29).unwrap();
        assert!((c - 0.29 / (0.032 * 0.71)).abs() < 1e-12);
        assert!((c - 12.764).abs() < 1e-3);
        let l = support_bound(IncidenceTrend::LinearDecreasing, 0.032, 0.0028, 0.29).unwrap();
        // quadratic formula oracle
        let q = 0.29 / 0.71;
        let oracle = (-0.032 + (0.032f64.powi(2) + 2.0 * 0.0028 * q).sqrt()) / 0.0028;
        assert!((l - oracle).abs() < 1e-10);
        assert!((l - 9.12).abs() < 0.01);
        for kind in [IncidenceTrend::LinearDecreasing, IncidenceTrend::ExponentialDecreasing] {
            let tiny = support_bound(kind, 0.032, 1e-12, 0.29).unwrap();
            assert!((tiny - c).abs() < 1e-6);
            assert_eq!(support_bound(kind, 0.032, 0.0, 0.29).unwrap(), c);
        }
    }

    #[test]
    fn closure_of_support_window() {
        for kind in IncidenceTrend::ALL {
            let s = EpidemicScenario::bangkok(kind);
            let p = s.prevalence();
            let m = integral(|u| s.incidence_unchecked(u) * (1.0 - p), 0.0, s.c_t(), &[]).unwrap();
            assert!(((m - p) / p).abs() < 1e-10, "{kind}: {m}");
        }
    }

    #[test]
    fn sampler_endpoints() {
        let c = EpidemicScenario::bangkok(IncidenceTrend::Constant);
        assert_eq!(c.sample_infection_duration(1.0).unwrap(), 0.0);
        assert!((c.sample_infection_duration(0.0).unwrap() - c.c_t()).abs() < 1e-12);
        assert!(c.sample_infection_duration(1.5).is_err());
        assert!(c.sample_infection_duration(-0.1).is_err());
        let l = EpidemicScenario::new(IncidenceTrend::LinearDecreasing, 0.032, 1e-12, 0.29).unwrap();
        for e in [0.0, 0.3, 0.77, 1.0] {
            let a = l.sample_infection_duration(e).unwrap();
            let b = c.sample_infection_duration(e).unwrap();
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_parameters() {
        assert!(EpidemicScenario::new(IncidenceTrend::Constant, 0.0, 0.0, 0.3).is_err());
        assert!(EpidemicScenario::new(IncidenceTrend::Constant, 0.03, 0.0, 1.0).is_err());
        assert!(EpidemicScenario::new(IncidenceTrend::LinearDecreasing, 0.03, -0.1, 0.3).is_err());
    }

    #[test]
    fn spec_defaults_to_preset() {
        let s: EpidemicScenario = toml::from_str("kind = \"linear\"\npreset = \"bangkok-msm\"").unwrap();
        assert_eq!(s, EpidemicScenario::bangkok(IncidenceTrend::LinearDecreasing));
        let s: EpidemicScenario = toml::from_str("kind = \"constant\"\nprevalence = 0.31").unwrap();
        assert_eq!(s.prevalence(), 0.31);
        assert!(toml::from_str::<EpidemicScenario>("kind = \"constant\"\npreset = \"nyc\"").is_err());
    }
}
