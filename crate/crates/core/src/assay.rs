//! Duration-specific test-recent probability profiles `phi(u)` and their
//! exact summaries (mean window period, MDRI, false-recent rate).
//!
//! A profile is a small expression tree ([`PhiSpec`]) so that derived assays
//! (carried-forward tails, spikes, ramps) are built from a base curve the same
//! way they are described: 1B is 1A with its tail held constant after two
//! years, 1C adds a normal-density spike to 1B, and so on.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::checked_gamma_ur;

use crate::duration::DurationDistribution;
use crate::error::{Error, Result};
use crate::quad;

pub const DEFAULT_TAU: f64 = 12.0;
pub const DEFAULT_T_STAR: f64 = 2.0;
pub const DAYS_PER_YEAR: f64 = 365.25;

const VALIDATION_GRID: usize = 10_000;
const DIAGNOSTIC_GRID: usize = 10_000;
// 1D and 2D add Phi(-5)/10 ~ 3e-8 at u = 0; evaluation clamps into [0, 1].
const RANGE_SLACK: f64 = 1e-6;

/// Construction tree for `phi(u)`. Times are years, levels are probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhiSpec {
    /// `1 - F_Gamma(u; shape, rate)`.
    GammaSurvival { shape: f64, rate: f64 },
    /// `base(u)` for `u <= tail_start`, `level` afterwards.
    ConstantTail {
        base: Box<PhiSpec>,
        tail_start: f64,
        level: f64,
    },
    /// `base(u) + scale * normal_pdf(u; center, sd)`.
    SpikeAdded {
        base: Box<PhiSpec>,
        center: f64,
        sd: f64,
        scale: f64,
    },
    /// `base(u) + scale * normal_cdf(u; mean, sd)`.
    RampAdded {
        base: Box<PhiSpec>,
        mean: f64,
        sd: f64,
        scale: f64,
    },
    /// Pointwise sum of the parts.
    Composite { parts: Vec<PhiSpec> },
    /// Piecewise-linear interpolation through `(u, phi)` knots, flat outside.
    Custom { knots: Vec<[f64; 2]> },
}

fn normal_pdf(u: f64, mean: f64, sd: f64) -> f64 {
    let z = (u - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt())
}

fn normal_cdf(u: f64, mean: f64, sd: f64) -> f64 {
    0.5 * erfc(-(u - mean) / (sd * SQRT_2))
}

impl PhiSpec {
    pub fn constant(level: f64) -> Self {
        PhiSpec::Custom {
            knots: vec![[0.0, level]],
        }
    }

    /// `1` on `[0, width]`, `0` afterwards.
    pub fn indicator(width: f64) -> Self {
        PhiSpec::ConstantTail {
            base: Box::new(PhiSpec::constant(1.0)),
            tail_start: width,
            level: 0.0,
        }
    }

    /// Evaluates the tree at `u >= 0` without domain checks.
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            PhiSpec::GammaSurvival { shape, rate } => {
                if u <= 0.0 {
                    1.0
                } else {
                    checked_gamma_ur(*shape, rate * u).unwrap_or(0.0)
                }
            }
            PhiSpec::ConstantTail {
                base,
                tail_start,
                level,
            } => {
                if u <= *tail_start {
                    base.eval(u)
                } else {
                    *level
                }
            }
            PhiSpec::SpikeAdded {
                base,
                center,
                sd,
                scale,
            } => base.eval(u) + scale * normal_pdf(u, *center, *sd),
            PhiSpec::RampAdded {
                base,
                mean,
                sd,
                scale,
            } => base.eval(u) + scale * normal_cdf(u, *mean, *sd),
            PhiSpec::Composite { parts } => parts.iter().map(|p| p.eval(u)).sum(),
            PhiSpec::Custom { knots } => interpolate(knots, u),
        }
    }

    /// Points where the integrand has a jump, kink or a narrow feature.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.collect_breakpoints(&mut out);
        out.sort_by(|a, b| a.total_cmp(b));
        out.dedup();
        out
    }

    fn collect_breakpoints(&self, out: &mut Vec<f64>) {
        match self {
            PhiSpec::GammaSurvival { .. } => {}
            PhiSpec::ConstantTail {
                base, tail_start, ..
            } => {
                out.push(*tail_start);
                base.collect_breakpoints(out);
            }
            PhiSpec::SpikeAdded {
                base, center, sd, ..
            } => {
                out.extend([center - 6.0 * sd, *center, center + 6.0 * sd]);
                base.collect_breakpoints(out);
            }
            PhiSpec::RampAdded { base, mean, sd, .. } => {
                out.extend([mean - 6.0 * sd, *mean]);
                base.collect_breakpoints(out);
            }
            PhiSpec::Composite { parts } => parts.iter().for_each(|p| p.collect_breakpoints(out)),
            PhiSpec::Custom { knots } => out.extend(knots.iter().map(|k| k[0])),
        }
    }

    /// Jumps introduced by constant tails: `(location, left limit, right value)`.
    pub fn jumps(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        self.collect_jumps(&mut out);
        out
    }

    fn collect_jumps(&self, out: &mut Vec<(f64, f64, f64)>) {
        match self {
            PhiSpec::ConstantTail {
                base,
                tail_start,
                level,
            } => {
                let left = base.eval(*tail_start);
                if (left - level).abs() > 1e-12 {
                    out.push((*tail_start, left, *level));
                }
                base.collect_jumps(out);
            }
            PhiSpec::SpikeAdded { base, .. } | PhiSpec::RampAdded { base, .. } => {
                base.collect_jumps(out)
            }
            PhiSpec::Composite { parts } => parts.iter().for_each(|p| p.collect_jumps(out)),
            PhiSpec::GammaSurvival { .. } | PhiSpec::Custom { .. } => {}
        }
    }

    fn validate_params(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidProfile(m));
        let finite_pos = |x: f64| x.is_finite() && x > 0.0;
        match self {
            PhiSpec::GammaSurvival { shape, rate } => {
                if !(finite_pos(*shape) && finite_pos(*rate)) {
                    return bad(format!("gamma shape/rate must be positive, got {shape}/{rate}"));
                }
            }
            PhiSpec::ConstantTail {
                base,
                tail_start,
                level,
            } => {
                if !(tail_start.is_finite() && *tail_start >= 0.0) {
                    return bad(format!("tail start {tail_start} invalid"));
                }
                if !(0.0..=1.0).contains(level) {
                    return bad(format!("tail level {level} outside [0, 1]"));
                }
                base.validate_params()?;
            }
            PhiSpec::SpikeAdded {
                base,
                center,
                sd,
                scale,
            } => {
                if !(center.is_finite() && finite_pos(*sd) && scale.is_finite()) {
                    return bad(format!("spike parameters invalid (center={center}, sd={sd}, scale={scale})"));
                }
                base.validate_params()?;
            }
            PhiSpec::RampAdded {
                base,
                mean,
                sd,
                scale,
            } => {
                if !(mean.is_finite() && finite_pos(*sd) && scale.is_finite()) {
                    return bad(format!("ramp parameters invalid (mean={mean}, sd={sd}, scale={scale})"));
                }
                base.validate_params()?;
            }
            PhiSpec::Composite { parts } => {
                if parts.is_empty() {
                    return bad("composite profile has no parts".into());
                }
                for p in parts {
                    p.validate_params()?;
                }
            }
            PhiSpec::Custom { knots } => {
                if knots.is_empty() {
                    return bad("custom profile needs at least one knot".into());
                }
                if knots.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                    return bad("custom knots must have strictly increasing durations".into());
                }
                if knots.iter().any(|k| !k[0].is_finite() || !k[1].is_finite()) {
                    return bad("custom knots must be finite".into());
                }
            }
        }
        Ok(())
    }
}

fn interpolate(knots: &[[f64; 2]], u: f64) -> f64 {
    let first = knots[0];
    let last = knots[knots.len() - 1];
    if u <= first[0] {
        return first[1];
    }
    if u >= last[0] {
        return last[1];
    }
    let i = knots.partition_point(|k| k[0] <= u);
    let (a, b) = (knots[i - 1], knots[i]);
    a[1] + (b[1] - a[1]) * (u - a[0]) / (b[0] - a[0])
}

/// Built-in simulation assays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BuiltinAssay {
    A1A,
    A1B,
    A1C,
    A1D,
    A2A,
    A2B,
    A2C,
    A2D,
}

impl BuiltinAssay {
    pub const ALL: [BuiltinAssay; 8] = [
        BuiltinAssay::A1A,
        BuiltinAssay::A1B,
        BuiltinAssay::A1C,
        BuiltinAssay::A1D,
        BuiltinAssay::A2A,
        BuiltinAssay::A2B,
        BuiltinAssay::A2C,
        BuiltinAssay::A2D,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            BuiltinAssay::A1A => "1A",
            BuiltinAssay::A1B => "1B",
            BuiltinAssay::A1C => "1C",
            BuiltinAssay::A1D => "1D",
            BuiltinAssay::A2A => "2A",
            BuiltinAssay::A2B => "2B",
            BuiltinAssay::A2C => "2C",
            BuiltinAssay::A2D => "2D",
        }
    }

    pub fn spec(self) -> PhiSpec {
        let a1 = || PhiSpec::GammaSurvival {
            shape: 0.352,
            rate: 1.273,
        };
        let a2 = || PhiSpec::GammaSurvival {
            shape: 0.681,
            rate: 1.003,
        };
        let b1 = || PhiSpec::ConstantTail {
            base: Box::new(a1()),
            tail_start: 2.0,
            level: 0.014,
        };
        let b2 = || PhiSpec::ConstantTail {
            base: Box::new(a2()),
            tail_start: 3.17,
            level: 0.020,
        };
        let spike = |base: PhiSpec| PhiSpec::SpikeAdded {
            base: Box::new(base),
            center: 7.0,
            sd: 1.0,
            scale: 1.0 / 8.0,
        };
        let ramp = |base: PhiSpec| PhiSpec::RampAdded {
            base: Box::new(base),
            mean: 10.0,
            sd: 2.0,
            scale: 1.0 / 10.0,
        };
        match self {
            BuiltinAssay::A1A => a1(),
            BuiltinAssay::A1B => b1(),
            BuiltinAssay::A1C => spike(b1()),
            BuiltinAssay::A1D => ramp(b1()),
            BuiltinAssay::A2A => a2(),
            BuiltinAssay::A2B => b2(),
            BuiltinAssay::A2C => spike(b2()),
            BuiltinAssay::A2D => ramp(b2()),
        }
    }

    pub fn profile(self) -> AssayProfile {
        AssayProfile::new(self.short_name(), self.spec(), DEFAULT_TAU, DEFAULT_T_STAR)
            .expect("built-in assays are valid")
    }
}

impl fmt::Display for BuiltinAssay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for BuiltinAssay {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase();
        let key = key.strip_prefix('A').unwrap_or(&key);
        BuiltinAssay::ALL
            .into_iter()
            .find(|a| a.short_name() == key)
            .ok_or_else(|| Error::InvalidProfile(format!("unknown built-in assay '{s}' (expected 1A..2D)")))
    }
}

pub fn builtin_assay(name: BuiltinAssay) -> AssayProfile {
    name.profile()
}

/// A validated test-recent probability profile with its horizon `tau`
/// and recent/long cutoff `t_star`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AssayProfileDef", into = "AssayProfileDef")]
pub struct AssayProfile {
    name: String,
    spec: PhiSpec,
    tau: f64,
    t_star: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AssayProfileDef {
    #[serde(default)]
    name: String,
    phi: PhiSpec,
    #[serde(default = "default_tau")]
    tau: f64,
    #[serde(default = "default_t_star")]
    t_star: f64,
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

fn default_t_star() -> f64 {
    DEFAULT_T_STAR
}

impl TryFrom<AssayProfileDef> for AssayProfile {
    type Error = Error;

    fn try_from(d: AssayProfileDef) -> Result<Self> {
        AssayProfile::new(d.name, d.phi, d.tau, d.t_star)
    }
}

impl From<AssayProfile> for AssayProfileDef {
    fn from(p: AssayProfile) -> Self {
        AssayProfileDef {
            name: p.name,
            phi: p.spec,
            tau: p.tau,
            t_star: p.t_star,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailDiagnostic {
    pub holds: bool,
    /// Largest `phi` beyond `tau` for S1; `max - min` of `phi` on
    /// `[t_star, tau]` for K1.
    pub value: f64,
}

/// Exact summaries of an assay under a given integration bound and
/// long-infected distribution. All times in years.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssayTruth {
    pub mu: f64,
    pub mdri: f64,
    pub frr: f64,
    pub shadow_snapshot: f64,
    pub shadow_adjusted: f64,
    pub upper_bound_used: f64,
}

impl AssayProfile {
    pub fn new(name: impl Into<String>, spec: PhiSpec, tau: f64, t_star: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidProfile(format!("tau must be positive, got {tau}")));
        }
        if !(t_star.is_finite() && t_star > 0.0 && t_star < tau) {
            return Err(Error::InvalidProfile(format!(
                "t_star must satisfy 0 < t_star < tau, got t_star={t_star}, tau={tau}"
            )));
        }
        spec.validate_params()?;
        let grid_end = 2.0 * tau;
        for i in 0..=VALIDATION_GRID {
            let u = grid_end * i as f64 / VALIDATION_GRID as f64;
            let v = spec.eval(u);
            if !(v >= -RANGE_SLACK && v <= 1.0 + RANGE_SLACK) {
                return Err(Error::InvalidProfile(format!(
                    "phi({u:.4}) = {v} lies outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            spec,
            tau,
            t_star,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spec(&self) -> &PhiSpec {
        &self.spec
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn t_star(&self) -> f64 {
        self.t_star
    }

    pub fn with_t_star(&self, t_star: f64) -> Result<Self> {
        Self::new(self.name.clone(), self.spec.clone(), self.tau, t_star)
    }

    /// `phi(u)` for finite `u >= 0`.
    pub fn phi(&self, u: f64) -> Result<f64> {
        if !(u.is_finite() && u >= 0.0) {
            return Err(Error::domain(format!("duration must be finite and nonnegative, got {u}")));
        }
        Ok(self.phi_unchecked(u))
    }

    /// `phi(u)` clamped into `[0, 1]`; callers guarantee `u >= 0`.
    pub fn phi_unchecked(&self, u: f64) -> f64 {
        self.spec.eval(u).clamp(0.0, 1.0)
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = self.spec.breakpoints();
        b.push(self.t_star);
        b
    }

    pub fn jumps(&self) -> Vec<(f64, f64, f64)> {
        self.spec.jumps()
    }

    /// `integral_a^b phi(u) du`.
    pub fn integrate_phi(&self, a: f64, b: f64) -> Result<f64> {
        quad::integral(|u| self.phi_unchecked(u), a, b, &self.breakpoints())
    }

    /// Mean window period truncated at `upper`: `integral_0^upper phi`.
    pub fn mean_window(&self, upper: f64) -> Result<f64> {
        if !(upper.is_finite() && upper > 0.0) {
            return Err(Error::domain(format!("upper bound must be positive and finite, got {upper}")));
        }
        self.integrate_phi(0.0, upper)
    }

    /// Mean duration of recent infection, `integral_0^t_star phi`.
    pub fn mdri(&self) -> Result<f64> {
        self.integrate_phi(0.0, self.t_star)
    }

    /// False-recent rate: the `g`-weighted mean of `phi` over long infections.
    pub fn true_frr(&self, g: &DurationDistribution) -> Result<f64> {
        g.validate().map_err(|e| Error::domain(e.to_string()))?;
        let (lo, hi) = g.support();
        if lo < self.t_star {
            return Err(Error::domain(format!(
                "long-infected distribution support starts at {lo}, below t_star = {}",
                self.t_star
            )));
        }
        if let Some(at) = g.point_mass() {
            return self.phi(at);
        }
        let mut bps = self.breakpoints();
        bps.extend([lo, hi]);
        let num = quad::integral(|u| self.phi_unchecked(u) * g.density(u), lo, hi, &bps)?;
        let den = quad::integral(|u| g.density(u), lo, hi, &bps)?;
        if den <= 0.0 {
            return Err(Error::domain("long-infected distribution has no mass"));
        }
        Ok(num / den)
    }

    /// Assumption S1 diagnostic: `phi` is negligible beyond `tau`.
    pub fn check_assumption_s1(&self, eps: f64) -> TailDiagnostic {
        let max_tail = (0..=DIAGNOSTIC_GRID)
            .map(|i| self.phi_unchecked(self.tau * (1.0 + i as f64 / DIAGNOSTIC_GRID as f64)))
            .fold(0.0, f64::max);
        TailDiagnostic {
            holds: max_tail <= eps,
            value: max_tail,
        }
    }

    /// Assumption K1 diagnostic: `phi` is constant on `[t_star, tau]`.
    pub fn check_assumption_k1(&self, eps: f64) -> TailDiagnostic {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..=DIAGNOSTIC_GRID {
            let u = self.t_star + (self.tau - self.t_star) * i as f64 / DIAGNOSTIC_GRID as f64;
            let v = self.phi_unchecked(u);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let range = hi - lo;
        TailDiagnostic {
            holds: range <= eps,
            value: range,
        }
    }
}
