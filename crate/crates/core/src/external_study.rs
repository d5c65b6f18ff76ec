//! Simulated calibration studies: longitudinal seroconverter panels and
//! cross-sectional samples of long-infected subjects.
//!
//! The default panel design is synthetic. It reproduces the shape of a
//! typical seroconverter cohort (175 subjects, about 2077 visits, visits
//! bunched early after infection and spreading out later, nothing beyond
//! 8.25 years) without claiming to match any particular cohort's histograms.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Geometric, LogNormal};
use serde::{Deserialize, Serialize};

use crate::assay::AssayProfile;
use crate::duration::DurationDistribution;
use crate::error::{Error, Result};

const DAYS_PER_YEAR: f64 = crate::assay::DAYS_PER_YEAR;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Finite mixture of uniform distributions, in years.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformMixture {
    pub components: Vec<MixtureComponent>,
}

impl UniformMixture {
    fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidDesign("first-duration mixture has no components".into()));
        }
        for c in &self.components {
            if !(c.weight > 0.0 && c.lo >= 0.0 && c.hi >= c.lo && c.hi.is_finite()) {
                return Err(Error::InvalidDesign(format!("invalid mixture component {c:?}")));
            }
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        let mut x = rng.random::<f64>() * total;
        for c in &self.components {
            if x < c.weight {
                return c.lo + (c.hi - c.lo) * rng.random::<f64>();
            }
            x -= c.weight;
        }
        let c = self.components[self.components.len() - 1];
        c.lo + (c.hi - c.lo) * rng.random::<f64>()
    }

    pub fn mean(&self) -> f64 {
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        self.components.iter().map(|c| c.weight * 0.5 * (c.lo + c.hi)).sum::<f64>() / total
    }
}

/// Distribution of the number of visits per subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleCountDist {
    /// `1 + Geometric` with untruncated mean `mean`, redrawn while above `max`.
    ShiftedGeometric { mean: f64, max: u32 },
    /// Explicit probabilities over visit counts.
    Empirical { values: Vec<u32>, weights: Vec<f64> },
}

impl SampleCountDist {
    fn validate(&self) -> Result<()> {
        match self {
            SampleCountDist::ShiftedGeometric { mean, max } => {
                if !(*mean >= 1.0 && *max >= 1) {
                    return Err(Error::InvalidDesign(format!(
                        "shifted geometric needs mean >= 1 and max >= 1 (mean={mean}, max={max})"
                    )));
                }
            }
            SampleCountDist::Empirical { values, weights } => {
                if values.is_empty()
                    || values.len() != weights.len()
                    || weights.iter().any(|w| !(*w >= 0.0))
                    || weights.iter().sum::<f64>() <= 0.0
                    || values.iter().any(|&v| v == 0)
                {
                    return Err(Error::InvalidDesign(
                        "empirical visit counts need matching positive values and nonnegative weights".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self {
            SampleCountDist::ShiftedGeometric { mean, max } => {
                if *mean <= 1.0 {
                    return 1;
                }
                let g = Geometric::new(1.0 / mean).expect("validated success probability");
                loop {
                    let n = 1 + g.sample(rng);
                    if n <= u64::from(*max) {
                        return n as u32;
                    }
                }
            }
            SampleCountDist::Empirical { values, weights } => {
                let total: f64 = weights.iter().sum();
                let mut x = rng.random::<f64>() * total;
                for (v, w) in values.iter().zip(weights) {
                    if x < *w {
                        return *v;
                    }
                    x -= w;
                }
                values[values.len() - 1]
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            SampleCountDist::ShiftedGeometric { mean, max } => {
                let q = 1.0 / mean;
                let (mut num, mut den) = (0.0, 0.0);
                for n in 1..=*max {
                    let p = q * (1.0 - q).powi(n as i32 - 1);
                    num += n as f64 * p;
                    den += p;
                }
                num / den
            }
            SampleCountDist::Empirical { values, weights } => {
                let total: f64 = weights.iter().sum();
                values.iter().zip(weights).map(|(v, w)| *v as f64 * w).sum::<f64>() / total
            }
        }
    }
}

/// Piecewise log-linear model of the gap (days) before visit `k`:
/// log-mean `ln(early_days)` up to the knot, rising linearly in `k` to
/// `ln(late_days)` at visit `late_visit`, flat afterwards; lognormal scatter
/// with log-sd `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GapModel {
    pub early_days: f64,
    pub knot: u32,
    pub late_days: f64,
    pub late_visit: u32,
    pub sigma: f64,
}

impl Default for GapModel {
    fn default() -> Self {
        Self {
            early_days: 30.0,
            knot: 5,
            late_days: 180.0,
            late_visit: 20,
            sigma: 0.5,
        }
    }
}

impl GapModel {
    fn validate(&self) -> Result<()> {
        if !(self.early_days > 0.0 && self.late_days > 0.0 && self.sigma >= 0.0) {
            return Err(Error::InvalidDesign(format!("gap model scales invalid: {self:?}")));
        }
        if self.knot < 2 || self.late_visit <= self.knot {
            return Err(Error::InvalidDesign(format!(
                "gap model needs 2 <= knot < late_visit (knot={}, late_visit={})",
                self.knot, self.late_visit
            )));
        }
        Ok(())
    }

    pub fn log_mean_days(&self, visit: u32) -> f64 {
        let (lo, hi) = (self.early_days.ln(), self.late_days.ln());
        if visit <= self.knot {
            lo
        } else if visit >= self.late_visit {
            hi
        } else {
            let frac = f64::from(visit - self.knot) / f64::from(self.late_visit - self.knot);
            lo + frac * (hi - lo)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelDesign {
    pub n_subjects: usize,
    pub first_duration: UniformMixture,
    pub n_samples: SampleCountDist,
    pub gaps: GapModel,
    /// Visits later than this many years after infection are dropped.
    pub max_duration: f64,
}

impl Default for PanelDesign {
    fn default() -> Self {
        Self {
            n_subjects: 175,
            first_duration: UniformMixture {
                components: vec![
                    MixtureComponent {
                        weight: 0.7,
                        lo: 0.05,
                        hi: 0.5,
                    },
                    MixtureComponent {
                        weight: 0.3,
                        lo: 0.5,
                        hi: 1.5,
                    },
                ],
            },
            n_samples: SampleCountDist::ShiftedGeometric {
                mean: DEFAULT_VISIT_MEAN,
                max: 40,
            },
            gaps: GapModel::default(),
            max_duration: 8.25,
        }
    }
}

/// Mean of the untruncated geometric. Capping at 40 visits brings the
/// visit-count mean to 11.9 (2077 visits over 175 subjects).
pub const DEFAULT_VISIT_MEAN: f64 = 14.15;

impl PanelDesign {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 {
            return Err(Error::InvalidDesign(format!(
                "panel needs at least 2 subjects, got {}",
                self.n_subjects
            )));
        }
        if !(self.max_duration > 0.0) {
            return Err(Error::InvalidDesign(format!("max_duration must be positive, got {}", self.max_duration)));
        }
        self.first_duration.validate()?;
        self.n_samples.validate()?;
        self.gaps.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub subject_id: u64,
    /// Infection duration at the visit, years.
    pub duration: f64,
    pub recent: bool,
}

/// Clustered calibration observations, sorted by subject then duration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PanelDataset {
    rows: Vec<PanelRow>,
    cluster_starts: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PanelCsvRow {
    subject_id: u64,
    duration_years: f64,
    recent: u8,
}

impl PanelDataset {
    pub fn new(mut rows: Vec<PanelRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidDesign("panel has no observations".into()));
        }
        if let Some(r) = rows.iter().find(|r| !(r.duration.is_finite() && r.duration >= 0.0)) {
            return Err(Error::domain(format!(
                "subject {} has invalid duration {}",
                r.subject_id, r.duration
            )));
        }
        rows.sort_by(|a, b| a.subject_id.cmp(&b.subject_id).then(a.duration.total_cmp(&b.duration)));
        let mut cluster_starts = vec![0];
        for i in 1..rows.len() {
            if rows[i].subject_id != rows[i - 1].subject_id {
                cluster_starts.push(i);
            }
        }
        Ok(Self { rows, cluster_starts })
    }

    pub fn rows(&self) -> &[PanelRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_subjects(&self) -> usize {
        self.cluster_starts.len()
    }

    /// Observations of each subject, in subject order.
    pub fn clusters(&self) -> impl Iterator<Item = &[PanelRow]> + '_ {
        self.cluster_starts.iter().enumerate().map(move |(i, &s)| {
            let e = self.cluster_starts.get(i + 1).copied().unwrap_or(self.rows.len());
            &self.rows[s..e]
        })
    }

    pub fn max_duration(&self) -> f64 {
        self.rows.iter().map(|r| r.duration).fold(0.0, f64::max)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut rows = Vec::new();
        for rec in rdr.deserialize::<PanelCsvRow>() {
            let rec = rec?;
            if rec.recent > 1 {
                return Err(Error::domain(format!("recent must be 0 or 1, got {}", rec.recent)));
            }
            rows.push(PanelRow {
                subject_id: rec.subject_id,
                duration: rec.duration_years,
                recent: rec.recent == 1,
            });
        }
        Self::new(rows)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(PanelCsvRow {
                subject_id: r.subject_id,
                duration_years: r.duration,
                recent: u8::from(r.recent),
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Simulates one calibration panel: per subject, a first-visit duration, a
/// visit count and lognormal gaps accumulated from the first visit; each visit
/// tests recent with probability `phi(duration)`.
pub fn simulate_panel<R: Rng + ?Sized>(design: &PanelDesign, assay: &AssayProfile, rng: &mut R) -> Result<PanelDataset> {
    design.validate()?;
    let mut rows = Vec::new();
    for subject in 0..design.n_subjects {
        let mut duration = design.first_duration.sample(rng);
        let visits = design.n_samples.sample(rng);
        for visit in 1..=visits {
            if visit > 1 {
                let log_mean = design.gaps.log_mean_days(visit);
                let gap_days = if design.gaps.sigma > 0.0 {
                    LogNormal::new(log_mean, design.gaps.sigma)
                        .expect("validated lognormal")
                        .sample(rng)
                } else {
                    log_mean.exp()
                };
                duration += gap_days / DAYS_PER_YEAR;
            }
            if duration > design.max_duration {
                break;
            }
            let recent = rng.random::<f64>() < assay.phi_unchecked(duration);
            rows.push(PanelRow {
                subject_id: subject as u64,
                duration,
                recent,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidDesign("panel design produced no observations".into()));
    }
    PanelDataset::new(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LongInfectedDesign {
    pub n: usize,
    pub duration_dist: DurationDistribution,
}

impl Default for LongInfectedDesign {
    fn default() -> Self {
        Self {
            n: 1500,
            duration_dist: DurationDistribution::uniform_2_12(),
        }
    }
}

impl LongInfectedDesign {
    pub fn validate(&self, t_star: f64) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidDesign("long-infected sample size must be positive".into()));
        }
        self.duration_dist.validate()?;
        let (lo, _) = self.duration_dist.support();
        if lo < t_star {
            return Err(Error::InvalidDesign(format!(
                "long-infected durations must exceed T* = {t_star}; support starts at {lo}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongInfectedObs {
    pub duration: f64,
    pub recent: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct LongCsvRow {
    duration_years: f64,
    recent: u8,
}

pub fn simulate_long_infected<R: Rng + ?Sized>(
    design: &LongInfectedDesign,
    assay: &AssayProfile,
    rng: &mut R,
) -> Result<Vec<LongInfectedObs>> {
    design.validate(assay.t_star())?;
    Ok((0..design.n)
        .map(|_| {
            let duration = design.duration_dist.sample(rng);
            let recent = rng.random::<f64>() < assay.phi_unchecked(duration);
            LongInfectedObs { duration, recent }
        })
        .collect())
}

pub fn read_long_infected_csv<R: Read>(reader: R) -> Result<Vec<LongInfectedObs>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.deserialize::<LongCsvRow>() {
        let rec = rec?;
        if rec.recent > 1 {
            return Err(Error::domain(format!("recent must be 0 or 1, got {}", rec.recent)));
        }
        out.push(LongInfectedObs {
            duration: rec.duration_years,
            recent: rec.recent == 1,
        });
    }
    Ok(out)
}

pub fn write_long_infected_csv<W: Write>(sample: &[LongInfectedObs], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for o in sample {
        w.serialize(LongCsvRow {
            duration_years: o.duration,
            recent: u8::from(o.recent),
        })?;
    }
    w.flush()?;
    Ok(())
}
