//! Denial-of-Service outage schedules and the `|Ξ(t)| ≤ κ + t/τ` budget.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute slack used when comparing accumulated outage against the budget.
pub const BUDGET_TOLERANCE: f64 = 1e-9;

/// Outage quantum of the greedy generator, seconds.
pub const DEFAULT_OUTAGE: f64 = 1.0;

/// Sorted, disjoint outage intervals `[start, start + duration)` with their
/// `(κ, τ)` budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleFile", into = "ScheduleFile")]
pub struct DosSchedule {
    intervals: Vec<(f64, f64)>,
    kappa: f64,
    tau: f64,
}

#[derive(Serialize, Deserialize)]
struct ScheduleFile {
    kappa: f64,
    tau: f64,
    intervals: Vec<[f64; 2]>,
}

impl TryFrom<ScheduleFile> for DosSchedule {
    type Error = Error;

    fn try_from(f: ScheduleFile) -> Result<Self> {
        DosSchedule::new(f.intervals.into_iter().map(|[s, d]| (s, d)).collect(), f.kappa, f.tau)
    }
}

impl From<DosSchedule> for ScheduleFile {
    fn from(s: DosSchedule) -> Self {
        ScheduleFile {
            kappa: s.kappa,
            tau: s.tau,
            intervals: s.intervals.into_iter().map(|(a, b)| [a, b]).collect(),
        }
    }
}

/// Outcome of checking a schedule against its budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BudgetCheck {
    pub valid: bool,
    /// Right endpoint of the first interval where the budget is exceeded.
    pub first_violation: Option<f64>,
    /// max over right endpoints of `|Ξ(t)| − t/τ − κ` (≤ 0 when valid).
    pub worst_excess: f64,
}

impl DosSchedule {
    /// Builds a schedule, rejecting malformed intervals. The budget itself is
    /// not enforced here; see [`DosSchedule::validate`].
    pub fn new(intervals: Vec<(f64, f64)>, kappa: f64, tau: f64) -> Result<Self> {
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::MalformedSchedule(format!("kappa must be >= 0, got {kappa}")));
        }
        if !(tau > 1.0) {
            return Err(Error::MalformedSchedule(format!("tau must be > 1, got {tau}")));
        }
        for (i, &(start, dur)) in intervals.iter().enumerate() {
            if !(start >= 0.0) || !start.is_finite() {
                return Err(Error::MalformedSchedule(format!("interval {i} starts at {start}")));
            }
            if !(dur > 0.0) || !dur.is_finite() {
                return Err(Error::MalformedSchedule(format!("interval {i} has duration {dur}")));
            }
            if i > 0 {
                let (ps, pd) = intervals[i - 1];
                if !(ps + pd < start) {
                    return Err(Error::MalformedSchedule(format!(
                        "interval {i} overlaps or precedes interval {}",
                        i - 1
                    )));
                }
            }
        }
        Ok(Self { intervals, kappa, tau })
    }

    /// A schedule with no outages.
    pub fn empty(kappa: f64, tau: f64) -> Result<Self> {
        Self::new(Vec::new(), kappa, tau)
    }

    /// No outages; budget fields are placeholders (κ = 0, τ = 2).
    pub fn none() -> Self {
        Self { intervals: Vec::new(), kappa: 0.0, tau: 2.0 }
    }

    /// One outage covering `[0, t_end)`. Useful for exercising the DoS mode;
    /// it does not respect any budget.
    pub fn always(t_end: f64) -> Self {
        Self { intervals: vec![(0.0, t_end)], kappa: t_end, tau: 2.0 }
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Whether communication is down at time `t`.
    pub fn is_active(&self, t: f64) -> bool {
        // intervals are sorted by start
        let idx = self.intervals.partition_point(|&(s, _)| s <= t);
        idx > 0 && {
            let (s, d) = self.intervals[idx - 1];
            t < s + d
        }
    }

    /// `|Ξ(t)|`: total outage time in `[0, t]`.
    pub fn measure(&self, t: f64) -> f64 {
        self.intervals.iter().take_while(|&&(s, _)| s < t).map(|&(s, d)| (s + d).min(t) - s).sum()
    }

    /// Checks the budget at every interval right endpoint, where
    /// `|Ξ(t)| − t/τ` attains its local maxima.
    pub fn validate(&self) -> BudgetCheck {
        let mut acc = 0.0;
        let mut worst = f64::NEG_INFINITY;
        let mut first = None;
        for &(s, d) in &self.intervals {
            acc += d;
            let end = s + d;
            let excess = acc - end / self.tau - self.kappa;
            worst = worst.max(excess);
            if first.is_none() && excess > BUDGET_TOLERANCE {
                first = Some(end);
            }
        }
        if self.intervals.is_empty() {
            worst = -self.kappa;
        }
        BudgetCheck { valid: first.is_none(), first_violation: first, worst_excess: worst }
    }

    /// Errors with [`Error::BudgetViolated`] if the budget is exceeded.
    pub fn ensure_valid(&self) -> Result<()> {
        match self.validate().first_violation {
            Some(t) => Err(Error::BudgetViolated { t }),
            None => Ok(()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Generation policy for [`generate_schedule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Longest admissible initial outage, then alternating minimal
    /// communication gaps and fixed-length outages.
    Greedy,
    /// Seeded random gaps and durations, kept only if the budget holds.
    Random,
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Policy::Greedy),
            "random" => Ok(Policy::Random),
            other => Err(Error::InvalidArgument(format!("unknown DoS policy '{other}'"))),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Greedy => "greedy",
            Policy::Random => "random",
        })
    }
}

/// Parameters for schedule generation; parsed from `kappa,tau,policy,seed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateSpec {
    pub kappa: f64,
    pub tau: f64,
    pub policy: Policy,
    pub seed: u64,
}

impl FromStr for GenerateSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() < 2 || parts.len() > 4 {
            return Err(Error::InvalidArgument(format!("expected kappa,tau[,policy[,seed]], got '{s}'")));
        }
        let num =
            |p: &str| p.parse::<f64>().map_err(|_| Error::InvalidArgument(format!("not a number: '{p}'")));
        Ok(Self {
            kappa: num(parts[0])?,
            tau: num(parts[1])?,
            policy: parts.get(2).map_or(Ok(Policy::Greedy), |p| p.parse())?,
            seed: parts.get(3).map_or(Ok(0), |p| {
                p.parse().map_err(|_| Error::InvalidArgument(format!("bad seed '{p}'")))
            })?,
        })
    }
}

/// Largest initial outage that keeps the budget tight at its end:
/// `Δ₀ = κτ/(τ−1)`.
pub fn initial_outage(kappa: f64, tau: f64) -> f64 {
    kappa * tau / (tau - 1.0)
}

/// Generates a schedule on `[0, t_end)` whose budget always validates.
pub fn generate_schedule(kappa: f64, tau: f64, t_end: f64, seed: u64, policy: Policy) -> Result<DosSchedule> {
    generate_schedule_with_outage(kappa, tau, t_end, seed, policy, DEFAULT_OUTAGE)
}

pub fn generate_schedule_with_outage(
    kappa: f64,
    tau: f64,
    t_end: f64,
    seed: u64,
    policy: Policy,
    outage: f64,
) -> Result<DosSchedule> {
    if !(kappa >= 0.0) || !(tau > 1.0) || !(t_end > 0.0) || !(outage > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need kappa >= 0, tau > 1, t_end > 0, outage > 0 (got {kappa}, {tau}, {t_end}, {outage})"
        )));
    }
    let intervals = match policy {
        Policy::Greedy => greedy(kappa, tau, t_end, outage),
        Policy::Random => random(kappa, tau, t_end, seed, outage),
    };
    let schedule = DosSchedule::new(intervals, kappa, tau)?;
    debug_assert!(schedule.validate().valid);
    Ok(schedule)
}

fn push_clipped(out: &mut Vec<(f64, f64)>, start: f64, dur: f64, t_end: f64) {
    let dur = dur.min(t_end - start);
    if dur > 0.0 {
        out.push((start, dur));
    }
}

fn greedy(kappa: f64, tau: f64, t_end: f64, outage: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut acc = 0.0;
    let mut t = 0.0;
    let first = initial_outage(kappa, tau);
    if first > 0.0 {
        push_clipped(&mut out, 0.0, first, t_end);
        acc = first;
        t = first;
    }
    while t < t_end {
        // smallest gap g with acc + outage ≤ κ + (t + g + outage)/τ
        let gap = (tau * (acc + outage - kappa) - t - outage).max(0.0);
        // strictly separate consecutive intervals
        let gap = if gap == 0.0 && !out.is_empty() { outage * 1e-3 } else { gap };
        let start = t + gap;
        if start >= t_end {
            break;
        }
        push_clipped(&mut out, start, outage, t_end);
        acc += outage;
        t = start + outage;
    }
    out
}

fn random(kappa: f64, tau: f64, t_end: f64, seed: u64, outage: f64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut acc = 0.0;
    let mut t = 0.0;
    while t < t_end {
        let gap = rng.gen_range(0.05..4.0) * outage;
        let dur = rng.gen_range(0.1..3.0) * outage;
        let start = t + gap;
        if start >= t_end {
            break;
        }
        let dur = dur.min(t_end - start);
        // accept only if the budget still holds at the new right endpoint
        if acc + dur - (start + dur) / tau - kappa <= 0.0 {
            out.push((start, dur));
            acc += dur;
            t = start + dur;
        } else {
            t = start;
        }
    }
    out
}
