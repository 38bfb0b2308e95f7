use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Piecewise-constant rate alternating between `low` and `high`.
///
/// Within each period, shifted right by `phase_shift`, the rate is `high`
/// for the first `high_fraction` of the period when `starts_high`, and for
/// the last `high_fraction` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SquareWave {
    pub low: f64,
    pub high: f64,
    pub period: f64,
    pub high_fraction: f64,
    #[serde(default)]
    pub phase_shift: f64,
    #[serde(default = "default_true")]
    pub starts_high: bool,
}

fn default_true() -> bool {
    true
}

impl SquareWave {
    pub fn constant(rate: f64, period: f64) -> Self {
        SquareWave {
            low: rate,
            high: rate,
            period,
            high_fraction: 0.5,
            phase_shift: 0.0,
            starts_high: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.low, self.high, self.period, self.high_fraction, self.phase_shift]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.low < 0.0 || self.high < 0.0 {
            return Err(Error::InvalidInput("square-wave rates must be finite and non-negative".into()));
        }
        if self.period <= 0.0 {
            return Err(Error::InvalidInput("square-wave period must be positive".into()));
        }
        if !(self.high_fraction > 0.0 && self.high_fraction < 1.0) {
            return Err(Error::InvalidInput("high_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Length of the segment that opens each period.
    fn first_len(&self) -> f64 {
        let f = if self.starts_high { self.high_fraction } else { 1.0 - self.high_fraction };
        f * self.period
    }

    /// Position of `t` inside its period and the period's start time.
    fn offset(&self, t: f64) -> (f64, f64) {
        let u = (t - self.phase_shift).rem_euclid(self.period);
        (u, t - u)
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        let (u, _) = self.offset(t);
        let in_first = u < self.first_len();
        if in_first == self.starts_high {
            self.high
        } else {
            self.low
        }
    }

    /// Earliest rate switch strictly after `t`.
    pub fn next_change(&self, t: f64) -> f64 {
        let (u, start) = self.offset(t);
        let first = self.first_len();
        let next = if u < first { start + first } else { start + self.period };
        if next > t {
            next
        } else {
            // Float rounding left us on the boundary itself.
            next + if u < first { self.period - first } else { first }
        }
    }

    pub fn mean_rate(&self) -> f64 {
        self.high * self.high_fraction + self.low * (1.0 - self.high_fraction)
    }
}

/// Arrival process of every job type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ArrivalSchedule {
    Fixed(Vec<f64>),
    SquareWave(Vec<SquareWave>),
}

impl ArrivalSchedule {
    pub fn k(&self) -> usize {
        match self {
            ArrivalSchedule::Fixed(l) => l.len(),
            ArrivalSchedule::SquareWave(w) => w.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ArrivalSchedule::Fixed(l) => {
                if l.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::InvalidInput("arrival rates must be finite and non-negative".into()));
                }
            }
            ArrivalSchedule::SquareWave(w) => {
                for wave in w {
                    wave.validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn rate(&self, job_type: usize, t: f64) -> f64 {
        match self {
            ArrivalSchedule::Fixed(l) => l[job_type],
            ArrivalSchedule::SquareWave(w) => w[job_type].rate_at(t),
        }
    }

    pub fn rates_at(&self, t: f64) -> Vec<f64> {
        (0..self.k()).map(|i| self.rate(i, t)).collect()
    }

    pub fn next_change(&self, job_type: usize, t: f64) -> f64 {
        match self {
            ArrivalSchedule::Fixed(_) => f64::INFINITY,
            ArrivalSchedule::SquareWave(w) => w[job_type].next_change(t),
        }
    }

    /// Longest wave period, or `None` for a fixed schedule.
    pub fn period(&self) -> Option<f64> {
        match self {
            ArrivalSchedule::Fixed(_) => None,
            ArrivalSchedule::SquareWave(w) => w.iter().map(|x| x.period).reduce(f64::max),
        }
    }

    /// Distinct rate vectors in force during `[0, horizon)` with the time of
    /// their first occurrence, in order of appearance.
    pub fn phases(&self, horizon: f64) -> Vec<(f64, Vec<f64>)> {
        let mut out: Vec<(f64, Vec<f64>)> = Vec::new();
        let mut t = 0.0;
        while t < horizon {
            let r = self.rates_at(t);
            if !out.iter().any(|(_, v)| *v == r) {
                out.push((t, r));
            }
            let next = (0..self.k()).map(|i| self.next_change(i, t)).fold(f64::INFINITY, f64::min);
            if !next.is_finite() {
                break;
            }
            t = next;
        }
        out
    }
}
