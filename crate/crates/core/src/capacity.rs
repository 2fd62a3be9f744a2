//! Piecewise-constant CPU capacity traces.
//!
//! A server's computation capability `f(t)` is renewed at discrete update
//! times and held constant until the next one. Every quantity the simulator
//! needs from a trace (cycles served over an interval, the time needed to
//! serve a given amount of work, the energy spent doing so) is computed by
//! walking whole segments, so results are exact up to floating point rounding.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An amount of computation, in CPU cycles.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct WorkAmount(f64);

impl WorkAmount {
    pub const ZERO: WorkAmount = WorkAmount(0.0);

    pub fn new(cycles: f64) -> Result<Self> {
        if !(cycles >= 0.0) || !cycles.is_finite() {
            return Err(Error::invalid(format!(
                "work must be finite and >= 0, got {cycles}"
            )));
        }
        Ok(WorkAmount(cycles))
    }

    /// Clamps tiny negative rounding residue to zero.
    pub(crate) fn saturating(cycles: f64) -> Self {
        WorkAmount(cycles.max(0.0))
    }

    pub fn cycles(self) -> f64 {
        self.0
    }
}

/// Piecewise-constant capacity `f(t)` in cycles/second.
///
/// `values[i]` holds on `[times[i], times[i + 1])`; the final segment is open
/// ended. `times[0]` is always `0.0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityTrace {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl CapacityTrace {
    pub fn constant(capacity: f64) -> Result<Self> {
        Self::from_breakpoints(&[(0.0, capacity)])
    }

    /// Builds a trace from `(update_time, capacity)` pairs. The first update
    /// time must be zero and times must be strictly increasing.
    pub fn from_breakpoints(points: &[(f64, f64)]) -> Result<Self> {
        let Some(&(t0, _)) = points.first() else {
            return Err(Error::invalid(
                "capacity trace needs at least one breakpoint",
            ));
        };
        if t0 != 0.0 {
            return Err(Error::invalid(format!(
                "first update time must be 0, got {t0}"
            )));
        }
        let mut trace = CapacityTrace {
            times: Vec::with_capacity(points.len()),
            values: Vec::with_capacity(points.len()),
        };
        for &(t, f) in points {
            trace.push_segment(t, f)?;
        }
        Ok(trace)
    }

    /// Appends a new segment starting at `start`.
    pub fn push_segment(&mut self, start: f64, capacity: f64) -> Result<()> {
        if !(capacity > 0.0) || !capacity.is_finite() {
            return Err(Error::invalid(format!(
                "capacity must be finite and > 0, got {capacity}"
            )));
        }
        if !start.is_finite() {
            return Err(Error::invalid("update time must be finite"));
        }
        match self.times.last() {
            Some(&last) if start <= last => {
                return Err(Error::invalid(format!(
                    "update times must be strictly increasing ({start} after {last})"
                )))
            }
            None if start != 0.0 => {
                return Err(Error::invalid("first update time must be 0"));
            }
            _ => {}
        }
        self.times.push(start);
        self.values.push(capacity);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Start time of the last (open-ended) segment.
    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("trace is never empty")
    }

    pub fn breakpoints(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.values.iter().copied())
    }

    /// Index of the segment containing `t` (right-continuous).
    fn segment_index(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t).saturating_sub(1)
    }

    fn segment_end(&self, i: usize) -> f64 {
        self.times.get(i + 1).copied().unwrap_or(f64::INFINITY)
    }

    pub fn lookup(&self, t: f64) -> f64 {
        self.values[self.segment_index(t)]
    }

    /// Cycles served on `[t0, t1]`, i.e. the integral of `f` over the interval.
    pub fn cycles_between(&self, t0: f64, t1: f64) -> Result<WorkAmount> {
        if !(t0 >= 0.0) || !(t1 >= t0) {
            return Err(Error::invalid(format!(
                "need 0 <= t0 <= t1, got [{t0}, {t1}]"
            )));
        }
        let mut i = self.segment_index(t0);
        let mut t = t0;
        let mut total = 0.0;
        while t < t1 {
            let end = self.segment_end(i).min(t1);
            total += self.values[i] * (end - t);
            t = end;
            i += 1;
        }
        Ok(WorkAmount(total))
    }

    /// Smallest `d >= 0` such that `cycles_between(t_start, t_start + d) == work`.
    pub fn time_to_complete(&self, t_start: f64, work: WorkAmount) -> f64 {
        self.walk(t_start, work, |_, _| {}).0
    }

    /// Energy `kappa * f^3` integrated over the window in which `work` is
    /// served starting at `t_start`. On a segment that serves `c` cycles at
    /// capacity `f` this is `kappa * f^2 * c`.
    pub fn computation_energy(&self, t_start: f64, work: WorkAmount, kappa: f64) -> Result<f64> {
        check_kappa(kappa)?;
        let mut energy = 0.0;
        self.walk(t_start, work, |f, cycles| energy += kappa * f * f * cycles);
        Ok(energy)
    }

    /// Serves `work` from `t_start`, calling `visit(capacity, cycles)` for
    /// each segment touched. Returns the elapsed duration.
    fn walk(
        &self,
        t_start: f64,
        work: WorkAmount,
        mut visit: impl FnMut(f64, f64),
    ) -> (f64, usize) {
        let mut remaining = work.cycles();
        if remaining <= 0.0 {
            return (0.0, self.segment_index(t_start));
        }
        let mut i = self.segment_index(t_start);
        let mut t = t_start;
        loop {
            let f = self.values[i];
            let end = self.segment_end(i);
            let available = f * (end - t);
            if available >= remaining {
                visit(f, remaining);
                return ((t - t_start) + remaining / f, i);
            }
            visit(f, available);
            remaining -= available;
            t = end;
            i += 1;
        }
    }

    /// Current and past capacities at `t`, newest first, padded with the
    /// earliest value when fewer than `window` updates have happened.
    pub fn history(&self, t: f64, window: usize) -> Vec<f64> {
        let i = self.segment_index(t);
        (0..window)
            .map(|back| self.values[i.saturating_sub(back)])
            .collect()
    }

    /// Two-column text: `time_s capacity_cycles_per_s`, one breakpoint per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (t, f) in self.breakpoints() {
            out.push_str(&format!("{t} {f}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty());
            let parse = |s: Option<&str>| -> Result<f64> {
                s.ok_or_else(|| Error::Parse(format!("line {}: expected two columns", lineno + 1)))?
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
            };
            let t = parse(cols.next())?;
            let f = parse(cols.next())?;
            if cols.next().is_some() {
                return Err(Error::Parse(format!(
                    "line {}: expected two columns",
                    lineno + 1
                )));
            }
            points.push((t, f));
        }
        Self::from_breakpoints(&points)
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::invalid(format!(
            "kappa must be finite and >= 0, got {kappa}"
        )));
    }
    Ok(())
}

/// Energy of computing `work` locally at a fixed capability: `kappa * f^2 * work`.
pub fn local_energy(f_user: f64, work: WorkAmount, kappa: f64) -> Result<f64> {
    if !(f_user > 0.0) || !f_user.is_finite() {
        return Err(Error::invalid(format!(
            "user capability must be > 0, got {f_user}"
        )));
    }
    check_kappa(kappa)?;
    Ok(kappa * f_user * f_user * work.cycles())
}

/// Distribution of the spacing between capacity updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmentModel {
    Exponential { mean_s: f64 },
    Fixed { length_s: f64 },
}

impl Default for SegmentModel {
    fn default() -> Self {
        SegmentModel::Exponential { mean_s: 1.0 }
    }
}

impl SegmentModel {
    pub fn validate(&self) -> Result<()> {
        let v = match *self {
            SegmentModel::Exponential { mean_s } => mean_s,
            SegmentModel::Fixed { length_s } => length_s,
        };
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::invalid(format!(
                "segment length parameter must be > 0, got {v}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct TraceGenerator {
    f_min: f64,
    f_max: f64,
    model: SegmentModel,
    rng: ChaCha8Rng,
}

impl TraceGenerator {
    fn capacity(&mut self) -> f64 {
        if self.f_min == self.f_max {
            self.f_min
        } else {
            self.rng.random_range(self.f_min..=self.f_max)
        }
    }

    fn segment_length(&mut self) -> f64 {
        match self.model {
            SegmentModel::Exponential { mean_s } => {
                let exp = Exp::new(1.0 / mean_s).expect("validated mean");
                // zero-length segments would break strict monotonicity
                exp.sample(&mut self.rng).max(1e-9)
            }
            SegmentModel::Fixed { length_s } => length_s,
        }
    }
}

/// A capacity trace that appends randomly drawn segments on demand, so any
/// query time is covered. Cloning it also clones the generator state, which
/// makes the clone's future identical to the original's.
#[derive(Debug, Clone)]
pub struct GrowingTrace {
    trace: CapacityTrace,
    generator: Option<TraceGenerator>,
}

impl From<CapacityTrace> for GrowingTrace {
    fn from(trace: CapacityTrace) -> Self {
        GrowingTrace {
            trace,
            generator: None,
        }
    }
}

/// Draws a trace with capacities uniform in `[f_min, f_max]` and segment
/// lengths from `model`. A degenerate range yields a constant trace.
pub fn generate_trace(
    f_min: f64,
    f_max: f64,
    model: SegmentModel,
    mut rng: ChaCha8Rng,
) -> Result<GrowingTrace> {
    if !(f_min > 0.0) || !(f_max >= f_min) || !f_max.is_finite() {
        return Err(Error::invalid(format!(
            "capacity range must satisfy 0 < f_min <= f_max, got [{f_min}, {f_max}]"
        )));
    }
    model.validate()?;
    if f_min == f_max {
        return Ok(CapacityTrace::constant(f_min)?.into());
    }
    let first = rng.random_range(f_min..=f_max);
    Ok(GrowingTrace {
        trace: CapacityTrace::constant(first)?,
        generator: Some(TraceGenerator {
            f_min,
            f_max,
            model,
            rng,
        }),
    })
}

impl GrowingTrace {
    pub fn trace(&self) -> &CapacityTrace {
        &self.trace
    }

    pub fn into_trace(self) -> CapacityTrace {
        self.trace
    }

    fn extend_once(&mut self) -> bool {
        let Some(generator) = self.generator.as_mut() else {
            return false;
        };
        let start = self.trace.horizon() + generator.segment_length();
        let f = generator.capacity();
        self.trace
            .push_segment(start, f)
            .expect("generator produces valid segments");
        true
    }

    /// Makes sure the segment containing `t` is closed, i.e. its capacity is
    /// final and later queries cannot change it.
    pub fn ensure_until(&mut self, t: f64) {
        while self.trace.horizon() <= t {
            if !self.extend_once() {
                break;
            }
        }
    }

    pub fn lookup(&mut self, t: f64) -> f64 {
        self.ensure_until(t);
        self.trace.lookup(t)
    }

    pub fn history(&mut self, t: f64, window: usize) -> Vec<f64> {
        self.ensure_until(t);
        self.trace.history(t, window)
    }

    pub fn cycles_between(&mut self, t0: f64, t1: f64) -> Result<WorkAmount> {
        self.ensure_until(t1);
        self.trace.cycles_between(t0, t1)
    }

    /// Extends the trace until `work` finishes before the open-ended last segment.
    fn cover_work(&mut self, t_start: f64, work: WorkAmount) {
        self.ensure_until(t_start);
        while self.generator.is_some() {
            let d = self.trace.time_to_complete(t_start, work);
            if t_start + d <= self.trace.horizon() {
                break;
            }
            self.extend_once();
        }
    }

    pub fn time_to_complete(&mut self, t_start: f64, work: WorkAmount) -> f64 {
        self.cover_work(t_start, work);
        self.trace.time_to_complete(t_start, work)
    }

    pub fn computation_energy(
        &mut self,
        t_start: f64,
        work: WorkAmount,
        kappa: f64,
    ) -> Result<f64> {
        self.cover_work(t_start, work);
        self.trace.computation_energy(t_start, work, kappa)
    }
}
