//! Online slip-state decisions from consecutive 30 ms windows.
//!
//! Output spike counts are averaged over the last `window_len` windows, a
//! class is decided only when it leads every other class by `margin`, and the
//! first decided Incipient followed by the first decided Gross mark the
//! detected onsets.

use std::fmt;

use thiserror::Error;

use crate::events::Trial;
use crate::label::SlipState;
use crate::preprocess::{bin_window, pooled_stream, PreprocessError, WINDOW_US};
use crate::scalar::Scalar;
use crate::snn::{forward_counts, ClassCounts, NetworkSpec, SnnError, Weights};

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("empty count sequence")]
    EmptySequence,
    #[error("no reports to summarise")]
    EmptyInput,
    #[error("invalid smoother: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Network(#[from] SnnError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmootherConfig<S> {
    pub window_len: usize,
    pub margin: S,
}

impl<S: Scalar> Default for SmootherConfig<S> {
    fn default() -> Self {
        Self {
            window_len: 4,
            margin: S::of(2.0),
        }
    }
}

impl<S: Scalar> SmootherConfig<S> {
    /// No smoothing and no margin: plain strict argmax per window.
    pub fn raw() -> Self {
        Self {
            window_len: 1,
            margin: S::zero(),
        }
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        if self.window_len == 0 {
            return Err(DetectError::InvalidConfig("window_len must be ≥ 1".into()));
        }
        if !(self.margin >= S::zero()) {
            return Err(DetectError::InvalidConfig("margin must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Decision {
    Undecided,
    Decided(SlipState),
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decision::Undecided => f.write_str("undecided"),
            Decision::Decided(s) => write!(f, "{s}"),
        }
    }
}

/// Prefix-window means: element `k` averages raw counts `max(0, k-w+1)..=k`.
pub fn smooth<S: Scalar>(
    counts: &[ClassCounts],
    config: &SmootherConfig<S>,
) -> Result<Vec<[S; 3]>, DetectError> {
    config.validate()?;
    if counts.is_empty() {
        return Err(DetectError::EmptySequence);
    }
    Ok((0..counts.len())
        .map(|k| {
            let lo = (k + 1).saturating_sub(config.window_len);
            let n = S::of((k + 1 - lo) as f64);
            let mut acc = [S::zero(); 3];
            for c in &counts[lo..=k] {
                for (a, &v) in acc.iter_mut().zip(&c.0) {
                    *a = *a + S::of(v as f64);
                }
            }
            acc.map(|a| a / n)
        })
        .collect())
}

/// Class `i` iff `s[i] ≥ s[j] + margin` and `s[i] > s[j]` for every `j ≠ i`.
pub fn decide<S: Scalar>(smoothed: &[S; 3], margin: S) -> Decision {
    for i in 0..3 {
        let wins = (0..3)
            .filter(|&j| j != i)
            .all(|j| smoothed[i] >= smoothed[j] + margin && smoothed[i] > smoothed[j]);
        if wins {
            return Decision::Decided(SlipState::from_index(i).unwrap());
        }
    }
    Decision::Undecided
}

/// Number of consecutive windows whose decisions differ, Undecided included.
pub fn count_flips(decisions: &[Decision]) -> usize {
    decisions.windows(2).filter(|p| p[0] != p[1]).count()
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowRow<S> {
    pub index: usize,
    pub t_end_us: u64,
    pub raw: ClassCounts,
    pub smoothed: [S; 3],
    pub decision: Decision,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionReport<S> {
    pub windows: Vec<WindowRow<S>>,
    pub detected_incipient_us: Option<u64>,
    pub detected_gross_us: Option<u64>,
    pub true_incipient_us: Option<u64>,
    pub true_gross_us: Option<u64>,
    /// Detected minus true incipient onset, ms; negative is early.
    pub latency_incipient_ms: Option<f64>,
    pub latency_gross_ms: Option<f64>,
}

fn delta_ms(detected: Option<u64>, truth: Option<u64>) -> Option<f64> {
    Some((detected? as f64 - truth? as f64) / 1000.0)
}

impl<S: Scalar> DetectionReport<S> {
    /// True gross onset minus detected incipient time, ms.
    pub fn lead_time_ms(&self) -> Option<f64> {
        delta_ms(self.true_gross_us, self.detected_incipient_us)
    }

    pub fn decisions(&self) -> Vec<Decision> {
        self.windows.iter().map(|w| w.decision).collect()
    }

    pub fn flips(&self) -> usize {
        count_flips(&self.decisions())
    }

    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("window_index,t_end_us,raw0,raw1,raw2,smooth0,smooth1,smooth2,decision\n");
        for w in &self.windows {
            s.push_str(&format!(
                "{},{},{},{},{},{:.4},{:.4},{:.4},{}\n",
                w.index,
                w.t_end_us,
                w.raw.0[0],
                w.raw.0[1],
                w.raw.0[2],
                w.smoothed[0].as_f64(),
                w.smoothed[1].as_f64(),
                w.smoothed[2].as_f64(),
                w.decision
            ));
        }
        s
    }
}

/// Runs the smoother and the incipient-then-gross state machine over
/// precomputed window counts. Window `k` ends at `(k + 1) · 30 ms`.
pub fn detect_counts<S: Scalar>(
    counts: &[ClassCounts],
    true_incipient_us: Option<u64>,
    true_gross_us: Option<u64>,
    config: &SmootherConfig<S>,
) -> Result<DetectionReport<S>, DetectError> {
    let smoothed = smooth(counts, config)?;
    let mut inc = None;
    let mut gross = None;
    let windows: Vec<WindowRow<S>> = counts
        .iter()
        .zip(smoothed)
        .enumerate()
        .map(|(k, (&raw, sm))| {
            let t_end_us = (k as u64 + 1) * WINDOW_US;
            let decision = decide(&sm, config.margin);
            match decision {
                Decision::Decided(SlipState::Incipient) if inc.is_none() => inc = Some(t_end_us),
                Decision::Decided(SlipState::Gross) if inc.is_some() && gross.is_none() => {
                    gross = Some(t_end_us)
                }
                _ => {}
            }
            WindowRow {
                index: k,
                t_end_us,
                raw,
                smoothed: sm,
                decision,
            }
        })
        .collect();
    Ok(DetectionReport {
        windows,
        detected_incipient_us: inc,
        detected_gross_us: gross,
        true_incipient_us,
        true_gross_us,
        latency_incipient_ms: delta_ms(inc, true_incipient_us),
        latency_gross_ms: delta_ms(gross, true_gross_us),
    })
}

/// Output class counts of every full consecutive 30 ms window from trial start.
pub fn window_counts<S: Scalar>(
    trial: &Trial,
    spec: &NetworkSpec<S>,
    w: &Weights<S>,
) -> Result<Vec<ClassCounts>, DetectError> {
    let pooled = pooled_stream(&trial.stream)?;
    let n = trial.end_us() / WINDOW_US;
    (0..n)
        .map(|k| {
            Ok(forward_counts(
                spec,
                w,
                &bin_window(&pooled, k * WINDOW_US),
            )?)
        })
        .collect()
}

pub fn detect_trial<S: Scalar>(
    trial: &Trial,
    spec: &NetworkSpec<S>,
    w: &Weights<S>,
    config: &SmootherConfig<S>,
) -> Result<DetectionReport<S>, DetectError> {
    let counts = window_counts(trial, spec, w)?;
    if counts.is_empty() {
        return Err(DetectError::EmptySequence);
    }
    detect_counts(
        &counts,
        trial.incipient_onset_us,
        trial.gross_onset_us,
        config,
    )
}

/// Mean and sample standard deviation (zero for a single value).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, sd, n })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencySummary {
    pub n: usize,
    pub incipient: Option<MeanSd>,
    pub gross: Option<MeanSd>,
    pub lead: Option<MeanSd>,
    pub min_lead_ms: Option<f64>,
    /// Reports lacking a detected incipient onset.
    pub missed_incipient: usize,
    /// Reports lacking a true or a detected gross onset.
    pub missing_gross: usize,
}

pub fn latency_stats<S: Scalar>(
    reports: &[DetectionReport<S>],
) -> Result<LatencySummary, DetectError> {
    if reports.is_empty() {
        return Err(DetectError::EmptyInput);
    }
    let inc: Vec<f64> = reports
        .iter()
        .filter_map(|r| r.latency_incipient_ms)
        .collect();
    let gross: Vec<f64> = reports.iter().filter_map(|r| r.latency_gross_ms).collect();
    let lead: Vec<f64> = reports.iter().filter_map(|r| r.lead_time_ms()).collect();
    Ok(LatencySummary {
        n: reports.len(),
        incipient: MeanSd::of(&inc),
        gross: MeanSd::of(&gross),
        min_lead_ms: lead.iter().cloned().reduce(f64::min),
        lead: MeanSd::of(&lead),
        missed_incipient: reports
            .iter()
            .filter(|r| r.detected_incipient_us.is_none())
            .count(),
        missing_gross: reports
            .iter()
            .filter(|r| r.latency_gross_ms.is_none())
            .count(),
    })
}

pub const SUMMARY_HEADER: &str = "condition,mean_latency_incipient_ms,sd_latency_incipient_ms,\
mean_latency_gross_ms,sd_latency_gross_ms,mean_lead_ms,min_lead_ms,n,missed_incipient,missing_gross";

impl LatencySummary {
    /// One summary CSV row; absent statistics are empty fields.
    pub fn csv_row(&self, condition: &str) -> String {
        let f = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.3}"));
        format!(
            "{condition},{},{},{},{},{},{},{},{},{}",
            f(self.incipient.map(|m| m.mean)),
            f(self.incipient.map(|m| m.sd)),
            f(self.gross.map(|m| m.mean)),
            f(self.gross.map(|m| m.sd)),
            f(self.lead.map(|m| m.mean)),
            f(self.min_lead_ms),
            self.n,
            self.missed_incipient,
            self.missing_gross
        )
    }
}
