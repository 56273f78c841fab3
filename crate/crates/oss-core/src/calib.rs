//! Amplitude calibration: match the student state's 5%–95% quantile span to
//! the teacher's, per student step.

use serde::{Deserialize, Serialize};

use crate::error::{OssError, Result};
use crate::field::VelocityProvider;
use crate::rng::{sample_noise, CALIB_STREAM_BASE};
use crate::schedule::TimeGrid;
use crate::search::StudentSchedule;
use crate::solver::rollout;

pub const QUANTILE_LO: f64 = 0.05;
pub const QUANTILE_HI: f64 = 0.95;

/// Student spans below this are left unscaled (skip-with-warning).
pub const SKIP_EPS: f64 = 1e-9;

/// Difference between the `hi` and `lo` linear-interpolation quantiles over
/// the elements of `x`.
pub fn quantile_span(x: &[f64], lo: f64, hi: f64) -> Result<f64> {
    if x.len() < 2 {
        return Err(OssError::invalid(format!(
            "quantile_span needs at least 2 elements, got {}",
            x.len()
        )));
    }
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || !(lo < hi) {
        return Err(OssError::invalid(format!(
            "quantile_span needs 0 <= lo < hi <= 1, got ({lo}, {hi})"
        )));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| {
        a.partial_cmp(b)
            .expect("quantile_span input must not contain NaN")
    });
    let q = |p: f64| -> f64 {
        let pos = p * (sorted.len() - 1) as f64;
        let below = pos.floor() as usize;
        let above = pos.ceil() as usize;
        let frac = pos - below as f64;
        sorted[below] + frac * (sorted[above] - sorted[below])
    };
    Ok(q(hi) - q(lo))
}

/// Teacher quantile spans at each student time, averaged over a calibration
/// set. Serializes to
/// `{"times":[...],"spans":[...],"samples":K,"quantiles":[0.05,0.95]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub times: Vec<f64>,
    pub spans: Vec<f64>,
    pub samples: usize,
    pub quantiles: [f64; 2],
}

impl CalibrationProfile {
    pub fn new(
        times: Vec<f64>,
        spans: Vec<f64>,
        samples: usize,
        quantiles: [f64; 2],
    ) -> Result<Self> {
        if times.len() != spans.len() {
            return Err(OssError::invalid(format!(
                "profile has {} times but {} spans",
                times.len(),
                spans.len()
            )));
        }
        if spans.iter().any(|&s| !(s > 0.0)) {
            return Err(OssError::invalid("profile spans must all be > 0"));
        }
        Ok(CalibrationProfile {
            times,
            spans,
            samples,
            quantiles,
        })
    }

    pub fn steps(&self) -> usize {
        self.times.len()
    }
}

/// Roll out `k` seeded teacher trajectories (same solver order as the
/// student) and average the per-sample elementwise quantile span at each
/// student grid index.
pub fn build_profile(
    provider: &mut dyn VelocityProvider,
    grid: &TimeGrid,
    student: &StudentSchedule,
    k: usize,
    seed: u64,
) -> Result<CalibrationProfile> {
    if k == 0 {
        return Err(OssError::invalid(
            "calibration set must contain at least one sample",
        ));
    }
    if provider.dim() < 2 {
        return Err(OssError::invalid(
            "calibration needs state dimension >= 2 to form quantile spans",
        ));
    }
    if student.teacher_steps != grid.n() {
        return Err(OssError::invalid(format!(
            "schedule was searched on N={} but the grid has N={}",
            student.teacher_steps,
            grid.n()
        )));
    }
    let mut spans = vec![0.0f64; student.indices.len()];
    for sample in 0..k {
        let x = sample_noise(provider.dim(), seed, CALIB_STREAM_BASE + sample as u64);
        let teacher = rollout(provider, grid, &x, student.order)?;
        for (acc, &idx) in spans.iter_mut().zip(&student.indices) {
            *acc += quantile_span(teacher.state(idx), QUANTILE_LO, QUANTILE_HI)?;
        }
    }
    for s in &mut spans {
        *s /= k as f64;
    }
    CalibrationProfile::new(student.times.clone(), spans, k, [QUANTILE_LO, QUANTILE_HI])
}

/// Result of applying the calibration at one step.
#[derive(Debug, Clone)]
pub struct Calibrated {
    pub state: Vec<f64>,
    /// True when the student span was below [`SKIP_EPS`] and the state was
    /// returned unchanged.
    pub skipped: bool,
}

/// Scale `x` so its quantile span matches the profile span at `step`.
pub fn apply_calibration(
    profile: &CalibrationProfile,
    x: &[f64],
    step: usize,
) -> Result<Calibrated> {
    if step >= profile.steps() {
        return Err(OssError::invalid(format!(
            "calibration step {step} outside profile range 0..{}",
            profile.steps()
        )));
    }
    let span = quantile_span(x, profile.quantiles[0], profile.quantiles[1])?;
    if span < SKIP_EPS {
        return Ok(Calibrated {
            state: x.to_vec(),
            skipped: true,
        });
    }
    let scale = profile.spans[step] / span;
    Ok(Calibrated {
        state: x.iter().map(|v| v * scale).collect(),
        skipped: false,
    })
}
