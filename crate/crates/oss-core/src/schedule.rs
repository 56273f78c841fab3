//! Noise schedules, teacher time grids, and the transforms that drive every
//! schedule family through one normalized flow-matching clock.
//!
//! All search-side code works in flow-matching time `t` (1 = pure noise,
//! 0 = data) under the interpolation `x_t = (1-t) x0 + t eps`. Native
//! schedules (VP-linear, EDM sigma) exist only at the velocity-provider
//! boundary; [`NoiseSchedule::snr_match`] and [`NoiseSchedule::align_input`]
//! are the bridge.

use serde::{Deserialize, Serialize};

use crate::error::{OssError, Result};

/// Timeshift map `t -> s*t / (1 + (s-1)*t)`. Identity at `s = 1`; the
/// endpoints 0 and 1 are fixed points.
pub fn shift_time(t: f64, shift: f64) -> f64 {
    shift * t / (1.0 + (shift - 1.0) * t)
}

/// Inverse of [`shift_time`]: returns `u` with `shift_time(u, s) = t`.
pub fn unshift_time(t: f64, shift: f64) -> f64 {
    t / (shift - (shift - 1.0) * t)
}

/// A named forward-process parameterization `x = alpha(t') x0 + beta(t') eps`
/// over its native clock `t'`.
///
/// The flat JSON form is `{"kind":"fm","shift":1.0}`,
/// `{"kind":"vp_linear","beta_min":0.1,"beta_max":20.0}` or
/// `{"kind":"edm","sigma_min":0.002,"sigma_max":80.0,"rho":7.0}`; omitted
/// fields take the defaults shown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum NoiseSchedule {
    /// Flow matching, optionally timeshifted: `alpha = 1 - s(t')`,
    /// `beta = s(t')` with `s` the shift map.
    #[serde(rename = "fm")]
    FlowMatching {
        #[serde(default = "default_shift")]
        shift: f64,
    },
    /// Continuous VP schedule with linear beta(t):
    /// `alpha(t') = exp(-t'^2 (beta_max-beta_min)/4 - t' beta_min/2)`,
    /// `beta(t') = sqrt(1 - alpha^2)`.
    #[serde(rename = "vp_linear")]
    VpLinear {
        #[serde(default = "default_beta_min")]
        beta_min: f64,
        #[serde(default = "default_beta_max")]
        beta_max: f64,
    },
    /// Variance-exploding sigma schedule: `alpha = 1`, `beta = sigma`, with
    /// the native clock being sigma itself.
    #[serde(rename = "edm")]
    Edm {
        #[serde(default = "default_sigma_min")]
        sigma_min: f64,
        #[serde(default = "default_sigma_max")]
        sigma_max: f64,
        #[serde(default = "default_rho")]
        rho: f64,
    },
}

fn default_shift() -> f64 {
    1.0
}
fn default_beta_min() -> f64 {
    0.1
}
fn default_beta_max() -> f64 {
    20.0
}
fn default_sigma_min() -> f64 {
    0.002
}
fn default_sigma_max() -> f64 {
    80.0
}
fn default_rho() -> f64 {
    7.0
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::FlowMatching { shift: 1.0 }
    }
}

impl NoiseSchedule {
    pub fn flow_matching(shift: f64) -> Result<Self> {
        let s = NoiseSchedule::FlowMatching { shift };
        s.validate()?;
        Ok(s)
    }

    pub fn vp_linear(beta_min: f64, beta_max: f64) -> Result<Self> {
        let s = NoiseSchedule::VpLinear { beta_min, beta_max };
        s.validate()?;
        Ok(s)
    }

    pub fn edm(sigma_min: f64, sigma_max: f64, rho: f64) -> Result<Self> {
        let s = NoiseSchedule::Edm {
            sigma_min,
            sigma_max,
            rho,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSchedule::FlowMatching { shift } => {
                if !(shift >= 1.0) {
                    return Err(OssError::invalid(format!(
                        "fm shift must be >= 1, got {shift}"
                    )));
                }
            }
            NoiseSchedule::VpLinear { beta_min, beta_max } => {
                if !(beta_min > 0.0 && beta_max > beta_min) {
                    return Err(OssError::invalid(format!(
                        "vp_linear needs 0 < beta_min < beta_max, got ({beta_min}, {beta_max})"
                    )));
                }
            }
            NoiseSchedule::Edm {
                sigma_min,
                sigma_max,
                rho,
            } => {
                if !(sigma_min > 0.0 && sigma_max > sigma_min) {
                    return Err(OssError::invalid(format!(
                        "edm needs 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})"
                    )));
                }
                if !(rho > 0.0) {
                    return Err(OssError::invalid(format!("edm rho must be > 0, got {rho}")));
                }
            }
        }
        Ok(())
    }

    /// Signal coefficient at native time `t'`.
    pub fn alpha(&self, tp: f64) -> f64 {
        match *self {
            NoiseSchedule::FlowMatching { shift } => 1.0 - shift_time(tp, shift),
            NoiseSchedule::VpLinear { beta_min, beta_max } => {
                (-0.25 * tp * tp * (beta_max - beta_min) - 0.5 * tp * beta_min).exp()
            }
            NoiseSchedule::Edm { .. } => 1.0,
        }
    }

    /// Noise coefficient at native time `t'`.
    pub fn beta(&self, tp: f64) -> f64 {
        match *self {
            NoiseSchedule::FlowMatching { shift } => shift_time(tp, shift),
            NoiseSchedule::VpLinear { .. } => {
                let a = self.alpha(tp);
                (1.0 - a * a).sqrt()
            }
            NoiseSchedule::Edm { .. } => tp,
        }
    }

    /// Signal-to-noise ratio `alpha^2 / beta^2` at native time `t'`.
    pub fn snr(&self, tp: f64) -> f64 {
        let a = self.alpha(tp);
        let b = self.beta(tp);
        (a * a) / (b * b)
    }

    /// Native time whose SNR matches flow-matching time `t`, i.e. the unique
    /// `t'` with `alpha(t')/beta(t') = (1-t)/t`. Closed form for every kind.
    ///
    /// Strict interior only; the endpoints map by convention through
    /// [`NoiseSchedule::native_time`].
    pub fn snr_match(&self, t: f64) -> Result<f64> {
        if !(t > 0.0 && t < 1.0) {
            return Err(OssError::domain(format!(
                "snr_match time {t} outside (0, 1); endpoints use the native endpoint convention"
            )));
        }
        Ok(match *self {
            NoiseSchedule::FlowMatching { shift } => unshift_time(t, shift),
            NoiseSchedule::VpLinear { beta_min, beta_max } => {
                // alpha^2/(1-alpha^2) = r^2 with r = (1-t)/t, so
                // alpha = (1-t)/sqrt(t^2 + (1-t)^2); then solve the quadratic
                // (beta_max-beta_min)/4 t'^2 + beta_min/2 t' + ln(alpha) = 0.
                let a_target = (1.0 - t) / (t * t + (1.0 - t) * (1.0 - t)).sqrt();
                let qa = 0.25 * (beta_max - beta_min);
                let qb = 0.5 * beta_min;
                let qc = a_target.ln();
                (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa)
            }
            NoiseSchedule::Edm { .. } => t / (1.0 - t),
        })
    }

    /// [`NoiseSchedule::snr_match`] extended to the closed interval by the
    /// endpoint convention: `t = 0` maps to the native data endpoint and
    /// `t = 1` to the native noise endpoint (the start of the native grid).
    pub fn native_time(&self, t: f64) -> Result<f64> {
        if t == 0.0 {
            return Ok(self.native_data_endpoint());
        }
        if t == 1.0 {
            return Ok(self.native_noise_endpoint());
        }
        self.snr_match(t)
    }

    fn native_data_endpoint(&self) -> f64 {
        0.0
    }

    fn native_noise_endpoint(&self) -> f64 {
        match *self {
            NoiseSchedule::FlowMatching { .. } | NoiseSchedule::VpLinear { .. } => 1.0,
            NoiseSchedule::Edm { sigma_max, .. } => sigma_max,
        }
    }

    /// Flow-matching time of a native time, via `t = beta / (alpha + beta)`.
    pub fn fm_time(&self, tp: f64) -> f64 {
        let a = self.alpha(tp);
        let b = self.beta(tp);
        b / (a + b)
    }

    /// Scale factor `alpha(t') / (1 - t)` carrying a flow-matching state into
    /// the native input scaling. Identity (exactly 1.0) for flow matching.
    pub fn align_factor(&self, t: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&t) {
            return Err(OssError::domain(format!(
                "align_factor time {t} outside [0, 1); t = 1 is the native noise endpoint"
            )));
        }
        match self {
            // alpha(t') = 1 - s(t') and s(snr_match(t)) = t identically.
            NoiseSchedule::FlowMatching { .. } => Ok(1.0),
            _ => Ok(self.alpha(self.native_time(t)?) / (1.0 - t)),
        }
    }

    /// Rescale a flow-matching state into the native input scaling at `t`.
    pub fn align_input(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let f = self.align_factor(t)?;
        Ok(x.iter().map(|v| v * f).collect())
    }
}

/// A strictly decreasing sequence of N+1 normalized flow-matching times,
/// `times[0] = 1.0` down to `times[N] = 0.0`.
///
/// Grid *indices* follow the sampling convention: index `N` is the noise end
/// (t = 1), index `0` the data end (t = 0), so index `j` lives at array
/// position `N - j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(OssError::invalid("time grid needs at least 2 points"));
        }
        if times[0] != 1.0 || *times.last().unwrap() != 0.0 {
            return Err(OssError::invalid(format!(
                "time grid must run from exactly 1.0 to exactly 0.0, got [{}, {}]",
                times[0],
                times.last().unwrap()
            )));
        }
        if !times.windows(2).all(|w| w[0] > w[1]) {
            return Err(OssError::invalid("time grid must be strictly decreasing"));
        }
        Ok(TimeGrid { times })
    }

    /// Number of steps N (one less than the number of grid points).
    pub fn n(&self) -> usize {
        self.times.len() - 1
    }

    /// Times in sampling order (decreasing from 1.0 to 0.0).
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Time at grid index `j` (index N = noise end, index 0 = data end).
    pub fn time(&self, index: usize) -> f64 {
        self.times[self.n() - index]
    }

    /// Grid index nearest in time to `t`; exact midpoints resolve to the
    /// lower index.
    pub fn nearest_index(&self, t: f64) -> usize {
        // First array position with times[p] <= t.
        let p = self.times.partition_point(|&x| x > t);
        if p == 0 {
            return self.n();
        }
        if p == self.times.len() {
            return 0;
        }
        let (above, below) = (self.times[p - 1], self.times[p]);
        if above - t < t - below {
            self.n() - (p - 1)
        } else {
            self.n() - p
        }
    }
}

/// Uniform grid `t_i = i/N` in decreasing order, optionally timeshifted on
/// the interior. `shift = 1` leaves the grid untouched; the endpoints stay
/// exactly 1.0 and 0.0 either way.
pub fn uniform_grid(n: usize, shift: f64) -> Result<TimeGrid> {
    if n == 0 {
        return Err(OssError::invalid("uniform_grid needs N >= 1"));
    }
    if !(shift >= 1.0) {
        return Err(OssError::invalid(format!(
            "uniform_grid shift must be >= 1, got {shift}"
        )));
    }
    let mut times = Vec::with_capacity(n + 1);
    times.push(1.0);
    for p in 1..n {
        let base = (n - p) as f64 / n as f64;
        times.push(if shift == 1.0 {
            base
        } else {
            shift_time(base, shift)
        });
    }
    times.push(0.0);
    TimeGrid::new(times)
}

/// Sigma grid `sigma_1 ... sigma_N` with `sigma_1 = sigma_min`,
/// `sigma_N = sigma_max`, interpolated in `sigma^(1/rho)` space.
///
/// `sigma_min = 0` is accepted here (the pure grid computation is well
/// defined); schedule construction separately requires a positive floor.
pub fn edm_sigma_grid(n: usize, sigma_min: f64, sigma_max: f64, rho: f64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(OssError::invalid("edm_sigma_grid needs N >= 2"));
    }
    if !(sigma_min >= 0.0 && sigma_max > sigma_min) {
        return Err(OssError::invalid(format!(
            "edm_sigma_grid needs 0 <= sigma_min < sigma_max, got ({sigma_min}, {sigma_max})"
        )));
    }
    if !(rho > 0.0) {
        return Err(OssError::invalid(format!(
            "edm_sigma_grid rho must be > 0, got {rho}"
        )));
    }
    let lo = sigma_min.powf(1.0 / rho);
    let hi = sigma_max.powf(1.0 / rho);
    Ok((1..=n)
        .map(|i| {
            // The endpoints are fixed points of the interpolation; keep them
            // exact instead of round-tripping through powf.
            if i == 1 {
                sigma_min
            } else if i == n {
                sigma_max
            } else {
                (lo + (i - 1) as f64 / (n - 1) as f64 * (hi - lo)).powf(rho)
            }
        })
        .collect())
}

/// Teacher grid of N steps for a schedule family, expressed in flow-matching
/// time. The native grid (uniform clock for FM/VP, the sigma grid for EDM)
/// is mapped through SNR matching; the native noise and data endpoints land
/// on exactly 1.0 and 0.0 by the endpoint convention.
pub fn teacher_grid(schedule: &NoiseSchedule, n: usize) -> Result<TimeGrid> {
    schedule.validate()?;
    if n == 0 {
        return Err(OssError::invalid("teacher_grid needs N >= 1"));
    }
    match *schedule {
        NoiseSchedule::FlowMatching { shift } => uniform_grid(n, shift),
        NoiseSchedule::VpLinear { .. } => {
            let mut times = Vec::with_capacity(n + 1);
            times.push(1.0);
            for p in 1..n {
                let tp = (n - p) as f64 / n as f64;
                times.push(schedule.fm_time(tp));
            }
            times.push(0.0);
            TimeGrid::new(times)
        }
        NoiseSchedule::Edm {
            sigma_min,
            sigma_max,
            rho,
        } => {
            if n < 2 {
                return Err(OssError::invalid("edm teacher grid needs N >= 2"));
            }
            let sigmas = edm_sigma_grid(n, sigma_min, sigma_max, rho)?;
            let mut times = Vec::with_capacity(n + 1);
            times.push(1.0);
            // Interior indices N-1 .. 1 carry sigma_{N-1} .. sigma_1; the final
            // step continues past sigma_min to the data endpoint.
            for p in 1..n {
                times.push(schedule.fm_time(sigmas[n - 1 - p]));
            }
            times.push(0.0);
            TimeGrid::new(times)
        }
    }
}
