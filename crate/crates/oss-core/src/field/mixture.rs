//! Analytic conditional velocity of an isotropic Gaussian mixture under the
//! flow-matching interpolation `x_t = (1-t) x0 + t eps`.

use serde::{Deserialize, Serialize};

use crate::error::{OssError, Result};
use crate::field::{check_batch_args, VelocityProvider};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Isotropic standard deviation.
    pub scale: f64,
}

/// Isotropic Gaussian mixture standing in for the data distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixture")]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<MixtureComponent>,
}

#[derive(Deserialize)]
struct RawMixture {
    dim: usize,
    components: Vec<MixtureComponent>,
}

impl TryFrom<RawMixture> for GaussianMixture {
    type Error = OssError;

    fn try_from(raw: RawMixture) -> Result<Self> {
        GaussianMixture::new(raw.dim, raw.components)
    }
}

impl GaussianMixture {
    pub fn new(dim: usize, components: Vec<MixtureComponent>) -> Result<Self> {
        if dim == 0 {
            return Err(OssError::invalid("mixture dimension must be >= 1"));
        }
        if components.is_empty() {
            return Err(OssError::invalid("mixture needs at least one component"));
        }
        let mut total = 0.0;
        for (k, c) in components.iter().enumerate() {
            if !(c.weight > 0.0) {
                return Err(OssError::invalid(format!(
                    "component {k} weight must be > 0, got {}",
                    c.weight
                )));
            }
            if !(c.scale > 0.0) {
                return Err(OssError::invalid(format!(
                    "component {k} scale must be > 0, got {}",
                    c.scale
                )));
            }
            if c.mean.len() != dim {
                return Err(OssError::invalid(format!(
                    "component {k} mean has dimension {}, expected {dim}",
                    c.mean.len()
                )));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(OssError::invalid(format!(
                "component weights must sum to 1 within 1e-12, got {total}"
            )));
        }
        Ok(GaussianMixture { dim, components })
    }

    /// Single standard normal in `dim` dimensions.
    pub fn standard_normal(dim: usize) -> Self {
        GaussianMixture::new(
            dim,
            vec![MixtureComponent {
                weight: 1.0,
                mean: vec![0.0; dim],
                scale: 1.0,
            }],
        )
        .expect("standard normal is always valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }
}

/// Posterior component responsibilities of `x` at time `t`, in log-space so
/// states dozens of standard deviations out stay finite.
fn responsibilities(mix: &GaussianMixture, x: &[f64], t: f64) -> Vec<f64> {
    let one_t = 1.0 - t;
    let mut logs = Vec::with_capacity(mix.components.len());
    for c in &mix.components {
        // x_t | k ~ N((1-t) mu_k, ((1-t)^2 s_k^2 + t^2) I)
        let var = one_t * one_t * c.scale * c.scale + t * t;
        let sq: f64 = x
            .iter()
            .zip(&c.mean)
            .map(|(xi, mi)| {
                let d = xi - one_t * mi;
                d * d
            })
            .sum();
        logs.push(c.weight.ln() - 0.5 * (mix.dim as f64) * var.ln() - sq / (2.0 * var));
    }
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    weights
}

/// Exact posterior-weighted flow-matching velocity `E[eps - x0 | x_t = x]`.
///
/// Per component, Gaussian conditioning gives
/// `E[x0|x,k] = mu_k + (1-t) s_k^2 / c_k (x - (1-t) mu_k)` and
/// `E[eps|x,k] = t / c_k (x - (1-t) mu_k)` with `c_k = (1-t)^2 s_k^2 + t^2`.
pub fn mixture_velocity(mix: &GaussianMixture, x: &[f64], t: f64) -> Result<Vec<f64>> {
    if x.len() != mix.dim {
        return Err(OssError::invalid(format!(
            "state dimension {} does not match mixture dimension {}",
            x.len(),
            mix.dim
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(OssError::domain(format!(
            "mixture_velocity time {t} outside [0, 1]"
        )));
    }
    let resp = responsibilities(mix, x, t);
    let one_t = 1.0 - t;
    let mut v = vec![0.0; mix.dim];
    for (r, c) in resp.iter().zip(&mix.components) {
        let var = one_t * one_t * c.scale * c.scale + t * t;
        // eps - x0 = (t - (1-t) s^2)/c (x - (1-t) mu) - mu
        let slope = (t - one_t * c.scale * c.scale) / var;
        for ((vi, xi), mi) in v.iter_mut().zip(x).zip(&c.mean) {
            *vi += r * (slope * (xi - one_t * mi) - mi);
        }
    }
    Ok(v)
}

impl VelocityProvider for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity_batch(&mut self, states: &[Vec<f64>], times: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_batch_args(self.dim, states, times)?;
        states
            .iter()
            .zip(times)
            .map(|(x, &t)| mixture_velocity(self, x, t))
            .collect()
    }
}

/// Closed-form velocity slope for the single standard normal:
/// `v(x, t) = (2t - 1) / ((1-t)^2 + t^2) * x`.
pub fn standard_normal_slope(t: f64) -> f64 {
    (2.0 * t - 1.0) / ((1.0 - t) * (1.0 - t) + t * t)
}
