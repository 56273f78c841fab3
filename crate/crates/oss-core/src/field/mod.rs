//! Velocity-field providers.
//!
//! Two backends sit behind [`VelocityProvider`]: the analytic
//! Gaussian-mixture field (ground truth for every test) and a subprocess
//! speaking the newline-delimited JSON protocol in [`protocol`]. The search
//! never learns which backend it queries.

mod exec;
mod mixture;
pub mod protocol;

pub use exec::ExecProvider;
pub use mixture::{mixture_velocity, standard_normal_slope, GaussianMixture, MixtureComponent};

use serde::{Deserialize, Serialize};

use crate::error::{OssError, Result};

/// Batched velocity evaluation at flow-matching times.
///
/// The analytic backend is pure and reentrant; the subprocess backend allows
/// one in-flight batch per connection, so concurrent workers each open their
/// own connection via [`ProviderSpec::connect`].
pub trait VelocityProvider {
    fn dim(&self) -> usize;

    /// Velocities for `(states[i], times[i])` pairs, order preserved.
    /// Must behave elementwise: equal to one call per pair.
    fn velocity_batch(&mut self, states: &[Vec<f64>], times: &[f64]) -> Result<Vec<Vec<f64>>>;
}

impl<P: VelocityProvider + ?Sized> VelocityProvider for Box<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn velocity_batch(&mut self, states: &[Vec<f64>], times: &[f64]) -> Result<Vec<Vec<f64>>> {
        (**self).velocity_batch(states, times)
    }
}

pub(crate) fn check_batch_args(dim: usize, states: &[Vec<f64>], times: &[f64]) -> Result<()> {
    if states.len() != times.len() {
        return Err(OssError::invalid(format!(
            "batch length mismatch: {} states vs {} times",
            states.len(),
            times.len()
        )));
    }
    for (i, s) in states.iter().enumerate() {
        if s.len() != dim {
            return Err(OssError::invalid(format!(
                "state {i} has dimension {} but provider expects {dim}",
                s.len()
            )));
        }
    }
    Ok(())
}

/// Provider selection as it appears in the CLI config:
/// `{"kind":"mixture","spec":{...}}` or
/// `{"kind":"exec","command":"...","dim":D}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ProviderSpec {
    #[serde(rename = "mixture")]
    Mixture { spec: GaussianMixture },
    #[serde(rename = "exec")]
    Exec { command: String, dim: usize },
}

impl ProviderSpec {
    pub fn dim(&self) -> usize {
        match self {
            ProviderSpec::Mixture { spec } => spec.dim(),
            ProviderSpec::Exec { dim, .. } => *dim,
        }
    }

    /// Open a fresh connection. Each worker needs its own: the exec backend
    /// serializes batches per connection.
    pub fn connect(&self) -> Result<Box<dyn VelocityProvider>> {
        match self {
            ProviderSpec::Mixture { spec } => Ok(Box::new(spec.clone())),
            ProviderSpec::Exec { command, dim } => {
                Ok(Box::new(ExecProvider::spawn(command, *dim)?))
            }
        }
    }
}
