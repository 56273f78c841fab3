//! One-step update rules and dense trajectory rollout.
//!
//! The high-order step extrapolates velocity with the Lagrange polynomial
//! through the current evaluation and the most recent history entries, then
//! integrates that polynomial exactly over the step (Adams–Bashforth style
//! in flow-matching time). Order 1 reduces to the plain Euler update.

use crate::error::{OssError, Result};
use crate::field::VelocityProvider;
use crate::schedule::TimeGrid;

/// Highest supported solver order.
pub const MAX_ORDER: usize = 3;

/// First-order update `x + v * (t_to - t_from)`.
pub fn euler_step(x: &[f64], v: &[f64], t_from: f64, t_to: f64) -> Result<Vec<f64>> {
    if !(t_to < t_from) {
        return Err(OssError::invalid(format!(
            "euler_step requires t_to < t_from, got {t_to} >= {t_from}"
        )));
    }
    if x.len() != v.len() {
        return Err(OssError::invalid(format!(
            "euler_step dimension mismatch: {} vs {}",
            x.len(),
            v.len()
        )));
    }
    let h = t_to - t_from;
    Ok(x.iter().zip(v).map(|(xi, vi)| xi + vi * h).collect())
}

/// Velocity history of one sampling chain, oldest entry first. Times are
/// strictly decreasing from oldest to newest because sampling runs 1 -> 0.
#[derive(Debug, Clone, Default)]
pub struct StepHistory {
    capacity: usize,
    entries: Vec<(f64, Vec<f64>)>,
}

impl StepHistory {
    pub fn new(capacity: usize) -> Self {
        StepHistory {
            capacity,
            entries: Vec::new(),
        }
    }

    /// History sized for a solver of the given order (capacity order - 1).
    pub fn for_order(order: usize) -> Self {
        StepHistory::new(order.saturating_sub(1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Append the latest (time, velocity); the oldest entry falls out once
    /// capacity is reached. A zero-capacity history stays empty.
    pub fn push(&mut self, time: f64, velocity: Vec<f64>) {
        if self.capacity == 0 {
            return;
        }
        debug_assert!(
            self.entries.last().is_none_or(|(t, _)| time < *t),
            "history times must decrease in sampling order"
        );
        if self.entries.len() == self.capacity {
            self.entries.remove(0);
        }
        self.entries.push((time, velocity));
    }

    /// Entries oldest-first.
    pub fn entries(&self) -> &[(f64, Vec<f64>)] {
        &self.entries
    }
}

/// Result of one multistep update.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    /// Order actually applied after the warm-up fallback.
    pub order_used: usize,
}

/// Exact integrals of the Lagrange basis polynomials over [a, b] for the
/// given interpolation nodes.
fn lagrange_integrals(nodes: &[f64], a: f64, b: f64) -> Vec<f64> {
    nodes
        .iter()
        .enumerate()
        .map(|(i, &ti)| {
            let mut coeffs = vec![1.0f64];
            let mut denom = 1.0;
            for (j, &tj) in nodes.iter().enumerate() {
                if j == i {
                    continue;
                }
                let mut next = vec![0.0; coeffs.len() + 1];
                for (k, &c) in coeffs.iter().enumerate() {
                    next[k] -= tj * c;
                    next[k + 1] += c;
                }
                coeffs = next;
                denom *= ti - tj;
            }
            let integral: f64 = coeffs
                .iter()
                .enumerate()
                .map(|(k, &c)| {
                    let p = k as i32 + 1;
                    c * (b.powi(p) - a.powi(p)) / f64::from(p)
                })
                .sum();
            integral / denom
        })
        .collect()
}

/// Multistep update of the requested order, falling back to the largest
/// feasible order while the history is still warming up.
pub fn multistep_step(
    history: &StepHistory,
    x: &[f64],
    v: &[f64],
    t_from: f64,
    t_to: f64,
    order: usize,
) -> Result<StepOutcome> {
    if order == 0 || order > MAX_ORDER {
        return Err(OssError::invalid(format!(
            "solver order must lie in 1..={MAX_ORDER}, got {order}"
        )));
    }
    if !(t_to < t_from) {
        return Err(OssError::invalid(format!(
            "multistep_step requires t_to < t_from, got {t_to} >= {t_from}"
        )));
    }
    if x.len() != v.len() {
        return Err(OssError::invalid(format!(
            "multistep_step dimension mismatch: {} vs {}",
            x.len(),
            v.len()
        )));
    }
    let order_used = order.min(1 + history.len());
    if order_used == 1 {
        return Ok(StepOutcome {
            state: euler_step(x, v, t_from, t_to)?,
            order_used: 1,
        });
    }

    let mut nodes = Vec::with_capacity(order_used);
    let mut values: Vec<&[f64]> = Vec::with_capacity(order_used);
    nodes.push(t_from);
    values.push(v);
    for (t, hv) in history.entries().iter().rev().take(order_used - 1) {
        nodes.push(*t);
        values.push(hv);
    }
    for i in 0..nodes.len() {
        for j in (i + 1)..nodes.len() {
            if nodes[i] == nodes[j] {
                return Err(OssError::invalid(format!(
                    "duplicate interpolation time {} in multistep history",
                    nodes[i]
                )));
            }
        }
    }

    let weights = lagrange_integrals(&nodes, t_from, t_to);
    let mut state = x.to_vec();
    for (w, vel) in weights.iter().zip(&values) {
        for (s, vi) in state.iter_mut().zip(*vel) {
            *s += w * vi;
        }
    }
    Ok(StepOutcome { state, order_used })
}

/// Teacher (or student) path: states aligned with the grid's times array,
/// so `states[0]` sits at t = 1 and `states[N]` at t = 0.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    /// Number of steps N.
    pub fn n(&self) -> usize {
        self.grid.n()
    }

    /// State at grid index `j` (index N = noise end, index 0 = data end).
    pub fn state(&self, index: usize) -> &[f64] {
        &self.states[self.n() - index]
    }

    pub fn is_finite(&self) -> bool {
        self.states.iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Walk a strictly decreasing index sequence over the grid with the
/// multistep solver, carrying the chain's own velocity history. Returns the
/// state at every schedule position (the start included) and the order used
/// on each step. One provider batch of size 1 per step.
///
/// This is the single stepping path shared by the dense teacher rollout,
/// student sampling, and the brute-force oracle.
pub fn run_schedule(
    provider: &mut dyn VelocityProvider,
    grid: &TimeGrid,
    indices: &[usize],
    x_start: &[f64],
    order: usize,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    if indices.len() < 2 || !indices.windows(2).all(|w| w[0] > w[1]) {
        return Err(OssError::invalid(
            "schedule indices must be strictly decreasing with at least one step",
        ));
    }
    if indices[0] > grid.n() {
        return Err(OssError::invalid(format!(
            "schedule starts at index {} but the grid has N={}",
            indices[0],
            grid.n()
        )));
    }
    if x_start.len() != provider.dim() {
        return Err(OssError::invalid(format!(
            "initial state dimension {} does not match provider dimension {}",
            x_start.len(),
            provider.dim()
        )));
    }
    if x_start.iter().any(|v| !v.is_finite()) {
        return Err(OssError::invalid("initial state must be finite"));
    }
    let mut states = Vec::with_capacity(indices.len());
    let mut orders = Vec::with_capacity(indices.len() - 1);
    let mut history = StepHistory::for_order(order);
    let mut state = x_start.to_vec();
    states.push(state.clone());
    for (p, pair) in indices.windows(2).enumerate() {
        let (t_from, t_to) = (grid.time(pair[0]), grid.time(pair[1]));
        let v = provider
            .velocity_batch(std::slice::from_ref(&state), &[t_from])?
            .pop()
            .ok_or_else(|| OssError::provider("provider returned an empty batch"))?;
        let out = multistep_step(&history, &state, &v, t_from, t_to, order)?;
        history.push(t_from, v);
        state = out.state;
        if state.iter().any(|x| !x.is_finite()) {
            return Err(OssError::Numerical {
                step: p,
                reason: "state became non-finite while stepping".into(),
            });
        }
        orders.push(out.order_used);
        states.push(state.clone());
    }
    Ok((states, orders))
}

/// Dense rollout from `times[0] = 1` down to `times[N] = 0`, one provider
/// batch (of size 1) per step.
pub fn rollout(
    provider: &mut dyn VelocityProvider,
    grid: &TimeGrid,
    x_noise: &[f64],
    order: usize,
) -> Result<Trajectory> {
    Ok(rollout_with_orders(provider, grid, x_noise, order)?.0)
}

/// [`rollout`] that also reports the order used on each step, so the
/// warm-up pattern is observable.
pub fn rollout_with_orders(
    provider: &mut dyn VelocityProvider,
    grid: &TimeGrid,
    x_noise: &[f64],
    order: usize,
) -> Result<(Trajectory, Vec<usize>)> {
    let full: Vec<usize> = (0..=grid.n()).rev().collect();
    let (states, orders) = run_schedule(provider, grid, &full, x_noise, order)?;
    Ok((
        Trajectory {
            grid: grid.clone(),
            states,
        },
        orders,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{GaussianMixture, VelocityProvider};
    use crate::schedule::uniform_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Time-only polynomial field v(x, t) = sum_k coeffs[k] t^k per coordinate.
    struct PolyField {
        dim: usize,
        coeffs: Vec<f64>,
    }

    impl PolyField {
        fn eval(&self, t: f64) -> f64 {
            self.coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
        }
    }

    impl VelocityProvider for PolyField {
        fn dim(&self) -> usize {
            self.dim
        }
        fn velocity_batch(&mut self, states: &[Vec<f64>], times: &[f64]) -> Result<Vec<Vec<f64>>> {
            Ok(states
                .iter()
                .zip(times)
                .map(|(_, &t)| vec![self.eval(t); self.dim])
                .collect())
        }
    }

    struct Counting<P> {
        inner: P,
        calls: usize,
        sizes: Vec<usize>,
    }

    impl<P: VelocityProvider> VelocityProvider for Counting<P> {
        fn dim(&self) -> usize {
            self.inner.dim()
        }
        fn velocity_batch(&mut self, states: &[Vec<f64>], times: &[f64]) -> Result<Vec<Vec<f64>>> {
            self.calls += 1;
            self.sizes.push(states.len());
            self.inner.velocity_batch(states, times)
        }
    }

    #[test]
    fn euler_examples() {
        assert_eq!(euler_step(&[0.0], &[1.0], 1.0, 0.5).unwrap(), vec![-0.5]);
        let x = [2.0, -3.0];
        assert_eq!(euler_step(&x, &[0.0, 0.0], 0.8, 0.1).unwrap(), x.to_vec());
        assert!(euler_step(&[0.0], &[1.0], 0.5, 0.5).is_err());
        assert!(euler_step(&[0.0], &[1.0], 0.5, 0.9).is_err());
    }

    #[test]
    fn multistep_order_one_is_bit_identical_to_euler() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let t_from: f64 = rng.random_range(0.5..1.0);
            let t_to: f64 = rng.random_range(0.0..0.4);
            let mut hist = StepHistory::for_order(3);
            hist.push(t_from + 0.1, v.clone());
            let out = multistep_step(&hist, &x, &v, t_from, t_to, 1).unwrap();
            assert_eq!(out.order_used, 1);
            assert_eq!(out.state, euler_step(&x, &v, t_from, t_to).unwrap());
        }
    }

    #[test]
    fn order_two_matches_euler_on_constant_field() {
        let x = vec![1.0, -2.0];
        let v = vec![0.7, 0.7];
        let mut hist = StepHistory::for_order(2);
        hist.push(0.75, v.clone());
        let out = multistep_step(&hist, &x, &v, 0.5, 0.25, 2).unwrap();
        assert_eq!(out.order_used, 2);
        let euler = euler_step(&x, &v, 0.5, 0.25).unwrap();
        for (a, b) in out.state.iter().zip(&euler) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn order_two_integrates_linear_field_exactly() {
        // v = a*t with a = 1: history v(0.75) = 0.75, current v(0.5) = 0.5,
        // step 0.5 -> 0.25; exact increment -0.09375.
        let mut hist = StepHistory::for_order(2);
        hist.push(0.75, vec![0.75]);
        let out = multistep_step(&hist, &[0.0], &[0.5], 0.5, 0.25, 2).unwrap();
        assert!((out.state[0] + 0.09375).abs() < 1e-15, "{}", out.state[0]);
    }

    #[test]
    fn order_three_integrates_quadratic_exactly() {
        // v = t^2, nodes at 0.9, 0.7, 0.5; integral over [0.5, 0.2] of t^2 is
        // (0.2^3 - 0.5^3)/3 = -0.039.
        let mut hist = StepHistory::for_order(3);
        hist.push(0.9, vec![0.81]);
        hist.push(0.7, vec![0.49]);
        let out = multistep_step(&hist, &[0.0], &[0.25], 0.5, 0.2, 3).unwrap();
        assert_eq!(out.order_used, 3);
        assert!((out.state[0] + 0.039).abs() < 1e-15, "{}", out.state[0]);
    }

    #[test]
    fn warm_up_falls_back_and_is_recorded() {
        let mut field = PolyField {
            dim: 1,
            coeffs: vec![0.3, 1.0, -0.5],
        };
        let grid = uniform_grid(6, 1.0).unwrap();
        let (_, orders) = rollout_with_orders(&mut field, &grid, &[0.4], 3).unwrap();
        assert_eq!(orders, vec![1, 2, 3, 3, 3, 3]);
    }

    #[test]
    fn duplicate_history_time_is_rejected() {
        let mut hist = StepHistory::new(2);
        hist.push(0.5, vec![1.0]);
        let err = multistep_step(&hist, &[0.0], &[1.0], 0.5, 0.25, 2).unwrap_err();
        assert!(matches!(err, OssError::InvalidArgument(_)), "{err}");
    }

    #[test]
    fn rollout_single_step_standard_normal_reaches_origin() {
        // v(x, 1) = x, so x[0] = x - x = 0.
        let mut mix = GaussianMixture::standard_normal(3);
        let grid = uniform_grid(1, 1.0).unwrap();
        let x = vec![1.5, -0.2, 0.7];
        let traj = rollout(&mut mix, &grid, &x, 1).unwrap();
        assert!(traj.state(0).iter().all(|v| v.abs() < 1e-15));
        assert_eq!(traj.state(1), &x[..]);
    }

    #[test]
    fn rollout_constant_field_telescopes() {
        let mut field = PolyField {
            dim: 2,
            coeffs: vec![0.8],
        };
        let grid = uniform_grid(17, 1.0).unwrap();
        let traj = rollout(&mut field, &grid, &[1.0, -1.0], 1).unwrap();
        for (got, want) in traj.state(0).iter().zip([0.2, -1.8]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rollout_makes_one_size_one_batch_per_step() {
        for order in 1..=3 {
            let mut counting = Counting {
                inner: GaussianMixture::standard_normal(2),
                calls: 0,
                sizes: vec![],
            };
            let grid = uniform_grid(9, 1.0).unwrap();
            rollout(&mut counting, &grid, &[0.3, 0.4], order).unwrap();
            assert_eq!(counting.calls, 9);
            assert!(counting.sizes.iter().all(|&s| s == 1));
        }
    }
}
