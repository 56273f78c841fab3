//! Brute-force ground truth: enumerate every admissible student schedule at
//! small N, simulate each end-to-end with the same solver and cost code the
//! DP uses, and return the global argmin. Deliberately unpruned.

use crate::error::{OssError, Result};
use crate::field::VelocityProvider;
use crate::search::{final_target_cost, CostMetric, StudentSchedule};
use crate::solver::{run_schedule, Trajectory, MAX_ORDER};

/// Number of admissible M-step schedules over an N-step grid: C(N-1, M-1),
/// saturating at u128::MAX.
pub fn schedule_count(n: usize, m: usize) -> u128 {
    if m == 0 || m > n {
        return 0;
    }
    let (nn, kk) = ((n - 1) as u128, (m - 1) as u128);
    let kk = kk.min(nn - kk);
    let mut c: u128 = 1;
    for i in 0..kk {
        c = match c.checked_mul(nn - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    c
}

/// Default cap on simulated schedules.
pub const DEFAULT_CAP: u128 = 100_000;

/// Iterator over every strictly decreasing index sequence from N to 0 with
/// exactly M steps, in lexicographic order.
pub struct ScheduleEnumeration {
    n: usize,
    /// Interior indices, descending; None once exhausted.
    interior: Option<Vec<usize>>,
    started: bool,
}

/// Enumerate the feasible set `{s^M} ⊂ {t^N}`.
pub fn enumerate_schedules(n: usize, m: usize) -> Result<ScheduleEnumeration> {
    if m == 0 || m > n {
        return Err(OssError::invalid(format!(
            "enumeration needs 1 <= M <= N, got M={m}, N={n}"
        )));
    }
    // Smallest interior tuple: (M-1, M-2, ..., 1).
    let interior: Vec<usize> = (1..m).rev().collect();
    Ok(ScheduleEnumeration {
        n,
        interior: Some(interior),
        started: false,
    })
}

impl ScheduleEnumeration {
    fn emit(&self) -> Option<Vec<usize>> {
        let interior = self.interior.as_ref()?;
        let mut seq = Vec::with_capacity(interior.len() + 2);
        seq.push(self.n);
        seq.extend_from_slice(interior);
        seq.push(0);
        Some(seq)
    }

    fn advance(&mut self) {
        let Some(interior) = self.interior.as_mut() else {
            return;
        };
        let len = interior.len();
        if len == 0 {
            self.interior = None;
            return;
        }
        // Increment the rightmost position that still has headroom below its
        // left neighbor (or below N for the first), then refill the suffix
        // with the minimal descending tail.
        for k in (0..len).rev() {
            let bound = if k == 0 {
                self.n - 1
            } else {
                interior[k - 1] - 1
            };
            if interior[k] < bound {
                interior[k] += 1;
                for (q, slot) in interior.iter_mut().enumerate().skip(k + 1) {
                    *slot = len - q;
                }
                return;
            }
        }
        self.interior = None;
    }
}

impl Iterator for ScheduleEnumeration {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.started {
            self.advance();
        }
        self.started = true;
        self.emit()
    }
}

/// Result of the exhaustive search: the argmin schedule, its cost, and the
/// full cost list in enumeration order.
#[derive(Debug, Clone)]
pub struct ExhaustiveOutcome {
    pub best: StudentSchedule,
    pub best_cost: f64,
    pub all_costs: Vec<f64>,
    /// Position of the argmin within the enumeration.
    pub best_position: usize,
}

/// Simulate every admissible schedule end-to-end and return the global
/// argmin. Refuses (with the count) when C(N-1, M-1) exceeds `cap`.
pub fn exhaustive_search(
    provider: &mut dyn VelocityProvider,
    teacher: &Trajectory,
    m: usize,
    metric: CostMetric,
    order: usize,
    cap: u128,
) -> Result<ExhaustiveOutcome> {
    let n = teacher.n();
    if m == 0 || m > n {
        return Err(OssError::invalid(format!(
            "exhaustive search needs 1 <= M <= N, got M={m}, N={n}"
        )));
    }
    if order == 0 || order > MAX_ORDER {
        return Err(OssError::invalid(format!(
            "solver order must lie in 1..={MAX_ORDER}, got {order}"
        )));
    }
    let count = schedule_count(n, m);
    if count > cap {
        return Err(OssError::CapExceeded { count, cap });
    }

    let x_start = teacher.state(n).to_vec();
    let mut all_costs = Vec::with_capacity(count as usize);
    let mut best_cost = f64::INFINITY;
    let mut best_indices: Option<Vec<usize>> = None;
    let mut best_position = 0usize;
    for (pos, indices) in enumerate_schedules(n, m)?.enumerate() {
        let (states, _) = run_schedule(provider, &teacher.grid, &indices, &x_start, order)?;
        let cost = final_target_cost(metric, states.last().unwrap(), teacher)?;
        if cost < best_cost {
            best_cost = cost;
            best_indices = Some(indices.clone());
            best_position = pos;
        }
        all_costs.push(cost);
    }
    let best_indices =
        best_indices.ok_or_else(|| OssError::internal("no finite-cost schedule found"))?;
    let best = StudentSchedule::from_indices(&teacher.grid, best_indices, metric, order)?;
    Ok(ExhaustiveOutcome {
        best,
        best_cost,
        all_costs,
        best_position,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Result as OssResult;
    use crate::field::{GaussianMixture, MixtureComponent, VelocityProvider};
    use crate::schedule::uniform_grid;
    use crate::search::dp_search;
    use crate::solver::rollout;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::collections::HashSet;

    #[test]
    fn counts_match_binomials() {
        assert_eq!(schedule_count(10, 3), 36);
        assert_eq!(schedule_count(5, 5), 1);
        assert_eq!(schedule_count(5, 1), 1);
        assert_eq!(schedule_count(6, 2), 5);
        assert_eq!(schedule_count(5, 6), 0);
    }

    #[test]
    fn enumeration_is_exact_unique_and_lexicographic() {
        for (n, m) in [(10, 3), (5, 5), (5, 1), (8, 4), (6, 2)] {
            let seqs: Vec<Vec<usize>> = enumerate_schedules(n, m).unwrap().collect();
            assert_eq!(seqs.len() as u128, schedule_count(n, m), "N={n} M={m}");
            let unique: HashSet<_> = seqs.iter().cloned().collect();
            assert_eq!(unique.len(), seqs.len());
            for w in seqs.windows(2) {
                assert!(w[0] < w[1], "not lexicographic: {:?} >= {:?}", w[0], w[1]);
            }
            for s in &seqs {
                assert_eq!(s.len(), m + 1);
                assert_eq!(s[0], n);
                assert_eq!(*s.last().unwrap(), 0);
                assert!(s.windows(2).all(|w| w[0] > w[1]));
            }
        }
        assert!(enumerate_schedules(5, 0).is_err());
        assert!(enumerate_schedules(5, 6).is_err());
    }

    fn mixture(dim: usize, comps: usize, seed: u64) -> GaussianMixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts: Vec<MixtureComponent> = (0..comps)
            .map(|_| MixtureComponent {
                weight: 1.0 / comps as f64,
                mean: (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
                scale: rng.random_range(0.3..1.2),
            })
            .collect();
        GaussianMixture::new(dim, parts).unwrap()
    }

    fn noise(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..dim).map(|_| StandardNormal.sample(rng)).collect()
    }

    #[test]
    fn full_budget_finds_the_identity_schedule() {
        let mut mix = mixture(2, 3, 4);
        let grid = uniform_grid(5, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = noise(2, &mut rng);
        let teacher = rollout(&mut mix, &grid, &x, 1).unwrap();
        let out =
            exhaustive_search(&mut mix, &teacher, 5, CostMetric::XtMse, 1, DEFAULT_CAP).unwrap();
        assert_eq!(out.best.indices, vec![5, 4, 3, 2, 1, 0]);
        assert_eq!(out.best_cost, 0.0);
        assert_eq!(out.all_costs.len(), 1);
    }

    struct ConstField {
        dim: usize,
        c: f64,
    }

    impl VelocityProvider for ConstField {
        fn dim(&self) -> usize {
            self.dim
        }
        fn velocity_batch(
            &mut self,
            states: &[Vec<f64>],
            _times: &[f64],
        ) -> OssResult<Vec<Vec<f64>>> {
            Ok(states.iter().map(|_| vec![self.c; self.dim]).collect())
        }
    }

    #[test]
    fn constant_field_ties_every_schedule() {
        let mut field = ConstField { dim: 2, c: 0.8 };
        let grid = uniform_grid(8, 1.0).unwrap();
        let teacher = rollout(&mut field, &grid, &[1.0, -0.5], 1).unwrap();
        let out =
            exhaustive_search(&mut field, &teacher, 3, CostMetric::XtMse, 1, DEFAULT_CAP).unwrap();
        assert_eq!(out.all_costs.len() as u128, schedule_count(8, 3));
        let max = out.all_costs.iter().cloned().fold(0.0f64, f64::max);
        let min = out.all_costs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max - min <= 1e-12, "spread {}", max - min);
        assert_eq!(min, out.best_cost);
    }

    #[test]
    fn dp_matches_the_oracle_on_the_small_instance() {
        // N=6, M=2, 2-D three-component mixture, order 1, xt-mse: the DP must
        // reproduce the exhaustive argmin over the C(5,1)=5 schedules.
        let mut mix = mixture(2, 3, 11);
        let grid = uniform_grid(6, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = noise(2, &mut rng);
        let teacher = rollout(&mut mix, &grid, &x, 1).unwrap();
        let (sched, table) = dp_search(&mut mix, &teacher, 2, CostMetric::XtMse, 1).unwrap();
        let oracle =
            exhaustive_search(&mut mix, &teacher, 2, CostMetric::XtMse, 1, DEFAULT_CAP).unwrap();
        assert_eq!(oracle.all_costs.len(), 5);
        assert_eq!(sched.indices, oracle.best.indices);
        assert!((table.final_cost() - oracle.best_cost).abs() <= 1e-15);
    }

    #[test]
    fn oracle_never_loses_to_the_dp() {
        for seed in 0..8u64 {
            let mut mix = mixture(2, 3, 100 + seed);
            let grid = uniform_grid(9, 1.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let x = noise(2, &mut rng);
            let teacher = rollout(&mut mix, &grid, &x, 1).unwrap();
            let (_, table) = dp_search(&mut mix, &teacher, 3, CostMetric::XtMse, 1).unwrap();
            let oracle =
                exhaustive_search(&mut mix, &teacher, 3, CostMetric::XtMse, 1, DEFAULT_CAP)
                    .unwrap();
            assert!(
                oracle.best_cost <= table.final_cost() + 1e-18,
                "seed {seed}: oracle {} vs dp {}",
                oracle.best_cost,
                table.final_cost()
            );
            assert_eq!(
                oracle.best_cost,
                oracle
                    .all_costs
                    .iter()
                    .cloned()
                    .fold(f64::INFINITY, f64::min)
            );
        }
    }

    #[test]
    fn cap_refusal_reports_the_count() {
        let mut mix = mixture(2, 3, 1);
        let grid = uniform_grid(30, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = noise(2, &mut rng);
        let teacher = rollout(&mut mix, &grid, &x, 1).unwrap();
        let err =
            exhaustive_search(&mut mix, &teacher, 10, CostMetric::XtMse, 1, 1000).unwrap_err();
        match err {
            OssError::CapExceeded { count, cap } => {
                assert_eq!(count, schedule_count(30, 10));
                assert_eq!(cap, 1000);
            }
            other => panic!("unexpected error {other}"),
        }
    }
}
