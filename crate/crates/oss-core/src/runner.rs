//! Sample-level pipelines shared by the CLI commands and the acceptance
//! suite: per-sample search, schedule evaluation, brute-force verification,
//! and cross-method comparison.
//!
//! All randomness flows from the config seed through disjoint stream
//! namespaces, so results are identical regardless of worker count.

use crate::calib::{apply_calibration, CalibrationProfile};
use crate::config::RunConfig;
use crate::error::{OssError, Result};
use crate::field::{ProviderSpec, VelocityProvider};
use crate::metrics::psnr;
use crate::oracle::{exhaustive_search, ExhaustiveOutcome};
use crate::rng::{sample_noise, SAMPLE_STREAM_BASE, SEARCH_STREAM_BASE};
use crate::schedule::{teacher_grid, TimeGrid};
use crate::search::{average_schedules, dp_search, uniform_subset_indices, StudentSchedule};
use crate::solver::{multistep_step, rollout, run_schedule, StepHistory, Trajectory};

/// Teacher grid implied by a config.
pub fn config_grid(cfg: &RunConfig) -> Result<TimeGrid> {
    teacher_grid(&cfg.schedule, cfg.teacher_steps)
}

/// Run independent per-sample jobs over a worker pool, each worker holding
/// its own provider connection. Results keep sample order.
pub fn parallel_samples<T, F>(
    spec: &ProviderSpec,
    count: usize,
    workers: usize,
    job: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut dyn VelocityProvider, usize) -> Result<T> + Sync,
{
    let workers = workers.max(1).min(count.max(1));
    if workers <= 1 {
        let mut provider = spec.connect()?;
        return (0..count).map(|k| job(&mut *provider, k)).collect();
    }
    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(workers);
        for w in 0..workers {
            let job = &job;
            handles.push(scope.spawn(move || -> Result<Vec<(usize, T)>> {
                let mut provider = spec.connect()?;
                let mut out = Vec::new();
                let mut k = w;
                while k < count {
                    out.push((k, job(&mut *provider, k)?));
                    k += workers;
                }
                Ok(out)
            }));
        }
        let mut slots: Vec<Option<T>> = (0..count).map(|_| None).collect();
        for h in handles {
            let chunk = h
                .join()
                .map_err(|_| OssError::internal("worker thread panicked"))??;
            for (k, v) in chunk {
                slots[k] = Some(v);
            }
        }
        slots
            .into_iter()
            .map(|s| s.ok_or_else(|| OssError::internal("missing sample result")))
            .collect()
    })
}

/// One searched sample: its schedule, final DP cost, and PSNR against the
/// teacher endpoint.
#[derive(Debug, Clone)]
pub struct SearchSample {
    pub sample: usize,
    pub schedule: StudentSchedule,
    pub final_cost: f64,
    pub psnr: f64,
}

fn search_one(
    provider: &mut dyn VelocityProvider,
    grid: &TimeGrid,
    cfg: &RunConfig,
    sample: usize,
) -> Result<SearchSample> {
    let x = sample_noise(provider.dim(), cfg.seed, SEARCH_STREAM_BASE + sample as u64);
    let teacher = rollout(provider, grid, &x, cfg.solver_order)?;
    let (mut schedule, table) = dp_search(
        provider,
        &teacher,
        cfg.student_steps,
        cfg.metric,
        cfg.solver_order,
    )?;
    schedule.seed = cfg.seed;
    schedule.schedule = Some(cfg.schedule.clone());
    schedule.fingerprint = Some(cfg.teacher_fingerprint());
    let fidelity = psnr(table.final_state(), teacher.state(0), cfg.psnr_peak)?;
    Ok(SearchSample {
        sample,
        schedule,
        final_cost: table.final_cost(),
        psnr: fidelity,
    })
}

/// Output of the `search` command: per-sample results plus the optional
/// sample-averaged schedule.
#[derive(Debug, Clone)]
pub struct SearchRun {
    pub per_sample: Vec<SearchSample>,
    pub averaged: Option<StudentSchedule>,
}

impl SearchRun {
    /// The schedule the command writes to disk: the average when requested,
    /// the first sample's otherwise.
    pub fn primary_schedule(&self) -> &StudentSchedule {
        self.averaged
            .as_ref()
            .unwrap_or(&self.per_sample[0].schedule)
    }
}

pub fn run_search(cfg: &RunConfig, workers: usize) -> Result<SearchRun> {
    cfg.validate()?;
    let grid = config_grid(cfg)?;
    let per_sample = parallel_samples(&cfg.provider, cfg.samples, workers, |provider, k| {
        search_one(provider, &grid, cfg, k)
    })?;
    let averaged = if cfg.average {
        let schedules: Vec<StudentSchedule> =
            per_sample.iter().map(|s| s.schedule.clone()).collect();
        let mut avg = average_schedules(&schedules, &grid)?;
        avg.seed = cfg.seed;
        avg.schedule = Some(cfg.schedule.clone());
        avg.fingerprint = Some(cfg.teacher_fingerprint());
        Some(avg)
    } else {
        None
    };
    Ok(SearchRun {
        per_sample,
        averaged,
    })
}

/// Execute a fixed schedule from `x_start`, optionally recalibrating the
/// state after each step (before the next velocity query). Returns the final
/// state and the step positions where calibration skipped.
pub fn run_student_schedule(
    provider: &mut dyn VelocityProvider,
    grid: &TimeGrid,
    indices: &[usize],
    x_start: &[f64],
    order: usize,
    profile: Option<&CalibrationProfile>,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let Some(profile) = profile else {
        let (states, _) = run_schedule(provider, grid, indices, x_start, order)?;
        return Ok((states.into_iter().next_back().unwrap(), Vec::new()));
    };
    if profile.steps() != indices.len() {
        return Err(OssError::invalid(format!(
            "calibration profile covers {} positions but the schedule has {}",
            profile.steps(),
            indices.len()
        )));
    }
    let mut history = StepHistory::for_order(order);
    let mut state = x_start.to_vec();
    let mut skipped = Vec::new();
    for (p, pair) in indices.windows(2).enumerate() {
        let (t_from, t_to) = (grid.time(pair[0]), grid.time(pair[1]));
        let v = provider
            .velocity_batch(std::slice::from_ref(&state), &[t_from])?
            .pop()
            .ok_or_else(|| OssError::provider("provider returned an empty batch"))?;
        let out = multistep_step(&history, &state, &v, t_from, t_to, order)?;
        history.push(t_from, v);
        let calibrated = apply_calibration(profile, &out.state, p + 1)?;
        if calibrated.skipped {
            skipped.push(p + 1);
        }
        state = calibrated.state;
        if state.iter().any(|x| !x.is_finite()) {
            return Err(OssError::Numerical {
                step: p,
                reason: "state became non-finite while stepping".into(),
            });
        }
    }
    Ok((state, skipped))
}

/// One evaluated sample from the `sample` command.
#[derive(Debug, Clone)]
pub struct SampleRow {
    pub sample: usize,
    pub psnr: f64,
    pub psnr_uniform: Option<f64>,
    pub calib_skipped: Vec<usize>,
}

/// Evaluate a schedule on fresh noises: teacher rollout, student run
/// (optionally calibrated), and the naive uniform baseline when requested.
pub fn run_sampling(
    cfg: &RunConfig,
    schedule: &StudentSchedule,
    baseline: bool,
    profile: Option<&CalibrationProfile>,
    workers: usize,
) -> Result<Vec<SampleRow>> {
    cfg.validate()?;
    let grid = config_grid(cfg)?;
    if schedule.teacher_steps != grid.n() {
        return Err(OssError::invalid(format!(
            "schedule teacher_steps {} does not match config teacher_steps {}",
            schedule.teacher_steps,
            grid.n()
        )));
    }
    let uniform = if baseline {
        Some(uniform_subset_indices(grid.n(), schedule.student_steps)?)
    } else {
        None
    };
    parallel_samples(&cfg.provider, cfg.samples, workers, |provider, k| {
        let x = sample_noise(provider.dim(), cfg.seed, SAMPLE_STREAM_BASE + k as u64);
        let teacher = rollout(provider, &grid, &x, schedule.order)?;
        let (student_final, calib_skipped) = run_student_schedule(
            provider,
            &grid,
            &schedule.indices,
            &x,
            schedule.order,
            profile,
        )?;
        let fidelity = psnr(&student_final, teacher.state(0), cfg.psnr_peak)?;
        let psnr_uniform = match &uniform {
            Some(indices) => {
                let (final_state, _) =
                    run_student_schedule(provider, &grid, indices, &x, schedule.order, None)?;
                Some(psnr(&final_state, teacher.state(0), cfg.psnr_peak)?)
            }
            None => None,
        };
        Ok(SampleRow {
            sample: k,
            psnr: fidelity,
            psnr_uniform,
            calib_skipped,
        })
    })
}

/// DP-versus-oracle verdict for one instance.
#[derive(Debug, Clone)]
pub struct BruteCheckRow {
    pub sample: usize,
    pub dp_cost: f64,
    pub dp_indices: Vec<usize>,
    pub oracle: ExhaustiveOutcome,
    pub ratio: f64,
    pub equal: bool,
}

pub fn run_brute_check(cfg: &RunConfig, cap: u128, workers: usize) -> Result<Vec<BruteCheckRow>> {
    cfg.validate()?;
    let grid = config_grid(cfg)?;
    parallel_samples(&cfg.provider, cfg.samples, workers, |provider, k| {
        let x = sample_noise(provider.dim(), cfg.seed, SEARCH_STREAM_BASE + k as u64);
        let teacher = rollout(provider, &grid, &x, cfg.solver_order)?;
        let (schedule, table) = dp_search(
            provider,
            &teacher,
            cfg.student_steps,
            cfg.metric,
            cfg.solver_order,
        )?;
        let oracle = exhaustive_search(
            provider,
            &teacher,
            cfg.student_steps,
            cfg.metric,
            cfg.solver_order,
            cap,
        )?;
        let dp_cost = table.final_cost();
        let ratio = if oracle.best_cost == 0.0 {
            if dp_cost == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            dp_cost / oracle.best_cost
        };
        Ok(BruteCheckRow {
            sample: k,
            dp_cost,
            dp_indices: schedule.indices,
            equal: dp_cost == oracle.best_cost,
            oracle,
            ratio,
        })
    })
}

/// Paired comparison of OSS, the averaged schedule, and the uniform
/// baseline on the search noises.
#[derive(Debug, Clone)]
pub struct CompareOutcome {
    pub per_sample: Vec<CompareRow>,
    pub averaged: StudentSchedule,
    pub mean_psnr_oss: f64,
    pub mean_psnr_ave: f64,
    pub mean_psnr_uniform: f64,
}

#[derive(Debug, Clone)]
pub struct CompareRow {
    pub sample: usize,
    pub psnr_oss: f64,
    pub psnr_ave: f64,
    pub psnr_uniform: f64,
}

pub fn run_compare(cfg: &RunConfig, workers: usize) -> Result<CompareOutcome> {
    cfg.validate()?;
    let grid = config_grid(cfg)?;
    let search = run_search(cfg, workers)?;
    let schedules: Vec<StudentSchedule> = search
        .per_sample
        .iter()
        .map(|s| s.schedule.clone())
        .collect();
    let mut averaged = average_schedules(&schedules, &grid)?;
    averaged.seed = cfg.seed;
    averaged.schedule = Some(cfg.schedule.clone());
    averaged.fingerprint = Some(cfg.teacher_fingerprint());

    let uniform = uniform_subset_indices(grid.n(), cfg.student_steps)?;
    let rows = parallel_samples(&cfg.provider, cfg.samples, workers, |provider, k| {
        let x = sample_noise(provider.dim(), cfg.seed, SEARCH_STREAM_BASE + k as u64);
        let teacher = rollout(provider, &grid, &x, cfg.solver_order)?;
        let target = teacher.state(0);
        let (ave_final, _) = run_student_schedule(
            provider,
            &grid,
            &averaged.indices,
            &x,
            cfg.solver_order,
            None,
        )?;
        let (uni_final, _) =
            run_student_schedule(provider, &grid, &uniform, &x, cfg.solver_order, None)?;
        Ok(CompareRow {
            sample: k,
            psnr_oss: search.per_sample[k].psnr,
            psnr_ave: psnr(&ave_final, target, cfg.psnr_peak)?,
            psnr_uniform: psnr(&uni_final, target, cfg.psnr_peak)?,
        })
    })?;

    let mean = |f: &dyn Fn(&CompareRow) -> f64| -> f64 {
        rows.iter().map(f).sum::<f64>() / rows.len() as f64
    };
    Ok(CompareOutcome {
        mean_psnr_oss: mean(&|r| r.psnr_oss),
        mean_psnr_ave: mean(&|r| r.psnr_ave),
        mean_psnr_uniform: mean(&|r| r.psnr_uniform),
        per_sample: rows,
        averaged,
    })
}

/// Teacher trajectory for one search-stream sample; shared by commands that
/// need to reproduce a searched instance.
pub fn teacher_for_sample(
    provider: &mut dyn VelocityProvider,
    grid: &TimeGrid,
    cfg: &RunConfig,
    sample: usize,
) -> Result<Trajectory> {
    let x = sample_noise(provider.dim(), cfg.seed, SEARCH_STREAM_BASE + sample as u64);
    rollout(provider, grid, &x, cfg.solver_order)
}
