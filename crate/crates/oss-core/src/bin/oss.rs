//! CLI for teacher-distilled stepsize schedules: search, sample, verify
//! against the brute-force oracle, calibrate amplitudes, and compare
//! methods. Emits JSON/CSV for downstream plotting.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use oss_core::calib::{build_profile, CalibrationProfile};
use oss_core::config::RunConfig;
use oss_core::field::{protocol, ProviderSpec};
use oss_core::oracle::{enumerate_schedules, DEFAULT_CAP};
use oss_core::runner::{config_grid, run_brute_check, run_compare, run_sampling, run_search};
use oss_core::search::{CostMetric, StudentSchedule};

#[derive(Parser)]
#[command(
    name = "oss",
    about = "Optimal stepsize schedules for diffusion/flow ODE sampling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Config file (JSON); flags below override its fields.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    teacher_steps: Option<usize>,
    #[arg(long)]
    student_steps: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// "xt-mse" or "x0-mse".
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    psnr_peak: Option<f64>,
    /// Worker threads; the OSS_WORKERS env var wins over this flag.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

impl Overrides {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(n) = self.teacher_steps {
            cfg.teacher_steps = n;
        }
        if let Some(m) = self.student_steps {
            cfg.student_steps = m;
        }
        if let Some(k) = self.samples {
            cfg.samples = k;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(metric) = &self.metric {
            cfg.metric = match metric.as_str() {
                "xt-mse" => CostMetric::XtMse,
                "x0-mse" => CostMetric::X0Mse,
                other => bail!("unknown metric {other:?}; use xt-mse or x0-mse"),
            };
        }
        if let Some(o) = self.order {
            cfg.solver_order = o;
        }
        if let Some(p) = self.psnr_peak {
            cfg.psnr_peak = p;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn workers(&self) -> usize {
        std::env::var("OSS_WORKERS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&w| w >= 1)
            .unwrap_or(self.workers)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Search per-sample optimal schedules; write the schedule JSON and a
    /// per-sample CSV.
    Search {
        #[command(flatten)]
        common: Overrides,
        /// Average the per-sample schedules into one.
        #[arg(long)]
        average: bool,
        /// Schedule JSON output path.
        #[arg(long, default_value = "schedule.json")]
        out: PathBuf,
        /// Per-sample CSV output path.
        #[arg(long, default_value = "search_samples.csv")]
        csv: PathBuf,
    },
    /// Run a schedule file on fresh noises and report PSNR against the
    /// teacher.
    Sample {
        #[command(flatten)]
        common: Overrides,
        /// Schedule JSON produced by `search`.
        #[arg(long)]
        schedule: PathBuf,
        /// Also run the naive uniform-subset baseline.
        #[arg(long)]
        baseline: bool,
        /// Calibration profile JSON produced by `calibrate`.
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long, default_value = "sample_results.csv")]
        out: PathBuf,
    },
    /// Compare the DP against the exhaustive oracle on small instances.
    BruteCheck {
        #[command(flatten)]
        common: Overrides,
        /// Cap on enumerated schedules per instance.
        #[arg(long, default_value_t = DEFAULT_CAP)]
        cap: u128,
        #[arg(long, default_value = "brute_check.json")]
        out: PathBuf,
        /// Optional CSV of every enumerated schedule with cost and rank.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Build an amplitude-calibration profile for a schedule.
    Calibrate {
        #[command(flatten)]
        common: Overrides,
        #[arg(long)]
        schedule: PathBuf,
        #[arg(long, default_value = "calibration.json")]
        out: PathBuf,
    },
    /// Paired OSS / OSS-ave / uniform comparison on the search noises.
    Compare {
        #[command(flatten)]
        common: Overrides,
        #[arg(long, default_value = "compare.json")]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Serve the config's mixture provider over stdio (newline-delimited
    /// JSON), for wire-protocol clients and tests.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Search {
            common,
            average,
            out,
            csv,
        } => cmd_search(common, average, &out, &csv),
        Command::Sample {
            common,
            schedule,
            baseline,
            calibration,
            out,
        } => cmd_sample(common, &schedule, baseline, calibration.as_deref(), &out),
        Command::BruteCheck {
            common,
            cap,
            out,
            csv,
        } => cmd_brute_check(common, cap, &out, csv.as_deref()),
        Command::Calibrate {
            common,
            schedule,
            out,
        } => cmd_calibrate(common, &schedule, &out),
        Command::Compare { common, out, csv } => cmd_compare(common, &out, csv.as_deref()),
        Command::Serve { config } => cmd_serve(&config),
    }
}

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v}")
    }
}

/// JSON value for a float, using the string "inf" for infinities so the
/// files stay valid JSON.
fn json_f64(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else {
        serde_json::Value::String(fmt_f64(v))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &format!("{}\n", serde_json::to_string_pretty(value)?))
}

fn indices_field(indices: &[usize]) -> String {
    indices
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn cmd_search(common: Overrides, average: bool, out: &Path, csv: &Path) -> Result<()> {
    let mut cfg = common.load()?;
    if average {
        cfg.average = true;
    }
    let run = run_search(&cfg, common.workers())?;
    write_json(out, run.primary_schedule())?;

    let mut body = String::new();
    body.push_str(&format!("# config_fingerprint={}\n", cfg.fingerprint()));
    body.push_str("sample,final_cost,psnr\n");
    for s in &run.per_sample {
        body.push_str(&format!(
            "{},{},{}\n",
            s.sample,
            fmt_f64(s.final_cost),
            fmt_f64(s.psnr)
        ));
    }
    write_text(csv, &body)?;

    let label = if run.averaged.is_some() {
        "averaged"
    } else {
        "per-sample"
    };
    println!(
        "search: {} samples, wrote {label} schedule to {} and rows to {}",
        run.per_sample.len(),
        out.display(),
        csv.display()
    );
    Ok(())
}

fn load_schedule(path: &Path) -> Result<StudentSchedule> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing schedule file {}", path.display()))
}

/// Refuse to run a schedule under a different teacher than it was searched
/// for, reporting both fingerprints.
fn check_schedule_matches(cfg: &RunConfig, schedule: &StudentSchedule) -> Result<()> {
    let expected = cfg.teacher_fingerprint();
    if let Some(fp) = &schedule.fingerprint {
        if *fp != expected {
            bail!(
                "schedule/config mismatch: schedule fingerprint {fp}, config teacher fingerprint {expected}"
            );
        }
        return Ok(());
    }
    if schedule.teacher_steps != cfg.teacher_steps || schedule.order != cfg.solver_order {
        bail!(
            "schedule/config mismatch: schedule has N={}, order={}, config has N={}, order={} \
             (config teacher fingerprint {expected})",
            schedule.teacher_steps,
            schedule.order,
            cfg.teacher_steps,
            cfg.solver_order
        );
    }
    Ok(())
}

fn cmd_sample(
    common: Overrides,
    schedule_path: &Path,
    baseline: bool,
    calibration: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let cfg = common.load()?;
    let schedule = load_schedule(schedule_path)?;
    check_schedule_matches(&cfg, &schedule)?;
    let profile: Option<CalibrationProfile> = match calibration {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Some(serde_json::from_str(&text)?)
        }
        None => None,
    };
    let rows = run_sampling(
        &cfg,
        &schedule,
        baseline,
        profile.as_ref(),
        common.workers(),
    )?;

    let mut body = String::new();
    body.push_str(&format!("# config_fingerprint={}\n", cfg.fingerprint()));
    body.push_str("sample,psnr,psnr_uniform,calib_skipped\n");
    for r in &rows {
        let skipped = r
            .calib_skipped
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(";");
        body.push_str(&format!(
            "{},{},{},{}\n",
            r.sample,
            fmt_f64(r.psnr),
            r.psnr_uniform.map(fmt_f64).unwrap_or_default(),
            skipped
        ));
    }
    write_text(out, &body)?;
    println!("sample: {} rows written to {}", rows.len(), out.display());
    Ok(())
}

fn cmd_brute_check(common: Overrides, cap: u128, out: &Path, csv: Option<&Path>) -> Result<()> {
    let cfg = common.load()?;
    let rows = run_brute_check(&cfg, cap, common.workers())?;

    let equal_count = rows.iter().filter(|r| r.equal).count();
    let max_ratio = rows
        .iter()
        .map(|r| r.ratio)
        .fold(f64::NEG_INFINITY, f64::max);
    let instances: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| {
            serde_json::json!({
                "sample": r.sample,
                "dp_cost": json_f64(r.dp_cost),
                "oracle_cost": json_f64(r.oracle.best_cost),
                "ratio": json_f64(r.ratio),
                "equal": r.equal,
                "dp_indices": r.dp_indices,
                "oracle_indices": r.oracle.best.indices,
            })
        })
        .collect();
    let summary = serde_json::json!({
        "config_fingerprint": cfg.fingerprint(),
        "instances": instances,
        "equality_rate": equal_count as f64 / rows.len() as f64,
        "max_ratio": json_f64(max_ratio),
    });
    write_json(out, &summary)?;

    if let Some(csv_path) = csv {
        let mut body = String::new();
        body.push_str(&format!("# config_fingerprint={}\n", cfg.fingerprint()));
        body.push_str("instance,schedule,cost,rank\n");
        for r in &rows {
            // Rank costs within the instance; ties keep enumeration order.
            let mut order: Vec<usize> = (0..r.oracle.all_costs.len()).collect();
            order.sort_by(|&a, &b| {
                r.oracle.all_costs[a]
                    .partial_cmp(&r.oracle.all_costs[b])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut rank = vec![0usize; order.len()];
            for (pos, &idx) in order.iter().enumerate() {
                rank[idx] = pos;
            }
            for (k, indices) in
                enumerate_schedules(cfg.teacher_steps, cfg.student_steps)?.enumerate()
            {
                body.push_str(&format!(
                    "{},{},{},{}\n",
                    r.sample,
                    indices_field(&indices),
                    fmt_f64(r.oracle.all_costs[k]),
                    rank[k]
                ));
            }
        }
        write_text(csv_path, &body)?;
    }

    println!(
        "brute-check: {} instances, equality rate {:.3}, max ratio {}",
        rows.len(),
        equal_count as f64 / rows.len() as f64,
        fmt_f64(max_ratio)
    );
    Ok(())
}

fn cmd_calibrate(common: Overrides, schedule_path: &Path, out: &Path) -> Result<()> {
    let cfg = common.load()?;
    let schedule = load_schedule(schedule_path)?;
    check_schedule_matches(&cfg, &schedule)?;
    let grid = config_grid(&cfg)?;
    let samples = cfg.calibration.clone().unwrap_or_default().samples;
    let mut provider = cfg.provider.connect()?;
    let profile = build_profile(&mut provider, &grid, &schedule, samples, cfg.seed)?;
    write_json(out, &profile)?;
    println!(
        "calibrate: profile over {} samples written to {}",
        samples,
        out.display()
    );
    Ok(())
}

fn cmd_compare(common: Overrides, out: &Path, csv: Option<&Path>) -> Result<()> {
    let cfg = common.load()?;
    let outcome = run_compare(&cfg, common.workers())?;
    let summary = serde_json::json!({
        "config_fingerprint": cfg.fingerprint(),
        "teacher_steps": cfg.teacher_steps,
        "student_steps": cfg.student_steps,
        "samples": cfg.samples,
        "mean_psnr_oss": json_f64(outcome.mean_psnr_oss),
        "mean_psnr_oss_ave": json_f64(outcome.mean_psnr_ave),
        "mean_psnr_uniform": json_f64(outcome.mean_psnr_uniform),
        "oss_margin_over_uniform_db": json_f64(outcome.mean_psnr_oss - outcome.mean_psnr_uniform),
        "averaged_schedule": serde_json::to_value(&outcome.averaged)?,
    });
    write_json(out, &summary)?;

    if let Some(csv_path) = csv {
        let mut body = String::new();
        body.push_str(&format!("# config_fingerprint={}\n", cfg.fingerprint()));
        body.push_str("sample,psnr_oss,psnr_oss_ave,psnr_uniform\n");
        for r in &outcome.per_sample {
            body.push_str(&format!(
                "{},{},{},{}\n",
                r.sample,
                fmt_f64(r.psnr_oss),
                fmt_f64(r.psnr_ave),
                fmt_f64(r.psnr_uniform)
            ));
        }
        write_text(csv_path, &body)?;
    }

    println!(
        "compare: OSS {} dB, OSS-ave {} dB, uniform {} dB (margin {} dB)",
        fmt_f64(outcome.mean_psnr_oss),
        fmt_f64(outcome.mean_psnr_ave),
        fmt_f64(outcome.mean_psnr_uniform),
        fmt_f64(outcome.mean_psnr_oss - outcome.mean_psnr_uniform)
    );
    Ok(())
}

fn cmd_serve(config: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let ProviderSpec::Mixture { spec } = &cfg.provider else {
        bail!("serve requires a mixture provider config");
    };
    let mut provider = spec.clone();
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    protocol::serve(&mut provider, stdin.lock(), stdout.lock())?;
    std::io::stdout().flush()?;
    Ok(())
}
