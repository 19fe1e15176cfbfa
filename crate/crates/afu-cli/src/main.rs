//! Experiment CLI: train runs, the toy max-Q benchmark, gradient checks, and
//! the SFM comparison suite.
//!
//! Exit codes: 0 on success, 1 on usage or IO errors, 2 when a run aborts on
//! a non-finite loss (or a gradient check fails).

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use afu_core::gradcheck;
use afu_core::maxq::{run_toy_benchmark, ToyConfig, ToyMethod};
use afu_core::report::{
    final_smoothed_return, write_records_csv, write_toy_csv, write_toy_summary_json,
    SMOOTHING_WINDOW,
};
use afu_core::trainer::{train, AfuConfig, AfuVariant};

#[derive(Parser)]
#[command(name = "afu", version, about = "Off-policy RL with actor-free critic updates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write the learning-curve CSV plus a config echo.
    Train(TrainArgs),
    /// Train a value estimator against the closed-form max-Q toy problem.
    Toyq(ToyqArgs),
    /// Run every finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Reproduce the SFM failure-mode comparison across seeds.
    SfmSuite(SfmSuiteArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Environment name (sfm | point_reach).
    #[arg(long)]
    env: Option<String>,
    /// Algorithm variant (alpha | beta).
    #[arg(long)]
    variant: Option<AfuVariant>,
    /// Full config JSON; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    warmup: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    eval_interval: Option<u64>,
    #[arg(long)]
    eval_rollouts: Option<usize>,
    /// Comma-separated hidden layer sizes, e.g. 256,256.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    lr_q: Option<f64>,
    #[arg(long)]
    lr_va: Option<f64>,
    #[arg(long)]
    lr_pi: Option<f64>,
    #[arg(long)]
    lr_temp: Option<f64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Prefix for the emitted records.csv / config.json.
    #[arg(long, default_value = "")]
    prefix: String,
}

#[derive(Args)]
struct ToyqArgs {
    /// afu | expectile
    #[arg(long)]
    method: String,
    /// Gradient scaling coefficient (afu method).
    #[arg(long)]
    rho: Option<f64>,
    /// Expectile parameter (expectile method).
    #[arg(long)]
    tau_e: Option<f64>,
    #[arg(long, default_value_t = 3000)]
    steps: usize,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated hidden layer sizes.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, default_value = "")]
    prefix: String,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20260101)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    instances: usize,
}

#[derive(Args)]
struct SfmSuiteArgs {
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 20_000)]
    steps: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Also write one learning-curve CSV per run.
    #[arg(long)]
    write_curves: bool,
}

fn main() {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's message already includes usage.
            let _ = e.print();
            std::process::exit(1);
        }
    };
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Toyq(args) => cmd_toyq(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::SfmSuite(args) => cmd_sfm_suite(args),
    }
}

fn out_path(dir: &Path, prefix: &str, name: &str) -> PathBuf {
    dir.join(format!("{prefix}{name}"))
}

fn build_train_config(args: &TrainArgs) -> anyhow::Result<AfuConfig> {
    let mut cfg = if let Some(path) = &args.config {
        let json = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str::<AfuConfig>(&json)
            .with_context(|| format!("parsing config {}", path.display()))?
    } else {
        let env = args.env.clone().unwrap_or_else(|| "sfm".to_string());
        let variant = args.variant.unwrap_or(AfuVariant::Alpha);
        match env.as_str() {
            "point_reach" => AfuConfig::point_reach_desk(variant, 0),
            _ => AfuConfig::sfm_desk(variant, 0),
        }
    };
    if let Some(env) = &args.env {
        cfg.env = env.clone();
    }
    if let Some(variant) = args.variant {
        cfg.variant = variant;
    }
    if let Some(v) = args.steps {
        cfg.total_steps = v;
    }
    if let Some(v) = args.warmup {
        cfg.warmup_steps = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.rho {
        cfg.rho = v;
    }
    if let Some(v) = args.tau {
        cfg.tau = v;
    }
    if let Some(v) = args.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = args.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = args.eval_interval {
        cfg.eval_interval = v;
    }
    if let Some(v) = args.eval_rollouts {
        cfg.eval_rollouts = v;
    }
    if let Some(v) = &args.hidden {
        cfg.hidden = v.clone();
    }
    if let Some(v) = args.lr_q {
        cfg.lr_q = v;
    }
    if let Some(v) = args.lr_va {
        cfg.lr_va = v;
    }
    if let Some(v) = args.lr_pi {
        cfg.lr_pi = v;
    }
    if let Some(v) = args.lr_temp {
        cfg.lr_temp = v;
    }
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<i32> {
    let cfg = build_train_config(&args)?;
    cfg.validate()?;
    std::fs::create_dir_all(&args.out_dir)?;
    std::fs::write(
        out_path(&args.out_dir, &args.prefix, "config.json"),
        serde_json::to_string_pretty(&cfg)?,
    )?;

    let outcome = train(cfg.clone())?;
    let csv_path = out_path(&args.out_dir, &args.prefix, "records.csv");
    write_records_csv(&csv_path, &outcome.records)?;

    let final_smoothed = final_smoothed_return(&outcome.records, SMOOTHING_WINDOW);
    match &outcome.abort {
        Some(abort) => {
            eprintln!(
                "run aborted at step {} on non-finite {}; partial curve in {}",
                abort.step,
                abort.what,
                csv_path.display()
            );
            Ok(2)
        }
        None => {
            println!(
                "{} {} on {}: {} records, final smoothed return {:.4} -> {}",
                cfg.env,
                cfg.variant,
                cfg.total_steps,
                outcome.records.len(),
                final_smoothed.unwrap_or(f64::NAN),
                csv_path.display()
            );
            Ok(0)
        }
    }
}

fn cmd_toyq(args: ToyqArgs) -> anyhow::Result<i32> {
    let method = match args.method.as_str() {
        "afu" => ToyMethod::Afu {
            rho: args.rho.context("--rho is required for --method afu")?,
        },
        "expectile" => ToyMethod::Expectile {
            tau: args
                .tau_e
                .context("--tau-e is required for --method expectile")?,
        },
        other => anyhow::bail!("unknown toy method '{other}' (afu | expectile)"),
    };
    let mut cfg = ToyConfig::new(method);
    cfg.steps = args.steps;
    cfg.batch = args.batch;
    cfg.seed = args.seed;
    if let Some(hidden) = &args.hidden {
        cfg.hidden = hidden.clone();
    }

    let result = run_toy_benchmark(&cfg)?;
    std::fs::create_dir_all(&args.out_dir)?;
    write_toy_csv(
        &out_path(&args.out_dir, &args.prefix, "toyq.csv"),
        &result.rows,
    )?;
    write_toy_summary_json(
        &out_path(&args.out_dir, &args.prefix, "toyq_summary.json"),
        &result.summary,
    )?;
    println!(
        "toyq {} hyper {} seed {}: mean residual {:+.4}, mean |residual| {:.4}, max |residual| {:.4}",
        result.summary.method,
        result.summary.hyper,
        result.summary.seed,
        result.summary.mean_residual,
        result.summary.mean_abs_residual,
        result.summary.max_abs_residual
    );
    Ok(0)
}

fn cmd_gradcheck(args: GradcheckArgs) -> anyhow::Result<i32> {
    let reports = gradcheck::run_all(args.seed, args.instances);
    let mut all_ok = true;
    for report in &reports {
        println!("{report}");
        all_ok &= report.passed();
    }
    if all_ok {
        println!("all gradient checks passed");
        Ok(0)
    } else {
        eprintln!("gradient checks FAILED");
        Ok(2)
    }
}

fn cmd_sfm_suite(args: SfmSuiteArgs) -> anyhow::Result<i32> {
    std::fs::create_dir_all(&args.out_dir)?;
    let mut jobs = Vec::new();
    for variant in [AfuVariant::Beta, AfuVariant::Alpha] {
        for seed in 0..args.seeds {
            let mut cfg = AfuConfig::sfm_desk(variant, seed);
            cfg.total_steps = args.steps;
            jobs.push(cfg);
        }
    }

    let results: Vec<(AfuConfig, anyhow::Result<(Option<f64>, bool)>)> = jobs
        .into_par_iter()
        .map(|cfg| {
            let res = train(cfg.clone())
                .map(|out| {
                    let fin = final_smoothed_return(&out.records, SMOOTHING_WINDOW);
                    if args.write_curves {
                        let name =
                            format!("sfm_{}_seed{}_records.csv", cfg.variant, cfg.seed);
                        let _ = write_records_csv(&args.out_dir.join(name), &out.records);
                    }
                    (fin, out.abort.is_some())
                })
                .map_err(anyhow::Error::from);
            (cfg, res)
        })
        .collect();

    println!("{:<8} {:>5} {:>18} {:>8}", "variant", "seed", "final_smoothed", "abort");
    let mut rows = Vec::new();
    let mut any_abort = false;
    for (cfg, res) in &results {
        let (fin, aborted) = match res {
            Ok((fin, aborted)) => (fin.unwrap_or(f64::NAN), *aborted),
            Err(e) => {
                eprintln!("run {} seed {} failed: {e:#}", cfg.variant, cfg.seed);
                (f64::NAN, true)
            }
        };
        any_abort |= aborted;
        println!("{:<8} {:>5} {:>18.4} {:>8}", cfg.variant.to_string(), cfg.seed, fin, aborted);
        rows.push(serde_json::json!({
            "variant": cfg.variant.to_string(),
            "seed": cfg.seed,
            "final_smoothed_return": fin,
            "aborted": aborted,
        }));
    }

    let beta_hits = results
        .iter()
        .filter(|(c, r)| {
            c.variant == AfuVariant::Beta
                && matches!(r, Ok((Some(f), false)) if *f >= 4.5)
        })
        .count();
    let alpha_low = results
        .iter()
        .filter(|(c, r)| {
            c.variant == AfuVariant::Alpha
                && matches!(r, Ok((Some(f), false)) if *f <= 4.0)
        })
        .count();
    println!(
        "beta runs with final smoothed return >= 4.5: {}/{}",
        beta_hits, args.seeds
    );
    println!(
        "alpha runs with final smoothed return <= 4.0: {}/{}",
        alpha_low, args.seeds
    );

    let summary = serde_json::json!({
        "seeds": args.seeds,
        "steps": args.steps,
        "beta_at_least_4_5": beta_hits,
        "alpha_at_most_4_0": alpha_low,
        "runs": rows,
    });
    std::fs::write(
        args.out_dir.join("sfm_suite.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(if any_abort { 2 } else { 0 })
}
