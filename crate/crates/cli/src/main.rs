use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use batchlin::agent::{AgentConfig, AgentOverrides};
use batchlin::concentration::{simulate_dynamic_concentration, simulate_scalar_concentration, Family, MartingaleSpec};
use batchlin::design::{design_criterion, g_optimal_design_default, random_design_sweep};
use batchlin::environment::ContextSet;
use batchlin::harness::{fit_from_csv, run_experiment, write_reports, ExperimentConfig};
use batchlin::schedule::{check_schedule_bound, theorem1_bound, theorem1_bound_dressed, theorem2_lower_bound, DTildeRule};
use batchlin::{Error, Result};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "batchlin", version, about = "Batched linear contextual bandit simulator")]
struct Cli {
    /// JSON input for the subcommand.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides the one in the config.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment grid from `--config`; writes runs.csv and summary.json.
    Run,
    /// Print the batch schedule and regret bounds for one horizon.
    /// `--config` may hold agent overrides.
    Schedule {
        #[arg(long)]
        t: u64,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        delta: Option<f64>,
        /// two_log or one_log.
        #[arg(long)]
        dtilde_rule: Option<String>,
    },
    /// Monte Carlo check of the matrix concentration bound. `--config` may
    /// hold a full spec instead of the flags.
    Conc {
        /// fixed_projector, growing_rank_one, clipped_replay, deterministic or scalar_uniform.
        #[arg(long, default_value = "fixed_projector")]
        family: String,
        #[arg(long, default_value_t = 4)]
        d: usize,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0.5)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long, default_value_t = 2000)]
        trials: usize,
        /// Use the scalar version of the bound (forces d = 1).
        #[arg(long)]
        scalar: bool,
    },
    /// Check the design guarantee on random sets, or on the set in `--config`
    /// (a JSON array of arm vectors).
    DesignCheck {
        #[arg(long, default_value_t = 200)]
        sets: usize,
        #[arg(long, default_value_t = 16)]
        max_d: usize,
        #[arg(long, default_value_t = 64)]
        max_k: usize,
    },
    /// Compare the computed schedule with a brute-force optimum and its lower bound.
    LbVerify {
        #[arg(long)]
        t: u64,
        #[arg(long)]
        d_tilde: f64,
        #[arg(long)]
        h: u64,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 200)]
        grid_points: usize,
    },
    /// Fit regret exponents per batch count from a run CSV.
    Fit {
        csv: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Returns 2 when a check ran but its guarantee failed.
fn execute(cli: Cli) -> Result<u8> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let seed = cli.seed.unwrap_or(0);
    let (name, value, ok) = match cli.command {
        Command::Run => return run(&cli.config, cli.seed, cli.out),
        Command::Schedule {
            t,
            d,
            k,
            m,
            delta,
            dtilde_rule,
        } => {
            let mut o: AgentOverrides = match &cli.config {
                Some(p) => parse_json(p)?,
                None => AgentOverrides::default(),
            };
            if delta.is_some() {
                o.delta = delta;
            }
            if let Some(r) = dtilde_rule {
                o.dtilde_rule = Some(parse_name::<DTildeRule>(&r)?);
            }
            let cfg = AgentConfig::with_overrides(t, m, d, k, &o)?;
            let s = &cfg.schedule;
            let v = json!({
                "lengths": s.lengths,
                "effective_lengths": s.effective_lengths(),
                "endpoints": s.endpoints,
                "case_tag": s.case_tag,
                "gamma": s.gamma,
                "d_tilde": s.d_tilde,
                "dtilde_rule": s.dtilde_rule,
                "h": s.h,
                "delta": cfg.delta,
                "theorem1_bound": theorem1_bound(t, d, k, m),
                "theorem1_bound_dressed": theorem1_bound_dressed(t, s.d_tilde, s.h, m),
                "theorem2_lower_bound": theorem2_lower_bound(t, d, k, m),
                "overrides": cfg.overrides,
            });
            ("schedule", v, true)
        }
        Command::Conc {
            family,
            d,
            n,
            epsilon,
            delta,
            p,
            trials,
            scalar,
        } => {
            let spec = match &cli.config {
                Some(path) => parse_json(path)?,
                None => MartingaleSpec {
                    d,
                    n,
                    epsilon,
                    delta,
                    family: parse_name::<Family>(&family)?,
                    p,
                },
            };
            let report = if scalar {
                simulate_scalar_concentration(&spec, trials, seed)?
            } else {
                simulate_dynamic_concentration(&spec, trials, seed)?
            };
            let ok = report.within_delta();
            let mut v = serde_json::to_value(&report)?;
            v["within_delta"] = json!(ok);
            ("conc", v, ok)
        }
        Command::DesignCheck { sets, max_d, max_k } => match &cli.config {
            Some(path) => {
                let vecs: Vec<Vec<f64>> = parse_json(path)?;
                let x = ContextSet::from_vectors(&vecs)?;
                let w = g_optimal_design_default(&x)?;
                let crit = design_criterion(&x, &w)?;
                let bound = 2.0 * x.dim() as f64;
                let v = json!({"weights": w.weights, "criterion": crit, "bound": bound, "iterations": w.iterations});
                ("design_check", v, crit <= bound)
            }
            None => {
                let s = random_design_sweep(sets, max_d, max_k, seed)?;
                let ok = s.failures == 0;
                ("design_check", serde_json::to_value(&s)?, ok)
            }
        },
        Command::LbVerify {
            t,
            d_tilde,
            h,
            m,
            grid_points,
        } => {
            let c = check_schedule_bound(t, d_tilde, h, m, grid_points)?;
            let ok = c.lower_ok && c.ratio_ok;
            ("lb_verify", serde_json::to_value(&c)?, ok)
        }
        Command::Fit { csv } => {
            let fits = fit_from_csv(&csv)?;
            ("fit", serde_json::to_value(&fits)?, true)
        }
    };
    emit(name, &value, cli.out.as_deref())?;
    Ok(if ok { 0 } else { 2 })
}

fn run(config: &Option<PathBuf>, seed: Option<u64>, out: Option<PathBuf>) -> Result<u8> {
    let path = config
        .as_ref()
        .ok_or_else(|| Error::Config("run needs --config".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    let dir = out
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))?;
    let report = run_experiment(&cfg)?;
    write_reports(&report, &dir)?;
    for c in &report.cells {
        println!(
            "T={} M={} mean_regret={:.6} stderr={:.6} ci_violations={} batch_discipline={}",
            c.t, c.m, c.mean_regret, c.stderr_regret, c.ci_violations, c.batch_discipline_ok
        );
    }
    println!("wrote {}", dir.display());
    Ok(0)
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn parse_name<T: serde::de::DeserializeOwned>(name: &str) -> Result<T> {
    serde_json::from_value(Value::String(name.to_string())).map_err(|e| Error::Config(e.to_string()))
}

fn emit(name: &str, value: &Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(format!("{name}.json"));
            fs::write(&path, text)?;
            println!("wrote {}", path.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}
