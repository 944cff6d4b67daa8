//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Run with
//! `cargo test -p batchlin --test acceptance`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use batchlin::agent::{AgentOverrides, AlphaRule};
use batchlin::concentration::{
    check_ridge_ci, elliptical_potential_failures, simulate_dynamic_concentration, trace_exp_counterexamples, Family,
    MartingaleSpec, RidgeCiSpec,
};
use batchlin::design::random_design_sweep;
use batchlin::environment::Noise;
use batchlin::harness::{
    fit_scaling_exponent, run_experiment, ExperimentConfig, ExperimentReport, InstanceSpec, MChoice, MRule, RunRecord,
};
use batchlin::schedule::{check_schedule_bound, DTildeRule};

const SEED: u64 = 20_240_601;
const REPS: usize = 200;
const MEANS: [f64; 4] = [-0.5, -0.5, -0.5, 1.0];

struct Outcome {
    pass: bool,
    detail: String,
}

fn tuned() -> AgentOverrides {
    AgentOverrides {
        alpha_rule: Some(AlphaRule::RidgeUnionBound),
        dtilde_rule: Some(DTildeRule::OneLog),
        ..Default::default()
    }
}

fn experiment(instance: InstanceSpec, agent: AgentOverrides, t_exp: std::ops::RangeInclusive<u32>, m: MChoice, reps: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        instance,
        agent,
        t_grid: t_exp.map(|e| 1u64 << e).collect(),
        m_grid: vec![m],
        replications: reps,
        master_seed: seed,
        output_dir: None,
        per_round: false,
    }
}

fn mab() -> InstanceSpec {
    InstanceSpec::Mab {
        means: MEANS.to_vec(),
        noise: Noise::Gaussian,
    }
}

fn design_guarantee() -> Outcome {
    match random_design_sweep(200, 16, 64, SEED) {
        Ok(s) => Outcome {
            pass: s.failures == 0 && s.cases.len() == 200,
            detail: format!("200 sets, {} above 2d, worst criterion/d = {:.4}", s.failures, s.worst_ratio),
        },
        Err(e) => error(e),
    }
}

fn matrix_concentration() -> Outcome {
    let families = [Family::FixedProjector, Family::GrowingRankOne, Family::ClippedReplay];
    let mut cells = 0;
    let mut bad = Vec::new();
    let mut worst = 0.0f64;
    for &d in &[1, 2, 4, 8] {
        for &epsilon in &[0.1, 0.5, 0.9] {
            for &delta in &[0.01, 0.05] {
                for (f, &family) in families.iter().enumerate() {
                    let spec = MartingaleSpec {
                        d,
                        n: 100,
                        epsilon,
                        delta,
                        family,
                        p: 0.5,
                    };
                    let seed = SEED ^ ((d * 1000 + (epsilon * 10.0) as usize * 10 + f) as u64) ^ delta.to_bits();
                    match simulate_dynamic_concentration(&spec, 2000, seed) {
                        Ok(r) => {
                            cells += 1;
                            worst = worst.max(r.upper_rate.max(r.lower_rate) / delta);
                            if !r.within_delta() {
                                bad.push(format!("{family:?} d={d} eps={epsilon} delta={delta}"));
                            }
                        }
                        Err(e) => return error(e),
                    }
                }
            }
        }
    }
    Outcome {
        pass: bad.is_empty(),
        detail: format!(
            "{cells} cells x 2000 trials, worst rate/delta = {worst:.3}{}",
            if bad.is_empty() { String::new() } else { format!(", failing: {}", bad.join("; ")) }
        ),
    }
}

fn potential_and_trace_exp() -> Outcome {
    let potential = elliptical_potential_failures(1000, 4, 50, SEED);
    let trace = trace_exp_counterexamples(1000, 4, SEED + 1);
    match (potential, trace) {
        (Ok(p), Ok(t)) => Outcome {
            pass: p == 0 && t == 0,
            detail: format!("potential failures {p}/1000, trace-exp counterexamples {t}/1000"),
        },
        (Err(e), _) | (_, Err(e)) => error(e),
    }
}

fn ridge_coverage() -> Outcome {
    let spec = RidgeCiSpec {
        d: 8,
        n: 200,
        gamma: 3.0,
        lambda_reg: 1.0,
        noise_sd: 1.0,
    };
    match check_ridge_ci(&spec, 10_000, SEED) {
        Ok(r) => Outcome {
            pass: r.within_bound,
            detail: format!("rate {:.5} vs bound {:.5} + slack {:.5}", r.rate, r.bound, r.slack),
        },
        Err(e) => error(e),
    }
}

fn fit_cells(report: &ExperimentReport) -> Result<f64, batchlin::Error> {
    let pts: Vec<(f64, f64)> = report.cells.iter().map(|c| (c.t as f64, c.mean_regret)).collect();
    Ok(fit_scaling_exponent(&pts)?.slope)
}

fn scaling_exponent(runs: &mut Vec<RunRecord>) -> Outcome {
    let cfg = experiment(mab(), tuned(), 12..=17, MChoice::Fixed(2), REPS, SEED);
    let report = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => return error(e),
    };
    let slope = match fit_cells(&report) {
        Ok(s) => s,
        Err(e) => return error(e),
    };
    let means: Vec<String> = report.cells.iter().map(|c| format!("{:.1}", c.mean_regret)).collect();
    runs.extend(report.runs);
    Outcome {
        pass: (slope - 2.0 / 3.0).abs() <= 0.10,
        detail: format!("slope {slope:.4} (target 0.6667 +- 0.10), mean regret by T: [{}]", means.join(", ")),
    }
}

fn loglog_regime(runs: &mut Vec<RunRecord>) -> Outcome {
    let cfg = experiment(mab(), tuned(), 12..=18, MChoice::Rule(MRule::Loglog), REPS, SEED + 1);
    let report = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => return error(e),
    };
    let ratios: Vec<f64> = report
        .cells
        .iter()
        .map(|c| c.mean_regret / ((c.t * c.d as u64) as f64).sqrt())
        .collect();
    let growth = ratios.last().unwrap() / ratios.first().unwrap();
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.3}")).collect();
    runs.extend(report.runs);
    Outcome {
        pass: growth <= 3.0,
        detail: format!("R/sqrt(Td) = [{}], end-to-end growth {growth:.3} (limit 3)", shown.join(", ")),
    }
}

fn group3_sandwich(runs: &mut Vec<RunRecord>) -> Outcome {
    let instance = InstanceSpec::Group3 {
        d_arms: 4,
        j_star: None,
        eps: None,
    };
    let cfg = experiment(instance, tuned(), 12..=17, MChoice::Fixed(2), REPS, SEED + 2);
    let report = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => return error(e),
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for c in &report.cells {
        let lower = c.theorem2_lower_bound / 100.0;
        let upper = c.theorem1_bound * 100.0;
        let ok = c.mean_regret > lower && c.mean_regret < upper;
        pass &= ok;
        parts.push(format!(
            "T={} R={:.1} in ({:.1}, {:.0}){}",
            c.t,
            c.mean_regret,
            lower,
            upper,
            if ok { "" } else { " NO" }
        ));
    }
    runs.extend(report.runs);
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn discipline_and_safety(runs: &[RunRecord]) -> Outcome {
    let broken = runs.iter().filter(|r| !r.follows_batches).count();
    let covered = runs.iter().filter(|r| r.coverage_held).count();
    let unsafe_runs = runs
        .iter()
        .filter(|r| r.coverage_held && r.eliminated_optimal_count > 0)
        .count();
    Outcome {
        pass: !runs.is_empty() && broken == 0 && unsafe_runs == 0,
        detail: format!(
            "{} runs, {broken} with off-boundary policy changes, {covered} with full coverage, {unsafe_runs} of those eliminated a best arm",
            runs.len()
        ),
    }
}

fn schedule_bound() -> Outcome {
    let mut checked = 0;
    let mut bad = Vec::new();
    let mut worst_ratio = 0.0f64;
    for m in 1..=3 {
        for &t in &[10_000u64, 100_000, 1_000_000] {
            for &dt in &[4.0, 16.0, 64.0] {
                for &h in &[2u64, 8] {
                    match check_schedule_bound(t, dt, h, m, 1_000_000) {
                        Ok(c) => {
                            checked += 1;
                            worst_ratio = worst_ratio.max(c.ratio);
                            if !(c.lower_ok && c.ratio_ok) {
                                bad.push(format!("M={m} T={t} dt={dt} h={h}"));
                            }
                        }
                        Err(e) => return error(e),
                    }
                }
            }
        }
    }
    Outcome {
        pass: bad.is_empty(),
        detail: format!(
            "{checked} cases, worst computed/optimum = {worst_ratio:.3}{}",
            if bad.is_empty() { String::new() } else { format!(", failing: {}", bad.join("; ")) }
        ),
    }
}

fn default_constants_slope() -> String {
    let cfg = experiment(mab(), AgentOverrides::default(), 12..=17, MChoice::Fixed(2), 20, SEED + 3);
    match run_experiment(&cfg).and_then(|r| fit_cells(&r).map(|s| (s, r))) {
        Ok((slope, r)) => format!(
            "default constants, M=2: slope {slope:.4}, case {:?} at T=2^17",
            r.cells.last().unwrap().case_tag
        ),
        Err(e) => format!("default constants: error {e}"),
    }
}

fn error(e: batchlin::Error) -> Outcome {
    Outcome {
        pass: false,
        detail: format!("error: {e}"),
    }
}

fn report(id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> (usize, String, bool) {
    let start = Instant::now();
    let o = f();
    let elapsed = start.elapsed();
    let pass = o.pass && elapsed <= budget;
    let line = format!(
        "criterion {id} [{}] {name}: {} ({:.1}s of {}s)",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    (id, line, pass)
}

fn main() -> ExitCode {
    let min = |m: u64| Duration::from_secs(60 * m);
    let mut runs = Vec::new();
    // Criterion 7 aggregates the agent runs of 5, 6 and 9, so it runs last.
    let mut results = [
        report(1, "design guarantee", min(1), design_guarantee),
        report(2, "matrix concentration", min(10), matrix_concentration),
        report(3, "elliptical potential and trace-exp", min(1), potential_and_trace_exp),
        report(4, "ridge confidence coverage", min(1), ridge_coverage),
        report(5, "regret exponent, M = 2", min(30), || scaling_exponent(&mut runs)),
        report(6, "log log T batches", min(30), || loglog_regime(&mut runs)),
        report(9, "group-3 sandwich", min(15), || group3_sandwich(&mut runs)),
        report(7, "batch discipline and safety", min(1), || discipline_and_safety(&runs)),
        report(8, "schedule lower bound", min(5), schedule_bound),
    ];
    results.sort_by_key(|r| r.0);
    for (_, line, _) in &results {
        println!("{line}");
    }
    println!("info: {}", default_constants_slope());
    let failed = results.iter().filter(|r| !r.2).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
