//! Experiment orchestration: JSON configs, seeded replications over a
//! `(T, M)` grid, CSV and JSON reports, log-log scaling fits, and the sign
//! search for the second hard family.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{run_batch_algorithm, AgentConfig, AgentOverrides, RegretTrace, NO_SUPPORT};
use crate::environment::{
    group2_set_labels, group3_gap, make_group1_instance, make_group2_instance, make_group3_instance,
    make_mab_instance, make_random_instance, BanditInstance, Noise,
};
use crate::error::{Error, Result};
use crate::schedule::{theorem1_bound, theorem1_bound_dressed, theorem2_lower_bound, CaseTag, DTildeRule};

/// Exact CSV header of run reports.
pub const CSV_HEADER: &str = "run_id,T,M,d,K,seed,batch,round,regret,cum_regret,survivors,policy_epoch";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSpec {
    Explicit {
        instance: BanditInstance,
    },
    Mab {
        means: Vec<f64>,
        #[serde(default)]
        noise: Noise,
    },
    Random {
        d: usize,
        k: usize,
        seed: u64,
    },
    /// `j_star` defaults to cycling through the arms across replications.
    Group1 {
        h: usize,
        #[serde(default)]
        j_star: Option<usize>,
    },
    /// `sigma` defaults to the identity.
    Group2 {
        d: usize,
        h: usize,
        #[serde(default)]
        sigma: Option<Vec<usize>>,
        signs: Vec<(usize, i8)>,
        eps: f64,
    },
    /// `eps` defaults to `sqrt(d)/(100 sqrt(T_1))` for the cell's first batch.
    Group3 {
        d_arms: usize,
        #[serde(default)]
        j_star: Option<usize>,
        #[serde(default)]
        eps: Option<f64>,
    },
}

impl InstanceSpec {
    /// `(d, K)` without building the instance.
    pub fn dims(&self) -> (usize, usize) {
        match self {
            InstanceSpec::Explicit { instance } => (instance.d(), instance.k()),
            InstanceSpec::Mab { means, .. } => (means.len(), means.len()),
            InstanceSpec::Random { d, k, .. } => (*d, *k),
            InstanceSpec::Group1 { h, .. } => (*h, *h),
            InstanceSpec::Group2 { d, h, .. } => (*d, *h),
            InstanceSpec::Group3 { d_arms, .. } => (*d_arms, *d_arms),
        }
    }

    /// The instance for replication `rep` of a cell run with `config`.
    pub fn build(&self, config: &AgentConfig, rep: usize) -> Result<BanditInstance> {
        match self {
            InstanceSpec::Explicit { instance } => Ok(instance.clone()),
            InstanceSpec::Mab { means, noise } => make_mab_instance(means, *noise),
            InstanceSpec::Random { d, k, seed } => make_random_instance(*d, *k, *seed),
            InstanceSpec::Group1 { h, j_star } => make_group1_instance(*h, j_star.unwrap_or(1 + rep % h.max(&1))),
            InstanceSpec::Group2 {
                d,
                h,
                sigma,
                signs,
                eps,
            } => {
                let identity: Vec<usize> = (0..*d).collect();
                make_group2_instance(*d, *h, sigma.as_deref().unwrap_or(&identity), signs, *eps)
            }
            InstanceSpec::Group3 { d_arms, j_star, eps } => {
                let eps = match eps {
                    Some(e) => *e,
                    None => group3_gap(*d_arms, config.schedule.effective_lengths()[0])?,
                };
                make_group3_instance(*d_arms, j_star.unwrap_or(1 + rep % d_arms.max(&1)), eps)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MRule {
    /// `⌈log₂ log₂ T⌉ + 1`.
    Loglog,
}

/// A batch count, or a rule computing it from `T`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MChoice {
    Fixed(usize),
    Rule(MRule),
}

impl MChoice {
    pub fn resolve(self, t: u64) -> usize {
        match self {
            MChoice::Fixed(m) => m,
            MChoice::Rule(MRule::Loglog) => loglog_batches(t),
        }
    }
}

/// `⌈log₂ log₂ T⌉ + 1`, and 1 for `T < 4`.
pub fn loglog_batches(t: u64) -> usize {
    if t < 4 {
        return 1;
    }
    (t as f64).log2().log2().ceil() as usize + 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    #[serde(default)]
    pub agent: AgentOverrides,
    pub t_grid: Vec<u64>,
    pub m_grid: Vec<MChoice>,
    pub replications: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Write one CSV row per round instead of one per run.
    #[serde(default)]
    pub per_round: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_grid.is_empty() || self.m_grid.is_empty() {
            return Err(Error::Config("t_grid and m_grid must be non-empty".into()));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.t_grid.contains(&0) {
            return Err(Error::Config("horizons must be positive".into()));
        }
        if self.m_grid.contains(&MChoice::Fixed(0)) {
            return Err(Error::Config("batch counts must be positive".into()));
        }
        Ok(())
    }

    /// `(T, M)` cells in grid order.
    pub fn cells(&self) -> Vec<(u64, usize)> {
        self.t_grid
            .iter()
            .flat_map(|&t| self.m_grid.iter().map(move |m| (t, m.resolve(t))))
            .collect()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `rep` in cell `cell`; depends on nothing else.
pub fn run_seed(master: u64, cell: usize, rep: usize) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(cell as u64 + 1)) ^ (rep as u64 + 1))
}

/// One CSV row. Floats are pre-formatted with 17 significant digits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub run_id: usize,
    #[serde(rename = "T")]
    pub t: u64,
    #[serde(rename = "M")]
    pub m: usize,
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub batch: usize,
    pub round: u64,
    pub regret: String,
    pub cum_regret: String,
    pub survivors: u32,
    pub policy_epoch: u32,
}

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Summary of one agent run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: usize,
    pub cell: usize,
    pub rep: usize,
    pub seed: u64,
    pub t: u64,
    pub m: usize,
    pub d: usize,
    pub k: usize,
    pub total_regret: f64,
    pub per_batch_regret: Vec<f64>,
    pub mean_survivors: f64,
    pub min_survivors: u32,
    pub ci_checks: u64,
    pub ci_violations: u64,
    pub eliminated_optimal_count: u64,
    pub empty_intersection_count: u64,
    pub learning_fallback_count: u64,
    pub width_violations: u64,
    pub follows_batches: bool,
    pub coverage_held: bool,
    #[serde(skip)]
    pub rows: Vec<CsvRow>,
}

impl RunRecord {
    fn from_trace(tr: &RegretTrace, id: RunId, cfg: &AgentConfig, per_round: bool) -> Self {
        let row = |i: usize| CsvRow {
            run_id: id.run_id,
            t: cfg.t,
            m: cfg.m,
            d: cfg.d,
            k: cfg.k,
            seed: id.seed,
            batch: tr.policy_ids[i] as usize + 1,
            round: i as u64 + 1,
            regret: format_float(tr.per_round_regret[i]),
            cum_regret: format_float(tr.cumulative[i]),
            survivors: tr.survivor_counts[i],
            policy_epoch: tr.mixture_epochs[i],
        };
        let n = tr.per_round_regret.len();
        let rows = if per_round {
            (0..n).map(row).collect()
        } else {
            vec![row(n - 1)]
        };
        let surv_sum: u64 = tr.survivor_counts.iter().map(|&s| s as u64).sum();
        RunRecord {
            run_id: id.run_id,
            cell: id.cell,
            rep: id.rep,
            seed: id.seed,
            t: cfg.t,
            m: cfg.m,
            d: cfg.d,
            k: cfg.k,
            total_regret: tr.total_regret(),
            per_batch_regret: tr.per_batch_regret.clone(),
            mean_survivors: surv_sum as f64 / n as f64,
            min_survivors: tr.survivor_counts.iter().copied().min().unwrap_or(0),
            ci_checks: tr.ci_checks,
            ci_violations: tr.ci_violations,
            eliminated_optimal_count: tr.eliminated_optimal_count,
            empty_intersection_count: tr.empty_intersection_count,
            learning_fallback_count: tr.learning_fallback_count,
            width_violations: tr.width_violations,
            follows_batches: tr.follows_batches(cfg.m),
            coverage_held: tr.coverage_held(),
            rows,
        }
    }
}

#[derive(Clone, Copy)]
struct RunId {
    run_id: usize,
    cell: usize,
    rep: usize,
    seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub t: u64,
    pub m: usize,
    pub d: usize,
    pub k: usize,
    pub replications: usize,
    pub agent: AgentConfig,
    pub case_tag: CaseTag,
    pub dtilde_rule: DTildeRule,
    pub mean_regret: f64,
    pub stderr_regret: f64,
    pub mean_per_batch_regret: Vec<f64>,
    pub mean_survivors: f64,
    pub min_survivors: u32,
    pub ci_checks: u64,
    pub ci_violations: u64,
    pub coverage_held_runs: usize,
    pub eliminated_optimal_total: u64,
    /// Runs where every interval held and a best arm was still eliminated.
    pub unsafe_runs: usize,
    pub empty_intersection_total: u64,
    pub width_violations: u64,
    pub batch_discipline_ok: bool,
    pub theorem1_bound: f64,
    pub theorem1_bound_dressed: f64,
    pub theorem2_lower_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub cells: Vec<CellSummary>,
    pub runs: Vec<RunRecord>,
}

/// Runs every replication of every cell. Results do not depend on the
/// number of worker threads.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let (d, k) = config.instance.dims();
    let cells = config.cells();
    let agents: Vec<AgentConfig> = cells
        .iter()
        .map(|&(t, m)| AgentConfig::with_overrides(t, m, d, k, &config.agent))
        .collect::<Result<_>>()?;

    let reps = config.replications;
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..reps).map(move |r| (c, r))).collect();
    let runs: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(cell, rep)| {
            let cfg = &agents[cell];
            let id = RunId {
                run_id: cell * reps + rep,
                cell,
                rep,
                seed: run_seed(config.master_seed, cell, rep),
            };
            let instance = config.instance.build(cfg, rep)?;
            let mut rng = ChaCha8Rng::seed_from_u64(id.seed);
            let tr = run_batch_algorithm(&instance, cfg, &mut rng)?;
            Ok(RunRecord::from_trace(&tr, id, cfg, config.per_round))
        })
        .collect::<Result<_>>()?;

    let summaries = agents
        .iter()
        .enumerate()
        .map(|(c, cfg)| summarize_cell(cfg, &runs[c * reps..(c + 1) * reps]))
        .collect();
    Ok(ExperimentReport {
        config: config.clone(),
        cells: summaries,
        runs,
    })
}

fn summarize_cell(cfg: &AgentConfig, runs: &[RunRecord]) -> CellSummary {
    let n = runs.len() as f64;
    let mean = runs.iter().map(|r| r.total_regret).sum::<f64>() / n;
    let var = if runs.len() > 1 {
        runs.iter().map(|r| (r.total_regret - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let mut per_batch = vec![0.0; cfg.m];
    for r in runs {
        for (acc, v) in per_batch.iter_mut().zip(&r.per_batch_regret) {
            *acc += v / n;
        }
    }
    let h = cfg.d.min(cfg.k) as u64;
    CellSummary {
        t: cfg.t,
        m: cfg.m,
        d: cfg.d,
        k: cfg.k,
        replications: runs.len(),
        agent: cfg.clone(),
        case_tag: cfg.schedule.case_tag,
        dtilde_rule: cfg.schedule.dtilde_rule,
        mean_regret: mean,
        stderr_regret: (var / n).sqrt(),
        mean_per_batch_regret: per_batch,
        mean_survivors: runs.iter().map(|r| r.mean_survivors).sum::<f64>() / n,
        min_survivors: runs.iter().map(|r| r.min_survivors).min().unwrap_or(0),
        ci_checks: runs.iter().map(|r| r.ci_checks).sum(),
        ci_violations: runs.iter().map(|r| r.ci_violations).sum(),
        coverage_held_runs: runs.iter().filter(|r| r.coverage_held).count(),
        eliminated_optimal_total: runs.iter().map(|r| r.eliminated_optimal_count).sum(),
        unsafe_runs: runs
            .iter()
            .filter(|r| r.coverage_held && r.eliminated_optimal_count > 0)
            .count(),
        empty_intersection_total: runs.iter().map(|r| r.empty_intersection_count).sum(),
        width_violations: runs.iter().map(|r| r.width_violations).sum(),
        batch_discipline_ok: runs.iter().all(|r| r.follows_batches),
        theorem1_bound: theorem1_bound(cfg.t, cfg.d, cfg.k, cfg.m),
        theorem1_bound_dressed: theorem1_bound_dressed(cfg.t, cfg.schedule.d_tilde, h, cfg.m),
        theorem2_lower_bound: theorem2_lower_bound(cfg.t, cfg.d, cfg.k, cfg.m),
    }
}

/// Writes `runs.csv` and `summary.json` into `dir`, creating it if needed.
pub fn write_reports(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("runs.csv"))?;
    for run in &report.runs {
        for row in &run.rows {
            w.serialize(row)?;
        }
    }
    if report.runs.iter().all(|r| r.rows.is_empty()) {
        w.write_record(CSV_HEADER.split(','))?;
    }
    w.flush()?;
    #[derive(Serialize)]
    struct Summary<'a> {
        config: &'a ExperimentConfig,
        cells: &'a [CellSummary],
    }
    let summary = Summary {
        config: &report.config,
        cells: &report.cells,
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    /// `(ln T, ln regret)`.
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    /// RMS of the fit residuals.
    pub residual: f64,
    pub predicted_slope: Option<f64>,
}

/// Regret exponent the schedule targets: `1/(2 - 2^{-M+2})` in Case I,
/// `1/(2 - 2^{-M+1})` in Case II, and 1 with a single batch.
pub fn predicted_exponent(m: usize, case: CaseTag) -> f64 {
    let p = |e: i32| 1.0 / (2.0 - 2f64.powi(e));
    match case {
        CaseTag::SingleBatch | CaseTag::TrivialSmallT | CaseTag::Custom => 1.0,
        _ if m <= 1 => 1.0,
        CaseTag::CaseI => p(2 - m as i32),
        CaseTag::CaseII => p(1 - m as i32),
    }
}

/// Least-squares line through `(ln T, ln R)` for `(T, R)` pairs.
pub fn fit_scaling_exponent(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.iter().any(|&(t, r)| !(t > 0.0 && r > 0.0 && t.is_finite() && r.is_finite())) {
        return Err(Error::InvalidParameter("scaling points need positive T and regret".into()));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(t, r)| (t.ln(), r.ln())).collect();
    let mut xs: Vec<f64> = logs.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 3 {
        return Err(Error::InvalidParameter("scaling fit needs at least 3 distinct horizons".into()));
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (logs.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Ok(ScalingFit {
        points: logs,
        slope,
        intercept,
        residual,
        predicted_slope: None,
    })
}

/// Reads a run CSV and fits one exponent per batch count, using the mean
/// final cumulative regret at each horizon.
pub fn fit_from_csv(path: &Path) -> Result<BTreeMap<usize, ScalingFit>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Config(format!("unexpected CSV header in {}", path.display())));
    }
    let mut acc: BTreeMap<usize, BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
    for row in r.deserialize() {
        let row: CsvRow = row?;
        if row.round != row.t {
            continue;
        }
        let v: f64 = row
            .cum_regret
            .parse()
            .map_err(|_| Error::Config(format!("bad cum_regret {:?}", row.cum_regret)))?;
        let e = acc.entry(row.m).or_default().entry(row.t).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    let mut fits = BTreeMap::new();
    for (m, by_t) in acc {
        let pts: Vec<(f64, f64)> = by_t.iter().map(|(&t, &(s, c))| (t as f64, s / c as f64)).collect();
        fits.insert(m, fit_scaling_exponent(&pts)?);
    }
    if fits.is_empty() {
        return Err(Error::Config("no final-round rows in the CSV".into()));
    }
    Ok(fits)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Group2Signs {
    /// Batch-1 visit frequency of labels `h1+1..=h1+d1`.
    pub visit_freq: Vec<f64>,
    /// Labels visited at most `2/((h1+1) d1)` of the time.
    pub low_visit: Vec<usize>,
    pub signs: Vec<(usize, i8)>,
    /// Sign given to every low-visit label.
    pub sign: i8,
    pub regret_plus: f64,
    pub regret_minus: f64,
}

/// Picks the `±eps` assignment of the low-visit labels that costs `agent`
/// more regret. `agent(instance, seed)` must be deterministic in its seed.
/// Visits are counted over batch 1 of `probe_budget` runs on the instance
/// with every mean at 1/2; the two candidates are then compared on
/// `probe_budget` paired runs each.
pub fn adversarial_group2_signs<F>(agent: F, d: usize, h: usize, eps: f64, probe_budget: usize, seed: u64) -> Result<Group2Signs>
where
    F: Fn(&BanditInstance, u64) -> Result<RegretTrace> + Sync,
{
    if probe_budget == 0 {
        return Err(Error::InvalidParameter("probe budget must be positive".into()));
    }
    let (d1, h1) = (d / 2, h / 2);
    let identity: Vec<usize> = (0..d).collect();
    let neutral = make_group2_instance(d, h, &identity, &[], eps)?;
    let labels: Vec<Vec<usize>> = (1..=d1).map(|i| group2_set_labels(h, i)).collect();

    let visits: Vec<(Vec<u64>, u64)> = (0..probe_budget)
        .into_par_iter()
        .map(|p| {
            let tr = agent(&neutral, run_seed(seed, 0, p))?;
            let first = tr.endpoints.first().map_or(0, |&e| e as usize);
            let mut v = vec![0u64; d1];
            for t in 0..first {
                let s = tr.support_ids[t];
                if s == NO_SUPPORT {
                    return Err(Error::InvalidParameter("probe runs must record the drawn set".into()));
                }
                let label = labels[s as usize][tr.played[t] as usize];
                if label > h1 {
                    v[label - h1 - 1] += 1;
                }
            }
            Ok((v, first as u64))
        })
        .collect::<Result<_>>()?;
    let total: u64 = visits.iter().map(|v| v.1).sum();
    let mut counts = vec![0u64; d1];
    for (v, _) in &visits {
        for (c, x) in counts.iter_mut().zip(v) {
            *c += x;
        }
    }
    let visit_freq: Vec<f64> = counts.iter().map(|&c| c as f64 / total.max(1) as f64).collect();
    let threshold = 2.0 / ((h1 + 1) * d1) as f64;
    let low_visit: Vec<usize> = (0..d1)
        .filter(|&i| visit_freq[i] <= threshold)
        .map(|i| h1 + 1 + i)
        .collect();

    let mean_regret = |sign: i8| -> Result<f64> {
        let signs: Vec<(usize, i8)> = low_visit.iter().map(|&l| (l, sign)).collect();
        let inst = make_group2_instance(d, h, &identity, &signs, eps)?;
        let regrets: Vec<f64> = (0..probe_budget)
            .into_par_iter()
            .map(|p| agent(&inst, run_seed(seed, 1, p)).map(|tr| tr.total_regret()))
            .collect::<Result<_>>()?;
        Ok(regrets.iter().sum::<f64>() / probe_budget as f64)
    };
    let regret_plus = mean_regret(1)?;
    let regret_minus = mean_regret(-1)?;
    let sign = if regret_minus > regret_plus { -1 } else { 1 };
    Ok(Group2Signs {
        signs: low_visit.iter().map(|&l| (l, sign)).collect(),
        visit_freq,
        low_visit,
        sign,
        regret_plus,
        regret_minus,
    })
}
