//! Batch lengths, the regret-rate formulas they are tuned against, and a
//! grid search over schedules for the batch-allocation lower bound.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// How the log-dressed dimension `d̃` is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DTildeRule {
    /// `d ln(TdK/δ) ln(T/(λδ))`.
    #[default]
    TwoLog,
    /// `d ln(TKd/δ)`.
    OneLog,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseTag {
    SingleBatch,
    TrivialSmallT,
    CaseI,
    CaseII,
    /// Lengths supplied by the caller.
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSchedule {
    pub t: u64,
    pub m: usize,
    /// Nominal batch lengths (even). Batches past the horizon have length 0.
    pub lengths: Vec<u64>,
    /// `min(Σ_{l<=k} T_l, T)`.
    pub endpoints: Vec<u64>,
    pub case_tag: CaseTag,
    /// Base length of the recursion: `T` with one effective batch, 0 for custom lengths.
    pub gamma: f64,
    pub d_tilde: f64,
    pub h: u64,
    pub dtilde_rule: DTildeRule,
}

impl BatchSchedule {
    /// Rounds actually played in each batch.
    pub fn effective_lengths(&self) -> Vec<u64> {
        let mut prev = 0;
        self.endpoints
            .iter()
            .map(|&e| {
                let l = e - prev;
                prev = e;
                l
            })
            .collect()
    }

    /// Number of batches with at least one round.
    pub fn effective_batches(&self) -> usize {
        self.effective_lengths().iter().filter(|&&l| l > 0).count()
    }

    /// First round of batch `k` (0-based batch and round indices).
    pub fn batch_start(&self, k: usize) -> u64 {
        if k == 0 {
            0
        } else {
            self.endpoints[k - 1]
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScheduleOptions {
    pub dtilde_rule: DTildeRule,
    /// Ridge parameter inside the two-log `d̃`; defaults to `10/T`.
    pub lambda: Option<f64>,
}

/// `d̃` for the given horizon and failure probability.
pub fn d_tilde(t: u64, d: usize, k: usize, delta: f64, opts: &ScheduleOptions) -> f64 {
    let (tf, df, kf) = (t as f64, d as f64, k as f64);
    let base = df * (tf * df * kf / delta).ln();
    match opts.dtilde_rule {
        DTildeRule::OneLog => base,
        DTildeRule::TwoLog => {
            let lambda = opts.lambda.unwrap_or(10.0 / tf);
            base * (tf / (lambda * delta)).ln()
        }
    }
}

fn ceil_even(x: f64) -> u64 {
    ((x / 2.0).ceil() as u64 * 2).max(2)
}

fn pow2_neg(e: i64) -> f64 {
    2f64.powi(-e as i32)
}

/// Batch lengths with the default `d̃` rule and `λ = 10/T`.
pub fn compute_schedule(t: u64, d: usize, k: usize, m: usize, delta: f64) -> Result<BatchSchedule> {
    compute_schedule_with(t, d, k, m, delta, &ScheduleOptions::default())
}

pub fn compute_schedule_with(
    t: u64,
    d: usize,
    k: usize,
    m: usize,
    delta: f64,
    opts: &ScheduleOptions,
) -> Result<BatchSchedule> {
    if d == 0 || k == 0 || m == 0 {
        return Err(invalid("d, K and M must be positive"));
    }
    if t < d as u64 {
        return Err(invalid(format!("horizon T={t} is smaller than d={d}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta must lie in (0, 1)"));
    }
    let dt = d_tilde(t, d, k, delta, opts);
    let mut s = schedule_from_dtilde(t, dt, d.min(k) as u64, m)?;
    s.dtilde_rule = opts.dtilde_rule;
    Ok(s)
}

/// Schedule for explicit `d̃` and `h`; the building block of [`compute_schedule`].
pub fn schedule_from_dtilde(t: u64, d_tilde: f64, h: u64, m: usize) -> Result<BatchSchedule> {
    if t == 0 || m == 0 || h == 0 {
        return Err(invalid("T, M and h must be positive"));
    }
    if !(d_tilde > 0.0 && d_tilde.is_finite()) {
        return Err(Error::Numerical(format!("d_tilde = {d_tilde}")));
    }
    let (tf, hf) = (t as f64, h as f64);
    let mut lengths = vec![0u64; m];
    let (case_tag, gamma) = if m == 1 {
        lengths[0] = t;
        (CaseTag::SingleBatch, tf)
    } else if tf < d_tilde {
        lengths[0] = t;
        (CaseTag::TrivialSmallT, tf)
    } else {
        let a = pow2_neg(m as i64 - 2);
        let b = pow2_neg(m as i64 - 1);
        if tf <= d_tilde * hf.powf(2.0 - a) {
            let gamma = tf.powf(1.0 / (2.0 - a)) * d_tilde.powf((1.0 - a) / (2.0 - a));
            lengths[0] = ceil_even(gamma);
            lengths[1] = ceil_even(gamma);
            (CaseTag::CaseI, gamma)
        } else {
            let gamma = tf.powf(1.0 / (2.0 - b))
                * d_tilde.powf((1.0 - b) / (2.0 - b))
                * hf.powf(b / (2.0 - b));
            lengths[0] = ceil_even(gamma);
            lengths[1] = ceil_even(gamma * (lengths[0] as f64 / (d_tilde * hf)).sqrt());
            (CaseTag::CaseII, gamma)
        }
    };
    if matches!(case_tag, CaseTag::CaseI | CaseTag::CaseII) {
        for k in 2..m {
            lengths[k] = ceil_even(gamma * (lengths[k - 1] as f64 / d_tilde).sqrt());
        }
    }
    let mut endpoints = capped_endpoints(t, &lengths);
    // Rounding only ever lengthens batches, but never leave rounds unplayed.
    endpoints[m - 1] = t;
    Ok(BatchSchedule {
        t,
        m,
        lengths,
        endpoints,
        case_tag,
        gamma,
        d_tilde,
        h,
        dtilde_rule: DTildeRule::TwoLog,
    })
}

fn capped_endpoints(t: u64, lengths: &[u64]) -> Vec<u64> {
    let mut acc: u64 = 0;
    lengths
        .iter()
        .map(|&l| {
            acc = acc.saturating_add(l);
            acc.min(t)
        })
        .collect()
}

/// Schedule with caller-chosen lengths. They must cover the horizon, and
/// every batch that ends before `T` needs at least two rounds so it can be
/// split into a fitting half and a learning half.
pub fn schedule_from_lengths(t: u64, lengths: &[u64], d_tilde: f64, h: u64) -> Result<BatchSchedule> {
    if t == 0 || lengths.is_empty() {
        return Err(invalid("T and the number of batches must be positive"));
    }
    let endpoints = capped_endpoints(t, lengths);
    if endpoints[lengths.len() - 1] < t {
        return Err(invalid(format!("batch lengths sum to less than T={t}")));
    }
    for (k, (&l, &e)) in lengths.iter().zip(&endpoints).enumerate() {
        if e < t && l < 2 {
            return Err(invalid(format!("batch {} ends before T but has {l} < 2 rounds", k + 1)));
        }
    }
    Ok(BatchSchedule {
        t,
        m: lengths.len(),
        lengths: lengths.to_vec(),
        endpoints,
        case_tag: CaseTag::Custom,
        gamma: 0.0,
        d_tilde,
        h,
        dtilde_rule: DTildeRule::TwoLog,
    })
}

/// First term of the rate: `T^{1/(2-2^{-M+2})} n^{(1-2^{-M+2})/(2-2^{-M+2})}`;
/// infinite for `M = 1`.
fn rate_term_i(t: f64, n: f64, m: usize) -> f64 {
    if m == 1 {
        return f64::INFINITY;
    }
    let a = pow2_neg(m as i64 - 2);
    t.powf(1.0 / (2.0 - a)) * n.powf((1.0 - a) / (2.0 - a))
}

/// Second term: `T^{1/(2-2^{-M+1})} n^{(1-2^{-M+1})/(2-2^{-M+1})} h^{2^{-M+1}/(2-2^{-M+1})}`.
fn rate_term_ii(t: f64, n: f64, h: f64, m: usize) -> f64 {
    let b = pow2_neg(m as i64 - 1);
    t.powf(1.0 / (2.0 - b)) * n.powf((1.0 - b) / (2.0 - b)) * h.powf(b / (2.0 - b))
}

/// Minimum of the two rate terms with dimension-like quantity `n`.
pub fn rate_min(t: f64, n: f64, h: f64, m: usize) -> f64 {
    rate_term_i(t, n, m).min(rate_term_ii(t, n, h, m))
}

/// Upper-bound rate with constant 1, capped at `2T`.
pub fn theorem1_bound(t: u64, d: usize, k: usize, m: usize) -> f64 {
    upper_rate(t as f64, d as f64, d.min(k) as f64, m)
}

/// Same as [`theorem1_bound`] with `d̃` in place of `d`.
pub fn theorem1_bound_dressed(t: u64, d_tilde: f64, h: u64, m: usize) -> f64 {
    upper_rate(t as f64, d_tilde, h as f64, m)
}

fn upper_rate(t: f64, n: f64, h: f64, m: usize) -> f64 {
    if m <= 1 {
        return 2.0 * t;
    }
    rate_min(t, n, h, m).min(2.0 * t)
}

/// Lower-bound rate with constant 1: `(1/M)` times the two-term minimum, capped at `T`.
pub fn theorem2_lower_bound(t: u64, d: usize, k: usize, m: usize) -> f64 {
    let tf = t as f64;
    (rate_min(tf, d as f64, d.min(k) as f64, m) / m as f64).min(tf)
}

/// Right-hand side of the schedule lower bound, with the same cap at `T`
/// (the uncapped value is `T·h` at `M = 1`, above any attainable objective).
pub fn schedule_lower_bound(t: u64, d_tilde: f64, h: u64, m: usize) -> f64 {
    let tf = t as f64;
    (rate_min(tf, d_tilde, h as f64, m) / m as f64).min(tf)
}

/// `max{T1, T2 min(sqrt(d̃h/T1), 1), max_{i>=3} T_i sqrt(d̃)/sqrt(T_{i-1})}`.
pub fn schedule_objective(lengths: &[f64], d_tilde: f64, h: f64) -> f64 {
    let mut obj = lengths.first().copied().unwrap_or(0.0);
    if lengths.len() >= 2 {
        let t1 = lengths[0];
        let factor = if t1 > 0.0 { (d_tilde * h / t1).sqrt().min(1.0) } else { 1.0 };
        obj = obj.max(lengths[1] * factor);
    }
    for i in 2..lengths.len() {
        let (cur, prev) = (lengths[i], lengths[i - 1]);
        let term = if cur == 0.0 {
            0.0
        } else if prev == 0.0 {
            f64::INFINITY
        } else {
            cur * d_tilde.sqrt() / prev.sqrt()
        };
        obj = obj.max(term);
    }
    obj
}

/// Objective of a computed schedule, evaluated on the rounds it actually plays.
pub fn schedule_objective_of(s: &BatchSchedule) -> f64 {
    let l: Vec<f64> = s.effective_lengths().iter().map(|&v| v as f64).collect();
    schedule_objective(&l, s.d_tilde, s.h as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridOptimum {
    pub lengths: Vec<f64>,
    pub objective: f64,
    pub points_per_axis: usize,
}

fn geometric_grid(t: f64, n: usize) -> Vec<f64> {
    let mut g = vec![0.0];
    if n <= 1 {
        g.push(t);
        return g;
    }
    let ratio = t.powf(1.0 / (n - 1) as f64);
    g.extend((0..n).map(|i| ratio.powi(i as i32)));
    *g.last_mut().unwrap() = t;
    g
}

/// Exhaustive search over geometric grids on `T_1..T_{M-1}` (plus 0). The
/// last length is set to the smallest feasible value `max(T - Σ, 0)`, which
/// is optimal because the objective is non-decreasing in it.
pub fn brute_force_schedule_opt(t: u64, d_tilde: f64, h: u64, m: usize, grid_points: usize) -> Result<GridOptimum> {
    if m == 0 || m > 5 {
        return Err(invalid("M must lie in 1..=5"));
    }
    if grid_points == 0 || grid_points > 1_000_000 {
        return Err(invalid("grid_points must lie in 1..=1e6"));
    }
    let tf = t as f64;
    let hf = h as f64;
    if m == 1 {
        return Ok(GridOptimum {
            lengths: vec![tf],
            objective: tf,
            points_per_axis: 1,
        });
    }
    let free = m - 1;
    let per_axis = ((grid_points as f64).powf(1.0 / free as f64).floor() as usize).max(2);
    let grid = geometric_grid(tf, per_axis);

    let better = |a: &(f64, Vec<f64>), b: &(f64, Vec<f64>)| match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Equal => a.1.partial_cmp(&b.1).is_some_and(|o| o.is_lt()),
        o => o.is_lt(),
    };

    let best = grid
        .par_iter()
        .map(|&first| {
            let mut best: Option<(f64, Vec<f64>)> = None;
            let mut idx = vec![0usize; free - 1];
            let mut lengths = vec![0.0; m];
            loop {
                lengths[0] = first;
                for (j, &i) in idx.iter().enumerate() {
                    lengths[j + 1] = grid[i];
                }
                let partial: f64 = lengths[..free].iter().sum();
                lengths[m - 1] = (tf - partial).max(0.0);
                let obj = schedule_objective(&lengths, d_tilde, hf);
                let cand = (obj, lengths.clone());
                if obj.is_finite() && best.as_ref().is_none_or(|b| better(&cand, b)) {
                    best = Some(cand);
                }
                // Odometer over the remaining free axes.
                let mut pos = 0;
                loop {
                    if pos == idx.len() {
                        return best;
                    }
                    idx[pos] += 1;
                    if idx[pos] < grid.len() {
                        break;
                    }
                    idx[pos] = 0;
                    pos += 1;
                }
            }
        })
        .reduce(|| None, |a, b| match (a, b) {
            (Some(a), Some(b)) => Some(if better(&b, &a) { b } else { a }),
            (a, None) => a,
            (None, b) => b,
        });

    let (objective, lengths) = best.ok_or_else(|| invalid("no feasible schedule on the grid"))?;
    Ok(GridOptimum {
        lengths,
        objective,
        points_per_axis: per_axis,
    })
}

/// Grid optimum of the schedule objective next to its lower bound and the
/// objective of the computed schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleCheck {
    pub t: u64,
    pub d_tilde: f64,
    pub h: u64,
    pub m: usize,
    pub grid: GridOptimum,
    pub lower_bound: f64,
    pub computed_objective: f64,
    /// `computed_objective / grid.objective`.
    pub ratio: f64,
    /// `grid.objective >= lower_bound` (relative slack 1e-9).
    pub lower_ok: bool,
    /// `ratio <= 8`.
    pub ratio_ok: bool,
}

pub fn check_schedule_bound(t: u64, d_tilde: f64, h: u64, m: usize, grid_points: usize) -> Result<ScheduleCheck> {
    let grid = brute_force_schedule_opt(t, d_tilde, h, m, grid_points)?;
    let lower_bound = schedule_lower_bound(t, d_tilde, h, m);
    let computed_objective = schedule_objective_of(&schedule_from_dtilde(t, d_tilde, h, m)?);
    let ratio = computed_objective / grid.objective;
    Ok(ScheduleCheck {
        t,
        d_tilde,
        h,
        m,
        lower_ok: grid.objective >= lower_bound * (1.0 - 1e-9),
        ratio_ok: ratio <= 8.0,
        grid,
        lower_bound,
        computed_objective,
        ratio,
    })
}
