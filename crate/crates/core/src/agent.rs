//! The batched elimination agent.
//!
//! Batch 1 plays a G-optimal design on every observed context set. Each later
//! batch filters the context set through the confidence intervals of every
//! earlier batch and plays the exploration mixture learned at the end of the
//! previous batch. Within a batch the first half of the rounds feeds a ridge
//! fit, the second half feeds the next exploration policy.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::{g_optimal_design_default, sample_design, DesignWeights};
use crate::environment::{BanditInstance, ContextSet};
use crate::error::{invalid, Error, Result};
use crate::exploration::{ExplorationLearner, MixturePolicy};
use crate::matrix::{dot, mul_vec_into, quad_form_slice, rank_one_update_inverse_in_place, SymMatrix};
use crate::schedule::{
    d_tilde, schedule_from_dtilde, schedule_from_lengths, BatchSchedule, DTildeRule, ScheduleOptions,
};

/// Ridge regression state `Λ = λI + Σ x xᵀ`, `θ̂ = Λ⁻¹ Σ r x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeState {
    pub lambda_reg: f64,
    pub lambda: SymMatrix,
    pub lambda_inv: SymMatrix,
    pub theta_hat: Vec<f64>,
    pub n_points: usize,
    rhs: Vec<f64>,
}

impl RidgeState {
    /// State with no data: `Λ = λI`, `θ̂ = 0`.
    pub fn prior(dim: usize, lambda_reg: f64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        if !(lambda_reg > 0.0 && lambda_reg.is_finite()) {
            return Err(invalid("ridge parameter must be positive"));
        }
        Ok(Self {
            lambda_reg,
            lambda: SymMatrix::scaled_identity(dim, lambda_reg),
            lambda_inv: SymMatrix::scaled_identity(dim, 1.0 / lambda_reg),
            theta_hat: vec![0.0; dim],
            n_points: 0,
            rhs: vec![0.0; dim],
        })
    }

    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }

    /// Adds one observation with a Sherman-Morrison update of `Λ⁻¹`.
    pub fn push(&mut self, x: &[f64], r: f64) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("ridge feature"));
        }
        if !r.is_finite() {
            return Err(Error::NonFinite("ridge reward"));
        }
        rank_one_update_inverse_in_place(&mut self.lambda_inv, x)?;
        self.lambda.add_outer(x, 1.0);
        for (b, v) in self.rhs.iter_mut().zip(x) {
            *b += r * v;
        }
        self.n_points += 1;
        self.update_theta();
        Ok(())
    }

    /// Recomputes `Λ⁻¹` and `θ̂` from `Λ` by a fresh factorisation.
    pub fn refactor(&mut self) -> Result<()> {
        self.lambda_inv = self.lambda.inverse()?;
        self.update_theta();
        Ok(())
    }

    fn update_theta(&mut self) {
        mul_vec_into(self.lambda_inv.as_slice(), &self.rhs, &mut self.theta_hat);
    }

    /// `x^T Λ⁻¹ x`, clamped at zero.
    pub fn variance(&self, x: &[f64]) -> f64 {
        quad_form_slice(self.lambda_inv.as_slice(), x).max(0.0)
    }

    pub fn estimate(&self, x: &[f64]) -> f64 {
        dot(x, &self.theta_hat)
    }
}

/// Ridge fit by a direct solve.
pub fn ridge_fit(dim: usize, features: &[Vec<f64>], rewards: &[f64], lambda_reg: f64) -> Result<RidgeState> {
    if features.len() != rewards.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            found: rewards.len(),
        });
    }
    let mut s = RidgeState::prior(dim, lambda_reg)?;
    for (x, &r) in features.iter().zip(rewards) {
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("ridge feature"));
        }
        if !r.is_finite() {
            return Err(Error::NonFinite("ridge reward"));
        }
        s.lambda.add_outer(x, 1.0);
        for (b, v) in s.rhs.iter_mut().zip(x) {
            *b += r * v;
        }
    }
    s.n_points = features.len();
    s.refactor()?;
    Ok(s)
}

/// Half-width `α sqrt(x^T Λ⁻¹ x)` of the confidence interval at `x`.
pub fn conf_width(state: &RidgeState, x: &[f64], alpha: f64) -> f64 {
    alpha * state.variance(x).sqrt()
}

/// Result of filtering a context set through confidence intervals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Elimination {
    /// Surviving arm indices, ascending. Never empty.
    pub survivors: Vec<usize>,
    /// The intersection was empty and every arm was kept instead.
    pub fallback: bool,
}

/// Keeps the arms whose upper confidence bound reaches the best lower bound
/// under every state.
pub fn eliminate(x: &ContextSet, states: &[RidgeState], alpha: f64) -> Result<Elimination> {
    if x.is_empty() {
        return Err(invalid("elimination needs a non-empty context set"));
    }
    let k = x.len();
    let mut centers = vec![0.0; states.len() * k];
    let mut widths = vec![0.0; states.len() * k];
    for (s, st) in states.iter().enumerate() {
        for (i, arm) in x.iter().enumerate() {
            centers[s * k + i] = st.estimate(arm);
            widths[s * k + i] = conf_width(st, arm, alpha);
        }
    }
    let mut keep = vec![true; k];
    survival_mask(&centers, &widths, k, states.len(), &mut keep);
    let survivors: Vec<usize> = (0..k).filter(|&i| keep[i]).collect();
    Ok(if survivors.is_empty() {
        Elimination {
            survivors: (0..k).collect(),
            fallback: true,
        }
    } else {
        Elimination {
            survivors,
            fallback: false,
        }
    })
}

/// `keep[i]` becomes false unless arm `i` survives each of the first
/// `n_states` states. Bounds are laid out state-major.
fn survival_mask(centers: &[f64], widths: &[f64], k: usize, n_states: usize, keep: &mut [bool]) {
    keep.iter_mut().for_each(|b| *b = true);
    for s in 0..n_states {
        let c = &centers[s * k..(s + 1) * k];
        let w = &widths[s * k..(s + 1) * k];
        let best_lcb = c.iter().zip(w).map(|(c, w)| c - w).fold(f64::NEG_INFINITY, f64::max);
        for i in 0..k {
            if c[i] + w[i] < best_lcb {
                keep[i] = false;
            }
        }
    }
}

/// How the confidence multiplier `α` is set when not given explicitly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaRule {
    /// `sqrt(50 ln(KTd/δ))`.
    #[default]
    Conservative,
    /// Gaussian tail union-bounded over `K` arms, `T` rounds and `M + 1`
    /// states, plus the ridge bias: `sqrt(2 ln(2KT(M+1)/δ)) + sqrt(dλ)`.
    RidgeUnionBound,
}

/// Optional replacements for the derived agent constants.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentOverrides {
    pub delta: Option<f64>,
    pub alpha: Option<f64>,
    pub alpha_rule: Option<AlphaRule>,
    pub lambda_reg: Option<f64>,
    pub l: Option<f64>,
    pub kappa: Option<f64>,
    pub dtilde_rule: Option<DTildeRule>,
    /// Explicit batch lengths; their count must equal `M`.
    pub schedule_lengths: Option<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub t: u64,
    pub m: usize,
    pub d: usize,
    pub k: usize,
    pub delta: f64,
    pub alpha: f64,
    pub lambda_reg: f64,
    pub l: f64,
    pub kappa: f64,
    pub schedule: BatchSchedule,
    /// `name=value` for every constant that was not derived.
    pub overrides: Vec<String>,
}

impl AgentConfig {
    /// Constants derived from `(T, M, d, K)`: `δ = 1/T³` (at most 1/2),
    /// `λ = 10/T`, `α = sqrt(50 ln(KTd/δ))`, `L = 1/(200 ln(Td/δ))`, `κ = 1/T²`.
    pub fn new(t: u64, m: usize, d: usize, k: usize) -> Result<Self> {
        Self::with_overrides(t, m, d, k, &AgentOverrides::default())
    }

    pub fn with_overrides(t: u64, m: usize, d: usize, k: usize, o: &AgentOverrides) -> Result<Self> {
        if t == 0 || m == 0 || d == 0 || k == 0 {
            return Err(invalid("T, M, d and K must be positive"));
        }
        let (tf, df, kf) = (t as f64, d as f64, k as f64);
        let mut overrides = Vec::new();
        let mut note = |name: &str, v: String| overrides.push(format!("{name}={v}"));

        let delta = match o.delta {
            Some(v) => {
                note("delta", v.to_string());
                v
            }
            None => tf.powi(-3).min(0.5),
        };
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid("delta must lie in (0, 1)"));
        }
        let lambda_reg = match o.lambda_reg {
            Some(v) => {
                note("lambda_reg", v.to_string());
                v
            }
            None => 10.0 / tf,
        };
        let rule = o.alpha_rule.unwrap_or_default();
        if rule != AlphaRule::Conservative {
            note("alpha_rule", format!("{rule:?}"));
        }
        let alpha = match o.alpha {
            Some(v) => {
                note("alpha", v.to_string());
                v
            }
            None => match rule {
                AlphaRule::Conservative => (50.0 * (kf * tf * df / delta).ln()).sqrt(),
                AlphaRule::RidgeUnionBound => {
                    (2.0 * (2.0 * kf * tf * (m as f64 + 1.0) / delta).ln()).sqrt() + (df * lambda_reg).sqrt()
                }
            },
        };
        let l = match o.l {
            Some(v) => {
                note("L", v.to_string());
                v
            }
            None => 1.0 / (200.0 * (tf * df / delta).ln()),
        };
        let kappa = match o.kappa {
            Some(v) => {
                note("kappa", v.to_string());
                v
            }
            None => 1.0 / (tf * tf),
        };
        let dtilde_rule = match o.dtilde_rule {
            Some(r) => {
                note("dtilde_rule", format!("{r:?}"));
                r
            }
            None => DTildeRule::default(),
        };
        for (name, v) in [("lambda_reg", lambda_reg), ("alpha", alpha), ("L", l), ("kappa", kappa)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }

        let opts = ScheduleOptions {
            dtilde_rule,
            lambda: Some(lambda_reg),
        };
        let dt = d_tilde(t, d, k, delta, &opts);
        let mut schedule = match &o.schedule_lengths {
            Some(lengths) => {
                if lengths.len() != m {
                    return Err(invalid(format!("{} batch lengths given for M={m}", lengths.len())));
                }
                note("schedule_lengths", format!("{lengths:?}"));
                schedule_from_lengths(t, lengths, dt, d.min(k) as u64)?
            }
            None => schedule_from_dtilde(t, dt, d.min(k) as u64, m)?,
        };
        schedule.dtilde_rule = dtilde_rule;

        Ok(Self {
            t,
            m,
            d,
            k,
            delta,
            alpha,
            lambda_reg,
            l,
            kappa,
            schedule,
            overrides,
        })
    }

    fn check_against(&self, instance: &BanditInstance) -> Result<()> {
        if self.d != instance.d() {
            return Err(Error::DimensionMismatch {
                expected: instance.d(),
                found: self.d,
            });
        }
        if self.k != instance.k() {
            return Err(Error::DimensionMismatch {
                expected: instance.k(),
                found: self.k,
            });
        }
        if self.schedule.t != self.t || self.schedule.m != self.m {
            return Err(invalid("schedule does not match T and M"));
        }
        Ok(())
    }
}

pub const NO_SUPPORT: u32 = u32::MAX;

/// Everything one run records. Per-round vectors have length `T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub per_round_regret: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub per_batch_regret: Vec<f64>,
    /// Number of arms the acting policy chose from.
    pub survivor_counts: Vec<u32>,
    /// Identity of the acting policy: 0 for the design, `k` for the mixture
    /// learned at the end of batch `k`.
    pub policy_ids: Vec<u32>,
    /// Mixture component played, 1-based; 0 on design rounds.
    pub mixture_epochs: Vec<u32>,
    /// Index of the played arm within the round's context set.
    pub played: Vec<u32>,
    /// Support index of the round's context set; [`NO_SUPPORT`] for laws
    /// without finite support.
    pub support_ids: Vec<u32>,
    /// Batch endpoints the run followed.
    pub endpoints: Vec<u64>,
    /// Number of epochs in each learned mixture.
    pub policy_epoch_counts: Vec<usize>,
    /// Rounds where some best arm was filtered out (before any fallback).
    pub eliminated_optimal_count: u64,
    /// Rounds where the acting filter was empty and all arms were kept.
    pub empty_intersection_count: u64,
    /// Same, for the filter feeding the exploration learner.
    pub learning_fallback_count: u64,
    /// `(state, round, arm)` triples checked against `|x^T(θ - θ̂)| <= α‖x‖_{Λ⁻¹}`.
    pub ci_checks: u64,
    pub ci_violations: u64,
    /// Rounds checked against the survivor spread bound, and failures.
    pub width_checks: u64,
    pub width_violations: u64,
}

impl RegretTrace {
    pub fn total_regret(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Every confidence interval used during the run held.
    pub fn coverage_held(&self) -> bool {
        self.ci_violations == 0
    }

    /// The acting policy only changed at batch endpoints, and at most `m`
    /// policies acted.
    pub fn follows_batches(&self, m: usize) -> bool {
        let mut distinct = usize::from(!self.policy_ids.is_empty());
        for t in 1..self.policy_ids.len() {
            if self.policy_ids[t] != self.policy_ids[t - 1] {
                if !self.endpoints.contains(&(t as u64)) {
                    return false;
                }
                distinct += 1;
            }
        }
        distinct <= m
    }
}

/// Runs the agent for `config.t` rounds on `instance`.
pub fn run_batch_algorithm<R: Rng + ?Sized>(
    instance: &BanditInstance,
    config: &AgentConfig,
    rng: &mut R,
) -> Result<RegretTrace> {
    config.check_against(instance)?;
    let t_total = config.t as usize;
    let (d, k, alpha) = (config.d, config.k, config.alpha);
    let lengths = config.schedule.effective_lengths();
    let last = lengths.iter().rposition(|&l| l > 0).unwrap_or(0);

    let mut tr = RegretTrace {
        per_round_regret: Vec::with_capacity(t_total),
        cumulative: Vec::with_capacity(t_total),
        per_batch_regret: vec![0.0; config.m],
        survivor_counts: Vec::with_capacity(t_total),
        policy_ids: Vec::with_capacity(t_total),
        mixture_epochs: Vec::with_capacity(t_total),
        played: Vec::with_capacity(t_total),
        support_ids: Vec::with_capacity(t_total),
        endpoints: config.schedule.endpoints.clone(),
        policy_epoch_counts: Vec::new(),
        eliminated_optimal_count: 0,
        empty_intersection_count: 0,
        learning_fallback_count: 0,
        ci_checks: 0,
        ci_violations: 0,
        width_checks: 0,
        width_violations: 0,
    };

    let mut states: Vec<RidgeState> = Vec::new();
    let mut policy: Option<MixturePolicy> = None;
    let mut design_cache: HashMap<usize, DesignWeights> = HashMap::new();
    let max_states = config.m + 1;
    let mut means = vec![0.0; k];
    let mut centers = vec![0.0; max_states * k];
    let mut widths = vec![0.0; max_states * k];
    let mut keep = vec![true; k];
    let mut survivors: Vec<usize> = Vec::with_capacity(k);
    let mut cum = 0.0;

    for (kb, &len) in lengths.iter().enumerate() {
        if len == 0 {
            continue;
        }
        let len = len as usize;
        let first_half = len.div_ceil(2);
        let fit_here = kb < last;
        let mut ridge = RidgeState::prior(d, config.lambda_reg)?;
        let mut learner = if fit_here {
            Some(ExplorationLearner::new(d, config.kappa, config.l)?.with_audit(false))
        } else {
            None
        };
        let acting_states = states.len();
        debug_assert_eq!(acting_states, kb);

        for r in 0..len {
            let draw = instance.draw_context(rng);
            let set = draw.set.as_ref();
            if set.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    found: set.len(),
                });
            }
            let mut best = f64::NEG_INFINITY;
            for (i, x) in set.iter().enumerate() {
                means[i] = instance.mean(x);
                best = best.max(means[i]);
            }

            // Bounds for every state the round filters with: the earlier
            // batches' states, plus this batch's once its first half is fit.
            let learning = fit_here && r >= first_half;
            let n_states = acting_states + usize::from(learning);
            let mut round_covered = true;
            for s in 0..n_states {
                let st = if s < acting_states { &states[s] } else { &ridge };
                for (i, x) in set.iter().enumerate() {
                    let c = st.estimate(x);
                    let w = conf_width(st, x, alpha);
                    centers[s * k + i] = c;
                    widths[s * k + i] = w;
                    if (means[i] - c).abs() > w {
                        tr.ci_violations += 1;
                        round_covered = false;
                    }
                }
            }
            tr.ci_checks += (n_states * k) as u64;

            let (arm, epoch_tag) = if kb == 0 {
                let fresh;
                let w = match draw.support {
                    Some(idx) => {
                        if let std::collections::hash_map::Entry::Vacant(e) = design_cache.entry(idx) {
                            e.insert(g_optimal_design_default(set)?);
                        }
                        &design_cache[&idx]
                    }
                    None => {
                        fresh = g_optimal_design_default(set)?;
                        &fresh
                    }
                };
                survivors.clear();
                survivors.extend(0..k);
                (sample_design(w, rng), 0)
            } else {
                survival_mask(&centers, &widths, k, acting_states, &mut keep);
                survivors.clear();
                survivors.extend((0..k).filter(|&i| keep[i]));
                if (0..k).any(|i| means[i] == best && !keep[i]) {
                    tr.eliminated_optimal_count += 1;
                }
                if survivors.is_empty() {
                    tr.empty_intersection_count += 1;
                    survivors.extend(0..k);
                } else if round_covered {
                    let prev = (acting_states - 1) * k;
                    let (mut lo, mut hi, mut wmax) = (f64::INFINITY, f64::NEG_INFINITY, 0.0_f64);
                    for &i in &survivors {
                        lo = lo.min(means[i]);
                        hi = hi.max(means[i]);
                        wmax = wmax.max(widths[prev + i]);
                    }
                    let bound = (4.0 * wmax).min(2.0);
                    tr.width_checks += 1;
                    let ok = hi - lo <= bound + 1e-9 * (1.0 + bound);
                    debug_assert!(ok, "survivor spread {} exceeds {bound}", hi - lo);
                    if !ok {
                        tr.width_violations += 1;
                    }
                }
                let p = policy.as_ref().expect("a policy exists after the first batch");
                let (arm, j) = p.act_among(set, &survivors, rng)?;
                (arm, j as u32 + 1)
            };

            let x = set.arm(arm);
            let reward = instance.sample_reward(x, rng)?;
            let regret = best - means[arm];
            cum += regret;
            tr.per_round_regret.push(regret);
            tr.cumulative.push(cum);
            tr.per_batch_regret[kb] += regret;
            tr.survivor_counts.push(survivors.len() as u32);
            tr.policy_ids.push(kb as u32);
            tr.mixture_epochs.push(epoch_tag);
            tr.played.push(arm as u32);
            tr.support_ids.push(draw.support.map_or(NO_SUPPORT, |s| s as u32));

            if fit_here && r < first_half {
                ridge.push(x, reward)?;
                if r + 1 == first_half {
                    ridge.refactor()?;
                }
            }
            if learning {
                survival_mask(&centers, &widths, k, n_states, &mut keep);
                let idx: Vec<usize> = (0..k).filter(|&i| keep[i]).collect();
                let filtered = if idx.is_empty() {
                    tr.learning_fallback_count += 1;
                    set.clone()
                } else {
                    set.subset(&idx)
                };
                learner.as_mut().expect("learner exists while fitting").step(&filtered)?;
            }
        }

        if let Some(learner) = learner {
            let p = learner.finish()?;
            tr.policy_epoch_counts.push(p.epochs.len());
            policy = Some(p);
            states.push(ridge);
        }
    }
    debug_assert_eq!(tr.per_round_regret.len(), t_total);
    Ok(tr)
}
