//! Monte Carlo and deterministic checks of the probabilistic tools the
//! analysis leans on: matrix concentration with a random, growing upper bound
//! `W_k`, ridge confidence intervals, the elliptical potential bound, and two
//! deterministic matrix facts.
//!
//! Every generator family produces `(W_k, X_k, Y_k)` with `Y_k = E[X_k | past,
//! W_k]` known in closed form, so no inner simulation is needed.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{random_unit_vector, ContextSet};
use crate::error::{invalid, Error, Result};
use crate::exploration::ExplorationLearner;
use crate::matrix::{
    dot, log_det, order_forms, psd_by_cholesky, psd_order_leq, rank_one_update_inverse_in_place,
    trace_exp_contraction_gap, SymMatrix, PSD_ABS_FLOOR,
};

/// Relative tolerance for counting a bound as violated.
pub const VIOLATION_TOL: f64 = 1e-9;

/// Clip level and regulariser of the exploration learner replayed by
/// [`Family::ClippedReplay`].
const REPLAY_L: f64 = 0.5;
const REPLAY_KAPPA: f64 = 0.1;
const REPLAY_SUPPORT: usize = 4;
const REPLAY_ARMS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Fixed `W` with eigenvalues `1..=d`; `X_k = B_k λ_j q_j q_jᵀ` for a
    /// uniform eigenpair `j` and `B_k ~ Bernoulli(p)`. `Y_k = (p/d) W`.
    FixedProjector,
    /// `W_k = W_{k-1} + u_k u_kᵀ` from `W_0 = I`; `X_k = B_k v vᵀ` with `v` a
    /// uniform column of the Cholesky factor of `W_k` and `B_k ~
    /// Bernoulli(p_k)`, `p_k` adapted to past successes. `Y_k = (p_k/d) W_k`.
    GrowingRankOne,
    /// Clipped arms of an exploration learner over a random finite-support
    /// context law: `X_k = z̃ z̃ᵀ`, `W_k = L W_η`, `Y_k = Σ_s P(s) z̃_s z̃_sᵀ`.
    ClippedReplay,
    /// `X_k = Y_k = (p/d) W` with the fixed `W` above: no noise at all.
    Deterministic,
    /// Scalar only: `W = 1`, `X_k ~ Uniform[0, 1]`, `Y_k = 1/2`.
    ScalarUniform,
}

fn default_p() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MartingaleSpec {
    pub d: usize,
    pub n: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub family: Family,
    /// Success probability for the Bernoulli families (initial value for
    /// the adaptive one).
    #[serde(default = "default_p")]
    pub p: f64,
}

impl MartingaleSpec {
    fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n == 0 {
            return Err(invalid("d and n must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(invalid("epsilon must lie in (0, 1)"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(invalid("p must lie in [0, 1]"));
        }
        if self.family == Family::ScalarUniform && self.d != 1 {
            return Err(invalid("the uniform family is scalar"));
        }
        Ok(())
    }
}

/// `4(ε² + 2ε + 2)/ε · ln((n+1)d/δ)`.
pub fn bound_constant(epsilon: f64, n: usize, d: usize, delta: f64) -> f64 {
    4.0 * (epsilon * epsilon + 2.0 * epsilon + 2.0) / epsilon * (((n + 1) * d) as f64 / delta).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub spec: MartingaleSpec,
    pub trials: usize,
    pub upper_violations: usize,
    pub lower_violations: usize,
    pub upper_rate: f64,
    pub lower_rate: f64,
    pub constant: f64,
    /// Condition number of the final bound matrix `W_n` across trials.
    pub bound_matrix_condition: ConditionStats,
}

impl ViolationReport {
    /// Both rates are at most `δ` plus three binomial standard deviations.
    pub fn within_delta(&self) -> bool {
        let slack = 3.0 * (self.spec.delta / self.trials as f64).sqrt();
        self.upper_rate <= self.spec.delta + slack && self.lower_rate <= self.spec.delta + slack
    }
}

struct TrialSums {
    sum_x: SymMatrix,
    sum_y: SymMatrix,
    w_n: SymMatrix,
}

struct TrialOutcome {
    upper: bool,
    lower: bool,
    condition: f64,
}

fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal)).qr().q()
}

/// `A ≼ B` by a shifted Cholesky of `B - A`, tolerance relative to `tr B`.
fn audit_leq(a: &SymMatrix, b: &SymMatrix, index: usize, what: &str) -> Result<()> {
    let gap = b.sub(a)?;
    let shift = (VIOLATION_TOL * b.trace().abs()).max(PSD_ABS_FLOOR);
    if psd_by_cholesky(gap.as_slice(), a.dim(), shift) {
        Ok(())
    } else {
        Err(Error::HypothesisViolated {
            index,
            reason: what.to_string(),
        })
    }
}

/// Fixed `W = Q diag(1..=d) Qᵀ` with its eigenpairs.
fn fixed_bound(rng: &mut ChaCha8Rng, d: usize) -> Result<(SymMatrix, Vec<(f64, Vec<f64>)>)> {
    let q = random_orthogonal(rng, d);
    let mut w = SymMatrix::zeros(d);
    let mut pairs = Vec::with_capacity(d);
    for j in 0..d {
        let v: Vec<f64> = q.column(j).iter().copied().collect();
        let lam = (j + 1) as f64;
        w.add_outer(&v, lam);
        pairs.push((lam, v));
    }
    w.check_finite()?;
    Ok((w, pairs))
}

fn draw_trial(spec: &MartingaleSpec, rng: &mut ChaCha8Rng) -> Result<TrialSums> {
    let d = spec.d;
    let mut sum_x = SymMatrix::zeros(d);
    let mut sum_y = SymMatrix::zeros(d);
    let w_n = match spec.family {
        Family::FixedProjector => {
            let (w, pairs) = fixed_bound(rng, d)?;
            // Every draw is one of these d matrices, so auditing them covers all draws.
            for (j, (lam, v)) in pairs.iter().enumerate() {
                audit_leq(&SymMatrix::outer(v).scale(*lam), &w, j, "X_k exceeds W_k")?;
            }
            let y = w.scale(spec.p / d as f64);
            for _ in 0..spec.n {
                let (lam, v) = &pairs[rng.gen_range(0..d)];
                if rng.gen_bool(spec.p) {
                    sum_x.add_outer(v, *lam);
                }
                sum_y.add_assign(&y)?;
            }
            w
        }
        Family::Deterministic => {
            let (w, _) = fixed_bound(rng, d)?;
            let y = w.scale(spec.p / d as f64);
            for _ in 0..spec.n {
                sum_x.add_assign(&y)?;
                sum_y.add_assign(&y)?;
            }
            w
        }
        Family::ScalarUniform => {
            let w = SymMatrix::identity(1);
            for _ in 0..spec.n {
                let u: f64 = rng.gen();
                sum_x.add_outer(&[1.0], u);
                sum_y.add_outer(&[1.0], 0.5);
            }
            w
        }
        Family::GrowingRankOne => {
            let mut w = SymMatrix::identity(d);
            let mut successes = 0usize;
            for k in 0..spec.n {
                let prev = w.clone();
                let s: f64 = rng.gen();
                let u: Vec<f64> = random_unit_vector(rng, d).into_iter().map(|v| v * s).collect();
                w.add_outer(&u, 1.0);
                audit_leq(&prev, &w, k, "W_k decreased")?;
                let p_k = if k == 0 {
                    spec.p
                } else {
                    0.25 + 0.5 * successes as f64 / k as f64
                };
                let chol = nalgebra::Cholesky::new(w.to_dmatrix()).ok_or(Error::NotPositiveDefinite)?;
                let l = chol.l();
                let j = rng.gen_range(0..d);
                let v: Vec<f64> = l.column(j).iter().copied().collect();
                if rng.gen_bool(p_k) {
                    successes += 1;
                    let x = SymMatrix::outer(&v);
                    audit_leq(&x, &w, k, "X_k exceeds W_k")?;
                    sum_x.add_assign(&x)?;
                }
                sum_y.add_assign(&w.scale(p_k / d as f64))?;
            }
            w
        }
        Family::ClippedReplay => {
            let mut sets = Vec::with_capacity(REPLAY_SUPPORT);
            for _ in 0..REPLAY_SUPPORT {
                let arms: Vec<Vec<f64>> = (0..REPLAY_ARMS)
                    .map(|_| {
                        let r: f64 = rng.gen_range(0.2..1.0);
                        random_unit_vector(rng, d).into_iter().map(|v| v * r).collect()
                    })
                    .collect();
                sets.push(ContextSet::from_vectors(&arms)?);
            }
            let raw: Vec<f64> = (0..REPLAY_SUPPORT).map(|_| rng.gen_range(0.1..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();

            let mut learner = ExplorationLearner::new(d, REPLAY_KAPPA, REPLAY_L)?.with_audit(false);
            let mut w_prev: Option<SymMatrix> = None;
            for k in 0..spec.n {
                let w = learner.epoch_matrix().scale(REPLAY_L);
                if let Some(prev) = &w_prev {
                    audit_leq(prev, &w, k, "W_k decreased")?;
                }
                for (s, p) in sets.iter().zip(&probs) {
                    let (_, z, _) = learner.preview(s).expect("support sets are non-empty");
                    sum_y.add_outer(&z, *p);
                }
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = REPLAY_SUPPORT - 1;
                for (s, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = s;
                        break;
                    }
                }
                let rec = learner.step(&sets[pick])?.expect("support sets are non-empty");
                let x = SymMatrix::outer(&rec.clipped);
                audit_leq(&x, &w, k, "X_k exceeds W_k")?;
                sum_x.add_assign(&x)?;
                w_prev = Some(w);
            }
            w_prev.expect("n >= 1")
        }
    };
    Ok(TrialSums { sum_x, sum_y, w_n })
}

fn judge(spec: &MartingaleSpec, sums: &TrialSums, c: f64) -> Result<TrialOutcome> {
    let cw = sums.w_n.scale(c);
    let upper_rhs = sums.sum_y.lin_comb(1.0 + spec.epsilon, &cw, 1.0)?;
    let lower_lhs = sums.sum_y.lin_comb(1.0 - spec.epsilon, &cw, -1.0)?;
    let upper = !psd_order_leq(&sums.sum_x, &upper_rhs, VIOLATION_TOL)?;
    let lower = !psd_order_leq(&lower_lhs, &sums.sum_x, VIOLATION_TOL)?;
    let ev = sums.w_n.eigenvalues()?;
    Ok(TrialOutcome {
        upper,
        lower,
        condition: ev[ev.len() - 1] / ev[0],
    })
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Draws `trials` independent sequences and counts failures of
/// `ΣX ≼ (1+ε)ΣY + cW_n` and `(1-ε)ΣY - cW_n ≼ ΣX`.
pub fn simulate_dynamic_concentration(spec: &MartingaleSpec, trials: usize, seed: u64) -> Result<ViolationReport> {
    spec.validate()?;
    if trials == 0 {
        return Err(invalid("trials must be positive"));
    }
    let c = bound_constant(spec.epsilon, spec.n, spec.d, spec.delta);
    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed, i);
            judge(spec, &draw_trial(spec, &mut rng)?, c)
        })
        .collect::<Result<_>>()?;
    let upper = outcomes.iter().filter(|o| o.upper).count();
    let lower = outcomes.iter().filter(|o| o.lower).count();
    let conds: Vec<f64> = outcomes.iter().map(|o| o.condition).collect();
    Ok(ViolationReport {
        spec: spec.clone(),
        trials,
        upper_violations: upper,
        lower_violations: lower,
        upper_rate: upper as f64 / trials as f64,
        lower_rate: lower as f64 / trials as f64,
        constant: c,
        bound_matrix_condition: ConditionStats {
            min: conds.iter().copied().fold(f64::INFINITY, f64::min),
            mean: conds.iter().sum::<f64>() / trials as f64,
            max: conds.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        },
    })
}

/// The scalar case with a fixed bound: `d` is forced to 1.
pub fn simulate_scalar_concentration(spec: &MartingaleSpec, trials: usize, seed: u64) -> Result<ViolationReport> {
    if matches!(spec.family, Family::GrowingRankOne | Family::ClippedReplay) {
        return Err(invalid("the scalar check needs a family with a fixed bound"));
    }
    let scalar = MartingaleSpec { d: 1, ..spec.clone() };
    simulate_dynamic_concentration(&scalar, trials, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

/// `Σ x_iᵀ Λ_{i-1}⁻¹ x_i` against `2 ln(det Λ_n / det Λ_0)`, where
/// `Λ_i = Λ_{i-1} + x_i x_iᵀ`. Every `x_i` must have norm at most 1 and
/// variance at most 1 under `Λ_{i-1}`.
pub fn check_elliptical_potential(vectors: &[Vec<f64>], lambda0: &SymMatrix) -> Result<PotentialCheck> {
    let d = lambda0.dim();
    let mut inv = lambda0.inverse()?;
    let mut lambda = lambda0.clone();
    let mut lhs = 0.0;
    const SLACK: f64 = 1e-12;
    for (i, x) in vectors.iter().enumerate() {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: x.len(),
            });
        }
        if dot(x, x).sqrt() > 1.0 + SLACK {
            return Err(Error::HypothesisViolated {
                index: i,
                reason: "vector norm exceeds 1".into(),
            });
        }
        let q = inv.quad_form(x);
        if q > 1.0 + SLACK {
            return Err(Error::HypothesisViolated {
                index: i,
                reason: format!("variance {q} exceeds 1"),
            });
        }
        lhs += q;
        rank_one_update_inverse_in_place(&mut inv, x)?;
        lambda.add_outer(x, 1.0);
    }
    let rhs = if vectors.is_empty() {
        0.0
    } else {
        2.0 * (log_det(&lambda)? - log_det(lambda0)?)
    };
    Ok(PotentialCheck {
        lhs,
        rhs,
        ok: lhs <= rhs + 1e-9 * (1.0 + rhs.abs()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RidgeCiSpec {
    pub d: usize,
    pub n: usize,
    pub gamma: f64,
    pub lambda_reg: f64,
    pub noise_sd: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub trials: usize,
    pub violations: usize,
    pub rate: f64,
    /// `2 exp(-γ²/2)`.
    pub bound: f64,
    /// Three binomial standard deviations at the bound.
    pub slack: f64,
    pub within_bound: bool,
}

/// Frequency with which a held-out `x` escapes
/// `|xᵀ(θ - θ̂)| <= (γ + sqrt(dλ)) sqrt(xᵀΛ⁻¹x)` under a fixed design of `n`
/// unit vectors, `θ` uniform on the cube and Gaussian noise.
pub fn check_ridge_ci(spec: &RidgeCiSpec, trials: usize, seed: u64) -> Result<CoverageReport> {
    let RidgeCiSpec {
        d,
        n,
        gamma,
        lambda_reg,
        noise_sd,
    } = *spec;
    if d == 0 || trials == 0 {
        return Err(invalid("d and trials must be positive"));
    }
    if !(lambda_reg > 0.0) || !(gamma >= 0.0) || !(noise_sd >= 0.0) {
        return Err(invalid("lambda must be positive, gamma and noise non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let design: Vec<Vec<f64>> = (0..n).map(|_| random_unit_vector(&mut rng, d)).collect();
    let mut lambda = SymMatrix::scaled_identity(d, lambda_reg);
    for x in &design {
        lambda.add_outer(x, 1.0);
    }
    let inv = lambda.inverse()?;
    let radius = gamma + (d as f64 * lambda_reg).sqrt();

    let hits: Vec<bool> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed ^ 0x5eed, i);
            let theta: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let mut rhs = vec![0.0; d];
            for x in &design {
                let r = dot(x, &theta) + noise_sd * rng.sample::<f64, _>(StandardNormal);
                for (b, v) in rhs.iter_mut().zip(x) {
                    *b += r * v;
                }
            }
            let theta_hat = inv.mul_vec(&rhs);
            let x = random_unit_vector(&mut rng, d);
            let err: f64 = x.iter().zip(theta.iter().zip(&theta_hat)).map(|(x, (a, b))| x * (a - b)).sum();
            err.abs() > radius * inv.quad_form(&x).max(0.0).sqrt()
        })
        .collect();
    let violations = hits.iter().filter(|&&h| h).count();
    let rate = violations as f64 / trials as f64;
    let bound = 2.0 * (-gamma * gamma / 2.0).exp();
    let b = bound.min(1.0);
    let slack = 3.0 * (b * (1.0 - b) / trials as f64).sqrt();
    Ok(CoverageReport {
        trials,
        violations,
        rate,
        bound,
        slack,
        within_bound: rate <= bound + slack,
    })
}

/// Counts random pairs with `Tr exp(A) + d < Tr exp(UᵀAU)` for symmetric `A`
/// and contractions `U` (spectral norm at most 1).
pub fn trace_exp_counterexamples(trials: usize, d: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..trials {
        let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a = SymMatrix::from_dmatrix(&((&g + g.transpose()) * 0.5))?;
        let q = random_orthogonal(&mut rng, d);
        let s = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(d, |_, _| rng.gen_range(0.0..=1.0)));
        let r = random_orthogonal(&mut rng, d);
        let u = q * s * r;
        if trace_exp_contraction_gap(&a, &u)? < -1e-9 {
            bad += 1;
        }
    }
    Ok(bad)
}

/// Counts random PD pairs on which the equivalent forms of `A ≼ B`
/// disagree. Pairs are ordered, reverse-ordered or unrelated in equal shares.
pub fn order_form_disagreements(trials: usize, d: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_pd = |rng: &mut ChaCha8Rng| -> Result<SymMatrix> {
        let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        SymMatrix::from_dmatrix(&(&g * g.transpose() + DMatrix::identity(d, d) * 0.1))
    };
    let mut bad = 0;
    for i in 0..trials {
        let a = random_pd(&mut rng)?;
        let p = random_pd(&mut rng)?;
        let (a, b) = match i % 3 {
            0 => (a.clone(), a.add(&p)?),
            1 => (a.add(&p)?, a),
            _ => (a, p),
        };
        let forms = order_forms(&a, &b, VIOLATION_TOL)?;
        if forms.iter().any(|&f| f != forms[0]) {
            bad += 1;
        }
    }
    Ok(bad)
}

/// Random potential checks with `Λ_0 = I` and unit vectors: returns the
/// number of failures over `trials` sequences of `len` vectors.
pub fn elliptical_potential_failures(trials: usize, d: usize, len: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eye = SymMatrix::identity(d);
    let mut bad = 0;
    for _ in 0..trials {
        let xs: Vec<Vec<f64>> = (0..len)
            .map(|_| {
                let r: f64 = rng.gen_range(0.0..=1.0);
                random_unit_vector(&mut rng, d).into_iter().map(|v| v * r).collect()
            })
            .collect();
        if !check_elliptical_potential(&xs, &eye)?.ok {
            bad += 1;
        }
    }
    Ok(bad)
}
