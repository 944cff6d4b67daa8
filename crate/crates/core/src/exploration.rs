//! Offline learning of an exploration policy from observed context sets.
//!
//! The learner walks through the samples once. Each sample contributes its
//! highest-variance arm (variance measured against the current epoch
//! matrix), clipped so its variance is at most `L`, to a running Gram matrix
//! `U`. When `det U` has doubled since the epoch started, `U` becomes the
//! next epoch matrix. The output plays epoch `j`'s variance-argmax rule with
//! probability proportional to the number of samples seen during epoch `j`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::ContextSet;
use crate::error::{invalid, Error, Result};
use crate::matrix::{log_det, psd_by_cholesky, quad_form_slice, rank_one_update_inverse_in_place, SymMatrix};

/// Exact refactorisations of `U^{-1}` happen at least this often.
const REFRESH_EVERY: u64 = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    /// `z^T W^{-1} z` before clipping.
    pub raw_variance: f64,
    /// `min(sqrt(L / raw_variance), 1)`.
    pub clip_factor: f64,
}

/// Shrinks `z` so that its variance under `w_inv` is at most `l`.
pub fn clip_vector(z: &[f64], w_inv: &SymMatrix, l: f64) -> Result<(Vec<f64>, ClipRecord)> {
    if z.len() != w_inv.dim() {
        return Err(Error::DimensionMismatch {
            expected: w_inv.dim(),
            found: z.len(),
        });
    }
    if !(l > 0.0) {
        return Err(invalid("L must be positive"));
    }
    let raw = w_inv.quad_form(z);
    let factor = clip_factor(raw, l);
    Ok((
        z.iter().map(|v| v * factor).collect(),
        ClipRecord {
            raw_variance: raw,
            clip_factor: factor,
        },
    ))
}

fn clip_factor(raw: f64, l: f64) -> f64 {
    if raw > l {
        (l / raw).sqrt()
    } else {
        1.0
    }
}

/// Index of the largest `x^T A x` over `indices`, lowest index on ties.
pub(crate) fn argmax_quad(set: &ContextSet, indices: impl Iterator<Item = usize>, a: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for i in indices {
        let v = quad_form_slice(a, set.arm(i));
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRule {
    pub matrix: SymMatrix,
    pub inverse: SymMatrix,
    /// Number of samples processed while this epoch was open.
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixturePolicy {
    pub epochs: Vec<EpochRule>,
    pub m: u64,
    pub kappa: f64,
    pub l: f64,
}

impl MixturePolicy {
    pub fn weights(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.count as f64 / self.m as f64).collect()
    }

    /// Draws an epoch with probability `count / m`, exactly.
    pub fn sample_epoch<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let mut u = rng.gen_range(0..self.m);
        for (j, e) in self.epochs.iter().enumerate() {
            if u < e.count {
                return j;
            }
            u -= e.count;
        }
        self.epochs.len() - 1
    }

    /// The arm epoch `j` would play among `indices` of `set`.
    pub fn epoch_choice(&self, j: usize, set: &ContextSet, indices: &[usize]) -> Option<usize> {
        argmax_quad(set, indices.iter().copied(), self.epochs[j].inverse.as_slice()).map(|(i, _)| i)
    }

    /// Acts on the arms of `set` listed in `indices`. Returns `(arm, epoch)`.
    pub fn act_among<R: Rng + ?Sized>(
        &self,
        set: &ContextSet,
        indices: &[usize],
        rng: &mut R,
    ) -> Result<(usize, usize)> {
        if indices.is_empty() {
            return Err(invalid("cannot act on an empty context set"));
        }
        let j = self.sample_epoch(rng);
        let arm = self.epoch_choice(j, set, indices).expect("non-empty");
        Ok((arm, j))
    }
}

/// Plays the learned mixture on `x`.
pub fn mixture_act<R: Rng + ?Sized>(policy: &MixturePolicy, x: &ContextSet, rng: &mut R) -> Result<usize> {
    let all: Vec<usize> = (0..x.len()).collect();
    policy.act_among(x, &all, rng).map(|(a, _)| a)
}

/// What one learning step did.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub arm: usize,
    pub clipped: Vec<f64>,
    pub clip: ClipRecord,
    /// Epoch (0-based) whose matrix measured the variance.
    pub epoch: usize,
    pub opened_epoch: bool,
}

/// Sequential state of the learner; [`learn_exploration_policy`] drives it
/// over a whole sample.
#[derive(Clone, Debug)]
pub struct ExplorationLearner {
    dim: usize,
    kappa: f64,
    l: f64,
    u: SymMatrix,
    u_inv: SymMatrix,
    log_det_u: f64,
    epoch_log_det: f64,
    epochs: Vec<EpochRule>,
    steps: u64,
    since_refresh: u64,
    audit: bool,
}

impl ExplorationLearner {
    pub fn new(dim: usize, kappa: f64, l: f64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        if !(kappa > 0.0 && kappa.is_finite()) || !(l > 0.0 && l.is_finite()) {
            return Err(invalid("kappa and L must be positive"));
        }
        let u = SymMatrix::scaled_identity(dim, kappa);
        let log_det_u = dim as f64 * kappa.ln();
        Ok(Self {
            dim,
            kappa,
            l,
            u_inv: SymMatrix::scaled_identity(dim, 1.0 / kappa),
            epochs: vec![EpochRule {
                matrix: u.clone(),
                inverse: SymMatrix::scaled_identity(dim, 1.0 / kappa),
                count: 0,
            }],
            u,
            log_det_u,
            epoch_log_det: log_det_u,
            steps: 0,
            since_refresh: 0,
            audit: cfg!(debug_assertions),
        })
    }

    /// Enables or disables the per-step check `U_{i-1} ≼ 2 W`.
    pub fn with_audit(mut self, audit: bool) -> Self {
        self.audit = audit;
        self
    }

    pub fn current_epoch(&self) -> usize {
        self.epochs.len() - 1
    }

    pub fn epoch_matrix(&self) -> &SymMatrix {
        &self.epochs[self.current_epoch()].matrix
    }

    pub fn epoch_inverse(&self) -> &SymMatrix {
        &self.epochs[self.current_epoch()].inverse
    }

    pub fn gram(&self) -> &SymMatrix {
        &self.u
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    /// The clipped arm epoch `current` would contribute for `set`, without
    /// changing any state.
    pub fn preview(&self, set: &ContextSet) -> Option<(usize, Vec<f64>, ClipRecord)> {
        let inv = self.epoch_inverse();
        let (arm, raw) = argmax_quad(set, 0..set.len(), inv.as_slice())?;
        let factor = clip_factor(raw, self.l);
        let clipped = set.arm(arm).iter().map(|v| v * factor).collect();
        Some((
            arm,
            clipped,
            ClipRecord {
                raw_variance: raw,
                clip_factor: factor,
            },
        ))
    }

    /// Processes one sample. Empty sets only count towards the current epoch.
    pub fn step(&mut self, set: &ContextSet) -> Result<Option<StepRecord>> {
        if !set.is_empty() && set.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: set.dim(),
            });
        }
        let epoch = self.current_epoch();
        self.epochs[epoch].count += 1;
        self.steps += 1;
        let Some((arm, clipped, clip)) = self.preview(set) else {
            return Ok(None);
        };

        if self.audit {
            self.check_sandwich(self.steps as usize)?;
        }
        let q = rank_one_update_inverse_in_place(&mut self.u_inv, &clipped)?;
        self.u.add_outer(&clipped, 1.0);
        self.log_det_u += q.ln_1p();
        self.since_refresh += 1;
        if self.since_refresh >= REFRESH_EVERY {
            self.refresh()?;
        }

        let opened = self.log_det_u > std::f64::consts::LN_2 + self.epoch_log_det;
        if opened {
            self.refresh()?;
            // Re-test on the exact value so the decision never rests on drift.
            if self.log_det_u > std::f64::consts::LN_2 + self.epoch_log_det {
                self.epoch_log_det = self.log_det_u;
                self.epochs.push(EpochRule {
                    matrix: self.u.clone(),
                    inverse: self.u_inv.clone(),
                    count: 0,
                });
            }
        }
        Ok(Some(StepRecord {
            arm,
            clipped,
            clip,
            epoch,
            opened_epoch: self.current_epoch() != epoch,
        }))
    }

    fn refresh(&mut self) -> Result<()> {
        self.u_inv = self.u.inverse()?;
        self.log_det_u = log_det(&self.u)?;
        self.since_refresh = 0;
        Ok(())
    }

    fn check_sandwich(&self, index: usize) -> Result<()> {
        let w = self.epoch_matrix();
        let gap = w.lin_comb(2.0, &self.u, -1.0)?;
        let shift = (1e-9 * w.trace()).max(crate::matrix::PSD_ABS_FLOOR);
        if psd_by_cholesky(gap.as_slice(), self.dim, shift) {
            Ok(())
        } else {
            Err(Error::HypothesisViolated {
                index,
                reason: "running Gram matrix exceeds twice the epoch matrix".into(),
            })
        }
    }

    pub fn finish(self) -> Result<MixturePolicy> {
        if self.steps == 0 {
            return Err(invalid("exploration policy needs at least one sample"));
        }
        Ok(MixturePolicy {
            epochs: self.epochs,
            m: self.steps,
            kappa: self.kappa,
            l: self.l,
        })
    }
}

/// Learns the mixture policy from `contexts` with regulariser `kappa` and clip level `l`.
pub fn learn_exploration_policy(contexts: &[ContextSet], kappa: f64, l: f64) -> Result<MixturePolicy> {
    let dim = contexts
        .iter()
        .find(|s| !s.is_empty())
        .map(|s| s.dim())
        .unwrap_or(1);
    learn_with(contexts.iter(), dim, kappa, l, cfg!(debug_assertions))
}

pub(crate) fn learn_with<'a>(
    contexts: impl Iterator<Item = &'a ContextSet>,
    dim: usize,
    kappa: f64,
    l: f64,
    audit: bool,
) -> Result<MixturePolicy> {
    let mut learner = ExplorationLearner::new(dim, kappa, l)?.with_audit(audit);
    for set in contexts {
        learner.step(set)?;
    }
    learner.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::random_unit_vector;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(v: &[&[f64]]) -> ContextSet {
        ContextSet::from_vectors(&v.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn random_sets(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize) -> Vec<ContextSet> {
        (0..n)
            .map(|_| {
                let v: Vec<Vec<f64>> = (0..k).map(|_| random_unit_vector(rng, d)).collect();
                ContextSet::from_vectors(&v).unwrap()
            })
            .collect()
    }

    #[test]
    fn clip_examples() {
        let w_inv = SymMatrix::identity(2);
        let l = 1.0;
        let (z, rec) = clip_vector(&[0.5, 0.0], &w_inv, l).unwrap();
        assert_eq!(z, vec![0.5, 0.0]);
        assert_eq!(rec.clip_factor, 1.0);
        let (z, rec) = clip_vector(&[2.0, 0.0], &w_inv, l).unwrap();
        assert_eq!(z, vec![1.0, 0.0]);
        assert_eq!(rec.clip_factor, 0.5);
        let (z, rec) = clip_vector(&[0.0, 0.0], &w_inv, l).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
        assert_eq!((rec.raw_variance, rec.clip_factor), (0.0, 1.0));
    }

    #[test]
    fn singleton_sets_always_select_the_only_arm() {
        let sets = vec![set(&[&[1.0, 0.0]]); 50];
        let policy = learn_exploration_policy(&sets, 1e-3, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(mixture_act(&policy, &sets[0], &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn single_sample_picks_the_longer_vector() {
        let z = set(&[&[1.0, 0.0], &[0.0, 2.0]]);
        let policy = learn_exploration_policy(std::slice::from_ref(&z), 1.0, 1.0).unwrap();
        assert_eq!(policy.epochs.len(), 1);
        assert_eq!(policy.weights(), vec![1.0]);
        assert_eq!(policy.epoch_choice(0, &z, &[0, 1]), Some(1));
    }

    #[test]
    fn epoch_count_is_bounded() {
        let (d, kappa, l, m) = (2usize, 1e-4, 0.1, 200usize);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sets = random_sets(&mut rng, m, d, 2);
        let mut learner = ExplorationLearner::new(d, kappa, l).unwrap().with_audit(true);
        for s in &sets {
            learner.step(s).unwrap();
        }
        let final_log_det = log_det(learner.gram()).unwrap();
        let policy = learner.finish().unwrap();
        let eta = policy.epochs.len() as f64;
        // Every new epoch doubles the determinant, starting from κ^d.
        let counted = 1.0 + (final_log_det - d as f64 * kappa.ln()) / std::f64::consts::LN_2;
        assert!(eta <= counted.floor() + 1e-9, "{eta} epochs vs counting bound {counted}");
        // Each step raises ln det U by at most ln(1 + L).
        assert!(eta <= 1.0 + m as f64 * l.ln_1p() / std::f64::consts::LN_2);
        let stated = (d as f64 * (1.0 + m as f64 * l / kappa).log2() + 1.0).ceil();
        assert!(eta <= stated);
    }

    #[test]
    fn weights_are_exact_fractions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut sets = random_sets(&mut rng, 300, 3, 4);
        sets[10] = ContextSet::empty(3);
        let policy = learn_exploration_policy(&sets, 1e-3, 0.5).unwrap();
        assert_eq!(policy.epochs.iter().map(|e| e.count).sum::<u64>(), 300);
        assert!((policy.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_longer_arm_wins() {
        let policy = learn_exploration_policy(&[set(&[&[1.0, 0.0]])], 1.0, 1.0).unwrap();
        let x = set(&[&[1.0, 0.0], &[3.0, 0.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!((0..100).all(|_| mixture_act(&policy, &x, &mut rng).unwrap() == 1));
    }

    #[test]
    fn duplicate_best_arms_resolve_to_lowest_index() {
        let policy = learn_exploration_policy(&[set(&[&[1.0, 0.0]])], 1.0, 1.0).unwrap();
        let x = set(&[&[0.1, 0.0], &[0.0, 2.0], &[0.0, 2.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!((0..50).all(|_| mixture_act(&policy, &x, &mut rng).unwrap() == 1));
    }

    #[test]
    fn two_epoch_frequencies() {
        let e1 = EpochRule {
            matrix: SymMatrix::identity(2),
            inverse: SymMatrix::identity(2),
            count: 3,
        };
        let w2 = SymMatrix::diagonal(&[100.0, 1.0]);
        let e2 = EpochRule {
            inverse: w2.inverse().unwrap(),
            matrix: w2,
            count: 7,
        };
        let policy = MixturePolicy {
            epochs: vec![e1, e2],
            m: 10,
            kappa: 1.0,
            l: 1.0,
        };
        // Epoch 1 prefers the longer first arm, epoch 2 the second.
        let x = set(&[&[2.0, 0.0], &[0.0, 1.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100_000;
        let first = (0..n).filter(|_| mixture_act(&policy, &x, &mut rng).unwrap() == 0).count();
        assert!((first as f64 / n as f64 - 0.3).abs() < 0.01);
        assert!(mixture_act(&policy, &ContextSet::empty(2), &mut rng).is_err());
    }

    #[test]
    fn policy_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sets = random_sets(&mut rng, 40, 2, 3);
        let policy = learn_exploration_policy(&sets, 1e-2, 0.3).unwrap();
        let back: MixturePolicy = serde_json::from_str(&serde_json::to_string(&policy).unwrap()).unwrap();
        assert_eq!(back.epochs.len(), policy.epochs.len());
        assert_eq!(back.m, policy.m);
    }

    /// `m · E[min(max_x x^T U_m^{-1} x, L)]` on fresh draws.
    fn potential_at_end(sets: &[ContextSet], fresh: &[ContextSet], kappa: f64, l: f64) -> f64 {
        let d = sets[0].dim();
        let mut learner = ExplorationLearner::new(d, kappa, l).unwrap();
        for s in sets {
            learner.step(s).unwrap();
        }
        let u_inv = learner.gram().inverse().unwrap();
        let mean = fresh
            .iter()
            .map(|x| argmax_quad(x, 0..x.len(), u_inv.as_slice()).unwrap().1.min(l))
            .sum::<f64>()
            / fresh.len() as f64;
        sets.len() as f64 * mean
    }

    #[test]
    fn learned_gram_matrix_covers_the_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for &(d, k, m, kappa, l) in &[
            (2usize, 3usize, 500usize, 1e-3, 0.5),
            (4, 6, 2000, 1e-4, 0.2),
            (6, 10, 1000, 1e-2, 1.0),
        ] {
            let sets = random_sets(&mut rng, m, d, k);
            let fresh = random_sets(&mut rng, 10_000, d, k);
            let lhs = potential_at_end(&sets, &fresh, kappa, l);
            let rhs = 10.0 * d as f64 * (m as f64 * d as f64 / kappa).ln();
            assert!(lhs < rhs, "d={d}: {lhs} >= {rhs}");
        }
    }

    /// Monte Carlo estimate of `E_X[min(sqrt(max_x x^T (Λ + (n/m) κ I)^{-1} x), sqrt(L))]`
    /// where Λ collects `n` actions of `policy` on fresh draws.
    fn coverage_width(
        policy: &MixturePolicy,
        n: usize,
        d: usize,
        k: usize,
        reps: usize,
        rng: &mut ChaCha8Rng,
    ) -> f64 {
        let mut total = 0.0;
        for _ in 0..reps {
            let mut lam = SymMatrix::scaled_identity(d, n as f64 / policy.m as f64 * policy.kappa);
            for x in random_sets(rng, n, d, k) {
                let a = mixture_act(policy, &x, rng).unwrap();
                lam.add_outer(x.arm(a), 1.0);
            }
            let inv = lam.inverse().unwrap();
            let fresh = random_sets(rng, 2000, d, k);
            total += fresh
                .iter()
                .map(|x| {
                    let v = argmax_quad(x, 0..k, inv.as_slice()).unwrap().1;
                    v.sqrt().min(policy.l.sqrt())
                })
                .sum::<f64>()
                / fresh.len() as f64;
        }
        total / reps as f64
    }

    #[test]
    fn doubling_online_samples_shrinks_the_width() {
        let (d, k, m) = (3, 5, 4000);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let sets = random_sets(&mut rng, m, d, k);
        let policy = learn_exploration_policy(&sets, 1e-3, 1.0).unwrap();
        let w1 = coverage_width(&policy, 200, d, k, 20, &mut rng);
        let w2 = coverage_width(&policy, 400, d, k, 20, &mut rng);
        let ratio = w2 / w1;
        assert!((0.6..=0.85).contains(&ratio), "ratio {ratio}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn epoch_sandwich_and_monotone_epochs(seed in any::<u64>(), d in 1usize..6, k in 1usize..6,
                                              log_kappa in -8.0f64..0.0, l in 0.01f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sets = random_sets(&mut rng, 150, d, k);
            let kappa = 10f64.powf(log_kappa);
            let mut learner = ExplorationLearner::new(d, kappa, l).unwrap().with_audit(true);
            for s in &sets {
                let rec = learner.step(s).unwrap().unwrap();
                // Clipped variance never exceeds L.
                let v = learner.epochs[rec.epoch].inverse.quad_form(&rec.clipped);
                prop_assert!(v <= l * (1.0 + 1e-9));
            }
            let policy = learner.finish().unwrap();
            let kappa_i = SymMatrix::scaled_identity(d, kappa);
            prop_assert!(crate::matrix::psd_order_leq(&kappa_i, &policy.epochs[0].matrix, 1e-9).unwrap());
            for pair in policy.epochs.windows(2) {
                prop_assert!(crate::matrix::psd_order_leq(&pair[0].matrix, &pair[1].matrix, 1e-9).unwrap());
            }
        }
    }
}
