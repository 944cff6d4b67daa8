//! Bandit instances: the hidden parameter, the law of context sets and the
//! reward noise. Also the three hard-instance families used by the
//! lower-bound experiments.

use std::borrow::Cow;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};
use crate::matrix::dot;

const FEASIBILITY_SLACK: f64 = 1e-12;

/// An ordered list of feature vectors (duplicates allowed), stored flat.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextSet {
    dim: usize,
    data: Vec<f64>,
}

impl ContextSet {
    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<Self> {
        let dim = vectors
            .first()
            .map(|v| v.len())
            .ok_or_else(|| invalid("context set must contain at least one vector"))?;
        if dim == 0 {
            return Err(invalid("feature dimension must be positive"));
        }
        let mut data = Vec::with_capacity(dim * vectors.len());
        for v in vectors {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            data.extend_from_slice(v);
        }
        Self::from_flat(dim, data)
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(invalid("flat context data does not match the dimension"));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("context vectors"));
        }
        Ok(Self { dim, data })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn arm(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vectors(&self) -> Vec<Vec<f64>> {
        self.iter().map(|v| v.to_vec()).collect()
    }

    /// The vectors at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.arm(i));
        }
        Self {
            dim: self.dim,
            data,
        }
    }

    /// Multiplies every vector by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }
}

impl Serialize for ContextSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_vectors().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ContextSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<Vec<f64>>::deserialize(d)?;
        ContextSet::from_vectors(&v).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    /// Standard normal noise.
    #[default]
    Gaussian,
    /// Uniform on {-1, +1}.
    Rademacher,
    /// Reward in {0, 1} with mean `x^T θ`.
    Bernoulli,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContextLaw {
    FiniteSupport {
        sets: Vec<ContextSet>,
        probs: Vec<f64>,
    },
    FixedSet {
        set: ContextSet,
    },
    /// `K` independent directions uniform on the unit sphere per round.
    Generator {
        seed: u64,
    },
}

/// A drawn context set, borrowed when the law has finite support. `support`
/// is the index of the drawn set within that support.
pub struct ContextDraw<'a> {
    pub set: Cow<'a, ContextSet>,
    pub support: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceDoc", into = "InstanceDoc")]
pub struct BanditInstance {
    kind: String,
    d: usize,
    k: usize,
    theta: Vec<f64>,
    law: ContextLaw,
    noise: Noise,
    cumulative: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceDoc {
    kind: String,
    d: usize,
    #[serde(rename = "K")]
    k: usize,
    theta: Vec<f64>,
    law: ContextLaw,
    #[serde(default)]
    noise: Noise,
}

impl TryFrom<InstanceDoc> for BanditInstance {
    type Error = Error;
    fn try_from(doc: InstanceDoc) -> Result<Self> {
        let inst = BanditInstance::new(doc.kind, doc.theta, doc.k, doc.law, doc.noise)?;
        if inst.d != doc.d {
            return Err(Error::DimensionMismatch {
                expected: doc.d,
                found: inst.d,
            });
        }
        Ok(inst)
    }
}

impl From<BanditInstance> for InstanceDoc {
    fn from(i: BanditInstance) -> Self {
        InstanceDoc {
            kind: i.kind,
            d: i.d,
            k: i.k,
            theta: i.theta,
            law: i.law,
            noise: i.noise,
        }
    }
}

impl BanditInstance {
    /// Validates `θ` and every supported feature vector.
    pub fn new(
        kind: impl Into<String>,
        theta: Vec<f64>,
        k: usize,
        law: ContextLaw,
        noise: Noise,
    ) -> Result<Self> {
        let d = theta.len();
        if d == 0 || k == 0 {
            return Err(invalid("d and K must be positive"));
        }
        if !theta.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("theta"));
        }
        if theta.iter().any(|v| v.abs() > 1.0 + FEASIBILITY_SLACK) {
            return Err(invalid("theta must satisfy |theta_j| <= 1"));
        }
        let mut cumulative = Vec::new();
        if let ContextLaw::FiniteSupport { sets, probs } = &law {
            if sets.is_empty() || sets.len() != probs.len() {
                return Err(invalid("finite support needs one probability per set"));
            }
            if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(invalid("probabilities must be non-negative"));
            }
            let total: f64 = probs.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(invalid(format!("probabilities sum to {total}, not 1")));
            }
            let mut acc = 0.0;
            for p in probs {
                acc += p / total;
                cumulative.push(acc);
            }
        }
        let inst = Self {
            kind: kind.into(),
            d,
            k,
            theta,
            law,
            noise,
            cumulative,
        };
        match &inst.law {
            ContextLaw::FiniteSupport { sets, .. } => sets.iter().try_for_each(|s| inst.check_set(s))?,
            ContextLaw::FixedSet { set } => inst.check_set(set)?,
            ContextLaw::Generator { .. } => {}
        }
        if matches!(inst.law, ContextLaw::Generator { .. }) && inst.norm2_theta() > 1.0 + FEASIBILITY_SLACK {
            return Err(invalid("generator instances need ||theta||_2 <= 1"));
        }
        Ok(inst)
    }

    fn norm2_theta(&self) -> f64 {
        dot(&self.theta, &self.theta).sqrt()
    }

    /// Checks size and the feasibility constraints on every vector of `set`.
    pub fn check_set(&self, set: &ContextSet) -> Result<()> {
        if set.dim() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: set.dim(),
            });
        }
        if set.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                found: set.len(),
            });
        }
        for x in set.iter() {
            let m = self.mean(x);
            if m.abs() > 1.0 + FEASIBILITY_SLACK {
                return Err(invalid(format!("feature with |x^T theta| = {} > 1", m.abs())));
            }
            if self.noise == Noise::Bernoulli && !(-FEASIBILITY_SLACK..=1.0 + FEASIBILITY_SLACK).contains(&m) {
                return Err(invalid(format!("Bernoulli mean {m} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Draws `samples` context sets and checks each one.
    pub fn audit<R: Rng + ?Sized>(&self, rng: &mut R, samples: usize) -> Result<()> {
        for _ in 0..samples {
            self.check_set(&self.sample_context(rng))?;
        }
        Ok(())
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn law(&self) -> &ContextLaw {
        &self.law
    }

    pub fn noise(&self) -> Noise {
        self.noise
    }

    /// Expected reward `x^T θ`.
    pub fn mean(&self, x: &[f64]) -> f64 {
        dot(x, &self.theta)
    }

    pub fn sample_context<R: Rng + ?Sized>(&self, rng: &mut R) -> ContextSet {
        self.draw_context(rng).set.into_owned()
    }

    pub fn draw_context<R: Rng + ?Sized>(&self, rng: &mut R) -> ContextDraw<'_> {
        match &self.law {
            ContextLaw::FixedSet { set } => ContextDraw {
                set: Cow::Borrowed(set),
                support: Some(0),
            },
            ContextLaw::FiniteSupport { sets, .. } => {
                let u: f64 = rng.gen();
                let idx = self
                    .cumulative
                    .iter()
                    .position(|&c| u < c)
                    .unwrap_or(sets.len() - 1);
                ContextDraw {
                    set: Cow::Borrowed(&sets[idx]),
                    support: Some(idx),
                }
            }
            ContextLaw::Generator { .. } => {
                let mut data = Vec::with_capacity(self.k * self.d);
                for _ in 0..self.k {
                    data.extend(random_unit_vector(rng, self.d));
                }
                ContextDraw {
                    set: Cow::Owned(ContextSet {
                        dim: self.d,
                        data,
                    }),
                    support: None,
                }
            }
        }
    }

    /// `x^T θ` plus noise from the instance's law.
    pub fn sample_reward<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<f64> {
        let m = self.mean(x);
        Ok(match self.noise {
            Noise::Gaussian => m + rng.sample::<f64, _>(StandardNormal),
            Noise::Rademacher => m + if rng.gen::<bool>() { 1.0 } else { -1.0 },
            Noise::Bernoulli => {
                if !(-FEASIBILITY_SLACK..=1.0 + FEASIBILITY_SLACK).contains(&m) {
                    return Err(invalid(format!("Bernoulli mean {m} outside [0, 1]")));
                }
                if rng.gen::<f64>() < m {
                    1.0
                } else {
                    0.0
                }
            }
        })
    }

    /// Best expected reward in `set`.
    pub fn best_mean(&self, set: &ContextSet) -> f64 {
        set.iter().map(|x| self.mean(x)).fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = dot(&v, &v).sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn basis(d: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[i] = 1.0;
    v
}

/// Multi-armed problem with the given means, arms embedded as the standard basis.
pub fn make_mab_instance(means: &[f64], noise: Noise) -> Result<BanditInstance> {
    let h = means.len();
    let set = ContextSet::from_vectors(&(0..h).map(|i| basis(h, i)).collect::<Vec<_>>())?;
    BanditInstance::new("mab", means.to_vec(), h, ContextLaw::FixedSet { set }, noise)
}

/// Random benchmark: `θ` uniform on the cube, shrunk into the unit ball; `K`
/// unit directions per round.
pub fn make_random_instance(d: usize, k: usize, seed: u64) -> Result<BanditInstance> {
    use rand::SeedableRng;
    if d == 0 || k == 0 {
        return Err(invalid("d and K must be positive"));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut theta: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let n = dot(&theta, &theta).sqrt();
    if n > 1.0 {
        theta.iter_mut().for_each(|v| *v /= n);
    }
    BanditInstance::new("random", theta, k, ContextLaw::Generator { seed }, Noise::Gaussian)
}

/// `h` arms with Bernoulli rewards, mean 1 at `j_star` (1-based) and 0 elsewhere.
pub fn make_group1_instance(h: usize, j_star: usize) -> Result<BanditInstance> {
    if h == 0 || j_star == 0 || j_star > h {
        return Err(invalid(format!("j_star must lie in 1..={h}")));
    }
    let mut means = vec![0.0; h];
    means[j_star - 1] = 1.0;
    let mut inst = make_mab_instance(&means, Noise::Bernoulli)?;
    inst.kind = "group1".into();
    Ok(inst)
}

/// Arm labels (1-based) of the context set with index `i` (1-based) in the
/// second hard family: `1..=h1` followed by `h1 + i` repeated `h1` times.
pub fn group2_set_labels(h: usize, i: usize) -> Vec<usize> {
    let h1 = h / 2;
    (1..=h1).chain(std::iter::repeat_n(h1 + i, h1)).collect()
}

/// Second hard family. `sigma` is a permutation of `0..d` sending arm label
/// `a` to feature coordinate `sigma[a - 1]`. `signs` lists `(label, ±1)` pairs
/// for labels in `h1+1..=h1+d1`; those arms get mean `1/2 ± eps`, all others 1/2.
pub fn make_group2_instance(
    d: usize,
    h: usize,
    sigma: &[usize],
    signs: &[(usize, i8)],
    eps: f64,
) -> Result<BanditInstance> {
    if d == 0 || h == 0 || !d.is_multiple_of(2) || !h.is_multiple_of(2) {
        return Err(invalid("d and h must be positive and even"));
    }
    if h > d {
        return Err(invalid("h must not exceed d"));
    }
    if !(eps > 0.0 && eps <= 0.25) {
        return Err(invalid("eps must lie in (0, 1/4]"));
    }
    check_permutation(sigma, d)?;
    let (d1, h1) = (d / 2, h / 2);
    let mut means = vec![0.5; d];
    for &(label, sign) in signs {
        if label <= h1 || label > h1 + d1 {
            return Err(invalid(format!("signed arm {label} outside {}..={}", h1 + 1, h1 + d1)));
        }
        if sign != 1 && sign != -1 {
            return Err(invalid("signs must be +1 or -1"));
        }
        means[label - 1] = 0.5 + f64::from(sign) * eps;
    }
    let mut theta = vec![0.5; d];
    for label in 1..=d {
        theta[sigma[label - 1]] = means[label - 1];
    }
    let sets = (1..=d1)
        .map(|i| {
            let vecs: Vec<Vec<f64>> = group2_set_labels(h, i)
                .into_iter()
                .map(|label| basis(d, sigma[label - 1]))
                .collect();
            ContextSet::from_vectors(&vecs)
        })
        .collect::<Result<Vec<_>>>()?;
    let probs = vec![1.0 / d1 as f64; d1];
    BanditInstance::new("group2", theta, h, ContextLaw::FiniteSupport { sets, probs }, Noise::Bernoulli)
}

fn check_permutation(sigma: &[usize], d: usize) -> Result<()> {
    let mut seen = vec![false; d];
    if sigma.len() != d {
        return Err(invalid("permutation has the wrong length"));
    }
    for &s in sigma {
        if s >= d || seen[s] {
            return Err(invalid("sigma is not a permutation of 0..d"));
        }
        seen[s] = true;
    }
    Ok(())
}

/// Third hard family: the basis of `R^d_arms`, means `1/2 + eps·[j = j_star]`.
/// `j_star = 0` gives the all-equal instance.
pub fn make_group3_instance(d_arms: usize, j_star: usize, eps: f64) -> Result<BanditInstance> {
    if d_arms == 0 || j_star > d_arms {
        return Err(invalid(format!("j_star must lie in 0..={d_arms}")));
    }
    if !(eps > 0.0 && eps <= 0.25) {
        return Err(invalid("eps must lie in (0, 1/4]"));
    }
    let mut means = vec![0.5; d_arms];
    if j_star > 0 {
        means[j_star - 1] += eps;
    }
    let mut inst = make_mab_instance(&means, Noise::Bernoulli)?;
    inst.kind = "group3".into();
    Ok(inst)
}

/// Gap used by the third family when the preceding batch had `prev_len` rounds:
/// `sqrt(d) / (100 sqrt(prev_len))`. Errors unless it is at most 1/4.
pub fn group3_gap(d_arms: usize, prev_len: u64) -> Result<f64> {
    if prev_len == 0 {
        return Err(invalid("previous batch length must be positive"));
    }
    let eps = (d_arms as f64).sqrt() / (100.0 * (prev_len as f64).sqrt());
    if eps > 0.25 {
        return Err(invalid(format!(
            "gap {eps} exceeds 1/4; the previous batch needs at least d/625 rounds"
        )));
    }
    Ok(eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_play_regret(inst: &BanditInstance, t: usize, rng: &mut ChaCha8Rng) -> f64 {
        let mut regret = 0.0;
        for _ in 0..t {
            let set = inst.sample_context(rng);
            let a = rng.gen_range(0..set.len());
            regret += inst.best_mean(&set) - inst.mean(set.arm(a));
        }
        regret
    }

    #[test]
    fn fixed_set_is_constant() {
        let inst = make_mab_instance(&[0.1, -0.2], Noise::Gaussian).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let first = inst.sample_context(&mut rng);
        for _ in 0..10 {
            assert_eq!(inst.sample_context(&mut rng), first);
        }
    }

    #[test]
    fn finite_support_frequencies() {
        let a = ContextSet::from_vectors(&[vec![1.0, 0.0]]).unwrap();
        let b = ContextSet::from_vectors(&[vec![0.0, 1.0]]).unwrap();
        let law = ContextLaw::FiniteSupport {
            sets: vec![a.clone(), b],
            probs: vec![0.5, 0.5],
        };
        let inst = BanditInstance::new("two", vec![0.0, 0.0], 1, law, Noise::Gaussian).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let hits = (0..n).filter(|_| inst.sample_context(&mut rng) == a).count();
        assert!((hits as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn gaussian_noise_mean() {
        let inst = make_mab_instance(&[0.0], Noise::Gaussian).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let s: f64 = (0..n).map(|_| inst.sample_reward(&[1.0], &mut rng).unwrap()).sum();
        assert!((s / n as f64).abs() < 0.02);
    }

    #[test]
    fn bernoulli_rewards() {
        let inst = make_mab_instance(&[1.0, 0.5], Noise::Bernoulli).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            assert_eq!(inst.sample_reward(&[1.0, 0.0], &mut rng).unwrap(), 1.0);
        }
        let n = 100_000;
        let s: f64 = (0..n).map(|_| inst.sample_reward(&[0.0, 1.0], &mut rng).unwrap()).sum();
        assert!((s / n as f64 - 0.5).abs() < 0.01);
        assert!(inst.sample_reward(&[-1.0, 0.0], &mut rng).is_err());
        assert!(make_mab_instance(&[-0.5], Noise::Bernoulli).is_err());
    }

    #[test]
    fn rejects_infeasible_instances() {
        assert!(make_mab_instance(&[1.5], Noise::Gaussian).is_err());
        let set = ContextSet::from_vectors(&[vec![1.0, 1.0]]).unwrap();
        let law = ContextLaw::FixedSet { set };
        assert!(BanditInstance::new("x", vec![0.8, 0.8], 1, law, Noise::Gaussian).is_err());
    }

    #[test]
    fn random_instances() {
        let a = make_random_instance(4, 8, 7).unwrap();
        assert_eq!(a, make_random_instance(4, 8, 7).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        a.audit(&mut rng, 10_000).unwrap();
        let single = make_random_instance(1, 1, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(uniform_play_regret(&single, 100, &mut rng), 0.0);
    }

    #[test]
    fn sampling_is_reproducible() {
        let inst = make_random_instance(3, 5, 1).unwrap();
        let trajectory = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| {
                    let s = inst.sample_context(&mut rng);
                    let r = inst.sample_reward(s.arm(0), &mut rng).unwrap();
                    (s, r)
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(trajectory(9), trajectory(9));
    }

    #[test]
    fn group1_examples() {
        let g = make_group1_instance(2, 1).unwrap();
        let set = g.sample_context(&mut ChaCha8Rng::seed_from_u64(0));
        let t = 500;
        let regret: f64 = (0..t).map(|_| g.best_mean(&set) - g.mean(set.arm(1))).sum();
        assert_eq!(regret, t as f64);

        let g = make_group1_instance(4, 3).unwrap();
        let best = (0..4).max_by(|&a, &b| g.mean(set_arm(&g, a)).total_cmp(&g.mean(set_arm(&g, b))));
        assert_eq!(best, Some(2));
        assert!(make_group1_instance(4, 5).is_err());
        assert!(make_group1_instance(4, 0).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = uniform_play_regret(&g, 10_000, &mut rng);
        assert!((r / 7500.0 - 1.0).abs() < 0.02, "regret {r}");
    }

    fn set_arm(inst: &BanditInstance, a: usize) -> &[f64] {
        match inst.law() {
            ContextLaw::FixedSet { set } => set.arm(a),
            _ => unreachable!(),
        }
    }

    fn all_plus(d: usize, h: usize) -> Vec<(usize, i8)> {
        (h / 2 + 1..=h / 2 + d / 2).map(|l| (l, 1)).collect()
    }

    #[test]
    fn group2_best_arm_is_the_extra_label() {
        let (d, h) = (8, 6);
        let sigma: Vec<usize> = (0..d).collect();
        let inst = make_group2_instance(d, h, &sigma, &all_plus(d, h), 0.1).unwrap();
        let ContextLaw::FiniteSupport { sets, .. } = inst.law() else { unreachable!() };
        for (i, set) in sets.iter().enumerate() {
            let best = inst.best_mean(set);
            let extra = basis(d, h / 2 + i);
            assert_eq!(best, inst.mean(&extra));
            assert_eq!(set.len(), h);
        }
    }

    #[test]
    fn group2_minus_signs_leave_half() {
        let (d, h) = (8, 4);
        let sigma: Vec<usize> = (0..d).rev().collect();
        let signs: Vec<(usize, i8)> = (3..=6).map(|l| (l, -1)).collect();
        let inst = make_group2_instance(d, h, &sigma, &signs, 0.2).unwrap();
        let ContextLaw::FiniteSupport { sets, .. } = inst.law() else { unreachable!() };
        for set in sets {
            assert_eq!(inst.best_mean(set), 0.5);
            assert_eq!(inst.mean(set.arm(0)), 0.5);
        }
    }

    #[test]
    fn group2_always_first_arm_regret() {
        let (d, h, eps) = (8, 8, 0.1);
        let sigma: Vec<usize> = (0..d).collect();
        for sign in [1i8, -1] {
            let signs: Vec<(usize, i8)> = (5..=8).map(|l| (l, sign)).collect();
            let inst = make_group2_instance(d, h, &sigma, &signs, eps).unwrap();
            let ContextLaw::FiniteSupport { sets, .. } = inst.law() else { unreachable!() };
            for set in sets {
                let per_round = inst.best_mean(set) - inst.mean(set.arm(0));
                let want = if sign == 1 { eps } else { 0.0 };
                assert!((per_round - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn group2_sets_are_permuted_templates() {
        let (d, h) = (6, 4);
        let sigma = vec![2, 0, 5, 1, 4, 3];
        let inst = make_group2_instance(d, h, &sigma, &[], 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let set = inst.sample_context(&mut rng);
            let coords: Vec<usize> = set.iter().map(|x| x.iter().position(|&v| v == 1.0).unwrap()).collect();
            let i = (1..=d / 2)
                .find(|&i| group2_set_labels(h, i).iter().map(|&l| sigma[l - 1]).eq(coords.iter().copied()));
            assert!(i.is_some(), "unexpected set {coords:?}");
        }
    }

    #[test]
    fn group2_rejects_odd_sizes() {
        let sigma: Vec<usize> = (0..7).collect();
        assert!(make_group2_instance(7, 4, &sigma, &[], 0.1).is_err());
        let sigma: Vec<usize> = (0..8).collect();
        assert!(make_group2_instance(8, 3, &sigma, &[], 0.1).is_err());
    }

    #[test]
    fn group3_examples() {
        let zero = make_group3_instance(5, 0, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(uniform_play_regret(&zero, 1000, &mut rng), 0.0);

        let g = make_group3_instance(5, 1, 0.1).unwrap();
        let set = g.sample_context(&mut rng);
        assert_eq!(g.best_mean(&set) - g.mean(set.arm(0)), 0.0);

        let r = uniform_play_regret(&g, 10_000, &mut rng);
        let expected = 0.1 * 0.8 * 10_000.0;
        assert!((r / expected - 1.0).abs() < 0.03, "regret {r}");
        assert!(make_group3_instance(5, 6, 0.1).is_err());
    }

    #[test]
    fn group3_gap_bound() {
        assert!(group3_gap(10_000, 1).is_err());
        assert!(group3_gap(625, 1).unwrap() <= 0.25);
        assert!((group3_gap(4, 10_000).unwrap() - 2e-4).abs() < 1e-18);
    }

    #[test]
    fn instance_json_round_trip() {
        let inst = make_group1_instance(3, 2).unwrap();
        let text = serde_json::to_string(&inst).unwrap();
        let back: BanditInstance = serde_json::from_str(&text).unwrap();
        assert_eq!(back, inst);
        let bad = text.replace("\"kind\"", "\"bogus\":1,\"kind\"");
        assert!(serde_json::from_str::<BanditInstance>(&bad).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn generator_audit_passes(d in 1usize..10, k in 1usize..20, seed in any::<u64>()) {
            let inst = make_random_instance(d, k, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            prop_assert!(inst.audit(&mut rng, 300).is_ok());
            prop_assert!(inst.theta().iter().all(|v| v.abs() <= 1.0));
        }

        #[test]
        fn group3_default_gap_is_feasible(d in 1usize..64, prev in 1u64..1_000_000) {
            let ok = prev as f64 >= d as f64 / 625.0;
            prop_assert_eq!(group3_gap(d, prev).is_ok(), ok);
        }
    }
}
