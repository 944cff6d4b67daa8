//! G-optimal experimental design over a finite context set.
//!
//! Solved as a D-optimal design by Frank–Wolfe with the Khachiyan step size;
//! by the Kiefer–Wolfowitz equivalence the worst-case normalised variance of
//! the D-optimal design is exactly `d`, so we stop once it drops below
//! `(1 + tol) d`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{random_unit_vector, ContextSet};
use crate::error::{invalid, Error, Result};
use crate::matrix::{dot, quad_form_slice, SymMatrix};

pub const DEFAULT_TOL: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignWeights {
    pub weights: Vec<f64>,
    pub epsilon_reg: f64,
    /// Criterion value reached by the solver.
    pub criterion: f64,
    pub iterations: usize,
}

/// Default regulariser: `1e-9` times the mean squared norm (1e-9 for an all-zero set).
pub fn default_epsilon(x: &ContextSet) -> f64 {
    let k = x.len().max(1) as f64;
    let mean_sq = x.iter().map(|v| dot(v, v)).sum::<f64>() / k;
    if mean_sq > 0.0 {
        1e-9 * mean_sq
    } else {
        1e-9
    }
}

pub fn default_max_iter(x: &ContextSet) -> usize {
    10 * x.len() * x.dim()
}

/// Design with the default regulariser, iteration cap and tolerance.
pub fn g_optimal_design_default(x: &ContextSet) -> Result<DesignWeights> {
    g_optimal_design(x, default_epsilon(x), default_max_iter(x), DEFAULT_TOL)
}

/// Distribution over the arms of `x` whose regularised information matrix
/// keeps every `x_i^T (εI + Σ w_j x_j x_j^T)^{-1} x_i` at most `2d`.
///
/// Exact duplicates are merged onto their first occurrence, so repeating an
/// arm leaves the design's information matrix unchanged.
pub fn g_optimal_design(
    x: &ContextSet,
    epsilon_reg: f64,
    max_iter: usize,
    tol: f64,
) -> Result<DesignWeights> {
    if x.is_empty() {
        return Err(invalid("design needs a non-empty context set"));
    }
    if !(epsilon_reg > 0.0 && epsilon_reg.is_finite()) {
        return Err(invalid("epsilon_reg must be positive"));
    }
    if !(tol >= 0.0) {
        return Err(invalid("tol must be non-negative"));
    }
    let k = x.len();
    let d = x.dim();
    let bound = 2.0 * d as f64;
    let target = bound.min((1.0 + tol) * d as f64);

    let reps = canonical_support(x);
    if reps.is_empty() {
        return Ok(DesignWeights {
            weights: vec![1.0 / k as f64; k],
            epsilon_reg,
            criterion: 0.0,
            iterations: 0,
        });
    }

    let n = reps.len();
    let mut w = vec![1.0 / n as f64; n];
    let mut iterations = 0;
    let criterion = loop {
        let inv = info_matrix(x, &reps, &w, epsilon_reg).inverse()?;
        let (best, kappa) = argmax_variance(x, &reps, inv.as_slice());
        if kappa <= target {
            break kappa;
        }
        if iterations >= max_iter {
            if kappa > bound {
                return Err(Error::DesignNotConverged {
                    criterion: kappa,
                    bound,
                    iterations,
                });
            }
            break kappa;
        }
        let step = ((kappa / d as f64 - 1.0) / (kappa - 1.0)).clamp(0.0, 1.0);
        for (j, wj) in w.iter_mut().enumerate() {
            *wj *= 1.0 - step;
            if j == best {
                *wj += step;
            }
        }
        iterations += 1;
    };

    let mut weights = vec![0.0; k];
    for (j, &r) in reps.iter().enumerate() {
        weights[r] = w[j];
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= total);
    Ok(DesignWeights {
        weights,
        epsilon_reg,
        criterion,
        iterations,
    })
}

/// First occurrence of each distinct non-zero vector, in a canonical
/// (lexicographic) order so results do not depend on where duplicates sit.
fn canonical_support(x: &ContextSet) -> Vec<usize> {
    let mut reps: Vec<usize> = Vec::new();
    for i in 0..x.len() {
        let v = x.arm(i);
        if v.iter().all(|&c| c == 0.0) {
            continue;
        }
        if !reps.iter().any(|&r| x.arm(r) == v) {
            reps.push(i);
        }
    }
    reps.sort_by(|&a, &b| {
        x.arm(a)
            .iter()
            .zip(x.arm(b))
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    reps
}

fn info_matrix(x: &ContextSet, idx: &[usize], w: &[f64], eps: f64) -> SymMatrix {
    let mut a = SymMatrix::scaled_identity(x.dim(), eps);
    for (&i, &wi) in idx.iter().zip(w) {
        if wi > 0.0 {
            a.add_outer(x.arm(i), wi);
        }
    }
    a
}

/// Position in `idx` of the largest `x^T A^{-1} x`, lowest index on ties.
fn argmax_variance(x: &ContextSet, idx: &[usize], inv: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, &i) in idx.iter().enumerate() {
        let v = quad_form_slice(inv, x.arm(i));
        if v > best.1 {
            best = (j, v);
        }
    }
    best
}

/// `max_x x^T (εI + Σ w_i x_i x_i^T)^{-1} x` over the whole set.
pub fn design_criterion(x: &ContextSet, w: &DesignWeights) -> Result<f64> {
    if w.weights.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: w.weights.len(),
        });
    }
    // Merge weights of identical vectors so the matrix is assembled in the
    // same order however the set is laid out.
    let reps = canonical_support(x);
    let merged: Vec<f64> = reps
        .iter()
        .map(|&r| {
            (0..x.len())
                .filter(|&i| x.arm(i) == x.arm(r))
                .map(|i| w.weights[i])
                .sum()
        })
        .collect();
    let inv = info_matrix(x, &reps, &merged, w.epsilon_reg).inverse()?;
    let all: Vec<usize> = (0..x.len()).collect();
    Ok(argmax_variance(x, &all, inv.as_slice()).1)
}

/// Draws an arm index according to the weights.
pub fn sample_design<R: Rng + ?Sized>(w: &DesignWeights, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in w.weights.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Outcome of [`random_design_sweep`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignSweep {
    /// `(d, K, criterion)` per set.
    pub cases: Vec<(usize, usize, f64)>,
    /// Sets whose criterion exceeded `2d`.
    pub failures: usize,
    /// Largest `criterion / d` seen.
    pub worst_ratio: f64,
}

/// Solves the design on `count` random sets with `d` uniform in
/// `1..=max_d` and `K` uniform in `1..=max_k`. Arms are random directions
/// with radii in `(0, 1]`, and about a quarter of the sets repeat some arms.
pub fn random_design_sweep(count: usize, max_d: usize, max_k: usize, seed: u64) -> Result<DesignSweep> {
    use rand::SeedableRng;
    use rayon::prelude::*;
    if max_d == 0 || max_k == 0 {
        return Err(invalid("max_d and max_k must be positive"));
    }
    let cases: Vec<(usize, usize, f64)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let d = rng.gen_range(1..=max_d);
            let k = rng.gen_range(1..=max_k);
            let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(k);
            let repeats = rng.gen_bool(0.25);
            for j in 0..k {
                if repeats && j > 0 && rng.gen_bool(0.3) {
                    let src = rng.gen_range(0..j);
                    vecs.push(vecs[src].clone());
                    continue;
                }
                let r: f64 = 1.0 - rng.gen::<f64>();
                vecs.push(random_unit_vector(&mut rng, d).into_iter().map(|v| v * r).collect());
            }
            let x = ContextSet::from_vectors(&vecs)?;
            let w = g_optimal_design_default(&x)?;
            Ok((d, k, design_criterion(&x, &w)?))
        })
        .collect::<Result<_>>()?;
    let failures = cases.iter().filter(|c| c.2 > 2.0 * c.0 as f64).count();
    let worst_ratio = cases.iter().map(|c| c.2 / c.0 as f64).fold(0.0, f64::max);
    Ok(DesignSweep {
        cases,
        failures,
        worst_ratio,
    })
}
