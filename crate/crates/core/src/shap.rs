//! Interventional Shapley attributions.
//!
//! The value of a coalition `S` is the model output averaged over a
//! background set, with features in `S` taken from the explained point and
//! the rest from each background row:
//!
//! ```text
//! v(S) = mean_b f(x_S, b_rest)
//! phi_i = sum_{S not containing i} |S|! (d - |S| - 1)! / d! * (v(S + i) - v(S))
//! ```
//!
//! [`shap_exact`] enumerates all `2^d` coalitions; [`shap_sampled`] averages
//! marginal contributions along random feature orderings.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{SimRng, FEATURE_NAMES};
use crate::gbm::GbmModel;

pub const MAX_EXACT_FEATURES: usize = 20;
pub const DEFAULT_BACKGROUND_SIZE: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapError {
    #[error(
        "{0} features exceed the exact-enumeration limit of {MAX_EXACT_FEATURES}; use shap_sampled"
    )]
    TooManyFeatures(usize),
    #[error("background set is empty")]
    EmptyBackground,
    #[error("background row {row} has {got} features, expected {expected}")]
    BackgroundShape {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("n_permutations must be at least 1")]
    NoPermutations,
    #[error("no attributions to aggregate")]
    NoAttributions,
    #[error("attribution {0} has a different feature count")]
    RaggedAttributions(usize),
}

pub type Result<T, E = ShapError> = std::result::Result<T, E>;

/// A prediction function over a fixed-length feature row.
pub trait Model: Sync {
    fn eval(&self, x: &[f64]) -> f64;
}

impl<F> Model for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn eval(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

impl Model for GbmModel {
    fn eval(&self, x: &[f64]) -> f64 {
        self.predict_row(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub phi: Vec<f64>,
    /// Value of the empty coalition: mean model output over the background.
    pub base_value: f64,
    pub prediction: f64,
}

impl Attribution {
    /// `sum(phi) - (prediction - base_value)`.
    pub fn efficiency_gap(&self) -> f64 {
        self.phi.iter().sum::<f64>() - (self.prediction - self.base_value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalImportance {
    pub mean_abs_phi: Vec<f64>,
    /// Feature indices by descending mean |phi|; ties by ascending index.
    pub ranking: Vec<usize>,
}

fn check_background(d: usize, background: &[Vec<f64>]) -> Result<()> {
    if background.is_empty() {
        return Err(ShapError::EmptyBackground);
    }
    for (row, b) in background.iter().enumerate() {
        if b.len() != d {
            return Err(ShapError::BackgroundShape {
                row,
                got: b.len(),
                expected: d,
            });
        }
    }
    Ok(())
}

fn coalition_value<M: Model + ?Sized>(
    model: &M,
    x: &[f64],
    background: &[Vec<f64>],
    mask: u32,
) -> f64 {
    let mut z = vec![0.0; x.len()];
    let mut total = 0.0;
    for b in background {
        for (j, zj) in z.iter_mut().enumerate() {
            *zj = if mask & (1 << j) != 0 { x[j] } else { b[j] };
        }
        total += model.eval(&z);
    }
    total / background.len() as f64
}

/// Exact Shapley values by enumerating every coalition once.
pub fn shap_exact<M: Model + ?Sized>(
    model: &M,
    x: &[f64],
    background: &[Vec<f64>],
) -> Result<Attribution> {
    let d = x.len();
    if d > MAX_EXACT_FEATURES {
        return Err(ShapError::TooManyFeatures(d));
    }
    check_background(d, background)?;
    let subsets = 1u32 << d;
    let values: Vec<f64> = (0..subsets)
        .into_par_iter()
        .map(|mask| coalition_value(model, x, background, mask))
        .collect();

    // weight(s) = s! (d-s-1)! / d! = 1 / (d * C(d-1, s))
    let mut weights = vec![0.0; d.max(1)];
    let mut binom = 1.0_f64;
    for (s, w) in weights.iter_mut().enumerate().take(d) {
        if s > 0 {
            binom = binom * (d - s) as f64 / s as f64;
        }
        *w = 1.0 / (d as f64 * binom);
    }

    let mut phi = vec![0.0; d];
    for mask in 0..subsets {
        let size = mask.count_ones() as usize;
        if size == d {
            continue;
        }
        let w = weights[size];
        for (i, p) in phi.iter_mut().enumerate() {
            if mask & (1 << i) == 0 {
                *p += w * (values[(mask | (1 << i)) as usize] - values[mask as usize]);
            }
        }
    }
    Ok(Attribution {
        phi,
        base_value: values[0],
        prediction: model.eval(x),
    })
}

fn permutations(d: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(d), &mut vec![false; d], &mut out);
    out
}

/// Permutation-sampling estimate of the same Shapley values.
///
/// Every sampled ordering is paired with its reverse. When
/// `n_permutations >= d!` all orderings are enumerated once instead, which
/// gives the exact values.
pub fn shap_sampled<M: Model + ?Sized>(
    model: &M,
    x: &[f64],
    background: &[Vec<f64>],
    n_permutations: usize,
    seed: u64,
) -> Result<Attribution> {
    let d = x.len();
    if n_permutations == 0 {
        return Err(ShapError::NoPermutations);
    }
    check_background(d, background)?;
    let factorial = (1..=d).try_fold(1usize, |acc, k| acc.checked_mul(k));
    let orders: Vec<Vec<usize>> = match factorial {
        Some(f) if f <= n_permutations => permutations(d),
        _ => {
            let mut rng = SimRng::seed_from_u64(seed);
            let mut base: Vec<usize> = (0..d).collect();
            let mut out = Vec::with_capacity(n_permutations);
            while out.len() < n_permutations {
                base.shuffle(&mut rng);
                out.push(base.clone());
                if out.len() < n_permutations {
                    out.push(base.iter().rev().copied().collect());
                }
            }
            out
        }
    };

    let sums: Vec<Vec<f64>> = orders
        .par_iter()
        .map(|order| {
            let mut phi = vec![0.0; d];
            let mut z = vec![0.0; d];
            for b in background {
                z.copy_from_slice(b);
                let mut prev = model.eval(&z);
                for &j in order {
                    z[j] = x[j];
                    let cur = model.eval(&z);
                    phi[j] += cur - prev;
                    prev = cur;
                }
            }
            phi
        })
        .collect();
    let denom = (orders.len() * background.len()) as f64;
    let mut phi = vec![0.0; d];
    for s in &sums {
        for (p, v) in phi.iter_mut().zip(s) {
            *p += v;
        }
    }
    phi.iter_mut().for_each(|p| *p /= denom);
    let base_value =
        background.iter().map(|b| model.eval(b)).sum::<f64>() / background.len() as f64;
    Ok(Attribution {
        phi,
        base_value,
        prediction: model.eval(x),
    })
}

/// Mean |phi| per feature across attributions, and the resulting ranking.
pub fn global_importance(attributions: &[Attribution]) -> Result<GlobalImportance> {
    let first = attributions.first().ok_or(ShapError::NoAttributions)?;
    let d = first.phi.len();
    let mut mean_abs = vec![0.0; d];
    for (i, a) in attributions.iter().enumerate() {
        if a.phi.len() != d {
            return Err(ShapError::RaggedAttributions(i));
        }
        for (m, p) in mean_abs.iter_mut().zip(&a.phi) {
            *m += p.abs();
        }
    }
    mean_abs
        .iter_mut()
        .for_each(|m| *m /= attributions.len() as f64);
    let mut ranking: Vec<usize> = (0..d).collect();
    ranking.sort_by(|&a, &b| mean_abs[b].total_cmp(&mean_abs[a]).then(a.cmp(&b)));
    Ok(GlobalImportance {
        mean_abs_phi: mean_abs,
        ranking,
    })
}

/// Seeded uniform sample (without replacement) of at most `size` rows.
pub fn sample_background(rows: &[Vec<f64>], size: usize, seed: u64) -> Vec<Vec<f64>> {
    if rows.len() <= size {
        return rows.to_vec();
    }
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.shuffle(&mut SimRng::seed_from_u64(seed));
    idx.truncate(size);
    idx.sort_unstable();
    idx.into_iter().map(|i| rows[i].clone()).collect()
}

fn feature_name(i: usize) -> String {
    FEATURE_NAMES
        .get(i)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("feature_{i}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedValue {
    pub feature: String,
    pub value: f64,
}

/// Attribution with canonical feature names, for JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub base_value: f64,
    pub prediction: f64,
    pub phi: Vec<NamedValue>,
}

impl From<&Attribution> for AttributionReport {
    fn from(a: &Attribution) -> Self {
        Self {
            base_value: a.base_value,
            prediction: a.prediction,
            phi: a
                .phi
                .iter()
                .enumerate()
                .map(|(i, &value)| NamedValue {
                    feature: feature_name(i),
                    value,
                })
                .collect(),
        }
    }
}

/// Global importance with canonical feature names, in ranking order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub features: Vec<NamedValue>,
}

impl From<&GlobalImportance> for ImportanceReport {
    fn from(g: &GlobalImportance) -> Self {
        Self {
            features: g
                .ranking
                .iter()
                .map(|&i| NamedValue {
                    feature: feature_name(i),
                    value: g.mean_abs_phi[i],
                })
                .collect(),
        }
    }
}
