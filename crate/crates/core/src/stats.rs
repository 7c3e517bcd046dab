//! Spike-word moments, quantile-quantile distances between them, and grid
//! search over synthesis hyperparameters.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BlvError, Result};
use crate::model::SpikeWord;
use crate::synthesis::{generate_dataset, synthesize_gt, SynthHyperparams};

/// Number of evenly spaced quantile levels compared by [`qq_value`].
pub const QQ_LEVELS: usize = 100;

/// Default corpus size generated per grid point.
pub const DEFAULT_WORDS_PER_EVAL: usize = 50_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub n_words: u64,
    /// `length_counts[k]` words had exactly `k` active cells.
    pub length_counts: Vec<u64>,
    pub cell_means: Vec<f64>,
    /// Symmetric `N x N` matrix of `<y_i y_j>`; the diagonal is unused and 0.
    pub pair_coactivity: Array2<f64>,
}

impl MomentSummary {
    pub fn n_cells(&self) -> usize {
        self.cell_means.len()
    }

    pub fn word_length_pdf(&self) -> Vec<f64> {
        self.length_counts
            .iter()
            .map(|&c| c as f64 / self.n_words as f64)
            .collect()
    }

    pub fn mean_word_length(&self) -> f64 {
        self.word_length_pdf()
            .iter()
            .enumerate()
            .map(|(k, p)| k as f64 * p)
            .sum()
    }

    /// Upper triangle of the coactivity matrix, row by row.
    pub fn pair_values(&self) -> Vec<f64> {
        let n = self.n_cells();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push(self.pair_coactivity[[i, j]]);
            }
        }
        out
    }
}

/// Empirical moments of a corpus.
pub fn moments(corpus: &[SpikeWord]) -> Result<MomentSummary> {
    let n = corpus
        .first()
        .ok_or(BlvError::EmptyInput("corpus for moments"))?
        .len();
    let mut length_counts = vec![0u64; n + 1];
    let mut cell_counts = vec![0u64; n];
    let mut pair_counts = Array2::<u64>::zeros((n, n));
    for y in corpus {
        if y.len() != n {
            return Err(BlvError::DimensionMismatch {
                what: "spike-word length within corpus",
                expected: n,
                got: y.len(),
            });
        }
        let active: Vec<usize> = y.active().collect();
        length_counts[active.len()] += 1;
        for (k, &i) in active.iter().enumerate() {
            cell_counts[i] += 1;
            for &j in &active[k + 1..] {
                pair_counts[[i, j]] += 1;
            }
        }
    }
    let total = corpus.len() as f64;
    let mut pair_coactivity = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v = pair_counts[[i, j]] as f64 / total;
            pair_coactivity[[i, j]] = v;
            pair_coactivity[[j, i]] = v;
        }
    }
    Ok(MomentSummary {
        n_words: corpus.len() as u64,
        length_counts,
        cell_means: cell_counts.iter().map(|&c| c as f64 / total).collect(),
        pair_coactivity,
    })
}

fn level(k: usize) -> f64 {
    k as f64 / (QQ_LEVELS - 1) as f64
}

/// Linear interpolation between order statistics: `h = (n - 1) p`.
fn quantiles_sorted(sorted: &[f64]) -> Vec<f64> {
    let n = sorted.len();
    (0..QQ_LEVELS)
        .map(|k| {
            let h = (n - 1) as f64 * level(k);
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        })
        .collect()
}

/// Same as [`quantiles_sorted`] for a sample given as counts of the values
/// `0, 1, 2, ...`.
fn quantiles_counts(counts: &[u64]) -> Vec<f64> {
    let n: u64 = counts.iter().sum();
    let mut cumulative = Vec::with_capacity(counts.len());
    let mut acc = 0u64;
    for &c in counts {
        acc += c;
        cumulative.push(acc);
    }
    // Value of the `j`-th order statistic (0-based).
    let order_stat = |j: u64| -> f64 { cumulative.partition_point(|&c| c <= j) as f64 };
    (0..QQ_LEVELS)
        .map(|k| {
            let h = (n - 1) as f64 * level(k);
            let lo = h.floor() as u64;
            let hi = (lo + 1).min(n - 1);
            let a = order_stat(lo);
            a + (h - lo as f64) * (order_stat(hi) - a)
        })
        .collect()
}

fn qq_from_quantiles(qa: &[f64], qb: &[f64], range: f64) -> f64 {
    if range <= 0.0 {
        return 0.0;
    }
    let total: f64 = qa.iter().zip(qb).map(|(a, b)| (a - b).abs()).sum();
    total / qa.len() as f64 / range
}

/// Mean absolute difference of matched quantiles of two samples, divided by
/// the range of the pooled samples. Quantiles are taken at the 100 levels
/// `k / 99`.
///
/// ```
/// let a = [0.0, 1.0, 2.0, 3.0];
/// assert_eq!(blv::stats::qq_value(&a, &[3.0, 1.0, 0.0, 2.0]).unwrap(), 0.0);
/// ```
pub fn qq_value(sample_a: &[f64], sample_b: &[f64]) -> Result<f64> {
    if sample_a.is_empty() || sample_b.is_empty() {
        return Err(BlvError::EmptyInput("QQ sample"));
    }
    if sample_a.iter().chain(sample_b).any(|x| !x.is_finite()) {
        return Err(BlvError::InvalidArgument("QQ samples must be finite".into()));
    }
    let mut a = sample_a.to_vec();
    let mut b = sample_b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let lo = a[0].min(b[0]);
    let hi = a[a.len() - 1].max(b[b.len() - 1]);
    Ok(qq_from_quantiles(&quantiles_sorted(&a), &quantiles_sorted(&b), hi - lo))
}

/// [`qq_value`] for two samples of non-negative integers given as counts.
pub fn qq_value_counts(counts_a: &[u64], counts_b: &[u64]) -> Result<f64> {
    let support = |c: &[u64]| -> Option<(usize, usize)> {
        let lo = c.iter().position(|&x| x > 0)?;
        let hi = c.iter().rposition(|&x| x > 0)?;
        Some((lo, hi))
    };
    let (la, ha) = support(counts_a).ok_or(BlvError::EmptyInput("QQ sample"))?;
    let (lb, hb) = support(counts_b).ok_or(BlvError::EmptyInput("QQ sample"))?;
    let range = (ha.max(hb) - la.min(lb)) as f64;
    Ok(qq_from_quantiles(
        &quantiles_counts(counts_a),
        &quantiles_counts(counts_b),
        range,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QQWeights {
    pub length: f64,
    pub mean: f64,
    pub pair: f64,
}

impl Default for QQWeights {
    fn default() -> Self {
        Self {
            length: 1.0,
            mean: 1.0,
            pair: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QQReport {
    pub qq_length: f64,
    pub qq_mean: f64,
    pub qq_pair: f64,
    pub combined: f64,
}

/// QQ distances between two moment summaries over the same cells.
pub fn compare_moments(a: &MomentSummary, b: &MomentSummary, w: QQWeights) -> Result<QQReport> {
    if a.n_cells() != b.n_cells() {
        return Err(BlvError::DimensionMismatch {
            what: "cells in compared moment summaries",
            expected: a.n_cells(),
            got: b.n_cells(),
        });
    }
    let qq_length = qq_value_counts(&a.length_counts, &b.length_counts)?;
    let qq_mean = qq_value(&a.cell_means, &b.cell_means)?;
    let qq_pair = if a.n_cells() < 2 {
        0.0
    } else {
        qq_value(&a.pair_values(), &b.pair_values())?
    };
    Ok(QQReport {
        qq_length,
        qq_mean,
        qq_pair,
        combined: w.length * qq_length + w.mean * qq_mean + w.pair * qq_pair,
    })
}

/// Cartesian lattice of hyperparameters around a base point. An empty axis
/// keeps the base value. `k` varies slowest, `sigma_q` fastest.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperGrid {
    pub k: Vec<usize>,
    pub c: Vec<usize>,
    pub mu_p: Vec<f64>,
    pub sigma_p: Vec<f64>,
    pub mu_r: Vec<f64>,
    pub sigma_r: Vec<f64>,
    pub sigma_q: Vec<f64>,
}

fn axis<T: Copy>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl HyperGrid {
    /// All lattice points in order; every point must be valid.
    pub fn points(&self, base: &SynthHyperparams) -> Result<Vec<SynthHyperparams>> {
        let mut out = Vec::new();
        for &k in &axis(&self.k, base.k) {
            for &c in &axis(&self.c, base.c) {
                for &mu_p in &axis(&self.mu_p, base.mu_p) {
                    for &sigma_p in &axis(&self.sigma_p, base.sigma_p) {
                        for &mu_r in &axis(&self.mu_r, base.mu_r) {
                            for &sigma_r in &axis(&self.sigma_r, base.sigma_r) {
                                for &sigma_q in &axis(&self.sigma_q, base.sigma_q) {
                                    let h = SynthHyperparams {
                                        k,
                                        c,
                                        mu_p,
                                        sigma_p,
                                        mu_r,
                                        sigma_r,
                                        sigma_q,
                                        ..base.clone()
                                    };
                                    h.validate()?;
                                    out.push(h);
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub hyper: SynthHyperparams,
    pub report: QQReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub best_index: usize,
    pub best: SynthHyperparams,
    pub report: QQReport,
    /// Every evaluated point in lattice order.
    pub evaluated: Vec<GridPoint>,
}

/// Moments of a fresh corpus from one hyperparameter point. Point `index`
/// draws from stream `index` of a generator seeded with `seed`.
pub fn simulate_moments(
    hyper: &SynthHyperparams,
    n_words: usize,
    seed: u64,
    index: u64,
) -> Result<MomentSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let gt = synthesize_gt(hyper, &mut rng)?;
    let data = generate_dataset(&gt, n_words, &mut rng)?;
    moments(&data.words())
}

/// Grid search for the hyperparameters whose synthetic corpus best matches
/// `target`. Ties go to the earliest lattice point.
pub fn fit_hyperparams(
    target: &MomentSummary,
    base: &SynthHyperparams,
    grid: &HyperGrid,
    words_per_eval: usize,
    weights: QQWeights,
    seed: u64,
) -> Result<FitResult> {
    if words_per_eval == 0 {
        return Err(BlvError::InvalidArgument("words_per_eval must be positive".into()));
    }
    let points = grid.points(base)?;
    if points.is_empty() {
        return Err(BlvError::EmptyInput("hyperparameter grid"));
    }
    let evaluated = points
        .into_par_iter()
        .enumerate()
        .map(|(idx, hyper)| {
            let m = simulate_moments(&hyper, words_per_eval, seed, idx as u64)?;
            let report = compare_moments(target, &m, weights)?;
            Ok(GridPoint { hyper, report })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best_index = 0;
    for (i, p) in evaluated.iter().enumerate() {
        if p.report.combined < evaluated[best_index].report.combined {
            best_index = i;
        }
    }
    Ok(FitResult {
        best_index,
        best: evaluated[best_index].hyper.clone(),
        report: evaluated[best_index].report,
        evaluated,
    })
}
