//! MAP inference of the latent vector for one spike-word.
//!
//! [`greedy_infer`] scores every one-hot latent vector against `z = 0`,
//! keeps a small candidate pool and then searches all subsets of that pool.
//! [`exhaustive_infer`] enumerates all `2^M` latent vectors and is kept as
//! the reference the greedy search is checked against.
//!
//! Pool construction: every one-hot candidate scoring strictly above `z = 0`
//! (best first), then up to `i0` candidates scoring at or below it (best
//! first), then the pool is truncated to `imax`. `i0 = imax = M` gives the
//! full search, `imax = 1` gives the best `|z| <= 1` solution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BlvError, Result};
use crate::model::{
    log1m_exp, log_binomial_prior, log_joint_with, LatentVector, ModelParams, Prior, SpikeWord,
};

/// Largest latent dimension [`exhaustive_infer`] accepts by default.
pub const EXHAUSTIVE_MAX_LATENTS: usize = 24;

/// Largest candidate pool the subset search accepts.
pub const MAX_POOL: usize = 24;

/// Candidate-pool knobs for the greedy search.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    /// Number of one-hot candidates scoring at or below `z = 0` admitted to
    /// the pool.
    pub i0: usize,
    /// Maximum pool size.
    pub imax: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { i0: 9, imax: 10 }
    }
}

impl InferenceConfig {
    /// The full combinatorial search for `m` latents.
    pub fn exhaustive(m: usize) -> Self {
        Self { i0: m, imax: m }
    }

    pub fn validate(&self) -> Result<()> {
        if self.imax == 0 {
            return Err(BlvError::InvalidArgument("imax must be at least 1".into()));
        }
        Ok(())
    }
}

/// A one-hot (or empty, `latent_index = None`) candidate and its log joint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub latent_index: Option<usize>,
    pub score: f64,
}

/// Log-space views of a model, kept so that per-word scoring only touches
/// the active cells.
#[derive(Clone, Debug)]
pub(crate) struct ModelTables {
    n: usize,
    m: usize,
    /// Row-major `N x M` table of `log P`.
    log_p: Vec<f64>,
    log_r: Vec<f64>,
    col_total: Vec<f64>,
    log_r_total: f64,
    q: f64,
}

impl ModelTables {
    pub(crate) fn new(model: &ModelParams) -> Self {
        let (n, m) = (model.n_cells(), model.n_latents());
        let log_p = model.log_p().iter().copied().collect::<Vec<_>>();
        let log_r = model.log_r().to_vec();
        let mut tables = Self {
            n,
            m,
            log_p,
            log_r,
            col_total: vec![0.0; m],
            log_r_total: 0.0,
            q: model.q(),
        };
        for a in 0..m {
            tables.col_total[a] = (0..n).map(|i| tables.log_p[i * m + a]).sum();
        }
        tables.log_r_total = tables.log_r.iter().sum();
        tables
    }

    /// Re-read the given columns, all of `R` and `Q` after a learning step.
    pub(crate) fn refresh(&mut self, model: &ModelParams, columns: &[usize]) {
        let rho = model.rho();
        for &a in columns {
            let mut total = 0.0;
            for i in 0..self.n {
                let v = crate::model::log_logistic(rho[[i, a]]);
                self.log_p[i * self.m + a] = v;
                total += v;
            }
            self.col_total[a] = total;
        }
        for (dst, &x) in self.log_r.iter_mut().zip(model.r_logit().iter()) {
            *dst = crate::model::log_logistic(x);
        }
        self.log_r_total = self.log_r.iter().sum();
        self.q = model.q();
    }

    #[inline]
    fn log_p(&self, i: usize, a: usize) -> f64 {
        self.log_p[i * self.m + a]
    }

    #[inline]
    pub(crate) fn log_p_at(&self, i: usize, a: usize) -> f64 {
        self.log_p(i, a)
    }

    #[inline]
    pub(crate) fn log_r_at(&self, i: usize) -> f64 {
        self.log_r[i]
    }
}

enum PriorTerms {
    /// `log Bin(k; M, Q)` indexed by `k`.
    Count(Vec<f64>),
    /// `base + sum_{a in z} delta[a]`.
    Factorial { base: f64, delta: Vec<f64> },
}

/// Per-word scoring state: splits the likelihood into a part that is linear
/// in `z` (silent cells) and a per-active-cell nonlinear part.
pub(crate) struct WordScorer {
    m: usize,
    prior: PriorTerms,
    silent_log_r: f64,
    silent_col: Vec<f64>,
    active_log_r: Vec<f64>,
    /// `active_log_p[c * M + a]` for the `c`-th active cell.
    active_log_p: Vec<f64>,
    n_active: usize,
}

impl WordScorer {
    pub(crate) fn new(tables: &ModelTables, y: &SpikeWord, prior: Prior<'_>) -> Result<Self> {
        if y.len() != tables.n {
            return Err(BlvError::DimensionMismatch {
                what: "spike-word length vs model cells",
                expected: tables.n,
                got: y.len(),
            });
        }
        let m = tables.m;
        let active: Vec<usize> = y.active().collect();
        let mut active_log_p = Vec::with_capacity(active.len() * m);
        for &i in &active {
            active_log_p.extend((0..m).map(|a| tables.log_p(i, a)));
        }
        let active_log_r: Vec<f64> = active.iter().map(|&i| tables.log_r[i]).collect();

        let finite_totals =
            tables.log_r_total.is_finite() && tables.col_total.iter().all(|v| v.is_finite());
        let (silent_log_r, silent_col) = if finite_totals {
            let silent_r = tables.log_r_total - active_log_r.iter().sum::<f64>();
            let silent_col = (0..m)
                .map(|a| {
                    tables.col_total[a]
                        - (0..active.len()).map(|c| active_log_p[c * m + a]).sum::<f64>()
                })
                .collect();
            (silent_r, silent_col)
        } else {
            // Infinite logs (exact 0 probabilities) cannot be subtracted out.
            let silent: Vec<usize> = (0..tables.n).filter(|&i| !y.get(i)).collect();
            let silent_r = silent.iter().map(|&i| tables.log_r[i]).sum();
            let silent_col = (0..m)
                .map(|a| silent.iter().map(|&i| tables.log_p(i, a)).sum())
                .collect();
            (silent_r, silent_col)
        };

        let prior = match prior {
            Prior::Binomial => PriorTerms::Count(
                (0..=m)
                    .map(|k| log_binomial_prior(m, tables.q, k))
                    .collect::<Result<Vec<_>>>()?,
            ),
            Prior::HomeostaticEgalitarian(state) => {
                if state.n_latents() != m {
                    return Err(BlvError::DimensionMismatch {
                        what: "HE state latents vs model latents",
                        expected: m,
                        got: state.n_latents(),
                    });
                }
                let qa = state.activation_probs(tables.q);
                let base = qa.iter().map(|&p| (-p).ln_1p()).sum();
                let delta = qa.iter().map(|&p| p.ln() - (-p).ln_1p()).collect();
                PriorTerms::Factorial { base, delta }
            }
        };

        Ok(Self {
            m,
            prior,
            silent_log_r,
            silent_col,
            n_active: active.len(),
            active_log_r,
            active_log_p,
        })
    }

    fn prior_score(&self, k: usize, factorial_acc: f64) -> f64 {
        match &self.prior {
            PriorTerms::Count(table) => table[k],
            PriorTerms::Factorial { base, .. } => base + factorial_acc,
        }
    }

    fn prior_delta(&self, a: usize) -> f64 {
        match &self.prior {
            PriorTerms::Count(_) => 0.0,
            PriorTerms::Factorial { delta, .. } => delta[a],
        }
    }

    /// Score of a latent vector given accumulated sums over its active set.
    fn finish(&self, k: usize, col_acc: f64, prior_acc: f64, cell_acc: &[f64]) -> f64 {
        let exponent = 1.0 - k as f64 / self.m as f64;
        let mut score = self.prior_score(k, prior_acc) + col_acc;
        if exponent > 0.0 {
            score += exponent * self.silent_log_r;
        }
        for (c, &acc) in cell_acc.iter().enumerate() {
            let log_t = if exponent > 0.0 {
                exponent * self.active_log_r[c] + acc
            } else {
                acc
            };
            score += log1m_exp(log_t);
        }
        score
    }

    fn score_empty(&self) -> f64 {
        self.finish(0, 0.0, 0.0, &vec![0.0; self.n_active])
    }

    fn score_one_hot(&self, a: usize) -> f64 {
        let acc: Vec<f64> = (0..self.n_active)
            .map(|c| self.active_log_p[c * self.m + a])
            .collect();
        self.finish(1, self.silent_col[a], self.prior_delta(a), &acc)
    }

    /// Score of an arbitrary set of active latents.
    #[cfg(test)]
    fn score_set(&self, set: &[usize]) -> f64 {
        let mut acc = vec![0.0; self.n_active];
        let mut col = 0.0;
        let mut pri = 0.0;
        for &a in set {
            col += self.silent_col[a];
            pri += self.prior_delta(a);
            for (c, v) in acc.iter_mut().enumerate() {
                *v += self.active_log_p[c * self.m + a];
            }
        }
        self.finish(set.len(), col, pri, &acc)
    }

    fn candidates(&self) -> Vec<ScoredCandidate> {
        let mut out = Vec::with_capacity(self.m + 1);
        out.push(ScoredCandidate {
            latent_index: None,
            score: self.score_empty(),
        });
        out.extend((0..self.m).map(|a| ScoredCandidate {
            latent_index: Some(a),
            score: self.score_one_hot(a),
        }));
        out.sort_by(compare_candidates);
        out
    }

    /// Best subset of `pool` (the empty set included) and its score.
    fn search_pool(&self, pool: &[usize]) -> (Vec<usize>, f64) {
        let mut search = SubsetSearch {
            scorer: self,
            pool,
            chosen: Vec::with_capacity(pool.len()),
            best: Vec::new(),
            best_score: self.score_empty(),
            cell_acc: vec![vec![0.0; self.n_active]; pool.len() + 1],
        };
        search.descend(0, 0, 0.0, 0.0);
        let mut best = search.best;
        best.sort_unstable();
        (best, search.best_score)
    }
}

struct SubsetSearch<'s> {
    scorer: &'s WordScorer,
    pool: &'s [usize],
    chosen: Vec<usize>,
    best: Vec<usize>,
    best_score: f64,
    /// Per-depth accumulators of `sum log P` for each active cell.
    cell_acc: Vec<Vec<f64>>,
}

impl SubsetSearch<'_> {
    fn descend(&mut self, start: usize, depth: usize, col_acc: f64, prior_acc: f64) {
        let m = self.scorer.m;
        for j in start..self.pool.len() {
            let a = self.pool[j];
            let (lower, upper) = self.cell_acc.split_at_mut(depth + 1);
            let parent = &lower[depth];
            let child = &mut upper[0];
            for (c, dst) in child.iter_mut().enumerate() {
                *dst = parent[c] + self.scorer.active_log_p[c * m + a];
            }
            let col = col_acc + self.scorer.silent_col[a];
            let pri = prior_acc + self.scorer.prior_delta(a);
            self.chosen.push(a);
            let score = self
                .scorer
                .finish(self.chosen.len(), col, pri, &self.cell_acc[depth + 1]);
            if score > self.best_score
                || (score == self.best_score && lex_smaller_unsorted(&self.chosen, &self.best))
            {
                self.best_score = score;
                self.best.clone_from(&self.chosen);
            }
            self.descend(j + 1, depth + 1, col, pri);
            self.chosen.pop();
        }
    }
}

/// Descending score, ties by ascending latent index with `z = 0` first.
fn compare_candidates(a: &ScoredCandidate, b: &ScoredCandidate) -> std::cmp::Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then_with(|| a.latent_index.cmp(&b.latent_index))
}

/// Whether the bit pattern of set `a` is lexicographically smaller than
/// that of set `b` (bit 0 compared first, 0 < 1). Inputs must be sorted.
pub(crate) fn lex_smaller(a: &[usize], b: &[usize]) -> bool {
    let (mut i, mut j) = (0, 0);
    loop {
        match (a.get(i), b.get(j)) {
            (None, None) => return false,
            (None, Some(_)) => return true,
            (Some(_), None) => return false,
            (Some(&x), Some(&y)) if x == y => {
                i += 1;
                j += 1;
            }
            (Some(&x), Some(&y)) => return x > y,
        }
    }
}

fn lex_smaller_unsorted(a: &[usize], b: &[usize]) -> bool {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    lex_smaller(&a, &b)
}

/// Score `z = 0` and every one-hot latent vector; `M + 1` entries sorted by
/// descending log joint.
pub fn score_one_hots(
    model: &ModelParams,
    y: &SpikeWord,
    prior: Prior<'_>,
) -> Result<Vec<ScoredCandidate>> {
    let tables = ModelTables::new(model);
    Ok(WordScorer::new(&tables, y, prior)?.candidates())
}

/// Candidate pool for the subset search, in descending one-hot score order.
fn build_pool(candidates: &[ScoredCandidate], cfg: &InferenceConfig) -> Vec<usize> {
    let empty_score = candidates
        .iter()
        .find(|c| c.latent_index.is_none())
        .map(|c| c.score)
        .unwrap_or(f64::NEG_INFINITY);
    let above = candidates
        .iter()
        .filter(|c| c.score > empty_score)
        .filter_map(|c| c.latent_index);
    let below = candidates
        .iter()
        .filter(|c| !(c.score > empty_score))
        .filter_map(|c| c.latent_index)
        .take(cfg.i0);
    above.chain(below).take(cfg.imax).collect()
}

pub(crate) fn greedy_with_tables(
    tables: &ModelTables,
    y: &SpikeWord,
    cfg: &InferenceConfig,
    prior: Prior<'_>,
) -> Result<(LatentVector, f64)> {
    cfg.validate()?;
    let scorer = WordScorer::new(tables, y, prior)?;
    let pool = build_pool(&scorer.candidates(), cfg);
    if pool.len() > MAX_POOL {
        return Err(BlvError::Guard(format!(
            "candidate pool of {} exceeds the subset-search limit {MAX_POOL}",
            pool.len()
        )));
    }
    let (best, score) = scorer.search_pool(&pool);
    Ok((LatentVector::from_active(tables.m, &best)?, score))
}

/// Greedy MAP estimate of `z` for one word.
pub fn greedy_infer(
    model: &ModelParams,
    y: &SpikeWord,
    cfg: &InferenceConfig,
    prior: Prior<'_>,
) -> Result<LatentVector> {
    let tables = ModelTables::new(model);
    greedy_with_tables(&tables, y, cfg, prior).map(|(z, _)| z)
}

/// Greedy inference over a whole corpus, in corpus order.
pub fn infer_corpus(
    model: &ModelParams,
    words: &[SpikeWord],
    cfg: &InferenceConfig,
    prior: Prior<'_>,
) -> Result<Vec<LatentVector>> {
    let tables = ModelTables::new(model);
    words
        .par_iter()
        .map(|y| greedy_with_tables(&tables, y, cfg, prior).map(|(z, _)| z))
        .collect()
}

/// Exact MAP estimate by enumerating all `2^M` latent vectors. Ties go to the
/// lexicographically smallest bit pattern.
pub fn exhaustive_infer(model: &ModelParams, y: &SpikeWord, prior: Prior<'_>) -> Result<LatentVector> {
    exhaustive_infer_guarded(model, y, prior, EXHAUSTIVE_MAX_LATENTS)
}

/// [`exhaustive_infer`] with an explicit limit on `M`.
pub fn exhaustive_infer_guarded(
    model: &ModelParams,
    y: &SpikeWord,
    prior: Prior<'_>,
    max_latents: usize,
) -> Result<LatentVector> {
    let m = model.n_latents();
    if m > max_latents || m >= 64 {
        return Err(BlvError::Guard(format!(
            "exhaustive search over {m} latents exceeds the limit of {max_latents}"
        )));
    }
    let mut best = LatentVector::zeros(m);
    let mut best_score = f64::NEG_INFINITY;
    let mut bits = vec![false; m];
    // Ascending masks with z_0 as the most significant bit visit patterns in
    // lexicographic order, so keeping the first strict maximum breaks ties.
    for mask in 0u64..(1u64 << m) {
        for (a, bit) in bits.iter_mut().enumerate() {
            *bit = (mask >> (m - 1 - a)) & 1 == 1;
        }
        let z = LatentVector::new(bits.clone());
        let score = log_joint_with(model, prior, y, &z)?;
        if score > best_score || (mask == 0 && score == best_score) {
            best_score = score;
            best = z;
        }
    }
    Ok(best)
}
