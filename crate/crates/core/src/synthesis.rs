//! Ground-truth models and labelled `(z, y)` datasets with known structure.
//!
//! A ground truth is built in four steps:
//!
//! 1. A binary membership matrix `S` whose column sums follow a binomial
//!    `Bin(N, C/N)` truncated to `[C_min, C_max]` (a column is resampled
//!    whole until its sum is in range).
//! 2. A swap phase that moves rarely used cells into random assemblies,
//!    evicting a current member, and keeps a swap only if the mean pairwise
//!    cosine similarity between columns drops.
//! 3. `P[i][a] ~ N(1 - mu_P, sigma_P)` truncated to `[0, 1]` for members and
//!    exactly 1 for non-members, `R_i ~ N(1 - mu_R, sigma_R)` on `[0, 1]` and
//!    `Q ~ N(K / M, sigma_Q)` on `[0, 1]`.
//! 4. Latent vectors drawn from i.i.d. `Bernoulli(Q)` units, resampled while
//!    `|z|` falls outside `[K_min, K_max]`, and words drawn cell by cell from
//!    `Bernoulli(1 - T_i)`.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{BlvError, Result};
use crate::model::{cond_silence_probs, LatentVector, ModelParams, SpikeWord};

/// Rejection sampling gives up after this many attempts per draw.
pub const MAX_ATTEMPTS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthHyperparams {
    pub n_cells: usize,
    pub n_latents: usize,
    /// Most probable number of simultaneously active assemblies.
    pub k: usize,
    pub k_min: usize,
    pub k_max: usize,
    /// Most probable assembly size.
    pub c: usize,
    pub c_min: usize,
    pub c_max: usize,
    pub mu_p: f64,
    pub sigma_p: f64,
    pub mu_r: f64,
    pub sigma_r: f64,
    pub sigma_q: f64,
    /// Swap-phase iterations; `None` means `50 * M`.
    pub swap_iters: Option<usize>,
}

impl SynthHyperparams {
    /// Values fitted to retinal responses to a natural movie.
    pub fn natural_movie(n_cells: usize, n_latents: usize) -> Self {
        Self {
            n_cells,
            n_latents,
            k: 1,
            k_min: 0,
            k_max: 4,
            c: 6,
            c_min: 2,
            c_max: 6,
            mu_p: 0.3,
            sigma_p: 0.1,
            mu_r: 0.04,
            sigma_r: 0.02,
            sigma_q: 0.0,
            swap_iters: None,
        }
    }

    /// Values fitted to retinal responses to white noise.
    pub fn white_noise(n_cells: usize, n_latents: usize) -> Self {
        Self {
            k: 2,
            c: 2,
            mu_p: 0.55,
            sigma_p: 0.05,
            ..Self::natural_movie(n_cells, n_latents)
        }
    }

    pub fn swap_iterations(&self) -> usize {
        self.swap_iters.unwrap_or(50 * self.n_latents)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BlvError::InvalidArgument(msg));
        if self.n_cells == 0 || self.n_latents == 0 {
            return bad("N and M must be positive".into());
        }
        if !(self.k_min <= self.k && self.k <= self.k_max && self.k_max <= self.n_latents) {
            return bad(format!(
                "need K_min <= K <= K_max <= M, got {} <= {} <= {} <= {}",
                self.k_min, self.k, self.k_max, self.n_latents
            ));
        }
        if !(self.c_min <= self.c && self.c <= self.c_max && self.c_max <= self.n_cells) {
            return bad(format!(
                "need C_min <= C <= C_max <= N, got {} <= {} <= {} <= {}",
                self.c_min, self.c, self.c_max, self.n_cells
            ));
        }
        for (name, v) in [
            ("mu_P", self.mu_p),
            ("sigma_P", self.sigma_p),
            ("mu_R", self.mu_r),
            ("sigma_R", self.sigma_r),
            ("sigma_Q", self.sigma_q),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.mu_p > 1.0 || self.mu_r > 1.0 {
            return bad("mu_P and mu_R must not exceed 1".into());
        }
        Ok(())
    }
}

/// A synthesized model together with the membership matrix it was built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub params: ModelParams,
    /// `N x M` binary membership matrix `S`.
    pub membership: Array2<bool>,
    pub hyper: SynthHyperparams,
}

/// Generated `(z, y)` pairs plus the ground truth that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub gt: GroundTruth,
    pub pairs: Vec<(LatentVector, SpikeWord)>,
}

impl LabeledDataset {
    pub fn words(&self) -> Vec<SpikeWord> {
        self.pairs.iter().map(|(_, y)| y.clone()).collect()
    }

    pub fn latents(&self) -> Vec<LatentVector> {
        self.pairs.iter().map(|(z, _)| z.clone()).collect()
    }
}

/// Draw from `N(mu, sd)` truncated to `[lo, hi]` by rejection.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    mu: f64,
    sd: f64,
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(lo < hi) || !(sd >= 0.0) || !mu.is_finite() || !sd.is_finite() {
        return Err(BlvError::InvalidArgument(format!(
            "truncated normal needs lo < hi and sd >= 0 (mu={mu}, sd={sd}, [{lo}, {hi}])"
        )));
    }
    if sd == 0.0 {
        return Ok(mu.clamp(lo, hi));
    }
    let normal = Normal::new(mu, sd).map_err(|e| BlvError::InvalidArgument(e.to_string()))?;
    for _ in 0..MAX_ATTEMPTS {
        let x = normal.sample(rng);
        if (lo..=hi).contains(&x) {
            return Ok(x);
        }
    }
    Err(BlvError::AttemptCapExceeded {
        distribution: format!("N({mu}, {sd}) truncated to [{lo}, {hi}]"),
        attempts: MAX_ATTEMPTS,
    })
}

fn column_cosine(s: &Array2<bool>, a: usize, b: usize) -> f64 {
    let mut both = 0usize;
    let mut na = 0usize;
    let mut nb = 0usize;
    for i in 0..s.nrows() {
        let (x, y) = (s[[i, a]], s[[i, b]]);
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    if na == 0 || nb == 0 {
        0.0
    } else {
        both as f64 / ((na * nb) as f64).sqrt()
    }
}

/// Mean cosine similarity over all unordered pairs of columns.
pub fn mean_pairwise_column_cosine(s: &Array2<bool>) -> f64 {
    let m = s.ncols();
    if m < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for a in 0..m {
        for b in a + 1..m {
            total += column_cosine(s, a, b);
        }
    }
    total / (m * (m - 1) / 2) as f64
}

fn overlap_with_others(s: &Array2<bool>, a: usize) -> f64 {
    (0..s.ncols())
        .filter(|&b| b != a)
        .map(|b| column_cosine(s, a, b))
        .sum()
}

/// Binary membership matrix with bounded column sums and reduced overlap.
pub fn build_membership<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    c: usize,
    c_min: usize,
    c_max: usize,
    n_swap_iters: usize,
    rng: &mut R,
) -> Result<Array2<bool>> {
    if n == 0 || m == 0 || c > n || c_min > c_max || c_max > n {
        return Err(BlvError::InvalidArgument(format!(
            "invalid membership bounds: N={n}, C={c}, C_min={c_min}, C_max={c_max}"
        )));
    }
    let p = c as f64 / n as f64;
    let mut s = Array2::from_elem((n, m), false);
    for a in 0..m {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            let col: Vec<bool> = (0..n).map(|_| rng.random_bool(p)).collect();
            let sum = col.iter().filter(|&&b| b).count();
            if (c_min..=c_max).contains(&sum) {
                for (i, v) in col.into_iter().enumerate() {
                    s[[i, a]] = v;
                }
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(BlvError::AttemptCapExceeded {
                distribution: format!("Bin({n}, {p}) truncated to [{c_min}, {c_max}]"),
                attempts: MAX_ATTEMPTS,
            });
        }
    }
    swap_phase(&mut s, n_swap_iters, rng);
    Ok(s)
}

fn swap_phase<R: Rng + ?Sized>(s: &mut Array2<bool>, iters: usize, rng: &mut R) {
    let (n, m) = s.dim();
    if m < 2 {
        return;
    }
    for _ in 0..iters {
        let row_sums: Vec<usize> = (0..n)
            .map(|i| s.row(i).iter().filter(|&&b| b).count())
            .collect();
        let least = *row_sums.iter().min().expect("n > 0");
        let candidates: Vec<usize> = (0..n).filter(|&i| row_sums[i] == least).collect();
        let cell = candidates[rng.random_range(0..candidates.len())];
        let a = rng.random_range(0..m);
        if s[[cell, a]] {
            continue;
        }
        let members: Vec<usize> = (0..n).filter(|&i| s[[i, a]]).collect();
        if members.is_empty() {
            continue;
        }
        let evicted = members[rng.random_range(0..members.len())];
        let before = overlap_with_others(s, a);
        s[[cell, a]] = true;
        s[[evicted, a]] = false;
        let after = overlap_with_others(s, a);
        // Only column `a` changed, so the pairwise mean moves with its row of
        // the similarity matrix.
        if !(after < before - 1e-12) {
            s[[cell, a]] = false;
            s[[evicted, a]] = true;
        }
    }
}

/// Conditional silence matrix: members near `1 - mu_P`, non-members 1.
pub fn build_p<R: Rng + ?Sized>(
    s: &Array2<bool>,
    mu_p: f64,
    sigma_p: f64,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let mut p = Array2::from_elem(s.dim(), 1.0);
    for ((i, a), &member) in s.indexed_iter() {
        if member {
            p[[i, a]] = sample_truncated_normal(1.0 - mu_p, sigma_p, 0.0, 1.0, rng)?;
        }
    }
    Ok(p)
}

/// Synthesize a full ground-truth model.
pub fn synthesize_gt<R: Rng + ?Sized>(hyper: &SynthHyperparams, rng: &mut R) -> Result<GroundTruth> {
    hyper.validate()?;
    let s = build_membership(
        hyper.n_cells,
        hyper.n_latents,
        hyper.c,
        hyper.c_min,
        hyper.c_max,
        hyper.swap_iterations(),
        rng,
    )?;
    let p = build_p(&s, hyper.mu_p, hyper.sigma_p, rng)?;
    let r = (0..hyper.n_cells)
        .map(|_| sample_truncated_normal(1.0 - hyper.mu_r, hyper.sigma_r, 0.0, 1.0, rng))
        .collect::<Result<Vec<_>>>()?;
    let q = sample_truncated_normal(
        hyper.k as f64 / hyper.n_latents as f64,
        hyper.sigma_q,
        0.0,
        1.0,
        rng,
    )?;
    Ok(GroundTruth {
        params: ModelParams::from_probabilities(&p, &Array1::from(r), q)?,
        membership: s,
        hyper: hyper.clone(),
    })
}

/// Latent vector with `|z|` restricted to `[K_min, K_max]`.
pub fn sample_latent<R: Rng + ?Sized>(
    hyper: &SynthHyperparams,
    q: f64,
    rng: &mut R,
) -> Result<LatentVector> {
    if !(0.0..=1.0).contains(&q) {
        return Err(BlvError::InvalidProbability {
            what: "Q",
            value: q,
            range: "[0, 1]",
        });
    }
    let m = hyper.n_latents;
    for _ in 0..MAX_ATTEMPTS {
        let bits: Vec<bool> = (0..m).map(|_| rng.random_bool(q)).collect();
        let k = bits.iter().filter(|&&b| b).count();
        if (hyper.k_min..=hyper.k_max).contains(&k) {
            return Ok(LatentVector::new(bits));
        }
    }
    Err(BlvError::AttemptCapExceeded {
        distribution: format!(
            "Bin({m}, {q}) truncated to [{}, {}]",
            hyper.k_min, hyper.k_max
        ),
        attempts: MAX_ATTEMPTS,
    })
}

/// Draw `y_i ~ Bernoulli(1 - T_i)` independently for every cell.
pub fn generate_word<R: Rng + ?Sized>(
    gt: &GroundTruth,
    z: &LatentVector,
    rng: &mut R,
) -> Result<SpikeWord> {
    let t = cond_silence_probs(&gt.params, z)?;
    Ok(SpikeWord::new(
        t.iter().map(|&ti| rng.random_bool((1.0 - ti).clamp(0.0, 1.0))).collect(),
    ))
}

/// Generate `count` labelled pairs from a ground truth.
pub fn generate_dataset<R: Rng + ?Sized>(
    gt: &GroundTruth,
    count: usize,
    rng: &mut R,
) -> Result<LabeledDataset> {
    let q = gt.params.q();
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let z = sample_latent(&gt.hyper, q, rng)?;
        let y = generate_word(gt, &z, rng)?;
        pairs.push((z, y));
    }
    Ok(LabeledDataset {
        gt: gt.clone(),
        pairs,
    })
}
