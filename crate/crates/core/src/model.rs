//! Model parameters and the probabilistic quantities of the noisy-OR
//! binary latent variable model.
//!
//! A model over `N` observed cells and `M` latent assemblies holds three
//! groups of parameters, all stored as logits so learning can run
//! unconstrained gradient ascent:
//!
//! * `P` (`N x M`): `P[i][a]` is the probability that cell `i` stays silent
//!   when assembly `a` is active. Low values mean strong membership.
//! * `R` (`N`): probability that cell `i` stays silent when no assembly is
//!   active.
//! * `Q`: probability that any single assembly is active.
//!
//! Inactive assemblies share a single mean-field contribution, so the
//! silence probability of cell `i` given a latent vector `z` with `|z|`
//! active units is
//!
//! ```text
//! T_i = R_i^(1 - |z|/M) * prod_a P_ia^(z_a)
//! ```

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{BlvError, Result};

/// Logits are kept inside `[-LOGIT_BOUND, LOGIT_BOUND]` by every learning
/// update, so probabilities stay within about `6e-6` of the unit interval
/// endpoints.
pub const LOGIT_BOUND: f64 = 12.0;

/// Homeostatic activation probabilities are clamped to
/// `[HE_PROB_FLOOR, 1 - HE_PROB_FLOOR]`.
pub const HE_PROB_FLOOR: f64 = 1e-6;

/// The logistic function `1 / (1 + exp(-x))`.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`logistic`]. Only defined on the open unit interval.
pub fn logit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(BlvError::InvalidProbability {
            what: "logit argument",
            value: p,
            range: "(0, 1)",
        });
    }
    Ok((p / (1.0 - p)).ln())
}

/// Clamp a logit to the learning bounds.
pub fn clamp_logit(x: f64) -> f64 {
    x.clamp(-LOGIT_BOUND, LOGIT_BOUND)
}

/// `log(logistic(x))`, accurate for large `|x|` and exact at the infinities.
pub fn log_logistic(x: f64) -> f64 {
    if x == f64::INFINITY {
        0.0
    } else if x == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `log(1 - exp(x))` for `x <= 0`. Returns `-inf` at `x = 0`.
pub(crate) fn log1m_exp(x: f64) -> f64 {
    if x >= 0.0 {
        f64::NEG_INFINITY
    } else if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// Probability to logit, mapping the closed interval endpoints to the
/// infinities (used for ground-truth models, where `P = 1` is exact).
pub(crate) fn logit_closed(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(BlvError::InvalidProbability {
            what: "model parameter",
            value: p,
            range: "[0, 1]",
        });
    }
    Ok(if p == 0.0 {
        f64::NEG_INFINITY
    } else if p == 1.0 {
        f64::INFINITY
    } else {
        (p / (1.0 - p)).ln()
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct SparseBits {
    len: u32,
    active: Vec<u32>,
}

fn bits_from_sparse(s: SparseBits) -> Result<Vec<bool>, String> {
    let mut bits = vec![false; s.len as usize];
    for &i in &s.active {
        let slot = bits
            .get_mut(i as usize)
            .ok_or_else(|| format!("active index {i} out of range {}", s.len))?;
        *slot = true;
    }
    Ok(bits)
}

fn sparse_from_bits(bits: &[bool]) -> SparseBits {
    SparseBits {
        len: bits.len() as u32,
        active: bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i as u32))
            .collect(),
    }
}

macro_rules! binary_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(into = "SparseBits", try_from = "SparseBits")]
        pub struct $name {
            bits: Vec<bool>,
        }

        impl $name {
            pub fn new(bits: Vec<bool>) -> Self {
                Self { bits }
            }

            pub fn zeros(len: usize) -> Self {
                Self { bits: vec![false; len] }
            }

            /// Build from the indices of the active entries.
            pub fn from_active(len: usize, active: &[usize]) -> Result<Self> {
                let mut bits = vec![false; len];
                for &i in active {
                    if i >= len {
                        return Err(BlvError::InvalidArgument(format!(
                            "active index {i} out of range for length {len}"
                        )));
                    }
                    bits[i] = true;
                }
                Ok(Self { bits })
            }

            pub fn len(&self) -> usize {
                self.bits.len()
            }

            pub fn is_empty(&self) -> bool {
                self.bits.is_empty()
            }

            pub fn get(&self, i: usize) -> bool {
                self.bits[i]
            }

            pub fn bits(&self) -> &[bool] {
                &self.bits
            }

            /// Indices of active entries in ascending order.
            pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
                self.bits
                    .iter()
                    .enumerate()
                    .filter_map(|(i, &b)| b.then_some(i))
            }

            pub fn count_active(&self) -> usize {
                self.bits.iter().filter(|&&b| b).count()
            }
        }

        impl From<$name> for SparseBits {
            fn from(v: $name) -> SparseBits {
                sparse_from_bits(&v.bits)
            }
        }

        impl TryFrom<SparseBits> for $name {
            type Error = String;
            fn try_from(s: SparseBits) -> Result<Self, String> {
                bits_from_sparse(s).map(|bits| Self { bits })
            }
        }
    };
}

binary_vector!(
    /// Binary observation vector `y` over the `N` cells.
    SpikeWord
);

binary_vector!(
    /// Binary latent vector `z` over the `M` assemblies.
    LatentVector
);

impl LatentVector {
    pub fn ones(len: usize) -> Self {
        Self::new(vec![true; len])
    }

    pub fn one_hot(len: usize, a: usize) -> Self {
        let mut bits = vec![false; len];
        bits[a] = true;
        Self::new(bits)
    }

    /// Number of active latent units, `|z|`.
    pub fn cardinality(&self) -> usize {
        self.count_active()
    }
}

/// Learnable parameters `(P, R, Q)` stored in logistic space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    rho: Array2<f64>,
    r_logit: Array1<f64>,
    q_logit: f64,
}

impl ModelParams {
    /// Build from logits. `rho` is `N x M`, `r_logit` has length `N`.
    pub fn new(rho: Array2<f64>, r_logit: Array1<f64>, q_logit: f64) -> Result<Self> {
        let (n, m) = rho.dim();
        if n == 0 || m == 0 {
            return Err(BlvError::InvalidArgument(
                "model needs at least one cell and one latent".into(),
            ));
        }
        if r_logit.len() != n {
            return Err(BlvError::DimensionMismatch {
                what: "R length vs rows of P",
                expected: n,
                got: r_logit.len(),
            });
        }
        if rho.iter().chain(r_logit.iter()).any(|v| v.is_nan()) || q_logit.is_nan() {
            return Err(BlvError::InvalidArgument("NaN parameter".into()));
        }
        Ok(Self {
            rho,
            r_logit,
            q_logit,
        })
    }

    /// Build from probability-space values. Exact 0 and 1 are allowed and
    /// stored as infinite logits.
    pub fn from_probabilities(p: &Array2<f64>, r: &Array1<f64>, q: f64) -> Result<Self> {
        let mut rho = Array2::zeros(p.dim());
        for (dst, &src) in rho.iter_mut().zip(p.iter()) {
            *dst = logit_closed(src)?;
        }
        let r_logit = r.iter().map(|&v| logit_closed(v)).collect::<Result<Vec<_>>>()?;
        Self::new(rho, Array1::from(r_logit), logit_closed(q)?)
    }

    pub fn n_cells(&self) -> usize {
        self.rho.nrows()
    }

    pub fn n_latents(&self) -> usize {
        self.rho.ncols()
    }

    pub fn rho(&self) -> &Array2<f64> {
        &self.rho
    }

    pub fn r_logit(&self) -> &Array1<f64> {
        &self.r_logit
    }

    pub fn q_logit(&self) -> f64 {
        self.q_logit
    }

    pub(crate) fn rho_mut(&mut self) -> &mut Array2<f64> {
        &mut self.rho
    }

    pub(crate) fn r_logit_mut(&mut self) -> &mut Array1<f64> {
        &mut self.r_logit
    }

    pub(crate) fn set_q_logit(&mut self, q: f64) {
        self.q_logit = q;
    }

    pub fn p(&self, i: usize, a: usize) -> f64 {
        logistic(self.rho[[i, a]])
    }

    pub fn r(&self, i: usize) -> f64 {
        logistic(self.r_logit[i])
    }

    pub fn q(&self) -> f64 {
        logistic(self.q_logit)
    }

    pub fn p_matrix(&self) -> Array2<f64> {
        self.rho.mapv(logistic)
    }

    pub fn r_vector(&self) -> Array1<f64> {
        self.r_logit.mapv(logistic)
    }

    /// Membership strengths `1 - P`, i.e. `p(y_i = 1 | z_a = 1)` ignoring
    /// the spontaneous term. Large values mean crisp membership.
    pub fn strengths(&self) -> Array2<f64> {
        // 1 - logistic(x) == logistic(-x), which keeps precision near P = 1.
        self.rho.mapv(|x| logistic(-x))
    }

    pub(crate) fn log_p(&self) -> Array2<f64> {
        self.rho.mapv(log_logistic)
    }

    pub(crate) fn log_r(&self) -> Array1<f64> {
        self.r_logit.mapv(log_logistic)
    }

    /// Clamp every logit to `[-LOGIT_BOUND, LOGIT_BOUND]`.
    pub fn clamp_in_place(&mut self) {
        self.rho.mapv_inplace(clamp_logit);
        self.r_logit.mapv_inplace(clamp_logit);
        self.q_logit = clamp_logit(self.q_logit);
    }

    fn check_word(&self, y: &SpikeWord) -> Result<()> {
        if y.len() != self.n_cells() {
            return Err(BlvError::DimensionMismatch {
                what: "spike-word length vs model cells",
                expected: self.n_cells(),
                got: y.len(),
            });
        }
        Ok(())
    }

    fn check_latent(&self, z: &LatentVector) -> Result<()> {
        if z.len() != self.n_latents() {
            return Err(BlvError::DimensionMismatch {
                what: "latent vector length vs model latents",
                expected: self.n_latents(),
                got: z.len(),
            });
        }
        Ok(())
    }
}

/// Usage statistics for the homeostatic-egalitarian prior: how often each
/// latent unit has been inferred active, and how many inference steps ran.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HEState {
    rates: Vec<f64>,
    steps: u64,
}

impl HEState {
    /// Fresh state with every rate set to 1.
    pub fn new(n_latents: usize) -> Self {
        Self {
            rates: vec![1.0; n_latents],
            steps: 0,
        }
    }

    pub fn from_parts(rates: Vec<f64>, steps: u64) -> Result<Self> {
        if rates.is_empty() {
            return Err(BlvError::EmptyInput("HE rates"));
        }
        if let Some(&bad) = rates.iter().find(|&&r| !(r > 0.0 && r.is_finite())) {
            return Err(BlvError::InvalidArgument(format!(
                "HE rates must be positive and finite, found {bad}"
            )));
        }
        Ok(Self { rates, steps })
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn n_latents(&self) -> usize {
        self.rates.len()
    }

    /// Count one inference step that produced `z`.
    pub fn record(&mut self, z: &LatentVector) {
        for a in z.active() {
            self.rates[a] += 1.0;
        }
        self.steps += 1;
    }

    /// Clamped activation probabilities `Q_a(t)` for every unit.
    pub fn activation_probs(&self, q: f64) -> Vec<f64> {
        let mean = self.rates.iter().sum::<f64>() / self.rates.len() as f64;
        self.rates
            .iter()
            .map(|&r| (q * mean / r).clamp(HE_PROB_FLOOR, 1.0 - HE_PROB_FLOOR))
            .collect()
    }
}

/// Which latent prior a model is trained or scored under.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    #[default]
    Binomial,
    HomeostaticEgalitarian,
}

/// A latent prior together with whatever state it needs.
#[derive(Clone, Copy, Debug)]
pub enum Prior<'a> {
    Binomial,
    HomeostaticEgalitarian(&'a HEState),
}

impl Prior<'_> {
    pub fn kind(&self) -> PriorKind {
        match self {
            Prior::Binomial => PriorKind::Binomial,
            Prior::HomeostaticEgalitarian(_) => PriorKind::HomeostaticEgalitarian,
        }
    }
}

/// `log T_i` for every cell; `T_i = p(y_i = 0 | z)`.
pub(crate) fn log_silence(model: &ModelParams, z: &LatentVector) -> Vec<f64> {
    let m = model.n_latents() as f64;
    let exponent = 1.0 - z.cardinality() as f64 / m;
    let active: Vec<usize> = z.active().collect();
    (0..model.n_cells())
        .map(|i| {
            // Skip zero exponents explicitly so that 0 * log(0) never appears.
            let mut acc = if exponent > 0.0 {
                exponent * log_logistic(model.r_logit[i])
            } else {
                0.0
            };
            for &a in &active {
                acc += log_logistic(model.rho[[i, a]]);
            }
            acc
        })
        .collect()
}

/// Conditional silence probabilities `T_i = p(y_i = 0 | z)`.
pub fn cond_silence_probs(model: &ModelParams, z: &LatentVector) -> Result<Vec<f64>> {
    model.check_latent(z)?;
    Ok(log_silence(model, z).into_iter().map(f64::exp).collect())
}

/// `log p(y | z)`. Returns `-inf` when a required probability is exactly 0.
pub fn log_likelihood(model: &ModelParams, y: &SpikeWord, z: &LatentVector) -> Result<f64> {
    model.check_word(y)?;
    model.check_latent(z)?;
    Ok(log_silence(model, z)
        .into_iter()
        .zip(y.bits())
        .map(|(log_t, &spiked)| if spiked { log1m_exp(log_t) } else { log_t })
        .sum())
}

/// `log C(m, k)` via log-gamma.
pub fn log_choose(m: usize, k: usize) -> f64 {
    ln_gamma(m as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((m - k) as f64 + 1.0)
}

/// `log Bin(k; m, q)`, the count prior on `|z|`.
pub fn log_binomial_prior(m: usize, q: f64, k: usize) -> Result<f64> {
    if k > m {
        return Err(BlvError::InvalidArgument(format!(
            "active count {k} exceeds latent dimension {m}"
        )));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(BlvError::InvalidProbability {
            what: "Q",
            value: q,
            range: "[0, 1]",
        });
    }
    let kf = k as f64;
    let rest = (m - k) as f64;
    // Same 0 * log(0) guard as in the likelihood.
    let on = if k == 0 { 0.0 } else { kf * q.ln() };
    let off = if m == k { 0.0 } else { rest * (-q).ln_1p() };
    Ok(log_choose(m, k) + on + off)
}

/// Log joint under the binomial prior: one count-prior term per word plus
/// the likelihood summed over all cells.
pub fn log_joint(model: &ModelParams, y: &SpikeWord, z: &LatentVector) -> Result<f64> {
    log_joint_with(model, Prior::Binomial, y, z)
}

/// Log joint under an arbitrary prior.
pub fn log_joint_with(
    model: &ModelParams,
    prior: Prior<'_>,
    y: &SpikeWord,
    z: &LatentVector,
) -> Result<f64> {
    let ll = log_likelihood(model, y, z)?;
    let lp = match prior {
        Prior::Binomial => log_binomial_prior(model.n_latents(), model.q(), z.cardinality())?,
        Prior::HomeostaticEgalitarian(state) => {
            if state.n_latents() != model.n_latents() {
                return Err(BlvError::DimensionMismatch {
                    what: "HE state latents vs model latents",
                    expected: model.n_latents(),
                    got: state.n_latents(),
                });
            }
            log_he_prior(state, model.q(), z)?
        }
    };
    Ok(lp + ll)
}

/// Usage-dependent activation probability `Q_a(t) = Q * mean(r) / r_a`,
/// clamped to `[1e-6, 1 - 1e-6]`.
pub fn he_activation_prob(state: &HEState, q: f64, a: usize) -> Result<f64> {
    if a >= state.n_latents() {
        return Err(BlvError::InvalidArgument(format!(
            "latent index {a} out of range {}",
            state.n_latents()
        )));
    }
    let mean = state.rates.iter().sum::<f64>() / state.rates.len() as f64;
    Ok((q * mean / state.rates[a]).clamp(HE_PROB_FLOOR, 1.0 - HE_PROB_FLOOR))
}

/// Factorial log prior `sum_a z_a log Q_a + (1 - z_a) log(1 - Q_a)`.
pub fn log_he_prior(state: &HEState, q: f64, z: &LatentVector) -> Result<f64> {
    if z.len() != state.n_latents() {
        return Err(BlvError::DimensionMismatch {
            what: "latent vector length vs HE state",
            expected: state.n_latents(),
            got: z.len(),
        });
    }
    Ok(state
        .activation_probs(q)
        .iter()
        .zip(z.bits())
        .map(|(&qa, &on)| if on { qa.ln() } else { (-qa).ln_1p() })
        .sum())
}
