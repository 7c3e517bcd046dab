//! Stochastic EM: infer `z` for one word with the current parameters, then
//! take one gradient-ascent step on the log joint in logit space.
//!
//! With `b_i = (1 - y_i) - y_i T_i / (1 - T_i)` the gradients are
//!
//! ```text
//! d/dq      = |z| - M sigma(q)                                   (binomial prior)
//! d/dq      = (1 - sigma(q)) sum_a [z_a - (1 - z_a) Q_a / (1 - Q_a)]   (HE prior)
//! d/dr_i    = (1 - |z|/M) (1 - sigma(r_i)) b_i
//! d/drho_ia = z_a (1 - sigma(rho_ia)) b_i
//! ```

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{BlvError, Result};
use crate::inference::{greedy_with_tables, InferenceConfig, ModelTables};
use crate::model::{
    clamp_logit, log1m_exp, log_silence, logistic, logit, logit_closed, HEState, LatentVector,
    ModelParams, Prior, PriorKind, SpikeWord,
};

/// Order in which a training pass visits the corpus.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleOrder {
    #[default]
    Shuffled,
    Sequential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnConfig {
    /// Latent dimension; `None` uses the number of cells.
    pub n_latents: Option<usize>,
    pub learning_rate: f64,
    /// Pass `p` (0-based) uses `learning_rate / (1 + lr_decay * p)`.
    pub lr_decay: f64,
    pub n_passes: usize,
    pub prior_kind: PriorKind,
    pub sample_order: SampleOrder,
    pub rng_seed: u64,
    /// Initial level of `P` and `R` before jitter.
    pub init_silence: f64,
    /// Standard deviation of the Gaussian jitter added to initial logits.
    pub init_jitter_sd: f64,
    /// Initial `Q`; `None` uses `1 / M`.
    pub q_init: Option<f64>,
    pub inference: InferenceConfig,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            n_latents: None,
            learning_rate: 0.1,
            lr_decay: 0.0,
            n_passes: 3,
            prior_kind: PriorKind::Binomial,
            sample_order: SampleOrder::Shuffled,
            rng_seed: 0,
            init_silence: 0.99,
            init_jitter_sd: 0.1,
            q_init: None,
            inference: InferenceConfig::default(),
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(BlvError::InvalidArgument(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(self.init_silence > 0.0 && self.init_silence < 1.0) {
            return Err(BlvError::InvalidProbability {
                what: "init_silence",
                value: self.init_silence,
                range: "(0, 1)",
            });
        }
        if !(self.init_jitter_sd >= 0.0) || !(self.lr_decay >= 0.0) {
            return Err(BlvError::InvalidArgument(
                "jitter and decay must be non-negative".into(),
            ));
        }
        if let Some(q) = self.q_init {
            if !(q > 0.0 && q < 1.0) {
                return Err(BlvError::InvalidProbability {
                    what: "q_init",
                    value: q,
                    range: "(0, 1)",
                });
            }
        }
        Ok(())
    }
}

/// Per-pass record of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Mean log joint of the inferred `z` (before each update), per pass.
    pub pass_mean_log_joint: Vec<f64>,
    /// How often each latent was inferred active over the whole run.
    pub usage: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub trace: TrainTrace,
    pub he_state: HEState,
}

/// Nearly silent initial model with Gaussian jitter on the logits.
pub fn init_model(n: usize, m: usize, cfg: &LearnConfig) -> Result<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    init_model_with(n, m, cfg, &mut rng)
}

fn init_model_with(n: usize, m: usize, cfg: &LearnConfig, rng: &mut ChaCha8Rng) -> Result<ModelParams> {
    cfg.validate()?;
    if n == 0 || m == 0 {
        return Err(BlvError::InvalidArgument(
            "model needs at least one cell and one latent".into(),
        ));
    }
    let base = logit(cfg.init_silence)?;
    let draw = |rng: &mut ChaCha8Rng| -> f64 {
        if cfg.init_jitter_sd == 0.0 {
            base
        } else {
            let noise = Normal::new(0.0, cfg.init_jitter_sd).expect("validated sd");
            clamp_logit(base + noise.sample(rng))
        }
    };
    let rho = Array2::from_shape_simple_fn((n, m), || draw(rng));
    let r = Array1::from_shape_simple_fn(n, || draw(rng));
    let q = cfg.q_init.unwrap_or(1.0 / m as f64);
    ModelParams::new(rho, r, clamp_logit(logit_closed(q)?))
}

/// Gradient of the binomial log prior with respect to `q`.
pub fn grad_q(model: &ModelParams, z: &LatentVector) -> f64 {
    z.cardinality() as f64 - model.n_latents() as f64 * model.q()
}

/// Shared bracket `(1 - y_i) - y_i T_i / (1 - T_i)` from `log T_i`.
fn bracket(spiked: bool, log_t: f64) -> f64 {
    if spiked {
        -(log_t - log1m_exp(log_t)).exp()
    } else {
        1.0
    }
}

fn check_dims(model: &ModelParams, y: &SpikeWord, z: &LatentVector) -> Result<()> {
    if y.len() != model.n_cells() {
        return Err(BlvError::DimensionMismatch {
            what: "spike-word length vs model cells",
            expected: model.n_cells(),
            got: y.len(),
        });
    }
    if z.len() != model.n_latents() {
        return Err(BlvError::DimensionMismatch {
            what: "latent vector length vs model latents",
            expected: model.n_latents(),
            got: z.len(),
        });
    }
    Ok(())
}

/// Gradient of the log joint with respect to the `R` logits.
pub fn grad_r(model: &ModelParams, y: &SpikeWord, z: &LatentVector) -> Result<Array1<f64>> {
    check_dims(model, y, z)?;
    let lead = 1.0 - z.cardinality() as f64 / model.n_latents() as f64;
    let log_t = log_silence(model, z);
    Ok(Array1::from_shape_fn(model.n_cells(), |i| {
        if lead == 0.0 {
            0.0
        } else {
            lead * logistic(-model.r_logit()[i]) * bracket(y.get(i), log_t[i])
        }
    }))
}

/// Gradient of the log joint with respect to the `P` logits. Columns of
/// inactive latents are exactly zero.
pub fn grad_rho(model: &ModelParams, y: &SpikeWord, z: &LatentVector) -> Result<Array2<f64>> {
    check_dims(model, y, z)?;
    let log_t = log_silence(model, z);
    let mut g = Array2::zeros((model.n_cells(), model.n_latents()));
    for a in z.active() {
        for i in 0..model.n_cells() {
            g[[i, a]] = logistic(-model.rho()[[i, a]]) * bracket(y.get(i), log_t[i]);
        }
    }
    Ok(g)
}

/// Gradient of the homeostatic-egalitarian log prior with respect to `q`,
/// holding the usage rates fixed.
pub fn grad_q_he(state: &HEState, model: &ModelParams, z: &LatentVector) -> Result<f64> {
    if z.len() != state.n_latents() || state.n_latents() != model.n_latents() {
        return Err(BlvError::DimensionMismatch {
            what: "latent vector / HE state / model latents",
            expected: model.n_latents(),
            got: z.len(),
        });
    }
    let q = model.q();
    let sum: f64 = state
        .activation_probs(q)
        .iter()
        .zip(z.bits())
        .map(|(&qa, &on)| if on { 1.0 } else { -qa / (1.0 - qa) })
        .sum();
    Ok((1.0 - q) * sum)
}

/// A model being trained together with its cached log tables.
struct Trainer<'c> {
    model: ModelParams,
    tables: ModelTables,
    he: HEState,
    cfg: &'c LearnConfig,
}

impl<'c> Trainer<'c> {
    fn new(model: ModelParams, he: HEState, cfg: &'c LearnConfig) -> Self {
        let tables = ModelTables::new(&model);
        Self {
            model,
            tables,
            he,
            cfg,
        }
    }

    fn prior(&self) -> Prior<'_> {
        match self.cfg.prior_kind {
            PriorKind::Binomial => Prior::Binomial,
            PriorKind::HomeostaticEgalitarian => Prior::HomeostaticEgalitarian(&self.he),
        }
    }

    /// One EM step; returns the inferred `z` and its log joint.
    fn step(&mut self, y: &SpikeWord, lr: f64) -> Result<(LatentVector, f64)> {
        let (z, score) = greedy_with_tables(&self.tables, y, &self.cfg.inference, self.prior())?;
        if lr != 0.0 {
            self.update(y, &z, lr)?;
        }
        if self.cfg.prior_kind == PriorKind::HomeostaticEgalitarian {
            self.he.record(&z);
        }
        Ok((z, score))
    }

    fn update(&mut self, y: &SpikeWord, z: &LatentVector, lr: f64) -> Result<()> {
        let m = self.model.n_latents();
        let k = z.cardinality();
        let lead = 1.0 - k as f64 / m as f64;
        let active: Vec<usize> = z.active().collect();

        let gq = match self.cfg.prior_kind {
            PriorKind::Binomial => grad_q(&self.model, z),
            PriorKind::HomeostaticEgalitarian => grad_q_he(&self.he, &self.model, z)?,
        };

        let brackets: Vec<f64> = (0..self.model.n_cells())
            .map(|i| {
                let mut log_t = if lead > 0.0 {
                    lead * self.tables.log_r_at(i)
                } else {
                    0.0
                };
                for &a in &active {
                    log_t += self.tables.log_p_at(i, a);
                }
                bracket(y.get(i), log_t)
            })
            .collect();

        {
            let r = self.model.r_logit_mut();
            if lead > 0.0 {
                for (ri, &b) in r.iter_mut().zip(&brackets) {
                    *ri = clamp_logit(*ri + lr * lead * logistic(-*ri) * b);
                }
            }
        }
        {
            let rho = self.model.rho_mut();
            for &a in &active {
                for (i, &b) in brackets.iter().enumerate() {
                    let x = rho[[i, a]];
                    rho[[i, a]] = clamp_logit(x + lr * logistic(-x) * b);
                }
            }
        }
        let q = self.model.q_logit();
        self.model.set_q_logit(clamp_logit(q + lr * gq));
        self.tables.refresh(&self.model, &active);
        Ok(())
    }
}

/// One EM step on a single word: infer `z` with the current parameters,
/// then move every parameter by `learning_rate` times its gradient. Under
/// the HE prior the usage rates are incremented by `z` afterwards.
pub fn em_step(
    model: &mut ModelParams,
    y: &SpikeWord,
    cfg: &LearnConfig,
    he_state: &mut HEState,
) -> Result<LatentVector> {
    cfg.validate()?;
    let mut trainer = Trainer::new(model.clone(), he_state.clone(), cfg);
    let (z, _) = trainer.step(y, cfg.learning_rate)?;
    *model = trainer.model;
    *he_state = trainer.he;
    Ok(z)
}

/// Train a model on a corpus of spike-words.
pub fn train(corpus: &[SpikeWord], cfg: &LearnConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = corpus.first().ok_or(BlvError::EmptyInput("training corpus"))?;
    let n = first.len();
    if let Some(bad) = corpus.iter().find(|y| y.len() != n) {
        return Err(BlvError::DimensionMismatch {
            what: "spike-word length within corpus",
            expected: n,
            got: bad.len(),
        });
    }
    let m = cfg.n_latents.unwrap_or(n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let model = init_model_with(n, m, cfg, &mut rng)?;
    let mut trainer = Trainer::new(model, HEState::new(m), cfg);

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut trace = TrainTrace {
        pass_mean_log_joint: Vec::with_capacity(cfg.n_passes),
        usage: vec![0; m],
    };
    for pass in 0..cfg.n_passes {
        if cfg.sample_order == SampleOrder::Shuffled {
            order.shuffle(&mut rng);
        }
        let lr = cfg.learning_rate / (1.0 + cfg.lr_decay * pass as f64);
        let mut total = 0.0;
        for &idx in &order {
            let (z, score) = trainer.step(&corpus[idx], lr)?;
            total += score;
            for a in z.active() {
                trace.usage[a] += 1;
            }
        }
        trace.pass_mean_log_joint.push(total / corpus.len() as f64);
    }
    Ok(TrainOutcome {
        model: trainer.model,
        trace,
        he_state: trainer.he,
    })
}
