//! Command-line front end. Every command prints a one-line JSON summary on
//! stdout; errors go to stderr with exit status 1 (usage), 2 (data) or 3
//! (numeric guard).

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::{BlvError, Result};
use crate::eval::{
    activation_traces, assembly_metrics, coactivity_stats, match_strengths, MatchReport,
    MetricsInput, Partner,
};
use crate::inference::infer_corpus;
use crate::io::{
    self, bin_events, peek_kind, sha256_hex, BinnedCorpus, FileKind, LatentAssignments, ModelFile,
    NullRates, SpikeEventFile, MAGIC,
};
use crate::learning::{train, LearnConfig, SampleOrder};
use crate::model::{Prior, PriorKind, SpikeWord};
use crate::stats::{
    compare_moments, fit_hyperparams, moments, FitResult, HyperGrid, MomentSummary, QQWeights,
    DEFAULT_WORDS_PER_EVAL,
};
use crate::synthesis::{generate_dataset, synthesize_gt, GroundTruth, LabeledDataset, SynthHyperparams};

#[derive(Parser, Debug)]
#[command(name = "blv", version, about = "Binary latent variable models of spike-words")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Movie,
    WhiteNoise,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PriorArg {
    Binomial,
    He,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OrderArg {
    Shuffled,
    Sequential,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Half {
    First,
    Second,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Table {
    P,
    R,
    Usage,
    Lengths,
    Means,
    Pairs,
    Words,
    Matches,
    Grid,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a ground-truth model.
    Synth {
        #[arg(long, value_enum, default_value = "movie")]
        preset: Preset,
        #[arg(long, default_value_t = 20)]
        cells: usize,
        #[arg(long, default_value_t = 20)]
        latents: usize,
        /// TOML file with a full set of hyperparameters; overrides the preset.
        #[arg(long)]
        hyper: Option<PathBuf>,
        #[arg(long)]
        sigma_q: Option<f64>,
        #[arg(long)]
        swap_iters: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate labelled (z, y) pairs from a ground truth.
    Gen {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bin spike events into spike-words.
    Bin {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        bin_ms: f64,
        #[arg(long)]
        step_ms: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the corpus as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train a model on a corpus or dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TOML learning configuration; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        latents: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lr_decay: Option<f64>,
        #[arg(long)]
        passes: Option<usize>,
        #[arg(long, value_enum)]
        prior: Option<PriorArg>,
        #[arg(long, value_enum)]
        order: Option<OrderArg>,
        #[arg(long)]
        init_silence: Option<f64>,
        #[arg(long)]
        jitter: Option<f64>,
        #[arg(long)]
        q_init: Option<f64>,
        #[arg(long)]
        i0: Option<usize>,
        #[arg(long)]
        imax: Option<usize>,
        /// Train on one half of a seeded random split of the words.
        #[arg(long, value_enum)]
        half: Option<Half>,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
    },
    /// Infer latent vectors for every word of a corpus.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        i0: Option<usize>,
        #[arg(long)]
        imax: Option<usize>,
    },
    /// Spike-word moments of a corpus or dataset.
    Moments {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Compare against the moments of another corpus.
        #[arg(long)]
        against: Option<PathBuf>,
    },
    /// Grid search over synthesis hyperparameters.
    Fit {
        /// Moment summary or corpus to match.
        #[arg(long)]
        target: PathBuf,
        /// TOML with `preset`, `cells`, `latents`, optional `[base]` and `[grid]`.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = DEFAULT_WORDS_PER_EVAL)]
        words: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Match assemblies across two or more models or ground truths.
    Match {
        #[arg(required = true, num_args = 2..)]
        inputs: Vec<PathBuf>,
        /// Match report for the first two inputs.
        #[arg(long)]
        out: Option<PathBuf>,
        /// CSV of pairwise delta cs.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Per-assembly metrics of a model.
    Metrics {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        latents: PathBuf,
        /// Null-model firing probabilities, `trial,bin_start_ms,r_0,...`.
        #[arg(long)]
        null: Option<PathBuf>,
        /// CSV `cell,type` with exactly two types.
        #[arg(long)]
        cell_types: Option<PathBuf>,
        #[arg(long)]
        partner_model: Vec<PathBuf>,
        #[arg(long)]
        partner_latents: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 10.0, 50.0, 100.0])]
        dpy_bins: Vec<f64>,
        #[arg(long, default_value_t = 50.0)]
        rx_bin_ms: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Activation and pairwise co-activation counts of inferred latents.
    Coactivity {
        #[arg(long)]
        latents: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a stored artifact as a CSV table.
    Export {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        table: Option<Table>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(rendered.as_bytes())
            } else {
                err.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    match execute(cli.command) {
        Ok(summary) => {
            let _ = writeln!(out, "{summary}");
            0
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn with_path(path: &Path, e: std::io::Error) -> BlvError {
    BlvError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn read_bytes(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    std::fs::read(path).map_err(|e| with_path(path, e))
}

fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    std::fs::read_to_string(path).map_err(|e| with_path(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<String> {
    std::fs::write(path, bytes).map_err(|e| with_path(path, e))?;
    Ok(sha256_hex(bytes))
}

fn save_artifact<T: io::Artifact>(path: &Path, value: &T) -> Result<String> {
    write_file(path, &io::encode(value)?)
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    toml::from_str(&text).map_err(|e| BlvError::Format(format!("{}: {e}", path.display())))
}

/// Words from a dataset, a binary corpus or a corpus CSV.
struct Words {
    words: Vec<SpikeWord>,
    timestamps: Option<Vec<(usize, f64)>>,
    trial_duration_ms: Option<f64>,
    digest: String,
}

fn load_words(path: &Path) -> Result<Words> {
    let bytes = read_bytes(path)?;
    let digest = sha256_hex(&bytes);
    if !bytes.starts_with(MAGIC) {
        let text = String::from_utf8(bytes).map_err(|_| BlvError::Format("corpus is neither a container nor UTF-8 text".into()))?;
        let c = BinnedCorpus::parse_csv(&text)?;
        return Ok(Words {
            trial_duration_ms: c.provenance.as_ref().map(|p| p.trial_duration_ms),
            words: c.words,
            timestamps: c.timestamps,
            digest,
        });
    }
    match peek_kind(&bytes)? {
        FileKind::Dataset => {
            let d: LabeledDataset = io::decode(&bytes)?;
            Ok(Words {
                words: d.words(),
                timestamps: None,
                trial_duration_ms: None,
                digest,
            })
        }
        FileKind::Corpus => {
            let c: BinnedCorpus = io::decode(&bytes)?;
            Ok(Words {
                trial_duration_ms: c.provenance.as_ref().map(|p| p.trial_duration_ms),
                words: c.words,
                timestamps: c.timestamps,
                digest,
            })
        }
        other => Err(BlvError::Format(format!(
            "expected a corpus or dataset, found a {} file",
            other.name()
        ))),
    }
}

fn load_model_params(path: &Path) -> Result<(crate::model::ModelParams, String)> {
    let bytes = read_bytes(path)?;
    let params = match peek_kind(&bytes)? {
        FileKind::Model => io::decode::<ModelFile>(&bytes)?.params,
        FileKind::GroundTruth => io::decode::<GroundTruth>(&bytes)?.params,
        other => {
            return Err(BlvError::Format(format!(
                "expected a model or ground truth, found a {} file",
                other.name()
            )))
        }
    };
    Ok((params, path.display().to_string()))
}

fn check_cells(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(BlvError::DimensionMismatch { what, expected, got });
    }
    Ok(())
}

fn execute(cmd: Command) -> Result<Value> {
    match cmd {
        Command::Synth {
            preset,
            cells,
            latents,
            hyper,
            sigma_q,
            swap_iters,
            seed,
            out,
        } => {
            let mut h = match hyper {
                Some(path) => read_toml::<SynthHyperparams>(&path)?,
                None => match preset {
                    Preset::Movie => SynthHyperparams::natural_movie(cells, latents),
                    Preset::WhiteNoise => SynthHyperparams::white_noise(cells, latents),
                },
            };
            if let Some(s) = sigma_q {
                h.sigma_q = s;
            }
            if swap_iters.is_some() {
                h.swap_iters = swap_iters;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt = synthesize_gt(&h, &mut rng)?;
            let sha = save_artifact(&out, &gt)?;
            let sizes: Vec<usize> = (0..h.n_latents)
                .map(|a| gt.membership.column(a).iter().filter(|&&b| b).count())
                .collect();
            Ok(json!({
                "command": "synth", "out": out, "sha256": sha,
                "n_cells": h.n_cells, "n_latents": h.n_latents, "q": gt.params.q(),
                "assembly_sizes": sizes, "hyper": h,
            }))
        }
        Command::Gen { gt, count, seed, out } => {
            let gt: GroundTruth = io::decode(&read_bytes(&gt)?)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = generate_dataset(&gt, count, &mut rng)?;
            let sha = save_artifact(&out, &data)?;
            let n = count.max(1) as f64;
            let mean_z = data.pairs.iter().map(|(z, _)| z.cardinality()).sum::<usize>() as f64 / n;
            let mean_y = data.pairs.iter().map(|(_, y)| y.count_active()).sum::<usize>() as f64 / n;
            Ok(json!({
                "command": "gen", "out": out, "sha256": sha, "count": count,
                "mean_latent_count": mean_z, "mean_word_length": mean_y,
            }))
        }
        Command::Bin {
            events,
            bin_ms,
            step_ms,
            out,
            csv,
        } => {
            let file = SpikeEventFile::parse(&read_text(&events)?)?;
            let corpus = bin_events(&file, bin_ms, step_ms)?;
            let sha = save_artifact(&out, &corpus)?;
            let csv_sha = match csv {
                Some(p) => Some(write_file(&p, corpus.to_csv().as_bytes())?),
                None => None,
            };
            let active = corpus.words.iter().filter(|y| y.count_active() > 0).count();
            Ok(json!({
                "command": "bin", "out": out, "sha256": sha, "csv_sha256": csv_sha,
                "n_words": corpus.words.len(), "n_nonempty": active,
                "windows_per_trial": corpus.provenance.as_ref().map(|p| p.windows_per_trial),
                "source_sha256": file.digest(),
            }))
        }
        Command::Train {
            data,
            out,
            config,
            seed,
            latents,
            lr,
            lr_decay,
            passes,
            prior,
            order,
            init_silence,
            jitter,
            q_init,
            i0,
            imax,
            half,
            split_seed,
        } => {
            let mut cfg = match config {
                Some(p) => read_toml::<LearnConfig>(&p)?,
                None => LearnConfig::default(),
            };
            if let Some(v) = seed {
                cfg.rng_seed = v;
            }
            if latents.is_some() {
                cfg.n_latents = latents;
            }
            if let Some(v) = lr {
                cfg.learning_rate = v;
            }
            if let Some(v) = lr_decay {
                cfg.lr_decay = v;
            }
            if let Some(v) = passes {
                cfg.n_passes = v;
            }
            if let Some(p) = prior {
                cfg.prior_kind = match p {
                    PriorArg::Binomial => PriorKind::Binomial,
                    PriorArg::He => PriorKind::HomeostaticEgalitarian,
                };
            }
            if let Some(o) = order {
                cfg.sample_order = match o {
                    OrderArg::Shuffled => SampleOrder::Shuffled,
                    OrderArg::Sequential => SampleOrder::Sequential,
                };
            }
            if let Some(v) = init_silence {
                cfg.init_silence = v;
            }
            if let Some(v) = jitter {
                cfg.init_jitter_sd = v;
            }
            if q_init.is_some() {
                cfg.q_init = q_init;
            }
            if let Some(v) = i0 {
                cfg.inference.i0 = v;
            }
            if let Some(v) = imax {
                cfg.inference.imax = v;
            }
            let loaded = load_words(&data)?;
            let words = match half {
                None => loaded.words,
                Some(h) => split_half(loaded.words, h, split_seed),
            };
            let outcome = train(&words, &cfg)?;
            let used = outcome.trace.usage.iter().filter(|&&u| u > 0).count();
            let file = ModelFile {
                params: outcome.model,
                he_state: (cfg.prior_kind == PriorKind::HomeostaticEgalitarian).then_some(outcome.he_state),
                config: cfg,
                trace: outcome.trace,
                corpus_digest: Some(loaded.digest),
            };
            let sha = save_artifact(&out, &file)?;
            Ok(json!({
                "command": "train", "out": out, "sha256": sha, "n_words": words.len(),
                "pass_mean_log_joint": file.trace.pass_mean_log_joint,
                "latents_used": used, "q": file.params.q(),
            }))
        }
        Command::Infer {
            model,
            data,
            out,
            i0,
            imax,
        } => {
            let mf: ModelFile = io::decode(&read_bytes(&model)?)?;
            let words = load_words(&data)?;
            if let Some(y) = words.words.first() {
                check_cells("cells in corpus versus model", mf.params.n_cells(), y.len())?;
            }
            let mut cfg = mf.config.inference;
            if let Some(v) = i0 {
                cfg.i0 = v;
            }
            if let Some(v) = imax {
                cfg.imax = v;
            }
            let prior = match &mf.he_state {
                Some(state) => Prior::HomeostaticEgalitarian(state),
                None => Prior::Binomial,
            };
            let latents = infer_corpus(&mf.params, &words.words, &cfg, prior)?;
            let assignments = LatentAssignments {
                n_latents: mf.params.n_latents(),
                trial_duration_ms: words.trial_duration_ms,
                latents,
                timestamps: words.timestamps,
            };
            let sha = write_file(&out, assignments.to_csv().as_bytes())?;
            let total: usize = assignments.latents.iter().map(|z| z.cardinality()).sum();
            Ok(json!({
                "command": "infer", "out": out, "sha256": sha,
                "n_words": assignments.latents.len(),
                "mean_active_latents": total as f64 / assignments.latents.len().max(1) as f64,
            }))
        }
        Command::Moments { data, out, against } => {
            let m = moments_of(&data)?;
            let sha = match out {
                Some(p) => Some(save_artifact(&p, &m)?),
                None => None,
            };
            let qq = match against {
                Some(p) => Some(compare_moments(&m, &moments_of(&p)?, QQWeights::default())?),
                None => None,
            };
            Ok(json!({
                "command": "moments", "sha256": sha, "n_words": m.n_words,
                "mean_word_length": m.mean_word_length(), "word_length_pdf": m.word_length_pdf(),
                "cell_means": m.cell_means, "qq": qq,
            }))
        }
        Command::Fit {
            target,
            spec,
            words,
            seed,
            out,
        } => {
            let target = moments_of(&target)?;
            let spec: FitSpec = read_toml(&spec)?;
            let base = spec.base_hyper()?;
            check_cells("cells in target versus fit spec", base.n_cells, target.n_cells())?;
            let weights = spec.weights.unwrap_or_default();
            let fit: FitResult = fit_hyperparams(&target, &base, &spec.grid, words, weights, seed)?;
            let sha = save_artifact(&out, &fit)?;
            Ok(json!({
                "command": "fit", "out": out, "sha256": sha, "best_index": fit.best_index,
                "best": fit.best, "report": fit.report, "n_points": fit.evaluated.len(),
            }))
        }
        Command::Match { inputs, out, table } => {
            let models = inputs
                .iter()
                .map(|p| load_model_params(p))
                .collect::<Result<Vec<_>>>()?;
            let k = models.len();
            let strengths: Vec<_> = models.iter().map(|(m, _)| m.strengths()).collect();
            let mut delta = vec![vec![0.0; k]; k];
            let mut first: Option<MatchReport> = None;
            for i in 0..k {
                for j in 0..k {
                    if i == j {
                        continue;
                    }
                    let rep = match_strengths(&strengths[i], &strengths[j])?;
                    delta[i][j] = rep.delta_cs;
                    if i == 0 && j == 1 {
                        first = Some(rep);
                    }
                }
            }
            let first = first.expect("at least two inputs");
            let sha = match out {
                Some(p) => Some(save_artifact(&p, &first)?),
                None => None,
            };
            let table_sha = match table {
                Some(p) => {
                    let mut s = String::from("model_a,model_b,delta_cs\n");
                    for i in 0..k {
                        for j in 0..k {
                            if i != j {
                                let _ = writeln!(s, "{},{},{}", models[i].1, models[j].1, delta[i][j]);
                            }
                        }
                    }
                    Some(write_file(&p, s.as_bytes())?)
                }
                None => None,
            };
            Ok(json!({
                "command": "match", "sha256": sha, "table_sha256": table_sha,
                "delta_cs": delta, "mean_matched_cs": first.mean_matched_cs(),
            }))
        }
        Command::Metrics {
            model,
            latents,
            null,
            cell_types,
            partner_model,
            partner_latents,
            dpy_bins,
            rx_bin_ms,
            out,
        } => {
            let (params, _) = load_model_params(&model)?;
            let assignments = LatentAssignments::parse_csv(&read_text(&latents)?)?;
            check_cells("latents in assignments versus model", params.n_latents(), assignments.n_latents)?;
            let null = match null {
                Some(p) => Some(NullRates::parse_csv(&read_text(p)?)?),
                None => None,
            };
            if let Some(n) = &null {
                check_cells("cells in null-rate table versus model", params.n_cells(), n.n_cells)?;
            }
            let types = match cell_types {
                Some(p) => Some(read_cell_types(&p, params.n_cells())?),
                None => None,
            };
            if partner_model.len() != partner_latents.len() {
                return Err(BlvError::InvalidArgument(
                    "each --partner-model needs a matching --partner-latents".into(),
                ));
            }
            let mut partner_data = Vec::new();
            for (pm, pl) in partner_model.iter().zip(&partner_latents) {
                let (pp, _) = load_model_params(pm)?;
                let pa = LatentAssignments::parse_csv(&read_text(pl)?)?;
                let (stamps, dur) = temporal_parts(&pa)?;
                let traces = activation_traces(&pa.latents, stamps, pa.n_latents, dur)?;
                partner_data.push((pp, traces));
            }
            let partners: Vec<Partner<'_>> = partner_data
                .iter()
                .map(|(m, t)| Partner { model: m, traces: t })
                .collect();
            let input = MetricsInput {
                model: &params,
                latents: &assignments.latents,
                stamps: assignments.timestamps.as_deref(),
                trial_duration_ms: assignments.trial_duration_ms,
                null: null.as_ref(),
                cell_types: types.as_deref(),
                partners: &partners,
                delta_py_bins: &dpy_bins,
                robustness_bin_ms: rx_bin_ms,
            };
            let rows = assembly_metrics(&input)?;
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let mut s = String::from("assembly,n_members,members,crispness,activations,heterogeneity,robustness");
            for b in &dpy_bins {
                let _ = write!(s, ",delta_py_{b}ms");
            }
            s.push('\n');
            for r in &rows {
                let members: Vec<String> = r.members.iter().map(|m| m.to_string()).collect();
                let _ = write!(
                    s,
                    "{},{},{},{},{},{},{}",
                    r.assembly,
                    r.members.len(),
                    members.join(";"),
                    opt(r.crispness),
                    r.activations,
                    opt(r.heterogeneity),
                    opt(r.robustness)
                );
                for d in &r.delta_py {
                    let _ = write!(s, ",{}", opt(*d));
                }
                s.push('\n');
            }
            let sha = write_file(&out, s.as_bytes())?;
            let with_members = rows.iter().filter(|r| !r.members.is_empty()).count();
            Ok(json!({
                "command": "metrics", "out": out, "sha256": sha,
                "n_assemblies": rows.len(), "with_members": with_members,
            }))
        }
        Command::Coactivity { latents, out } => {
            let a = LatentAssignments::parse_csv(&read_text(&latents)?)?;
            let stats = coactivity_stats(&a.latents, a.n_latents)?;
            let mut s = String::from("assembly,activations");
            for b in 0..a.n_latents {
                let _ = write!(s, ",with_{b}");
            }
            s.push('\n');
            for i in 0..a.n_latents {
                let _ = write!(s, "{i},{}", stats.counts[i]);
                for j in 0..a.n_latents {
                    let _ = write!(s, ",{}", stats.pairs[[i, j]]);
                }
                s.push('\n');
            }
            let sha = write_file(&out, s.as_bytes())?;
            let pair_total: u64 = stats.pairs.iter().sum::<u64>() / 2;
            Ok(json!({
                "command": "coactivity", "out": out, "sha256": sha,
                "activations": stats.counts, "coactive_pairs": pair_total,
            }))
        }
        Command::Export { input, table, out } => {
            let bytes = read_bytes(&input)?;
            let kind = peek_kind(&bytes)?;
            let text = export_table(kind, &bytes, table)?;
            let sha = write_file(&out, text.as_bytes())?;
            Ok(json!({
                "command": "export", "out": out, "sha256": sha, "kind": kind.name(),
            }))
        }
    }
}

fn split_half(words: Vec<SpikeWord>, half: Half, seed: u64) -> Vec<SpikeWord> {
    let mut idx: Vec<usize> = (0..words.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mid = words.len() / 2;
    let chosen = match half {
        Half::First => &idx[..mid],
        Half::Second => &idx[mid..],
    };
    chosen.iter().map(|&i| words[i].clone()).collect()
}

fn moments_of(path: &Path) -> Result<MomentSummary> {
    let bytes = read_bytes(path)?;
    if bytes.starts_with(MAGIC) && peek_kind(&bytes)? == FileKind::Moments {
        return io::decode(&bytes);
    }
    moments(&load_words(path)?.words)
}

fn temporal_parts(a: &LatentAssignments) -> Result<(&[(usize, f64)], f64)> {
    match (&a.timestamps, a.trial_duration_ms) {
        (Some(s), Some(d)) => Ok((s, d)),
        _ => Err(BlvError::InvalidArgument(
            "partner latents need timestamps and a trial duration".into(),
        )),
    }
}

fn read_cell_types(path: &Path, n_cells: usize) -> Result<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| BlvError::Format(e.to_string()))?;
    let mut labels: Vec<Option<String>> = vec![None; n_cells];
    for rec in reader.records() {
        let rec = rec.map_err(|e| BlvError::Format(e.to_string()))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let cell: usize = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or(BlvError::Parse { line, message: "invalid cell id".into() })?;
        if cell >= n_cells {
            return Err(BlvError::Parse {
                line,
                message: format!("cell {cell} out of range"),
            });
        }
        labels[cell] = rec.get(1).map(str::to_string);
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| BlvError::InvalidArgument(format!("cell {i} has no type"))))
        .collect()
}

/// Grid search specification read from TOML.
#[derive(Debug, Deserialize)]
struct FitSpec {
    preset: Option<String>,
    cells: Option<usize>,
    latents: Option<usize>,
    base: Option<SynthHyperparams>,
    #[serde(default)]
    grid: HyperGrid,
    weights: Option<QQWeights>,
}

impl FitSpec {
    fn base_hyper(&self) -> Result<SynthHyperparams> {
        if let Some(b) = &self.base {
            return Ok(b.clone());
        }
        let n = self.cells.ok_or_else(|| BlvError::InvalidArgument("fit spec needs `cells` or `[base]`".into()))?;
        let m = self.latents.unwrap_or(n);
        match self.preset.as_deref().unwrap_or("movie") {
            "movie" => Ok(SynthHyperparams::natural_movie(n, m)),
            "white-noise" => Ok(SynthHyperparams::white_noise(n, m)),
            other => Err(BlvError::InvalidArgument(format!("unknown preset {other:?}"))),
        }
    }
}

fn p_table(params: &crate::model::ModelParams, membership: Option<&ndarray::Array2<bool>>) -> String {
    let mut s = String::from(if membership.is_some() {
        "cell,assembly,p,strength,member\n"
    } else {
        "cell,assembly,p,strength\n"
    });
    let strengths = params.strengths();
    for i in 0..params.n_cells() {
        for a in 0..params.n_latents() {
            let _ = write!(s, "{i},{a},{},{}", params.p(i, a), strengths[[i, a]]);
            if let Some(m) = membership {
                let _ = write!(s, ",{}", m[[i, a]] as u8);
            }
            s.push('\n');
        }
    }
    s
}

fn r_table(params: &crate::model::ModelParams) -> String {
    let mut s = String::from("cell,r\n");
    for i in 0..params.n_cells() {
        let _ = writeln!(s, "{i},{}", params.r(i));
    }
    s
}

fn join<T: ToString>(it: impl Iterator<Item = T>) -> String {
    it.map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn unsupported(kind: FileKind, table: Table) -> BlvError {
    BlvError::InvalidArgument(format!("table {table:?} is not available for a {} file", kind.name()))
}

fn export_table(kind: FileKind, bytes: &[u8], table: Option<Table>) -> Result<String> {
    match kind {
        FileKind::GroundTruth => {
            let gt: GroundTruth = io::decode(bytes)?;
            match table.unwrap_or(Table::P) {
                Table::P => Ok(p_table(&gt.params, Some(&gt.membership))),
                Table::R => Ok(r_table(&gt.params)),
                t => Err(unsupported(kind, t)),
            }
        }
        FileKind::Model => {
            let mf: ModelFile = io::decode(bytes)?;
            match table.unwrap_or(Table::P) {
                Table::P => Ok(p_table(&mf.params, None)),
                Table::R => Ok(r_table(&mf.params)),
                Table::Usage => {
                    let mut s = String::from("assembly,usage\n");
                    for (a, u) in mf.trace.usage.iter().enumerate() {
                        let _ = writeln!(s, "{a},{u}");
                    }
                    Ok(s)
                }
                t => Err(unsupported(kind, t)),
            }
        }
        FileKind::Dataset => {
            let d: LabeledDataset = io::decode(bytes)?;
            match table.unwrap_or(Table::Words) {
                Table::Words => {
                    let mut s = String::from("word,latents,active_cells\n");
                    for (k, (z, y)) in d.pairs.iter().enumerate() {
                        let _ = writeln!(s, "{k},{},{}", join(z.active()), join(y.active()));
                    }
                    Ok(s)
                }
                t => Err(unsupported(kind, t)),
            }
        }
        FileKind::Corpus => {
            let c: BinnedCorpus = io::decode(bytes)?;
            match table.unwrap_or(Table::Words) {
                Table::Words => Ok(c.to_csv()),
                t => Err(unsupported(kind, t)),
            }
        }
        FileKind::MatchReport => {
            let r: MatchReport = io::decode(bytes)?;
            match table.unwrap_or(Table::Matches) {
                Table::Matches => {
                    let mut s = String::from("assembly,partner,matched_cs,unmatched_diag_cs\n");
                    for a in 0..r.assignment.len() {
                        let _ = writeln!(
                            s,
                            "{a},{},{},{}",
                            r.assignment[a], r.matched_cs[a], r.unmatched_diag_cs[a]
                        );
                    }
                    Ok(s)
                }
                t => Err(unsupported(kind, t)),
            }
        }
        FileKind::Moments => {
            let m: MomentSummary = io::decode(bytes)?;
            match table.unwrap_or(Table::Lengths) {
                Table::Lengths => {
                    let mut s = String::from("length,count,pdf\n");
                    for (k, (c, p)) in m.length_counts.iter().zip(m.word_length_pdf()).enumerate() {
                        let _ = writeln!(s, "{k},{c},{p}");
                    }
                    Ok(s)
                }
                Table::Means => {
                    let mut s = String::from("cell,mean\n");
                    for (i, v) in m.cell_means.iter().enumerate() {
                        let _ = writeln!(s, "{i},{v}");
                    }
                    Ok(s)
                }
                Table::Pairs => {
                    let mut s = String::from("cell_a,cell_b,coactivity\n");
                    let n = m.n_cells();
                    for i in 0..n {
                        for j in i + 1..n {
                            let _ = writeln!(s, "{i},{j},{}", m.pair_coactivity[[i, j]]);
                        }
                    }
                    Ok(s)
                }
                t => Err(unsupported(kind, t)),
            }
        }
        FileKind::Fit => {
            let f: FitResult = io::decode(bytes)?;
            match table.unwrap_or(Table::Grid) {
                Table::Grid => {
                    let mut s = String::from(
                        "index,k,c,mu_p,sigma_p,mu_r,sigma_r,sigma_q,qq_length,qq_mean,qq_pair,combined,best\n",
                    );
                    for (i, p) in f.evaluated.iter().enumerate() {
                        let h = &p.hyper;
                        let r = &p.report;
                        let _ = writeln!(
                            s,
                            "{i},{},{},{},{},{},{},{},{},{},{},{},{}",
                            h.k,
                            h.c,
                            h.mu_p,
                            h.sigma_p,
                            h.mu_r,
                            h.sigma_r,
                            h.sigma_q,
                            r.qq_length,
                            r.qq_mean,
                            r.qq_pair,
                            r.combined,
                            (i == f.best_index) as u8
                        );
                    }
                    Ok(s)
                }
                t => Err(unsupported(kind, t)),
            }
        }
    }
}
