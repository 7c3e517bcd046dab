//! File formats and spike-event binning.
//!
//! Binary artifacts share one container:
//!
//! ```text
//! "BLV1" | version u16 LE | kind u16 LE | payload length u64 LE | payload | sha256(payload)
//! ```
//!
//! where the payload is bincode. Text formats are comma-delimited with `#`
//! header lines that carry a format tag and the dimensions needed to parse
//! the body.

use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BlvError, Result};
use crate::eval::MatchReport;
use crate::learning::{LearnConfig, TrainTrace};
use crate::model::{HEState, LatentVector, ModelParams, SpikeWord};
use crate::stats::{FitResult, MomentSummary};
use crate::synthesis::{GroundTruth, LabeledDataset};

pub const MAGIC: &[u8; 4] = b"BLV1";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 2 + 8;
const DIGEST_LEN: usize = 32;

pub const EVENTS_TAG: &str = "# blv-events v1";
pub const CORPUS_TAG: &str = "# blv-corpus v1";
pub const LATENTS_TAG: &str = "# blv-latents v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u16)]
pub enum FileKind {
    GroundTruth = 1,
    Dataset = 2,
    Corpus = 3,
    Model = 4,
    MatchReport = 5,
    Moments = 6,
    Fit = 7,
}

impl FileKind {
    pub fn from_code(code: u16) -> Option<Self> {
        Some(match code {
            1 => Self::GroundTruth,
            2 => Self::Dataset,
            3 => Self::Corpus,
            4 => Self::Model,
            5 => Self::MatchReport,
            6 => Self::Moments,
            7 => Self::Fit,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::GroundTruth => "ground truth",
            Self::Dataset => "labelled dataset",
            Self::Corpus => "binned corpus",
            Self::Model => "model",
            Self::MatchReport => "match report",
            Self::Moments => "moment summary",
            Self::Fit => "fit result",
        }
    }
}

/// Types stored in the binary container.
pub trait Artifact: Serialize + DeserializeOwned {
    const KIND: FileKind;
}

impl Artifact for GroundTruth {
    const KIND: FileKind = FileKind::GroundTruth;
}
impl Artifact for LabeledDataset {
    const KIND: FileKind = FileKind::Dataset;
}
impl Artifact for BinnedCorpus {
    const KIND: FileKind = FileKind::Corpus;
}
impl Artifact for ModelFile {
    const KIND: FileKind = FileKind::Model;
}
impl Artifact for MatchReport {
    const KIND: FileKind = FileKind::MatchReport;
}
impl Artifact for MomentSummary {
    const KIND: FileKind = FileKind::Moments;
}
impl Artifact for FitResult {
    const KIND: FileKind = FileKind::Fit;
}

/// A trained model and how it was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub params: ModelParams,
    pub he_state: Option<HEState>,
    pub config: LearnConfig,
    pub trace: TrainTrace,
    /// Digest of the training corpus, when known.
    pub corpus_digest: Option<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode<T: Artifact>(value: &T) -> Result<Vec<u8>> {
    let payload = bincode::serialize(value).map_err(|e| BlvError::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(T::KIND as u16).to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&Sha256::digest(&payload));
    Ok(out)
}

/// Kind recorded in a container header, after checking magic and version.
pub fn peek_kind(bytes: &[u8]) -> Result<FileKind> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(BlvError::Format("not a blv container (bad magic)".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(BlvError::Format(format!(
            "unsupported container version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let code = u16::from_le_bytes([bytes[6], bytes[7]]);
    FileKind::from_code(code).ok_or_else(|| BlvError::Format(format!("unknown artifact kind {code}")))
}

pub fn decode<T: Artifact>(bytes: &[u8]) -> Result<T> {
    let kind = peek_kind(bytes)?;
    if kind != T::KIND {
        return Err(BlvError::Format(format!(
            "expected a {} file, found a {} file",
            T::KIND.name(),
            kind.name()
        )));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if bytes.len() != HEADER_LEN + len + DIGEST_LEN {
        return Err(BlvError::Format("container length does not match header".into()));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + len];
    if Sha256::digest(payload).as_slice() != &bytes[HEADER_LEN + len..] {
        return Err(BlvError::Format("checksum mismatch; file is corrupted".into()));
    }
    bincode::deserialize(payload).map_err(|e| BlvError::Format(e.to_string()))
}

pub fn save<T: Artifact>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    std::fs::write(path, encode(value)?)?;
    Ok(())
}

pub fn load<T: Artifact>(path: impl AsRef<Path>) -> Result<T> {
    decode(&std::fs::read(path)?)
}

fn parse_header_fields(line: &str, line_no: usize) -> Result<Vec<(String, String)>> {
    line.trim_start_matches('#')
        .split_whitespace()
        .filter(|tok| tok.contains('='))
        .map(|tok| {
            let (k, v) = tok.split_once('=').expect("contains '='");
            if k.is_empty() {
                return Err(BlvError::Parse {
                    line: line_no,
                    message: format!("malformed header field {tok:?}"),
                });
            }
            Ok((k.to_string(), v.to_string()))
        })
        .collect()
}

fn header_value<'a>(fields: &'a [(String, String)], key: &str, line: usize) -> Result<&'a str> {
    fields
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| BlvError::Parse {
            line,
            message: format!("header is missing {key}"),
        })
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str, line: usize) -> Result<T> {
    s.trim().parse().map_err(|_| BlvError::Parse {
        line,
        message: format!("invalid {what}: {s:?}"),
    })
}

/// Split a text file into its `#` header lines and the remaining body.
fn split_header(text: &str) -> (Vec<&str>, &str) {
    let mut header = Vec::new();
    let mut rest = text;
    while rest.starts_with('#') {
        let end = rest.find('\n').map(|i| i + 1).unwrap_or(rest.len());
        header.push(rest[..end].trim_end());
        rest = &rest[end..];
    }
    (header, rest)
}

fn csv_rows(body: &str, first_line: usize, expected_header: &[&str]) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let header = reader.headers().map_err(|e| BlvError::Parse {
        line: first_line,
        message: e.to_string(),
    })?;
    if header.iter().take(expected_header.len()).ne(expected_header.iter().copied()) {
        return Err(BlvError::Parse {
            line: first_line,
            message: format!("expected column header {}", expected_header.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| BlvError::Parse {
            line: first_line + e.position().map(|p| p.line() as usize).unwrap_or(1) - 1,
            message: e.to_string(),
        })?;
        let line = first_line + rec.position().map(|p| p.line() as usize).unwrap_or(1) - 1;
        rows.push((line, rec));
    }
    Ok(rows)
}

/// Spike times of a population over repeated trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeEventFile {
    pub n_cells: usize,
    pub n_trials: usize,
    pub trial_duration_ms: f64,
    /// `(cell, trial, time_ms)`.
    pub records: Vec<(usize, usize, f64)>,
}

impl SpikeEventFile {
    pub fn new(
        n_cells: usize,
        n_trials: usize,
        trial_duration_ms: f64,
        records: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        let file = Self {
            n_cells,
            n_trials,
            trial_duration_ms,
            records,
        };
        file.validate()?;
        Ok(file)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cells == 0 || self.n_trials == 0 {
            return Err(BlvError::InvalidArgument(
                "event file needs at least one cell and one trial".into(),
            ));
        }
        if !(self.trial_duration_ms > 0.0 && self.trial_duration_ms.is_finite()) {
            return Err(BlvError::InvalidArgument(format!(
                "trial duration must be positive, got {}",
                self.trial_duration_ms
            )));
        }
        for (k, &(cell, trial, t)) in self.records.iter().enumerate() {
            if cell >= self.n_cells || trial >= self.n_trials || !(0.0..self.trial_duration_ms).contains(&t) {
                return Err(BlvError::InvalidArgument(format!(
                    "record {k} ({cell}, {trial}, {t}) outside {} cells, {} trials, [0, {}) ms",
                    self.n_cells, self.n_trials, self.trial_duration_ms
                )));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (header, body) = split_header(text);
        if header.first().map(|l| l.trim()) != Some(EVENTS_TAG) {
            return Err(BlvError::Parse {
                line: 1,
                message: format!("expected {EVENTS_TAG:?}"),
            });
        }
        let fields: Vec<_> = header[1..]
            .iter()
            .enumerate()
            .map(|(k, l)| parse_header_fields(l, k + 2))
            .collect::<Result<Vec<_>>>()?
            .concat();
        let hl = header.len();
        let n_cells = parse_num(header_value(&fields, "n_cells", hl)?, "n_cells", hl)?;
        let n_trials = parse_num(header_value(&fields, "n_trials", hl)?, "n_trials", hl)?;
        let duration = parse_num(
            header_value(&fields, "trial_duration_ms", hl)?,
            "trial_duration_ms",
            hl,
        )?;
        let mut records = Vec::new();
        for (line, rec) in csv_rows(body, hl + 1, &["cell", "trial", "time_ms"])? {
            if rec.len() != 3 {
                return Err(BlvError::Parse {
                    line,
                    message: format!("expected 3 fields, found {}", rec.len()),
                });
            }
            let cell: usize = parse_num(&rec[0], "cell id", line)?;
            let trial: usize = parse_num(&rec[1], "trial id", line)?;
            let t: f64 = parse_num(&rec[2], "spike time", line)?;
            if cell >= n_cells || trial >= n_trials || !(0.0..duration).contains(&t) {
                return Err(BlvError::Parse {
                    line,
                    message: format!("record ({cell}, {trial}, {t}) out of range"),
                });
            }
            records.push((cell, trial, t));
        }
        Self::new(n_cells, n_trials, duration, records)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{EVENTS_TAG}");
        let _ = writeln!(
            s,
            "# n_cells={} n_trials={} trial_duration_ms={}",
            self.n_cells, self.n_trials, self.trial_duration_ms
        );
        s.push_str("cell,trial,time_ms\n");
        for &(c, tr, t) in &self.records {
            let _ = writeln!(s, "{c},{tr},{t}");
        }
        s
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub bin_ms: f64,
    pub step_ms: f64,
    pub source_digest: String,
    pub n_trials: usize,
    pub trial_duration_ms: f64,
    pub windows_per_trial: usize,
}

/// Spike-words with optional `(trial, bin start)` stamps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedCorpus {
    pub n_cells: usize,
    pub words: Vec<SpikeWord>,
    pub provenance: Option<Provenance>,
    pub timestamps: Option<Vec<(usize, f64)>>,
}

impl BinnedCorpus {
    /// Corpus without timing information, e.g. from a synthetic dataset.
    pub fn from_words(words: Vec<SpikeWord>) -> Result<Self> {
        let n_cells = words.first().ok_or(BlvError::EmptyInput("corpus"))?.len();
        if let Some(bad) = words.iter().find(|y| y.len() != n_cells) {
            return Err(BlvError::DimensionMismatch {
                what: "spike-word length within corpus",
                expected: n_cells,
                got: bad.len(),
            });
        }
        Ok(Self {
            n_cells,
            words,
            provenance: None,
            timestamps: None,
        })
    }

    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(&encode(self)?))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{CORPUS_TAG} n_cells={}", self.n_cells);
        if let Some(p) = &self.provenance {
            let _ = write!(
                s,
                " bin_ms={} step_ms={} n_trials={} trial_duration_ms={} source_sha256={}",
                p.bin_ms, p.step_ms, p.n_trials, p.trial_duration_ms, p.source_digest
            );
        }
        s.push_str("\nword,trial,bin_start_ms,active_cells\n");
        for (k, y) in self.words.iter().enumerate() {
            let (trial, start) = match &self.timestamps {
                Some(ts) => (ts[k].0.to_string(), ts[k].1.to_string()),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(s, "{k},{trial},{start},{}", join_indices(y.active()));
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let (header, body) = split_header(text);
        let first = header.first().ok_or(BlvError::Parse {
            line: 1,
            message: format!("expected {CORPUS_TAG:?}"),
        })?;
        if !first.starts_with(CORPUS_TAG) {
            return Err(BlvError::Parse {
                line: 1,
                message: format!("expected {CORPUS_TAG:?}"),
            });
        }
        let fields = parse_header_fields(first, 1)?;
        let n_cells: usize = parse_num(header_value(&fields, "n_cells", 1)?, "n_cells", 1)?;
        let provenance = match header_value(&fields, "bin_ms", 1) {
            Ok(bin) => Some(Provenance {
                bin_ms: parse_num(bin, "bin_ms", 1)?,
                step_ms: parse_num(header_value(&fields, "step_ms", 1)?, "step_ms", 1)?,
                source_digest: header_value(&fields, "source_sha256", 1)?.to_string(),
                n_trials: parse_num(header_value(&fields, "n_trials", 1)?, "n_trials", 1)?,
                trial_duration_ms: parse_num(
                    header_value(&fields, "trial_duration_ms", 1)?,
                    "trial_duration_ms",
                    1,
                )?,
                windows_per_trial: 0,
            }),
            Err(_) => None,
        };
        let mut words = Vec::new();
        let mut stamps = Vec::new();
        let mut any_stamp = false;
        for (line, rec) in csv_rows(body, header.len() + 1, &["word", "trial", "bin_start_ms", "active_cells"])? {
            if rec.len() != 4 {
                return Err(BlvError::Parse {
                    line,
                    message: format!("expected 4 fields, found {}", rec.len()),
                });
            }
            let idx: usize = parse_num(&rec[0], "word index", line)?;
            if idx != words.len() {
                return Err(BlvError::Parse {
                    line,
                    message: format!("word index {idx} out of sequence"),
                });
            }
            if !rec[1].is_empty() {
                any_stamp = true;
                stamps.push((parse_num(&rec[1], "trial", line)?, parse_num(&rec[2], "bin start", line)?));
            }
            let active = parse_indices(&rec[3], line)?;
            words.push(SpikeWord::from_active(n_cells, &active).map_err(|e| BlvError::Parse {
                line,
                message: e.to_string(),
            })?);
        }
        if any_stamp && stamps.len() != words.len() {
            return Err(BlvError::Format("timestamps present for only some words".into()));
        }
        let mut provenance = provenance;
        if let Some(p) = provenance.as_mut() {
            p.windows_per_trial = windows_per_trial(p.trial_duration_ms, p.bin_ms, p.step_ms).unwrap_or(0);
        }
        Ok(Self {
            n_cells,
            words,
            provenance,
            timestamps: any_stamp.then_some(stamps),
        })
    }
}

fn join_indices(it: impl Iterator<Item = usize>) -> String {
    it.map(|i| i.to_string()).collect::<Vec<_>>().join(";")
}

fn parse_indices(s: &str, line: usize) -> Result<Vec<usize>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(';').map(|t| parse_num(t, "index", line)).collect()
}

/// `floor((duration - bin) / step) + 1`, or an error when a window does not fit.
pub fn windows_per_trial(duration_ms: f64, bin_ms: f64, step_ms: f64) -> Result<usize> {
    if !(step_ms > 0.0 && bin_ms >= step_ms && bin_ms.is_finite()) {
        return Err(BlvError::InvalidArgument(format!(
            "need bin_ms >= step_ms > 0, got bin {bin_ms}, step {step_ms}"
        )));
    }
    if bin_ms > duration_ms {
        return Err(BlvError::InvalidArgument(format!(
            "bin of {bin_ms} ms does not fit in a {duration_ms} ms trial"
        )));
    }
    Ok(((duration_ms - bin_ms) / step_ms + 1e-9).floor() as usize + 1)
}

/// Sliding-window binarization: window `w` of each trial covers
/// `[w * step, w * step + bin)` and `y_i = 1` when cell `i` spiked inside it.
pub fn bin_events(file: &SpikeEventFile, bin_ms: f64, step_ms: f64) -> Result<BinnedCorpus> {
    file.validate()?;
    let w_count = windows_per_trial(file.trial_duration_ms, bin_ms, step_ms)?;
    let n = file.n_cells;
    let mut bits = vec![false; file.n_trials * w_count * n];
    for &(cell, trial, t) in &file.records {
        let lo = ((t - bin_ms) / step_ms).floor().max(0.0) as usize;
        let hi = ((t / step_ms).floor() as usize + 1).min(w_count - 1);
        for w in lo..=hi {
            let start = w as f64 * step_ms;
            if start <= t && t < start + bin_ms {
                bits[(trial * w_count + w) * n + cell] = true;
            }
        }
    }
    let mut words = Vec::with_capacity(file.n_trials * w_count);
    let mut stamps = Vec::with_capacity(file.n_trials * w_count);
    for (k, chunk) in bits.chunks(n).enumerate() {
        words.push(SpikeWord::new(chunk.to_vec()));
        stamps.push((k / w_count, (k % w_count) as f64 * step_ms));
    }
    Ok(BinnedCorpus {
        n_cells: n,
        words,
        provenance: Some(Provenance {
            bin_ms,
            step_ms,
            source_digest: file.digest(),
            n_trials: file.n_trials,
            trial_duration_ms: file.trial_duration_ms,
            windows_per_trial: w_count,
        }),
        timestamps: Some(stamps),
    })
}

/// Inferred latent vectors, one per corpus word.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentAssignments {
    pub n_latents: usize,
    pub trial_duration_ms: Option<f64>,
    pub latents: Vec<LatentVector>,
    pub timestamps: Option<Vec<(usize, f64)>>,
}

impl LatentAssignments {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{LATENTS_TAG} n_latents={}", self.n_latents);
        if let Some(d) = self.trial_duration_ms {
            let _ = write!(s, " trial_duration_ms={d}");
        }
        s.push_str("\nword,trial,bin_start_ms,latents\n");
        for (k, z) in self.latents.iter().enumerate() {
            let (trial, start) = match &self.timestamps {
                Some(ts) => (ts[k].0.to_string(), ts[k].1.to_string()),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(s, "{k},{trial},{start},{}", join_indices(z.active()));
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let (header, body) = split_header(text);
        let first = header.first().filter(|l| l.starts_with(LATENTS_TAG)).ok_or(BlvError::Parse {
            line: 1,
            message: format!("expected {LATENTS_TAG:?}"),
        })?;
        let fields = parse_header_fields(first, 1)?;
        let n_latents: usize = parse_num(header_value(&fields, "n_latents", 1)?, "n_latents", 1)?;
        let trial_duration_ms = match header_value(&fields, "trial_duration_ms", 1) {
            Ok(v) => Some(parse_num(v, "trial_duration_ms", 1)?),
            Err(_) => None,
        };
        let mut latents = Vec::new();
        let mut stamps = Vec::new();
        for (line, rec) in csv_rows(body, header.len() + 1, &["word", "trial", "bin_start_ms", "latents"])? {
            if rec.len() != 4 {
                return Err(BlvError::Parse {
                    line,
                    message: format!("expected 4 fields, found {}", rec.len()),
                });
            }
            if !rec[1].is_empty() {
                stamps.push((parse_num(&rec[1], "trial", line)?, parse_num(&rec[2], "bin start", line)?));
            }
            let active = parse_indices(&rec[3], line)?;
            latents.push(LatentVector::from_active(n_latents, &active).map_err(|e| BlvError::Parse {
                line,
                message: e.to_string(),
            })?);
        }
        let timestamps = match stamps.len() {
            0 => None,
            k if k == latents.len() => Some(stamps),
            _ => return Err(BlvError::Format("timestamps present for only some words".into())),
        };
        Ok(Self {
            n_latents,
            trial_duration_ms,
            latents,
            timestamps,
        })
    }
}

/// Per-cell firing probabilities of an external null model on a regular
/// time grid, one row per `(trial, bin start)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullRates {
    pub n_cells: usize,
    pub resolution_ms: f64,
    pub n_bins: usize,
    /// `rates[trial][bin][cell]`.
    pub rates: Vec<Vec<Vec<f64>>>,
}

impl NullRates {
    /// Parse `trial,bin_start_ms,r_0,...,r_{N-1}`. Every trial must cover the
    /// same regular grid starting at 0.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| BlvError::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        if header.len() < 3 || &header[0] != "trial" || &header[1] != "bin_start_ms" {
            return Err(BlvError::Parse {
                line: 1,
                message: "expected header trial,bin_start_ms,r_0,...".into(),
            });
        }
        let n_cells = header.len() - 2;
        let mut by_trial: Vec<Vec<(f64, Vec<f64>)>> = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| BlvError::Parse {
                line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                message: e.to_string(),
            })?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            let trial: usize = parse_num(&rec[0], "trial", line)?;
            let start: f64 = parse_num(&rec[1], "bin start", line)?;
            let row = (2..rec.len())
                .map(|k| {
                    let r: f64 = parse_num(&rec[k], "rate", line)?;
                    if (0.0..=1.0).contains(&r) {
                        Ok(r)
                    } else {
                        Err(BlvError::Parse {
                            line,
                            message: format!("rate {r} outside [0, 1]"),
                        })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            if by_trial.len() <= trial {
                by_trial.resize_with(trial + 1, Vec::new);
            }
            by_trial[trial].push((start, row));
        }
        let first = by_trial
            .first()
            .filter(|t| !t.is_empty())
            .ok_or(BlvError::EmptyInput("null-rate table"))?;
        let n_bins = first.len();
        let resolution_ms = if n_bins > 1 { first[1].0 - first[0].0 } else { 1.0 };
        if !(resolution_ms > 0.0) {
            return Err(BlvError::Format("null-rate bins must increase".into()));
        }
        let mut rates = Vec::with_capacity(by_trial.len());
        for (trial, mut rows) in by_trial.into_iter().enumerate() {
            rows.sort_by(|a, b| a.0.total_cmp(&b.0));
            if rows.len() != n_bins {
                return Err(BlvError::Format(format!(
                    "trial {trial} has {} null-rate bins, expected {n_bins}",
                    rows.len()
                )));
            }
            for (k, (start, _)) in rows.iter().enumerate() {
                if (start - k as f64 * resolution_ms).abs() > 1e-6 * resolution_ms {
                    return Err(BlvError::Format(format!(
                        "trial {trial}: bin {k} starts at {start}, expected {}",
                        k as f64 * resolution_ms
                    )));
                }
            }
            rates.push(rows.into_iter().map(|(_, r)| r).collect());
        }
        Ok(Self {
            n_cells,
            resolution_ms,
            n_bins,
            rates,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("trial,bin_start_ms");
        for i in 0..self.n_cells {
            let _ = write!(s, ",r_{i}");
        }
        s.push('\n');
        for (trial, bins) in self.rates.iter().enumerate() {
            for (k, row) in bins.iter().enumerate() {
                let _ = write!(s, "{trial},{}", k as f64 * self.resolution_ms);
                for r in row {
                    let _ = write!(s, ",{r}");
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Write any serializable rows as CSV with a header row.
pub fn write_csv_rows<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| BlvError::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| BlvError::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| BlvError::Format(e.to_string()))
}
