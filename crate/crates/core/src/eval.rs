//! Assessment of learned assemblies: matching across models, membership,
//! crispness, robustness, heterogeneity, null-model comparison, synergy and
//! co-activation counts.
//!
//! Every comparison of `P` columns goes through membership strength `1 - P`,
//! so a cell that reliably fires with its assembly has a large value.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{BlvError, Result};
use crate::io::NullRates;
use crate::model::{LatentVector, ModelParams, SpikeWord};

/// Variance floor used by [`crispness`].
pub const CRISPNESS_VAR_FLOOR: f64 = 1e-6;

/// Probability clamp used by [`null_word_logprob`].
pub const NULL_PROB_FLOOR: f64 = 1e-12;

/// `u . v / (|u| |v|)`, or 0 when either norm is 0.
///
/// ```
/// let cs = blv::eval::cosine_similarity(&[1.0, 1.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
/// assert!((cs - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
/// ```
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(BlvError::DimensionMismatch {
            what: "cosine similarity operands",
            expected: u.len(),
            got: v.len(),
        });
    }
    Ok(cosine_unchecked(u.iter().copied(), v.iter().copied()))
}

fn cosine_unchecked(u: impl Iterator<Item = f64>, v: impl Iterator<Item = f64>) -> f64 {
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        dot / (nu.sqrt() * nv.sqrt())
    }
}

fn column_cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    cosine_unchecked(a.iter().copied(), b.iter().copied())
}

/// Cosine similarity between every column of `a` (rows of the result) and
/// every column of `b`.
pub fn similarity_matrix(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    if a.nrows() != b.nrows() {
        return Err(BlvError::DimensionMismatch {
            what: "rows of compared matrices",
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    Ok(Array2::from_shape_fn((a.ncols(), b.ncols()), |(i, j)| {
        column_cosine(a.column(i), b.column(j))
    }))
}

/// Minimum-cost perfect assignment on a square matrix.
///
/// Returns `assignment` with row `i` matched to column `assignment[i]`.
pub fn hungarian(cost: &Array2<f64>) -> Result<Vec<usize>> {
    let n = cost.nrows();
    if cost.ncols() != n {
        return Err(BlvError::DimensionMismatch {
            what: "columns of square cost matrix",
            expected: n,
            got: cost.ncols(),
        });
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(BlvError::InvalidArgument("cost matrix must be finite".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // Potentials over 1-based rows and columns; column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[row_of[j] - 1] = j - 1;
    }
    Ok(assignment)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    /// Assembly `a` of the first model is matched to `assignment[a]` of the second.
    pub assignment: Vec<usize>,
    pub matched_cs: Vec<f64>,
    pub unmatched_diag_cs: Vec<f64>,
    pub delta_cs: f64,
}

impl MatchReport {
    pub fn mean_matched_cs(&self) -> f64 {
        mean(&self.matched_cs)
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Match the columns of two membership-strength matrices.
pub fn match_strengths(a: &Array2<f64>, b: &Array2<f64>) -> Result<MatchReport> {
    if a.dim() != b.dim() {
        return Err(BlvError::DimensionMismatch {
            what: "latent count of compared models",
            expected: a.ncols(),
            got: if a.nrows() != b.nrows() { b.nrows() } else { b.ncols() },
        });
    }
    let cs = similarity_matrix(a, b)?;
    let assignment = hungarian(&cs.mapv(|c| 1.0 - c))?;
    let matched_cs: Vec<f64> = assignment.iter().enumerate().map(|(i, &j)| cs[[i, j]]).collect();
    let unmatched_diag_cs: Vec<f64> = (0..cs.nrows()).map(|i| cs[[i, i]]).collect();
    let delta_cs = mean(&matched_cs) - mean(&unmatched_diag_cs);
    Ok(MatchReport {
        assignment,
        matched_cs,
        unmatched_diag_cs,
        delta_cs,
    })
}

/// Match the assemblies of two models by their `P` matrices.
pub fn match_assemblies(p_a: &Array2<f64>, p_b: &Array2<f64>) -> Result<MatchReport> {
    match_strengths(&p_a.mapv(|p| 1.0 - p), &p_b.mapv(|p| 1.0 - p))
}

/// Convenience wrapper over two fitted models.
pub fn match_models(a: &ModelParams, b: &ModelParams) -> Result<MatchReport> {
    match_strengths(&a.strengths(), &b.strengths())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberSet {
    pub assembly_index: usize,
    /// Ascending cell indices.
    pub members: Vec<usize>,
    /// Strengths of `members`, in the same order.
    pub strengths: Vec<f64>,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let mu = mean(xs);
    let var = if xs.is_empty() {
        0.0
    } else {
        xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / xs.len() as f64
    };
    (mu, var.sqrt())
}

/// Members of one assembly given its strength column.
///
/// A cell is a member when its strength exceeds `mean + sd` of the column and
/// it sorts above the largest gap between neighbouring sorted strengths,
/// provided that gap exceeds `mean + sd` of all gaps. Standard deviations are
/// population values.
///
/// ```
/// let set = blv::eval::determine_members(0, &[0.9, 0.85, 0.05, 0.04, 0.03]);
/// assert_eq!(set.members, vec![0, 1]);
/// ```
pub fn determine_members(assembly_index: usize, column: &[f64]) -> MemberSet {
    let empty = MemberSet {
        assembly_index,
        members: Vec::new(),
        strengths: Vec::new(),
    };
    if column.len() < 2 {
        return empty;
    }
    let mut order: Vec<usize> = (0..column.len()).collect();
    order.sort_by(|&i, &j| column[j].total_cmp(&column[i]).then(i.cmp(&j)));
    let gaps: Vec<f64> = order
        .windows(2)
        .map(|w| column[w[0]] - column[w[1]])
        .collect();
    let (mu_s, sd_s) = mean_sd(column);
    let (mu_g, sd_g) = mean_sd(&gaps);
    let mut cut = 0usize;
    let mut largest = f64::NEG_INFINITY;
    for (k, &g) in gaps.iter().enumerate() {
        if g > largest {
            largest = g;
            cut = k;
        }
    }
    if !(largest > mu_g + sd_g) {
        return empty;
    }
    let mut members: Vec<usize> = order[..=cut]
        .iter()
        .copied()
        .filter(|&i| column[i] > mu_s + sd_s)
        .collect();
    members.sort_unstable();
    let strengths = members.iter().map(|&i| column[i]).collect();
    MemberSet {
        assembly_index,
        members,
        strengths,
    }
}

/// Member sets for every column of a model.
pub fn model_members(model: &ModelParams) -> Vec<MemberSet> {
    let s = model.strengths();
    (0..s.ncols())
        .map(|a| determine_members(a, &s.column(a).to_vec()))
        .collect()
}

/// d' between member and non-member strengths, `(mu_in - mu_out) / sqrt(var_in + var_out)`,
/// with population variances floored at [`CRISPNESS_VAR_FLOOR`].
///
/// ```
/// let c = blv::eval::crispness(&[0.7, 0.9, -0.05, 0.15], &[0, 1]).unwrap();
/// assert!((c - 0.75 / 0.02f64.sqrt()).abs() < 1e-9);
/// ```
pub fn crispness(column: &[f64], members: &[usize]) -> Result<f64> {
    let n = column.len();
    let mut is_member = vec![false; n];
    for &i in members {
        if i >= n {
            return Err(BlvError::InvalidArgument(format!(
                "member index {i} out of range for {n} cells"
            )));
        }
        is_member[i] = true;
    }
    let inside: Vec<f64> = (0..n).filter(|&i| is_member[i]).map(|i| column[i]).collect();
    let outside: Vec<f64> = (0..n).filter(|&i| !is_member[i]).map(|i| column[i]).collect();
    if inside.is_empty() || outside.is_empty() {
        return Err(BlvError::InvalidArgument(
            "crispness needs a non-empty proper member subset".into(),
        ));
    }
    let (mu_in, sd_in) = mean_sd(&inside);
    let (mu_out, sd_out) = mean_sd(&outside);
    let var = (sd_in * sd_in).max(CRISPNESS_VAR_FLOOR) + (sd_out * sd_out).max(CRISPNESS_VAR_FLOOR);
    Ok((mu_in - mu_out) / var.sqrt())
}

/// Activation events of one assembly across trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventTrace {
    pub trial_duration_ms: f64,
    /// `(trial, time_ms)` pairs.
    pub events: Vec<(usize, f64)>,
}

impl EventTrace {
    pub fn new(trial_duration_ms: f64, events: Vec<(usize, f64)>) -> Result<Self> {
        if !(trial_duration_ms > 0.0 && trial_duration_ms.is_finite()) {
            return Err(BlvError::InvalidArgument(format!(
                "trial duration must be positive, got {trial_duration_ms}"
            )));
        }
        for &(_, t) in &events {
            if !(0.0..trial_duration_ms).contains(&t) {
                return Err(BlvError::InvalidArgument(format!(
                    "event time {t} outside [0, {trial_duration_ms})"
                )));
            }
        }
        Ok(Self {
            trial_duration_ms,
            events,
        })
    }

    /// Event counts per time bin, pooled over trials.
    ///
    /// ```
    /// let trace = blv::eval::EventTrace::new(200.0, vec![(0, 74.0)]).unwrap();
    /// assert_eq!(trace.psth(50.0).unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
    /// ```
    pub fn psth(&self, bin_ms: f64) -> Result<Vec<f64>> {
        let n_bins = n_bins(self.trial_duration_ms, bin_ms)?;
        let mut counts = vec![0.0; n_bins];
        for &(_, t) in &self.events {
            let k = ((t / bin_ms).floor() as usize).min(n_bins - 1);
            counts[k] += 1.0;
        }
        Ok(counts)
    }
}

fn n_bins(duration: f64, bin_ms: f64) -> Result<usize> {
    if !(bin_ms > 0.0 && bin_ms.is_finite()) {
        return Err(BlvError::InvalidArgument(format!(
            "bin width must be positive, got {bin_ms}"
        )));
    }
    Ok(((duration / bin_ms).ceil() as usize).max(1))
}

/// Free-function form of [`EventTrace::psth`].
pub fn psth(trace: &EventTrace, bin_ms: f64) -> Result<Vec<f64>> {
    trace.psth(bin_ms)
}

fn check_unit(what: &'static str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(BlvError::InvalidProbability {
            what,
            value: x,
            range: "[0, 1]",
        })
    }
}

/// `sqrt(<cs_tau> * <cs_M>)`.
pub fn robustness(cs_membership_mean: f64, cs_temporal_mean: f64) -> Result<f64> {
    check_unit("membership similarity", cs_membership_mean)?;
    check_unit("temporal similarity", cs_temporal_mean)?;
    Ok((cs_membership_mean * cs_temporal_mean).sqrt())
}

/// Minimum over mean of two cell-type counts.
pub fn heterogeneity(count_type1: u64, count_type2: u64) -> Result<f64> {
    if count_type1 == 0 && count_type2 == 0 {
        return Err(BlvError::InvalidArgument(
            "heterogeneity of an assembly without typed members".into(),
        ));
    }
    let lo = count_type1.min(count_type2) as f64;
    let avg = (count_type1 + count_type2) as f64 / 2.0;
    Ok(lo / avg)
}

/// Log probability of a word under independent per-cell firing rates.
pub fn null_word_logprob(rates: &[f64], y: &SpikeWord) -> Result<f64> {
    if rates.len() != y.len() {
        return Err(BlvError::DimensionMismatch {
            what: "null rates",
            expected: y.len(),
            got: rates.len(),
        });
    }
    let mut total = 0.0;
    for (&r, &b) in rates.iter().zip(y.bits()) {
        check_unit("null firing rate", r)?;
        let r = r.clamp(NULL_PROB_FLOOR, 1.0 - NULL_PROB_FLOOR);
        total += if b { r.ln() } else { (1.0 - r).ln() };
    }
    Ok(total)
}

/// A real-valued signal sampled on a regular grid over one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeTrace {
    pub resolution_ms: f64,
    pub values: Vec<f64>,
}

impl TimeTrace {
    pub fn duration_ms(&self) -> f64 {
        self.resolution_ms * self.values.len() as f64
    }

    /// Sum samples into bins of width `bin_ms`.
    pub fn rebin(&self, bin_ms: f64) -> Result<Vec<f64>> {
        let n_bins = n_bins(self.duration_ms(), bin_ms)?;
        let mut out = vec![0.0; n_bins];
        for (k, &v) in self.values.iter().enumerate() {
            let t = k as f64 * self.resolution_ms;
            let b = ((t / bin_ms + 1e-9).floor() as usize).min(n_bins - 1);
            out[b] += v;
        }
        Ok(out)
    }
}

/// `1 - cs` between an activation trace and a null-probability trace after
/// binning both at `bin_ms`.
pub fn delta_py(z_trace: &TimeTrace, null_trace: &TimeTrace, bin_ms: f64) -> Result<f64> {
    if (z_trace.duration_ms() - null_trace.duration_ms()).abs() > 1e-9 {
        return Err(BlvError::InvalidArgument(format!(
            "trace durations differ: {} ms vs {} ms",
            z_trace.duration_ms(),
            null_trace.duration_ms()
        )));
    }
    let a = z_trace.rebin(bin_ms)?;
    let b = null_trace.rebin(bin_ms)?;
    Ok(1.0 - cosine_similarity(&a, &b)?)
}

/// `1 - sqrt(cs_tau * cs_M)`.
pub fn synergy(cs_temporal_ab: f64, cs_membership_ab: f64) -> Result<f64> {
    Ok(1.0 - robustness(cs_membership_ab, cs_temporal_ab)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoactivityStats {
    pub counts: Vec<u64>,
    /// Symmetric, zero diagonal.
    pub pairs: Array2<u64>,
}

/// Per-assembly activation counts and unordered pair co-activation counts.
pub fn coactivity_stats(latents: &[LatentVector], n_latents: usize) -> Result<CoactivityStats> {
    let mut counts = vec![0u64; n_latents];
    let mut pairs = Array2::zeros((n_latents, n_latents));
    for z in latents {
        if z.len() != n_latents {
            return Err(BlvError::DimensionMismatch {
                what: "latent vector",
                expected: n_latents,
                got: z.len(),
            });
        }
        let active: Vec<usize> = z.active().collect();
        for (k, &a) in active.iter().enumerate() {
            counts[a] += 1;
            for &b in &active[k + 1..] {
                pairs[[a, b]] += 1;
                pairs[[b, a]] += 1;
            }
        }
    }
    Ok(CoactivityStats { counts, pairs })
}

/// Per-assembly activation events built from inferred latents and the
/// `(trial, bin start)` stamps of their words.
pub fn activation_traces(
    latents: &[LatentVector],
    stamps: &[(usize, f64)],
    n_latents: usize,
    trial_duration_ms: f64,
) -> Result<Vec<EventTrace>> {
    if latents.len() != stamps.len() {
        return Err(BlvError::DimensionMismatch {
            what: "timestamps for inferred latents",
            expected: latents.len(),
            got: stamps.len(),
        });
    }
    let mut events = vec![Vec::new(); n_latents];
    for (z, &stamp) in latents.iter().zip(stamps) {
        if z.len() != n_latents {
            return Err(BlvError::DimensionMismatch {
                what: "latent vector",
                expected: n_latents,
                got: z.len(),
            });
        }
        for a in z.active() {
            events[a].push(stamp);
        }
    }
    events
        .into_iter()
        .map(|e| EventTrace::new(trial_duration_ms, e))
        .collect()
}

/// Null-model probability that every member of an assembly fires, summed
/// over trials, on the null model's time grid.
pub fn null_member_trace(null: &NullRates, members: &[usize]) -> Result<TimeTrace> {
    if let Some(&bad) = members.iter().find(|&&i| i >= null.n_cells) {
        return Err(BlvError::DimensionMismatch {
            what: "member cell index within null-rate table",
            expected: null.n_cells,
            got: bad + 1,
        });
    }
    let all_fire = SpikeWord::new(vec![true; members.len()]);
    let mut values = vec![0.0; null.n_bins];
    for trial in &null.rates {
        for (k, row) in trial.iter().enumerate() {
            let sub: Vec<f64> = members.iter().map(|&i| row[i]).collect();
            values[k] += null_word_logprob(&sub, &all_fire)?.exp();
        }
    }
    Ok(TimeTrace {
        resolution_ms: null.resolution_ms,
        values,
    })
}

/// A partner model for cross-validation robustness, with its activation
/// traces.
pub struct Partner<'a> {
    pub model: &'a ModelParams,
    pub traces: &'a [EventTrace],
}

/// `R_X` per assembly: membership and temporal cosine similarity to the
/// matched assembly of every partner, each averaged over partners.
pub fn cross_model_robustness(
    model: &ModelParams,
    traces: &[EventTrace],
    partners: &[Partner<'_>],
    bin_ms: f64,
) -> Result<Vec<f64>> {
    let m = model.n_latents();
    if partners.is_empty() {
        return Err(BlvError::EmptyInput("partner models"));
    }
    let own: Vec<Vec<f64>> = traces.iter().map(|t| t.psth(bin_ms)).collect::<Result<_>>()?;
    let mut cs_m = vec![0.0; m];
    let mut cs_t = vec![0.0; m];
    for partner in partners {
        if partner.traces.len() != partner.model.n_latents() {
            return Err(BlvError::DimensionMismatch {
                what: "partner activation traces",
                expected: partner.model.n_latents(),
                got: partner.traces.len(),
            });
        }
        let report = match_models(model, partner.model)?;
        for a in 0..m {
            let b = report.assignment[a];
            cs_m[a] += report.matched_cs[a];
            cs_t[a] += cosine_similarity(&own[a], &partner.traces[b].psth(bin_ms)?)?;
        }
    }
    let k = partners.len() as f64;
    (0..m)
        .map(|a| robustness((cs_m[a] / k).clamp(0.0, 1.0), (cs_t[a] / k).clamp(0.0, 1.0)))
        .collect()
}

/// Per-assembly metrics for a single model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssemblyMetrics {
    pub assembly: usize,
    pub members: Vec<usize>,
    pub crispness: Option<f64>,
    pub activations: u64,
    pub heterogeneity: Option<f64>,
    pub robustness: Option<f64>,
    /// One value per requested bin width; `None` without a null model or
    /// without members.
    pub delta_py: Vec<Option<f64>>,
}

pub struct MetricsInput<'a> {
    pub model: &'a ModelParams,
    pub latents: &'a [LatentVector],
    /// Needed for temporal metrics.
    pub stamps: Option<&'a [(usize, f64)]>,
    pub trial_duration_ms: Option<f64>,
    pub null: Option<&'a NullRates>,
    /// One label per cell; exactly two distinct labels.
    pub cell_types: Option<&'a [String]>,
    pub partners: &'a [Partner<'a>],
    pub delta_py_bins: &'a [f64],
    pub robustness_bin_ms: f64,
}

pub fn assembly_metrics(input: &MetricsInput<'_>) -> Result<Vec<AssemblyMetrics>> {
    let model = input.model;
    let m = model.n_latents();
    let members = model_members(model);
    let strengths = model.strengths();
    let counts = coactivity_stats(input.latents, m)?.counts;

    let type_of: Option<Vec<bool>> = match input.cell_types {
        None => None,
        Some(labels) => {
            if labels.len() != model.n_cells() {
                return Err(BlvError::DimensionMismatch {
                    what: "cell-type labels",
                    expected: model.n_cells(),
                    got: labels.len(),
                });
            }
            let mut distinct: Vec<&String> = labels.iter().collect();
            distinct.sort();
            distinct.dedup();
            if distinct.len() != 2 {
                return Err(BlvError::InvalidArgument(format!(
                    "heterogeneity needs exactly two cell types, found {}",
                    distinct.len()
                )));
            }
            Some(labels.iter().map(|l| l == distinct[0]).collect())
        }
    };

    let temporal = match (input.stamps, input.trial_duration_ms) {
        (Some(st), Some(d)) => Some(activation_traces(input.latents, st, m, d)?),
        _ => None,
    };
    let robustness = match &temporal {
        Some(tr) if !input.partners.is_empty() => Some(cross_model_robustness(
            model,
            tr,
            input.partners,
            input.robustness_bin_ms,
        )?),
        _ => None,
    };

    let mut out = Vec::with_capacity(m);
    for (a, set) in members.into_iter().enumerate() {
        let column = strengths.column(a).to_vec();
        let crisp = if set.members.is_empty() || set.members.len() == column.len() {
            None
        } else {
            Some(crispness(&column, &set.members)?)
        };
        let heterogeneity = match &type_of {
            Some(first) if !set.members.is_empty() => {
                let n1 = set.members.iter().filter(|&&i| first[i]).count() as u64;
                Some(heterogeneity(n1, set.members.len() as u64 - n1)?)
            }
            _ => None,
        };
        let delta = match (input.null, &temporal) {
            (Some(null), Some(tr)) if !set.members.is_empty() => {
                let null_trace = null_member_trace(null, &set.members)?;
                let n_bins = null_trace.values.len();
                let z = tr[a].psth(null.resolution_ms)?;
                if z.len() != n_bins {
                    return Err(BlvError::InvalidArgument(format!(
                        "null-rate table covers {} ms but trials last {} ms",
                        null_trace.duration_ms(),
                        tr[a].trial_duration_ms
                    )));
                }
                let z_trace = TimeTrace {
                    resolution_ms: null.resolution_ms,
                    values: z,
                };
                input
                    .delta_py_bins
                    .iter()
                    .map(|&b| delta_py(&z_trace, &null_trace, b).map(Some))
                    .collect::<Result<Vec<_>>>()?
            }
            _ => vec![None; input.delta_py_bins.len()],
        };
        out.push(AssemblyMetrics {
            assembly: a,
            members: set.members,
            crispness: crisp,
            activations: counts[a],
            heterogeneity,
            robustness: robustness.as_ref().map(|r| r[a]),
            delta_py: delta,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn brute_force_min(cost: &Array2<f64>) -> f64 {
        fn rec(cost: &Array2<f64>, row: usize, used: &mut Vec<bool>) -> f64 {
            let n = cost.nrows();
            if row == n {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[[row, j]] + rec(cost, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(cost, 0, &mut vec![false; cost.nrows()])
    }

    #[test]
    fn cosine_examples() {
        assert_abs_diff_eq!(cosine_similarity(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(cosine_similarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn hungarian_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for n in 1..=7 {
            for _ in 0..30 {
                let cost = Array2::from_shape_fn((n, n), |_| rng.random_range(0..5) as f64 * 0.25);
                let a = hungarian(&cost).unwrap();
                let mut seen = vec![false; n];
                for &j in &a {
                    assert!(!seen[j]);
                    seen[j] = true;
                }
                let got: f64 = a.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
                assert_abs_diff_eq!(got, brute_force_min(&cost), epsilon = 1e-12);
            }
        }
        assert!(hungarian(&Array2::zeros((2, 3))).is_err());
        assert!(hungarian(&Array2::zeros((0, 0))).unwrap().is_empty());
    }

    #[test]
    fn permuted_copy_is_recovered() {
        let p = Array2::from_shape_fn((5, 4), |(i, a)| if i == a || i == a + 1 { 0.2 } else { 1.0 });
        let perm = [2usize, 0, 3, 1];
        let q = Array2::from_shape_fn((5, 4), |(i, b)| p[[i, perm[b]]]);
        let rep = match_assemblies(&p, &q).unwrap();
        for a in 0..4 {
            assert_eq!(perm[rep.assignment[a]], a);
            assert_abs_diff_eq!(rep.matched_cs[a], 1.0, epsilon = 1e-12);
        }
        assert!(rep.delta_cs > 0.0);
        assert!(match_assemblies(&p, &Array2::zeros((5, 3))).is_err());
    }

    #[test]
    fn member_rule_examples() {
        assert!(determine_members(0, &[0.4; 6]).members.is_empty());
        assert_eq!(determine_members(0, &[0.9, 0.85, 0.05, 0.04, 0.03]).members, vec![0, 1]);
        assert_eq!(determine_members(3, &[0.0, 0.0, 1.0, 0.0, 0.0]).members, vec![2]);
        assert!(determine_members(0, &[0.5]).members.is_empty());
    }

    #[test]
    fn crispness_examples() {
        assert_abs_diff_eq!(crispness(&[0.2, 0.4, 0.2, 0.4], &[0, 1]).unwrap(), 0.0, epsilon = 1e-15);
        let c = crispness(&[0.7, 0.9, -0.05, 0.15], &[0, 1]).unwrap();
        assert_abs_diff_eq!(c, 5.303300858899107, epsilon = 1e-9);
        assert!(crispness(&[0.1, 0.2], &[]).is_err());
        assert!(crispness(&[0.1, 0.2], &[0, 1]).is_err());
    }

    #[test]
    fn psth_examples() {
        let empty = EventTrace::new(100.0, vec![]).unwrap();
        assert!(empty.psth(10.0).unwrap().iter().all(|&c| c == 0.0));
        let t = EventTrace::new(100.0, vec![(0, 74.0), (1, 3.0), (1, 99.9)]).unwrap();
        for bin in [1.0, 7.0, 50.0, 1000.0] {
            assert_eq!(t.psth(bin).unwrap().iter().sum::<f64>(), 3.0);
        }
        assert!(EventTrace::new(100.0, vec![(0, 100.0)]).is_err());
    }

    #[test]
    fn scalar_metric_examples() {
        assert_eq!(robustness(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(robustness(0.3, 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(robustness(0.64, 0.81).unwrap(), 0.72, epsilon = 1e-15);
        assert!(robustness(1.2, 0.5).is_err());
        assert_eq!(heterogeneity(2, 2).unwrap(), 1.0);
        assert_eq!(heterogeneity(0, 5).unwrap(), 0.0);
        assert_eq!(heterogeneity(1, 3).unwrap(), 0.5);
        assert!(heterogeneity(0, 0).is_err());
        assert_abs_diff_eq!(synergy(0.81, 0.64).unwrap(), 0.28, epsilon = 1e-15);
        assert_eq!(synergy(1.0, 1.0).unwrap(), 0.0);
        assert_eq!(synergy(0.0, 0.7).unwrap(), 1.0);
    }

    #[test]
    fn null_logprob_examples() {
        let y = SpikeWord::from_active(3, &[1]).unwrap();
        assert_abs_diff_eq!(null_word_logprob(&[0.5; 3], &y).unwrap(), 3.0 * 0.5f64.ln(), epsilon = 1e-12);
        assert!(null_word_logprob(&[0.0, 1.0, 0.0], &y).unwrap().abs() < 1e-11);
        let y = SpikeWord::from_active(2, &[0, 1]).unwrap();
        assert_abs_diff_eq!(null_word_logprob(&[0.1, 0.9], &y).unwrap(), 0.09f64.ln(), epsilon = 1e-12);
        assert!(null_word_logprob(&[0.1], &y).is_err());
    }

    #[test]
    fn delta_py_examples() {
        let a = TimeTrace { resolution_ms: 1.0, values: vec![1.0, 0.0, 2.0, 4.0] };
        let b = TimeTrace { resolution_ms: 1.0, values: vec![3.0, 0.0, 6.0, 12.0] };
        assert_abs_diff_eq!(delta_py(&a, &b, 1.0).unwrap(), 0.0, epsilon = 1e-12);
        let c = TimeTrace { resolution_ms: 1.0, values: vec![0.0, 5.0, 0.0, 0.0] };
        assert_abs_diff_eq!(delta_py(&a, &c, 1.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(delta_py(&a, &c, 2.0).unwrap(), 1.0 - 1.0 / 37f64.sqrt() , epsilon = 1e-12);
        let short = TimeTrace { resolution_ms: 1.0, values: vec![1.0] };
        assert!(delta_py(&a, &short, 1.0).is_err());
    }

    #[test]
    fn coactivity_examples() {
        let z = LatentVector::from_active(3, &[0, 1]).unwrap();
        let s = coactivity_stats(&[z], 3).unwrap();
        assert_eq!(s.counts, vec![1, 1, 0]);
        assert_eq!(s.pairs[[0, 1]], 1);
        assert_eq!(s.pairs[[1, 0]], 1);
        assert_eq!(s.pairs[[0, 0]], 0);
        let hots: Vec<_> = (0..3).map(|a| LatentVector::one_hot(3, a)).collect();
        assert!(coactivity_stats(&hots, 3).unwrap().pairs.iter().all(|&c| c == 0));
    }
}
