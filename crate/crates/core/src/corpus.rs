//! Synthetic corpus generation, dataset file I/O, train/validation splitting,
//! and context-window feature assembly.
//!
//! The synthetic generator stands in for a real speech corpus while keeping
//! the two structural facts the training method exploits: frame labels are
//! constant within segments, and the segment-label process has learnable
//! N-gram statistics. Label index 0 is reserved for silence and every
//! generated utterance begins and ends with a silence segment.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, Poisson, StandardNormal};

use crate::{Error, Result};

/// Reserved label index for silence.
pub const SILENCE: usize = 0;

/// One utterance: a T×m sequence of real feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    utterance_id: String,
    frames: Array2<f64>,
}

impl FeatureSequence {
    pub fn new(utterance_id: impl Into<String>, frames: Array2<f64>) -> Result<Self> {
        if frames.nrows() == 0 || frames.ncols() == 0 {
            return Err(Error::data("feature sequence must be at least 1x1"));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("feature sequence contains non-finite values"));
        }
        Ok(FeatureSequence {
            utterance_id: utterance_id.into(),
            frames,
        })
    }

    pub fn id(&self) -> &str {
        &self.utterance_id
    }

    /// Number of frames T.
    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // T >= 1 by construction
    }

    /// Feature dimension m.
    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn frames(&self) -> ArrayView2<'_, f64> {
        self.frames.view()
    }

    pub fn frame(&self, t: usize) -> ArrayView1<'_, f64> {
        self.frames.row(t)
    }
}

/// Frame-level label sequence paired with a feature sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSequence {
    labels: Vec<usize>,
    alphabet_size: usize,
}

impl LabelSequence {
    pub fn new(labels: Vec<usize>, alphabet_size: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::data("label sequence must be nonempty"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= alphabet_size) {
            return Err(Error::data(format!(
                "label {bad} out of range for alphabet size {alphabet_size}"
            )));
        }
        Ok(LabelSequence {
            labels,
            alphabet_size,
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Collapse to one symbol per maximal run of equal labels.
    pub fn to_segment_labels(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for &l in &self.labels {
            if out.last() != Some(&l) {
                out.push(l);
            }
        }
        out
    }
}

/// Per-frame boundary indicators partitioning an utterance into segments.
///
/// `boundaries[0]` is always true: every utterance starts a segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    boundaries: Vec<bool>,
}

impl Segmentation {
    pub fn new(boundaries: Vec<bool>) -> Result<Self> {
        if boundaries.is_empty() {
            return Err(Error::data("segmentation must cover at least one frame"));
        }
        if !boundaries[0] {
            return Err(Error::data("segmentation must start with a boundary"));
        }
        Ok(Segmentation { boundaries })
    }

    /// Boundaries implied by a frame label sequence: a segment starts wherever
    /// the label changes (and at frame 0).
    pub fn from_labels(labels: &[usize]) -> Self {
        let boundaries = labels
            .iter()
            .enumerate()
            .map(|(t, &l)| t == 0 || l != labels[t - 1])
            .collect();
        Segmentation { boundaries }
    }

    /// Single segment spanning all of `len` frames.
    pub fn single_segment(len: usize) -> Result<Self> {
        let mut boundaries = vec![false; len];
        if len == 0 {
            return Err(Error::data("segmentation must cover at least one frame"));
        }
        boundaries[0] = true;
        Ok(Segmentation { boundaries })
    }

    pub fn boundaries(&self) -> &[bool] {
        &self.boundaries
    }

    pub fn len(&self) -> usize {
        self.boundaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundaries.is_empty()
    }

    pub fn num_segments(&self) -> usize {
        self.boundaries.iter().filter(|&&b| b).count()
    }

    /// Contiguous, non-overlapping `[start, end)` ranges covering all frames.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = 0;
        for t in 1..self.boundaries.len() {
            if self.boundaries[t] {
                out.push((start, t));
                start = t;
            }
        }
        out.push((start, self.boundaries.len()));
        out
    }

    /// Boundary positions with the utterance-initial boundary excluded.
    pub fn interior_boundaries(&self) -> Vec<usize> {
        (1..self.boundaries.len())
            .filter(|&t| self.boundaries[t])
            .collect()
    }
}

/// A dataset of utterances with optional gold annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub utterances: Vec<FeatureSequence>,
    pub gold_labels: Option<Vec<LabelSequence>>,
    pub gold_segmentation: Option<Vec<Segmentation>>,
    /// Label names; index 0 is the designated silence label.
    pub alphabet: Vec<String>,
}

impl Corpus {
    pub fn new(
        utterances: Vec<FeatureSequence>,
        gold_labels: Option<Vec<LabelSequence>>,
        gold_segmentation: Option<Vec<Segmentation>>,
        alphabet: Vec<String>,
    ) -> Result<Self> {
        if alphabet.is_empty() {
            return Err(Error::data("alphabet must be nonempty"));
        }
        if let Some(labels) = &gold_labels {
            if labels.len() != utterances.len() {
                return Err(Error::data("gold labels not aligned with utterances"));
            }
            for (u, l) in utterances.iter().zip(labels) {
                if u.len() != l.len() {
                    return Err(Error::data(format!(
                        "utterance {}: {} frames but {} labels",
                        u.id(),
                        u.len(),
                        l.len()
                    )));
                }
                if l.alphabet_size() != alphabet.len() {
                    return Err(Error::data("label alphabet size mismatch"));
                }
            }
        }
        if let Some(segs) = &gold_segmentation {
            if segs.len() != utterances.len() {
                return Err(Error::data("gold segmentation not aligned with utterances"));
            }
            for (u, s) in utterances.iter().zip(segs) {
                if u.len() != s.len() {
                    return Err(Error::data(format!(
                        "utterance {}: {} frames but {} boundary flags",
                        u.id(),
                        u.len(),
                        s.len()
                    )));
                }
            }
            // Labels must be constant within gold segments and change across
            // gold boundaries.
            if let Some(labels) = &gold_labels {
                for (l, s) in labels.iter().zip(segs) {
                    if &Segmentation::from_labels(l.labels()) != s {
                        return Err(Error::data(
                            "gold labels and gold segmentation disagree on segment runs",
                        ));
                    }
                }
            }
        }
        Ok(Corpus {
            utterances,
            gold_labels,
            gold_segmentation,
            alphabet,
        })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet.len()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.utterances.first().map(|u| u.dim())
    }

    /// Segment-level gold label sequences (one symbol per segment), the
    /// transcripts an external text corpus would provide.
    pub fn transcripts(&self) -> Option<Vec<Vec<usize>>> {
        self.gold_labels
            .as_ref()
            .map(|ls| ls.iter().map(|l| l.to_segment_labels()).collect())
    }

    /// Copy of this corpus with all gold annotation removed.
    pub fn strip_gold(&self) -> Corpus {
        Corpus {
            utterances: self.utterances.clone(),
            gold_labels: None,
            gold_segmentation: None,
            alphabet: self.alphabet.clone(),
        }
    }
}

/// Knobs for the synthetic corpus generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Number of labels including silence (index 0).
    pub alphabet_size: usize,
    pub feature_dim: usize,
    pub num_utterances: usize,
    /// Non-silence segments per utterance; a silence segment is added at both
    /// ends, so each utterance has `segments_per_utterance + 2` segments.
    pub segments_per_utterance: usize,
    /// Mean of the Poisson segment duration (frames).
    pub mean_segment_length: f64,
    pub min_segment_length: usize,
    /// Minimum pairwise distance between emission cluster means.
    pub emission_cluster_separation: f64,
    pub emission_noise_std: f64,
    /// Order of the ground-truth Markov process over segment labels.
    pub transition_lm_order: usize,
    /// Frames adjacent to a boundary are blended toward the neighboring
    /// segment's cluster mean.
    pub coarticulation_blend_frames: usize,
    pub random_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            alphabet_size: 6,
            feature_dim: 8,
            num_utterances: 200,
            segments_per_utterance: 8,
            mean_segment_length: 6.0,
            min_segment_length: 3,
            emission_cluster_separation: 4.0,
            emission_noise_std: 1.0,
            transition_lm_order: 2,
            coarticulation_blend_frames: 1,
            random_seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.alphabet_size < 3 {
            // silence plus at least two labels, so adjacent interior segments
            // can always differ
            return Err(Error::config("alphabet_size must be at least 3"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim must be positive"));
        }
        if self.num_utterances == 0 {
            return Err(Error::config("num_utterances must be positive"));
        }
        if self.segments_per_utterance == 0 {
            return Err(Error::config("segments_per_utterance must be positive"));
        }
        if self.mean_segment_length < 1.0 || !self.mean_segment_length.is_finite() {
            return Err(Error::config("mean_segment_length must be >= 1"));
        }
        if self.min_segment_length == 0 {
            return Err(Error::config("min_segment_length must be >= 1"));
        }
        if self.emission_cluster_separation < 0.0 || !self.emission_cluster_separation.is_finite()
        {
            return Err(Error::config("emission_cluster_separation must be >= 0"));
        }
        if self.emission_noise_std < 0.0 || !self.emission_noise_std.is_finite() {
            return Err(Error::config("emission_noise_std must be >= 0"));
        }
        if self.transition_lm_order == 0 {
            return Err(Error::config("transition_lm_order must be >= 1"));
        }
        let contexts = (self.alphabet_size as f64).powi(self.transition_lm_order as i32);
        if contexts > 1e6 {
            return Err(Error::config(format!(
                "transition table too large: {} contexts",
                contexts
            )));
        }
        Ok(())
    }
}

/// Default label names: "sil" plus "p01", "p02", ...
pub fn default_alphabet(size: usize) -> Vec<String> {
    (0..size)
        .map(|i| {
            if i == SILENCE {
                "sil".to_string()
            } else {
                format!("p{i:02}")
            }
        })
        .collect()
}

/// Place `count` cluster means in `dim` dimensions with pairwise distance at
/// least `separation`, by rejection sampling in an expanding box.
fn place_cluster_means(
    count: usize,
    dim: usize,
    separation: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Array1<f64>> {
    let mut means: Vec<Array1<f64>> = Vec::with_capacity(count);
    let mut half_width = separation.max(1.0) * (count as f64).powf(1.0 / dim as f64);
    while means.len() < count {
        let mut placed = false;
        for _ in 0..1000 {
            let candidate =
                Array1::from_iter((0..dim).map(|_| rng.gen_range(-half_width..half_width)));
            let ok = means.iter().all(|m| {
                let d2: f64 = m
                    .iter()
                    .zip(candidate.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                d2.sqrt() >= separation
            });
            if ok {
                means.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            half_width *= 1.5;
        }
    }
    means
}

/// Ground-truth Markov process over segment labels.
///
/// Contexts are the previous `order` segment labels (padded with silence at
/// the utterance start). Interior segments never repeat the previous label
/// and never emit silence; silence is reserved for utterance boundaries.
struct LabelProcess {
    order: usize,
    alphabet_size: usize,
    /// context (length `order`) -> unnormalized weight per candidate label
    table: HashMap<Vec<usize>, Vec<f64>>,
}

impl LabelProcess {
    fn generate(order: usize, alphabet_size: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut table = HashMap::new();
        let mut ctx = vec![0usize; order];
        loop {
            let weights: Vec<f64> = (0..alphabet_size)
                .map(|_| {
                    let w: f64 = rng.sample(Exp1);
                    w + 1e-3
                })
                .collect();
            table.insert(ctx.clone(), weights);
            // advance to next context in lexicographic order
            let mut pos = order;
            loop {
                if pos == 0 {
                    return LabelProcess {
                        order,
                        alphabet_size,
                        table,
                    };
                }
                pos -= 1;
                ctx[pos] += 1;
                if ctx[pos] < alphabet_size {
                    break;
                }
                ctx[pos] = 0;
            }
        }
    }

    fn next_label(&self, history: &[usize], rng: &mut ChaCha8Rng) -> usize {
        let mut ctx = vec![SILENCE; self.order];
        let take = history.len().min(self.order);
        ctx[self.order - take..].copy_from_slice(&history[history.len() - take..]);
        let weights = &self.table[&ctx];
        let prev = *history.last().unwrap_or(&SILENCE);
        let candidates: Vec<usize> = (1..self.alphabet_size).filter(|&y| y != prev).collect();
        let total: f64 = candidates.iter().map(|&y| weights[y]).sum();
        let mut draw = rng.gen_range(0.0..total);
        for &y in &candidates {
            draw -= weights[y];
            if draw <= 0.0 {
                return y;
            }
        }
        *candidates.last().expect("at least one candidate label")
    }
}

/// Generate a synthetic corpus with gold labels and gold segmentation.
///
/// Deterministic given `spec.random_seed`.
pub fn generate_corpus(spec: &SynthSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.random_seed);

    let means = place_cluster_means(
        spec.alphabet_size,
        spec.feature_dim,
        spec.emission_cluster_separation,
        &mut rng,
    );
    let process = LabelProcess::generate(spec.transition_lm_order, spec.alphabet_size, &mut rng);
    let duration_dist = Poisson::new(spec.mean_segment_length)
        .map_err(|e| Error::config(format!("invalid mean_segment_length: {e}")))?;

    let mut utterances = Vec::with_capacity(spec.num_utterances);
    let mut gold_labels = Vec::with_capacity(spec.num_utterances);
    let mut gold_segs = Vec::with_capacity(spec.num_utterances);

    for ui in 0..spec.num_utterances {
        // segment labels: silence, interior labels, silence
        let mut seg_labels = vec![SILENCE];
        for _ in 0..spec.segments_per_utterance {
            let next = process.next_label(&seg_labels, &mut rng);
            seg_labels.push(next);
        }
        seg_labels.push(SILENCE);

        let durations: Vec<usize> = seg_labels
            .iter()
            .map(|_| {
                let d: f64 = duration_dist.sample(&mut rng);
                (d as usize).max(spec.min_segment_length)
            })
            .collect();
        let total_frames: usize = durations.iter().sum();

        let mut frames = Array2::<f64>::zeros((total_frames, spec.feature_dim));
        let mut labels = Vec::with_capacity(total_frames);
        let blend = spec.coarticulation_blend_frames;
        let mut t0 = 0;
        for (si, (&label, &dur)) in seg_labels.iter().zip(&durations).enumerate() {
            for k in 0..dur {
                let t = t0 + k;
                let dist_left = k;
                let dist_right = dur - 1 - k;
                let mut w_prev = 0.0;
                let mut w_next = 0.0;
                if blend > 0 {
                    if si > 0 && dist_left < blend {
                        w_prev = (blend - dist_left) as f64 / (2 * blend) as f64;
                    }
                    if si + 1 < seg_labels.len() && dist_right < blend {
                        w_next = (blend - dist_right) as f64 / (2 * blend) as f64;
                    }
                }
                let w_own = 1.0 - w_prev - w_next;
                for d in 0..spec.feature_dim {
                    let mut v = w_own * means[label][d];
                    if w_prev > 0.0 {
                        v += w_prev * means[seg_labels[si - 1]][d];
                    }
                    if w_next > 0.0 {
                        v += w_next * means[seg_labels[si + 1]][d];
                    }
                    let noise: f64 = rng.sample(StandardNormal);
                    frames[[t, d]] = v + spec.emission_noise_std * noise;
                }
                labels.push(label);
            }
            t0 += dur;
        }

        utterances.push(FeatureSequence::new(format!("utt{ui:04}"), frames)?);
        gold_segs.push(Segmentation::from_labels(&labels));
        gold_labels.push(LabelSequence::new(labels, spec.alphabet_size)?);
    }

    Corpus::new(
        utterances,
        Some(gold_labels),
        Some(gold_segs),
        default_alphabet(spec.alphabet_size),
    )
}

/// Split a corpus into disjoint, exhaustive train/heldout parts at utterance
/// granularity. The train size rounds up. Deterministic per seed.
pub fn split_corpus(corpus: &Corpus, train_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n = corpus.len();
    let n_train = ((train_fraction * n as f64).ceil() as usize).min(n);
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let mut train_idx: Vec<usize> = indices[..n_train].to_vec();
    let mut heldout_idx: Vec<usize> = indices[n_train..].to_vec();
    train_idx.sort_unstable();
    heldout_idx.sort_unstable();

    let pick = |idx: &[usize]| -> Result<Corpus> {
        Corpus::new(
            idx.iter().map(|&i| corpus.utterances[i].clone()).collect(),
            corpus
                .gold_labels
                .as_ref()
                .map(|ls| idx.iter().map(|&i| ls[i].clone()).collect()),
            corpus
                .gold_segmentation
                .as_ref()
                .map(|ss| idx.iter().map(|&i| ss[i].clone()).collect()),
            corpus.alphabet.clone(),
        )
    };
    Ok((pick(&train_idx)?, pick(&heldout_idx)?))
}

/// Concatenate the frames `t-(w-1)/2 ..= t+(w-1)/2`, repeating the first or
/// last frame where the window reaches past the utterance edge.
pub fn context_window(features: &FeatureSequence, t: usize, window: usize) -> Result<Array1<f64>> {
    if window % 2 == 0 {
        return Err(Error::config(format!(
            "context window size must be odd, got {window}"
        )));
    }
    if t >= features.len() {
        return Err(Error::data(format!(
            "frame index {t} out of range for utterance of length {}",
            features.len()
        )));
    }
    let m = features.dim();
    let half = (window - 1) / 2;
    let mut out = Array1::<f64>::zeros(window * m);
    for k in 0..window {
        let pos = (t + k).saturating_sub(half).min(features.len() - 1);
        out.slice_mut(ndarray::s![k * m..(k + 1) * m])
            .assign(&features.frame(pos));
    }
    Ok(out)
}

/// Stack context windows for a list of (utterance, frame) picks into a matrix.
pub(crate) fn context_rows(
    utterances: &[FeatureSequence],
    picks: &[(usize, usize)],
    window: usize,
) -> Array2<f64> {
    debug_assert!(window % 2 == 1);
    let m = utterances.first().map(|u| u.dim()).unwrap_or(0);
    let half = (window - 1) / 2;
    let mut out = Array2::<f64>::zeros((picks.len(), window * m));
    for (row, &(u, t)) in picks.iter().enumerate() {
        let feats = &utterances[u];
        for k in 0..window {
            let pos = (t + k).saturating_sub(half).min(feats.len() - 1);
            out.slice_mut(ndarray::s![row, k * m..(k + 1) * m])
                .assign(&feats.frame(pos));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Corpus directory format
// ---------------------------------------------------------------------------
//
// manifest.txt:
//   segodm-corpus v1
//   feature_dim <m>
//   alphabet_size <A>
//   alphabet <name_0> ... <name_{A-1}>
//   has_labels <true|false>
//   has_boundaries <true|false>
//   utterances <N>
//   <id_0>
//   ...
//
// <id>.txt (one per utterance):
//   utterance <id>
//   frames <T>
//   <T rows of m space-separated reals>
//   labels <T integers>          (present iff has_labels)
//   boundaries <T zeros/ones>    (present iff has_boundaries)

const CORPUS_MAGIC: &str = "segodm-corpus v1";

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Write a corpus into `dir` (created if missing).
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for name in &corpus.alphabet {
        if name.is_empty() || name.chars().any(|c| c.is_whitespace()) {
            return Err(Error::data(format!(
                "alphabet name {name:?} is not storable (whitespace)"
            )));
        }
    }
    let mut manifest = String::new();
    manifest.push_str(CORPUS_MAGIC);
    manifest.push('\n');
    let dim = corpus.feature_dim().unwrap_or(0);
    manifest.push_str(&format!("feature_dim {dim}\n"));
    manifest.push_str(&format!("alphabet_size {}\n", corpus.alphabet_size()));
    manifest.push_str(&format!("alphabet {}\n", corpus.alphabet.join(" ")));
    manifest.push_str(&format!("has_labels {}\n", corpus.gold_labels.is_some()));
    manifest.push_str(&format!(
        "has_boundaries {}\n",
        corpus.gold_segmentation.is_some()
    ));
    manifest.push_str(&format!("utterances {}\n", corpus.len()));
    for u in &corpus.utterances {
        manifest.push_str(u.id());
        manifest.push('\n');
    }
    fs::write(dir.join("manifest.txt"), manifest)?;

    for (i, u) in corpus.utterances.iter().enumerate() {
        let mut body = String::new();
        body.push_str(&format!("utterance {}\n", u.id()));
        body.push_str(&format!("frames {}\n", u.len()));
        for t in 0..u.len() {
            let row: Vec<String> = u.frame(t).iter().map(|v| format!("{v}")).collect();
            body.push_str(&row.join(" "));
            body.push('\n');
        }
        if let Some(labels) = &corpus.gold_labels {
            let row: Vec<String> = labels[i].labels().iter().map(|l| l.to_string()).collect();
            body.push_str(&format!("labels {}\n", row.join(" ")));
        }
        if let Some(segs) = &corpus.gold_segmentation {
            let row: Vec<String> = segs[i]
                .boundaries()
                .iter()
                .map(|&b| if b { "1" } else { "0" }.to_string())
                .collect();
            body.push_str(&format!("boundaries {}\n", row.join(" ")));
        }
        fs::write(dir.join(format!("{}.txt", u.id())), body)?;
    }
    Ok(())
}

struct LineReader<'a> {
    path: &'a Path,
    lines: std::str::Lines<'a>,
    lineno: usize,
}

impl<'a> LineReader<'a> {
    fn new(path: &'a Path, content: &'a str) -> Self {
        LineReader {
            path,
            lines: content.lines(),
            lineno: 0,
        }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        self.lineno += 1;
        self.lines
            .next()
            .ok_or_else(|| parse_err(self.path, self.lineno, "unexpected end of file"))
    }

    fn expect_field<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let line = self.next_line()?;
        let rest = line
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| parse_err(self.path, self.lineno, format!("expected `{key} ...`")))?;
        rest.trim()
            .parse::<T>()
            .map_err(|_| parse_err(self.path, self.lineno, format!("invalid value for {key}")))
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        parse_err(self.path, self.lineno, msg)
    }
}

/// Load a corpus previously written by [`save_corpus`].
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let manifest_path = dir.join("manifest.txt");
    let content = fs::read_to_string(&manifest_path)?;
    let mut r = LineReader::new(&manifest_path, &content);

    let magic = r.next_line()?;
    if magic != CORPUS_MAGIC {
        return Err(r.err(format!("unsupported corpus format `{magic}`")));
    }
    let feature_dim: usize = r.expect_field("feature_dim")?;
    let alphabet_size: usize = r.expect_field("alphabet_size")?;
    let alphabet_line: String = r.expect_field("alphabet")?;
    let alphabet: Vec<String> = alphabet_line.split_whitespace().map(String::from).collect();
    if alphabet.len() != alphabet_size {
        return Err(r.err(format!(
            "alphabet has {} names, expected {alphabet_size}",
            alphabet.len()
        )));
    }
    let has_labels: bool = r.expect_field("has_labels")?;
    let has_boundaries: bool = r.expect_field("has_boundaries")?;
    let count: usize = r.expect_field("utterances")?;
    let mut ids = Vec::with_capacity(count);
    for _ in 0..count {
        ids.push(r.next_line()?.trim().to_string());
    }

    let mut utterances = Vec::with_capacity(count);
    let mut all_labels = Vec::new();
    let mut all_segs = Vec::new();
    for id in &ids {
        let path = dir.join(format!("{id}.txt"));
        let content = fs::read_to_string(&path)?;
        let mut r = LineReader::new(&path, &content);
        let got_id: String = r.expect_field("utterance")?;
        if &got_id != id {
            return Err(r.err(format!("utterance id `{got_id}` does not match manifest")));
        }
        let frames: usize = r.expect_field("frames")?;
        if frames == 0 {
            return Err(r.err("utterance must have at least one frame"));
        }
        let mut data = Array2::<f64>::zeros((frames, feature_dim));
        for t in 0..frames {
            let line = r.next_line()?;
            let mut vals = line.split_whitespace();
            for d in 0..feature_dim {
                let tok = vals
                    .next()
                    .ok_or_else(|| r.err(format!("feature row has fewer than {feature_dim} values")))?;
                data[[t, d]] = tok
                    .parse::<f64>()
                    .map_err(|_| r.err(format!("invalid real `{tok}`")))?;
            }
            if vals.next().is_some() {
                return Err(r.err(format!("feature row has more than {feature_dim} values")));
            }
        }
        if has_labels {
            let line = r.next_line()?;
            let rest = line
                .strip_prefix("labels ")
                .ok_or_else(|| r.err("expected `labels ...`"))?;
            let labels: Vec<usize> = rest
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<usize>()
                        .map_err(|_| r.err(format!("invalid label `{tok}`")))
                })
                .collect::<Result<_>>()?;
            if labels.len() != frames {
                return Err(r.err(format!(
                    "label row has {} entries but utterance has {frames} frames",
                    labels.len()
                )));
            }
            all_labels.push(LabelSequence::new(labels, alphabet_size)?);
        }
        if has_boundaries {
            let line = r.next_line()?;
            let rest = line
                .strip_prefix("boundaries ")
                .ok_or_else(|| r.err("expected `boundaries ...`"))?;
            let flags: Vec<bool> = rest
                .split_whitespace()
                .map(|tok| match tok {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    _ => Err(r.err(format!("invalid boundary flag `{tok}`"))),
                })
                .collect::<Result<_>>()?;
            if flags.len() != frames {
                return Err(r.err(format!(
                    "boundary row has {} entries but utterance has {frames} frames",
                    flags.len()
                )));
            }
            all_segs.push(Segmentation::new(flags)?);
        }
        utterances.push(FeatureSequence::new(id.clone(), data)?);
    }

    Corpus::new(
        utterances,
        has_labels.then_some(all_labels),
        has_boundaries.then_some(all_segs),
        alphabet,
    )
}
