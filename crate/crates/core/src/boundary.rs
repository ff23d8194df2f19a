//! Boundary estimation: an initial per-frame boundary prior from a pluggable
//! detector, approximate-MAP refinement of frame labels (and hence
//! boundaries) by beam search, and segmentation scoring.

use std::collections::HashMap;

use crate::corpus::{context_rows, FeatureSequence, LabelSequence, Segmentation};
use crate::decode::FramePrior;
use crate::lm::NGramLM;
use crate::model::Classifier;
use crate::{Error, Result};

/// Per-frame probability that a new segment starts at frame t, clamped to
/// `[1e-4, 1 - 1e-4]`. Frame 0 always starts a segment by convention; all
/// consumers treat it as a boundary regardless of the stored value.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPriorSignal {
    values: Vec<f64>,
}

const SIGNAL_CLAMP: f64 = 1e-4;

impl BoundaryPriorSignal {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::data("boundary signal must be nonempty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("boundary signal contains non-finite values"));
        }
        Ok(BoundaryPriorSignal {
            values: values
                .into_iter()
                .map(|v| v.clamp(SIGNAL_CLAMP, 1.0 - SIGNAL_CLAMP))
                .collect(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Anything that can produce a boundary prior from raw features.
pub trait BoundaryDetector {
    fn prior(&self, features: &FeatureSequence) -> BoundaryPriorSignal;
}

/// Default detector: cosine novelty between the mean of the frames just
/// before t and the mean of the frames from t onward, squashed through a
/// logistic centered on the median with an interquartile-range scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpectralDeltaDetector {
    /// Half-window width d: compares frames [t-d, t-1] against [t, t+d-1].
    pub width: usize,
}

impl Default for SpectralDeltaDetector {
    fn default() -> Self {
        SpectralDeltaDetector { width: 3 }
    }
}

fn mean_of_clamped(features: &FeatureSequence, lo: isize, hi: isize) -> Vec<f64> {
    let t_max = features.len() as isize - 1;
    let m = features.dim();
    let mut acc = vec![0.0; m];
    let mut count = 0.0;
    for i in lo..=hi {
        let idx = i.clamp(0, t_max) as usize;
        for (a, v) in acc.iter_mut().zip(features.frame(idx)) {
            *a += v;
        }
        count += 1.0;
    }
    for a in &mut acc {
        *a /= count;
    }
    acc
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        1.0 // no direction change detectable
    } else {
        dot / (na * nb)
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

impl BoundaryDetector for SpectralDeltaDetector {
    fn prior(&self, features: &FeatureSequence) -> BoundaryPriorSignal {
        let d = self.width.max(1) as isize;
        let t_count = features.len();
        let novelty: Vec<f64> = (0..t_count)
            .map(|t| {
                let t = t as isize;
                let left = mean_of_clamped(features, t - d, t - 1);
                let right = mean_of_clamped(features, t, t + d - 1);
                1.0 - cosine(&left, &right)
            })
            .collect();
        let mut sorted = novelty.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite novelty"));
        let median = quantile(&sorted, 0.5);
        let scale = (quantile(&sorted, 0.75) - quantile(&sorted, 0.25)).max(1e-6);
        let values = novelty
            .into_iter()
            .map(|n| 1.0 / (1.0 + (-(n - median) / scale).exp()))
            .collect();
        BoundaryPriorSignal::new(values).expect("logistic output is finite")
    }
}

/// Compute the boundary prior with the given detector.
pub fn boundary_prior<D: BoundaryDetector>(
    features: &FeatureSequence,
    detector: &D,
) -> BoundaryPriorSignal {
    detector.prior(features)
}

/// Threshold the prior into an initial segmentation: boundaries at local
/// maxima above `threshold`, pruned so that retained boundaries (including
/// the forced one at frame 0) are at least `min_segment_len` apart; the
/// weaker of two conflicting peaks is dropped, ties keep the earlier.
pub fn initial_boundaries(
    prior: &BoundaryPriorSignal,
    threshold: f64,
    min_segment_len: usize,
) -> Result<Segmentation> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::config(format!(
            "threshold must be in (0, 1), got {threshold}"
        )));
    }
    if min_segment_len == 0 {
        return Err(Error::config("min_segment_len must be >= 1"));
    }
    let v = prior.values();
    let t_count = v.len();
    // local maxima: rising edge of any plateau
    let mut candidates: Vec<(usize, f64)> = (1..t_count)
        .filter(|&t| v[t] > threshold && v[t] > v[t - 1] && (t + 1 >= t_count || v[t] >= v[t + 1]))
        .map(|t| (t, v[t]))
        .collect();
    candidates.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite prior")
            .then(a.0.cmp(&b.0))
    });

    let mut accepted: Vec<usize> = vec![0];
    for (t, _) in candidates {
        if accepted.iter().all(|&a| t.abs_diff(a) >= min_segment_len) {
            accepted.push(t);
        }
    }
    let mut boundaries = vec![false; t_count];
    for t in accepted {
        boundaries[t] = true;
    }
    Segmentation::new(boundaries)
}

#[derive(Clone)]
struct Hypothesis {
    label: usize,
    /// last N-1 emitted segment labels
    history: Vec<usize>,
    score: f64,
    /// index into the previous frame's beam
    parent: usize,
    created: u64,
}

/// Left-to-right beam search for the MAP frame-label sequence.
///
/// Each hypothesis carries (last frame label, last N-1 segment labels) —
/// sufficient statistics for all future score terms under an order-N LM.
/// Score terms per frame: the prior-scaled acoustic log-odds, plus either
/// the stay probability (same label) or the boundary probability and the
/// LM conditional (new segment). The LM terms are weighted by `lm_weight`.
pub(crate) fn beam_map_labels(
    classifier: &Classifier,
    lm: &NGramLM,
    frame_prior: &FramePrior,
    signal: &BoundaryPriorSignal,
    features: &FeatureSequence,
    beam_width: usize,
    lm_weight: f64,
) -> Result<Vec<usize>> {
    if beam_width == 0 {
        return Err(Error::config("beam width must be >= 1"));
    }
    if lm_weight < 0.0 || !lm_weight.is_finite() {
        return Err(Error::config("lm_weight must be >= 0"));
    }
    let t_count = features.len();
    if signal.len() != t_count {
        return Err(Error::data("boundary signal length mismatch"));
    }
    let n_labels = classifier.output_dim();
    if frame_prior.len() != n_labels {
        return Err(Error::data("frame prior size mismatch"));
    }
    if lm.alphabet_size() != n_labels {
        return Err(Error::data("language model alphabet size mismatch"));
    }
    let m = features.dim();
    if classifier.input_dim() % m != 0 {
        return Err(Error::data(
            "classifier input dim is not a multiple of the feature dim",
        ));
    }
    let window = classifier.input_dim() / m;
    if window % 2 == 0 {
        return Err(Error::data("derived context window is even"));
    }

    let picks: Vec<(usize, usize)> = (0..t_count).map(|t| (0, t)).collect();
    let x = context_rows(std::slice::from_ref(features), &picks, window);
    let posteriors = classifier.forward(x.view(), 1.0)?;
    // prior-scaled acoustic term ln p(y|x) - ln p(y); posteriors floored so
    // scores stay finite while hopeless labels still lose by a wide margin
    let mut acoustic = vec![vec![0.0f64; n_labels]; t_count];
    for t in 0..t_count {
        for y in 0..n_labels {
            acoustic[t][y] =
                posteriors[[t, y]].max(f64::MIN_POSITIVE).ln() - frame_prior.prob(y).ln();
        }
    }
    let ln_cond = |y: usize, history: &[usize]| -> f64 {
        if lm_weight == 0.0 {
            0.0
        } else {
            lm_weight * lm.cond_prob(y, history).max(f64::MIN_POSITIVE).ln()
        }
    };
    let push_history = |history: &[usize], y: usize| -> Vec<usize> {
        if lm.order() == 1 {
            return Vec::new();
        }
        let mut h = history.to_vec();
        h.push(y);
        let overflow = h.len().saturating_sub(lm.order() - 1);
        h.drain(..overflow);
        h
    };

    let mut beams: Vec<Vec<Hypothesis>> = Vec::with_capacity(t_count);
    let mut initial = Vec::with_capacity(n_labels);
    for (created, y) in (0..n_labels).enumerate() {
        initial.push(Hypothesis {
            label: y,
            history: push_history(&[], y),
            score: acoustic[0][y] + ln_cond(y, &[]),
            parent: usize::MAX,
            created: created as u64,
        });
    }
    sort_and_truncate(&mut initial, beam_width);
    beams.push(initial);

    for t in 1..t_count {
        let prev = &beams[t - 1];
        let ln_stay = (1.0 - signal.values()[t]).ln();
        let ln_switch = signal.values()[t].ln();
        let mut merged: HashMap<(usize, Vec<usize>), usize> = HashMap::new();
        let mut next: Vec<Hypothesis> = Vec::new();
        let mut created = 0u64;
        for (pi, hyp) in prev.iter().enumerate() {
            for y in 0..n_labels {
                let (score, history) = if y == hyp.label {
                    (hyp.score + ln_stay + acoustic[t][y], hyp.history.clone())
                } else {
                    (
                        hyp.score + ln_switch + ln_cond(y, &hyp.history) + acoustic[t][y],
                        push_history(&hyp.history, y),
                    )
                };
                match merged.entry((y, history.clone())) {
                    std::collections::hash_map::Entry::Occupied(e) => {
                        let slot = &mut next[*e.get()];
                        if score > slot.score {
                            slot.score = score;
                            slot.parent = pi;
                        }
                    }
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(next.len());
                        next.push(Hypothesis {
                            label: y,
                            history,
                            score,
                            parent: pi,
                            created,
                        });
                        created += 1;
                    }
                }
            }
        }
        sort_and_truncate(&mut next, beam_width);
        beams.push(next);
    }

    // backtrace from the best final hypothesis
    let mut labels = vec![0usize; t_count];
    let mut idx = 0;
    for t in (0..t_count).rev() {
        let hyp = &beams[t][idx];
        labels[t] = hyp.label;
        idx = hyp.parent;
    }
    Ok(labels)
}

fn sort_and_truncate(hyps: &mut Vec<Hypothesis>, beam_width: usize) {
    hyps.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("scores never NaN")
            .then(a.label.cmp(&b.label))
            .then(a.created.cmp(&b.created))
    });
    hyps.truncate(beam_width);
}

/// Best final-hypothesis score for an utterance (grows monotonically with
/// beam width on a fixed instance).
pub fn best_path_score(
    classifier: &Classifier,
    lm: &NGramLM,
    frame_prior: &FramePrior,
    signal: &BoundaryPriorSignal,
    features: &FeatureSequence,
    beam_width: usize,
    lm_weight: f64,
) -> Result<f64> {
    let labels = beam_map_labels(
        classifier,
        lm,
        frame_prior,
        signal,
        features,
        beam_width,
        lm_weight,
    )?;
    score_label_sequence(
        &labels, classifier, lm, frame_prior, signal, features, lm_weight,
    )
}

/// Score an explicit frame-label sequence with the same terms the beam uses.
pub fn score_label_sequence(
    labels: &[usize],
    classifier: &Classifier,
    lm: &NGramLM,
    frame_prior: &FramePrior,
    signal: &BoundaryPriorSignal,
    features: &FeatureSequence,
    lm_weight: f64,
) -> Result<f64> {
    let m = features.dim();
    let window = classifier.input_dim() / m;
    let picks: Vec<(usize, usize)> = (0..features.len()).map(|t| (0, t)).collect();
    let x = context_rows(std::slice::from_ref(features), &picks, window);
    let posteriors = classifier.forward(x.view(), 1.0)?;
    let mut score = 0.0;
    let mut history: Vec<usize> = Vec::new();
    for (t, &y) in labels.iter().enumerate() {
        score += posteriors[[t, y]].max(f64::MIN_POSITIVE).ln() - frame_prior.prob(y).ln();
        let new_segment = t == 0 || y != labels[t - 1];
        if t > 0 {
            if new_segment {
                score += signal.values()[t].ln();
            } else {
                score += (1.0 - signal.values()[t]).ln();
            }
        }
        if new_segment {
            if lm_weight > 0.0 {
                score += lm_weight * lm.cond_prob(y, &history).max(f64::MIN_POSITIVE).ln();
            }
            history.push(y);
            let keep = history.len().min(lm.order().saturating_sub(1));
            let drop = history.len() - keep;
            history.drain(..drop);
        }
    }
    Ok(score)
}

/// MAP frame labels for one utterance, with the boundaries they imply.
pub fn refine_boundaries(
    classifier: &Classifier,
    lm: &NGramLM,
    frame_prior: &FramePrior,
    signal: &BoundaryPriorSignal,
    features: &FeatureSequence,
    beam_width: usize,
) -> Result<(LabelSequence, Segmentation)> {
    let labels = weighted_map_labels(classifier, lm, frame_prior, signal, features, beam_width, 1.0)?;
    let seg = Segmentation::from_labels(labels.labels());
    Ok((labels, seg))
}

/// MAP frame labels with the LM terms scaled by `lm_weight`.
pub fn weighted_map_labels(
    classifier: &Classifier,
    lm: &NGramLM,
    frame_prior: &FramePrior,
    signal: &BoundaryPriorSignal,
    features: &FeatureSequence,
    beam_width: usize,
    lm_weight: f64,
) -> Result<LabelSequence> {
    let labels = beam_map_labels(
        classifier,
        lm,
        frame_prior,
        signal,
        features,
        beam_width,
        lm_weight,
    )?;
    LabelSequence::new(labels, classifier.output_dim())
}

/// Recall/precision/F/R segmentation quality against a reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegMetrics {
    pub recall: f64,
    pub precision: f64,
    pub f_score: f64,
    pub r_value: f64,
    pub hits: usize,
    pub hyp_boundaries: usize,
    pub ref_boundaries: usize,
}

impl SegMetrics {
    /// Metrics from raw counts. Utterance-initial boundaries are excluded by
    /// the caller. Degenerate cases: an empty reference with an empty
    /// hypothesis is perfect; with no hits the over-segmentation ratio falls
    /// back to its count form `hyp/ref - 1`.
    pub fn from_counts(hits: usize, hyp_boundaries: usize, ref_boundaries: usize) -> SegMetrics {
        let recall = if ref_boundaries == 0 {
            1.0
        } else {
            hits as f64 / ref_boundaries as f64
        };
        let precision = if hyp_boundaries == 0 {
            1.0
        } else {
            hits as f64 / hyp_boundaries as f64
        };
        let mut m = if hits == 0 {
            let os = if ref_boundaries > 0 {
                hyp_boundaries as f64 / ref_boundaries as f64 - 1.0
            } else if hyp_boundaries > 0 {
                f64::INFINITY
            } else {
                0.0
            };
            SegMetrics::from_rates_with_os(recall, precision, os)
        } else {
            SegMetrics::from_rates(recall, precision)
        };
        m.hits = hits;
        m.hyp_boundaries = hyp_boundaries;
        m.ref_boundaries = ref_boundaries;
        m
    }

    /// Metrics from recall and precision alone, with the over-segmentation
    /// ratio `recall / precision - 1`.
    pub fn from_rates(recall: f64, precision: f64) -> SegMetrics {
        let os = if precision > 0.0 {
            recall / precision - 1.0
        } else if recall > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        SegMetrics::from_rates_with_os(recall, precision, os)
    }

    fn from_rates_with_os(recall: f64, precision: f64, os: f64) -> SegMetrics {
        let f_score = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let r1 = ((1.0 - recall) * (1.0 - recall) + os * os).sqrt();
        let r2 = (-os + recall - 1.0) / std::f64::consts::SQRT_2;
        let r_value = 1.0 - (r1.abs() + r2.abs()) / 2.0;
        SegMetrics {
            recall,
            precision,
            f_score,
            r_value,
            hits: 0,
            hyp_boundaries: 0,
            ref_boundaries: 0,
        }
    }
}

/// Score a hypothesized segmentation against a reference with a one-to-one
/// left-to-right matching within `tolerance_frames`. Utterance-initial
/// boundaries are excluded from both sides.
pub fn eval_segmentation(
    hyp: &Segmentation,
    reference: &Segmentation,
    tolerance_frames: usize,
) -> Result<SegMetrics> {
    if hyp.len() != reference.len() {
        return Err(Error::data(format!(
            "segmentation lengths differ: {} vs {}",
            hyp.len(),
            reference.len()
        )));
    }
    let h = hyp.interior_boundaries();
    let r = reference.interior_boundaries();
    Ok(SegMetrics::from_counts(
        match_boundaries(&h, &r, tolerance_frames),
        h.len(),
        r.len(),
    ))
}

/// Pooled metrics over aligned utterance lists.
pub fn eval_segmentations(
    hyps: &[Segmentation],
    refs: &[Segmentation],
    tolerance_frames: usize,
) -> Result<SegMetrics> {
    if hyps.len() != refs.len() {
        return Err(Error::data("segmentation lists differ in length"));
    }
    let mut hits = 0;
    let mut n_hyp = 0;
    let mut n_ref = 0;
    for (h, r) in hyps.iter().zip(refs) {
        if h.len() != r.len() {
            return Err(Error::data(format!(
                "segmentation lengths differ: {} vs {}",
                h.len(),
                r.len()
            )));
        }
        let hb = h.interior_boundaries();
        let rb = r.interior_boundaries();
        hits += match_boundaries(&hb, &rb, tolerance_frames);
        n_hyp += hb.len();
        n_ref += rb.len();
    }
    Ok(SegMetrics::from_counts(hits, n_hyp, n_ref))
}

/// Maximum one-to-one matching between two sorted boundary lists under a
/// distance tolerance (two-pointer walk; symmetric in its arguments).
fn match_boundaries(hyp: &[usize], reference: &[usize], tolerance: usize) -> usize {
    let mut hits = 0;
    let mut i = 0;
    let mut j = 0;
    while i < reference.len() && j < hyp.len() {
        if reference[i].abs_diff(hyp[j]) <= tolerance {
            hits += 1;
            i += 1;
            j += 1;
        } else if hyp[j] < reference[i] {
            j += 1;
        } else {
            i += 1;
        }
    }
    hits
}
