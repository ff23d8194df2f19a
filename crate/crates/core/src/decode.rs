//! Frame-prior estimation, LM-weighted phoneme-sequence decoding, and
//! recognition metrics: frame error rate (plain and silence-stripped) and
//! phone error rate.

use crate::boundary::{beam_map_labels, BoundaryPriorSignal};
use crate::corpus::{context_rows, FeatureSequence, LabelSequence};
use crate::lm::NGramLM;
use crate::model::Classifier;
use crate::{Error, Result};

/// Marginal label distribution p(y), the denominator of the prior-scaled
/// acoustic score. Strictly positive and normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePrior {
    probs: Vec<f64>,
}

const PRIOR_FLOOR: f64 = 1e-6;

impl FramePrior {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::data("frame prior must be nonempty"));
        }
        if probs.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::data("frame prior entries must be strictly positive"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::data(format!("frame prior sums to {sum}, not 1")));
        }
        Ok(FramePrior { probs })
    }

    pub fn uniform(n: usize) -> FramePrior {
        FramePrior {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn prob(&self, y: usize) -> f64 {
        self.probs[y]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Deliberately unnormalized copy, for argmax-invariance tests only.
    #[cfg(test)]
    pub(crate) fn scaled_for_test(&self, factor: f64) -> FramePrior {
        FramePrior {
            probs: self.probs.iter().map(|p| p * factor).collect(),
        }
    }
}

/// Mean classifier posterior over every frame of the corpus at temperature 1,
/// floored and renormalized.
pub fn estimate_frame_prior(
    classifier: &Classifier,
    utterances: &[FeatureSequence],
) -> Result<FramePrior> {
    if utterances.is_empty() {
        return Err(Error::data(
            "cannot estimate a frame prior from an empty corpus",
        ));
    }
    let m = utterances[0].dim();
    if classifier.input_dim() % m != 0 {
        return Err(Error::data(
            "classifier input dim is not a multiple of the feature dim",
        ));
    }
    let window = classifier.input_dim() / m;
    let mut sums = vec![0.0f64; classifier.output_dim()];
    let mut total = 0usize;
    for (u, feats) in utterances.iter().enumerate() {
        let picks: Vec<(usize, usize)> = (0..feats.len()).map(|t| (u, t)).collect();
        let x = context_rows(utterances, &picks, window);
        let p = classifier.forward(x.view(), 1.0)?;
        for row in p.rows() {
            for (s, &v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        total += feats.len();
    }
    let mut probs: Vec<f64> = sums
        .iter()
        .map(|s| (s / total as f64).max(PRIOR_FLOOR))
        .collect();
    let norm: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= norm;
    }
    FramePrior::new(probs)
}

/// Framewise argmax labels at temperature 1 (no decoder).
pub fn framewise_argmax(
    classifier: &Classifier,
    utterances: &[FeatureSequence],
) -> Result<Vec<LabelSequence>> {
    let m = utterances
        .first()
        .map(|u| u.dim())
        .ok_or_else(|| Error::data("empty corpus"))?;
    let window = classifier.input_dim() / m;
    let mut out = Vec::with_capacity(utterances.len());
    for (u, feats) in utterances.iter().enumerate() {
        let picks: Vec<(usize, usize)> = (0..feats.len()).map(|t| (u, t)).collect();
        let x = context_rows(utterances, &picks, window);
        let p = classifier.forward(x.view(), 1.0)?;
        let labels: Vec<usize> = p
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite posterior"))
                    .expect("nonempty row")
                    .0
            })
            .collect();
        out.push(LabelSequence::new(labels, classifier.output_dim())?);
    }
    Ok(out)
}

/// MAP decode of one utterance into a segment-level phoneme sequence.
///
/// Runs the same beam machinery as boundary refinement with the LM terms
/// multiplied by `lm_weight`, then collapses the frame labels into one symbol
/// per maximal run.
pub fn decode_utterance(
    classifier: &Classifier,
    lm: &NGramLM,
    frame_prior: &FramePrior,
    signal: &BoundaryPriorSignal,
    features: &FeatureSequence,
    beam_width: usize,
    lm_weight: f64,
) -> Result<Vec<usize>> {
    let labels = beam_map_labels(
        classifier,
        lm,
        frame_prior,
        signal,
        features,
        beam_width,
        lm_weight,
    )?;
    Ok(collapse_runs(&labels))
}

/// One symbol per maximal run of equal frame labels.
pub fn collapse_runs(frame_labels: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    for &l in frame_labels {
        if out.last() != Some(&l) {
            out.push(l);
        }
    }
    out
}

/// Frame error rate: misclassified frames / total frames.
pub fn fer(pred: &[usize], gold: &[usize]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::data(format!(
            "frame sequences differ in length: {} vs {}",
            pred.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Ok(0.0);
    }
    let wrong = pred.iter().zip(gold).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / gold.len() as f64)
}

/// Frame error rate with the maximal leading and trailing runs of *gold*
/// silence stripped from both sequences first.
pub fn fer_star(pred: &[usize], gold: &[usize], silence: usize) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::data(format!(
            "frame sequences differ in length: {} vs {}",
            pred.len(),
            gold.len()
        )));
    }
    let (lo, hi) = silence_stripped_range(gold, silence);
    fer(&pred[lo..hi], &gold[lo..hi])
}

/// Index range remaining after stripping leading/trailing gold silence runs.
fn silence_stripped_range(gold: &[usize], silence: usize) -> (usize, usize) {
    let lo = gold.iter().position(|&y| y != silence).unwrap_or(gold.len());
    let hi = gold
        .iter()
        .rposition(|&y| y != silence)
        .map(|i| i + 1)
        .unwrap_or(lo);
    (lo, hi)
}

/// Unit-cost Levenshtein distance.
pub fn levenshtein(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ai) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &bj) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ai != bj);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Phone error rate: edit distance over the gold length. May exceed 1.
pub fn per(pred: &[usize], gold: &[usize]) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::data("phone error rate needs a nonempty reference"));
    }
    Ok(levenshtein(pred, gold) as f64 / gold.len() as f64)
}

/// Per-utterance metric breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceEval {
    pub id: String,
    pub fer: f64,
    pub fer_star: f64,
    pub per: f64,
}

/// Corpus-level recognition report. Rates are micro-averaged (pooled counts).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub fer: f64,
    pub fer_star: f64,
    pub per: f64,
    pub utterances: Vec<UtteranceEval>,
    /// confusion[gold][pred] frame counts
    pub confusion: Vec<Vec<u64>>,
}

impl EvalReport {
    /// Machine-readable `key value` lines.
    pub fn summary_lines(&self) -> Vec<String> {
        vec![
            format!("fer {}", self.fer),
            format!("fer_star {}", self.fer_star),
            format!("per {}", self.per),
        ]
    }
}

/// Score predicted frame labels against gold labels across a corpus.
///
/// Phone sequences are the collapsed runs of each side's frame labels.
pub fn evaluate_labels(
    ids: &[String],
    pred: &[LabelSequence],
    gold: &[LabelSequence],
    silence: usize,
) -> Result<EvalReport> {
    if pred.len() != gold.len() || ids.len() != gold.len() {
        return Err(Error::data("prediction/reference lists differ in length"));
    }
    if gold.is_empty() {
        return Err(Error::data("cannot evaluate an empty corpus"));
    }
    let alphabet = gold[0].alphabet_size();
    let mut confusion = vec![vec![0u64; alphabet]; alphabet];
    let mut frame_err = 0usize;
    let mut frames = 0usize;
    let mut star_err = 0usize;
    let mut star_frames = 0usize;
    let mut edits = 0usize;
    let mut gold_phones = 0usize;
    let mut utterances = Vec::with_capacity(gold.len());
    for ((id, p), g) in ids.iter().zip(pred).zip(gold) {
        let pl = p.labels();
        let gl = g.labels();
        let u_fer = fer(pl, gl)?;
        let u_fer_star = fer_star(pl, gl, silence)?;
        let p_phones = collapse_runs(pl);
        let g_phones = collapse_runs(gl);
        let u_per = per(&p_phones, &g_phones)?;
        for (&pi, &gi) in pl.iter().zip(gl) {
            confusion[gi][pi] += 1;
        }
        frame_err += pl.iter().zip(gl).filter(|(a, b)| a != b).count();
        frames += gl.len();
        let (lo, hi) = silence_stripped_range(gl, silence);
        star_err += pl[lo..hi]
            .iter()
            .zip(&gl[lo..hi])
            .filter(|(a, b)| a != b)
            .count();
        star_frames += hi - lo;
        edits += levenshtein(&p_phones, &g_phones);
        gold_phones += g_phones.len();
        utterances.push(UtteranceEval {
            id: id.clone(),
            fer: u_fer,
            fer_star: u_fer_star,
            per: u_per,
        });
    }
    Ok(EvalReport {
        fer: frame_err as f64 / frames as f64,
        fer_star: if star_frames > 0 {
            star_err as f64 / star_frames as f64
        } else {
            0.0
        },
        per: edits as f64 / gold_phones as f64,
        utterances,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_classifier;
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_classifier_gives_uniform_prior() {
        let mut c = init_classifier(4, 3, 5, 0).unwrap();
        for p in c.params_mut() {
            *p = 0.0;
        }
        let frames = Array2::from_elem((6, 4), 0.3);
        let f = FeatureSequence::new("u", frames).unwrap();
        let prior = estimate_frame_prior(&c, std::slice::from_ref(&f)).unwrap();
        for y in 0..5 {
            assert!((prior.prob(y) - 0.2).abs() < 1e-12);
        }
        let sum: f64 = prior.probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prior_is_mean_posterior_after_flooring() {
        // two frames with near-opposite one-hot posteriors average to 0.5/0.5
        let mut c = init_classifier(1, 2, 2, 0).unwrap();
        for p in c.params_mut() {
            *p = 0.0;
        }
        {
            let (w1, b1, w2, _) = c.split_mut();
            w1[[0, 0]] = 1.0;
            w1[[1, 0]] = -1.0;
            b1[0] = 10.0;
            b1[1] = 10.0;
            w2[[0, 0]] = 50.0;
            w2[[1, 1]] = 50.0;
        }
        let frames = Array2::from_shape_vec((2, 1), vec![1.0, -1.0]).unwrap();
        let f = FeatureSequence::new("u", frames).unwrap();
        let prior = estimate_frame_prior(&c, std::slice::from_ref(&f)).unwrap();
        assert!((prior.prob(0) - 0.5).abs() < 1e-6);
        assert!((prior.prob(1) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn fer_examples() {
        let gold = vec![0, 1, 2, 3, 4, 5, 6, 7, 8, 9];
        let mut pred = gold.clone();
        pred[0] = 9;
        pred[5] = 9;
        assert!((fer(&pred, &gold).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(fer(&gold, &gold).unwrap(), 0.0);
        assert!(fer(&gold[..5], &gold).is_err());
    }

    #[test]
    fn fer_star_strips_gold_silence_runs() {
        let sil = 0;
        let gold = vec![sil, sil, 1, 2, sil];
        let pred = vec![1, 1, 1, 2, 2];
        assert_eq!(fer_star(&pred, &gold, sil).unwrap(), 0.0);
        // stripping looks only at gold silence, not predicted silence
        let pred2 = vec![sil, sil, 1, 2, sil];
        assert_eq!(fer_star(&pred2, &gold, sil).unwrap(), 0.0);
        // all-silence gold leaves nothing: define 0
        let gold_all = vec![sil, sil];
        assert_eq!(fer_star(&[1, 1], &gold_all, sil).unwrap(), 0.0);
    }

    #[test]
    fn per_examples() {
        assert_eq!(per(&[0, 1, 2], &[0, 1, 2]).unwrap(), 0.0);
        assert!((per(&[0, 2], &[0, 1, 2]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(per(&[1, 2], &[0]).unwrap(), 2.0);
        assert!(per(&[0], &[]).is_err());
    }

    /// brute-force alignment enumeration: exhaustive recursion over edit
    /// scripts, no memoization
    fn brute_force_edit(a: &[usize], b: &[usize]) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        let sub = brute_force_edit(&a[1..], &b[1..]) + usize::from(a[0] != b[0]);
        let del = brute_force_edit(&a[1..], b) + 1;
        let ins = brute_force_edit(a, &b[1..]) + 1;
        sub.min(del).min(ins)
    }

    #[test]
    fn edit_distance_matches_brute_force_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let la = rng.gen_range(0..=6);
            let lb = rng.gen_range(0..=6);
            let a: Vec<usize> = (0..la).map(|_| rng.gen_range(0..4)).collect();
            let b: Vec<usize> = (0..lb).map(|_| rng.gen_range(0..4)).collect();
            assert_eq!(levenshtein(&a, &b), brute_force_edit(&a, &b));
        }
    }

    #[test]
    fn collapse_runs_compacts_repeats() {
        assert_eq!(collapse_runs(&[0, 0, 1, 1, 1, 0]), vec![0, 1, 0]);
        assert_eq!(collapse_runs(&[]), Vec::<usize>::new());
    }

    #[test]
    fn zero_lm_weight_flat_priors_reduce_to_framewise_argmax() {
        use crate::boundary::BoundaryPriorSignal;
        use crate::lm::train_lm;
        let classifier = init_classifier(2, 6, 3, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let frames = Array2::from_shape_fn((15, 2), |_| rng.gen_range(-1.0..1.0));
        let features = FeatureSequence::new("u", frames).unwrap();
        let lm = train_lm(&[vec![0, 1, 2, 1, 0]], 2, 3, 0.1).unwrap();
        let prior = FramePrior::uniform(3);
        let signal = BoundaryPriorSignal::new(vec![0.5; 15]).unwrap();
        let phones = decode_utterance(&classifier, &lm, &prior, &signal, &features, 8, 0.0).unwrap();
        let argmax = framewise_argmax(&classifier, std::slice::from_ref(&features)).unwrap();
        assert_eq!(phones, collapse_runs(argmax[0].labels()));
    }

    #[test]
    fn evaluate_labels_on_identical_input_is_all_zero() {
        let gold = vec![
            LabelSequence::new(vec![0, 1, 1, 2], 3).unwrap(),
            LabelSequence::new(vec![2, 2, 0], 3).unwrap(),
        ];
        let ids = vec!["a".to_string(), "b".to_string()];
        let report = evaluate_labels(&ids, &gold, &gold, 0).unwrap();
        assert_eq!(report.fer, 0.0);
        assert_eq!(report.fer_star, 0.0);
        assert_eq!(report.per, 0.0);
        assert_eq!(report.utterances.len(), 2);
        // confusion diagonal carries every frame
        let diag: u64 = (0..3).map(|i| report.confusion[i][i]).sum();
        assert_eq!(diag, 7);
    }
}
