//! The segmental distribution-matching cost: one frame is sampled per
//! segment, the empirical N-gram distribution of posteriors at those frames
//! is matched against the language model (inter-segment term), and adjacent
//! within-segment posteriors are pulled together (smoothness term).

use ndarray::{Array2, ArrayView2};
use rand::prelude::*;
use rand_distr::StandardNormal;

use crate::corpus::{context_rows, FeatureSequence, Segmentation};
use crate::lm::TopKTable;
use crate::model::{Classifier, Gradients};
use crate::{Error, Result};

/// Floor applied to empirical probabilities before the logarithm, so that
/// top-K entries with zero batch mass early in training do not produce an
/// infinite loss. Entries at the floor contribute no gradient.
pub const PBAR_FLOOR: f64 = 1e-12;

/// One sampled frame index per segment, per utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TauSample {
    /// frames[u][i] = sampled frame of segment i in utterance u
    pub frames: Vec<Vec<usize>>,
}

/// Weights and sampling sizes for the combined cost.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Trade-off weight on the smoothness term.
    pub lambda: f64,
    pub ngram_order: usize,
    pub top_k: usize,
    pub renormalize_topk: bool,
    /// Contiguous frame positions sampled per batch for the smoothness term.
    pub fs_sample_size: usize,
    /// N-gram windows per optimization batch.
    pub batch_size_segments: usize,
    pub temperature: f64,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::config("lambda must be >= 0"));
        }
        if self.ngram_order == 0 {
            return Err(Error::config("ngram_order must be >= 1"));
        }
        if self.fs_sample_size < 2 {
            return Err(Error::config("fs_sample_size must be >= 2"));
        }
        if self.batch_size_segments == 0 {
            return Err(Error::config("batch_size_segments must be positive"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("temperature must be positive"));
        }
        Ok(())
    }
}

/// Value of the combined cost and its components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub odm: f64,
    pub smoothness: f64,
}

/// Sample one frame per segment from a truncated standard normal mapped onto
/// the segment: u ~ N(0,1) restricted to [-2,2], t = a + round((u+2)/4 * (b-a))
/// for a segment spanning frames a..=b. Length-1 segments return their only
/// frame without consuming randomness.
pub fn sample_tau<R: Rng>(segmentations: &[Segmentation], rng: &mut R) -> TauSample {
    let frames = segmentations
        .iter()
        .map(|seg| {
            seg.segments()
                .iter()
                .map(|&(start, end)| {
                    let a = start;
                    let b = end - 1;
                    if a == b {
                        return a;
                    }
                    let u = loop {
                        let v: f64 = rng.sample(StandardNormal);
                        if v.abs() <= 2.0 {
                            break v;
                        }
                    };
                    let offset = ((u + 2.0) / 4.0 * (b - a) as f64).round() as usize;
                    (a + offset).clamp(a, b)
                })
                .collect()
        })
        .collect();
    TauSample { frames }
}

/// Inter-segment output distribution match.
///
/// `posteriors` holds one distribution row per in-batch segment; consecutive
/// rows within each `group_sizes` entry belong to one utterance (or window
/// chunk), and N-gram windows are formed only inside a group. Returns the
/// cost value and its exact gradient with respect to `posteriors`, where the
/// empirical average over the batch windows sits inside the logarithm.
pub fn odm_loss(
    posteriors: ArrayView2<f64>,
    group_sizes: &[usize],
    topk: &TopKTable,
) -> Result<(f64, Array2<f64>)> {
    let n = topk.order();
    if topk.is_empty() {
        return Err(Error::config("top-K table is empty"));
    }
    let rows: usize = group_sizes.iter().sum();
    if rows != posteriors.nrows() {
        return Err(Error::data(format!(
            "group sizes cover {rows} rows but posteriors have {}",
            posteriors.nrows()
        )));
    }
    if topk.alphabet_size() != posteriors.ncols() {
        return Err(Error::data(format!(
            "top-K alphabet size {} does not match posterior width {}",
            topk.alphabet_size(),
            posteriors.ncols()
        )));
    }

    let mut window_starts = Vec::new();
    let mut offset = 0;
    for &k in group_sizes {
        if k >= n {
            for s in 0..=(k - n) {
                window_starts.push(offset + s);
            }
        }
        offset += k;
    }
    if window_starts.is_empty() {
        return Err(Error::data(
            "no n-gram windows in batch: every group has fewer segments than the order",
        ));
    }

    let inv_w = 1.0 / window_starts.len() as f64;
    let mut value = 0.0;
    let mut grad = Array2::<f64>::zeros(posteriors.raw_dim());
    let mut prefix = vec![0.0f64; n + 1];
    let mut suffix = vec![0.0f64; n + 1];
    for (z, p_lm) in topk.entries() {
        let mut pbar = 0.0;
        for &r0 in &window_starts {
            let mut prod = 1.0;
            for (j, &zj) in z.iter().enumerate() {
                prod *= posteriors[[r0 + j, zj]];
            }
            pbar += prod;
        }
        pbar *= inv_w;
        if pbar > PBAR_FLOOR {
            value -= p_lm * pbar.ln();
            let coef = p_lm / pbar * inv_w;
            for &r0 in &window_starts {
                prefix[0] = 1.0;
                for (j, &zj) in z.iter().enumerate() {
                    prefix[j + 1] = prefix[j] * posteriors[[r0 + j, zj]];
                }
                suffix[n] = 1.0;
                for (j, &zj) in z.iter().enumerate().rev() {
                    suffix[j] = suffix[j + 1] * posteriors[[r0 + j, zj]];
                }
                for (j, &zj) in z.iter().enumerate() {
                    grad[[r0 + j, zj]] -= coef * prefix[j] * suffix[j + 1];
                }
            }
        } else {
            value -= p_lm * PBAR_FLOOR.ln();
        }
    }
    Ok((value, grad))
}

/// Frame-wise smoothness: summed squared difference between the posterior
/// rows of each adjacent-frame pair. `pairs` index rows of `posteriors`.
pub fn smoothness_loss(
    posteriors: ArrayView2<f64>,
    pairs: &[(usize, usize)],
) -> (f64, Array2<f64>) {
    let mut value = 0.0;
    let mut grad = Array2::<f64>::zeros(posteriors.raw_dim());
    for &(a, b) in pairs {
        for c in 0..posteriors.ncols() {
            let d = posteriors[[a, c]] - posteriors[[b, c]];
            value += d * d;
            grad[[a, c]] += 2.0 * d;
            grad[[b, c]] -= 2.0 * d;
        }
    }
    (value, grad)
}

/// A batch for the combined loss: a set of N-gram windows over segments plus
/// a set of within-segment adjacent frame positions.
#[derive(Debug, Clone)]
pub struct LossBatch<'a> {
    pub utterances: &'a [FeatureSequence],
    pub segmentations: &'a [Segmentation],
    /// Context window size (odd).
    pub context: usize,
    /// (utterance, first segment index); each window spans `ngram_order`
    /// consecutive segments of that utterance.
    pub windows: &'a [(usize, usize)],
    /// (utterance, t): the adjacent pair (t, t+1), both within one segment.
    pub smooth_frames: &'a [(usize, usize)],
}

/// Combined cost `odm + lambda * smoothness` with parameter gradients
/// assembled through the classifier at the union of sampled and smoothness
/// frames.
pub fn combined_loss(
    classifier: &Classifier,
    batch: &LossBatch,
    tau: &TauSample,
    topk: &TopKTable,
    config: &LossConfig,
) -> Result<(LossValue, Gradients)> {
    config.validate()?;
    let n = topk.order();

    // inter-segment term at the sampled frames
    let mut picks = Vec::with_capacity(batch.windows.len() * n);
    for &(u, s0) in batch.windows {
        let seg_frames = &tau.frames[u];
        for j in 0..n {
            picks.push((u, seg_frames[s0 + j]));
        }
    }
    let x_odm = context_rows(batch.utterances, &picks, batch.context);
    let p_odm = classifier.forward(x_odm.view(), config.temperature)?;
    let group_sizes = vec![n; batch.windows.len()];
    let (odm_value, odm_grad) = odm_loss(p_odm.view(), &group_sizes, topk)?;
    let mut grads = classifier.backward(
        x_odm.view(),
        p_odm.view(),
        odm_grad.view(),
        config.temperature,
    )?;

    // smoothness term
    let mut smooth_value = 0.0;
    if !batch.smooth_frames.is_empty() {
        let mut picks = Vec::with_capacity(batch.smooth_frames.len() * 2);
        let mut pairs = Vec::with_capacity(batch.smooth_frames.len());
        for (i, &(u, t)) in batch.smooth_frames.iter().enumerate() {
            picks.push((u, t));
            picks.push((u, t + 1));
            pairs.push((2 * i, 2 * i + 1));
        }
        let x_fs = context_rows(batch.utterances, &picks, batch.context);
        let p_fs = classifier.forward(x_fs.view(), config.temperature)?;
        let (v, mut g) = smoothness_loss(p_fs.view(), &pairs);
        smooth_value = v;
        if config.lambda != 0.0 {
            g *= config.lambda;
            let fs_grads =
                classifier.backward(x_fs.view(), p_fs.view(), g.view(), config.temperature)?;
            grads.add_assign(&fs_grads);
        }
    }

    Ok((
        LossValue {
            total: odm_value + config.lambda * smooth_value,
            odm: odm_value,
            smoothness: smooth_value,
        },
        grads,
    ))
}
