//! Pseudo-label bootstrapping: decode the corpus with the current system to
//! get frame-level transcripts, then train a fresh classifier on them with
//! plain supervised cross-entropy. The same supervised path doubles as the
//! labeled-data baseline.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::boundary::{refine_boundaries, BoundaryPriorSignal};
use crate::corpus::{context_rows, FeatureSequence, LabelSequence};
use crate::decode::FramePrior;
use crate::lm::NGramLM;
use crate::model::{init_classifier, Classifier, Gradients};
use crate::trainer::ClassifierDims;
use crate::{Error, Result};

/// Features paired with the predicted frame labels used as training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeledCorpus {
    pub features: Vec<FeatureSequence>,
    pub labels: Vec<LabelSequence>,
}

/// MAP frame labels for every utterance via the refinement beam (LM weight 1).
pub fn pseudo_label(
    classifier: &Classifier,
    lm: &NGramLM,
    frame_prior: &FramePrior,
    signals: &[BoundaryPriorSignal],
    utterances: &[FeatureSequence],
    beam_width: usize,
) -> Result<PseudoLabeledCorpus> {
    if signals.len() != utterances.len() {
        return Err(Error::data("boundary signals misaligned with utterances"));
    }
    let mut labels = Vec::with_capacity(utterances.len());
    for (u, feats) in utterances.iter().enumerate() {
        let (l, _) = refine_boundaries(classifier, lm, frame_prior, &signals[u], feats, beam_width)?;
        labels.push(l);
    }
    Ok(PseudoLabeledCorpus {
        features: utterances.to_vec(),
        labels,
    })
}

/// Supervised training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedConfig {
    pub epochs: usize,
    /// Frames per batch.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Fraction of the corpus held out for early stopping.
    pub heldout_fraction: f64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        SupervisedConfig {
            epochs: 40,
            batch_size: 256,
            learning_rate: 0.05,
            momentum: 0.9,
            heldout_fraction: 0.1,
        }
    }
}

impl SupervisedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.momentum < 0.0 || self.momentum >= 1.0 {
            return Err(Error::config("momentum must be in [0, 1)"));
        }
        if !(self.heldout_fraction > 0.0 && self.heldout_fraction < 1.0) {
            return Err(Error::config("heldout_fraction must be in (0, 1)"));
        }
        Ok(())
    }
}

/// Cross-entropy training of a fresh classifier on (context window, label)
/// pairs with momentum SGD. Selection by held-out cross-entropy: the
/// returned classifier is the checkpoint with the lowest held-out loss.
/// Returns the per-epoch held-out losses alongside.
pub fn train_supervised(
    features: &[FeatureSequence],
    labels: &[LabelSequence],
    dims: ClassifierDims,
    config: &SupervisedConfig,
    seed: u64,
) -> Result<(Classifier, Vec<f64>)> {
    config.validate()?;
    dims.validate()?;
    if features.is_empty() {
        return Err(Error::data("supervised training needs a nonempty corpus"));
    }
    if features.len() != labels.len() {
        return Err(Error::data("labels misaligned with features"));
    }
    for (f, l) in features.iter().zip(labels) {
        if f.len() != l.len() {
            return Err(Error::data("label sequence length mismatch"));
        }
    }

    // flatten all frames, then split off a held-out tail for early stopping
    let mut frames: Vec<(usize, usize, usize)> = Vec::new(); // (utt, t, label)
    for (u, l) in labels.iter().enumerate() {
        for (t, &y) in l.labels().iter().enumerate() {
            frames.push((u, t, y));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    frames.shuffle(&mut rng);
    let n_heldout = ((frames.len() as f64 * config.heldout_fraction).ceil() as usize)
        .clamp(1, frames.len().saturating_sub(1).max(1));
    let heldout = frames.split_off(frames.len() - n_heldout);
    if frames.is_empty() {
        return Err(Error::data("not enough frames to train on"));
    }

    let input_dim = dims.context * features[0].dim();
    let mut classifier = init_classifier(input_dim, dims.hidden, dims.alphabet_size, seed)?;
    let mut velocity = Gradients::zeros_like(&classifier);

    let heldout_picks: Vec<(usize, usize)> = heldout.iter().map(|&(u, t, _)| (u, t)).collect();
    let x_heldout = context_rows(features, &heldout_picks, dims.context);
    let heldout_ce = |c: &Classifier| -> Result<f64> {
        let p = c.forward(x_heldout.view(), 1.0)?;
        let mut ce = 0.0;
        for (row, &(_, _, y)) in p.rows().into_iter().zip(&heldout) {
            ce -= row[y].max(f64::MIN_POSITIVE).ln();
        }
        Ok(ce / heldout.len() as f64)
    };

    let mut best: Option<(f64, Classifier)> = None;
    let mut losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        frames.shuffle(&mut rng);
        for chunk in frames.chunks(config.batch_size) {
            let picks: Vec<(usize, usize)> = chunk.iter().map(|&(u, t, _)| (u, t)).collect();
            let x = context_rows(features, &picks, dims.context);
            let p = classifier.forward(x.view(), 1.0)?;
            // dL/dp for summed cross-entropy: -1[y]/p_y per row
            let mut dloss = Array2::<f64>::zeros(p.raw_dim());
            for (i, &(_, _, y)) in chunk.iter().enumerate() {
                dloss[[i, y]] = -1.0 / p[[i, y]].max(f64::MIN_POSITIVE);
            }
            // average over the batch
            dloss /= chunk.len() as f64;
            let grads = classifier.backward(x.view(), p.view(), dloss.view(), 1.0)?;
            if !grads.is_finite() {
                return Err(Error::NonFinite {
                    stage: 0,
                    epoch: losses.len(),
                    component: "cross_entropy_gradient".to_string(),
                });
            }
            velocity.scale(config.momentum);
            velocity.scaled_add(-config.learning_rate, &grads);
            classifier.apply_step(&velocity);
        }
        let ce = heldout_ce(&classifier)?;
        losses.push(ce);
        let better = match &best {
            Some((b, _)) => ce < *b,
            None => true,
        };
        if better {
            best = Some((ce, classifier.clone()));
        }
    }
    let (_, best_classifier) = best.expect("at least one epoch ran");
    Ok((best_classifier, losses))
}

/// One self-training round: train a fresh classifier on the pseudo-labeled
/// corpus with the shared supervised path.
pub fn retrain_on_pseudo_labels(
    dims: ClassifierDims,
    pseudo: &PseudoLabeledCorpus,
    config: &SupervisedConfig,
    seed: u64,
) -> Result<Classifier> {
    if pseudo.features.is_empty() {
        return Err(Error::data("pseudo-labeled corpus is empty"));
    }
    let (classifier, _) = train_supervised(&pseudo.features, &pseudo.labels, dims, config, seed)?;
    Ok(classifier)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, SynthSpec};
    use crate::boundary::BoundaryDetector;
    use crate::decode::{estimate_frame_prior, framewise_argmax};
    use crate::lm::train_lm;

    fn easy_corpus(seed: u64) -> crate::corpus::Corpus {
        generate_corpus(&SynthSpec {
            alphabet_size: 4,
            feature_dim: 4,
            num_utterances: 16,
            segments_per_utterance: 4,
            mean_segment_length: 4.0,
            min_segment_length: 2,
            emission_cluster_separation: 4.0,
            emission_noise_std: 0.4,
            transition_lm_order: 1,
            coarticulation_blend_frames: 0,
            random_seed: seed,
        })
        .unwrap()
    }

    #[test]
    fn supervised_loss_decreases_on_separable_data() {
        let corpus = easy_corpus(31);
        let dims = ClassifierDims {
            context: 3,
            hidden: 16,
            alphabet_size: 4,
        };
        let cfg = SupervisedConfig {
            epochs: 12,
            batch_size: 64,
            learning_rate: 0.1,
            momentum: 0.9,
            heldout_fraction: 0.15,
        };
        let (classifier, losses) = train_supervised(
            &corpus.utterances,
            corpus.gold_labels.as_ref().unwrap(),
            dims,
            &cfg,
            1,
        )
        .unwrap();
        assert!(losses.last().unwrap() < losses.first().unwrap());
        // and the trained classifier beats chance comfortably
        let pred = framewise_argmax(&classifier, &corpus.utterances).unwrap();
        let mut wrong = 0;
        let mut total = 0;
        for (p, g) in pred.iter().zip(corpus.gold_labels.as_ref().unwrap()) {
            wrong += p
                .labels()
                .iter()
                .zip(g.labels())
                .filter(|(a, b)| a != b)
                .count();
            total += g.len();
        }
        assert!((wrong as f64 / total as f64) < 0.5);
    }

    #[test]
    fn supervised_training_is_deterministic() {
        let corpus = easy_corpus(32);
        let dims = ClassifierDims {
            context: 3,
            hidden: 8,
            alphabet_size: 4,
        };
        let cfg = SupervisedConfig {
            epochs: 3,
            ..SupervisedConfig::default()
        };
        let gold = corpus.gold_labels.as_ref().unwrap();
        let (c1, l1) = train_supervised(&corpus.utterances, gold, dims, &cfg, 5).unwrap();
        let (c2, l2) = train_supervised(&corpus.utterances, gold, dims, &cfg, 5).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(l1, l2);
    }

    #[test]
    fn pseudo_labels_are_deterministic_and_segment_constant() {
        let corpus = easy_corpus(33);
        let dims = ClassifierDims {
            context: 3,
            hidden: 8,
            alphabet_size: 4,
        };
        let cfg = SupervisedConfig {
            epochs: 4,
            ..SupervisedConfig::default()
        };
        let gold = corpus.gold_labels.as_ref().unwrap();
        let (classifier, _) = train_supervised(&corpus.utterances, gold, dims, &cfg, 2).unwrap();
        let lm = train_lm(&corpus.transcripts().unwrap(), 2, 4, 0.01).unwrap();
        let prior = estimate_frame_prior(&classifier, &corpus.utterances).unwrap();
        let det = crate::boundary::SpectralDeltaDetector::default();
        let signals: Vec<_> = corpus.utterances.iter().map(|u| det.prior(u)).collect();

        let a = pseudo_label(&classifier, &lm, &prior, &signals, &corpus.utterances, 4).unwrap();
        let b = pseudo_label(&classifier, &lm, &prior, &signals, &corpus.utterances, 4).unwrap();
        assert_eq!(a, b);
        // labels constant within each refined segment by construction
        for l in &a.labels {
            let seg = crate::corpus::Segmentation::from_labels(l.labels());
            for (start, end) in seg.segments() {
                assert!(l.labels()[start..end].iter().all(|&y| y == l.labels()[start]));
            }
        }
    }

    #[test]
    fn retraining_on_pseudo_labels_returns_a_classifier() {
        let corpus = easy_corpus(34);
        let dims = ClassifierDims {
            context: 3,
            hidden: 8,
            alphabet_size: 4,
        };
        let pseudo = PseudoLabeledCorpus {
            features: corpus.utterances.clone(),
            labels: corpus.gold_labels.clone().unwrap(),
        };
        let cfg = SupervisedConfig {
            epochs: 3,
            ..SupervisedConfig::default()
        };
        let c = retrain_on_pseudo_labels(dims, &pseudo, &cfg, 3).unwrap();
        assert_eq!(c.output_dim(), 4);
    }
}
