//! Momentum-SGD training of the classifier on the combined cost under a
//! staged batch-size/temperature schedule, unsupervised model selection via
//! a held-out validation loss, and the alternating train/refine driver.
//!
//! Gold labels are not part of any training interface here; the only gold
//! touchpoint is an optional diagnostics channel that records a framewise
//! error rate per epoch and cannot influence checkpoint selection.

use std::fmt::Write as _;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::boundary::{refine_boundaries, BoundaryPriorSignal};
use crate::corpus::{FeatureSequence, LabelSequence, Segmentation};
use crate::decode::{estimate_frame_prior, framewise_argmax, fer};
use crate::lm::{NGramLM, TopKTable};
use crate::loss::{combined_loss, odm_loss, sample_tau, LossBatch, LossConfig};
use crate::model::{init_classifier, save_checkpoint, CheckpointMeta, Classifier, Gradients};
use crate::{Error, Result};

/// Seed for the fixed validation tau, so model selection sees the same
/// sampled frames at every epoch of a run.
const VALIDATION_TAU_SEED: u64 = 0x5e1f_7a00;

/// One stage of the training schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage {
    pub epochs: usize,
    /// N-gram windows per optimization batch.
    pub batch_size: usize,
    pub temperature: f64,
}

/// Staged schedule with momentum-SGD hyperparameters. The learning rate
/// decays multiplicatively within a stage and resets to the base value at
/// every stage transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub stages: Vec<Stage>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub lr_decay: f64,
}

impl Schedule {
    /// The published full-scale schedule: 200 epochs at batch 500 and
    /// temperature 1.0, then 300-epoch stages at batches 5000/10000/20000
    /// with temperatures 0.9/0.8/0.7; lr 1e-3, momentum 0.9.
    pub fn paper() -> Schedule {
        Schedule {
            stages: vec![
                Stage { epochs: 200, batch_size: 500, temperature: 1.0 },
                Stage { epochs: 300, batch_size: 5000, temperature: 0.9 },
                Stage { epochs: 300, batch_size: 10000, temperature: 0.8 },
                Stage { epochs: 300, batch_size: 20000, temperature: 0.7 },
            ],
            learning_rate: 1e-3,
            momentum: 0.9,
            lr_decay: 0.999,
        }
    }

    /// Proportionally shrunk schedule for desk-scale corpora.
    pub fn desk() -> Schedule {
        Schedule {
            stages: vec![
                Stage { epochs: 40, batch_size: 256, temperature: 1.0 },
                Stage { epochs: 40, batch_size: 1024, temperature: 0.9 },
                Stage { epochs: 40, batch_size: 2048, temperature: 0.8 },
            ],
            learning_rate: 0.05,
            momentum: 0.9,
            lr_decay: 0.999,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::config("schedule needs at least one stage"));
        }
        for s in &self.stages {
            if s.batch_size == 0 {
                return Err(Error::config("stage batch size must be positive"));
            }
            if !(s.temperature > 0.0) {
                return Err(Error::config("stage temperature must be positive"));
            }
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::config("learning rate must be >= 0"));
        }
        if self.momentum < 0.0 || self.momentum >= 1.0 {
            return Err(Error::config("momentum must be in [0, 1)"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config("lr_decay must be in (0, 1]"));
        }
        Ok(())
    }
}

/// Classifier shape knobs (the input dim follows from the data).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifierDims {
    /// Context window size (odd).
    pub context: usize,
    pub hidden: usize,
    pub alphabet_size: usize,
}

impl ClassifierDims {
    pub fn validate(&self) -> Result<()> {
        if self.context % 2 == 0 {
            return Err(Error::config("context window size must be odd"));
        }
        if self.hidden == 0 || self.alphabet_size == 0 {
            return Err(Error::config("classifier dims must be positive"));
        }
        Ok(())
    }
}

/// One epoch of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: usize,
    /// Mean combined cost over the epoch's batches.
    pub j_total: f64,
    pub j_odm: f64,
    pub j_fs: f64,
    /// Validation cost on held-out inputs (inter-segment term only).
    pub self_validation: f64,
    /// Framewise error against gold labels; diagnostics only, never used for
    /// selection.
    pub diagnostic_fer: Option<f64>,
}

/// Full training log with the selected checkpoint index.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// argmin of self-validation loss (earliest on ties)
    pub best_epoch: usize,
}

impl TrainReport {
    /// Line-delimited records for external plotting.
    pub fn to_lines(&self) -> String {
        let mut out = String::from("epoch stage j j_odm j_fs selfval diag_fer\n");
        for r in &self.epochs {
            let diag = r
                .diagnostic_fer
                .map(|v| v.to_string())
                .unwrap_or_else(|| "-".to_string());
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {}",
                r.epoch, r.stage, r.j_total, r.j_odm, r.j_fs, r.self_validation, diag
            );
        }
        let _ = writeln!(out, "best_epoch {}", self.best_epoch);
        out
    }
}

/// Inputs the trainer sees: features and segmentations only.
pub struct TrainData<'a> {
    pub train: &'a [FeatureSequence],
    pub train_segs: &'a [Segmentation],
    pub heldout: &'a [FeatureSequence],
    pub heldout_segs: &'a [Segmentation],
}

fn enumerate_windows(segs: &[Segmentation], order: usize) -> Vec<(usize, usize)> {
    let mut windows = Vec::new();
    for (u, seg) in segs.iter().enumerate() {
        let k = seg.num_segments();
        if k >= order {
            for s0 in 0..=(k - order) {
                windows.push((u, s0));
            }
        }
    }
    windows
}

/// Sample `count` frame positions (u, t) uniformly over all adjacent-frame
/// pairs, keeping only pairs that do not cross a segment boundary.
fn sample_smooth_pairs<R: Rng>(
    utterances: &[FeatureSequence],
    segs: &[Segmentation],
    count: usize,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let mut cumulative = Vec::with_capacity(utterances.len());
    let mut total = 0usize;
    for u in utterances {
        total += u.len().saturating_sub(1);
        cumulative.push(total);
    }
    if total == 0 {
        return Vec::new();
    }
    let mut picks = Vec::with_capacity(count);
    for _ in 0..count {
        let flat = rng.gen_range(0..total);
        let u = cumulative.partition_point(|&c| c <= flat);
        let before = if u == 0 { 0 } else { cumulative[u - 1] };
        let t = flat - before;
        if !segs[u].boundaries()[t + 1] {
            picks.push((u, t));
        }
    }
    picks
}

/// Validation loss: the inter-segment matching cost over the full held-out
/// set at temperature 1, with a fixed tau drawn from a constant seed so the
/// metric is stable across epochs.
pub fn self_validation_loss(
    classifier: &Classifier,
    heldout: &[FeatureSequence],
    heldout_segs: &[Segmentation],
    topk: &TopKTable,
    dims: ClassifierDims,
) -> Result<f64> {
    if heldout.is_empty() {
        return Err(Error::data("self-validation needs a nonempty held-out set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(VALIDATION_TAU_SEED);
    let tau = sample_tau(heldout_segs, &mut rng);
    let mut picks = Vec::new();
    let mut group_sizes = Vec::with_capacity(heldout.len());
    for (u, frames) in tau.frames.iter().enumerate() {
        for &t in frames {
            picks.push((u, t));
        }
        group_sizes.push(frames.len());
    }
    let x = crate::corpus::context_rows(heldout, &picks, dims.context);
    let posteriors = classifier.forward(x.view(), 1.0)?;
    let (value, _) = odm_loss(posteriors.view(), &group_sizes, topk)?;
    Ok(value)
}

/// Train the classifier under the staged schedule, returning the checkpoint
/// that minimizes the self-validation loss. Deterministic per seed.
///
/// `gold_diagnostics`, when given, must align with `data.heldout`; it only
/// fills the per-epoch diagnostic field of the report.
pub fn train_classifier(
    data: &TrainData,
    topk: &TopKTable,
    dims: ClassifierDims,
    schedule: &Schedule,
    loss_config: &LossConfig,
    seed: u64,
    gold_diagnostics: Option<&[LabelSequence]>,
) -> Result<(Classifier, TrainReport)> {
    train_classifier_from(
        data,
        topk,
        dims,
        schedule,
        loss_config,
        seed,
        gold_diagnostics,
        None,
    )
}

/// As [`train_classifier`], optionally continuing from existing parameters
/// instead of a fresh seeded initialization (the alternating driver carries
/// the classifier across outer iterations).
#[allow(clippy::too_many_arguments)]
pub fn train_classifier_from(
    data: &TrainData,
    topk: &TopKTable,
    dims: ClassifierDims,
    schedule: &Schedule,
    loss_config: &LossConfig,
    seed: u64,
    gold_diagnostics: Option<&[LabelSequence]>,
    warm_start: Option<&Classifier>,
) -> Result<(Classifier, TrainReport)> {
    schedule.validate()?;
    dims.validate()?;
    loss_config.validate()?;
    if data.train.is_empty() {
        return Err(Error::data("training set is empty"));
    }
    if data.train.len() != data.train_segs.len() {
        return Err(Error::data("training segmentations misaligned"));
    }
    if data.heldout.len() != data.heldout_segs.len() {
        return Err(Error::data("held-out segmentations misaligned"));
    }
    let order = topk.order();
    let feature_dim = data.train[0].dim();
    let input_dim = dims.context * feature_dim;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classifier = match warm_start {
        Some(c) => {
            if c.input_dim() != input_dim || c.output_dim() != dims.alphabet_size {
                return Err(Error::data("warm-start classifier shape mismatch"));
            }
            c.clone()
        }
        None => init_classifier(input_dim, dims.hidden, dims.alphabet_size, seed)?,
    };
    let mut velocity = Gradients::zeros_like(&classifier);

    let all_windows = enumerate_windows(data.train_segs, order);
    if all_windows.is_empty() {
        return Err(Error::data(
            "no n-gram windows: every training utterance has fewer segments than the order",
        ));
    }

    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
    };
    let mut best: Option<(f64, Classifier)> = None;
    let mut epoch_index = 0usize;

    for (stage_idx, stage) in schedule.stages.iter().enumerate() {
        let mut lr = schedule.learning_rate;
        for _ in 0..stage.epochs {
            let tau = sample_tau(data.train_segs, &mut rng);
            let mut windows = all_windows.clone();
            windows.shuffle(&mut rng);

            let mut sums = (0.0, 0.0, 0.0);
            let mut batches = 0usize;
            let cfg = LossConfig {
                temperature: stage.temperature,
                ..loss_config.clone()
            };
            for chunk in windows.chunks(stage.batch_size) {
                let smooth = sample_smooth_pairs(
                    data.train,
                    data.train_segs,
                    loss_config.fs_sample_size,
                    &mut rng,
                );
                let batch = LossBatch {
                    utterances: data.train,
                    segmentations: data.train_segs,
                    context: dims.context,
                    windows: chunk,
                    smooth_frames: &smooth,
                };
                let (value, grads) = combined_loss(&classifier, &batch, &tau, topk, &cfg)?;
                for (component, v) in [
                    ("J_ODM", value.odm),
                    ("J_FS", value.smoothness),
                    ("J", value.total),
                ] {
                    if !v.is_finite() {
                        return Err(Error::NonFinite {
                            stage: stage_idx,
                            epoch: epoch_index,
                            component: component.to_string(),
                        });
                    }
                }
                // v <- mu v - eta grad; theta <- theta + v
                velocity.scale(schedule.momentum);
                velocity.scaled_add(-lr, &grads);
                classifier.apply_step(&velocity);
                sums.0 += value.total;
                sums.1 += value.odm;
                sums.2 += value.smoothness;
                batches += 1;
            }

            let selfval = self_validation_loss(
                &classifier,
                data.heldout,
                data.heldout_segs,
                topk,
                dims,
            )?;
            if !selfval.is_finite() {
                return Err(Error::NonFinite {
                    stage: stage_idx,
                    epoch: epoch_index,
                    component: "self_validation".to_string(),
                });
            }
            let diagnostic_fer = match gold_diagnostics {
                Some(gold) => Some(diag_fer(&classifier, data.heldout, gold)?),
                None => None,
            };
            report.epochs.push(EpochRecord {
                epoch: epoch_index,
                stage: stage_idx,
                j_total: sums.0 / batches as f64,
                j_odm: sums.1 / batches as f64,
                j_fs: sums.2 / batches as f64,
                self_validation: selfval,
                diagnostic_fer,
            });
            let better = match &best {
                Some((b, _)) => selfval < *b,
                None => true,
            };
            if better {
                best = Some((selfval, classifier.clone()));
                report.best_epoch = epoch_index;
            }
            lr *= schedule.lr_decay;
            epoch_index += 1;
        }
    }

    let (_, best_classifier) = best.expect("at least one epoch ran");
    Ok((best_classifier, report))
}

fn diag_fer(
    classifier: &Classifier,
    heldout: &[FeatureSequence],
    gold: &[LabelSequence],
) -> Result<f64> {
    if gold.len() != heldout.len() {
        return Err(Error::data("diagnostic labels misaligned with held-out set"));
    }
    let pred = framewise_argmax(classifier, heldout)?;
    let mut wrong = 0usize;
    let mut total = 0usize;
    for (p, g) in pred.iter().zip(gold) {
        wrong += (fer(p.labels(), g.labels())? * g.len() as f64).round() as usize;
        total += g.len();
    }
    Ok(wrong as f64 / total as f64)
}

/// Everything produced by one outer iteration of the alternating driver.
#[derive(Debug, Clone)]
pub struct IterationOutcome {
    pub classifier: Classifier,
    pub report: TrainReport,
    pub train_segs: Vec<Segmentation>,
    pub heldout_segs: Vec<Segmentation>,
}

/// Result of the alternating driver.
#[derive(Debug, Clone)]
pub struct AlternateResult {
    pub iterations: Vec<IterationOutcome>,
}

impl AlternateResult {
    pub fn last(&self) -> &IterationOutcome {
        self.iterations.last().expect("at least one iteration")
    }
}

/// Configuration for the alternating driver.
#[derive(Debug, Clone)]
pub struct AlternateConfig {
    pub outer_iterations: usize,
    pub beam_width: usize,
    pub dims: ClassifierDims,
    pub schedule: Schedule,
    pub loss: LossConfig,
    pub seed: u64,
}

/// Alternate between training the classifier on the current segmentations
/// and refining the segmentations with the trained classifier. Returns every
/// intermediate classifier and segmentation; optionally persists them under
/// `workdir`.
#[allow(clippy::too_many_arguments)]
pub fn alternate(
    data: &TrainData,
    lm: &NGramLM,
    topk: &TopKTable,
    train_signals: &[BoundaryPriorSignal],
    heldout_signals: &[BoundaryPriorSignal],
    config: &AlternateConfig,
    gold_diagnostics: Option<&[LabelSequence]>,
    workdir: Option<&Path>,
) -> Result<AlternateResult> {
    if config.outer_iterations == 0 {
        return Err(Error::config("outer_iterations must be >= 1"));
    }
    let mut train_segs = data.train_segs.to_vec();
    let mut heldout_segs = data.heldout_segs.to_vec();
    let mut iterations = Vec::with_capacity(config.outer_iterations);
    // parameters are initialized once and carried across outer iterations
    let mut carried: Option<Classifier> = None;

    for iter_idx in 0..config.outer_iterations {
        let iter_data = TrainData {
            train: data.train,
            train_segs: &train_segs,
            heldout: data.heldout,
            heldout_segs: &heldout_segs,
        };
        let (classifier, report) = train_classifier_from(
            &iter_data,
            topk,
            config.dims,
            &config.schedule,
            &config.loss,
            config.seed.wrapping_add(iter_idx as u64),
            gold_diagnostics,
            carried.as_ref(),
        )?;
        carried = Some(classifier.clone());

        // refine both splits with the freshly trained classifier
        let prior = estimate_frame_prior(&classifier, data.train)?;
        let mut new_train_segs = Vec::with_capacity(data.train.len());
        for (u, feats) in data.train.iter().enumerate() {
            let (_, seg) = refine_boundaries(
                &classifier,
                lm,
                &prior,
                &train_signals[u],
                feats,
                config.beam_width,
            )?;
            new_train_segs.push(seg);
        }
        let mut new_heldout_segs = Vec::with_capacity(data.heldout.len());
        for (u, feats) in data.heldout.iter().enumerate() {
            let (_, seg) = refine_boundaries(
                &classifier,
                lm,
                &prior,
                &heldout_signals[u],
                feats,
                config.beam_width,
            )?;
            new_heldout_segs.push(seg);
        }
        train_segs = new_train_segs;
        heldout_segs = new_heldout_segs;

        if let Some(dir) = workdir {
            std::fs::create_dir_all(dir)?;
            save_checkpoint(
                &classifier,
                CheckpointMeta {
                    epoch: report.best_epoch,
                    stage: iter_idx,
                },
                &dir.join(format!("classifier_iter{}.txt", iter_idx + 1)),
            )?;
            std::fs::write(
                dir.join(format!("train_report_iter{}.txt", iter_idx + 1)),
                report.to_lines(),
            )?;
            save_segmentations(
                &train_segs,
                &dir.join(format!("train_segs_iter{}.txt", iter_idx + 1)),
            )?;
            save_segmentations(
                &heldout_segs,
                &dir.join(format!("heldout_segs_iter{}.txt", iter_idx + 1)),
            )?;
        }

        iterations.push(IterationOutcome {
            classifier,
            report,
            train_segs: train_segs.clone(),
            heldout_segs: heldout_segs.clone(),
        });
    }

    Ok(AlternateResult { iterations })
}

/// Segmentations as 0/1 rows, one utterance per line.
pub fn save_segmentations(segs: &[Segmentation], path: &Path) -> Result<()> {
    let mut out = String::new();
    for seg in segs {
        let row: Vec<&str> = seg
            .boundaries()
            .iter()
            .map(|&b| if b { "1" } else { "0" })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_segmentations(path: &Path) -> Result<Vec<Segmentation>> {
    let content = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let flags: Vec<bool> = line
            .split_whitespace()
            .map(|tok| match tok {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: format!("invalid boundary flag `{tok}`"),
                }),
            })
            .collect::<Result<_>>()?;
        out.push(Segmentation::new(flags)?);
    }
    Ok(out)
}
