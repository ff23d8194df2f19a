//! Declarative run configuration. One TOML file drives every pipeline stage;
//! unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use segodm::corpus::SynthSpec;
use segodm::loss::LossConfig;
use segodm::selftrain::SupervisedConfig;
use segodm::trainer::{ClassifierDims, Schedule, Stage};
use segodm::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentMode {
    /// Language model trained on transcriptions of the training pool itself.
    MatchingLm,
    /// Language model trained on the disjoint held-out pool only.
    NonMatchingLm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// Use the corpus gold segmentation (oracle boundaries).
    Gold,
    /// Estimate initial boundaries from the detector signal.
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub mode: ExperimentMode,
    pub boundaries: BoundaryMode,
    pub outer_iterations: usize,
    #[serde(default)]
    pub self_train_rounds: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub alphabet_size: usize,
    pub feature_dim: usize,
    pub num_utterances: usize,
    pub segments_per_utterance: usize,
    pub mean_segment_length: f64,
    pub min_segment_length: usize,
    pub emission_cluster_separation: f64,
    pub emission_noise_std: f64,
    pub transition_lm_order: usize,
    pub coarticulation_blend_frames: usize,
    pub random_seed: u64,
}

impl SynthSection {
    pub fn to_spec(&self) -> SynthSpec {
        SynthSpec {
            alphabet_size: self.alphabet_size,
            feature_dim: self.feature_dim,
            num_utterances: self.num_utterances,
            segments_per_utterance: self.segments_per_utterance,
            mean_segment_length: self.mean_segment_length,
            min_segment_length: self.min_segment_length,
            emission_cluster_separation: self.emission_cluster_separation,
            emission_noise_std: self.emission_noise_std,
            transition_lm_order: self.transition_lm_order,
            coarticulation_blend_frames: self.coarticulation_blend_frames,
            random_seed: self.random_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmSection {
    pub order: usize,
    pub alpha: f64,
    pub top_k: usize,
    #[serde(default)]
    pub renormalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub context_window: usize,
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub lambda: f64,
    pub fs_sample_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulePreset {
    /// Desk-scale default stages.
    Desk,
    /// The published full-scale schedule.
    Paper,
    /// Stages taken from the `stages` field.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub preset: SchedulePreset,
    /// (epochs, batch_size, temperature) triples for the custom preset.
    #[serde(default)]
    pub stages: Vec<(usize, usize, f64)>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub lr_decay: f64,
}

impl ScheduleSection {
    pub fn to_schedule(&self) -> Result<Schedule> {
        let stages = match self.preset {
            SchedulePreset::Desk => Schedule::desk().stages,
            SchedulePreset::Paper => Schedule::paper().stages,
            SchedulePreset::Custom => {
                if self.stages.is_empty() {
                    return Err(Error::Config(
                        "custom schedule preset needs at least one stage".into(),
                    ));
                }
                self.stages
                    .iter()
                    .map(|&(epochs, batch_size, temperature)| Stage {
                        epochs,
                        batch_size,
                        temperature,
                    })
                    .collect()
            }
        };
        let schedule = Schedule {
            stages,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            lr_decay: self.lr_decay,
        };
        schedule.validate()?;
        Ok(schedule)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySection {
    pub detector_width: usize,
    pub threshold: f64,
    pub min_segment_len: usize,
    pub beam_width: usize,
    /// Matching tolerance in frames for segmentation scoring.
    pub tolerance: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeSection {
    pub beam_width: usize,
    pub lm_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelfTrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub heldout_fraction: f64,
}

impl SelfTrainSection {
    pub fn to_config(&self) -> SupervisedConfig {
        SupervisedConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            heldout_fraction: self.heldout_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Smoothness weights to run the full pipeline over.
    #[serde(default)]
    pub lambda: Vec<f64>,
    /// Labeled-data fractions for the supervised comparator.
    #[serde(default)]
    pub labeled_fractions: Vec<f64>,
}

/// The full declarative configuration for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub synth: SynthSection,
    pub lm: LmSection,
    pub model: ModelSection,
    pub loss: LossSection,
    pub schedule: ScheduleSection,
    pub boundary: BoundarySection,
    pub decode: DecodeSection,
    pub selftrain: SelfTrainSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let content = std::fs::read_to_string(path)?;
        let config: RunConfig = toml::from_str(&content)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.to_spec().validate()?;
        if self.run.outer_iterations == 0 {
            return Err(Error::Config("outer_iterations must be >= 1".into()));
        }
        if !(self.run.train_fraction > 0.0 && self.run.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must be in (0, 1)".into()));
        }
        self.schedule.to_schedule()?;
        self.dims().validate()?;
        self.loss_config(1.0).validate()?;
        self.selftrain.to_config().validate()?;
        if self.boundary.beam_width == 0 || self.decode.beam_width == 0 {
            return Err(Error::Config("beam widths must be >= 1".into()));
        }
        if !(self.boundary.threshold > 0.0 && self.boundary.threshold < 1.0) {
            return Err(Error::Config("boundary threshold must be in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> ClassifierDims {
        ClassifierDims {
            context: self.model.context_window,
            hidden: self.model.hidden_dim,
            alphabet_size: self.synth.alphabet_size,
        }
    }

    pub fn loss_config(&self, temperature: f64) -> LossConfig {
        LossConfig {
            lambda: self.loss.lambda,
            ngram_order: self.lm.order,
            top_k: self.lm.top_k,
            renormalize_topk: self.lm.renormalize,
            fs_sample_size: self.loss.fs_sample_size,
            batch_size_segments: self
                .schedule
                .to_schedule()
                .map(|s| s.stages[0].batch_size)
                .unwrap_or(512),
            temperature,
        }
    }

    /// Desk-scale default: fully unsupervised two-iteration run.
    pub fn desk_default() -> RunConfig {
        RunConfig {
            run: RunSection {
                mode: ExperimentMode::MatchingLm,
                boundaries: BoundaryMode::Estimated,
                outer_iterations: 2,
                self_train_rounds: 0,
                train_fraction: 0.7,
                seed: 42,
            },
            synth: SynthSection {
                alphabet_size: 6,
                feature_dim: 8,
                num_utterances: 200,
                segments_per_utterance: 8,
                mean_segment_length: 6.0,
                min_segment_length: 3,
                emission_cluster_separation: 2.5,
                emission_noise_std: 1.0,
                transition_lm_order: 2,
                coarticulation_blend_frames: 1,
                random_seed: 7,
            },
            lm: LmSection {
                order: 3,
                alpha: 0.01,
                top_k: 50,
                renormalize: false,
            },
            model: ModelSection {
                context_window: 5,
                hidden_dim: 32,
            },
            loss: LossSection {
                lambda: 0.005,
                fs_sample_size: 512,
            },
            schedule: ScheduleSection {
                preset: SchedulePreset::Custom,
                stages: vec![(40, 512, 1.0), (20, 1024, 0.9), (20, 2048, 0.8)],
                learning_rate: 0.05,
                momentum: 0.9,
                lr_decay: 0.999,
            },
            boundary: BoundarySection {
                detector_width: 3,
                threshold: 0.7,
                min_segment_len: 3,
                beam_width: 8,
                tolerance: 2,
            },
            decode: DecodeSection {
                beam_width: 8,
                lm_weight: 1.0,
            },
            selftrain: SelfTrainSection {
                epochs: 30,
                batch_size: 256,
                learning_rate: 0.05,
                momentum: 0.9,
                heldout_fraction: 0.1,
            },
            sweep: SweepSection {
                lambda: vec![0.0, 0.005],
                labeled_fractions: vec![],
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let config = RunConfig::desk_default();
        let text = toml::to_string_pretty(&config).unwrap();
        let parsed: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(config, parsed);
        parsed.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let config = RunConfig::desk_default();
        let mut text = toml::to_string_pretty(&config).unwrap();
        text.push_str("\n[run2]\nbogus = 1\n");
        assert!(toml::from_str::<RunConfig>(&text).is_err());
        let text2 = text.replace("[run2]\nbogus = 1", "");
        let with_extra = text2.replace("seed = 42", "seed = 42\nnot_a_key = 1");
        assert!(toml::from_str::<RunConfig>(&with_extra).is_err());
    }

    #[test]
    fn schedule_presets_resolve() {
        let mut config = RunConfig::desk_default();
        config.schedule.preset = SchedulePreset::Paper;
        let schedule = config.schedule.to_schedule().unwrap();
        assert_eq!(schedule.stages.len(), 4);
        assert_eq!(schedule.stages[0].epochs, 200);
        assert_eq!(schedule.stages[3].batch_size, 20000);
        config.schedule.preset = SchedulePreset::Desk;
        assert!(config.schedule.to_schedule().is_ok());
    }
}
