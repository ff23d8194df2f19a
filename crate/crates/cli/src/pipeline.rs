//! Command implementations: each is a thin, validated wrapper over the
//! library operations, reading and writing the documented file formats.

use std::collections::BTreeMap;
use std::path::Path;

use segodm::boundary::{
    best_path_score, eval_segmentations, initial_boundaries, refine_boundaries, BoundaryDetector,
    BoundaryPriorSignal, SegMetrics, SpectralDeltaDetector,
};
use segodm::corpus::{
    generate_corpus, load_corpus, save_corpus, split_corpus, Corpus, LabelSequence, Segmentation,
    SILENCE,
};
use segodm::decode::{
    decode_utterance, estimate_frame_prior, evaluate_labels, fer, framewise_argmax, EvalReport,
    FramePrior,
};
use segodm::lm::{load_lm, save_lm, train_lm, NGramLM};
use segodm::model::{load_checkpoint, save_checkpoint, CheckpointMeta, Classifier};
use segodm::selftrain::{pseudo_label, retrain_on_pseudo_labels};
use segodm::trainer::{
    alternate, train_classifier, AlternateConfig, IterationOutcome, TrainData,
};
use segodm::{Error, Result};

use crate::config::{BoundaryMode, ExperimentMode, RunConfig};
use crate::manifest::{now_unix, RunManifest};

/// Generate the synthetic corpus and write it to `out`.
pub fn cmd_gen_data(config: &RunConfig, out: &Path) -> Result<()> {
    let corpus = generate_corpus(&config.synth.to_spec())?;
    save_corpus(&corpus, out)?;
    println!("wrote {} utterances to {}", corpus.len(), out.display());
    Ok(())
}

/// Estimate an N-gram model from a corpus's gold transcripts.
pub fn cmd_train_lm(
    corpus_dir: &Path,
    order: usize,
    alpha: f64,
    top_k: usize,
    out: &Path,
) -> Result<()> {
    let corpus = load_corpus(corpus_dir)?;
    let transcripts = corpus
        .transcripts()
        .ok_or_else(|| Error::Data("corpus has no labels to train a language model on".into()))?;
    let lm = train_lm(&transcripts, order, corpus.alphabet_size(), alpha)?;
    save_lm(&lm, out)?;
    let topk = lm.topk(top_k, false)?;
    println!(
        "trained order-{order} model on {} sequences ({} windows); top-{} mass {:.4}",
        transcripts.len(),
        lm.total_windows(),
        topk.len(),
        topk.entries().iter().map(|(_, p)| p).sum::<f64>()
    );
    Ok(())
}

fn detector_signals(config: &RunConfig, corpus: &Corpus) -> Vec<BoundaryPriorSignal> {
    let det = SpectralDeltaDetector {
        width: config.boundary.detector_width,
    };
    corpus.utterances.iter().map(|u| det.prior(u)).collect()
}

fn starting_segmentations(
    config: &RunConfig,
    corpus: &Corpus,
    signals: &[BoundaryPriorSignal],
) -> Result<Vec<Segmentation>> {
    match config.run.boundaries {
        BoundaryMode::Gold => corpus
            .gold_segmentation
            .clone()
            .ok_or_else(|| Error::Data("gold boundary mode needs gold segmentation".into())),
        BoundaryMode::Estimated => signals
            .iter()
            .map(|s| {
                initial_boundaries(s, config.boundary.threshold, config.boundary.min_segment_len)
            })
            .collect(),
    }
}

/// One classifier training pass (no boundary refinement).
pub fn cmd_train(config: &RunConfig, corpus_dir: &Path, lm_path: &Path, out: &Path) -> Result<()> {
    let corpus = load_corpus(corpus_dir)?;
    let lm = load_lm(lm_path)?;
    let topk = lm.topk(config.lm.top_k, config.lm.renormalize)?;
    let (train, heldout) = split_corpus(&corpus, config.run.train_fraction, config.run.seed)?;
    let train_signals = detector_signals(config, &train);
    let heldout_signals = detector_signals(config, &heldout);
    let train_segs = starting_segmentations(config, &train, &train_signals)?;
    let heldout_segs = starting_segmentations(config, &heldout, &heldout_signals)?;
    let data = TrainData {
        train: &train.utterances,
        train_segs: &train_segs,
        heldout: &heldout.utterances,
        heldout_segs: &heldout_segs,
    };
    let (classifier, report) = train_classifier(
        &data,
        &topk,
        config.dims(),
        &config.schedule.to_schedule()?,
        &config.loss_config(1.0),
        config.run.seed,
        heldout.gold_labels.as_deref(),
    )?;
    std::fs::create_dir_all(out)?;
    save_checkpoint(
        &classifier,
        CheckpointMeta {
            epoch: report.best_epoch,
            stage: 0,
        },
        &out.join("classifier.txt"),
    )?;
    std::fs::write(out.join("train_report.txt"), report.to_lines())?;
    println!(
        "trained {} epochs; best epoch {} (self-validation {:.6})",
        report.epochs.len(),
        report.best_epoch,
        report.epochs[report.best_epoch].self_validation
    );
    Ok(())
}

/// Refine boundaries over a whole corpus with a trained classifier; writes a
/// prediction artifact (corpus with MAP labels and boundaries).
pub fn cmd_refine(
    config: &RunConfig,
    corpus_dir: &Path,
    lm_path: &Path,
    checkpoint: &Path,
    beam_width: usize,
    tolerance: usize,
    out: &Path,
) -> Result<()> {
    let corpus = load_corpus(corpus_dir)?;
    let lm = load_lm(lm_path)?;
    let (classifier, _) = load_checkpoint(checkpoint)?;
    let signals = detector_signals(config, &corpus);
    let prior = estimate_frame_prior(&classifier, &corpus.utterances)?;

    let mut labels = Vec::with_capacity(corpus.len());
    let mut segs = Vec::with_capacity(corpus.len());
    let mut total_score = 0.0;
    for (u, feats) in corpus.utterances.iter().enumerate() {
        let (l, s) = refine_boundaries(&classifier, &lm, &prior, &signals[u], feats, beam_width)?;
        total_score +=
            best_path_score(&classifier, &lm, &prior, &signals[u], feats, beam_width, 1.0)?;
        labels.push(l);
        segs.push(s);
    }
    let pred = Corpus::new(
        corpus.utterances.clone(),
        Some(labels),
        Some(segs.clone()),
        corpus.alphabet.clone(),
    )?;
    save_corpus(&pred, out)?;
    println!("total_score {total_score}");
    if let Some(gold) = &corpus.gold_segmentation {
        let m = eval_segmentations(&segs, gold, tolerance)?;
        print_seg_metrics("refined", &m);
    }
    Ok(())
}

fn print_seg_metrics(prefix: &str, m: &SegMetrics) {
    println!(
        "{prefix}_recall {}\n{prefix}_precision {}\n{prefix}_f_score {}\n{prefix}_r_value {}",
        m.recall, m.precision, m.f_score, m.r_value
    );
}

/// Decode a corpus into a prediction artifact.
pub fn cmd_decode(
    config: &RunConfig,
    corpus_dir: &Path,
    lm_path: &Path,
    checkpoint: &Path,
    beam_width: usize,
    lm_weight: f64,
    out: &Path,
) -> Result<()> {
    let corpus = load_corpus(corpus_dir)?;
    let lm = load_lm(lm_path)?;
    let (classifier, _) = load_checkpoint(checkpoint)?;
    let signals = detector_signals(config, &corpus);
    let prior = estimate_frame_prior(&classifier, &corpus.utterances)?;
    // frame-level MAP labels (phone sequences are their collapsed runs)
    let mut labels = Vec::with_capacity(corpus.len());
    let mut segs = Vec::with_capacity(corpus.len());
    for (u, feats) in corpus.utterances.iter().enumerate() {
        let (l, s) = decode_frames(
            &classifier,
            &lm,
            &prior,
            &signals[u],
            feats,
            beam_width,
            lm_weight,
        )?;
        labels.push(l);
        segs.push(s);
    }
    let pred = Corpus::new(
        corpus.utterances.clone(),
        Some(labels),
        Some(segs),
        corpus.alphabet.clone(),
    )?;
    save_corpus(&pred, out)?;
    println!("decoded {} utterances to {}", pred.len(), out.display());
    Ok(())
}

fn decode_frames(
    classifier: &Classifier,
    lm: &NGramLM,
    prior: &FramePrior,
    signal: &BoundaryPriorSignal,
    feats: &segodm::corpus::FeatureSequence,
    beam_width: usize,
    lm_weight: f64,
) -> Result<(LabelSequence, Segmentation)> {
    // the refinement beam already returns MAP frame labels; decode differs
    // only in the LM weight
    if (lm_weight - 1.0).abs() < f64::EPSILON {
        refine_boundaries(classifier, lm, prior, signal, feats, beam_width)
    } else {
        let phones = decode_utterance(classifier, lm, prior, signal, feats, beam_width, lm_weight)?;
        // re-derive frame labels with the weighted beam
        let labels = segodm::boundary::weighted_map_labels(
            classifier, lm, prior, signal, feats, beam_width, lm_weight,
        )?;
        let seg = Segmentation::from_labels(labels.labels());
        debug_assert_eq!(segodm::decode::collapse_runs(labels.labels()), phones);
        Ok((labels, seg))
    }
}

/// Compare a prediction artifact against a reference artifact.
pub fn cmd_eval(pred_dir: &Path, ref_dir: &Path, tolerance: usize) -> Result<()> {
    let pred = load_corpus(pred_dir)?;
    let reference = load_corpus(ref_dir)?;
    let pred_labels = pred
        .gold_labels
        .as_ref()
        .ok_or_else(|| Error::Data("prediction artifact has no labels".into()))?;
    let ref_labels = reference
        .gold_labels
        .as_ref()
        .ok_or_else(|| Error::Data("reference artifact has no labels".into()))?;
    let ids: Vec<String> = reference
        .utterances
        .iter()
        .map(|u| u.id().to_string())
        .collect();
    let report = evaluate_labels(&ids, pred_labels, ref_labels, SILENCE)?;
    for line in report.summary_lines() {
        println!("{line}");
    }
    if let (Some(ps), Some(rs)) = (&pred.gold_segmentation, &reference.gold_segmentation) {
        let m = eval_segmentations(ps, rs, tolerance)?;
        print_seg_metrics("seg", &m);
    }
    Ok(())
}

/// Pseudo-label a corpus with the current system and retrain a fresh
/// classifier on the result, `rounds` times.
pub fn cmd_selftrain(
    config: &RunConfig,
    corpus_dir: &Path,
    lm_path: &Path,
    checkpoint: &Path,
    rounds: usize,
    out: &Path,
) -> Result<()> {
    let corpus = load_corpus(corpus_dir)?;
    let lm = load_lm(lm_path)?;
    let (mut classifier, _) = load_checkpoint(checkpoint)?;
    let signals = detector_signals(config, &corpus);
    std::fs::create_dir_all(out)?;
    for round in 0..rounds.max(1) {
        classifier = self_train_round(config, &classifier, &lm, &signals, &corpus, round as u64)?;
        save_checkpoint(
            &classifier,
            CheckpointMeta {
                epoch: 0,
                stage: round,
            },
            &out.join(format!("classifier_round{}.txt", round + 1)),
        )?;
    }
    save_checkpoint(
        &classifier,
        CheckpointMeta::default(),
        &out.join("classifier.txt"),
    )?;
    println!("self-training finished after {} round(s)", rounds.max(1));
    Ok(())
}

fn self_train_round(
    config: &RunConfig,
    classifier: &Classifier,
    lm: &NGramLM,
    signals: &[BoundaryPriorSignal],
    corpus: &Corpus,
    round: u64,
) -> Result<Classifier> {
    let prior = estimate_frame_prior(classifier, &corpus.utterances)?;
    let pseudo = pseudo_label(
        classifier,
        lm,
        &prior,
        signals,
        &corpus.utterances,
        config.boundary.beam_width,
    )?;
    retrain_on_pseudo_labels(
        config.dims(),
        &pseudo,
        &config.selftrain.to_config(),
        config.run.seed.wrapping_add(1000 + round),
    )
}

/// Metrics produced by evaluating one iteration's classifier.
struct IterationMetrics {
    f_score: f64,
    r_value: f64,
    fer_heldout: f64,
}

fn iteration_metrics(
    config: &RunConfig,
    outcome: &IterationOutcome,
    train: &Corpus,
    heldout: &Corpus,
) -> Result<IterationMetrics> {
    let gold_train_segs = train
        .gold_segmentation
        .as_ref()
        .ok_or_else(|| Error::Data("synthetic corpus lost its gold segmentation".into()))?;
    let seg = eval_segmentations(
        &outcome.train_segs,
        gold_train_segs,
        config.boundary.tolerance,
    )?;
    let fer_heldout = framewise_fer(&outcome.classifier, heldout)?;
    Ok(IterationMetrics {
        f_score: seg.f_score,
        r_value: seg.r_value,
        fer_heldout,
    })
}

fn framewise_fer(classifier: &Classifier, corpus: &Corpus) -> Result<f64> {
    let gold = corpus
        .gold_labels
        .as_ref()
        .ok_or_else(|| Error::Data("corpus has no gold labels to evaluate against".into()))?;
    let pred = framewise_argmax(classifier, &corpus.utterances)?;
    let mut wrong = 0.0;
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gold) {
        wrong += fer(p.labels(), g.labels())? * g.len() as f64;
        total += g.len() as f64;
    }
    Ok(wrong / total)
}

/// Decode the held-out split and score FER/FER*/PER against gold.
fn decode_and_score(
    config: &RunConfig,
    classifier: &Classifier,
    lm: &NGramLM,
    train: &Corpus,
    heldout: &Corpus,
    heldout_signals: &[BoundaryPriorSignal],
) -> Result<EvalReport> {
    let prior = estimate_frame_prior(classifier, &train.utterances)?;
    let mut pred = Vec::with_capacity(heldout.len());
    for (u, feats) in heldout.utterances.iter().enumerate() {
        let (labels, _) = decode_frames(
            classifier,
            lm,
            &prior,
            &heldout_signals[u],
            feats,
            config.decode.beam_width,
            config.decode.lm_weight,
        )?;
        pred.push(labels);
    }
    let ids: Vec<String> = heldout
        .utterances
        .iter()
        .map(|u| u.id().to_string())
        .collect();
    let gold = heldout
        .gold_labels
        .as_ref()
        .ok_or_else(|| Error::Data("held-out split has no gold labels".into()))?;
    evaluate_labels(&ids, &pred, gold, SILENCE)
}

/// The full pipeline: corpus -> split -> LM -> boundaries -> alternating
/// training -> optional self-training -> decode + eval -> manifest.
pub fn cmd_full_run(config: &RunConfig, out: &Path) -> Result<RunManifest> {
    let started = now_unix();
    std::fs::create_dir_all(out)?;

    // corpus and split
    let corpus = generate_corpus(&config.synth.to_spec())?;
    save_corpus(&corpus, &out.join("corpus"))?;
    let (train, heldout) = split_corpus(&corpus, config.run.train_fraction, config.run.seed)?;
    save_corpus(&train, &out.join("train"))?;
    save_corpus(&heldout, &out.join("heldout"))?;
    if heldout.is_empty() {
        return Err(Error::Config(
            "train_fraction leaves no held-out utterances".into(),
        ));
    }

    // language model from the mode's transcript pool
    let lm_pool = match config.run.mode {
        ExperimentMode::MatchingLm => &train,
        ExperimentMode::NonMatchingLm => &heldout,
    };
    let transcripts = lm_pool
        .transcripts()
        .ok_or_else(|| Error::Data("corpus has no transcripts".into()))?;
    let lm = train_lm(
        &transcripts,
        config.lm.order,
        corpus.alphabet_size(),
        config.lm.alpha,
    )?;
    save_lm(&lm, &out.join("lm.txt"))?;
    let topk = lm.topk(config.lm.top_k, config.lm.renormalize)?;

    // boundary signals and starting segmentations
    let train_signals = detector_signals(config, &train);
    let heldout_signals = detector_signals(config, &heldout);
    let init_train_segs = starting_segmentations(config, &train, &train_signals)?;
    let init_heldout_segs = starting_segmentations(config, &heldout, &heldout_signals)?;

    let mut metrics: BTreeMap<String, f64> = BTreeMap::new();
    let init_seg = eval_segmentations(
        &init_train_segs,
        train.gold_segmentation.as_ref().expect("synthetic gold"),
        config.boundary.tolerance,
    )?;
    metrics.insert("init_f_score".into(), init_seg.f_score);
    metrics.insert("init_r_value".into(), init_seg.r_value);

    // alternating training
    let data = TrainData {
        train: &train.utterances,
        train_segs: &init_train_segs,
        heldout: &heldout.utterances,
        heldout_segs: &init_heldout_segs,
    };
    let alt_config = AlternateConfig {
        outer_iterations: config.run.outer_iterations,
        beam_width: config.boundary.beam_width,
        dims: config.dims(),
        schedule: config.schedule.to_schedule()?,
        loss: config.loss_config(1.0),
        seed: config.run.seed,
    };
    let result = alternate(
        &data,
        &lm,
        &topk,
        &train_signals,
        &heldout_signals,
        &alt_config,
        heldout.gold_labels.as_deref(),
        Some(out),
    )?;

    for (i, outcome) in result.iterations.iter().enumerate() {
        let m = iteration_metrics(config, outcome, &train, &heldout)?;
        metrics.insert(format!("iter{}_f_score", i + 1), m.f_score);
        metrics.insert(format!("iter{}_r_value", i + 1), m.r_value);
        metrics.insert(format!("iter{}_fer_heldout", i + 1), m.fer_heldout);
    }

    // final system: optionally self-train, then decode and score
    let mut final_classifier = result.last().classifier.clone();
    for round in 0..config.run.self_train_rounds {
        final_classifier = self_train_round(
            config,
            &final_classifier,
            &lm,
            &train_signals,
            &train,
            round as u64,
        )?;
        let fer_after = framewise_fer(&final_classifier, &heldout)?;
        metrics.insert(format!("selftrain{}_fer_heldout", round + 1), fer_after);
    }
    save_checkpoint(
        &final_classifier,
        CheckpointMeta::default(),
        &out.join("classifier_final.txt"),
    )?;

    let report = decode_and_score(
        config,
        &final_classifier,
        &lm,
        &train,
        &heldout,
        &heldout_signals,
    )?;
    metrics.insert("fer".into(), report.fer);
    metrics.insert("fer_star".into(), report.fer_star);
    metrics.insert("per".into(), report.per);
    metrics.insert(
        "fer_framewise".into(),
        framewise_fer(&final_classifier, &heldout)?,
    );

    // manifest
    let mut manifest = RunManifest {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: started,
        finished_unix: now_unix(),
        config: config.clone(),
        artifacts: BTreeMap::new(),
        metrics,
    };
    for name in ["corpus", "train", "heldout"] {
        manifest.add_artifact(out, name)?;
    }
    manifest.add_artifact(out, "lm.txt")?;
    manifest.add_artifact(out, "classifier_final.txt")?;
    for i in 1..=config.run.outer_iterations {
        manifest.add_artifact(out, &format!("classifier_iter{i}.txt"))?;
        manifest.add_artifact(out, &format!("train_segs_iter{i}.txt"))?;
        manifest.add_artifact(out, &format!("heldout_segs_iter{i}.txt"))?;
    }
    manifest.save(&out.join("manifest.toml"))?;
    RunManifest::load(&out.join("manifest.toml"))?.verify(out)?;
    std::fs::write(out.join("metrics.txt"), manifest.metric_lines())?;
    for (k, v) in &manifest.metrics {
        println!("{k} {v}");
    }
    Ok(manifest)
}

/// Run the full pipeline once per grid point, plus supervised comparator
/// rows, and write a consolidated table.
pub fn cmd_sweep(config: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut table = String::from("row fer fer_star per f_score\n");
    let mut rows = 0;
    for &lambda in &config.sweep.lambda {
        let mut point = config.clone();
        point.loss.lambda = lambda;
        let dir = out.join(format!("lambda_{lambda}"));
        let manifest = cmd_full_run(&point, &dir)?;
        let last_f = manifest
            .metrics
            .get(&format!("iter{}_f_score", config.run.outer_iterations))
            .copied()
            .unwrap_or(f64::NAN);
        table.push_str(&format!(
            "lambda={lambda} {} {} {} {last_f}\n",
            manifest.metrics["fer"], manifest.metrics["fer_star"], manifest.metrics["per"],
        ));
        rows += 1;
    }

    // supervised comparator on gold labels, per labeled fraction
    if !config.sweep.labeled_fractions.is_empty() {
        let corpus = generate_corpus(&config.synth.to_spec())?;
        let (train, heldout) = split_corpus(&corpus, config.run.train_fraction, config.run.seed)?;
        for &fraction in &config.sweep.labeled_fractions {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::Config(format!(
                    "labeled fraction {fraction} out of (0, 1]"
                )));
            }
            let keep = ((train.len() as f64 * fraction).ceil() as usize).clamp(1, train.len());
            let feats = &train.utterances[..keep];
            let labels = &train.gold_labels.as_ref().expect("synthetic gold")[..keep];
            let (classifier, _) = segodm::selftrain::train_supervised(
                feats,
                labels,
                config.dims(),
                &config.selftrain.to_config(),
                config.run.seed,
            )?;
            let fer_h = framewise_fer(&classifier, &heldout)?;
            table.push_str(&format!("supervised_fraction={fraction} {fer_h} - - -\n"));
            rows += 1;
        }
    }

    std::fs::write(out.join("sweep.txt"), &table)?;
    print!("{table}");
    println!("rows {rows}");
    Ok(())
}
