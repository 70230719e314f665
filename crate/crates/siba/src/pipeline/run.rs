//! End-to-end experiment execution: surrogate training, trigger synthesis,
//! poisoning, victim training, evaluation and optional defenses, with
//! content-addressed stage caching throughout.

use std::fs;
use std::path::{Path, PathBuf};

use crate::defense::{
    detection_report, fine_prune, neural_cleanse, scale_up_score, strip_scores,
    write_anomaly_csv, write_detection_csv, write_prune_curve_csv, FlagDirection,
    NeuralCleanseConfig, StripConfig,
};
use crate::error::{Result, SibaError};
use crate::io::{read_cifar10_test, read_cifar10_train, read_trigger, write_loss_trace, write_poisoned_set, write_trigger};
use crate::metrics::{
    attack_success_rate, benign_accuracy, mean_ssim, write_metrics_csv, MetricsRow,
};
use crate::model::{Architecture, ClassifierHandle};
use crate::pipeline::cache::{dataset_fingerprint, run_stage, stage_key, StageOutcome};
use crate::pipeline::config::{ExperimentConfig, ModelSection};
use crate::pipeline::plot::{plot_lines, PlotSeries};
use crate::poisoning::{
    amplify_trigger, baseline_blended_trigger, baseline_patch_trigger, baseline_random_trigger,
    baseline_sparse_trigger, make_poison_plan, poison_test_set, poison_training_set, PatchCorner,
    PatchStyle, PoisonTransform,
};
use crate::synthesis::synthesize_trigger;
use crate::synthetic::synthetic_split;
use crate::train::train_classifier;
use crate::types::{LabeledImageSet, TriggerPattern};

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub metrics: Vec<MetricsRow>,
    pub cache_hits: Vec<String>,
    pub trigger_path: Option<PathBuf>,
    pub victim_path: PathBuf,
    pub warnings: Vec<String>,
}

impl RunSummary {
    pub fn primary(&self) -> &MetricsRow {
        &self.metrics[0]
    }
}

fn record(hits: &mut Vec<String>, outcome: &StageOutcome) {
    if outcome.cache_hit {
        hits.push(outcome.name.clone());
    }
}

/// Load the train/test splits declared by the config.
pub fn load_datasets(config: &ExperimentConfig) -> Result<(LabeledImageSet, LabeledImageSet)> {
    match config.experiment.dataset.as_str() {
        "synthetic" => synthetic_split(
            config.experiment.synthetic_train,
            config.experiment.synthetic_test,
            config.experiment.num_classes,
            config.image_shape(),
            config.experiment.seed,
        ),
        "cifar10" => {
            let dir = config.data_dir()?;
            Ok((read_cifar10_train(&dir)?, read_cifar10_test(&dir)?))
        }
        other => Err(SibaError::Config(format!("unknown dataset {other}"))),
    }
}

fn model_section_key(section: &ModelSection) -> String {
    format!(
        "{}|{}|{}|{:?}|{}|{}|{}|{}",
        section.arch,
        section.epochs,
        section.lr,
        section.lr_milestones,
        section.momentum,
        section.weight_decay,
        section.batch_size,
        section.augment
    )
}

fn attack_key(config: &ExperimentConfig) -> String {
    let a = &config.attack;
    format!(
        "{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{:?}",
        a.method,
        a.label_rule,
        a.target_class,
        a.poisoning_rate,
        a.k,
        a.eps,
        a.alpha,
        a.iterations,
        a.mask_update_period,
        a.spatial_grouping,
        a.amplify_eps
    )
}

fn train_stage(
    out_dir: &Path,
    name: &str,
    key: &str,
    data: &LabeledImageSet,
    holdout: &LabeledImageSet,
    section: &ModelSection,
    seed: u64,
    warnings: &mut Vec<String>,
) -> Result<(ClassifierHandle, StageOutcome)> {
    if section.epochs == 0 {
        let w = format!("{name}: epochs = 0, the model stays at its random initialization");
        log::warn!("{w}");
        warnings.push(w);
    }
    let outcome = run_stage(out_dir, name, key, |dir| {
        let config = ExperimentConfig::train_config(section, seed)?;
        let (model, report) = train_classifier(data, Some(holdout), &config)?;
        model.save(&dir.join("model.safetensors"), &[])?;
        let mut lines = vec!["epoch,loss".to_string()];
        lines.extend(report.epoch_losses.iter().enumerate().map(|(i, l)| format!("{i},{l}")));
        if let Some(acc) = report.holdout_accuracy {
            lines.push(format!("# holdout_accuracy,{acc}"));
        }
        fs::write(dir.join("train_log.csv"), lines.join("\n") + "\n")?;
        Ok(())
    })?;
    let model = ClassifierHandle::load(&outcome.dir.join("model.safetensors"))?;
    Ok((model, outcome))
}

/// Synthesize (or construct) the attack trigger for additive methods.
fn trigger_stage(
    out_dir: &Path,
    config: &ExperimentConfig,
    surrogate: &ClassifierHandle,
    surrogate_key: &str,
    surrogate_data: &LabeledImageSet,
    hits: &mut Vec<String>,
) -> Result<(TriggerPattern, PathBuf)> {
    let key = stage_key(&["trigger", surrogate_key, &attack_key(config)]);
    let outcome = run_stage(out_dir, "trigger", &key, |dir| {
        let shape = config.image_shape();
        match config.attack.method.as_str() {
            "siba" => {
                let trace = synthesize_trigger(surrogate, surrogate_data, &config.synthesis_config())?;
                write_trigger(&dir.join("trigger.bin"), &trace.final_trigger)?;
                write_loss_trace(&dir.join("loss_trace.csv"), &trace.losses)?;
            }
            "sparse" => {
                let trace =
                    baseline_sparse_trigger(surrogate, surrogate_data, &config.synthesis_config())?;
                write_trigger(&dir.join("trigger.bin"), &trace.final_trigger)?;
                write_loss_trace(&dir.join("loss_trace.csv"), &trace.losses)?;
            }
            "random" => {
                let t = baseline_random_trigger(
                    shape,
                    config.synthesis_config().element_budget(shape),
                    config.attack.eps as f32,
                    config.experiment.seed,
                )?;
                write_trigger(&dir.join("trigger.bin"), &t)?;
            }
            other => {
                return Err(SibaError::invalid(format!(
                    "trigger stage does not apply to method {other}"
                )))
            }
        }
        Ok(())
    })?;
    record(hits, &outcome);
    let path = outcome.dir.join("trigger.bin");
    Ok((read_trigger(&path)?, path))
}

fn non_additive_transform(config: &ExperimentConfig) -> Result<Box<dyn PoisonTransform>> {
    let shape = config.image_shape();
    match config.attack.method.as_str() {
        "patch" => Ok(Box::new(baseline_patch_trigger(
            shape,
            3,
            PatchStyle::Checkerboard,
            PatchCorner::BottomRight,
        )?)),
        "blended" => {
            // fixed pseudo-random blend pattern derived from the seed
            let noise = baseline_random_trigger(shape, shape.pixel_count(), 0.5, config.experiment.seed)?;
            let pattern: Vec<f32> = noise.values().iter().map(|v| v + 0.5).collect();
            Ok(Box::new(baseline_blended_trigger(shape, pattern, 0.2)?))
        }
        other => Err(SibaError::invalid(format!("{other} is not a non-additive method"))),
    }
}

/// Execute the full pipeline described by `config` under `out_dir`.
///
/// Artifacts land in `out_dir/runs/<experiment id>/`; heavyweight stage
/// outputs are shared in `out_dir/stages/` keyed by content hashes, so
/// repeated or overlapping runs reuse completed work and report cache hits.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    config.validate()?;
    let run_dir = out_dir.join("runs").join(&config.experiment.id);
    fs::create_dir_all(&run_dir)?;
    fs::write(run_dir.join("config.toml"), config.to_toml()?)?;

    let mut hits = Vec::new();
    let mut warnings = Vec::new();

    let (train_set, test_set) = load_datasets(config)?;
    let train_fp = dataset_fingerprint(&train_set);
    let test_fp = dataset_fingerprint(&test_set);

    // surrogate sees only the declared data fraction
    let n_surrogate =
        ((train_set.len() as f64 * config.experiment.data_fraction).round() as usize).max(1);
    let surrogate_data = train_set.subset(&(0..n_surrogate).collect::<Vec<_>>())?;

    let additive = matches!(config.attack.method.as_str(), "siba" | "sparse" | "random");
    let label_rule = config.label_rule();

    // the surrogate is only needed when a trigger is optimized against it
    let needs_surrogate = matches!(config.attack.method.as_str(), "siba" | "sparse");
    let surrogate_key = stage_key(&[
        "surrogate",
        &train_fp,
        &model_section_key(&config.surrogate),
        &config.experiment.seed.to_string(),
        &config.experiment.data_fraction.to_string(),
    ]);
    let surrogate = if needs_surrogate {
        let (model, outcome) = train_stage(
            out_dir,
            "surrogate",
            &surrogate_key,
            &surrogate_data,
            &test_set,
            &config.surrogate,
            config.experiment.seed,
            &mut warnings,
        )?;
        record(&mut hits, &outcome);
        Some(model)
    } else {
        None
    };

    // trigger construction (additive methods only)
    let (trigger, trigger_path) = if additive {
        let placeholder = ClassifierHandle::new(
            Architecture::from_id(&config.surrogate.arch)?,
            config.image_shape(),
            config.experiment.num_classes,
            config.experiment.seed,
        )?;
        let surrogate_ref = surrogate.as_ref().unwrap_or(&placeholder);
        let (t, p) = trigger_stage(
            out_dir,
            config,
            surrogate_ref,
            &surrogate_key,
            &surrogate_data,
            &mut hits,
        )?;
        (Some(t), Some(p))
    } else {
        (None, None)
    };

    // poison the training split
    let poison_key = stage_key(&[
        "poison",
        &train_fp,
        &attack_key(config),
        &config.experiment.seed.to_string(),
        &surrogate_key,
    ]);
    let plan = make_poison_plan(
        &train_set,
        config.attack.poisoning_rate,
        label_rule,
        trigger
            .clone()
            .map_or_else(|| TriggerPattern::zeros(config.image_shape(), 1, 1.0), Ok)?,
        config.experiment.seed,
    )?;
    let poisoned_train = match &trigger {
        Some(_) => poison_training_set(&train_set, &plan)?,
        None => {
            let transform = non_additive_transform(config)?;
            crate::poisoning::poison_training_set_with(
                &train_set,
                &plan.poisoned_indices,
                label_rule,
                transform.as_ref(),
            )?
        }
    };
    let poison_outcome = run_stage(out_dir, "poison", &poison_key, |dir| {
        write_poisoned_set(dir, &poisoned_train, train_set.labels(), &plan.poisoned_indices)
    })?;
    record(&mut hits, &poison_outcome);

    // victim training on the poisoned set
    let victim_key = stage_key(&[
        "victim",
        &dataset_fingerprint(&poisoned_train),
        &model_section_key(&config.victim),
        &(config.experiment.seed + 1).to_string(),
    ]);
    let (victim, victim_outcome) = train_stage(
        out_dir,
        "victim",
        &victim_key,
        &poisoned_train,
        &test_set,
        &config.victim,
        config.experiment.seed + 1,
        &mut warnings,
    )?;
    record(&mut hits, &victim_outcome);
    let victim_path = victim_outcome.dir.join("model.safetensors");

    // evaluation
    let poisoned_test = match &trigger {
        Some(t) => poison_test_set(&test_set, t, label_rule)?,
        None => {
            let transform = non_additive_transform(config)?;
            crate::poisoning::poison_test_set_with(&test_set, label_rule, transform.as_ref())?
        }
    };
    let ba = benign_accuracy(&victim, &test_set)?;
    let asr = attack_success_rate(&victim, &poisoned_test)?;
    let clean_for_ssim = match label_rule {
        crate::types::LabelRule::AllToOne { target } => {
            let keep: Vec<usize> =
                (0..test_set.len()).filter(|&i| test_set.label(i) != target).collect();
            test_set.subset(&keep)?
        }
        _ => test_set.clone(),
    };
    let ssim_val = mean_ssim(&poisoned_test, &clean_for_ssim)?;
    let (l0, linf) = match &trigger {
        Some(t) => (t.l0(), t.linf()),
        None => (config.image_shape().pixel_count(), 1.0),
    };
    let mut metrics = vec![MetricsRow {
        experiment_id: config.experiment.id.clone(),
        attack: config.attack.method.clone(),
        model: config.victim.arch.clone(),
        benign_accuracy: ba,
        attack_success_rate: asr,
        trigger_l0: l0,
        trigger_linf: linf,
        ssim: ssim_val,
        lpips: None,
    }];

    // optional amplified-trigger evaluation
    if let (Some(t), Some(eps_test)) = (&trigger, config.attack.amplify_eps) {
        let amplified = amplify_trigger(t, eps_test as f32)?;
        let amp_test = poison_test_set(&test_set, &amplified, label_rule)?;
        metrics.push(MetricsRow {
            experiment_id: config.experiment.id.clone(),
            attack: format!("{}+amplified", config.attack.method),
            model: config.victim.arch.clone(),
            benign_accuracy: ba,
            attack_success_rate: attack_success_rate(&victim, &amp_test)?,
            trigger_l0: amplified.l0(),
            trigger_linf: amplified.linf(),
            ssim: mean_ssim(&amp_test, &clean_for_ssim)?,
            lpips: None,
        });
    }
    write_metrics_csv(&run_dir.join("metrics.csv"), &metrics)?;

    // defenses
    if !config.defense.enabled.is_empty() {
        let defense_dir = run_dir.join("defenses");
        fs::create_dir_all(&defense_dir)?;
        run_defenses(config, &victim, &train_set, &test_set, &poisoned_test, &defense_dir, &test_fp)?;
    }

    if let Some(p) = &trigger_path {
        // convenience copy so the run directory is self-contained
        fs::copy(p, run_dir.join("trigger.bin"))?;
    }

    Ok(RunSummary {
        run_dir,
        metrics,
        cache_hits: hits,
        trigger_path,
        victim_path,
        warnings,
    })
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

fn run_defenses(
    config: &ExperimentConfig,
    victim: &ClassifierHandle,
    train_set: &LabeledImageSet,
    test_set: &LabeledImageSet,
    poisoned_test: &LabeledImageSet,
    dir: &Path,
    _test_fp: &str,
) -> Result<()> {
    let d = &config.defense;
    let n = d.max_samples.min(test_set.len()).min(poisoned_test.len());
    let benign_stream = test_set.subset(&(0..n).collect::<Vec<_>>())?;
    let poisoned_stream = poisoned_test.subset(&(0..n).collect::<Vec<_>>())?;
    // defender's clean carve-out: 20% of the training data
    let carve = (train_set.len() / 5).max(1);
    let clean_validation = train_set.subset(&(0..carve).collect::<Vec<_>>())?;

    for name in &d.enabled {
        match name.as_str() {
            "strip" => {
                let cfg = StripConfig {
                    n_overlays: d.strip_overlays,
                    blend: d.strip_blend as f32,
                    seed: config.experiment.seed,
                };
                let benign = strip_scores(victim, &benign_stream, &clean_validation, &cfg)?;
                let poisoned = strip_scores(victim, &poisoned_stream, &clean_validation, &cfg)?;
                // threshold at the benign 10th percentile (low entropy flags)
                let mut sorted = benign.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let threshold = percentile(&sorted, 0.1);
                let mut report =
                    detection_report(&poisoned, &benign, threshold, FlagDirection::LowIsPoisoned)?;
                report.post_defense_asr =
                    Some(filtered_asr(victim, &poisoned_stream, &poisoned, |s| s <= threshold)?);
                write_detection_csv(&dir.join("strip.csv"), &report)?;
            }
            "scale_up" => {
                let scales: Vec<f32> = d.scale_up_scales.iter().map(|&s| s as f32).collect();
                let score_all = |set: &LabeledImageSet| -> Result<Vec<f64>> {
                    (0..set.len()).map(|i| scale_up_score(victim, set.image(i), &scales)).collect()
                };
                let benign = score_all(&benign_stream)?;
                let poisoned = score_all(&poisoned_stream)?;
                let threshold = d.scale_up_threshold;
                let mut report = detection_report(
                    &poisoned,
                    &benign,
                    threshold,
                    FlagDirection::HighIsPoisoned,
                )?;
                report.post_defense_asr =
                    Some(filtered_asr(victim, &poisoned_stream, &poisoned, |s| s >= threshold)?);
                write_detection_csv(&dir.join("scale_up.csv"), &report)?;
            }
            "fine_prune" => {
                let channels = victim.arch().penultimate_channels();
                let steps: Vec<usize> = if d.prune_steps.is_empty() {
                    (0..=8).map(|i| i * channels / 8).collect()
                } else {
                    d.prune_steps.clone()
                };
                let curve =
                    fine_prune(victim, &clean_validation, &benign_stream, &poisoned_stream, &steps)?;
                write_prune_curve_csv(&dir.join("fine_prune.csv"), &curve)?;
                let ba: Vec<(f64, f64)> =
                    curve.iter().map(|p| (p.pruned_count as f64, p.benign_accuracy)).collect();
                let asr: Vec<(f64, f64)> =
                    curve.iter().map(|p| (p.pruned_count as f64, p.attack_success_rate)).collect();
                plot_lines(
                    &dir.join("fine_prune.png"),
                    &[PlotSeries { points: ba }, PlotSeries { points: asr }],
                )?;
            }
            "neural_cleanse" => {
                let cfg = NeuralCleanseConfig {
                    epochs: d.neural_cleanse_epochs,
                    seed: config.experiment.seed,
                    ..Default::default()
                };
                let report = neural_cleanse(victim, &benign_stream, &cfg)?;
                write_anomaly_csv(&dir.join("neural_cleanse.csv"), &report)?;
                let points: Vec<(f64, f64)> = report
                    .anomaly_indices
                    .iter()
                    .enumerate()
                    .filter_map(|(c, idx)| idx.map(|v| (c as f64, v)))
                    .collect();
                plot_lines(&dir.join("neural_cleanse.png"), &[PlotSeries { points }])?;
            }
            other => return Err(SibaError::invalid(format!("unknown defense {other}"))),
        }
    }
    Ok(())
}

/// Attack success among samples that survive the detection filter, measured
/// against the full poisoned stream (detected samples count as defended).
fn filtered_asr(
    model: &ClassifierHandle,
    poisoned_stream: &LabeledImageSet,
    scores: &[f64],
    flagged: impl Fn(f64) -> bool,
) -> Result<f64> {
    let preds = model.predict_dataset(poisoned_stream)?;
    let surviving = preds
        .iter()
        .zip(poisoned_stream.labels())
        .zip(scores)
        .filter(|((p, l), s)| **p == **l && !flagged(**s))
        .count();
    Ok(surviving as f64 / poisoned_stream.len() as f64)
}

/// Axes accepted by `run_ablation`.
pub const ABLATION_AXES: [&str; 8] =
    ["target_class", "poisoning_rate", "k", "eps", "mask_update_period", "alpha", "iterations", "data_fraction"];

fn apply_axis(config: &mut ExperimentConfig, axis: &str, value: f64) -> Result<()> {
    match axis {
        "target_class" => config.attack.target_class = value as usize,
        "poisoning_rate" => config.attack.poisoning_rate = value,
        "k" => config.attack.k = value as usize,
        "eps" => config.attack.eps = value,
        "mask_update_period" => config.attack.mask_update_period = value as usize,
        "alpha" => config.attack.alpha = value,
        "iterations" => config.attack.iterations = value as usize,
        "data_fraction" => config.experiment.data_fraction = value,
        other => {
            return Err(SibaError::Config(format!(
                "unknown ablation axis \"{other}\"; expected one of {ABLATION_AXES:?}"
            )))
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AblationPoint {
    pub value: f64,
    pub benign_accuracy: f64,
    pub attack_success_rate: f64,
}

/// Sweep exactly one axis, running the full pipeline per grid point. Stage
/// caching makes the shared surrogate (for axes that do not affect it) train
/// only once. Emits `ablation_<axis>.csv` and a matching plot.
pub fn run_ablation(
    base: &ExperimentConfig,
    axis: &str,
    values: &[f64],
    out_dir: &Path,
) -> Result<Vec<AblationPoint>> {
    if !ABLATION_AXES.contains(&axis) {
        return Err(SibaError::Config(format!(
            "unknown ablation axis \"{axis}\"; expected one of {ABLATION_AXES:?}"
        )));
    }
    if values.is_empty() {
        return Err(SibaError::Config("ablation needs at least one grid value".into()));
    }
    let mut points = Vec::with_capacity(values.len());
    for (i, &value) in values.iter().enumerate() {
        let mut config = base.clone();
        config.experiment.id = format!("{}-{axis}-{i}", base.experiment.id);
        apply_axis(&mut config, axis, value)?;
        config.validate()?;
        let summary = run_experiment(&config, out_dir)?;
        points.push(AblationPoint {
            value,
            benign_accuracy: summary.primary().benign_accuracy,
            attack_success_rate: summary.primary().attack_success_rate,
        });
    }
    let csv_path = out_dir.join(format!("ablation_{axis}.csv"));
    let mut lines = vec![format!("{axis},ba,asr")];
    lines.extend(points.iter().map(|p| {
        format!("{},{:.6},{:.6}", p.value, p.benign_accuracy, p.attack_success_rate)
    }));
    fs::write(&csv_path, lines.join("\n") + "\n")?;
    plot_lines(
        &out_dir.join(format!("ablation_{axis}.png")),
        &[
            PlotSeries { points: points.iter().map(|p| (p.value, p.benign_accuracy)).collect() },
            PlotSeries {
                points: points.iter().map(|p| (p.value, p.attack_success_rate)).collect(),
            },
        ],
    )?;
    Ok(points)
}

#[derive(Debug, Clone)]
pub struct TransferCell {
    pub surrogate_arch: String,
    pub victim_arch: String,
    pub benign_accuracy: f64,
    pub attack_success_rate: f64,
}

/// Full surrogate x victim architecture matrix: one surrogate and trigger
/// per architecture, one victim per (trigger, victim architecture) pair.
pub fn run_transfer_grid(
    base: &ExperimentConfig,
    architectures: &[&str],
    out_dir: &Path,
) -> Result<Vec<TransferCell>> {
    if architectures.len() < 2 {
        return Err(SibaError::Config("transfer grid needs at least two architectures".into()));
    }
    for a in architectures {
        Architecture::from_id(a)?;
    }
    let mut cells = Vec::new();
    for s_arch in architectures {
        for v_arch in architectures {
            let mut config = base.clone();
            config.experiment.id =
                format!("{}-transfer-{s_arch}-to-{v_arch}", base.experiment.id);
            config.surrogate.arch = s_arch.to_string();
            config.victim.arch = v_arch.to_string();
            config.validate()?;
            let summary = run_experiment(&config, out_dir)?;
            cells.push(TransferCell {
                surrogate_arch: s_arch.to_string(),
                victim_arch: v_arch.to_string(),
                benign_accuracy: summary.primary().benign_accuracy,
                attack_success_rate: summary.primary().attack_success_rate,
            });
        }
    }
    let mut lines = vec!["surrogate,victim,ba,asr".to_string()];
    lines.extend(cells.iter().map(|c| {
        format!(
            "{},{},{:.6},{:.6}",
            c.surrogate_arch, c.victim_arch, c.benign_accuracy, c.attack_success_rate
        )
    }));
    fs::write(out_dir.join("transfer_matrix.csv"), lines.join("\n") + "\n")?;
    Ok(cells)
}
