//! Command-line front end over the experiment pipeline. Every verb is a
//! thin wrapper around the library; all real logic lives in `siba`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use siba::defense::{
    detection_report, fine_prune, neural_cleanse, scale_up_score, strip_scores,
    write_anomaly_csv, write_detection_csv, write_prune_curve_csv, FlagDirection,
    NeuralCleanseConfig, StripConfig,
};
use siba::io::{read_trigger, write_loss_trace, write_poisoned_set, write_trigger};
use siba::metrics::{attack_success_rate, benign_accuracy, mean_ssim, write_metrics_csv, MetricsRow};
use siba::model::ClassifierHandle;
use siba::pipeline::{
    load_datasets, run_ablation, run_experiment, run_transfer_grid, ExperimentConfig,
};
use siba::poisoning::{make_poison_plan, poison_test_set, poison_training_set};
use siba::synthesis::synthesize_trigger;
use siba::train::train_classifier;
use siba::Result;

#[derive(Parser)]
#[command(
    name = "siba",
    about = "Sparse-and-invisible backdoor attack toolkit: trigger synthesis, poisoning, training, evaluation and defenses",
    version
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Experiment configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts and caches.
    #[arg(long, global = true, default_value = "siba-out")]
    out_dir: PathBuf,
    /// Overrides the seed declared in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Compute device ("cpu" is the only supported backend).
    #[arg(long, global = true, default_value = "cpu")]
    device: String,
    /// Resume from completed stages (cache hits); pass --resume=false to
    /// recompute everything.
    #[arg(long, global = true, default_value_t = true, action = clap::ArgAction::Set)]
    resume: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a surrogate and synthesize the attack trigger.
    Synthesize,
    /// Build the poisoned training set and its manifest.
    Poison,
    /// Train the victim model on the poisoned training set.
    Train,
    /// Evaluate a victim: benign accuracy, attack success rate, SSIM.
    Evaluate,
    /// Run the enabled defenses against the victim.
    Defend,
    /// Full pipeline: surrogate, trigger, poison, victim, evaluate, defend.
    Run,
    /// Sweep one config axis and emit a (value, BA, ASR) curve.
    Ablate {
        /// Swept axis, e.g. poisoning_rate, k, eps, alpha, target_class.
        #[arg(long)]
        axis: String,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Surrogate x victim architecture transfer matrix.
    Transfer {
        /// Comma-separated architecture ids (at least two).
        #[arg(long, value_delimiter = ',')]
        archs: Vec<String>,
    },
}

fn load_config(global: &GlobalArgs) -> Result<ExperimentConfig> {
    let path = global.config.as_ref().ok_or_else(|| {
        siba::SibaError::Config("this command needs --config <file.toml>".into())
    })?;
    let mut config = ExperimentConfig::from_path(path)?;
    if let Some(seed) = global.seed {
        config.experiment.seed = seed;
    }
    Ok(config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    if cli.global.device != "cpu" {
        return Err(siba::SibaError::Config(format!(
            "device \"{}\" is not available; this build is CPU-only",
            cli.global.device
        )));
    }
    let out_dir = &cli.global.out_dir;
    std::fs::create_dir_all(out_dir)?;
    if !cli.global.resume {
        let stages = out_dir.join("stages");
        if stages.exists() {
            log::info!("--resume=false: clearing stage cache {}", stages.display());
            std::fs::remove_dir_all(&stages)?;
        }
    }
    match &cli.command {
        Command::Run => {
            let config = load_config(&cli.global)?;
            let summary = run_experiment(&config, out_dir)?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            if !summary.cache_hits.is_empty() {
                println!("cache hits: {}", summary.cache_hits.join(", "));
            }
            let m = summary.primary();
            println!(
                "{}: BA {:.4} ASR {:.4} L0 {} Linf {:.4} SSIM {:.4}",
                m.experiment_id, m.benign_accuracy, m.attack_success_rate, m.trigger_l0,
                m.trigger_linf, m.ssim
            );
            println!("artifacts: {}", summary.run_dir.display());
            Ok(())
        }
        Command::Synthesize => {
            let config = load_config(&cli.global)?;
            let (train_set, test_set) = load_datasets(&config)?;
            let n = ((train_set.len() as f64 * config.experiment.data_fraction).round() as usize)
                .max(1);
            let surrogate_data = train_set.subset(&(0..n).collect::<Vec<_>>())?;
            let train_cfg =
                ExperimentConfig::train_config(&config.surrogate, config.experiment.seed)?;
            let (surrogate, report) = train_classifier(&surrogate_data, Some(&test_set), &train_cfg)?;
            if let Some(acc) = report.holdout_accuracy {
                println!("surrogate holdout accuracy: {acc:.4}");
            }
            let trace = synthesize_trigger(&surrogate, &surrogate_data, &config.synthesis_config())?;
            let trigger_path = out_dir.join("trigger.bin");
            write_trigger(&trigger_path, &trace.final_trigger)?;
            write_loss_trace(&out_dir.join("loss_trace.csv"), &trace.losses)?;
            surrogate.save(&out_dir.join("surrogate.safetensors"), &[])?;
            println!(
                "trigger: L0 {} Linf {:.4} -> {}",
                trace.final_trigger.l0(),
                trace.final_trigger.linf(),
                trigger_path.display()
            );
            Ok(())
        }
        Command::Poison => {
            let config = load_config(&cli.global)?;
            let (train_set, _) = load_datasets(&config)?;
            let trigger = read_trigger(&out_dir.join("trigger.bin"))?;
            let plan = make_poison_plan(
                &train_set,
                config.attack.poisoning_rate,
                config.label_rule(),
                trigger,
                config.experiment.seed,
            )?;
            let poisoned = poison_training_set(&train_set, &plan)?;
            let dest = out_dir.join("poisoned_train");
            write_poisoned_set(&dest, &poisoned, train_set.labels(), &plan.poisoned_indices)?;
            println!(
                "poisoned {} of {} samples -> {}",
                plan.poisoned_indices.len(),
                train_set.len(),
                dest.display()
            );
            Ok(())
        }
        Command::Train => {
            let config = load_config(&cli.global)?;
            let (_, test_set) = load_datasets(&config)?;
            let poisoned = siba::io::read_image_dir(&out_dir.join("poisoned_train"))?;
            let train_cfg =
                ExperimentConfig::train_config(&config.victim, config.experiment.seed + 1)?;
            let (victim, report) = train_classifier(&poisoned, Some(&test_set), &train_cfg)?;
            let path = out_dir.join("victim.safetensors");
            victim.save(&path, &[])?;
            if let Some(acc) = report.holdout_accuracy {
                println!("victim holdout accuracy: {acc:.4}");
            }
            println!("victim model -> {}", path.display());
            Ok(())
        }
        Command::Evaluate => {
            let config = load_config(&cli.global)?;
            let (_, test_set) = load_datasets(&config)?;
            let victim = ClassifierHandle::load(&out_dir.join("victim.safetensors"))?;
            let trigger = read_trigger(&out_dir.join("trigger.bin"))?;
            let rule = config.label_rule();
            let poisoned_test = poison_test_set(&test_set, &trigger, rule)?;
            let clean_ref = match rule {
                siba::types::LabelRule::AllToOne { target } => test_set.subset(
                    &(0..test_set.len()).filter(|&i| test_set.label(i) != target).collect::<Vec<_>>(),
                )?,
                _ => test_set.clone(),
            };
            let row = MetricsRow {
                experiment_id: config.experiment.id.clone(),
                attack: config.attack.method.clone(),
                model: config.victim.arch.clone(),
                benign_accuracy: benign_accuracy(&victim, &test_set)?,
                attack_success_rate: attack_success_rate(&victim, &poisoned_test)?,
                trigger_l0: trigger.l0(),
                trigger_linf: trigger.linf(),
                ssim: mean_ssim(&poisoned_test, &clean_ref)?,
                lpips: None,
            };
            write_metrics_csv(&out_dir.join("metrics.csv"), std::slice::from_ref(&row))?;
            println!(
                "BA {:.4} ASR {:.4} L0 {} Linf {:.4} SSIM {:.4}",
                row.benign_accuracy, row.attack_success_rate, row.trigger_l0, row.trigger_linf,
                row.ssim
            );
            Ok(())
        }
        Command::Defend => {
            let config = load_config(&cli.global)?;
            let (train_set, test_set) = load_datasets(&config)?;
            let victim = ClassifierHandle::load(&out_dir.join("victim.safetensors"))?;
            let trigger = read_trigger(&out_dir.join("trigger.bin"))?;
            let poisoned_test = poison_test_set(&test_set, &trigger, config.label_rule())?;
            let d = &config.defense;
            let n = d.max_samples.min(test_set.len()).min(poisoned_test.len());
            let benign_stream = test_set.subset(&(0..n).collect::<Vec<_>>())?;
            let poisoned_stream = poisoned_test.subset(&(0..n).collect::<Vec<_>>())?;
            let carve = (train_set.len() / 5).max(1);
            let clean_validation = train_set.subset(&(0..carve).collect::<Vec<_>>())?;
            let names: Vec<String> = if d.enabled.is_empty() {
                ["strip", "scale_up", "fine_prune", "neural_cleanse"]
                    .map(String::from)
                    .to_vec()
            } else {
                d.enabled.clone()
            };
            for name in &names {
                match name.as_str() {
                    "strip" => {
                        let cfg = StripConfig {
                            n_overlays: d.strip_overlays,
                            blend: d.strip_blend as f32,
                            seed: config.experiment.seed,
                        };
                        let benign =
                            strip_scores(&victim, &benign_stream, &clean_validation, &cfg)?;
                        let poisoned =
                            strip_scores(&victim, &poisoned_stream, &clean_validation, &cfg)?;
                        let mut sorted = benign.clone();
                        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                        let threshold = sorted[(sorted.len() - 1) / 10];
                        let report = detection_report(
                            &poisoned,
                            &benign,
                            threshold,
                            FlagDirection::LowIsPoisoned,
                        )?;
                        write_detection_csv(&out_dir.join("strip.csv"), &report)?;
                        println!(
                            "strip: TPR {:.4} FPR {:.4} AUROC {:.4}",
                            report.tpr, report.fpr, report.auroc
                        );
                    }
                    "scale_up" => {
                        let scales: Vec<f32> =
                            d.scale_up_scales.iter().map(|&s| s as f32).collect();
                        let score_all = |set: &siba::types::LabeledImageSet| -> Result<Vec<f64>> {
                            (0..set.len())
                                .map(|i| scale_up_score(&victim, set.image(i), &scales))
                                .collect()
                        };
                        let benign = score_all(&benign_stream)?;
                        let poisoned = score_all(&poisoned_stream)?;
                        let report = detection_report(
                            &poisoned,
                            &benign,
                            d.scale_up_threshold,
                            FlagDirection::HighIsPoisoned,
                        )?;
                        write_detection_csv(&out_dir.join("scale_up.csv"), &report)?;
                        println!(
                            "scale_up: TPR {:.4} FPR {:.4} AUROC {:.4}",
                            report.tpr, report.fpr, report.auroc
                        );
                    }
                    "fine_prune" => {
                        let channels = victim.arch().penultimate_channels();
                        let steps: Vec<usize> = if d.prune_steps.is_empty() {
                            (0..=8).map(|i| i * channels / 8).collect()
                        } else {
                            d.prune_steps.clone()
                        };
                        let curve = fine_prune(
                            &victim,
                            &clean_validation,
                            &benign_stream,
                            &poisoned_stream,
                            &steps,
                        )?;
                        write_prune_curve_csv(&out_dir.join("fine_prune.csv"), &curve)?;
                        for p in &curve {
                            println!(
                                "fine_prune: {} channels -> BA {:.4} ASR {:.4}",
                                p.pruned_count, p.benign_accuracy, p.attack_success_rate
                            );
                        }
                    }
                    "neural_cleanse" => {
                        let cfg = NeuralCleanseConfig {
                            epochs: d.neural_cleanse_epochs,
                            seed: config.experiment.seed,
                            ..Default::default()
                        };
                        let report = neural_cleanse(&victim, &benign_stream, &cfg)?;
                        write_anomaly_csv(&out_dir.join("neural_cleanse.csv"), &report)?;
                        println!(
                            "neural_cleanse: max anomaly index {:?} flagged {}",
                            report.max_anomaly_index(),
                            report.flagged
                        );
                    }
                    other => {
                        return Err(siba::SibaError::Config(format!("unknown defense {other}")))
                    }
                }
            }
            Ok(())
        }
        Command::Ablate { axis, values } => {
            let config = load_config(&cli.global)?;
            let points = run_ablation(&config, axis, values, out_dir)?;
            for p in &points {
                println!("{axis} {} -> BA {:.4} ASR {:.4}", p.value, p.benign_accuracy, p.attack_success_rate);
            }
            Ok(())
        }
        Command::Transfer { archs } => {
            let config = load_config(&cli.global)?;
            let refs: Vec<&str> = archs.iter().map(String::as_str).collect();
            let cells = run_transfer_grid(&config, &refs, out_dir)?;
            for c in &cells {
                println!(
                    "{} -> {}: BA {:.4} ASR {:.4}",
                    c.surrogate_arch, c.victim_arch, c.benign_accuracy, c.attack_success_rate
                );
            }
            Ok(())
        }
    }
}
