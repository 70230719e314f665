//! Acceptance suite: one pass/fail line per criterion, all evaluated even
//! when an earlier criterion fails. Heavy fixtures (trained models,
//! synthesized triggers) are built once and shared.
//!
//! The "desk-scale" runs use the synthetic 32x32x3 ten-class dataset and a
//! reduced training recipe so the whole suite completes on a single CPU
//! core. Thresholds follow the reduced-recipe tolerances.

use std::sync::OnceLock;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use siba::defense::{
    detection_report, fine_prune, neural_cleanse, scale_up_score, strip_entropy, strip_scores,
    FlagDirection, NeuralCleanseConfig, StripConfig, ANOMALY_THRESHOLD,
};
use siba::metrics::{attack_success_rate, benign_accuracy, mean_ssim, ssim};
use siba::model::{Architecture, ClassifierHandle};
use siba::poisoning::{
    amplify_trigger, baseline_random_trigger, baseline_sparse_trigger, make_poison_plan,
    poison_test_set, poison_training_set,
};
use siba::synthesis::{
    lemma1_bruteforce_projection, linf_sign_step, poisoned_loss_and_gradient, synthesize_trigger,
    topk_mask,
    SynthesisConfig,
};
use siba::synthetic::synthetic_split;
use siba::train::{train_classifier, TrainConfig};
use siba::types::{ImageShape, LabeledImageSet, LabelRule, TriggerPattern};

const EPS: f32 = 8.0 / 255.0;
const K_BUDGET: usize = 100;
const TRAIN_N: usize = 2000;
const TEST_N: usize = 400;
const CLASSES: usize = 10;
const EPOCHS: usize = 12;

fn shape() -> ImageShape {
    ImageShape::new(32, 32, 3).unwrap()
}

fn recipe(arch: Architecture, seed: u64) -> TrainConfig {
    TrainConfig {
        arch,
        epochs: EPOCHS,
        initial_lr: 0.02,
        lr_milestones: vec![8, 10],
        batch_size: 64,
        augment_crop: false,
        augment_flip: false,
        seed,
        ..Default::default()
    }
}

fn synth_config(rule: LabelRule, seed: u64) -> SynthesisConfig {
    SynthesisConfig {
        batch_size: 128,
        step_size: 0.2,
        iterations: 200,
        mask_update_period: 5,
        k_budget: K_BUDGET,
        eps_budget: EPS,
        label_rule: rule,
        spatial_grouping: false,
        seed,
    }
}

/// Everything expensive, built once.
struct Fixture {
    train: LabeledImageSet,
    test: LabeledImageSet,
    clean_ba: f64,
    surrogate: ClassifierHandle,
    trigger: TriggerPattern,
    victim: ClassifierHandle,
    victim_ba: f64,
    victim_asr: f64,
    poisoned_test: LabeledImageSet,
    clean_ref: LabeledImageSet,
}

fn fixture() -> &'static Fixture {
    static FIX: OnceLock<Fixture> = OnceLock::new();
    FIX.get_or_init(|| {
        let rule = LabelRule::all_to_one(0);
        let (train, test) = synthetic_split(TRAIN_N, TEST_N, CLASSES, shape(), 1).unwrap();

        eprintln!("[fixture] training the clean baseline victim...");
        let (clean_model, _) =
            train_classifier(&train, Some(&test), &recipe(Architecture::SmallResnet, 2)).unwrap();
        let clean_ba = benign_accuracy(&clean_model, &test).unwrap();
        eprintln!("[fixture] clean baseline BA = {clean_ba:.4}");

        eprintln!("[fixture] training the surrogate...");
        let (surrogate, _) =
            train_classifier(&train, Some(&test), &recipe(Architecture::SmallResnet, 3)).unwrap();

        eprintln!("[fixture] synthesizing the trigger...");
        let trigger =
            synthesize_trigger(&surrogate, &train, &synth_config(rule, 3)).unwrap().final_trigger;

        eprintln!("[fixture] training the backdoored victim (1% poisoning)...");
        let plan = make_poison_plan(&train, 0.01, rule, trigger.clone(), 4).unwrap();
        let poisoned_train = poison_training_set(&train, &plan).unwrap();
        let (victim, _) =
            train_classifier(&poisoned_train, Some(&test), &recipe(Architecture::SmallResnet, 4))
                .unwrap();

        let poisoned_test = poison_test_set(&test, &trigger, rule).unwrap();
        let keep: Vec<usize> = (0..test.len()).filter(|&i| test.label(i) != 0).collect();
        let clean_ref = test.subset(&keep).unwrap();
        let victim_ba = benign_accuracy(&victim, &test).unwrap();
        let victim_asr = attack_success_rate(&victim, &poisoned_test).unwrap();
        eprintln!("[fixture] victim BA = {victim_ba:.4}, ASR = {victim_asr:.4}");

        Fixture {
            train,
            test,
            clean_ba,
            surrogate,
            trigger,
            victim,
            victim_ba,
            victim_asr,
            poisoned_test,
            clean_ref,
        }
    })
}

struct Tally {
    failures: Vec<String>,
}

impl Tally {
    fn new() -> Self {
        Tally { failures: Vec::new() }
    }

    fn check(&mut self, id: &str, ok: bool, detail: String) {
        let verdict = if ok { "PASS" } else { "FAIL" };
        println!("ACCEPTANCE {id}: {verdict} - {detail}");
        if !ok {
            self.failures.push(format!("{id}: {detail}"));
        }
    }
}

// ---- criterion 1: analytical projection vs exhaustive enumeration --------

fn criterion_1(t: &mut Tally) {
    let s = ImageShape::new(2, 2, 3).unwrap(); // 12 elements
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut mismatches = 0;
    let trials = 200;
    for _ in 0..trials {
        let gradient: Vec<f32> =
            (0..s.pixel_count()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let k = rng.gen_range(1..=s.pixel_count());
        let alpha = rng.gen_range(0.05f32..0.5);
        let fast = topk_mask(&gradient, s, k).unwrap();
        let v = linf_sign_step(&vec![0.0; gradient.len()], &gradient, alpha, EPS).unwrap();
        let (_, oracle_support) = lemma1_bruteforce_projection(&v, &gradient, k, alpha).unwrap();
        if fast.support() != oracle_support {
            mismatches += 1;
        }
    }
    t.check(
        "1",
        mismatches == 0,
        format!("top-k projection matched subset enumeration in {}/{trials} random trials", trials - mismatches),
    );
}

// ---- criterion 2: L0/Linf constraint invariants ---------------------------

fn criterion_2(t: &mut Tally) {
    // the synthesis loop asserts both constraints at every iteration; here we
    // drive several budget combinations end to end and re-verify the results
    let s = ImageShape::new(8, 8, 3).unwrap();
    let (data, _) = synthetic_split(120, 10, 4, s, 7).unwrap();
    let model = ClassifierHandle::new(Architecture::SmallCnn, s, 4, 7).unwrap();
    let mut violations = 0;
    let mut runs = 0;
    for (k, eps, kp) in [(10, EPS, 1), (25, 0.05, 3), (192, 0.01, 5), (1, 0.2, 2)] {
        let config = SynthesisConfig {
            batch_size: 32,
            iterations: 12,
            mask_update_period: kp,
            k_budget: k,
            eps_budget: eps,
            label_rule: LabelRule::all_to_one(0),
            ..Default::default()
        };
        let trigger = synthesize_trigger(&model, &data, &config).unwrap().final_trigger;
        runs += 1;
        if trigger.l0() > k || trigger.linf() > eps + 1e-6 {
            violations += 1;
        }
    }
    t.check(
        "2",
        violations == 0,
        format!("L0 <= k and Linf <= eps + 1e-6 held across {runs} synthesis configurations (per-iteration asserts active)"),
    );
}

// ---- criterion 3: gradient vs central finite differences ------------------

fn criterion_3(t: &mut Tally) {
    let s = ImageShape::new(8, 8, 3).unwrap();
    let model = ClassifierHandle::new_with_dtype(
        Architecture::SmallCnn,
        s,
        4,
        11,
        candle_core::DType::F64,
    )
    .unwrap();
    let (data, _) = synthetic_split(16, 4, 4, s, 11).unwrap();
    let rule = LabelRule::all_to_one(0);
    let trigger = vec![0.01f32; s.pixel_count()];
    let (_, grad) = poisoned_loss_and_gradient(&model, &data, &trigger, rule).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let step = 1e-4f32;
    let mut max_rel = 0.0f64;
    for _ in 0..10 {
        let j = rng.gen_range(0..trigger.len());
        let mut plus = trigger.clone();
        plus[j] += step;
        let mut minus = trigger.clone();
        minus[j] -= step;
        let (lp, _) = poisoned_loss_and_gradient(&model, &data, &plus, rule).unwrap();
        let (lm, _) = poisoned_loss_and_gradient(&model, &data, &minus, rule).unwrap();
        let fd = (lp - lm) / (2.0 * step as f64);
        let rel = (grad[j] as f64 - fd).abs() / fd.abs().max(1e-8);
        max_rel = max_rel.max(rel);
    }
    t.check(
        "3",
        max_rel < 1e-3,
        format!("max relative error vs central differences at 10 coordinates = {max_rel:.2e} (< 1e-3)"),
    );
}

// ---- criterion 4: desk-scale headline reproduction ------------------------

fn criterion_4(t: &mut Tally) {
    let f = fixture();
    let ba_ok = f.victim_ba >= f.clean_ba - 0.02;
    let asr_ok = f.victim_asr >= 0.85;
    t.check(
        "4",
        ba_ok && asr_ok,
        format!(
            "victim BA {:.4} vs clean {:.4} (within 2 points: {ba_ok}), ASR {:.4} (>= 0.85 reduced recipe: {asr_ok})",
            f.victim_ba, f.clean_ba, f.victim_asr
        ),
    );
}

// ---- criterion 5: baseline ordering ---------------------------------------

fn criterion_5(t: &mut Tally) {
    let f = fixture();
    let rule = LabelRule::all_to_one(0);

    let sparse =
        baseline_sparse_trigger(&f.surrogate, &f.train, &synth_config(rule, 3)).unwrap().final_trigger;
    let random = baseline_random_trigger(shape(), K_BUDGET, EPS, 3).unwrap();

    let asr_of = |trigger: &TriggerPattern, seed: u64| -> f64 {
        let plan = make_poison_plan(&f.train, 0.01, rule, trigger.clone(), 4).unwrap();
        let poisoned = poison_training_set(&f.train, &plan).unwrap();
        let (victim, _) =
            train_classifier(&poisoned, None, &recipe(Architecture::SmallResnet, seed)).unwrap();
        attack_success_rate(&victim, &poison_test_set(&f.test, trigger, rule).unwrap()).unwrap()
    };
    eprintln!("[5] training sparse-baseline victim...");
    let asr_sparse = asr_of(&sparse, 4);
    eprintln!("[5] training random-baseline victim...");
    let asr_random = asr_of(&random, 4);
    let ordered = f.victim_asr > asr_sparse && asr_sparse > asr_random;
    let random_low = asr_random < 0.2;
    t.check(
        "5",
        ordered && random_low,
        format!(
            "ASR optimized {:.4} > sparse {asr_sparse:.4} > random {asr_random:.4} ({ordered}); random < 0.2 ({random_low})",
            f.victim_asr
        ),
    );
}

// ---- criterion 6: stealthiness --------------------------------------------

fn criterion_6(t: &mut Tally) {
    let f = fixture();
    let s = mean_ssim(&f.poisoned_test, &f.clean_ref).unwrap();
    let l0 = f.trigger.l0();
    let linf = f.trigger.linf();
    let ok = s >= 0.98 && l0 <= K_BUDGET && linf <= EPS + 1e-6;
    t.check(
        "6",
        ok,
        format!("mean SSIM {s:.4} (>= 0.98), L0 {l0} (<= {K_BUDGET}), Linf {linf:.4} (<= {EPS:.4})"),
    );
}

// ---- criterion 7: all-to-all extension ------------------------------------

fn criterion_7(t: &mut Tally) {
    let f = fixture();
    let rule = LabelRule::all_to_all();
    eprintln!("[7] synthesizing the all-to-all trigger...");
    let trigger =
        synthesize_trigger(&f.surrogate, &f.train, &synth_config(rule, 5)).unwrap().final_trigger;
    eprintln!("[7] training the all-to-all victim (10% poisoning)...");
    let plan = make_poison_plan(&f.train, 0.10, rule, trigger.clone(), 5).unwrap();
    let poisoned = poison_training_set(&f.train, &plan).unwrap();
    let (victim, _) = train_classifier(
        &poisoned,
        Some(&f.test),
        &recipe(Architecture::SmallResnet, 5),
    )
    .unwrap();
    let ba = benign_accuracy(&victim, &f.test).unwrap();
    let asr =
        attack_success_rate(&victim, &poison_test_set(&f.test, &trigger, rule).unwrap()).unwrap();
    let ok = ba >= f.clean_ba - 0.02 && asr >= 0.80;
    t.check(
        "7",
        ok,
        format!("all-to-all BA {ba:.4} vs clean {:.4}, ASR {asr:.4} (>= 0.80)", f.clean_ba),
    );
}

// ---- criterion 8: limited-data surrogate ----------------------------------

fn criterion_8(t: &mut Tally) {
    let f = fixture();
    let rule = LabelRule::all_to_one(0);
    let n = f.train.len() / 10;
    let limited = f.train.subset(&(0..n).collect::<Vec<_>>()).unwrap();
    eprintln!("[8] training the 10%-data surrogate ({n} samples)...");
    let (surrogate, _) =
        train_classifier(&limited, None, &recipe(Architecture::SmallResnet, 6)).unwrap();
    let trigger =
        synthesize_trigger(&surrogate, &limited, &synth_config(rule, 6)).unwrap().final_trigger;
    eprintln!("[8] training the victim against the limited-data trigger...");
    let plan = make_poison_plan(&f.train, 0.01, rule, trigger.clone(), 6).unwrap();
    let poisoned = poison_training_set(&f.train, &plan).unwrap();
    let (victim, _) =
        train_classifier(&poisoned, None, &recipe(Architecture::SmallResnet, 6)).unwrap();
    let asr =
        attack_success_rate(&victim, &poison_test_set(&f.test, &trigger, rule).unwrap()).unwrap();
    t.check("8", asr >= 0.85, format!("victim ASR from a 10%-data surrogate = {asr:.4} (>= 0.85)"));
}

// ---- criterion 9: amplified triggers --------------------------------------

fn criterion_9(t: &mut Tally) {
    let f = fixture();
    let rule = LabelRule::all_to_one(0);
    let asr_at = |eps_test: f32| -> f64 {
        let amplified = amplify_trigger(&f.trigger, eps_test).unwrap();
        let poisoned = poison_test_set(&f.test, &amplified, rule).unwrap();
        attack_success_rate(&f.victim, &poisoned).unwrap()
    };
    let base = asr_at(EPS);
    let strong = asr_at(2.0 * EPS);
    t.check(
        "9",
        strong >= base - 0.02,
        format!("ASR at eps_test 16/255 = {strong:.4} vs 8/255 = {base:.4} (within -0.02)"),
    );
}

// ---- criterion 10: defense resistance -------------------------------------

fn criterion_10(t: &mut Tally) {
    let f = fixture();
    let n = 150.min(f.poisoned_test.len()).min(f.test.len());
    let benign_stream = f.test.subset(&(0..n).collect::<Vec<_>>()).unwrap();
    let poisoned_stream = f.poisoned_test.subset(&(0..n).collect::<Vec<_>>()).unwrap();
    let clean_validation = f.train.subset(&(0..f.train.len() / 5).collect::<Vec<_>>()).unwrap();

    // (a) Neural Cleanse stays below the anomaly threshold
    eprintln!("[10a] running neural cleanse...");
    let nc_cfg = NeuralCleanseConfig { epochs: 5, batch_size: 64, seed: 1, ..Default::default() };
    let nc = neural_cleanse(&f.victim, &benign_stream, &nc_cfg).unwrap();
    let max_idx = nc.max_anomaly_index().unwrap();
    let a_ok = max_idx < ANOMALY_THRESHOLD;

    // (b) STRIP entropy distributions overlap
    eprintln!("[10b] scoring STRIP entropies...");
    let strip_cfg = StripConfig { n_overlays: 32, ..Default::default() };
    let benign_h = strip_scores(&f.victim, &benign_stream, &clean_validation, &strip_cfg).unwrap();
    let poison_h =
        strip_scores(&f.victim, &poisoned_stream, &clean_validation, &strip_cfg).unwrap();
    // sweep every candidate threshold: flag when entropy <= threshold
    let mut b_ok = true;
    let mut best = (0.0f64, 1.0f64);
    for &threshold in benign_h.iter().chain(&poison_h) {
        let tpr = poison_h.iter().filter(|&&h| h <= threshold).count() as f64 / n as f64;
        let fpr = benign_h.iter().filter(|&&h| h <= threshold).count() as f64 / n as f64;
        if tpr >= 0.9 && fpr <= 0.1 {
            b_ok = false;
            best = (tpr, fpr);
        }
    }

    // (c) Fine-Pruning keeps the backdoor while accuracy holds
    eprintln!("[10c] pruning curve...");
    let channels = f.victim.arch().penultimate_channels();
    let steps: Vec<usize> = (0..=4).map(|i| i * channels / 8).collect(); // up to half
    let curve =
        fine_prune(&f.victim, &clean_validation, &f.test, &f.poisoned_test, &steps).unwrap();
    let base_ba = curve[0].benign_accuracy;
    let c_ok = curve
        .iter()
        .all(|p| p.attack_success_rate >= 0.8 && p.benign_accuracy >= base_ba - 0.05);

    // (d) Scale-Up leaves a usable attack behind
    eprintln!("[10d] scale-up filtering...");
    let scales = [2.0f32, 3.0, 4.0, 5.0, 6.0];
    let preds = f.victim.predict_dataset(&poisoned_stream).unwrap();
    let mut surviving = 0;
    for i in 0..n {
        let score = scale_up_score(&f.victim, poisoned_stream.image(i), &scales).unwrap();
        if score < 0.8 && preds[i] == poisoned_stream.label(i) {
            surviving += 1;
        }
    }
    let post_asr = surviving as f64 / n as f64;
    let d_ok = post_asr >= 0.35;

    t.check(
        "10",
        a_ok && b_ok && c_ok && d_ok,
        format!(
            "NC max index {max_idx:.3} < 2 ({a_ok}); STRIP no threshold with TPR >= 0.9 at FPR <= 0.1 ({b_ok}, offender TPR {:.2}/FPR {:.2}); fine-prune keeps ASR >= 0.8 & BA drop <= 5pts to half channels ({c_ok}); scale-up post-defense ASR {post_asr:.4} >= 0.35 ({d_ok})",
            best.0, best.1
        ),
    );
}

// ---- criterion 11: metric oracles -----------------------------------------

fn criterion_11(t: &mut Tally) {
    // AUROC vs brute-force pair counting
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut auroc_exact = true;
    for _ in 0..20 {
        let n_p = rng.gen_range(1..=200);
        let n_b = rng.gen_range(1..=200);
        let poisoned: Vec<f64> = (0..n_p).map(|_| rng.gen_range(0..20) as f64 / 20.0).collect();
        let benign: Vec<f64> = (0..n_b).map(|_| rng.gen_range(0..20) as f64 / 20.0).collect();
        let report =
            detection_report(&poisoned, &benign, 0.5, FlagDirection::HighIsPoisoned).unwrap();
        let mut pairs = 0.0;
        for &p in &poisoned {
            for &b in &benign {
                pairs += if p > b {
                    1.0
                } else if p == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let oracle = pairs / (n_p * n_b) as f64;
        if (report.auroc - oracle).abs() > 1e-12 {
            auroc_exact = false;
        }
    }

    // SSIM self-similarity
    let s = ImageShape::new(16, 16, 3).unwrap();
    let img: Vec<f32> = (0..s.pixel_count()).map(|i| (i % 19) as f32 / 19.0).collect();
    let self_ssim = ssim(&img, &img, s).unwrap();
    let ssim_ok = (self_ssim - 1.0).abs() <= 1e-9;

    // STRIP entropy of a uniform-logit model
    let model = ClassifierHandle::new(Architecture::SmallCnn, s, 10, 1).unwrap();
    for var in model.params().values() {
        let zeros =
            candle_core::Tensor::zeros(var.shape(), var.dtype(), var.device()).unwrap();
        var.set(&zeros).unwrap();
    }
    let pool_images = (0..8).map(|i| vec![i as f32 / 10.0; s.pixel_count()]).collect();
    let pool = LabeledImageSet::new(pool_images, vec![0; 8], 10, s).unwrap();
    let h = strip_entropy(&model, &img, &pool, &StripConfig::default()).unwrap();
    let strip_ok = (h - (10.0f64).ln()).abs() <= 1e-6;

    t.check(
        "11",
        auroc_exact && ssim_ok && strip_ok,
        format!(
            "AUROC matches pair counting exactly ({auroc_exact}); self-SSIM {self_ssim:.12} ({ssim_ok}); uniform-model STRIP entropy {h:.12} vs ln 10 ({strip_ok})"
        ),
    );
}

#[test]
fn acceptance() {
    let mut t = Tally::new();
    criterion_1(&mut t);
    criterion_2(&mut t);
    criterion_3(&mut t);
    criterion_4(&mut t);
    criterion_5(&mut t);
    criterion_6(&mut t);
    criterion_7(&mut t);
    criterion_8(&mut t);
    criterion_9(&mut t);
    criterion_10(&mut t);
    criterion_11(&mut t);
    assert!(
        t.failures.is_empty(),
        "acceptance failures:\n{}",
        t.failures.join("\n")
    );
}
