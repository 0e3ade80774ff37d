//! End-to-end attack orchestration: train the clean model, read its
//! heatmap, pick frequencies, calibrate magnitudes, poison the data,
//! train the backdoored model, score everything.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datahub::LabeledDataset;
use crate::error::{Error, Result};
use crate::heatmap::{
    compute_heatmap, select_bottomk, select_random_k, select_topk, FourierHeatmap,
    FrequencySelection,
};
use crate::metrics::{batch_image_metrics, cda as score_cda, asr as score_asr, ExperimentReport};
use crate::nncore::checkpoint::{save_checkpoint, Checkpoint, CheckpointMeta};
use crate::nncore::models::SmallConvNet;
use crate::nncore::tensor::Tensor;
use crate::nncore::train::{
    train_classifier, train_classifier_stoppable, TrainConfig, TrainHistory,
};
use crate::poisonkit::calibrate::calibrate_magnitudes_with_ssim;
use crate::poisonkit::dataset::{poison_dataset, poison_dataset_excluding, PoisonedDataset};
use crate::poisonkit::filter::{
    build_filter, partition_multitarget, MaskValues, MultiTargetFilter, PoisonFilter,
};

/// Which frequency-selection scheme drives the attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SchemeChoice {
    #[default]
    TopK,
    BottomK,
    /// `k` indices drawn uniformly at random (matched-budget ablation).
    RandomK,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    pub train: TrainConfig,
    pub heatmap_alpha: f64,
    pub heatmap_batch: usize,
    pub heatmap_seed: u64,
    pub scheme: SchemeChoice,
    pub k: usize,
    /// Seed for the random-k scheme.
    pub scheme_seed: u64,
    pub delta_p: f64,
    pub psnr_floor: f64,
    pub ssim_floor: f64,
    pub mask_values: MaskValues,
    pub value_seed: u64,
    pub rate: f64,
    pub target: u8,
    pub poison_seed: u64,
    /// Images sampled from the training set for calibration.
    pub calib_sample: usize,
    /// Scale for difference renders recorded in reports.
    pub gamma: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            train: TrainConfig::default(),
            heatmap_alpha: 4.0,
            heatmap_batch: 512,
            heatmap_seed: 17,
            scheme: SchemeChoice::TopK,
            k: 24,
            scheme_seed: 23,
            delta_p: 1.0,
            psnr_floor: 40.0,
            ssim_floor: 0.99,
            mask_values: MaskValues::Distinct,
            value_seed: 29,
            rate: 0.03,
            target: 0,
            poison_seed: 31,
            calib_sample: 256,
            gamma: 50.0,
        }
    }
}

/// Cheap stable id for artifact naming (the CLI layers its own
/// content-addressed store on top).
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Everything a standard pipeline run produces.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub clean_model: SmallConvNet,
    pub clean_history: TrainHistory,
    pub clean_cda: f64,
    pub heatmap: FourierHeatmap,
    pub selection: FrequencySelection,
    pub filter: PoisonFilter,
    pub poisoned: PoisonedDataset,
    pub model: SmallConvNet,
    pub history: TrainHistory,
    pub report: ExperimentReport,
}

/// Seeded calibration sample: images drawn from the training set.
pub fn calibration_sample(train_set: &LabeledDataset, n: usize, seed: u64) -> Vec<Tensor> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = n.min(train_set.len());
    let mut idx: Vec<usize> = (0..train_set.len()).collect();
    for k in 0..n {
        let j = rng.gen_range(k..idx.len());
        idx.swap(k, j);
    }
    idx[..n].iter().map(|&i| train_set.image(i)).collect()
}

/// Stage 1 tail: select frequencies from a heatmap and calibrate the
/// additive magnitudes against the invisibility budget.
pub fn build_calibrated_filter(
    train_set: &LabeledDataset,
    heatmap: &FourierHeatmap,
    cfg: &AttackConfig,
) -> Result<(FrequencySelection, PoisonFilter)> {
    let selection = match cfg.scheme {
        SchemeChoice::TopK => select_topk(heatmap, cfg.k)?,
        SchemeChoice::BottomK => select_bottomk(heatmap, cfg.k)?,
        SchemeChoice::RandomK => select_random_k(heatmap, cfg.k, cfg.scheme_seed)?,
    };
    let sample = calibration_sample(train_set, cfg.calib_sample, cfg.value_seed);
    let (mags, record) = calibrate_magnitudes_with_ssim(
        &selection,
        &sample,
        cfg.delta_p,
        cfg.psnr_floor,
        cfg.ssim_floor,
        cfg.mask_values,
        cfg.value_seed,
    )?;
    let mut filter = build_filter(&selection, mags, cfg.target, cfg.mask_values)?;
    filter.calibration = Some(record);
    Ok((selection, filter))
}

/// Stage 2: poison the training set, train the backdoored model, score.
pub fn poison_train_eval(
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    filter: &PoisonFilter,
    train_cfg: &TrainConfig,
    rate: f64,
    poison_seed: u64,
    gamma: f64,
    run_hash: &str,
) -> Result<(PoisonedDataset, SmallConvNet, TrainHistory, ExperimentReport)> {
    let poisoned = poison_dataset(train_set, rate, filter, poison_seed)?;
    let mut model =
        SmallConvNet::new(train_set.h, train_set.w, train_set.classes, train_cfg.seed)?;
    let history = train_classifier(&mut model, &poisoned.data, train_cfg)?;
    let report = score_attack(&model, test_set, filter, &poisoned, train_set, gamma, run_hash)?;
    Ok((poisoned, model, history, report))
}

/// Score CDA/ASR plus invisibility metrics over the actually poisoned
/// training pairs (falling back to the calibration record at rate 0).
pub fn score_attack(
    model: &SmallConvNet,
    test_set: &LabeledDataset,
    filter: &PoisonFilter,
    poisoned: &PoisonedDataset,
    train_set: &LabeledDataset,
    gamma: f64,
    run_hash: &str,
) -> Result<ExperimentReport> {
    let cda = score_cda(model, test_set)?;
    let asr = score_asr(model, test_set, filter)?;
    let (psnr_db, ssim, mean_l2) = if poisoned.poisoned_indices.is_empty() {
        match &filter.calibration {
            Some(c) => (c.achieved_mean_psnr, c.achieved_mean_ssim, c.achieved_mean_l2),
            None => (f64::INFINITY, 1.0, 0.0),
        }
    } else {
        let clean: Vec<Tensor> =
            poisoned.poisoned_indices.iter().map(|&i| train_set.image(i)).collect();
        let dirty: Vec<Tensor> =
            poisoned.poisoned_indices.iter().map(|&i| poisoned.data.image(i)).collect();
        batch_image_metrics(&clean, &dirty)?
    };
    let mut artifacts = BTreeMap::new();
    artifacts.insert("filter".into(), filter.id.clone());
    artifacts.insert("poisoned_dataset".into(), poisoned.data.id.clone());
    artifacts.insert("filter_source".into(), filter.selection.source_heatmap.clone());
    let mut report = ExperimentReport {
        cda,
        asr,
        psnr_db,
        ssim,
        mean_l2,
        gamma,
        config_hash: run_hash.to_string(),
        artifacts,
        notes: vec![
            "invisibility metrics measured over 8-bit quantized poisoned pixels".into(),
            "per-channel additive values are one calibrated realization".into(),
        ],
    };
    if let Some(c) = &filter.calibration {
        report.notes.push(format!(
            "calibration: delta_p {} psnr_floor {} achieved l2 {:.4} psnr {:.2}",
            c.delta_p, c.psnr_floor, c.achieved_mean_l2, c.achieved_mean_psnr
        ));
    }
    Ok(report)
}

/// The full standard pipeline of the attack.
pub fn run_attack_pipeline(
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    cfg: &AttackConfig,
    out_dir: Option<&Path>,
) -> Result<AttackOutcome> {
    let mut clean_model =
        SmallConvNet::new(train_set.h, train_set.w, train_set.classes, cfg.train.seed)?;
    let clean_history = train_classifier(&mut clean_model, train_set, &cfg.train)?;
    let heatmap = compute_heatmap(
        &clean_model,
        test_set,
        cfg.heatmap_alpha,
        cfg.heatmap_batch,
        cfg.heatmap_seed,
        &format!("clean-{}", config_hash(&cfg.train)),
    )?;
    run_attack_stage2(train_set, test_set, cfg, clean_model, clean_history, heatmap, out_dir)
}

/// The pipeline after a clean model and its heatmap already exist (lets
/// sweeps over rate/scheme reuse stage 1).
pub fn run_attack_stage2(
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    cfg: &AttackConfig,
    clean_model: SmallConvNet,
    clean_history: TrainHistory,
    heatmap: FourierHeatmap,
    out_dir: Option<&Path>,
) -> Result<AttackOutcome> {
    let run_hash = config_hash(cfg);
    let clean_cda = score_cda(&clean_model, test_set)?;
    let (selection, filter) = build_calibrated_filter(train_set, &heatmap, cfg)?;
    let (poisoned, model, history, mut report) = poison_train_eval(
        train_set,
        test_set,
        &filter,
        &cfg.train,
        cfg.rate,
        cfg.poison_seed,
        cfg.gamma,
        &run_hash,
    )?;
    report.artifacts.insert("clean_cda".into(), format!("{clean_cda:.4}"));
    report.notes.push(format!(
        "heatmap alpha {} batch {} seed {}",
        cfg.heatmap_alpha, cfg.heatmap_batch, cfg.heatmap_seed
    ));
    let outcome = AttackOutcome {
        clean_model,
        clean_history,
        clean_cda,
        heatmap,
        selection,
        filter,
        poisoned,
        model,
        history,
        report,
    };
    if let Some(dir) = out_dir {
        persist_outcome(&outcome, cfg, dir)?;
    }
    Ok(outcome)
}

fn persist_outcome(outcome: &AttackOutcome, cfg: &AttackConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let meta = CheckpointMeta {
        h: outcome.clean_model.h,
        w: outcome.clean_model.w,
        num_classes: outcome.clean_model.num_classes,
        epochs: cfg.train.epochs,
        seed: cfg.train.seed,
        final_train_accuracy: outcome.clean_history.last().and_then(|e| e.accuracy),
        final_val_accuracy: Some(outcome.clean_cda / 100.0),
    };
    save_checkpoint(
        dir.join("clean_model.ckpt"),
        &Checkpoint::of_classifier(&outcome.clean_model, meta.clone()),
    )?;
    let meta2 = CheckpointMeta {
        final_train_accuracy: outcome.history.last().and_then(|e| e.accuracy),
        final_val_accuracy: Some(outcome.report.cda / 100.0),
        ..meta
    };
    save_checkpoint(
        dir.join("poisoned_model.ckpt"),
        &Checkpoint::of_classifier(&outcome.model, meta2),
    )?;
    outcome.heatmap.save(dir, "heatmap")?;
    std::fs::write(dir.join("filter.json"), serde_json::to_vec_pretty(&outcome.filter)?)?;
    outcome.poisoned.save(dir.join("poisoned_data"))?;
    std::fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&outcome.report)?)?;
    std::fs::write(dir.join("attack_config.json"), serde_json::to_vec_pretty(cfg)?)?;
    Ok(())
}

/// Run stage 2 with a filter generated elsewhere (cross-filter attack).
/// The report carries the filter's source model id.
pub fn apply_foreign_filter(
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    filter: &PoisonFilter,
    train_cfg: &TrainConfig,
    rate: f64,
    poison_seed: u64,
    out_dir: Option<&Path>,
) -> Result<(PoisonedDataset, SmallConvNet, ExperimentReport)> {
    if filter.h != train_set.h || filter.w != train_set.w {
        return Err(Error::dimension(format!(
            "filter grid {}x{} does not match dataset {}x{}",
            filter.h, filter.w, train_set.h, train_set.w
        )));
    }
    let run_hash = config_hash(&(&filter.id, rate, poison_seed, &train_cfg));
    let (poisoned, model, _history, mut report) = poison_train_eval(
        train_set, test_set, filter, train_cfg, rate, poison_seed, 50.0, &run_hash,
    )?;
    report.notes.push(format!("foreign filter from {}", filter.selection.source_heatmap));
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
    }
    Ok((poisoned, model, report))
}

/// Multi-target outcome: one filter per target class and per-class ASRs.
#[derive(Debug, Clone)]
pub struct MultiTargetOutcome {
    pub filter: MultiTargetFilter,
    pub model: SmallConvNet,
    pub cda: f64,
    pub per_class_asr: Vec<f64>,
}

/// Multi-target attack: split the selection across `targets`, poison
/// `per_class_rate` of the training set per class (disjoint victim
/// sets), train once, score per-class ASRs.
pub fn run_multitarget_attack(
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    heatmap: &FourierHeatmap,
    cfg: &AttackConfig,
    targets: &[u8],
    per_class_rate: f64,
) -> Result<MultiTargetOutcome> {
    let shared = match cfg.scheme {
        SchemeChoice::TopK => select_topk(heatmap, cfg.k)?,
        SchemeChoice::BottomK => select_bottomk(heatmap, cfg.k)?,
        SchemeChoice::RandomK => select_random_k(heatmap, cfg.k, cfg.scheme_seed)?,
    };
    let parts = partition_multitarget(&shared, targets, cfg.poison_seed)?;
    let sample = calibration_sample(train_set, cfg.calib_sample, cfg.value_seed);
    let mut filters = Vec::with_capacity(parts.len());
    for (part, &target) in parts.iter().zip(targets) {
        let (mags, record) = calibrate_magnitudes_with_ssim(
            part,
            &sample,
            cfg.delta_p,
            cfg.psnr_floor,
            cfg.ssim_floor,
            cfg.mask_values,
            cfg.value_seed,
        )?;
        let mut f = build_filter(part, mags, target, cfg.mask_values)?;
        f.calibration = Some(record);
        filters.push(f);
    }

    // poison class by class over disjoint victim sets
    let mut working = train_set.clone();
    let mut all_poisoned: Vec<usize> = Vec::new();
    for (n, f) in filters.iter().enumerate() {
        let p = poison_dataset_excluding(
            &working,
            per_class_rate,
            f,
            cfg.poison_seed.wrapping_add(n as u64),
            &all_poisoned,
        )?;
        all_poisoned.extend_from_slice(&p.poisoned_indices);
        working = p.data;
    }

    let mut model =
        SmallConvNet::new(train_set.h, train_set.w, train_set.classes, cfg.train.seed)?;
    train_classifier(&mut model, &working, &cfg.train)?;
    let cda = score_cda(&model, test_set)?;
    let per_class_asr = filters
        .iter()
        .map(|f| score_asr(&model, test_set, f))
        .collect::<Result<Vec<f64>>>()?;
    Ok(MultiTargetOutcome {
        filter: MultiTargetFilter { shared, per_class: filters },
        model,
        cda,
        per_class_asr,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndToEndConfig {
    pub attack: AttackConfig,
    /// Total epoch budget across both phases.
    pub epoch_budget: usize,
    /// Plateau test: stop phase 1 when val accuracy moves less than this
    /// many points over the window.
    pub plateau_points: f64,
    pub plateau_window: usize,
}

impl Default for EndToEndConfig {
    fn default() -> Self {
        EndToEndConfig {
            attack: AttackConfig::default(),
            epoch_budget: 8,
            plateau_points: 0.5,
            plateau_window: 3,
        }
    }
}

/// Single-model variant: train to a mid-training checkpoint, compute the
/// heatmap there, poison, then resume training the same model on the
/// mixed data. Returns the outcome plus the number of phase-1 epochs.
pub fn run_end_to_end(
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    cfg: &EndToEndConfig,
    out_dir: Option<&Path>,
) -> Result<(AttackOutcome, usize)> {
    let acfg = &cfg.attack;
    let mut model =
        SmallConvNet::new(train_set.h, train_set.w, train_set.classes, acfg.train.seed)?;

    // phase 1: at most half the budget, earlier on plateau
    let phase1_cap = (cfg.epoch_budget / 2).max(1);
    let mut val_accs: Vec<f64> = Vec::new();
    let phase1_cfg = TrainConfig { epochs: phase1_cap, ..acfg.train.clone() };
    let window = cfg.plateau_window;
    let points = cfg.plateau_points;
    let history1 = train_classifier_stoppable(&mut model, train_set, &phase1_cfg, None, |m, _| {
        let acc = score_cda(m, test_set).unwrap_or(0.0);
        val_accs.push(acc);
        val_accs.len() >= window
            && (val_accs[val_accs.len() - window..]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
                - val_accs[val_accs.len() - window..]
                    .iter()
                    .cloned()
                    .fold(f64::INFINITY, f64::min))
                <= points
    })?;
    let phase1_epochs = history1.len();

    let checkpoint_cda = *val_accs.last().unwrap_or(&0.0);
    let heatmap = compute_heatmap(
        &model,
        test_set,
        acfg.heatmap_alpha,
        acfg.heatmap_batch,
        acfg.heatmap_seed,
        "end-to-end-checkpoint",
    )?;
    let (selection, filter) = build_calibrated_filter(train_set, &heatmap, acfg)?;
    let poisoned = poison_dataset(train_set, acfg.rate, &filter, acfg.poison_seed)?;

    // phase 2: resume the same model on the mixed data
    let phase2_cfg = TrainConfig {
        epochs: cfg.epoch_budget - phase1_epochs,
        seed: acfg.train.seed.wrapping_add(1),
        ..acfg.train.clone()
    };
    let history2 = train_classifier(&mut model, &poisoned.data, &phase2_cfg)?;

    let run_hash = config_hash(cfg);
    let mut report =
        score_attack(&model, test_set, &filter, &poisoned, train_set, acfg.gamma, &run_hash)?;
    report.notes.push(format!(
        "end-to-end variant: checkpoint after {phase1_epochs} epochs at val {checkpoint_cda:.2}"
    ));

    let mut history = history1;
    history.extend(history2);
    let outcome = AttackOutcome {
        clean_model: model.clone(),
        clean_history: Vec::new(),
        clean_cda: checkpoint_cda,
        heatmap,
        selection,
        filter,
        poisoned,
        model,
        history,
        report,
    };
    if let Some(dir) = out_dir {
        persist_outcome(&outcome, acfg, dir)?;
    }
    Ok((outcome, phase1_epochs))
}
