//! Reproducible experiment cells and grids: generate (or load) a corpus,
//! inject noise or novelty, split, scale, train, and evaluate — one cell per
//! {setting, experiment, scaler, model} combination, summarized in the same
//! row layout as the result tables.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    split_dataset, GroupDataset, ScalerKind, ScalerParams, Setting, SplitBundle,
};
use crate::error::{DataError, EvalError, ModelError, TrainError};
use crate::eval::{auprc, auroc, ScoredSet};
use crate::gru::{GruConfig, GruModel};
use crate::model::{GadformerModel, GroupScorer, ModelConfig, ModelKind};
use crate::seeds::mix_seed;
use crate::syngen::{generate_dataset, inject_noise, inject_novelty, GenConfig};
use crate::train::{train, TrainConfig, TrainHooks, TrainResult};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("failed to write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

/// Everything a named experiment setup pins down: corpus, model shapes,
/// training hyperparameters and the grid dimensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub dataset_name: String,
    pub gen: GenConfig,
    pub model: ModelConfig,
    pub gru: GruConfig,
    pub train: TrainConfig,
    pub scalers: Vec<ScalerKind>,
    pub settings: Vec<Setting>,
    pub noise_levels: Vec<f64>,
    pub novelty_levels: Vec<f64>,
    pub normal_ratio: f64,
}

/// Desk-scale preset: small enough to train on a laptop CPU in seconds per
/// cell while the corpus stays clearly separable.
pub fn desk_preset() -> Preset {
    let gen = GenConfig {
        num_trajectories: 800,
        trajectory_len: 24,
        anomaly_fraction: 0.05,
        ..GenConfig::default()
    };
    let model = ModelConfig {
        seq_len: 24,
        input_dim: 2,
        token_dim: 16,
        ffn_hidden: 32,
        heads: 4,
        blocks: 2,
        dropout: 0.0,
        head_hidden: 16,
    };
    let gru = GruConfig { seq_len: 24, input_dim: 2, token_dim: 16, head_hidden: 16 };
    let train = TrainConfig {
        ratios: (0.6, 0.2, 0.2),
        lr: 1e-3,
        weight_decay: 1e-5,
        betas: (0.9, 0.999),
        epochs: 30,
        batch_size: 25,
        patience: 10,
        clip_max_norm: Some(1.0),
        seed: 0,
        setting: Setting::Unsupervised,
    };
    Preset {
        name: "desk".into(),
        dataset_name: "synthe".into(),
        gen,
        model,
        gru,
        train,
        scalers: vec![ScalerKind::Standard],
        settings: vec![Setting::Unsupervised, Setting::Semi],
        noise_levels: vec![0.0, 0.2, 0.5],
        novelty_levels: vec![0.01, 0.05],
        normal_ratio: 0.9,
    }
}

/// Full-scale synthetic preset with the published hyperparameters
/// (dim_pe 72, dim_em 8, dim_ffn 2048, 8 heads, 4 blocks, lr and wd 1e-5,
/// batch size 25, 100 epochs, no dropout).
pub fn synthetic_preset() -> Preset {
    let gen = GenConfig { num_trajectories: 3400, trajectory_len: 72, ..GenConfig::default() };
    let model = ModelConfig {
        seq_len: 72,
        input_dim: 2,
        token_dim: 8,
        ffn_hidden: 2048,
        heads: 8,
        blocks: 4,
        dropout: 0.0,
        head_hidden: 8,
    };
    let gru = GruConfig { seq_len: 72, input_dim: 2, token_dim: 8, head_hidden: 8 };
    let train = TrainConfig {
        ratios: (0.6, 0.2, 0.2),
        lr: 1e-5,
        weight_decay: 1e-5,
        betas: (0.9, 0.999),
        epochs: 100,
        batch_size: 25,
        patience: 10,
        clip_max_norm: Some(1.0),
        seed: 0,
        setting: Setting::Unsupervised,
    };
    Preset {
        name: "synthetic".into(),
        dataset_name: "synthe".into(),
        gen,
        model,
        gru,
        train,
        scalers: vec![ScalerKind::Standard, ScalerKind::Robust],
        settings: vec![Setting::Unsupervised, Setting::Semi],
        noise_levels: vec![0.0, 0.2, 0.5],
        novelty_levels: vec![0.01, 0.05],
        normal_ratio: 0.9,
    }
}

/// Real-data presets: trajectories come from CSV, so the grid reduces to
/// the original corpus.
pub fn amazon_preset() -> Preset {
    let mut p = synthetic_preset();
    p.name = "amazon".into();
    p.dataset_name = "amazon".into();
    p.model.dropout = 0.05;
    p.scalers = vec![ScalerKind::Robust];
    p.noise_levels = vec![0.0];
    p.novelty_levels = vec![];
    p
}

pub fn brightkite_preset() -> Preset {
    let mut p = synthetic_preset();
    p.name = "brightkite".into();
    p.dataset_name = "bright".into();
    p.model.seq_len = 500;
    p.gru.seq_len = 500;
    p.model.dropout = 0.05;
    p.train.lr = 1e-6;
    p.train.weight_decay = 1e-6;
    p.train.batch_size = 250;
    p.scalers = vec![ScalerKind::Robust];
    p.noise_levels = vec![0.0];
    p.novelty_levels = vec![];
    p
}

pub fn preset_by_name(name: &str) -> Option<Preset> {
    match name {
        "desk" => Some(desk_preset()),
        "synthetic" => Some(synthetic_preset()),
        "amazon" => Some(amazon_preset()),
        "brightkite" => Some(brightkite_preset()),
        _ => None,
    }
}

/// What a cell perturbs before splitting/evaluating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "level", rename_all = "lowercase")]
pub enum ExpKind {
    Orig,
    Noise(f64),
    Novelty(f64),
}

impl ExpKind {
    /// Table-style label: "noise .2", "novelty .01", "orig".
    pub fn label(&self) -> String {
        fn frac(level: f64) -> String {
            if level == 0.0 {
                ".0".to_string()
            } else {
                format!("{level}").trim_start_matches('0').to_string()
            }
        }
        match self {
            ExpKind::Orig => "orig".to_string(),
            ExpKind::Noise(l) => format!("noise {}", frac(*l)),
            ExpKind::Novelty(l) => format!("novelty {}", frac(*l)),
        }
    }

    /// Filesystem-safe slug: "noise-0.2".
    pub fn slug(&self) -> String {
        match self {
            ExpKind::Orig => "orig".to_string(),
            ExpKind::Noise(l) => format!("noise-{l}"),
            ExpKind::Novelty(l) => format!("novelty-{l}"),
        }
    }

    fn level_bits(&self) -> u64 {
        match self {
            ExpKind::Orig => 0,
            ExpKind::Noise(l) => 1 + (l * 1000.0).round() as u64,
            ExpKind::Novelty(l) => 100_000 + (l * 1000.0).round() as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub setting: Setting,
    pub exp: ExpKind,
    pub scaler: ScalerKind,
    pub model: ModelKind,
}

impl CellSpec {
    pub fn slug(&self) -> String {
        format!("{}_{}_{}_{}", self.setting, self.exp.slug(), self.model, self.scaler)
    }
}

/// One summary row in the layout of the result tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub setting: String,
    pub dataset: String,
    pub exp: String,
    pub model: String,
    pub scaler: String,
    pub roc: f64,
    pub auprc: f64,
}

#[derive(Debug)]
pub struct CellOutcome {
    pub row: SummaryRow,
    pub test_scores: ScoredSet,
    pub result: TrainResult,
}

/// Base corpus for a grid run. Generation gets its own seed stream so the
/// corpus is shared by every cell of the run.
pub fn build_base_dataset(preset: &Preset, master_seed: u64) -> Result<GroupDataset, RunError> {
    let gen = GenConfig { seed: mix_seed(master_seed, 0x9E0), ..preset.gen.clone() };
    Ok(generate_dataset(&gen)?)
}

/// Prepare a cell's split bundle: inject noise corpus-wide, split, inject
/// novelty into the evaluation splits, then scale with train-fit parameters.
pub fn prepare_bundle(
    base: &GroupDataset,
    preset: &Preset,
    spec: &CellSpec,
    master_seed: u64,
) -> Result<(SplitBundle, ScalerParams), RunError> {
    let ds = match spec.exp {
        ExpKind::Noise(level) if level > 0.0 => {
            inject_noise(base, level, mix_seed(master_seed, 0x401 + spec.exp.level_bits()))?
        }
        _ => base.clone(),
    };
    // The split seed is shared across cells so experiment levels stay
    // paired on the same trajectory assignment.
    let mut bundle = split_dataset(
        &ds,
        preset.train.ratios,
        preset.normal_ratio,
        spec.setting,
        mix_seed(master_seed, 0x5011),
    )?;
    if let ExpKind::Novelty(level) = spec.exp {
        if level > 0.0 {
            bundle.valid = inject_novelty(
                &bundle.valid,
                level,
                mix_seed(master_seed, 0x601 + spec.exp.level_bits()),
                &preset.gen.scale,
            )?;
            bundle.test = inject_novelty(
                &bundle.test,
                level,
                mix_seed(master_seed, 0x602 + spec.exp.level_bits()),
                &preset.gen.scale,
            )?;
        }
    }
    let scaler = ScalerParams::fit(&bundle.train, spec.scaler)?;
    bundle.train = scaler.transform(&bundle.train);
    bundle.valid = scaler.transform(&bundle.valid);
    bundle.test = scaler.transform(&bundle.test);
    Ok((bundle, scaler))
}

pub fn build_model(
    preset: &Preset,
    kind: ModelKind,
    master_seed: u64,
) -> Result<Box<dyn GroupScorer>, RunError> {
    let seed = mix_seed(master_seed, 0x700 + kind as u64);
    Ok(match kind {
        ModelKind::Gadformer => Box::new(GadformerModel::new(preset.model.clone(), seed)?),
        ModelKind::Gru => Box::new(GruModel::new(preset.gru.clone(), seed)?),
    })
}

/// Run one grid cell end to end. When `cell_dir` is given, the training
/// log, best checkpoints, test scores and an eval row are written there.
pub fn run_cell(
    base: &GroupDataset,
    preset: &Preset,
    spec: &CellSpec,
    master_seed: u64,
    cell_dir: Option<&Path>,
) -> Result<CellOutcome, RunError> {
    let (bundle, scaler) = prepare_bundle(base, preset, spec, master_seed)?;
    let mut model = build_model(preset, spec.model, master_seed)?;
    let cfg = TrainConfig {
        setting: spec.setting,
        seed: mix_seed(master_seed, 0x800),
        ..preset.train.clone()
    };

    let mut log_file = match cell_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join("training_log.jsonl");
            Some(BufWriter::new(File::create(&path).map_err(io_err(&path))?))
        }
        None => None,
    };
    let mut hooks = TrainHooks {
        log: log_file.as_mut().map(|f| f as &mut dyn std::io::Write),
        checkpoint_dir: cell_dir.map(|d| d.to_path_buf()),
        scaler: Some(scaler),
    };
    let result = train(model.as_mut(), &bundle, &cfg, &mut hooks)?;
    drop(hooks);

    let labels: Vec<u8> = result
        .scores
        .test
        .labels
        .iter()
        .map(|l| l.unwrap_or(0))
        .collect();
    let test_scores = ScoredSet::new(result.scores.test.p_hat.clone(), labels)?;
    let row = SummaryRow {
        setting: spec.setting.as_str().to_string(),
        dataset: preset.dataset_name.clone(),
        exp: spec.exp.label(),
        model: spec.model.as_str().to_string(),
        scaler: spec.scaler.as_str().to_string(),
        roc: auroc(&test_scores)?,
        auprc: auprc(&test_scores)?,
    };

    if let Some(dir) = cell_dir {
        write_scores_csv(&dir.join("scores_test.csv"), &result.scores.test.ids, &test_scores)?;
        let eval_path = dir.join("eval.json");
        let file = File::create(&eval_path).map_err(io_err(&eval_path))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &row)?;
    }

    Ok(CellOutcome { row, test_scores, result })
}

pub fn write_scores_csv(path: &Path, ids: &[String], scores: &ScoredSet) -> Result<(), RunError> {
    use std::io::Write;
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "group_id,score,label").map_err(io_err(path))?;
    for ((id, &score), &label) in ids.iter().zip(&scores.scores).zip(&scores.labels) {
        writeln!(w, "{id},{score},{label}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// The full cell list of a preset, in deterministic construction order.
pub fn grid_cells(preset: &Preset) -> Vec<CellSpec> {
    let mut exps: Vec<ExpKind> = Vec::new();
    for &l in &preset.noise_levels {
        exps.push(ExpKind::Noise(l));
    }
    for &l in &preset.novelty_levels {
        exps.push(ExpKind::Novelty(l));
    }
    if exps.is_empty() {
        exps.push(ExpKind::Orig);
    }
    let mut cells = Vec::new();
    for &setting in &preset.settings {
        for &exp in &exps {
            for &scaler in &preset.scalers {
                for model in [ModelKind::Gadformer, ModelKind::Gru] {
                    cells.push(CellSpec { setting, exp, scaler, model });
                }
            }
        }
    }
    cells
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub preset: String,
    pub seed: u64,
    pub rows: Vec<SummaryRow>,
}

/// Worker cap: GADTRAJ_THREADS, else the available parallelism, at most the
/// number of cells.
fn worker_count(cells: usize) -> usize {
    let env_cap = std::env::var("GADTRAJ_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0);
    let hw = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    env_cap.unwrap_or(hw).min(cells.max(1))
}

/// Run the whole grid, each cell in its own subdirectory, and write
/// summary.json. Cells run in parallel worker threads; every cell is
/// independently seeded so the outcome is schedule-independent.
pub fn run_experiment(
    preset: &Preset,
    master_seed: u64,
    out_dir: &Path,
) -> Result<ExperimentSummary, RunError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let base = build_base_dataset(preset, master_seed)?;
    let cells = grid_cells(preset);

    let results: Vec<Mutex<Option<Result<SummaryRow, RunError>>>> =
        cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = worker_count(cells.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let spec = &cells[i];
                let cell_dir = out_dir.join("cells").join(spec.slug());
                let outcome = run_cell(&base, preset, spec, master_seed, Some(&cell_dir))
                    .map(|o| o.row);
                *results[i].lock().unwrap() = Some(outcome);
            });
        }
    });

    let mut rows = Vec::with_capacity(cells.len());
    for slot in results {
        rows.push(slot.into_inner().unwrap().expect("worker filled every slot")?);
    }

    let summary = ExperimentSummary { preset: preset.name.clone(), seed: master_seed, rows };
    let path = out_dir.join("summary.json");
    let file = File::create(&path).map_err(io_err(&path))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &summary)?;
    Ok(summary)
}
