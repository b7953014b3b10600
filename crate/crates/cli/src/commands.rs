use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use smplgait::checkpoint::Checkpoint;
use smplgait::eval::{
    evaluate_embeddings, load_embeddings, partition, save_embeddings, EmbeddingRecord, Metrics, RetrievalReport,
};
use smplgait::manifest::{validate_manifest, DatasetManifest, Split, MANIFEST_FILE};
use smplgait::nn::ParamStore;
use smplgait::pipeline::{embed_test_splits, load_train_set};
use smplgait::synth::{generate_dataset, SplitMode};
use smplgait::train::Trainer;
use smplgait::{GaitError, SmplGait};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const SWEEP_FILE: &str = "sweep.csv";

/// A directory holding `manifest.json`, or the manifest file itself.
pub fn load_manifest(path: &Path) -> CliResult<DatasetManifest> {
    let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let manifest = DatasetManifest::load(&file)?;
    let report = validate_manifest(&manifest);
    if !report.is_ok() {
        let lines: Vec<String> = report.violations.iter().map(ToString::to_string).collect();
        return Err(GaitError::Data(format!("{}: {}", file.display(), lines.join("; "))).into());
    }
    Ok(manifest)
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path, confounded: bool) -> CliResult<()> {
    let mode = if confounded { SplitMode::Confounded } else { SplitMode::Standard };
    let manifest = generate_dataset(&cfg.synth, out, mode)?;
    cfg.write_echo(out)?;
    log::info!(
        "wrote {} sequences ({} train, {} query, {} gallery) to {}",
        manifest.sequences.len(),
        manifest.split(Split::Train).count(),
        manifest.split(Split::Query).count(),
        manifest.split(Split::Gallery).count(),
        out.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub enum Sweep {
    #[default]
    Single,
    /// One run per frame count L.
    Frames(Vec<usize>),
    /// One run per number of training identities.
    Ids(Vec<usize>),
}

fn has_test_splits(m: &DatasetManifest) -> bool {
    m.split(Split::Query).next().is_some() && m.split(Split::Gallery).next().is_some()
}

fn evaluate_loaded(
    cfg: &RunConfig,
    model: &SmplGait,
    store: &ParamStore,
    manifest: &DatasetManifest,
) -> CliResult<RetrievalReport> {
    let records = embed_test_splits(model, store, manifest, &cfg.preprocess, &cfg.eval)?;
    let (q, g) = partition(records);
    Ok(evaluate_embeddings(&q, &g, &cfg.eval)?)
}

/// Trains one model into `dir`; evaluates it when the manifest has test splits.
fn train_one(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    dir: &Path,
    resume: Option<&Path>,
) -> CliResult<Option<RetrievalReport>> {
    let data = load_train_set(manifest, &cfg.preprocess)?;
    let mut trainer = match resume {
        Some(path) => Trainer::from_checkpoint(&Checkpoint::load(path)?)?,
        None => Trainer::new(cfg.model.clone(), cfg.loss.clone(), cfg.train.clone(), data.classes.clone())?,
    };
    let effective = RunConfig {
        model: trainer.model_cfg.clone(),
        loss: trainer.loss_cfg.clone(),
        train: trainer.train_cfg.clone(),
        ..cfg.clone()
    };
    effective.write_echo(dir)?;
    log::info!(
        "training {} identities / {} sequences for {} iterations into {}",
        data.num_classes(),
        data.len(),
        trainer.total_iterations(&data),
        dir.display()
    );
    let reports = trainer.run(&data, Some(dir))?;
    if let Some(last) = reports.last() {
        log::info!("final loss {:.5} (triplet {:.5}, ce {:.5})", last.loss.total, last.loss.triplet, last.loss.ce);
    }
    if !has_test_splits(manifest) {
        return Ok(None);
    }
    let report = evaluate_loaded(&effective, &trainer.model, &trainer.store, manifest)?;
    report.write(dir)?;
    log_metrics(&report.metrics);
    Ok(Some(report))
}

fn log_metrics(m: &Metrics) {
    log::info!(
        "Rank-1 {:.4} Rank-5 {:.4} mAP {:.4} mINP {:.4} ({} queries, {} skipped)",
        m.rank1,
        m.rank5,
        m.map,
        m.minp,
        m.evaluated,
        m.skipped
    );
}

fn sweep_row(key: impl std::fmt::Display, m: &Metrics) -> String {
    format!("{key},{},{},{},{}", m.rank1, m.rank5, m.map, m.minp)
}

fn write_sweep(out: &Path, key: &str, rows: &[String]) -> CliResult<()> {
    let path = out.join(SWEEP_FILE);
    let mut text = format!("{key},rank1,rank5,mAP,mINP\n");
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path, sweep: &Sweep, resume: Option<&Path>) -> CliResult<()> {
    let manifest = load_manifest(data)?;
    match sweep {
        Sweep::Single => {
            train_one(cfg, &manifest, out, resume)?;
        }
        Sweep::Frames(values) => {
            let mut rows = Vec::new();
            for &frames in values {
                let mut run = cfg.clone();
                run.train.frames = frames;
                let report = train_one(&run, &manifest, &out.join(format!("frames_{frames:03}")), None)?;
                if let Some(r) = report {
                    rows.push(sweep_row(frames, &r.metrics));
                }
            }
            write_sweep(out, "frames", &rows)?;
        }
        Sweep::Ids(values) => {
            let subjects: Vec<u32> = manifest.subjects(Split::Train).into_iter().collect();
            let mut rows = Vec::new();
            for &n in values {
                if n > subjects.len() {
                    return Err(GaitError::Data(format!(
                        "{n} training identities requested, manifest has {}",
                        subjects.len()
                    ))
                    .into());
                }
                let keep: BTreeSet<u32> = subjects[..n].iter().copied().collect();
                let subset = manifest.restrict_train_subjects(&keep);
                let report = train_one(cfg, &subset, &out.join(format!("ids_{n:05}")), None)?;
                if let Some(r) = report {
                    rows.push(sweep_row(n, &r.metrics));
                }
            }
            write_sweep(out, "ids", &rows)?;
        }
    }
    Ok(())
}

/// Loads a checkpoint and aligns the preprocessing size with its model.
/// `strict` additionally requires the configured embedding geometry to match.
fn load_model(cfg: &RunConfig, checkpoint: &Path, strict: bool) -> CliResult<(RunConfig, SmplGait, ParamStore)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    if strict && (cfg.model.parts(), cfg.model.part_dim) != (ckpt.model.parts(), ckpt.model.part_dim) {
        return Err(CliError::Config(format!(
            "checkpoint embeds {}x{}, config expects {}x{}",
            ckpt.model.parts(),
            ckpt.model.part_dim,
            cfg.model.parts(),
            cfg.model.part_dim
        )));
    }
    let mut run = cfg.clone();
    run.model = ckpt.model.clone();
    run.preprocess.target_height = ckpt.model.input_height;
    run.preprocess.target_width = ckpt.model.input_width;
    let (model, store) = ckpt.build_model()?;
    Ok((run, model, store))
}

pub fn cmd_embed(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: &Path, strict: bool) -> CliResult<()> {
    let (run, model, store) = load_model(cfg, checkpoint, strict)?;
    let manifest = load_manifest(data)?;
    let records = embed_test_splits(&model, &store, &manifest, &run.preprocess, &run.eval)?;
    if records.is_empty() {
        return Err(GaitError::Empty("manifest has no query or gallery sequences".into()).into());
    }
    run.write_echo(out)?;
    save_embeddings(&out.join(EMBEDDINGS_FILE), &records)?;
    log::info!("embedded {} sequences into {}", records.len(), out.join(EMBEDDINGS_FILE).display());
    Ok(())
}

pub enum EvalSource {
    Checkpoint { checkpoint: PathBuf, data: PathBuf },
    Embeddings(PathBuf),
}

fn evaluate_records(cfg: &RunConfig, records: Vec<EmbeddingRecord>, dir: &Path) -> CliResult<Metrics> {
    let (q, g) = partition(records);
    let report = evaluate_embeddings(&q, &g, &cfg.eval)?;
    cfg.write_echo(dir)?;
    report.write(dir)?;
    log_metrics(&report.metrics);
    Ok(report.metrics)
}

/// Evaluates once per test fraction; with several fractions every run gets its
/// own `frac_<p>` directory.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    source: &EvalSource,
    out: &Path,
    test_fracs: &[f64],
    emit_plots: bool,
    strict: bool,
) -> CliResult<()> {
    let mut rows = Vec::new();
    match source {
        EvalSource::Embeddings(path) => {
            let file = if path.is_dir() { path.join(EMBEDDINGS_FILE) } else { path.clone() };
            let m = evaluate_records(cfg, load_embeddings(&file)?, out)?;
            rows.push(sweep_row(cfg.eval.test_frac, &m));
        }
        EvalSource::Checkpoint { checkpoint, data } => {
            let (run, model, store) = load_model(cfg, checkpoint, strict)?;
            let manifest = load_manifest(data)?;
            for &frac in test_fracs {
                let mut r = run.clone();
                r.eval.test_frac = frac;
                r.validate_eval()?;
                let dir = if test_fracs.len() > 1 { out.join(format!("frac_{frac:.2}")) } else { out.to_path_buf() };
                let records = embed_test_splits(&model, &store, &manifest, &r.preprocess, &r.eval)?;
                let m = evaluate_records(&r, records, &dir)?;
                rows.push(sweep_row(frac, &m));
            }
        }
    }
    if emit_plots {
        write_sweep(out, "test_frac", &rows)?;
    }
    Ok(())
}
