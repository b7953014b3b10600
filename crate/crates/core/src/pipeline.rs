//! Manifest-level glue: load splits, train, embed, evaluate.

use crate::error::Result;
use crate::eval::{embed_samples, evaluate_embeddings, EmbeddingRecord, EvalConfig, RetrievalReport};
use crate::manifest::{DatasetManifest, Split};
use crate::nn::ParamStore;
use crate::preprocess::{load_split, PreprocessConfig};
use crate::train::TrainSet;
use crate::SmplGait;

pub fn load_train_set(manifest: &DatasetManifest, pre: &PreprocessConfig) -> Result<TrainSet> {
    TrainSet::new(load_split(manifest, Split::Train, pre)?)
}

/// Eval-mode embeddings of the query split followed by the gallery split.
pub fn embed_test_splits(
    model: &SmplGait,
    store: &ParamStore,
    manifest: &DatasetManifest,
    pre: &PreprocessConfig,
    cfg: &EvalConfig,
) -> Result<Vec<EmbeddingRecord>> {
    let mut out = Vec::new();
    for split in [Split::Query, Split::Gallery] {
        let samples = load_split(manifest, split, pre)?;
        out.extend(embed_samples(model, store, &samples, split, cfg)?);
    }
    Ok(out)
}

pub fn evaluate_model(
    model: &SmplGait,
    store: &ParamStore,
    manifest: &DatasetManifest,
    pre: &PreprocessConfig,
    cfg: &EvalConfig,
) -> Result<RetrievalReport> {
    let records = embed_test_splits(model, store, manifest, pre, cfg)?;
    let (query, gallery) = crate::eval::partition(records);
    evaluate_embeddings(&query, &gallery, cfg)
}
