//! Checkpoint directories: `params.bin` (little-endian f64, store order) and
//! `meta.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::{ParamSpec, ParamStore};

pub const PARAMS_FILE: &str = "params.bin";
pub const META_FILE: &str = "meta.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: String,
    pub architecture_hash: String,
    pub relations: Vec<String>,
    pub dev_f1: Option<f64>,
    pub params: Vec<ParamSpec>,
}

pub fn save(dir: &Path, model: &Model, store: &ParamStore, dev_f1: Option<f64>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = CheckpointMeta {
        config: model.config.to_text(),
        architecture_hash: model.config.architecture_hash(),
        relations: model.relations.labels().to_vec(),
        dev_f1,
        params: store.specs(),
    };
    let mut blob = Vec::with_capacity(store.scalar_count() * 8);
    for (_, p) in store.iter() {
        for v in p.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let path = dir.join(PARAMS_FILE);
    fs::write(&path, blob).map_err(|e| Error::io(&path, e))?;
    let path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&meta).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Rebuilds the model from the stored config and fills in the weights.
/// Any disagreement between the metadata, the rebuilt architecture and the
/// weight file is an error.
pub fn load(dir: &Path) -> Result<(Model, ParamStore, CheckpointMeta)> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    let config = ModelConfig::parse(&meta.config)?;
    if config.architecture_hash() != meta.architecture_hash {
        return Err(Error::Checkpoint(
            "stored config does not match its architecture hash".into(),
        ));
    }
    if config.relations != meta.relations {
        return Err(Error::Checkpoint(
            "relation vocabulary differs from the stored config".into(),
        ));
    }
    let (model, mut store) = Model::new(config)?;
    if store.specs() != meta.params {
        return Err(Error::Checkpoint(
            "parameter layout differs from the rebuilt model".into(),
        ));
    }
    let path = dir.join(PARAMS_FILE);
    let blob = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if blob.len() != store.scalar_count() * 8 {
        return Err(Error::Checkpoint(format!(
            "{} holds {} bytes, expected {}",
            PARAMS_FILE,
            blob.len(),
            store.scalar_count() * 8
        )));
    }
    let mut chunks = blob.chunks_exact(8);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = f64::from_le_bytes(
                chunks
                    .next()
                    .expect("length checked")
                    .try_into()
                    .expect("8-byte chunk"),
            );
        }
    }
    Ok((model, store, meta))
}

/// Fails unless `relations` is exactly the checkpoint's label set.
pub fn check_relations(meta: &CheckpointMeta, relations: &[String]) -> Result<()> {
    if meta.relations != relations {
        return Err(Error::Checkpoint(format!(
            "relation labels {:?} do not match the checkpoint's {:?}",
            relations, meta.relations
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::model::{forward_document, prepare_document, Mode};
    use crate::synthetic::{toy_config, toy_document};

    #[test]
    fn round_trip_reproduces_logits() {
        let dir = tempfile::tempdir().unwrap();
        let (model, mut store) = Model::new(toy_config()).unwrap();
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            store.get_mut(id).data_mut()[0] += 0.01 * k as f64;
        }
        save(dir.path(), &model, &store, Some(0.5)).unwrap();
        let (loaded, loaded_store, meta) = load(dir.path()).unwrap();
        assert_eq!(meta.dev_f1, Some(0.5));
        let doc = toy_document();
        let logits = |m: &Model, s: &ParamStore| {
            let prep = prepare_document(m, &doc).unwrap();
            let mut tape = Tape::new(s);
            let out = forward_document(&mut tape, m, &prep, Mode::Eval)
                .unwrap()
                .unwrap();
            tape.value(out.logits).clone()
        };
        assert_eq!(logits(&model, &store), logits(&loaded, &loaded_store));
    }

    #[test]
    fn truncated_or_tampered_checkpoints_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (model, store) = Model::new(toy_config()).unwrap();
        save(dir.path(), &model, &store, None).unwrap();
        let bin = dir.path().join(PARAMS_FILE);
        let mut blob = fs::read(&bin).unwrap();
        blob.truncate(blob.len() - 8);
        fs::write(&bin, &blob).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Checkpoint(_))));

        save(dir.path(), &model, &store, None).unwrap();
        let meta_path = dir.path().join(META_FILE);
        let text = fs::read_to_string(&meta_path)
            .unwrap()
            .replace("tree.dim = 3", "tree.dim = 5");
        fs::write(&meta_path, text).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn relation_mismatch_is_reported() {
        let (model, store) = Model::new(toy_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &model, &store, None).unwrap();
        let (_, _, meta) = load(dir.path()).unwrap();
        assert!(check_relations(&meta, &meta.relations.clone()).is_ok());
        assert!(check_relations(&meta, &["other".to_string()]).is_err());
    }
}
