//! Checkpoint serialization: a JSON header line carrying the model config,
//! followed by one named blob of trainable parameters and one of frozen
//! masks. Loading reconstructs the canonical layout and copies values in,
//! so round-trips are bitwise exact.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::tensor::{read_named_blob, write_named_blob, BlobError};

use super::{validate_params, zero_params, ModelConfig, ModelError, ModelParams};

/// Magic string identifying checkpoint files.
pub const CHECKPOINT_FORMAT: &str = "cegnn-checkpoint-v1";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    config: ModelConfig,
}

fn io_err(e: std::io::Error) -> ModelError {
    ModelError::Checkpoint(format!("io: {e}"))
}

fn blob_err(e: BlobError) -> ModelError {
    ModelError::Checkpoint(format!("blob: {e}"))
}

/// Writes config, parameters, and masks. The parameter layout is validated
/// against the config first.
pub fn save_checkpoint(
    w: &mut impl Write,
    cfg: &ModelConfig,
    params: &ModelParams,
) -> Result<(), ModelError> {
    validate_params(cfg, params)?;
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_string(),
        config: cfg.clone(),
    };
    let line = serde_json::to_string(&header)
        .map_err(|e| ModelError::Checkpoint(format!("header: {e}")))?;
    writeln!(w, "{line}").map_err(io_err)?;

    let named = params.named();
    let refs: Vec<(String, &crate::tensor::Tensor)> =
        named.iter().map(|(n, t)| (n.clone(), t)).collect();
    write_named_blob(w, &refs).map_err(blob_err)?;

    let masks = params.named_masks();
    let mask_refs: Vec<(String, &crate::tensor::Tensor)> =
        masks.iter().map(|(n, t)| (n.clone(), t)).collect();
    write_named_blob(w, &mask_refs).map_err(blob_err)?;
    Ok(())
}

/// Reads a checkpoint, validating names and shapes against the stored
/// config before accepting any values.
pub fn load_checkpoint(r: &mut impl BufRead) -> Result<(ModelConfig, ModelParams), ModelError> {
    let mut line = String::new();
    r.read_line(&mut line).map_err(io_err)?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| ModelError::Checkpoint(format!("header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(ModelError::Checkpoint(format!(
            "unknown format {:?}",
            header.format
        )));
    }
    let cfg = header.config;
    let entries = read_named_blob(r).map_err(blob_err)?;
    let mask_entries = read_named_blob(r).map_err(blob_err)?;

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(io_err)? != 0 {
        return Err(ModelError::Checkpoint(
            "trailing bytes after mask blob".to_string(),
        ));
    }

    let mut params = zero_params(&cfg)?;
    let mut iter = entries.iter();
    let mut failure: Option<ModelError> = None;
    params.for_each_named_mut(&mut |name, t| {
        if failure.is_some() {
            return;
        }
        match iter.next() {
            Some((en, et)) if en == name && et.shape() == t.shape() => {
                t.values_mut().copy_from_slice(et.values());
            }
            Some((en, et)) => {
                failure = Some(ModelError::ParamShape {
                    name: name.to_string(),
                    expected: format!("{name} {:?}", t.shape()),
                    got: format!("{en} {:?}", et.shape()),
                });
            }
            None => {
                failure = Some(ModelError::Checkpoint(format!(
                    "missing parameter {name}"
                )));
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if iter.next().is_some() {
        return Err(ModelError::Checkpoint(
            "surplus parameter entries".to_string(),
        ));
    }

    let mut iter = mask_entries.iter();
    let mut failure: Option<ModelError> = None;
    params.for_each_mask_mut(&mut |name, t| {
        if failure.is_some() {
            return;
        }
        match iter.next() {
            Some((en, et)) if en == name && et.shape() == t.shape() => {
                t.values_mut().copy_from_slice(et.values());
            }
            Some((en, et)) => {
                failure = Some(ModelError::ParamShape {
                    name: name.to_string(),
                    expected: format!("{name} {:?}", t.shape()),
                    got: format!("{en} {:?}", et.shape()),
                });
            }
            None => {
                failure = Some(ModelError::Checkpoint(format!("missing mask {name}")));
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if iter.next().is_some() {
        return Err(ModelError::Checkpoint("surplus mask entries".to_string()));
    }

    Ok((cfg, params))
}
