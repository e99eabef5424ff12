//! Named tensor blob format.
//!
//! A blob is a one-line JSON manifest listing `(name, shape)` entries,
//! a newline, a sentinel line `---`, then the little-endian f64 payloads
//! concatenated in manifest order. The payload length is fully determined
//! by the manifest, so blobs can be concatenated in one stream.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Tensor, TensorError};

pub const BLOB_SENTINEL: &str = "---";

#[derive(Debug, Error)]
pub enum BlobError {
    #[error("blob i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("blob manifest: {0}")]
    Manifest(String),
    #[error("blob payload: {0}")]
    Payload(#[from] TensorError),
    #[error("blob payload truncated for entry {name}")]
    Truncated { name: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlobEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlobManifest {
    entries: Vec<BlobEntry>,
}

/// Serializes named tensors: manifest line, sentinel line, then payloads.
pub fn write_named_blob<W: Write>(
    w: &mut W,
    entries: &[(String, &Tensor)],
) -> Result<(), BlobError> {
    let manifest = BlobManifest {
        entries: entries
            .iter()
            .map(|(name, t)| BlobEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_string(&manifest)
        .map_err(|e| BlobError::Manifest(e.to_string()))?;
    writeln!(w, "{header}")?;
    writeln!(w, "{BLOB_SENTINEL}")?;
    for (_, t) in entries {
        for v in t.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads one blob from the stream, consuming exactly the bytes the manifest
/// declares. Tensors come back untracked; values must be finite.
pub fn read_named_blob<R: BufRead>(r: &mut R) -> Result<Vec<(String, Tensor)>, BlobError> {
    let mut header = String::new();
    if r.read_line(&mut header)? == 0 {
        return Err(BlobError::Manifest("missing manifest line".to_string()));
    }
    let manifest: BlobManifest = serde_json::from_str(header.trim_end())
        .map_err(|e| BlobError::Manifest(e.to_string()))?;
    let mut sentinel = String::new();
    r.read_line(&mut sentinel)?;
    if sentinel.trim_end() != BLOB_SENTINEL {
        return Err(BlobError::Manifest(format!(
            "expected sentinel {BLOB_SENTINEL:?}, got {:?}",
            sentinel.trim_end()
        )));
    }
    let mut out = Vec::with_capacity(manifest.entries.len());
    for entry in manifest.entries {
        let numel: usize = entry.shape.iter().product();
        let mut bytes = vec![0u8; numel * 8];
        r.read_exact(&mut bytes).map_err(|_| BlobError::Truncated {
            name: entry.name.clone(),
        })?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk is 8 bytes")))
            .collect();
        let t = Tensor::new(&entry.shape, values)?;
        out.push((entry.name, t));
    }
    Ok(out)
}
