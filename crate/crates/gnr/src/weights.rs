//! Checkpoint persistence: a JSON manifest (header + per-tensor name, shape,
//! offset) followed by a raw little-endian `f64` blob.
//!
//! Loading is shape-checked against an already-constructed parameter set, so
//! a checkpoint can never silently resize a model: any mismatch is a hard
//! error naming the offending tensor, and nothing is written into the model
//! until the whole file has validated.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::TensorCollection;

const MAGIC: &[u8; 4] = b"GNRW";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a weights file (bad magic)")]
    BadMagic,
    #[error("unsupported weights format version {0}")]
    BadVersion(u32),
    #[error("manifest parse error: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("tensor {name}: expected shape {expected:?}, checkpoint has {actual:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("tensor {0} missing from checkpoint")]
    MissingTensor(String),
    #[error("blob truncated: need {expected} values, file has {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("tensor {name}: offset {offset}+{len} overruns blob of {blob_len}")]
    BadOffset {
        name: String,
        offset: usize,
        len: usize,
        blob_len: usize,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    /// Offset into the blob, in f64 elements.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest<H> {
    format_version: u32,
    header: H,
    tensors: Vec<TensorRecord>,
}

fn io_err(path: &Path, source: std::io::Error) -> WeightsError {
    WeightsError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `params` plus a typed `header` to `path`.
pub fn save<H: Serialize, P: TensorCollection>(
    path: &Path,
    header: &H,
    params: &P,
) -> Result<(), WeightsError> {
    let mut records = Vec::new();
    let mut blob = Vec::<f64>::new();
    for (name, view) in params.tensors() {
        records.push(TensorRecord {
            name,
            shape: view.shape().to_vec(),
            offset: blob.len(),
        });
        blob.extend(view.iter().copied());
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        header,
        tensors: records,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)?;

    let mut file = File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(MAGIC).map_err(|e| io_err(path, e))?;
    file.write_all(&(manifest_bytes.len() as u32).to_le_bytes())
        .map_err(|e| io_err(path, e))?;
    file.write_all(&manifest_bytes).map_err(|e| io_err(path, e))?;
    let mut raw = Vec::with_capacity(blob.len() * 8);
    for v in &blob {
        raw.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&raw).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Reads only the typed header of a checkpoint, leaving tensors untouched.
/// Callers use this to size a model before a full [`load`].
pub fn peek_header<H: DeserializeOwned>(path: &Path) -> Result<H, WeightsError> {
    let mut file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;
    if bytes.len() < 8 || &bytes[0..4] != MAGIC {
        return Err(WeightsError::BadMagic);
    }
    let manifest_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + manifest_len {
        return Err(WeightsError::Truncated {
            expected: manifest_len,
            actual: bytes.len().saturating_sub(8),
        });
    }
    let manifest: Manifest<H> = serde_json::from_slice(&bytes[8..8 + manifest_len])?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(WeightsError::BadVersion(manifest.format_version));
    }
    Ok(manifest.header)
}

/// Loads a checkpoint into an already-shaped `params`, returning the header.
///
/// Every tensor in `params` must be present in the file with an identical
/// shape; the model is only mutated after the whole file validates.
pub fn load<H: DeserializeOwned, P: TensorCollection>(
    path: &Path,
    params: &mut P,
) -> Result<H, WeightsError> {
    let mut file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;

    if bytes.len() < 8 || &bytes[0..4] != MAGIC {
        return Err(WeightsError::BadMagic);
    }
    let manifest_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + manifest_len {
        return Err(WeightsError::Truncated {
            expected: manifest_len,
            actual: bytes.len().saturating_sub(8),
        });
    }
    let manifest: Manifest<H> = serde_json::from_slice(&bytes[8..8 + manifest_len])?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(WeightsError::BadVersion(manifest.format_version));
    }

    let raw = &bytes[8 + manifest_len..];
    if raw.len() % 8 != 0 {
        return Err(WeightsError::Truncated {
            expected: raw.len() / 8 + 1,
            actual: raw.len() / 8,
        });
    }
    let blob: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    // Validate everything against the target model before touching it.
    let mut sources = Vec::new();
    {
        let views = params.tensors();
        for (name, view) in &views {
            let record = manifest
                .tensors
                .iter()
                .find(|r| &r.name == name)
                .ok_or_else(|| WeightsError::MissingTensor(name.clone()))?;
            if record.shape != view.shape() {
                return Err(WeightsError::ShapeMismatch {
                    name: name.clone(),
                    expected: view.shape().to_vec(),
                    actual: record.shape.clone(),
                });
            }
            let len = view.len();
            if record.offset + len > blob.len() {
                return Err(WeightsError::BadOffset {
                    name: name.clone(),
                    offset: record.offset,
                    len,
                    blob_len: blob.len(),
                });
            }
            sources.push(record.offset);
        }
    }
    for (i, (_, mut view)) in params.tensors_mut().into_iter().enumerate() {
        let offset = sources[i];
        let len = view.len();
        for (dst, src) in view.iter_mut().zip(&blob[offset..offset + len]) {
            *dst = *src;
        }
    }
    Ok(manifest.header)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Header {
        dim: usize,
        tag: String,
    }

    struct Toy {
        w: Array2<f64>,
        b: Array1<f64>,
    }

    impl TensorCollection for Toy {
        fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
            vec![
                ("w".into(), self.w.view().into_dyn()),
                ("b".into(), self.b.view().into_dyn()),
            ]
        }
        fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
            vec![
                ("w".into(), self.w.view_mut().into_dyn()),
                ("b".into(), self.b.view_mut().into_dyn()),
            ]
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.gnrw");
        let src = Toy {
            w: Array2::from_shape_fn((3, 2), |(i, j)| (i * 2 + j) as f64 * 0.1 + 0.01),
            b: Array1::from_vec(vec![f64::MIN_POSITIVE, -1.5]),
        };
        save(&path, &Header { dim: 2, tag: "toy".into() }, &src).unwrap();

        let mut dst = Toy {
            w: Array2::zeros((3, 2)),
            b: Array1::zeros(2),
        };
        let header: Header = load(&path, &mut dst).unwrap();
        assert_eq!(header, Header { dim: 2, tag: "toy".into() });
        assert_eq!(src.w, dst.w);
        assert!(src.b.iter().zip(dst.b.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn shape_mismatch_names_the_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.gnrw");
        let src = Toy {
            w: Array2::zeros((3, 2)),
            b: Array1::zeros(2),
        };
        save(&path, &Header { dim: 2, tag: "t".into() }, &src).unwrap();

        let mut wrong = Toy {
            w: Array2::zeros((4, 2)),
            b: Array1::zeros(2),
        };
        let err = load::<Header, _>(&path, &mut wrong).unwrap_err();
        match err {
            WeightsError::ShapeMismatch { name, .. } => assert_eq!(name, "w"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn truncated_blob_leaves_model_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.gnrw");
        let src = Toy {
            w: Array2::from_elem((3, 2), 7.0),
            b: Array1::from_elem(2, 7.0),
        };
        save(&path, &Header { dim: 2, tag: "t".into() }, &src).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 12]).unwrap();

        let mut dst = Toy {
            w: Array2::zeros((3, 2)),
            b: Array1::zeros(2),
        };
        assert!(load::<Header, _>(&path, &mut dst).is_err());
        assert!(dst.w.iter().all(|&x| x == 0.0), "partial load happened");
    }
}
