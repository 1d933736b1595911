//! File formats: sequence and kernel JSON, CSV emission.
//!
//! Sequence files: `{"sequences": [{"id": str, "frames": [[f, ...], ...]}]}`.
//! Kernel files: `{"L": [[...]], "cond_indices": [...], "q": [...], "w": f, "k": f}`.
//! CSV floats are printed with 17 significant digits so values round-trip.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{DppKernel, QualityVector};
use crate::sequences::FeatureSequence;

#[derive(Debug, Serialize, Deserialize)]
struct SequenceRecord {
    id: String,
    frames: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SequenceFile {
    sequences: Vec<SequenceRecord>,
}

/// Parse a sequence file from a JSON string.
pub fn sequences_from_json(json: &str) -> Result<Vec<FeatureSequence>> {
    let file: SequenceFile = serde_json::from_str(json)?;
    file.sequences
        .into_iter()
        .map(|r| FeatureSequence::new(r.id, r.frames))
        .collect()
}

/// Load sequences from a JSON file.
pub fn load_sequences(path: &Path) -> Result<Vec<FeatureSequence>> {
    sequences_from_json(&std::fs::read_to_string(path)?)
}

/// Serialize sequences to the JSON schema.
pub fn sequences_to_json(seqs: &[FeatureSequence]) -> Result<String> {
    let file = SequenceFile {
        sequences: seqs
            .iter()
            .map(|s| SequenceRecord {
                id: s.id().to_string(),
                frames: s.frames().to_vec(),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn save_sequences(path: &Path, seqs: &[FeatureSequence]) -> Result<()> {
    write_atomic(path, sequences_to_json(seqs)?.as_bytes())
}

#[derive(Debug, Serialize, Deserialize)]
struct KernelFile {
    #[serde(rename = "L")]
    l: Vec<Vec<f64>>,
    cond_indices: Vec<usize>,
    q: Vec<f64>,
    w: f64,
    k: f64,
}

/// Serialize a kernel to its JSON schema.
pub fn kernel_to_json(kernel: &DppKernel) -> Result<String> {
    let n = kernel.size();
    let l = (0..n)
        .map(|i| (0..n).map(|j| kernel.l()[(i, j)]).collect())
        .collect();
    let file = KernelFile {
        l,
        cond_indices: kernel.cond_indices().to_vec(),
        q: kernel.quality().values().to_vec(),
        w: kernel.quality().weight(),
        k: kernel.quality().threshold(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

/// Parse a kernel from its JSON schema. The stored `L` entries are kept
/// bit-exact; the similarity source is reconstructed as `L_ij / (q_i * q_j)`.
pub fn kernel_from_json(json: &str) -> Result<DppKernel> {
    let file: KernelFile = serde_json::from_str(json)?;
    let n = file.l.len();
    if file.l.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidConfig("kernel matrix must be square".into()));
    }
    let quality = QualityVector::new(file.q, file.w, file.k)?;
    let l = DMatrix::from_fn(n, n, |i, j| file.l[i][j]);
    DppKernel::from_stored(l, quality, &file.cond_indices)
}

pub fn load_kernel(path: &Path) -> Result<DppKernel> {
    kernel_from_json(&std::fs::read_to_string(path)?)
}

pub fn save_kernel(path: &Path, kernel: &DppKernel) -> Result<()> {
    write_atomic(path, kernel_to_json(kernel)?.as_bytes())
}

/// 17-significant-digit float formatting used in every CSV this crate emits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Row-major CSV rendering of a matrix.
pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format_float(m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_atomic(path, matrix_to_csv(m).as_bytes())
}

/// Write through a temp file and rename so partial output never lands at the
/// destination.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
