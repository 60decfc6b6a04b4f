//! Feature file formats.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic   4 bytes  "DZF1"
//! kind    u8       0 = mfcc, 1 = latent, 2 = fused-posterior
//! shift   f64      frame shift in seconds
//! window  f64      frame length in seconds
//! rows    u64
//! cols    u64
//! data    rows*cols f32, row-major
//! ```
//!
//! A plain numeric CSV (one frame per line) is accepted for interop; it
//! carries no timing metadata, so the loader assumes the default 10 ms
//! shift / 25 ms window and MFCC kind.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::{FeatureKind, FeatureMatrix};

const MAGIC: &[u8; 4] = b"DZF1";

fn kind_to_byte(kind: FeatureKind) -> u8 {
    match kind {
        FeatureKind::Mfcc => 0,
        FeatureKind::Latent => 1,
        FeatureKind::FusedPosterior => 2,
    }
}

fn kind_from_byte(b: u8) -> Result<FeatureKind> {
    match b {
        0 => Ok(FeatureKind::Mfcc),
        1 => Ok(FeatureKind::Latent),
        2 => Ok(FeatureKind::FusedPosterior),
        _ => Err(Error::format(format!("unknown feature kind byte {b}"))),
    }
}

pub fn save_features(path: &Path, feat: &FeatureMatrix) -> Result<()> {
    let mut buf: Vec<u8> = Vec::with_capacity(37 + feat.frames.data().len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.push(kind_to_byte(feat.kind));
    buf.extend_from_slice(&feat.frame_shift_s.to_le_bytes());
    buf.extend_from_slice(&feat.frame_length_s.to_le_bytes());
    buf.extend_from_slice(&(feat.frames.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(feat.frames.cols() as u64).to_le_bytes());
    for &v in feat.frames.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Load a feature file; dispatches on the `.csv` extension, otherwise
/// expects the binary format above.
pub fn load_features(path: &Path) -> Result<FeatureMatrix> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return load_features_csv(path);
    }
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.is_empty() {
        return Err(Error::format("empty feature file".to_string()));
    }
    if bytes.len() < 37 {
        return Err(Error::format("truncated feature file header".to_string()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format("bad magic; not a feature file".to_string()));
    }
    let kind = kind_from_byte(bytes[4])?;
    let shift = f64::from_le_bytes(bytes[5..13].try_into().unwrap());
    let window = f64::from_le_bytes(bytes[13..21].try_into().unwrap());
    let rows = u64::from_le_bytes(bytes[21..29].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[29..37].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format("feature dims overflow".to_string()))?;
    if bytes.len() - 37 != expected {
        return Err(Error::format(format!(
            "dimension mismatch: header says {rows}x{cols} but payload holds {} values",
            (bytes.len() - 37) / 4
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for ch in bytes[37..].chunks_exact(4) {
        data.push(f32::from_le_bytes(ch.try_into().unwrap()) as f64);
    }
    let m = Matrix::from_vec(rows, cols, data);
    if let Some((r, c)) = m.first_non_finite() {
        return Err(Error::format(format!("non-finite value at ({r},{c})")));
    }
    FeatureMatrix::new(m, shift, window, kind)
}

pub fn load_features_csv(path: &Path) -> Result<FeatureMatrix> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| {
                    Error::format(format!("line {}: unparseable value '{tok}'", lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::format(format!(
                    "line {}: expected {} columns, got {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::format("empty feature file".to_string()));
    }
    let m = Matrix::from_rows(&rows);
    if let Some((r, c)) = m.first_non_finite() {
        return Err(Error::format(format!("non-finite value at ({r},{c})")));
    }
    let cfg = super::MfccConfig::default();
    FeatureMatrix::new(m, cfg.shift_s, cfg.window_s, FeatureKind::Mfcc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(rows: usize, cols: usize) -> FeatureMatrix {
        let m = Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|i| i as f64 * 0.125).collect(),
        );
        FeatureMatrix::new(m, 0.01, 0.025, FeatureKind::Latent).unwrap()
    }

    #[test]
    fn binary_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.dzf");
        let feat = sample(100, 19);
        save_features(&path, &feat).unwrap();
        let loaded = load_features(&path).unwrap();
        assert_eq!(loaded.num_frames(), 100);
        assert_eq!(loaded.dim(), 19);
        assert_eq!(loaded.kind, FeatureKind::Latent);
        assert_eq!(loaded.frame_shift_s, 0.01);
        // 0.125 steps are exact in f32.
        assert_eq!(loaded.frames, feat.frames);
    }

    #[test]
    fn empty_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.dzf");
        fs::File::create(&path).unwrap();
        let err = load_features(&path).unwrap_err();
        assert!(err.to_string().contains("empty feature file"));
    }

    #[test]
    fn nan_rejected_with_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.csv");
        fs::write(&path, "1.0,2.0\n3.0,NaN\n").unwrap();
        let err = load_features(&path).unwrap_err();
        assert!(err.to_string().contains("(1,1)"), "{err}");
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.dzf");
        let feat = sample(10, 4);
        save_features(&path, &feat).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&path, &bytes).unwrap();
        let err = load_features(&path).unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"));
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        fs::write(&path, "1.0,2.0\n3.5,-4.5\n").unwrap();
        let feat = load_features(&path).unwrap();
        assert_eq!(feat.num_frames(), 2);
        assert_eq!(feat.frames.row(1), &[3.5, -4.5]);
    }

    #[test]
    fn ragged_csv_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ragged.csv");
        fs::write(&path, "1.0,2.0\n3.0\n").unwrap();
        assert!(load_features(&path).is_err());
    }
}
