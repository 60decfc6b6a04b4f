//! Acoustic feature ingest: MFCC extraction, feature file I/O and
//! speech-mask application.
//!
//! Frame timing convention used throughout the crate: frame `i` covers
//! `[i*shift, (i+1)*shift)` and its nominal center is `(i + 0.5) * shift`.
//! The analysis window extends beyond the frame; only the shift tiles the
//! timeline.

mod fio;
mod mfcc;
mod wav;

pub use fio::{load_features, load_features_csv, save_features};
pub use mfcc::MfccConfig;
pub use wav::{read_wav_mono, write_wav_mono};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::types::{FrameIndexMap, Recording, SpeechMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    Mfcc,
    Latent,
    FusedPosterior,
}

/// A T×D matrix of per-frame features with its timing metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: Matrix,
    pub frame_shift_s: f64,
    pub frame_length_s: f64,
    pub kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn new(
        frames: Matrix,
        frame_shift_s: f64,
        frame_length_s: f64,
        kind: FeatureKind,
    ) -> Result<Self> {
        if frames.rows() == 0 || frames.cols() == 0 {
            return Err(Error::invalid("feature matrix must be at least 1x1"));
        }
        if !(frame_shift_s > 0.0) {
            return Err(Error::invalid("frame shift must be positive"));
        }
        if let Some((r, c)) = frames.first_non_finite() {
            return Err(Error::invalid(format!("non-finite value at ({r},{c})")));
        }
        Ok(FeatureMatrix {
            frames,
            frame_shift_s,
            frame_length_s,
            kind,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    /// Nominal center time of frame `i`.
    pub fn frame_center_s(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.frame_shift_s
    }
}

/// Extract MFCC features from a recording.
///
/// The frame count is `floor((duration - window) / shift) + 1`; recordings
/// shorter than one analysis window are rejected.
pub fn extract_mfcc(rec: &Recording, cfg: &MfccConfig) -> Result<FeatureMatrix> {
    mfcc::extract(rec, cfg)
}

/// Keep only frames whose centers fall inside the speech mask.
///
/// Returns the reduced matrix and an index map that projects hypotheses back
/// to the original timeline.
pub fn apply_speech_mask(
    feat: &FeatureMatrix,
    mask: &SpeechMask,
) -> Result<(FeatureMatrix, FrameIndexMap)> {
    let kept: Vec<usize> = (0..feat.num_frames())
        .filter(|&i| mask.contains(feat.frame_center_s(i)))
        .collect();
    if kept.is_empty() {
        return Err(Error::invalid("no speech frames"));
    }
    let frames = feat.frames.select_rows(&kept);
    let reduced = FeatureMatrix::new(frames, feat.frame_shift_s, feat.frame_length_s, feat.kind)?;
    Ok((reduced, FrameIndexMap::new(kept, feat.frame_shift_s)))
}
