//! Shared domain types: recordings, speech masks, diarization hypotheses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A mono audio recording held as normalized samples in [-1, 1].
#[derive(Debug, Clone)]
pub struct Recording {
    pub id: String,
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl Recording {
    pub fn new(id: impl Into<String>, samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::config("sample rate must be positive"));
        }
        Ok(Recording {
            id: id.into(),
            samples,
            sample_rate_hz,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Speech regions of a recording: non-overlapping, sorted `(start, end)`
/// intervals in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechMask {
    intervals: Vec<(f64, f64)>,
}

impl SpeechMask {
    /// Build a mask from arbitrary intervals; they are sorted and merged.
    pub fn from_intervals(mut intervals: Vec<(f64, f64)>) -> Result<Self> {
        for &(s, e) in &intervals {
            if !(s.is_finite() && e.is_finite() && s < e && s >= 0.0) {
                return Err(Error::invalid(format!(
                    "invalid speech interval ({s}, {e})"
                )));
            }
        }
        intervals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(intervals.len());
        for (s, e) in intervals {
            match merged.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => merged.push((s, e)),
            }
        }
        Ok(SpeechMask { intervals: merged })
    }

    pub fn full(duration_s: f64) -> Self {
        SpeechMask {
            intervals: vec![(0.0, duration_s)],
        }
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn contains(&self, t: f64) -> bool {
        self.intervals.iter().any(|&(s, e)| t >= s && t < e)
    }

    pub fn total_speech_s(&self) -> f64 {
        self.intervals.iter().map(|&(s, e)| e - s).sum()
    }

    pub fn end_s(&self) -> f64 {
        self.intervals.last().map_or(0.0, |&(_, e)| e)
    }
}

/// Maps row indices of a masked feature matrix back to frame indices on the
/// original timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameIndexMap {
    kept: Vec<usize>,
    pub frame_shift_s: f64,
}

impl FrameIndexMap {
    pub fn new(kept: Vec<usize>, frame_shift_s: f64) -> Self {
        FrameIndexMap {
            kept,
            frame_shift_s,
        }
    }

    pub fn identity(n: usize, frame_shift_s: f64) -> Self {
        FrameIndexMap {
            kept: (0..n).collect(),
            frame_shift_s,
        }
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    /// Original frame index of masked row `i`.
    pub fn original(&self, i: usize) -> usize {
        self.kept[i]
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }
}

/// One hypothesized speaker turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypTurn {
    pub start_s: f64,
    pub end_s: f64,
    pub cluster: usize,
}

/// Ordered, non-overlapping labeled intervals covering the speech regions
/// of one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiarizationHypothesis {
    pub recording_id: String,
    pub turns: Vec<HypTurn>,
}

impl DiarizationHypothesis {
    /// Build interval-form output from per-frame cluster labels on masked
    /// frames. `index_map` projects masked rows back to the original
    /// timeline; runs break on label changes and on mask gaps.
    pub fn from_frame_labels(
        recording_id: impl Into<String>,
        labels: &[usize],
        index_map: &FrameIndexMap,
    ) -> Self {
        assert_eq!(labels.len(), index_map.len(), "label/index map mismatch");
        let shift = index_map.frame_shift_s;
        let mut turns: Vec<HypTurn> = Vec::new();
        let mut i = 0;
        while i < labels.len() {
            let label = labels[i];
            let start_frame = index_map.original(i);
            let mut last_frame = start_frame;
            let mut j = i + 1;
            while j < labels.len()
                && labels[j] == label
                && index_map.original(j) == last_frame + 1
            {
                last_frame = index_map.original(j);
                j += 1;
            }
            turns.push(HypTurn {
                start_s: start_frame as f64 * shift,
                end_s: (last_frame + 1) as f64 * shift,
                cluster: label,
            });
            i = j;
        }
        DiarizationHypothesis {
            recording_id: recording_id.into(),
            turns,
        }
    }

    /// Distinct cluster ids used by the hypothesis.
    pub fn clusters(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.turns.iter().map(|t| t.cluster).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters().len()
    }
}

/// FNV-1a over the parts, used to derive per-recording / per-stage RNG seeds
/// from a master seed. Stable across platforms and runs, and independent of
/// processing order.
pub fn derive_seed(master: u64, parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in master.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    for p in parts {
        for b in p.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
