//! Diarization scoring against reference annotations, plus real-time-factor
//! arithmetic.
//!
//! Scoring rasterizes both hypothesis and reference onto a 10 ms frame grid.
//! Reference turns may overlap; a frame with `n` active reference speakers
//! needs `n` matched hypothesis speakers. Clusters map to speakers through a
//! maximum-overlap one-to-one assignment (Hungarian). Frames whose centers
//! fall within the forgiveness collar of a reference turn boundary are
//! excluded from the error counts and from the mapping overlaps; the
//! denominator is the total reference speaker time on the full timeline, so
//! widening the collar can only remove error mass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::types::DiarizationHypothesis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefTurn {
    pub start_s: f64,
    pub end_s: f64,
    pub speaker: String,
}

/// Reference speaker turns; overlapping turns are allowed and scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceAnnotation {
    pub turns: Vec<RefTurn>,
}

impl ReferenceAnnotation {
    pub fn new(turns: Vec<RefTurn>) -> Result<Self> {
        for t in &turns {
            if !(t.start_s < t.end_s) {
                return Err(Error::invalid(format!(
                    "reference turn for {} has start {} >= end {}",
                    t.speaker, t.start_s, t.end_s
                )));
            }
        }
        Ok(ReferenceAnnotation { turns })
    }

    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.turns.iter().map(|t| t.speaker.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn end_s(&self) -> f64 {
        self.turns.iter().map(|t| t.end_s).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub ser_pct: f64,
    pub ms_pct: f64,
    pub fa_pct: f64,
    pub der_pct: f64,
    pub speaker_count_error: usize,
    /// Optimal cluster -> speaker pairs with positive matched overlap.
    pub mapping: Vec<(usize, String)>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub collar_s: f64,
    /// Internal rasterization step; matches the feature frame shift.
    pub frame_s: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            collar_s: 0.25,
            frame_s: 0.010,
        }
    }
}

/// Minimum-cost perfect assignment on a square matrix; returns the column
/// chosen for each row. O(n^3) with row/column potentials.
pub(crate) fn hungarian_min(cost: &Matrix) -> Vec<usize> {
    let n = cost.rows();
    assert_eq!(n, cost.cols());
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Score a hypothesis against a reference annotation.
pub fn score(
    hyp: &DiarizationHypothesis,
    reference: &ReferenceAnnotation,
    cfg: &ScoreConfig,
) -> Result<ScoreBreakdown> {
    if reference.turns.is_empty() {
        return Err(Error::invalid("empty reference annotation"));
    }
    if !(cfg.collar_s >= 0.0) || !(cfg.frame_s > 0.0) {
        return Err(Error::config("collar must be >= 0 and frame step positive"));
    }
    let speakers = reference.speakers();
    let clusters = hyp.clusters();
    let speaker_idx = |name: &str| speakers.iter().position(|s| s == name).unwrap();
    let cluster_idx = |id: usize| clusters.iter().position(|&c| c == id).unwrap();

    let end = reference
        .end_s()
        .max(hyp.turns.iter().map(|t| t.end_s).fold(0.0, f64::max));
    let num_frames = (end / cfg.frame_s).ceil() as usize;

    let mut boundaries: Vec<f64> = Vec::with_capacity(reference.turns.len() * 2);
    for t in &reference.turns {
        boundaries.push(t.start_s);
        boundaries.push(t.end_s);
    }

    // Rasterize.
    let mut ref_active: Vec<Vec<usize>> = vec![Vec::new(); num_frames];
    for t in &reference.turns {
        let s = speaker_idx(&t.speaker);
        let first = (t.start_s / cfg.frame_s).floor().max(0.0) as usize;
        for (i, active) in ref_active.iter_mut().enumerate().skip(first).take(num_frames) {
            let c = (i as f64 + 0.5) * cfg.frame_s;
            if c >= t.start_s && c < t.end_s && !active.contains(&s) {
                active.push(s);
            }
        }
    }
    let mut hyp_label: Vec<Option<usize>> = vec![None; num_frames];
    for t in &hyp.turns {
        let c_id = cluster_idx(t.cluster);
        let first = (t.start_s / cfg.frame_s).floor().max(0.0) as usize;
        for (i, label) in hyp_label.iter_mut().enumerate().skip(first).take(num_frames) {
            let c = (i as f64 + 0.5) * cfg.frame_s;
            if c >= t.start_s && c < t.end_s {
                *label = Some(c_id);
            }
        }
    }
    let scored: Vec<bool> = (0..num_frames)
        .map(|i| {
            let c = (i as f64 + 0.5) * cfg.frame_s;
            !boundaries
                .iter()
                .any(|&b| c > b - cfg.collar_s && c < b + cfg.collar_s)
        })
        .collect();

    // Denominator: total reference speaker time, full timeline.
    let ref_frames: usize = ref_active.iter().map(|a| a.len()).sum();
    if ref_frames == 0 {
        return Err(Error::invalid("reference annotation covers no frames"));
    }

    // Overlap matrix on scored frames, in frame counts.
    let n = clusters.len().max(speakers.len());
    let mut overlap = Matrix::zeros(n, n);
    for i in 0..num_frames {
        if !scored[i] {
            continue;
        }
        if let Some(c) = hyp_label[i] {
            for &s in &ref_active[i] {
                overlap[(c, s)] += 1.0;
            }
        }
    }
    let mut cost = Matrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            cost[(r, c)] = -overlap[(r, c)];
        }
    }
    let assignment = hungarian_min(&cost);
    let mapped_speaker: Vec<Option<usize>> = (0..clusters.len())
        .map(|c| {
            let s = assignment[c];
            if s < speakers.len() && overlap[(c, s)] > 0.0 {
                Some(s)
            } else {
                None
            }
        })
        .collect();

    let (mut ms, mut fa, mut ser) = (0usize, 0usize, 0usize);
    for i in 0..num_frames {
        if !scored[i] {
            continue;
        }
        let n_ref = ref_active[i].len();
        let n_hyp = usize::from(hyp_label[i].is_some());
        let correct = match hyp_label[i] {
            Some(c) => match mapped_speaker[c] {
                Some(s) => usize::from(ref_active[i].contains(&s)),
                None => 0,
            },
            None => 0,
        };
        ms += n_ref.saturating_sub(n_hyp);
        fa += n_hyp.saturating_sub(n_ref);
        ser += n_ref.min(n_hyp) - correct.min(n_ref.min(n_hyp));
    }

    let denom = ref_frames as f64;
    let ms_pct = 100.0 * ms as f64 / denom;
    let fa_pct = 100.0 * fa as f64 / denom;
    let ser_pct = 100.0 * ser as f64 / denom;
    let mapping = mapped_speaker
        .iter()
        .enumerate()
        .filter_map(|(c, s)| s.map(|s| (clusters[c], speakers[s].clone())))
        .collect();
    Ok(ScoreBreakdown {
        ser_pct,
        ms_pct,
        fa_pct,
        der_pct: ms_pct + fa_pct + ser_pct,
        speaker_count_error: speaker_count_error(hyp, reference),
        mapping,
    })
}

/// |distinct hypothesis clusters - distinct reference speakers|.
pub fn speaker_count_error(hyp: &DiarizationHypothesis, reference: &ReferenceAnnotation) -> usize {
    hyp.num_clusters().abs_diff(reference.speakers().len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtfBreakdown {
    pub per_stage: Vec<(String, f64)>,
    pub total_rtf: f64,
    pub total_seconds: f64,
    pub duration_s: f64,
}

/// Per-stage and total real-time factors for one processed recording.
pub fn measure_rtf(stage_seconds: &[(String, f64)], duration_s: f64) -> Result<RtfBreakdown> {
    if !(duration_s > 0.0) {
        return Err(Error::invalid("duration must be positive"));
    }
    let per_stage: Vec<(String, f64)> = stage_seconds
        .iter()
        .map(|(name, secs)| (name.clone(), secs / duration_s))
        .collect();
    let total_seconds: f64 = stage_seconds.iter().map(|(_, s)| s).sum();
    Ok(RtfBreakdown {
        per_stage,
        total_rtf: total_seconds / duration_s,
        total_seconds,
        duration_s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtfStats {
    pub mean: f64,
    /// Sample standard deviation (0 for a single run).
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
}

/// Mean and deviation over repeated runs.
pub fn rtf_stats(values: &[f64]) -> RtfStats {
    assert!(!values.is_empty());
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    RtfStats {
        mean,
        std_dev: var.sqrt(),
        min: values.iter().cloned().fold(f64::INFINITY, f64::min),
        max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    }
}
