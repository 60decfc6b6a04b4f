//! RTTM (Rich Transcription Time Marked) interchange.
//!
//! Only `SPEAKER` records are consumed; other record types are skipped.
//! Layout per line: `SPEAKER <file> <chan> <tbeg> <tdur> <ortho> <stype>
//! <name> <conf> [<slat>]`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scoring::{RefTurn, ReferenceAnnotation};
use crate::types::{DiarizationHypothesis, SpeechMask};

/// Parse all SPEAKER turns from an RTTM file. When `recording_id` is given,
/// only lines whose file field matches are kept.
pub fn read_reference(path: &Path, recording_id: Option<&str>) -> Result<ReferenceAnnotation> {
    let text = fs::read_to_string(path)?;
    let mut turns = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with(';') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields[0] != "SPEAKER" {
            continue;
        }
        if fields.len() < 8 {
            return Err(Error::format(format!(
                "{}:{}: SPEAKER line has {} fields, expected >= 8",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        if let Some(id) = recording_id {
            if fields[1] != id {
                continue;
            }
        }
        let tbeg: f64 = fields[3]
            .parse()
            .map_err(|_| Error::format(format!("line {}: bad tbeg", lineno + 1)))?;
        let tdur: f64 = fields[4]
            .parse()
            .map_err(|_| Error::format(format!("line {}: bad tdur", lineno + 1)))?;
        if tdur <= 0.0 {
            continue;
        }
        turns.push(RefTurn {
            start_s: tbeg,
            end_s: tbeg + tdur,
            speaker: fields[7].to_string(),
        });
    }
    ReferenceAnnotation::new(turns)
}

/// Speech mask = union of all SPEAKER intervals in the file.
pub fn read_speech_mask(path: &Path, recording_id: Option<&str>) -> Result<SpeechMask> {
    let annot = read_reference(path, recording_id)?;
    SpeechMask::from_intervals(
        annot
            .turns
            .iter()
            .map(|t| (t.start_s, t.end_s))
            .collect(),
    )
}

/// Speech mask from a two-column `start,end` CSV.
pub fn read_speech_mask_csv(path: &Path) -> Result<SpeechMask> {
    let text = fs::read_to_string(path)?;
    let mut intervals = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split(',');
        let parse = |tok: Option<&str>| -> Result<f64> {
            tok.and_then(|t| t.trim().parse().ok()).ok_or_else(|| {
                Error::format(format!("line {}: expected 'start,end'", lineno + 1))
            })
        };
        let start = parse(it.next())?;
        let end = parse(it.next())?;
        intervals.push((start, end));
    }
    if intervals.is_empty() {
        return Err(Error::format("mask file has no intervals".to_string()));
    }
    SpeechMask::from_intervals(intervals)
}

/// Render a hypothesis as RTTM SPEAKER lines. Cluster ids become `spk<N>`.
pub fn format_hypothesis(hyp: &DiarizationHypothesis) -> String {
    let mut out = String::new();
    for t in &hyp.turns {
        writeln!(
            out,
            "SPEAKER {} 1 {:.3} {:.3} <NA> <NA> spk{} <NA> <NA>",
            hyp.recording_id,
            t.start_s,
            t.end_s - t.start_s,
            t.cluster
        )
        .unwrap();
    }
    out
}

pub fn write_hypothesis(path: &Path, hyp: &DiarizationHypothesis) -> Result<()> {
    fs::write(path, format_hypothesis(hyp))?;
    Ok(())
}

/// Read a hypothesis back from RTTM (labels parsed from `spk<N>` names; any
/// other naming is assigned fresh ids in order of first appearance).
pub fn read_hypothesis(path: &Path, recording_id: Option<&str>) -> Result<DiarizationHypothesis> {
    let annot = read_reference(path, recording_id)?;
    let mut next_id = 0usize;
    let mut names: Vec<(String, usize)> = Vec::new();
    let mut turns = Vec::new();
    let mut rec_id = recording_id.map(str::to_string);
    let text = fs::read_to_string(path)?;
    if rec_id.is_none() {
        rec_id = text
            .lines()
            .find_map(|l| l.split_whitespace().nth(1).map(str::to_string));
    }
    for t in &annot.turns {
        let label = match t.speaker.strip_prefix("spk").and_then(|s| s.parse().ok()) {
            Some(n) => n,
            None => match names.iter().find(|(n, _)| *n == t.speaker) {
                Some(&(_, id)) => id,
                None => {
                    let id = next_id;
                    names.push((t.speaker.clone(), id));
                    next_id += 1;
                    id
                }
            },
        };
        turns.push(crate::types::HypTurn {
            start_s: t.start_s,
            end_s: t.end_s,
            cluster: label,
        });
    }
    Ok(DiarizationHypothesis {
        recording_id: rec_id.unwrap_or_else(|| "unknown".to_string()),
        turns,
    })
}
