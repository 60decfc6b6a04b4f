//! Report files: versioned JSON plus CSV mirrors shaped like the familiar
//! SER-per-weight grid and the per-system RTF summary.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use serde::Serialize;

use diarize_core::pipeline::{PipelineConfig, RunReport};
use diarize_core::scoring::RtfStats;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct BatchReport<'a> {
    pub schema_version: u32,
    pub system: String,
    pub config: &'a PipelineConfig,
    pub aggregate: Aggregate,
    pub recordings: &'a [diarize_core::pipeline::RecordingReport],
}

#[derive(Debug, Serialize)]
pub struct Aggregate {
    pub mean_ser_pct: Option<f64>,
    pub mean_rtf: f64,
    pub stage_rtf_means: Vec<(String, f64)>,
    pub failures: usize,
}

pub fn batch_report<'a>(run: &'a RunReport, config: &'a PipelineConfig) -> BatchReport<'a> {
    BatchReport {
        schema_version: SCHEMA_VERSION,
        system: run.system.clone(),
        config,
        aggregate: Aggregate {
            mean_ser_pct: run.mean_ser_pct(),
            mean_rtf: run.mean_rtf(),
            stage_rtf_means: run.stage_rtf_means(),
            failures: run.recordings.iter().filter(|r| r.error.is_some()).count(),
        },
        recordings: &run.recordings,
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// SER grid: one row per recording, one column per fusion weight pair,
/// plus the across-weights average column.
pub fn write_ser_grid_csv(path: &Path, run: &RunReport) -> Result<()> {
    let weights: Vec<String> = run
        .recordings
        .iter()
        .find(|r| !r.ser_by_weight.is_empty())
        .map(|r| r.ser_by_weight.iter().map(|(w, _)| w.clone()).collect())
        .unwrap_or_default();
    let mut out = String::from("recording");
    for w in &weights {
        write!(out, ",\"{w}\"").unwrap();
    }
    out.push_str(",avg\n");
    let mut col_sums = vec![0.0; weights.len()];
    let mut rows = 0usize;
    for rec in &run.recordings {
        if rec.ser_by_weight.is_empty() {
            continue;
        }
        write!(out, "{}", rec.recording_id).unwrap();
        let mut sum = 0.0;
        for (i, (_, ser)) in rec.ser_by_weight.iter().enumerate() {
            write!(out, ",{ser:.3}").unwrap();
            sum += ser;
            col_sums[i] += ser;
        }
        writeln!(out, ",{:.3}", sum / rec.ser_by_weight.len() as f64).unwrap();
        rows += 1;
    }
    if rows > 0 {
        out.push_str("mean");
        let mut total = 0.0;
        for s in &col_sums {
            write!(out, ",{:.3}", s / rows as f64).unwrap();
            total += s / rows as f64;
        }
        writeln!(out, ",{:.3}", total / col_sums.len().max(1) as f64).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct SystemBench {
    pub system: String,
    pub runs: usize,
    pub total_rtf: RtfStats,
    pub stage_rtf_means: Vec<(String, f64)>,
    pub ann_stage_rtf_mean: f64,
    pub mean_ser_pct: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub runs: usize,
    pub systems: Vec<SystemBench>,
    /// Relative RTF improvement over the two-pass-from-scratch system,
    /// percent, per system (positive = faster).
    pub improvement_vs_tpib_pct: Vec<(String, f64)>,
}

/// RTF summary CSV: per system, stage RTF means, total mean and deviation,
/// and the relative improvement against `tpib`.
pub fn write_rtf_summary_csv(path: &Path, bench: &BenchReport) -> Result<()> {
    let mut out = String::from(
        "system,features,first_pass,ann,latent_fusion,second_pass,total_mean,total_std,impr_vs_tpib_pct\n",
    );
    for sys in &bench.systems {
        write!(out, "{}", sys.system).unwrap();
        for (_, rtf) in &sys.stage_rtf_means {
            write!(out, ",{rtf:.5}").unwrap();
        }
        let impr = bench
            .improvement_vs_tpib_pct
            .iter()
            .find(|(name, _)| *name == sys.system)
            .map(|(_, v)| format!("{v:.2}"))
            .unwrap_or_default();
        writeln!(
            out,
            ",{:.5},{:.5},{impr}",
            sys.total_rtf.mean, sys.total_rtf.std_dev
        )
        .unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use diarize_core::pipeline::{RecordingReport, StageSeconds};

    fn rec(id: &str, sers: &[(&str, f64)]) -> RecordingReport {
        RecordingReport {
            recording_id: id.to_string(),
            duration_s: 10.0,
            stage_seconds: StageSeconds::default(),
            total_seconds: 1.0,
            rtf: 0.1,
            num_clusters: 2,
            ann_epochs: 5,
            ser_pct: Some(1.0),
            speaker_count_error: Some(0),
            ser_by_weight: sers.iter().map(|(w, s)| (w.to_string(), *s)).collect(),
            error: None,
        }
    }

    #[test]
    fn ser_grid_has_weight_columns_and_avg() {
        let mut run = RunReport::default();
        run.system = "tpib".to_string();
        run.recordings.push(rec("a", &[("(1, 0)", 10.0), ("(0, 1)", 20.0)]));
        run.recordings.push(rec("b", &[("(1, 0)", 30.0), ("(0, 1)", 40.0)]));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.csv");
        write_ser_grid_csv(&path, &run).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "recording,\"(1, 0)\",\"(0, 1)\",avg");
        assert!(lines[1].starts_with("a,10.000,20.000,15.000"));
        assert!(lines[3].starts_with("mean,20.000,30.000,25.000"));
    }
}
