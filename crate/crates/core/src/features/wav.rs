//! WAV ingest and export (PCM 16-bit mono).

use std::path::Path;

use crate::error::{Error, Result};
use crate::types::Recording;

/// Read a 16-bit PCM mono WAV file; samples come back normalized to [-1, 1).
pub fn read_wav_mono(path: &Path) -> Result<Recording> {
    let reader = hound::WavReader::open(path)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::format(format!(
            "{}: expected mono, got {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::format(format!(
            "{}: expected 16-bit PCM",
            path.display()
        )));
    }
    let samples: std::result::Result<Vec<i16>, _> = reader.into_samples().collect();
    let samples = samples.map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "recording".to_string());
    Recording::new(
        id,
        samples.into_iter().map(|s| s as f64 / 32768.0).collect(),
        spec.sample_rate,
    )
}

/// Write samples in [-1, 1] as 16-bit PCM mono; values outside are clipped.
pub fn write_wav_mono(path: &Path, samples: &[f64], sample_rate_hz: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer
            .write_sample(v)
            .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    Ok(())
}
