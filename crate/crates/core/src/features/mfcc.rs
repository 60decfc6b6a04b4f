//! MFCC extraction: pre-emphasis, Hamming window, FFT power spectrum,
//! mel filterbank, log (with floor), DCT-II.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::parallel;
use crate::types::Recording;

use super::{FeatureKind, FeatureMatrix};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MfccConfig {
    /// Number of cepstral coefficients kept.
    pub num_coeffs: usize,
    /// Number of triangular mel filters.
    pub num_filters: usize,
    /// Frame shift in seconds.
    pub shift_s: f64,
    /// Analysis window length in seconds (Hamming).
    pub window_s: f64,
    /// Pre-emphasis coefficient; 0 disables.
    pub pre_emphasis: f64,
    /// Keep the 0th (energy-like) cepstral coefficient. When false, the
    /// output covers coefficients `1..=num_coeffs`.
    pub include_c0: bool,
    /// Filterbank energies are clamped here before the log, so silence
    /// yields finite features.
    pub log_floor: f64,
    /// Lower filterbank edge in Hz.
    pub low_hz: f64,
    /// Upper filterbank edge in Hz; defaults to Nyquist when absent.
    pub high_hz: Option<f64>,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            num_coeffs: 19,
            num_filters: 26,
            shift_s: 0.010,
            window_s: 0.025,
            pre_emphasis: 0.97,
            include_c0: false,
            log_floor: 1e-10,
            low_hz: 0.0,
            high_hz: None,
        }
    }
}

impl MfccConfig {
    fn validate(&self, sample_rate_hz: u32) -> Result<()> {
        if sample_rate_hz == 0 {
            return Err(Error::config("sample rate must be positive"));
        }
        if self.num_coeffs == 0 || self.num_filters == 0 {
            return Err(Error::config("num_coeffs and num_filters must be positive"));
        }
        let needed = if self.include_c0 {
            self.num_coeffs
        } else {
            self.num_coeffs + 1
        };
        if self.num_filters < needed {
            return Err(Error::config(format!(
                "{} filters cannot yield {} cepstral coefficients",
                self.num_filters, self.num_coeffs
            )));
        }
        if !(self.shift_s > 0.0) || !(self.window_s > 0.0) {
            return Err(Error::config("shift and window must be positive"));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::config("log floor must be positive"));
        }
        Ok(())
    }
}

/// Mel scale (HTK convention).
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10.0_f64.powf(mel / 2595.0) - 1.0)
}

fn hamming(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Triangular filters evaluated at FFT bin center frequencies.
/// Returns `num_filters` rows of `fft_size/2 + 1` weights.
fn mel_filterbank(
    num_filters: usize,
    fft_size: usize,
    sample_rate: f64,
    low_hz: f64,
    high_hz: f64,
) -> Vec<Vec<f64>> {
    let n_bins = fft_size / 2 + 1;
    let mel_lo = hz_to_mel(low_hz);
    let mel_hi = hz_to_mel(high_hz);
    let edges: Vec<f64> = (0..num_filters + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (num_filters + 1) as f64))
        .collect();

    let mut bank = Vec::with_capacity(num_filters);
    for m in 0..num_filters {
        let (f_l, f_c, f_r) = (edges[m], edges[m + 1], edges[m + 2]);
        let filt: Vec<f64> = (0..n_bins)
            .map(|k| {
                let f = k as f64 * sample_rate / fft_size as f64;
                if f <= f_l || f >= f_r {
                    0.0
                } else if f <= f_c {
                    (f - f_l) / (f_c - f_l)
                } else {
                    (f_r - f) / (f_r - f_c)
                }
            })
            .collect();
        bank.push(filt);
    }
    bank
}

fn dct_ii_rows(log_energies: &[f64], coeff_range: std::ops::Range<usize>) -> Vec<f64> {
    let m = log_energies.len() as f64;
    coeff_range
        .map(|k| {
            log_energies
                .iter()
                .enumerate()
                .map(|(n, &e)| e * (PI * k as f64 * (n as f64 + 0.5) / m).cos())
                .sum()
        })
        .collect()
}

struct FrameProcessor {
    window: Vec<f64>,
    filterbank: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
    fft_size: usize,
    log_floor: f64,
    coeff_range: std::ops::Range<usize>,
}

impl FrameProcessor {
    fn process(&self, samples: &[f64]) -> Vec<f64> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.fft_size];
        for (b, (s, w)) in buf.iter_mut().zip(samples.iter().zip(&self.window)) {
            b.re = s * w;
        }
        self.fft.process(&mut buf);

        let n_bins = self.fft_size / 2 + 1;
        let power: Vec<f64> = buf[..n_bins].iter().map(|c| c.norm_sqr()).collect();

        let log_energies: Vec<f64> = self
            .filterbank
            .iter()
            .map(|filt| {
                let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
                e.max(self.log_floor).ln()
            })
            .collect();

        dct_ii_rows(&log_energies, self.coeff_range.clone())
    }
}

pub(super) fn extract(rec: &Recording, cfg: &MfccConfig) -> Result<FeatureMatrix> {
    cfg.validate(rec.sample_rate_hz)?;
    let sr = rec.sample_rate_hz as f64;
    let win = (cfg.window_s * sr).round() as usize;
    let hop = (cfg.shift_s * sr).round() as usize;
    if win < 2 || hop == 0 {
        return Err(Error::config("window/shift too small for sample rate"));
    }
    if rec.samples.len() < win {
        return Err(Error::invalid("recording too short"));
    }

    let emphasized = if cfg.pre_emphasis != 0.0 {
        let mut out = Vec::with_capacity(rec.samples.len());
        out.push(rec.samples[0]);
        for i in 1..rec.samples.len() {
            out.push(rec.samples[i] - cfg.pre_emphasis * rec.samples[i - 1]);
        }
        out
    } else {
        rec.samples.clone()
    };

    let num_frames = (rec.samples.len() - win) / hop + 1;
    let fft_size = win.next_power_of_two();
    let fft = FftPlanner::new().plan_fft_forward(fft_size);
    let high_hz = cfg.high_hz.unwrap_or(sr / 2.0).min(sr / 2.0);
    let coeff_range = if cfg.include_c0 {
        0..cfg.num_coeffs
    } else {
        1..cfg.num_coeffs + 1
    };
    let proc = FrameProcessor {
        window: hamming(win),
        filterbank: mel_filterbank(cfg.num_filters, fft_size, sr, cfg.low_hz, high_hz),
        fft,
        fft_size,
        log_floor: cfg.log_floor,
        coeff_range,
    };

    let rows = parallel::map_indexed(num_frames, |i| proc.process(&emphasized[i * hop..i * hop + win]));
    let frames = Matrix::from_rows(&rows);
    FeatureMatrix::new(frames, cfg.shift_s, cfg.window_s, FeatureKind::Mfcc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, dur_s: f64, sr: u32) -> Recording {
        let n = (dur_s * sr as f64).round() as usize;
        let samples = (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / sr as f64).sin())
            .collect();
        Recording::new("sine", samples, sr).unwrap()
    }

    #[test]
    fn frame_count_formula() {
        // 2.005 s at 16 kHz, 25 ms window, 10 ms shift -> 199 frames.
        let rec = Recording::new("r", vec![0.0; 32080], 16000).unwrap();
        let feat = extract(&rec, &MfccConfig::default()).unwrap();
        assert_eq!(feat.num_frames(), 199);
        assert_eq!(feat.dim(), 19);
    }

    #[test]
    fn silence_yields_identical_rows() {
        let rec = Recording::new("sil", vec![0.0; 16000], 16000).unwrap();
        let feat = extract(&rec, &MfccConfig::default()).unwrap();
        let first = feat.frames.row(0).to_vec();
        for row in feat.frames.iter_rows() {
            assert_eq!(row, first.as_slice());
        }
        assert!(feat.frames.is_finite());
    }

    #[test]
    fn sine_is_stable_across_frames() {
        // 400 Hz at 16 kHz: the 160-sample hop spans exactly 4 periods, so
        // every interior frame sees identical samples.
        let feat = extract(&sine(400.0, 1.0, 16000), &MfccConfig::default()).unwrap();
        let t = feat.num_frames();
        let reference = feat.frames.row(2).to_vec();
        for i in 2..t {
            for (m, v) in reference.iter().zip(feat.frames.row(i)) {
                assert!((m - v).abs() < 1e-6, "frame {i} deviates: {m} vs {v}");
            }
        }
    }

    #[test]
    fn too_short_recording_rejected() {
        let rec = Recording::new("r", vec![0.0; 100], 16000).unwrap();
        let err = extract(&rec, &MfccConfig::default()).unwrap_err();
        assert!(err.to_string().contains("recording too short"));
    }

    #[test]
    fn matches_reference_dft_implementation() {
        // Independent reference path: direct DFT, its own filterbank code.
        let cfg = MfccConfig::default();
        let rec = sine(440.0, 0.2, 16000);
        let feat = extract(&rec, &cfg).unwrap();
        let reference = reference_mfcc(&rec, &cfg);
        assert_eq!(feat.num_frames(), reference.len());
        for (i, (row, rref)) in feat.frames.iter_rows().zip(&reference).enumerate() {
            for (a, b) in row.iter().zip(rref) {
                assert!((a - b).abs() < 1e-4, "frame {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn shift_by_frame_multiple_shifts_frames() {
        let cfg = MfccConfig::default();
        let base = sine(313.0, 0.5, 16000);
        // Delay by exactly 3 frame shifts (3 * 160 samples).
        let mut delayed = vec![0.0; 480];
        delayed.extend_from_slice(&base.samples);
        let rec2 = Recording::new("d", delayed, 16000).unwrap();
        let f1 = extract(&base, &cfg).unwrap();
        let f2 = extract(&rec2, &cfg).unwrap();
        // Interior frames: frame i of the original equals frame i+3 of the
        // delayed signal (skip the first frame, which sees the padding
        // boundary through pre-emphasis).
        for i in 1..f1.num_frames() - 1 {
            for (a, b) in f1.frames.row(i).iter().zip(f2.frames.row(i + 3)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    /// Straightforward reference MFCC: direct O(N^2) DFT, re-derived
    /// filterbank and DCT. Shares only the config constants with the
    /// production path.
    fn reference_mfcc(rec: &Recording, cfg: &MfccConfig) -> Vec<Vec<f64>> {
        let sr = rec.sample_rate_hz as f64;
        let win = (cfg.window_s * sr).round() as usize;
        let hop = (cfg.shift_s * sr).round() as usize;
        let fft_size = win.next_power_of_two();
        let n_bins = fft_size / 2 + 1;

        let mut x = Vec::with_capacity(rec.samples.len());
        x.push(rec.samples[0]);
        for i in 1..rec.samples.len() {
            x.push(rec.samples[i] - cfg.pre_emphasis * rec.samples[i - 1]);
        }

        let high = cfg.high_hz.unwrap_or(sr / 2.0).min(sr / 2.0);
        let mlo = 2595.0 * (1.0 + cfg.low_hz / 700.0).log10();
        let mhi = 2595.0 * (1.0 + high / 700.0).log10();
        let edge_hz: Vec<f64> = (0..cfg.num_filters + 2)
            .map(|i| {
                let mel = mlo + (mhi - mlo) * i as f64 / (cfg.num_filters + 1) as f64;
                700.0 * (10.0_f64.powf(mel / 2595.0) - 1.0)
            })
            .collect();

        let num_frames = (rec.samples.len() - win) / hop + 1;
        let mut out = Vec::with_capacity(num_frames);
        for f in 0..num_frames {
            let frame = &x[f * hop..f * hop + win];
            // Hamming + direct DFT.
            let mut power = vec![0.0; n_bins];
            for (k, p) in power.iter_mut().enumerate() {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, &s) in frame.iter().enumerate() {
                    let w = 0.54 - 0.46 * (2.0 * PI * n as f64 / (win - 1) as f64).cos();
                    let ang = 2.0 * PI * k as f64 * n as f64 / fft_size as f64;
                    re += s * w * ang.cos();
                    im -= s * w * ang.sin();
                }
                *p = re * re + im * im;
            }
            let mut logs = Vec::with_capacity(cfg.num_filters);
            for m in 0..cfg.num_filters {
                let (fl, fc, fr) = (edge_hz[m], edge_hz[m + 1], edge_hz[m + 2]);
                let mut e = 0.0;
                for (k, &p) in power.iter().enumerate() {
                    let fq = k as f64 * sr / fft_size as f64;
                    let w = if fq <= fl || fq >= fr {
                        0.0
                    } else if fq <= fc {
                        (fq - fl) / (fc - fl)
                    } else {
                        (fr - fq) / (fr - fc)
                    };
                    e += w * p;
                }
                logs.push(e.max(cfg.log_floor).ln());
            }
            let m = logs.len() as f64;
            let row: Vec<f64> = (1..=cfg.num_coeffs)
                .map(|k| {
                    logs.iter()
                        .enumerate()
                        .map(|(n, &e)| e * (PI * k as f64 * (n as f64 + 0.5) / m).cos())
                        .sum()
                })
                .collect();
            out.push(row);
        }
        out
    }
}
