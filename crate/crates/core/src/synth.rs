//! Synthetic multi-speaker recordings with exact ground truth, for
//! desk-scale testing and benchmarking.
//!
//! Two fidelity levels: a feature-space process (per-speaker stationary
//! Gaussians in feature space, fast, drives most tests) and an audio-space
//! process (per-speaker resonator-filtered noise, exercises the MFCC path).

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::features::{self, FeatureKind, FeatureMatrix};
use crate::matrix::Matrix;
use crate::rttm;
use crate::scoring::{RefTurn, ReferenceAnnotation};
use crate::types::{Recording, SpeechMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpeakerSignal {
    /// Draw features directly from per-speaker Gaussians.
    GaussianFeatures,
    /// Synthesize audio as noise through per-speaker resonators.
    FilteredNoiseAudio,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub num_speakers: usize,
    /// Uniform turn-length range in seconds.
    pub turn_len_s: (f64, f64),
    pub total_duration_s: f64,
    pub signal: SpeakerSignal,
    /// Scale of the per-speaker mean offsets in feature space; 0 makes all
    /// speakers identically distributed (negative control).
    pub separation: f64,
    pub feature_dim: usize,
    pub frame_shift_s: f64,
    pub sample_rate_hz: u32,
    pub rng_seed: u64,
    /// When set, speaker identities draw from a fixed pool keyed by this
    /// seed, so recordings generated with different `rng_seed`s share
    /// acoustics (the across-recording structure that transfer learning
    /// exploits). Unset, every recording gets fresh speakers.
    pub speaker_pool_seed: Option<u64>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_speakers: 3,
            turn_len_s: (8.0, 12.0),
            total_duration_s: 120.0,
            signal: SpeakerSignal::GaussianFeatures,
            separation: 3.0,
            feature_dim: 19,
            frame_shift_s: 0.010,
            sample_rate_hz: 16000,
            rng_seed: 0,
            speaker_pool_seed: None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum SynthOutput {
    Features(FeatureMatrix),
    Audio(Recording),
}

#[derive(Debug, Clone)]
pub struct SynthItem {
    pub id: String,
    pub output: SynthOutput,
    pub reference: ReferenceAnnotation,
    pub mask: SpeechMask,
}

fn speaker_name(s: usize) -> String {
    format!("S{s}")
}

/// Sample the speaker turn sequence; turns tile `[0, total)` exactly.
fn sample_turns(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<(f64, f64, usize)> {
    if spec.num_speakers == 1 {
        return vec![(0.0, spec.total_duration_s, 0)];
    }
    let mut turns = Vec::new();
    let mut t = 0.0;
    let mut prev: Option<usize> = None;
    while t < spec.total_duration_s {
        let mut s = rng.random_range(0..spec.num_speakers);
        if Some(s) == prev {
            s = (s + 1) % spec.num_speakers;
        }
        let len = rng.random_range(spec.turn_len_s.0..=spec.turn_len_s.1);
        let end = (t + len).min(spec.total_duration_s);
        turns.push((t, end, s));
        prev = Some(s);
        t = end;
    }
    turns
}

/// Generate one recording with its reference annotation and speech mask.
/// Deterministic for a fixed `rng_seed`.
pub fn generate(spec: &SynthSpec) -> Result<SynthItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let turns = sample_turns(spec, &mut rng);
    let reference = ReferenceAnnotation::new(
        turns
            .iter()
            .map(|&(s, e, spk)| RefTurn {
                start_s: s,
                end_s: e,
                speaker: speaker_name(spk),
            })
            .collect(),
    )?;
    let mask = SpeechMask::full(spec.total_duration_s);
    let id = format!("synth-{:08x}", spec.rng_seed);

    let output = match spec.signal {
        SpeakerSignal::GaussianFeatures => {
            let normal = Normal::new(0.0, 1.0).unwrap();
            let means: Vec<Vec<f64>> = match spec.speaker_pool_seed {
                Some(pool_seed) => {
                    let mut pool_rng = ChaCha8Rng::seed_from_u64(pool_seed);
                    (0..spec.num_speakers)
                        .map(|_| {
                            (0..spec.feature_dim)
                                .map(|_| spec.separation * normal.sample(&mut pool_rng))
                                .collect()
                        })
                        .collect()
                }
                None => (0..spec.num_speakers)
                    .map(|_| {
                        (0..spec.feature_dim)
                            .map(|_| spec.separation * normal.sample(&mut rng))
                            .collect()
                    })
                    .collect(),
            };
            let num_frames = (spec.total_duration_s / spec.frame_shift_s).round() as usize;
            let mut m = Matrix::zeros(num_frames, spec.feature_dim);
            let mut turn_idx = 0;
            for i in 0..num_frames {
                let center = (i as f64 + 0.5) * spec.frame_shift_s;
                while turn_idx + 1 < turns.len() && center >= turns[turn_idx].1 {
                    turn_idx += 1;
                }
                let spk = turns[turn_idx].2;
                let row = m.row_mut(i);
                for (v, mu) in row.iter_mut().zip(&means[spk]) {
                    *v = mu + normal.sample(&mut rng);
                }
            }
            SynthOutput::Features(FeatureMatrix::new(
                m,
                spec.frame_shift_s,
                spec.frame_shift_s,
                FeatureKind::Mfcc,
            )?)
        }
        SpeakerSignal::FilteredNoiseAudio => {
            let sr = spec.sample_rate_hz as f64;
            let n = (spec.total_duration_s * sr).round() as usize;
            let mut samples = vec![0.0f64; n];
            // Two resonators per speaker at speaker-specific frequencies.
            let freqs: Vec<(f64, f64)> = (0..spec.num_speakers)
                .map(|s| {
                    let f1 = 350.0 + 420.0 * s as f64;
                    (f1, f1 * 2.3 + 180.0)
                })
                .collect();
            for &(start, end, spk) in &turns {
                let (f1, f2) = freqs[spk];
                let mut reso1 = Resonator::new(f1, 0.985, sr);
                let mut reso2 = Resonator::new(f2, 0.985, sr);
                let a = (start * sr).round() as usize;
                let b = ((end * sr).round() as usize).min(n);
                for sample in samples.iter_mut().take(b).skip(a) {
                    let x: f64 = rng.random_range(-1.0..1.0);
                    *sample = reso1.step(x) + 0.6 * reso2.step(x);
                }
            }
            let peak = samples.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-9);
            for v in &mut samples {
                *v *= 0.5 / peak;
            }
            SynthOutput::Audio(Recording::new(id.clone(), samples, spec.sample_rate_hz)?)
        }
    };

    Ok(SynthItem {
        id,
        output,
        reference,
        mask,
    })
}

/// Two-pole resonator driven by white noise.
struct Resonator {
    b1: f64,
    b2: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq_hz: f64, r: f64, sample_rate: f64) -> Self {
        let theta = 2.0 * PI * freq_hz / sample_rate;
        Resonator {
            b1: 2.0 * r * theta.cos(),
            b2: -r * r,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = x + self.b1 * self.y1 + self.b2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedItem {
    pub id: String,
    pub data_path: PathBuf,
    pub reference_path: PathBuf,
    pub is_audio: bool,
}

/// Write the item into `dir` using the repo formats: WAV or binary feature
/// file plus an RTTM reference (which doubles as the speech mask source).
pub fn save_item(dir: &Path, item: &SynthItem) -> Result<SavedItem> {
    std::fs::create_dir_all(dir)?;
    let reference_path = dir.join(format!("{}.rttm", item.id));
    let mut lines = String::new();
    for t in &item.reference.turns {
        use std::fmt::Write as _;
        writeln!(
            lines,
            "SPEAKER {} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>",
            item.id,
            t.start_s,
            t.end_s - t.start_s,
            t.speaker
        )
        .unwrap();
    }
    std::fs::write(&reference_path, lines)?;

    let (data_path, is_audio) = match &item.output {
        SynthOutput::Features(feat) => {
            let p = dir.join(format!("{}.dzf", item.id));
            features::save_features(&p, feat)?;
            (p, false)
        }
        SynthOutput::Audio(rec) => {
            let p = dir.join(format!("{}.wav", item.id));
            features::write_wav_mono(&p, &rec.samples, rec.sample_rate_hz)?;
            (p, true)
        }
    };
    // Round-trip guard: the reference must parse back.
    rttm::read_reference(&reference_path, Some(&item.id))?;
    Ok(SavedItem {
        id: item.id.clone(),
        data_path,
        reference_path,
        is_audio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_speaker_single_turn() {
        let spec = SynthSpec {
            num_speakers: 1,
            total_duration_s: 60.0,
            ..SynthSpec::default()
        };
        let item = generate(&spec).unwrap();
        assert_eq!(item.reference.turns.len(), 1);
        assert_eq!(item.reference.turns[0].start_s, 0.0);
        assert_eq!(item.reference.turns[0].end_s, 60.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec {
            num_speakers: 4,
            rng_seed: 99,
            ..SynthSpec::default()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.reference, b.reference);
        match (&a.output, &b.output) {
            (SynthOutput::Features(fa), SynthOutput::Features(fb)) => {
                assert_eq!(fa.frames, fb.frames);
            }
            _ => panic!("expected feature output"),
        }
    }

    #[test]
    fn turns_tile_the_mask_exactly() {
        let spec = SynthSpec {
            num_speakers: 3,
            total_duration_s: 95.0,
            rng_seed: 5,
            ..SynthSpec::default()
        };
        let item = generate(&spec).unwrap();
        let turns = &item.reference.turns;
        assert_eq!(turns[0].start_s, 0.0);
        for w in turns.windows(2) {
            assert_eq!(w[0].end_s, w[1].start_s);
            assert_ne!(w[0].speaker, w[1].speaker);
        }
        assert_eq!(turns.last().unwrap().end_s, 95.0);
        assert_eq!(item.mask.intervals(), &[(0.0, 95.0)]);
    }

    #[test]
    fn separation_controls_speaker_distance() {
        let at = |sep: f64| -> f64 {
            let spec = SynthSpec {
                num_speakers: 2,
                separation: sep,
                total_duration_s: 60.0,
                rng_seed: 11,
                ..SynthSpec::default()
            };
            let item = generate(&spec).unwrap();
            let feat = match &item.output {
                SynthOutput::Features(f) => f,
                _ => unreachable!(),
            };
            // Empirical per-speaker means from the ground truth.
            let mut sums = vec![vec![0.0; feat.dim()]; 2];
            let mut counts = [0usize; 2];
            for (i, row) in feat.frames.iter_rows().enumerate() {
                let c = (i as f64 + 0.5) * feat.frame_shift_s;
                let spk = item
                    .reference
                    .turns
                    .iter()
                    .find(|t| c >= t.start_s && c < t.end_s)
                    .map(|t| if t.speaker == "S0" { 0 } else { 1 })
                    .unwrap();
                for (a, &v) in sums[spk].iter_mut().zip(row) {
                    *a += v;
                }
                counts[spk] += 1;
            }
            let mut dist2 = 0.0;
            for d in 0..feat.dim() {
                let diff = sums[0][d] / counts[0] as f64 - sums[1][d] / counts[1] as f64;
                dist2 += diff * diff;
            }
            dist2.sqrt()
        };
        let d0 = at(0.0);
        let d5 = at(5.0);
        assert!(d0 < 0.5, "zero separation should be near-identical, got {d0}");
        assert!(d5 > 5.0, "separated speakers too close: {d5}");
    }

    #[test]
    fn audio_mode_produces_wav_compatible_signal() {
        let spec = SynthSpec {
            num_speakers: 2,
            total_duration_s: 3.0,
            signal: SpeakerSignal::FilteredNoiseAudio,
            rng_seed: 3,
            ..SynthSpec::default()
        };
        let item = generate(&spec).unwrap();
        match &item.output {
            SynthOutput::Audio(rec) => {
                assert_eq!(rec.samples.len(), 48000);
                assert!(rec.samples.iter().all(|v| v.abs() <= 0.5 + 1e-12));
                assert!(rec.samples.iter().any(|&v| v.abs() > 0.01));
            }
            _ => panic!("expected audio"),
        }
    }

    #[test]
    fn saved_item_files_parse_back() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            num_speakers: 2,
            total_duration_s: 10.0,
            rng_seed: 8,
            ..SynthSpec::default()
        };
        let item = generate(&spec).unwrap();
        let saved = save_item(dir.path(), &item).unwrap();
        let feat = features::load_features(&saved.data_path).unwrap();
        assert_eq!(feat.dim(), 19);
        let re = rttm::read_reference(&saved.reference_path, None).unwrap();
        assert_eq!(re.turns.len(), item.reference.turns.len());
    }
}
