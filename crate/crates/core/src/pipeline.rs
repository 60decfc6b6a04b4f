//! End-to-end diarization systems.
//!
//! Four modes share one processing chain:
//!
//! - `ib`: segment, model relevance components, bottleneck-cluster, realign.
//! - `tpib`: run `ib` as a first pass, train a fresh embedder on its labels,
//!   whiten the latents, fuse the two posterior streams, re-cluster.
//! - `tpib-itl`: like `tpib`, but the embedder's hidden layers are carried
//!   across recordings through a transfer store and only fine-tuned.
//! - `tpib-itl-frozen`: incremental over a development set, then the stored
//!   checkpoint is served unchanged to every test recording.
//!
//! Every stage is timed; reports carry the five-stage decomposition
//! (features, first pass, network, latent+fusion, second pass) and
//! per-recording real-time factors.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, FeatureKind, FeatureMatrix, MfccConfig};
use crate::fusion::{self, StreamWeights};
use crate::gmm::{self, EmConfig, PosteriorMatrix, SegmentSet};
use crate::ib;
use crate::nn::{self, SgdConfig, TrainBatchSet};
use crate::realign::{self, RealignConfig};
use crate::rttm;
use crate::scoring::{self, ReferenceAnnotation, ScoreConfig};
use crate::transfer::TransferState;
use crate::types::{derive_seed, DiarizationHypothesis, FrameIndexMap, SpeechMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemMode {
    Ib,
    Tpib,
    TpibItl,
    TpibItlFrozen,
}

impl std::str::FromStr for SystemMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ib" => Ok(SystemMode::Ib),
            "tpib" => Ok(SystemMode::Tpib),
            "tpib-itl" => Ok(SystemMode::TpibItl),
            "tpib-itl-frozen" | "tpib-itl-dev" => Ok(SystemMode::TpibItlFrozen),
            other => Err(Error::config(format!(
                "unknown system '{other}' (expected ib, tpib, tpib-itl, tpib-itl-frozen)"
            ))),
        }
    }
}

impl std::fmt::Display for SystemMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SystemMode::Ib => "ib",
            SystemMode::Tpib => "tpib",
            SystemMode::TpibItl => "tpib-itl",
            SystemMode::TpibItlFrozen => "tpib-itl-frozen",
        };
        f.write_str(s)
    }
}

fn default_weights() -> StreamWeights {
    StreamWeights::new(0.1, 0.9).unwrap()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub system: SystemMode,
    /// Clustering stops when I(Y,C)/I(X,Y) would fall below this.
    pub nmi_threshold: f64,
    pub beta: f64,
    /// Initial uniform segment length.
    pub seg_len_s: f64,
    /// Relevance components per recording: segment count capped here.
    pub max_components: usize,
    pub em: EmConfig,
    pub mfcc: MfccConfig,
    pub realign: RealignConfig,
    /// Stream weights used for the emitted hypothesis.
    pub fusion_weights: StreamWeights,
    /// Optional sweep step; adds a Table-style SER grid to reports.
    pub weight_sweep: Option<f64>,
    /// Epoch cap when training a network from scratch.
    pub seed_epochs: usize,
    /// Epoch cap when fine-tuning from a transferred checkpoint.
    pub finetune_epochs: usize,
    pub sgd: SgdConfig,
    /// Drop frames this close to a first-pass boundary from the training
    /// targets. Off by default.
    pub exclude_boundary_s: Option<f64>,
    pub scoring: ScoreConfig,
    pub rng_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            system: SystemMode::Ib,
            nmi_threshold: 0.4,
            beta: 10.0,
            seg_len_s: 2.5,
            max_components: 50,
            em: EmConfig::default(),
            mfcc: MfccConfig::default(),
            realign: RealignConfig::default(),
            fusion_weights: default_weights(),
            weight_sweep: None,
            seed_epochs: 200,
            finetune_epochs: 50,
            sgd: SgdConfig::default(),
            exclude_boundary_s: None,
            scoring: ScoreConfig::default(),
            rng_seed: 0,
        }
    }
}

/// Where a recording's features come from.
#[derive(Debug, Clone)]
pub enum RecordingSource {
    Wav(PathBuf),
    FeatureFile(PathBuf),
    InMemory(FeatureMatrix),
}

#[derive(Debug, Clone)]
pub struct RecordingInput {
    pub id: String,
    pub source: RecordingSource,
    pub mask: SpeechMask,
    pub reference: Option<ReferenceAnnotation>,
}

/// Five-stage wall-time decomposition of one processed recording.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageSeconds {
    pub features: f64,
    pub first_pass: f64,
    pub ann: f64,
    pub latent_fusion: f64,
    pub second_pass: f64,
}

impl StageSeconds {
    pub fn as_vec(&self) -> Vec<(String, f64)> {
        vec![
            ("features".to_string(), self.features),
            ("first_pass".to_string(), self.first_pass),
            ("ann".to_string(), self.ann),
            ("latent_fusion".to_string(), self.latent_fusion),
            ("second_pass".to_string(), self.second_pass),
        ]
    }

    pub fn total(&self) -> f64 {
        self.features + self.first_pass + self.ann + self.latent_fusion + self.second_pass
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordingReport {
    pub recording_id: String,
    pub duration_s: f64,
    pub stage_seconds: StageSeconds,
    pub total_seconds: f64,
    pub rtf: f64,
    pub num_clusters: usize,
    pub ann_epochs: usize,
    /// SER of the emitted hypothesis when a reference is available.
    pub ser_pct: Option<f64>,
    pub speaker_count_error: Option<usize>,
    /// Sweep grid results: one `(weights, SER)` entry per pair.
    pub ser_by_weight: Vec<(String, f64)>,
    pub error: Option<String>,
}

impl RecordingReport {
    fn failed(id: &str, err: &Error) -> Self {
        RecordingReport {
            recording_id: id.to_string(),
            duration_s: 0.0,
            stage_seconds: StageSeconds::default(),
            total_seconds: 0.0,
            rtf: 0.0,
            num_clusters: 0,
            ann_epochs: 0,
            ser_pct: None,
            speaker_count_error: None,
            ser_by_weight: Vec::new(),
            error: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub system: String,
    pub recordings: Vec<RecordingReport>,
}

impl RunReport {
    pub fn new(system: SystemMode) -> Self {
        RunReport {
            system: system.to_string(),
            recordings: Vec::new(),
        }
    }

    pub fn mean_rtf(&self) -> f64 {
        let ok: Vec<&RecordingReport> =
            self.recordings.iter().filter(|r| r.error.is_none()).collect();
        if ok.is_empty() {
            return 0.0;
        }
        ok.iter().map(|r| r.rtf).sum::<f64>() / ok.len() as f64
    }

    pub fn mean_ser_pct(&self) -> Option<f64> {
        let sers: Vec<f64> = self.recordings.iter().filter_map(|r| r.ser_pct).collect();
        if sers.is_empty() {
            None
        } else {
            Some(sers.iter().sum::<f64>() / sers.len() as f64)
        }
    }

    /// Mean per-stage RTF over successful recordings.
    pub fn stage_rtf_means(&self) -> Vec<(String, f64)> {
        let ok: Vec<&RecordingReport> =
            self.recordings.iter().filter(|r| r.error.is_none()).collect();
        let names = StageSeconds::default().as_vec();
        names
            .iter()
            .enumerate()
            .map(|(i, (name, _))| {
                let mean = if ok.is_empty() {
                    0.0
                } else {
                    ok.iter()
                        .map(|r| r.stage_seconds.as_vec()[i].1 / r.duration_s)
                        .sum::<f64>()
                        / ok.len() as f64
                };
                (name.clone(), mean)
            })
            .collect()
    }
}

/// Load (or extract) features for a recording and return them with the
/// recording duration.
fn load_stage(input: &RecordingInput, cfg: &PipelineConfig) -> Result<(FeatureMatrix, f64)> {
    match &input.source {
        RecordingSource::Wav(path) => {
            let rec = features::read_wav_mono(path)?;
            let duration = rec.duration_s();
            let feat = features::extract_mfcc(&rec, &cfg.mfcc)?;
            Ok((feat, duration))
        }
        RecordingSource::FeatureFile(path) => {
            let feat = features::load_features(path)?;
            let duration = feat.num_frames() as f64 * feat.frame_shift_s;
            Ok((feat, duration))
        }
        RecordingSource::InMemory(feat) => {
            let duration = feat.num_frames() as f64 * feat.frame_shift_s;
            Ok((feat.clone(), duration))
        }
    }
}

struct FirstPass {
    masked: FeatureMatrix,
    index_map: FrameIndexMap,
    segments: SegmentSet,
    k: usize,
    /// Spectral-stream frame posteriors from the first-pass GMM.
    frame_post: PosteriorMatrix,
    /// Realigned per-frame cluster labels (masked timeline).
    labels: Vec<usize>,
    merge_records: Vec<ib::MergeRecord>,
}

fn first_pass(
    feat: &FeatureMatrix,
    mask: &SpeechMask,
    cfg: &PipelineConfig,
    em_seed: u64,
) -> Result<FirstPass> {
    let (masked, index_map) = features::apply_speech_mask(feat, mask)?;
    let segments = gmm::uniform_segment(&masked, cfg.seg_len_s)?;
    let k = segments.len().min(cfg.max_components);
    let em_cfg = EmConfig {
        seed: em_seed,
        ..cfg.em.clone()
    };
    let fit = gmm::fit_gmm(&masked, k, &em_cfg)?;
    let seg_post = gmm::segment_posteriors(&fit.gmm, &masked, &segments)?;
    let frame_post = gmm::frame_posteriors(&fit.gmm, &masked)?;

    let state = ib::init_clusters(&seg_post, &segments.priors, cfg.beta)?;
    let (clustering, merge_records) = ib::agglomerate(state, cfg.nmi_threshold)?;
    let seg_labels = segments.frame_labels(&clustering.assignments);
    let labels = realign::realign_iterate(&seg_labels, &frame_post, &cfg.realign)?;

    Ok(FirstPass {
        masked,
        index_map,
        segments,
        k,
        frame_post,
        labels,
        merge_records,
    })
}

/// Second clustering pass on fused posteriors; returns realigned labels.
fn second_pass(
    fp: &FirstPass,
    fused_frame_post: &PosteriorMatrix,
    cfg: &PipelineConfig,
) -> Result<(Vec<usize>, Vec<ib::MergeRecord>)> {
    let seg_post = gmm::segment_average_posteriors(fused_frame_post, &fp.segments)?;
    let state = ib::init_clusters(&seg_post, &fp.segments.priors, cfg.beta)?;
    let (clustering, records) = ib::agglomerate(state, cfg.nmi_threshold)?;
    let seg_labels = fp.segments.frame_labels(&clustering.assignments);
    let labels = realign::realign_iterate(&seg_labels, fused_frame_post, &cfg.realign)?;
    Ok((labels, records))
}

fn score_hypothesis(
    hyp: &DiarizationHypothesis,
    reference: Option<&ReferenceAnnotation>,
    cfg: &PipelineConfig,
) -> (Option<f64>, Option<usize>) {
    match reference {
        Some(r) => match scoring::score(hyp, r, &cfg.scoring) {
            Ok(s) => (Some(s.ser_pct), Some(s.speaker_count_error)),
            Err(e) => {
                log::warn!("scoring failed for {}: {e}", hyp.recording_id);
                (None, None)
            }
        },
        None => (None, None),
    }
}

pub struct RecordingOutcome {
    pub hypothesis: DiarizationHypothesis,
    pub report: RecordingReport,
    /// First-pass merge trajectory, exportable as CSV.
    pub merge_records: Vec<ib::MergeRecord>,
}

/// Baseline single-pass system: cluster spectral posteriors, realign.
pub fn run_ib(input: &RecordingInput, cfg: &PipelineConfig) -> Result<RecordingOutcome> {
    let mut stages = StageSeconds::default();
    let t = Instant::now();
    let (feat, duration) = load_stage(input, cfg)?;
    stages.features = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let em_seed = derive_seed(cfg.rng_seed, &[&input.id, "em"]);
    let fp = first_pass(&feat, &input.mask, cfg, em_seed)?;
    stages.first_pass = t.elapsed().as_secs_f64();

    let hypothesis =
        DiarizationHypothesis::from_frame_labels(&input.id, &fp.labels, &fp.index_map);
    let (ser_pct, spk_err) = score_hypothesis(&hypothesis, input.reference.as_ref(), cfg);
    let report = RecordingReport {
        recording_id: input.id.clone(),
        duration_s: duration,
        stage_seconds: stages,
        total_seconds: stages.total(),
        rtf: stages.total() / duration,
        num_clusters: hypothesis.num_clusters(),
        ann_epochs: 0,
        ser_pct,
        speaker_count_error: spk_err,
        ser_by_weight: Vec::new(),
        error: None,
    };
    Ok(RecordingOutcome {
        hypothesis,
        report,
        merge_records: fp.merge_records,
    })
}

/// How the two-pass run obtains its trained network.
enum AnnSource<'a> {
    /// Fresh Xavier init, trained from scratch (tpib).
    Fresh,
    /// Fine-tune from the transfer store and commit the result.
    Transfer(&'a mut TransferState),
}

fn run_two_pass(
    input: &RecordingInput,
    cfg: &PipelineConfig,
    ann: AnnSource<'_>,
) -> Result<RecordingOutcome> {
    let mut stages = StageSeconds::default();
    let t = Instant::now();
    let (feat, duration) = load_stage(input, cfg)?;
    stages.features = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let em_seed = derive_seed(cfg.rng_seed, &[&input.id, "em"]);
    let fp = first_pass(&feat, &input.mask, cfg, em_seed)?;
    stages.first_pass = t.elapsed().as_secs_f64();

    let finish = |fp: &FirstPass,
                  labels: &[usize],
                  stages: StageSeconds,
                  ann_epochs: usize,
                  ser_by_weight: Vec<(String, f64)>,
                  records: Vec<ib::MergeRecord>|
     -> RecordingOutcome {
        let hypothesis =
            DiarizationHypothesis::from_frame_labels(&input.id, labels, &fp.index_map);
        let (ser_pct, spk_err) = score_hypothesis(&hypothesis, input.reference.as_ref(), cfg);
        let report = RecordingReport {
            recording_id: input.id.clone(),
            duration_s: duration,
            stage_seconds: stages,
            total_seconds: stages.total(),
            rtf: stages.total() / duration,
            num_clusters: hypothesis.num_clusters(),
            ann_epochs,
            ser_pct,
            speaker_count_error: spk_err,
            ser_by_weight,
            error: None,
        };
        RecordingOutcome {
            hypothesis,
            report,
            merge_records: records,
        }
    };

    // Network stage. A single-cluster first pass cannot train a classifier;
    // fall back to the first-pass output and skip any commit.
    let t = Instant::now();
    let batch = TrainBatchSet::from_labeled_frames(&fp.masked, &fp.labels, cfg.exclude_boundary_s);
    let batch = match batch {
        Ok((set, _)) if set.num_labels >= 2 => set,
        _ => {
            log::warn!(
                "{}: degenerate first pass ({} cluster); emitting first-pass hypothesis",
                input.id,
                DiarizationHypothesis::from_frame_labels(&input.id, &fp.labels, &fp.index_map)
                    .num_clusters()
            );
            let records = fp.merge_records.clone();
            return Ok(finish(&fp, &fp.labels, stages, 0, Vec::new(), records));
        }
    };
    let init_seed = derive_seed(cfg.rng_seed, &[&input.id, "xavier"]);
    let sgd = SgdConfig {
        shuffle_seed: derive_seed(cfg.rng_seed, &[&input.id, "shuffle"]),
        ..cfg.sgd.clone()
    };
    let (ckpt, ann_epochs) = match ann {
        AnnSource::Fresh => {
            let spec = nn::NetworkSpec {
                input_dim: fp.masked.dim(),
                ..nn::NetworkSpec::new(batch.num_labels)
            };
            let init = nn::xavier_init(&spec, init_seed);
            let out = nn::train(
                &init,
                &batch,
                &SgdConfig {
                    epochs: cfg.seed_epochs,
                    ..sgd
                },
            )?;
            (out.checkpoint, out.epochs_run)
        }
        AnnSource::Transfer(state) => {
            if state.is_empty() {
                let out = state.bootstrap_seed(
                    &input.id,
                    &batch,
                    init_seed,
                    &SgdConfig {
                        epochs: cfg.seed_epochs,
                        ..sgd
                    },
                )?;
                (out.checkpoint, out.epochs_run)
            } else {
                let seed_ckpt = state.checkout()?.clone();
                let out = nn::fine_tune(
                    &seed_ckpt,
                    batch.num_labels,
                    &batch,
                    init_seed,
                    &SgdConfig {
                        epochs: cfg.finetune_epochs,
                        ..sgd
                    },
                )?;
                state.commit(out.checkpoint.clone(), &input.id, out.epochs_run as u64)?;
                (out.checkpoint, out.epochs_run)
            }
        }
    };
    stages.ann = t.elapsed().as_secs_f64();

    // Latent extraction, whitening, latent-stream posteriors.
    let t = Instant::now();
    let (latent, _) = nn::forward(&ckpt, &fp.masked.frames)?;
    let pca = fusion::fit_pca_whiten(&latent)?;
    let white = pca.transform(&latent)?;
    let white_feat = FeatureMatrix::new(
        white,
        fp.masked.frame_shift_s,
        fp.masked.frame_length_s,
        FeatureKind::Latent,
    )?;
    let lat_em = EmConfig {
        seed: em_seed,
        ..cfg.em.clone()
    };
    let lat_fit = gmm::fit_gmm(&white_feat, fp.k, &lat_em)?;
    let lat_frame_post = gmm::frame_posteriors(&lat_fit.gmm, &white_feat)?;
    stages.latent_fusion = t.elapsed().as_secs_f64();

    // Second pass: primary weights produce the emitted hypothesis; the
    // optional sweep fills the SER grid.
    let t = Instant::now();
    let fused = fusion::fuse_posteriors(&fp.frame_post, &lat_frame_post, cfg.fusion_weights)?;
    let (labels, records) = second_pass(&fp, &fused, cfg)?;
    let mut ser_by_weight = Vec::new();
    if let Some(step) = cfg.weight_sweep {
        for w in fusion::sweep_weights(step)? {
            let fused_w = fusion::fuse_posteriors(&fp.frame_post, &lat_frame_post, w)?;
            let (labels_w, _) = second_pass(&fp, &fused_w, cfg)?;
            let hyp_w =
                DiarizationHypothesis::from_frame_labels(&input.id, &labels_w, &fp.index_map);
            if let (Some(ser), _) = score_hypothesis(&hyp_w, input.reference.as_ref(), cfg) {
                ser_by_weight.push((w.to_string(), ser));
            }
        }
    }
    stages.second_pass = t.elapsed().as_secs_f64();

    Ok(finish(&fp, &labels, stages, ann_epochs, ser_by_weight, records))
}

/// Two-pass system with a freshly trained network per recording.
pub fn run_tpib(input: &RecordingInput, cfg: &PipelineConfig) -> Result<RecordingOutcome> {
    run_two_pass(input, cfg, AnnSource::Fresh)
}

/// Two-pass system with incremental transfer learning over an ordered
/// corpus. The first recording bootstraps the seed network; each later
/// recording checks out, fine-tunes, and commits. A failed recording is
/// reported and skips its commit; the batch continues.
pub fn run_tpib_itl(
    corpus: &[RecordingInput],
    state: &mut TransferState,
    cfg: &PipelineConfig,
) -> Result<(Vec<DiarizationHypothesis>, RunReport)> {
    let mut report = RunReport::new(SystemMode::TpibItl);
    let mut hypotheses = Vec::new();
    for input in corpus {
        match run_two_pass(input, cfg, AnnSource::Transfer(state)) {
            Ok(out) => {
                hypotheses.push(out.hypothesis.clone());
                report.recordings.push(out.report);
            }
            Err(e) => {
                log::warn!("{}: {e}", input.id);
                report.recordings.push(RecordingReport::failed(&input.id, &e));
            }
        }
    }
    Ok((hypotheses, report))
}

pub struct FrozenOutcome {
    pub dev_hypotheses: Vec<DiarizationHypothesis>,
    pub test_hypotheses: Vec<DiarizationHypothesis>,
    pub dev_report: RunReport,
    pub test_report: RunReport,
}

/// Incremental transfer over the development corpus, then freeze: every
/// test recording fine-tunes from the same stored checkpoint, so test
/// outputs are independent of processing order.
pub fn run_tpib_itl_frozen(
    dev_corpus: &[RecordingInput],
    test_corpus: &[RecordingInput],
    state: &mut TransferState,
    cfg: &PipelineConfig,
) -> Result<FrozenOutcome> {
    if dev_corpus.is_empty() || test_corpus.is_empty() {
        return Err(Error::invalid("frozen mode needs non-empty dev and test corpora"));
    }
    let (dev_hypotheses, mut dev_report) = run_tpib_itl(dev_corpus, state, cfg)?;
    dev_report.system = SystemMode::TpibItlFrozen.to_string();
    state.freeze();
    let (test_hypotheses, mut test_report) = run_tpib_itl(test_corpus, state, cfg)?;
    test_report.system = SystemMode::TpibItlFrozen.to_string();
    Ok(FrozenOutcome {
        dev_hypotheses,
        test_hypotheses,
        dev_report,
        test_report,
    })
}

/// Convenience wrapper: build a `RecordingInput` from file paths, reading
/// the speech mask from an RTTM or `start,end` CSV file.
pub fn input_from_paths(
    id: &str,
    data: &std::path::Path,
    mask_path: Option<&std::path::Path>,
    reference_path: Option<&std::path::Path>,
) -> Result<RecordingInput> {
    let source = match data.extension().and_then(|e| e.to_str()) {
        Some("wav") => RecordingSource::Wav(data.to_path_buf()),
        _ => RecordingSource::FeatureFile(data.to_path_buf()),
    };
    let reference = match reference_path {
        Some(p) => Some(rttm::read_reference(p, Some(id)).or_else(|_| rttm::read_reference(p, None))?),
        None => None,
    };
    let mask = match mask_path {
        Some(p) => {
            if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
                rttm::read_speech_mask_csv(p)?
            } else {
                rttm::read_speech_mask(p, Some(id)).or_else(|_| rttm::read_speech_mask(p, None))?
            }
        }
        None => match &reference {
            Some(r) => SpeechMask::from_intervals(
                r.turns.iter().map(|t| (t.start_s, t.end_s)).collect(),
            )?,
            None => {
                // No mask and no reference: treat the whole recording as
                // speech. Duration is known only after loading, so use a
                // generous bound; masking clips to real frames.
                SpeechMask::full(f64::MAX / 4.0)
            }
        },
    };
    Ok(RecordingInput {
        id: id.to_string(),
        source,
        mask,
        reference,
    })
}
