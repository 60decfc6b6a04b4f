//! Speaker diarization via agglomerative information-bottleneck clustering,
//! with a two-pass latent-feature refinement and incremental transfer
//! learning across recordings, plus scoring and real-time-factor
//! benchmarking utilities.
//!
//! The crate is organized around the processing chain:
//!
//! - [`features`]: WAV ingest, MFCC extraction, speech masks, feature files
//! - [`gmm`]: per-recording GMM whose components act as relevance variables
//! - [`ib`]: agglomerative information-bottleneck clustering of segments
//! - [`realign`]: KL-divergence HMM boundary refinement at frame level
//! - [`nn`]: the small feed-forward embedder trained on first-pass labels
//! - [`transfer`]: checkpoint store carrying hidden-layer weights across
//!   recordings
//! - [`fusion`]: PCA whitening of latent features and posterior merging
//! - [`pipeline`]: end-to-end system modes (ib / tpib / tpib-itl)
//! - [`scoring`]: DER/SER scoring against reference annotations, RTF math
//! - [`synth`]: synthetic corpus generation with known ground truth

pub mod error;
pub mod matrix;
pub mod parallel;
pub mod types;

pub mod features;
pub mod rttm;

pub mod gmm;
pub mod ib;
pub mod realign;

pub mod nn;
pub mod transfer;

pub mod fusion;
pub mod pipeline;
pub mod scoring;
pub mod synth;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use types::{DiarizationHypothesis, FrameIndexMap, HypTurn, Recording, SpeechMask};
