//! Checkpoint store carrying learned speaker discrimination across
//! recordings.
//!
//! The store owns the current network checkpoint, serves it as the
//! initialization for each new recording, and commits the fine-tuned
//! replacement afterwards. In `Frozen` mode the served checkpoint never
//! changes: commits are logged but dropped, which makes every recording's
//! processing independent of order.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, ModelCheckpoint, SgdConfig, TrainBatchSet, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferMode {
    Incremental,
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub recording_id: String,
    pub checkpoint_id: String,
    pub epochs: u64,
    pub timestamp_unix_s: u64,
    /// False when a frozen store logged the event without adopting the
    /// checkpoint.
    pub committed: bool,
}

#[derive(Debug, Clone)]
pub struct TransferState {
    current: Option<ModelCheckpoint>,
    history: Vec<HistoryEntry>,
    mode: TransferMode,
}

impl Default for TransferState {
    fn default() -> Self {
        Self::new()
    }
}

fn now_unix_s() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl TransferState {
    pub fn new() -> Self {
        TransferState {
            current: None,
            history: Vec::new(),
            mode: TransferMode::Incremental,
        }
    }

    /// Start from an externally supplied checkpoint (e.g. loaded from a
    /// file) instead of bootstrapping on the first recording.
    pub fn seeded(ckpt: ModelCheckpoint) -> Self {
        let entry = HistoryEntry {
            recording_id: "<imported>".to_string(),
            checkpoint_id: ckpt.content_id(),
            epochs: 0,
            timestamp_unix_s: now_unix_s(),
            committed: true,
        };
        TransferState {
            current: Some(ckpt),
            history: vec![entry],
            mode: TransferMode::Incremental,
        }
    }

    pub fn mode(&self) -> TransferMode {
        self.mode
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_none()
    }

    /// Stop adopting commits; the current checkpoint is served unchanged
    /// from here on.
    pub fn freeze(&mut self) {
        self.mode = TransferMode::Frozen;
    }

    /// Train the seed network from scratch (Xavier init) on the first
    /// recording's first-pass labels and adopt it.
    pub fn bootstrap_seed(
        &mut self,
        recording_id: &str,
        data: &TrainBatchSet,
        init_seed: u64,
        cfg: &SgdConfig,
    ) -> Result<TrainOutcome> {
        if self.current.is_some() {
            return Err(Error::invalid("seed already exists"));
        }
        let spec = nn::NetworkSpec {
            input_dim: data.inputs.cols(),
            ..nn::NetworkSpec::new(data.num_labels)
        };
        let init = nn::xavier_init(&spec, init_seed);
        let outcome = nn::train(&init, data, cfg)?;
        self.history.push(HistoryEntry {
            recording_id: recording_id.to_string(),
            checkpoint_id: outcome.checkpoint.content_id(),
            epochs: outcome.epochs_run as u64,
            timestamp_unix_s: now_unix_s(),
            committed: true,
        });
        self.current = Some(outcome.checkpoint.clone());
        Ok(outcome)
    }

    /// The checkpoint to initialize the next recording's network from.
    pub fn checkout(&self) -> Result<&ModelCheckpoint> {
        self.current
            .as_ref()
            .ok_or_else(|| Error::invalid("no seed available"))
    }

    /// Record a fine-tuned checkpoint. Incremental mode adopts it;
    /// frozen mode only logs the event.
    pub fn commit(
        &mut self,
        new_ckpt: ModelCheckpoint,
        recording_id: &str,
        epochs: u64,
    ) -> Result<()> {
        let current = self
            .current
            .as_ref()
            .ok_or_else(|| Error::invalid("no seed available"))?;
        let (a, b) = (current.spec(), new_ckpt.spec());
        if a.input_dim != b.input_dim || a.hidden1 != b.hidden1 || a.hidden2 != b.hidden2 {
            return Err(Error::invalid(format!(
                "incompatible architecture: {a:?} vs {b:?}"
            )));
        }
        let committed = self.mode == TransferMode::Incremental;
        self.history.push(HistoryEntry {
            recording_id: recording_id.to_string(),
            checkpoint_id: new_ckpt.content_id(),
            epochs,
            timestamp_unix_s: now_unix_s(),
            committed,
        });
        if committed {
            self.current = Some(new_ckpt);
        } else {
            log::info!("frozen store: logged {recording_id} without adopting checkpoint");
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    mode: TransferMode,
    /// File name of the current checkpoint within the store directory.
    current: Option<String>,
    entries: Vec<HistoryEntry>,
}

impl TransferState {
    /// Persist as a directory: one checkpoint file per distinct committed
    /// checkpoint plus a JSON manifest, so batch runs can resume.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let current_file = match &self.current {
            Some(ckpt) => {
                let name = format!("ckpt-{}.dzc", ckpt.content_id());
                nn::save_checkpoint(&dir.join(&name), ckpt)?;
                Some(name)
            }
            None => None,
        };
        let manifest = Manifest {
            schema_version: 1,
            mode: self.mode,
            current: current_file,
            entries: self.history.clone(),
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::format(format!("manifest encode: {e}")))?;
        fs::write(dir.join("manifest.json"), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let text = fs::read_to_string(&manifest_path)
            .map_err(|e| Error::format(format!("{}: {e}", manifest_path.display())))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::format(format!("manifest decode: {e}")))?;
        if manifest.schema_version != 1 {
            return Err(Error::format(format!(
                "unsupported manifest schema {}",
                manifest.schema_version
            )));
        }
        let current = match manifest.current {
            Some(name) => Some(nn::load_checkpoint(&dir.join(name))?),
            None => None,
        };
        Ok(TransferState {
            current,
            history: manifest.entries,
            mode: manifest.mode,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_data(l: usize, seed: u64) -> TrainBatchSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..l * 8)
            .map(|i| {
                let c = i % l;
                vec![
                    c as f64 + rng.random_range(-0.1..0.1),
                    -(c as f64) + rng.random_range(-0.1..0.1),
                ]
            })
            .collect();
        let targets: Vec<usize> = (0..l * 8).map(|i| i % l).collect();
        TrainBatchSet::new(Matrix::from_rows(&rows), targets, l).unwrap()
    }

    fn quick_cfg() -> SgdConfig {
        SgdConfig {
            epochs: 3,
            batch_size: 8,
            ..SgdConfig::default()
        }
    }

    #[test]
    fn bootstrap_then_checkout() {
        let mut state = TransferState::new();
        let data = tiny_data(2, 1);
        let out = state.bootstrap_seed("rec1", &data, 42, &quick_cfg()).unwrap();
        assert_eq!(state.history().len(), 1);
        assert!(state.history()[0].committed);
        assert_eq!(out.checkpoint.meta.created_from, "xavier");
        let a = state.checkout().unwrap().clone();
        let b = state.checkout().unwrap().clone();
        assert_eq!(a, b);
    }

    #[test]
    fn bootstrap_twice_rejected() {
        let mut state = TransferState::new();
        let data = tiny_data(2, 1);
        state.bootstrap_seed("rec1", &data, 42, &quick_cfg()).unwrap();
        let err = state
            .bootstrap_seed("rec2", &data, 42, &quick_cfg())
            .unwrap_err();
        assert!(err.to_string().contains("seed already exists"));
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let data = tiny_data(3, 5);
        let mut s1 = TransferState::new();
        let mut s2 = TransferState::new();
        let a = s1.bootstrap_seed("r", &data, 7, &quick_cfg()).unwrap();
        let b = s2.bootstrap_seed("r", &data, 7, &quick_cfg()).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(
            s1.history()[0].checkpoint_id,
            s2.history()[0].checkpoint_id
        );
    }

    #[test]
    fn empty_store_has_no_checkout() {
        let state = TransferState::new();
        let err = state.checkout().unwrap_err();
        assert!(err.to_string().contains("no seed available"));
    }

    #[test]
    fn incremental_commit_replaces_current() {
        let mut state = TransferState::new();
        let data = tiny_data(2, 2);
        state.bootstrap_seed("rec1", &data, 1, &quick_cfg()).unwrap();
        let seed = state.checkout().unwrap().clone();
        let tuned = nn::fine_tune(&seed, 2, &data, 9, &quick_cfg()).unwrap();
        state.commit(tuned.checkpoint.clone(), "rec2", 3).unwrap();
        assert_eq!(state.checkout().unwrap(), &tuned.checkpoint);
        assert_eq!(state.history().len(), 2);
    }

    #[test]
    fn frozen_commit_logs_but_keeps_current() {
        let mut state = TransferState::new();
        let data = tiny_data(2, 3);
        state.bootstrap_seed("rec1", &data, 1, &quick_cfg()).unwrap();
        state.freeze();
        let before = state.checkout().unwrap().clone();
        let tuned = nn::fine_tune(&before, 2, &data, 10, &quick_cfg()).unwrap();
        state.commit(tuned.checkpoint, "rec2", 3).unwrap();
        assert_eq!(state.checkout().unwrap(), &before);
        assert_eq!(state.history().len(), 2);
        assert!(!state.history()[1].committed);
    }

    #[test]
    fn incompatible_architecture_rejected() {
        let mut state = TransferState::new();
        let data = tiny_data(2, 4);
        state.bootstrap_seed("rec1", &data, 1, &quick_cfg()).unwrap();
        let other = nn::xavier_init(
            &nn::NetworkSpec {
                input_dim: 2,
                hidden1: 7,
                hidden2: 16,
                output_dim: 2,
            },
            0,
        );
        let err = state.commit(other, "rec2", 0).unwrap_err();
        assert!(err.to_string().contains("incompatible architecture"));
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut state = TransferState::new();
        let data = tiny_data(2, 8);
        state.bootstrap_seed("rec1", &data, 3, &quick_cfg()).unwrap();
        let seed = state.checkout().unwrap().clone();
        let tuned = nn::fine_tune(&seed, 2, &data, 4, &quick_cfg()).unwrap();
        state.commit(tuned.checkpoint, "rec2", 3).unwrap();
        state.save(dir.path()).unwrap();

        let loaded = TransferState::load(dir.path()).unwrap();
        assert_eq!(loaded.history(), state.history());
        assert_eq!(loaded.mode(), TransferMode::Incremental);
        assert_eq!(loaded.checkout().unwrap(), state.checkout().unwrap());
    }
}
