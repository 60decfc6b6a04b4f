//! Frame-level boundary refinement with a KL-divergence-emission HMM.
//!
//! Each cluster becomes one HMM state holding a multinomial over the
//! relevance components; a frame's emission score under state `s` is
//! `-KL(p_t || q_s)`. Decoding runs under a minimum-duration topology
//! (every state is a chain of `min_duration` ties), so only the final,
//! possibly clipped run may be shorter than the minimum.
//!
//! The trellis is evaluated in a segmental form that is exactly equivalent
//! to the expanded chain: `a[t][s]` is the best path ending at `t` whose
//! current run has any length (admissible only as the final run), and
//! `b[t][s]` additionally requires the current run to have reached the
//! minimum duration, making the state eligible to switch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::PosteriorMatrix;
use crate::ib::entropy;
use crate::matrix::Matrix;
use crate::parallel;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RealignConfig {
    /// Minimum run length per state, in frames.
    pub min_duration_frames: usize,
    /// Realignment passes (build -> decode), with early stop on a label
    /// fixed point.
    pub iterations: usize,
    /// Log-score added per continuation frame within a run.
    pub self_loop_logprob: f64,
    /// Log-score added when a run starts (after another state's run).
    pub switch_logprob: f64,
    /// State distributions are floored here and renormalized before logs.
    pub dist_floor: f64,
}

impl Default for RealignConfig {
    fn default() -> Self {
        RealignConfig {
            min_duration_frames: 250,
            iterations: 3,
            self_loop_logprob: 0.0,
            switch_logprob: 0.0,
            dist_floor: 1e-8,
        }
    }
}

/// One state per surviving cluster; `state_dists` rows are the exact mean
/// posteriors of the frames assigned to each state (smoothing is applied
/// only when logs are taken during decoding).
#[derive(Debug, Clone)]
pub struct KlHmm {
    pub state_ids: Vec<usize>,
    pub state_dists: Matrix,
    pub min_duration_frames: usize,
    pub self_loop_logprob: f64,
    pub switch_logprob: f64,
    /// Floored + renormalized log distributions used for emissions.
    log_dists: Matrix,
}

/// Per-frame cluster labels over the (masked) frame range.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameAlignment {
    pub labels: Vec<usize>,
}

/// Estimate state distributions from labeled frames.
///
/// `states` declares the clusters of the hypothesis; any declared state
/// with zero frames is dropped with a warning.
pub fn build_klhmm(
    states: &[usize],
    labels: &[usize],
    frame_post: &PosteriorMatrix,
    cfg: &RealignConfig,
) -> Result<KlHmm> {
    if labels.len() != frame_post.rows() {
        return Err(Error::invalid(format!(
            "{} labels for {} posterior rows",
            labels.len(),
            frame_post.rows()
        )));
    }
    if cfg.min_duration_frames == 0 {
        return Err(Error::config("min duration must be at least 1 frame"));
    }
    let k = frame_post.k();
    let mut kept: Vec<usize> = Vec::new();
    let mut dists: Vec<Vec<f64>> = Vec::new();
    for &s in states {
        let mut acc = vec![0.0; k];
        let mut count = 0usize;
        for (row, &l) in frame_post.iter_rows().zip(labels) {
            if l == s {
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
                count += 1;
            }
        }
        if count == 0 {
            log::warn!("dropping cluster {s}: no frames assigned");
            continue;
        }
        for a in &mut acc {
            *a /= count as f64;
        }
        kept.push(s);
        dists.push(acc);
    }
    if kept.is_empty() {
        return Err(Error::invalid("no cluster has any frames"));
    }
    let state_dists = Matrix::from_rows(&dists);
    let mut log_dists = Matrix::zeros(state_dists.rows(), k);
    for s in 0..state_dists.rows() {
        let floored: Vec<f64> = state_dists.row(s).iter().map(|&v| v.max(cfg.dist_floor)).collect();
        let sum: f64 = floored.iter().sum();
        for (y, &v) in floored.iter().enumerate() {
            log_dists[(s, y)] = (v / sum).ln();
        }
    }
    Ok(KlHmm {
        state_ids: kept,
        state_dists,
        min_duration_frames: cfg.min_duration_frames,
        self_loop_logprob: cfg.self_loop_logprob,
        switch_logprob: cfg.switch_logprob,
        log_dists,
    })
}

impl KlHmm {
    pub fn num_states(&self) -> usize {
        self.state_ids.len()
    }

    /// Emission score `-KL(p || q_s)` for one frame against every state.
    fn emission_row(&self, p: &[f64]) -> Vec<f64> {
        let neg_h = -entropy(p); // sum p ln p
        (0..self.num_states())
            .map(|s| {
                let mut cross = 0.0;
                for (&pi, &lq) in p.iter().zip(self.log_dists.row(s)) {
                    if pi > 0.0 {
                        cross += pi * lq;
                    }
                }
                // -KL(p||q) = -(sum p ln p - sum p ln q)
                cross - neg_h
            })
            .collect()
    }
}

const CHOICE_STAY: u32 = u32::MAX;
const CHOICE_INITIAL: u32 = u32::MAX - 1;

/// Most likely state path under the minimum-duration topology.
/// Argmax ties break toward the lowest state id.
pub fn viterbi_realign(hmm: &KlHmm, frame_post: &PosteriorMatrix) -> Result<FrameAlignment> {
    let t_len = frame_post.rows();
    let s_len = hmm.num_states();
    if frame_post.k() != hmm.state_dists.cols() {
        return Err(Error::invalid(format!(
            "posterior dim {} does not match HMM dim {}",
            frame_post.k(),
            hmm.state_dists.cols()
        )));
    }
    if s_len == 1 {
        return Ok(FrameAlignment {
            labels: vec![hmm.state_ids[0]; t_len],
        });
    }
    let d = hmm.min_duration_frames;
    let (self_lp, switch_lp) = (hmm.self_loop_logprob, hmm.switch_logprob);

    let emis_rows = parallel::map_indexed(t_len, |t| hmm.emission_row(frame_post.row(t)));
    let emis = Matrix::from_rows(&emis_rows);
    // Per-state emission prefix sums: prefix[t][s] = sum_{u<=t} e[u][s].
    let mut prefix = Matrix::zeros(t_len, s_len);
    for t in 0..t_len {
        for s in 0..s_len {
            prefix[(t, s)] = emis[(t, s)] + if t > 0 { prefix[(t - 1, s)] } else { 0.0 };
        }
    }

    let neg = f64::NEG_INFINITY;
    let mut a = Matrix::from_vec(t_len, s_len, vec![neg; t_len * s_len]);
    let mut b = Matrix::from_vec(t_len, s_len, vec![neg; t_len * s_len]);
    let mut a_choice = vec![CHOICE_STAY; t_len * s_len];
    let mut b_choice = vec![CHOICE_STAY; t_len * s_len];

    for s in 0..s_len {
        a[(0, s)] = emis[(0, s)];
        a_choice[s] = CHOICE_INITIAL;
        if d == 1 {
            b[(0, s)] = emis[(0, s)];
            b_choice[s] = CHOICE_INITIAL;
        }
    }
    for t in 1..t_len {
        for s in 0..s_len {
            // Ongoing run (admissible only as the final run).
            let mut best = a[(t - 1, s)] + self_lp;
            let mut choice = CHOICE_STAY;
            for sp in 0..s_len {
                if sp == s {
                    continue;
                }
                let cand = b[(t - 1, sp)] + switch_lp;
                if cand > best {
                    best = cand;
                    choice = sp as u32;
                }
            }
            a[(t, s)] = best + emis[(t, s)];
            a_choice[t * s_len + s] = choice;

            // Completed-minimum run bookkeeping.
            if t + 1 == d {
                b[(t, s)] = prefix[(t, s)] + (d - 1) as f64 * self_lp;
                b_choice[t * s_len + s] = CHOICE_INITIAL;
            } else if t + 1 > d {
                let mut bbest = b[(t - 1, s)] + self_lp + emis[(t, s)];
                let mut bchoice = CHOICE_STAY;
                let run_sum = prefix[(t, s)] - prefix[(t - d, s)] + (d - 1) as f64 * self_lp;
                for sp in 0..s_len {
                    if sp == s {
                        continue;
                    }
                    let cand = b[(t - d, sp)] + switch_lp + run_sum;
                    if cand > bbest {
                        bbest = cand;
                        bchoice = sp as u32;
                    }
                }
                b[(t, s)] = bbest;
                b_choice[t * s_len + s] = bchoice;
            }
        }
    }
    let last = t_len - 1;
    let mut best_s = 0;
    for s in 1..s_len {
        if a[(last, s)] > a[(last, best_s)] {
            best_s = s;
        }
    }

    // Backtrack.
    let mut labels = vec![0usize; t_len];
    let mut t = last;
    let mut s = best_s;
    let mut in_a = true;
    loop {
        if in_a {
            labels[t] = s;
            match a_choice[t * s_len + s] {
                CHOICE_INITIAL => break,
                CHOICE_STAY => {
                    t -= 1;
                }
                sp => {
                    t -= 1;
                    s = sp as usize;
                    in_a = false;
                }
            }
        } else {
            match b_choice[t * s_len + s] {
                CHOICE_INITIAL => {
                    for u in 0..=t {
                        labels[u] = s;
                    }
                    break;
                }
                CHOICE_STAY => {
                    labels[t] = s;
                    t -= 1;
                }
                sp => {
                    for u in (t + 1 - d)..=t {
                        labels[u] = s;
                    }
                    t -= d;
                    s = sp as usize;
                }
            }
        }
    }

    Ok(FrameAlignment {
        labels: labels.into_iter().map(|s| hmm.state_ids[s]).collect(),
    })
}

/// Score an arbitrary labeling under the HMM: emissions plus self/switch
/// transition scores. Duration validity is not checked.
pub fn alignment_score(hmm: &KlHmm, labels: &[usize], frame_post: &PosteriorMatrix) -> Result<f64> {
    if labels.len() != frame_post.rows() {
        return Err(Error::invalid("label/posterior length mismatch"));
    }
    let index_of = |id: usize| -> Result<usize> {
        hmm.state_ids
            .iter()
            .position(|&s| s == id)
            .ok_or_else(|| Error::invalid(format!("label {id} is not an HMM state")))
    };
    let mut score = 0.0;
    let mut prev: Option<usize> = None;
    for (t, &l) in labels.iter().enumerate() {
        let s = index_of(l)?;
        score += hmm.emission_row(frame_post.row(t))[s];
        if let Some(p) = prev {
            score += if p == s {
                hmm.self_loop_logprob
            } else {
                hmm.switch_logprob
            };
        }
        prev = Some(s);
    }
    Ok(score)
}

/// Alternate estimation and decoding until the labels stabilize or the
/// configured iteration count is exhausted.
pub fn realign_iterate(
    initial_labels: &[usize],
    frame_post: &PosteriorMatrix,
    cfg: &RealignConfig,
) -> Result<Vec<usize>> {
    let mut labels = initial_labels.to_vec();
    for _ in 0..cfg.iterations {
        let mut states: Vec<usize> = labels.clone();
        states.sort_unstable();
        states.dedup();
        let hmm = build_klhmm(&states, &labels, frame_post, cfg)?;
        let new = viterbi_realign(&hmm, frame_post)?;
        let stable = new.labels == labels;
        labels = new.labels;
        if stable {
            break;
        }
    }
    Ok(labels)
}
