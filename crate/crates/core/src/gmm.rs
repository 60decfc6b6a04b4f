//! Per-recording relevance model: uniform segmentation, diagonal-covariance
//! GMM trained with EM, and segment / frame posteriors over the mixture
//! components.
//!
//! The mixture components play the role of the relevance variables the
//! bottleneck clustering tries to preserve, so everything downstream
//! consumes the posteriors emitted here.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::matrix::Matrix;
use crate::parallel::{self, STAT_CHUNK};

/// Row-stochastic N×K matrix of posteriors p(y|x).
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    inner: Matrix,
}

impl PosteriorMatrix {
    /// Validates row-stochasticity: entries in [0,1], rows summing to
    /// 1 ± 1e-9.
    pub fn new(m: Matrix) -> Result<Self> {
        for (i, row) in m.iter_rows().enumerate() {
            let mut sum = 0.0;
            for &v in row {
                if !(0.0..=1.0 + 1e-12).contains(&v) {
                    return Err(Error::invalid(format!(
                        "posterior row {i} has entry {v} outside [0,1]"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "posterior row {i} sums to {sum}, not 1"
                )));
            }
        }
        Ok(PosteriorMatrix { inner: m })
    }

    pub fn rows(&self) -> usize {
        self.inner.rows()
    }

    pub fn k(&self) -> usize {
        self.inner.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.inner.row(i)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.inner
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.inner.iter_rows()
    }
}

/// Contiguous initial segments over a (masked) feature matrix, with priors
/// proportional to their frame counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSet {
    /// Half-open `[start, end)` frame ranges tiling `0..num_frames`.
    pub segments: Vec<(usize, usize)>,
    /// p(x), proportional to segment lengths.
    pub priors: Vec<f64>,
}

impl SegmentSet {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Segment index owning each frame.
    pub fn frame_labels(&self, assignments: &[usize]) -> Vec<usize> {
        let total = self.segments.last().map_or(0, |&(_, e)| e);
        let mut out = vec![0; total];
        for (seg, &(s, e)) in self.segments.iter().enumerate() {
            for f in out.iter_mut().take(e).skip(s) {
                *f = assignments[seg];
            }
        }
        out
    }
}

/// Cut the frame range into uniform segments of `seg_len_s`. A short tail
/// (less than half a segment) is merged into the previous segment.
pub fn uniform_segment(feat: &FeatureMatrix, seg_len_s: f64) -> Result<SegmentSet> {
    if !(seg_len_s > 0.0) {
        return Err(Error::config("segment length must be positive"));
    }
    let t = feat.num_frames();
    let seg_frames = (seg_len_s / feat.frame_shift_s).round().max(1.0) as usize;

    let mut segments: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    while start < t {
        let end = (start + seg_frames).min(t);
        segments.push((start, end));
        start = end;
    }
    if segments.len() >= 2 {
        let last = *segments.last().unwrap();
        if last.1 - last.0 < seg_frames.div_ceil(2) {
            segments.pop();
            segments.last_mut().unwrap().1 = last.1;
        }
    }
    if segments.len() < 2 {
        return Err(Error::invalid("too few segments to cluster"));
    }
    let priors = segments
        .iter()
        .map(|&(s, e)| (e - s) as f64 / t as f64)
        .collect();
    Ok(SegmentSet { segments, priors })
}

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    pub weights: Vec<f64>,
    /// K×D component means.
    pub means: Matrix,
    /// K×D diagonal variances, floored.
    pub variances: Matrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop when the per-frame log-likelihood improves by less than this.
    pub tol: f64,
    pub variance_floor: f64,
    /// Components whose weight falls below this get re-seeded.
    pub weight_floor: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: 50,
            tol: 1e-6,
            variance_floor: 1e-4,
            weight_floor: 1e-8,
            seed: 0,
        }
    }
}

/// EM fit outcome: the mixture plus its log-likelihood trajectory
/// (per frame, natural log).
#[derive(Debug, Clone)]
pub struct EmFit {
    pub gmm: Gmm,
    pub log_likelihood: Vec<f64>,
}

impl Gmm {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    /// log w_k + log N(x; mu_k, sigma_k^2) for every component.
    fn log_joint(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..self.k() {
            let mu = self.means.row(k);
            let var = self.variances.row(k);
            let mut acc = self.weights[k].ln();
            for d in 0..x.len() {
                let diff = x[d] - mu[d];
                acc += -0.5 * ((2.0 * std::f64::consts::PI * var[d]).ln() + diff * diff / var[d]);
            }
            out[k] = acc;
        }
    }

    /// Component posterior for a single frame, plus the frame log-likelihood.
    pub fn responsibilities(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let mut lj = vec![0.0; self.k()];
        self.log_joint(x, &mut lj);
        let max = lj.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in lj.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in lj.iter_mut() {
            *v /= sum;
        }
        (lj, max + sum.ln())
    }

    /// Posterior over components for a single frame.
    pub fn frame_posterior(&self, x: &[f64]) -> Vec<f64> {
        self.responsibilities(x).0
    }
}

/// k-means++-style seeding: first mean uniform over frames, subsequent means
/// drawn proportionally to squared distance from the nearest chosen mean.
fn seed_means(feat: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let t = feat.rows();
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..t));
    let mut d2 = vec![0.0f64; t];
    for (i, row) in feat.iter_rows().enumerate() {
        d2[i] = sq_dist(row, feat.row(chosen[0]));
    }
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // All points coincide with a chosen mean; fall back to uniform.
            rng.random_range(0..t)
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut pick = t - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        chosen.push(next);
        for (i, row) in feat.iter_rows().enumerate() {
            let nd = sq_dist(row, feat.row(next));
            if nd < d2[i] {
                d2[i] = nd;
            }
        }
    }
    feat.select_rows(&chosen)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Per-chunk E-step accumulator.
struct EStats {
    resp_sum: Vec<f64>,
    mean_sum: Vec<f64>,
    sq_sum: Vec<f64>,
    log_likelihood: f64,
}

/// Fit a K-component diagonal GMM with EM.
///
/// Deterministic for a fixed seed: seeding uses a dedicated ChaCha stream and
/// the E-step accumulates per fixed-size chunk, folded in chunk order.
pub fn fit_gmm(feat: &FeatureMatrix, k: usize, cfg: &EmConfig) -> Result<EmFit> {
    let t = feat.num_frames();
    let d = feat.dim();
    if k == 0 {
        return Err(Error::config("K must be at least 1"));
    }
    if k > t {
        return Err(Error::invalid(format!(
            "K={k} exceeds the {t} available frames"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let frames = &feat.frames;

    // Global variance for initialization and re-seeding.
    let global_mean = frames.col_means();
    let mut global_var = vec![0.0; d];
    for row in frames.iter_rows() {
        for (g, (&v, &m)) in global_var.iter_mut().zip(row.iter().zip(&global_mean)) {
            *g += (v - m) * (v - m);
        }
    }
    for g in &mut global_var {
        *g = (*g / t as f64).max(cfg.variance_floor);
    }

    let mut gmm = Gmm {
        weights: vec![1.0 / k as f64; k],
        means: seed_means(frames, k, &mut rng),
        variances: {
            let mut v = Matrix::zeros(k, d);
            for r in 0..k {
                v.row_mut(r).copy_from_slice(&global_var);
            }
            v
        },
    };

    let mut ll_curve = Vec::new();
    let mut prev_ll = f64::NEG_INFINITY;

    for _iter in 0..cfg.max_iters {
        // E-step over fixed-size frame chunks.
        let row_chunks: Vec<&[f64]> = frames.iter_rows().collect();
        let stats = parallel::map_chunks(&row_chunks, STAT_CHUNK, |chunk| {
            let mut s = EStats {
                resp_sum: vec![0.0; k],
                mean_sum: vec![0.0; k * d],
                sq_sum: vec![0.0; k * d],
                log_likelihood: 0.0,
            };
            for row in chunk {
                let (resp, ll) = gmm.responsibilities(row);
                s.log_likelihood += ll;
                for (c, &r) in resp.iter().enumerate() {
                    s.resp_sum[c] += r;
                    let ms = &mut s.mean_sum[c * d..(c + 1) * d];
                    let qs = &mut s.sq_sum[c * d..(c + 1) * d];
                    for (j, &x) in row.iter().enumerate() {
                        ms[j] += r * x;
                        qs[j] += r * x * x;
                    }
                }
            }
            s
        });

        let mut resp_sum = vec![0.0; k];
        let mut mean_sum = vec![0.0; k * d];
        let mut sq_sum = vec![0.0; k * d];
        let mut ll = 0.0;
        for s in stats {
            ll += s.log_likelihood;
            for (a, b) in resp_sum.iter_mut().zip(&s.resp_sum) {
                *a += b;
            }
            for (a, b) in mean_sum.iter_mut().zip(&s.mean_sum) {
                *a += b;
            }
            for (a, b) in sq_sum.iter_mut().zip(&s.sq_sum) {
                *a += b;
            }
        }
        let ll = ll / t as f64;
        ll_curve.push(ll);

        // M-step.
        for c in 0..k {
            let n_c = resp_sum[c];
            if n_c / t as f64 <= cfg.weight_floor {
                log::warn!("re-seeding degenerate GMM component {c} (weight {:.3e})", n_c / t as f64);
                let pick = rng.random_range(0..t);
                gmm.means.row_mut(c).copy_from_slice(frames.row(pick));
                gmm.variances.row_mut(c).copy_from_slice(&global_var);
                gmm.weights[c] = 1.0 / t as f64;
                continue;
            }
            gmm.weights[c] = n_c / t as f64;
            for j in 0..d {
                let mu = mean_sum[c * d + j] / n_c;
                let var = (sq_sum[c * d + j] / n_c - mu * mu).max(cfg.variance_floor);
                gmm.means[(c, j)] = mu;
                gmm.variances[(c, j)] = var;
            }
        }
        let wsum: f64 = gmm.weights.iter().sum();
        for w in &mut gmm.weights {
            *w /= wsum;
        }

        if (ll - prev_ll).abs() < cfg.tol {
            break;
        }
        prev_ll = ll;
    }

    Ok(EmFit {
        gmm,
        log_likelihood: ll_curve,
    })
}

/// Segment-level posteriors: row i is the normalized mean of the per-frame
/// component posteriors over segment i's frames. Shares its averaging path
/// with [`segment_average_posteriors`], so clustering a stream of frame
/// posteriors at segment level reproduces this bit-for-bit.
pub fn segment_posteriors(
    gmm: &Gmm,
    feat: &FeatureMatrix,
    segs: &SegmentSet,
) -> Result<PosteriorMatrix> {
    let frame_post = frame_posteriors(gmm, feat)?;
    segment_average_posteriors(&frame_post, segs)
}

/// Average frame posteriors over segments, renormalized per row.
pub fn segment_average_posteriors(
    post: &PosteriorMatrix,
    segs: &SegmentSet,
) -> Result<PosteriorMatrix> {
    let k = post.k();
    let rows = parallel::map(&segs.segments, |&(s, e)| {
        let mut acc = vec![0.0; k];
        for i in s..e {
            for (a, &v) in acc.iter_mut().zip(post.row(i)) {
                *a += v;
            }
        }
        let sum: f64 = acc.iter().sum();
        for a in &mut acc {
            *a /= sum;
        }
        acc
    });
    PosteriorMatrix::new(Matrix::from_rows(&rows))
}

/// Per-frame posteriors p(y | f_t) for the whole matrix.
pub fn frame_posteriors(gmm: &Gmm, feat: &FeatureMatrix) -> Result<PosteriorMatrix> {
    if feat.dim() != gmm.dim() {
        return Err(Error::invalid(format!(
            "feature dim {} does not match GMM dim {}",
            feat.dim(),
            gmm.dim()
        )));
    }
    let rows = parallel::map_indexed(feat.num_frames(), |i| gmm.responsibilities(feat.frames.row(i)).0);
    PosteriorMatrix::new(Matrix::from_rows(&rows))
}

const GMM_MAGIC: &[u8; 4] = b"DZG1";

/// Binary dump in the same container family as the network checkpoints:
/// magic, version, dims, then weights / means / variances as little-endian
/// f64 (bit-exact round trip).
pub fn save_gmm(path: &Path, gmm: &Gmm) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(GMM_MAGIC);
    buf.extend_from_slice(&1u32.to_le_bytes());
    buf.extend_from_slice(&(gmm.k() as u64).to_le_bytes());
    buf.extend_from_slice(&(gmm.dim() as u64).to_le_bytes());
    for &w in &gmm.weights {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    for &v in gmm.means.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &v in gmm.variances.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_gmm(path: &Path) -> Result<Gmm> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 24 || &bytes[0..4] != GMM_MAGIC {
        return Err(Error::format("not a GMM checkpoint".to_string()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != 1 {
        return Err(Error::format(format!("unsupported GMM version {version}")));
    }
    let k = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let need = 24 + 8 * (k + 2 * k * d);
    if bytes.len() != need {
        return Err(Error::format(format!(
            "GMM payload holds {} bytes, expected {need}",
            bytes.len()
        )));
    }
    let mut off = 24;
    let mut read_f64 = |n: usize| -> Vec<f64> {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
            off += 8;
        }
        v
    };
    let weights = read_f64(k);
    let means = Matrix::from_vec(k, d, read_f64(k * d));
    let variances = Matrix::from_vec(k, d, read_f64(k * d));
    Ok(Gmm {
        weights,
        means,
        variances,
    })
}
