//! Latent-feature whitening and two-stream posterior fusion.
//!
//! The latent features from the embedder are decorrelated with a PCA
//! whitening transform; each stream then produces posteriors over the same
//! relevance components, and the streams are merged as the convex
//! combination `w_s * p_spec + w_z * p_lat` with `w_s + w_z = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::PosteriorMatrix;
use crate::matrix::Matrix;

/// Whitening transform fitted to latent features: subtract `mean`, project
/// onto `components` (rows orthonormal), scale by `1/sqrt(eigenvalue)`.
#[derive(Debug, Clone)]
pub struct PcaTransform {
    pub mean: Vec<f64>,
    /// d_kept × D projection; rows are eigenvectors of the sample
    /// covariance, descending eigenvalue order.
    pub components: Matrix,
    /// Per-component 1/sqrt(eigenvalue).
    pub scales: Vec<f64>,
    pub eigenvalues: Vec<f64>,
}

const EIGENVALUE_FLOOR: f64 = 1e-8;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Returns (eigenvalues, eigenvectors-as-rows), descending.
fn symmetric_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.rows();
    debug_assert_eq!(n, a.cols());
    let mut m = a.clone();
    // v starts as identity; accumulates rotations as columns.
    let mut v = Matrix::zeros(n, n);
    for i in 0..n {
        v[(i, i)] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let mip = m[(i, p)];
                    let miq = m[(i, q)];
                    m[(i, p)] = c * mip - s * miq;
                    m[(i, q)] = s * mip + c * miq;
                }
                for i in 0..n {
                    let mpi = m[(p, i)];
                    let mqi = m[(q, i)];
                    m[(p, i)] = c * mpi - s * mqi;
                    m[(q, i)] = s * mpi + c * mqi;
                }
                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = c * vip - s * viq;
                    v[(i, q)] = s * vip + c * viq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (row, &col) in order.iter().enumerate() {
        // Deterministic sign: largest-magnitude entry positive.
        let mut idx = 0;
        for i in 1..n {
            if v[(i, col)].abs() > v[(idx, col)].abs() {
                idx = i;
            }
        }
        let sign = if v[(idx, col)] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[(row, i)] = sign * v[(i, col)];
        }
    }
    (eigenvalues, vectors)
}

/// Fit a whitening transform on latent features (rows = frames).
/// Components with eigenvalue below the floor are dropped.
pub fn fit_pca_whiten(latent: &Matrix) -> Result<PcaTransform> {
    let t = latent.rows();
    let d = latent.cols();
    if t <= d {
        return Err(Error::invalid("insufficient frames for PCA"));
    }
    let mean = latent.col_means();
    let mut cov = Matrix::zeros(d, d);
    for row in latent.iter_rows() {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                cov[(i, j)] += di * (row[j] - mean[j]);
            }
        }
    }
    let denom = (t - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let (eigenvalues, vectors) = symmetric_eigen(&cov);
    let kept: Vec<usize> = (0..d).filter(|&i| eigenvalues[i] >= EIGENVALUE_FLOOR).collect();
    if kept.is_empty() {
        return Err(Error::Numerical(
            "latent covariance has no usable components".to_string(),
        ));
    }
    let components = vectors.select_rows(&kept);
    let kept_vals: Vec<f64> = kept.iter().map(|&i| eigenvalues[i]).collect();
    let scales: Vec<f64> = kept_vals.iter().map(|&l| 1.0 / l.sqrt()).collect();
    Ok(PcaTransform {
        mean,
        components,
        scales,
        eigenvalues: kept_vals,
    })
}

impl PcaTransform {
    pub fn output_dim(&self) -> usize {
        self.components.rows()
    }

    /// Whiten a T×D matrix into T×d_kept.
    pub fn transform(&self, data: &Matrix) -> Result<Matrix> {
        if data.cols() != self.mean.len() {
            return Err(Error::invalid(format!(
                "PCA expects dim {}, got {}",
                self.mean.len(),
                data.cols()
            )));
        }
        let mut out = Matrix::zeros(data.rows(), self.output_dim());
        for (r, row) in data.iter_rows().enumerate() {
            for c in 0..self.output_dim() {
                let comp = self.components.row(c);
                let mut acc = 0.0;
                for ((&x, &m), &w) in row.iter().zip(&self.mean).zip(comp) {
                    acc += (x - m) * w;
                }
                out[(r, c)] = acc * self.scales[c];
            }
        }
        Ok(out)
    }
}

/// Convex stream weights with `w_s + w_z = 1` held exactly.
/// Serializes as the pair `[w_s, w_z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "(f64, f64)", into = "(f64, f64)")]
pub struct StreamWeights {
    w_s: f64,
    w_z: f64,
}

impl TryFrom<(f64, f64)> for StreamWeights {
    type Error = Error;

    fn try_from((w_s, w_z): (f64, f64)) -> Result<Self> {
        StreamWeights::new(w_s, w_z)
    }
}

impl From<StreamWeights> for (f64, f64) {
    fn from(w: StreamWeights) -> Self {
        (w.w_s, w.w_z)
    }
}

impl StreamWeights {
    pub fn new(w_s: f64, w_z: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w_s) || !(0.0..=1.0).contains(&w_z) {
            return Err(Error::config("stream weights must lie in [0, 1]"));
        }
        if w_s + w_z != 1.0 {
            return Err(Error::config(format!(
                "stream weights must sum to 1 exactly, got {w_s} + {w_z}"
            )));
        }
        Ok(StreamWeights { w_s, w_z })
    }

    /// Weights from the latent-stream share; the spectral share is the
    /// exact complement.
    pub fn from_latent(w_z: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w_z) {
            return Err(Error::config("latent weight must lie in [0, 1]"));
        }
        StreamWeights::new(1.0 - w_z, w_z)
    }

    pub fn spectral(&self) -> f64 {
        self.w_s
    }

    pub fn latent(&self) -> f64 {
        self.w_z
    }
}

impl std::fmt::Display for StreamWeights {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.w_s, self.w_z)
    }
}

/// Merge two posterior streams over the same relevance components:
/// `p_spec * w_s + p_lat * w_z` per entry. Boundary weights reproduce the
/// corresponding input bit-for-bit.
pub fn fuse_posteriors(
    p_spec: &PosteriorMatrix,
    p_lat: &PosteriorMatrix,
    w: StreamWeights,
) -> Result<PosteriorMatrix> {
    if p_spec.rows() != p_lat.rows() || p_spec.k() != p_lat.k() {
        return Err(Error::invalid(format!(
            "stream shapes differ: {}x{} vs {}x{}",
            p_spec.rows(),
            p_spec.k(),
            p_lat.rows(),
            p_lat.k()
        )));
    }
    let mut out = Matrix::zeros(p_spec.rows(), p_spec.k());
    for i in 0..p_spec.rows() {
        let (a, b) = (p_spec.row(i), p_lat.row(i));
        let row = out.row_mut(i);
        for j in 0..a.len() {
            row[j] = w.w_s * a[j] + w.w_z * b[j];
        }
    }
    PosteriorMatrix::new(out)
}

/// Weight grid `{(1 - k*step, k*step)}` including both endpoints.
pub fn sweep_weights(step: f64) -> Result<Vec<StreamWeights>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::config("sweep step must lie in (0, 1]"));
    }
    let n = (1.0 / step + 1e-9).floor() as usize;
    let mut out = Vec::with_capacity(n + 2);
    for k in 0..=n {
        let w_z = (k as f64 * step).min(1.0);
        out.push(StreamWeights::from_latent(w_z)?);
    }
    if out.last().map(|w| w.latent()) != Some(1.0) {
        out.push(StreamWeights::from_latent(1.0)?);
    }
    Ok(out)
}
