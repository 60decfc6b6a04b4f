//! Agglomerative information-bottleneck clustering.
//!
//! Segments start as singleton clusters and are merged greedily. Each merge
//! is charged the decrease it causes in the objective
//! `F = I(Y,C) - (1/beta) * I(C,X)`; the pair with the smallest cost is
//! merged until the normalized mutual information `I(Y,C)/I(X,Y)` would
//! drop below the stopping threshold.
//!
//! The closed-form local cost used here is
//! `(p_i + p_j) * [ JS_pi(p(y|c_i), p(y|c_j)) - (1/beta) * H(pi) ]`
//! with `pi` the normalized pair priors; the from-scratch F difference is
//! the normative definition and the test suite holds the closed form to it
//! at 1e-10.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gmm::PosteriorMatrix;
use crate::matrix::Matrix;

/// Entropy of a (sub-)distribution in nats, with 0 ln 0 = 0.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()
}

/// KL(p || q) in nats. Zero q mass under positive p mass yields +inf.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            acc += pi * (pi.ln() - qi.ln());
        }
    }
    acc
}

/// Jensen-Shannon-type divergence with pair weights `(w1, w2)`:
/// `w1 * KL(p || m) + w2 * KL(q || m)` where `m = w1 p + w2 q`.
pub fn js_divergence(w1: f64, p: &[f64], w2: f64, q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let m = w1 * pi + w2 * qi;
        if pi > 0.0 {
            acc += w1 * pi * (pi.ln() - m.ln());
        }
        if qi > 0.0 {
            acc += w2 * qi * (qi.ln() - m.ln());
        }
    }
    acc
}

/// Mutual information I(X;Y) from a conditional p(y|x) and a prior p(x):
/// `sum_x p(x) sum_y p(y|x) ln(p(y|x)/p(y))`.
pub fn mutual_information(conditional: &PosteriorMatrix, prior: &[f64]) -> Result<f64> {
    if conditional.rows() != prior.len() {
        return Err(Error::invalid(format!(
            "conditional has {} rows but prior has {} entries",
            conditional.rows(),
            prior.len()
        )));
    }
    let psum: f64 = prior.iter().sum();
    if prior.iter().any(|&p| p < 0.0) || (psum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("prior is not a probability simplex"));
    }
    let k = conditional.k();
    let mut marginal = vec![0.0; k];
    for (row, &px) in conditional.iter_rows().zip(prior) {
        for (m, &v) in marginal.iter_mut().zip(row) {
            *m += px * v;
        }
    }
    let mut mi = 0.0;
    for (row, &px) in conditional.iter_rows().zip(prior) {
        if px <= 0.0 {
            continue;
        }
        for (&v, &m) in row.iter().zip(&marginal) {
            if v > 0.0 {
                mi += px * v * (v.ln() - m.ln());
            }
        }
    }
    Ok(mi)
}

/// Live state of the agglomeration. Cluster ids are the indices of the
/// segments that seeded them; a merge keeps the smaller id.
#[derive(Debug, Clone)]
pub struct ClusterState {
    /// Segment -> cluster id.
    pub assignments: Vec<usize>,
    /// Cluster priors, indexed by cluster id (stale for dead ids).
    pub p_c: Vec<f64>,
    /// Per-cluster relevance distributions p(y|c), one row per cluster id.
    pub p_y_given_c: Matrix,
    /// Maintained I(Y;C) in nats.
    pub i_yc: f64,
    /// Maintained I(C;X) in nats.
    pub i_cx: f64,
    /// Constant reference value I(X;Y).
    pub i_xy: f64,
    pub beta: f64,
    live: Vec<bool>,
}

impl ClusterState {
    pub fn num_clusters(&self) -> usize {
        self.live.iter().filter(|&&l| l).count()
    }

    pub fn live_clusters(&self) -> Vec<usize> {
        (0..self.live.len()).filter(|&i| self.live[i]).collect()
    }

    pub fn is_live(&self, id: usize) -> bool {
        id < self.live.len() && self.live[id]
    }

    /// I(Y,C)/I(X,Y). When I(X,Y) is zero (all segments identical) merging
    /// loses nothing, so the ratio is taken as 1.
    pub fn nmi(&self) -> f64 {
        if self.i_xy <= f64::MIN_POSITIVE {
            1.0
        } else {
            self.i_yc / self.i_xy
        }
    }

    /// F = I(Y,C) - (1/beta) I(C,X) from the maintained quantities.
    pub fn objective(&self) -> f64 {
        self.i_yc - self.i_cx / self.beta
    }
}

/// One greedy merge.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeRecord {
    pub step: usize,
    pub merged_pair: (usize, usize),
    /// F(before) - F(after) for this merge.
    pub delta_f: f64,
    pub nmi_after: f64,
}

/// Start with one cluster per segment: I(Y,C) = I(X,Y), NMI = 1,
/// I(C,X) = H(X).
pub fn init_clusters(post: &PosteriorMatrix, priors: &[f64], beta: f64) -> Result<ClusterState> {
    let n = post.rows();
    if n < 2 {
        return Err(Error::invalid("need at least 2 segments to cluster"));
    }
    if !(beta > 0.0) {
        return Err(Error::config("beta must be positive"));
    }
    let i_xy = mutual_information(post, priors)?;
    let i_cx = entropy(priors);
    Ok(ClusterState {
        assignments: (0..n).collect(),
        p_c: priors.to_vec(),
        p_y_given_c: post.matrix().clone(),
        i_yc: i_xy,
        i_cx,
        i_xy,
        beta,
        live: vec![true; n],
    })
}

/// Pair-local merge quantities.
struct PairDelta {
    /// Loss in I(Y;C): (p_i + p_j) * JS_pi over the relevance distributions.
    d_iyc: f64,
    /// Loss in I(C;X): (p_i + p_j) * H(pi).
    d_icx: f64,
}

fn pair_delta(state: &ClusterState, i: usize, j: usize) -> PairDelta {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    let p_i = state.p_c[i];
    let p_j = state.p_c[j];
    let p_m = p_i + p_j;
    let w1 = p_i / p_m;
    let w2 = p_j / p_m;
    let js = js_divergence(w1, state.p_y_given_c.row(i), w2, state.p_y_given_c.row(j));
    let h = entropy(&[w1, w2]);
    PairDelta {
        d_iyc: p_m * js,
        d_icx: p_m * h,
    }
}

/// Cost of merging clusters `i` and `j`: the decrease in F.
/// Symmetric by construction (the pair is canonicalized internally).
pub fn merge_cost(state: &ClusterState, i: usize, j: usize) -> Result<f64> {
    if i == j {
        return Err(Error::invalid("cannot merge a cluster with itself"));
    }
    if !state.is_live(i) || !state.is_live(j) {
        return Err(Error::invalid(format!("dead cluster id in pair ({i},{j})")));
    }
    let d = pair_delta(state, i, j);
    Ok(d.d_iyc - d.d_icx / state.beta)
}

/// Apply the merge of (i, j); the smaller id survives.
fn apply_merge(state: &mut ClusterState, i: usize, j: usize) {
    let (keep, drop) = if i < j { (i, j) } else { (j, i) };
    let d = pair_delta(state, keep, drop);
    let p_i = state.p_c[keep];
    let p_j = state.p_c[drop];
    let p_m = p_i + p_j;
    let w1 = p_i / p_m;
    let w2 = p_j / p_m;
    for y in 0..state.p_y_given_c.cols() {
        let merged = w1 * state.p_y_given_c[(keep, y)] + w2 * state.p_y_given_c[(drop, y)];
        state.p_y_given_c[(keep, y)] = merged;
    }
    state.p_c[keep] = p_m;
    state.live[drop] = false;
    for a in &mut state.assignments {
        if *a == drop {
            *a = keep;
        }
    }
    state.i_yc -= d.d_iyc;
    state.i_cx -= d.d_icx;
}

/// Segment-level result of a clustering run.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentClustering {
    /// Segment -> compact cluster label in 0..num_clusters, numbered by
    /// first appearance.
    pub assignments: Vec<usize>,
    pub num_clusters: usize,
}

fn canonical_assignments(raw: &[usize]) -> SegmentClustering {
    let mut relabel: Vec<(usize, usize)> = Vec::new();
    let mut out = Vec::with_capacity(raw.len());
    for &id in raw {
        let label = match relabel.iter().find(|(from, _)| *from == id) {
            Some(&(_, to)) => to,
            None => {
                let to = relabel.len();
                relabel.push((id, to));
                to
            }
        };
        out.push(label);
    }
    SegmentClustering {
        assignments: out,
        num_clusters: relabel.len(),
    }
}

/// Greedily merge minimum-cost pairs until the NMI would drop below
/// `nmi_threshold` (or one cluster remains). Ties break on the
/// lexicographically smallest `(i, j)`.
///
/// Returns the assignments at the stopping point plus the merge trajectory.
pub fn agglomerate(
    mut state: ClusterState,
    nmi_threshold: f64,
) -> Result<(SegmentClustering, Vec<MergeRecord>)> {
    if !(nmi_threshold > 0.0 && nmi_threshold <= 1.0) {
        return Err(Error::config(format!(
            "NMI threshold must be in (0, 1], got {nmi_threshold}"
        )));
    }
    let mut records = Vec::new();
    // Cost cache over live pairs (i < j). A merge invalidates only the
    // pairs touching the surviving cluster, so each step re-scores O(N)
    // entries.
    let n = state.live.len();
    let mut costs: Vec<Vec<f64>> = vec![Vec::new(); n];
    for j in 1..n {
        costs[j] = (0..j).map(|i| merge_cost(&state, i, j).unwrap()).collect();
    }
    let mut step = 0;
    loop {
        let live = state.live_clusters();
        if live.len() <= 1 {
            break;
        }
        let mut best: Option<(f64, (usize, usize))> = None;
        for (ai, &i) in live.iter().enumerate() {
            for &j in &live[ai + 1..] {
                let c = costs[j][i];
                if best.is_none_or(|(bc, _)| c < bc) {
                    best = Some((c, (i, j)));
                }
            }
        }
        let (_, (i, j)) = best.unwrap();
        let d = pair_delta(&state, i, j);
        let nmi_after = if state.i_xy <= f64::MIN_POSITIVE {
            1.0
        } else {
            (state.i_yc - d.d_iyc) / state.i_xy
        };
        if nmi_after < nmi_threshold {
            break;
        }
        let delta_f = d.d_iyc - d.d_icx / state.beta;
        apply_merge(&mut state, i, j);
        records.push(MergeRecord {
            step,
            merged_pair: (i, j),
            delta_f,
            nmi_after,
        });
        let keep = i.min(j);
        for &other in &state.live_clusters() {
            if other == keep {
                continue;
            }
            let (a, b) = if other < keep { (other, keep) } else { (keep, other) };
            costs[b][a] = merge_cost(&state, a, b).unwrap();
        }
        step += 1;
    }
    Ok((canonical_assignments(&state.assignments), records))
}

/// Cluster count at the NMI stopping point of a merge trajectory.
///
/// Counts the prefix of merges whose post-merge NMI stays at or above the
/// threshold (NMI is non-increasing along the trajectory, so this matches
/// re-running the agglomeration with that threshold).
pub fn estimated_num_speakers(
    n_initial: usize,
    records: &[MergeRecord],
    threshold: f64,
) -> usize {
    let applied = records
        .iter()
        .take_while(|r| r.nmi_after >= threshold)
        .count();
    (n_initial - applied).max(1)
}

/// Write the merge trajectory as CSV: `step,cluster_a,cluster_b,delta_f,nmi`.
pub fn write_trajectory_csv(path: &Path, records: &[MergeRecord]) -> Result<()> {
    let mut out = String::from("step,cluster_a,cluster_b,delta_f,nmi\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{:.12e},{:.12}",
            r.step, r.merged_pair.0, r.merged_pair.1, r.delta_f, r.nmi_after
        )
        .unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_posteriors(n: usize, k: usize, rng: &mut ChaCha8Rng) -> PosteriorMatrix {
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let mut row: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = row.iter().sum();
            for v in &mut row {
                *v /= s;
            }
            rows.push(row);
        }
        PosteriorMatrix::new(Matrix::from_rows(&rows)).unwrap()
    }

    fn random_prior(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut p: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = p.iter().sum();
        for v in &mut p {
            *v /= s;
        }
        p
    }

    /// From-scratch F for a given hard assignment, via the definitional
    /// double sums. Independent of the incremental bookkeeping.
    fn objective_from_scratch(
        post: &PosteriorMatrix,
        priors: &[f64],
        assignments: &[usize],
        beta: f64,
    ) -> (f64, f64, f64) {
        let ids: Vec<usize> = {
            let mut v = assignments.to_vec();
            v.sort_unstable();
            v.dedup();
            v
        };
        let k = post.k();
        let mut p_c = vec![0.0; ids.len()];
        let mut p_y_c = Matrix::zeros(ids.len(), k);
        for (x, &a) in assignments.iter().enumerate() {
            let c = ids.iter().position(|&i| i == a).unwrap();
            p_c[c] += priors[x];
            for y in 0..k {
                p_y_c[(c, y)] += priors[x] * post.row(x)[y];
            }
        }
        for c in 0..ids.len() {
            for y in 0..k {
                p_y_c[(c, y)] /= p_c[c];
            }
        }
        let cond = PosteriorMatrix::new(p_y_c).unwrap();
        let i_yc = mutual_information(&cond, &p_c).unwrap();
        // I(C;X) from the definitional joint: p(c,x) = p(x) iff x in c,
        // so each term is p(x) ln(p(x) / (p(c) p(x))).
        let mut i_cx = 0.0;
        for (x, &a) in assignments.iter().enumerate() {
            let c = ids.iter().position(|&i| i == a).unwrap();
            if priors[x] > 0.0 {
                i_cx += priors[x] * (priors[x].ln() - (p_c[c] * priors[x]).ln());
            }
        }
        (i_yc - i_cx / beta, i_yc, i_cx)
    }

    #[test]
    fn mi_zero_for_independent() {
        let m = Matrix::from_rows(&vec![vec![0.3, 0.7]; 4]);
        let post = PosteriorMatrix::new(m).unwrap();
        let mi = mutual_information(&post, &[0.25; 4]).unwrap();
        assert!(mi.abs() < 1e-15);
    }

    #[test]
    fn mi_log2_for_diagonal() {
        let m = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let post = PosteriorMatrix::new(m).unwrap();
        let mi = mutual_information(&post, &[0.5, 0.5]).unwrap();
        assert!((mi - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn mi_matches_brute_force_double_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let post = random_posteriors(4, 3, &mut rng);
        let prior = random_prior(4, &mut rng);
        let mi = mutual_information(&post, &prior).unwrap();
        // Brute force over the joint.
        let mut joint = vec![vec![0.0; 3]; 4];
        for x in 0..4 {
            for y in 0..3 {
                joint[x][y] = prior[x] * post.row(x)[y];
            }
        }
        let py: Vec<f64> = (0..3).map(|y| (0..4).map(|x| joint[x][y]).sum()).collect();
        let mut brute = 0.0;
        for x in 0..4 {
            for y in 0..3 {
                if joint[x][y] > 0.0 {
                    brute += joint[x][y] * (joint[x][y] / (prior[x] * py[y])).ln();
                }
            }
        }
        assert!((mi - brute).abs() < 1e-12);
    }

    #[test]
    fn mi_rejects_bad_prior() {
        let m = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let post = PosteriorMatrix::new(m).unwrap();
        assert!(mutual_information(&post, &[0.9, 0.3]).is_err());
    }

    #[test]
    fn init_state_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let post = random_posteriors(4, 3, &mut rng);
        let prior = random_prior(4, &mut rng);
        let state = init_clusters(&post, &prior, 10.0).unwrap();
        assert_eq!(state.assignments, vec![0, 1, 2, 3]);
        assert_eq!(state.num_clusters(), 4);
        assert!((state.nmi() - 1.0).abs() < 1e-12);
        assert!((state.i_cx - entropy(&prior)).abs() < 1e-12);
    }

    #[test]
    fn init_rejects_single_segment() {
        let post = PosteriorMatrix::new(Matrix::from_rows(&[vec![1.0]])).unwrap();
        assert!(init_clusters(&post, &[1.0], 10.0).is_err());
    }

    #[test]
    fn merge_cost_identical_distributions_loses_no_relevance() {
        let m = Matrix::from_rows(&[
            vec![0.4, 0.6],
            vec![0.4, 0.6],
            vec![0.9, 0.1],
        ]);
        let post = PosteriorMatrix::new(m).unwrap();
        let prior = vec![0.25, 0.25, 0.5];
        let state = init_clusters(&post, &prior, 10.0).unwrap();
        let d = pair_delta(&state, 0, 1);
        assert!(d.d_iyc.abs() < 1e-15, "JS of identical rows must vanish");
        let cost = merge_cost(&state, 0, 1).unwrap();
        let expected = -(0.5 * entropy(&[0.5, 0.5])) / 10.0;
        assert!((cost - expected).abs() < 1e-12);
    }

    #[test]
    fn merge_cost_is_exactly_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let post = random_posteriors(5, 4, &mut rng);
        let prior = random_prior(5, &mut rng);
        let state = init_clusters(&post, &prior, 10.0).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    let a = merge_cost(&state, i, j).unwrap();
                    let b = merge_cost(&state, j, i).unwrap();
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }

    #[test]
    fn merge_cost_matches_from_scratch_f_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _case in 0..20 {
            let n = rng.random_range(3..7);
            let k = rng.random_range(2..5);
            let post = random_posteriors(n, k, &mut rng);
            let prior = random_prior(n, &mut rng);
            let beta = 10.0;
            let state = init_clusters(&post, &prior, beta).unwrap();
            let f_before =
                objective_from_scratch(&post, &prior, &state.assignments, beta).0;
            for i in 0..n {
                for j in i + 1..n {
                    let cost = merge_cost(&state, i, j).unwrap();
                    let mut merged = state.assignments.clone();
                    for a in &mut merged {
                        if *a == j {
                            *a = i;
                        }
                    }
                    let f_after = objective_from_scratch(&post, &prior, &merged, beta).0;
                    assert!(
                        (cost - (f_before - f_after)).abs() < 1e-10,
                        "pair ({i},{j}): {cost} vs {}",
                        f_before - f_after
                    );
                }
            }
        }
    }

    #[test]
    fn incremental_quantities_match_from_scratch_after_merges() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let post = random_posteriors(6, 3, &mut rng);
        let prior = random_prior(6, &mut rng);
        let mut state = init_clusters(&post, &prior, 10.0).unwrap();
        for (i, j) in [(0, 3), (1, 4), (0, 1)] {
            apply_merge(&mut state, i, j);
            let (_, i_yc, i_cx) =
                objective_from_scratch(&post, &prior, &state.assignments, 10.0);
            assert!((state.i_yc - i_yc).abs() < 1e-9);
            assert!((state.i_cx - i_cx).abs() < 1e-9);
            assert!(state.i_yc <= state.i_xy + 1e-9);
        }
    }

    #[test]
    fn threshold_one_means_no_merges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let post = random_posteriors(5, 3, &mut rng);
        let prior = random_prior(5, &mut rng);
        let state = init_clusters(&post, &prior, 10.0).unwrap();
        let (clustering, records) = agglomerate(state, 1.0).unwrap();
        assert!(records.is_empty());
        assert_eq!(clustering.num_clusters, 5);
    }

    #[test]
    fn two_groups_recovered() {
        // Two groups with identical within-group posteriors.
        let a = vec![0.85, 0.10, 0.05];
        let b = vec![0.05, 0.15, 0.80];
        let m = Matrix::from_rows(&[a.clone(), b.clone(), a.clone(), b.clone(), a, b]);
        let post = PosteriorMatrix::new(m).unwrap();
        let prior = vec![1.0 / 6.0; 6];
        let state = init_clusters(&post, &prior, 10.0).unwrap();
        let (clustering, _) = agglomerate(state, 0.4).unwrap();
        assert_eq!(clustering.num_clusters, 2);
        assert_eq!(clustering.assignments, vec![0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn greedy_matches_exhaustive_pair_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _case in 0..10 {
            let n = 6;
            let post = random_posteriors(n, 3, &mut rng);
            let prior = random_prior(n, &mut rng);
            let beta = 10.0;
            let threshold = 0.2;
            let state = init_clusters(&post, &prior, beta).unwrap();
            let (fast, records) = agglomerate(state, threshold).unwrap();

            // Oracle: recompute everything from scratch at every step.
            let mut assignments: Vec<usize> = (0..n).collect();
            let mut oracle_records: Vec<(usize, usize)> = Vec::new();
            loop {
                let live: Vec<usize> = {
                    let mut v = assignments.clone();
                    v.sort_unstable();
                    v.dedup();
                    v
                };
                if live.len() <= 1 {
                    break;
                }
                let f_now = objective_from_scratch(&post, &prior, &assignments, beta).0;
                let mut best: Option<(f64, (usize, usize), Vec<usize>)> = None;
                for (ai, &i) in live.iter().enumerate() {
                    for &j in &live[ai + 1..] {
                        let mut cand = assignments.clone();
                        for a in &mut cand {
                            if *a == j {
                                *a = i;
                            }
                        }
                        let f_after = objective_from_scratch(&post, &prior, &cand, beta).0;
                        let cost = f_now - f_after;
                        if best.as_ref().is_none_or(|(bc, _, _)| cost < *bc - 1e-14) {
                            best = Some((cost, (i, j), cand));
                        }
                    }
                }
                let (_, pair, cand) = best.unwrap();
                let (_, i_yc, _) = objective_from_scratch(&post, &prior, &cand, beta);
                let i_xy = mutual_information(&post, &prior).unwrap();
                if i_yc / i_xy < threshold {
                    break;
                }
                assignments = cand;
                oracle_records.push(pair);
            }
            let oracle_pairs: Vec<(usize, usize)> = oracle_records;
            let fast_pairs: Vec<(usize, usize)> =
                records.iter().map(|r| r.merged_pair).collect();
            assert_eq!(fast_pairs, oracle_pairs);
            assert_eq!(fast, canonical_assignments(&assignments));
        }
    }

    #[test]
    fn nmi_sequence_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        let post = random_posteriors(8, 4, &mut rng);
        let prior = random_prior(8, &mut rng);
        let state = init_clusters(&post, &prior, 10.0).unwrap();
        let (_, records) = agglomerate(state, 0.01).unwrap();
        assert!(!records.is_empty());
        for w in records.windows(2) {
            assert!(w[1].nmi_after <= w[0].nmi_after + 1e-12);
        }
    }

    #[test]
    fn speaker_count_from_trajectory() {
        assert_eq!(estimated_num_speakers(6, &[], 0.4), 6);

        // Full synthetic trajectory down to one cluster: a threshold near 0
        // keeps every merge.
        let full: Vec<MergeRecord> = (0..5)
            .map(|step| MergeRecord {
                step,
                merged_pair: (0, step + 1),
                delta_f: 0.1,
                nmi_after: 0.9 - 0.2 * step as f64, // 0.9, 0.7, 0.5, 0.3, 0.1
            })
            .collect();
        assert_eq!(estimated_num_speakers(6, &full, 1e-9), 1);
        assert_eq!(estimated_num_speakers(6, &full, 0.4), 3);

        // Consistency with a direct run: counting the >= 0.4 prefix of a
        // low-threshold trajectory matches agglomerating at 0.4.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let post = random_posteriors(6, 3, &mut rng);
        let prior = random_prior(6, &mut rng);
        let state = init_clusters(&post, &prior, 10.0).unwrap();
        let (_, records) = agglomerate(state, 0.0001).unwrap();
        let state2 = init_clusters(&post, &prior, 10.0).unwrap();
        let (clustering, _) = agglomerate(state2, 0.4).unwrap();
        assert_eq!(
            estimated_num_speakers(6, &records, 0.4),
            clustering.num_clusters
        );
    }

    #[test]
    fn segment_permutation_gives_same_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let post = random_posteriors(7, 3, &mut rng);
        let prior = random_prior(7, &mut rng);
        let (base, _) = agglomerate(init_clusters(&post, &prior, 10.0).unwrap(), 0.3).unwrap();

        // Rotate the segments and re-cluster.
        let perm: Vec<usize> = (0..7).map(|i| (i + 3) % 7).collect();
        let pm = post.matrix().select_rows(&perm);
        let ppost = PosteriorMatrix::new(pm).unwrap();
        let pprior: Vec<f64> = perm.iter().map(|&i| prior[i]).collect();
        let (permuted, _) =
            agglomerate(init_clusters(&ppost, &pprior, 10.0).unwrap(), 0.3).unwrap();

        // Same partition up to relabeling: co-membership must agree.
        for a in 0..7 {
            for b in 0..7 {
                let together_base = base.assignments[perm[a]] == base.assignments[perm[b]];
                let together_perm = permuted.assignments[a] == permuted.assignments[b];
                assert_eq!(together_base, together_perm);
            }
        }
    }

    #[test]
    fn trajectory_csv_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let records = vec![MergeRecord {
            step: 0,
            merged_pair: (1, 4),
            delta_f: 0.25,
            nmi_after: 0.9,
        }];
        write_trajectory_csv(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "step,cluster_a,cluster_b,delta_f,nmi");
        assert!(lines.next().unwrap().starts_with("0,1,4,"));
    }
}
