//! Independent reference implementations used by several test targets.
#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, Normal};
use salab::eval::PredictionRecord;

pub fn normal_vec<R: Rng>(rng: &mut R, n: usize, std: f64) -> Vec<f64> {
    let d = Normal::new(0.0, std).unwrap();
    (0..n).map(|_| d.sample(rng)).collect()
}

/// Euclidean projection onto the simplex by enumerating every support set.
///
/// For a fixed support S the minimizer is z_S shifted by a common constant;
/// the projection is the feasible candidate closest to z.
pub fn project_bruteforce(z: &[f64]) -> Vec<f64> {
    let n = z.len();
    assert!(n <= 12, "exponential oracle");
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let members: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let shift = (members.iter().map(|&i| z[i]).sum::<f64>() - 1.0) / members.len() as f64;
        let mut p = vec![0.0; n];
        let mut feasible = true;
        for &i in &members {
            p[i] = z[i] - shift;
            if p[i] < -1e-15 {
                feasible = false;
            }
        }
        if !feasible {
            continue;
        }
        let dist: f64 = p.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, p.into_iter().map(|v| v.max(0.0)).collect()));
        }
    }
    best.unwrap().1
}

/// α-entmax by bisection on the threshold, run to machine precision.
pub fn entmax_oracle(z: &[f64], alpha: f64) -> Vec<f64> {
    let scaled: Vec<f64> = z.iter().map(|v| (alpha - 1.0) * v).collect();
    let power = 1.0 / (alpha - 1.0);
    let mass = |tau: f64| -> f64 { scaled.iter().map(|s| (s - tau).max(0.0).powf(power)).sum() };
    let hi0 = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo0 = scaled.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let (mut lo, mut hi) = (lo0, hi0);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    scaled.iter().map(|s| (s - lo).max(0.0).powf(power)).collect()
}

pub fn softmax_oracle(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn records(scores: &[f64], labels: &[u8]) -> Vec<PredictionRecord> {
    scores
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (&s, &y))| PredictionRecord::new(format!("d{i:03}"), s, y).unwrap())
        .collect()
}

/// Pairwise AUC as an exact fraction (numerator counts half-pairs).
pub fn auc_pairwise(recs: &[PredictionRecord]) -> (u64, u64) {
    let mut twice_correct = 0u64;
    let mut pairs = 0u64;
    for p in recs.iter().filter(|r| r.label == 1) {
        for n in recs.iter().filter(|r| r.label == 0) {
            pairs += 1;
            twice_correct += match p.score.partial_cmp(&n.score).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    (twice_correct, 2 * pairs)
}

/// Average precision from pairwise rank counting: record j precedes i when
/// its score is higher, or equal with a smaller id.
pub fn ap_pairwise(recs: &[PredictionRecord]) -> f64 {
    let precedes = |j: &PredictionRecord, i: &PredictionRecord| {
        j.score > i.score || (j.score == i.score && j.doc_id <= i.doc_id)
    };
    let positives = recs.iter().filter(|r| r.label == 1).count();
    let mut terms: Vec<(usize, f64)> = recs
        .iter()
        .filter(|r| r.label == 1)
        .map(|i| {
            let rank = recs.iter().filter(|j| precedes(j, i)).count();
            let hits = recs.iter().filter(|j| j.label == 1 && precedes(j, i)).count();
            (rank, hits as f64 / rank as f64)
        })
        .collect();
    // summed in rank order so the float result is reproducible bit for bit
    terms.sort_by_key(|t| t.0);
    terms.iter().map(|t| t.1).sum::<f64>() / positives as f64
}

pub fn brier_direct(recs: &[PredictionRecord]) -> f64 {
    recs.iter().map(|r| (r.score - r.label as f64).powi(2)).sum::<f64>() / recs.len() as f64
}
