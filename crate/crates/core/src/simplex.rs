//! Mappings from score vectors onto the probability simplex.
//!
//! All four mappings belong to the α-entmax family:
//!
//! ```text
//! p_i = [(α - 1) z_i - τ]_+ ^ (1 / (α - 1)),   τ chosen so that Σ p_i = 1
//! ```
//!
//! with softmax as the α → 1 limit, sparsemax at α = 2 and the 1.5-entmax
//! case solvable exactly by sorting. Every routine runs in `f64` and shifts
//! the input by its maximum first, so results are translation invariant.
//! Reductions are taken over the sorted values, which makes every mapping
//! exactly permutation equivariant.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities below this are flushed to exact zero by the sparse mappings.
pub const SPARSE_FLOOR: f64 = 1e-12;

/// Fixed iteration count of the bisection solver.
pub const BISECT_ITERS: usize = 50;

/// Scale applied to the unified backward rule. Pinned to 1 by the
/// finite-difference checks in `tests/simplex_maps.rs`.
pub const BACKWARD_SCALE: f64 = 1.0;

/// Which normalizer turns attention scores into weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MappingKind {
    Softmax,
    Sparsemax,
    Entmax15,
    /// Generic α-entmax solved by bisection, α ∈ (1, 4].
    EntmaxAlpha(f64),
}

impl MappingKind {
    pub fn alpha(&self) -> f64 {
        match self {
            MappingKind::Softmax => 1.0,
            MappingKind::Sparsemax => 2.0,
            MappingKind::Entmax15 => 1.5,
            MappingKind::EntmaxAlpha(a) => *a,
        }
    }

    /// True for every mapping that can emit exact zeros.
    pub fn is_sparse(&self) -> bool {
        !matches!(self, MappingKind::Softmax)
    }

    pub fn validate(&self) -> Result<()> {
        if let MappingKind::EntmaxAlpha(a) = self {
            if !(a.is_finite() && *a > 1.0 && *a <= 4.0) {
                return Err(Error::invalid(format!("entmax alpha must lie in (1, 4], got {a}")));
            }
        }
        Ok(())
    }

    /// Maps `z` onto the simplex.
    pub fn apply(&self, z: &[f64]) -> Result<ProbabilityVector> {
        Ok(self.apply_with_support(z)?.0)
    }

    /// Maps `z` and, for the sparse mappings, reports the threshold and support.
    pub fn apply_with_support(&self, z: &[f64]) -> Result<(ProbabilityVector, Option<SupportInfo>)> {
        match self {
            MappingKind::Softmax => Ok((softmax(z)?, None)),
            MappingKind::Sparsemax => sparsemax(z).map(|(p, s)| (p, Some(s))),
            MappingKind::Entmax15 => entmax15(z).map(|(p, s)| (p, Some(s))),
            MappingKind::EntmaxAlpha(a) => {
                entmax_bisect_with_support(z, *a, BISECT_ITERS).map(|(p, s)| (p, Some(s)))
            }
        }
    }

    /// Vector-Jacobian product of this mapping at output `p`.
    pub fn backward(&self, p: &ProbabilityVector, upstream: &[f64]) -> Result<Vec<f64>> {
        mapping_backward(p, upstream, *self)
    }
}

impl fmt::Display for MappingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MappingKind::Softmax => f.write_str("softmax"),
            MappingKind::Sparsemax => f.write_str("sparsemax"),
            MappingKind::Entmax15 => f.write_str("entmax15"),
            MappingKind::EntmaxAlpha(a) => write!(f, "entmax:{a}"),
        }
    }
}

impl FromStr for MappingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.trim().to_ascii_lowercase().as_str() {
            "softmax" => MappingKind::Softmax,
            "sparsemax" => MappingKind::Sparsemax,
            "entmax15" | "entmax" => MappingKind::Entmax15,
            other => {
                let alpha = other
                    .strip_prefix("entmax:")
                    .ok_or_else(|| Error::Config(format!("unknown mapping '{s}'")))?;
                let alpha: f64 = alpha
                    .parse()
                    .map_err(|_| Error::Config(format!("bad entmax alpha in '{s}'")))?;
                MappingKind::EntmaxAlpha(alpha)
            }
        };
        kind.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(kind)
    }
}

/// Finite score vector, the argument of a mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_input(&values)?;
        Ok(Logits(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Wraps `values` after checking simplex membership to `tol`.
    pub fn new(values: Vec<f64>, tol: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empty probability vector"));
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!("negative or non-finite weight {bad}")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::invalid(format!("weights sum to {sum}")));
        }
        Ok(ProbabilityVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    pub fn zero_count(&self) -> usize {
        self.0.iter().filter(|&&v| v == 0.0).count()
    }
}

/// Threshold and support of a sparse mapping.
///
/// `threshold` lives in the mapping's scaled coordinates
/// `(α - 1)(z - max z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportInfo {
    pub threshold: f64,
    pub support_size: usize,
    pub support_mask: Vec<bool>,
}

impl SupportInfo {
    fn from_probs(threshold: f64, p: &[f64]) -> Self {
        let support_mask: Vec<bool> = p.iter().map(|&v| v > 0.0).collect();
        let support_size = support_mask.iter().filter(|&&m| m).count();
        SupportInfo {
            threshold,
            support_size,
            support_mask,
        }
    }

    /// Smallest distance between a scaled coordinate and the threshold.
    ///
    /// Small margins mean a tiny perturbation of `z` could change the support.
    pub fn margin(&self, z: &[f64], alpha: f64) -> f64 {
        let max = max_of(z);
        z.iter()
            .map(|&v| ((alpha - 1.0) * (v - max) - self.threshold).abs())
            .fold(f64::INFINITY, f64::min)
    }
}

fn check_input(z: &[f64]) -> Result<()> {
    if z.is_empty() {
        return Err(Error::invalid("mapping input is empty"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("mapping input contains non-finite values"));
    }
    Ok(())
}

fn max_of(z: &[f64]) -> f64 {
    z.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn sorted_desc(values: &[f64]) -> Vec<f64> {
    let mut s = values.to_vec();
    s.sort_unstable_by(|a, b| b.total_cmp(a));
    s
}

fn flush_small(p: &mut [f64]) {
    for v in p.iter_mut() {
        if *v < SPARSE_FLOOR {
            *v = 0.0;
        }
    }
}

pub fn softmax(z: &[f64]) -> Result<ProbabilityVector> {
    check_input(z)?;
    let max = max_of(z);
    let mut p: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = sorted_desc(&p).iter().sum();
    for v in &mut p {
        *v /= total;
    }
    Ok(ProbabilityVector(p))
}

/// Euclidean projection onto the simplex via the sort-and-threshold rule.
pub fn sparsemax(z: &[f64]) -> Result<(ProbabilityVector, SupportInfo)> {
    check_input(z)?;
    let max = max_of(z);
    let shifted: Vec<f64> = z.iter().map(|&v| v - max).collect();
    let sorted = sorted_desc(&shifted);

    let mut cumsum = 0.0;
    let mut support = 1;
    let mut support_sum = sorted[0];
    for (i, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let k = (i + 1) as f64;
        if 1.0 + k * v > cumsum {
            support = i + 1;
            support_sum = cumsum;
        }
    }
    let tau = (support_sum - 1.0) / support as f64;

    let mut p: Vec<f64> = shifted.iter().map(|&v| (v - tau).max(0.0)).collect();
    flush_small(&mut p);
    let info = SupportInfo::from_probs(tau, &p);
    Ok((ProbabilityVector(p), info))
}

/// Exact 1.5-entmax by sorting.
pub fn entmax15(z: &[f64]) -> Result<(ProbabilityVector, SupportInfo)> {
    check_input(z)?;
    let max = max_of(z);
    let half: Vec<f64> = z.iter().map(|&v| (v - max) / 2.0).collect();
    let sorted = sorted_desc(&half);

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut support = 0;
    let mut taus = Vec::with_capacity(sorted.len());
    for (i, &v) in sorted.iter().enumerate() {
        let k = (i + 1) as f64;
        sum += v;
        sum_sq += v * v;
        let mean = sum / k;
        let mean_sq = sum_sq / k;
        let ss = k * (mean_sq - mean * mean);
        let delta = ((1.0 - ss) / k).max(0.0);
        let tau = mean - delta.sqrt();
        if tau <= v {
            support += 1;
        }
        taus.push(tau);
    }
    let tau = taus[support.max(1) - 1];

    let mut p: Vec<f64> = half
        .iter()
        .map(|&v| {
            let d = (v - tau).max(0.0);
            d * d
        })
        .collect();
    flush_small(&mut p);
    let info = SupportInfo::from_probs(tau, &p);
    Ok((ProbabilityVector(p), info))
}

/// α-entmax by bisection on the threshold.
pub fn entmax_bisect(z: &[f64], alpha: f64, max_iter: usize) -> Result<ProbabilityVector> {
    Ok(entmax_bisect_with_support(z, alpha, max_iter)?.0)
}

pub fn entmax_bisect_with_support(
    z: &[f64],
    alpha: f64,
    max_iter: usize,
) -> Result<(ProbabilityVector, SupportInfo)> {
    if !(alpha.is_finite() && alpha > 1.0) {
        return Err(Error::invalid(format!("entmax alpha must exceed 1, got {alpha}")));
    }
    if max_iter == 0 {
        return Err(Error::invalid("bisection needs at least one iteration"));
    }
    check_input(z)?;
    let am1 = alpha - 1.0;
    let power = 1.0 / am1;
    let max = max_of(z);
    let scaled: Vec<f64> = z.iter().map(|&v| am1 * (v - max)).collect();
    let sorted = sorted_desc(&scaled);

    let mass = |tau: f64| -> f64 {
        sorted
            .iter()
            .take_while(|&&v| v > tau)
            .map(|&v| (v - tau).powf(power))
            .sum::<f64>()
    };

    // The top scaled entry is 0, so f(-1) >= 0 and f(0) = -1.
    let mut lo = -1.0;
    let mut width = 1.0;
    for _ in 0..max_iter {
        width /= 2.0;
        let mid = lo + width;
        if mass(mid) - 1.0 >= 0.0 {
            lo = mid;
        }
    }
    let tau = lo;
    let total = mass(tau);
    let mut p: Vec<f64> = scaled
        .iter()
        .map(|&v| (v - tau).max(0.0).powf(power) / total)
        .collect();
    flush_small(&mut p);
    let info = SupportInfo::from_probs(tau, &p);
    Ok((ProbabilityVector(p), info))
}

/// Vector-Jacobian product shared by the whole entmax family.
///
/// With `g_i = p_i^(2 - α)` on the support (zero elsewhere) the gradient is
/// `g ⊙ u - (Σ g u / Σ g) g`, scaled by [`BACKWARD_SCALE`].
pub fn mapping_backward(p: &ProbabilityVector, upstream: &[f64], kind: MappingKind) -> Result<Vec<f64>> {
    let p = p.as_slice();
    if p.len() != upstream.len() {
        return Err(Error::Shape {
            op: "mapping_backward",
            left: vec![p.len()],
            right: vec![upstream.len()],
        });
    }
    let mut out = vec![0.0; p.len()];
    backward_into(p, upstream, kind, &mut out);
    Ok(out)
}

/// Allocation-free core of [`mapping_backward`]; lengths must agree.
pub(crate) fn backward_into(p: &[f64], upstream: &[f64], kind: MappingKind, out: &mut [f64]) {
    let exponent = 2.0 - kind.alpha();
    let weight = |pi: f64| -> f64 {
        if pi <= 0.0 {
            0.0
        } else {
            match kind {
                MappingKind::Softmax => pi,
                MappingKind::Sparsemax => 1.0,
                MappingKind::Entmax15 => pi.sqrt(),
                MappingKind::EntmaxAlpha(_) => pi.powf(exponent),
            }
        }
    };
    let mut g_sum = 0.0;
    let mut gu_sum = 0.0;
    for (o, (&pi, &u)) in out.iter_mut().zip(p.iter().zip(upstream)) {
        let g = weight(pi);
        *o = g;
        g_sum += g;
        gu_sum += g * u;
    }
    let q = if g_sum > 0.0 { gu_sum / g_sum } else { 0.0 };
    for (o, &u) in out.iter_mut().zip(upstream) {
        let g = *o;
        *o = BACKWARD_SCALE * (g * u - q * g);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        assert!(close(p.as_slice(), &[1.0 / 3.0; 3], 1e-15));
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!(close(p.as_slice(), &[2.0 / 3.0, 1.0 / 3.0], 1e-15));
        let p = softmax(&[1.0, 0.0]).unwrap();
        assert!(close(p.as_slice(), &[0.7311, 0.2689], 1e-4));
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(softmax(&[]), Err(Error::InvalidArgument(_))));
        assert!(matches!(sparsemax(&[]), Err(Error::InvalidArgument(_))));
        assert!(matches!(entmax15(&[]), Err(Error::InvalidArgument(_))));
        assert!(matches!(entmax_bisect(&[], 1.5, 50), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn sparsemax_examples() {
        let (p, s) = sparsemax(&[0.0, 0.0]).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
        assert_eq!(s.support_size, 2);
        // threshold is reported relative to the max-shifted input
        assert_eq!(s.threshold, -0.5);

        let (p, s) = sparsemax(&[2.0, 0.0]).unwrap();
        assert_eq!(p.as_slice(), &[1.0, 0.0]);
        assert_eq!(s.support_size, 1);
        assert_eq!(s.threshold + 2.0, 1.0);

        let (p, s) = sparsemax(&[1.0, 0.5]).unwrap();
        assert!(close(p.as_slice(), &[0.75, 0.25], 1e-15));
        assert!((s.threshold + 1.0 - 0.25).abs() < 1e-15);

        let (p, s) = sparsemax(&[0.5, 0.2, -0.1]).unwrap();
        assert!(close(p.as_slice(), &[0.6333, 0.3333, 0.0333], 1e-4));
        assert_eq!(s.support_size, 3);
    }

    #[test]
    fn entmax15_examples() {
        let (p, _) = entmax15(&[0.0, 0.0]).unwrap();
        assert!(close(p.as_slice(), &[0.5, 0.5], 1e-15));
        let (p, s) = entmax15(&[1.0, 0.0]).unwrap();
        assert!(close(p.as_slice(), &[0.8307, 0.1693], 1e-3));
        assert_eq!(s.support_size, 2);
    }

    #[test]
    fn bisect_rejects_bad_alpha() {
        assert!(entmax_bisect(&[1.0, 0.0], 1.0, 50).is_err());
        assert!(entmax_bisect(&[1.0, 0.0], 0.5, 50).is_err());
        assert!(entmax_bisect(&[1.0, 0.0], 1.5, 0).is_err());
    }

    #[test]
    fn singleton_is_one() {
        for kind in [
            MappingKind::Softmax,
            MappingKind::Sparsemax,
            MappingKind::Entmax15,
            MappingKind::EntmaxAlpha(1.3),
        ] {
            assert_eq!(kind.apply(&[-3.0]).unwrap().as_slice(), &[1.0]);
        }
    }

    #[test]
    fn backward_examples() {
        let p = ProbabilityVector::new(vec![1.0, 0.0], 1e-12).unwrap();
        let dz = mapping_backward(&p, &[3.0, -7.0], MappingKind::Sparsemax).unwrap();
        assert_eq!(dz, vec![0.0, 0.0]);

        let p = ProbabilityVector::new(vec![0.75, 0.25], 1e-12).unwrap();
        let dz = mapping_backward(&p, &[1.0, 0.0], MappingKind::Sparsemax).unwrap();
        assert!(close(&dz, &[0.5, -0.5], 1e-15));

        let p = ProbabilityVector::new(vec![1.0 / 3.0; 3], 1e-12).unwrap();
        let dz = mapping_backward(&p, &[1.0, 1.0, 1.0], MappingKind::Softmax).unwrap();
        assert!(close(&dz, &[0.0; 3], 1e-15));

        assert!(mapping_backward(&p, &[1.0], MappingKind::Softmax).is_err());
    }

    #[test]
    fn mapping_names_round_trip() {
        for s in ["softmax", "sparsemax", "entmax15", "entmax:1.25"] {
            let k: MappingKind = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        assert!("entmax:0.9".parse::<MappingKind>().is_err());
        assert!("entmax:5".parse::<MappingKind>().is_err());
        assert!("relu".parse::<MappingKind>().is_err());
    }

    #[test]
    fn logits_reject_nan() {
        assert!(Logits::new(vec![1.0, f64::NAN]).is_err());
        assert!(Logits::new(vec![]).is_err());
        assert_eq!(Logits::new(vec![1.0]).unwrap().as_slice(), &[1.0]);
    }
}
