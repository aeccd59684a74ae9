//! Image–text alignment probabilities, patch entropies, entropy filtering,
//! and the aggregated per-scale predictions.

use serde::{Deserialize, Serialize};

use crate::embedding_store::TextBank;
use crate::error::{Error, Result};
use crate::hierarchy::{HierarchyState, ModelParams, ScaleTexts};
use crate::linalg::{cosine, Mat};
use crate::scalar::Scalar;

pub const DEFAULT_TAU: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    /// Softmax temperature applied to cosine similarities.
    pub tau: f64,
    /// Divide aggregates by the kept-patch count instead of the full patch count.
    #[serde(default)]
    pub renormalize_aggregates: bool,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            renormalize_aggregates: false,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        Ok(())
    }
}

/// In-place numerically stable softmax.
pub fn softmax_in_place<T: Scalar>(z: &mut [T]) {
    let max = z.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut sum = T::zero();
    for x in z.iter_mut() {
        *x = (*x - max).exp();
        sum = sum + *x;
    }
    for x in z.iter_mut() {
        *x = *x / sum;
    }
}

/// Softmax over `cos(u, t_c) / tau` for every class row of `text`.
pub fn align_probs<T: Scalar>(u: &[T], text: &Mat<T>, tau: T) -> Vec<T> {
    assert!(tau > T::zero(), "tau must be positive");
    assert_eq!(u.len(), text.cols(), "alignment dimension mismatch");
    let mut z: Vec<T> = (0..text.rows()).map(|c| cosine(u, text.row(c)) / tau).collect();
    softmax_in_place(&mut z);
    z
}

/// Shannon entropy in nats with `0·ln 0 = 0`, clamped to `[0, ln C]`.
pub fn entropy<T: Scalar>(p: &[T]) -> T {
    let mut h = T::zero();
    for &x in p {
        assert!(!(x < T::zero()), "entropy of a vector with a negative component");
        if x > T::zero() {
            h = h - x * x.ln();
        }
    }
    let max = T::from_usize_lossy(p.len()).ln();
    if h < T::zero() {
        T::zero()
    } else if h > max {
        max
    } else {
        h
    }
}

/// Entropy filter over one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleAggregate<T> {
    pub entropies: Vec<T>,
    /// Mean patch entropy.
    pub h_bar: T,
    /// `H(pᵢ) <= h_bar`
    pub mask: Vec<bool>,
    pub aggregated: Vec<T>,
}

/// `(1/D) Σ_{kept} pᵢ` where `D` is the full patch count, or the kept count
/// when `renormalize` is set.
pub fn aggregate_masked<T: Scalar>(per_patch: &[Vec<T>], mask: &[bool], renormalize: bool) -> Vec<T> {
    let classes = per_patch[0].len();
    let mut acc = vec![T::zero(); classes];
    let mut kept = 0usize;
    for (p, &keep) in per_patch.iter().zip(mask) {
        if keep {
            kept += 1;
            for (a, &x) in acc.iter_mut().zip(p) {
                *a = *a + x;
            }
        }
    }
    let denom = if renormalize { kept.max(1) } else { per_patch.len() };
    let denom = T::from_usize_lossy(denom);
    acc.iter_mut().for_each(|a| *a = *a / denom);
    acc
}

pub fn entropy_mask<T: Scalar>(entropies: &[T]) -> (T, Vec<bool>) {
    let h_bar = entropies.iter().copied().sum::<T>() / T::from_usize_lossy(entropies.len());
    (h_bar, entropies.iter().map(|&h| h <= h_bar).collect())
}

pub fn aggregate_scale<T: Scalar>(per_patch: &[Vec<T>], renormalize: bool) -> ScaleAggregate<T> {
    assert!(!per_patch.is_empty(), "aggregate over an empty patch set");
    let entropies: Vec<T> = per_patch.iter().map(|p| entropy(p)).collect();
    let (h_bar, mut mask) = entropy_mask(&entropies);
    if !mask.iter().any(|&k| k) {
        // Only reachable through rounding in the mean; keep the lowest-entropy patch.
        let best = (0..entropies.len())
            .min_by(|&a, &b| entropies[a].partial_cmp(&entropies[b]).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap();
        mask[best] = true;
    }
    let aggregated = aggregate_masked(per_patch, &mask, renormalize);
    ScaleAggregate {
        entropies,
        h_bar,
        mask,
        aggregated,
    }
}

/// Full set of per-image predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet<T> {
    pub p0: Vec<T>,
    pub p_mid: Vec<Vec<T>>,
    pub p_high: Vec<Vec<T>>,
    pub h_mid: Vec<T>,
    pub h_high: Vec<T>,
    pub h_bar_mid: T,
    pub h_bar_high: T,
    pub mask_mid: Vec<bool>,
    pub mask_high: Vec<bool>,
    pub p1: Vec<T>,
    pub p2: Vec<T>,
}

impl<T: Scalar> PredictionSet<T> {
    /// `(p⁰ + p¹ + p²) / 3`
    pub fn p_id(&self) -> Vec<T> {
        let third = T::one() / T::lit(3.0);
        self.p0
            .iter()
            .zip(&self.p1)
            .zip(&self.p2)
            .map(|((&a, &b), &c)| (a + b + c) * third)
            .collect()
    }
}

/// Keep-masks carried over from an earlier forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenMasks {
    pub mid: Vec<bool>,
    pub high: Vec<bool>,
}

pub fn predict<T: Scalar>(
    state: &HierarchyState<T>,
    text: &TextBank<T>,
    params: &ModelParams<T>,
    cfg: &AlignmentConfig,
) -> PredictionSet<T> {
    predict_with_texts(state, &params.scale_texts(text), cfg, None)
}

/// Predictions given precomputed scale texts. With `frozen`, the keep-masks
/// are taken as given instead of recomputed from the entropies.
pub fn predict_with_texts<T: Scalar>(
    state: &HierarchyState<T>,
    texts: &ScaleTexts<T>,
    cfg: &AlignmentConfig,
    frozen: Option<&FrozenMasks>,
) -> PredictionSet<T> {
    let tau = T::lit(cfg.tau);
    let p0 = align_probs(&state.u0, &texts.global, tau);
    let p_mid: Vec<Vec<T>> = state.u1_hat.iter().map(|u| align_probs(u, &texts.mid, tau)).collect();
    let p_high: Vec<Vec<T>> = state.u2_hat.iter().map(|u| align_probs(u, &texts.high, tau)).collect();
    let mid = aggregate_scale(&p_mid, cfg.renormalize_aggregates);
    let high = aggregate_scale(&p_high, cfg.renormalize_aggregates);
    let (mask_mid, mask_high, p1, p2) = match frozen {
        Some(f) => (
            f.mid.clone(),
            f.high.clone(),
            aggregate_masked(&p_mid, &f.mid, cfg.renormalize_aggregates),
            aggregate_masked(&p_high, &f.high, cfg.renormalize_aggregates),
        ),
        None => (mid.mask, high.mask, mid.aggregated, high.aggregated),
    };
    PredictionSet {
        p0,
        p_mid,
        p_high,
        h_mid: mid.entropies,
        h_high: high.entropies,
        h_bar_mid: mid.h_bar,
        h_bar_high: high.h_bar,
        mask_mid,
        mask_high,
        p1,
        p2,
    }
}
