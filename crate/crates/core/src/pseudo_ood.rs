//! Hard pseudo-OOD embeddings: entropy-gain scoring of high-scale patches,
//! top-K selection, and propagation of the selected embeddings to the mid and
//! global scales.

use rand::seq::index::sample;
use rand::RngCore;

use crate::alignment::PredictionSet;
use crate::error::{Error, Result};
use crate::hierarchy::{parent_of, HierarchyState};
use crate::linalg::{axpy, cosine};
use crate::scalar::Scalar;

/// `ΔH(p²ⱼ) = H(p²ⱼ) − H(p¹_{parent(j)})` for every high patch `j`.
pub fn entropy_gain<T: Scalar>(pred: &PredictionSet<T>) -> Vec<T> {
    let n = (pred.h_mid.len() as f64).sqrt().round() as usize;
    pred.h_high
        .iter()
        .enumerate()
        .map(|(j, &h)| h - pred.h_mid[parent_of(j, n)])
        .collect()
}

/// Indices of the `k` largest gains, ordered by descending gain with ties
/// broken by ascending index.
pub fn select_top_k<T: Scalar>(gains: &[T], k: usize) -> Result<Vec<usize>> {
    if k < 1 || k > gains.len() {
        return Err(Error::Config(format!(
            "K = {k} outside [1, {}]",
            gains.len()
        )));
    }
    let mut order: Vec<usize> = (0..gains.len()).collect();
    order.sort_by(|&a, &b| {
        gains[b]
            .partial_cmp(&gains[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    Ok(order)
}

/// `k` distinct indices drawn uniformly from `0..count`.
pub fn select_random(count: usize, k: usize, rng: &mut impl RngCore) -> Result<Vec<usize>> {
    if k < 1 || k > count {
        return Err(Error::Config(format!("K = {k} outside [1, {count}]")));
    }
    Ok(sample(rng, count, k).into_vec())
}

/// `q¹ = q² + (1/n²) Σᵢ cos(q², û¹ᵢ) û¹ᵢ`, then `q⁰ = q¹ + cos(q¹, u⁰) u⁰`.
pub fn propagate<T: Scalar>(q2: &[T], u1_hat: &[Vec<T>], u0: &[T]) -> (Vec<T>, Vec<T>) {
    let inv = T::one() / T::from_usize_lossy(u1_hat.len());
    let mut q1 = q2.to_vec();
    for u in u1_hat {
        axpy(&mut q1, cosine(q2, u) * inv, u);
    }
    let mut q0 = q1.clone();
    axpy(&mut q0, cosine(&q1, u0), u0);
    (q1, q0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoOodSet<T> {
    pub indices: Vec<usize>,
    pub q2: Vec<Vec<T>>,
    pub q1: Vec<Vec<T>>,
    pub q0: Vec<Vec<T>>,
    /// Entropy gain of each selected patch.
    pub gains: Vec<T>,
}

/// Pseudo-OOD triples for the patches in `indices`. Without `propagate_lower`
/// the selected high-scale embedding is reused unchanged at every scale.
pub fn build_pseudo_ood<T: Scalar>(
    state: &HierarchyState<T>,
    gains: &[T],
    indices: Vec<usize>,
    propagate_lower: bool,
) -> PseudoOodSet<T> {
    let mut set = PseudoOodSet {
        q2: Vec::with_capacity(indices.len()),
        q1: Vec::with_capacity(indices.len()),
        q0: Vec::with_capacity(indices.len()),
        gains: indices.iter().map(|&j| gains[j]).collect(),
        indices,
    };
    for &j in &set.indices {
        let q2 = state.u2_hat[j].clone();
        let (q1, q0) = if propagate_lower {
            propagate(&q2, &state.u1_hat, &state.u0)
        } else {
            (q2.clone(), q2.clone())
        };
        set.q2.push(q2);
        set.q1.push(q1);
        set.q0.push(q0);
    }
    set
}
