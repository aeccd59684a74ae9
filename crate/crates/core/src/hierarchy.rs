//! Learnable adapter and coarse-to-fine cross-scale fusion.

use serde::{Deserialize, Serialize};

use crate::embedding_store::{ImageEmbeddings, TextBank};
use crate::linalg::{axpy, cosine, dot, norm, Mat};
use crate::scalar::Scalar;

/// Learnable parameters: the adapter `W` (d×d) and the global / high-scale
/// text biases, stored one row per class (C×d). The mid-scale bias is always
/// derived as their midpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    pub adapter: Mat<T>,
    pub bias_global: Mat<T>,
    pub bias_high: Mat<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// Zero adapter and zero biases: the frozen zero-shot model.
    pub fn zeros(d: usize, num_classes: usize) -> Self {
        Self {
            adapter: Mat::zeros(d, d),
            bias_global: Mat::zeros(num_classes, d),
            bias_high: Mat::zeros(num_classes, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.adapter.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.bias_global.rows()
    }

    pub fn is_finite(&self) -> bool {
        self.adapter.is_finite() && self.bias_global.is_finite() && self.bias_high.is_finite()
    }

    /// `(b0 + b2) / 2`, summed first and then halved.
    pub fn bias_mid(&self) -> Mat<T> {
        let half = T::lit(0.5);
        let mut out = self.bias_global.clone();
        for (o, &b2) in out.as_mut_slice().iter_mut().zip(self.bias_high.as_slice()) {
            *o = (*o + b2) * half;
        }
        out
    }

    /// Text embeddings for the three scales.
    pub fn scale_texts(&self, text: &TextBank<T>) -> ScaleTexts<T> {
        let add = |bias: &Mat<T>| {
            let mut t = text.classes.clone();
            t.add_assign(bias);
            t
        };
        ScaleTexts {
            global: add(&self.bias_global),
            mid: add(&self.bias_mid()),
            high: add(&self.bias_high),
        }
    }

    /// Flat views over all parameters in a fixed order: adapter, b0, b2.
    pub fn blocks(&self) -> [&[T]; 3] {
        [
            self.adapter.as_slice(),
            self.bias_global.as_slice(),
            self.bias_high.as_slice(),
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [T]; 3] {
        [
            self.adapter.as_mut_slice(),
            self.bias_global.as_mut_slice(),
            self.bias_high.as_mut_slice(),
        ]
    }

    pub fn len(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_flat(&self, mut idx: usize) -> T {
        for b in self.blocks() {
            if idx < b.len() {
                return b[idx];
            }
            idx -= b.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set_flat(&mut self, mut idx: usize, value: T) {
        for b in self.blocks_mut() {
            if idx < b.len() {
                b[idx] = value;
                return;
            }
            idx -= b.len();
        }
        panic!("parameter index out of range")
    }
}

/// Text embeddings `t⁰ = t + b⁰`, `t¹ = t + (b⁰+b²)/2`, `t² = t + b²`, one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleTexts<T> {
    pub global: Mat<T>,
    pub mid: Mat<T>,
    pub high: Mat<T>,
}

/// `ReLU(vᵀW) + v`.
pub fn apply_adapter<T: Scalar>(v: &[T], w: &Mat<T>) -> Vec<T> {
    let d = v.len();
    assert!(w.rows() == d && w.cols() == d, "adapter shape mismatch");
    let mut out = vec![T::zero(); d];
    for (m, &vm) in v.iter().enumerate() {
        if vm != T::zero() {
            axpy(&mut out, vm, w.row(m));
        }
    }
    for (o, &vk) in out.iter_mut().zip(v) {
        *o = o.max(T::zero()) + vk;
    }
    out
}

/// Accumulates `dL/dW` given `dL/du` for `u = ReLU(vᵀW) + v`.
///
/// The ReLU gate passes gradient where the pre-activation is `>= 0`, so a
/// zero-initialized `W` still receives a gradient on its first step.
pub fn adapter_backward<T: Scalar>(v: &[T], w: &Mat<T>, grad_out: &[T], grad_w: &mut Mat<T>) {
    let d = v.len();
    let mut pre = vec![T::zero(); d];
    for (m, &vm) in v.iter().enumerate() {
        if vm != T::zero() {
            axpy(&mut pre, vm, w.row(m));
        }
    }
    let gated: Vec<T> = pre
        .iter()
        .zip(grad_out)
        .map(|(&a, &g)| if a >= T::zero() { g } else { T::zero() })
        .collect();
    for (m, &vm) in v.iter().enumerate() {
        if vm != T::zero() {
            axpy(grad_w.row_mut(m), vm, &gated);
        }
    }
}

/// Mid-scale parent of high patch `j` on a `2n × 2n` grid.
#[inline]
pub fn parent_of(j: usize, n: usize) -> usize {
    let side = 2 * n;
    let (r, c) = (j / side, j % side);
    (r / 2) * n + c / 2
}

/// High-scale children of mid patch `i`, in row-major order.
pub fn children_of(i: usize, n: usize) -> [usize; 4] {
    let side = 2 * n;
    let (r, c) = (i / n, i % n);
    let top = 2 * r * side + 2 * c;
    [top, top + 1, top + side, top + side + 1]
}

/// Adapted and fused embeddings for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyState<T> {
    pub n: usize,
    pub u0: Vec<T>,
    pub u1_raw: Vec<Vec<T>>,
    pub u1_hat: Vec<Vec<T>>,
    pub u2_raw: Vec<Vec<T>>,
    pub u2_hat: Vec<Vec<T>>,
    /// `cos(u¹ᵢ, u⁰)` per mid patch (zero when fusion is disabled).
    pub mid_weights: Vec<T>,
    /// `cos(u²ⱼ, û¹_{parent(j)})` per high patch.
    pub high_weights: Vec<T>,
    pub fused: bool,
    /// Cosines that hit a zero-norm argument and fell back to 0.
    pub zero_norm_events: usize,
}

fn weight<T: Scalar>(a: &[T], b: &[T], zero_events: &mut usize) -> T {
    if norm(a) == T::zero() || norm(b) == T::zero() {
        *zero_events += 1;
    }
    cosine(a, b)
}

/// `a + cos(a, b) · b`
pub fn augment<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    let mut out = a.to_vec();
    axpy(&mut out, cosine(a, b), b);
    out
}

/// Cross-scale fusion, mid scale first, then high scale against the fused mid patches.
pub fn fuse<T: Scalar>(u0: Vec<T>, u1: Vec<Vec<T>>, u2: Vec<Vec<T>>, n: usize) -> HierarchyState<T> {
    assert_eq!(u1.len(), n * n, "expected n² mid patches");
    assert_eq!(u2.len(), 4 * n * n, "expected 4n² high patches");
    let mut zero_norm_events = 0;
    let mut mid_weights = Vec::with_capacity(u1.len());
    let u1_hat: Vec<Vec<T>> = u1
        .iter()
        .map(|u| {
            let w = weight(u, &u0, &mut zero_norm_events);
            mid_weights.push(w);
            let mut out = u.clone();
            axpy(&mut out, w, &u0);
            out
        })
        .collect();
    let mut high_weights = Vec::with_capacity(u2.len());
    let u2_hat: Vec<Vec<T>> = u2
        .iter()
        .enumerate()
        .map(|(j, u)| {
            let parent = &u1_hat[parent_of(j, n)];
            let w = weight(u, parent, &mut zero_norm_events);
            high_weights.push(w);
            let mut out = u.clone();
            axpy(&mut out, w, parent);
            out
        })
        .collect();
    HierarchyState {
        n,
        u0,
        u1_raw: u1,
        u1_hat,
        u2_raw: u2,
        u2_hat,
        mid_weights,
        high_weights,
        fused: true,
        zero_norm_events,
    }
}

/// Identity fusion: `û = u` at every scale.
pub fn unfused<T: Scalar>(u0: Vec<T>, u1: Vec<Vec<T>>, u2: Vec<Vec<T>>, n: usize) -> HierarchyState<T> {
    HierarchyState {
        n,
        u0,
        u1_hat: u1.clone(),
        u2_hat: u2.clone(),
        mid_weights: vec![T::zero(); u1.len()],
        high_weights: vec![T::zero(); u2.len()],
        u1_raw: u1,
        u2_raw: u2,
        fused: false,
        zero_norm_events: 0,
    }
}

/// Adapter on every vector of `item`, then fusion (or identity when `fusion` is false).
pub fn build_hierarchy<T: Scalar>(
    item: &ImageEmbeddings<T>,
    params: &ModelParams<T>,
    fusion: bool,
) -> HierarchyState<T> {
    let w = &params.adapter;
    let n = item.partition();
    let u0 = apply_adapter(&item.global, w);
    let u1 = item.mid.iter().map(|v| apply_adapter(v, w)).collect();
    let u2 = item.high.iter().map(|v| apply_adapter(v, w)).collect();
    if fusion {
        fuse(u0, u1, u2, n)
    } else {
        unfused(u0, u1, u2, n)
    }
}

/// Accumulates gradients of `out = a + cos(a, b)·b` into `ga` and `gb`.
pub fn augment_backward<T: Scalar>(a: &[T], b: &[T], weight: T, g_out: &[T], ga: &mut [T], gb: &mut [T]) {
    axpy(ga, T::one(), g_out);
    axpy(gb, weight, g_out);
    let gw = dot(g_out, b);
    crate::linalg::cosine_backward(a, b, gw, ga, gb);
}
