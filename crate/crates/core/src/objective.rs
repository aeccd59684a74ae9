//! Training objective: cross-entropy on the three per-scale predictions plus
//! entropy maximisation on pseudo-OOD embeddings, with exact reverse-mode
//! gradients with respect to the adapter and the two text biases.
//!
//! Discrete decisions (entropy keep-masks, top-K indices) are constants of the
//! forward pass: the backward pass differentiates through everything else,
//! including the cosine fusion weights.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{
    align_probs, entropy, predict_with_texts, AlignmentConfig, FrozenMasks, PredictionSet,
};
use crate::embedding_store::{rng, ImageEmbeddings, TextBank};
use crate::error::{Error, Result};
use crate::hierarchy::{
    adapter_backward, augment_backward, build_hierarchy, HierarchyState, ModelParams, ScaleTexts,
};
use crate::linalg::{axpy, cosine, cosine_backward, dot, Mat};
use crate::pseudo_ood::{build_pseudo_ood, entropy_gain, select_random, select_top_k, PseudoOodSet};
use crate::scalar::Scalar;

/// Floor applied to a probability before taking its log in cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

/// Gradients share the parameter layout.
pub type Gradients<T> = ModelParams<T>;

/// Switches for the ablation study. All off means the full method.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    pub disable_ood_loss: bool,
    /// Random patch selection instead of top-K entropy gain.
    pub disable_entropy_gain_selection: bool,
    pub disable_cross_scale_fusion: bool,
    /// Use `q⁰ = q¹ = q²`.
    pub disable_lower_scale_propagation: bool,
    /// Recorded for completeness; background-region mining is not implemented.
    pub background_selection: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub alignment: AlignmentConfig,
    /// Pseudo-OOD patches per image.
    pub k: usize,
    pub lambda_ood: f64,
    pub ablations: Ablations,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            alignment: AlignmentConfig::default(),
            k: 4,
            lambda_ood: 1.0,
            ablations: Ablations::default(),
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        self.alignment.validate()?;
        if self.k < 1 || self.k > 4 * n * n {
            return Err(Error::Config(format!(
                "K = {} outside [1, {}] for n = {n}",
                self.k,
                4 * n * n
            )));
        }
        if !self.lambda_ood.is_finite() {
            return Err(Error::Config("lambda_ood must be finite".into()));
        }
        if self.ablations.background_selection {
            return Err(Error::Config(
                "background-region selection is not implemented".into(),
            ));
        }
        Ok(())
    }

    fn ood_enabled(&self) -> bool {
        !self.ablations.disable_ood_loss
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    pub l_id: T,
    pub l_ood: T,
    pub total: T,
    /// Cross-entropy on `p⁰`, `p¹`, `p²`.
    pub per_scale_ce: [T; 3],
    /// `-(1/K) Σₖ H(pˢₖ)` for s = 0, 1, 2.
    pub per_scale_neg_entropy: [T; 3],
}

impl<T: Scalar> LossBreakdown<T> {
    fn zero() -> Self {
        Self {
            l_id: T::zero(),
            l_ood: T::zero(),
            total: T::zero(),
            per_scale_ce: [T::zero(); 3],
            per_scale_neg_entropy: [T::zero(); 3],
        }
    }

    fn add(&mut self, other: &Self) {
        self.l_id = self.l_id + other.l_id;
        self.l_ood = self.l_ood + other.l_ood;
        for s in 0..3 {
            self.per_scale_ce[s] = self.per_scale_ce[s] + other.per_scale_ce[s];
            self.per_scale_neg_entropy[s] = self.per_scale_neg_entropy[s] + other.per_scale_neg_entropy[s];
        }
    }

    fn divide(&mut self, count: T) {
        self.l_id = self.l_id / count;
        self.l_ood = self.l_ood / count;
        for s in 0..3 {
            self.per_scale_ce[s] = self.per_scale_ce[s] / count;
            self.per_scale_neg_entropy[s] = self.per_scale_neg_entropy[s] / count;
        }
    }

    fn finish(&mut self, lambda_ood: T) {
        self.total = self.l_id + lambda_ood * self.l_ood;
    }
}

/// `-ln max(p_y, 1e-12)`
pub fn cross_entropy<T: Scalar>(p: &[T], label: usize) -> T {
    -p[label].max(T::lit(PROB_FLOOR)).ln()
}

/// `CE(p⁰, y) + CE(p¹, y) + CE(p², y)`
pub fn loss_id<T: Scalar>(pred: &PredictionSet<T>, label: usize) -> Result<T> {
    let classes = pred.p0.len();
    if label >= classes {
        return Err(Error::Contract(format!("label {label} outside [0, {classes})")));
    }
    Ok(cross_entropy(&pred.p0, label) + cross_entropy(&pred.p1, label) + cross_entropy(&pred.p2, label))
}

/// Probability vectors of every pseudo-OOD triple at scales 0, 1, 2.
pub fn pseudo_probs<T: Scalar>(
    pseudo: &PseudoOodSet<T>,
    texts: &ScaleTexts<T>,
    tau: T,
) -> Vec<[Vec<T>; 3]> {
    (0..pseudo.indices.len())
        .map(|k| {
            [
                align_probs(&pseudo.q0[k], &texts.global, tau),
                align_probs(&pseudo.q1[k], &texts.mid, tau),
                align_probs(&pseudo.q2[k], &texts.high, tau),
            ]
        })
        .collect()
}

fn neg_entropies<T: Scalar>(probs: &[[Vec<T>; 3]]) -> [T; 3] {
    let inv_k = T::one() / T::from_usize_lossy(probs.len().max(1));
    let mut out = [T::zero(); 3];
    for triple in probs {
        for s in 0..3 {
            out[s] = out[s] - entropy(&triple[s]) * inv_k;
        }
    }
    out
}

/// `-(1/K) Σₖ (H(p⁰ₖ) + H(p¹ₖ) + H(p²ₖ))`
pub fn loss_ood<T: Scalar>(
    pseudo: &PseudoOodSet<T>,
    text: &TextBank<T>,
    params: &ModelParams<T>,
    cfg: &AlignmentConfig,
) -> T {
    let probs = pseudo_probs(pseudo, &params.scale_texts(text), T::lit(cfg.tau));
    let [a, b, c] = neg_entropies(&probs);
    a + b + c
}

/// Discrete choices made during one image's forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDecisions {
    pub masks: FrozenMasks,
    pub selected: Vec<usize>,
}

/// Everything the backward pass needs for one image.
#[derive(Debug, Clone)]
pub struct ImageForward<T> {
    pub state: HierarchyState<T>,
    pub pred: PredictionSet<T>,
    pub pseudo: Option<PseudoOodSet<T>>,
    pub pseudo_probs: Vec<[Vec<T>; 3]>,
    pub loss: LossBreakdown<T>,
}

impl<T> ImageForward<T> {
    pub fn decisions(&self) -> ImageDecisions {
        ImageDecisions {
            masks: FrozenMasks {
                mid: self.pred.mask_mid.clone(),
                high: self.pred.mask_high.clone(),
            },
            selected: self
                .pseudo
                .as_ref()
                .map(|p| p.indices.clone())
                .unwrap_or_default(),
        }
    }
}

/// Forward pass for a labeled image. `random_stream` seeds the random
/// selection ablation; `frozen` replays earlier masks and selections.
pub fn forward_image<T: Scalar>(
    item: &ImageEmbeddings<T>,
    params: &ModelParams<T>,
    texts: &ScaleTexts<T>,
    cfg: &ObjectiveConfig,
    random_stream: (u64, u64),
    frozen: Option<&ImageDecisions>,
) -> Result<ImageForward<T>> {
    let label = item.class().ok_or_else(|| {
        Error::Contract(format!("item `{}` is unlabeled; training needs ID data", item.id))
    })?;
    let state = build_hierarchy(item, params, !cfg.ablations.disable_cross_scale_fusion);
    let pred = predict_with_texts(&state, texts, &cfg.alignment, frozen.map(|f| &f.masks));

    let mut loss = LossBreakdown::zero();
    loss.per_scale_ce = [
        cross_entropy(&pred.p0, label),
        cross_entropy(&pred.p1, label),
        cross_entropy(&pred.p2, label),
    ];
    loss.l_id = loss.per_scale_ce[0] + loss.per_scale_ce[1] + loss.per_scale_ce[2];

    let (pseudo, probs) = if cfg.ood_enabled() {
        let gains = entropy_gain(&pred);
        let indices = match frozen {
            Some(f) => f.selected.clone(),
            None if cfg.ablations.disable_entropy_gain_selection => {
                let mut r = rng::stream(random_stream.0, random_stream.1);
                select_random(gains.len(), cfg.k, &mut r)?
            }
            None => select_top_k(&gains, cfg.k)?,
        };
        let pseudo = build_pseudo_ood(
            &state,
            &gains,
            indices,
            !cfg.ablations.disable_lower_scale_propagation,
        );
        let probs = pseudo_probs(&pseudo, texts, T::lit(cfg.alignment.tau));
        loss.per_scale_neg_entropy = neg_entropies(&probs);
        let [a, b, c] = loss.per_scale_neg_entropy;
        loss.l_ood = a + b + c;
        (Some(pseudo), probs)
    } else {
        (None, Vec::new())
    };
    loss.finish(T::lit(cfg.lambda_ood));
    Ok(ImageForward {
        state,
        pred,
        pseudo,
        pseudo_probs: probs,
        loss,
    })
}

/// Backpropagates `dL/dp` through `p = softmax(cos(u, t_c) / tau)`.
fn align_backward<T: Scalar>(
    u: &[T],
    text: &Mat<T>,
    p: &[T],
    grad_p: &[T],
    tau: T,
    grad_u: &mut [T],
    grad_text: &mut Mat<T>,
) {
    let inner = dot(p, grad_p);
    for c in 0..p.len() {
        let g_logit = p[c] * (grad_p[c] - inner);
        if g_logit != T::zero() {
            cosine_backward(u, text.row(c), g_logit / tau, grad_u, grad_text.row_mut(c));
        }
    }
}

fn ce_grad<T: Scalar>(p: &[T], label: usize, scale: T) -> Option<Vec<T>> {
    if p[label] > T::lit(PROB_FLOOR) {
        let mut g = vec![T::zero(); p.len()];
        g[label] = -scale / p[label];
        Some(g)
    } else {
        None
    }
}

/// Accumulates `scale · dℓ/dθ` for one image into `grads`.
pub fn backward_image<T: Scalar>(
    item: &ImageEmbeddings<T>,
    params: &ModelParams<T>,
    texts: &ScaleTexts<T>,
    cfg: &ObjectiveConfig,
    fwd: &ImageForward<T>,
    scale: T,
    grads: &mut Gradients<T>,
) {
    let label = item.class().expect("forward pass checked the label");
    let tau = T::lit(cfg.alignment.tau);
    let d = params.dim();
    let classes = params.num_classes();
    let state = &fwd.state;
    let pred = &fwd.pred;

    let mut g_u0 = vec![T::zero(); d];
    let mut g_u1 = vec![vec![T::zero(); d]; state.u1_hat.len()];
    let mut g_u2 = vec![vec![T::zero(); d]; state.u2_hat.len()];
    let mut g_t = [Mat::zeros(classes, d), Mat::zeros(classes, d), Mat::zeros(classes, d)];

    // ID cross-entropy terms.
    if let Some(g) = ce_grad(&pred.p0, label, scale) {
        align_backward(&state.u0, &texts.global, &pred.p0, &g, tau, &mut g_u0, &mut g_t[0]);
    }
    let aggregates = [
        (&pred.p1, &pred.p_mid, &pred.mask_mid, &state.u1_hat, &mut g_u1, &texts.mid, 1),
        (&pred.p2, &pred.p_high, &pred.mask_high, &state.u2_hat, &mut g_u2, &texts.high, 2),
    ];
    for (agg, per_patch, mask, embeds, g_embeds, text, s) in aggregates {
        let Some(mut g) = ce_grad(agg, label, scale) else {
            continue;
        };
        let kept = mask.iter().filter(|&&k| k).count();
        let denom = if cfg.alignment.renormalize_aggregates {
            kept.max(1)
        } else {
            per_patch.len()
        };
        g[label] = g[label] / T::from_usize_lossy(denom);
        for i in (0..per_patch.len()).filter(|&i| mask[i]) {
            align_backward(&embeds[i], text, &per_patch[i], &g, tau, &mut g_embeds[i], &mut g_t[s]);
        }
    }

    // Pseudo-OOD entropy terms.
    if let Some(pseudo) = &fwd.pseudo {
        let coef = scale * T::lit(cfg.lambda_ood) / T::from_usize_lossy(pseudo.indices.len());
        let scale_texts = [&texts.global, &texts.mid, &texts.high];
        for (k, &j) in pseudo.indices.iter().enumerate() {
            let qs = [&pseudo.q0[k], &pseudo.q1[k], &pseudo.q2[k]];
            let mut g_q = [vec![T::zero(); d], vec![T::zero(); d], vec![T::zero(); d]];
            for s in 0..3 {
                let p = &fwd.pseudo_probs[k][s];
                // d(-H)/dp = ln p + 1
                let g_p: Vec<T> = p
                    .iter()
                    .map(|&x| if x > T::zero() { coef * (x.ln() + T::one()) } else { T::zero() })
                    .collect();
                align_backward(qs[s], scale_texts[s], p, &g_p, tau, &mut g_q[s], &mut g_t[s]);
            }
            let [g_q0, mut g_q1, mut g_q2] = g_q;
            if cfg.ablations.disable_lower_scale_propagation {
                axpy(&mut g_q2, T::one(), &g_q1);
                axpy(&mut g_q2, T::one(), &g_q0);
            } else {
                let w0 = cosine(qs[1], &state.u0);
                augment_backward(qs[1], &state.u0, w0, &g_q0, &mut g_q1, &mut g_u0);
                let inv = T::one() / T::from_usize_lossy(state.u1_hat.len());
                axpy(&mut g_q2, T::one(), &g_q1);
                for (i, u) in state.u1_hat.iter().enumerate() {
                    let w = cosine(qs[2], u);
                    axpy(&mut g_u1[i], inv * w, &g_q1);
                    cosine_backward(qs[2], u, inv * dot(&g_q1, u), &mut g_q2, &mut g_u1[i]);
                }
            }
            axpy(&mut g_u2[j], T::one(), &g_q2);
        }
    }

    // Fusion, high scale first since it depends on the fused mid embeddings.
    let (g_raw1, g_raw2) = if state.fused {
        let n = state.n;
        let mut g_raw2 = vec![vec![T::zero(); d]; g_u2.len()];
        for (j, g) in g_u2.iter().enumerate() {
            let parent = crate::hierarchy::parent_of(j, n);
            augment_backward(
                &state.u2_raw[j],
                &state.u1_hat[parent],
                state.high_weights[j],
                g,
                &mut g_raw2[j],
                &mut g_u1[parent],
            );
        }
        let mut g_raw1 = vec![vec![T::zero(); d]; g_u1.len()];
        for (i, g) in g_u1.iter().enumerate() {
            augment_backward(
                &state.u1_raw[i],
                &state.u0,
                state.mid_weights[i],
                g,
                &mut g_raw1[i],
                &mut g_u0,
            );
        }
        (g_raw1, g_raw2)
    } else {
        (g_u1, g_u2)
    };

    // Adapter.
    adapter_backward(&item.global, &params.adapter, &g_u0, &mut grads.adapter);
    for (v, g) in item.mid.iter().zip(&g_raw1) {
        adapter_backward(v, &params.adapter, g, &mut grads.adapter);
    }
    for (v, g) in item.high.iter().zip(&g_raw2) {
        adapter_backward(v, &params.adapter, g, &mut grads.adapter);
    }

    // Text biases: t⁰ = t + b⁰, t² = t + b², t¹ = t + (b⁰ + b²)/2.
    let half = T::lit(0.5);
    grads.bias_global.add_assign(&g_t[0]);
    grads.bias_high.add_assign(&g_t[2]);
    for (gb, &g) in grads.bias_global.as_mut_slice().iter_mut().zip(g_t[1].as_slice()) {
        *gb = *gb + half * g;
    }
    for (gb, &g) in grads.bias_high.as_mut_slice().iter_mut().zip(g_t[1].as_slice()) {
        *gb = *gb + half * g;
    }
}

/// Result of a batch evaluation.
#[derive(Debug, Clone)]
pub struct BatchOutput<T> {
    pub loss: LossBreakdown<T>,
    pub grads: Option<Gradients<T>>,
    pub decisions: Vec<ImageDecisions>,
}

/// How the discrete choices of a batch are made.
#[derive(Debug, Clone, Copy)]
pub enum Decisions<'a> {
    /// Recompute masks and selections; `seed` feeds the random-selection ablation.
    Fresh { seed: u64 },
    Frozen(&'a [ImageDecisions]),
}

fn check_batch<T: Scalar>(
    batch: &[&ImageEmbeddings<T>],
    params: &ModelParams<T>,
    text: &TextBank<T>,
    cfg: &ObjectiveConfig,
) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let d = params.dim();
    if text.dim() != d || text.num_classes() != params.num_classes() {
        return Err(Error::Contract("text bank does not match parameter shapes".into()));
    }
    for item in batch {
        if item.class().is_none() {
            return Err(Error::Contract(format!(
                "item `{}` is unlabeled; training batches hold ID data only",
                item.id
            )));
        }
        if item.global.len() != d {
            return Err(Error::Contract(format!("item `{}` has wrong dimension", item.id)));
        }
        cfg.validate(item.partition())?;
    }
    Ok(())
}

type ItemOutput<T> = (LossBreakdown<T>, Option<Gradients<T>>, ImageDecisions);

/// Mean loss over `batch` and, when `with_grads`, its exact gradient.
///
/// Per-image work runs in parallel; reductions run in item order so the result
/// is deterministic.
pub fn evaluate_batch<T: Scalar>(
    batch: &[&ImageEmbeddings<T>],
    params: &ModelParams<T>,
    text: &TextBank<T>,
    cfg: &ObjectiveConfig,
    decisions: Decisions<'_>,
    with_grads: bool,
) -> Result<BatchOutput<T>> {
    check_batch(batch, params, text, cfg)?;
    if let Decisions::Frozen(f) = decisions {
        if f.len() != batch.len() {
            return Err(Error::Contract("frozen decisions do not match batch length".into()));
        }
    }
    let texts = params.scale_texts(text);
    let count = T::from_usize_lossy(batch.len());
    let scale = T::one() / count;

    let per_item: Vec<Result<ItemOutput<T>>> = batch
        .par_iter()
        .enumerate()
        .map(|(pos, item)| {
            let (seed, frozen) = match decisions {
                Decisions::Fresh { seed } => (seed, None),
                Decisions::Frozen(f) => (0, Some(&f[pos])),
            };
            let fwd = forward_image(item, params, &texts, cfg, (seed, pos as u64), frozen)?;
            let grads = with_grads.then(|| {
                let mut g = Gradients::zeros(params.dim(), params.num_classes());
                backward_image(item, params, &texts, cfg, &fwd, scale, &mut g);
                g
            });
            Ok((fwd.loss, grads, fwd.decisions()))
        })
        .collect();

    let mut loss = LossBreakdown::zero();
    let mut grads = with_grads.then(|| Gradients::zeros(params.dim(), params.num_classes()));
    let mut all_decisions = Vec::with_capacity(batch.len());
    for r in per_item {
        let (l, g, dec) = r?;
        loss.add(&l);
        if let (Some(acc), Some(g)) = (grads.as_mut(), g) {
            acc.add_assign_grads(&g);
        }
        all_decisions.push(dec);
    }
    loss.divide(count);
    loss.finish(T::lit(cfg.lambda_ood));
    Ok(BatchOutput {
        loss,
        grads,
        decisions: all_decisions,
    })
}

/// Mean loss and exact gradients with fresh masks and selections.
pub fn batch_loss_and_grads<T: Scalar>(
    batch: &[&ImageEmbeddings<T>],
    params: &ModelParams<T>,
    text: &TextBank<T>,
    cfg: &ObjectiveConfig,
    selection_seed: u64,
) -> Result<(LossBreakdown<T>, Gradients<T>)> {
    let out = evaluate_batch(batch, params, text, cfg, Decisions::Fresh { seed: selection_seed }, true)?;
    Ok((out.loss, out.grads.expect("gradients requested")))
}

impl<T: Scalar> ModelParams<T> {
    fn add_assign_grads(&mut self, other: &Self) {
        self.adapter.add_assign(&other.adapter);
        self.bias_global.add_assign(&other.bias_global);
        self.bias_high.add_assign(&other.bias_high);
    }

    /// Largest absolute entry over all blocks.
    pub fn max_abs(&self) -> T {
        self.adapter
            .max_abs()
            .max(self.bias_global.max_abs())
            .max(self.bias_high.max_abs())
    }
}
