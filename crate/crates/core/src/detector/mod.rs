//! Inference and evaluation: averaged per-scale prediction, MSP score,
//! accuracy, FPR95 and AUROC.

mod metrics;

pub use metrics::{auroc, fpr95};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::predict_with_texts;
use crate::embedding_store::{ImageEmbeddings, TextBank};
use crate::error::{Error, Result};
use crate::hierarchy::{build_hierarchy, ModelParams, ScaleTexts};
use crate::objective::ObjectiveConfig;
use crate::scalar::Scalar;

/// One test item's prediction. Serialises to the score-dump record
/// `{id, label, predicted, msp}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub id: String,
    pub label: i64,
    pub predicted: usize,
    pub msp: f64,
    #[serde(skip)]
    pub p_id: Vec<f64>,
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn score_with_texts<T: Scalar>(
    item: &ImageEmbeddings<T>,
    params: &ModelParams<T>,
    texts: &ScaleTexts<T>,
    cfg: &ObjectiveConfig,
) -> ScoredItem {
    let state = build_hierarchy(item, params, !cfg.ablations.disable_cross_scale_fusion);
    let pred = predict_with_texts(&state, texts, &cfg.alignment, None);
    let p_id: Vec<f64> = pred.p_id().iter().map(|x| x.to_f64_lossy()).collect();
    let predicted = argmax(&p_id);
    ScoredItem {
        id: item.id.clone(),
        label: item.label,
        predicted,
        msp: p_id[predicted],
        p_id,
    }
}

/// Full forward pass (adapter, fusion, per-scale predictions) and MSP of the averaged prediction.
pub fn score_item<T: Scalar>(
    item: &ImageEmbeddings<T>,
    params: &ModelParams<T>,
    text: &TextBank<T>,
    cfg: &ObjectiveConfig,
) -> ScoredItem {
    score_with_texts(item, params, &params.scale_texts(text), cfg)
}

/// Scores every item in parallel; output order matches input order.
pub fn score_items<T: Scalar>(
    items: &[ImageEmbeddings<T>],
    params: &ModelParams<T>,
    text: &TextBank<T>,
    cfg: &ObjectiveConfig,
) -> Vec<ScoredItem> {
    let texts = params.scale_texts(text);
    items
        .par_iter()
        .map(|it| score_with_texts(it, params, &texts, cfg))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub id_items: usize,
    pub ood_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc: f64,
    /// `None` when the test set holds no OOD items.
    pub fpr95: Option<f64>,
    pub auroc: Option<f64>,
    pub counts: Counts,
    pub threshold_used: Option<f64>,
    pub ood_metrics_available: bool,
    #[serde(default)]
    pub config_hash: Option<String>,
}

/// Metrics from already-scored items (also used to recompute a report from a score dump).
pub fn report_from_scores(scores: &[ScoredItem]) -> Result<EvalReport> {
    let (id, ood): (Vec<&ScoredItem>, Vec<&ScoredItem>) = scores.iter().partition(|s| s.label >= 0);
    if id.is_empty() {
        return Err(Error::Data("evaluation set contains no ID items".into()));
    }
    let correct = id.iter().filter(|s| s.predicted as i64 == s.label).count();
    let acc = correct as f64 / id.len() as f64;
    let counts = Counts {
        id_items: id.len(),
        ood_items: ood.len(),
    };
    if ood.is_empty() {
        return Ok(EvalReport {
            acc,
            fpr95: None,
            auroc: None,
            counts,
            threshold_used: None,
            ood_metrics_available: false,
            config_hash: None,
        });
    }
    let id_msp: Vec<f64> = id.iter().map(|s| s.msp).collect();
    let ood_msp: Vec<f64> = ood.iter().map(|s| s.msp).collect();
    let (fpr, threshold) = fpr95(&id_msp, &ood_msp)?;
    Ok(EvalReport {
        acc,
        fpr95: Some(fpr),
        auroc: Some(auroc(&id_msp, &ood_msp)?),
        counts,
        threshold_used: Some(threshold),
        ood_metrics_available: true,
        config_hash: None,
    })
}

/// Scores a test set (ID items labeled ≥ 0, OOD items labeled −1) and computes the report.
pub fn evaluate<T: Scalar>(
    items: &[ImageEmbeddings<T>],
    params: &ModelParams<T>,
    text: &TextBank<T>,
    cfg: &ObjectiveConfig,
) -> Result<(EvalReport, Vec<ScoredItem>)> {
    cfg.alignment.validate()?;
    let scores = score_items(items, params, text, cfg);
    Ok((report_from_scores(&scores)?, scores))
}
