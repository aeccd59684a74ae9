//! Straightforward reference implementations written directly from the
//! formulas, with no shared code from the library beyond its data types.

use scaleood::alignment::AlignmentConfig;
use scaleood::{ImageEmbeddings, ModelParams, TextBank};

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
}

/// `x + w · y`
fn plus_scaled(x: &[f64], w: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a + w * b).collect()
}

pub fn adapter(v: &[f64], params: &ModelParams<f64>) -> Vec<f64> {
    let d = v.len();
    (0..d)
        .map(|k| {
            let mut s = 0.0;
            for m in 0..d {
                s += v[m] * params.adapter.get(m, k);
            }
            s.max(0.0) + v[k]
        })
        .collect()
}

/// Cross-scale fusion on adapted vectors, indexing the grids by (row, column).
pub fn fuse(u0: &[f64], u1: &[Vec<f64>], u2: &[Vec<f64>], n: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut u1_hat = vec![Vec::new(); n * n];
    for r in 0..n {
        for c in 0..n {
            let u = &u1[r * n + c];
            u1_hat[r * n + c] = plus_scaled(u, cos(u, u0), u0);
        }
    }
    let side = 2 * n;
    let mut u2_hat = vec![Vec::new(); side * side];
    for r in 0..side {
        for c in 0..side {
            let parent = &u1_hat[(r / 2) * n + (c / 2)];
            let u = &u2[r * side + c];
            u2_hat[r * side + c] = plus_scaled(u, cos(u, parent), parent);
        }
    }
    (u1_hat, u2_hat)
}

pub fn softmax_probs(u: &[f64], text: &[Vec<f64>], tau: f64) -> Vec<f64> {
    let z: Vec<f64> = text.iter().map(|t| cos(u, t) / tau).collect();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn entropy(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &x in p {
        if x > 0.0 {
            h -= x * x.ln();
        }
    }
    h.clamp(0.0, (p.len() as f64).ln())
}

/// Keep-mask `H ≤ mean H` and the masked sum divided by the patch count
/// (or by the kept count when renormalizing).
pub fn entropy_filter(probs: &[Vec<f64>], renormalize: bool) -> (Vec<bool>, Vec<f64>) {
    let hs: Vec<f64> = probs.iter().map(|p| entropy(p)).collect();
    let mean = hs.iter().sum::<f64>() / hs.len() as f64;
    let mask: Vec<bool> = hs.iter().map(|&h| h <= mean).collect();
    let c = probs[0].len();
    let mut acc = vec![0.0; c];
    let mut kept = 0;
    for (p, &keep) in probs.iter().zip(&mask) {
        if keep {
            kept += 1;
            for i in 0..c {
                acc[i] += p[i];
            }
        }
    }
    let denom = if renormalize { kept } else { probs.len() } as f64;
    (mask, acc.iter().map(|x| x / denom).collect())
}

pub struct RefPrediction {
    pub u0: Vec<f64>,
    pub u1_hat: Vec<Vec<f64>>,
    pub u2_hat: Vec<Vec<f64>>,
    pub p0: Vec<f64>,
    pub p_mid: Vec<Vec<f64>>,
    pub p_high: Vec<Vec<f64>>,
    pub h_mid: Vec<f64>,
    pub h_high: Vec<f64>,
    pub h_bar_mid: f64,
    pub h_bar_high: f64,
    pub mask_mid: Vec<bool>,
    pub mask_high: Vec<bool>,
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
}

/// The full per-image pipeline from raw embeddings and parameters.
pub fn prediction_set(
    item: &ImageEmbeddings<f64>,
    params: &ModelParams<f64>,
    text: &TextBank<f64>,
    cfg: &AlignmentConfig,
) -> RefPrediction {
    let n = (item.mid.len() as f64).sqrt().round() as usize;
    let u0 = adapter(&item.global, params);
    let u1: Vec<Vec<f64>> = item.mid.iter().map(|v| adapter(v, params)).collect();
    let u2: Vec<Vec<f64>> = item.high.iter().map(|v| adapter(v, params)).collect();
    let (u1_hat, u2_hat) = fuse(&u0, &u1, &u2, n);

    let c = text.num_classes();
    let d = text.dim();
    let mut t0 = Vec::new();
    let mut t1 = Vec::new();
    let mut t2 = Vec::new();
    for k in 0..c {
        let t = text.class(k);
        let b0: Vec<f64> = (0..d).map(|i| params.bias_global.get(k, i)).collect();
        let b2: Vec<f64> = (0..d).map(|i| params.bias_high.get(k, i)).collect();
        t0.push((0..d).map(|i| t[i] + b0[i]).collect::<Vec<f64>>());
        t1.push((0..d).map(|i| t[i] + (b0[i] + b2[i]) / 2.0).collect::<Vec<f64>>());
        t2.push((0..d).map(|i| t[i] + b2[i]).collect::<Vec<f64>>());
    }

    let p0 = softmax_probs(&u0, &t0, cfg.tau);
    let p_mid: Vec<Vec<f64>> = u1_hat.iter().map(|u| softmax_probs(u, &t1, cfg.tau)).collect();
    let p_high: Vec<Vec<f64>> = u2_hat.iter().map(|u| softmax_probs(u, &t2, cfg.tau)).collect();
    let h_mid: Vec<f64> = p_mid.iter().map(|p| entropy(p)).collect();
    let h_high: Vec<f64> = p_high.iter().map(|p| entropy(p)).collect();
    let (mask_mid, p1) = entropy_filter(&p_mid, cfg.renormalize_aggregates);
    let (mask_high, p2) = entropy_filter(&p_high, cfg.renormalize_aggregates);
    RefPrediction {
        h_bar_mid: h_mid.iter().sum::<f64>() / h_mid.len() as f64,
        h_bar_high: h_high.iter().sum::<f64>() / h_high.len() as f64,
        u0,
        u1_hat,
        u2_hat,
        p0,
        p_mid,
        p_high,
        h_mid,
        h_high,
        mask_mid,
        mask_high,
        p1,
        p2,
    }
}

/// `H(high patch) − H(its mid parent)` with the parent found from grid coordinates.
pub fn entropy_gains(h_mid: &[f64], h_high: &[f64], n: usize) -> Vec<f64> {
    let side = 2 * n;
    (0..h_high.len())
        .map(|j| {
            let (r, c) = (j / side, j % side);
            h_high[j] - h_mid[(r / 2) * n + c / 2]
        })
        .collect()
}

/// Repeated linear scans for the largest unused gain; a strict comparison
/// keeps the lowest index among ties.
pub fn top_k(gains: &[f64], k: usize) -> Vec<usize> {
    let mut used = vec![false; gains.len()];
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for j in 0..gains.len() {
            if used[j] {
                continue;
            }
            match best {
                None => best = Some(j),
                Some(b) if gains[j] > gains[b] => best = Some(j),
                _ => {}
            }
        }
        let b = best.unwrap();
        used[b] = true;
        out.push(b);
    }
    out
}

pub fn propagate(q2: &[f64], u1_hat: &[Vec<f64>], u0: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = q2.len();
    let mut sum = vec![0.0; d];
    for u in u1_hat {
        let w = cos(q2, u);
        for i in 0..d {
            sum[i] += w * u[i];
        }
    }
    let m = u1_hat.len() as f64;
    let q1: Vec<f64> = (0..d).map(|i| q2[i] + sum[i] / m).collect();
    let w = cos(&q1, u0);
    let q0 = (0..d).map(|i| q1[i] + w * u0[i]).collect();
    (q1, q0)
}

/// Probability that a random ID score beats a random OOD score, ties counting half.
pub fn auroc_pairwise(id: &[f64], ood: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &a in id {
        for &b in ood {
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    wins / (id.len() * ood.len()) as f64
}

/// Scans every ID score as a candidate threshold and keeps the largest one
/// that rejects fewer than `⌈0.05·N⌉` ID items.
pub fn fpr95_scan(id: &[f64], ood: &[f64]) -> (f64, f64) {
    let allowed = (id.len() + 19) / 20;
    let mut best = f64::NEG_INFINITY;
    for &theta in id {
        let rejected = id.iter().filter(|&&s| s < theta).count();
        if rejected < allowed && theta > best {
            best = theta;
        }
    }
    let accepted = ood.iter().filter(|&&s| s >= best).count();
    (accepted as f64 / ood.len() as f64, best)
}
