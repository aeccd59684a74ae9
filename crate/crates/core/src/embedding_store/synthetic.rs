//! Seeded synthetic bundles with lesion/tissue patch structure and near-OOD
//! items, for tests and benchmarks that must run without an image encoder.
//!
//! Geometry: every vector shares a common component of norm ≈ `shared_scale`.
//! Each class adds a random direction of norm ≈ `sigma_between`; a shared
//! "tissue" direction plays the role of disease-irrelevant background. An image
//! places a compact blob of lesion patches on its high-scale grid; those
//! patches sit at the class anchor, the rest at the tissue anchor. Mid patches
//! are the mean of the four clean high patches they cover; the global vector
//! mixes the class anchor and the tissue anchor by `global_lesion_weight`.
//! Every stored vector gets isotropic noise of norm ≈ `sigma_within`. OOD items
//! use an anchor interpolated between two random ID class anchors.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rng::{gaussian_vec, stream, uniform};
use super::{Bundle, ImageEmbeddings, TextBank, OOD_LABEL};
use crate::error::{Error, Result};
use crate::linalg::{axpy, Mat};

fn default_shared_scale() -> f64 {
    1.0
}

fn default_global_lesion_weight() -> f64 {
    1.0
}

fn default_ood_mix() -> [f64; 2] {
    [0.35, 0.65]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub d: usize,
    pub n: usize,
    pub num_classes: usize,
    pub id_per_class: usize,
    pub ood_count: usize,
    pub sigma_between: f64,
    pub sigma_within: f64,
    /// Fraction of high-scale patches covered by the lesion blob.
    pub lesion_fraction: f64,
    #[serde(default = "default_shared_scale")]
    pub shared_scale: f64,
    /// Noise norm added to class anchors to form the text embeddings.
    #[serde(default)]
    pub text_noise: f64,
    /// Range of the interpolation weight between the two parent anchors of an OOD item.
    #[serde(default = "default_ood_mix")]
    pub ood_mix: [f64; 2],
    /// Weight of the lesion anchor in the global vector; the rest is tissue.
    #[serde(default = "default_global_lesion_weight")]
    pub global_lesion_weight: f64,
}

impl SyntheticSpec {
    /// The near-OOD benchmark used by the acceptance suite: d=32, C=4,
    /// 100 ID items per class (split 50/50 into train and test) and 200 OOD items.
    pub fn benchmark() -> Self {
        SyntheticSpec {
            d: 32,
            n: 2,
            num_classes: 4,
            id_per_class: 100,
            ood_count: 200,
            sigma_between: 1.0,
            sigma_within: 0.3,
            lesion_fraction: 0.25,
            shared_scale: 3.0,
            text_noise: 0.5,
            ood_mix: [0.35, 0.65],
            global_lesion_weight: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.d < 1 || self.n < 1 {
            return bad("d and n must be >= 1");
        }
        if self.num_classes < 2 {
            return bad("num_classes must be >= 2");
        }
        if !(self.sigma_between > 0.0) || !(self.sigma_within > 0.0) {
            return bad("sigma_between and sigma_within must be > 0");
        }
        if !(0.0..=1.0).contains(&self.lesion_fraction) {
            return bad("lesion_fraction must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.global_lesion_weight) {
            return bad("global_lesion_weight must lie in [0, 1]");
        }
        if !(self.shared_scale >= 0.0) || !(self.text_noise >= 0.0) {
            return bad("shared_scale and text_noise must be >= 0");
        }
        let [lo, hi] = self.ood_mix;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad("ood_mix must satisfy 0 <= lo <= hi <= 1");
        }
        Ok(())
    }
}

/// Generated bundle plus the anchors it was drawn around.
#[derive(Debug, Clone)]
pub struct SyntheticOutput {
    pub bundle: Bundle<f64>,
    pub class_anchors: Vec<Vec<f64>>,
    pub tissue_anchor: Vec<f64>,
}

/// Values are rounded through `f32` so an in-memory bundle equals its reloaded copy.
fn quantize(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x as f32 as f64).collect()
}

fn noisy(rng: &mut ChaCha8Rng, clean: &[f64], sigma: f64) -> Vec<f64> {
    let d = clean.len();
    let mut v = gaussian_vec(rng, d, sigma / (d as f64).sqrt());
    axpy(&mut v, 1.0, clean);
    quantize(v)
}

/// High patch indices covered by a blob of `m` patches around a random centre.
fn lesion_blob(rng: &mut ChaCha8Rng, side: usize, m: usize) -> Vec<bool> {
    let cx = uniform(rng) * side as f64;
    let cy = uniform(rng) * side as f64;
    let mut order: Vec<(f64, usize)> = (0..side * side)
        .map(|j| {
            let (r, c) = (j / side, j % side);
            let dy = r as f64 + 0.5 - cy;
            let dx = c as f64 + 0.5 - cx;
            (dx * dx + dy * dy, j)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut lesion = vec![false; side * side];
    for &(_, j) in order.iter().take(m) {
        lesion[j] = true;
    }
    lesion
}

fn image(
    rng: &mut ChaCha8Rng,
    spec: &SyntheticSpec,
    id: String,
    label: i64,
    anchor: &[f64],
    tissue: &[f64],
) -> ImageEmbeddings<f64> {
    let (d, n) = (spec.d, spec.n);
    let side = 2 * n;
    let m = (spec.lesion_fraction * (side * side) as f64).round() as usize;
    let lesion = lesion_blob(rng, side, m);
    let clean_high: Vec<&[f64]> = lesion
        .iter()
        .map(|&l| if l { anchor } else { tissue })
        .collect();

    let mut clean_mid = vec![vec![0.0; d]; n * n];
    for (j, v) in clean_high.iter().enumerate() {
        let (r, c) = (j / side, j % side);
        axpy(&mut clean_mid[(r / 2) * n + c / 2], 0.25, v);
    }

    let w = spec.global_lesion_weight;
    let mut clean_global = vec![0.0; d];
    axpy(&mut clean_global, w, anchor);
    axpy(&mut clean_global, 1.0 - w, tissue);
    let global = noisy(rng, &clean_global, spec.sigma_within);
    let mid = clean_mid
        .iter()
        .map(|v| noisy(rng, v, spec.sigma_within))
        .collect();
    let high = clean_high
        .iter()
        .map(|v| noisy(rng, v, spec.sigma_within))
        .collect();
    ImageEmbeddings {
        id,
        label,
        global,
        mid,
        high,
    }
}

/// Deterministic for a fixed `(spec, seed)`. ID items are interleaved by class
/// (`id-<class>-<i>`), followed by OOD items (`ood-<i>`).
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticOutput> {
    spec.validate()?;
    let d = spec.d;
    let unit = 1.0 / (d as f64).sqrt();
    let mut rng = stream(seed, 0);

    let common = gaussian_vec(&mut rng, d, spec.shared_scale * unit);
    let directions: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| gaussian_vec(&mut rng, d, spec.sigma_between * unit))
        .collect();
    let tissue_dir = gaussian_vec(&mut rng, d, spec.sigma_between * unit);
    let with_common = |dir: &[f64]| {
        let mut a = common.clone();
        axpy(&mut a, 1.0, dir);
        a
    };
    let class_anchors: Vec<Vec<f64>> = directions.iter().map(|v| with_common(v)).collect();
    let tissue_anchor = with_common(&tissue_dir);

    let text_rows: Vec<Vec<f64>> = class_anchors
        .iter()
        .map(|a| {
            let mut t = gaussian_vec(&mut rng, d, spec.text_noise * unit);
            axpy(&mut t, 1.0, a);
            quantize(t)
        })
        .collect();

    let mut items = Vec::with_capacity(spec.num_classes * spec.id_per_class + spec.ood_count);
    for i in 0..spec.id_per_class {
        for (c, anchor) in class_anchors.iter().enumerate() {
            items.push(image(
                &mut rng,
                spec,
                format!("id-{c}-{i}"),
                c as i64,
                anchor,
                &tissue_anchor,
            ));
        }
    }
    for i in 0..spec.ood_count {
        let c1 = rng.gen_range(0..spec.num_classes);
        let c2 = (c1 + 1 + rng.gen_range(0..spec.num_classes - 1)) % spec.num_classes;
        let [lo, hi] = spec.ood_mix;
        let lambda = lo + (hi - lo) * uniform(&mut rng);
        let mut dir = vec![0.0; d];
        axpy(&mut dir, lambda, &directions[c1]);
        axpy(&mut dir, 1.0 - lambda, &directions[c2]);
        let anchor = with_common(&dir);
        items.push(image(
            &mut rng,
            spec,
            format!("ood-{i}"),
            OOD_LABEL,
            &anchor,
            &tissue_anchor,
        ));
    }

    Ok(SyntheticOutput {
        bundle: Bundle {
            d,
            n: spec.n,
            class_names: (0..spec.num_classes).map(|c| format!("class-{c}")).collect(),
            items,
            text: TextBank::new(Mat::from_rows(&text_rows)),
        },
        class_anchors,
        tissue_anchor,
    })
}

impl Bundle<f64> {
    /// Splits labeled items into the first `train_per_class` of each class
    /// (training set) and everything else, OOD included (test set).
    pub fn split_per_class(&self, train_per_class: usize) -> (Self, Self) {
        let mut taken = vec![0usize; self.num_classes()];
        let mut in_train = Vec::with_capacity(self.items.len());
        for it in &self.items {
            let take = match it.class() {
                Some(c) if taken[c] < train_per_class => {
                    taken[c] += 1;
                    true
                }
                _ => false,
            };
            in_train.push(take);
        }
        let pick = |want: bool| Bundle {
            d: self.d,
            n: self.n,
            class_names: self.class_names.clone(),
            items: self
                .items
                .iter()
                .zip(&in_train)
                .filter(|(_, &t)| t == want)
                .map(|(it, _)| it.clone())
                .collect(),
            text: self.text.clone(),
        };
        (pick(true), pick(false))
    }
}
