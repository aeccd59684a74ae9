//! Embedding bundles: per-image raw embeddings at three scales, labels, and
//! frozen class text embeddings.
//!
//! On-disk layout of a bundle directory:
//!
//! * `manifest.json`: `{version, d, n, num_classes, class_names, items: [{id, label, offset}]}`
//! * `embeddings.bin`: one record per item, `(1 + n² + 4n²) · d` little-endian `f32`
//!   values in the order global, mid patches row-major, high patches row-major.
//! * `text.bin`: `num_classes · d` little-endian `f32`, one class vector after
//!   another in `class_names` order.

mod format;
pub mod rng;
mod synthetic;

pub use format::{load_bundle, read_manifest, write_bundle};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use serde::{Deserialize, Serialize};

use crate::linalg::{all_finite, Mat};
use crate::scalar::Scalar;

pub const BUNDLE_VERSION: u32 = 1;

/// Label value for unlabeled or out-of-distribution items.
pub const OOD_LABEL: i64 = -1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    pub label: i64,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub version: u32,
    pub d: usize,
    pub n: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub items: Vec<ManifestItem>,
}

impl BundleManifest {
    /// Number of vectors stored per item: global + n² mid + 4n² high.
    pub fn vectors_per_item(&self) -> usize {
        vectors_per_item(self.n)
    }

    pub fn record_bytes(&self) -> u64 {
        (self.vectors_per_item() * self.d * 4) as u64
    }
}

pub fn vectors_per_item(n: usize) -> usize {
    1 + n * n + 4 * n * n
}

/// Raw encoder outputs for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEmbeddings<T> {
    pub id: String,
    pub label: i64,
    pub global: Vec<T>,
    /// n×n vectors, row-major by (r, c).
    pub mid: Vec<Vec<T>>,
    /// 2n×2n vectors, row-major by (R, C).
    pub high: Vec<Vec<T>>,
}

impl<T: Scalar> ImageEmbeddings<T> {
    /// Class index, or `None` for OOD / unlabeled items.
    pub fn class(&self) -> Option<usize> {
        usize::try_from(self.label).ok()
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.global)
            && self.mid.iter().all(|v| all_finite(v))
            && self.high.iter().all(|v| all_finite(v))
    }

    pub fn vectors(&self) -> impl Iterator<Item = &Vec<T>> {
        std::iter::once(&self.global)
            .chain(self.mid.iter())
            .chain(self.high.iter())
    }

    /// Partition factor inferred from the number of mid patches.
    pub fn partition(&self) -> usize {
        (self.mid.len() as f64).sqrt().round() as usize
    }

    pub fn cast<U: Scalar>(&self) -> ImageEmbeddings<U> {
        let conv = |v: &Vec<T>| v.iter().map(|&x| U::lit(x.to_f64_lossy())).collect();
        ImageEmbeddings {
            id: self.id.clone(),
            label: self.label,
            global: conv(&self.global),
            mid: self.mid.iter().map(conv).collect(),
            high: self.high.iter().map(conv).collect(),
        }
    }

    /// Multiplies every visual vector by `alpha`.
    pub fn scaled(&self, alpha: T) -> Self {
        let sc = |v: &Vec<T>| v.iter().map(|&x| x * alpha).collect();
        Self {
            id: self.id.clone(),
            label: self.label,
            global: sc(&self.global),
            mid: self.mid.iter().map(sc).collect(),
            high: self.high.iter().map(sc).collect(),
        }
    }
}

/// Frozen class text embeddings, one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct TextBank<T> {
    pub classes: Mat<T>,
}

impl<T: Scalar> TextBank<T> {
    pub fn new(classes: Mat<T>) -> Self {
        Self { classes }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.rows()
    }

    pub fn dim(&self) -> usize {
        self.classes.cols()
    }

    pub fn class(&self, c: usize) -> &[T] {
        self.classes.row(c)
    }
}

/// A full bundle held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle<T> {
    pub d: usize,
    pub n: usize,
    pub class_names: Vec<String>,
    pub items: Vec<ImageEmbeddings<T>>,
    pub text: TextBank<T>,
}

impl<T: Scalar> Bundle<T> {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Manifest describing this bundle with contiguous record offsets.
    pub fn manifest(&self) -> BundleManifest {
        let rec = (vectors_per_item(self.n) * self.d * 4) as u64;
        BundleManifest {
            version: BUNDLE_VERSION,
            d: self.d,
            n: self.n,
            num_classes: self.class_names.len(),
            class_names: self.class_names.clone(),
            items: self
                .items
                .iter()
                .enumerate()
                .map(|(i, it)| ManifestItem {
                    id: it.id.clone(),
                    label: it.label,
                    offset: i as u64 * rec,
                })
                .collect(),
        }
    }

    pub fn labeled(&self) -> impl Iterator<Item = &ImageEmbeddings<T>> {
        self.items.iter().filter(|it| it.label >= 0)
    }

    /// Copy of this bundle keeping only items accepted by `keep`.
    pub fn filtered(&self, keep: impl Fn(&ImageEmbeddings<T>) -> bool) -> Self {
        Self {
            d: self.d,
            n: self.n,
            class_names: self.class_names.clone(),
            items: self.items.iter().filter(|it| keep(it)).cloned().collect(),
            text: self.text.clone(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Bundle<U> {
        Bundle {
            d: self.d,
            n: self.n,
            class_names: self.class_names.clone(),
            items: self.items.iter().map(ImageEmbeddings::cast).collect(),
            text: TextBank::new(self.text.classes.map(|x| U::lit(x.to_f64_lossy()))),
        }
    }
}
