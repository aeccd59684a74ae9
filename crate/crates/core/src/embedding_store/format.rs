use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::warn;
use serde_json::Value;

use super::{Bundle, BundleManifest, ImageEmbeddings, TextBank};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::Scalar;

const MANIFEST_KEYS: &[&str] = &["version", "d", "n", "num_classes", "class_names", "items"];
const ITEM_KEYS: &[&str] = &["id", "label", "offset"];

fn warn_unknown_keys(value: &Value, known: &[&str], context: &str) {
    if let Value::Object(map) = value {
        for key in map.keys() {
            if !known.contains(&key.as_str()) {
                warn!("ignoring unknown key `{key}` in {context}");
            }
        }
    }
}

/// Reads and validates `manifest.json` without touching the binary files.
pub fn read_manifest(dir: &Path) -> Result<BundleManifest> {
    let path = dir.join("manifest.json");
    let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: Value = serde_json::from_str(&raw)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    warn_unknown_keys(&value, MANIFEST_KEYS, "manifest");
    if let Some(Value::Array(items)) = value.get("items") {
        for item in items {
            warn_unknown_keys(item, ITEM_KEYS, "manifest item");
        }
    }
    let manifest: BundleManifest = serde_json::from_value(value)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    validate_manifest(&manifest)?;
    Ok(manifest)
}

fn validate_manifest(m: &BundleManifest) -> Result<()> {
    if m.d < 1 || m.n < 1 || m.num_classes < 2 {
        return Err(Error::Format(format!(
            "need d >= 1, n >= 1, num_classes >= 2; got d={}, n={}, num_classes={}",
            m.d, m.n, m.num_classes
        )));
    }
    if m.class_names.len() != m.num_classes {
        return Err(Error::Format(format!(
            "{} class names for {} classes",
            m.class_names.len(),
            m.num_classes
        )));
    }
    let mut seen = BTreeSet::new();
    for item in &m.items {
        if item.label < -1 || item.label >= m.num_classes as i64 {
            return Err(Error::Format(format!(
                "item `{}` has label {} outside {{-1}} ∪ [0, {})",
                item.id, item.label, m.num_classes
            )));
        }
        if item.offset % 4 != 0 {
            return Err(Error::Format(format!(
                "item `{}` offset {} is not a multiple of 4",
                item.id, item.offset
            )));
        }
        if !seen.insert(item.id.as_str()) {
            return Err(Error::Format(format!("duplicate item id `{}`", item.id)));
        }
    }
    Ok(())
}

fn decode_f32s<T: Scalar>(bytes: &[u8]) -> Vec<T> {
    bytes
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect()
}

fn check_len(what: &str, actual: u64, expected: u64) -> Result<()> {
    if actual < expected {
        Err(Error::Truncated(format!(
            "{what} has {actual} bytes, expected {expected}"
        )))
    } else if actual > expected {
        Err(Error::Format(format!(
            "{what} has {actual} bytes, expected {expected} (trailing data)"
        )))
    } else {
        Ok(())
    }
}

/// Loads and validates a bundle directory.
pub fn load_bundle<T: Scalar>(dir: &Path) -> Result<Bundle<T>> {
    let manifest = read_manifest(dir)?;
    let (d, n, classes) = (manifest.d, manifest.n, manifest.num_classes);

    let text_path = dir.join("text.bin");
    let text_bytes = fs::read(&text_path).map_err(|e| Error::io(&text_path, e))?;
    check_len("text.bin", text_bytes.len() as u64, (classes * d * 4) as u64)?;
    let text: Vec<T> = decode_f32s(&text_bytes);
    if !text.iter().all(|x| x.is_finite()) {
        return Err(Error::Data("text.bin contains non-finite values".into()));
    }
    let text = TextBank::new(Mat::from_vec(classes, d, text));

    let emb_path = dir.join("embeddings.bin");
    let emb = fs::read(&emb_path).map_err(|e| Error::io(&emb_path, e))?;
    let rec = manifest.record_bytes();
    check_len(
        "embeddings.bin",
        emb.len() as u64,
        rec * manifest.items.len() as u64,
    )?;

    let mid_count = n * n;
    let mut items = Vec::with_capacity(manifest.items.len());
    for entry in &manifest.items {
        let end = entry.offset.saturating_add(rec);
        if end > emb.len() as u64 {
            return Err(Error::Truncated(format!(
                "record for item `{}` at offset {} runs past end of embeddings.bin",
                entry.id, entry.offset
            )));
        }
        let values: Vec<T> = decode_f32s(&emb[entry.offset as usize..end as usize]);
        if !values.iter().all(|x| x.is_finite()) {
            return Err(Error::Data(format!(
                "item `{}` contains NaN or infinite values",
                entry.id
            )));
        }
        let mut vecs = values.chunks_exact(d).map(<[T]>::to_vec);
        let global = vecs.next().expect("record holds at least one vector");
        let mid: Vec<Vec<T>> = vecs.by_ref().take(mid_count).collect();
        let high: Vec<Vec<T>> = vecs.collect();
        debug_assert_eq!(high.len(), 4 * mid_count);
        items.push(ImageEmbeddings {
            id: entry.id.clone(),
            label: entry.label,
            global,
            mid,
            high,
        });
    }

    Ok(Bundle {
        d,
        n,
        class_names: manifest.class_names,
        items,
        text,
    })
}

fn check_item_shape<T: Scalar>(item: &ImageEmbeddings<T>, d: usize, n: usize) -> Result<()> {
    let ok = item.global.len() == d
        && item.mid.len() == n * n
        && item.high.len() == 4 * n * n
        && item.mid.iter().chain(&item.high).all(|v| v.len() == d);
    if ok {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "item `{}` does not match d={d}, n={n}",
            item.id
        )))
    }
}

fn write_f32s<T: Scalar>(w: &mut impl Write, values: &[T]) -> std::io::Result<()> {
    for &v in values {
        w.write_all(&(v.to_f32().unwrap_or(f32::NAN)).to_le_bytes())?;
    }
    Ok(())
}

/// Writes `bundle` into `dir` (created if missing).
pub fn write_bundle<T: Scalar>(bundle: &Bundle<T>, dir: &Path) -> Result<()> {
    for item in &bundle.items {
        check_item_shape(item, bundle.d, bundle.n)?;
    }
    if bundle.text.num_classes() != bundle.class_names.len() || bundle.text.dim() != bundle.d {
        return Err(Error::Contract(
            "text bank shape does not match class names and d".into(),
        ));
    }
    let manifest = bundle.manifest();
    validate_manifest(&manifest)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;

    let path = dir.join("embeddings.bin");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    for item in &bundle.items {
        for v in item.vectors() {
            write_f32s(&mut w, v).map_err(|e| Error::io(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("text.bin");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    write_f32s(&mut w, bundle.text.classes.as_slice()).map_err(|e| Error::io(&path, e))?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}
