//! Binary feature files (`VGFS`) and CSV import/export.
//!
//! Layout, all little-endian: magic `VGFS`, version `u32`, `n: u64`,
//! `d: u32`, `K: u32`, flags `u32` (bit 0 normalized, bit 1 labels present,
//! bit 2 auxiliary pair present), then `n * d` `f64` row-major, then `n`
//! `u32` labels if present, then `n * 2` `f64` auxiliary values if present,
//! then a CRC-32C of every preceding byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::LabeledFeatureSet;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const FEATURE_FILE_MAGIC: &[u8; 4] = b"VGFS";
pub const FEATURE_FILE_VERSION: u32 = 1;

const FLAG_NORMALIZED: u32 = 1;
const FLAG_LABELS: u32 = 1 << 1;
const FLAG_AUX: u32 = 1 << 2;
const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 4 + 4;

pub fn encode<T: Real>(set: &LabeledFeatureSet<T>) -> Result<Vec<u8>> {
    let n = set.len();
    let mut flags = 0;
    if set.is_normalized() {
        flags |= FLAG_NORMALIZED;
    }
    if set.labels().is_some() {
        flags |= FLAG_LABELS;
    }
    if set.aux().is_some() {
        flags |= FLAG_AUX;
    }
    let dim = u32::try_from(set.dim()).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
    let k = u32::try_from(set.num_classes()).map_err(|_| Error::Format("class count exceeds u32".into()))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * set.features().len() + 4 * n + 16 * n + 4);
    buf.extend_from_slice(FEATURE_FILE_MAGIC);
    buf.extend_from_slice(&FEATURE_FILE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&dim.to_le_bytes());
    buf.extend_from_slice(&k.to_le_bytes());
    buf.extend_from_slice(&flags.to_le_bytes());
    for v in set.features() {
        buf.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    if let Some(labels) = set.labels() {
        for &y in labels {
            let y = u32::try_from(y).map_err(|_| Error::Format("label exceeds u32".into()))?;
            buf.extend_from_slice(&y.to_le_bytes());
        }
    }
    if let Some(aux) = set.aux() {
        for pair in aux {
            for v in pair {
                buf.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
    }
    let crc = crc32c::crc32c(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<LabeledFeatureSet<T>> {
    if bytes.len() < 4 || &bytes[..4] != FEATURE_FILE_MAGIC {
        return Err(Error::Format("missing VGFS magic".into()));
    }
    if bytes.len() < 8 {
        return Err(Error::Truncated { needed: HEADER_LEN + 4, found: bytes.len() });
    }
    let version = u32_at(bytes, 4);
    if version != FEATURE_FILE_VERSION {
        return Err(Error::Version { found: version, expected: FEATURE_FILE_VERSION });
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(Error::Truncated { needed: HEADER_LEN + 4, found: bytes.len() });
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let dim = u32_at(bytes, 16) as usize;
    let k = u32_at(bytes, 20) as usize;
    let flags = u32_at(bytes, 24);
    if flags & !(FLAG_NORMALIZED | FLAG_LABELS | FLAG_AUX) != 0 {
        return Err(Error::Format(format!("unknown flag bits {flags:#x}")));
    }
    let n = usize::try_from(n).map_err(|_| Error::Format("row count exceeds address space".into()))?;
    let has_labels = flags & FLAG_LABELS != 0;
    let has_aux = flags & FLAG_AUX != 0;
    let needed = n
        .checked_mul(dim)
        .and_then(|c| c.checked_mul(8))
        .and_then(|c| c.checked_add(if has_labels { 4 * n } else { 0 }))
        .and_then(|c| c.checked_add(if has_aux { 16 * n } else { 0 }))
        .and_then(|c| c.checked_add(HEADER_LEN + 4))
        .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
    if bytes.len() < needed {
        return Err(Error::Truncated { needed, found: bytes.len() });
    }
    if bytes.len() > needed {
        return Err(Error::Format(format!("{} trailing bytes after checksum", bytes.len() - needed)));
    }
    let stored = u32_at(bytes, needed - 4);
    let computed = crc32c::crc32c(&bytes[..needed - 4]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut at = HEADER_LEN;
    let mut features = Vec::with_capacity(n * dim);
    for _ in 0..n * dim {
        features.push(T::lit(f64_at(bytes, at)));
        at += 8;
    }
    let labels = if has_labels {
        let mut l = Vec::with_capacity(n);
        for _ in 0..n {
            l.push(u32_at(bytes, at) as usize);
            at += 4;
        }
        Some(l)
    } else {
        None
    };
    let set = LabeledFeatureSet::new(dim.max(1), k, features, labels, flags & FLAG_NORMALIZED != 0)?;
    if has_aux {
        let mut aux = Vec::with_capacity(n);
        for _ in 0..n {
            aux.push([T::lit(f64_at(bytes, at)), T::lit(f64_at(bytes, at + 8))]);
            at += 16;
        }
        return set.with_aux(aux);
    }
    Ok(set)
}

pub fn save_features<T: Real>(set: &LabeledFeatureSet<T>, path: &Path) -> Result<()> {
    let bytes = encode(set)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn load_features<T: Real>(path: &Path) -> Result<LabeledFeatureSet<T>> {
    decode(&fs::read(path)?)
}

/// Writes `f0,...,f{d-1}[,label]` with 17 significant digits.
pub fn save_csv<T: Real>(set: &LabeledFeatureSet<T>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = (0..set.dim()).map(|i| format!("f{i}")).collect();
    if set.labels().is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    for (i, row) in set.rows().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{:.16e}", v.as_f64())).collect();
        if let Some(labels) = set.labels() {
            rec.push(labels[i].to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by [`save_csv`] (or any file with the same header).
/// `num_classes` of `None` infers `max label + 1`.
pub fn load_csv<T: Real>(path: &Path, num_classes: Option<usize>, normalized: bool) -> Result<LabeledFeatureSet<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    let has_labels = header.iter().next_back() == Some("label");
    let dim = header.len() - usize::from(has_labels);
    for (i, name) in header.iter().take(dim).enumerate() {
        if name != format!("f{i}") {
            return Err(Error::Format(format!("column {i} is named {name:?}, expected \"f{i}\"")));
        }
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        for (j, field) in rec.iter().enumerate() {
            if j < dim {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("row {}: {field:?} is not a number", line + 1)))?;
                features.push(T::lit(v));
            } else {
                let y: usize = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("row {}: {field:?} is not a label", line + 1)))?;
                labels.push(y);
            }
        }
    }
    let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    LabeledFeatureSet::new(dim, k, features, has_labels.then_some(labels), normalized)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("csv: {other:?}")),
    }
}
