//! `TTF1` feature files.
//!
//! Layout, all little-endian: magic `TTF1`; `u32` sample, frame and
//! dimension counts; an optional table of one `u32` label per sample
//! (`0xFFFFFFFF` = unlabeled); then every sample's `frames × dims` matrix
//! as row-major `f32`. The label table is present exactly when the file is
//! `4 * n_samples` bytes longer than the bare layout.

use std::fs;
use std::path::Path;

use devid_core::TandemFeature;

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TTF1";
pub const UNLABELED: u32 = u32::MAX;
const HEADER_LEN: usize = 16;

/// Serializes equally shaped features. The label table is written when any
/// feature carries a label.
pub fn encode_features(features: &[TandemFeature]) -> Result<Vec<u8>> {
    let (frames, dims) = features.first().map_or((0, 0), TandemFeature::shape);
    if let Some(f) = features.iter().find(|f| f.shape() != (frames, dims) || f.data.len() != frames * dims) {
        return Err(Error::Usage(format!("feature shapes differ: {:?} vs {:?}", f.shape(), (frames, dims))));
    }
    let count = |n: usize, what: &str| u32::try_from(n).map_err(|_| Error::Usage(format!("{what} {n} exceeds u32")));
    let labeled = features.iter().any(|f| f.label.is_some());
    let mut out = Vec::with_capacity(HEADER_LEN + features.len() * (4 + frames * dims * 4));
    out.extend_from_slice(MAGIC);
    for (n, what) in [(features.len(), "sample count"), (frames, "frame count"), (dims, "dimension count")] {
        out.extend_from_slice(&count(n, what)?.to_le_bytes());
    }
    if labeled {
        for f in features {
            if f.label == Some(UNLABELED) {
                return Err(Error::Usage(format!("label {UNLABELED:#x} is reserved")));
            }
            out.extend_from_slice(&f.label.unwrap_or(UNLABELED).to_le_bytes());
        }
    }
    for f in features {
        for v in &f.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses a `TTF1` image; `path` only labels errors.
pub fn decode_features(bytes: &[u8], path: &Path) -> Result<Vec<TandemFeature>> {
    let bad = |detail: String| Error::FeatureFormat { path: path.to_path_buf(), detail };
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("missing TTF1 header".into()));
    }
    let (n, frames, dims) = (u32_at(bytes, 4) as usize, u32_at(bytes, 8) as usize, u32_at(bytes, 12) as usize);
    let per = frames.checked_mul(dims).ok_or_else(|| bad("frame size overflows".into()))?;
    let data_len = n.checked_mul(per).and_then(|v| v.checked_mul(4)).ok_or_else(|| bad("data size overflows".into()))?;
    let body = bytes.len() - HEADER_LEN;
    let labeled = if body == data_len {
        false
    } else if Some(body) == data_len.checked_add(4 * n) {
        true
    } else {
        return Err(bad(format!(
            "{body} payload bytes for {n} samples of {frames}x{dims} (expected {data_len} or {})",
            data_len + 4 * n
        )));
    };
    let data_start = HEADER_LEN + if labeled { 4 * n } else { 0 };
    (0..n)
        .map(|i| {
            let label = labeled.then(|| u32_at(bytes, HEADER_LEN + 4 * i)).filter(|&l| l != UNLABELED);
            let start = data_start + i * per * 4;
            let data = bytes[start..start + per * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            TandemFeature::new(frames, dims, data, label).map_err(Error::from)
        })
        .collect()
}

pub fn write_features(path: &Path, features: &[TandemFeature]) -> Result<()> {
    fs::write(path, encode_features(features)?).map_err(Error::io(path))
}

pub fn read_features(path: &Path) -> Result<Vec<TandemFeature>> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode_features(&bytes, path)
}
