//! Descriptor files: u32 count, u32 dim, then count x dim f32 (all LE), plus
//! a sidecar text file with one keypoint index per line.

use std::fs;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".idx");
    PathBuf::from(s)
}

/// Writes `path` and `path.idx`; returns the sidecar path.
pub fn write_descriptors(path: &Path, keypoints: &[usize], descriptors: &[Vec<f32>]) -> Result<PathBuf> {
    if keypoints.len() != descriptors.len() {
        return Err(Error::Shape(format!(
            "{} keypoints but {} descriptors",
            keypoints.len(),
            descriptors.len()
        )));
    }
    let dim = descriptors.first().map_or(0, Vec::len);
    if descriptors.iter().any(|d| d.len() != dim) {
        return Err(Error::Shape("descriptors differ in length".into()));
    }
    let mut bytes = Vec::with_capacity(8 + 4 * dim * descriptors.len());
    bytes.extend_from_slice(&(descriptors.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    for d in descriptors {
        for v in d {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar(path);
    let text: String = keypoints.iter().map(|k| format!("{k}\n")).collect();
    fs::write(&side, text).map_err(|e| Error::io(&side, e))?;
    Ok(side)
}

/// Reads a descriptor file and its sidecar.
pub fn read_descriptors(path: &Path) -> Result<(Vec<usize>, Vec<Vec<f32>>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 {
        return Err(Error::parse(path, "offset 0", "file shorter than its header"));
    }
    let count = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let dim = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 8 + 4 * count * dim {
        return Err(Error::parse(
            path,
            "offset 8",
            format!("expected {} bytes of values, found {}", 4 * count * dim, bytes.len() - 8),
        ));
    }
    let values: Vec<f32> = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let descriptors = if dim == 0 {
        vec![Vec::new(); count]
    } else {
        values.chunks(dim).map(<[f32]>::to_vec).collect()
    };
    let side = sidecar(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let mut keypoints = Vec::with_capacity(count);
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        keypoints.push(
            line.trim()
                .parse()
                .map_err(|e| Error::parse(&side, format!("line {}", n + 1), format!("{e}")))?,
        );
    }
    if keypoints.len() != count {
        return Err(Error::parse(&side, "end of file", format!("{} indices for {count} descriptors", keypoints.len())));
    }
    Ok((keypoints, descriptors))
}
