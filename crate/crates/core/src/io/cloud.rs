use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Size of one scan record: four little-endian `f32` (x, y, z, remission).
pub const SCAN_RECORD_BYTES: usize = 16;

/// A single LiDAR sweep.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    /// Cartesian coordinates in meters, sensor frame.
    pub xyz: Vec<[f32; 3]>,
    pub remission: Vec<f32>,
    /// Train-class IDs (or the ignore ID), one per point.
    pub labels: Option<Vec<u32>>,
    /// Rows of the source file that were dropped for holding non-finite
    /// values. Needed to line labels and predictions up with the raw file.
    pub dropped_rows: Vec<usize>,
}

impl PointCloud {
    pub fn new(xyz: Vec<[f32; 3]>, remission: Vec<f32>) -> Self {
        assert_eq!(xyz.len(), remission.len(), "xyz/remission length mismatch");
        Self {
            xyz,
            remission,
            labels: None,
            dropped_rows: Vec::new(),
        }
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Self {
        assert_eq!(labels.len(), self.xyz.len(), "label count mismatch");
        self.labels = Some(labels);
        self
    }

    pub fn len(&self) -> usize {
        self.xyz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xyz.is_empty()
    }

    /// Number of records in the file this cloud was read from.
    pub fn raw_len(&self) -> usize {
        self.xyz.len() + self.dropped_rows.len()
    }

    /// Euclidean range of point `i`, computed in double precision.
    pub fn range(&self, i: usize) -> f64 {
        let [x, y, z] = self.xyz[i];
        let (x, y, z) = (x as f64, y as f64, z as f64);
        (x * x + y * y + z * z).sqrt()
    }

    pub fn ranges(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.range(i)).collect()
    }

    /// Keeps the points for which `keep` is true, labels included.
    pub fn retain_indices(&self, keep: &[bool]) -> PointCloud {
        let mut xyz = Vec::new();
        let mut remission = Vec::new();
        let mut labels = self.labels.as_ref().map(|_| Vec::new());
        for (i, &k) in keep.iter().enumerate() {
            if !k {
                continue;
            }
            xyz.push(self.xyz[i]);
            remission.push(self.remission[i]);
            if let (Some(out), Some(src)) = (labels.as_mut(), self.labels.as_ref()) {
                out.push(src[i]);
            }
        }
        PointCloud {
            xyz,
            remission,
            labels,
            dropped_rows: Vec::new(),
        }
    }
}

/// Decodes a scan from its raw bytes.
pub fn decode_scan(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    if bytes.len() % SCAN_RECORD_BYTES != 0 {
        return Err(Error::format(
            path,
            format!(
                "scan length {} is not a multiple of {SCAN_RECORD_BYTES}",
                bytes.len()
            ),
        ));
    }
    let n = bytes.len() / SCAN_RECORD_BYTES;
    let mut xyz = Vec::with_capacity(n);
    let mut remission = Vec::with_capacity(n);
    let mut dropped_rows = Vec::new();
    for (row, rec) in bytes.chunks_exact(SCAN_RECORD_BYTES).enumerate() {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
        let p = [f(0), f(1), f(2)];
        let r = f(3);
        if p.iter().all(|v| v.is_finite()) && r.is_finite() {
            xyz.push(p);
            remission.push(r);
        } else {
            dropped_rows.push(row);
        }
    }
    if !dropped_rows.is_empty() {
        log::warn!(
            "{}: dropped {} non-finite rows of {n}",
            path.display(),
            dropped_rows.len()
        );
    }
    Ok(PointCloud {
        xyz,
        remission,
        labels: None,
        dropped_rows,
    })
}

/// Reads a `.bin` scan: consecutive little-endian f32 records (x, y, z, remission).
pub fn load_scan(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_scan(&bytes, path)
}

pub fn encode_scan(pc: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(pc.len() * SCAN_RECORD_BYTES);
    for (p, r) in pc.xyz.iter().zip(&pc.remission) {
        for v in p.iter().chain(std::iter::once(r)) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_scan(path: impl AsRef<Path>, pc: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode_scan(pc)).map_err(|e| Error::io(path, e))
}
