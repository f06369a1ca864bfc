use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::cloud::PointCloud;

/// Mask selecting the semantic part of a raw label record. The upper 16
/// bits carry the instance ID, which this pipeline discards.
pub const SEMANTIC_MASK: u32 = 0xFFFF;

/// Ignore ID used by the synthetic toy dataset (no channel of its own).
pub const TOY_IGNORE_ID: u32 = 255;

/// What to do with raw IDs that are missing from the remap table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownLabelPolicy {
    #[default]
    MapToIgnore,
    Error,
}

/// Class bookkeeping for one dataset: raw-to-train remapping, names,
/// frequencies and the ignore ID.
///
/// `ignore_id` may be a real output channel (the SemanticKITTI convention,
/// where train ID 0 is "unlabeled") or a sentinel outside `0..num_classes`.
/// Either way pixels and points carrying it are excluded from losses and
/// metrics, and the ignore channel (if any) is never predicted.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassConfig {
    pub name: String,
    pub num_classes: usize,
    pub ignore_id: u32,
    pub class_names: Vec<String>,
    pub remap: BTreeMap<u32, u32>,
    pub inverse_remap: BTreeMap<u32, u32>,
    pub frequencies: Vec<f64>,
    pub unknown_policy: UnknownLabelPolicy,
}

impl ClassConfig {
    /// SemanticKITTI: 19 evaluated classes plus "unlabeled" (train ID 0, ignored).
    pub fn semantic_kitti() -> Self {
        let names = [
            "unlabeled",
            "car",
            "bicycle",
            "motorcycle",
            "truck",
            "other-vehicle",
            "person",
            "bicyclist",
            "motorcyclist",
            "road",
            "parking",
            "sidewalk",
            "other-ground",
            "building",
            "fence",
            "vegetation",
            "trunk",
            "terrain",
            "pole",
            "traffic-sign",
        ];
        let remap: BTreeMap<u32, u32> = [
            (0, 0),
            (1, 0),
            (10, 1),
            (11, 2),
            (13, 5),
            (15, 3),
            (16, 5),
            (18, 4),
            (20, 5),
            (30, 6),
            (31, 7),
            (32, 8),
            (40, 9),
            (44, 10),
            (48, 11),
            (49, 12),
            (50, 13),
            (51, 14),
            (52, 0),
            (60, 9),
            (70, 15),
            (71, 16),
            (72, 17),
            (80, 18),
            (81, 19),
            (99, 0),
            (252, 1),
            (253, 7),
            (254, 6),
            (255, 8),
            (256, 5),
            (257, 5),
            (258, 4),
            (259, 5),
        ]
        .into_iter()
        .collect();
        let inverse_remap: BTreeMap<u32, u32> = [
            (0, 0),
            (1, 10),
            (2, 11),
            (3, 15),
            (4, 18),
            (5, 20),
            (6, 30),
            (7, 31),
            (8, 32),
            (9, 40),
            (10, 44),
            (11, 48),
            (12, 49),
            (13, 50),
            (14, 51),
            (15, 70),
            (16, 71),
            (17, 72),
            (18, 80),
            (19, 81),
        ]
        .into_iter()
        .collect();
        // Approximate point share of each raw class over the training
        // sequences, folded through the remap below.
        let raw_content: [(u32, f64); 34] = [
            (0, 0.018889854628292943),
            (1, 0.0002937197336781505),
            (10, 0.040818519255974316),
            (11, 0.00016609538710764618),
            (13, 2.7879693665067774e-05),
            (15, 0.00039838616015114444),
            (16, 0.0),
            (18, 0.0020633612104619787),
            (20, 0.0016218197275284021),
            (30, 0.00017698551338515307),
            (31, 1.1065903904919655e-08),
            (32, 5.532951952459828e-09),
            (40, 0.1987493871255525),
            (44, 0.014717169549888214),
            (48, 0.14392298360372),
            (49, 0.0039048553037472045),
            (50, 0.1326861944777486),
            (51, 0.0723592229456223),
            (52, 0.002395131480328884),
            (60, 4.7084144280367186e-05),
            (70, 0.26681502148037506),
            (71, 0.006035012012626033),
            (72, 0.07814222006271769),
            (80, 0.002855498193863172),
            (81, 0.0006155958086189918),
            (99, 0.009923127583046915),
            (252, 0.001789309418528068),
            (253, 0.00012709999297008662),
            (254, 0.00016059776092534436),
            (255, 3.745553104802113e-05),
            (256, 0.0),
            (257, 0.00011351574470342043),
            (258, 0.00010157861367183268),
            (259, 4.3840131989471124e-05),
        ];
        let mut freq = vec![0.0; names.len()];
        for (raw, share) in raw_content {
            freq[remap[&raw] as usize] += share;
        }
        Self {
            name: "semantic_kitti".into(),
            num_classes: names.len(),
            ignore_id: 0,
            class_names: names.iter().map(|s| s.to_string()).collect(),
            remap,
            inverse_remap,
            frequencies: normalize(freq),
            unknown_policy: UnknownLabelPolicy::MapToIgnore,
        }
    }

    /// SemanticPOSS: 13 evaluated classes plus "unlabeled" (train ID 0, ignored).
    ///
    /// Frequencies are uniform placeholders; estimate them from the training
    /// split with [`ClassConfig::with_frequencies_from_counts`].
    pub fn semantic_poss() -> Self {
        let names = [
            "unlabeled",
            "person",
            "rider",
            "car",
            "trunk",
            "plants",
            "traffic-sign",
            "pole",
            "trashcan",
            "building",
            "cone/stone",
            "fence",
            "bike",
            "ground",
        ];
        let remap: BTreeMap<u32, u32> = [
            (0, 0),
            (4, 1),
            (5, 1),
            (6, 2),
            (7, 3),
            (8, 4),
            (9, 5),
            (10, 6),
            (11, 6),
            (12, 6),
            (13, 7),
            (14, 8),
            (15, 9),
            (16, 10),
            (17, 11),
            (21, 12),
            (22, 13),
        ]
        .into_iter()
        .collect();
        let inverse_remap: BTreeMap<u32, u32> = [
            (0, 0),
            (1, 4),
            (2, 6),
            (3, 7),
            (4, 8),
            (5, 9),
            (6, 10),
            (7, 13),
            (8, 14),
            (9, 15),
            (10, 16),
            (11, 17),
            (12, 21),
            (13, 22),
        ]
        .into_iter()
        .collect();
        let n = names.len();
        Self {
            name: "semantic_poss".into(),
            num_classes: n,
            ignore_id: 0,
            class_names: names.iter().map(|s| s.to_string()).collect(),
            remap,
            inverse_remap,
            frequencies: vec![1.0 / n as f64; n],
            unknown_policy: UnknownLabelPolicy::MapToIgnore,
        }
    }

    /// Class layout written by the synthetic toy generator: raw ID `k + 1`
    /// is train class `k`, raw 0 is unlabeled.
    pub fn toy(num_classes: usize) -> Self {
        let mut remap = BTreeMap::new();
        let mut inverse_remap = BTreeMap::new();
        remap.insert(0, TOY_IGNORE_ID);
        inverse_remap.insert(TOY_IGNORE_ID, 0);
        for k in 0..num_classes as u32 {
            remap.insert(k + 1, k);
            inverse_remap.insert(k, k + 1);
        }
        let class_names = (0..num_classes)
            .map(|k| match k {
                0 => "ground".to_string(),
                1 => "structure".to_string(),
                k => format!("object-{k}"),
            })
            .collect();
        Self {
            name: "toy".into(),
            num_classes,
            ignore_id: TOY_IGNORE_ID,
            class_names,
            remap,
            inverse_remap,
            frequencies: vec![1.0 / num_classes as f64; num_classes],
            unknown_policy: UnknownLabelPolicy::MapToIgnore,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.class_names.len() != self.num_classes || self.frequencies.len() != self.num_classes
        {
            return Err(Error::Config(format!(
                "class table sizes disagree: {} names, {} frequencies, {} classes",
                self.class_names.len(),
                self.frequencies.len(),
                self.num_classes
            )));
        }
        if self.frequencies.iter().any(|f| *f < 0.0 || !f.is_finite()) {
            return Err(Error::Config("class frequencies must be nonnegative".into()));
        }
        let sum: f64 = self.frequencies.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "class frequencies sum to {sum}, expected 1"
            )));
        }
        for (&raw, &train) in &self.remap {
            if train as usize >= self.num_classes && train != self.ignore_id {
                return Err(Error::Config(format!(
                    "raw label {raw} maps to out-of-range train ID {train}"
                )));
            }
        }
        for t in self.evaluated_classes() {
            let raw = self.inverse_remap.get(&(t as u32)).ok_or_else(|| {
                Error::Config(format!("train ID {t} has no inverse mapping"))
            })?;
            if self.remap.get(raw) != Some(&(t as u32)) {
                return Err(Error::Config(format!(
                    "inverse remap of train ID {t} (raw {raw}) does not map back"
                )));
            }
        }
        Ok(())
    }

    pub fn is_ignored(&self, label: u32) -> bool {
        label == self.ignore_id
    }

    /// Train IDs that take part in losses and metrics.
    pub fn evaluated_classes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_classes).filter(move |&c| c as u32 != self.ignore_id)
    }

    /// Output channel that must never be predicted, if the ignore ID has one.
    pub fn ignore_channel(&self) -> Option<usize> {
        ((self.ignore_id as usize) < self.num_classes).then_some(self.ignore_id as usize)
    }

    /// Maps a raw 32-bit label record to a train ID.
    pub fn remap_raw(&self, raw: u32) -> Result<u32> {
        let semantic = raw & SEMANTIC_MASK;
        match self.remap.get(&semantic) {
            Some(&t) => Ok(t),
            None => match self.unknown_policy {
                UnknownLabelPolicy::MapToIgnore => Ok(self.ignore_id),
                UnknownLabelPolicy::Error => Err(Error::Consistency(format!(
                    "raw label {semantic} is not in the {} remap table",
                    self.name
                ))),
            },
        }
    }

    /// Raw ID written to prediction files for a train ID.
    pub fn to_raw(&self, train: u32) -> u32 {
        self.inverse_remap.get(&train).copied().unwrap_or(0)
    }

    /// Class weights `1 / ln(1.02 + freq)`; the ignore channel gets 0.
    pub fn class_weights(&self) -> Vec<f64> {
        self.frequencies
            .iter()
            .enumerate()
            .map(|(c, f)| {
                if c as u32 == self.ignore_id {
                    0.0
                } else {
                    1.0 / (1.02 + f).ln()
                }
            })
            .collect()
    }

    /// Replaces the frequency table with normalized label counts.
    pub fn with_frequencies_from_counts(mut self, counts: &[u64]) -> Self {
        assert_eq!(counts.len(), self.num_classes);
        let total: u64 = counts.iter().sum();
        if total > 0 {
            self.frequencies = counts.iter().map(|&c| c as f64 / total as f64).collect();
        }
        self
    }
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

pub fn decode_raw_labels(bytes: &[u8], path: &Path) -> Result<Vec<u32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::format(
            path,
            format!("label length {} is not a multiple of 4", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn read_raw_labels(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raw_labels(&bytes, path)
}

pub fn write_raw_labels(path: impl AsRef<Path>, raw: &[u32]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let bytes: Vec<u8> = raw.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a `.label` file for `scan`, returning one train ID per kept point.
///
/// The record count must match the scan file's record count; rows the scan
/// loader dropped are dropped here too.
pub fn load_labels(path: impl AsRef<Path>, cfg: &ClassConfig, scan: &PointCloud) -> Result<Vec<u32>> {
    let path = path.as_ref();
    let raw = read_raw_labels(path)?;
    if raw.len() != scan.raw_len() {
        return Err(Error::Consistency(format!(
            "{} holds {} labels but its scan has {} points",
            path.display(),
            raw.len(),
            scan.raw_len()
        )));
    }
    let mut out = Vec::with_capacity(scan.len());
    let mut dropped = scan.dropped_rows.iter().peekable();
    for (row, &r) in raw.iter().enumerate() {
        if dropped.peek() == Some(&&row) {
            dropped.next();
            continue;
        }
        out.push(cfg.remap_raw(r)?);
    }
    Ok(out)
}

/// Writes per-point train labels in the dataset's raw label format.
///
/// Rows the scan loader dropped are filled with the raw ID of the ignore
/// class so the file lines up with the original scan.
pub fn write_prediction_labels(
    path: impl AsRef<Path>,
    labels: &[u32],
    cfg: &ClassConfig,
    dropped_rows: &[usize],
) -> Result<()> {
    let fill = cfg.to_raw(cfg.ignore_id);
    let mut raw = Vec::with_capacity(labels.len() + dropped_rows.len());
    let mut it = labels.iter();
    let mut dropped = dropped_rows.iter().peekable();
    for row in 0..labels.len() + dropped_rows.len() {
        if dropped.peek() == Some(&&row) {
            dropped.next();
            raw.push(fill);
        } else {
            raw.push(cfg.to_raw(*it.next().unwrap()));
        }
    }
    write_raw_labels(path, &raw)
}
