use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::cloud::{load_scan, PointCloud};
use crate::io::labels::{load_labels, ClassConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    SemanticKitti,
    SemanticPoss,
    Toy,
}

impl DatasetKind {
    pub fn default_classes(self, toy_classes: usize) -> ClassConfig {
        match self {
            DatasetKind::SemanticKitti => ClassConfig::semantic_kitti(),
            DatasetKind::SemanticPoss => ClassConfig::semantic_poss(),
            DatasetKind::Toy => ClassConfig::toy(toy_classes),
        }
    }

    pub fn default_splits(self) -> SplitSpec {
        match self {
            DatasetKind::SemanticKitti => SplitSpec::semantic_kitti(),
            DatasetKind::SemanticPoss => SplitSpec::semantic_poss(),
            DatasetKind::Toy => SplitSpec::toy(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Sequence membership of the three splits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

fn seqs(ids: impl IntoIterator<Item = u32>) -> Vec<String> {
    ids.into_iter().map(|i| format!("{i:02}")).collect()
}

impl SplitSpec {
    /// Train 00-10 without 08, validate on 08, test on 11-21.
    pub fn semantic_kitti() -> Self {
        Self {
            train: seqs((0..=10).filter(|&s| s != 8)),
            val: seqs([8]),
            test: seqs(11..=21),
        }
    }

    /// Part 02 is the test set, the other five parts train. There is no
    /// separate validation part.
    pub fn semantic_poss() -> Self {
        Self {
            train: seqs([0, 1, 3, 4, 5]),
            val: Vec::new(),
            test: seqs([2]),
        }
    }

    pub fn toy() -> Self {
        Self {
            train: seqs([0]),
            val: seqs([1]),
            test: seqs([2]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sets = [&self.train, &self.val, &self.test];
        let names = ["train", "val", "test"];
        for i in 0..3 {
            for j in i + 1..3 {
                let a: BTreeSet<_> = sets[i].iter().collect();
                if let Some(s) = sets[j].iter().find(|s| a.contains(s)) {
                    return Err(Error::Config(format!(
                        "sequence {s} is in both the {} and {} splits",
                        names[i], names[j]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sequences(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// One scan (and its label file, when present) in the dataset tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub sequence: String,
    /// File stem, e.g. `000123`.
    pub name: String,
    pub scan: PathBuf,
    pub labels: Option<PathBuf>,
}

/// A dataset in the `<root>/sequences/<SS>/{velodyne,labels}` layout.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub classes: ClassConfig,
    pub splits: SplitSpec,
}

impl Dataset {
    pub fn new(root: impl Into<PathBuf>, classes: ClassConfig, splits: SplitSpec) -> Result<Self> {
        classes.validate()?;
        splits.validate()?;
        Ok(Self {
            root: root.into(),
            classes,
            splits,
        })
    }

    pub fn sequence_dir(&self, seq: &str) -> PathBuf {
        self.root.join("sequences").join(seq)
    }

    /// Samples of one split, sequences in listed order, scans sorted by name.
    /// Missing sequence directories yield no samples.
    pub fn samples(&self, split: Split) -> Result<Vec<Sample>> {
        let mut out = Vec::new();
        for seq in self.splits.sequences(split) {
            let dir = self.sequence_dir(seq);
            let velodyne = dir.join("velodyne");
            if !velodyne.is_dir() {
                log::debug!("{} missing, skipping", velodyne.display());
                continue;
            }
            let mut scans: Vec<PathBuf> = fs::read_dir(&velodyne)
                .map_err(|e| Error::io(&velodyne, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "bin"))
                .collect();
            scans.sort();
            for scan in scans {
                let name = scan.file_stem().unwrap().to_string_lossy().into_owned();
                let label = dir.join("labels").join(format!("{name}.label"));
                out.push(Sample {
                    sequence: seq.clone(),
                    name,
                    scan,
                    labels: label.is_file().then_some(label),
                });
            }
        }
        Ok(out)
    }

    /// Loads a scan and, when available, its remapped labels.
    pub fn load(&self, sample: &Sample) -> Result<PointCloud> {
        load_sample(sample, &self.classes)
    }
}

pub fn load_sample(sample: &Sample, classes: &ClassConfig) -> Result<PointCloud> {
    let mut pc = load_scan(&sample.scan)?;
    if let Some(path) = &sample.labels {
        let labels = load_labels(path, classes, &pc)?;
        pc.labels = Some(labels);
    }
    Ok(pc)
}

/// Relative location of a per-scan output file that mirrors the dataset tree,
/// e.g. `sequences/08/predictions/000123.label`.
pub fn prediction_relpath(sample: &Sample) -> PathBuf {
    Path::new("sequences")
        .join(&sample.sequence)
        .join("predictions")
        .join(format!("{}.label", sample.name))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_splits_are_disjoint() {
        SplitSpec::semantic_kitti().validate().unwrap();
        SplitSpec::semantic_poss().validate().unwrap();
        SplitSpec::toy().validate().unwrap();
        let k = SplitSpec::semantic_kitti();
        assert_eq!(k.train.len(), 10);
        assert_eq!(k.val, vec!["08"]);
        assert_eq!(k.test.first().unwrap(), "11");
        assert_eq!(k.test.last().unwrap(), "21");
    }

    #[test]
    fn overlapping_splits_rejected() {
        let s = SplitSpec {
            train: seqs([0, 1]),
            val: seqs([1]),
            test: vec![],
        };
        assert!(matches!(s.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn split_parsing() {
        assert_eq!("val".parse::<Split>().unwrap(), Split::Val);
        assert!("dev".parse::<Split>().is_err());
    }
}
