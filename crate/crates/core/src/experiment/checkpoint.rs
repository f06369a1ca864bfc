use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use crate::error::{Error, Result};
use crate::experiment::config::{config_diff, ExperimentConfig};
use crate::model::CENet;
use crate::nn::Module;
use crate::projection::InputNormalization;

pub const CHECKPOINT_VERSION: &str = "1";
const VELOCITY_PREFIX: &str = "optimizer.velocity.";

/// Training state stored next to the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub config: serde_json::Value,
    /// Number of completed epochs.
    pub epoch: usize,
    /// Number of completed optimizer steps.
    pub step: usize,
    pub normalization: InputNormalization,
    pub best_miou: Option<f64>,
    pub best_epoch: Option<usize>,
}

/// Weights (and buffers) of a model, optional optimizer velocities, and
/// the run metadata.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
    pub velocity: Vec<Vec<f32>>,
}

fn to_bytes(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn err(e: impl std::fmt::Display) -> Error {
    Error::Checkpoint(e.to_string())
}

impl Checkpoint {
    pub fn capture(model: &CENet, velocity: &[Vec<f32>], meta: CheckpointMeta) -> Self {
        let mut tensors = Vec::new();
        model.visit(&mut |p| tensors.push((p.name.clone(), p.shape.clone(), p.value.clone())));
        Self {
            meta,
            tensors,
            velocity: velocity.to_vec(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes: Vec<(String, Vec<usize>, Vec<u8>)> = self
            .tensors
            .iter()
            .map(|(n, s, v)| (n.clone(), s.clone(), to_bytes(v)))
            .collect();
        for (i, v) in self.velocity.iter().enumerate() {
            bytes.push((format!("{VELOCITY_PREFIX}{i}"), vec![v.len()], to_bytes(v)));
        }
        let views = bytes
            .iter()
            .map(|(n, s, b)| Ok((n.as_str(), TensorView::new(Dtype::F32, s.clone(), b).map_err(err)?)))
            .collect::<Result<Vec<_>>>()?;
        let m = &self.meta;
        let mut info = HashMap::new();
        info.insert("format_version".to_string(), CHECKPOINT_VERSION.to_string());
        info.insert("config".to_string(), m.config.to_string());
        info.insert("epoch".to_string(), m.epoch.to_string());
        info.insert("step".to_string(), m.step.to_string());
        info.insert("normalization".to_string(), serde_json::to_string(&m.normalization).map_err(err)?);
        info.insert("best_miou".to_string(), serde_json::to_string(&m.best_miou).map_err(err)?);
        info.insert("best_epoch".to_string(), serde_json::to_string(&m.best_epoch).map_err(err)?);
        let data = safetensors::serialize(views, &Some(info)).map_err(err)?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        // write-then-rename so an interrupted save never leaves a torn file
        let tmp = path.with_extension("safetensors.tmp");
        std::fs::write(&tmp, data).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ctx = |e: safetensors::SafeTensorError| Error::Checkpoint(format!("{}: {e}", path.display()));
        let (_, header) = SafeTensors::read_metadata(&bytes).map_err(ctx)?;
        let info = header
            .metadata()
            .clone()
            .ok_or_else(|| Error::Checkpoint(format!("{} has no metadata", path.display())))?;
        let field = |k: &str| {
            info.get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("{} lacks metadata key '{k}'", path.display())))
        };
        let version = field("format_version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{} has format version {version}, expected {CHECKPOINT_VERSION}",
                path.display()
            )));
        }
        let json = |k: &str| -> Result<serde_json::Value> { serde_json::from_str(&field(k)?).map_err(err) };
        let meta = CheckpointMeta {
            config: json("config")?,
            epoch: field("epoch")?.parse().map_err(err)?,
            step: field("step")?.parse().map_err(err)?,
            normalization: serde_json::from_value(json("normalization")?).map_err(err)?,
            best_miou: serde_json::from_value(json("best_miou")?).map_err(err)?,
            best_epoch: serde_json::from_value(json("best_epoch")?).map_err(err)?,
        };

        let st = SafeTensors::deserialize(&bytes).map_err(ctx)?;
        let mut tensors = Vec::new();
        let mut velocity: Vec<(usize, Vec<f32>)> = Vec::new();
        for (name, view) in st.tensors() {
            if view.dtype() != Dtype::F32 {
                return Err(Error::Checkpoint(format!("tensor {name} is {:?}, expected F32", view.dtype())));
            }
            let values: Vec<f32> = view
                .data()
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if let Some(idx) = name.strip_prefix(VELOCITY_PREFIX) {
                velocity.push((idx.parse().map_err(err)?, values));
            } else {
                tensors.push((name, view.shape().to_vec(), values));
            }
        }
        velocity.sort_by_key(|(i, _)| *i);
        if velocity.iter().enumerate().any(|(k, (i, _))| k != *i) {
            return Err(Error::Checkpoint("optimizer velocity indices are not contiguous".into()));
        }
        Ok(Self {
            meta,
            tensors,
            velocity: velocity.into_iter().map(|(_, v)| v).collect(),
        })
    }

    /// The embedded config, parsed.
    pub fn config(&self) -> Result<ExperimentConfig> {
        serde_json::from_value(self.meta.config.clone())
            .map_err(|e| Error::Checkpoint(format!("embedded config does not parse: {e}")))
    }

    /// Errors with a per-key diff unless `cfg` equals the embedded config.
    pub fn ensure_config_matches(&self, cfg: &ExperimentConfig) -> Result<()> {
        let diff = config_diff(&self.meta.config, &cfg.echo());
        if diff.is_empty() {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "config differs from the checkpoint's:\n  {}",
                diff.join("\n  ")
            )))
        }
    }

    /// Copies stored values into `model`; every parameter and buffer must be
    /// present with the same shape. Extra tensors (auxiliary heads of a
    /// training checkpoint loaded into a head-less model) are ignored.
    pub fn apply_to(&self, model: &mut CENet) -> Result<()> {
        let by_name: HashMap<&str, (&Vec<usize>, &Vec<f32>)> =
            self.tensors.iter().map(|(n, s, v)| (n.as_str(), (s, v))).collect();
        let mut problem = None;
        model.visit_mut(&mut |p| {
            if problem.is_some() {
                return;
            }
            match by_name.get(p.name.as_str()) {
                Some((shape, values)) if **shape == p.shape => p.value.copy_from_slice(values),
                Some((shape, _)) => {
                    problem = Some(format!("{} has shape {:?} in the checkpoint, model expects {:?}", p.name, shape, p.shape))
                }
                None => problem = Some(format!("{} missing from the checkpoint", p.name)),
            }
        });
        problem.map_or(Ok(()), |m| Err(Error::Checkpoint(m)))
    }

    /// Builds the model described by the embedded config and loads it.
    pub fn build_model(&self) -> Result<CENet> {
        let cfg = self.config()?;
        let mut model = CENet::new(&cfg.model, cfg.runtime.seed)?;
        self.apply_to(&mut model)?;
        Ok(model)
    }
}
