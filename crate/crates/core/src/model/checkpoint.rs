//! Checkpoints as tensor containers.
//!
//! Entry names: `param/<path>`, `adam_m/<path>`, `adam_v/<path>`,
//! `buffer/<bn path>/mean`, `buffer/<bn path>/var`, `meta/step` (real
//! scalar), `meta/config` and `meta/log` (text).

use std::collections::BTreeMap;
use std::path::Path;

use crate::ctensor::{read_container, write_container, CTensor, Entry, RTensor, TensorContainer};
use crate::error::{Error, Result};
use crate::layers::batchnorm::RunningStats;

use super::{Fc2mfn, ModelConfig, ParamSet};

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub adam_m: BTreeMap<String, CTensor>,
    pub adam_v: BTreeMap<String, CTensor>,
    pub step: u64,
    pub log: String,
}

impl Checkpoint {
    pub fn from_model(model: &Fc2mfn) -> Self {
        Self {
            config: model.config.clone(),
            params: model.params.clone(),
            adam_m: BTreeMap::new(),
            adam_v: BTreeMap::new(),
            step: 0,
            log: String::new(),
        }
    }

    pub fn to_container(&self) -> TensorContainer {
        let mut c = TensorContainer::new();
        for (k, v) in &self.params.params {
            c.insert(format!("param/{k}"), Entry::Complex(v.clone()));
        }
        for (k, v) in &self.adam_m {
            c.insert(format!("adam_m/{k}"), Entry::Complex(v.clone()));
        }
        for (k, v) in &self.adam_v {
            c.insert(format!("adam_v/{k}"), Entry::Complex(v.clone()));
        }
        for (k, b) in &self.params.buffers {
            c.insert(format!("buffer/{k}/mean"), Entry::Complex(b.mean.clone()));
            c.insert(format!("buffer/{k}/var"), Entry::Complex(b.var.clone()));
        }
        c.insert("meta/step", Entry::Real(RTensor::scalar(self.step as f64)));
        c.insert("meta/config", Entry::text(&self.config.to_text()));
        c.insert("meta/log", Entry::text(&self.log));
        c
    }

    /// Rebuilds a checkpoint, checking every tensor against the shapes the
    /// stored config implies.
    pub fn from_container(c: &TensorContainer) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let config = ModelConfig::from_text(&c.text("meta/config")?)?;
        let expected = Fc2mfn::build(config.clone(), 0)?;
        let step = c.real("meta/step")?;
        if step.numel() != 1 {
            return Err(bad("meta/step must be a scalar".into()));
        }
        let step = step.data()[0] as u64;
        let log = c.text("meta/log").unwrap_or_default();

        let mut params = ParamSet::default();
        let mut adam_m = BTreeMap::new();
        let mut adam_v = BTreeMap::new();
        for (name, ref_t) in &expected.params.params {
            let t = c.complex(&format!("param/{name}")).map_err(|_| bad(format!("missing parameter {name}")))?;
            if t.shape() != ref_t.shape() {
                return Err(bad(format!("parameter {name}: shape {:?}, config expects {:?}", t.shape(), ref_t.shape())));
            }
            params.params.insert(name.clone(), t.clone());
            for (prefix, map) in [("adam_m", &mut adam_m), ("adam_v", &mut adam_v)] {
                if let Ok(m) = c.complex(&format!("{prefix}/{name}")) {
                    if m.shape() != ref_t.shape() {
                        return Err(bad(format!("{prefix}/{name}: shape {:?}, expected {:?}", m.shape(), ref_t.shape())));
                    }
                    map.insert(name.clone(), m.clone());
                }
            }
        }
        for (name, ref_b) in &expected.params.buffers {
            let mean = c.complex(&format!("buffer/{name}/mean")).map_err(|_| bad(format!("missing running mean {name}")))?;
            let var = c.complex(&format!("buffer/{name}/var")).map_err(|_| bad(format!("missing running variance {name}")))?;
            if mean.shape() != ref_b.mean.shape() || var.shape() != ref_b.var.shape() {
                return Err(bad(format!("running statistics {name}: shape mismatch")));
            }
            params.buffers.insert(name.clone(), RunningStats { mean: mean.clone(), var: var.clone() });
        }
        for (name, _) in c.entries() {
            if let Some(p) = name.strip_prefix("param/") {
                if !expected.params.params.contains_key(p) {
                    return Err(bad(format!("unexpected parameter {p}")));
                }
            }
        }
        for (what, map) in [("adam_m", &adam_m), ("adam_v", &adam_v)] {
            if !map.is_empty() && map.len() != params.params.len() {
                return Err(bad(format!("{what} covers {} of {} parameters", map.len(), params.params.len())));
            }
        }
        Ok(Self { config, params, adam_m, adam_v, step, log })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_container(path, &self.to_container())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&read_container(path)?)
    }

    pub fn model(&self) -> Result<Fc2mfn> {
        let mut m = Fc2mfn::build(self.config.clone(), 0)?;
        m.params = self.params.clone();
        Ok(m)
    }
}
