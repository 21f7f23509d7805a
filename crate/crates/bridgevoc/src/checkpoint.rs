//! Checkpoints: named tensors in a safetensors file, with the run
//! configuration, step counters and role stored as header metadata.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::optim::AdamW;

const FORMAT: &str = "bridgevoc-checkpoint-1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    /// `teacher` for trained models, `student` for distilled ones.
    pub role: String,
    pub step: u64,
    /// Optimiser step counters by prefix.
    pub counters: BTreeMap<String, u64>,
    pub tensors: BTreeMap<String, Tensor>,
}

fn to_bytes(t: &Tensor) -> Result<(Dtype, Vec<u8>)> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F32 => (Dtype::F32, flat.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
        DType::F64 => (Dtype::F64, flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
        other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
    })
}

fn from_view(view: &TensorView) -> Result<Tensor> {
    let shape = view.shape().to_vec();
    let data = view.data();
    let t = match view.dtype() {
        Dtype::F32 => {
            let v: Vec<f32> = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            Tensor::from_vec(v, shape, &Device::Cpu)?
        }
        Dtype::F64 => {
            let v: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            Tensor::from_vec(v, shape, &Device::Cpu)?
        }
        other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
    };
    Ok(t)
}

impl Checkpoint {
    pub fn new(config: &RunConfig, role: &str, step: u64) -> Self {
        Self { config: config.clone(), role: role.into(), step, counters: BTreeMap::new(), tensors: BTreeMap::new() }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let raw = self.tensors.iter().map(|(k, t)| Ok((k.clone(), t.dims().to_vec(), to_bytes(t)?))).collect::<Result<Vec<_>>>()?;
        let views = raw
            .iter()
            .map(|(k, shape, (dtype, bytes))| Ok((k.as_str(), TensorView::new(*dtype, shape.clone(), bytes)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut meta = HashMap::new();
        meta.insert("format".to_string(), FORMAT.to_string());
        meta.insert("config".to_string(), serde_json::to_string(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?);
        meta.insert("role".to_string(), self.role.clone());
        meta.insert("step".to_string(), self.step.to_string());
        meta.insert("counters".to_string(), serde_json::to_string(&self.counters).map_err(|e| Error::Checkpoint(e.to_string()))?);
        Ok(safetensors::serialize(views, Some(meta))?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (_, header) = SafeTensors::read_metadata(bytes)?;
        let meta = header.metadata().clone().ok_or_else(|| Error::Checkpoint("missing metadata".into()))?;
        let field = |k: &str| meta.get(k).ok_or_else(|| Error::Checkpoint(format!("missing metadata field {k}")));
        if field("format")? != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {}", field("format")?)));
        }
        let config: RunConfig = serde_json::from_str(field("config")?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let counters = serde_json::from_str(field("counters")?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let step = field("step")?.parse().map_err(|_| Error::Checkpoint("bad step".into()))?;
        let st = SafeTensors::deserialize(bytes)?;
        let tensors = st.iter().map(|(k, v)| Ok((k.to_string(), from_view(&v)?))).collect::<Result<_>>()?;
        Ok(Self { config, role: field("role")?.clone(), step, counters, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn put_store(&mut self, prefix: &str, store: &ParamStore) {
        for p in store.params() {
            self.tensors.insert(format!("{prefix}/{}", p.name), p.var.as_tensor().clone());
        }
    }

    /// Overwrites every parameter of `store` from `prefix/<name>`.
    pub fn restore_store(&self, prefix: &str, store: &ParamStore) -> Result<()> {
        let expected = self.tensors.keys().filter(|k| k.starts_with(&format!("{prefix}/"))).count();
        if expected != store.len() {
            return Err(Error::Checkpoint(format!("{prefix}: {expected} stored tensors, model has {}", store.len())));
        }
        for p in store.params() {
            let t = self.get(&format!("{prefix}/{}", p.name))?;
            if t.dims() != p.var.dims() {
                return Err(Error::Checkpoint(format!("{}: shape {:?} vs {:?}", p.name, t.dims(), p.var.dims())));
            }
            p.var.set(&t.to_dtype(store.dtype())?)?;
        }
        Ok(())
    }

    pub fn put_adam(&mut self, prefix: &str, opt: &AdamW, store: &ParamStore) {
        for (i, p) in store.params().iter().enumerate() {
            self.tensors.insert(format!("{prefix}/m/{}", p.name), opt.m[i].clone());
            self.tensors.insert(format!("{prefix}/v/{}", p.name), opt.v[i].clone());
        }
        self.counters.insert(prefix.into(), opt.step);
    }

    pub fn restore_adam(&self, prefix: &str, opt: &mut AdamW, store: &ParamStore) -> Result<()> {
        for (i, p) in store.params().iter().enumerate() {
            opt.m[i] = self.get(&format!("{prefix}/m/{}", p.name))?.to_dtype(store.dtype())?;
            opt.v[i] = self.get(&format!("{prefix}/v/{}", p.name))?.to_dtype(store.dtype())?;
        }
        opt.step = *self.counters.get(prefix).ok_or_else(|| Error::Checkpoint(format!("no counter for {prefix}")))?;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }
}
