use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use super::{ArchitectureFlags, FadeNet, NetworkConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

const KEY_VERSION: &str = "format_version";
const KEY_NETWORK: &str = "network";
const KEY_FLAGS: &str = "architecture";
const KEY_SEED: &str = "init_seed";

/// A safetensors archive: string metadata plus named `f32` tensors.
///
/// Network parameters and buffers use their module paths as names; callers
/// may add further tensors (optimizer state) and metadata entries.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    /// Captures the network state.
    pub fn from_network(net: &FadeNet, seed: u64) -> Result<Self> {
        let mut metadata = BTreeMap::new();
        metadata.insert(KEY_VERSION.into(), CHECKPOINT_VERSION.to_string());
        metadata.insert(KEY_NETWORK.into(), serde_json::to_string(net.config())?);
        metadata.insert(KEY_FLAGS.into(), serde_json::to_string(net.flags())?);
        metadata.insert(KEY_SEED.into(), seed.to_string());
        Ok(Self {
            metadata,
            tensors: net.params().snapshot(),
        })
    }

    pub fn version(&self) -> Result<u32> {
        self.metadata
            .get(KEY_VERSION)
            .ok_or_else(|| Error::Checkpoint("missing format_version".into()))?
            .parse()
            .map_err(|_| Error::Checkpoint("format_version is not an integer".into()))
    }

    pub fn network_config(&self) -> Result<(NetworkConfig, ArchitectureFlags, u64)> {
        let get = |k: &str| {
            self.metadata
                .get(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing metadata entry {k}")))
        };
        let config = serde_json::from_str(get(KEY_NETWORK)?)?;
        let flags = serde_json::from_str(get(KEY_FLAGS)?)?;
        let seed = get(KEY_SEED)?
            .parse()
            .map_err(|_| Error::Checkpoint("init_seed is not an integer".into()))?;
        Ok((config, flags, seed))
    }

    /// Rebuilds the network and loads every parameter and buffer.
    pub fn build_network(&self, dtype: DType) -> Result<FadeNet> {
        let (config, flags, seed) = self.network_config()?;
        let net = FadeNet::new(config, flags, seed, dtype)?;
        self.restore_into(&net)?;
        Ok(net)
    }

    pub fn restore_into(&self, net: &FadeNet) -> Result<()> {
        let store = net.params();
        let names = store.params().keys().chain(store.buffers().keys());
        for name in names {
            let t = self
                .tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            store.assign(name, t)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut encoded: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let values = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
            let bytes = values.iter().flat_map(|v| v.to_le_bytes()).collect();
            encoded.push((name.clone(), t.dims().to_vec(), bytes));
        }
        let views = encoded
            .iter()
            .map(|(name, shape, bytes)| {
                TensorView::new(Dtype::F32, shape.clone(), bytes)
                    .map(|v| (name.clone(), v))
                    .map_err(|e| Error::Checkpoint(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let metadata: HashMap<String, String> = self.metadata.clone().into_iter().collect();
        let bytes = safetensors::tensor::serialize(views, Some(metadata))
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let metadata: BTreeMap<String, String> = header
            .metadata()
            .clone()
            .unwrap_or_default()
            .into_iter()
            .collect();
        let archive = SafeTensors::deserialize(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut tensors = BTreeMap::new();
        for (name, view) in archive.tensors() {
            if view.dtype() != Dtype::F32 {
                return Err(Error::Checkpoint(format!("{name}: expected f32 data")));
            }
            let values: Vec<f32> = view
                .data()
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.insert(name, Tensor::from_vec(values, view.shape(), &Device::Cpu)?);
        }
        let ckpt = Self { metadata, tensors };
        let version = ckpt.version()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        Ok(ckpt)
    }
}
