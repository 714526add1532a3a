use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Initial value distribution of a parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Const(f64),
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
}

/// Non-trainable state such as batch-norm running statistics.
pub type Buffer = Arc<Mutex<Tensor>>;

/// Owns every trainable parameter and buffer, keyed by canonical module path.
///
/// Each parameter draws from its own generator seeded by the store seed and
/// its path, so initial values do not depend on construction order.
pub struct ParamStore {
    device: Device,
    dtype: DType,
    seed: u64,
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Buffer>,
}

fn path_hash(path: &str) -> u64 {
    path.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            device: Device::Cpu,
            dtype,
            seed,
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn values(&self, path: &str, len: usize, init: Init) -> Vec<f64> {
        match init {
            Init::Const(v) => vec![v; len],
            Init::Uniform(bound) => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ path_hash(path));
                (0..len).map(|_| rng.random_range(-bound..=bound)).collect()
            }
        }
    }

    pub fn param(&mut self, path: &str, shape: &[usize], init: Init) -> Result<Var> {
        if self.params.contains_key(path) {
            return Err(Error::Invariant(format!("parameter {path} registered twice")));
        }
        let len = shape.iter().product();
        let t = Tensor::from_vec(self.values(path, len, init), shape, &self.device)?
            .to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.params.insert(path.to_string(), var.clone());
        Ok(var)
    }

    pub fn buffer(&mut self, path: &str, shape: &[usize], value: f64) -> Result<Buffer> {
        if self.buffers.contains_key(path) {
            return Err(Error::Invariant(format!("buffer {path} registered twice")));
        }
        let t = Tensor::full(value, shape, &self.device)?.to_dtype(self.dtype)?;
        let buf = Arc::new(Mutex::new(t));
        self.buffers.insert(path.to_string(), buf.clone());
        Ok(buf)
    }

    pub fn params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Buffer> {
        &self.buffers
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    /// Overwrites a parameter or buffer from `value`, checking the shape.
    pub fn assign(&self, path: &str, value: &Tensor) -> Result<()> {
        let value = value.to_dtype(self.dtype)?;
        if let Some(var) = self.params.get(path) {
            if var.dims() != value.dims() {
                return Err(Error::Checkpoint(format!(
                    "{path}: expected shape {:?}, found {:?}",
                    var.dims(),
                    value.dims()
                )));
            }
            var.set(&value)?;
            return Ok(());
        }
        if let Some(buf) = self.buffers.get(path) {
            let mut guard = buf.lock().expect("buffer lock poisoned");
            if guard.dims() != value.dims() {
                return Err(Error::Checkpoint(format!(
                    "{path}: expected shape {:?}, found {:?}",
                    guard.dims(),
                    value.dims()
                )));
            }
            *guard = value;
            return Ok(());
        }
        Err(Error::Checkpoint(format!("unknown tensor {path}")))
    }

    /// Copy of every parameter and buffer.
    pub fn snapshot(&self) -> BTreeMap<String, Tensor> {
        let mut out: BTreeMap<String, Tensor> = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().copy().expect("cpu copy")))
            .collect();
        for (k, b) in &self.buffers {
            out.insert(k.clone(), b.lock().expect("buffer lock poisoned").clone());
        }
        out
    }
}
