use candle_core::{Tensor, Var, D};

use super::params::{join, Buffer, Init, ParamStore};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(((x * 0.5)?.tanh()? + 1.0)?.affine(0.5, 0.0)?)
}

/// Softmax over the last dimension.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub fn new(store: &mut ParamStore, path: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Ok(Self {
            weight: store.param(&join(path, "weight"), &[out_dim, in_dim], Init::Uniform(bound))?,
            bias: store.param(&join(path, "bias"), &[out_dim], Init::Uniform(bound))?,
        })
    }

    /// Applies to the last dimension of `x`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let w = self.weight.as_tensor().t()?;
        Ok(x.broadcast_matmul(&w)?.broadcast_add(self.bias.as_tensor())?)
    }
}

pub struct Conv2d {
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        path: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let bound = 1.0 / ((in_ch * kernel * kernel) as f64).sqrt();
        Ok(Self {
            weight: store.param(
                &join(path, "weight"),
                &[out_ch, in_ch, kernel, kernel],
                Init::Uniform(bound),
            )?,
            bias: Some(store.param(&join(path, "bias"), &[out_ch], Init::Uniform(bound))?),
            stride,
            padding,
        })
    }

    /// 3x3, stride 1, same padding.
    pub fn same3(store: &mut ParamStore, path: &str, in_ch: usize, out_ch: usize) -> Result<Self> {
        Self::new(store, path, in_ch, out_ch, 3, 1, 1)
    }

    pub fn pointwise(store: &mut ParamStore, path: &str, in_ch: usize, out_ch: usize) -> Result<Self> {
        Self::new(store, path, in_ch, out_ch, 1, 1, 0)
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Var> {
        self.bias.as_ref()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.as_tensor().reshape((1, (), 1, 1))?)?),
            None => Ok(y),
        }
    }
}

/// Layer normalization over the last dimension.
pub struct LayerNorm {
    weight: Var,
    bias: Var,
    eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, path: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            weight: store.param(&join(path, "weight"), &[dim], Init::Const(1.0))?,
            bias: store.param(&join(path, "bias"), &[dim], Init::Const(0.0))?,
            eps: 1e-6,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centred = x.broadcast_sub(&mean)?;
        let var = centred.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centred.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(self.weight.as_tensor())?
            .broadcast_add(self.bias.as_tensor())?)
    }
}

/// Layer normalization across channels of an NCHW tensor, per pixel.
pub struct ChannelLayerNorm {
    weight: Var,
    bias: Var,
    eps: f64,
}

impl ChannelLayerNorm {
    pub fn new(store: &mut ParamStore, path: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: store.param(&join(path, "weight"), &[channels], Init::Const(1.0))?,
            bias: store.param(&join(path, "bias"), &[channels], Init::Const(0.0))?,
            eps: 1e-6,
        })
    }

    pub fn bias(&self) -> &Var {
        &self.bias
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(1)?;
        let centred = x.broadcast_sub(&mean)?;
        let var = centred.sqr()?.mean_keepdim(1)?;
        let normed = centred.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        let w = self.weight.as_tensor().reshape((1, (), 1, 1))?;
        let b = self.bias.as_tensor().reshape((1, (), 1, 1))?;
        Ok(normed.broadcast_mul(&w)?.broadcast_add(&b)?)
    }
}

pub struct BatchNorm2d {
    weight: Var,
    bias: Var,
    running_mean: Buffer,
    running_var: Buffer,
    momentum: f64,
    eps: f64,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, path: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: store.param(&join(path, "weight"), &[channels], Init::Const(1.0))?,
            bias: store.param(&join(path, "bias"), &[channels], Init::Const(0.0))?,
            running_mean: store.buffer(&join(path, "running_mean"), &[channels], 0.0)?,
            running_var: store.buffer(&join(path, "running_var"), &[channels], 1.0)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    /// Training mode normalizes with batch statistics and updates the running
    /// estimates; evaluation mode uses the running estimates only.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = x.mean_keepdim(3)?.mean_keepdim(2)?.mean_keepdim(0)?;
                let centred = x.broadcast_sub(&mean)?;
                let var = centred.sqr()?.mean_keepdim(3)?.mean_keepdim(2)?.mean_keepdim(0)?;
                let n = (b * h * w) as f64;
                let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                let m = self.momentum;
                {
                    let mut rm = self.running_mean.lock().expect("buffer lock poisoned");
                    *rm = ((&*rm * (1.0 - m))? + (mean.detach().flatten_all()? * m)?)?;
                }
                {
                    let mut rv = self.running_var.lock().expect("buffer lock poisoned");
                    *rv = ((&*rv * (1.0 - m))? + (var.detach().flatten_all()? * (m * unbiased))?)?;
                }
                (mean, var)
            }
            Mode::Eval => {
                let rm = self.running_mean.lock().expect("buffer lock poisoned").clone();
                let rv = self.running_var.lock().expect("buffer lock poisoned").clone();
                (rm.reshape((1, c, 1, 1))?, rv.reshape((1, c, 1, 1))?)
            }
        };
        let normed = x
            .broadcast_sub(&mean)?
            .broadcast_div(&(var + self.eps)?.sqrt()?)?;
        let wt = self.weight.as_tensor().reshape((1, c, 1, 1))?;
        let bs = self.bias.as_tensor().reshape((1, c, 1, 1))?;
        Ok(normed.broadcast_mul(&wt)?.broadcast_add(&bs)?)
    }
}

/// Conv3x3 + BatchNorm + ReLU.
pub struct ConvBnRelu {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBnRelu {
    pub fn new(store: &mut ParamStore, path: &str, in_ch: usize, out_ch: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::same3(store, &join(path, "conv"), in_ch, out_ch)?,
            bn: BatchNorm2d::new(store, &join(path, "bn"), out_ch)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(self.bn.forward(&self.conv.forward(x)?, mode)?.relu()?)
    }
}
