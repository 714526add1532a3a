use candle_core::Tensor;

use super::layers::{sigmoid, Conv2d, ConvBnRelu, Mode};
use super::params::{join, ParamStore};
use super::resample::resize_bilinear;
use crate::error::Result;

/// Logits are resized to full resolution before the sigmoid, so the
/// probability map stays sharp where the logit field crosses zero.
fn full_resolution_probability(logits: &Tensor, size: usize) -> Result<Tensor> {
    sigmoid(&resize_bilinear(logits, size, size)?)
}

/// Per-pixel likelihood of having been scribbled.
pub struct ScribbleHead {
    body: ConvBnRelu,
    out: Conv2d,
}

impl ScribbleHead {
    pub fn new(store: &mut ParamStore, path: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            body: ConvBnRelu::new(store, &join(path, "body"), channels, channels)?,
            out: Conv2d::pointwise(store, &join(path, "out"), channels, 1)?,
        })
    }

    pub fn forward(&self, fused: &Tensor, size: usize, mode: Mode) -> Result<Tensor> {
        full_resolution_probability(&self.out.forward(&self.body.forward(fused, mode)?)?, size)
    }
}

struct DecoderStage {
    first: ConvBnRelu,
    second: ConvBnRelu,
    head: Conv2d,
}

impl DecoderStage {
    fn new(store: &mut ParamStore, path: &str, in_ch: usize, width: usize) -> Result<Self> {
        Ok(Self {
            first: ConvBnRelu::new(store, &join(path, "conv1"), in_ch, width)?,
            second: ConvBnRelu::new(store, &join(path, "conv2"), width, width)?,
            head: Conv2d::pointwise(store, &join(path, "head"), width, 1)?,
        })
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.second.forward(&self.first.forward(x, mode)?, mode)
    }
}

/// Bottom-up decoder with one side output per level.
pub struct Decoder {
    /// Index `i - 1` holds the stage for level `i`.
    stages: Vec<DecoderStage>,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, path: &str, hf_channels: usize, width: usize) -> Result<Self> {
        let stages = (1..=3u32)
            .map(|i| {
                let own = hf_channels << i;
                let in_ch = if i == 3 { own } else { own + width };
                DecoderStage::new(store, &join(path, &format!("stage{i}")), in_ch, width)
            })
            .collect::<Result<_>>()?;
        Ok(Self { stages })
    }

    /// Probability maps for levels 1, 2, 3 at `size x size`.
    pub fn forward(&self, fused: &[Tensor; 3], size: usize, mode: Mode) -> Result<[Tensor; 3]> {
        let mut outputs: [Option<Tensor>; 3] = [None, None, None];
        let mut carried: Option<Tensor> = None;
        for level in (0..3).rev() {
            let input = match &carried {
                None => fused[level].clone(),
                Some(prev) => {
                    let (_, _, h, w) = fused[level].dims4()?;
                    Tensor::cat(&[&resize_bilinear(prev, h, w)?, &fused[level]], 1)?
                }
            };
            let features = self.stages[level].forward(&input, mode)?;
            let logits = self.stages[level].head.forward(&features)?;
            outputs[level] = Some(full_resolution_probability(&logits, size)?);
            carried = Some(features);
        }
        Ok(outputs.map(|o| o.expect("every level decoded")))
    }
}
