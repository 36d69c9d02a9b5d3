//! Tiny fully-convolutional segmentation network.
//!
//! A stack of same-padded convolutions with ReLU between them; the last
//! layer emits one logit plane per class and spatial size never changes.

mod checkpoint;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use params::{Param, ParamSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ops, LabelMap, Tape, Tensor, Var};

pub const INPUT_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegNetConfig {
    /// Output width of each convolution; the last must equal `num_classes`.
    pub channels: Vec<usize>,
    pub num_classes: usize,
    pub kernel: usize,
    pub init_seed: u64,
    pub init_scale: f64,
}

impl Default for SegNetConfig {
    fn default() -> Self {
        SegNetConfig {
            channels: vec![16, 32, 32, 7],
            num_classes: 7,
            kernel: 3,
            init_seed: 0,
            init_scale: 1.0,
        }
    }
}

impl SegNetConfig {
    pub fn with_classes(channels: &[usize], num_classes: usize) -> Self {
        let mut channels = channels.to_vec();
        channels.push(num_classes);
        SegNetConfig {
            channels,
            num_classes,
            ..SegNetConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.last() != Some(&self.num_classes) {
            return Err(Error::config(format!(
                "last layer width {:?} must equal num_classes {}",
                self.channels.last(),
                self.num_classes
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config(format!("kernel size {} must be odd", self.kernel)));
        }
        if self.channels.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        if self.num_classes < 2 || self.num_classes > 254 {
            return Err(Error::config(format!("num_classes {} outside [2, 254]", self.num_classes)));
        }
        Ok(())
    }

    /// Closed-form scalar parameter count.
    pub fn param_count(&self) -> usize {
        let mut c_in = INPUT_CHANNELS;
        let mut total = 0;
        for &c_out in &self.channels {
            total += c_out * c_in * self.kernel * self.kernel + c_out;
            c_in = c_out;
        }
        total
    }
}

/// Kaiming-normal weights scaled by `init_scale`, zero biases.
pub fn init(config: &SegNetConfig) -> Result<ParamSet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let k = config.kernel;
    let mut params = ParamSet::new();
    let mut c_in = INPUT_CHANNELS;
    for (layer, &c_out) in config.channels.iter().enumerate() {
        let std = config.init_scale * (2.0 / (c_in * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let weight = Tensor::from_fn(&[c_out, c_in, k, k], |_| std * normal.sample(&mut rng));
        params.push(format!("conv{layer}.weight"), weight)?;
        params.push(format!("conv{layer}.bias"), Tensor::zeros(&[c_out]))?;
        c_in = c_out;
    }
    Ok(params)
}

fn layer_pairs(params: &ParamSet) -> Result<usize> {
    if params.is_empty() || params.len() % 2 != 0 {
        return Err(Error::shape(format!(
            "expected (weight, bias) pairs, got {} tensors",
            params.len()
        )));
    }
    Ok(params.len() / 2)
}

/// Inference-only forward pass: `[3, H, W]` image to `[C, H, W]` logits.
pub fn forward(params: &ParamSet, image: &Tensor) -> Result<Tensor> {
    let layers = layer_pairs(params)?;
    check_image(image)?;
    let mut x = image.clone();
    for l in 0..layers {
        let w = params.get(2 * l).expect("pair").value();
        let b = params.get(2 * l + 1).expect("pair").value();
        x = ops::conv2d(&x, w, b)?;
        if l + 1 < layers {
            x = ops::relu(&x);
        }
    }
    Ok(x)
}

fn check_image(image: &Tensor) -> Result<()> {
    let (c, _, _) = image.dims3("segnet input")?;
    if c != INPUT_CHANNELS {
        return Err(Error::shape(format!(
            "segnet input has {c} channels, expected {INPUT_CHANNELS}"
        )));
    }
    Ok(())
}

/// Records every parameter on `tape` as a differentiable leaf.
pub fn record_params(tape: &mut Tape, params: &ParamSet) -> Vec<Var> {
    params.iter().map(|p| tape.leaf(p.value().clone())).collect()
}

/// Tape-recorded forward pass over parameters already on the tape.
pub fn forward_on_tape(tape: &mut Tape, param_vars: &[Var], image: &Tensor) -> Result<Var> {
    if param_vars.is_empty() || param_vars.len() % 2 != 0 {
        return Err(Error::shape("expected (weight, bias) pairs"));
    }
    check_image(image)?;
    let layers = param_vars.len() / 2;
    let mut x = tape.constant(image.clone());
    for l in 0..layers {
        x = tape.conv2d(x, param_vars[2 * l], param_vars[2 * l + 1])?;
        if l + 1 < layers {
            x = tape.relu(x);
        }
    }
    Ok(x)
}

/// Pixel cross-entropy of `params` on one labeled image and its gradient
/// with respect to every parameter, in parameter order.
pub fn loss_and_grads(
    params: &ParamSet,
    image: &Tensor,
    target: &LabelMap,
    weights: Option<&[f64]>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let vars = record_params(&mut tape, params);
    let logits = forward_on_tape(&mut tape, &vars, image)?;
    let loss = tape.pixel_softmax_ce(logits, target, weights)?;
    let value = tape.value(loss).item()?;
    let grads = tape.backward(loss)?;
    let per_param = vars
        .iter()
        .zip(params.iter())
        .map(|(&v, p)| grads.get_or_zeros(v, p.value().len()))
        .collect();
    Ok((value, per_param))
}
