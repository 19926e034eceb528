//! Composite layers: squeeze-and-excitation, conv + activation + SE, and the
//! convolutional recurrent units carrying state between stages.

mod layer;
mod recurrent;
mod se;

use rand::Rng;

use crate::tensor::{ConvKernel, Element, Result, Shape, Tensor};

pub use layer::{conv_se_layer, ConvSeLayer};
pub use recurrent::{LayerState, RecurrentKind, RecurrentLayer, RecurrentUnit, StageState};
pub use se::SeBlock;

/// He-initialised weight tensor `(out, in, k, k)` for a leaky-ReLU network.
pub fn he_weight<T: Element, R: Rng + ?Sized>(out: usize, inp: usize, k: usize, slope: f64, rng: &mut R) -> Tensor<T> {
    let fan_in = (inp * k * k) as f64;
    let std = (2.0 / ((1.0 + slope * slope) * fan_in)).sqrt();
    Tensor::randn(Shape::new(out, inp, k, k), std, rng).into_param()
}

pub fn zero_bias<T: Element>(out: usize) -> Tensor<T> {
    Tensor::zeros(Shape::new(out, 1, 1, 1)).into_param()
}

/// He-initialised kernel with zero bias.
pub fn he_kernel<T: Element, R: Rng + ?Sized>(
    out: usize,
    inp: usize,
    k: usize,
    dilation: usize,
    slope: f64,
    rng: &mut R,
) -> Result<ConvKernel<T>> {
    ConvKernel::new(he_weight(out, inp, k, slope, rng), Some(zero_bias(out)), dilation)
}

/// Parameters of a kernel under a dotted name prefix.
pub(crate) fn named_kernel<T: Element>(prefix: &str, k: &ConvKernel<T>, out: &mut Vec<(String, Tensor<T>)>) {
    out.push((format!("{prefix}.weight"), k.weight.clone()));
    if let Some(b) = &k.bias {
        out.push((format!("{prefix}.bias"), b.clone()));
    }
}

/// Weight-tensor element count (biases excluded).
pub trait WeightCount {
    fn weight_param_count(&self) -> usize;
}

impl<T: Element> WeightCount for ConvKernel<T> {
    fn weight_param_count(&self) -> usize {
        self.weight_count()
    }
}
