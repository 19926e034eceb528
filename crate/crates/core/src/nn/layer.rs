use rand::Rng;

use super::{he_kernel, named_kernel, SeBlock};
use crate::tensor::{ConvKernel, Element, Result, Tensor};

/// `se(leaky_relu(conv(x)))`, with the SE stage skipped when `se` is `None`.
pub fn conv_se_layer<T: Element>(
    input: &Tensor<T>,
    kernel: &ConvKernel<T>,
    se: Option<&SeBlock<T>>,
    slope: T,
) -> Result<Tensor<T>> {
    let activated = kernel.forward(input)?.leaky_relu(slope);
    match se {
        Some(se) => se.forward(&activated),
        None => Ok(activated),
    }
}

/// A stateless SCAN layer.
#[derive(Debug, Clone)]
pub struct ConvSeLayer<T: Element = f32> {
    pub conv: ConvKernel<T>,
    pub se: Option<SeBlock<T>>,
    pub slope: T,
}

impl<T: Element> ConvSeLayer<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng + ?Sized>(
        inp: usize,
        out: usize,
        dilation: usize,
        use_se: bool,
        se_ratio: usize,
        slope: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let conv = he_kernel(out, inp, 3, dilation, slope, rng)?;
        let se = use_se.then(|| SeBlock::init(out, se_ratio, slope, rng)).transpose()?;
        Ok(Self {
            conv,
            se,
            slope: T::from_f64_lossy(slope),
        })
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        conv_se_layer(input, &self.conv, self.se.as_ref(), self.slope)
    }

    pub fn dilation(&self) -> usize {
        self.conv.dilation
    }

    pub(crate) fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        named_kernel(&format!("{prefix}.conv"), &self.conv, out);
        if let Some(se) = &self.se {
            se.named(&format!("{prefix}.se"), out);
        }
    }
}
