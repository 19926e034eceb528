use rand::Rng;

use super::{he_kernel, named_kernel};
use crate::tensor::{ConvKernel, Element, Result, Shape, Tensor, TensorError};

/// Squeeze-and-excitation: global pooling, a `C → C/r → C` bottleneck of
/// 1×1 maps, and a sigmoid producing one weight in `(0, 1)` per channel.
#[derive(Debug, Clone)]
pub struct SeBlock<T: Element = f32> {
    pub reduce: ConvKernel<T>,
    pub expand: ConvKernel<T>,
    pub ratio: usize,
    pub slope: T,
}

impl<T: Element> SeBlock<T> {
    pub fn new(reduce: ConvKernel<T>, expand: ConvKernel<T>, ratio: usize, slope: T) -> Result<Self> {
        let c = expand.out_channels();
        let hidden = reduce.out_channels();
        let consistent = reduce.in_channels() == c
            && expand.in_channels() == hidden
            && reduce.size() == 1
            && expand.size() == 1
            && ratio > 0
            && c.is_multiple_of(ratio)
            && hidden == c / ratio;
        if !consistent {
            return Err(TensorError::Invalid(format!(
                "SE block maps {} → {} → {} with ratio {ratio}; expected C → C/r → C with C divisible by r",
                reduce.in_channels(),
                hidden,
                c
            )));
        }
        Ok(Self {
            reduce,
            expand,
            ratio,
            slope,
        })
    }

    pub fn init<R: Rng + ?Sized>(channels: usize, ratio: usize, slope: f64, rng: &mut R) -> Result<Self> {
        if ratio == 0 || !channels.is_multiple_of(ratio) {
            return Err(TensorError::Invalid(format!(
                "SE ratio {ratio} does not divide {channels} channels"
            )));
        }
        let hidden = channels / ratio;
        let reduce = he_kernel(hidden, channels, 1, 1, slope, rng)?;
        let expand = he_kernel(channels, hidden, 1, 1, slope, rng)?;
        Self::new(reduce, expand, ratio, T::from_f64_lossy(slope))
    }

    pub fn channels(&self) -> usize {
        self.expand.out_channels()
    }

    /// Per-channel weights `(N, C, 1, 1)`.
    pub fn channel_weights(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        if features.shape().c() != self.channels() {
            return Err(TensorError::ShapeMismatch {
                op: "se_forward",
                left: features.shape(),
                right: Shape::new(1, self.channels(), 1, 1),
            });
        }
        let squeezed = features.global_avg_pool();
        let hidden = self.reduce.forward(&squeezed)?.leaky_relu(self.slope);
        Ok(self.expand.forward(&hidden)?.sigmoid())
    }

    pub fn forward(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        features.mul(&self.channel_weights(features)?)
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        let mut p = self.reduce.params();
        p.extend(self.expand.params());
        p
    }

    pub(crate) fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        named_kernel(&format!("{prefix}.reduce"), &self.reduce, out);
        named_kernel(&format!("{prefix}.expand"), &self.expand, out);
    }
}
