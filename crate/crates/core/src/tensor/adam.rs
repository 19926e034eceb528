use super::{Element, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers, one per parameter.
#[derive(Debug, Clone)]
pub struct AdamState<T: Element = f32> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

/// ADAM with bias correction over a fixed parameter list.
#[derive(Debug)]
pub struct Adam<T: Element = f32> {
    params: Vec<Tensor<T>>,
    config: AdamConfig,
    state: AdamState<T>,
}

impl<T: Element> Adam<T> {
    pub fn new(params: Vec<Tensor<T>>, config: AdamConfig) -> Self {
        let zeros = |p: &Tensor<T>| vec![T::zero(); p.numel()];
        let state = AdamState {
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            step: 0,
        };
        Self { params, config, state }
    }

    pub fn state(&self) -> &AdamState<T> {
        &self.state
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(Tensor::zero_grad);
    }

    /// One update using the gradients currently held by the parameters.
    /// Parameters without a gradient are treated as having zero gradient.
    pub fn step(&mut self, lr: f64) -> Result<()> {
        for (index, p) in self.params.iter().enumerate() {
            let bad = p.with_grad(|g| {
                g.and_then(|g| g.iter().position(|v| !v.is_finite()).map(|e| (e, g[e].to_f64_lossy())))
            });
            if let Some((element, value)) = bad {
                return Err(TensorError::NonFiniteGradient { index, element, value });
            }
        }
        self.state.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.state.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
        let step_size = T::from_f64_lossy(lr / bc1);
        let bc2_sqrt = T::from_f64_lossy(bc2.sqrt());
        let eps = T::from_f64_lossy(eps);
        for (i, p) in self.params.iter().enumerate() {
            let (m, v) = (&mut self.state.m[i], &mut self.state.v[i]);
            p.with_grad(|g| {
                let zero = T::zero();
                p.update_data(|w| {
                    for j in 0..w.len() {
                        let gj = g.map_or(zero, |g| g[j]);
                        m[j] = b1 * m[j] + (T::one() - b1) * gj;
                        v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                        let denom = v[j].sqrt() / bc2_sqrt + eps;
                        w[j] = w[j] - step_size * m[j] / denom;
                    }
                });
            });
        }
        Ok(())
    }
}
