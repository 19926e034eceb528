use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Framework, RescanConfig};
use crate::error::{Error, Result};
use crate::nn::{he_kernel, named_kernel, ConvSeLayer, LayerState, RecurrentLayer, StageState};
use crate::tensor::{ConvKernel, Element, Tensor};

/// One 3×3 layer of the body: stateless, or recurrent across stages.
#[derive(Debug, Clone)]
pub enum BodyLayer<T: Element = f32> {
    Plain(ConvSeLayer<T>),
    Recurrent(RecurrentLayer<T>),
}

impl<T: Element> BodyLayer<T> {
    pub fn dilation(&self) -> usize {
        match self {
            BodyLayer::Plain(l) => l.dilation(),
            BodyLayer::Recurrent(l) => l.dilation(),
        }
    }

    fn forward(&self, x: &Tensor<T>, prev: Option<&LayerState<T>>) -> Result<LayerState<T>> {
        Ok(match self {
            BodyLayer::Plain(l) => LayerState { h: l.forward(x)?, c: None },
            BodyLayer::Recurrent(l) => l.forward(x, prev)?,
        })
    }

    fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        match self {
            BodyLayer::Plain(l) => l.named(prefix, out),
            BodyLayer::Recurrent(l) => l.named(prefix, out),
        }
    }
}

/// Output of a multi-stage pass.
#[derive(Debug, Clone)]
pub struct DerainResult<T: Element = f32> {
    /// What each stage predicted: the stage residual `R_s` for the iter and
    /// additive frameworks, the whole-streak estimate for the full one.
    pub stage_preds: Vec<Tensor<T>>,
    /// Final streak estimate `R`.
    pub streaks: Tensor<T>,
    /// Background estimate `O − R`.
    pub background: Tensor<T>,
    /// Hidden state after every stage, when requested.
    pub states: Option<Vec<StageState<T>>>,
}

/// The deraining network: body layers `L_0 … L_{d−2}` followed by a 1×1
/// linear decoder, optionally unrolled over several stages.
#[derive(Debug, Clone)]
pub struct DerainNet<T: Element = f32> {
    pub config: RescanConfig,
    pub body: Vec<BodyLayer<T>>,
    pub decoder: ConvKernel<T>,
}

impl<T: Element> DerainNet<T> {
    pub fn init<R: Rng + ?Sized>(config: &RescanConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let s = &config.scan;
        let mut body = Vec::with_capacity(s.depth - 1);
        for j in 0..s.depth - 1 {
            let inp = if j == 0 { s.in_channels } else { s.width };
            let dil = s.dilation(j);
            body.push(match config.unit {
                Some(kind) => BodyLayer::Recurrent(RecurrentLayer::init(
                    kind, inp, s.width, dil, s.use_se, s.se_ratio, s.slope, rng,
                )?),
                None => BodyLayer::Plain(ConvSeLayer::init(inp, s.width, dil, s.use_se, s.se_ratio, s.slope, rng)?),
            });
        }
        let decoder = he_kernel(s.out_channels, s.width, 1, 1, s.slope, rng)?;
        Ok(Self {
            config: config.clone(),
            body,
            decoder,
        })
    }

    /// Parameters in a fixed order with dotted names.
    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (j, layer) in self.body.iter().enumerate() {
            layer.named(&format!("layers.{j}"), &mut out);
        }
        named_kernel("decoder", &self.decoder, &mut out);
        out
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(Tensor::numel).sum()
    }

    /// Copy of the network in another precision.
    pub fn cast<U: Element>(&self) -> Result<DerainNet<U>> {
        let target = DerainNet::<U>::init_zero(&self.config)?;
        for ((_, src), (_, dst)) in self.named_params().iter().zip(target.named_params()) {
            let v: Vec<U> = src.data().iter().map(|x| U::from_f64_lossy(x.to_f64_lossy())).collect();
            dst.set_data(&v)?;
        }
        Ok(target)
    }

    /// Network of the given architecture with every parameter zero.
    pub fn init_zero(config: &RescanConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::from_seed([0; 32]);
        let net = Self::init(config, &mut rng)?;
        for p in net.params() {
            p.update_data(|d| d.fill(T::zero()));
        }
        Ok(net)
    }

    /// One pass of the network over `input`, threading per-layer state.
    pub fn stage(&self, input: &Tensor<T>, prev: Option<&StageState<T>>) -> Result<(Tensor<T>, StageState<T>)> {
        let shape = input.shape();
        if shape.c() != self.config.scan.in_channels {
            return Err(Error::Config(format!(
                "input {shape} has {} channels, model expects {}",
                shape.c(),
                self.config.scan.in_channels
            )));
        }
        let mut x = input.clone();
        let mut state = StageState {
            layers: Vec::with_capacity(self.body.len()),
        };
        for (j, layer) in self.body.iter().enumerate() {
            let prev_j = prev.and_then(|p| p.layers.get(j)).and_then(Option::as_ref);
            let out = layer.forward(&x, prev_j)?;
            x = out.h.clone();
            state.layers.push(matches!(layer, BodyLayer::Recurrent(_)).then_some(out));
        }
        Ok((self.decoder.forward(&x)?, state))
    }

    /// Single-stage streak prediction from a zero state.
    pub fn scan_forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.stage(input, None)?.0)
    }

    /// Runs all configured stages under the configured framework.
    pub fn rescan_forward(&self, rainy: &Tensor<T>, keep_states: bool) -> Result<DerainResult<T>> {
        let cfg = &self.config;
        let mut stage_preds = Vec::with_capacity(cfg.stages);
        let mut states = Vec::new();
        let mut prev: Option<StageState<T>> = None;
        let mut current = rainy.clone();
        let mut cumulative: Option<Tensor<T>> = None;
        for s in 0..cfg.stages {
            let carried = match cfg.framework {
                Framework::Iter => None,
                _ => prev.as_ref(),
            };
            let (pred, state) = self.stage(&current, carried)?;
            let removed = match cfg.framework {
                Framework::Iter | Framework::Additive => {
                    let total = match &cumulative {
                        Some(c) => c.add(&pred)?,
                        None => pred.clone(),
                    };
                    cumulative = Some(total.clone());
                    total
                }
                Framework::Full => pred.clone(),
            };
            if s + 1 < cfg.stages {
                current = match cfg.framework {
                    Framework::Iter => current.sub(&pred)?,
                    Framework::Additive | Framework::Full => rainy.sub(&removed)?,
                };
            }
            stage_preds.push(pred);
            if keep_states {
                states.push(state.clone());
            }
            prev = Some(state);
        }
        let streaks = match cfg.framework {
            Framework::Full => stage_preds.last().cloned().expect("at least one stage"),
            _ => cumulative.expect("at least one stage"),
        };
        let background = rainy.sub(&streaks)?;
        Ok(DerainResult {
            stage_preds,
            streaks,
            background,
            states: keep_states.then_some(states),
        })
    }
}
