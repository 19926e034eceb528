//! Convolutional recurrent units. Input-to-state kernels `W` carry the
//! layer's dilation; state-to-state kernels `U` are ordinary 3×3. A missing
//! previous state is the all-zero state, for which the `U` terms vanish and
//! are skipped.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::{he_weight, zero_bias, SeBlock};
use crate::tensor::{Element, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecurrentKind {
    Rnn,
    Gru,
    Lstm,
}

impl RecurrentKind {
    pub const ALL: [RecurrentKind; 3] = [RecurrentKind::Rnn, RecurrentKind::Gru, RecurrentKind::Lstm];

    /// Number of gate/candidate maps; each has its own `W` and `U` kernel.
    pub fn gates(self) -> usize {
        match self {
            RecurrentKind::Rnn => 1,
            RecurrentKind::Gru => 3,
            RecurrentKind::Lstm => 4,
        }
    }

    fn gate_names(self) -> &'static [&'static str] {
        match self {
            RecurrentKind::Rnn => &["h"],
            RecurrentKind::Gru => &["z", "r", "n"],
            RecurrentKind::Lstm => &["i", "f", "g", "o"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RecurrentKind::Rnn => "rnn",
            RecurrentKind::Gru => "gru",
            RecurrentKind::Lstm => "lstm",
        }
    }
}

impl fmt::Display for RecurrentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RecurrentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rnn" | "convrnn" => Ok(RecurrentKind::Rnn),
            "gru" | "convgru" => Ok(RecurrentKind::Gru),
            "lstm" | "convlstm" => Ok(RecurrentKind::Lstm),
            other => Err(format!("unknown recurrent unit '{other}' (expected rnn, gru or lstm)")),
        }
    }
}

/// Per-gate kernels of one convolutional recurrent unit.
#[derive(Debug, Clone)]
pub struct RecurrentUnit<T: Element = f32> {
    pub kind: RecurrentKind,
    /// Input-to-state kernels `(hidden, in, 3, 3)`, one per gate.
    pub w: Vec<Tensor<T>>,
    /// State-to-state kernels `(hidden, hidden, 3, 3)`, one per gate.
    pub u: Vec<Tensor<T>>,
    /// Gate biases `(hidden, 1, 1, 1)`.
    pub b: Vec<Tensor<T>>,
    pub dilation: usize,
}

/// Hidden maps of one recurrent layer after a stage.
#[derive(Debug, Clone)]
pub struct LayerState<T: Element = f32> {
    pub h: Tensor<T>,
    /// Cell map, ConvLSTM only.
    pub c: Option<Tensor<T>>,
}

/// Hidden state of every layer after a stage (`None` for stateless layers).
#[derive(Debug, Clone, Default)]
pub struct StageState<T: Element = f32> {
    pub layers: Vec<Option<LayerState<T>>>,
}

impl<T: Element> RecurrentUnit<T> {
    pub fn new(kind: RecurrentKind, w: Vec<Tensor<T>>, u: Vec<Tensor<T>>, b: Vec<Tensor<T>>, dilation: usize) -> Result<Self> {
        let g = kind.gates();
        if w.len() != g || u.len() != g || b.len() != g {
            return Err(TensorError::Invalid(format!(
                "{kind} needs {g} kernels per group, got W={} U={} b={}",
                w.len(),
                u.len(),
                b.len()
            )));
        }
        let ws = w[0].shape();
        let hidden = ws.n();
        for t in &w {
            crate::tensor::conv::check_weight(t.shape(), dilation)?;
            if t.shape() != ws || ws.h() != 3 {
                return Err(TensorError::ShapeMismatch {
                    op: "recurrent W",
                    left: ws,
                    right: t.shape(),
                });
            }
        }
        for t in &u {
            let s = t.shape();
            if s.0 != [hidden, hidden, 3, 3] {
                return Err(TensorError::ShapeMismatch {
                    op: "recurrent U",
                    left: ws,
                    right: s,
                });
            }
        }
        for t in &b {
            if t.numel() != hidden {
                return Err(TensorError::ShapeMismatch {
                    op: "recurrent bias",
                    left: ws,
                    right: t.shape(),
                });
            }
        }
        Ok(Self {
            kind,
            w,
            u,
            b,
            dilation,
        })
    }

    pub fn init<R: Rng + ?Sized>(
        kind: RecurrentKind,
        inp: usize,
        hidden: usize,
        dilation: usize,
        slope: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let g = kind.gates();
        let w = (0..g).map(|_| he_weight(hidden, inp, 3, slope, rng)).collect();
        let u = (0..g).map(|_| he_weight(hidden, hidden, 3, slope, rng)).collect();
        let b = (0..g).map(|_| zero_bias(hidden)).collect();
        Self::new(kind, w, u, b, dilation)
    }

    pub fn hidden(&self) -> usize {
        self.w[0].shape().n()
    }

    pub fn in_channels(&self) -> usize {
        self.w[0].shape().c()
    }

    pub fn weight_param_count(&self) -> usize {
        self.w.iter().chain(&self.u).map(Tensor::numel).sum()
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        self.w.iter().chain(&self.u).chain(&self.b).cloned().collect()
    }

    pub(crate) fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        for (i, gate) in self.kind.gate_names().iter().enumerate() {
            out.push((format!("{prefix}.w_{gate}"), self.w[i].clone()));
            out.push((format!("{prefix}.u_{gate}"), self.u[i].clone()));
            out.push((format!("{prefix}.b_{gate}"), self.b[i].clone()));
        }
    }

    fn expect(&self, kind: RecurrentKind) -> Result<()> {
        if self.kind != kind {
            return Err(TensorError::Invalid(format!("{} step called on a {} unit", kind, self.kind)));
        }
        Ok(())
    }

    /// Input contributions `W∗x + b` of the listed gates, computed as one
    /// convolution and split per gate.
    fn input_gates(&self, x: &Tensor<T>, gates: &[usize]) -> Result<Vec<Tensor<T>>> {
        let w = Tensor::cat0(&gates.iter().map(|g| &self.w[*g]).collect::<Vec<_>>())?;
        let b = Tensor::cat0(&gates.iter().map(|g| &self.b[*g]).collect::<Vec<_>>())?;
        let all = x.conv2d(&w, Some(&b), self.dilation)?;
        self.split(&all, gates.len())
    }

    /// `U∗h` for the first `count` gates.
    fn state_gates(&self, h: &Tensor<T>, count: usize) -> Result<Vec<Tensor<T>>> {
        let u = Tensor::cat0(&self.u[..count].iter().collect::<Vec<_>>())?;
        let all = h.conv2d(&u, None, 1)?;
        self.split(&all, count)
    }

    fn split(&self, all: &Tensor<T>, count: usize) -> Result<Vec<Tensor<T>>> {
        let c = self.hidden();
        if count == 1 {
            return Ok(vec![all.clone()]);
        }
        (0..count).map(|g| all.slice_channels(g * c, c)).collect()
    }

    fn check_state(&self, x: &Tensor<T>, h: &Tensor<T>) -> Result<()> {
        let (xs, hs) = (x.shape(), h.shape());
        if hs.c() != self.hidden() || hs.n() != xs.n() || hs.h() != xs.h() || hs.w() != xs.w() {
            return Err(TensorError::ShapeMismatch {
                op: "recurrent state",
                left: xs,
                right: hs,
            });
        }
        Ok(())
    }

    /// `tanh(W∗x + U∗h + b)`.
    pub fn convrnn_step(&self, x: &Tensor<T>, h_prev: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        self.expect(RecurrentKind::Rnn)?;
        let mut pre = self.input_gates(x, &[0])?.remove(0);
        if let Some(h) = h_prev {
            self.check_state(x, h)?;
            pre = pre.add(&self.state_gates(h, 1)?[0])?;
        }
        Ok(pre.tanh())
    }

    /// Gated update `(1 − z) ⊙ h + z ⊙ n` with reset-gated candidate `n`.
    pub fn convgru_step(&self, x: &Tensor<T>, h_prev: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        self.expect(RecurrentKind::Gru)?;
        let Some(h) = h_prev else {
            // zero state: (1 − z) ⊙ 0 + z ⊙ tanh(W_n∗x + b_n); r is unused
            let gx = self.input_gates(x, &[0, 2])?;
            return gx[0].sigmoid().mul(&gx[1].tanh());
        };
        let gx = self.input_gates(x, &[0, 1, 2])?;
        self.check_state(x, h)?;
        let gh = self.state_gates(h, 2)?;
        let z = gx[0].add(&gh[0])?.sigmoid();
        let r = gx[1].add(&gh[1])?.sigmoid();
        let reset = r.mul(h)?.conv2d(&self.u[2], None, 1)?;
        let n = gx[2].add(&reset)?.tanh();
        z.one_minus().mul(h)?.add(&z.mul(&n)?)
    }

    /// Four-gate ConvLSTM. Returns `(h, c)`.
    pub fn convlstm_step(
        &self,
        x: &Tensor<T>,
        h_prev: Option<&Tensor<T>>,
        c_prev: Option<&Tensor<T>>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        self.expect(RecurrentKind::Lstm)?;
        // with a zero cell the forget gate multiplies zero and is skipped
        let gates: &[usize] = if c_prev.is_some() { &[0, 1, 2, 3] } else { &[0, 2, 3] };
        let mut pre = self.input_gates(x, gates)?;
        if let Some(h) = h_prev {
            self.check_state(x, h)?;
            let u = Tensor::cat0(&gates.iter().map(|g| &self.u[*g]).collect::<Vec<_>>())?;
            let gh = self.split(&h.conv2d(&u, None, 1)?, gates.len())?;
            for (p, g) in pre.iter_mut().zip(&gh) {
                *p = p.add(g)?;
            }
        }
        let last = pre.len() - 1;
        let i = pre[0].sigmoid();
        let g = pre[last - 1].tanh();
        let o = pre[last].sigmoid();
        let mut c = i.mul(&g)?;
        if let Some(c_prev) = c_prev {
            self.check_state(x, c_prev)?;
            let f = pre[1].sigmoid();
            c = f.mul(c_prev)?.add(&c)?;
        }
        let h = o.mul(&c.tanh())?;
        Ok((h, c))
    }
}

/// A recurrent SCAN layer: unit step, then leaky ReLU and optional SE. The
/// resulting feature map is both the layer output and its carried state.
#[derive(Debug, Clone)]
pub struct RecurrentLayer<T: Element = f32> {
    pub unit: RecurrentUnit<T>,
    pub se: Option<SeBlock<T>>,
    pub slope: T,
}

impl<T: Element> RecurrentLayer<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng + ?Sized>(
        kind: RecurrentKind,
        inp: usize,
        out: usize,
        dilation: usize,
        use_se: bool,
        se_ratio: usize,
        slope: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let unit = RecurrentUnit::init(kind, inp, out, dilation, slope, rng)?;
        let se = use_se.then(|| SeBlock::init(out, se_ratio, slope, rng)).transpose()?;
        Ok(Self {
            unit,
            se,
            slope: T::from_f64_lossy(slope),
        })
    }

    pub fn forward(&self, x: &Tensor<T>, prev: Option<&LayerState<T>>) -> Result<LayerState<T>> {
        let h_prev = prev.map(|s| &s.h);
        let (raw, c) = match self.unit.kind {
            RecurrentKind::Rnn => (self.unit.convrnn_step(x, h_prev)?, None),
            RecurrentKind::Gru => (self.unit.convgru_step(x, h_prev)?, None),
            RecurrentKind::Lstm => {
                let (h, c) = self.unit.convlstm_step(x, h_prev, prev.and_then(|s| s.c.as_ref()))?;
                (h, Some(c))
            }
        };
        let activated = raw.leaky_relu(self.slope);
        let h = match &self.se {
            Some(se) => se.forward(&activated)?,
            None => activated,
        };
        Ok(LayerState { h, c })
    }

    pub fn dilation(&self) -> usize {
        self.unit.dilation
    }

    pub(crate) fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.unit.named(&format!("{prefix}.{}", self.unit.kind), out);
        if let Some(se) = &self.se {
            se.named(&format!("{prefix}.se"), out);
        }
    }
}
