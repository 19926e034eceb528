//! Self-checks shared by the command line and the acceptance suite:
//! finite-difference gradient audits, recurrent-unit weight ratios and the
//! receptive-field probe.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gradcheck::{self, GradCheckReport};
use crate::model::{empirical_footprint, framework_loss, receptive_field, DerainNet, Footprint, RescanConfig, ScanConfig};
use crate::nn::{he_kernel, RecurrentKind, RecurrentUnit, WeightCount};
use crate::tensor::{Shape, Tensor, TensorError};

/// Finite-difference step used by every audit.
pub const GRAD_STEP: f64 = 1e-5;

fn to_tensor_error(e: Error) -> TensorError {
    match e {
        Error::Tensor(t) => t,
        other => TensorError::Invalid(other.to_string()),
    }
}

/// Gradient check of every differentiable tensor operation in `f64`, each
/// reduced to a scalar through a fixed random weighting.
pub fn op_gradient_suite(samples: usize, seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = Shape::new(2, 3, 5, 6);
    let param = |s: Shape, rng: &mut ChaCha8Rng| Tensor::<f64>::randn(s, 1.0, rng).into_param();
    let a = param(shape, &mut rng);
    let b = param(shape, &mut rng);
    let per_channel = param(Shape::new(2, 3, 1, 1), &mut rng);
    let weight = param(Shape::new(4, 3, 3, 3), &mut rng);
    let bias = param(Shape::new(4, 1, 1, 1), &mut rng);
    let probe = |s: Shape, rng: &mut ChaCha8Rng| Tensor::<f64>::randn(s, 1.0, rng);
    let up = probe(shape, &mut rng);
    let up_conv = probe(Shape::new(2, 4, 5, 6), &mut rng);
    let up_pool = probe(Shape::new(2, 3, 1, 1), &mut rng);
    let up_slice = probe(Shape::new(2, 2, 5, 6), &mut rng);
    let up_cat = probe(Shape::new(4, 3, 5, 6), &mut rng);
    // keep the leaky-ReLU probe points away from its kink
    let away = param(shape, &mut rng);
    away.update_data(|d| d.iter_mut().for_each(|v| *v += 0.2 * v.signum()));

    let weighted = |t: Result<Tensor<f64>, TensorError>, w: &Tensor<f64>| t?.mul(w).map(|t| t.sum());
    type Case<'a> = (&'static str, Vec<Tensor<f64>>, Box<dyn Fn() -> Result<Tensor<f64>, TensorError> + 'a>);
    let cases: Vec<Case> = vec![
        ("conv2d", vec![a.clone(), weight.clone(), bias.clone()], Box::new(|| weighted(a.conv2d(&weight, Some(&bias), 1), &up_conv))),
        ("conv2d dilated", vec![a.clone(), weight.clone()], Box::new(|| weighted(a.conv2d(&weight, None, 2), &up_conv))),
        ("add", vec![a.clone(), b.clone()], Box::new(|| weighted(a.add(&b), &up))),
        ("sub", vec![a.clone(), b.clone()], Box::new(|| weighted(a.sub(&b), &up))),
        ("mul", vec![a.clone(), b.clone()], Box::new(|| weighted(a.mul(&b), &up))),
        ("mul per channel", vec![a.clone(), per_channel.clone()], Box::new(|| weighted(a.mul(&per_channel), &up))),
        ("one_minus", vec![a.clone()], Box::new(|| weighted(Ok(a.one_minus()), &up))),
        ("leaky_relu", vec![away.clone()], Box::new(|| weighted(Ok(away.leaky_relu(0.2)), &up))),
        ("sigmoid", vec![a.clone()], Box::new(|| weighted(Ok(a.sigmoid()), &up))),
        ("tanh", vec![a.clone()], Box::new(|| weighted(Ok(a.tanh()), &up))),
        ("global_avg_pool", vec![a.clone()], Box::new(|| weighted(Ok(a.global_avg_pool()), &up_pool))),
        ("mse_loss", vec![a.clone(), b.clone()], Box::new(|| a.mse_loss(&b))),
        ("sum", vec![a.clone()], Box::new(|| Ok(a.mul(&a)?.sum()))),
        ("slice_channels", vec![a.clone()], Box::new(|| weighted(a.slice_channels(1, 2), &up_slice))),
        ("cat0", vec![a.clone(), b.clone()], Box::new(|| weighted(Tensor::cat0(&[&a, &b]), &up_cat))),
    ];
    let mut out = Vec::with_capacity(cases.len());
    for (name, params, loss) in cases {
        let seed = rng.random();
        let report = gradcheck::check(&params, loss, samples, GRAD_STEP, &mut ChaCha8Rng::seed_from_u64(seed))?;
        out.push((name, report));
    }
    Ok(out)
}

/// Gradient check of the whole multi-stage network and its framework loss
/// on a random 2×3×8×8 batch, in `f64`.
pub fn model_gradient_check(config: &RescanConfig, samples: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = DerainNet::<f64>::init(config, &mut rng)?;
    let shape = Shape::new(2, config.scan.in_channels, 8, 8);
    let rainy = Tensor::<f64>::rand_uniform(shape, 0.0, 1.0, &mut rng);
    let target = Tensor::<f64>::randn(Shape::new(2, config.scan.out_channels, 8, 8), 0.3, &mut rng);
    let loss = || {
        let res = net.rescan_forward(&rainy, false).map_err(to_tensor_error)?;
        framework_loss(config.framework, &res.stage_preds, &target).map_err(to_tensor_error)
    };
    Ok(gradcheck::check(&net.params(), loss, samples, GRAD_STEP, &mut rng)?)
}

/// Weight count of one recurrent unit against a plain 3×3 convolution of
/// the same widths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamAudit {
    pub unit: RecurrentKind,
    pub plain_weights: usize,
    pub unit_weights: usize,
    /// Multiple usually quoted for the unit (2×, 3×, 4×).
    pub stated_ratio: usize,
}

impl ParamAudit {
    pub fn ratio(&self) -> f64 {
        self.unit_weights as f64 / self.plain_weights as f64
    }

    pub fn matches_stated(&self) -> bool {
        self.unit_weights == self.stated_ratio * self.plain_weights
    }
}

/// Counts the weights of a `channels → channels` unit with 3×3 `W` and `U`
/// kernels against a plain 3×3 convolution.
pub fn param_audit(unit: RecurrentKind, channels: usize) -> Result<ParamAudit> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let plain = he_kernel::<f32, _>(channels, channels, 3, 1, 0.2, &mut rng)?;
    let cell = RecurrentUnit::<f32>::init(unit, channels, channels, 1, 0.2, &mut rng)?;
    Ok(ParamAudit {
        unit,
        plain_weights: plain.weight_param_count(),
        unit_weights: cell.weight_param_count(),
        stated_ratio: match unit {
            RecurrentKind::Rnn => 2,
            RecurrentKind::Gru => 3,
            RecurrentKind::Lstm => 4,
        },
    })
}

/// Closed-form receptive field beside the measured footprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RfCheck {
    pub depth: usize,
    pub plain: bool,
    /// Side of the dilated network's field, `2^(d−2) + 3`.
    pub analytic: usize,
    /// Side the probed network should show: the dilated formula, or `2d − 1`
    /// when every dilation is one.
    pub expected: usize,
    pub empirical: Footprint,
}

impl RfCheck {
    pub fn passes(&self) -> bool {
        self.empirical.height == self.expected && self.empirical.width == self.expected
    }
}

/// Measures the footprint of a depth-`depth` network, dilated or (`plain`)
/// with every dilation one.
pub fn rf_check(depth: usize, plain: bool) -> Result<RfCheck> {
    let analytic = receptive_field(depth)?;
    let scan = ScanConfig {
        depth,
        all_dilation_one: plain,
        ..ScanConfig::default()
    };
    scan.validate()?;
    Ok(RfCheck {
        depth,
        plain,
        analytic,
        expected: if plain { 2 * depth - 1 } else { analytic },
        empirical: empirical_footprint(&scan)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Framework;

    #[test]
    fn every_op_passes_its_gradient_check() {
        for (name, report) in op_gradient_suite(30, 1).unwrap() {
            assert!(report.passes(1e-6), "{name}: {:?}", report.worst());
        }
    }

    #[test]
    fn model_check_covers_a_recurrent_network() {
        let cfg = RescanConfig {
            scan: ScanConfig {
                depth: 4,
                width: 4,
                ..ScanConfig::default()
            },
            stages: 2,
            unit: Some(RecurrentKind::Rnn),
            framework: Framework::Full,
        };
        let report = model_gradient_check(&cfg, 20, 3).unwrap();
        assert!(report.passes(1e-4), "{:?}", report.worst());
    }

    #[test]
    fn weight_ratios_of_the_standard_units() {
        let rnn = param_audit(RecurrentKind::Rnn, 8).unwrap();
        assert_eq!((rnn.plain_weights, rnn.unit_weights), (576, 1152));
        assert!(rnn.matches_stated());
        assert_eq!(param_audit(RecurrentKind::Gru, 8).unwrap().ratio(), 6.0);
        assert_eq!(param_audit(RecurrentKind::Lstm, 8).unwrap().ratio(), 8.0);
    }

    #[test]
    fn receptive_field_checks() {
        let rf = rf_check(6, false).unwrap();
        assert!(rf.passes() && rf.analytic == 19);
        let plain = rf_check(7, true).unwrap();
        assert!(plain.passes());
        assert_eq!((plain.analytic, plain.expected), (35, 13));
        assert!(plain.empirical.height < 35);
        assert!(rf_check(3, false).is_err());
    }
}
