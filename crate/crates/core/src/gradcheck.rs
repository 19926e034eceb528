//! Central finite-difference verification of analytic gradients.
//!
//! Only forward evaluations are used on the numeric side, so the check is
//! independent of every backward rule it audits.

use rand::Rng;

use crate::tensor::{Result, Tensor};

/// Relative error of `analytic` against `numeric`, with an absolute floor so
/// vanishing gradients do not divide by zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central differences at two step sizes that disagree by more than rounding
/// and curvature allow. The absolute floor keeps rounding noise on
/// near-zero gradients from being mistaken for a kink.
fn straddles_kink(coarse: f64, fine: f64) -> bool {
    (coarse - fine).abs() > 1e-5 * coarse.abs().max(fine.abs()).max(1e-4)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub param: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
    /// Draws discarded because the difference stencil straddled a kink of a
    /// piecewise-linear activation (see [`check`]).
    pub kinks: usize,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }

    pub fn passes(&self, tol: f64) -> bool {
        !self.probes.is_empty() && self.max_rel_err() < tol
    }
}

/// Compares backward-pass gradients of `loss` with central differences on
/// `samples` parameter elements drawn uniformly (with replacement) from all
/// elements of `params`.
///
/// Leaky ReLU is not differentiable at zero. When the stencil `±step`
/// straddles such a point the central difference is meaningless, which shows
/// up as disagreement between the differences at `step` and `step / 2`
/// (for a smooth loss they agree to `O(step²)` up to rounding). Such draws are counted in
/// [`GradCheckReport::kinks`] and replaced by fresh draws, at most `samples`
/// times in total.
pub fn check<R, F>(params: &[Tensor<f64>], loss: F, samples: usize, step: f64, rng: &mut R) -> Result<GradCheckReport>
where
    R: Rng + ?Sized,
    F: Fn() -> Result<Tensor<f64>>,
{
    params.iter().for_each(Tensor::zero_grad);
    loss()?.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let total: usize = params.iter().map(Tensor::numel).sum();
    let mut report = GradCheckReport::default();
    if total == 0 {
        return Ok(report);
    }
    let central = |p: &Tensor<f64>, element: usize, h: f64| -> Result<f64> {
        let original = p.data()[element];
        p.update_data(|d| d[element] = original + h);
        let plus = loss()?.item();
        p.update_data(|d| d[element] = original - h);
        let minus = loss()?.item();
        p.update_data(|d| d[element] = original);
        Ok((plus - minus) / (2.0 * h))
    };
    while report.probes.len() < samples {
        let mut flat = rng.random_range(0..total);
        let mut param = 0;
        while flat >= params[param].numel() {
            flat -= params[param].numel();
            param += 1;
        }
        let element = flat;
        let p = &params[param];
        let numeric = central(p, element, step)?;
        if report.kinks < samples && straddles_kink(numeric, central(p, element, step / 2.0)?) {
            report.kinks += 1;
            continue;
        }
        let a = analytic[param][element];
        report.probes.push(Probe {
            param,
            element,
            analytic: a,
            numeric,
            rel_err: relative_error(a, numeric),
        });
    }
    Ok(report)
}
