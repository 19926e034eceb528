//! Receptive field of the single-stage network: the closed form and an
//! empirical perturbation probe.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{RescanConfig, ScanConfig};
use super::net::{BodyLayer, DerainNet};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Side length `2^(d−2) + 3` of the square receptive field of a depth-`d`
/// dilated network.
pub fn receptive_field(depth: usize) -> Result<usize> {
    if depth < 4 {
        return Err(Error::Config(format!("receptive field needs depth ≥ 4, got {depth}")));
    }
    if depth > 40 {
        return Err(Error::Config(format!("depth {depth} is unreasonably large")));
    }
    Ok((1usize << (depth - 2)) + 3)
}

/// Height and width of the region of outputs that react to one input pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footprint {
    pub height: usize,
    pub width: usize,
}

/// Measures the receptive field of `scan` by perturbation.
///
/// All 3×3 and decoder weights are made strictly positive and the input is
/// positive, so every activation stays on the linear side of the leaky ReLU
/// and no two paths cancel. The SE maps are zeroed, which pins every channel
/// weight to exactly one half: global pooling would otherwise let every
/// output depend on every pixel. The centre pixel is then raised and the
/// bounding box of outputs that changed at all is reported.
pub fn empirical_footprint(scan: &ScanConfig) -> Result<Footprint> {
    let config = RescanConfig::scan(scan.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let net = DerainNet::<f64>::init(&config, &mut rng)?;
    let positive = |t: &Tensor<f64>, rng: &mut ChaCha8Rng| t.update_data(|d| d.iter_mut().for_each(|v| *v = rng.random_range(0.1..1.0)));
    for layer in &net.body {
        let BodyLayer::Plain(l) = layer else {
            unreachable!("single-stage config has no recurrent layers")
        };
        positive(&l.conv.weight, &mut rng);
        if let Some(se) = &l.se {
            for p in se.params() {
                p.update_data(|d| d.fill(0.0));
            }
        }
    }
    positive(&net.decoder.weight, &mut rng);

    let reach: usize = scan.dilations().iter().take(scan.depth - 1).sum();
    let side = 2 * reach + 9;
    let centre = side / 2;
    let shape = Shape::new(1, scan.in_channels, side, side);
    let base = Tensor::full(shape, 1.0);
    let bumped = Tensor::full(shape, 1.0);
    bumped.update_data(|d| {
        for c in 0..scan.in_channels {
            d[(c * side + centre) * side + centre] = 2.0;
        }
    });
    let a = net.scan_forward(&base)?;
    let b = net.scan_forward(&bumped)?;
    let (a, b) = (a.data(), b.data());

    let (mut y0, mut y1, mut x0, mut x1) = (usize::MAX, 0, usize::MAX, 0);
    for (i, (va, vb)) in a.iter().zip(b.iter()).enumerate() {
        if va != vb {
            let (y, x) = ((i / side) % side, i % side);
            y0 = y0.min(y);
            y1 = y1.max(y);
            x0 = x0.min(x);
            x1 = x1.max(x);
        }
    }
    if y0 == usize::MAX {
        return Ok(Footprint { height: 0, width: 0 });
    }
    Ok(Footprint {
        height: y1 - y0 + 1,
        width: x1 - x0 + 1,
    })
}
