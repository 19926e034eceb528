//! Minibatch ADAM training on random aligned crops, with a step learning
//! rate schedule, periodic checkpoints and held-out evaluation.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{lr_at, TrainConfig};

use crate::error::{Error, Result};
use crate::metrics::{ImageScore, MetricReport};
use crate::model::{framework_loss, DerainNet, RescanConfig};
use crate::rain::{derive_seed, Sample};
use crate::raster::Raster;
use crate::tensor::{Adam, AdamConfig, Tensor};

/// Stream tags for seeds derived from [`TrainConfig::seed`].
const PATCH_STREAM: u64 = 1;
const EPOCH_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;

/// Top-left corner of a square crop of image `image`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Patch {
    pub image: usize,
    pub y: usize,
    pub x: usize,
}

/// Fresh He-initialised network whose weights are fixed by `seed` (the
/// training seed, so one number reproduces a whole run).
pub fn init_network(config: &RescanConfig, seed: u64) -> Result<DerainNet> {
    DerainNet::init(config, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, INIT_STREAM)))
}

/// Crop positions drawn once per run; batches are cut from the images on
/// demand.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPool {
    pub size: usize,
    pub patches: Vec<Patch>,
}

/// `patches_per_image` uniformly placed crops per image; images smaller
/// than the patch are skipped with a warning.
pub fn sample_patches(samples: &[Sample], config: &TrainConfig, seed: u64) -> PatchPool {
    let size = config.patch_size;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, PATCH_STREAM));
    let mut patches = Vec::with_capacity(samples.len() * config.patches_per_image);
    for (image, s) in samples.iter().enumerate() {
        let (h, w) = (s.rainy.height(), s.rainy.width());
        if h < size || w < size {
            log::warn!("skipping {} ({h}×{w}): smaller than the {size}×{size} patch", s.name);
            continue;
        }
        for _ in 0..config.patches_per_image {
            patches.push(Patch {
                image,
                y: rng.random_range(0..=h - size),
                x: rng.random_range(0..=w - size),
            });
        }
    }
    PatchPool { size, patches }
}

/// Aligned crops of one patch: `(rainy, target residual, clean)`.
pub fn crop_patch(samples: &[Sample], pool: &PatchPool, patch: Patch) -> Result<(Raster, Raster, Raster)> {
    let s = &samples[patch.image];
    let crop = |r: &Raster| r.crop(patch.y, patch.x, pool.size);
    Ok((crop(&s.rainy)?, crop(&s.target)?, crop(&s.clean)?))
}

/// Walks the pool epoch by epoch, reshuffling each epoch with its own
/// derived seed; batches may straddle an epoch boundary.
struct BatchStream {
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    seed: u64,
}

impl BatchStream {
    fn new(pool_len: usize, seed: u64) -> Self {
        let mut stream = Self {
            order: (0..pool_len).collect(),
            cursor: 0,
            epoch: 0,
            seed,
        };
        stream.shuffle();
        stream
    }

    fn shuffle(&mut self) {
        self.order.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(self.seed, EPOCH_STREAM), self.epoch));
        self.order.shuffle(&mut rng);
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.epoch += 1;
                self.cursor = 0;
                self.shuffle();
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Loss per iteration, learning-rate trace and periodic held-out scores.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub iteration: usize,
    pub lr: f64,
    pub loss: f64,
    /// Mean held-out `(PSNR, SSIM)` after this iteration, when evaluated.
    pub eval: Option<(f64, f64)>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,lr,loss,eval_psnr,eval_ssim\n");
        for r in &self.records {
            let (p, s) = r.eval.map_or((String::new(), String::new()), |(p, s)| (p.to_string(), s.to_string()));
            let _ = writeln!(out, "{},{},{},{p},{s}", r.iteration, r.lr, r.loss);
        }
        out
    }
}

/// Where training writes its artefacts, and what it evaluates on.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions<'a> {
    /// Checkpoints, the final model and the log go here when set.
    pub out_dir: Option<PathBuf>,
    /// Held-out pairs scored every `eval_every` iterations.
    pub eval_set: Option<&'a [Sample]>,
}

fn save_checkpoint(net: &DerainNet, dir: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    net.save(&path)?;
    Ok(path)
}

/// Trains `net` in place on random crops of `samples` with the loss of its
/// framework. Deterministic given the config and the network's initial
/// weights. A non-finite loss aborts after restoring and saving the last
/// finite-loss weights.
pub fn train(net: &DerainNet, samples: &[Sample], config: &TrainConfig, options: &TrainOptions) -> Result<TrainLog> {
    config.validate()?;
    net.config.validate()?;
    let mut log = TrainLog::default();
    if config.iterations == 0 {
        if let Some(dir) = &options.out_dir {
            save_checkpoint(net, dir, "final.ckpt")?;
        }
        return Ok(log);
    }
    let pool = sample_patches(samples, config, config.seed);
    if config.batch_size > pool.patches.len() {
        return Err(Error::Config(format!(
            "batch size {} exceeds the pool of {} patches",
            config.batch_size,
            pool.patches.len()
        )));
    }
    let params = net.params();
    let mut opt = Adam::new(params.clone(), AdamConfig::default());
    let mut stream = BatchStream::new(pool.patches.len(), config.seed);
    let mut last_good: Vec<Vec<f32>> = params.iter().map(Tensor::to_vec).collect();

    for iteration in 0..config.iterations {
        let lr = lr_at(iteration, config);
        let (mut rainy, mut target) = (Vec::new(), Vec::new());
        for index in stream.next_batch(config.batch_size) {
            let (o, r, _) = crop_patch(samples, &pool, pool.patches[index])?;
            rainy.push(o);
            target.push(r);
        }
        let rainy = Raster::batch(&rainy)?;
        let target = Raster::batch(&target)?;
        let result = net.rescan_forward(&rainy, false)?;
        let loss = framework_loss(net.config.framework, &result.stage_preds, &target)?;
        let value = loss.item() as f64;
        if !value.is_finite() {
            for (p, good) in params.iter().zip(&last_good) {
                p.set_data(good)?;
            }
            let dir = options.out_dir.clone().unwrap_or_else(std::env::temp_dir);
            let checkpoint = save_checkpoint(net, &dir, "last_good.ckpt")?;
            return Err(Error::NonFiniteLoss {
                iteration,
                loss: value,
                checkpoint,
            });
        }
        for (p, good) in params.iter().zip(last_good.iter_mut()) {
            good.copy_from_slice(&p.data());
        }
        opt.zero_grad();
        loss.backward()?;
        opt.step(lr)?;

        let done = iteration + 1;
        let eval = match options.eval_set {
            Some(set) if config.eval_every > 0 && done % config.eval_every == 0 => {
                let report = evaluate(net, set)?;
                Some((report.derained.mean_psnr(), report.derained.mean_ssim()))
            }
            _ => None,
        };
        if config.log_every > 0 && (done % config.log_every == 0 || done == config.iterations) {
            match eval {
                Some((p, s)) => log::info!("iter {done:>6}  lr {lr:.1e}  loss {value:.6}  eval {p:.3} dB / {s:.4}"),
                None => log::info!("iter {done:>6}  lr {lr:.1e}  loss {value:.6}"),
            }
        }
        log.records.push(LogRecord {
            iteration,
            lr,
            loss: value,
            eval,
        });
        if let Some(dir) = &options.out_dir {
            if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < config.iterations {
                save_checkpoint(net, dir, &format!("iter_{done:06}.ckpt"))?;
            }
        }
    }
    if let Some(dir) = &options.out_dir {
        save_checkpoint(net, dir, "final.ckpt")?;
        let path = dir.join("train_log.csv");
        fs::write(&path, log.to_csv()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(log)
}

/// Scores of the network's output and of the untouched rainy input
/// (the no-op baseline), both against the clean images.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub derained: MetricReport,
    pub baseline: MetricReport,
}

impl EvalReport {
    /// `kind,image,psnr,ssim` rows for both reports, each closed by a mean row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,image,psnr,ssim\n");
        for (kind, report) in [("derained", &self.derained), ("baseline", &self.baseline)] {
            for r in &report.rows {
                let _ = writeln!(out, "{kind},{},{},{}", r.image, r.psnr, r.ssim);
            }
            let _ = writeln!(out, "{kind},mean,{},{}", report.mean_psnr(), report.mean_ssim());
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "{:<9} {:>9} {:>7}\n{:<9} {:>9.3} {:>7.4}\n{:<9} {:>9.3} {:>7.4}",
            "",
            "PSNR(dB)",
            "SSIM",
            "derained",
            self.derained.mean_psnr(),
            self.derained.mean_ssim(),
            "baseline",
            self.baseline.mean_psnr(),
            self.baseline.mean_ssim()
        )
    }
}

/// Whole-image background estimate `B̂ = O − R` for one rainy image.
pub fn derain_image(net: &DerainNet, rainy: &Raster) -> Result<Raster> {
    let result = net.rescan_forward(&rainy.to_tensor(), false)?;
    Raster::from_tensor(&result.background.detach(), 0)
}

/// Full-image inference on every sample, scored after clamping to `[0, 1]`.
pub fn evaluate(net: &DerainNet, samples: &[Sample]) -> Result<EvalReport> {
    let mut derained = Vec::with_capacity(samples.len());
    let mut baseline = Vec::with_capacity(samples.len());
    for s in samples {
        let estimate = derain_image(net, &s.rainy)?;
        derained.push(ImageScore::measure(&s.name, &estimate, &s.clean)?);
        baseline.push(ImageScore::measure(&s.name, &s.rainy, &s.clean)?);
    }
    Ok(EvalReport {
        derained: MetricReport::new(derained),
        baseline: MetricReport::new(baseline),
    })
}
