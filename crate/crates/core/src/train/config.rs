use crate::error::{Error, Result};
use crate::kv::{join_list, parse_list, KvMap};

/// Optimisation protocol: patch sampling, minibatch size, step schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub patches_per_image: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f64,
    /// Iterations at which the learning rate is divided by `drop_factor`.
    pub lr_drops: Vec<usize>,
    pub drop_factor: f64,
    pub seed: u64,
    /// Write a checkpoint every this many iterations (0: final only).
    pub checkpoint_every: usize,
    /// Evaluate on the held-out split every this many iterations (0: never).
    pub eval_every: usize,
    /// Log progress every this many iterations (0: never).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// CPU-sized protocol: 2000 iterations with drops at 1200 and 1700,
    /// batch 16.
    pub fn desk() -> Self {
        Self {
            patch_size: 64,
            patches_per_image: 100,
            batch_size: 16,
            iterations: 2000,
            lr: 5e-3,
            lr_drops: vec![1200, 1700],
            drop_factor: 10.0,
            seed: 0,
            checkpoint_every: 0,
            eval_every: 0,
            log_every: 100,
        }
    }

    /// Full-size protocol: batch 64, drops at 15000 and 17500 of 20000.
    pub fn full_scale() -> Self {
        Self {
            batch_size: 64,
            iterations: 20_000,
            lr_drops: vec![15_000, 17_500],
            log_every: 500,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.patch_size == 0 || self.patches_per_image == 0 || self.batch_size == 0 {
            return fail("patch size, patches per image and batch size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("learning rate {} must be positive", self.lr));
        }
        if !(self.drop_factor > 0.0 && self.drop_factor.is_finite()) {
            return fail(format!("drop factor {} must be positive", self.drop_factor));
        }
        if self.lr_drops.windows(2).any(|w| w[0] >= w[1]) {
            return fail(format!("lr drops {:?} must be strictly increasing", self.lr_drops));
        }
        if let Some(last) = self.lr_drops.last() {
            if *last > self.iterations {
                return fail(format!("lr drop at {last} lies beyond {} iterations", self.iterations));
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("patch_size", self.patch_size);
        kv.set("patches_per_image", self.patches_per_image);
        kv.set("batch_size", self.batch_size);
        kv.set("iterations", self.iterations);
        kv.set("lr", self.lr);
        kv.set("lr_drops", join_list(&self.lr_drops));
        kv.set("drop_factor", self.drop_factor);
        kv.set("seed", self.seed);
        kv.set("checkpoint_every", self.checkpoint_every);
        kv.set("eval_every", self.eval_every);
        kv.set("log_every", self.log_every);
        kv
    }

    /// Values from `kv` over `base`.
    pub fn from_kv(kv: &KvMap, base: &TrainConfig) -> Result<Self> {
        let lr_drops = match kv.get("lr_drops") {
            Some("") => Vec::new(),
            Some(v) => parse_list(v).map_err(|e| Error::Config(format!("lr_drops = {v}: {e}")))?,
            None => base.lr_drops.clone(),
        };
        let cfg = Self {
            patch_size: kv.parse_or("patch_size", base.patch_size)?,
            patches_per_image: kv.parse_or("patches_per_image", base.patches_per_image)?,
            batch_size: kv.parse_or("batch_size", base.batch_size)?,
            iterations: kv.parse_or("iterations", base.iterations)?,
            lr: kv.parse_or("lr", base.lr)?,
            lr_drops,
            drop_factor: kv.parse_or("drop_factor", base.drop_factor)?,
            seed: kv.parse_or("seed", base.seed)?,
            checkpoint_every: kv.parse_or("checkpoint_every", base.checkpoint_every)?,
            eval_every: kv.parse_or("eval_every", base.eval_every)?,
            log_every: kv.parse_or("log_every", base.log_every)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Step schedule: `lr / factor^k` where `k` counts the drops at or before
/// `iteration`.
pub fn lr_at(iteration: usize, config: &TrainConfig) -> f64 {
    let k = config.lr_drops.iter().filter(|d| **d <= iteration).count();
    config.lr / config.drop_factor.powi(k as i32)
}
