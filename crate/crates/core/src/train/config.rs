//! Training hyperparameters and their `key = value` file format.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::stylenet::UPSCALE;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub batch_size: usize,
    pub iterations_stage1: u64,
    pub iterations_stage2: u64,
    pub lr_stage1: f64,
    pub lr_stage2: f64,
    pub weights: LossWeights,
    pub seed: u64,
    /// Save a checkpoint every this many iterations; 0 disables.
    pub checkpoint_interval: u64,
    pub checkpoint_dir: Option<PathBuf>,
    /// Reuse the first batch for every iteration (overfitting runs).
    pub fixed_batch: bool,
    pub data_dir: Option<PathBuf>,
    pub vgg: Option<PathBuf>,
    pub loss_csv: Option<PathBuf>,
}

impl Default for TrainConfig {
    /// Desk-scale defaults: 64px patches, batch 10, 50k + 50k iterations at
    /// learning rates 1e-4 then 1e-5.
    fn default() -> Self {
        TrainConfig {
            patch_size: 64,
            batch_size: 10,
            iterations_stage1: 50_000,
            iterations_stage2: 50_000,
            lr_stage1: 1e-4,
            lr_stage2: 1e-5,
            weights: LossWeights::default(),
            seed: 0,
            checkpoint_interval: 0,
            checkpoint_dir: None,
            fixed_batch: false,
            data_dir: None,
            vgg: None,
            loss_csv: None,
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("config: invalid value {value:?} for {key}")))
}

impl TrainConfig {
    /// The original schedule's learning rates (1e-8, then 1e-9). They assume
    /// an unnormalised loss and barely move an element-normalised one.
    pub fn paper_preset() -> Self {
        TrainConfig {
            lr_stage1: 1e-8,
            lr_stage2: 1e-9,
            ..Self::default()
        }
    }

    pub fn total_iterations(&self) -> u64 {
        self.iterations_stage1 + self.iterations_stage2
    }

    pub fn learning_rate(&self, iteration: u64) -> f64 {
        if iteration < self.iterations_stage1 {
            self.lr_stage1
        } else {
            self.lr_stage2
        }
    }

    /// Sets one key. `preset = paper` resets the learning rates, so it
    /// should come before explicit `lr_*` lines.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || Some(PathBuf::from(value));
        match key {
            "patch_size" => self.patch_size = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "iterations" => {
                self.iterations_stage1 = parse(key, value)?;
                self.iterations_stage2 = 0;
            }
            "iterations_stage1" => self.iterations_stage1 = parse(key, value)?,
            "iterations_stage2" => self.iterations_stage2 = parse(key, value)?,
            "lr_stage1" => self.lr_stage1 = parse(key, value)?,
            "lr_stage2" => self.lr_stage2 = parse(key, value)?,
            "alpha" => self.weights.alpha = parse(key, value)?,
            "beta" => self.weights.beta = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "checkpoint_interval" => self.checkpoint_interval = parse(key, value)?,
            "checkpoint_dir" => self.checkpoint_dir = path(),
            "fixed_batch" => self.fixed_batch = parse(key, value)?,
            "data_dir" => self.data_dir = path(),
            "vgg" => self.vgg = path(),
            "loss_csv" => self.loss_csv = path(),
            "preset" => match value {
                "paper" => {
                    let p = Self::paper_preset();
                    self.lr_stage1 = p.lr_stage1;
                    self.lr_stage2 = p.lr_stage2;
                }
                "desk" => {
                    let d = Self::default();
                    self.lr_stage1 = d.lr_stage1;
                    self.lr_stage2 = d.lr_stage2;
                }
                _ => return Err(Error::invalid(format!("config: unknown preset {value:?} (paper, desk)"))),
            },
            _ => return Err(Error::invalid(format!("config: unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a
    /// comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected key = value", lineno + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::invalid(format!("config line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Serialises every non-default-able field; `parse(to_text())`
    /// reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let w = &mut s;
        let _ = writeln!(w, "patch_size = {}", self.patch_size);
        let _ = writeln!(w, "batch_size = {}", self.batch_size);
        let _ = writeln!(w, "iterations_stage1 = {}", self.iterations_stage1);
        let _ = writeln!(w, "iterations_stage2 = {}", self.iterations_stage2);
        let _ = writeln!(w, "lr_stage1 = {:e}", self.lr_stage1);
        let _ = writeln!(w, "lr_stage2 = {:e}", self.lr_stage2);
        let _ = writeln!(w, "alpha = {}", self.weights.alpha);
        let _ = writeln!(w, "beta = {}", self.weights.beta);
        let _ = writeln!(w, "seed = {}", self.seed);
        let _ = writeln!(w, "checkpoint_interval = {}", self.checkpoint_interval);
        let _ = writeln!(w, "fixed_batch = {}", self.fixed_batch);
        for (k, v) in [
            ("checkpoint_dir", &self.checkpoint_dir),
            ("data_dir", &self.data_dir),
            ("vgg", &self.vgg),
            ("loss_csv", &self.loss_csv),
        ] {
            if let Some(p) = v {
                let _ = writeln!(w, "{k} = {}", p.display());
            }
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.patch_size % UPSCALE != 0 {
            return Err(Error::invalid(format!(
                "patch_size must be a positive multiple of {UPSCALE}, got {}",
                self.patch_size
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        for (name, lr) in [("lr_stage1", self.lr_stage1), ("lr_stage2", self.lr_stage2)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {lr}")));
            }
        }
        LossWeights::new(self.weights.alpha, self.weights.beta)?;
        Ok(())
    }
}
