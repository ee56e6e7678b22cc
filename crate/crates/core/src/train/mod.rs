//! Training loop: patch sampling, loss, Adam updates, two-stage learning
//! rate, checkpoints and loss history.

mod config;
mod dataset;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::TrainConfig;
pub use dataset::{sample_locations, sample_patch_batch, PairDataset, PatchLocation, INPUT_DIR, STYLE_DIR};

use crate::error::{Error, Result};
use crate::gradient::GradientField;
use crate::losses::total_loss;
use crate::nn::AdamState;
use crate::scalar::Scalar;
use crate::stylenet::StyleNet;
use crate::vgg::VggTrunk;
use crate::weights::{Record, WeightFile};

/// Loss values of one iteration (1-based).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: u64,
    pub total: f64,
    pub pixel: f64,
    pub feat: f64,
}

/// Network, optimizer state and iteration counter.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub net: StyleNet<T>,
    pub adam: AdamState<T>,
    /// Iterations completed.
    pub iteration: u64,
}

/// Counters are split into 16-bit limbs so they survive a 32-bit float
/// record exactly.
fn encode_counter<T: Scalar>(name: &str, v: u64) -> Record<T> {
    let limbs: Vec<T> = (0..4).map(|i| T::lit(((v >> (16 * i)) & 0xffff) as f64)).collect();
    Record::vector(name, &limbs)
}

fn decode_counter<T: Scalar>(f: &WeightFile<T>, name: &str) -> Result<u64> {
    let limbs = f.require(name)?.to_vector(4)?;
    limbs.iter().enumerate().try_fold(0u64, |acc, (i, v)| {
        let x = v.to_f64_lossy();
        if !(0.0..65536.0).contains(&x) || x.fract() != 0.0 {
            return Err(Error::Format(format!("{name}: corrupt counter")));
        }
        Ok(acc | ((x as u64) << (16 * i)))
    })
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(net: StyleNet<T>) -> Self {
        let adam = AdamState::new(&net.parameter_lengths());
        Checkpoint { net, adam, iteration: 0 }
    }

    /// Network records plus `adam.<param>.m`, `adam.<param>.v`, `adam.step`
    /// and `train.iteration`.
    pub fn to_weight_file(&self) -> WeightFile<T> {
        let mut f = self.net.to_weight_file();
        let names: Vec<String> = f.records().iter().map(|r| r.name.clone()).collect();
        for ((name, m), v) in names.iter().zip(self.adam.first_moments()).zip(self.adam.second_moments()) {
            f.push(Record::vector(format!("adam.{name}.m"), m)).expect("unique");
            f.push(Record::vector(format!("adam.{name}.v"), v)).expect("unique");
        }
        f.push(encode_counter("adam.step", self.adam.step_count())).expect("unique");
        f.push(encode_counter("train.iteration", self.iteration)).expect("unique");
        f
    }

    pub fn from_weight_file(f: &WeightFile<T>) -> Result<Self> {
        let net = StyleNet::from_weight_file(f)?;
        let plain = net.to_weight_file();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for r in plain.records() {
            let len = r.values.len();
            m.push(f.require(&format!("adam.{}.m", r.name))?.to_vector(len)?);
            v.push(f.require(&format!("adam.{}.v", r.name))?.to_vector(len)?);
        }
        let adam = AdamState::from_parts(m, v, decode_counter(f, "adam.step")?)?;
        Ok(Checkpoint {
            net,
            adam,
            iteration: decode_counter(f, "train.iteration")?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_weight_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_weight_file(&WeightFile::load(path)?)
    }
}

/// Writes `iteration,total,pixel,feat` rows.
pub fn write_loss_csv(path: impl AsRef<Path>, history: &[LossRecord]) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::invalid(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["iteration", "total", "pixel", "feat"]).map_err(csv_err)?;
    for r in history {
        w.write_record([
            r.iteration.to_string(),
            r.total.to_string(),
            r.pixel.to_string(),
            r.feat.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub struct Trainer<T> {
    config: TrainConfig,
    state: Checkpoint<T>,
    trunk: Option<VggTrunk<T>>,
    history: Vec<LossRecord>,
}

impl<T: Scalar> Trainer<T> {
    /// `trunk` is required when `beta > 0`.
    pub fn new(config: TrainConfig, net: StyleNet<T>, trunk: Option<VggTrunk<T>>) -> Result<Self> {
        Self::resume(config, Checkpoint::new(net), trunk)
    }

    pub fn resume(config: TrainConfig, state: Checkpoint<T>, trunk: Option<VggTrunk<T>>) -> Result<Self> {
        config.validate()?;
        if config.weights.beta > 0.0 && trunk.is_none() {
            return Err(Error::invalid("beta > 0 needs a VGG trunk (--vgg)"));
        }
        Ok(Trainer {
            config,
            state,
            trunk,
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn net(&self) -> &StyleNet<T> {
        &self.state.net
    }

    pub fn iteration(&self) -> u64 {
        self.state.iteration
    }

    pub fn checkpoint(&self) -> &Checkpoint<T> {
        &self.state
    }

    pub fn into_checkpoint(self) -> Checkpoint<T> {
        self.state
    }

    /// Losses recorded by this trainer instance.
    pub fn history(&self) -> &[LossRecord] {
        &self.history
    }

    /// The batch for a 0-based iteration depends only on the seed and the
    /// iteration, so resumed runs draw the same batches.
    pub fn batch(&self, ds: &PairDataset<T>, iteration: u64) -> Result<(GradientField<T>, GradientField<T>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(if self.config.fixed_batch { 0 } else { iteration });
        sample_patch_batch(ds, self.config.patch_size, self.config.batch_size, &mut rng)
    }

    /// One optimisation step on a given batch.
    pub fn step_on(&mut self, input: &GradientField<T>, target: &GradientField<T>) -> Result<LossRecord> {
        let iteration = self.state.iteration + 1;
        let trace = self.state.net.forward_trace(input.tensor())?;
        let pred = GradientField::new(trace.output.clone())?;
        let terms = total_loss(&pred, target, self.config.weights, self.trunk.as_ref())?;
        let record = LossRecord {
            iteration,
            total: terms.total,
            pixel: terms.pixel,
            feat: terms.feat,
        };
        if !(record.total.is_finite() && record.pixel.is_finite() && record.feat.is_finite()) {
            return Err(Error::NonFiniteLoss {
                iteration,
                total: record.total,
                pixel: record.pixel,
                feat: record.feat,
            });
        }
        let grads = self.state.net.backward(&trace, terms.grad.tensor(), false)?;
        let lr = self.config.learning_rate(self.state.iteration);
        let mut params = self.state.net.parameters_mut();
        self.state.adam.update(&mut params, &grads.slices(), lr)?;
        self.state.iteration = iteration;
        self.history.push(record);
        Ok(record)
    }

    pub fn step(&mut self, ds: &PairDataset<T>) -> Result<LossRecord> {
        let (input, target) = self.batch(ds, self.state.iteration)?;
        self.step_on(&input, &target)
    }

    fn checkpoint_path(&self) -> Option<PathBuf> {
        let dir = self.config.checkpoint_dir.as_ref()?;
        Some(dir.join(format!("checkpoint_{:08}.gstw", self.state.iteration)))
    }

    /// Trains until `until` iterations are complete, calling `on_step` after
    /// each one and checkpointing at the configured interval.
    pub fn run_until(&mut self, ds: &PairDataset<T>, until: u64, mut on_step: impl FnMut(&LossRecord)) -> Result<()> {
        while self.state.iteration < until {
            let rec = self.step(ds)?;
            on_step(&rec);
            let every = self.config.checkpoint_interval;
            if every > 0 && self.state.iteration % every == 0 {
                if let Some(path) = self.checkpoint_path() {
                    std::fs::create_dir_all(path.parent().expect("joined path"))
                        .map_err(|e| Error::io(path.parent().expect("joined path"), e))?;
                    self.state.save(&path)?;
                }
            }
        }
        Ok(())
    }

    /// Runs both learning-rate stages and writes the loss CSV if configured.
    pub fn run(&mut self, ds: &PairDataset<T>, on_step: impl FnMut(&LossRecord)) -> Result<()> {
        self.run_until(ds, self.config.total_iterations(), on_step)?;
        if let Some(path) = &self.config.loss_csv {
            write_loss_csv(path, &self.history)?;
        }
        Ok(())
    }
}

/// Convenience wrapper: trains a fresh network built from `config.seed`.
pub fn train<T: Scalar>(
    ds: &PairDataset<T>,
    config: TrainConfig,
    trunk: Option<VggTrunk<T>>,
) -> Result<(StyleNet<T>, Vec<LossRecord>)> {
    let net = StyleNet::build(config.seed);
    let mut t = Trainer::new(config, net, trunk)?;
    t.run(ds, |_| {})?;
    Ok((t.state.net, t.history))
}
