//! Adam, length-bucketed batching, the training loop and checkpoints.
//!
//! All randomness derives from the run seed and the epoch and step counters,
//! so a run resumed from a checkpoint continues exactly as an uninterrupted one.

mod adam;
mod batching;
mod checkpoint;

pub use adam::{AdamConfig, AdamState};
pub use batching::{make_batches, Batch};
pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, load_checkpoint_for, parse_checkpoint, save_checkpoint, MAGIC,
};

use crate::config::KeyValues;
use crate::error::{GenexError, Result};
use crate::model::{batch_loss, ModelConfig, ModelParams, Sample};
use crate::tensor::Graph;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    /// Input plus target tokens per batch.
    pub batch_tokens: usize,
    /// Samples per shuffle bucket before length sorting.
    pub bucket_size: usize,
    pub epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_tokens: 2048,
            bucket_size: 256,
            epochs: 10,
        }
    }
}

impl TrainConfig {
    pub fn apply(mut self, kv: &KeyValues) -> Result<Self> {
        kv.update("lr", &mut self.adam.lr)?;
        kv.update("beta1", &mut self.adam.beta1)?;
        kv.update("beta2", &mut self.adam.beta2)?;
        kv.update("eps", &mut self.adam.eps)?;
        kv.update("batch_tokens", &mut self.batch_tokens)?;
        kv.update("bucket_size", &mut self.bucket_size)?;
        kv.update("epochs", &mut self.epochs)?;
        if self.batch_tokens == 0 || !(self.adam.lr > 0.0) {
            return Err(GenexError::Config("batch_tokens and lr must be positive".into()));
        }
        Ok(self)
    }

    pub fn keys() -> &'static [&'static str] {
        &["lr", "beta1", "beta2", "eps", "batch_tokens", "bucket_size", "epochs"]
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        kv.set("lr", self.adam.lr);
        kv.set("beta1", self.adam.beta1);
        kv.set("beta2", self.adam.beta2);
        kv.set("eps", self.adam.eps);
        kv.set("batch_tokens", self.batch_tokens);
        kv.set("bucket_size", self.bucket_size);
        kv.set("epochs", self.epochs);
    }
}

/// Everything needed to continue or use a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
    pub epoch: u64,
    pub global_step: u64,
    pub seed: u64,
    /// Mean batch loss of each finished epoch.
    pub epoch_losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: u64,
    pub global_step: u64,
    pub batches: usize,
    pub mean_loss: f64,
}

/// SplitMix64 finaliser; decorrelates seeds derived from counters.
pub fn mix_seed(seed: u64, stream: u64, counter: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(counter.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const INIT_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

impl TrainState {
    pub fn new(model: ModelConfig, train: TrainConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&model, mix_seed(seed, INIT_STREAM, 0))?;
        let adam = AdamState::new(train.adam, &params);
        Ok(TrainState {
            model,
            train,
            params,
            adam,
            epoch: 0,
            global_step: 0,
            seed,
            epoch_losses: Vec::new(),
        })
    }

    /// Batches for the next epoch.
    pub fn epoch_batches(&self, samples: &[Sample]) -> Vec<Batch> {
        let lengths: Vec<usize> = samples.iter().map(Sample::num_tokens).collect();
        make_batches(
            &lengths,
            self.train.batch_tokens,
            self.train.bucket_size,
            mix_seed(self.seed, BATCH_STREAM, self.epoch),
        )
    }

    /// One forward/backward/update on `batch`; returns the batch loss.
    pub fn train_step(&mut self, samples: &[Sample], batch: &Batch, batch_id: usize) -> Result<f64> {
        let mut g = Graph::<f32>::training(mix_seed(self.seed, DROPOUT_STREAM, self.global_step));
        let bound = self.params.bind(&mut g);
        let refs: Vec<&Sample> = batch.indices.iter().map(|&i| &samples[i]).collect();
        let loss = batch_loss(&mut g, &bound, &self.model, &refs)?;
        let value = f64::from(g.value(loss)[0]);
        if !value.is_finite() {
            return Err(GenexError::NonFinite(format!(
                "loss {value} at epoch {} batch {batch_id} (step {})",
                self.epoch, self.global_step
            )));
        }
        g.backward(loss)?;
        self.params.accumulate(&g, &bound);
        self.adam.step(&mut self.params)?;
        self.params.zero_grad();
        self.global_step += 1;
        Ok(value)
    }

    /// Runs one full epoch.
    pub fn train_epoch(&mut self, samples: &[Sample]) -> Result<EpochReport> {
        if samples.is_empty() {
            return Err(GenexError::InvalidInput("empty training set".into()));
        }
        let batches = self.epoch_batches(samples);
        let mut total = 0.0;
        for (i, b) in batches.iter().enumerate() {
            total += self.train_step(samples, b, i)?;
        }
        let mean_loss = total / batches.len() as f64;
        self.epoch_losses.push(mean_loss);
        self.epoch += 1;
        let report = EpochReport {
            epoch: self.epoch,
            global_step: self.global_step,
            batches: batches.len(),
            mean_loss,
        };
        log::info!(
            "epoch {} step {} loss {:.6}",
            report.epoch,
            report.global_step,
            report.mean_loss
        );
        Ok(report)
    }
}

/// Trains for `epochs` more epochs, calling `on_epoch` after each.
pub fn train(
    state: &mut TrainState,
    samples: &[Sample],
    epochs: usize,
    mut on_epoch: impl FnMut(&TrainState, &EpochReport) -> Result<()>,
) -> Result<()> {
    for _ in 0..epochs {
        let report = state.train_epoch(samples)?;
        on_epoch(state, &report)?;
    }
    Ok(())
}
