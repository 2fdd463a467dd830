//! Mini-batch training loop over in-memory samples. Loading, logging and
//! checkpoint files belong to the host crate; this module owns the math.

use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::indicator::NoiseIndicator;
use crate::losses::{total_loss, LossConfig};
use crate::model::{model_forward, init_model_params, ModelSpec};
use crate::optim::{AdamConfig, AdamState, LrSchedule};
use crate::params::ParamSet;
use crate::rng::{self, ChaCha8Rng};
use crate::tensor::{Tape, Tensor};

/// One training or evaluation image: RGB pixels (`3*h*w`, row-major,
/// channel-major), a binary mask (`h*w`), and the noise-class index.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Vec<f64>,
    pub mask: Vec<f64>,
    pub class_index: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub model: ModelSpec,
    pub loss: LossConfig,
    pub lr: LrSchedule,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub seed: u64,
}

/// Stateful optimizer loop. One instance owns the parameters; epochs are
/// driven one at a time so the host can log and checkpoint between them.
pub struct Trainer {
    setup: TrainSetup,
    params: ParamSet,
    adam: AdamState,
    shuffle_rng: ChaCha8Rng,
    epoch: u64,
}

impl Trainer {
    pub fn new(setup: TrainSetup) -> Result<Self> {
        if setup.batch_size == 0 {
            return Err(CoreError::InvalidArg { op: "trainer", detail: "batch size must be positive".into() });
        }
        let params = init_model_params(&setup.model, setup.seed)?;
        Ok(Self::with_params(setup, params))
    }

    /// Resume with existing parameters (fresh optimizer state).
    pub fn with_params(setup: TrainSetup, params: ParamSet) -> Self {
        let adam = AdamState::new(&params, setup.adam);
        let shuffle_rng = rng::seeded(rng::sub_seed(setup.seed, 1));
        Trainer { setup, params, adam, shuffle_rng, epoch: 0 }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    pub fn setup(&self) -> &TrainSetup {
        &self.setup
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Learning rate the next epoch will use.
    pub fn current_lr(&self) -> f64 {
        self.setup.lr.lr_at(self.epoch)
    }

    /// One pass over `samples` in seeded shuffled order. Returns the
    /// sample-weighted mean loss.
    pub fn run_epoch(&mut self, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(CoreError::EmptyInput { op: "run_epoch" });
        }
        let lr = self.setup.lr.lr_at(self.epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        rng::shuffle(&mut self.shuffle_rng, &mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(self.setup.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let loss = self.step(&batch, lr)?;
            loss_sum += loss * batch.len() as f64;
        }
        self.epoch += 1;
        Ok(loss_sum / samples.len() as f64)
    }

    fn step(&mut self, batch: &[&Sample], lr: f64) -> Result<f64> {
        let tape = Tape::new();
        let bind = self.params.bind(&tape)?;
        let (image, gt, indicators) =
            batch_tensors(&tape, batch, self.setup.model.encoder.indicator_len)?;
        let (_, dec) = model_forward(&self.setup.model, &bind, &image, &indicators)?;
        let outputs = dec.all();
        let loss = total_loss(&outputs, &gt, &self.setup.loss)?;
        loss.backward()?;
        let value = loss.item()?;
        let grads = bind.grads()?;
        self.adam.step(&mut self.params, &grads, lr)?;
        Ok(value)
    }
}

/// Stack samples into `[B,3,H,W]` image and `[B,1,H,W]` mask constants plus
/// their indicators.
pub fn batch_tensors(
    tape: &Tape,
    batch: &[&Sample],
    indicator_len: usize,
) -> Result<(Tensor, Tensor, Vec<NoiseIndicator>)> {
    let first = batch.first().ok_or(CoreError::EmptyInput { op: "batch_tensors" })?;
    let (h, w) = (first.height, first.width);
    let mut image = Vec::with_capacity(batch.len() * 3 * h * w);
    let mut mask = Vec::with_capacity(batch.len() * h * w);
    let mut indicators = Vec::with_capacity(batch.len());
    for s in batch {
        if s.height != h || s.width != w {
            return Err(CoreError::DimMismatch { op: "batch_tensors", axis: 2, left: h, right: s.height });
        }
        if s.image.len() != 3 * h * w {
            return Err(CoreError::LengthMismatch { expected: 3 * h * w, got: s.image.len() });
        }
        if s.mask.len() != h * w {
            return Err(CoreError::LengthMismatch { expected: h * w, got: s.mask.len() });
        }
        image.extend_from_slice(&s.image);
        mask.extend_from_slice(&s.mask);
        indicators.push(NoiseIndicator::from_index(s.class_index, indicator_len)?);
    }
    let image = tape.constant(image, &[batch.len(), 3, h, w])?;
    let mask = tape.constant(mask, &[batch.len(), 1, h, w])?;
    Ok((image, mask, indicators))
}
