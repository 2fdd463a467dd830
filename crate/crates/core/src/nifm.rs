//! Noise indicator fusion: squeeze stage features with global average
//! pooling, join them with the noise conditioning vector, push the result
//! through two fully connected layers, and use the sigmoid output to scale
//! each feature channel.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::error::{CoreError, Result};
use crate::indicator::NoiseIndicator;
use crate::rng;
use crate::tensor::{Tape, Tensor};

/// How consecutive fusion blocks are wired between encoder stages.
///
/// `Default` feeds every block the one-hot indicator. `Recursive` feeds
/// blocks after the first only the previous block's output weights.
/// `Hybrid` feeds both. `Prompt` replaces the indicator with a per-block
/// learnable vector. `Disabled` removes the blocks entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NifmVariant {
    Default,
    Recursive,
    Hybrid,
    Prompt,
    Disabled,
}

/// Squeeze width of the two FC layers: a 4x channel reduction, floored at
/// the indicator length so tiny stages keep enough mixing capacity.
pub fn hidden_dim(channels_in: usize) -> usize {
    (channels_in / 4).max(9)
}

/// Length of the conditioning vector consumed by the block at `stage_index`
/// (1-based). `prev_channels` is the channel count of the preceding stage.
pub fn conditioning_len(
    variant: NifmVariant,
    stage_index: usize,
    indicator_len: usize,
    prev_channels: usize,
) -> usize {
    match variant {
        NifmVariant::Default | NifmVariant::Prompt | NifmVariant::Disabled => indicator_len,
        NifmVariant::Recursive => {
            if stage_index == 1 {
                indicator_len
            } else {
                prev_channels
            }
        }
        NifmVariant::Hybrid => {
            if stage_index == 1 {
                indicator_len
            } else {
                indicator_len + prev_channels
            }
        }
    }
}

/// One fusion block: two FC layers plus an optional learnable prompt.
#[derive(Debug, Clone)]
pub struct NifmBlock {
    pub channels_in: usize,
    pub indicator_len: usize,
    pub hidden_dim: usize,
    pub fc1_weight: Tensor,
    pub fc1_bias: Tensor,
    pub fc2_weight: Tensor,
    pub fc2_bias: Tensor,
    pub prompt: Option<Tensor>,
}

impl NifmBlock {
    /// Assemble a block from existing tensors, validating every shape.
    pub fn from_tensors(
        channels_in: usize,
        indicator_len: usize,
        fc1_weight: Tensor,
        fc1_bias: Tensor,
        fc2_weight: Tensor,
        fc2_bias: Tensor,
        prompt: Option<Tensor>,
    ) -> Result<Self> {
        let hidden = hidden_dim(channels_in);
        let in_dim = channels_in + indicator_len;
        check_shape("nifm fc1 weight", &fc1_weight, &[hidden, in_dim])?;
        check_shape("nifm fc1 bias", &fc1_bias, &[hidden])?;
        check_shape("nifm fc2 weight", &fc2_weight, &[channels_in, hidden])?;
        check_shape("nifm fc2 bias", &fc2_bias, &[channels_in])?;
        if let Some(p) = &prompt {
            check_shape("nifm prompt", p, &[indicator_len])?;
        }
        Ok(NifmBlock {
            channels_in,
            indicator_len,
            hidden_dim: hidden,
            fc1_weight,
            fc1_bias,
            fc2_weight,
            fc2_bias,
            prompt,
        })
    }
}

fn check_shape(what: &'static str, t: &Tensor, expected: &[usize]) -> Result<()> {
    let got = t.shape();
    if got != expected {
        return Err(CoreError::InvalidArg {
            op: what,
            detail: format!("expected shape {expected:?}, got {got:?}"),
        });
    }
    Ok(())
}

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weight draw.
pub fn fc_weight_init<R: RngCore>(r: &mut R, out_dim: usize, in_dim: usize) -> Vec<f64> {
    let bound = 1.0 / crate::mathx::sqrt(in_dim as f64);
    (0..out_dim * in_dim).map(|_| rng::uniform_range(r, -bound, bound)).collect()
}

/// N(0, 0.02^2) prompt draw of length `len`.
pub fn prompt_init<R: RngCore>(r: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| 0.02 * rng::normal_f64(r)).collect()
}

/// Fresh block with seeded FC init and zero biases.
pub fn make_block(tape: &Tape, channels_in: usize, indicator_len: usize, seed: u64) -> Result<NifmBlock> {
    let mut r = rng::seeded(seed);
    let hidden = hidden_dim(channels_in);
    let in_dim = channels_in + indicator_len;
    let fc1_weight = tape.leaf(fc_weight_init(&mut r, hidden, in_dim), &[hidden, in_dim], true)?;
    let fc1_bias = tape.leaf(vec![0.0; hidden], &[hidden], true)?;
    let fc2_weight = tape.leaf(fc_weight_init(&mut r, channels_in, hidden), &[channels_in, hidden], true)?;
    let fc2_bias = tape.leaf(vec![0.0; channels_in], &[channels_in], true)?;
    NifmBlock::from_tensors(channels_in, indicator_len, fc1_weight, fc1_bias, fc2_weight, fc2_bias, None)
}

/// Fresh block whose conditioning is a learnable length-9 prompt; the
/// indicator input is ignored by this variant.
pub fn make_prompt_block(tape: &Tape, channels_in: usize, seed: u64) -> Result<NifmBlock> {
    let indicator_len = 9;
    let mut r = rng::seeded(seed);
    let hidden = hidden_dim(channels_in);
    let in_dim = channels_in + indicator_len;
    let fc1_weight = tape.leaf(fc_weight_init(&mut r, hidden, in_dim), &[hidden, in_dim], true)?;
    let fc1_bias = tape.leaf(vec![0.0; hidden], &[hidden], true)?;
    let fc2_weight = tape.leaf(fc_weight_init(&mut r, channels_in, hidden), &[channels_in, hidden], true)?;
    let fc2_bias = tape.leaf(vec![0.0; channels_in], &[channels_in], true)?;
    let prompt = tape.leaf(prompt_init(&mut r, indicator_len), &[indicator_len], true)?;
    NifmBlock::from_tensors(
        channels_in,
        indicator_len,
        fc1_weight,
        fc1_bias,
        fc2_weight,
        fc2_bias,
        Some(prompt),
    )
}

/// Modulation weights and the channel-scaled features:
/// `W = sigmoid(fc2(relu(fc1(concat(GAP(F), cond)))))`, `out = W (x) F`.
/// Returns `(modulated, weights)`.
pub fn nifm_forward(block: &NifmBlock, features: &Tensor, conditioning: &Tensor) -> Result<(Tensor, Tensor)> {
    let fshape = features.shape();
    if fshape.len() != 4 {
        return Err(CoreError::RankMismatch { op: "nifm_forward", expected: 4, got: fshape.len() });
    }
    if fshape[1] != block.channels_in {
        return Err(CoreError::DimMismatch {
            op: "nifm_forward",
            axis: 1,
            left: fshape[1],
            right: block.channels_in,
        });
    }
    let cshape = conditioning.shape();
    if cshape.len() != 2 {
        return Err(CoreError::RankMismatch { op: "nifm_forward", expected: 2, got: cshape.len() });
    }
    if cshape[0] != fshape[0] {
        return Err(CoreError::DimMismatch { op: "nifm_forward", axis: 0, left: cshape[0], right: fshape[0] });
    }
    if cshape[1] != block.indicator_len {
        return Err(CoreError::DimMismatch {
            op: "nifm_forward",
            axis: 1,
            left: cshape[1],
            right: block.indicator_len,
        });
    }
    let pooled = features.gap()?;
    let joined = Tensor::concat(&[&pooled, conditioning], 1)?;
    let hidden = joined.linear(&block.fc1_weight, &block.fc1_bias)?.relu()?;
    let weights = hidden.linear(&block.fc2_weight, &block.fc2_bias)?.sigmoid()?;
    let modulated = features.channel_scale(&weights)?;
    Ok((modulated, weights))
}

/// The `[N, L]` conditioning tensor for the block at `stage_index` (1-based).
///
/// `prev_weights` must be present exactly when `stage_index >= 2` and the
/// variant is `Recursive` or `Hybrid`. For the `Prompt` variant the block's
/// learnable prompt is replicated across the batch (it stays on the
/// gradient path); `indicators` are ignored.
pub fn conditioning_for_stage(
    tape: &Tape,
    block: &NifmBlock,
    variant: NifmVariant,
    stage_index: usize,
    indicators: &[NoiseIndicator],
    prev_weights: Option<&Tensor>,
) -> Result<Tensor> {
    if !(1..=4).contains(&stage_index) {
        return Err(CoreError::InvalidArg {
            op: "conditioning_for_stage",
            detail: format!("stage index {stage_index} outside 1..=4"),
        });
    }
    let wants_prev =
        stage_index >= 2 && matches!(variant, NifmVariant::Recursive | NifmVariant::Hybrid);
    if wants_prev && prev_weights.is_none() {
        return Err(CoreError::MissingPrevWeights { stage: stage_index });
    }
    if !wants_prev && prev_weights.is_some() {
        return Err(CoreError::InvalidArg {
            op: "conditioning_for_stage",
            detail: format!("stage {stage_index} with variant {variant:?} takes no previous weights"),
        });
    }
    let batch = indicators.len();
    if batch == 0 {
        return Err(CoreError::EmptyInput { op: "conditioning_for_stage" });
    }
    match variant {
        NifmVariant::Disabled => Err(CoreError::InvalidArg {
            op: "conditioning_for_stage",
            detail: "disabled variant has no conditioning".into(),
        }),
        NifmVariant::Default => indicator_matrix(tape, indicators),
        NifmVariant::Prompt => {
            let prompt = block.prompt.as_ref().ok_or(CoreError::InvalidArg {
                op: "conditioning_for_stage",
                detail: "prompt variant requires a prompt parameter".into(),
            })?;
            // replicate across the batch without detaching from the tape
            let row = prompt.reshape(&[1, prompt.numel()])?;
            let zeros = tape.zeros(&[batch, 1], false);
            row.add(&zeros)
        }
        NifmVariant::Recursive => {
            if stage_index == 1 {
                indicator_matrix(tape, indicators)
            } else {
                Ok(prev_weights.expect("checked above").clone())
            }
        }
        NifmVariant::Hybrid => {
            if stage_index == 1 {
                indicator_matrix(tape, indicators)
            } else {
                let ind = indicator_matrix(tape, indicators)?;
                Tensor::concat(&[&ind, prev_weights.expect("checked above")], 1)
            }
        }
    }
}

/// Stack per-sample one-hot vectors into a constant `[N, M]` tensor.
pub fn indicator_matrix(tape: &Tape, indicators: &[NoiseIndicator]) -> Result<Tensor> {
    let batch = indicators.len();
    if batch == 0 {
        return Err(CoreError::EmptyInput { op: "indicator_matrix" });
    }
    let m = indicators[0].len();
    let mut data = Vec::with_capacity(batch * m);
    for ind in indicators {
        if ind.len() != m {
            return Err(CoreError::DimMismatch { op: "indicator_matrix", axis: 1, left: m, right: ind.len() });
        }
        data.extend_from_slice(ind.vector());
    }
    tape.constant(data, &[batch, m])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indicator::{make_indicator, NoiseClassTable};

    #[test]
    fn hidden_dim_rule() {
        assert_eq!(hidden_dim(16), 9);
        assert_eq!(hidden_dim(36), 9);
        assert_eq!(hidden_dim(64), 16);
        assert_eq!(hidden_dim(256), 64);
    }

    #[test]
    fn conditioning_lengths() {
        use NifmVariant::*;
        assert_eq!(conditioning_len(Default, 3, 9, 32), 9);
        assert_eq!(conditioning_len(Prompt, 2, 9, 32), 9);
        assert_eq!(conditioning_len(Recursive, 1, 9, 0), 9);
        assert_eq!(conditioning_len(Recursive, 2, 9, 32), 32);
        assert_eq!(conditioning_len(Hybrid, 1, 9, 0), 9);
        assert_eq!(conditioning_len(Hybrid, 3, 9, 32), 41);
    }

    #[test]
    fn recursive_stage_one_uses_indicator() {
        let tape = Tape::new();
        let table = NoiseClassTable::default();
        let fog = make_indicator("Fog", &table).unwrap();
        let block = make_block(&tape, 8, 9, 1).unwrap();
        let cond =
            conditioning_for_stage(&tape, &block, NifmVariant::Recursive, 1, &[fog.clone()], None)
                .unwrap();
        assert_eq!(cond.data(), fog.vector());
    }

    #[test]
    fn missing_prev_weights_is_an_error() {
        let tape = Tape::new();
        let table = NoiseClassTable::default();
        let rain = make_indicator("Rain", &table).unwrap();
        let block = make_block(&tape, 8, 4, 1).unwrap();
        let err = conditioning_for_stage(&tape, &block, NifmVariant::Recursive, 2, &[rain], None)
            .unwrap_err();
        assert_eq!(err, CoreError::MissingPrevWeights { stage: 2 });
    }

    #[test]
    fn hybrid_layout_starts_with_one_hot() {
        let tape = Tape::new();
        let table = NoiseClassTable::default();
        let rain = make_indicator("Rain", &table).unwrap();
        let c1 = 4;
        let block = make_block(&tape, 8, 9 + c1, 1).unwrap();
        let prev = tape.constant(alloc::vec![0.25; c1], &[1, c1]).unwrap();
        let cond =
            conditioning_for_stage(&tape, &block, NifmVariant::Hybrid, 2, &[rain.clone()], Some(&prev))
                .unwrap();
        assert_eq!(cond.shape(), alloc::vec![1, 9 + c1]);
        let data = cond.data();
        assert_eq!(&data[..9], rain.vector());
        assert_eq!(&data[9..], &[0.25; 4]);
    }

    #[test]
    fn prompt_block_is_deterministic_and_length_nine() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let b1 = make_prompt_block(&t1, 32, 99).unwrap();
        let b2 = make_prompt_block(&t2, 32, 99).unwrap();
        let p1 = b1.prompt.as_ref().unwrap().data();
        let p2 = b2.prompt.as_ref().unwrap().data();
        assert_eq!(p1, p2);
        assert_eq!(p1.len(), 9);
        let b3 = make_prompt_block(&Tape::new(), 128, 99).unwrap();
        assert_eq!(b3.prompt.as_ref().unwrap().numel(), 9);
    }
}
