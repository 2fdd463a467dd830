//! Staged convolutional encoder with fusion blocks between stages, two
//! interchangeable top-down decoders, and parameter/MAC accounting.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::error::{CoreError, Result};
use crate::indicator::NoiseIndicator;
use crate::nifm::{self, NifmBlock, NifmVariant};
use crate::params::{Binding, ParamSet};
use crate::rng;
use crate::tensor::{Tape, Tensor};

pub const STAGES: usize = 5;
/// Stage 5 keeps its raw output; fusion happens after stages 1-4 only.
pub const NIFM_SLOTS: usize = 4;
const DOWNSAMPLE: usize = 1 << STAGES;

/// Encoder layout. Each stage is `blocks_per_stage` repeats of
/// `[conv3x3 -> relu -> conv3x3 -> relu]` followed by a 2x2 max pool, so
/// stage `i` runs at 1/2^i of the input resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderSpec {
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: usize,
    pub input_channels: usize,
    pub indicator_len: usize,
    pub nifm_variant: NifmVariant,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            stage_channels: vec![16, 32, 64, 128, 256],
            blocks_per_stage: 1,
            input_channels: 3,
            indicator_len: 9,
            nifm_variant: NifmVariant::Default,
        }
    }
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.len() != STAGES {
            return Err(CoreError::InvalidArg {
                op: "encoder_spec",
                detail: format!("expected {STAGES} stage channel counts, got {}", self.stage_channels.len()),
            });
        }
        if self.stage_channels.iter().any(|&c| c == 0)
            || self.blocks_per_stage == 0
            || self.input_channels == 0
            || self.indicator_len == 0
        {
            return Err(CoreError::InvalidArg {
                op: "encoder_spec",
                detail: "channel counts, blocks and indicator length must be positive".into(),
            });
        }
        Ok(())
    }

    /// Conditioning length for the fusion block after stage `i` (1-based).
    fn cond_len(&self, stage_index: usize) -> usize {
        let prev = if stage_index >= 2 { self.stage_channels[stage_index - 2] } else { 0 };
        nifm::conditioning_len(self.nifm_variant, stage_index, self.indicator_len, prev)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderKind {
    /// Lateral 1x1 convs fused top-down by upsample+add, one 3x3 head.
    PlainTopDown,
    /// Same, plus side heads at 1/2, 1/4 and 1/8 resolution.
    DeepSupervised,
}

impl DecoderKind {
    pub fn side_outputs(&self) -> usize {
        match self {
            DecoderKind::PlainTopDown => 0,
            DecoderKind::DeepSupervised => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub encoder: EncoderSpec,
    pub decoder: DecoderKind,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec { encoder: EncoderSpec::default(), decoder: DecoderKind::PlainTopDown }
    }
}

/// Parameter count, multiply-accumulate count at a stated resolution, and
/// (when measured) forward passes per second.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub params: u64,
    pub macs: u64,
    pub resolution: usize,
    pub fps: Option<f64>,
}

// ── Parameter layout ────────────────────────────────────────────────────

enum Init {
    /// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)).
    Uniform { fan_in: usize },
    Zero,
    Prompt,
}

fn param_layout(spec: &ModelSpec) -> Result<Vec<(String, Vec<usize>, Init)>> {
    spec.encoder.validate()?;
    let enc = &spec.encoder;
    let mut out = Vec::new();
    let mut in_ch = enc.input_channels;
    for i in 1..=STAGES {
        let ch = enc.stage_channels[i - 1];
        for b in 0..enc.blocks_per_stage {
            let first_in = if b == 0 { in_ch } else { ch };
            out.push((
                format!("enc.s{i}.b{b}.c1.w"),
                vec![ch, first_in, 3, 3],
                Init::Uniform { fan_in: first_in * 9 },
            ));
            out.push((format!("enc.s{i}.b{b}.c1.b"), vec![ch], Init::Zero));
            out.push((
                format!("enc.s{i}.b{b}.c2.w"),
                vec![ch, ch, 3, 3],
                Init::Uniform { fan_in: ch * 9 },
            ));
            out.push((format!("enc.s{i}.b{b}.c2.b"), vec![ch], Init::Zero));
        }
        in_ch = ch;
    }
    if enc.nifm_variant != NifmVariant::Disabled {
        for n in 1..=NIFM_SLOTS {
            let ch = enc.stage_channels[n - 1];
            let hidden = nifm::hidden_dim(ch);
            let cond = enc.cond_len(n);
            let in_dim = ch + cond;
            out.push((format!("nifm{n}.fc1.w"), vec![hidden, in_dim], Init::Uniform { fan_in: in_dim }));
            out.push((format!("nifm{n}.fc1.b"), vec![hidden], Init::Zero));
            out.push((format!("nifm{n}.fc2.w"), vec![ch, hidden], Init::Uniform { fan_in: hidden }));
            out.push((format!("nifm{n}.fc2.b"), vec![ch], Init::Zero));
            if enc.nifm_variant == NifmVariant::Prompt {
                out.push((format!("nifm{n}.prompt"), vec![enc.indicator_len], Init::Prompt));
            }
        }
    }
    let width = decoder_width(enc);
    for i in 1..=STAGES {
        let ch = enc.stage_channels[i - 1];
        out.push((format!("dec.lat{i}.w"), vec![width, ch, 1, 1], Init::Uniform { fan_in: ch }));
        out.push((format!("dec.lat{i}.b"), vec![width], Init::Zero));
    }
    out.push((String::from("dec.head.w"), vec![1, width, 3, 3], Init::Uniform { fan_in: width * 9 }));
    out.push((String::from("dec.head.b"), vec![1], Init::Zero));
    for j in 1..=spec.decoder.side_outputs() {
        out.push((format!("dec.side{j}.w"), vec![1, width, 3, 3], Init::Uniform { fan_in: width * 9 }));
        out.push((format!("dec.side{j}.b"), vec![1], Init::Zero));
    }
    Ok(out)
}

/// Channel width the decoder fuses at.
pub fn decoder_width(enc: &EncoderSpec) -> usize {
    enc.stage_channels[0]
}

/// Seeded parameter initialization in layout order.
pub fn init_model_params(spec: &ModelSpec, seed: u64) -> Result<ParamSet> {
    let layout = param_layout(spec)?;
    let mut r = rng::seeded(rng::sub_seed(seed, 0));
    let mut set = ParamSet::new();
    for (name, shape, init) in layout {
        let numel: usize = shape.iter().product();
        let data = match init {
            Init::Uniform { fan_in } => draw_uniform(&mut r, numel, fan_in),
            Init::Zero => vec![0.0; numel],
            Init::Prompt => nifm::prompt_init(&mut r, numel),
        };
        set.push(name, shape, data);
    }
    Ok(set)
}

fn draw_uniform<R: RngCore>(r: &mut R, numel: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / crate::mathx::sqrt(fan_in as f64);
    (0..numel).map(|_| rng::uniform_range(r, -bound, bound)).collect()
}

// ── Forward passes ──────────────────────────────────────────────────────

pub struct EncoderOutput {
    /// Stage features F1..F5, modulated where a fusion block is active.
    pub features: Vec<Tensor>,
    /// Modulation weights per active fusion block (empty when disabled).
    pub nifm_weights: Vec<Tensor>,
}

fn nifm_block_from_binding(spec: &EncoderSpec, bind: &Binding, n: usize) -> Result<NifmBlock> {
    let ch = spec.stage_channels[n - 1];
    let prompt = if spec.nifm_variant == NifmVariant::Prompt {
        Some(bind.get(&format!("nifm{n}.prompt"))?)
    } else {
        None
    };
    NifmBlock::from_tensors(
        ch,
        spec.cond_len(n),
        bind.get(&format!("nifm{n}.fc1.w"))?,
        bind.get(&format!("nifm{n}.fc1.b"))?,
        bind.get(&format!("nifm{n}.fc2.w"))?,
        bind.get(&format!("nifm{n}.fc2.b"))?,
        prompt,
    )
}

/// Run the staged encoder. `indicators` carries the per-sample noise class;
/// it must match the batch dimension of `image`.
pub fn encoder_forward(
    spec: &EncoderSpec,
    bind: &Binding,
    image: &Tensor,
    indicators: &[NoiseIndicator],
) -> Result<EncoderOutput> {
    spec.validate()?;
    let shape = image.shape();
    if shape.len() != 4 {
        return Err(CoreError::RankMismatch { op: "encoder_forward", expected: 4, got: shape.len() });
    }
    let (n, h, w) = (shape[0], shape[2], shape[3]);
    if shape[1] != spec.input_channels {
        return Err(CoreError::DimMismatch {
            op: "encoder_forward",
            axis: 1,
            left: shape[1],
            right: spec.input_channels,
        });
    }
    if h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 {
        return Err(CoreError::IndivisibleResolution { height: h, width: w, divisor: DOWNSAMPLE });
    }
    if indicators.len() != n {
        return Err(CoreError::DimMismatch {
            op: "encoder_forward",
            axis: 0,
            left: n,
            right: indicators.len(),
        });
    }
    let tape = image.tape();
    let mut x = image.clone();
    let mut features = Vec::with_capacity(STAGES);
    let mut nifm_weights: Vec<Tensor> = Vec::new();
    for i in 1..=STAGES {
        for b in 0..spec.blocks_per_stage {
            let w1 = bind.get(&format!("enc.s{i}.b{b}.c1.w"))?;
            let b1 = bind.get(&format!("enc.s{i}.b{b}.c1.b"))?;
            x = x.conv2d(&w1, &b1, 1, 1)?.relu()?;
            let w2 = bind.get(&format!("enc.s{i}.b{b}.c2.w"))?;
            let b2 = bind.get(&format!("enc.s{i}.b{b}.c2.b"))?;
            x = x.conv2d(&w2, &b2, 1, 1)?.relu()?;
        }
        x = x.pool_max2()?;
        if i <= NIFM_SLOTS && spec.nifm_variant != NifmVariant::Disabled {
            let block = nifm_block_from_binding(spec, bind, i)?;
            let cond = nifm::conditioning_for_stage(
                tape,
                &block,
                spec.nifm_variant,
                i,
                indicators,
                nifm_weights.last().filter(|_| {
                    i >= 2 && matches!(spec.nifm_variant, NifmVariant::Recursive | NifmVariant::Hybrid)
                }),
            )?;
            let (modulated, weights) = nifm::nifm_forward(&block, &x, &cond)?;
            x = modulated;
            nifm_weights.push(weights);
        }
        features.push(x.clone());
    }
    Ok(EncoderOutput { features, nifm_weights })
}

pub struct DecoderOutput {
    /// Full-resolution sigmoid saliency map `[N,1,H,W]`.
    pub main: Tensor,
    /// Side outputs at 1/2, 1/4, 1/8 resolution (deep supervision only).
    pub sides: Vec<Tensor>,
}

impl DecoderOutput {
    /// Main map followed by the side maps.
    pub fn all(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.main];
        v.extend(self.sides.iter());
        v
    }
}

/// Map the five stage features to saliency. Both decoder kinds consume the
/// same feature interface.
pub fn decoder_forward(kind: DecoderKind, bind: &Binding, features: &[Tensor]) -> Result<DecoderOutput> {
    if features.len() != STAGES {
        return Err(CoreError::InvalidArg {
            op: "decoder_forward",
            detail: format!("expected {STAGES} stage features, got {}", features.len()),
        });
    }
    // lateral projections, then top-down fusion from the deepest stage
    let mut laterals = Vec::with_capacity(STAGES);
    for (i, f) in features.iter().enumerate() {
        let w = bind.get(&format!("dec.lat{}.w", i + 1))?;
        let b = bind.get(&format!("dec.lat{}.b", i + 1))?;
        laterals.push(f.conv2d(&w, &b, 1, 0)?);
    }
    let mut fused = laterals[STAGES - 1].clone();
    let mut pyramid = vec![fused.clone()];
    for i in (0..STAGES - 1).rev() {
        fused = laterals[i].add(&fused.upsample_nearest2()?)?;
        pyramid.push(fused.clone());
    }
    pyramid.reverse(); // pyramid[i] is the fused map at stage i+1 resolution
    let head_w = bind.get("dec.head.w")?;
    let head_b = bind.get("dec.head.b")?;
    let main = pyramid[0].upsample_nearest2()?.conv2d(&head_w, &head_b, 1, 1)?.sigmoid()?;
    let mut sides = Vec::new();
    for j in 1..=kind.side_outputs() {
        let w = bind.get(&format!("dec.side{j}.w"))?;
        let b = bind.get(&format!("dec.side{j}.b"))?;
        sides.push(pyramid[j - 1].conv2d(&w, &b, 1, 1)?.sigmoid()?);
    }
    Ok(DecoderOutput { main, sides })
}

/// Encoder + decoder in one call.
pub fn model_forward(
    spec: &ModelSpec,
    bind: &Binding,
    image: &Tensor,
    indicators: &[NoiseIndicator],
) -> Result<(EncoderOutput, DecoderOutput)> {
    let enc = encoder_forward(&spec.encoder, bind, image, indicators)?;
    let dec = decoder_forward(spec.decoder, bind, &enc.features)?;
    Ok((enc, dec))
}

// ── Cost accounting ─────────────────────────────────────────────────────

/// Exact learnable-parameter count.
pub fn count_params(spec: &ModelSpec) -> Result<u64> {
    Ok(param_layout(spec)?
        .iter()
        .map(|(_, shape, _)| shape.iter().product::<usize>() as u64)
        .sum())
}

/// Multiply-accumulates for one `resolution x resolution` image:
/// `K*C*kh*kw*H'*W'` per convolution and `O*D` per fully connected layer.
pub fn count_macs(spec: &ModelSpec, resolution: usize) -> Result<u64> {
    spec.encoder.validate()?;
    if resolution % DOWNSAMPLE != 0 {
        return Err(CoreError::IndivisibleResolution {
            height: resolution,
            width: resolution,
            divisor: DOWNSAMPLE,
        });
    }
    let enc = &spec.encoder;
    let mut macs: u64 = 0;
    let mut in_ch = enc.input_channels as u64;
    let mut side = resolution as u64;
    for i in 1..=STAGES {
        let ch = enc.stage_channels[i - 1] as u64;
        for b in 0..enc.blocks_per_stage {
            let first_in = if b == 0 { in_ch } else { ch };
            macs += ch * first_in * 9 * side * side;
            macs += ch * ch * 9 * side * side;
        }
        side /= 2;
        if i <= NIFM_SLOTS && enc.nifm_variant != NifmVariant::Disabled {
            let hidden = nifm::hidden_dim(ch as usize) as u64;
            let in_dim = ch + enc.cond_len(i) as u64;
            macs += hidden * in_dim; // fc1
            macs += ch * hidden; // fc2
        }
        in_ch = ch;
    }
    let width = decoder_width(enc) as u64;
    let mut lat_side = resolution as u64;
    for i in 1..=STAGES {
        lat_side /= 2;
        macs += width * enc.stage_channels[i - 1] as u64 * lat_side * lat_side;
    }
    let r = resolution as u64;
    macs += width * 9 * r * r; // main head after the final upsample
    for j in 1..=spec.decoder.side_outputs() as u64 {
        let s = r >> j;
        macs += width * 9 * s * s;
    }
    Ok(macs)
}

/// Parameter and MAC totals; FPS is measured by the host environment and
/// filled in separately.
pub fn count_ops(spec: &ModelSpec, resolution: usize) -> Result<CostReport> {
    Ok(CostReport {
        params: count_params(spec)?,
        macs: count_macs(spec, resolution)?,
        resolution,
        fps: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec(variant: NifmVariant) -> ModelSpec {
        ModelSpec {
            encoder: EncoderSpec {
                stage_channels: vec![4, 8, 16, 32, 64],
                blocks_per_stage: 1,
                input_channels: 3,
                indicator_len: 9,
                nifm_variant: variant,
            },
            decoder: DecoderKind::PlainTopDown,
        }
    }

    #[test]
    fn five_stage_requirement() {
        let mut spec = tiny_spec(NifmVariant::Default);
        spec.encoder.stage_channels.pop();
        assert!(spec.encoder.validate().is_err());
    }

    #[test]
    fn indivisible_resolution_rejected() {
        let spec = tiny_spec(NifmVariant::Disabled);
        let params = init_model_params(&spec, 0).unwrap();
        let tape = Tape::new();
        let bind = params.bind(&tape).unwrap();
        let image = tape.zeros(&[1, 3, 48, 48], false);
        let ind = NoiseIndicator::from_index(0, 9).unwrap();
        let err = encoder_forward(&spec.encoder, &bind, &image, &[ind]).unwrap_err();
        assert!(matches!(err, CoreError::IndivisibleResolution { divisor: 32, .. }));
    }

    #[test]
    fn disabled_has_no_fusion_params() {
        let with = count_params(&tiny_spec(NifmVariant::Default)).unwrap();
        let without = count_params(&tiny_spec(NifmVariant::Disabled)).unwrap();
        let mut fc = 0u64;
        for n in 1..=NIFM_SLOTS {
            let ch = [4u64, 8, 16, 32][n - 1];
            let hidden = nifm::hidden_dim(ch as usize) as u64;
            let in_dim = ch + 9;
            fc += hidden * in_dim + hidden + ch * hidden + ch;
        }
        assert_eq!(with - without, fc);
    }

    #[test]
    fn single_conv_cost_examples() {
        // 1-channel 3x3 conv: 9 weights + 1 bias
        let shape = vec![1usize, 1, 3, 3];
        let params: usize = shape.iter().product::<usize>() + 1;
        assert_eq!(params, 10);
        // at 8x8, pad 1, stride 1: 1*1*1*9*8*8
        assert_eq!(1 * 1 * 9 * 8 * 8, 576);
    }
}
