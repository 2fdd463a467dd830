//! Composite training loss: binary cross-entropy + structural similarity
//! + soft IoU, with optional multi-scale (deep supervision) support.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::mathx;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SsimMode {
    /// Whole-map statistics.
    Global,
    /// 11x11 Gaussian windows (sigma 1.5), averaged over positions.
    Windowed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub ssim_c1: f64,
    pub ssim_c2: f64,
    pub eps_clamp: f64,
    pub iou_eps: f64,
    pub ssim_mode: SsimMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            ssim_c1: 0.012,
            ssim_c2: 0.032,
            eps_clamp: 1e-7,
            iou_eps: 1e-8,
            ssim_mode: SsimMode::Global,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ssim_c1 <= 0.0 || self.ssim_c2 <= 0.0 || self.eps_clamp <= 0.0 || self.iou_eps <= 0.0 {
            return Err(CoreError::InvalidArg {
                op: "loss_config",
                detail: "constants must be strictly positive".into(),
            });
        }
        Ok(())
    }
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != sb.len() {
        return Err(CoreError::RankMismatch { op, expected: sa.len(), got: sb.len() });
    }
    for (axis, (&l, &r)) in sa.iter().zip(&sb).enumerate() {
        if l != r {
            return Err(CoreError::DimMismatch { op, axis, left: l, right: r });
        }
    }
    Ok(())
}

/// Non-batch axes: a rank-4 tensor reduces per image, anything else as one map.
fn stat_axes(t: &Tensor) -> Vec<usize> {
    if t.rank() == 4 {
        alloc::vec![1, 2, 3]
    } else {
        (0..t.rank()).collect()
    }
}

fn per_image_count(t: &Tensor) -> usize {
    let shape = t.shape();
    if shape.len() == 4 {
        shape[1] * shape[2] * shape[3]
    } else {
        shape.iter().product()
    }
}

/// Mean over pixels of `-gt*log(pred) + (gt-1)*log(1-pred)`, with the
/// prediction clamped to `[eps, 1-eps]` before the logs.
pub fn bce_loss(pred: &Tensor, gt: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    cfg.validate()?;
    check_same_shape("bce_loss", pred, gt)?;
    let p = pred.clamp(cfg.eps_clamp, 1.0 - cfg.eps_clamp)?;
    let pos = gt.mul(&p.log()?)?.mul_scalar(-1.0)?;
    let one_minus_p = p.mul_scalar(-1.0)?.add_scalar(1.0)?;
    let neg = gt.add_scalar(-1.0)?.mul(&one_minus_p.log()?)?;
    pos.add(&neg)?.mean_all()
}

/// `1 - SSIM(pred, gt)`, in `[0, 2]`.
pub fn ssim_loss(pred: &Tensor, gt: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    cfg.validate()?;
    check_same_shape("ssim_loss", pred, gt)?;
    if per_image_count(pred) < 2 {
        return Err(CoreError::InvalidArg {
            op: "ssim_loss",
            detail: "needs at least 2 pixels per map".into(),
        });
    }
    match cfg.ssim_mode {
        SsimMode::Global => ssim_loss_global(pred, gt, cfg),
        SsimMode::Windowed => ssim_loss_windowed(pred, gt, cfg),
    }
}

fn ssim_loss_global(pred: &Tensor, gt: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    let axes = stat_axes(pred);
    let mu_p = pred.mean_axes(&axes)?;
    let mu_g = gt.mean_axes(&axes)?;
    // population variance/covariance via E[xy] - E[x]E[y]
    let var_p = pred.mul(pred)?.mean_axes(&axes)?.sub(&mu_p.mul(&mu_p)?)?;
    let var_g = gt.mul(gt)?.mean_axes(&axes)?.sub(&mu_g.mul(&mu_g)?)?;
    let cov = pred.mul(gt)?.mean_axes(&axes)?.sub(&mu_p.mul(&mu_g)?)?;
    let num = mu_g
        .mul(&mu_p)?
        .mul_scalar(2.0)?
        .add_scalar(cfg.ssim_c1)?
        .mul(&cov.mul_scalar(2.0)?.add_scalar(cfg.ssim_c2)?)?;
    let den = mu_g
        .mul(&mu_g)?
        .add(&mu_p.mul(&mu_p)?)?
        .add_scalar(cfg.ssim_c1)?
        .mul(&var_g.add(&var_p)?.add_scalar(cfg.ssim_c2)?)?;
    num.div(&den)?.mul_scalar(-1.0)?.add_scalar(1.0)?.mean_all()
}

/// Normalized 11x11 Gaussian (sigma 1.5) used by the windowed mode.
pub fn gaussian_window() -> ([usize; 2], Vec<f64>) {
    const SIZE: usize = 11;
    const SIGMA: f64 = 1.5;
    let mut one_d = [0.0f64; SIZE];
    let mid = (SIZE / 2) as f64;
    for (i, v) in one_d.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = mathx::exp(-d * d / (2.0 * SIGMA * SIGMA));
    }
    let mut win = Vec::with_capacity(SIZE * SIZE);
    for a in &one_d {
        for b in &one_d {
            win.push(a * b);
        }
    }
    let total: f64 = win.iter().sum();
    for v in &mut win {
        *v /= total;
    }
    ([SIZE, SIZE], win)
}

fn ssim_loss_windowed(pred: &Tensor, gt: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    let shape = pred.shape();
    if shape.len() != 4 {
        return Err(CoreError::RankMismatch { op: "ssim_loss", expected: 4, got: shape.len() });
    }
    if shape[1] != 1 {
        return Err(CoreError::InvalidArg {
            op: "ssim_loss",
            detail: format!("windowed mode expects 1 channel, got {}", shape[1]),
        });
    }
    let tape = pred.tape();
    let ([wh, ww], win) = gaussian_window();
    let kernel = tape.constant(win, &[1, 1, wh, ww])?;
    let zero_bias = tape.constant(alloc::vec![0.0], &[1])?;
    let pad = wh / 2;
    let conv = |t: &Tensor| t.conv2d(&kernel, &zero_bias, 1, pad);
    let mu_p = conv(pred)?;
    let mu_g = conv(gt)?;
    let var_p = conv(&pred.mul(pred)?)?.sub(&mu_p.mul(&mu_p)?)?;
    let var_g = conv(&gt.mul(gt)?)?.sub(&mu_g.mul(&mu_g)?)?;
    let cov = conv(&pred.mul(gt)?)?.sub(&mu_p.mul(&mu_g)?)?;
    let num = mu_g
        .mul(&mu_p)?
        .mul_scalar(2.0)?
        .add_scalar(cfg.ssim_c1)?
        .mul(&cov.mul_scalar(2.0)?.add_scalar(cfg.ssim_c2)?)?;
    let den = mu_g
        .mul(&mu_g)?
        .add(&mu_p.mul(&mu_p)?)?
        .add_scalar(cfg.ssim_c1)?
        .mul(&var_g.add(&var_p)?.add_scalar(cfg.ssim_c2)?)?;
    num.div(&den)?.mul_scalar(-1.0)?.add_scalar(1.0)?.mean_all()
}

/// Soft IoU loss `1 - (sum(gt*p) + eps) / (sum(gt) + sum(p) - sum(gt*p) + eps)`.
/// The shared epsilon makes the empty-vs-empty case cost zero.
pub fn iou_loss(pred: &Tensor, gt: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    cfg.validate()?;
    check_same_shape("iou_loss", pred, gt)?;
    let axes = stat_axes(pred);
    let inter = pred.mul(gt)?.sum_axes(&axes)?;
    let union = pred.sum_axes(&axes)?.add(&gt.sum_axes(&axes)?)?.sub(&inter)?;
    let iou = inter.add_scalar(cfg.iou_eps)?.div(&union.add_scalar(cfg.iou_eps)?)?;
    iou.mul_scalar(-1.0)?.add_scalar(1.0)?.mean_all()
}

/// Area-average a binary map by an integer factor, then re-binarize at 0.5.
pub fn downsample_mask(data: &[f64], height: usize, width: usize, factor: usize) -> Vec<f64> {
    let (ho, wo) = (height / factor, width / factor);
    let mut out = Vec::with_capacity(ho * wo);
    let norm = (factor * factor) as f64;
    for y in 0..ho {
        for x in 0..wo {
            let mut acc = 0.0;
            for dy in 0..factor {
                for dx in 0..factor {
                    acc += data[(y * factor + dy) * width + x * factor + dx];
                }
            }
            out.push(if acc / norm >= 0.5 { 1.0 } else { 0.0 });
        }
    }
    out
}

/// Sum of `bce + ssim + iou` over every output scale. `gt` must match the
/// first (main) output; coarser outputs compare against an area-averaged,
/// re-binarized ground truth.
pub fn total_loss(outputs: &[&Tensor], gt: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    cfg.validate()?;
    let first = *outputs.first().ok_or(CoreError::EmptyInput { op: "total_loss" })?;
    let gt_shape = gt.shape();
    let mut total: Option<Tensor> = None;
    for out in outputs {
        let out_shape = out.shape();
        let scale_gt = if out_shape == gt_shape {
            gt.clone()
        } else {
            if gt_shape.len() != 4 || out_shape.len() != 4 {
                return Err(CoreError::RankMismatch { op: "total_loss", expected: 4, got: out_shape.len() });
            }
            let (n, c, h, w) = (gt_shape[0], gt_shape[1], gt_shape[2], gt_shape[3]);
            let (oh, ow) = (out_shape[2], out_shape[3]);
            if c != 1 || out_shape[1] != 1 || h % oh != 0 || w % ow != 0 || h / oh != w / ow {
                return Err(CoreError::InvalidArg {
                    op: "total_loss",
                    detail: format!("cannot scale ground truth {gt_shape:?} to {out_shape:?}"),
                });
            }
            let factor = h / oh;
            let full = gt.data();
            let mut scaled = Vec::with_capacity(n * oh * ow);
            for img in 0..n {
                scaled.extend(downsample_mask(&full[img * h * w..(img + 1) * h * w], h, w, factor));
            }
            first.tape().constant(scaled, &[n, 1, oh, ow])?
        };
        let term = bce_loss(out, &scale_gt, cfg)?
            .add(&ssim_loss(out, &scale_gt, cfg)?)?
            .add(&iou_loss(out, &scale_gt, cfg)?)?;
        total = Some(match total {
            Some(acc) => acc.add(&term)?,
            None => term,
        });
    }
    Ok(total.expect("outputs nonempty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn bce_at_half_is_ln_two() {
        let tape = Tape::new();
        let p = tape.constant(alloc::vec![0.5; 4], &[2, 2]).unwrap();
        let g = tape.constant(alloc::vec![1.0, 0.0, 1.0, 0.0], &[2, 2]).unwrap();
        let l = bce_loss(&p, &g, &LossConfig::default()).unwrap().item().unwrap();
        assert!((l - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_perfect_is_nearly_zero() {
        let tape = Tape::new();
        let g = tape.constant(alloc::vec![1.0, 0.0, 1.0, 1.0], &[4]).unwrap();
        let l = bce_loss(&g, &g, &LossConfig::default()).unwrap().item().unwrap();
        assert!(l >= 0.0 && l <= 1e-6);
    }

    #[test]
    fn ssim_identity_is_zero() {
        let tape = Tape::new();
        let p = tape.constant(alloc::vec![0.1, 0.9, 0.4, 0.6], &[1, 1, 2, 2]).unwrap();
        let l = ssim_loss(&p, &p, &LossConfig::default()).unwrap().item().unwrap();
        assert!(l.abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_single_pixel() {
        let tape = Tape::new();
        let p = tape.constant(alloc::vec![0.5], &[1, 1, 1, 1]).unwrap();
        assert!(ssim_loss(&p, &p, &LossConfig::default()).is_err());
    }

    #[test]
    fn iou_empty_masks_cost_nothing() {
        let tape = Tape::new();
        let z = tape.constant(alloc::vec![0.0; 4], &[2, 2]).unwrap();
        let l = iou_loss(&z, &z, &LossConfig::default()).unwrap().item().unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn iou_disjoint_masks_cost_one() {
        let tape = Tape::new();
        let a = tape.constant(alloc::vec![1.0, 0.0, 0.0, 0.0], &[4]).unwrap();
        let b = tape.constant(alloc::vec![0.0, 0.0, 0.0, 1.0], &[4]).unwrap();
        let l = iou_loss(&a, &b, &LossConfig::default()).unwrap().item().unwrap();
        assert!((l - 1.0).abs() < 1e-6);
    }

    #[test]
    fn total_is_sum_of_parts_single_scale() {
        let tape = Tape::new();
        let p = tape.constant(alloc::vec![0.2, 0.7, 0.5, 0.9], &[1, 1, 2, 2]).unwrap();
        let g = tape.constant(alloc::vec![0.0, 1.0, 1.0, 1.0], &[1, 1, 2, 2]).unwrap();
        let cfg = LossConfig::default();
        let total = total_loss(&[&p], &g, &cfg).unwrap().item().unwrap();
        let parts = bce_loss(&p, &g, &cfg).unwrap().item().unwrap()
            + ssim_loss(&p, &g, &cfg).unwrap().item().unwrap()
            + iou_loss(&p, &g, &cfg).unwrap().item().unwrap();
        assert_eq!(total, parts);
    }

    #[test]
    fn downsample_mask_rounds_at_half() {
        // 2x2 blocks: [1 1 / 1 0] -> 0.75 -> 1; [0 0 / 0 1] -> 0.25 -> 0; [1 0 / 0 1] -> 0.5 -> 1
        let data = alloc::vec![
            1.0, 1.0, 0.0, 0.0, 1.0, 0.0, //
            1.0, 0.0, 0.0, 1.0, 0.0, 1.0,
        ];
        assert_eq!(downsample_mask(&data, 2, 6, 2), alloc::vec![1.0, 0.0, 1.0]);
    }
}
