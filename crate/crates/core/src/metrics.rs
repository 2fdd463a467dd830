//! Saliency evaluation: MAE, S-measure, adaptive/mean/max F-measure and
//! E-measure, plus the 256-threshold precision-recall and F curves.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::mathx;

pub const CURVE_POINTS: usize = 256;
pub const DEFAULT_BETA2: f64 = 0.3;
pub const DEFAULT_ALPHA: f64 = 0.5;
const EPS: f64 = f64::EPSILON;

/// One prediction/ground-truth pair. The prediction is a `[0,1]` map, the
/// ground truth strictly binary.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pred: Vec<f64>,
    gt: Vec<f64>,
    height: usize,
    width: usize,
}

impl EvalPair {
    pub fn new(pred: Vec<f64>, gt: Vec<f64>, height: usize, width: usize) -> Result<Self> {
        let numel = height * width;
        if pred.len() != numel {
            return Err(CoreError::LengthMismatch { expected: numel, got: pred.len() });
        }
        if gt.len() != numel {
            return Err(CoreError::LengthMismatch { expected: numel, got: gt.len() });
        }
        if numel == 0 {
            return Err(CoreError::EmptyInput { op: "eval_pair" });
        }
        if let Some(i) = pred.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(CoreError::InvalidArg {
                op: "eval_pair",
                detail: alloc::format!("prediction value {} at index {i} outside [0,1]", pred[i]),
            });
        }
        if let Some(i) = gt.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(CoreError::InvalidArg {
                op: "eval_pair",
                detail: alloc::format!("ground truth value {} at index {i} is not binary", gt[i]),
            });
        }
        Ok(EvalPair { pred, gt, height, width })
    }

    pub fn pred(&self) -> &[f64] {
        &self.pred
    }

    pub fn gt(&self) -> &[f64] {
        &self.gt
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

/// Scalar metrics plus the threshold curves for one image (or, after
/// [`aggregate`], a dataset).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub mae: f64,
    pub s_measure: f64,
    pub f_adp: f64,
    pub f_mean: f64,
    pub f_max: f64,
    pub e_adp: f64,
    pub e_mean: f64,
    pub e_max: f64,
    /// (precision, recall) at threshold k/255, k = 0..=255.
    pub pr_curve: Vec<(f64, f64)>,
    /// F-measure at threshold k/255.
    pub f_curve: Vec<f64>,
}

impl MetricReport {
    /// Scalar fields in report order, paired with their column names.
    pub fn scalar_fields(&self) -> [(&'static str, f64); 8] {
        [
            ("mae", self.mae),
            ("s_measure", self.s_measure),
            ("f_adp", self.f_adp),
            ("f_mean", self.f_mean),
            ("f_max", self.f_max),
            ("e_adp", self.e_adp),
            ("e_mean", self.e_mean),
            ("e_max", self.e_max),
        ]
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn mae(pair: &EvalPair) -> f64 {
    let total: f64 = pair.pred.iter().zip(&pair.gt).map(|(&p, &g)| mathx::abs(p - g)).sum();
    total / pair.pred.len() as f64
}

/// Binarization level used by the adaptive F- and E-measures.
pub fn adaptive_threshold(pred: &[f64]) -> f64 {
    (2.0 * mean(pred)).min(1.0)
}

fn f_beta(tp: usize, fp: usize, fne: usize, beta2: f64) -> f64 {
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fne == 0 { 0.0 } else { tp as f64 / (tp + fne) as f64 };
    let den = beta2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * precision * recall / den
    }
}

fn confusion(pred: &[f64], gt: &[f64], threshold: f64) -> (usize, usize, usize) {
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        let b = p >= threshold;
        if b && g == 1.0 {
            tp += 1;
        } else if b {
            fp += 1;
        } else if g == 1.0 {
            fne += 1;
        }
    }
    (tp, fp, fne)
}

pub struct FMeasures {
    pub adp: f64,
    pub mean: f64,
    pub max: f64,
    pub pr_curve: Vec<(f64, f64)>,
    pub f_curve: Vec<f64>,
}

/// Threshold sweep at k/255 for k = 0..=255 plus the adaptive threshold.
/// Empty binarizations and empty ground truths score 0 by convention.
pub fn f_measures(pair: &EvalPair, beta2: f64) -> FMeasures {
    let mut pr_curve = Vec::with_capacity(CURVE_POINTS);
    let mut f_curve = Vec::with_capacity(CURVE_POINTS);
    for k in 0..CURVE_POINTS {
        let t = k as f64 / 255.0;
        let (tp, fp, fne) = confusion(&pair.pred, &pair.gt, t);
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fne == 0 { 0.0 } else { tp as f64 / (tp + fne) as f64 };
        pr_curve.push((precision, recall));
        f_curve.push(f_beta(tp, fp, fne, beta2));
    }
    let adp = {
        let (tp, fp, fne) = confusion(&pair.pred, &pair.gt, adaptive_threshold(&pair.pred));
        f_beta(tp, fp, fne, beta2)
    };
    let mean_f = mean(&f_curve);
    let max_f = f_curve.iter().cloned().fold(0.0, f64::max);
    FMeasures { adp, mean: mean_f, max: max_f, pr_curve, f_curve }
}

// ── S-measure ───────────────────────────────────────────────────────────

fn object_score(values: impl Iterator<Item = f64>) -> f64 {
    let vs: Vec<f64> = values.collect();
    if vs.is_empty() {
        return 0.0;
    }
    let m = mean(&vs);
    let sd = if vs.len() < 2 {
        0.0
    } else {
        let ss: f64 = vs.iter().map(|&v| (v - m) * (v - m)).sum();
        mathx::sqrt(ss / (vs.len() - 1) as f64)
    };
    2.0 * m / (m * m + 1.0 + sd + EPS)
}

fn s_object(pair: &EvalPair) -> f64 {
    let mu = mean(&pair.gt);
    let fg = object_score(
        pair.pred.iter().zip(&pair.gt).filter(|(_, &g)| g == 1.0).map(|(&p, _)| p),
    );
    let bg = object_score(
        pair.pred.iter().zip(&pair.gt).filter(|(_, &g)| g == 0.0).map(|(&p, _)| 1.0 - p),
    );
    mu * fg + (1.0 - mu) * bg
}

/// Ground-truth centroid in 1-based coordinates, rounded half away from zero.
fn centroid(gt: &[f64], height: usize, width: usize) -> (usize, usize) {
    let total: f64 = gt.iter().sum();
    if total == 0.0 {
        return (
            mathx::round(width as f64 / 2.0) as usize,
            mathx::round(height as f64 / 2.0) as usize,
        );
    }
    let mut col_acc = 0.0;
    let mut row_acc = 0.0;
    for y in 0..height {
        for x in 0..width {
            let v = gt[y * width + x];
            col_acc += v * (x + 1) as f64;
            row_acc += v * (y + 1) as f64;
        }
    }
    (mathx::round(col_acc / total) as usize, mathx::round(row_acc / total) as usize)
}

/// Regional similarity of one block (sample-normalized moments).
fn region_ssim(pred: &[f64], gt: &[f64], height: usize, width: usize, rect: (usize, usize, usize, usize)) -> f64 {
    let (y0, y1, x0, x1) = rect;
    let n = (y1 - y0) * (x1 - x0);
    if n == 0 {
        return 0.0; // empty block always carries zero weight
    }
    let _ = height;
    let mut sp = 0.0;
    let mut sg = 0.0;
    for y in y0..y1 {
        for x in x0..x1 {
            sp += pred[y * width + x];
            sg += gt[y * width + x];
        }
    }
    let (mp, mg) = (sp / n as f64, sg / n as f64);
    let (mut vp, mut vg, mut cov) = (0.0, 0.0, 0.0);
    for y in y0..y1 {
        for x in x0..x1 {
            let dp = pred[y * width + x] - mp;
            let dg = gt[y * width + x] - mg;
            vp += dp * dp;
            vg += dg * dg;
            cov += dp * dg;
        }
    }
    let denom = n as f64 - 1.0 + EPS;
    vp /= denom;
    vg /= denom;
    cov /= denom;
    let alpha = 4.0 * mp * mg * cov;
    let beta = (mp * mp + mg * mg) * (vp + vg);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn s_region(pair: &EvalPair) -> f64 {
    let (h, w) = (pair.height, pair.width);
    let (cx, cy) = centroid(&pair.gt, h, w);
    let area = (h * w) as f64;
    let w1 = (cx * cy) as f64 / area;
    let w2 = ((w - cx) * cy) as f64 / area;
    let w3 = (cx * (h - cy)) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;
    let q1 = region_ssim(&pair.pred, &pair.gt, h, w, (0, cy, 0, cx));
    let q2 = region_ssim(&pair.pred, &pair.gt, h, w, (0, cy, cx, w));
    let q3 = region_ssim(&pair.pred, &pair.gt, h, w, (cy, h, 0, cx));
    let q4 = region_ssim(&pair.pred, &pair.gt, h, w, (cy, h, cx, w));
    w1 * q1 + w2 * q2 + w3 * q3 + w4 * q4
}

/// Structure measure `alpha*S_object + (1-alpha)*S_region`, with the usual
/// all-background / all-foreground shortcuts, clamped to `[0,1]`.
pub fn s_measure(pair: &EvalPair, alpha: f64) -> f64 {
    let y = mean(&pair.gt);
    let s = if y == 0.0 {
        1.0 - mean(&pair.pred)
    } else if y == 1.0 {
        mean(&pair.pred)
    } else {
        alpha * s_object(pair) + (1.0 - alpha) * s_region(pair)
    };
    s.clamp(0.0, 1.0)
}

// ── E-measure ───────────────────────────────────────────────────────────

/// Enhanced-alignment score of one binarization.
fn e_score(pair: &EvalPair, threshold: f64) -> f64 {
    let n = pair.pred.len() as f64;
    let gt_sum: f64 = pair.gt.iter().sum();
    if gt_sum == 0.0 {
        let fm: f64 = pair.pred.iter().map(|&p| if p >= threshold { 1.0 } else { 0.0 }).sum();
        return (n - fm) / n;
    }
    if gt_sum == n {
        let fm: f64 = pair.pred.iter().map(|&p| if p >= threshold { 1.0 } else { 0.0 }).sum();
        return fm / n;
    }
    let mu_g = gt_sum / n;
    let fm_sum: f64 = pair.pred.iter().map(|&p| if p >= threshold { 1.0 } else { 0.0 }).sum();
    let mu_b = fm_sum / n;
    let mut acc = 0.0;
    for (&p, &g) in pair.pred.iter().zip(&pair.gt) {
        let b = if p >= threshold { 1.0 } else { 0.0 };
        let phi_g = g - mu_g;
        let phi_b = b - mu_b;
        let align = 2.0 * phi_g * phi_b / (phi_g * phi_g + phi_b * phi_b + EPS);
        let enhanced = (align + 1.0) * (align + 1.0) / 4.0;
        acc += enhanced;
    }
    acc / n
}

/// (adaptive, mean, max) enhanced-alignment measures over the same
/// thresholds as the F sweep.
pub fn e_measures(pair: &EvalPair) -> (f64, f64, f64) {
    let mut curve = Vec::with_capacity(CURVE_POINTS);
    for k in 0..CURVE_POINTS {
        curve.push(e_score(pair, k as f64 / 255.0));
    }
    let adp = e_score(pair, adaptive_threshold(&pair.pred));
    let mean_e = mean(&curve);
    let max_e = curve.iter().cloned().fold(0.0, f64::max);
    (adp, mean_e, max_e)
}

/// All ten metrics for one pair.
pub fn evaluate(pair: &EvalPair) -> MetricReport {
    let fm = f_measures(pair, DEFAULT_BETA2);
    let (e_adp, e_mean, e_max) = e_measures(pair);
    MetricReport {
        mae: mae(pair),
        s_measure: s_measure(pair, DEFAULT_ALPHA),
        f_adp: fm.adp,
        f_mean: fm.mean,
        f_max: fm.max,
        e_adp,
        e_mean,
        e_max,
        pr_curve: fm.pr_curve,
        f_curve: fm.f_curve,
    }
}

/// Arithmetic mean of scalar metrics; curves averaged pointwise.
pub fn aggregate(reports: &[MetricReport]) -> Result<MetricReport> {
    if reports.is_empty() {
        return Err(CoreError::EmptyInput { op: "aggregate" });
    }
    let n = reports.len() as f64;
    let mut pr_curve = vec![(0.0, 0.0); CURVE_POINTS];
    let mut f_curve = vec![0.0; CURVE_POINTS];
    let mut sums = [0.0f64; 8];
    for r in reports {
        for (acc, (_, v)) in sums.iter_mut().zip(r.scalar_fields()) {
            *acc += v;
        }
        for (dst, src) in pr_curve.iter_mut().zip(&r.pr_curve) {
            dst.0 += src.0;
            dst.1 += src.1;
        }
        for (dst, src) in f_curve.iter_mut().zip(&r.f_curve) {
            *dst += src;
        }
    }
    for (p, r) in &mut pr_curve {
        *p /= n;
        *r /= n;
    }
    for v in &mut f_curve {
        *v /= n;
    }
    Ok(MetricReport {
        mae: sums[0] / n,
        s_measure: sums[1] / n,
        f_adp: sums[2] / n,
        f_mean: sums[3] / n,
        f_max: sums[4] / n,
        e_adp: sums[5] / n,
        e_mean: sums[6] / n,
        e_max: sums[7] / n,
        pr_curve,
        f_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(pred: Vec<f64>, gt: Vec<f64>, h: usize, w: usize) -> EvalPair {
        EvalPair::new(pred, gt, h, w).unwrap()
    }

    #[test]
    fn mae_hand_example() {
        let p = pair(vec![0.5, 0.0, 1.0, 0.25], vec![1.0, 0.0, 1.0, 0.0], 2, 2);
        assert_eq!(mae(&p), 0.1875);
    }

    #[test]
    fn perfect_prediction_scores() {
        let gt = vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let p = pair(gt.clone(), gt, 3, 3);
        let r = evaluate(&p);
        assert_eq!(r.mae, 0.0);
        assert_eq!(r.f_adp, 1.0);
        assert_eq!(r.f_max, 1.0);
        assert!((r.s_measure - 1.0).abs() < 1e-9);
        assert!((r.e_max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn s_measure_empty_gt_rule() {
        let p = pair(vec![0.3; 4], vec![0.0; 4], 2, 2);
        assert!((s_measure(&p, DEFAULT_ALPHA) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn e_measure_both_empty_rule() {
        let p = pair(vec![0.0; 4], vec![0.0; 4], 2, 2);
        let (adp, mean_e, max_e) = e_measures(&p);
        // threshold 0 binarizes everything to 1, so only higher thresholds hit 1.0
        assert_eq!(max_e, 1.0);
        assert!(adp <= 1.0 && mean_e <= 1.0);
    }

    #[test]
    fn nonbinary_gt_rejected() {
        assert!(EvalPair::new(vec![0.5; 4], vec![0.0, 0.5, 1.0, 0.0], 2, 2).is_err());
    }

    #[test]
    fn out_of_range_pred_rejected() {
        assert!(EvalPair::new(vec![1.5, 0.0, 0.0, 0.0], vec![0.0; 4], 2, 2).is_err());
    }

    #[test]
    fn aggregate_of_single_report_is_identity() {
        let gt = vec![0.0, 1.0, 1.0, 1.0];
        let p = pair(vec![0.1, 0.8, 0.9, 0.7], gt, 2, 2);
        let r = evaluate(&p);
        let agg = aggregate(core::slice::from_ref(&r)).unwrap();
        assert_eq!(agg, r);
    }

    #[test]
    fn aggregate_means_two_reports() {
        // mae 0.02 and 0.04 average to 0.03
        let a = evaluate(&pair(vec![0.02; 4], vec![0.0; 4], 2, 2));
        let b = evaluate(&pair(vec![0.04; 4], vec![0.0; 4], 2, 2));
        let agg = aggregate(&[a, b]).unwrap();
        assert!((agg.mae - 0.03).abs() < 1e-12);
    }

    #[test]
    fn aggregate_empty_errors() {
        assert!(matches!(aggregate(&[]), Err(CoreError::EmptyInput { .. })));
    }
}
