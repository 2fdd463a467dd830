//! Silhouette-style class-separation score for exported feature vectors.

use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::mathx;

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    mathx::sqrt(acc)
}

/// Mean over points of `(b - a) / max(a, b)` where `a` is the mean distance
/// to other points of the same class and `b` the smallest mean distance to
/// any other class. `0/0` counts as 0; singleton classes have `a = 0`.
pub fn separation_score(features: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if features.is_empty() {
        return Err(CoreError::EmptyInput { op: "separation_score" });
    }
    if features.len() != labels.len() {
        return Err(CoreError::LengthMismatch { expected: features.len(), got: labels.len() });
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(CoreError::InvalidArg {
            op: "separation_score",
            detail: "feature vectors must share one dimension".into(),
        });
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let n = features.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut intra_sum = 0.0;
        let mut intra_count = 0usize;
        let mut best_inter = f64::INFINITY;
        for &class in &classes {
            if class == labels[i] {
                for j in 0..n {
                    if j != i && labels[j] == class {
                        intra_sum += euclidean(&features[i], &features[j]);
                        intra_count += 1;
                    }
                }
            } else {
                let mut sum = 0.0;
                let mut count = 0usize;
                for j in 0..n {
                    if labels[j] == class {
                        sum += euclidean(&features[i], &features[j]);
                        count += 1;
                    }
                }
                if count > 0 {
                    let mean = sum / count as f64;
                    if mean < best_inter {
                        best_inter = mean;
                    }
                }
            }
        }
        let a = if intra_count > 0 { intra_sum / intra_count as f64 } else { 0.0 };
        let b = if best_inter.is_finite() { best_inter } else { 0.0 };
        let denom = a.max(b);
        total += if denom == 0.0 { 0.0 } else { (b - a) / denom };
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn tight_distinct_clusters_score_one() {
        let features = vec![
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![5.0, 5.0],
            vec![5.0, 5.0],
        ];
        let labels = vec![0, 0, 1, 1];
        assert_eq!(separation_score(&features, &labels).unwrap(), 1.0);
    }

    #[test]
    fn identical_features_score_zero() {
        let features = vec![vec![1.0, 2.0]; 6];
        let labels = vec![0, 0, 1, 1, 2, 2];
        assert_eq!(separation_score(&features, &labels).unwrap(), 0.0);
    }

    #[test]
    fn empty_input_errors() {
        assert!(matches!(
            separation_score(&[], &[]),
            Err(CoreError::EmptyInput { .. })
        ));
    }
}
