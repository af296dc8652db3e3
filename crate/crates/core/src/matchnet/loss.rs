use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Target mass at the ground-truth index and at distances 1 and 2.
pub const TARGET_WEIGHTS: [f64; 3] = [0.5, 0.2, 0.05];

/// Smoothed one-dimensional target distribution over candidate locations.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetDistribution {
    probs: Vec<f64>,
}

impl TargetDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn support(&self) -> usize {
        self.probs.len()
    }

    /// Point mass at `index`.
    pub fn delta(support: usize, index: usize) -> Result<Self> {
        check_index(support, index)?;
        let mut probs = vec![0.0; support];
        probs[index] = 1.0;
        Ok(Self { probs })
    }
}

fn check_index(support: usize, index: usize) -> Result<()> {
    if index >= support {
        return Err(Error::InvalidArgument(format!(
            "ground-truth index {index} outside support of size {support}"
        )));
    }
    Ok(())
}

/// Target with weights `0.5 / 0.2 / 0.05` at distance `0 / 1 / 2` from the
/// ground truth, renormalized when the window is cut by the support border.
pub fn make_target(support: usize, gt_index: usize) -> Result<TargetDistribution> {
    check_index(support, gt_index)?;
    let mut probs = vec![0.0; support];
    for offset in -2i64..=2 {
        let i = gt_index as i64 + offset;
        if i >= 0 && (i as usize) < support {
            probs[i as usize] = TARGET_WEIGHTS[offset.unsigned_abs() as usize];
        }
    }
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(TargetDistribution { probs })
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(scores: &[T]) -> Vec<T> {
    let m = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = scores.iter().map(|s| (*s - m).exp()).collect();
    let z: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Cross entropy `-sum_s p_gt(s) log softmax(scores)(s)` and its gradient
/// `softmax(scores) - p_gt`.
pub fn softmax_xent_loss<T: Scalar>(
    scores: &[T],
    target: &TargetDistribution,
) -> Result<(T, Vec<T>)> {
    if scores.len() != target.support() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores for a target of support {}",
            scores.len(),
            target.support()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("non-finite matching score".into()));
    }
    let m = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let log_z = m + scores.iter().map(|s| (*s - m).exp()).sum::<T>().ln();
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(scores.len());
    for (s, p) in scores.iter().zip(target.probs()) {
        let p = T::lit(*p);
        let log_q = *s - log_z;
        if p > T::zero() {
            loss = loss - p * log_q;
        }
        grad.push(log_q.exp() - p);
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centred_target_uses_smoothing_weights() {
        let t = make_target(201, 100).unwrap();
        assert_eq!(&t.probs()[98..103], &[0.05, 0.2, 0.5, 0.2, 0.05]);
        assert_eq!(t.probs().iter().filter(|p| **p > 0.0).count(), 5);
    }

    #[test]
    fn border_target_is_renormalized() {
        let t = make_target(201, 0).unwrap();
        let expect = [0.5 / 0.75, 0.2 / 0.75, 0.05 / 0.75];
        for (a, b) in t.probs()[..3].iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((t.probs()[0] - 0.6667).abs() < 1e-3);
        assert!((t.probs()[1] - 0.2667).abs() < 1e-3);
        assert!((t.probs()[2] - 0.0667).abs() < 1e-3);
    }

    #[test]
    fn target_index_out_of_range() {
        assert!(make_target(5, 5).is_err());
    }

    #[test]
    fn uniform_scores_give_log_n() {
        let n = 17;
        let t = TargetDistribution::delta(n, 3).unwrap();
        let (loss, _) = softmax_xent_loss(&vec![0.7f64; n], &t).unwrap();
        assert!((loss - (n as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn dominant_gt_score_drives_loss_to_zero() {
        let t = TargetDistribution::delta(4, 2).unwrap();
        let (loss, grad) = softmax_xent_loss(&[0.0f64, 0.0, 1e3, 0.0], &t).unwrap();
        assert!(loss < 1e-12);
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn non_finite_scores_rejected() {
        let t = TargetDistribution::delta(2, 0).unwrap();
        assert!(softmax_xent_loss(&[f64::INFINITY, 0.0], &t).is_err());
        assert!(softmax_xent_loss(&[f64::NAN, 0.0], &t).is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0f64, -3.0, 40.0, 2.5]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
