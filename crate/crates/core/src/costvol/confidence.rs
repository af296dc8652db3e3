use super::TopKCostVolume;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A correspondence `p -> p'` between the two frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub p: [f64; 2],
    pub q: [f64; 2],
    pub score: f64,
}

impl Match {
    pub fn new(p: [f64; 2], q: [f64; 2], score: f64) -> Self {
        Self { p, q, score }
    }

    pub fn flow(&self) -> [f64; 2] {
        [self.q[0] - self.p[0], self.q[1] - self.p[1]]
    }
}

pub type SparseMatches = Vec<Match>;

/// How the per-pixel confidence is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceSelector {
    /// Best aggregated score (higher is more confident).
    #[default]
    BestScore,
    /// Negative entropy of the softmax over the retained candidates.
    Entropy,
}

fn confidence<T: Scalar>(list: &[super::Candidate<T>], selector: ConfidenceSelector) -> f64 {
    match selector {
        ConfidenceSelector::BestScore => list[0].score.as_f64(),
        ConfidenceSelector::Entropy => {
            let scores: Vec<f64> = list.iter().map(|c| c.score.as_f64()).collect();
            let p = crate::matchnet::softmax(&scores);
            p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum()
        }
    }
}

/// Keeps the most confident pixels so that roughly `fraction` of the pixels
/// with candidates survive. The threshold is the confidence of the pixel at
/// rank `ceil(fraction * n) - 1`; every pixel at or above it is kept with its
/// best displacement.
pub fn confident_matches<T: Scalar>(
    cv: &TopKCostVolume<T>,
    fraction: f64,
    selector: ConfidenceSelector,
) -> Result<SparseMatches> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let mut scored: Vec<(usize, f64)> = cv
        .lists()
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| (i, confidence(l, selector)))
        .collect();
    if scored.is_empty() {
        return Err(Error::Insufficient("cost volume has no candidates".into()));
    }
    let mut sorted: Vec<f64> = scored.iter().map(|s| s.1).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let rank = ((fraction * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    let threshold = sorted[rank];
    scored.retain(|s| s.1 >= threshold);
    let w = cv.width();
    Ok(scored
        .into_iter()
        .map(|(i, _)| {
            let (x, y) = (i % w, i / w);
            let best = cv.lists()[i][0];
            Match::new(
                [x as f64, y as f64],
                [(x as i32 + best.du) as f64, (y as i32 + best.dv) as f64],
                best.score.as_f64(),
            )
        })
        .collect())
}
