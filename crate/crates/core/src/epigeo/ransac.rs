use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{eight_point, FundamentalMatrix};
use crate::costvol::Match;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier distance to the epipolar line, pixels.
    pub inlier_threshold: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            inlier_threshold: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RansacResult {
    pub f: FundamentalMatrix,
    /// Indices of matches within the threshold of the returned `f`.
    pub inliers: Vec<usize>,
    /// Index of the selected hypothesis.
    pub selected: usize,
    /// Median squared line distance of every hypothesis; `None` for
    /// degenerate samples.
    pub hypothesis_medians: Vec<Option<f64>>,
    /// Median squared line distance of the returned `f` over all matches.
    pub median_sq_error: f64,
}

/// Seed of one hypothesis, derived from the master seed so that results do
/// not depend on how iterations are scheduled.
fn iteration_seed(master: u64, iteration: usize) -> u64 {
    let mut z = master ^ (iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn median(mut v: Vec<f64>) -> f64 {
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

fn squared_distances(f: &FundamentalMatrix, matches: &[Match]) -> Vec<f64> {
    matches
        .iter()
        .map(|m| {
            let d = f.line_distance(m.p, m.q);
            d * d
        })
        .collect()
}

/// Robust fundamental matrix: among minimal eight-point hypotheses, the one
/// with the smallest median squared point-to-line distance wins (ties go to
/// the earliest iteration). The winner is refit on its inliers.
pub fn ransac_f(matches: &[Match], config: &RansacConfig) -> Result<RansacResult> {
    if matches.len() < 8 {
        return Err(Error::Insufficient(format!(
            "RANSAC needs 8 matches, got {}",
            matches.len()
        )));
    }
    if config.iterations == 0 {
        return Err(Error::InvalidArgument("RANSAC needs at least one iteration".into()));
    }
    let hypotheses: Vec<Option<(FundamentalMatrix, f64)>> = (0..config.iterations)
        .into_par_iter()
        .map(|it| {
            let mut rng = ChaCha8Rng::seed_from_u64(iteration_seed(config.seed, it));
            let picked: Vec<Match> = sample(&mut rng, matches.len(), 8)
                .iter()
                .map(|i| matches[i])
                .collect();
            let f = eight_point(&picked).ok()?;
            Some((f, median(squared_distances(&f, matches))))
        })
        .collect();
    let mut best: Option<(usize, FundamentalMatrix, f64)> = None;
    for (it, h) in hypotheses.iter().enumerate() {
        if let Some((f, med)) = h {
            if best.as_ref().is_none_or(|b| *med < b.2) {
                best = Some((it, *f, *med));
            }
        }
    }
    let (selected, hyp, _) =
        best.ok_or_else(|| Error::Degenerate("every RANSAC hypothesis was degenerate".into()))?;
    let t2 = config.inlier_threshold * config.inlier_threshold;
    let inliers_of = |f: &FundamentalMatrix| -> Vec<usize> {
        squared_distances(f, matches)
            .iter()
            .enumerate()
            .filter(|(_, d)| **d < t2)
            .map(|(i, _)| i)
            .collect()
    };
    let hyp_inliers = inliers_of(&hyp);
    let refit: Vec<Match> = hyp_inliers.iter().map(|&i| matches[i]).collect();
    let f = eight_point(&refit).unwrap_or(hyp);
    let inliers = inliers_of(&f);
    Ok(RansacResult {
        f,
        inliers,
        selected,
        hypothesis_medians: hypotheses.iter().map(|h| h.map(|x| x.1)).collect(),
        median_sq_error: median(squared_distances(&f, matches)),
    })
}
