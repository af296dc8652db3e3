use rayon::prelude::*;

use super::volume::{candidate_order, Candidate, TopKCostVolume};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Iterated box averaging of a sparse volume.
///
/// Each iteration replaces the score of displacement `s` at pixel `i` by the
/// mean of the neighbours' scores for `s` over a `size x size` window, taken
/// over the union of the neighbours' candidate sets. A neighbour without `s`
/// contributes 0; the divisor is the number of in-bounds neighbours. Only
/// the `k` best survive each iteration.
pub fn aggregate<T: Scalar>(
    cv: &TopKCostVolume<T>,
    iterations: usize,
    size: usize,
) -> Result<TopKCostVolume<T>> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "aggregation window must be odd and positive, got {size}"
        )));
    }
    let mut current = cv.clone();
    for _ in 0..iterations {
        current = aggregate_once(&current, size / 2);
    }
    Ok(current)
}

/// Per-thread accumulator indexed by window label; `touched` lists the labels
/// seen at the current pixel in first-seen order.
struct Accumulator<T> {
    sums: Vec<T>,
    seen: Vec<bool>,
    touched: Vec<usize>,
}

fn aggregate_once<T: Scalar>(cv: &TopKCostVolume<T>, radius: usize) -> TopKCostVolume<T> {
    let (w, h, k, window) = (cv.width(), cv.height(), cv.k(), cv.window());
    let labels = window.len();
    let next: Vec<Vec<Candidate<T>>> = (0..w * h)
        .into_par_iter()
        .map_init(
            || Accumulator {
                sums: vec![T::zero(); labels],
                seen: vec![false; labels],
                touched: Vec::new(),
            },
            |acc, i| {
                let (x, y) = (i % w, i / w);
                let (x0, x1) = (x.saturating_sub(radius), (x + radius).min(w - 1));
                let (y0, y1) = (y.saturating_sub(radius), (y + radius).min(h - 1));
                let n = T::lit(((x1 - x0 + 1) * (y1 - y0 + 1)) as f64);
                // summation order per label follows the neighbourhood scan
                for yy in y0..=y1 {
                    for xx in x0..=x1 {
                        for c in cv.candidates(xx, yy) {
                            let s = window.index(c.du, c.dv);
                            if !acc.seen[s] {
                                acc.seen[s] = true;
                                acc.sums[s] = T::zero();
                                acc.touched.push(s);
                            }
                            acc.sums[s] = acc.sums[s] + c.score;
                        }
                    }
                }
                let mut out: Vec<Candidate<T>> = acc
                    .touched
                    .drain(..)
                    .map(|s| {
                        acc.seen[s] = false;
                        let (du, dv) = window.displacement(s);
                        Candidate {
                            du,
                            dv,
                            score: acc.sums[s] / n,
                        }
                    })
                    .collect();
                out.sort_by(|a, b| candidate_order(&window, a, b));
                out.truncate(k);
                out
            },
        )
        .collect();
    TopKCostVolume::from_parts(w, h, k, window, next)
}
