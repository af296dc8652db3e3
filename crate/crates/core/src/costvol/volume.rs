use rayon::prelude::*;

use super::SearchWindow;
use crate::error::{Error, Result};
use crate::matchnet::{dot, FeatureMap};
use crate::scalar::Scalar;

/// One candidate displacement with its similarity score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate<T> {
    pub du: i32,
    pub dv: i32,
    pub score: T,
}

/// Per-pixel lists of at most `k` candidates, sorted by descending score,
/// ties in scanline order of the displacement.
#[derive(Clone, Debug, PartialEq)]
pub struct TopKCostVolume<T> {
    width: usize,
    height: usize,
    k: usize,
    window: SearchWindow,
    cands: Vec<Vec<Candidate<T>>>,
}

/// Ordering used for every candidate list: higher score first, then lower
/// scanline index.
pub(crate) fn candidate_order<T: Scalar>(
    window: &SearchWindow,
    a: &Candidate<T>,
    b: &Candidate<T>,
) -> std::cmp::Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then_with(|| window.index(a.du, a.dv).cmp(&window.index(b.du, b.dv)))
}

impl<T: Scalar> TopKCostVolume<T> {
    /// Builds a volume from explicit candidate lists. Lists are sorted and
    /// truncated to `k`; duplicates or out-of-window displacements are
    /// rejected.
    pub fn from_lists(
        width: usize,
        height: usize,
        k: usize,
        window: SearchWindow,
        mut cands: Vec<Vec<Candidate<T>>>,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("K must be positive".into()));
        }
        window.validate()?;
        if cands.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} candidate lists for a {width}x{height} volume",
                cands.len()
            )));
        }
        for list in &mut cands {
            let mut seen: Vec<usize> = Vec::with_capacity(list.len());
            for c in list.iter() {
                if !window.contains(c.du, c.dv) {
                    return Err(Error::InvalidArgument(format!(
                        "displacement ({}, {}) outside the window",
                        c.du, c.dv
                    )));
                }
                if !c.score.is_finite() {
                    return Err(Error::InvalidArgument("non-finite candidate score".into()));
                }
                seen.push(window.index(c.du, c.dv));
            }
            seen.sort_unstable();
            if seen.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidArgument("duplicate displacement in a candidate list".into()));
            }
            list.sort_by(|a, b| candidate_order(&window, a, b));
            list.truncate(k);
        }
        Ok(Self {
            width,
            height,
            k,
            window,
            cands,
        })
    }

    pub(crate) fn from_parts(
        width: usize,
        height: usize,
        k: usize,
        window: SearchWindow,
        cands: Vec<Vec<Candidate<T>>>,
    ) -> Self {
        Self {
            width,
            height,
            k,
            window,
            cands,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn window(&self) -> SearchWindow {
        self.window
    }

    pub fn candidates(&self, x: usize, y: usize) -> &[Candidate<T>] {
        &self.cands[y * self.width + x]
    }

    pub fn lists(&self) -> &[Vec<Candidate<T>>] {
        &self.cands
    }

    /// Best candidate of a pixel, if it has any.
    pub fn best(&self, x: usize, y: usize) -> Option<Candidate<T>> {
        self.candidates(x, y).first().copied()
    }

    /// Score of a specific displacement at a pixel, if retained.
    pub fn score_of(&self, x: usize, y: usize, du: i32, dv: i32) -> Option<T> {
        self.candidates(x, y)
            .iter()
            .find(|c| c.du == du && c.dv == dv)
            .map(|c| c.score)
    }

    /// Lowest score retained anywhere in the volume.
    pub fn min_score(&self) -> Option<T> {
        self.cands
            .iter()
            .filter_map(|l| l.last())
            .map(|c| c.score)
            .reduce(|a, b| a.min(b))
    }

    pub fn cast<U: Scalar>(&self) -> TopKCostVolume<U> {
        TopKCostVolume {
            width: self.width,
            height: self.height,
            k: self.k,
            window: self.window,
            cands: self
                .cands
                .iter()
                .map(|l| {
                    l.iter()
                        .map(|c| Candidate {
                            du: c.du,
                            dv: c.dv,
                            score: U::lit(c.score.as_f64()),
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

/// Scores every in-bounds displacement of the window by the inner product of
/// the two feature maps and keeps the `k` best per pixel. Displacements whose
/// target falls outside the second map are skipped.
pub fn build_cost_volume<T: Scalar>(
    f1: &FeatureMap<T>,
    f2: &FeatureMap<T>,
    window: SearchWindow,
    k: usize,
) -> Result<TopKCostVolume<T>> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be positive".into()));
    }
    window.validate()?;
    if (f1.width(), f1.height(), f1.dim()) != (f2.width(), f2.height(), f2.dim()) {
        return Err(Error::DimensionMismatch(format!(
            "feature maps {}x{}x{} and {}x{}x{}",
            f1.width(),
            f1.height(),
            f1.dim(),
            f2.width(),
            f2.height(),
            f2.dim()
        )));
    }
    let (w, h) = (f1.width() as i32, f1.height() as i32);
    let cands: Vec<Vec<Candidate<T>>> = (0..f1.width() * f1.height())
        .into_par_iter()
        .map(|i| {
            let (x, y) = ((i as i32) % w, (i as i32) / w);
            let f = f1.feature(x as usize, y as usize);
            let mut top: Vec<Candidate<T>> = Vec::with_capacity(k + 1);
            let dv0 = window.v_min.max(-y);
            let dv1 = window.v_max.min(h - y);
            let du0 = window.u_min.max(-x);
            let du1 = window.u_max.min(w - x);
            for dv in dv0..dv1 {
                for du in du0..du1 {
                    let g = f2.feature((x + du) as usize, (y + dv) as usize);
                    let score = dot(f, g);
                    insert_top_k(&mut top, k, Candidate { du, dv, score });
                }
            }
            top
        })
        .collect();
    Ok(TopKCostVolume::from_parts(f1.width(), f1.height(), k, window, cands))
}

/// Inserts into a descending list, keeping at most `k`. Candidates must
/// arrive in scanline order so that equal scores stay in that order.
#[inline]
fn insert_top_k<T: Scalar>(top: &mut Vec<Candidate<T>>, k: usize, c: Candidate<T>) {
    if top.len() == k && c.score <= top[k - 1].score {
        return;
    }
    let pos = top.partition_point(|t| t.score >= c.score);
    top.insert(pos, c);
    top.truncate(k);
}
