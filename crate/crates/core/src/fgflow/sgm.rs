//! Semi-global matching over scanline dynamic programming.

use num_traits::Num;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imgproc::Mask;

/// Cost type accepted by the SGM recursions; integer costs make the
/// recursions exact.
pub trait SgmCost: Copy + PartialOrd + Num + Send + Sync + std::fmt::Debug {}

impl<T: Copy + PartialOrd + Num + Send + Sync + std::fmt::Debug> SgmCost for T {}

/// Pairwise penalties: `p1` for label jumps of one, `p2` for larger jumps.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SgmPenalties<C> {
    pub p1: C,
    pub p2: C,
}

impl Default for SgmPenalties<f64> {
    fn default() -> Self {
        Self { p1: 32.0, p2: 256.0 }
    }
}

impl<C: SgmCost> SgmPenalties<C> {
    pub fn new(p1: C, p2: C) -> Result<Self> {
        let s = Self { p1, p2 };
        s.validate()?;
        Ok(s)
    }

    /// Requires `p2 > p1 > 0`.
    pub fn validate(&self) -> Result<()> {
        if !(self.p1 > C::zero() && self.p2 > self.p1) {
            return Err(Error::InvalidArgument(format!(
                "SGM penalties must satisfy p2 > p1 > 0, got {:?}",
                self
            )));
        }
        Ok(())
    }

    /// Pairwise term between neighbouring labels.
    pub fn pairwise(&self, a: usize, b: usize) -> C {
        match a.abs_diff(b) {
            0 => C::zero(),
            1 => self.p1,
            _ => self.p2,
        }
    }
}

#[inline]
fn min2<C: SgmCost>(a: C, b: C) -> C {
    if b < a {
        b
    } else {
        a
    }
}

fn argmin<C: SgmCost>(v: &[C]) -> usize {
    let mut best = 0;
    for (i, c) in v.iter().enumerate().skip(1) {
        if *c < v[best] {
            best = i;
        }
    }
    best
}

/// One step of the path-cost recursion:
/// `out(d) = cost(d) + min(prev(d), prev(d±1) + p1, min prev + p2) - min prev`.
#[inline]
fn propagate<C: SgmCost>(prev: &[C], cost: &[C], pen: &SgmPenalties<C>, out: &mut [C]) {
    let n = prev.len();
    let mut m = prev[0];
    for &v in &prev[1..] {
        m = min2(m, v);
    }
    let jump = m + pen.p2;
    for d in 0..n {
        let mut best = min2(prev[d], jump);
        if d > 0 {
            best = min2(best, prev[d - 1] + pen.p1);
        }
        if d + 1 < n {
            best = min2(best, prev[d + 1] + pen.p1);
        }
        out[d] = cost[d] + best - m;
    }
}

/// Energy `sum_i costs[i][d_i] + sum_i S(d_i, d_{i+1})` of a labelling.
pub fn chain_energy<C: SgmCost>(costs: &[Vec<C>], labels: &[usize], pen: &SgmPenalties<C>) -> C {
    let mut e = C::zero();
    for (i, &d) in labels.iter().enumerate() {
        e = e + costs[i][d];
        if i > 0 {
            e = e + pen.pairwise(labels[i - 1], d);
        }
    }
    e
}

/// Single-direction SGM along a chain followed by backtracking, which yields
/// the labelling minimizing `chain_energy` exactly. Ties go to the smaller
/// label.
pub fn sgm_1d<C: SgmCost>(costs: &[Vec<C>], pen: &SgmPenalties<C>) -> Result<Vec<usize>> {
    let n = costs.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty scanline".into()));
    }
    let labels = costs[0].len();
    if labels == 0 || costs.iter().any(|c| c.len() != labels) {
        return Err(Error::InvalidArgument("scanline needs a common, non-empty label set".into()));
    }
    let mut l: Vec<Vec<C>> = Vec::with_capacity(n);
    l.push(costs[0].clone());
    for i in 1..n {
        let mut out = vec![C::zero(); labels];
        propagate(&l[i - 1], &costs[i], pen, &mut out);
        l.push(out);
    }
    let mut result = vec![0; n];
    result[n - 1] = argmin(&l[n - 1]);
    for i in (0..n - 1).rev() {
        let next = result[i + 1];
        let mut best = 0;
        let mut best_v = l[i][0] + pen.pairwise(0, next);
        for d in 1..labels {
            let v = l[i][d] + pen.pairwise(d, next);
            if v < best_v {
                best = d;
                best_v = v;
            }
        }
        result[i] = best;
    }
    Ok(result)
}

/// Dense per-pixel cost vectors over a shared label set.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelCosts<C> {
    width: usize,
    height: usize,
    labels: usize,
    data: Vec<C>,
}

impl<C: SgmCost> LabelCosts<C> {
    pub fn new(width: usize, height: usize, labels: usize, fill: C) -> Result<Self> {
        if labels == 0 {
            return Err(Error::InvalidArgument("label set is empty".into()));
        }
        Ok(Self {
            width,
            height,
            labels,
            data: vec![fill; width * height * labels],
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        labels: usize,
        f: impl Fn(usize, usize, usize) -> C + Sync,
    ) -> Result<Self> {
        let mut c = Self::new(width, height, labels, C::zero())?;
        c.data
            .par_chunks_mut(labels)
            .enumerate()
            .for_each(|(i, row)| {
                for (d, v) in row.iter_mut().enumerate() {
                    *v = f(i % width, i / width, d);
                }
            });
        Ok(c)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn at(&self, x: usize, y: usize) -> &[C] {
        let i = (y * self.width + x) * self.labels;
        &self.data[i..i + self.labels]
    }

    pub fn at_mut(&mut self, x: usize, y: usize) -> &mut [C] {
        let i = (y * self.width + x) * self.labels;
        &mut self.data[i..i + self.labels]
    }
}

/// Scanline directions of the grid SGM.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    LeftToRight,
    RightToLeft,
    TopToBottom,
    BottomToTop,
}

pub const FOUR_DIRECTIONS: [Direction; 4] = [
    Direction::LeftToRight,
    Direction::RightToLeft,
    Direction::TopToBottom,
    Direction::BottomToTop,
];

impl Direction {
    /// Pixel sequences traversed by this direction.
    fn lines(&self, w: usize, h: usize) -> Vec<Vec<(usize, usize)>> {
        match self {
            Direction::LeftToRight => (0..h).map(|y| (0..w).map(|x| (x, y)).collect()).collect(),
            Direction::RightToLeft => (0..h).map(|y| (0..w).rev().map(|x| (x, y)).collect()).collect(),
            Direction::TopToBottom => (0..w).map(|x| (0..h).map(|y| (x, y)).collect()).collect(),
            Direction::BottomToTop => (0..w).map(|x| (0..h).rev().map(|y| (x, y)).collect()).collect(),
        }
    }
}

/// Path costs of one direction, restricted to `mask`: a path restarts
/// whenever it leaves the mask.
fn directional<C: SgmCost>(
    costs: &LabelCosts<C>,
    mask: &Mask,
    pen: &SgmPenalties<C>,
    dir: Direction,
) -> Vec<C> {
    let (w, h, n) = (costs.width, costs.height, costs.labels);
    let lines = dir.lines(w, h);
    let per_line: Vec<(Vec<usize>, Vec<C>)> = lines
        .par_iter()
        .map(|line| {
            let mut idx = Vec::with_capacity(line.len());
            let mut vals: Vec<C> = Vec::with_capacity(line.len() * n);
            let mut continuing = false;
            for &(x, y) in line {
                if !mask.get(x, y) {
                    continuing = false;
                    continue;
                }
                let c = costs.at(x, y);
                let start = vals.len();
                if continuing {
                    vals.resize(start + n, C::zero());
                    let (head, tail) = vals.split_at_mut(start);
                    propagate(&head[start - n..], c, pen, tail);
                } else {
                    vals.extend_from_slice(c);
                }
                idx.push(y * w + x);
                continuing = true;
            }
            (idx, vals)
        })
        .collect();
    let mut acc = vec![C::zero(); w * h * n];
    for (idx, vals) in per_line {
        for (k, i) in idx.into_iter().enumerate() {
            acc[i * n..(i + 1) * n].copy_from_slice(&vals[k * n..(k + 1) * n]);
        }
    }
    acc
}

/// Summed directional path costs over `mask`, in a fixed direction order so
/// the result does not depend on scheduling.
pub fn sgm_aggregate<C: SgmCost>(
    costs: &LabelCosts<C>,
    mask: &Mask,
    pen: &SgmPenalties<C>,
    directions: &[Direction],
) -> Result<LabelCosts<C>> {
    if (mask.width(), mask.height()) != (costs.width, costs.height) {
        return Err(Error::DimensionMismatch("SGM mask and cost dimensions differ".into()));
    }
    let parts: Vec<Vec<C>> = directions
        .par_iter()
        .map(|d| directional(costs, mask, pen, *d))
        .collect();
    let mut sum = vec![C::zero(); costs.data.len()];
    for p in &parts {
        for (s, v) in sum.iter_mut().zip(p) {
            *s = *s + *v;
        }
    }
    Ok(LabelCosts {
        width: costs.width,
        height: costs.height,
        labels: costs.labels,
        data: sum,
    })
}

/// Per-pixel argmin (ties to the smaller label) of aggregated costs inside
/// `mask`; `None` outside.
pub fn winner_take_all<C: SgmCost>(agg: &LabelCosts<C>, mask: &Mask) -> Vec<Option<usize>> {
    (0..agg.width * agg.height)
        .map(|i| {
            let (x, y) = (i % agg.width, i / agg.width);
            mask.get(x, y).then(|| argmin(agg.at(x, y)))
        })
        .collect()
}

/// Sub-label offset in `[-0.5, 0.5]` from a parabola through the costs at
/// `d-1, d, d+1`; zero at the ends of the label range.
pub fn parabolic_offset(costs: &[f64], d: usize) -> f64 {
    if d == 0 || d + 1 >= costs.len() {
        return 0.0;
    }
    let (a, b, c) = (costs[d - 1], costs[d], costs[d + 1]);
    let denom = a - 2.0 * b + c;
    if denom <= 0.0 || !denom.is_finite() {
        return 0.0;
    }
    (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
}
