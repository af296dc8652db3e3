use crate::costvol::TopKCostVolume;
use crate::epigeo::EpipolarFrame;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Discrete disparity labels `d_min, d_min + step, ..., <= d_max`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisparityRange {
    pub d_min: f64,
    pub d_max: f64,
    pub step: f64,
}

impl Default for DisparityRange {
    fn default() -> Self {
        Self {
            d_min: -128.0,
            d_max: 128.0,
            step: 1.0,
        }
    }
}

impl DisparityRange {
    pub fn new(d_min: f64, d_max: f64, step: f64) -> Result<Self> {
        let r = Self { d_min, d_max, step };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_min < self.d_max && self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid disparity range {self:?}")));
        }
        Ok(())
    }

    pub fn labels(&self) -> usize {
        ((self.d_max - self.d_min) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn value(&self, label: f64) -> f64 {
        self.d_min + label * self.step
    }

    /// Nearest label of a disparity, if inside the range.
    pub fn label_of(&self, d: f64) -> Option<usize> {
        let l = ((d - self.d_min) / self.step).round();
        (l >= 0.0 && (l as usize) < self.labels()).then_some(l as usize)
    }
}

/// Largest distance from the epipolar line at which a candidate still
/// counts, pixels.
pub const LINE_TOLERANCE: f64 = 1.0;

/// Cost of every disparity label of pixel `p`: for each label, the
/// candidate of `cv` nearest to the point at that disparity on `p`'s
/// epipolar line (within one pixel of the line, and nearest to the label)
/// contributes `-score`; labels without a candidate cost `miss_penalty`.
pub fn instance_cost_profile<T: Scalar>(
    p: [usize; 2],
    frame: &EpipolarFrame,
    cv: &TopKCostVolume<T>,
    range: &DisparityRange,
    miss_penalty: f64,
) -> Result<Vec<f64>> {
    let (rect, dir) = frame.rectify([p[0] as f64, p[1] as f64])?;
    let normal = [-dir[1], dir[0]];
    let mut costs = vec![miss_penalty; range.labels()];
    let mut nearest = vec![f64::INFINITY; range.labels()];
    for c in cv.candidates(p[0], p[1]) {
        let q = [(p[0] as i32 + c.du) as f64, (p[1] as i32 + c.dv) as f64];
        let off = [q[0] - rect[0], q[1] - rect[1]];
        let perp = off[0] * normal[0] + off[1] * normal[1];
        if perp.abs() > LINE_TOLERANCE {
            continue;
        }
        let along = off[0] * dir[0] + off[1] * dir[1];
        let Some(label) = range.label_of(along) else {
            continue;
        };
        let gap = range.value(label as f64) - along;
        let dist = perp * perp + gap * gap;
        let cost = -c.score.as_f64();
        if dist < nearest[label] || (dist == nearest[label] && cost < costs[label]) {
            nearest[label] = dist;
            costs[label] = cost;
        }
    }
    Ok(costs)
}

/// Penalty for labels without a supporting candidate: one above the cost of
/// the weakest retained candidate.
pub fn miss_penalty<T: Scalar>(cv: &TopKCostVolume<T>) -> f64 {
    cv.min_score().map_or(1.0, |s| -s.as_f64() + 1.0)
}
