use crate::costvol::TopKCostVolume;
use crate::epigeo::EpipolarFrame;
use crate::error::{Error, Result};
use crate::fgflow::sgm::LabelCosts;
use crate::fgflow::{sgm_subpixel_labels, SgmPenalties, LINE_TOLERANCE};
use crate::imgproc::{FlowField, Mask};
use crate::scalar::Scalar;

/// Largest vz-ratio ever written into a field. Values close to 1 put points
/// at the camera plane and blow disparities up.
pub const OMEGA_MAX: f64 = 0.95;

/// Per-pixel vz-ratio `omega = v_z / Z` with a validity flag.
#[derive(Clone, Debug, PartialEq)]
pub struct VzRatioField {
    width: usize,
    height: usize,
    omega: Vec<f64>,
    valid: Vec<bool>,
}

impl VzRatioField {
    /// All pixels invalid.
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            omega: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    /// Field from a per-pixel closure. Values must be finite and below 1.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> Option<f64>,
    ) -> Result<Self> {
        let mut out = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if let Some(w) = f(x, y) {
                    out.set(x, y, w)?;
                }
            }
        }
        Ok(out)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then_some(self.omega[i])
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, omega: f64) -> Result<()> {
        if !(omega.is_finite() && omega < 1.0) {
            return Err(Error::InvalidArgument(format!("vz-ratio {omega} at ({x},{y}) is not below 1")));
        }
        let i = y * self.width + x;
        self.omega[i] = omega;
        self.valid[i] = true;
        Ok(())
    }

    pub fn invalidate(&mut self, x: usize, y: usize) {
        self.valid[y * self.width + x] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn valid_mask(&self) -> Mask {
        Mask::new(self.width, self.height, self.valid.clone()).expect("dimensions match")
    }
}

/// Disparity along the epipolar line of a point `delta` pixels from the
/// epipole with vz-ratio `omega`: `delta * omega / (1 - omega)`.
pub fn vz_disparity(delta: f64, omega: f64) -> Result<f64> {
    if !(omega < 1.0) {
        return Err(Error::InvalidArgument(format!("vz-ratio {omega} is not below 1")));
    }
    if !(delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative epipole distance {delta}")));
    }
    Ok(delta * omega / (1.0 - omega))
}

/// Inverse of [`vz_disparity`]: `d / (delta + d)`.
pub fn omega_from_disparity(delta: f64, d: f64) -> Result<f64> {
    let den = delta + d;
    if !(den > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "disparity {d} at epipole distance {delta} has no vz-ratio"
        )));
    }
    Ok(d / den)
}

/// Vz-ratio of the backward flow of a point with forward ratio `omega`.
pub fn backward_omega(omega: f64) -> f64 {
    -omega / (1.0 - omega)
}

/// Discrete vz-ratio labels. Fractional labels interpolate linearly between
/// neighbouring values.
#[derive(Clone, Debug, PartialEq)]
pub struct VzLabels {
    values: Vec<f64>,
}

impl VzLabels {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 || values.iter().any(|v| !(v.is_finite() && *v < 1.0)) {
            return Err(Error::InvalidArgument("vz labels need two finite values below 1".into()));
        }
        Ok(Self { values })
    }

    /// `n` uniform labels over `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo < hi) || n < 2 {
            return Err(Error::InvalidArgument(format!("invalid vz label range [{lo}, {hi}] x {n}")));
        }
        Self::from_values((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
    }

    /// Labels covering the vz-ratios implied by `samples`: from
    /// `min(0, 1st percentile)` to the 99th percentile padded by `pad`,
    /// capped at [`OMEGA_MAX`].
    pub fn from_samples(samples: &[f64], n: usize, pad: f64) -> Result<Self> {
        let mut s: Vec<f64> = samples.iter().copied().filter(|v| v.is_finite()).collect();
        if s.is_empty() {
            return Err(Error::Insufficient("no vz-ratio samples".into()));
        }
        s.sort_by(f64::total_cmp);
        let pick = |q: f64| s[((q * (s.len() - 1) as f64).round() as usize).min(s.len() - 1)];
        let lo = pick(0.01).clamp(-OMEGA_MAX, 0.0);
        let hi = (pick(0.99) * pad).min(OMEGA_MAX).max(lo + 1e-3);
        Self::uniform(lo, hi, n)
    }

    /// Labels of the backward flow, index by index.
    pub fn backward(&self) -> Self {
        Self {
            values: self.values.iter().map(|w| backward_omega(*w)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mean spacing between consecutive labels.
    pub fn step(&self) -> f64 {
        (self.values[self.len() - 1] - self.values[0]).abs() / (self.len() - 1) as f64
    }

    pub fn value(&self, label: f64) -> f64 {
        let l = label.clamp(0.0, (self.len() - 1) as f64);
        let i = (l.floor() as usize).min(self.len() - 2);
        let t = l - i as f64;
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }
}

/// Cost of every vz label of pixel `p`: for each label, the candidate of
/// `cv` nearest to the point `vz_disparity(delta, omega)` along `p`'s
/// epipolar line, within [`LINE_TOLERANCE`] across and along the line,
/// contributes `-score`; labels without a candidate cost `miss_penalty`.
pub fn vz_cost_profile<T: Scalar>(
    p: [usize; 2],
    frame: &EpipolarFrame,
    cv: &TopKCostVolume<T>,
    labels: &VzLabels,
    miss_penalty: f64,
) -> Result<Vec<f64>> {
    let (rect, dir) = frame.rectify([p[0] as f64, p[1] as f64])?;
    let delta = frame.epipole.distance(rect);
    let disp = labels
        .values()
        .iter()
        .map(|w| vz_disparity(delta, *w))
        .collect::<Result<Vec<f64>>>()?;
    let normal = [-dir[1], dir[0]];
    let mut costs = vec![miss_penalty; labels.len()];
    let mut nearest = vec![f64::INFINITY; labels.len()];
    for c in cv.candidates(p[0], p[1]) {
        let off = [
            (p[0] as i32 + c.du) as f64 - rect[0],
            (p[1] as i32 + c.dv) as f64 - rect[1],
        ];
        let perp = off[0] * normal[0] + off[1] * normal[1];
        if perp.abs() > LINE_TOLERANCE {
            continue;
        }
        let along = off[0] * dir[0] + off[1] * dir[1];
        let cost = -c.score.as_f64();
        for (l, d) in disp.iter().enumerate() {
            let gap = d - along;
            if gap.abs() > LINE_TOLERANCE {
                continue;
            }
            let dist = perp * perp + gap * gap;
            if dist < nearest[l] || (dist == nearest[l] && cost < costs[l]) {
                nearest[l] = dist;
                costs[l] = cost;
            }
        }
    }
    Ok(costs)
}

/// Vz cost profiles of every pixel of `region`. Pixels whose epipolar line
/// is undefined are dropped from the returned mask.
pub fn vz_cost_volume<T: Scalar>(
    frame: &EpipolarFrame,
    cv: &TopKCostVolume<T>,
    region: &Mask,
    labels: &VzLabels,
    miss_penalty: f64,
) -> Result<(LabelCosts<f64>, Mask)> {
    let (w, h) = (region.width(), region.height());
    let mut costs = LabelCosts::new(w, h, labels.len(), 0.0)?;
    let mut mask = Mask::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            if !region.get(x, y) {
                continue;
            }
            if let Ok(profile) = vz_cost_profile([x, y], frame, cv, labels, miss_penalty) {
                costs.at_mut(x, y).copy_from_slice(&profile);
                mask.set(x, y, true);
            }
        }
    }
    Ok((costs, mask))
}

/// Four-direction SGM over vz labels; each pixel of `mask` gets the
/// sub-label minimizer of its summed path costs.
pub fn sgm_vz(
    costs: &LabelCosts<f64>,
    mask: &Mask,
    labels: &VzLabels,
    penalties: &SgmPenalties<f64>,
) -> Result<VzRatioField> {
    if costs.labels() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} cost labels for {} vz labels",
            costs.labels(),
            labels.len()
        )));
    }
    let winners = sgm_subpixel_labels(costs, mask, penalties)?;
    let mut out = VzRatioField::new(costs.width(), costs.height());
    for (i, l) in winners.iter().enumerate() {
        if let Some(l) = l {
            out.set(i % costs.width(), i / costs.width(), labels.value(*l).min(OMEGA_MAX))?;
        }
    }
    Ok(out)
}

/// Background flow of every valid pixel: rotational flow plus
/// `vz_disparity` along the epipolar line, away from the epipole. Pixels
/// whose epipolar line is undefined get the rotational flow alone.
pub fn bg_flow_from_vz(field: &VzRatioField, frame: &EpipolarFrame) -> Result<FlowField<f64>> {
    let (w, h) = (field.width(), field.height());
    let mut out = FlowField::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let Some(omega) = field.get(x, y) else { continue };
            let p = [x as f64, y as f64];
            match frame.rectify(p) {
                Ok((rect, dir)) => {
                    let d = vz_disparity(frame.epipole.distance(rect), omega)?;
                    out.set(x, y, rect[0] + d * dir[0] - p[0], rect[1] + d * dir[1] - p[1]);
                }
                Err(_) => {
                    let u = frame.rotation.eval(p);
                    out.set(x, y, u[0], u[1]);
                }
            }
        }
    }
    Ok(out)
}
