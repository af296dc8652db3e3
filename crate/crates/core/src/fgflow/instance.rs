use log::debug;

use super::interpolate::{interpolate_dense, InterpolationParams};
use super::lrcheck::left_right_check;
use super::profile::{instance_cost_profile, miss_penalty, DisparityRange};
use super::sgm::{parabolic_offset, sgm_aggregate, LabelCosts, SgmPenalties, FOUR_DIRECTIONS};
use crate::costvol::{Match, TopKCostVolume};
use crate::epigeo::{
    fit_rotational_flow, ransac_f, EpipolarFrame, Epipole, FundamentalMatrix, RansacConfig,
};
use crate::error::{Error, Result};
use crate::imgproc::{FlowField, Image, Mask};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForegroundParams {
    pub range: DisparityRange,
    pub penalties: SgmPenalties<f64>,
    /// Unary costs of a body are rescaled to `[0, cost_range]` before SGM so
    /// the penalties act on a fixed scale.
    pub cost_range: f64,
    pub ransac: RansacConfig,
    /// Fewer RANSAC inliers than this selects the fallback.
    pub min_inliers: usize,
    /// A median epipolar error above this (pixels) selects the fallback.
    pub max_median_error: f64,
    /// Left-right tolerance, pixels.
    pub lr_tolerance: f64,
    pub interpolation: InterpolationParams,
}

impl Default for ForegroundParams {
    fn default() -> Self {
        Self {
            range: DisparityRange::default(),
            penalties: SgmPenalties::default(),
            cost_range: 1024.0,
            ransac: RansacConfig::default(),
            min_inliers: 15,
            max_median_error: 2.0,
            lr_tolerance: 1.0,
            interpolation: InterpolationParams::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InstanceStatus {
    /// Flow from the body's own epipolar geometry.
    Epipolar,
    /// Flow from the matcher's confident matches.
    Fallback,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InstanceDiagnostics {
    /// Confident matches inside the mask.
    pub matches: usize,
    pub inliers: usize,
    /// Median point-to-line distance over the body's matches, pixels.
    pub median_error: Option<f64>,
    /// Fraction of forward SGM pixels surviving the left-right check.
    pub lr_survival: Option<f64>,
    pub f: Option<FundamentalMatrix>,
    pub epipole: Option<Epipole>,
    pub fallback_reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceFlowResult {
    pub instance: u32,
    pub semi_dense: FlowField<f64>,
    pub dense: FlowField<f64>,
    pub status: InstanceStatus,
    pub diagnostics: InstanceDiagnostics,
}

/// Inputs shared by every body of a frame pair.
pub struct FrameInputs<'a, T> {
    pub cv_forward: &'a TopKCostVolume<T>,
    pub cv_backward: &'a TopKCostVolume<T>,
    /// Confident forward matches of the whole frame.
    pub matches: &'a [Match],
    /// Guide image (first frame) for interpolation.
    pub guide: &'a Image<f64>,
}

/// Rescales the costs of masked pixels to `[0, range]`.
pub fn normalize_costs(costs: &mut LabelCosts<f64>, mask: &Mask, range: f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for y in 0..costs.height() {
        for x in 0..costs.width() {
            if mask.get(x, y) {
                for &c in costs.at(x, y) {
                    lo = lo.min(c);
                    hi = hi.max(c);
                }
            }
        }
    }
    let scale = if hi > lo { range / (hi - lo) } else { 0.0 };
    for y in 0..costs.height() {
        for x in 0..costs.width() {
            if mask.get(x, y) {
                for c in costs.at_mut(x, y) {
                    *c = (*c - lo) * scale;
                }
            }
        }
    }
}

/// Four-direction SGM over `mask`; returns the sub-label winner per pixel:
/// the parabolic vertex around a unique minimum, or the middle of a run of
/// equal minima.
pub fn sgm_subpixel_labels(
    costs: &LabelCosts<f64>,
    mask: &Mask,
    penalties: &SgmPenalties<f64>,
) -> Result<Vec<Option<f64>>> {
    let agg = sgm_aggregate(costs, mask, penalties, &FOUR_DIRECTIONS)?;
    Ok((0..costs.width() * costs.height())
        .map(|i| {
            let (x, y) = (i % costs.width(), i / costs.width());
            if !mask.get(x, y) {
                return None;
            }
            let s = agg.at(x, y);
            let mut best = 0;
            for (d, v) in s.iter().enumerate() {
                if *v < s[best] {
                    best = d;
                }
            }
            // a run of equal minima resolves to its middle
            let mut end = best;
            while end + 1 < s.len() && s[end + 1] == s[best] {
                end += 1;
            }
            if end > best {
                return Some((best + end) as f64 / 2.0);
            }
            Some(best as f64 + parabolic_offset(s, best))
        })
        .collect())
}

/// Bounding box `(x0, y0, w, h)` of a non-empty mask.
pub(crate) fn bounding_box(mask: &Mask) -> Option<(usize, usize, usize, usize)> {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    (x0 != usize::MAX).then(|| (x0, y0, x1 - x0 + 1, y1 - y0 + 1))
}

/// Flow along the epipolar lines of `frame` for the pixels of `mask`,
/// from four-direction SGM over disparity labels.
pub fn epipolar_sgm_flow<T: Scalar>(
    frame: &EpipolarFrame,
    cv: &TopKCostVolume<T>,
    mask: &Mask,
    params: &ForegroundParams,
) -> Result<FlowField<f64>> {
    let (w, h) = (mask.width(), mask.height());
    let mut out = FlowField::new(w, h);
    let Some((bx, by, bw, bh)) = bounding_box(mask) else {
        return Ok(out);
    };
    let miss = miss_penalty(cv);
    let labels = params.range.labels();
    let mut local_mask = Mask::filled(bw, bh, false);
    let mut costs = LabelCosts::new(bw, bh, labels, 0.0)?;
    for y in 0..bh {
        for x in 0..bw {
            if !mask.get(bx + x, by + y) {
                continue;
            }
            if let Ok(profile) = instance_cost_profile([bx + x, by + y], frame, cv, &params.range, miss) {
                costs.at_mut(x, y).copy_from_slice(&profile);
                local_mask.set(x, y, true);
            }
        }
    }
    normalize_costs(&mut costs, &local_mask, params.cost_range);
    let winners = sgm_subpixel_labels(&costs, &local_mask, &params.penalties)?;
    for (i, label) in winners.iter().enumerate() {
        let Some(label) = label else { continue };
        let (x, y) = (bx + i % bw, by + i / bw);
        let p = [x as f64, y as f64];
        if let Ok(q) = frame.point_at(p, params.range.value(*label)) {
            out.set(x, y, q[0] - p[0], q[1] - p[1]);
        }
    }
    Ok(out)
}

/// Pixels reached by the valid flow of `mask`, grown by one pixel.
pub(crate) fn warped_mask(flow: &FlowField<f64>, w: usize, h: usize) -> Mask {
    let mut m = Mask::filled(w, h, false);
    for y in 0..flow.height() {
        for x in 0..flow.width() {
            if let Some((u, v)) = flow.get(x, y) {
                let tx = (x as f64 + u).round() as isize;
                let ty = (y as f64 + v).round() as isize;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (tx + dx, ty + dy);
                        if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                            m.set(nx as usize, ny as usize, true);
                        }
                    }
                }
            }
        }
    }
    m
}

fn fallback_seeds<T: Scalar>(mask: &Mask, inside: &[Match], cv: &TopKCostVolume<T>) -> FlowField<f64> {
    let (w, h) = (mask.width(), mask.height());
    let mut semi = FlowField::new(w, h);
    for m in inside {
        let f = m.flow();
        semi.set(m.p[0] as usize, m.p[1] as usize, f[0], f[1]);
    }
    if semi.valid_count() == 0 {
        for y in 0..h {
            for x in 0..w {
                if let (true, Some(c)) = (mask.get(x, y), cv.best(x, y)) {
                    semi.set(x, y, c.du as f64, c.dv as f64);
                }
            }
        }
    }
    semi
}

fn densify(semi: &FlowField<f64>, guide: &Image<f64>, mask: &Mask, params: &InterpolationParams) -> Result<FlowField<f64>> {
    if (0..semi.len()).any(|i| mask.data()[i] && semi.valid_mask()[i]) {
        interpolate_dense(semi, guide, mask, params)
    } else {
        Ok(FlowField::from_fn(mask.width(), mask.height(), |x, y| mask.get(x, y).then_some((0.0, 0.0))))
    }
}

/// Flow of one rigid body: its own fundamental matrix from the confident
/// matches inside its mask, SGM along its epipolar lines, a left-right
/// check, and interpolation over the mask. Bodies with too few or too noisy
/// matches use the confident matches directly.
pub fn estimate_instance_flow<T: Scalar>(
    instance: u32,
    mask: &Mask,
    inputs: &FrameInputs<'_, T>,
    params: &ForegroundParams,
) -> Result<InstanceFlowResult> {
    if mask.count() == 0 {
        return Err(Error::InvalidArgument(format!("instance {instance} has an empty mask")));
    }
    let (w, h) = (mask.width(), mask.height());
    let inside: Vec<Match> = inputs
        .matches
        .iter()
        .filter(|m| mask.get(m.p[0] as usize, m.p[1] as usize))
        .copied()
        .collect();
    let mut diag = InstanceDiagnostics {
        matches: inside.len(),
        ..Default::default()
    };
    let geometry = (|| -> std::result::Result<(EpipolarFrame, Vec<Match>), String> {
        if inside.len() < params.min_inliers.max(8) {
            return Err(format!("{} confident matches", inside.len()));
        }
        let res = ransac_f(&inside, &params.ransac).map_err(|e| e.to_string())?;
        diag.inliers = res.inliers.len();
        diag.median_error = Some(res.median_sq_error.sqrt());
        diag.f = Some(res.f);
        if res.inliers.len() < params.min_inliers {
            return Err(format!("{} inliers", res.inliers.len()));
        }
        if res.median_sq_error.sqrt() > params.max_median_error {
            return Err(format!("median epipolar error {:.3} px", res.median_sq_error.sqrt()));
        }
        let inl: Vec<Match> = res.inliers.iter().map(|&i| inside[i]).collect();
        let (rot, _) = fit_rotational_flow(&inl, &res.f).map_err(|e| e.to_string())?;
        Ok((EpipolarFrame::new(res.f, rot), inl))
    })();
    let (status, semi) = match geometry {
        Ok((frame, inliers)) => {
            diag.epipole = Some(frame.epipole);
            let fw = epipolar_sgm_flow(&frame, inputs.cv_forward, mask, params)?;
            let swapped: Vec<Match> = inliers.iter().map(|m| Match::new(m.q, m.p, m.score)).collect();
            let f_b = frame.f.transpose();
            let rot_b = fit_rotational_flow(&swapped, &f_b).map(|r| r.0).unwrap_or_default();
            let frame_b = EpipolarFrame::new(f_b, rot_b);
            let bw = epipolar_sgm_flow(&frame_b, inputs.cv_backward, &warped_mask(&fw, w, h), params)?;
            let checked = left_right_check(&fw, &bw, params.lr_tolerance)?;
            let total = fw.valid_count();
            diag.lr_survival = Some(if total > 0 { checked.valid_count() as f64 / total as f64 } else { 0.0 });
            if checked.valid_count() == 0 {
                diag.fallback_reason = Some("no pixel survived the left-right check".into());
                (InstanceStatus::Fallback, fallback_seeds(mask, &inside, inputs.cv_forward))
            } else {
                (InstanceStatus::Epipolar, checked)
            }
        }
        Err(reason) => {
            debug!("instance {instance}: fallback ({reason})");
            diag.fallback_reason = Some(reason);
            (InstanceStatus::Fallback, fallback_seeds(mask, &inside, inputs.cv_forward))
        }
    };
    let dense = densify(&semi, inputs.guide, mask, &params.interpolation)?;
    Ok(InstanceFlowResult {
        instance,
        semi_dense: semi,
        dense,
        status,
        diagnostics: diag,
    })
}
