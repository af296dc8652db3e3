use log::debug;

use super::extrapolate::extrapolate_vz;
use super::frame::{background_frame, backward_frame, BackgroundGeometry};
use super::plane::{slanted_plane, SlantedPlaneParams, SlantedPlaneResult};
use super::superpixel::{superpixels, SuperpixelParams};
use super::vz::{bg_flow_from_vz, omega_from_disparity, sgm_vz, vz_cost_volume, VzLabels, VzRatioField};
use crate::epigeo::{epipolar_disparity, RansacConfig};
use crate::error::Result;
use crate::fgflow::{left_right_check, miss_penalty, normalize_costs, FrameInputs, SgmPenalties};
use crate::imgproc::{FlowField, InstanceMap, Mask};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundParams {
    /// Number of vz-ratio labels.
    pub labels: usize,
    /// Padding factor on the 99th percentile of match vz-ratios.
    pub label_padding: f64,
    pub penalties: SgmPenalties<f64>,
    /// Unary costs are rescaled to `[0, cost_range]` before SGM.
    pub cost_range: f64,
    pub ransac: RansacConfig,
    /// Left-right tolerance, pixels.
    pub lr_tolerance: f64,
    pub superpixels: SuperpixelParams,
    pub plane: SlantedPlaneParams,
}

impl Default for BackgroundParams {
    fn default() -> Self {
        Self {
            labels: 96,
            label_padding: 1.2,
            penalties: SgmPenalties::default(),
            cost_range: 1024.0,
            ransac: RansacConfig::default(),
            lr_tolerance: 1.0,
            superpixels: SuperpixelParams::default(),
            plane: SlantedPlaneParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundFlowResult {
    /// Dense flow at every pixel, from the plane-fitted vz-ratios.
    pub flow: FlowField<f64>,
    pub geometry: BackgroundGeometry,
    pub labels: VzLabels,
    /// SGM vz-ratios that passed the left-right check.
    pub omega_semi: VzRatioField,
    /// After extrapolation toward the epipole.
    pub omega_filled: VzRatioField,
    pub plane: SlantedPlaneResult,
    /// Fraction of forward SGM pixels surviving the left-right check.
    pub lr_survival: f64,
}

/// Vz-ratios implied by the inlier matches of `geom`.
pub fn match_omegas(geom: &BackgroundGeometry) -> Vec<f64> {
    let frame = &geom.frame;
    geom.inliers
        .iter()
        .filter_map(|&i| {
            let m = &geom.matches[i];
            let (rect, _) = frame.rectify(m.p).ok()?;
            let d = epipolar_disparity(rect, m.q, &frame.epipole).ok()?;
            omega_from_disparity(frame.epipole.distance(rect), d).ok()
        })
        .collect()
}

fn sgm_field<T: Scalar>(
    frame: &crate::epigeo::EpipolarFrame,
    cv: &crate::costvol::TopKCostVolume<T>,
    region: &Mask,
    labels: &VzLabels,
    params: &BackgroundParams,
) -> Result<VzRatioField> {
    let (mut costs, mask) = vz_cost_volume(frame, cv, region, labels, miss_penalty(cv))?;
    normalize_costs(&mut costs, &mask, params.cost_range);
    sgm_vz(&costs, &mask, labels, &params.penalties)
}

/// Background flow of a frame pair: ego-motion geometry from background
/// matches, vz-ratio SGM with a left-right check, extrapolation into the
/// holes toward the epipole, and slanted-plane densification.
pub fn estimate_background_flow<T: Scalar>(
    inputs: &FrameInputs<'_, T>,
    map: &InstanceMap,
    params: &BackgroundParams,
) -> Result<BackgroundFlowResult> {
    let (w, h) = (map.width(), map.height());
    let geometry = background_frame(inputs.matches, map, &params.ransac)?;
    let frame = geometry.frame;
    debug!(
        "background: {:?}, {} of {} matches, epipole {:?}",
        geometry.motion,
        geometry.inliers.len(),
        geometry.matches.len(),
        frame.epipole
    );
    let labels = VzLabels::from_samples(&match_omegas(&geometry), params.labels, params.label_padding)?;
    let fg = map.foreground_mask();
    let region = Mask::from_fn(w, h, |x, y| !fg.get(x, y));
    let forward = sgm_field(&frame, inputs.cv_forward, &region, &labels, params)?;
    let frame_b = backward_frame(&geometry, w, h)?;
    let backward = sgm_field(&frame_b, inputs.cv_backward, &Mask::filled(w, h, true), &labels.backward(), params)?;
    let fw = bg_flow_from_vz(&forward, &frame)?;
    let bw = bg_flow_from_vz(&backward, &frame_b)?;
    let checked = left_right_check(&fw, &bw, params.lr_tolerance)?;
    let mut omega_semi = forward.clone();
    for y in 0..h {
        for x in 0..w {
            if !checked.is_valid(x, y) {
                omega_semi.invalidate(x, y);
            }
        }
    }
    let lr_survival = if forward.valid_count() > 0 {
        omega_semi.valid_count() as f64 / forward.valid_count() as f64
    } else {
        0.0
    };
    let omega_filled = extrapolate_vz(&omega_semi, &frame.epipole, map)?;
    let graph = superpixels(inputs.guide, &params.superpixels)?;
    let plane = slanted_plane(&omega_filled, &graph, &params.plane, labels.step())?;
    debug!(
        "background: lr survival {lr_survival:.3}, {} superpixels, {} sweeps",
        graph.len(),
        plane.energies.len() - 1
    );
    let flow = bg_flow_from_vz(&plane.field, &frame)?;
    Ok(BackgroundFlowResult {
        flow,
        geometry,
        labels,
        omega_semi,
        omega_filled,
        plane,
        lr_survival,
    })
}
