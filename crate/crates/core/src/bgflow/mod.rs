//! Background flow from the ego-motion: SGM over vz-ratios along the
//! background epipolar lines, extrapolation into occluded regions, and a
//! slanted-plane model over superpixels.

mod background;
mod debug;
mod extrapolate;
mod frame;
mod plane;
mod superpixel;
mod vz;

pub use background::{estimate_background_flow, match_omegas, BackgroundFlowResult, BackgroundParams};
pub use debug::{save_omega_png, save_superpixel_overlay};
pub use extrapolate::{extrapolate_vz, fit_vz_line, MAX_EXTRAPOLATION_SAMPLES};
pub use frame::{background_frame, background_matches, backward_frame, BackgroundGeometry, BackgroundMotion};
pub use plane::{huber, slanted_plane, PlaneParams, SlantedPlaneParams, SlantedPlaneResult};
pub use superpixel::{superpixels, BoundaryType, SuperpixelEdge, SuperpixelGraph, SuperpixelParams};
pub use vz::{
    backward_omega, bg_flow_from_vz, omega_from_disparity, sgm_vz, vz_cost_profile, vz_cost_volume,
    vz_disparity, VzLabels, VzRatioField, OMEGA_MAX,
};
