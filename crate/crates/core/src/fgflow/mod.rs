//! Flow of independently moving rigid bodies: per-body epipolar geometry,
//! semi-global matching over epipolar disparity, consistency checking, and
//! edge-aware densification.

mod instance;
mod interpolate;
mod lrcheck;
mod profile;
pub mod sgm;

pub use instance::{
    epipolar_sgm_flow, estimate_instance_flow, normalize_costs, sgm_subpixel_labels,
    ForegroundParams, FrameInputs, InstanceDiagnostics, InstanceFlowResult, InstanceStatus,
};
pub use interpolate::{interpolate_dense, InterpolationParams};
pub use lrcheck::left_right_check;
pub use profile::{instance_cost_profile, miss_penalty, DisparityRange, LINE_TOLERANCE};
pub use sgm::{chain_energy, sgm_1d, SgmPenalties};
