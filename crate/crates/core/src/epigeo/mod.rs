//! Two-view epipolar geometry of rigid bodies.

mod fundamental;
mod ransac;
mod rotation;

pub use fundamental::{
    eight_point, epipolar_line, epipole_of, skew, Epipole, FundamentalMatrix, DEGENERACY_RATIO,
};
pub use ransac::{ransac_f, RansacConfig, RansacResult};
pub use rotation::{
    epipolar_disparity, fit_rotational_flow, EpipolarFrame, RotationalFlowModel, ROTATION_RIDGE,
};

#[cfg(test)]
mod tests;
