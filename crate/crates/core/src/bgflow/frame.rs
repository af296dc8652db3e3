use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::costvol::Match;
use crate::epigeo::{fit_rotational_flow, ransac_f, skew, EpipolarFrame, FundamentalMatrix, RansacConfig, RotationalFlowModel};
use crate::error::{Error, Result};
use crate::imgproc::InstanceMap;

/// How the background motion was explained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackgroundMotion {
    /// Fundamental matrix from RANSAC.
    Epipolar,
    /// Every fundamental-matrix hypothesis was degenerate (no translation):
    /// an affine rotational field explains the matches.
    RotationOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundGeometry {
    pub frame: EpipolarFrame,
    pub motion: BackgroundMotion,
    /// Background matches used.
    pub matches: Vec<Match>,
    /// Indices into `matches` consistent with `frame`.
    pub inliers: Vec<usize>,
    /// Median point-to-line distance over `matches`, pixels.
    pub median_error: f64,
}

/// Matches whose first-frame pixel lies on the background.
pub fn background_matches(matches: &[Match], map: &InstanceMap) -> Vec<Match> {
    matches
        .iter()
        .filter(|m| {
            let (x, y) = (m.p[0].round(), m.p[1].round());
            x >= 0.0
                && y >= 0.0
                && (x as usize) < map.width()
                && (y as usize) < map.height()
                && map.label(x as usize, y as usize) == 0
        })
        .copied()
        .collect()
}

/// Affine least-squares fit of `q - p` over `matches`.
fn affine_flow(matches: &[Match]) -> Result<RotationalFlowModel> {
    let n = matches.len();
    let mut a = DMatrix::<f64>::zeros(n, 3);
    let mut bu = DVector::<f64>::zeros(n);
    let mut bv = DVector::<f64>::zeros(n);
    for (i, m) in matches.iter().enumerate() {
        a[(i, 0)] = 1.0;
        a[(i, 1)] = m.p[0];
        a[(i, 2)] = m.p[1];
        bu[i] = m.q[0] - m.p[0];
        bv[i] = m.q[1] - m.p[1];
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if !(svd.singular_values.min() > 1e-12 * smax) {
        return Err(Error::Degenerate("background matches are collinear".into()));
    }
    let cu = svd.solve(&bu, 0.0).map_err(|e| Error::Degenerate(e.to_string()))?;
    let cv = svd.solve(&bv, 0.0).map_err(|e| Error::Degenerate(e.to_string()))?;
    Ok(RotationalFlowModel {
        coeffs: [cu[0], cu[1], cu[2], cv[0], cv[1], cv[2]],
    })
}

/// Geometry of a translation-free motion: the affine field `u_w` carries all
/// of the flow, and epipolar lines radiate from `centre` through
/// `p + u_w(p)`, so every match has zero residual disparity.
fn rotation_only_frame(rotation: RotationalFlowModel, centre: [f64; 2]) -> Result<EpipolarFrame> {
    let a = &rotation.coeffs;
    let h = Matrix3::new(
        1.0 + a[1], a[2], a[0],
        a[4], 1.0 + a[5], a[3],
        0.0, 0.0, 1.0,
    );
    let f = FundamentalMatrix::from_matrix(skew(Vector3::new(centre[0], centre[1], 1.0)) * h)?;
    Ok(EpipolarFrame::new(f, rotation))
}

/// Ego-motion geometry from the confident matches on the background:
/// RANSAC fundamental matrix, rotational flow model, and epipole.
pub fn background_frame(
    matches: &[Match],
    map: &InstanceMap,
    ransac: &RansacConfig,
) -> Result<BackgroundGeometry> {
    let bg = background_matches(matches, map);
    if bg.len() < 8 {
        return Err(Error::Insufficient(format!(
            "{} confident background matches, need 8",
            bg.len()
        )));
    }
    match ransac_f(&bg, ransac) {
        Ok(res) => {
            let inl: Vec<Match> = res.inliers.iter().map(|&i| bg[i]).collect();
            let (rotation, _) = fit_rotational_flow(&inl, &res.f)?;
            Ok(BackgroundGeometry {
                frame: EpipolarFrame::new(res.f, rotation),
                motion: BackgroundMotion::Epipolar,
                inliers: res.inliers,
                median_error: res.median_sq_error.sqrt(),
                matches: bg,
            })
        }
        Err(Error::Degenerate(_)) => {
            let rotation = affine_flow(&bg)?;
            let centre = [(map.width() as f64 - 1.0) / 2.0, (map.height() as f64 - 1.0) / 2.0];
            let frame = rotation_only_frame(rotation, centre)?;
            let mut errs: Vec<f64> = bg
                .iter()
                .map(|m| {
                    let u = rotation.eval(m.p);
                    (m.p[0] + u[0] - m.q[0]).hypot(m.p[1] + u[1] - m.q[1])
                })
                .collect();
            let inliers = errs
                .iter()
                .enumerate()
                .filter(|(_, e)| **e < ransac.inlier_threshold)
                .map(|(i, _)| i)
                .collect();
            errs.sort_by(f64::total_cmp);
            Ok(BackgroundGeometry {
                frame,
                motion: BackgroundMotion::RotationOnly,
                inliers,
                median_error: errs[errs.len() / 2],
                matches: bg,
            })
        }
        Err(e) => Err(e),
    }
}

/// Geometry of the reverse motion (second frame to first) for the
/// left-right check.
pub fn backward_frame(geom: &BackgroundGeometry, width: usize, height: usize) -> Result<EpipolarFrame> {
    let swapped: Vec<Match> = geom
        .inliers
        .iter()
        .map(|&i| {
            let m = geom.matches[i];
            Match::new(m.q, m.p, m.score)
        })
        .collect();
    match geom.motion {
        BackgroundMotion::Epipolar => {
            let f = geom.frame.f.transpose();
            let rotation = fit_rotational_flow(&swapped, &f).map(|r| r.0).unwrap_or_default();
            Ok(EpipolarFrame::new(f, rotation))
        }
        BackgroundMotion::RotationOnly => {
            let centre = [(width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0];
            rotation_only_frame(affine_flow(&swapped)?, centre)
        }
    }
}
