use nalgebra::{DMatrix, DVector};

use super::{epipolar_line, epipole_of, Epipole, FundamentalMatrix};
use crate::costvol::Match;
use crate::error::{Error, Result};

/// Affine approximation of the rotational flow component:
/// `u_w(x, y) = (a0 + a1 x + a2 y, a3 + a4 x + a5 y)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RotationalFlowModel {
    pub coeffs: [f64; 6],
}

impl RotationalFlowModel {
    pub fn eval(&self, p: [f64; 2]) -> [f64; 2] {
        let a = &self.coeffs;
        [
            a[0] + a[1] * p[0] + a[2] * p[1],
            a[3] + a[4] * p[0] + a[5] * p[1],
        ]
    }
}

/// Weight of the penalty on `|u_w|^2`. Epipolar residuals alone leave the
/// component of `u_w` that scales points about the epipole undetermined; the
/// small penalty selects the smallest field among equally consistent ones.
pub const ROTATION_RIDGE: f64 = 1e-6;

/// Least-squares rotational model: minimizes the distance of `p + u_w(p)` to
/// the epipolar line of `p`, plus a small ridge on the field itself.
/// Returns the model and the RMS line distance of `p + u_w(p)`.
pub fn fit_rotational_flow(
    inliers: &[Match],
    f: &FundamentalMatrix,
) -> Result<(RotationalFlowModel, f64)> {
    if inliers.len() < 6 {
        return Err(Error::Insufficient(format!(
            "rotational fit needs 6 matches, got {}",
            inliers.len()
        )));
    }
    let n = inliers.len();
    // centred, scaled coordinates keep the system well conditioned
    let (mut cx, mut cy) = (0.0, 0.0);
    for m in inliers {
        cx += m.p[0];
        cy += m.p[1];
    }
    cx /= n as f64;
    cy /= n as f64;
    let scale = inliers
        .iter()
        .map(|m| (m.p[0] - cx).abs().max((m.p[1] - cy).abs()))
        .fold(0.0f64, f64::max)
        .max(1.0);
    let ridge = ROTATION_RIDGE.sqrt();
    let mut a = DMatrix::<f64>::zeros(3 * n, 6);
    let mut b = DVector::<f64>::zeros(3 * n);
    for (i, m) in inliers.iter().enumerate() {
        let l = epipolar_line(f, m.p)?;
        let (x, y) = ((m.p[0] - cx) / scale, (m.p[1] - cy) / scale);
        let basis = [1.0, x, y];
        for k in 0..3 {
            a[(3 * i, k)] = l.x * basis[k];
            a[(3 * i, 3 + k)] = l.y * basis[k];
            a[(3 * i + 1, k)] = ridge * basis[k];
            a[(3 * i + 2, 3 + k)] = ridge * basis[k];
        }
        b[3 * i] = -(l.x * m.p[0] + l.y * m.p[1] + l.z);
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(Error::Degenerate("rotational fit is rank deficient".into()));
    }
    let c = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::Degenerate(format!("rotational fit failed: {e}")))?;
    // back to pixel coordinates
    let (s, t) = (1.0 / scale, [cx, cy]);
    let mut coeffs = [0.0; 6];
    for axis in 0..2 {
        let (c0, c1, c2) = (c[3 * axis], c[3 * axis + 1] * s, c[3 * axis + 2] * s);
        coeffs[3 * axis] = c0 - c1 * t[0] - c2 * t[1];
        coeffs[3 * axis + 1] = c1;
        coeffs[3 * axis + 2] = c2;
    }
    let model = RotationalFlowModel { coeffs };
    let mut ss = 0.0;
    for m in inliers {
        let l = epipolar_line(f, m.p)?;
        let u = model.eval(m.p);
        let r = l.x * (m.p[0] + u[0]) + l.y * (m.p[1] + u[1]) + l.z;
        ss += r * r;
    }
    Ok((model, (ss / n as f64).sqrt()))
}

/// Geometry of one rigid body between the two frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpipolarFrame {
    pub f: FundamentalMatrix,
    pub epipole: Epipole,
    pub rotation: RotationalFlowModel,
}

impl EpipolarFrame {
    pub fn new(f: FundamentalMatrix, rotation: RotationalFlowModel) -> Self {
        Self {
            f,
            epipole: epipole_of(&f),
            rotation,
        }
    }

    /// `p + u_w(p)` projected onto the epipolar line of `p`, with the line's
    /// unit direction (away from a finite epipole).
    pub fn rectify(&self, p: [f64; 2]) -> Result<([f64; 2], [f64; 2])> {
        let l = epipolar_line(&self.f, p)?;
        let u = self.rotation.eval(p);
        let q = [p[0] + u[0], p[1] + u[1]];
        let r = l.x * q[0] + l.y * q[1] + l.z;
        let rect = [q[0] - r * l.x, q[1] - r * l.y];
        let dir = match self.epipole {
            Epipole::Infinite(d) => d,
            Epipole::Finite(_) => self
                .epipole
                .direction_at(rect)
                .ok_or_else(|| Error::Degenerate("rectified point at the epipole".into()))?,
        };
        Ok((rect, dir))
    }

    /// Point at signed disparity `d` along the epipolar line of `p`.
    pub fn point_at(&self, p: [f64; 2], d: f64) -> Result<[f64; 2]> {
        let (rect, dir) = self.rectify(p)?;
        Ok([rect[0] + d * dir[0], rect[1] + d * dir[1]])
    }
}

/// Signed displacement from `p_rect` to `q` along the epipolar direction:
/// positive away from a finite epipole, or along an infinite one.
pub fn epipolar_disparity(p_rect: [f64; 2], q: [f64; 2], epipole: &Epipole) -> Result<f64> {
    let dir = epipole
        .direction_at(p_rect)
        .ok_or_else(|| Error::Degenerate("rectified point coincides with the epipole".into()))?;
    Ok((q[0] - p_rect[0]) * dir[0] + (q[1] - p_rect[1]) * dir[1])
}
