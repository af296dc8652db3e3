use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::costvol::Match;
use crate::error::{Error, Result};

/// Rank-2 fundamental matrix with unit Frobenius norm and its largest
/// magnitude entry positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FundamentalMatrix(Matrix3<f64>);

/// Cross-product matrix `[t]x`.
pub fn skew(t: Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// Singular values and vectors sorted by decreasing singular value.
fn sorted_svd3(m: &Matrix3<f64>) -> (Matrix3<f64>, Vector3<f64>, Matrix3<f64>) {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut su = Matrix3::zeros();
    let mut svt = Matrix3::zeros();
    let mut s = Vector3::zeros();
    for (dst, &src) in order.iter().enumerate() {
        su.set_column(dst, &u.column(src));
        svt.set_row(dst, &vt.row(src));
        s[dst] = svd.singular_values[src];
    }
    (su, s, svt)
}

/// Scales a vector or matrix so its first largest-magnitude entry is positive.
fn canonical_sign<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
    let mut best = 0.0f64;
    for &v in values {
        if v.abs() > best.abs() * (1.0 + 1e-12) {
            best = v;
        }
    }
    if best < 0.0 {
        -1.0
    } else {
        1.0
    }
}

impl FundamentalMatrix {
    /// Projects `m` onto rank 2 and normalizes scale and sign.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("non-finite fundamental matrix".into()));
        }
        let (u, s, vt) = sorted_svd3(&m);
        if s[1] <= 1e-12 * s[0] {
            return Err(Error::Degenerate("fundamental matrix has rank below 2".into()));
        }
        // subtracting the weakest component, rather than rebuilding from the
        // factors, keeps the relative precision of small entries
        let mut r = m - u.column(2) * vt.row(2) * s[2];
        r /= r.norm();
        // the row-major scan keeps the tie-break independent of storage order
        let sign = canonical_sign(r.transpose().iter());
        Ok(Self(r * sign))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Geometry of the swapped image pair.
    pub fn transpose(&self) -> Self {
        Self::from_matrix(self.0.transpose()).expect("transpose of a rank-2 matrix")
    }

    /// Algebraic residual `q~^T F p~`.
    pub fn residual(&self, p: [f64; 2], q: [f64; 2]) -> f64 {
        Vector3::new(q[0], q[1], 1.0).dot(&(self.0 * Vector3::new(p[0], p[1], 1.0)))
    }

    /// Distance from `q` to the epipolar line of `p`, or infinity if `p` is
    /// the epipole of the first image.
    pub fn line_distance(&self, p: [f64; 2], q: [f64; 2]) -> f64 {
        match epipolar_line(self, p) {
            Ok(l) => (l.x * q[0] + l.y * q[1] + l.z).abs(),
            Err(_) => f64::INFINITY,
        }
    }
}

/// Epipolar line `F p~` in the second image, scaled so `a^2 + b^2 = 1`.
pub fn epipolar_line(f: &FundamentalMatrix, p: [f64; 2]) -> Result<Vector3<f64>> {
    let l = f.0 * Vector3::new(p[0], p[1], 1.0);
    let n = l.x.hypot(l.y);
    if n <= 1e-12 * l.norm().max(1e-300) || n == 0.0 {
        return Err(Error::Degenerate(format!(
            "point ({}, {}) is the epipole; its epipolar line is undefined",
            p[0], p[1]
        )));
    }
    Ok(l / n)
}

/// Epipole in the second image: finite pixel or a direction at infinity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Epipole {
    Finite([f64; 2]),
    Infinite([f64; 2]),
}

impl Epipole {
    pub fn homogeneous(&self) -> Vector3<f64> {
        match *self {
            Epipole::Finite([x, y]) => Vector3::new(x, y, 1.0),
            Epipole::Infinite([x, y]) => Vector3::new(x, y, 0.0),
        }
    }

    /// Unit direction of the epipolar line through `p`, pointing away from a
    /// finite epipole, or along the direction of an infinite one.
    pub fn direction_at(&self, p: [f64; 2]) -> Option<[f64; 2]> {
        match *self {
            Epipole::Finite([ox, oy]) => {
                let (dx, dy) = (p[0] - ox, p[1] - oy);
                let n = dx.hypot(dy);
                (n > 1e-9).then(|| [dx / n, dy / n])
            }
            Epipole::Infinite(d) => Some(d),
        }
    }

    /// Distance of `p` from a finite epipole; 1 for an infinite one, so that
    /// disparities scale uniformly across the image.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        match *self {
            Epipole::Finite([ox, oy]) => (p[0] - ox).hypot(p[1] - oy),
            Epipole::Infinite(_) => 1.0,
        }
    }
}

/// Left null vector of `F` (`o'^T F = 0`).
pub fn epipole_of(f: &FundamentalMatrix) -> Epipole {
    let (u, _, _) = sorted_svd3(&f.0);
    let mut o: Vector3<f64> = u.column(2).into_owned();
    o /= o.norm();
    o *= canonical_sign(o.iter());
    if o.z.abs() <= 1e-9 {
        let n = o.x.hypot(o.y);
        Epipole::Infinite([o.x / n, o.y / n])
    } else {
        Epipole::Finite([o.x / o.z, o.y / o.z])
    }
}

/// Similarity moving the centroid to the origin and the mean distance to
/// `sqrt(2)`.
fn normalizing_transform(points: impl Iterator<Item = [f64; 2]> + Clone) -> Matrix3<f64> {
    let n = points.clone().count() as f64;
    let (mut cx, mut cy) = (0.0, 0.0);
    for p in points.clone() {
        cx += p[0];
        cy += p[1];
    }
    cx /= n;
    cy /= n;
    let mean_dist = points.map(|p| (p[0] - cx).hypot(p[1] - cy)).sum::<f64>() / n;
    let s = if mean_dist > 0.0 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

/// Ratio of the second-smallest to the largest singular value of the design
/// matrix below which the sample is treated as degenerate.
pub const DEGENERACY_RATIO: f64 = 1e-8;

/// Normalized eight-point estimate from at least eight correspondences.
pub fn eight_point(matches: &[Match]) -> Result<FundamentalMatrix> {
    if matches.len() < 8 {
        return Err(Error::Insufficient(format!(
            "eight-point estimation needs 8 matches, got {}",
            matches.len()
        )));
    }
    let t1 = normalizing_transform(matches.iter().map(|m| m.p));
    let t2 = normalizing_transform(matches.iter().map(|m| m.q));
    let rows = matches.len().max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, m) in matches.iter().enumerate() {
        let p = t1 * Vector3::new(m.p[0], m.p[1], 1.0);
        let q = t2 * Vector3::new(m.q[0], m.q[1], 1.0);
        let row = [
            q.x * p.x,
            q.x * p.y,
            q.x,
            q.y * p.x,
            q.y * p.y,
            q.y,
            p.x,
            p.y,
            1.0,
        ];
        for (j, v) in row.iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::Degenerate("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let sv = |k: usize| svd.singular_values[order[k]];
    if !(sv(7) > DEGENERACY_RATIO * sv(0)) {
        return Err(Error::Degenerate(
            "correspondences do not determine a unique fundamental matrix".into(),
        ));
    }
    let v = vt.row(order[8]);
    let fn_ = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
    let fn_ = FundamentalMatrix::from_matrix(fn_)?;
    FundamentalMatrix::from_matrix(t2.transpose() * fn_.0 * t1)
}
