use rayon::prelude::*;

use super::vz::{VzRatioField, OMEGA_MAX};
use crate::epigeo::Epipole;
use crate::error::Result;
use crate::imgproc::InstanceMap;

/// Most samples collected per filled pixel.
pub const MAX_EXTRAPOLATION_SAMPLES: usize = 50;

/// Least-squares line `omega = alpha * delta + beta`; the sample mean when
/// every sample sits at (numerically) the same `delta`.
pub fn fit_vz_line(samples: &[(f64, f64)]) -> Option<(f64, f64)> {
    if samples.is_empty() {
        return None;
    }
    let n = samples.len() as f64;
    let md = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let mw = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let sdd: f64 = samples.iter().map(|s| (s.0 - md) * (s.0 - md)).sum();
    let sdw: f64 = samples.iter().map(|s| (s.0 - md) * (s.1 - mw)).sum();
    let spread = samples.iter().map(|s| s.0.abs()).fold(0.0, f64::max).max(1.0);
    if sdd <= 1e-18 * spread * spread * n {
        return Some((0.0, mw));
    }
    let alpha = sdw / sdd;
    Some((alpha, mw - alpha * md))
}

/// `(delta, omega)` samples of the valid background pixels met on the way
/// from `p` toward the epipole, nearest first.
fn samples_toward(
    field: &VzRatioField,
    map: &InstanceMap,
    epipole: &Epipole,
    p: [usize; 2],
) -> Vec<(f64, f64)> {
    let (w, h) = (field.width() as f64, field.height() as f64);
    let start = [p[0] as f64, p[1] as f64];
    let (dir, length) = match *epipole {
        Epipole::Finite([ox, oy]) => {
            let (dx, dy) = (ox - start[0], oy - start[1]);
            let n = dx.hypot(dy);
            if n < 1e-9 {
                return Vec::new();
            }
            ([dx / n, dy / n], n)
        }
        Epipole::Infinite(d) => (d, f64::INFINITY),
    };
    let mut out = Vec::new();
    let mut last = (p[0], p[1]);
    let mut t = 1.0;
    while t <= length && out.len() < MAX_EXTRAPOLATION_SAMPLES {
        let (x, y) = ((start[0] + t * dir[0]).round(), (start[1] + t * dir[1]).round());
        if x < 0.0 || y < 0.0 || x >= w || y >= h {
            break;
        }
        let q = (x as usize, y as usize);
        t += 1.0;
        if q == last {
            continue;
        }
        last = q;
        if map.label(q.0, q.1) != 0 {
            continue;
        }
        if let Some(omega) = field.get(q.0, q.1) {
            out.push((epipole.distance([x, y]), omega));
        }
    }
    out
}

/// Fills invalid background pixels from the vz-ratios found between them
/// and the epipole: a line in the epipole distance `delta` fitted to up to
/// [`MAX_EXTRAPOLATION_SAMPLES`] valid background samples, evaluated at the
/// pixel and capped at [`OMEGA_MAX`]. Pixels with fewer than two samples
/// stay invalid. Only originally valid pixels serve as samples.
pub fn extrapolate_vz(field: &VzRatioField, epipole: &Epipole, map: &InstanceMap) -> Result<VzRatioField> {
    let (w, h) = (field.width(), field.height());
    let fills: Vec<Option<f64>> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            if field.is_valid(x, y) || map.label(x, y) != 0 {
                return None;
            }
            let samples = samples_toward(field, map, epipole, [x, y]);
            if samples.len() < 2 {
                return None;
            }
            let (alpha, beta) = fit_vz_line(&samples)?;
            Some((alpha * epipole.distance([x as f64, y as f64]) + beta).min(OMEGA_MAX))
        })
        .collect();
    let mut out = field.clone();
    for (i, f) in fills.into_iter().enumerate() {
        if let Some(omega) = f {
            out.set(i % w, i / w, omega)?;
        }
    }
    Ok(out)
}
