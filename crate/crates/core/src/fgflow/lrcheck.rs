use crate::error::{Error, Result};
use crate::imgproc::FlowField;
use crate::scalar::Scalar;

/// Keeps pixel `p` iff `|fw(p) + bw(p + fw(p))| <= tol`, with `bw` sampled
/// bilinearly (nearest pixel where a neighbour is invalid). Pixels whose
/// target leaves the field or lands on invalid backward flow are dropped.
pub fn left_right_check<T: Scalar>(
    fw: &FlowField<T>,
    bw: &FlowField<T>,
    tol: T,
) -> Result<FlowField<T>> {
    if (fw.width(), fw.height()) != (bw.width(), bw.height()) {
        return Err(Error::DimensionMismatch(
            "forward and backward flow differ in size".into(),
        ));
    }
    let mut out = fw.clone();
    if tol.is_infinite() {
        return Ok(out);
    }
    for y in 0..fw.height() {
        for x in 0..fw.width() {
            let Some((u, v)) = fw.get(x, y) else {
                continue;
            };
            let tx = T::lit(x as f64) + u;
            let ty = T::lit(y as f64) + v;
            let keep = match bw.sample(tx, ty) {
                Some((bu, bv)) => {
                    let (ru, rv) = (u + bu, v + bv);
                    (ru * ru + rv * rv).sqrt() <= tol
                }
                None => false,
            };
            if !keep {
                out.invalidate(x, y);
            }
        }
    }
    Ok(out)
}
