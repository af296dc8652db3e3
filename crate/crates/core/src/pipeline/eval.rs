use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::imgproc::{FlowField, InstanceMap, Mask};

/// End-point error above which a pixel may be an outlier, pixels.
pub const FL_ABS_THRESHOLD: f64 = 3.0;
/// End-point error relative to the true flow magnitude above which a pixel
/// may be an outlier.
pub const FL_REL_THRESHOLD: f64 = 0.05;

/// A pixel is an outlier when its end-point error exceeds both 3 px and 5%
/// of the true flow magnitude.
pub fn is_flow_outlier(estimate: [f64; 2], truth: [f64; 2]) -> bool {
    let epe = (estimate[0] - truth[0]).hypot(estimate[1] - truth[1]);
    let mag = truth[0].hypot(truth[1]);
    epe > FL_ABS_THRESHOLD && epe > FL_REL_THRESHOLD * mag
}

/// Outlier count over a pixel set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlCount {
    pub outliers: usize,
    pub total: usize,
}

impl FlCount {
    /// Outlier percentage; 0 for an empty set.
    pub fn percent(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.outliers as f64 / self.total as f64
        }
    }

    fn add(&mut self, outlier: bool) {
        self.total += 1;
        self.outliers += outlier as usize;
    }

    fn merge(&mut self, other: &Self) {
        self.total += other.total;
        self.outliers += other.outliers;
    }
}

/// Background, foreground and overall outlier counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlBreakdown {
    pub bg: FlCount,
    pub fg: FlCount,
    pub all: FlCount,
}

impl FlBreakdown {
    fn merge(&mut self, other: &Self) {
        self.bg.merge(&other.bg);
        self.fg.merge(&other.fg);
        self.all.merge(&other.all);
    }
}

/// Outlier rates over non-occluded pixels and over every pixel with ground
/// truth, plus the end-point error summed over pixels with both an estimate
/// and ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub noc: FlBreakdown,
    pub all: FlBreakdown,
    pub epe_sum: f64,
    pub epe_count: usize,
}

impl EvalReport {
    pub fn mean_epe(&self) -> f64 {
        if self.epe_count == 0 {
            0.0
        } else {
            self.epe_sum / self.epe_count as f64
        }
    }

    /// Accumulates another image's counts (pixel-weighted aggregate).
    pub fn merge(&mut self, other: &Self) {
        self.noc.merge(&other.noc);
        self.all.merge(&other.all);
        self.epe_sum += other.epe_sum;
        self.epe_count += other.epe_count;
    }

    pub fn aggregate<'a>(reports: impl IntoIterator<Item = &'a EvalReport>) -> Self {
        let mut out = Self::default();
        for r in reports {
            out.merge(r);
        }
        out
    }

    /// Two-row table of Fl percentages.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<6} {:>8} {:>8} {:>8} {:>9}", "region", "Fl-bg", "Fl-fg", "Fl-all", "pixels");
        for (name, b) in [("noc", &self.noc), ("all", &self.all)] {
            let _ = writeln!(
                s,
                "{:<6} {:>7.2}% {:>7.2}% {:>7.2}% {:>9}",
                name,
                b.bg.percent(),
                b.fg.percent(),
                b.all.percent(),
                b.all.total
            );
        }
        let _ = writeln!(s, "mean EPE {:.3} px", self.mean_epe());
        s
    }
}

/// Compares `estimate` against `truth` at every pixel with valid ground
/// truth. A missing estimate counts as an outlier. `noc` marks pixels that
/// are visible in both frames; `map` separates foreground from background.
pub fn evaluate_fl(
    estimate: &FlowField<f64>,
    truth: &FlowField<f64>,
    noc: &Mask,
    map: &InstanceMap,
) -> Result<EvalReport> {
    let (w, h) = (truth.width(), truth.height());
    let dims = [
        (estimate.width(), estimate.height()),
        (noc.width(), noc.height()),
        (map.width(), map.height()),
    ];
    if dims.iter().any(|d| *d != (w, h)) {
        return Err(Error::DimensionMismatch(format!(
            "ground truth {w}x{h} vs estimate, noc mask and instance map {dims:?}"
        )));
    }
    let mut r = EvalReport::default();
    for y in 0..h {
        for x in 0..w {
            let Some((tu, tv)) = truth.get(x, y) else {
                continue;
            };
            let outlier = match estimate.get(x, y) {
                Some((u, v)) if u.is_finite() && v.is_finite() => {
                    r.epe_sum += (u - tu).hypot(v - tv);
                    r.epe_count += 1;
                    is_flow_outlier([u, v], [tu, tv])
                }
                _ => true,
            };
            let fg = map.label(x, y) != 0;
            let mut regions = vec![&mut r.all];
            if noc.get(x, y) {
                regions.push(&mut r.noc);
            }
            for b in regions {
                b.all.add(outlier);
                if fg {
                    b.fg.add(outlier);
                } else {
                    b.bg.add(outlier);
                }
            }
        }
    }
    Ok(r)
}
