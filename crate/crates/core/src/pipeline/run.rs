use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use super::PipelineConfig;
use crate::bgflow::{estimate_background_flow, BackgroundFlowResult, BackgroundMotion};
use crate::costvol::{aggregate, build_cost_volume, confident_matches, SparseMatches};
use crate::epigeo::Epipole;
use crate::error::{Error, Result};
use crate::fgflow::{
    estimate_instance_flow, FrameInputs, InstanceDiagnostics, InstanceFlowResult, InstanceStatus,
};
use crate::imgproc::{FlowField, Image, InstanceMap};
use crate::matchnet::{extract_features_padded, load_checkpoint, NetParams};
use crate::scalar::Scalar;

/// One row of the per-instance table of a run report.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceRow {
    pub instance: u32,
    pub pixels: usize,
    pub status: InstanceStatus,
    pub matches: usize,
    pub inliers: usize,
    pub median_error: Option<f64>,
    pub lr_survival: Option<f64>,
    pub reason: Option<String>,
}

/// Summary of a run: background geometry, per-instance outcomes, timings.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub width: usize,
    pub height: usize,
    pub confident_matches: usize,
    pub background_motion: BackgroundMotion,
    pub background_matches: usize,
    pub background_inliers: usize,
    pub background_median_error: f64,
    pub epipole: Epipole,
    pub vz_range: (f64, f64),
    pub vz_labels: usize,
    pub background_lr_survival: f64,
    pub superpixels: usize,
    pub plane_energy: (f64, f64),
    pub plane_sweeps: usize,
    pub instances: Vec<InstanceRow>,
    /// Stage name and wall time in milliseconds.
    pub timings: Vec<(&'static str, f64)>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

impl RunReport {
    /// `key = value` lines followed by a whitespace-separated instance table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let motion = match self.background_motion {
            BackgroundMotion::Epipolar => "epipolar",
            BackgroundMotion::RotationOnly => "rotation_only",
        };
        let epipole = match self.epipole {
            Epipole::Finite([x, y]) => format!("finite {x:.3} {y:.3}"),
            Epipole::Infinite([x, y]) => format!("infinite {x:.5} {y:.5}"),
        };
        let _ = writeln!(s, "width = {}", self.width);
        let _ = writeln!(s, "height = {}", self.height);
        let _ = writeln!(s, "confident_matches = {}", self.confident_matches);
        let _ = writeln!(s, "background.motion = {motion}");
        let _ = writeln!(s, "background.matches = {}", self.background_matches);
        let _ = writeln!(s, "background.inliers = {}", self.background_inliers);
        let _ = writeln!(s, "background.median_error = {:.4}", self.background_median_error);
        let _ = writeln!(s, "background.epipole = {epipole}");
        let _ = writeln!(
            s,
            "background.vz_labels = {} over [{:.5}, {:.5}]",
            self.vz_labels, self.vz_range.0, self.vz_range.1
        );
        let _ = writeln!(s, "background.lr_survival = {:.4}", self.background_lr_survival);
        let _ = writeln!(s, "background.superpixels = {}", self.superpixels);
        let _ = writeln!(s, "background.plane_sweeps = {}", self.plane_sweeps);
        let _ = writeln!(
            s,
            "background.plane_energy = {:.4} -> {:.4}",
            self.plane_energy.0, self.plane_energy.1
        );
        for (name, ms) in &self.timings {
            let _ = writeln!(s, "time.{name}_ms = {ms:.1}");
        }
        let _ = writeln!(s, "instances = {}", self.instances.len());
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:>8} {:>8} {:>9} {:>8} {:>8} {:>10} {:>8}  reason",
            "instance", "pixels", "status", "matches", "inliers", "median_err", "lr_keep"
        );
        for r in &self.instances {
            let status = match r.status {
                InstanceStatus::Epipolar => "epipolar",
                InstanceStatus::Fallback => "fallback",
            };
            let _ = writeln!(
                s,
                "{:>8} {:>8} {:>9} {:>8} {:>8} {:>10} {:>8}  {}",
                r.instance,
                r.pixels,
                status,
                r.matches,
                r.inliers,
                opt(r.median_error),
                opt(r.lr_survival),
                r.reason.as_deref().unwrap_or("-")
            );
        }
        s
    }
}

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub flow: FlowField<f64>,
    pub matches: SparseMatches,
    pub background: BackgroundFlowResult,
    pub instances: Vec<InstanceFlowResult>,
    pub report: RunReport,
}

/// Writes the background flow everywhere and each instance's dense flow
/// inside its mask. Instance pixels without a valid instance estimate keep
/// the background value.
pub fn compose(
    background: &FlowField<f64>,
    instances: &[InstanceFlowResult],
    map: &InstanceMap,
) -> Result<FlowField<f64>> {
    let (w, h) = (map.width(), map.height());
    if (background.width(), background.height()) != (w, h) {
        return Err(Error::DimensionMismatch(format!(
            "background flow {}x{} vs instance map {w}x{h}",
            background.width(),
            background.height()
        )));
    }
    let mut by_label: Vec<Option<&InstanceFlowResult>> = vec![None; map.num_instances() as usize + 1];
    for r in instances {
        if r.instance == 0 || r.instance > map.num_instances() {
            return Err(Error::InvalidArgument(format!(
                "flow for instance {} but the map has {}",
                r.instance,
                map.num_instances()
            )));
        }
        if (r.dense.width(), r.dense.height()) != (w, h) {
            return Err(Error::DimensionMismatch(format!(
                "instance {} flow is {}x{}, expected {w}x{h}",
                r.instance,
                r.dense.width(),
                r.dense.height()
            )));
        }
        by_label[r.instance as usize] = Some(r);
    }
    let mut out = background.clone();
    for y in 0..h {
        for x in 0..w {
            let label = map.label(x, y);
            if label == 0 {
                continue;
            }
            let r = by_label[label as usize].ok_or_else(|| {
                Error::InvalidArgument(format!("no flow for instance {label}"))
            })?;
            if let Some((u, v)) = r.dense.get(x, y) {
                out.set(x, y, u, v);
            }
        }
    }
    Ok(out)
}

/// Loads the configured checkpoint and runs the pipeline with `f32`
/// features.
pub fn run(
    image1: &Image<f64>,
    image2: &Image<f64>,
    map: &InstanceMap,
    config: &PipelineConfig,
) -> Result<PipelineOutput> {
    config.validate()?;
    let path = config
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("no checkpoint configured".into()))?;
    let net: NetParams<f32> = load_checkpoint(path)?;
    run_with_net(image1, image2, map, &net, config)
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Full two-frame estimate with an in-memory matcher: features, top-K cost
/// volumes in both directions, aggregation, confident matches, background
/// flow, per-instance flow, composition.
pub fn run_with_net<T: Scalar>(
    image1: &Image<f64>,
    image2: &Image<f64>,
    map: &InstanceMap,
    net: &NetParams<T>,
    config: &PipelineConfig,
) -> Result<PipelineOutput> {
    config.validate()?;
    let (w, h) = (image1.width(), image1.height());
    if (image2.width(), image2.height()) != (w, h) || (map.width(), map.height()) != (w, h) {
        return Err(Error::DimensionMismatch(format!(
            "frames {}x{} and {}x{}, instance map {}x{}",
            w,
            h,
            image2.width(),
            image2.height(),
            map.width(),
            map.height()
        )));
    }
    let window = config.window()?;
    let mut timings = Vec::new();

    let t = Instant::now();
    let (f1, f2) = rayon::join(
        || extract_features_padded(&image1.cast::<T>(), net),
        || extract_features_padded(&image2.cast::<T>(), net),
    );
    let (f1, f2) = (f1?, f2?);
    timings.push(("features", elapsed_ms(t)));

    let t = Instant::now();
    // the mirrored window (upper bounds are exclusive)
    let backward_window = crate::costvol::SearchWindow {
        u_min: 1 - window.u_max,
        u_max: 1 - window.u_min,
        v_min: 1 - window.v_max,
        v_max: 1 - window.v_min,
    };
    let agg = |cv: Result<_>| -> Result<_> {
        aggregate(&cv?, config.aggregation_iterations, config.aggregation_size)
    };
    let (cv_fw, cv_bw) = rayon::join(
        || agg(build_cost_volume(&f1, &f2, window, config.top_k)),
        || agg(build_cost_volume(&f2, &f1, backward_window, config.top_k)),
    );
    let (cv_fw, cv_bw) = (cv_fw?, cv_bw?);
    timings.push(("cost_volume", elapsed_ms(t)));
    drop((f1, f2));

    let matches = confident_matches(&cv_fw, config.confident_fraction, config.confidence_selector)?;
    log::info!("{} confident matches", matches.len());
    let inputs = FrameInputs {
        cv_forward: &cv_fw,
        cv_backward: &cv_bw,
        matches: &matches,
        guide: image1,
    };

    let t = Instant::now();
    let background = estimate_background_flow(&inputs, map, &config.background())?;
    timings.push(("background", elapsed_ms(t)));

    let t = Instant::now();
    let fg = config.foreground();
    let labels: Vec<u32> = (1..=map.num_instances()).collect();
    let instances: Vec<InstanceFlowResult> = labels
        .par_iter()
        .map(|&label| {
            let mask = map.mask(label);
            match estimate_instance_flow(label, &mask, &inputs, &fg) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("instance {label}: {e}; using the background flow");
                    let mut dense = FlowField::new(w, h);
                    for y in 0..h {
                        for x in 0..w {
                            if mask.get(x, y) {
                                if let Some((u, v)) = background.flow.get(x, y) {
                                    dense.set(x, y, u, v);
                                }
                            }
                        }
                    }
                    InstanceFlowResult {
                        instance: label,
                        semi_dense: FlowField::new(w, h),
                        dense,
                        status: InstanceStatus::Fallback,
                        diagnostics: InstanceDiagnostics {
                            fallback_reason: Some(e.to_string()),
                            ..Default::default()
                        },
                    }
                }
            }
        })
        .collect();
    timings.push(("instances", elapsed_ms(t)));

    let flow = compose(&background.flow, &instances, map)?;

    let energies = &background.plane.energies;
    let report = RunReport {
        width: w,
        height: h,
        confident_matches: matches.len(),
        background_motion: background.geometry.motion,
        background_matches: background.geometry.matches.len(),
        background_inliers: background.geometry.inliers.len(),
        background_median_error: background.geometry.median_error,
        epipole: background.geometry.frame.epipole,
        vz_range: (
            background.labels.values()[0],
            *background.labels.values().last().unwrap(),
        ),
        vz_labels: background.labels.len(),
        background_lr_survival: background.lr_survival,
        superpixels: background.plane.graph.len(),
        plane_energy: (energies[0], *energies.last().unwrap()),
        plane_sweeps: energies.len() - 1,
        instances: instances
            .iter()
            .map(|r| InstanceRow {
                instance: r.instance,
                pixels: map.mask(r.instance).count(),
                status: r.status,
                matches: r.diagnostics.matches,
                inliers: r.diagnostics.inliers,
                median_error: r.diagnostics.median_error,
                lr_survival: r.diagnostics.lr_survival,
                reason: r.diagnostics.fallback_reason.clone(),
            })
            .collect(),
        timings,
    };
    Ok(PipelineOutput {
        flow,
        matches,
        background,
        instances,
        report,
    })
}
