use std::path::{Path, PathBuf};

use crate::bgflow::{BackgroundParams, SlantedPlaneParams, SuperpixelParams};
use crate::costvol::{ConfidenceSelector, SearchWindow};
use crate::epigeo::RansacConfig;
use crate::error::{Error, Result};
use crate::fgflow::{DisparityRange, ForegroundParams, InterpolationParams, SgmPenalties};

/// Environment variable naming the default configuration file.
pub const CONFIG_ENV: &str = "FLOW_CONFIG";

/// Every tunable of a run, as one flat table of typed keys. Missing keys
/// take their defaults; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Matcher checkpoint (JSON).
    pub checkpoint: Option<PathBuf>,
    /// Candidates kept per pixel.
    pub top_k: usize,
    pub window_u_min: i32,
    pub window_u_max: i32,
    pub window_v_min: i32,
    pub window_v_max: i32,
    pub aggregation_iterations: usize,
    pub aggregation_size: usize,
    pub confident_fraction: f64,
    pub confidence_selector: ConfidenceSelector,
    pub sgm_p1: f64,
    pub sgm_p2: f64,
    pub sgm_cost_range: f64,
    pub disparity_min: f64,
    pub disparity_max: f64,
    pub disparity_step: f64,
    pub ransac_iterations: usize,
    pub ransac_threshold: f64,
    pub seed: u64,
    pub min_inliers: usize,
    pub max_median_error: f64,
    pub lr_tolerance: f64,
    pub vz_labels: usize,
    pub vz_label_padding: f64,
    pub superpixels: usize,
    pub superpixel_compactness: f64,
    pub superpixel_iterations: usize,
    pub coplanar_weight: f64,
    pub hinge_penalty: f64,
    pub occlusion_penalty: f64,
    pub huber_steps: f64,
    pub plane_sweeps: usize,
    pub plane_tolerance: f64,
    pub interp_edge_weight: f64,
    pub interp_outside_factor: f64,
    pub interp_kernel: f64,
    pub interp_neighbours: usize,
    pub interp_smoothing_sweeps: usize,
    pub interp_smoothing_step: f64,
    pub interp_edge_stop: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let w = SearchWindow::default();
        let fg = ForegroundParams::default();
        let bg = BackgroundParams::default();
        let interp = InterpolationParams::default();
        Self {
            checkpoint: None,
            top_k: crate::costvol::DEFAULT_K,
            window_u_min: w.u_min,
            window_u_max: w.u_max,
            window_v_min: w.v_min,
            window_v_max: w.v_max,
            aggregation_iterations: crate::costvol::DEFAULT_AGGREGATION_ITERATIONS,
            aggregation_size: crate::costvol::DEFAULT_AGGREGATION_SIZE,
            confident_fraction: crate::costvol::DEFAULT_CONFIDENT_FRACTION,
            confidence_selector: ConfidenceSelector::default(),
            sgm_p1: fg.penalties.p1,
            sgm_p2: fg.penalties.p2,
            sgm_cost_range: fg.cost_range,
            disparity_min: fg.range.d_min,
            disparity_max: fg.range.d_max,
            disparity_step: fg.range.step,
            ransac_iterations: fg.ransac.iterations,
            ransac_threshold: fg.ransac.inlier_threshold,
            seed: 0,
            min_inliers: fg.min_inliers,
            max_median_error: fg.max_median_error,
            lr_tolerance: fg.lr_tolerance,
            vz_labels: bg.labels,
            vz_label_padding: bg.label_padding,
            superpixels: bg.superpixels.count,
            superpixel_compactness: bg.superpixels.compactness,
            superpixel_iterations: bg.superpixels.iterations,
            coplanar_weight: bg.plane.coplanar_weight,
            hinge_penalty: bg.plane.hinge_penalty,
            occlusion_penalty: bg.plane.occlusion_penalty,
            huber_steps: bg.plane.huber_steps,
            plane_sweeps: bg.plane.max_sweeps,
            plane_tolerance: bg.plane.tolerance,
            interp_edge_weight: interp.edge_weight,
            interp_outside_factor: interp.outside_factor,
            interp_kernel: interp.kernel,
            interp_neighbours: interp.neighbours,
            interp_smoothing_sweeps: interp.smoothing_sweeps,
            interp_smoothing_step: interp.smoothing_step,
            interp_edge_stop: interp.edge_stop,
        }
    }
}

/// Reads a TOML file into any deserializable settings type.
pub fn load_toml<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a configuration file. A relative checkpoint path
    /// is resolved against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: Self = load_toml(path)?;
        if let (Some(ck), Some(dir)) = (&cfg.checkpoint, path.parent()) {
            if ck.is_relative() {
                cfg.checkpoint = Some(dir.join(ck));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks every value, and that a configured checkpoint exists.
    pub fn validate(&self) -> Result<()> {
        if let Some(ck) = &self.checkpoint {
            if !ck.is_file() {
                return Err(Error::Config(format!("checkpoint {} does not exist", ck.display())));
            }
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be positive".into()));
        }
        self.window().map_err(|e| Error::Config(e.to_string()))?;
        if self.aggregation_size.is_multiple_of(2) {
            return Err(Error::Config("aggregation_size must be odd".into()));
        }
        if !(self.confident_fraction > 0.0 && self.confident_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "confident_fraction must be in (0, 1], got {}",
                self.confident_fraction
            )));
        }
        SgmPenalties::new(self.sgm_p1, self.sgm_p2).map_err(|e| Error::Config(e.to_string()))?;
        positive("sgm_cost_range", self.sgm_cost_range)?;
        DisparityRange::new(self.disparity_min, self.disparity_max, self.disparity_step)
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.ransac_iterations == 0 {
            return Err(Error::Config("ransac_iterations must be positive".into()));
        }
        positive("ransac_threshold", self.ransac_threshold)?;
        positive("max_median_error", self.max_median_error)?;
        if !(self.lr_tolerance > 0.0) {
            return Err(Error::Config("lr_tolerance must be positive".into()));
        }
        if self.vz_labels < 2 {
            return Err(Error::Config("vz_labels must be at least 2".into()));
        }
        positive("vz_label_padding", self.vz_label_padding)?;
        if self.superpixels == 0 {
            return Err(Error::Config("superpixels must be positive".into()));
        }
        positive("superpixel_compactness", self.superpixel_compactness)?;
        for (name, v) in [
            ("coplanar_weight", self.coplanar_weight),
            ("hinge_penalty", self.hinge_penalty),
            ("occlusion_penalty", self.occlusion_penalty),
            ("huber_steps", self.huber_steps),
            ("interp_kernel", self.interp_kernel),
        ] {
            positive(name, v)?;
        }
        if self.interp_neighbours == 0 {
            return Err(Error::Config("interp_neighbours must be positive".into()));
        }
        Ok(())
    }

    pub fn window(&self) -> Result<SearchWindow> {
        SearchWindow::new(self.window_u_min, self.window_u_max, self.window_v_min, self.window_v_max)
    }

    pub fn ransac(&self) -> RansacConfig {
        RansacConfig {
            iterations: self.ransac_iterations,
            inlier_threshold: self.ransac_threshold,
            seed: self.seed,
        }
    }

    pub fn penalties(&self) -> SgmPenalties<f64> {
        SgmPenalties {
            p1: self.sgm_p1,
            p2: self.sgm_p2,
        }
    }

    pub fn interpolation(&self) -> InterpolationParams {
        InterpolationParams {
            edge_weight: self.interp_edge_weight,
            outside_factor: self.interp_outside_factor,
            kernel: self.interp_kernel,
            neighbours: self.interp_neighbours,
            smoothing_sweeps: self.interp_smoothing_sweeps,
            smoothing_step: self.interp_smoothing_step,
            edge_stop: self.interp_edge_stop,
        }
    }

    pub fn foreground(&self) -> ForegroundParams {
        ForegroundParams {
            range: DisparityRange {
                d_min: self.disparity_min,
                d_max: self.disparity_max,
                step: self.disparity_step,
            },
            penalties: self.penalties(),
            cost_range: self.sgm_cost_range,
            ransac: self.ransac(),
            min_inliers: self.min_inliers,
            max_median_error: self.max_median_error,
            lr_tolerance: self.lr_tolerance,
            interpolation: self.interpolation(),
        }
    }

    pub fn background(&self) -> BackgroundParams {
        BackgroundParams {
            labels: self.vz_labels,
            label_padding: self.vz_label_padding,
            penalties: self.penalties(),
            cost_range: self.sgm_cost_range,
            ransac: self.ransac(),
            lr_tolerance: self.lr_tolerance,
            superpixels: SuperpixelParams {
                count: self.superpixels,
                compactness: self.superpixel_compactness,
                iterations: self.superpixel_iterations,
            },
            plane: SlantedPlaneParams {
                coplanar_weight: self.coplanar_weight,
                hinge_penalty: self.hinge_penalty,
                occlusion_penalty: self.occlusion_penalty,
                huber_steps: self.huber_steps,
                max_sweeps: self.plane_sweeps,
                tolerance: self.plane_tolerance,
                ..Default::default()
            },
        }
    }
}
