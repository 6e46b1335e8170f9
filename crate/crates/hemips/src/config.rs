//! Pipeline configuration. Every constant the algorithm depends on is a
//! named key with its default; a JSON file plus flag overrides feed it from
//! the command line.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplacian::{RowSumMode, WeightOptions};
use crate::reconstruct::Convexity;
use crate::spectral::EigenOptions;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Neighborhood size as a fraction of retained pixels.
    pub k_fraction: f64,
    /// Cap on the neighborhood size for tractability on large images.
    pub k_cap: usize,
    /// Minimum reciprocity fraction below which a pixel is an outlier.
    pub favor_threshold: f64,
    /// "constant-1" or "inverse-r-squared".
    pub row_sum_mode: String,
    /// Fraction of points labeled as the equator by hull peeling.
    pub boundary_fraction: f64,
    /// Visibility floor for the recovered z component.
    pub z_floor: f64,
    /// Diagonal value of the identity rows in the Dirichlet matrix dump.
    pub dirichlet_t: f64,
    /// Pixels with an intensity vector shorter than this are dark.
    pub eps_zero: f64,
    pub weight_tol: f64,
    pub weight_max_iter: usize,
    pub eigen_tol: f64,
    pub eigen_max_iter: usize,
    pub seed: u64,
    /// "auto", "convex" or "concave".
    pub convexity: String,
    // renderer
    pub resolution: usize,
    pub lights: usize,
    /// "exact-lambertian" or "sh-kernel".
    pub render_mode: String,
    pub kernel: String,
    /// "uniform" or "checker".
    pub albedo: String,
    pub noise_sigma: f64,
    // claim verification
    pub eigencheck_samples: usize,
    pub eigencheck_k: usize,
    pub mc_lights: usize,
    // embedder comparison
    pub compare_seeds: usize,
    pub compare_resolution: usize,
    /// Use true geodesic distances instead of intensity distances.
    pub exact_distances: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k_fraction: 0.05,
            k_cap: 60,
            favor_threshold: 0.8,
            row_sum_mode: "constant-1".into(),
            boundary_fraction: 0.05,
            z_floor: 0.15,
            dirichlet_t: 1.0,
            eps_zero: 1e-9,
            weight_tol: 1e-8,
            weight_max_iter: 20_000,
            eigen_tol: 1e-9,
            eigen_max_iter: 10_000,
            seed: 7,
            convexity: "auto".into(),
            resolution: 64,
            lights: 90,
            render_mode: "exact-lambertian".into(),
            kernel: "lambertian".into(),
            albedo: "uniform".into(),
            noise_sigma: 0.0,
            eigencheck_samples: 2000,
            eigencheck_k: 40,
            mc_lights: 2000,
            compare_seeds: 5,
            compare_resolution: 48,
            exact_distances: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |name: &str, v: f64| -> Result<()> {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidInput(format!("{name} must be in (0, 1], got {v}")));
            }
            Ok(())
        };
        frac("k_fraction", self.k_fraction)?;
        frac("favor_threshold", self.favor_threshold.max(f64::MIN_POSITIVE))?;
        frac("boundary_fraction", self.boundary_fraction)?;
        frac("z_floor", self.z_floor)?;
        for (name, v) in [
            ("eps_zero", self.eps_zero),
            ("weight_tol", self.weight_tol),
            ("eigen_tol", self.eigen_tol),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        self.row_sum_mode()?;
        self.convexity()?;
        if self.render_mode != "exact-lambertian" && self.render_mode != "sh-kernel" {
            return Err(Error::InvalidInput(format!(
                "unknown render mode '{}'",
                self.render_mode
            )));
        }
        if self.albedo != "uniform" && self.albedo != "checker" {
            return Err(Error::InvalidInput(format!("unknown albedo pattern '{}'", self.albedo)));
        }
        Ok(())
    }

    pub fn row_sum_mode(&self) -> Result<RowSumMode> {
        match self.row_sum_mode.as_str() {
            "constant-1" => Ok(RowSumMode::ConstantOne),
            "inverse-r-squared" => Ok(RowSumMode::InverseRadiusSq),
            other => Err(Error::InvalidInput(format!("unknown row sum mode '{other}'"))),
        }
    }

    pub fn convexity(&self) -> Result<Convexity> {
        match self.convexity.as_str() {
            "auto" => Ok(Convexity::Auto),
            "convex" => Ok(Convexity::Convex),
            "concave" => Ok(Convexity::Concave),
            other => Err(Error::InvalidInput(format!("unknown convexity '{other}'"))),
        }
    }

    pub fn weight_options(&self) -> Result<WeightOptions> {
        Ok(WeightOptions {
            row_sum_mode: self.row_sum_mode()?,
            tol: self.weight_tol,
            max_iter: self.weight_max_iter,
        })
    }

    pub fn eigen_options(&self) -> EigenOptions {
        EigenOptions {
            tol: self.eigen_tol,
            max_iter: self.eigen_max_iter,
            seed: self.seed ^ 0xe16e,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_roundtrip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&json).unwrap();
        back.validate().unwrap();
        assert_eq!(back.k_cap, cfg.k_cap);
    }

    #[test]
    fn bad_values_are_rejected() {
        let mut cfg = PipelineConfig::default();
        cfg.k_fraction = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.row_sum_mode = "nope".into();
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.weight_tol = -1.0;
        assert!(cfg.validate().is_err());
        // unknown keys rejected too
        assert!(serde_json::from_str::<PipelineConfig>("{\"bogus\": 1}").is_err());
    }
}
