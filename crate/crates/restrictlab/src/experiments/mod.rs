//! End-to-end numerical experiments: Knapp slab constructions and
//! necessary-condition sweeps, bilinear growth-exponent estimation, the
//! complex-surface demonstrations, the model-surface Whitney pipeline and
//! the config-driven runner behind the CLI.

pub mod config;
mod growth;
mod knapp;
mod whitney_pipeline;

pub use growth::{
    bilinear_growth_sweep, complex_failure_demo, measure_l1_constant, BilinearData,
    ComplexDemoReport, GrowthGates, L1ConstantReport,
};
pub use knapp::{
    dual_box_sweep, knapp_dual_box_value, knapp_slab, necessary_exponent_sweep,
    stationary_box_lower, DualBoxReport, KnappFrame, KnappSlab, StationaryBoxParams,
};
pub use whitney_pipeline::{whitney_bilinear_pipeline, PipelineOptions, PipelineReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("resolution too coarse: {0}")]
    ResolutionTooCoarse(String),
    #[error("search failed: {0}")]
    SearchFailed(String),
    #[error("normal form failed: {0}")]
    NormalFormFailed(String),
    #[error("a required condition fails: {0}")]
    ConditionRefused(String),
    #[error("sweep needs >= 4 strictly geometric points, got {0:?}")]
    BadSweep(Vec<f64>),
    #[error(transparent)]
    Extension(#[from] crate::extension::ExtensionError),
    #[error(transparent)]
    Condition(#[from] crate::conditions::ConditionError),
    #[error(transparent)]
    Surface(#[from] crate::surfaces::SurfaceError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One exponent-sweep measurement with its fitted slope.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    /// Swept parameter values (a geometric sequence).
    pub xs: Vec<f64>,
    /// Measured quantities, one per parameter value.
    pub ys: Vec<f64>,
    pub fit_exponent: f64,
    pub stderr: f64,
    pub predicted_exponent: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Extra measured columns (written to the sweep CSV).
    pub aux: Vec<(String, Vec<f64>)>,
}

impl SweepReport {
    /// Builds a report from measurements, fitting `log y` against
    /// `log x`. Requires at least 4 sweep points in strict geometric
    /// progression.
    pub fn from_measurements(
        xs: Vec<f64>,
        ys: Vec<f64>,
        predicted_exponent: f64,
        tolerance: f64,
    ) -> Result<Self, ExperimentError> {
        validate_geometric(&xs)?;
        assert_eq!(xs.len(), ys.len());
        let fit = crate::linalg::log_log_fit(&xs, &ys);
        let pass = (fit.slope - predicted_exponent).abs() <= tolerance;
        Ok(SweepReport {
            xs,
            ys,
            fit_exponent: fit.slope,
            stderr: fit.stderr,
            predicted_exponent,
            tolerance,
            pass,
            aux: Vec::new(),
        })
    }

    /// Refits after dropping the largest parameter point; used by the
    /// stability checks (the exponent should move by at most 2 stderr).
    pub fn drop_largest_refit(&self) -> crate::linalg::LineFit {
        let m = self.xs.len() - 1;
        let lx: Vec<f64> = self.xs[..m].iter().map(|x| x.ln()).collect();
        let ly: Vec<f64> = self.ys[..m].iter().map(|y| y.max(1e-300).ln()).collect();
        crate::linalg::line_fit(&lx, &ly)
    }
}

pub(crate) fn validate_geometric(xs: &[f64]) -> Result<(), ExperimentError> {
    if xs.len() < 4 {
        return Err(ExperimentError::BadSweep(xs.to_vec()));
    }
    let ratio = xs[1] / xs[0];
    if !(ratio.is_finite() && ratio > 0.0 && (ratio - 1.0).abs() > 1e-9) {
        return Err(ExperimentError::BadSweep(xs.to_vec()));
    }
    for w in xs.windows(2) {
        let r = w[1] / w[0];
        if (r - ratio).abs() > 1e-9 * ratio {
            return Err(ExperimentError::BadSweep(xs.to_vec()));
        }
    }
    Ok(())
}

/// `q` above which the bilinear product estimate holds: `(d+3k)/(d+k)`.
pub fn bilinear_threshold(d: usize, k: usize) -> f64 {
    (d + 3 * k) as f64 / (d + k) as f64
}

/// Necessary volume threshold from the box example: `q >= (d+k)/d`.
pub fn volume_threshold(d: usize, k: usize) -> f64 {
    (d + k) as f64 / d as f64
}

/// Linear product-form threshold for the model surface pipeline: the
/// `q/2`-norm of the product corresponds to doubling the bilinear `q`.
pub fn product_threshold(d: usize, k: usize) -> f64 {
    2.0 * bilinear_threshold(d, k)
}
