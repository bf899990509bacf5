//! Config-driven experiment runner: JSON configs declare a surface, a
//! pair of base boxes and a list of experiments; outputs are a versioned
//! `report.json`, one CSV per sweep and optional gnuplot scripts.
//!
//! Exit-code contract: 0 all gates pass, 2 parse error, 3 gate failure
//! (including refused preconditions), 4 numerical failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conditions::{
    check_bordered, check_gap_curvature, check_mixed_curvature, check_normal_curvature,
    ConditionReport, SamplingSpec,
};
use crate::linalg::BoxND;
use crate::surfaces::{make_quadratic, named_surface, NamedParams, Surface};

use super::{
    bilinear_growth_sweep, bilinear_threshold, complex_failure_demo, dual_box_sweep,
    measure_l1_constant, necessary_exponent_sweep, product_threshold, stationary_box_lower,
    whitney_bilinear_pipeline, BilinearData, ExperimentError, GrowthGates, KnappFrame,
    PipelineOptions, StationaryBoxParams,
};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_GATE: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Surface declaration: `{kind, d, k, matrices: row-major lists, b?, n?, D?}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceSpec {
    pub kind: String,
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default)]
    pub k: Option<usize>,
    /// Row-major `d x d` matrices, one per codimension component.
    #[serde(default)]
    pub matrices: Option<Vec<Vec<f64>>>,
    /// Optional linear parts.
    #[serde(default)]
    pub b: Option<Vec<Vec<f64>>>,
    /// Complex dimension for the complex-quadratic kinds.
    #[serde(default)]
    pub n: Option<usize>,
    /// Row-major `n x n` symmetric matrix for the complex kinds.
    #[serde(default, rename = "D")]
    pub d_matrix: Option<Vec<f64>>,
}

impl SurfaceSpec {
    pub fn build(&self) -> Result<Surface, String> {
        match self.kind.as_str() {
            "quadratic" | "custom-quadratic" => {
                let rows = self.matrices.as_ref().ok_or("quadratic kind needs `matrices`")?;
                let d = self.d.ok_or("quadratic kind needs `d`")?;
                let mats: Vec<DMatrix<f64>> = rows
                    .iter()
                    .map(|m| {
                        if m.len() != d * d {
                            Err(format!("matrix has {} entries, expected {}", m.len(), d * d))
                        } else {
                            Ok(DMatrix::from_row_slice(d, d, m))
                        }
                    })
                    .collect::<Result<_, _>>()?;
                let b = match &self.b {
                    None => None,
                    Some(bs) => Some(
                        bs.iter().map(|v| DVector::from_column_slice(v)).collect::<Vec<_>>(),
                    ),
                };
                make_quadratic(mats, b).map_err(|e| e.to_string())
            }
            name => {
                let d_matrix = match (&self.d_matrix, self.n) {
                    (Some(flat), Some(n)) => {
                        if flat.len() != n * n {
                            return Err(format!(
                                "D has {} entries, expected {}",
                                flat.len(),
                                n * n
                            ));
                        }
                        Some(DMatrix::from_row_slice(n, n, flat))
                    }
                    _ => None,
                };
                named_surface(
                    name,
                    &NamedParams { d: self.d, n: self.n, d_matrix, ..Default::default() },
                )
                .map_err(|e| e.to_string())
            }
        }
    }

    /// The `D` block as a matrix, when declared.
    pub fn d_block(&self) -> Option<DMatrix<f64>> {
        match (&self.d_matrix, self.n) {
            (Some(flat), Some(n)) if flat.len() == n * n => {
                Some(DMatrix::from_row_slice(n, n, flat))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxSpec {
    pub center: Vec<f64>,
    pub side: f64,
}

impl BoxSpec {
    pub fn build(&self) -> BoxND {
        BoxND::cube(&self.center, self.side)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ExperimentSpec {
    /// All four sampled condition checks over the configured boxes.
    CheckConditions {
        #[serde(default = "default_grid")]
        grid: usize,
        #[serde(default = "default_t_samples")]
        t_samples: usize,
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
    /// Dual-box lower-value sweep (measure exponent `(d+k)/2`).
    KnappSweep {
        deltas: Vec<f64>,
        #[serde(default = "default_smallness")]
        smallness: f64,
        #[serde(default = "default_fit_tol")]
        tolerance: f64,
    },
    /// Necessary-condition exponent comparison for one `(p, q)`.
    NecessarySweep {
        q: f64,
        p: f64,
        deltas: Vec<f64>,
        #[serde(default = "default_smallness")]
        smallness: f64,
        #[serde(default = "default_fit_tol")]
        tolerance: f64,
    },
    /// Bilinear growth sweep at one `q`.
    BilinearGrowth {
        q: f64,
        data: BilinearData,
        r_list: Vec<f64>,
        #[serde(default)]
        gates: Option<GrowthGates>,
    },
    /// Stationary-phase box example sweep.
    StationaryBox {
        q: f64,
        r_list: Vec<f64>,
        #[serde(default)]
        params: Option<StationaryBoxOverrides>,
    },
    /// `L^1` constant stability across scales.
    L1Constant { r_list: Vec<f64> },
    /// Complex null-pair demonstration (needs an `n = 2` `D` block).
    ComplexDemo {},
    /// Threshold arithmetic cross-checks.
    ThresholdArithmetic {},
    /// Whitney pipeline on the product model (needs a `2 x 2` `D` block).
    WhitneyPipeline {
        q: f64,
        p: f64,
        #[serde(default)]
        options: Option<PipelineOptions>,
    },
}

fn default_grid() -> usize {
    3
}
fn default_t_samples() -> usize {
    16
}
fn default_threshold() -> f64 {
    crate::conditions::DEFAULT_THRESHOLD
}
fn default_smallness() -> f64 {
    0.125
}
fn default_fit_tol() -> f64 {
    0.15
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationaryBoxOverrides {
    pub cube_fraction: Option<f64>,
    pub kappa_floor: Option<f64>,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Config {
    pub surface: SurfaceSpec,
    #[serde(default)]
    pub box1: Option<BoxSpec>,
    #[serde(default)]
    pub box2: Option<BoxSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub plots: bool,
    pub experiments: Vec<NamedExperiment>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedExperiment {
    pub name: String,
    #[serde(flatten)]
    pub spec: ExperimentSpec,
}

/// One experiment outcome inside `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub name: String,
    pub status: String,
    pub pass: bool,
    pub details: serde_json::Value,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub pass: bool,
    pub results: Vec<ExperimentResult>,
}

fn write_sweep_csv(
    dir: &Path,
    name: &str,
    xs: &[f64],
    ys: &[f64],
    aux: &[(String, Vec<f64>)],
) -> std::io::Result<PathBuf> {
    let path = dir.join(format!("{name}.csv"));
    let mut fh = std::fs::File::create(&path)?;
    let mut header = String::from("param,value");
    for (label, _) in aux {
        header.push(',');
        header.push_str(label);
    }
    writeln!(fh, "{header}")?;
    for i in 0..xs.len() {
        let mut line = format!("{},{}", xs[i], ys[i]);
        for (_, col) in aux {
            line.push_str(&format!(",{}", col.get(i).copied().unwrap_or(f64::NAN)));
        }
        writeln!(fh, "{line}")?;
    }
    Ok(path)
}

fn write_plot_script(dir: &Path, name: &str) -> std::io::Result<()> {
    let path = dir.join(format!("{name}.gp"));
    let mut fh = std::fs::File::create(&path)?;
    writeln!(fh, "set terminal pngcairo size 800,600")?;
    writeln!(fh, "set output '{name}.png'")?;
    writeln!(fh, "set logscale xy")?;
    writeln!(fh, "set datafile separator ','")?;
    writeln!(fh, "set key left top")?;
    writeln!(fh, "plot '{name}.csv' every ::1 using 1:2 with linespoints title '{name}'")?;
    Ok(())
}

fn condition_details(reports: &[(&str, ConditionReport)]) -> serde_json::Value {
    serde_json::json!(reports
        .iter()
        .map(|(label, r)| serde_json::json!({
            "check": label,
            "report": serde_json::to_value(r).unwrap(),
        }))
        .collect::<Vec<_>>())
}

struct Ctx {
    surface: Surface,
    spec: SurfaceSpec,
    box1: BoxND,
    box2: BoxND,
    seed: u64,
    out_dir: PathBuf,
    plots: bool,
}

fn run_one(ctx: &Ctx, exp: &NamedExperiment) -> Result<ExperimentResult, ExperimentError> {
    let s = &ctx.surface;
    let name = exp.name.clone();
    match &exp.spec {
        ExperimentSpec::CheckConditions { grid, t_samples, threshold } => {
            let sampling = SamplingSpec { nu_per_axis: *grid, t_samples: *t_samples };
            let c12 = check_mixed_curvature(s, &ctx.box1, &ctx.box2, &sampling, *threshold)?;
            let c13 = check_gap_curvature(s, &ctx.box1, &ctx.box2, &sampling, *threshold)?;
            let c14 = check_bordered(s, &ctx.box1, &ctx.box2, &sampling, *threshold)?;
            let c15 = check_normal_curvature(s, &ctx.box1, &ctx.box2, &sampling, *threshold)?;
            let pass = c12.pass && c13.pass && c14.pass && c15.pass;
            Ok(ExperimentResult {
                name,
                status: if pass { "pass" } else { "gate-failed" }.into(),
                pass,
                details: condition_details(&[
                    ("C12", c12),
                    ("C13", c13),
                    ("C14", c14),
                    ("C15", c15),
                ]),
            })
        }
        ExperimentSpec::KnappSweep { deltas, smallness, tolerance } => {
            let frame = KnappFrame::new(s, &ctx.box1.center(), &ctx.box2.center())?;
            let rep = dual_box_sweep(
                s,
                &frame,
                [&ctx.box1, &ctx.box2],
                deltas,
                *smallness,
                *tolerance,
            )?;
            let path = write_sweep_csv(&ctx.out_dir, &name, &rep.xs, &rep.ys, &rep.aux)?;
            if ctx.plots {
                write_plot_script(&ctx.out_dir, &name)?;
            }
            Ok(ExperimentResult {
                name,
                status: if rep.pass { "pass" } else { "gate-failed" }.into(),
                pass: rep.pass,
                details: serde_json::json!({
                    "sweep": serde_json::to_value(&rep).unwrap(),
                    "csv": path.display().to_string(),
                }),
            })
        }
        ExperimentSpec::NecessarySweep { q, p, deltas, smallness, tolerance } => {
            let frame = KnappFrame::new(s, &ctx.box1.center(), &ctx.box2.center())?;
            let rep = necessary_exponent_sweep(
                s,
                &frame,
                [&ctx.box1, &ctx.box2],
                *q,
                *p,
                deltas,
                *smallness,
                *tolerance,
            )?;
            let path = write_sweep_csv(&ctx.out_dir, &name, &rep.xs, &rep.ys, &rep.aux)?;
            if ctx.plots {
                write_plot_script(&ctx.out_dir, &name)?;
            }
            Ok(ExperimentResult {
                name,
                status: if rep.pass { "pass" } else { "gate-failed" }.into(),
                pass: rep.pass,
                details: serde_json::json!({
                    "sweep": serde_json::to_value(&rep).unwrap(),
                    "csv": path.display().to_string(),
                }),
            })
        }
        ExperimentSpec::BilinearGrowth { q, data, r_list, gates } => {
            let gates = gates.unwrap_or_default();
            let rep = bilinear_growth_sweep(
                s,
                &ctx.box1,
                &ctx.box2,
                *q,
                *data,
                r_list,
                ctx.seed,
                &gates,
            )?;
            let path = write_sweep_csv(&ctx.out_dir, &name, &rep.xs, &rep.ys, &rep.aux)?;
            if ctx.plots {
                write_plot_script(&ctx.out_dir, &name)?;
            }
            Ok(ExperimentResult {
                name,
                status: if rep.pass { "pass" } else { "gate-failed" }.into(),
                pass: rep.pass,
                details: serde_json::json!({
                    "q": q,
                    "threshold": bilinear_threshold(s.dim(), s.codim()),
                    "sweep": serde_json::to_value(&rep).unwrap(),
                    "csv": path.display().to_string(),
                }),
            })
        }
        ExperimentSpec::StationaryBox { q, r_list, params } => {
            let mut pr = StationaryBoxParams::default();
            if let Some(ov) = params {
                if let Some(v) = ov.cube_fraction {
                    pr.cube_fraction = v;
                }
                if let Some(v) = ov.kappa_floor {
                    pr.kappa_floor = v;
                }
                if let Some(v) = ov.tolerance {
                    pr.tolerance = v;
                }
            }
            let rep = stationary_box_lower(s, [&ctx.box1, &ctx.box2], *q, r_list, &pr)?;
            let path = write_sweep_csv(&ctx.out_dir, &name, &rep.xs, &rep.ys, &rep.aux)?;
            if ctx.plots {
                write_plot_script(&ctx.out_dir, &name)?;
            }
            Ok(ExperimentResult {
                name,
                status: if rep.pass { "pass" } else { "gate-failed" }.into(),
                pass: rep.pass,
                details: serde_json::json!({
                    "sweep": serde_json::to_value(&rep).unwrap(),
                    "csv": path.display().to_string(),
                }),
            })
        }
        ExperimentSpec::L1Constant { r_list } => {
            let rep = measure_l1_constant(s, &ctx.box1, &ctx.box2, r_list, ctx.seed)?;
            let path = write_sweep_csv(&ctx.out_dir, &name, &rep.rs, &rep.cs, &[])?;
            Ok(ExperimentResult {
                name,
                status: if rep.pass { "pass" } else { "gate-failed" }.into(),
                pass: rep.pass,
                details: serde_json::json!({
                    "report": serde_json::to_value(&rep).unwrap(),
                    "csv": path.display().to_string(),
                }),
            })
        }
        ExperimentSpec::ComplexDemo {} => {
            let d_block = ctx
                .spec
                .d_block()
                .ok_or_else(|| ExperimentError::NormalFormFailed("config carries no D".into()))?;
            let rep = complex_failure_demo(&d_block)?;
            // the demo PASSES when the failure is exhibited cleanly
            let pass = rep.condition_value < 1e-9 && !rep.report.pass && rep.separation >= 1.0;
            Ok(ExperimentResult {
                name,
                status: if pass { "pass" } else { "gate-failed" }.into(),
                pass,
                details: serde_json::to_value(&rep).unwrap(),
            })
        }
        ExperimentSpec::ThresholdArithmetic {} => {
            let d = s.dim();
            let k = s.codim();
            let qb = bilinear_threshold(d, k);
            let qp = product_threshold(d, k);
            let pass = (qp - 2.0 * qb).abs() < 1e-12;
            Ok(ExperimentResult {
                name,
                status: if pass { "pass" } else { "gate-failed" }.into(),
                pass,
                details: serde_json::json!({
                    "bilinear_threshold": qb,
                    "product_threshold": qp,
                    "volume_threshold": super::volume_threshold(d, k),
                }),
            })
        }
        ExperimentSpec::WhitneyPipeline { q, p, options } => {
            let d_block = ctx
                .spec
                .d_block()
                .ok_or_else(|| ExperimentError::NormalFormFailed("config carries no D".into()))?;
            let opts = options.clone().unwrap_or_default();
            let rep = whitney_bilinear_pipeline(&d_block, *q, *p, &opts)?;
            Ok(ExperimentResult {
                name,
                status: if rep.pass { "pass" } else { "gate-failed" }.into(),
                pass: rep.pass,
                details: serde_json::to_value(&rep).unwrap(),
            })
        }
    }
}

/// Parses and runs a config, writing `report.json` and per-sweep CSVs into
/// `out_dir`; returns the process exit code.
pub fn run_config(path: &Path, out_dir: &Path) -> i32 {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return EXIT_PARSE;
        }
    };
    let config: Config = match serde_json::from_str(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!(
                "error: cannot parse {} (line {}, column {}): {e}",
                path.display(),
                e.line(),
                e.column()
            );
            return EXIT_PARSE;
        }
    };
    run_parsed(&config, out_dir)
}

pub fn run_parsed(config: &Config, out_dir: &Path) -> i32 {
    crate::init_threads();
    if let Err(e) = std::fs::create_dir_all(out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return EXIT_NUMERICAL;
    }
    let surface = match config.surface.build() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: bad surface spec: {e}");
            return EXIT_PARSE;
        }
    };
    let d = surface.dim();
    let default_boxes = || {
        let mut c1 = vec![0.0; d];
        let mut c2 = vec![0.0; d];
        c1[0] = -0.5;
        c2[0] = 0.5;
        (BoxND::cube(&c1, 0.5), BoxND::cube(&c2, 0.5))
    };
    let (b1, b2) = match (&config.box1, &config.box2) {
        (Some(a), Some(b)) => (a.build(), b.build()),
        _ => default_boxes(),
    };
    if b1.dim() != d || b2.dim() != d {
        eprintln!("error: box dimension does not match the surface");
        return EXIT_PARSE;
    }
    let ctx = Ctx {
        surface,
        spec: config.surface.clone(),
        box1: b1,
        box2: b2,
        seed: config.seed,
        out_dir: out_dir.to_path_buf(),
        plots: config.plots,
    };
    let mut results = Vec::new();
    let mut numerical_failure = false;
    for exp in &config.experiments {
        match run_one(&ctx, exp) {
            Ok(res) => {
                println!(
                    "{}: {} ({})",
                    res.name,
                    if res.pass { "PASS" } else { "FAIL" },
                    res.status
                );
                results.push(res);
            }
            Err(ExperimentError::ConditionRefused(msg)) => {
                println!("{}: REFUSED ({msg})", exp.name);
                results.push(ExperimentResult {
                    name: exp.name.clone(),
                    status: format!("refused: {msg}"),
                    pass: false,
                    details: serde_json::Value::Null,
                });
            }
            Err(e) => {
                println!("{}: ERROR ({e})", exp.name);
                results.push(ExperimentResult {
                    name: exp.name.clone(),
                    status: format!("error: {e}"),
                    pass: false,
                    details: serde_json::Value::Null,
                });
                numerical_failure = true;
            }
        }
    }
    let pass = results.iter().all(|r| r.pass);
    let report = RunReport { schema_version: SCHEMA_VERSION, pass, results };
    let report_path = out_dir.join("report.json");
    match std::fs::File::create(&report_path)
        .and_then(|f| serde_json::to_writer_pretty(f, &report).map_err(|e| e.into()))
    {
        Ok(()) => println!("report written to {}", report_path.display()),
        Err(e) => {
            eprintln!("error: cannot write report: {e}");
            return EXIT_NUMERICAL;
        }
    }
    if numerical_failure {
        EXIT_NUMERICAL
    } else if pass {
        EXIT_OK
    } else {
        EXIT_GATE
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surface_spec_round_trips() {
        let spec: SurfaceSpec = serde_json::from_str(
            r#"{"kind": "quadratic", "d": 2, "k": 1,
                 "matrices": [[1.0, 0.0, 0.0, -1.0]]}"#,
        )
        .unwrap();
        let s = spec.build().unwrap();
        assert_eq!((s.dim(), s.codim()), (2, 1));
        let h = s.hess(&[0.0, 0.0], 0);
        assert_eq!(h[(0, 0)], 1.0);
        assert_eq!(h[(1, 1)], -1.0);

        let spec: SurfaceSpec = serde_json::from_str(
            r#"{"kind": "complex-paraboloid", "n": 2, "D": [1.0, 0.0, 0.0, 1.0]}"#,
        )
        .unwrap();
        let s = spec.build().unwrap();
        assert_eq!((s.dim(), s.codim()), (4, 2));
    }

    #[test]
    fn empty_experiment_list_passes() {
        let config = Config {
            surface: SurfaceSpec {
                kind: "paraboloid".into(),
                d: Some(2),
                k: None,
                matrices: None,
                b: None,
                n: None,
                d_matrix: None,
            },
            box1: None,
            box2: None,
            seed: 0,
            plots: false,
            experiments: vec![],
        };
        let dir = std::env::temp_dir().join("restrictlab-test-empty");
        let code = run_parsed(&config, &dir);
        assert_eq!(code, EXIT_OK);
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap())
                .unwrap();
        assert_eq!(report["schema_version"], 1);
        assert_eq!(report["pass"], true);
    }

    #[test]
    fn malformed_config_is_a_parse_error() {
        let dir = std::env::temp_dir().join("restrictlab-test-parse");
        std::fs::create_dir_all(&dir).unwrap();
        let bad = dir.join("bad.json");
        std::fs::write(&bad, "{ not json").unwrap();
        assert_eq!(run_config(&bad, &dir), EXIT_PARSE);
        let missing = dir.join("definitely-missing.json");
        assert_eq!(run_config(&missing, &dir), EXIT_PARSE);
    }
}
