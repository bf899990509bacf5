//! Command-line front end: condition checks, field dumps, wave-packet
//! decompositions, incidence tables, Whitney enumeration, exponent sweeps
//! and the config-driven experiment runner.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use restrictlab::conditions::{
    check_bordered, check_gap_curvature, check_mixed_curvature, check_normal_curvature,
    SamplingSpec,
};
use restrictlab::experiments::config::{
    run_config, SurfaceSpec, EXIT_GATE, EXIT_NUMERICAL, EXIT_OK, EXIT_PARSE,
};
use restrictlab::experiments::{
    bilinear_growth_sweep, complex_failure_demo, dual_box_sweep, BilinearData, GrowthGates,
    KnappFrame,
};
use restrictlab::extension::{extend_grid, GridFunction, GridResolution, SpaceTimeGrid};
use restrictlab::geometry::Tube;
use restrictlab::incidence::whitney::whitney_pairs;
use restrictlab::incidence::{build_incidence, counting_bounds, CubeGrid};
use restrictlab::linalg::BoxND;
use restrictlab::surfaces::{named_surface, NamedParams, Surface};
use restrictlab::wavepackets::{decompose, write_packets_jsonl};

#[derive(Parser)]
#[command(name = "restrictlab", version, about = "Numerical laboratory for extension operators over surfaces of higher codimension")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SurfaceArgs {
    /// Path to a surface spec JSON, or a named surface
    /// (paraboloid, saddle, complex-paraboloid).
    #[arg(long)]
    surface: String,
    /// Base dimension for named surfaces.
    #[arg(long)]
    d: Option<usize>,
    /// Complex dimension for the complex kinds.
    #[arg(long)]
    n: Option<usize>,
}

impl SurfaceArgs {
    fn build(&self) -> Result<Surface, String> {
        match self.surface.as_str() {
            name @ ("paraboloid" | "saddle" | "hyperbolic-paraboloid" | "complex-paraboloid") => {
                named_surface(name, &NamedParams { d: self.d, n: self.n, ..Default::default() })
                    .map_err(|e| e.to_string())
            }
            path => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| format!("cannot read {path}: {e}"))?;
                let spec: SurfaceSpec =
                    serde_json::from_str(&text).map_err(|e| format!("bad surface spec: {e}"))?;
                spec.build()
            }
        }
    }
}

/// `cx,cy,...:side`
fn parse_box(text: &str) -> Result<BoxND, String> {
    let (center, side) = text
        .split_once(':')
        .ok_or_else(|| format!("box `{text}` must look like cx,cy:side"))?;
    let c: Vec<f64> = center
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let s: f64 = side.trim().parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
    Ok(BoxND::cube(&c, s))
}

fn parse_list(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect()
}

#[derive(Subcommand)]
enum Command {
    /// Sampled certification of the curvature/transversality conditions.
    CheckConditions {
        #[command(flatten)]
        surface: SurfaceArgs,
        /// First base box as `cx,cy,...:side`.
        #[arg(long)]
        box1: String,
        #[arg(long)]
        box2: String,
        /// Base points per axis.
        #[arg(long, default_value_t = 3)]
        grid: usize,
        /// Directions sampled on the unit sphere.
        #[arg(long, default_value_t = 16)]
        t_samples: usize,
        /// Pass threshold on the minimum |det|.
        #[arg(long, default_value_t = 1e-6)]
        threshold: f64,
    },
    /// Evaluate the extension field on a space-time cube and dump it.
    Extend {
        #[command(flatten)]
        surface: SurfaceArgs,
        /// Input density JSON (`{box: {center, side}, n, generator, seed}`).
        #[arg(long)]
        input: PathBuf,
        /// Space-time cube as `cx,..,ct,..:side`.
        #[arg(long)]
        q: String,
        /// Binary field output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Wave-packet decomposition to JSON lines.
    Decompose {
        #[command(flatten)]
        surface: SurfaceArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        r: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tube/cube incidence table summary.
    Incidence {
        #[command(flatten)]
        surface: SurfaceArgs,
        /// Packets JSONL (family 1).
        #[arg(long)]
        packets: PathBuf,
        /// Packets JSONL (family 2, defaults to family 1).
        #[arg(long)]
        packets2: Option<PathBuf>,
        #[arg(long)]
        r: f64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
    },
    /// Whitney pairs of the unit cube as CSV.
    Whitney {
        #[arg(long)]
        levels: u32,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dual-box lower-value sweep over slab widths.
    SweepKnapp {
        #[command(flatten)]
        surface: SurfaceArgs,
        #[arg(long)]
        box1: String,
        #[arg(long)]
        box2: String,
        /// Geometric list of slab widths, e.g. `0.125,0.0625,0.03125,0.015625`.
        #[arg(long)]
        deltas: String,
        #[arg(long, default_value_t = 0.125)]
        smallness: f64,
        #[arg(long, default_value_t = 0.15)]
        tolerance: f64,
    },
    /// Bilinear growth-exponent sweep.
    SweepBilinear {
        #[command(flatten)]
        surface: SurfaceArgs,
        #[arg(long)]
        box1: String,
        #[arg(long)]
        box2: String,
        #[arg(long)]
        q: f64,
        /// `random` or `knapp`.
        #[arg(long, default_value = "random")]
        data: String,
        /// Geometric list of scales, e.g. `16,32,64,128`.
        #[arg(long)]
        r_list: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Exhibit the complex separation failure for a 2x2 matrix.
    DemoComplex {
        /// Row-major 2x2 symmetric matrix, e.g. `1,0,0,1`.
        #[arg(long, default_value = "1,0,0,1")]
        d_matrix: String,
    },
    /// Run a config of experiments, writing report.json and CSVs.
    Run {
        config: PathBuf,
        /// Output directory (default: alongside the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(serde::Deserialize)]
struct InputSpec {
    #[serde(rename = "box")]
    bx: restrictlab::experiments::config::BoxSpec,
    n: usize,
    #[serde(default)]
    generator: Option<String>,
    #[serde(default)]
    seed: u64,
}

fn load_input(path: &PathBuf, d: usize) -> Result<GridFunction, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read input: {e}"))?;
    let spec: InputSpec = serde_json::from_str(&text).map_err(|e| format!("bad input: {e}"))?;
    let bx = spec.bx.build();
    if bx.dim() != d {
        return Err(format!("input box dimension {} does not match surface d={d}", bx.dim()));
    }
    let n = vec![spec.n; d];
    Ok(match spec.generator.as_deref() {
        None | Some("ones") => {
            GridFunction::from_fn(bx, n, |_| restrictlab::linalg::C64::new(1.0, 0.0))
        }
        Some("random") => GridFunction::random(bx, n, spec.seed),
        Some("bump") => {
            let c = bx.center();
            let half = bx.sides[0] / 2.0;
            GridFunction::from_fn(bx, n, move |x| {
                let r2: f64 = x
                    .iter()
                    .zip(&c)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / (half * half);
                if r2 < 1.0 {
                    restrictlab::linalg::C64::new((-2.0 / (1.0 - r2)).exp(), 0.0)
                } else {
                    restrictlab::linalg::C64::new(0.0, 0.0)
                }
            })
        }
        Some(other) => return Err(format!("unknown generator `{other}`")),
    })
}

fn write_field_bin(
    path: &PathBuf,
    field: &restrictlab::extension::Field,
) -> std::io::Result<()> {
    let mut fh = std::io::BufWriter::new(std::fs::File::create(path)?);
    let g = &field.grid;
    fh.write_all(b"RLF1")?;
    fh.write_all(&(g.d as u32).to_le_bytes())?;
    fh.write_all(&(g.k as u32).to_le_bytes())?;
    fh.write_all(&(g.nt as u32).to_le_bytes())?;
    for a in 0..g.d {
        fh.write_all(&(g.nx[a] as u32).to_le_bytes())?;
    }
    for a in 0..g.d {
        fh.write_all(&g.dx[a].to_le_bytes())?;
    }
    fh.write_all(&g.dt.to_le_bytes())?;
    for c in &g.center {
        fh.write_all(&c.to_le_bytes())?;
    }
    for v in &field.values {
        fh.write_all(&v.re.to_le_bytes())?;
        fh.write_all(&v.im.to_le_bytes())?;
    }
    Ok(())
}

fn read_packets(path: &PathBuf, r: f64, delta: f64) -> Result<Vec<Tube>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read packets: {e}"))?;
    let mut tubes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value =
            serde_json::from_str(line).map_err(|e| format!("packets line {}: {e}", i + 1))?;
        let read_vec = |key: &str| -> Result<Vec<f64>, String> {
            v[key]
                .as_array()
                .ok_or_else(|| format!("packets line {}: missing `{key}`", i + 1))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| format!("line {}: bad number", i + 1)))
                .collect()
        };
        let l = read_vec("l")?;
        let nu = read_vec("nu")?;
        tubes.push(Tube::new(l, nu, r, delta));
    }
    Ok(tubes)
}

fn main() -> ExitCode {
    restrictlab::init_threads();
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            EXIT_PARSE
        }
    };
    ExitCode::from(code as u8)
}

fn dispatch(cli: Cli) -> Result<i32, String> {
    match cli.command {
        Command::CheckConditions { surface, box1, box2, grid, t_samples, threshold } => {
            let s = surface.build()?;
            let b1 = parse_box(&box1)?;
            let b2 = parse_box(&box2)?;
            let sampling = SamplingSpec { nu_per_axis: grid, t_samples };
            let reports = vec![
                check_mixed_curvature(&s, &b1, &b2, &sampling, threshold),
                check_gap_curvature(&s, &b1, &b2, &sampling, threshold),
                check_bordered(&s, &b1, &b2, &sampling, threshold),
                check_normal_curvature(&s, &b1, &b2, &sampling, threshold),
            ];
            let mut all_pass = true;
            let mut out = Vec::new();
            for rep in reports {
                match rep {
                    Ok(r) => {
                        all_pass &= r.pass;
                        out.push(serde_json::to_value(&r).unwrap());
                    }
                    Err(e) => {
                        all_pass = false;
                        out.push(serde_json::json!({ "error": e.to_string() }));
                    }
                }
            }
            println!("{}", serde_json::to_string_pretty(&out).unwrap());
            Ok(if all_pass { EXIT_OK } else { EXIT_GATE })
        }
        Command::Extend { surface, input, q, out } => {
            let s = surface.build()?;
            let f = load_input(&input, s.dim())?;
            let bx = parse_box(&q)?;
            if bx.dim() != s.dim() + s.codim() {
                return Err(format!(
                    "space-time cube must have {} coordinates",
                    s.dim() + s.codim()
                ));
            }
            let grid = SpaceTimeGrid::for_inputs(
                &s,
                &[&f],
                &bx.center(),
                bx.sides[0],
                GridResolution::default(),
            )
            .map_err(|e| e.to_string())?;
            let field = extend_grid(&s, &f, &grid).map_err(|e| e.to_string())?;
            write_field_bin(&out, &field).map_err(|e| e.to_string())?;
            println!(
                "field written to {} ({} t-slices x {} x-points)",
                out.display(),
                grid.t_cells(),
                grid.x_cells()
            );
            Ok(EXIT_OK)
        }
        Command::Decompose { surface, input, r, out } => {
            let s = surface.build()?;
            let f = load_input(&input, s.dim())?;
            let dec = decompose(&s, &f, r).map_err(|e| e.to_string())?;
            let fh = std::fs::File::create(&out).map_err(|e| e.to_string())?;
            write_packets_jsonl(&dec, std::io::BufWriter::new(fh)).map_err(|e| e.to_string())?;
            println!(
                "{} packets written to {} (pruned {}, residual L1 bound {:.3e})",
                dec.packets.len(),
                out.display(),
                dec.pruned_count,
                dec.pruned_l1_bound
            );
            Ok(EXIT_OK)
        }
        Command::Incidence { surface, packets, packets2, r, delta } => {
            let s = surface.build()?;
            let p1 = read_packets(&packets, r, 0.0)?;
            let p2 = match &packets2 {
                Some(p) => read_packets(p, r, 0.0)?,
                None => p1.clone(),
            };
            let dim = s.dim() + s.codim();
            let grid = CubeGrid::q_scale(&vec![0.0; dim], r);
            let table =
                build_incidence(&s, &p1, &p2, &grid, delta).map_err(|e| e.to_string())?;
            let b_grid = CubeGrid::b_scale(&vec![0.0; dim], r, delta);
            let counting = counting_bounds(&s, &table, &p1, 0, &b_grid);
            // double-counting identity per class
            let mut identity_ok = true;
            let classes: Vec<serde_json::Value> = table
                .classes
                .iter()
                .map(|(class, cubes)| {
                    let lhs: usize =
                        cubes.iter().map(|&q| table.hits1[q as usize].len()).sum();
                    let rhs: usize =
                        table.spread[class][0].iter().map(|&l| l as usize).sum();
                    identity_ok &= lhs == rhs;
                    serde_json::json!({
                        "rho1": class.0,
                        "rho2": class.1,
                        "cubes": cubes.len(),
                        "incidences": lhs,
                    })
                })
                .collect();
            let summary = serde_json::json!({
                "packets": [p1.len(), p2.len()],
                "cubes": grid.len(),
                "classes": classes,
                "double_counting_exact": identity_ok,
                "counting": serde_json::to_value(&counting).unwrap(),
            });
            println!("{}", serde_json::to_string_pretty(&summary).unwrap());
            Ok(if identity_ok && counting.pass { EXIT_OK } else { EXIT_GATE })
        }
        Command::Whitney { levels, dim, out } => {
            let mut text = String::from("level,side");
            for l in ["a", "b"] {
                for ax in 0..dim {
                    text.push_str(&format!(",{l}{ax}"));
                }
            }
            text.push('\n');
            for (j, pairs) in whitney_pairs(levels, dim) {
                let side = 0.5f64.powi(j as i32);
                for (a, b) in pairs {
                    text.push_str(&format!("{j},{side}"));
                    for c in a.corner.iter().chain(b.corner.iter()) {
                        text.push_str(&format!(",{c}"));
                    }
                    text.push('\n');
                }
            }
            match out {
                Some(p) => std::fs::write(&p, text).map_err(|e| e.to_string())?,
                None => print!("{text}"),
            }
            Ok(EXIT_OK)
        }
        Command::SweepKnapp { surface, box1, box2, deltas, smallness, tolerance } => {
            let s = surface.build()?;
            let b1 = parse_box(&box1)?;
            let b2 = parse_box(&box2)?;
            let deltas = parse_list(&deltas)?;
            let frame =
                KnappFrame::new(&s, &b1.center(), &b2.center()).map_err(|e| e.to_string())?;
            let rep = dual_box_sweep(&s, &frame, [&b1, &b2], &deltas, smallness, tolerance)
                .map_err(|e| e.to_string())?;
            println!("{}", serde_json::to_string_pretty(&rep).unwrap());
            Ok(if rep.pass { EXIT_OK } else { EXIT_GATE })
        }
        Command::SweepBilinear { surface, box1, box2, q, data, r_list, seed } => {
            let s = surface.build()?;
            let b1 = parse_box(&box1)?;
            let b2 = parse_box(&box2)?;
            let rs = parse_list(&r_list)?;
            let data = match data.as_str() {
                "random" => BilinearData::Random,
                "knapp" => BilinearData::Knapp,
                other => return Err(format!("unknown data kind `{other}`")),
            };
            match bilinear_growth_sweep(&s, &b1, &b2, q, data, &rs, seed, &GrowthGates::default())
            {
                Ok(rep) => {
                    println!("{}", serde_json::to_string_pretty(&rep).unwrap());
                    Ok(if rep.pass { EXIT_OK } else { EXIT_GATE })
                }
                Err(restrictlab::experiments::ExperimentError::ConditionRefused(msg)) => {
                    eprintln!("refused: {msg}");
                    Ok(EXIT_GATE)
                }
                Err(e) => {
                    eprintln!("numerical failure: {e}");
                    Ok(EXIT_NUMERICAL)
                }
            }
        }
        Command::DemoComplex { d_matrix } => {
            let entries = parse_list(&d_matrix)?;
            if entries.len() != 4 {
                return Err("d-matrix needs 4 row-major entries".into());
            }
            let m = DMatrix::from_row_slice(2, 2, &entries);
            let rep = complex_failure_demo(&m).map_err(|e| e.to_string())?;
            println!("{}", serde_json::to_string_pretty(&rep).unwrap());
            Ok(EXIT_OK)
        }
        Command::Run { config, out } => {
            let out_dir = out.unwrap_or_else(|| {
                config
                    .parent()
                    .map(|p| p.join("out"))
                    .unwrap_or_else(|| PathBuf::from("out"))
            });
            Ok(run_config(&config, &out_dir))
        }
    }
}
