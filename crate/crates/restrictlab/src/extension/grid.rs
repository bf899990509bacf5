//! Space-time grids over cubes `Q_R` and fixed-`t` slice evaluation of the
//! extension field.
//!
//! For each `t`-slice the field on the `x`-lattice is the exact midpoint
//! quadrature sum; per axis it is computed either by a zero-padded FFT on
//! the dual lattice (spacing `1/(len * h)`) or by a dense transform matrix
//! when the padded lattice would be too large (high dimension). Both paths
//! produce identical values up to rounding.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::linalg::C64;
use crate::surfaces::Surface;

use super::{surface_table, ExtensionError, GridFunction, SurfaceTable, TAU};

/// Dense fields larger than this many cells must use the streaming norms.
const DENSE_FIELD_LIMIT: usize = 1 << 24;
/// Padded FFT lattices larger than this fall back to the dense transform.
const FFT_LATTICE_LIMIT: usize = 1 << 24;

/// Requested sampling policy for a space-time cube.
#[derive(Debug, Clone, Copy)]
pub struct GridResolution {
    /// Upper bound on the spacing in the `x` axes (hard Nyquist cap `1/2`,
    /// frequencies live in `I^d`).
    pub max_dx: f64,
    /// Upper bound on `dt * L_Phi` (hard cap `1/2`); the default `1/4`
    /// divides the sampled bound on `max(|Phi|, |grad Phi|)`.
    pub max_dt_scaled: f64,
}

impl Default for GridResolution {
    fn default() -> Self {
        GridResolution { max_dx: 0.25, max_dt_scaled: 0.25 }
    }
}

/// Midpoint lattice over a space-time cube `Q` of side `R` in `R^{d+k}`.
#[derive(Debug, Clone)]
pub struct SpaceTimeGrid {
    pub d: usize,
    pub k: usize,
    pub center: Vec<f64>,
    /// Extent per `x` axis (all equal for the cube constructor).
    pub x_sides: Vec<f64>,
    /// Extent per `t` axis.
    pub t_side: f64,
    /// Per-`x`-axis spacing (pinned to the dual lattice on the FFT path).
    pub dx: Vec<f64>,
    pub dt: f64,
    /// Points per `x` axis.
    pub nx: Vec<usize>,
    /// Points per `t` axis.
    pub nt: usize,
    /// Sampled bound on `max(|phi_j|, |grad phi_j|)` used for `dt`.
    pub l_phi: f64,
    /// Padded lattice length per `x` axis; 0 selects the dense transform.
    fft_len: Vec<usize>,
}

fn sample_l_phi(s: &Surface, inputs: &[&GridFunction]) -> f64 {
    let mut l: f64 = 0.0;
    for f in inputs {
        for p in f.support().corner_grid(5) {
            let phi = s.phi(&p);
            for j in 0..s.codim() {
                l = l.max(phi[j].abs());
                l = l.max(s.grad(&p).row(j).norm());
            }
        }
    }
    // margin for interior extrema of the sampled bound
    (l * 1.25).max(1e-6)
}

impl SpaceTimeGrid {
    /// Builds the lattice for evaluating extensions of the given inputs
    /// over the cube of side `R` centered at `center` (a point in
    /// `R^{d+k}`). All inputs must share the per-axis sample spacing, and
    /// the dual period `1/h` of every axis must cover `R` — otherwise the
    /// quadrature sum cannot distinguish `Q_R` from its translates.
    pub fn for_inputs(
        s: &Surface,
        inputs: &[&GridFunction],
        center: &[f64],
        side: f64,
        res: GridResolution,
    ) -> Result<Self, ExtensionError> {
        if !(res.max_dt_scaled <= 0.5 && res.max_dt_scaled > 0.0) {
            return Err(ExtensionError::ShapeMismatch(
                "scaled t spacing must lie in (0, 1/2]".into(),
            ));
        }
        let l_phi = sample_l_phi(s, inputs);
        let max_dt = res.max_dt_scaled / l_phi;
        Self::for_inputs_box(
            s,
            inputs,
            center,
            &vec![side; s.dim()],
            side,
            &vec![res.max_dx; s.dim()],
            max_dt,
        )
    }

    /// Anisotropic variant: per-axis `x` extents and spacings plus an
    /// explicit `t` extent and spacing cap. The `t` cap is still clamped
    /// to half the Nyquist bound from the sampled `|Phi|` range.
    pub fn for_inputs_box(
        s: &Surface,
        inputs: &[&GridFunction],
        center: &[f64],
        x_sides: &[f64],
        t_side: f64,
        dx_req: &[f64],
        max_dt: f64,
    ) -> Result<Self, ExtensionError> {
        let d = s.dim();
        let k = s.codim();
        assert_eq!(center.len(), d + k);
        assert_eq!(x_sides.len(), d);
        assert_eq!(dx_req.len(), d);
        assert!(t_side > 0.0 && x_sides.iter().all(|v| *v > 0.0));
        if inputs.is_empty() {
            return Err(ExtensionError::ShapeMismatch("need at least one input".into()));
        }
        let h = inputs[0].spacing();
        for f in inputs {
            if f.dim() != d {
                return Err(ExtensionError::ShapeMismatch("input dimension mismatch".into()));
            }
            let hf = f.spacing();
            if hf.iter().zip(&h).any(|(a, b)| (a - b).abs() > 1e-12 * b) {
                return Err(ExtensionError::ShapeMismatch(
                    "all inputs must share the sample spacing".into(),
                ));
            }
        }
        if dx_req.iter().any(|v| !(*v <= 0.5 && *v > 0.0)) {
            return Err(ExtensionError::ShapeMismatch(
                "x spacing must lie in (0, 1/2] (frequency support I^d)".into(),
            ));
        }
        // hard Nyquist guard in t from the |Phi| range alone
        let mut phi_max: f64 = 1e-9;
        for f in inputs {
            for p in f.support().corner_grid(5) {
                let phi = s.phi(&p);
                for j in 0..k {
                    phi_max = phi_max.max(phi[j].abs());
                }
            }
        }
        let l_phi = sample_l_phi(s, inputs);
        let dt_cap = 0.5 / (1.25 * phi_max);
        let max_dt = max_dt.min(dt_cap);
        if max_dt <= 0.0 {
            return Err(ExtensionError::ShapeMismatch("t spacing must be positive".into()));
        }
        let nt = (t_side / max_dt).ceil().max(1.0) as usize;
        let dt = t_side / nt as f64;

        let mut dx = Vec::with_capacity(d);
        let mut nx = Vec::with_capacity(d);
        let mut fft_len = Vec::with_capacity(d);
        let mut lattice_cells = 1usize;
        for a in 0..d {
            let period = 1.0 / h[a];
            if period < x_sides[a] * (1.0 - 1e-9) {
                return Err(ExtensionError::ResolutionTooCoarse(format!(
                    "axis {a}: dual period {period:.3} does not cover the extent {:.3}; \
                     refine the input grid",
                    x_sides[a]
                )));
            }
            let len = (1.0 / (dx_req[a] * h[a])).ceil() as usize;
            let len = len.next_power_of_two();
            lattice_cells = lattice_cells.saturating_mul(len);
            let dxa = 1.0 / (len as f64 * h[a]);
            let nxa = (x_sides[a] / dxa).round().max(1.0) as usize;
            dx.push(dxa);
            nx.push(nxa.min(len));
            fft_len.push(len);
        }
        if lattice_cells > FFT_LATTICE_LIMIT {
            // dense transform path: spacing is the requested one exactly
            for a in 0..d {
                fft_len[a] = 0;
                dx[a] = dx_req[a];
                nx[a] = (x_sides[a] / dx_req[a]).round().max(1.0) as usize;
            }
        }
        Ok(SpaceTimeGrid {
            d,
            k,
            center: center.to_vec(),
            x_sides: x_sides.to_vec(),
            t_side,
            dx,
            dt,
            nx,
            nt,
            l_phi,
            fft_len,
        })
    }

    pub fn x_cells(&self) -> usize {
        self.nx.iter().product()
    }

    pub fn t_cells(&self) -> usize {
        self.nt.pow(self.k as u32)
    }

    pub fn cells(&self) -> usize {
        self.x_cells() * self.t_cells()
    }

    /// Volume element of one space-time cell.
    pub fn cell_volume(&self) -> f64 {
        self.dx.iter().product::<f64>() * self.dt.powi(self.k as i32)
    }

    fn x_origin(&self, a: usize) -> f64 {
        self.center[a] - self.nx[a] as f64 * self.dx[a] / 2.0 + self.dx[a] / 2.0
    }

    fn t_origin(&self, a: usize) -> f64 {
        self.center[self.d + a] - self.nt as f64 * self.dt / 2.0 + self.dt / 2.0
    }

    pub fn t_point(&self, t_flat: usize) -> Vec<f64> {
        let mut rem = t_flat;
        let mut t = vec![0.0; self.k];
        for a in (0..self.k).rev() {
            let i = rem % self.nt;
            rem /= self.nt;
            t[a] = self.t_origin(a) + i as f64 * self.dt;
        }
        t
    }

    pub fn x_point(&self, x_flat: usize) -> Vec<f64> {
        let mut rem = x_flat;
        let mut x = vec![0.0; self.d];
        for a in (0..self.d).rev() {
            let i = rem % self.nx[a];
            rem /= self.nx[a];
            x[a] = self.x_origin(a) + i as f64 * self.dx[a];
        }
        x
    }

    /// Full space-time coordinates of a lattice point.
    pub fn point(&self, t_flat: usize, x_flat: usize) -> Vec<f64> {
        let mut p = self.x_point(x_flat);
        p.extend(self.t_point(t_flat));
        p
    }
}

enum AxisKind {
    Fft { plan: Arc<dyn Fft<f64>>, len: usize },
    Dense { matrix: Vec<C64> },
}

struct AxisTransform {
    n_in: usize,
    n_out: usize,
    in_phase: Vec<C64>,
    out_phase: Vec<C64>,
    kind: AxisKind,
}

fn unit(theta: f64) -> C64 {
    let (s, c) = theta.sin_cos();
    C64::new(c, s)
}

impl AxisTransform {
    fn new(
        planner: &mut FftPlanner<f64>,
        xi_lo: f64,
        h: f64,
        n_in: usize,
        x0: f64,
        dx: f64,
        n_out: usize,
        fft_len: usize,
    ) -> Self {
        let xi = |j: usize| xi_lo + (j as f64 + 0.5) * h;
        if fft_len > 0 {
            let in_phase = (0..n_in).map(|j| unit(TAU * x0 * xi(j))).collect();
            let out_phase = (0..n_out)
                .map(|m| unit(TAU * m as f64 * dx * (xi_lo + 0.5 * h)))
                .collect();
            let plan = planner.plan_fft(fft_len, FftDirection::Inverse);
            AxisTransform { n_in, n_out, in_phase, out_phase, kind: AxisKind::Fft { plan, len: fft_len } }
        } else {
            let mut matrix = Vec::with_capacity(n_out * n_in);
            for m in 0..n_out {
                let x = x0 + m as f64 * dx;
                for j in 0..n_in {
                    matrix.push(unit(TAU * x * xi(j)));
                }
            }
            AxisTransform {
                n_in,
                n_out,
                in_phase: vec![],
                out_phase: vec![],
                kind: AxisKind::Dense { matrix },
            }
        }
    }

    /// Maps one contiguous line of length `n_in` to `n_out` outputs.
    fn apply_line(&self, input: &[C64], out: &mut [C64], scratch: &mut Vec<C64>) {
        match &self.kind {
            AxisKind::Fft { plan, len } => {
                scratch.clear();
                scratch.resize(*len, C64::new(0.0, 0.0));
                for j in 0..self.n_in {
                    scratch[j] = input[j] * self.in_phase[j];
                }
                plan.process(scratch);
                for m in 0..self.n_out {
                    out[m] = scratch[m] * self.out_phase[m];
                }
            }
            AxisKind::Dense { matrix } => {
                for m in 0..self.n_out {
                    let row = &matrix[m * self.n_in..(m + 1) * self.n_in];
                    let mut acc = C64::new(0.0, 0.0);
                    for (v, w) in input.iter().zip(row) {
                        acc += v * w;
                    }
                    out[m] = acc;
                }
            }
        }
    }
}

/// Separable evaluation of `x -> sum_j g_j e^{2 pi i x . xi_j}` on the
/// grid's `x`-lattice, one input function at a time.
pub(crate) struct SliceTransformer {
    axes: Vec<AxisTransform>,
    scale: f64,
}

impl SliceTransformer {
    /// Transformer onto the full dual-period lattice (per-axis spacing
    /// `1/(len_a h_a)`), padded to at least `min_len` points per axis.
    /// Returns the transformer and the lattice cell volume.
    pub(crate) fn full_period(f: &GridFunction, min_len: &[usize]) -> (Self, f64) {
        let mut planner = FftPlanner::new();
        let h = f.spacing();
        let mut cell = 1.0;
        let axes = (0..f.dim())
            .map(|a| {
                let len = min_len[a].max(f.counts()[a]).next_power_of_two();
                let dxa = 1.0 / (len as f64 * h[a]);
                cell *= dxa;
                AxisTransform::new(
                    &mut planner,
                    f.support().lo[a],
                    h[a],
                    f.counts()[a],
                    0.0,
                    dxa,
                    len,
                    len,
                )
            })
            .collect();
        (SliceTransformer { axes, scale: f.cell_volume() }, cell)
    }

    pub(crate) fn new(f: &GridFunction, grid: &SpaceTimeGrid) -> Self {
        let mut planner = FftPlanner::new();
        let h = f.spacing();
        let axes = (0..f.dim())
            .map(|a| {
                AxisTransform::new(
                    &mut planner,
                    f.support().lo[a],
                    h[a],
                    f.counts()[a],
                    grid.x_origin(a),
                    grid.dx[a],
                    grid.nx[a],
                    grid.fft_len[a],
                )
            })
            .collect();
        SliceTransformer { axes, scale: f.cell_volume() }
    }

    /// `data` has the input shape (row-major); returns the field on the
    /// `x`-lattice (row-major over `nx`).
    pub(crate) fn apply(&self, mut data: Vec<C64>, dims_in: &[usize]) -> Vec<C64> {
        let d = dims_in.len();
        let mut shape: Vec<usize> = dims_in.to_vec();
        let mut scratch: Vec<C64> = Vec::new();
        // process the (current) last axis, then rotate it to the front;
        // original axis indices are visited d-1, d-2, ..., 0
        for step in 0..d {
            let axis = d - 1 - step;
            let tr = &self.axes[axis];
            let n_in = *shape.last().unwrap();
            debug_assert_eq!(n_in, tr.n_in);
            let lines = data.len() / n_in;
            let mut out = vec![C64::new(0.0, 0.0); lines * tr.n_out];
            for l in 0..lines {
                tr.apply_line(
                    &data[l * n_in..(l + 1) * n_in],
                    &mut out[l * tr.n_out..(l + 1) * tr.n_out],
                    &mut scratch,
                );
            }
            // rotate: [rest..., n_out] -> [n_out, rest...]
            let n_out = tr.n_out;
            let mut rotated = vec![C64::new(0.0, 0.0); out.len()];
            for l in 0..lines {
                for m in 0..n_out {
                    rotated[m * lines + l] = out[l * n_out + m];
                }
            }
            data = rotated;
            shape.pop();
            shape.insert(0, n_out);
        }
        for v in data.iter_mut() {
            *v *= self.scale;
        }
        data
    }
}

/// Everything a per-slice visitor gets to see.
pub struct SliceCtx<'a> {
    /// Flat index of the `t`-lattice point.
    pub t_flat: usize,
    pub t: &'a [f64],
    /// One field per input, on the `x`-lattice (row-major over `grid.nx`).
    pub fields: &'a [Vec<C64>],
}

pub(crate) fn slice_values(
    f: &GridFunction,
    table: &SurfaceTable,
    t: &[f64],
) -> Vec<C64> {
    let k = table.k;
    f.values()
        .iter()
        .enumerate()
        .map(|(idx, v)| {
            let tphi: f64 = (0..k).map(|j| t[j] * table.phi[idx * k + j]).sum();
            v * unit(TAU * tphi)
        })
        .collect()
}

/// Parallel fold over all `t`-slices of the extension fields of `inputs`.
///
/// The driver computes, for every `t`-lattice point, the fields of all
/// inputs on the `x`-lattice and feeds them to `fold`; partial results are
/// combined with `reduce`. Slices are processed in parallel.
pub fn fold_slices<T, FI, FF, FR>(
    s: &Surface,
    inputs: &[&GridFunction],
    grid: &SpaceTimeGrid,
    init: FI,
    fold: FF,
    reduce: FR,
) -> Result<T, ExtensionError>
where
    T: Send,
    FI: Fn() -> T + Sync,
    FF: Fn(T, &SliceCtx) -> T + Sync,
    FR: Fn(T, T) -> T + Sync,
{
    let tables: Vec<SurfaceTable> = inputs.iter().map(|f| surface_table(s, f)).collect();
    let transformers: Vec<SliceTransformer> =
        inputs.iter().map(|f| SliceTransformer::new(f, grid)).collect();
    let result = (0..grid.t_cells())
        .into_par_iter()
        .fold(&init, |acc, t_flat| {
            let t = grid.t_point(t_flat);
            let fields: Vec<Vec<C64>> = inputs
                .iter()
                .zip(&tables)
                .zip(&transformers)
                .map(|((f, table), tr)| {
                    tr.apply(slice_values(f, table, &t), f.counts())
                })
                .collect();
            let ctx = SliceCtx { t_flat, t: &t, fields: &fields };
            fold(acc, &ctx)
        })
        .reduce(&init, &reduce);
    Ok(result)
}

/// Dense extension field sampled on a space-time grid.
#[derive(Debug, Clone)]
pub struct Field {
    pub grid: SpaceTimeGrid,
    /// `t`-major (flat `t` index), then row-major over the `x`-lattice.
    pub values: Vec<C64>,
}

impl Field {
    pub fn value(&self, t_flat: usize, x_flat: usize) -> C64 {
        self.values[t_flat * self.grid.x_cells() + x_flat]
    }
}

/// Evaluates `Ef` on the whole grid. For each `t`-slice this is an exact
/// rearrangement of the midpoint sum that [`super::extend`] computes, so
/// the two agree at lattice points to rounding.
pub fn extend_grid(
    s: &Surface,
    f: &GridFunction,
    grid: &SpaceTimeGrid,
) -> Result<Field, ExtensionError> {
    let cells = grid.cells();
    if cells > DENSE_FIELD_LIMIT {
        return Err(ExtensionError::FieldTooLarge { cells, limit: DENSE_FIELD_LIMIT });
    }
    let xc = grid.x_cells();
    let slices = fold_slices(
        s,
        &[f],
        grid,
        Vec::new,
        |mut acc: Vec<(usize, Vec<C64>)>, ctx| {
            acc.push((ctx.t_flat, ctx.fields[0].clone()));
            acc
        },
        |mut a, b| {
            a.extend(b);
            a
        },
    )?;
    let mut values = vec![C64::new(0.0, 0.0); cells];
    for (t_flat, slice) in slices {
        values[t_flat * xc..(t_flat + 1) * xc].copy_from_slice(&slice);
    }
    Ok(Field { grid: grid.clone(), values })
}

/// Riemann-sum `L^q` norm of a dense field over its grid; `q = inf` gives
/// the max. Quasi-norms `q < 1` are allowed (no triangle inequality is
/// assumed anywhere).
pub fn lq_norm(field: &Field, q: f64) -> f64 {
    lq_of_samples(field.values.iter().map(|v| v.norm()), field.grid.cell_volume(), q)
}

fn lq_of_samples(samples: impl Iterator<Item = f64>, cell: f64, q: f64) -> f64 {
    assert!(q > 0.0);
    if q.is_infinite() {
        samples.fold(0.0, f64::max)
    } else {
        let sum: f64 = samples.map(|v| v.powf(q)).sum();
        (sum * cell).powf(1.0 / q)
    }
}

/// Streaming `L^q` norm of `Ef` over the grid cube.
pub fn lq_norm_single(
    s: &Surface,
    f: &GridFunction,
    grid: &SpaceTimeGrid,
    q: f64,
) -> Result<f64, ExtensionError> {
    assert!(q > 0.0);
    let cell = grid.cell_volume();
    let acc = fold_slices(
        s,
        &[f],
        grid,
        || 0.0f64,
        |acc, ctx| {
            if q.is_infinite() {
                ctx.fields[0].iter().map(|v| v.norm()).fold(acc, f64::max)
            } else {
                acc + ctx.fields[0].iter().map(|v| v.norm().powf(q)).sum::<f64>()
            }
        },
        |a, b| if q.is_infinite() { a.max(b) } else { a + b },
    )?;
    Ok(if q.is_infinite() { acc } else { (acc * cell).powf(1.0 / q) })
}

/// Streaming `L^q` norm of the product `E1 f * E2 g` over the grid cube.
pub fn lq_norm_bilinear(
    s: &Surface,
    f: &GridFunction,
    g: &GridFunction,
    grid: &SpaceTimeGrid,
    q: f64,
) -> Result<f64, ExtensionError> {
    assert!(q > 0.0);
    let cell = grid.cell_volume();
    let acc = fold_slices(
        s,
        &[f, g],
        grid,
        || 0.0f64,
        |acc, ctx| {
            let prod = ctx.fields[0].iter().zip(&ctx.fields[1]).map(|(a, b)| (a * b).norm());
            if q.is_infinite() {
                prod.fold(acc, f64::max)
            } else {
                acc + prod.map(|v| v.powf(q)).sum::<f64>()
            }
        },
        |a, b| if q.is_infinite() { a.max(b) } else { a + b },
    )?;
    Ok(if q.is_infinite() { acc } else { (acc * cell).powf(1.0 / q) })
}

/// `||Ef(., t)||_{L^2}` integrated in `x` over one full dual period (the
/// natural domain of the quadrature sum). The spacing `1/4` integrates the
/// band-limited `|Ef|^2` exactly, so the discrete Plancherel identity
/// `||Ef(., t)||_2 = ||f||_2` holds to rounding for every `t`.
pub fn plancherel_slice_norm(
    s: &Surface,
    f: &GridFunction,
    ts: &[Vec<f64>],
) -> Result<Vec<f64>, ExtensionError> {
    let d = f.dim();
    let h = f.spacing();
    let mut planner = FftPlanner::new();
    let mut axes = Vec::with_capacity(d);
    let mut cell = 1.0;
    for a in 0..d {
        let len = ((4.0 / h[a]).ceil() as usize).next_power_of_two();
        let dxa = 1.0 / (len as f64 * h[a]);
        cell *= dxa;
        axes.push(AxisTransform::new(
            &mut planner,
            f.support().lo[a],
            h[a],
            f.counts()[a],
            0.0,
            dxa,
            len,
            len,
        ));
    }
    let tr = SliceTransformer { axes, scale: f.cell_volume() };
    let table = surface_table(s, f);
    Ok(ts
        .par_iter()
        .map(|t| {
            let field = tr.apply(slice_values(f, &table, t), f.counts());
            (field.iter().map(|v| v.norm_sqr()).sum::<f64>() * cell).sqrt()
        })
        .collect())
}
