//! Wave-packet decomposition at scale `R`: frequency cells on the lattice
//! `R^{-1/2} Z^d`, spatial windows on `R^{1/2} Z^d`, coefficients from a
//! discrete dyadic maximal function, and profiles normalized so that
//! `Ef = sum c P`.
//!
//! Kernel realization on the periodic dual grid:
//!
//! * the frequency kernel is the half-open unit-cube indicator (tensor
//!   sharp box), so the frequency partition is exact and its support has
//!   radius `sqrt(d)/2 <= 1` for `d <= 4`;
//! * the spatial window is defined through its transform, a per-axis
//!   B-spline-smoothed box supported in `[-r, r]` with `r = 1/sqrt(d)`
//!   (closed form `u = box_{r/2} * hat_{r/2}`), sampled on the dual
//!   frequency lattice and inverse-transformed. The sampled transform
//!   vanishes at every nonzero point of the coarse lattice, so the window
//!   partition over spatial shifts closes up to rounding, and the window
//!   transform has no tail outside the unit ball at all (`eps_psi = 0`).
//!   The window takes small negative values; the minimum is recorded.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::{Fft, FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extension::GridFunction;
use crate::linalg::C64;
use crate::surfaces::Surface;

const TAU: f64 = std::f64::consts::TAU;

#[derive(Debug, Error, PartialEq)]
pub enum WavePacketError {
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("packets come from different decompositions")]
    MixedDecompositions,
    #[error("outside the lemma range: {0}")]
    OutsideLemmaRange(String),
    #[error("insufficient strata: only {bands} populated distance bands")]
    InsufficientStrata { bands: usize },
}

/// The pair of partition kernels used by a decomposition, with their
/// recorded quality constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionKernels {
    pub d: usize,
    /// Per-axis half-width of the spatial window transform, `1/sqrt(d)`.
    pub freq_halfwidth: f64,
    /// Tail mass of the window transform outside `B(0,1)`: exactly 0 by
    /// construction.
    pub eps_psi: f64,
    /// Per-axis half-width of the frequency cell (sharp box), `1/2`.
    pub zeta_halfwidth: f64,
    /// Smallest sampled value of the spatial window (slightly negative).
    pub min_psi: f64,
    /// Largest deviation of the window partition sum from 1 on the grid.
    pub partition_residual: f64,
}

/// Per-axis transform of the spatial window: the smoothed box
/// `u = box_{[-r/2, r/2]} * hat_{r/2}` (unit value at 0, support `[-r, r]`,
/// vanishing at the support ends).
fn smoothed_box(s: f64, r: f64) -> f64 {
    let a = r / 2.0;
    let b = r / 2.0;
    // CDF of the normalized hat on [-b, b]
    let cdf = |y: f64| -> f64 {
        if y <= -b {
            0.0
        } else if y <= 0.0 {
            (y + b) * (y + b) / (2.0 * b * b)
        } else if y <= b {
            1.0 - (b - y) * (b - y) / (2.0 * b * b)
        } else {
            1.0
        }
    };
    cdf((s + a).min(b)) - cdf((s - a).max(-b))
}

/// One wave packet: lattice tags and the (real, nonnegative) coefficient.
/// Profiles are recomputed from the parent decomposition, never stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WavePacket {
    pub decomp_id: u64,
    /// Spatial lattice point, centered representative in `[-P/2, P/2)`.
    pub l: Vec<f64>,
    /// Frequency lattice point.
    pub nu: Vec<f64>,
    pub coeff: f64,
}

/// Exact transform pair between frequency samples on midpoint nodes and
/// spatial samples on the dual lattice `x_m = m / (n h)`.
struct DualGrid {
    n: Vec<usize>,
    h: Vec<f64>,
    lo: Vec<f64>,
    inv: Vec<Arc<dyn Fft<f64>>>,
}

impl DualGrid {
    fn new(f: &GridFunction) -> Self {
        let mut planner = FftPlanner::new();
        let n = f.counts().to_vec();
        let inv = n.iter().map(|&m| planner.plan_fft(m, FftDirection::Inverse)).collect();
        DualGrid { n, h: f.spacing(), lo: f.support().lo.clone(), inv }
    }

    fn len(&self) -> usize {
        self.n.iter().product()
    }

    fn dx(&self, a: usize) -> f64 {
        1.0 / (self.n[a] as f64 * self.h[a])
    }

    fn cell_x(&self) -> f64 {
        (0..self.n.len()).map(|a| self.dx(a)).product()
    }

    fn cell_xi(&self) -> f64 {
        self.h.iter().product()
    }

    /// Offset phases `e^{2 pi i m dx (lo + h/2)}` for one axis.
    fn offset_phase(&self, a: usize) -> Vec<C64> {
        (0..self.n[a])
            .map(|m| {
                let theta = TAU * (m as f64 * self.dx(a)) * (self.lo[a] + 0.5 * self.h[a]);
                let (s, c) = theta.sin_cos();
                C64::new(c, s)
            })
            .collect()
    }

    /// Per-axis passes with rotation; `phase_first` multiplies the offset
    /// phases before the FFT, otherwise after.
    fn axis_pass(&self, data: &mut Vec<C64>, phase_first: bool) {
        let d = self.n.len();
        let total = self.len();
        let mut dims = self.n.clone();
        let mut order: Vec<usize> = (0..d).collect();
        for _ in 0..d {
            let axis = *order.last().unwrap();
            let m = dims[d - 1];
            let lines = total / m;
            let plan = &self.inv[axis];
            let phase = self.offset_phase(axis);
            for l in 0..lines {
                let line = &mut data[l * m..(l + 1) * m];
                if phase_first {
                    for (v, p) in line.iter_mut().zip(&phase) {
                        *v *= p;
                    }
                }
                plan.process(line);
                if !phase_first {
                    for (v, p) in line.iter_mut().zip(&phase) {
                        *v *= p;
                    }
                }
            }
            let mut rot = vec![C64::new(0.0, 0.0); total];
            for l in 0..lines {
                for mi in 0..m {
                    rot[mi * lines + l] = data[l * m + mi];
                }
            }
            *data = rot;
            dims.rotate_right(1);
            order.rotate_right(1);
        }
    }

    /// Frequency samples -> spatial samples:
    /// `g(x_m) = cell_xi sum_j e^{2 pi i x_m . xi_j} v_j`.
    fn to_x(&self, freq: &[C64]) -> Vec<C64> {
        let mut data = freq.to_vec();
        self.axis_pass(&mut data, false);
        let c = self.cell_xi();
        for v in data.iter_mut() {
            *v *= c;
        }
        data
    }

    /// Spatial samples -> frequency samples (exact inverse of [`to_x`]):
    /// `v_j = cell_x sum_m e^{-2 pi i x_m . xi_j} g_m`.
    fn to_freq(&self, x: &[C64]) -> Vec<C64> {
        let mut data: Vec<C64> = x.iter().map(|v| v.conj()).collect();
        self.axis_pass(&mut data, true);
        let c = self.cell_x();
        for v in data.iter_mut() {
            *v = v.conj() * c;
        }
        data
    }
}

/// A completed decomposition: kept packets, pruning diagnostics, kernels,
/// and everything needed to recompute pieces and profiles.
pub struct WavePacketDecomposition {
    pub id: u64,
    pub r: f64,
    pub kernels: PartitionKernels,
    pub packets: Vec<WavePacket>,
    /// Number of pruned (near-zero) packets.
    pub pruned_count: usize,
    /// `L^1` norm of `f - sum of kept pieces`: a pointwise bound on the
    /// reconstruction error of the pruned expansion.
    pub pruned_l1_bound: f64,
    surface: Surface,
    f: GridFunction,
    dual: DualGrid,
    /// Spatial window samples on the dual lattice (one period).
    window: Vec<f64>,
    /// Total number of lattice points in one period.
    l_total: usize,
    /// Period length per axis.
    period: Vec<f64>,
    /// Per packet: the x-lattice index of `l` within the period.
    l_indices: Vec<Vec<usize>>,
}

static DECOMP_COUNTER: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(1);

fn node_nu_index(xi: f64, sqrt_r: f64) -> i64 {
    (xi * sqrt_r + 0.5).floor() as i64
}

/// Decomposes `f` into wave packets at scale `R`.
///
/// Checked requirements: `R >= 16`; each axis resolves the frequency cells
/// (`n >= 8 side sqrt(R)`); the lattice step `sqrt(R)` is a multiple of
/// the dual spacing and divides the dual period, so the window partition
/// closes up over the period.
pub fn decompose(
    s: &Surface,
    f: &GridFunction,
    r: f64,
) -> Result<WavePacketDecomposition, WavePacketError> {
    let d = s.dim();
    if d != f.dim() {
        return Err(WavePacketError::GridTooCoarse("dimension mismatch".into()));
    }
    if d > 4 {
        return Err(WavePacketError::GridTooCoarse(
            "frequency kernel needs d <= 4 for unit-ball support".into(),
        ));
    }
    if r < 16.0 {
        return Err(WavePacketError::GridTooCoarse(format!("R = {r} < 16")));
    }
    let sqrt_r = r.sqrt();
    let h = f.spacing();
    let n = f.counts();
    for a in 0..d {
        let side = f.support().sides[a];
        if (n[a] as f64) < 8.0 * side * sqrt_r {
            return Err(WavePacketError::GridTooCoarse(format!(
                "axis {a}: n = {} < 8 side sqrt(R) = {}",
                n[a],
                8.0 * side * sqrt_r
            )));
        }
        let dx = 1.0 / (n[a] as f64 * h[a]);
        let steps = sqrt_r / dx;
        if (steps - steps.round()).abs() > 1e-9 || steps.round() < 1.0 {
            return Err(WavePacketError::GridTooCoarse(format!(
                "axis {a}: sqrt(R) is not an integer multiple of the dual spacing {dx}"
            )));
        }
        let period = 1.0 / h[a];
        let count = period / sqrt_r;
        if (count - count.round()).abs() > 1e-9 || count.round() < 1.0 {
            return Err(WavePacketError::GridTooCoarse(format!(
                "axis {a}: dual period {period} is not a multiple of sqrt(R)"
            )));
        }
    }

    let dual = DualGrid::new(f);
    let l_step: Vec<usize> = (0..d).map(|a| (sqrt_r / dual.dx(a)).round() as usize).collect();
    let l_count: Vec<usize> = (0..d).map(|a| dual.n[a] / l_step[a]).collect();
    let period: Vec<f64> = (0..d).map(|a| 1.0 / h[a]).collect();

    // spatial window from its sampled transform; the periodization factor
    // is h sqrt(R) per axis
    let freq_hw = 1.0 / (d as f64).sqrt();
    let window = {
        let mut wf = vec![C64::new(0.0, 0.0); dual.len()];
        let mut idx = vec![0usize; d];
        for (flat, v) in wf.iter_mut().enumerate() {
            let mut rem = flat;
            for a in (0..d).rev() {
                idx[a] = rem % dual.n[a];
                rem /= dual.n[a];
            }
            let mut val = 1.0;
            for a in 0..d {
                let half = dual.n[a] / 2;
                let signed =
                    if idx[a] <= half { idx[a] as i64 } else { idx[a] as i64 - dual.n[a] as i64 };
                let eta = signed as f64 * h[a];
                val *= smoothed_box(eta * sqrt_r, freq_hw);
            }
            *v = C64::new(val, 0.0);
        }
        // plain multi-dim inverse FFT over the unsigned frequency indexing
        let mut planner = FftPlanner::new();
        let total = dual.len();
        let mut dims = dual.n.clone();
        let mut data = wf;
        for _ in 0..d {
            let m = *dims.last().unwrap();
            let plan = planner.plan_fft(m, FftDirection::Inverse);
            let lines = total / m;
            for l in 0..lines {
                plan.process(&mut data[l * m..(l + 1) * m]);
            }
            let mut rot = vec![C64::new(0.0, 0.0); total];
            for l in 0..lines {
                for mi in 0..m {
                    rot[mi * lines + l] = data[l * m + mi];
                }
            }
            data = rot;
            dims.rotate_right(1);
        }
        let norm: f64 = (0..d).map(|a| h[a] * sqrt_r).product();
        data.iter().map(|v| v.re * norm).collect::<Vec<f64>>()
    };
    let min_psi = window.iter().cloned().fold(f64::INFINITY, f64::min);

    // partition residual over the full period
    let l_total: usize = l_count.iter().product();
    let mut partition_residual: f64 = 0.0;
    {
        let mut sums = vec![0.0f64; dual.len()];
        for lflat in 0..l_total {
            let mut rem = lflat;
            let mut shift = vec![0usize; d];
            for a in (0..d).rev() {
                shift[a] = (rem % l_count[a]) * l_step[a];
                rem /= l_count[a];
            }
            accumulate_shifted(&mut sums, &window, &dual.n, &shift);
        }
        for v in sums {
            partition_residual = partition_residual.max((v - 1.0).abs());
        }
    }
    if partition_residual > 1e-9 {
        return Err(WavePacketError::GridTooCoarse(format!(
            "window partition residual {partition_residual:.3e} exceeds 1e-9"
        )));
    }

    let kernels = PartitionKernels {
        d,
        freq_halfwidth: freq_hw,
        eps_psi: 0.0,
        zeta_halfwidth: 0.5,
        min_psi,
        partition_residual,
    };

    // assign nonzero grid nodes to frequency cells
    let mut cells: std::collections::BTreeMap<Vec<i64>, Vec<usize>> = Default::default();
    {
        let mut node = vec![0.0; d];
        for idx in 0..f.len() {
            if f.values()[idx] == C64::new(0.0, 0.0) {
                continue;
            }
            f.node_at(idx, &mut node);
            let key: Vec<i64> = node.iter().map(|&x| node_nu_index(x, sqrt_r)).collect();
            cells.entry(key).or_default().push(idx);
        }
    }

    let id = DECOMP_COUNTER.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    let cell_list: Vec<(Vec<i64>, Vec<usize>)> = cells.into_iter().collect();
    let results: Vec<Vec<(Vec<i64>, Vec<usize>, f64)>> = cell_list
        .par_iter()
        .map(|(key, nodes)| {
            let mut spec = vec![C64::new(0.0, 0.0); f.len()];
            for &i in nodes {
                spec[i] = f.values()[i];
            }
            let g = dual.to_x(&spec);
            let mag: Vec<f64> = g.iter().map(|v| v.norm()).collect();
            let sat = Sat::new(&mag, &dual.n);
            let mut out = Vec::new();
            for lflat in 0..l_total {
                let mut rem = lflat;
                let mut lidx = vec![0usize; d];
                for a in (0..d).rev() {
                    lidx[a] = (rem % l_count[a]) * l_step[a];
                    rem /= l_count[a];
                }
                let m = maximal_at(&sat, &dual.n, &lidx, &l_step);
                if m > 0.0 {
                    let c = r.powf(d as f64 / 4.0) * m;
                    out.push((key.clone(), lidx, c));
                }
            }
            out
        })
        .collect();

    let mut raw: Vec<(Vec<i64>, Vec<usize>, f64)> = results.into_iter().flatten().collect();
    raw.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    let c_max = raw.iter().map(|r| r.2).fold(0.0f64, f64::max);
    let threshold = 1e-12 * c_max;

    let mut packets = Vec::new();
    let mut l_indices = Vec::new();
    let mut pruned_count = 0usize;
    let mut kept_by_cell: std::collections::BTreeMap<Vec<i64>, Vec<Vec<usize>>> =
        Default::default();
    for (key, lidx, c) in raw {
        if c < threshold {
            pruned_count += 1;
            continue;
        }
        let nu: Vec<f64> = key.iter().map(|&i| i as f64 / sqrt_r).collect();
        let l: Vec<f64> = (0..d)
            .map(|a| {
                let pos = lidx[a] as f64 * dual.dx(a);
                let p = period[a];
                pos - p * ((pos + p / 2.0) / p).floor()
            })
            .collect();
        kept_by_cell.entry(key).or_default().push(lidx.clone());
        packets.push(WavePacket { decomp_id: id, l, nu, coeff: c });
        l_indices.push(lidx);
    }

    // pruned-mass accounting: assemble the kept part and compare with f
    let mut kept = vec![C64::new(0.0, 0.0); f.len()];
    {
        let cells_by_key: std::collections::BTreeMap<Vec<i64>, Vec<usize>> =
            cell_list.into_iter().collect();
        let parts: Vec<Vec<C64>> = kept_by_cell
            .par_iter()
            .map(|(key, lidxs)| {
                let nodes = &cells_by_key[key];
                let mut spec = vec![C64::new(0.0, 0.0); f.len()];
                for &i in nodes {
                    spec[i] = f.values()[i];
                }
                sum_cell_pieces(&dual, &window, spec, lidxs, l_total)
            })
            .collect();
        for part in parts {
            for (acc, v) in kept.iter_mut().zip(part) {
                *acc += v;
            }
        }
    }
    let pruned_l1_bound: f64 = f
        .values()
        .iter()
        .zip(&kept)
        .map(|(a, b)| (a - b).norm())
        .sum::<f64>()
        * f.cell_volume();

    Ok(WavePacketDecomposition {
        id,
        r,
        kernels,
        packets,
        pruned_count,
        pruned_l1_bound,
        surface: s.clone(),
        f: f.clone(),
        dual,
        window,
        l_total,
        period,
        l_indices,
    })
}

/// Sum of the windowed pieces of one frequency cell over the given lattice
/// points. When every lattice point participates the window partition sums
/// to one and the result is the cell spectrum itself.
fn sum_cell_pieces(
    dual: &DualGrid,
    window: &[f64],
    spec: Vec<C64>,
    lidxs: &[Vec<usize>],
    l_total: usize,
) -> Vec<C64> {
    if lidxs.len() == l_total {
        return spec;
    }
    let g = dual.to_x(&spec);
    let mut wsum = vec![0.0f64; dual.len()];
    for lidx in lidxs {
        accumulate_shifted(&mut wsum, window, &dual.n, lidx);
    }
    let windowed: Vec<C64> = g.iter().zip(&wsum).map(|(v, w)| v * *w).collect();
    dual.to_freq(&windowed)
}

/// Summed-area table over a multi-dimensional array (non-periodic; the
/// periodic queries split their windows).
struct Sat {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Sat {
    fn new(values: &[f64], dims: &[usize]) -> Self {
        let mut data = values.to_vec();
        let d = dims.len();
        let total: usize = dims.iter().product();
        let strides = strides_of(dims);
        for a in 0..d {
            for flat in 0..total {
                let idx_a = (flat / strides[a]) % dims[a];
                if idx_a > 0 {
                    data[flat] += data[flat - strides[a]];
                }
            }
        }
        Sat { dims: dims.to_vec(), data }
    }

    /// Box sum over `[lo_a, lo_a + len_a)`, no wrapping.
    fn box_sum(&self, lo: &[usize], len: &[usize]) -> f64 {
        let d = self.dims.len();
        let strides = strides_of(&self.dims);
        let mut total = 0.0;
        for corner in 0..(1usize << d) {
            let mut flat = 0i64;
            let mut sign = 1.0;
            let mut valid = true;
            for a in 0..d {
                let hi_corner = (corner >> a) & 1 == 1;
                let pos = if hi_corner {
                    lo[a] as i64 + len[a] as i64 - 1
                } else {
                    sign = -sign;
                    lo[a] as i64 - 1
                };
                if pos < 0 {
                    valid = false;
                    break;
                }
                flat += pos * strides[a] as i64;
            }
            if valid {
                total += sign * self.data[flat as usize];
            }
        }
        total
    }
}

fn strides_of(dims: &[usize]) -> Vec<usize> {
    let d = dims.len();
    let mut s = vec![1usize; d];
    for a in (0..d.saturating_sub(1)).rev() {
        s[a] = s[a + 1] * dims[a + 1];
    }
    s
}

/// Periodic box sum by splitting a wrapped window into unwrapped pieces.
fn periodic_box_sum(sat: &Sat, dims: &[usize], lo: &[i64], len: &[usize]) -> f64 {
    let d = dims.len();
    let mut pieces: Vec<Vec<(usize, usize)>> = Vec::with_capacity(d);
    for a in 0..d {
        let n = dims[a] as i64;
        let mut start = lo[a].rem_euclid(n);
        let mut remaining = len[a] as i64;
        let mut list = Vec::new();
        while remaining > 0 {
            let take = remaining.min(n - start);
            list.push((start as usize, take as usize));
            start = 0;
            remaining -= take;
        }
        pieces.push(list);
    }
    let mut total = 0.0;
    let mut choice = vec![0usize; d];
    loop {
        let lo_v: Vec<usize> = (0..d).map(|a| pieces[a][choice[a]].0).collect();
        let len_v: Vec<usize> = (0..d).map(|a| pieces[a][choice[a]].1).collect();
        total += sat.box_sum(&lo_v, &len_v);
        let mut a = d;
        let mut done = false;
        loop {
            if a == 0 {
                done = true;
                break;
            }
            a -= 1;
            choice[a] += 1;
            if choice[a] < pieces[a].len() {
                break;
            }
            choice[a] = 0;
        }
        if done {
            break;
        }
    }
    total
}

/// Discrete dyadic maximal function: max over cubes centered at the
/// lattice point with sides `sqrt(R) 2^m`, `m >= 0`, capped at the period.
fn maximal_at(sat: &Sat, dims: &[usize], center: &[usize], l_step: &[usize]) -> f64 {
    let d = dims.len();
    let mut best = 0.0f64;
    let mut m = 0u32;
    loop {
        let mut lo = vec![0i64; d];
        let mut len = vec![0usize; d];
        let mut fits = true;
        for a in 0..d {
            let w = l_step[a] << m;
            if w > dims[a] {
                fits = false;
                break;
            }
            lo[a] = center[a] as i64 - (w / 2) as i64;
            len[a] = w;
        }
        if !fits {
            break;
        }
        let vol: usize = len.iter().product();
        let avg = periodic_box_sum(sat, dims, &lo, &len) / vol as f64;
        best = best.max(avg);
        m += 1;
    }
    best
}

/// `acc += window shifted by `shift` (periodically)`.
fn accumulate_shifted(acc: &mut [f64], window: &[f64], dims: &[usize], shift: &[usize]) {
    let d = dims.len();
    let mut idx = vec![0usize; d];
    for (flat, a) in acc.iter_mut().enumerate() {
        let mut rem = flat;
        for ax in (0..d).rev() {
            idx[ax] = rem % dims[ax];
            rem /= dims[ax];
        }
        let mut src = 0usize;
        for ax in 0..d {
            let j = (idx[ax] + dims[ax] - shift[ax]) % dims[ax];
            src = src * dims[ax] + j;
        }
        *a += window[src];
    }
}

impl WavePacketDecomposition {
    pub fn surface(&self) -> &Surface {
        &self.surface
    }

    pub fn input(&self) -> &GridFunction {
        &self.f
    }

    /// The band-pass part of `f` for one frequency cell (exact sharp-cell
    /// restriction).
    fn cell_spectrum(&self, nu: &[f64]) -> Vec<C64> {
        let sqrt_r = self.r.sqrt();
        let key: Vec<i64> = nu.iter().map(|&x| (x * sqrt_r).round() as i64).collect();
        let mut spec = vec![C64::new(0.0, 0.0); self.f.len()];
        let mut node = vec![0.0; self.f.dim()];
        for idx in 0..self.f.len() {
            if self.f.values()[idx] == C64::new(0.0, 0.0) {
                continue;
            }
            self.f.node_at(idx, &mut node);
            if node.iter().zip(&key).all(|(&x, &ki)| node_nu_index(x, sqrt_r) == ki) {
                spec[idx] = self.f.values()[idx];
            }
        }
        spec
    }

    /// The piece `f_{l,nu}` of one packet on the input grid.
    pub fn piece(&self, packet: usize) -> GridFunction {
        let p = &self.packets[packet];
        let spec = self.cell_spectrum(&p.nu);
        let g = self.dual.to_x(&spec);
        let mut wsum = vec![0.0f64; self.dual.len()];
        accumulate_shifted(&mut wsum, &self.window, &self.dual.n, &self.l_indices[packet]);
        let windowed: Vec<C64> = g.iter().zip(&wsum).map(|(v, w)| v * *w).collect();
        let vals = self.dual.to_freq(&windowed);
        let mut out = self.f.clone();
        out.values_mut().copy_from_slice(&vals);
        out
    }

    /// Sum of the pieces of a packet subset (all kept packets if `None`),
    /// grouped per frequency cell: one transform pair per cell.
    pub fn sum_pieces(&self, subset: Option<&[usize]>) -> Result<GridFunction, WavePacketError> {
        let indices: Vec<usize> = match subset {
            Some(s) => s.to_vec(),
            None => (0..self.packets.len()).collect(),
        };
        for &i in &indices {
            if self.packets[i].decomp_id != self.id {
                return Err(WavePacketError::MixedDecompositions);
            }
        }
        let mut by_cell: std::collections::BTreeMap<Vec<i64>, Vec<usize>> = Default::default();
        let sqrt_r = self.r.sqrt();
        for &i in &indices {
            let key: Vec<i64> =
                self.packets[i].nu.iter().map(|&x| (x * sqrt_r).round() as i64).collect();
            by_cell.entry(key).or_default().push(i);
        }
        let mut acc = vec![C64::new(0.0, 0.0); self.f.len()];
        let parts: Vec<Vec<C64>> = by_cell
            .par_iter()
            .map(|(_, ids)| {
                let spec = self.cell_spectrum(&self.packets[ids[0]].nu);
                let lidxs: Vec<Vec<usize>> =
                    ids.iter().map(|&i| self.l_indices[i].clone()).collect();
                sum_cell_pieces(&self.dual, &self.window, spec, &lidxs, self.l_total)
            })
            .collect();
        for part in parts {
            for (a, v) in acc.iter_mut().zip(part) {
                *a += v;
            }
        }
        let mut out = self.f.clone();
        out.values_mut().copy_from_slice(&acc);
        Ok(out)
    }

    /// Reconstruction `sum of c P = E(sum of pieces)` at arbitrary
    /// space-time points.
    pub fn reconstruct(
        &self,
        subset: Option<&[usize]>,
        pts: &[Vec<f64>],
    ) -> Result<Vec<C64>, WavePacketError> {
        let summed = self.sum_pieces(subset)?;
        Ok(crate::extension::extend(&self.surface, &summed, pts))
    }

    /// Normalized profile values `P = c^{-1} E f_{l,nu}` at points.
    pub fn profile(&self, packet: usize, pts: &[Vec<f64>]) -> Vec<C64> {
        let piece = self.piece(packet);
        let c = self.packets[packet].coeff;
        crate::extension::extend(&self.surface, &piece, pts)
            .into_iter()
            .map(|v| v / c)
            .collect()
    }

    /// `|| sum over the subset of P(., t) ||_2^2` over one dual period.
    /// In the discrete model the slice norm equals the frequency-side norm
    /// of the summed normalized pieces (the `t`-phase has modulus one), so
    /// the value is `t`-independent; `|t| <= R` is still enforced for
    /// continuum fidelity.
    pub fn profile_sum_norm_sq(
        &self,
        subset: &[usize],
        t: &[f64],
    ) -> Result<f64, WavePacketError> {
        if t.iter().map(|v| v.abs()).fold(0.0f64, f64::max) > self.r {
            return Err(WavePacketError::OutsideLemmaRange(format!(
                "|t| exceeds R = {}",
                self.r
            )));
        }
        if subset.is_empty() {
            return Ok(0.0);
        }
        let mut by_cell: std::collections::BTreeMap<Vec<i64>, Vec<usize>> = Default::default();
        let sqrt_r = self.r.sqrt();
        for &i in subset {
            if self.packets[i].decomp_id != self.id {
                return Err(WavePacketError::MixedDecompositions);
            }
            let key: Vec<i64> =
                self.packets[i].nu.iter().map(|&x| (x * sqrt_r).round() as i64).collect();
            by_cell.entry(key).or_default().push(i);
        }
        let mut acc = vec![C64::new(0.0, 0.0); self.f.len()];
        for (_, ids) in by_cell {
            let spec = self.cell_spectrum(&self.packets[ids[0]].nu);
            let g = self.dual.to_x(&spec);
            for &i in ids.iter() {
                let mut wsum = vec![0.0f64; self.dual.len()];
                accumulate_shifted(&mut wsum, &self.window, &self.dual.n, &self.l_indices[i]);
                let windowed: Vec<C64> = g.iter().zip(&wsum).map(|(v, w)| v * *w).collect();
                let piece = self.dual.to_freq(&windowed);
                let c = self.packets[i].coeff;
                for (a, v) in acc.iter_mut().zip(piece) {
                    *a += v / c;
                }
            }
        }
        Ok(acc.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.f.cell_volume())
    }

    /// Energy fraction of the Fourier support of a piece outside the ball
    /// `D(nu, radius)`; the exact support keeps this at rounding level.
    /// Distances are taken on the frequency torus (the dual transform is
    /// periodic in `xi` with period equal to the box side), so cells at
    /// the box edge are handled correctly.
    pub fn support_leak(&self, packet: usize, radius: f64) -> f64 {
        let piece = self.piece(packet);
        let nu = &self.packets[packet].nu;
        let sides = piece.support().sides.clone();
        let mut inside = 0.0f64;
        let mut outside = 0.0f64;
        let mut node = vec![0.0; piece.dim()];
        for idx in 0..piece.len() {
            piece.node_at(idx, &mut node);
            let dist: f64 = node
                .iter()
                .zip(nu)
                .zip(&sides)
                .map(|((a, b), s)| {
                    let mut v = a - b;
                    v -= s * (v / s).round();
                    v * v
                })
                .sum::<f64>()
                .sqrt();
            let e = piece.values()[idx].norm_sqr();
            if dist <= radius {
                inside += e;
            } else {
                outside += e;
            }
        }
        outside / (inside + outside).max(1e-300)
    }

    /// Tube distance `|x - l + sum_j t_j grad phi_j(nu)|` of a space-time
    /// point, reduced per axis to the periodic torus.
    pub fn tube_distance(&self, packet: usize, pt: &[f64]) -> f64 {
        let d = self.f.dim();
        let p = &self.packets[packet];
        let (x, t) = pt.split_at(d);
        let g = self.surface.grad(&p.nu);
        let drift = g.transpose() * nalgebra::DVector::from_column_slice(t);
        (0..d)
            .map(|a| {
                let mut v = x[a] - p.l[a] + drift[a];
                let per = self.period[a];
                v -= per * (v / per).round();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// A profile decay measurement: per-band medians plus the fitted tail
/// exponent of `|P|` against `1 + R^{-1/2} (tube distance)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayReport {
    /// `(band median scaled distance, median |P|, samples)` per band.
    pub bands: Vec<(f64, f64, usize)>,
    /// Least-squares slope of `log |P|` against `log(1 + R^{-1/2} dist)`
    /// over the tail region (scaled distance >= 4); the decay order `N`
    /// is the negated slope.
    pub tail_exponent: f64,
    /// Median `|P| R^{d/4}` over the core band (scaled distance < 2).
    pub core_magnitude_scaled: f64,
}

/// Measures the profile decay of one packet at the given points (all with
/// `|t| <= R`), stratified by dyadic bands of the scaled tube distance.
pub fn decay_profile(
    decomp: &WavePacketDecomposition,
    packet: usize,
    pts: &[Vec<f64>],
) -> Result<DecayReport, WavePacketError> {
    let d = decomp.input().dim();
    for pt in pts {
        let t = &pt[d..];
        if t.iter().map(|v| v.abs()).fold(0.0f64, f64::max) > decomp.r {
            return Err(WavePacketError::OutsideLemmaRange(format!(
                "|t| exceeds R = {}",
                decomp.r
            )));
        }
    }
    let vals = decomp.profile(packet, pts);
    let sqrt_r = decomp.r.sqrt();
    let mut bands: Vec<Vec<(f64, f64)>> = vec![Vec::new(); 12];
    for (pt, v) in pts.iter().zip(&vals) {
        let u = 1.0 + decomp.tube_distance(packet, pt) / sqrt_r;
        let band = (u.log2().floor() as usize).min(bands.len() - 1);
        bands[band].push((u, v.norm()));
    }
    let mut summary = Vec::new();
    for b in &mut bands {
        if b.is_empty() {
            continue;
        }
        b.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap());
        let (u_mid, med) = b[b.len() / 2];
        summary.push((u_mid, med, b.len()));
    }
    if summary.len() < 3 {
        return Err(WavePacketError::InsufficientStrata { bands: summary.len() });
    }
    let tail: Vec<(f64, f64)> =
        summary.iter().filter(|(u, _, _)| *u >= 4.0).map(|(u, m, _)| (*u, *m)).collect();
    if tail.len() < 2 {
        return Err(WavePacketError::InsufficientStrata { bands: summary.len() });
    }
    let xs: Vec<f64> = tail.iter().map(|(u, _)| *u).collect();
    let ys: Vec<f64> = tail.iter().map(|(_, m)| m.max(1e-300)).collect();
    let fit = crate::linalg::log_log_fit(&xs, &ys);
    let core: Vec<f64> =
        summary.iter().filter(|(u, _, _)| *u < 2.0).map(|(_, m, _)| *m).collect();
    let core_med = if core.is_empty() { f64::NAN } else { core[core.len() / 2] };
    Ok(DecayReport {
        bands: summary,
        tail_exponent: fit.slope,
        core_magnitude_scaled: core_med * decomp.r.powf(d as f64 / 4.0),
    })
}

/// Serializes packets as JSON lines `{"l": [...], "nu": [...], "c": [re, im]}`.
pub fn write_packets_jsonl<W: std::io::Write>(
    decomp: &WavePacketDecomposition,
    mut w: W,
) -> std::io::Result<()> {
    for p in &decomp.packets {
        let line = serde_json::json!({
            "l": p.l,
            "nu": p.nu,
            "c": [p.coeff, 0.0],
        });
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extension::extend;
    use crate::linalg::BoxND;
    use crate::surfaces::{named_surface, NamedParams};
    use rand::{Rng, SeedableRng};

    fn paraboloid(d: usize) -> Surface {
        named_surface("paraboloid", &NamedParams { d: Some(d), ..Default::default() }).unwrap()
    }

    fn random_f(n: usize, seed: u64) -> GridFunction {
        GridFunction::random(BoxND::cube(&[0.0, 0.0], 2.0), vec![n, n], seed)
    }

    #[test]
    fn transform_pair_round_trips() {
        let f = random_f(32, 42);
        let dual = DualGrid::new(&f);
        let g = dual.to_x(f.values());
        let back = dual.to_freq(&g);
        let scale = f.values().iter().map(|v| v.norm()).fold(0.0f64, f64::max);
        for (a, b) in back.iter().zip(f.values()) {
            assert!((a - b).norm() <= 1e-12 * scale);
        }
        // to_x really is the midpoint sum at a lattice point
        let m = (5usize, 9usize);
        let x = [m.0 as f64 * dual.dx(0), m.1 as f64 * dual.dx(1)];
        let mut acc = C64::new(0.0, 0.0);
        for idx in 0..f.len() {
            let node = f.node(idx);
            let th = TAU * (x[0] * node[0] + x[1] * node[1]);
            acc += f.values()[idx] * C64::new(th.cos(), th.sin());
        }
        acc *= f.cell_volume();
        let got = g[m.0 * 32 + m.1];
        assert!((acc - got).norm() <= 1e-10 * acc.norm().max(1.0));
    }

    #[test]
    fn preconditions_are_enforced() {
        let s = paraboloid(2);
        let f = random_f(64, 1);
        assert!(matches!(decompose(&s, &f, 8.0), Err(WavePacketError::GridTooCoarse(_))));
        // n = 64 < 8 * 2 * sqrt(64)
        assert!(matches!(decompose(&s, &f, 64.0), Err(WavePacketError::GridTooCoarse(_))));
    }

    #[test]
    fn pieces_telescope_back_to_f() {
        let s = paraboloid(2);
        let f = random_f(128, 2);
        let dec = decompose(&s, &f, 16.0).unwrap();
        assert!(dec.kernels.partition_residual < 1e-9);
        assert_eq!(dec.kernels.eps_psi, 0.0);
        assert!(dec.kernels.min_psi < 0.0, "window has small negative parts");
        let sum = dec.sum_pieces(None).unwrap();
        let err: f64 = (sum
            .values()
            .iter()
            .zip(f.values())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            * sum.cell_volume())
        .sqrt();
        let rel = err / f.l2_norm();
        assert!(rel < 1e-8, "telescoping residual {rel:.3e}");
    }

    #[test]
    fn reconstruction_matches_direct_extension() {
        let s = paraboloid(2);
        let f = random_f(128, 3);
        let r = 64.0;
        let dec = decompose(&s, &f, r).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec<f64>> = (0..50)
            .map(|_| {
                vec![
                    rng.gen_range(-r / 2.0..r / 2.0),
                    rng.gen_range(-r / 2.0..r / 2.0),
                    rng.gen_range(-r..r),
                ]
            })
            .collect();
        let recon = dec.reconstruct(None, &pts).unwrap();
        let direct = extend(&s, &f, &pts);
        let scale = direct.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
        for (a, b) in recon.iter().zip(&direct) {
            assert!(
                (a - b).norm() <= 1e-6 * scale + dec.pruned_l1_bound,
                "reconstruction off: {a} vs {b}"
            );
        }
        // zero input: no packets at all
        let zero = GridFunction::zeros(BoxND::cube(&[0.0, 0.0], 2.0), vec![128, 128]);
        let dz = decompose(&s, &zero, r).unwrap();
        assert!(dz.packets.is_empty());
        assert_eq!(dz.pruned_l1_bound, 0.0);
    }

    #[test]
    fn coefficient_l2_bound() {
        let s = paraboloid(2);
        let mut worst: f64 = 0.0;
        for seed in 0..20 {
            let f = random_f(128, 100 + seed);
            let dec = decompose(&s, &f, 16.0).unwrap();
            let csum: f64 = dec.packets.iter().map(|p| p.coeff * p.coeff).sum();
            let c = csum.sqrt() / f.l2_norm();
            worst = worst.max(c);
        }
        assert!(worst <= 4.0, "coefficient constant {worst} exceeds 4");
    }

    #[test]
    fn frequency_support_is_local() {
        let s = paraboloid(2);
        let f = random_f(128, 7);
        let r = 64.0;
        let dec = decompose(&s, &f, r).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let i = rng.gen_range(0..dec.packets.len());
            let leak = dec.support_leak(i, 4.0 / r.sqrt());
            assert!(leak <= 1e-9, "support leak {leak:.3e}");
        }
    }

    #[test]
    fn dominant_packet_for_a_modulated_bump() {
        // f concentrated in one frequency cell and spatially near one
        // lattice point: the packet at that (l, nu) dominates. The
        // uncertainty principle (cell-wide frequency support forces a
        // spatial spread ~ sqrt(R)) and the fat tail of the dyadic maximal
        // majorant keep the neighbors alive, so dominance is a share plus
        // a ratio to the runner-up, both recorded here.
        let s = paraboloid(2);
        let n = 128usize;
        let r = 64.0f64;
        let sqrt_r = r.sqrt();
        let nu_star = [0.25, -0.25]; // = (2, -2) / sqrt(R)
        let l_star = [8.0, -8.0]; // on the sqrt(R) lattice
        let sigma_f = 1.0 / (5.0 * sqrt_r);
        let f = GridFunction::from_fn(BoxND::cube(&[0.0, 0.0], 2.0), vec![n, n], |x| {
            let r2: f64 = x
                .iter()
                .zip(&nu_star)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / (sigma_f * sigma_f);
            let amp = (-0.5 * r2).exp();
            if amp < 1e-14 {
                return C64::new(0.0, 0.0);
            }
            let phase: f64 = -TAU * (x[0] * l_star[0] + x[1] * l_star[1]);
            amp * C64::new(phase.cos(), phase.sin())
        });
        let dec = decompose(&s, &f, r).unwrap();
        let mut mass: Vec<(f64, &WavePacket)> =
            dec.packets.iter().map(|p| (p.coeff * p.coeff, p)).collect();
        mass.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let total: f64 = mass.iter().map(|(m, _)| m).sum();
        let top = &mass[0];
        assert!(
            top.1.nu.iter().zip(&nu_star).all(|(a, b)| (a - b).abs() < 1e-9),
            "dominant packet sits at nu = {:?}",
            top.1.nu
        );
        assert!(
            top.1.l.iter().zip(&l_star).all(|(a, b)| (a - b).abs() < 1e-9),
            "dominant packet sits at l = {:?}",
            top.1.l
        );
        assert!(top.0 / total > 0.25, "dominant share {}", top.0 / total);
        assert!(top.0 / mass[1].0 > 3.0, "dominance ratio {}", top.0 / mass[1].0);
    }

    #[test]
    fn coefficients_covariant_under_lattice_modulation() {
        let s = paraboloid(2);
        let f = random_f(128, 11);
        let r = 64.0;
        let dec = decompose(&s, &f, r).unwrap();
        let fm = f.modulated(&[r.sqrt(), 0.0]);
        let dec_m = decompose(&s, &fm, r).unwrap();
        use std::collections::HashMap;
        let lattice_count = (dec.period[0] / r.sqrt()).round() as i64;
        let key = |p: &WavePacket| -> (Vec<i64>, Vec<i64>) {
            (
                p.nu.iter().map(|v| (v * r.sqrt()).round() as i64).collect(),
                p.l
                    .iter()
                    .map(|v| ((v / r.sqrt()).round() as i64).rem_euclid(lattice_count))
                    .collect(),
            )
        };
        let base: HashMap<_, f64> = dec.packets.iter().map(|p| (key(p), p.coeff)).collect();
        let mut checked = 0usize;
        for p in &dec_m.packets {
            // modulation by e^{-2 pi i sqrt(R) xi_1} moves mass to l + sqrt(R) e_1
            let (nu_k, mut l_k) = key(p);
            l_k[0] = (l_k[0] - 1).rem_euclid(lattice_count);
            if let Some(c0) = base.get(&(nu_k, l_k)) {
                assert!(
                    (p.coeff - c0).abs() <= 1e-6 * c0.max(1e-12),
                    "coefficient moved: {} vs {}",
                    p.coeff,
                    c0
                );
                checked += 1;
            }
        }
        assert!(checked > dec.packets.len() / 2);
    }

    #[test]
    fn orthogonality_single_and_disjoint() {
        let s = paraboloid(2);
        let f = random_f(128, 13);
        let r = 64.0;
        let dec = decompose(&s, &f, r).unwrap();
        assert_eq!(dec.profile_sum_norm_sq(&[], &[0.0]).unwrap(), 0.0);
        // single packet: O(1) normalization
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let i = rng.gen_range(0..dec.packets.len());
            let v = dec.profile_sum_norm_sq(&[i], &[0.3 * r]).unwrap();
            assert!(v > 1.0 / 64.0 && v < 64.0, "single-packet norm^2 = {v}");
        }
        // distinct-nu subsets: near additivity
        for trial in 0..10usize {
            let mut seen = std::collections::HashSet::new();
            let mut subset = Vec::new();
            for (i, p) in dec.packets.iter().enumerate() {
                let key: Vec<i64> =
                    p.nu.iter().map(|v| (v * r.sqrt()).round() as i64).collect();
                if p.coeff > 1e-6 && (i + trial) % 3 == 0 && seen.insert(key) {
                    subset.push(i);
                }
                if subset.len() >= 40 {
                    break;
                }
            }
            let v = dec.profile_sum_norm_sq(&subset, &[0.5 * r]).unwrap();
            let ratio = v / subset.len() as f64;
            assert!(
                (0.125..8.0).contains(&ratio),
                "orthogonality ratio {ratio} for {} packets",
                subset.len()
            );
        }
        // t beyond R refuses
        assert!(matches!(
            dec.profile_sum_norm_sq(&[0], &[2.0 * r]),
            Err(WavePacketError::OutsideLemmaRange(_))
        ));
    }

    #[test]
    fn profile_decays_along_tube_distance() {
        // n = 256 makes the dual period 128, so tube distances up to
        // ~11 sqrt(R) fit before the torus folds them back
        let s = paraboloid(2);
        let f = random_f(256, 19);
        let r = 64.0;
        let dec = decompose(&s, &f, r).unwrap();
        let best = dec
            .packets
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.coeff.partial_cmp(&b.1.coeff).unwrap())
            .unwrap()
            .0;
        let p = dec.packets[best].clone();
        let g = s.grad(&p.nu);
        let mut pts = Vec::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..600 {
            let t = rng.gen_range(-0.5 * r..0.5 * r);
            let drift = g.transpose() * nalgebra::DVector::from_column_slice(&[t]);
            let rad = rng.gen_range(0.0..11.0) * r.sqrt();
            let ang = rng.gen_range(0.0..TAU);
            pts.push(vec![
                p.l[0] - drift[0] + rad * ang.cos(),
                p.l[1] - drift[1] + rad * ang.sin(),
                t,
            ]);
        }
        let rep = decay_profile(&dec, best, &pts).unwrap();
        assert!(
            rep.tail_exponent <= -2.0,
            "tail exponent {} too weak (bands {:?})",
            rep.tail_exponent,
            rep.bands
        );
        assert!(
            rep.core_magnitude_scaled > 0.05 && rep.core_magnitude_scaled < 20.0,
            "scaled core magnitude {}",
            rep.core_magnitude_scaled
        );
        // magnitude at distance ~ 10 sqrt(R) sits far below the core
        let core = rep.bands.first().unwrap().1;
        let far = rep
            .bands
            .iter()
            .filter(|(u, _, _)| *u >= 8.0)
            .map(|(_, m, _)| *m)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(far < core / 50.0, "far/core = {}", far / core);
        let bad = vec![vec![0.0, 0.0, 2.0 * r]];
        assert!(matches!(
            decay_profile(&dec, best, &bad),
            Err(WavePacketError::OutsideLemmaRange(_))
        ));
    }

    #[test]
    fn jsonl_dump_shape() {
        let s = paraboloid(2);
        let f = random_f(128, 29);
        let dec = decompose(&s, &f, 16.0).unwrap();
        let mut buf = Vec::new();
        write_packets_jsonl(&dec, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().next().unwrap();
        let v: serde_json::Value = serde_json::from_str(first).unwrap();
        assert!(v["l"].is_array() && v["nu"].is_array());
        assert_eq!(v["c"].as_array().unwrap().len(), 2);
        assert_eq!(text.lines().count(), dec.packets.len());
    }
}
