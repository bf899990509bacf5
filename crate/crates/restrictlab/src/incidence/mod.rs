//! Tube/cube incidence combinatorics: cube covers of `Q_R` at the
//! `R^{1/2}` and `R^{1-delta}` scales, dyadic load classes, the spread
//! counts, the anchor-cube relation and its counting bounds.
//!
//! Tube-cube incidence is decided analytically (distance from the cube
//! center to the tube core against `R^{1/2+delta}` plus the cube
//! diameter), never by sampling; the double-counting identities downstream
//! require one exact predicate used everywhere.

pub mod whitney;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Tube;
use crate::surfaces::Surface;

#[derive(Debug, Error, PartialEq)]
pub enum IncidenceError {
    #[error("scale mismatch: {0}")]
    ScaleMismatch(String),
}

/// Almost-disjoint axis-parallel cube cover of a cube `Q_R` in `R^{dim}`.
///
/// Cells per axis are chosen so the actual side stays within a factor 2 of
/// the nominal scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CubeGrid {
    pub center: Vec<f64>,
    pub side: f64,
    /// Nominal cell scale the grid was built for.
    pub nominal: f64,
    pub cells_per_axis: usize,
    pub cell_side: f64,
}

impl CubeGrid {
    pub fn new(center: &[f64], side: f64, nominal: f64) -> Self {
        assert!(side > 0.0 && nominal > 0.0);
        let cells_per_axis = (side / nominal).round().max(1.0) as usize;
        let cell_side = side / cells_per_axis as f64;
        assert!(
            cell_side >= nominal / 2.0 && cell_side <= nominal * 2.0,
            "cell side {cell_side} strays from nominal {nominal}"
        );
        CubeGrid { center: center.to_vec(), side, nominal, cells_per_axis, cell_side }
    }

    /// Cover at the small scale `R^{1/2}`.
    pub fn q_scale(center: &[f64], r: f64) -> Self {
        Self::new(center, r, r.sqrt())
    }

    /// Cover at the big scale `R^{1-delta}`.
    pub fn b_scale(center: &[f64], r: f64, delta: f64) -> Self {
        Self::new(center, r, r.powf(1.0 - delta))
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn len(&self) -> usize {
        self.cells_per_axis.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_center(&self, flat: usize) -> Vec<f64> {
        let mut rem = flat;
        let mut c = vec![0.0; self.dim()];
        for a in (0..self.dim()).rev() {
            let i = rem % self.cells_per_axis;
            rem /= self.cells_per_axis;
            c[a] = self.center[a] - self.side / 2.0 + (i as f64 + 0.5) * self.cell_side;
        }
        c
    }

    /// Euclidean distance between two closed cells.
    pub fn cell_distance(&self, a: usize, b: usize) -> f64 {
        let ca = self.cell_center(a);
        let cb = self.cell_center(b);
        ca.iter()
            .zip(&cb)
            .map(|(x, y)| ((x - y).abs() - self.cell_side).max(0.0).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Closed-cube intersection test between a cell of this grid and a
    /// cell of another grid, the second dilated by `dilation` about its
    /// center.
    pub fn cell_meets(&self, flat: usize, other: &CubeGrid, other_flat: usize, dilation: f64) -> bool {
        let a = self.cell_center(flat);
        let b = other.cell_center(other_flat);
        let ra = self.cell_side / 2.0;
        let rb = other.cell_side * dilation / 2.0;
        a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= ra + rb + 1e-12)
    }
}

/// Incidence of one tube family against a cube grid plus the dyadic
/// bookkeeping for two families.
#[derive(Debug, Clone)]
pub struct IncidenceTable {
    pub grid: CubeGrid,
    pub r: f64,
    pub delta: f64,
    /// Per cube: indices of family-1 tubes meeting its thickened version.
    pub hits1: Vec<Vec<u32>>,
    pub hits2: Vec<Vec<u32>>,
    /// Dyadic load classes: `(rho1, rho2) -> cube ids` with
    /// `rho_j <= #hits_j < 2 rho_j` and both counts nonzero.
    pub classes: BTreeMap<(u64, u64), Vec<u32>>,
    /// Per class and family: the spread `lambda(omega)` of every tube
    /// (how many class cubes it meets).
    pub spread: BTreeMap<(u64, u64), [Vec<u32>; 2]>,
    n1: usize,
    n2: usize,
}

fn dyadic_floor(n: usize) -> u64 {
    debug_assert!(n >= 1);
    let mut p = 1u64;
    while p * 2 <= n as u64 {
        p *= 2;
    }
    p
}

/// Analytic tube-cube incidence: the cube center must lie within
/// `R^{1/2+delta}` plus the cube diameter of the tube core.
pub fn tube_meets_cube(s: &Surface, tube: &Tube, grid: &CubeGrid, flat: usize, delta: f64) -> bool {
    let center = grid.cell_center(flat);
    let diam = grid.cell_side * (grid.dim() as f64).sqrt();
    tube.core_distance(s, &center) <= tube.r.powf(0.5 + delta) + diam
}

/// Builds the incidence table of two packet families against a `q`-scale
/// grid; all tubes must share one scale `R`, and the grid must cover
/// `Q_R` at the `R^{1/2}` scale.
pub fn build_incidence(
    s: &Surface,
    packets1: &[Tube],
    packets2: &[Tube],
    grid: &CubeGrid,
    delta: f64,
) -> Result<IncidenceTable, IncidenceError> {
    let mut r = None;
    for t in packets1.iter().chain(packets2) {
        match r {
            None => r = Some(t.r),
            Some(rr) if (rr - t.r).abs() > 1e-9 => {
                return Err(IncidenceError::ScaleMismatch(format!(
                    "packets carry scales {rr} and {}",
                    t.r
                )));
            }
            _ => {}
        }
    }
    let r = r.ok_or_else(|| IncidenceError::ScaleMismatch("no packets given".into()))?;
    if grid.nominal > 2.0 * r.sqrt() || grid.nominal < r.sqrt() / 2.0 {
        return Err(IncidenceError::ScaleMismatch(format!(
            "grid nominal {} is not the q-scale {}",
            grid.nominal,
            r.sqrt()
        )));
    }

    let mut hits1 = vec![Vec::new(); grid.len()];
    let mut hits2 = vec![Vec::new(); grid.len()];
    for q in 0..grid.len() {
        for (i, t) in packets1.iter().enumerate() {
            if tube_meets_cube(s, t, grid, q, delta) {
                hits1[q].push(i as u32);
            }
        }
        for (i, t) in packets2.iter().enumerate() {
            if tube_meets_cube(s, t, grid, q, delta) {
                hits2[q].push(i as u32);
            }
        }
    }

    let mut classes: BTreeMap<(u64, u64), Vec<u32>> = BTreeMap::new();
    for q in 0..grid.len() {
        if !hits1[q].is_empty() && !hits2[q].is_empty() {
            let key = (dyadic_floor(hits1[q].len()), dyadic_floor(hits2[q].len()));
            classes.entry(key).or_default().push(q as u32);
        }
    }

    let mut spread = BTreeMap::new();
    for (key, cubes) in &classes {
        let mut s1 = vec![0u32; packets1.len()];
        let mut s2 = vec![0u32; packets2.len()];
        for &q in cubes {
            for &w in &hits1[q as usize] {
                s1[w as usize] += 1;
            }
            for &w in &hits2[q as usize] {
                s2[w as usize] += 1;
            }
        }
        spread.insert(*key, [s1, s2]);
    }

    Ok(IncidenceTable {
        grid: grid.clone(),
        r,
        delta,
        hits1,
        hits2,
        classes,
        spread,
        n1: packets1.len(),
        n2: packets2.len(),
    })
}

impl IncidenceTable {
    pub fn packet_count(&self, family: usize) -> usize {
        if family == 0 {
            self.n1
        } else {
            self.n2
        }
    }

    fn hits(&self, family: usize) -> &Vec<Vec<u32>> {
        if family == 0 {
            &self.hits1
        } else {
            &self.hits2
        }
    }

    /// Tubes of a family whose spread in the class falls in the dyadic
    /// bracket `[lambda, 2 lambda)`.
    pub fn spread_class(&self, class: (u64, u64), family: usize, lambda: u64) -> Vec<u32> {
        match self.spread.get(&class) {
            None => vec![],
            Some(per_family) => per_family[family]
                .iter()
                .enumerate()
                .filter(|(_, &l)| l >= 1 && dyadic_floor(l as usize) == lambda)
                .map(|(i, _)| i as u32)
                .collect(),
        }
    }

    /// The anchor cube `B` of a tube for one load class: the `B`-cell
    /// maximizing the number of class cubes the tube meets that also meet
    /// `B`. Ties break to the lexicographically smallest cell center.
    pub fn anchor_cube(
        &self,
        s: &Surface,
        tube: &Tube,
        class: (u64, u64),
        b_grid: &CubeGrid,
    ) -> usize {
        let cubes = self.classes.get(&class).cloned().unwrap_or_default();
        let hit_cubes: Vec<u32> = cubes
            .into_iter()
            .filter(|&q| tube_meets_cube(s, tube, &self.grid, q as usize, self.delta))
            .collect();
        let mut best = 0usize;
        let mut best_count = usize::MAX;
        for b in 0..b_grid.len() {
            let count = hit_cubes
                .iter()
                .filter(|&&q| self.grid.cell_meets(q as usize, b_grid, b, 1.0))
                .count();
            if best_count == usize::MAX || count > best_count {
                best = b;
                best_count = count;
            }
        }
        best
    }

    /// The relation: `B` relates to the tube iff `B` meets the 10-fold
    /// dilation of the anchor cube (closed-set convention).
    pub fn relates(&self, b_grid: &CubeGrid, b: usize, anchor: usize) -> bool {
        b_grid.cell_meets(b, b_grid, anchor, 10.0)
    }
}

/// Counting-bound report for the anchor relation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CountingReport {
    /// `max over tubes of #{B : tube ~ B}` (worst class).
    pub max_relations_per_tube: usize,
    /// `max over classes of (sum_B #{tube ~ B}) / #tubes`.
    pub sum_ratio: f64,
    /// Geometric gate `30^{dim}` from the 10-fold dilation.
    pub gate: f64,
    pub pass: bool,
}

/// Evaluates both counting bounds for one family over all load classes.
pub fn counting_bounds(
    s: &Surface,
    table: &IncidenceTable,
    packets: &[Tube],
    family: usize,
    b_grid: &CubeGrid,
) -> CountingReport {
    let dim = table.grid.dim();
    let gate = 30f64.powi(dim as i32);
    let mut max_rel = 0usize;
    let mut sum_ratio: f64 = 0.0;
    for class in table.classes.keys() {
        let mut total = 0usize;
        let mut any = false;
        for (i, tube) in packets.iter().enumerate() {
            // only tubes with nonzero spread in the class participate
            let lam = table.spread[class][family][i];
            if lam == 0 {
                continue;
            }
            any = true;
            let anchor = table.anchor_cube(s, tube, *class, b_grid);
            let rel = (0..b_grid.len())
                .filter(|&b| table.relates(b_grid, b, anchor))
                .count();
            max_rel = max_rel.max(rel);
            total += rel;
        }
        if any && !packets.is_empty() {
            sum_ratio = sum_ratio.max(total as f64 / packets.len() as f64);
        }
    }
    CountingReport {
        max_relations_per_tube: max_rel,
        sum_ratio,
        gate,
        pass: (max_rel as f64) <= gate && sum_ratio <= gate,
    }
}

/// `#{tubes of the family meeting both thickened cubes}`; used to verify
/// the distant-cube bound with the injectivity margin.
pub fn tubes_meeting_both(
    table: &IncidenceTable,
    family: usize,
    q: usize,
    q_far: usize,
) -> usize {
    let hits = table.hits(family);
    hits[q].iter().filter(|w| hits[q_far].contains(w)).count()
}
