//! Small dense-matrix helpers, axis-parallel boxes, sphere grids and
//! log-log fitting shared by the other modules.

use nalgebra::{DMatrix, DVector};

pub type C64 = num_complex::Complex<f64>;

/// Determinant with the `0x0 => 1` convention.
///
/// The empty case shows up when a surface has full codimension (`d == k`):
/// the transverse block is then vacuous and must count as nondegenerate.
pub fn det(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    m.determinant()
}

/// Product of row euclidean norms (Hadamard bound scale). Zero rows give 0.
pub fn hadamard_scale(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows()).map(|i| m.row(i).norm()).product()
}

/// Scale-free determinant: `det(m) / hadamard_scale(m)`, in `[-1, 1]`.
///
/// Used when a zero/nonzero classification must not depend on the overall
/// size of the matrix entries.
pub fn normalized_det(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let s = hadamard_scale(m);
    if s == 0.0 {
        0.0
    } else {
        det(m) / s
    }
}

/// Smallest singular value; 0 for matrices with an empty dimension.
pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().singular_values().iter().cloned().fold(f64::INFINITY, f64::min)
}

fn project_off(v: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for b in basis {
        let c = v.dot(b);
        v.axpy(-c, b, 1.0);
    }
}

/// Orthonormalizes the rows of `m` by Gram-Schmidt, dropping rows whose
/// residual falls below `tol` times their original norm.
pub fn orthonormal_rows(m: &DMatrix<f64>, tol: f64) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for i in 0..m.nrows() {
        let mut v: DVector<f64> = m.row(i).transpose();
        let n0 = v.norm();
        project_off(&mut v, &basis);
        // re-orthogonalize once for numerical hygiene
        project_off(&mut v, &basis);
        let n = v.norm();
        if n > tol * n0.max(1.0) {
            basis.push(v / n);
        }
    }
    basis
}

/// Deterministic orthonormal basis of the orthogonal complement of the row
/// space of `rows` (an `r x d` matrix), as a `(d - rank) x d` matrix.
///
/// Candidates are the coordinate vectors; at each step the candidate with
/// the largest residual after projection is taken (column-pivoted order),
/// so identical inputs produce identical bases.
pub fn orthonormal_complement(rows: &DMatrix<f64>) -> DMatrix<f64> {
    let d = rows.ncols();
    let row_basis = orthonormal_rows(rows, 1e-12);
    let mut chosen: Vec<DVector<f64>> = Vec::new();
    let target = d - row_basis.len();
    let mut residuals: Vec<DVector<f64>> = (0..d)
        .map(|i| {
            let mut e = DVector::zeros(d);
            e[i] = 1.0;
            project_off(&mut e, &row_basis);
            e
        })
        .collect();
    while chosen.len() < target {
        let (best, norm) = residuals
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v.norm()))
            .fold((usize::MAX, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if norm <= 1e-12 {
            break;
        }
        let b = residuals[best].clone() / norm;
        for v in residuals.iter_mut() {
            let c = v.dot(&b);
            v.axpy(-c, &b, 1.0);
        }
        chosen.push(b);
    }
    let mut out = DMatrix::zeros(chosen.len(), d);
    for (i, v) in chosen.iter().enumerate() {
        out.set_row(i, &v.transpose());
    }
    out
}

/// Complement basis built from seeded random candidates instead of
/// coordinate vectors; used to verify basis-independence of determinant
/// quantities.
pub fn orthonormal_complement_randomized(rows: &DMatrix<f64>, seed: u64) -> DMatrix<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let d = rows.ncols();
    let row_basis = orthonormal_rows(rows, 1e-12);
    let target = d - row_basis.len();
    let mut chosen: Vec<DVector<f64>> = Vec::new();
    let mut guard = 0;
    while chosen.len() < target && guard < 100 * d {
        guard += 1;
        let mut v = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        project_off(&mut v, &row_basis);
        project_off(&mut v, &chosen);
        project_off(&mut v, &chosen);
        let n = v.norm();
        if n > 1e-6 {
            chosen.push(v / n);
        }
    }
    let mut out = DMatrix::zeros(chosen.len(), d);
    for (i, v) in chosen.iter().enumerate() {
        out.set_row(i, &v.transpose());
    }
    out
}

/// Deterministic grid on the unit sphere `S^{k-1}`.
///
/// * `k = 1`: the two endpoints `{+1, -1}`.
/// * `k = 2`: `n` uniformly spaced directions on the circle.
/// * `k = 3`: an `n`-point Fibonacci spiral.
/// * `k > 3`: seeded normalized Gaussian samples (deterministic).
pub fn unit_sphere_grid(k: usize, n: usize) -> Vec<DVector<f64>> {
    assert!(k >= 1, "sphere dimension k must be >= 1");
    match k {
        1 => vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![-1.0])],
        2 => (0..n.max(4))
            .map(|i| {
                let th = 2.0 * std::f64::consts::PI * (i as f64) / (n.max(4) as f64);
                DVector::from_vec(vec![th.cos(), th.sin()])
            })
            .collect(),
        3 => {
            let m = n.max(8);
            let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
            (0..m)
                .map(|i| {
                    let z = 1.0 - 2.0 * ((i as f64) + 0.5) / (m as f64);
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let th = 2.0 * std::f64::consts::PI * (i as f64) / golden;
                    DVector::from_vec(vec![r * th.cos(), r * th.sin(), z])
                })
                .collect()
        }
        _ => {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
            (0..n.max(8))
                .map(|_| {
                    loop {
                        let v = DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0f64));
                        let nn = v.norm();
                        if nn > 1e-3 {
                            return v / nn;
                        }
                    }
                })
                .collect()
        }
    }
}

/// `n` evenly spaced points including both endpoints (`n >= 2`).
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n)
        .map(|i| lo + (hi - lo) * (i as f64) / ((n - 1) as f64))
        .collect()
}

/// Ordinary least-squares line fit `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope (0 when there are only two points).
    pub stderr: f64,
}

pub fn line_fit(xs: &[f64], ys: &[f64]) -> LineFit {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    assert!(n >= 2, "need at least two points to fit a line");
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if n > 2 {
        let rss: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| {
                let r = y - (slope * x + intercept);
                r * r
            })
            .sum();
        (rss / ((nf - 2.0) * sxx)).sqrt()
    } else {
        0.0
    };
    LineFit { slope, intercept, stderr }
}

/// Fit of `log y` against `log x`; the slope is the power-law exponent.
pub fn log_log_fit(xs: &[f64], ys: &[f64]) -> LineFit {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.max(1e-300).ln()).collect();
    line_fit(&lx, &ly)
}

/// Closed axis-parallel box in `R^dim` with per-axis extents.
///
/// The common case is a cube inside `I^d = [-1,1]^d`; per-axis sides exist
/// for product-shaped supports (a slab in some axes, a unit box in others).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoxND {
    pub lo: Vec<f64>,
    pub sides: Vec<f64>,
}

impl BoxND {
    pub fn new(lo: Vec<f64>, sides: Vec<f64>) -> Self {
        assert_eq!(lo.len(), sides.len());
        assert!(sides.iter().all(|s| *s > 0.0), "box sides must be positive");
        BoxND { lo, sides }
    }

    /// Cube with the given center and side.
    pub fn cube(center: &[f64], side: f64) -> Self {
        BoxND::new(
            center.iter().map(|c| c - side / 2.0).collect(),
            vec![side; center.len()],
        )
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.sides)
            .map(|(l, s)| l + s / 2.0)
            .collect()
    }

    pub fn hi(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.sides).map(|(l, s)| l + s).collect()
    }

    pub fn volume(&self) -> f64 {
        self.sides.iter().product()
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        p.iter()
            .zip(self.lo.iter().zip(&self.sides))
            .all(|(x, (l, s))| *x >= l - tol && *x <= l + s + tol)
    }

    /// True when the box sits inside `[-1,1]^dim` (within `tol`).
    pub fn inside_unit_cube(&self, tol: f64) -> bool {
        self.lo.iter().all(|l| *l >= -1.0 - tol)
            && self.hi().iter().all(|h| *h <= 1.0 + tol)
    }

    /// Inclusive lattice of `n` points per axis (corners included).
    pub fn corner_grid(&self, n: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.dim())
            .map(|a| linspace(self.lo[a], self.lo[a] + self.sides[a], n.max(2)))
            .collect();
        cartesian(&axes)
    }
}

/// Cartesian product of per-axis coordinate lists.
pub fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![vec![]];
    for axis in axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for p in &out {
            for &x in axis {
                let mut q = p.clone();
                q.push(x);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_det_is_one() {
        assert_eq!(det(&DMatrix::zeros(0, 0)), 1.0);
    }

    #[test]
    fn complement_is_orthonormal_and_orthogonal() {
        let rows = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 0.5, -1.0, 0.0, 1.0, 1.0, 3.0]);
        let n = orthonormal_complement(&rows);
        assert_eq!(n.nrows(), 2);
        let prod = &n * rows.transpose();
        assert!(prod.amax() < 1e-12);
        let gram = &n * n.transpose();
        assert!((gram - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn complement_deterministic() {
        let rows = DMatrix::from_row_slice(1, 3, &[0.3, -0.7, 0.2]);
        let a = orthonormal_complement(&rows);
        let b = orthonormal_complement(&rows);
        assert_eq!(a, b);
    }

    #[test]
    fn sphere_grids_are_unit() {
        for k in 1..=4 {
            for t in unit_sphere_grid(k, 30) {
                assert!((t.norm() - 1.0).abs() < 1e-12);
                assert_eq!(t.len(), k);
            }
        }
    }

    #[test]
    fn fit_recovers_slope() {
        let xs: Vec<f64> = (1..=6).map(|i| 2f64.powi(i)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(1.5)).collect();
        let fit = log_log_fit(&xs, &ys);
        assert!((fit.slope - 1.5).abs() < 1e-12);
        assert!(fit.stderr < 1e-12);
    }
}
