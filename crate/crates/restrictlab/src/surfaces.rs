//! Surfaces `xi -> (xi, Phi(xi))` of codimension `k` with exact derivative
//! oracles.
//!
//! Quadratic surfaces carry their defining matrices, so gradients and
//! Hessians are closed-form; custom surfaces must supply analytic oracles
//! (finite differences are used only as a consistency test, never as the
//! primary oracle — determinant conditions downstream are too sensitive to
//! derivative noise).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::C64;

#[derive(Debug, Error, PartialEq)]
pub enum SurfaceError {
    #[error("matrix {index} is not symmetric (max asymmetry {max_dev:.3e} > 1e-12)")]
    NonSymmetric { index: usize, max_dev: f64 },
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("matrix is numerically singular (|det| = {0:.3e})")]
    NearSingular(f64),
    #[error("unknown surface name `{0}`")]
    UnknownName(String),
}

/// Which family a surface belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceKind {
    Quadratic,
    ComplexQuadratic,
    Custom,
}

type PhiFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
type GradFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;
type HessFn = dyn Fn(&[f64], usize) -> DMatrix<f64> + Send + Sync;

#[derive(Clone)]
enum Form {
    /// `phi_j(xi) = xi^t A_j xi / 2 + b_j . xi` with symmetric `A_j`.
    Quadratic {
        a: Vec<DMatrix<f64>>,
        b: Vec<DVector<f64>>,
    },
    Custom {
        phi: Arc<PhiFn>,
        grad: Arc<GradFn>,
        hess: Arc<HessFn>,
    },
}

/// A surface of codimension `k` over the base cube `I^d`.
///
/// Immutable after construction; all oracle calls are pure, so values may be
/// queried concurrently from any number of workers.
#[derive(Clone)]
pub struct Surface {
    d: usize,
    k: usize,
    kind: SurfaceKind,
    form: Form,
}

impl fmt::Debug for Surface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Surface")
            .field("d", &self.d)
            .field("k", &self.k)
            .field("kind", &self.kind)
            .finish()
    }
}

impl Surface {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn codim(&self) -> usize {
        self.k
    }

    pub fn kind(&self) -> SurfaceKind {
        self.kind
    }

    /// `Phi(xi)` as a `k`-vector.
    pub fn phi(&self, xi: &[f64]) -> DVector<f64> {
        assert_eq!(xi.len(), self.d);
        match &self.form {
            Form::Quadratic { a, b } => {
                let x = DVector::from_column_slice(xi);
                DVector::from_fn(self.k, |j, _| 0.5 * x.dot(&(&a[j] * &x)) + b[j].dot(&x))
            }
            Form::Custom { phi, .. } => DVector::from_vec(phi(xi)),
        }
    }

    /// `k x d` matrix whose row `j` is the gradient of `phi_j` at `xi`.
    pub fn grad(&self, xi: &[f64]) -> DMatrix<f64> {
        assert_eq!(xi.len(), self.d);
        match &self.form {
            Form::Quadratic { a, b } => {
                let x = DVector::from_column_slice(xi);
                let mut g = DMatrix::zeros(self.k, self.d);
                for j in 0..self.k {
                    let row = (&a[j] * &x) + &b[j];
                    g.set_row(j, &row.transpose());
                }
                g
            }
            Form::Custom { grad, .. } => grad(xi),
        }
    }

    /// Symmetric `d x d` Hessian of `phi_j` at `xi`.
    ///
    /// Custom oracles are symmetrized, quadratic ones are exact.
    pub fn hess(&self, xi: &[f64], j: usize) -> DMatrix<f64> {
        assert!(j < self.k);
        match &self.form {
            Form::Quadratic { a, .. } => a[j].clone(),
            Form::Custom { hess, .. } => {
                let h = hess(xi, j);
                (&h + h.transpose()) * 0.5
            }
        }
    }

    /// The defining matrices of a quadratic surface, if it is one.
    pub fn quadratic_parts(&self) -> Option<(&[DMatrix<f64>], &[DVector<f64>])> {
        match &self.form {
            Form::Quadratic { a, b } => Some((a, b)),
            Form::Custom { .. } => None,
        }
    }

    pub fn custom(
        d: usize,
        k: usize,
        phi: Arc<PhiFn>,
        grad: Arc<GradFn>,
        hess: Arc<HessFn>,
    ) -> Result<Self, SurfaceError> {
        if k == 0 || k > d {
            return Err(SurfaceError::BadShape(format!("need 1 <= k <= d, got d={d}, k={k}")));
        }
        Ok(Surface { d, k, kind: SurfaceKind::Custom, form: Form::Custom { phi, grad, hess } })
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

/// Builds the quadratic surface `phi_j(xi) = xi^t A_j xi / 2 + b_j . xi`.
///
/// Inputs must be symmetric within `1e-12`; they are then symmetrized
/// exactly so the stored Hessians are symmetric to the last bit.
pub fn make_quadratic(
    a: Vec<DMatrix<f64>>,
    b: Option<Vec<DVector<f64>>>,
) -> Result<Surface, SurfaceError> {
    let k = a.len();
    if k == 0 {
        return Err(SurfaceError::BadShape("need at least one matrix".into()));
    }
    let d = a[0].nrows();
    if k > d {
        return Err(SurfaceError::BadShape(format!("k={k} exceeds d={d}")));
    }
    let mut sym = Vec::with_capacity(k);
    for (j, m) in a.into_iter().enumerate() {
        if m.nrows() != d || m.ncols() != d {
            return Err(SurfaceError::BadShape(format!(
                "matrix {j} is {}x{}, expected {d}x{d}",
                m.nrows(),
                m.ncols()
            )));
        }
        let dev = max_asymmetry(&m);
        if dev > 1e-12 {
            return Err(SurfaceError::NonSymmetric { index: j, max_dev: dev });
        }
        sym.push((&m + m.transpose()) * 0.5);
    }
    let b = match b {
        Some(b) => {
            if b.len() != k || b.iter().any(|v| v.len() != d) {
                return Err(SurfaceError::BadShape("linear parts must be k vectors in R^d".into()));
            }
            b
        }
        None => vec![DVector::zeros(d); k],
    };
    Ok(Surface { d, k, kind: SurfaceKind::Quadratic, form: Form::Quadratic { a: sym, b } })
}

/// Complex quadratic surface `z -> (z, z^t D z / 2)` over `C^n`, with `D`
/// real symmetric invertible.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexQuadratic {
    n: usize,
    d_mat: DMatrix<f64>,
}

impl ComplexQuadratic {
    pub fn new(d_mat: DMatrix<f64>) -> Result<Self, SurfaceError> {
        let n = d_mat.nrows();
        if n == 0 || d_mat.ncols() != n {
            return Err(SurfaceError::BadShape("D must be square and nonempty".into()));
        }
        let dev = max_asymmetry(&d_mat);
        if dev > 1e-12 {
            return Err(SurfaceError::NonSymmetric { index: 0, max_dev: dev });
        }
        let det = d_mat.determinant().abs();
        if det <= 0.0 {
            return Err(SurfaceError::NearSingular(det));
        }
        Ok(ComplexQuadratic { n, d_mat: (&d_mat + d_mat.transpose()) * 0.5 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.d_mat
    }

    /// `z^t D z / 2` in complex arithmetic, `z = x + i y`.
    pub fn half_form(&self, x: &[f64], y: &[f64]) -> C64 {
        let n = self.n;
        assert_eq!(x.len(), n);
        assert_eq!(y.len(), n);
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let zi = C64::new(x[i], y[i]);
                let zj = C64::new(x[j], y[j]);
                acc += self.d_mat[(i, j)] * zi * zj;
            }
        }
        acc * 0.5
    }
}

/// Realizes a complex quadratic surface as a real surface with `d = 2n`,
/// `k = 2`:
///
/// `phi_1(x, y) = (x^t D x - y^t D y) / 2`, `phi_2(x, y) = x^t D y`.
pub fn realize_complex(c: &ComplexQuadratic) -> Surface {
    let n = c.n;
    let d2 = 2 * n;
    let mut a1 = DMatrix::zeros(d2, d2);
    let mut a2 = DMatrix::zeros(d2, d2);
    for i in 0..n {
        for j in 0..n {
            let v = c.d_mat[(i, j)];
            a1[(i, j)] = v;
            a1[(n + i, n + j)] = -v;
            a2[(i, n + j)] = v;
            a2[(n + i, j)] = v;
        }
    }
    make_quadratic(vec![a1, a2], None).expect("block matrices are symmetric by construction")
}

/// Which factorization the normal form used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalFormRoute {
    /// Same-sign eigenvalues: `z1^2 + z2^2 = (z1 + i z2)(z1 - i z2)`.
    Sum,
    /// Opposite signs: `z1^2 - z2^2 = (z1 + z2)(z1 - z2)`.
    Product,
}

/// Result of reducing `z^t D z / 2` to the product form `w1 * w2`.
#[derive(Debug, Clone)]
pub struct NormalForm {
    pub route: NormalFormRoute,
    /// Complex-linear change of variables `w = T z` with
    /// `z^t D z / 2 = w1 * w2` identically.
    pub map: [[C64; 2]; 2],
}

impl NormalForm {
    pub fn apply(&self, z: [C64; 2]) -> [C64; 2] {
        [
            self.map[0][0] * z[0] + self.map[0][1] * z[1],
            self.map[1][0] * z[0] + self.map[1][1] * z[1],
        ]
    }
}

/// Reduces a nonsingular symmetric `2x2` matrix `D` to the model product
/// form: returns `T` with `z^t D z / 2 = (Tz)_1 (Tz)_2` on all of `C^2`.
pub fn normalize_d(d_mat: &DMatrix<f64>) -> Result<NormalForm, SurfaceError> {
    if d_mat.nrows() != 2 || d_mat.ncols() != 2 {
        return Err(SurfaceError::BadShape("normal form needs a 2x2 matrix".into()));
    }
    let dev = max_asymmetry(d_mat);
    if dev > 1e-12 {
        return Err(SurfaceError::NonSymmetric { index: 0, max_dev: dev });
    }
    let det = d_mat.determinant();
    if det.abs() < 1e-10 {
        return Err(SurfaceError::NearSingular(det.abs()));
    }
    let eig = nalgebra::SymmetricEigen::new(d_mat.clone());
    // columns of q are the eigenvectors: D = q diag(l) q^t, u = q^t z.
    let q = eig.eigenvectors;
    let l = eig.eigenvalues;
    let route = if l[0] * l[1] > 0.0 { NormalFormRoute::Sum } else { NormalFormRoute::Product };
    // v_i = sqrt(l_i) u_i (complex sqrt), so z^t D z / 2 = (v1^2 + v2^2) / 2.
    let sq = |lam: f64| -> C64 {
        if lam >= 0.0 {
            C64::new(lam.sqrt(), 0.0)
        } else {
            C64::new(0.0, (-lam).sqrt())
        }
    };
    let s0 = sq(l[0]);
    let s1 = sq(l[1]);
    // w1 = (v1 + i v2)/2, w2 = (v1 - i v2): w1 w2 = (v1^2 + v2^2)/2.
    let i = C64::new(0.0, 1.0);
    let mut map = [[C64::new(0.0, 0.0); 2]; 2];
    for col in 0..2 {
        let v0 = s0 * q[(col, 0)];
        let v1 = s1 * q[(col, 1)];
        map[0][col] = (v0 + i * v1) * 0.5;
        map[1][col] = v0 - i * v1;
    }
    Ok(NormalForm { route, map })
}

/// Constructor registry for the named surfaces the experiments use.
///
/// * `paraboloid` — `d >= 1`, `k = 1`, `A_1 = I`.
/// * `saddle` / `hyperbolic-paraboloid` — `d = 2`, `k = 1`, `A_1 = diag(1,-1)`.
/// * `complex-paraboloid` — complex dimension `n`, `D = I` (or given `D`).
/// * `custom-quadratic` — explicit matrices.
pub fn named_surface(name: &str, params: &NamedParams) -> Result<Surface, SurfaceError> {
    match name {
        "paraboloid" => {
            let d = params.d.unwrap_or(2);
            make_quadratic(vec![DMatrix::identity(d, d)], None)
        }
        "saddle" | "hyperbolic-paraboloid" => {
            let d = params.d.unwrap_or(2);
            if d != 2 {
                return Err(SurfaceError::BadShape("saddle surface is 2-dimensional".into()));
            }
            make_quadratic(
                vec![DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]))],
                None,
            )
        }
        "complex-paraboloid" => {
            let n = params.n.unwrap_or(1);
            let d_mat = params
                .d_matrix
                .clone()
                .unwrap_or_else(|| DMatrix::identity(n, n));
            Ok(realize_complex(&ComplexQuadratic::new(d_mat)?))
        }
        "custom-quadratic" => {
            let a = params
                .matrices
                .clone()
                .ok_or_else(|| SurfaceError::BadShape("custom-quadratic needs matrices".into()))?;
            make_quadratic(a, params.linear.clone())
        }
        other => Err(SurfaceError::UnknownName(other.to_string())),
    }
}

/// Parameters for [`named_surface`].
#[derive(Debug, Clone, Default)]
pub struct NamedParams {
    pub d: Option<usize>,
    pub n: Option<usize>,
    pub d_matrix: Option<DMatrix<f64>>,
    pub matrices: Option<Vec<DMatrix<f64>>>,
    pub linear: Option<Vec<DVector<f64>>>,
}

/// Central-difference gradient check; returns the worst relative error over
/// the rows. Step `1e-5`, intended tolerance `1e-6`.
pub fn finite_difference_gradient_error(s: &Surface, xi: &[f64]) -> f64 {
    let h = 1e-5;
    let g = s.grad(xi);
    let mut worst: f64 = 0.0;
    for a in 0..s.dim() {
        let mut xp = xi.to_vec();
        let mut xm = xi.to_vec();
        xp[a] += h;
        xm[a] -= h;
        let fp = s.phi(&xp);
        let fm = s.phi(&xm);
        for j in 0..s.codim() {
            let fd = (fp[j] - fm[j]) / (2.0 * h);
            let denom = g[(j, a)].abs().max(1.0);
            worst = worst.max((fd - g[(j, a)]).abs() / denom);
        }
    }
    worst
}

/// Central-difference check of the Hessian action on gradient rows; worst
/// relative error, step `1e-5`, intended tolerance `1e-5`.
pub fn finite_difference_hessian_error(s: &Surface, xi: &[f64]) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for a in 0..s.dim() {
        let mut xp = xi.to_vec();
        let mut xm = xi.to_vec();
        xp[a] += h;
        xm[a] -= h;
        let gp = s.grad(&xp);
        let gm = s.grad(&xm);
        for j in 0..s.codim() {
            let hj = s.hess(xi, j);
            for b in 0..s.dim() {
                let fd = (gp[(j, b)] - gm[(j, b)]) / (2.0 * h);
                let denom = hj[(b, a)].abs().max(1.0);
                worst = worst.max((fd - hj[(b, a)]).abs() / denom);
            }
        }
    }
    worst
}
