//! Curvature/transversality matrices and grid-sampled certification.
//!
//! For a surface with pieces over boxes `S1`, `S2` the checks below sample
//! the mixed Hessian `H(t) = sum_j t_j Hphi_j(nu)`, the gradient-gap matrix
//! with rows `grad phi_j(nu2) - grad phi_j(nu1)`, the bordered block matrix
//! `[[0, G], [G^t, H]]` and the transverse form `N H N^t` (rows of `N`
//! spanning the orthogonal complement of the gap rows), and report the
//! minimum absolute determinant over the sample set together with its
//! argmin. Verification is deterministic grid sampling, not certification;
//! the argmin lets a user refine locally.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    self, det, normalized_det, orthonormal_complement, orthonormal_complement_randomized,
    unit_sphere_grid, BoxND, C64,
};
use crate::surfaces::Surface;

#[derive(Debug, Error, PartialEq)]
pub enum ConditionError {
    #[error("box is empty or has wrong dimension (expected {expected})")]
    EmptyBox { expected: usize },
    #[error("mixed Hessian singular at nu={nu:?}, t={t:?} (|det| = {det:.3e})")]
    SingularHessian { nu: Vec<f64>, t: Vec<f64>, det: f64 },
    #[error("gradient-gap matrix rank deficient at nu1={nu1:?}, nu2={nu2:?} (sigma_min = {sigma_min:.3e})")]
    RankDeficientD { nu1: Vec<f64>, nu2: Vec<f64>, sigma_min: f64 },
}

/// Identifier of a certified condition. The serialized codes are stable and
/// used in reports and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditionKind {
    /// `det H(t) != 0` on `S1 u S2` (mixed-curvature nondegeneracy).
    #[serde(rename = "C12")]
    MixedCurvature,
    /// `det [G H(t)^{-1} G^t] != 0` (gap-curvature transversality).
    #[serde(rename = "C13")]
    GapCurvature,
    /// `det [[0, G], [G^t, H]] != 0` (bordered determinant).
    #[serde(rename = "C14")]
    BorderedDeterminant,
    /// `det [N H(t) N^t] != 0` (normal-space curvature).
    #[serde(rename = "C15")]
    NormalCurvature,
    /// `|(z2 - z1)^t D (z2 - z1)| != 0` for complex quadratic surfaces.
    #[serde(rename = "C19-complex")]
    ComplexSeparation,
    /// Margin of injectivity of `nu -> sum_j t_j grad phi_j(nu)`.
    #[serde(rename = "injectivity")]
    Injectivity,
}

/// Matrices entering the conditions, assembled at one parameter tuple.
#[derive(Debug, Clone)]
pub struct ConditionMatrices {
    /// `H(t) = sum_j t_j Hphi_j(nu)`, `d x d` symmetric.
    pub mixed_hessian: DMatrix<f64>,
    /// `k x d`, row `j` is `grad phi_j(nu2) - grad phi_j(nu1)`.
    pub grad_gap: DMatrix<f64>,
    /// `(k+d) x (k+d)` block matrix `[[0, G], [G^t, H]]`.
    pub bordered: DMatrix<f64>,
    /// `(d-k) x d`, orthonormal rows spanning the complement of the gap rows.
    pub transverse: DMatrix<f64>,
}

impl ConditionMatrices {
    pub fn at(s: &Surface, nu1: &[f64], nu2: &[f64], nu: &[f64], t: &[f64]) -> Self {
        let h = mixed_hessian(s, nu, t);
        let g = grad_gap(s, nu1, nu2);
        let bordered = bordered_matrix(&g, &h);
        let transverse = orthonormal_complement(&g);
        ConditionMatrices { mixed_hessian: h, grad_gap: g, bordered, transverse }
    }
}

/// `sum_j t_j Hphi_j(nu)`; `t` is expected to be a unit vector.
pub fn mixed_hessian(s: &Surface, nu: &[f64], t: &[f64]) -> DMatrix<f64> {
    assert_eq!(t.len(), s.codim());
    debug_assert!(
        (t.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() <= 1e-12,
        "direction t must be a unit vector"
    );
    mixed_hessian_any(s, nu, t)
}

/// Same as [`mixed_hessian`] without the unit-norm contract (the sum is
/// linear in `t`, so scaling identities can be exercised directly).
pub fn mixed_hessian_any(s: &Surface, nu: &[f64], t: &[f64]) -> DMatrix<f64> {
    let d = s.dim();
    let mut h = DMatrix::zeros(d, d);
    for j in 0..s.codim() {
        h += s.hess(nu, j) * t[j];
    }
    h
}

/// `k x d` matrix of gradient differences between the two base points.
pub fn grad_gap(s: &Surface, nu1: &[f64], nu2: &[f64]) -> DMatrix<f64> {
    s.grad(nu2) - s.grad(nu1)
}

/// Bordered block matrix `[[0, G], [G^t, H]]` of size `(k+d) x (k+d)`.
pub fn bordered_matrix(gap: &DMatrix<f64>, hess: &DMatrix<f64>) -> DMatrix<f64> {
    let k = gap.nrows();
    let d = gap.ncols();
    assert_eq!(hess.nrows(), d);
    let mut m = DMatrix::zeros(k + d, k + d);
    m.view_mut((0, k), (k, d)).copy_from(gap);
    m.view_mut((k, 0), (d, k)).copy_from(&gap.transpose());
    m.view_mut((k, k), (d, d)).copy_from(hess);
    m
}

/// How densely to sample base points and sphere directions.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SamplingSpec {
    /// Points per base axis (inclusive of box corners), `>= 2`.
    pub nu_per_axis: usize,
    /// Directions sampled on `S^{k-1}` (`k = 1` always uses both signs).
    pub t_samples: usize,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec { nu_per_axis: 3, t_samples: 16 }
    }
}

/// The argmin tuple of a sampled check. Unused slots stay `None`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ArgMin {
    pub nu1: Option<Vec<f64>>,
    pub nu2: Option<Vec<f64>>,
    pub nu: Option<Vec<f64>>,
    pub t: Option<Vec<f64>>,
}

/// Outcome of a sampled condition check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: ConditionKind,
    pub min_abs_det: f64,
    pub argmin: ArgMin,
    /// Samples per axis group: `[base points, directions]`.
    pub sample_counts: Vec<usize>,
    pub threshold: f64,
    pub pass: bool,
}

impl ConditionReport {
    fn new(
        condition: ConditionKind,
        min_abs_det: f64,
        argmin: ArgMin,
        sample_counts: Vec<usize>,
        threshold: f64,
    ) -> Self {
        let pass = min_abs_det >= threshold;
        ConditionReport { condition, min_abs_det, argmin, sample_counts, threshold, pass }
    }
}

fn validate_box(s: &Surface, b: &BoxND) -> Result<(), ConditionError> {
    if b.dim() != s.dim() {
        return Err(ConditionError::EmptyBox { expected: s.dim() });
    }
    Ok(())
}

/// Default pass threshold on raw determinants. The underlying constants are
/// merely existential, so this is configurable everywhere it appears.
pub const DEFAULT_THRESHOLD: f64 = 1e-6;

/// Minimum of `|det H(t)|` over `nu in S1 u S2` and sampled unit `t`.
pub fn check_mixed_curvature(
    s: &Surface,
    s1: &BoxND,
    s2: &BoxND,
    grid: &SamplingSpec,
    threshold: f64,
) -> Result<ConditionReport, ConditionError> {
    validate_box(s, s1)?;
    validate_box(s, s2)?;
    let nus: Vec<Vec<f64>> = s1
        .corner_grid(grid.nu_per_axis)
        .into_iter()
        .chain(s2.corner_grid(grid.nu_per_axis))
        .collect();
    let ts = unit_sphere_grid(s.codim(), grid.t_samples);
    let mut min = f64::INFINITY;
    let mut arg = ArgMin::default();
    for nu in &nus {
        for t in &ts {
            let v = det(&mixed_hessian(s, nu, t.as_slice())).abs();
            if v < min {
                min = v;
                arg = ArgMin {
                    nu: Some(nu.clone()),
                    t: Some(t.as_slice().to_vec()),
                    ..Default::default()
                };
            }
        }
    }
    Ok(ConditionReport::new(
        ConditionKind::MixedCurvature,
        min,
        arg,
        vec![nus.len(), ts.len()],
        threshold,
    ))
}

fn invert_mixed(
    s: &Surface,
    nu: &[f64],
    t: &[f64],
) -> Result<DMatrix<f64>, ConditionError> {
    let h = mixed_hessian(s, nu, t);
    let d = det(&h);
    match h.clone().try_inverse() {
        Some(inv) if d.abs() >= 1e-300 => Ok(inv),
        _ => Err(ConditionError::SingularHessian {
            nu: nu.to_vec(),
            t: t.to_vec(),
            det: d.abs(),
        }),
    }
}

/// Minimum of `|det [G H(t)^{-1} G^t]|` over sampled
/// `(nu1, nu2, t, nu in {nu1, nu2})`.
pub fn check_gap_curvature(
    s: &Surface,
    s1: &BoxND,
    s2: &BoxND,
    grid: &SamplingSpec,
    threshold: f64,
) -> Result<ConditionReport, ConditionError> {
    validate_box(s, s1)?;
    validate_box(s, s2)?;
    let nus1 = s1.corner_grid(grid.nu_per_axis);
    let nus2 = s2.corner_grid(grid.nu_per_axis);
    let ts = unit_sphere_grid(s.codim(), grid.t_samples);
    let mut min = f64::INFINITY;
    let mut arg = ArgMin::default();
    for nu1 in &nus1 {
        for nu2 in &nus2 {
            let gap = grad_gap(s, nu1, nu2);
            for t in &ts {
                for nu in [nu1, nu2] {
                    let inv = invert_mixed(s, nu, t.as_slice())?;
                    let v = det(&(&gap * inv * gap.transpose())).abs();
                    if v < min {
                        min = v;
                        arg = ArgMin {
                            nu1: Some(nu1.clone()),
                            nu2: Some(nu2.clone()),
                            nu: Some(nu.clone()),
                            t: Some(t.as_slice().to_vec()),
                        };
                    }
                }
            }
        }
    }
    Ok(ConditionReport::new(
        ConditionKind::GapCurvature,
        min,
        arg,
        vec![nus1.len() * nus2.len(), ts.len()],
        threshold,
    ))
}

/// Four-point variant: `det [G(nu1, nu2) H^{-1} G^t(nu1', nu2')]` sampled
/// over independent pairs. Exposed for exploration; the two-point version
/// above is the one the standard checks use.
pub fn check_gap_curvature_four_point(
    s: &Surface,
    s1: &BoxND,
    s2: &BoxND,
    grid: &SamplingSpec,
    threshold: f64,
) -> Result<ConditionReport, ConditionError> {
    validate_box(s, s1)?;
    validate_box(s, s2)?;
    let nus1 = s1.corner_grid(grid.nu_per_axis);
    let nus2 = s2.corner_grid(grid.nu_per_axis);
    let ts = unit_sphere_grid(s.codim(), grid.t_samples);
    let mut min = f64::INFINITY;
    let mut arg = ArgMin::default();
    for nu1 in &nus1 {
        for nu2 in &nus2 {
            let gap = grad_gap(s, nu1, nu2);
            for nu1p in &nus1 {
                for nu2p in &nus2 {
                    let gap_p = grad_gap(s, nu1p, nu2p);
                    for t in &ts {
                        for nu in [nu1, nu2] {
                            let inv = invert_mixed(s, nu, t.as_slice())?;
                            let v = det(&(&gap * inv * gap_p.transpose())).abs();
                            if v < min {
                                min = v;
                                arg = ArgMin {
                                    nu1: Some(nu1.clone()),
                                    nu2: Some(nu2.clone()),
                                    nu: Some(nu.clone()),
                                    t: Some(t.as_slice().to_vec()),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConditionReport::new(
        ConditionKind::GapCurvature,
        min,
        arg,
        vec![(nus1.len() * nus2.len()).pow(2), ts.len()],
        threshold,
    ))
}

/// Minimum of `|det [[0, G], [G^t, H(t)]]|` over sampled tuples.
pub fn check_bordered(
    s: &Surface,
    s1: &BoxND,
    s2: &BoxND,
    grid: &SamplingSpec,
    threshold: f64,
) -> Result<ConditionReport, ConditionError> {
    validate_box(s, s1)?;
    validate_box(s, s2)?;
    let nus1 = s1.corner_grid(grid.nu_per_axis);
    let nus2 = s2.corner_grid(grid.nu_per_axis);
    let ts = unit_sphere_grid(s.codim(), grid.t_samples);
    let mut min = f64::INFINITY;
    let mut arg = ArgMin::default();
    for nu1 in &nus1 {
        for nu2 in &nus2 {
            let gap = grad_gap(s, nu1, nu2);
            for t in &ts {
                for nu in [nu1, nu2] {
                    let h = mixed_hessian(s, nu, t.as_slice());
                    let v = det(&bordered_matrix(&gap, &h)).abs();
                    if v < min {
                        min = v;
                        arg = ArgMin {
                            nu1: Some(nu1.clone()),
                            nu2: Some(nu2.clone()),
                            nu: Some(nu.clone()),
                            t: Some(t.as_slice().to_vec()),
                        };
                    }
                }
            }
        }
    }
    Ok(ConditionReport::new(
        ConditionKind::BorderedDeterminant,
        min,
        arg,
        vec![nus1.len() * nus2.len(), ts.len()],
        threshold,
    ))
}

/// The normal-curvature value `|det [N H(t) N^t]|` at one tuple, with the
/// `0x0 => 1` convention when `d = k`.
///
/// The value does not depend on the choice of orthonormal complement basis;
/// this is re-verified against a randomized basis on every call (agreement
/// to `1e-9` relative).
pub fn normal_curvature_value(
    s: &Surface,
    nu1: &[f64],
    nu2: &[f64],
    nu: &[f64],
    t: &[f64],
) -> Result<f64, ConditionError> {
    let gap = grad_gap(s, nu1, nu2);
    let sigma_min = linalg::min_singular_value(&gap);
    if s.dim() > s.codim() && sigma_min < 1e-10 {
        return Err(ConditionError::RankDeficientD {
            nu1: nu1.to_vec(),
            nu2: nu2.to_vec(),
            sigma_min,
        });
    }
    let h = mixed_hessian(s, nu, t);
    let n = orthonormal_complement(&gap);
    let v = det(&(&n * &h * n.transpose())).abs();
    let n2 = orthonormal_complement_randomized(&gap, 0x9e3779b9);
    let v2 = det(&(&n2 * &h * n2.transpose())).abs();
    debug_assert!(
        (v - v2).abs() <= 1e-9 * v.max(1.0),
        "normal curvature value depends on basis: {v} vs {v2}"
    );
    Ok(v)
}

/// Minimum of the normal-curvature value over sampled tuples. Requires the
/// gap matrix to have rank `k` at all samples.
pub fn check_normal_curvature(
    s: &Surface,
    s1: &BoxND,
    s2: &BoxND,
    grid: &SamplingSpec,
    threshold: f64,
) -> Result<ConditionReport, ConditionError> {
    validate_box(s, s1)?;
    validate_box(s, s2)?;
    let nus1 = s1.corner_grid(grid.nu_per_axis);
    let nus2 = s2.corner_grid(grid.nu_per_axis);
    let ts = unit_sphere_grid(s.codim(), grid.t_samples);
    let mut min = f64::INFINITY;
    let mut arg = ArgMin::default();
    for nu1 in &nus1 {
        for nu2 in &nus2 {
            for t in &ts {
                for nu in [nu1, nu2] {
                    let v = normal_curvature_value(s, nu1, nu2, nu, t.as_slice())?;
                    if v < min {
                        min = v;
                        arg = ArgMin {
                            nu1: Some(nu1.clone()),
                            nu2: Some(nu2.clone()),
                            nu: Some(nu.clone()),
                            t: Some(t.as_slice().to_vec()),
                        };
                    }
                }
            }
        }
    }
    Ok(ConditionReport::new(
        ConditionKind::NormalCurvature,
        min,
        arg,
        vec![nus1.len() * nus2.len(), ts.len()],
        threshold,
    ))
}

/// One sampled tuple for the equivalence report.
#[derive(Debug, Clone)]
pub struct SampleTuple {
    pub nu1: Vec<f64>,
    pub nu2: Vec<f64>,
    pub nu: Vec<f64>,
    pub t: Vec<f64>,
}

/// Result of comparing the bordered and normal-curvature classifications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub checked: usize,
    /// Indices of samples skipped because the mixed Hessian was degenerate
    /// (the equivalence is only claimed under nondegenerate `H`).
    pub skipped: usize,
    pub discrepancies: Vec<usize>,
}

/// Verifies that `det [[0,G],[G^t,H]] != 0` iff `det [N H N^t] != 0` at
/// each sample where `H` is nondegenerate.
///
/// Both sides are compared through the exact identity
/// `det M = (-1)^k det(G G^t) det(N H N^t)`, so one common scale (the
/// Hadamard bound of `M`) normalizes both classifications; the zero
/// threshold on the normalized values is `1e-10`.
pub fn equivalence_bordered_normal(
    s: &Surface,
    samples: &[SampleTuple],
) -> Result<EquivalenceReport, ConditionError> {
    let mut report = EquivalenceReport { checked: 0, skipped: 0, discrepancies: vec![] };
    for (i, smp) in samples.iter().enumerate() {
        let h = mixed_hessian(s, &smp.nu, &smp.t);
        if normalized_det(&h).abs() < 1e-10 {
            report.skipped += 1;
            continue;
        }
        let gap = grad_gap(s, &smp.nu1, &smp.nu2);
        let bord = bordered_matrix(&gap, &h);
        let scale = crate::linalg::hadamard_scale(&bord).max(1e-300);
        let n = orthonormal_complement(&gap);
        let nhn = &n * &h * n.transpose();
        let lhs = det(&bord);
        let sign = if s.codim() % 2 == 0 { 1.0 } else { -1.0 };
        let rhs = sign * det(&(&gap * gap.transpose())) * det(&nhn);
        report.checked += 1;
        let bord_zero = lhs.abs() / scale < 1e-10;
        let normal_zero = rhs.abs() / scale < 1e-10;
        let identity_ok = (lhs - rhs).abs() <= 1e-9 * scale;
        if bord_zero != normal_zero || !identity_ok {
            report.discrepancies.push(i);
        }
    }
    Ok(report)
}

/// Minimum over sampled pairs `nu != nu'` of
/// `|sum t_j grad phi_j(nu) - sum t_j grad phi_j(nu')| / |nu - nu'|`.
///
/// A positive value certifies an injectivity margin on the sample.
pub fn injectivity_margin(s: &Surface, s1: &BoxND, t: &[f64], grid: &SamplingSpec) -> f64 {
    let nus = s1.corner_grid(grid.nu_per_axis);
    let tv = DVector::from_column_slice(t);
    let images: Vec<DVector<f64>> =
        nus.iter().map(|nu| s.grad(nu).transpose() * &tv).collect();
    let mut min = f64::INFINITY;
    for i in 0..nus.len() {
        for j in (i + 1)..nus.len() {
            let dn: f64 = nus[i]
                .iter()
                .zip(&nus[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if dn < 1e-14 {
                continue;
            }
            let di = (&images[i] - &images[j]).norm();
            min = min.min(di / dn);
        }
    }
    min
}

/// `|(z2 - z1)^t D (z2 - z1)|` in complex arithmetic for `z_i in C^n`
/// given as `(x, y)` pairs.
pub fn complex_condition(d_mat: &DMatrix<f64>, z1: (&[f64], &[f64]), z2: (&[f64], &[f64])) -> f64 {
    let n = d_mat.nrows();
    assert_eq!(z1.0.len(), n);
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let di = C64::new(z2.0[i] - z1.0[i], z2.1[i] - z1.1[i]);
            let dj = C64::new(z2.0[j] - z1.0[j], z2.1[j] - z1.1[j]);
            acc += d_mat[(i, j)] * di * dj;
        }
    }
    acc.norm()
}

/// Real-variable expression for the same quantity:
/// `sqrt((dx^t D dx - dy^t D dy)^2 + 4 (dx^t D dy)^2)`.
pub fn complex_condition_real_form(d_mat: &DMatrix<f64>, dx: &[f64], dy: &[f64]) -> f64 {
    let xv = DVector::from_column_slice(dx);
    let yv = DVector::from_column_slice(dy);
    let xx = xv.dot(&(d_mat * &xv));
    let yy = yv.dot(&(d_mat * &yv));
    let xy = xv.dot(&(d_mat * &yv));
    ((xx - yy) * (xx - yy) + 4.0 * xy * xy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surfaces::{make_quadratic, named_surface, realize_complex, ComplexQuadratic, NamedParams};
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    fn paraboloid(d: usize) -> Surface {
        named_surface("paraboloid", &NamedParams { d: Some(d), ..Default::default() }).unwrap()
    }

    fn separated_boxes(d: usize) -> (BoxND, BoxND) {
        let c1 = vec![-0.5; d];
        let c2 = vec![0.5; d];
        (BoxND::cube(&c1, 0.25), BoxND::cube(&c2, 0.25))
    }

    fn random_symmetric(r: &mut impl Rng, d: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..=i {
                let v = r.gen_range(-1.5..1.5);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    fn random_quadratic(r: &mut impl Rng, d: usize, k: usize) -> Surface {
        let mats = (0..k).map(|_| random_symmetric(r, d)).collect();
        make_quadratic(mats, None).unwrap()
    }

    #[test]
    fn paraboloid_mixed_hessian_and_c12() {
        let s = paraboloid(2);
        let h = mixed_hessian(&s, &[0.1, 0.2], &[1.0]);
        assert_eq!(h, DMatrix::identity(2, 2));
        let (b1, b2) = separated_boxes(2);
        let rep =
            check_mixed_curvature(&s, &b1, &b2, &SamplingSpec::default(), DEFAULT_THRESHOLD)
                .unwrap();
        assert!((rep.min_abs_det - 1.0).abs() < 1e-12);
        assert!(rep.pass);
    }

    #[test]
    fn saddle_passes_mixed_curvature() {
        let s = named_surface("saddle", &NamedParams::default()).unwrap();
        let (b1, b2) = separated_boxes(2);
        let rep =
            check_mixed_curvature(&s, &b1, &b2, &SamplingSpec::default(), DEFAULT_THRESHOLD)
                .unwrap();
        assert!((rep.min_abs_det - 1.0).abs() < 1e-12);
        assert!(rep.pass);
    }

    #[test]
    fn complex_paraboloid_block_hessian_and_inverse() {
        let mut r = rng(11);
        for _ in 0..20 {
            let n = 2;
            let mut d_mat = random_symmetric(&mut r, n);
            if d_mat.determinant().abs() < 0.05 {
                continue;
            }
            d_mat *= 1.0 / d_mat.norm();
            let c = ComplexQuadratic::new(d_mat.clone()).unwrap();
            let s = realize_complex(&c);
            let th: f64 = r.gen_range(0.0..std::f64::consts::TAU);
            let t = [th.cos(), th.sin()];
            let nu: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
            let h = mixed_hessian(&s, &nu, &t);
            // block layout [[t1 D, t2 D], [t2 D, -t1 D]]
            for i in 0..n {
                for j in 0..n {
                    assert!((h[(i, j)] - t[0] * d_mat[(i, j)]).abs() < 1e-14);
                    assert!((h[(i, n + j)] - t[1] * d_mat[(i, j)]).abs() < 1e-14);
                    assert!((h[(n + i, n + j)] + t[0] * d_mat[(i, j)]).abs() < 1e-14);
                }
            }
            // inverse: (t1^2+t2^2)^{-1} [[t1 D^{-1}, t2 D^{-1}], [t2 D^{-1}, -t1 D^{-1}]]
            let hinv = h.clone().try_inverse().unwrap();
            let dinv = d_mat.clone().try_inverse().unwrap();
            let scale = 1.0 / (t[0] * t[0] + t[1] * t[1]);
            for i in 0..n {
                for j in 0..n {
                    assert!((hinv[(i, j)] - scale * t[0] * dinv[(i, j)]).abs() < 1e-10);
                    assert!((hinv[(i, n + j)] - scale * t[1] * dinv[(i, j)]).abs() < 1e-10);
                    assert!((hinv[(n + i, n + j)] + scale * t[0] * dinv[(i, j)]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn complex_paraboloid_c12_det_is_one_for_identity() {
        // det H(t) = (t1^2 + t2^2)^2 = 1 on the unit circle when D = I2.
        let c = ComplexQuadratic::new(DMatrix::identity(2, 2)).unwrap();
        let s = realize_complex(&c);
        let (b1, b2) = separated_boxes(4);
        let rep =
            check_mixed_curvature(&s, &b1, &b2, &SamplingSpec { nu_per_axis: 2, t_samples: 12 }, 1e-6)
                .unwrap();
        assert!((rep.min_abs_det - 1.0).abs() < 1e-9);
    }

    #[test]
    fn paraboloid_gap_curvature_closed_form() {
        // k = 1 elliptic case: value is |nu2 - nu1|^2; separation 1 gives
        // minimum >= 1 over the sampled boxes.
        let s = paraboloid(2);
        let b1 = BoxND::cube(&[-0.5, -0.5], 0.2);
        let b2 = BoxND::cube(&[0.5, 0.5], 0.2);
        let rep = check_gap_curvature(&s, &b1, &b2, &SamplingSpec::default(), 1e-6).unwrap();
        let mut min_sep = f64::INFINITY;
        for nu1 in b1.corner_grid(3) {
            for nu2 in b2.corner_grid(3) {
                let sep: f64 = nu1.iter().zip(&nu2).map(|(a, b)| (a - b) * (a - b)).sum();
                min_sep = min_sep.min(sep);
            }
        }
        assert!((rep.min_abs_det - min_sep).abs() < 1e-10);
        assert!(rep.min_abs_det >= 1.0);
    }

    #[test]
    fn complex_identity_null_pair_fails_gap_curvature() {
        // D = I2, dz = (1,0) + i (0,1): separation is >= 1 yet the gap
        // value is 0 and the check fails.
        let c = ComplexQuadratic::new(DMatrix::identity(2, 2)).unwrap();
        let s = realize_complex(&c);
        let nu1 = [0.0, 0.0, 0.0, 0.0];
        let nu2 = [1.0, 0.0, 0.0, 1.0];
        let gap = grad_gap(&s, &nu1, &nu2);
        let h = mixed_hessian(&s, &nu1, &[1.0, 0.0]);
        let hinv = h.try_inverse().unwrap();
        let v = det(&(&gap * hinv * gap.transpose())).abs();
        assert!(v < 1e-12);
        let b1 = BoxND::cube(&nu1, 0.05);
        let b2 = BoxND::cube(&nu2, 0.05);
        let rep =
            check_gap_curvature(&s, &b1, &b2, &SamplingSpec { nu_per_axis: 2, t_samples: 8 }, 1e-6)
                .unwrap();
        assert!(!rep.pass);
    }

    #[test]
    fn gap_value_matches_separation_formula() {
        // On the realized surface the gap-curvature value factors through
        // the complex separation quantity: value = sep^2 on |t| = 1.
        let mut r = rng(23);
        for _ in 0..50 {
            let d_mat = {
                let mut m = random_symmetric(&mut r, 2);
                while m.determinant().abs() < 0.05 {
                    m = random_symmetric(&mut r, 2);
                }
                m
            };
            let c = ComplexQuadratic::new(d_mat.clone()).unwrap();
            let s = realize_complex(&c);
            let nu1: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
            let nu2: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
            let th: f64 = r.gen_range(0.0..std::f64::consts::TAU);
            let t = [th.cos(), th.sin()];
            let gap = grad_gap(&s, &nu1, &nu2);
            let h = mixed_hessian(&s, &nu1, &t);
            let hinv = h.try_inverse().unwrap();
            let lhs = det(&(&gap * hinv * gap.transpose()));
            let sep = complex_condition(
                &d_mat,
                (&nu1[0..2], &nu1[2..4]),
                (&nu2[0..2], &nu2[2..4]),
            );
            // |t| = 1, so lhs = -sep^2 (sign from the factored rotation block)
            assert!(
                (lhs + sep * sep).abs() <= 1e-9 * sep.max(1.0).powi(2),
                "lhs = {lhs:.6e}, sep^2 = {:.6e}",
                sep * sep
            );
        }
    }

    #[test]
    fn bordered_hand_value_and_rank_deficiency() {
        let s = paraboloid(2);
        let nu1 = [-0.5, 0.0];
        let nu2 = [0.5, 0.0];
        let gap = grad_gap(&s, &nu1, &nu2);
        let h = mixed_hessian(&s, &nu1, &[1.0]);
        let m = bordered_matrix(&gap, &h);
        assert!((det(&m).abs() - 1.0).abs() < 1e-12);
        // degenerate: nu1 = nu2 makes the gap vanish and det M = 0
        let gap0 = grad_gap(&s, &nu1, &nu1);
        assert_eq!(det(&bordered_matrix(&gap0, &h)), 0.0);
    }

    #[test]
    fn block_determinant_identity_random_surfaces() {
        // det M = (-1)^k det(H) det(G H^{-1} G^t) whenever H is invertible.
        let mut r = rng(5);
        for _ in 0..200 {
            let d = r.gen_range(1..=4usize);
            let k = r.gen_range(1..=d.min(2));
            let s = random_quadratic(&mut r, d, k);
            let nu1: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
            let nu2: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
            let ts = unit_sphere_grid(k, 6);
            for t in &ts {
                let h = mixed_hessian(&s, &nu1, t.as_slice());
                if normalized_det(&h).abs() < 1e-10 {
                    continue;
                }
                let gap = grad_gap(&s, &nu1, &nu2);
                let m = bordered_matrix(&gap, &h);
                let hinv = h.clone().try_inverse().unwrap();
                let lhs = det(&m);
                let rhs = (-1.0f64).powi(k as i32)
                    * det(&h)
                    * det(&(&gap * hinv * gap.transpose()));
                assert!(
                    (lhs - rhs).abs() <= 1e-9 * lhs.abs().max(rhs.abs()).max(1e-12),
                    "identity violated: lhs={lhs:.6e} rhs={rhs:.6e}"
                );
            }
        }
    }

    #[test]
    fn normal_curvature_cases() {
        // d = k: empty transverse basis, value 1 by convention.
        let c = ComplexQuadratic::new(DMatrix::identity(1, 1)).unwrap();
        let s = realize_complex(&c); // d = 2, k = 2
        let v = normal_curvature_value(&s, &[0.0, 0.0], &[0.5, 0.5], &[0.0, 0.0], &[1.0, 0.0])
            .unwrap();
        assert_eq!(v, 1.0);
        // paraboloid with axis gap: transverse row is the other axis, value 1.
        let p = paraboloid(2);
        let v = normal_curvature_value(&p, &[-0.5, 0.0], &[0.5, 0.0], &[0.0, 0.0], &[1.0])
            .unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        // rank-deficient gap
        let err = normal_curvature_value(&p, &[0.3, 0.3], &[0.3, 0.3], &[0.0, 0.0], &[1.0]);
        assert!(matches!(err, Err(ConditionError::RankDeficientD { .. })));
    }

    #[test]
    fn normal_curvature_basis_invariance() {
        let mut r = rng(17);
        for trial in 0..50 {
            let d = r.gen_range(2..=4usize);
            let k = r.gen_range(1..d);
            let s = random_quadratic(&mut r, d, k);
            let nu1: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
            let nu2: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
            let ts = unit_sphere_grid(k, 8);
            let t = ts[trial % ts.len()].clone();
            let gap = grad_gap(&s, &nu1, &nu2);
            if linalg::min_singular_value(&gap) < 1e-6 {
                continue;
            }
            let h = mixed_hessian(&s, &nu1, t.as_slice());
            let n1 = orthonormal_complement(&gap);
            let v1 = det(&(&n1 * &h * n1.transpose())).abs();
            for seed in 0..3u64 {
                let n2 = orthonormal_complement_randomized(&gap, seed);
                let v2 = det(&(&n2 * &h * n2.transpose())).abs();
                assert!((v1 - v2).abs() <= 1e-9 * v1.max(1.0));
            }
        }
    }

    #[test]
    fn equivalence_on_random_surfaces_and_null_pair() {
        let mut r = rng(29);
        let mut samples_checked = 0;
        for _ in 0..200 {
            let d = r.gen_range(1..=4usize);
            let k = r.gen_range(1..=d.min(2));
            let s = random_quadratic(&mut r, d, k);
            let tuples: Vec<SampleTuple> = (0..3)
                .map(|_| SampleTuple {
                    nu1: (0..d).map(|_| r.gen_range(-1.0..1.0)).collect(),
                    nu2: (0..d).map(|_| r.gen_range(-1.0..1.0)).collect(),
                    nu: (0..d).map(|_| r.gen_range(-1.0..1.0)).collect(),
                    t: unit_sphere_grid(k, 8)[r.gen_range(0..2)].as_slice().to_vec(),
                })
                .collect();
            let rep = equivalence_bordered_normal(&s, &tuples).unwrap();
            assert!(rep.discrepancies.is_empty());
            samples_checked += rep.checked;
        }
        assert!(samples_checked > 100);

        // the complex null pair: both classifications vanish together
        let c = ComplexQuadratic::new(DMatrix::identity(2, 2)).unwrap();
        let s = realize_complex(&c);
        let tuple = SampleTuple {
            nu1: vec![0.0; 4],
            nu2: vec![1.0, 0.0, 0.0, 1.0],
            nu: vec![0.0; 4],
            t: vec![1.0, 0.0],
        };
        let gap = grad_gap(&s, &tuple.nu1, &tuple.nu2);
        let h = mixed_hessian(&s, &tuple.nu, &tuple.t);
        let bord = bordered_matrix(&gap, &h);
        let scale = linalg::hadamard_scale(&bord);
        let n = orthonormal_complement(&gap);
        assert!(det(&bord).abs() / scale < 1e-10);
        assert!(det(&(&n * &h * n.transpose())).abs() < 1e-10);
        let rep = equivalence_bordered_normal(&s, &[tuple]).unwrap();
        assert!(rep.discrepancies.is_empty());
    }

    #[test]
    fn injectivity_margins() {
        let grid = SamplingSpec { nu_per_axis: 4, t_samples: 2 };
        let b = BoxND::cube(&[0.0, 0.0], 0.5);
        let p = paraboloid(2);
        assert!((injectivity_margin(&p, &b, &[1.0], &grid) - 1.0).abs() < 1e-12);
        let saddle = named_surface("saddle", &NamedParams::default()).unwrap();
        assert!((injectivity_margin(&saddle, &b, &[1.0], &grid) - 1.0).abs() < 1e-12);
        let c = ComplexQuadratic::new(DMatrix::identity(2, 2)).unwrap();
        let s = realize_complex(&c);
        let b4 = BoxND::cube(&[0.0; 4], 0.5);
        assert!((injectivity_margin(&s, &b4, &[1.0, 0.0], &grid) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn complex_condition_values() {
        let id = DMatrix::identity(2, 2);
        // dz = (1,0) + i(0,1): the degenerate direction
        assert!(complex_condition(&id, (&[0.0, 0.0], &[0.0, 0.0]), (&[1.0, 0.0], &[0.0, 1.0])) < 1e-15);
        // real separation (1,0): value 1
        assert!(
            (complex_condition(&id, (&[0.0, 0.0], &[0.0, 0.0]), (&[1.0, 0.0], &[0.0, 0.0])) - 1.0)
                .abs()
                < 1e-15
        );
        // agreement with the real form
        let mut r = rng(31);
        for _ in 0..100 {
            let d_mat = random_symmetric(&mut r, 2);
            let dx: Vec<f64> = (0..2).map(|_| r.gen_range(-1.0..1.0)).collect();
            let dy: Vec<f64> = (0..2).map(|_| r.gen_range(-1.0..1.0)).collect();
            let a = complex_condition(&d_mat, (&[0.0, 0.0], &[0.0, 0.0]), (&dx, &dy));
            let b = complex_condition_real_form(&d_mat, &dx, &dy);
            assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }
}
