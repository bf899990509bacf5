//! Tubes, their pairwise intersections, the resonance surface of matched
//! frequency/value sums, and the cone transversality witness.
//!
//! A tube of scale `R` around frequency `nu` is the slab
//! `|x - l + sum_j t_j grad phi_j(nu)| <= C R^{1/2 + delta}`; all
//! unspecified thickening constants are pinned to explicit values and
//! reported, never left implicit.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conditions::{grad_gap, mixed_hessian};
use crate::linalg::{self, det, orthonormal_complement, BoxND};
use crate::surfaces::Surface;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("gradient-gap matrix rank deficient (sigma_min = {0:.3e})")]
    RankDeficientD(f64),
    #[error("Newton did not reach residual {target:.1e} in {iters} iterations (got {residual:.3e})")]
    NoConvergence { iters: usize, residual: f64, target: f64 },
    #[error("solution left the base box at {0:?}")]
    LeftBox(Vec<f64>),
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),
}

/// Slab `|x - base + sum_j t_j grad phi_j(freq)| <= width_constant *
/// R^{1/2 + thickening}` in `R^{d+k}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tube {
    /// Spatial base point `l` (a lattice point in the wave-packet setting).
    pub base: Vec<f64>,
    /// Frequency center `nu` in `I^d`.
    pub freq: Vec<f64>,
    /// Scale `R >= 4`.
    pub r: f64,
    /// Thickening exponent `delta >= 0`.
    pub thickening: f64,
    /// Multiplicative width constant (default 1, always recorded).
    pub width_constant: f64,
}

impl Tube {
    pub fn new(base: Vec<f64>, freq: Vec<f64>, r: f64, thickening: f64) -> Self {
        assert!(r >= 4.0, "tube scale R must be >= 4");
        assert!(thickening >= 0.0);
        Tube { base, freq, r, thickening, width_constant: 1.0 }
    }

    /// Membership radius `C R^{1/2 + delta}`.
    pub fn radius(&self) -> f64 {
        self.width_constant * self.r.powf(0.5 + self.thickening)
    }

    /// Distance from `x` to the core point of the slab at time `t`,
    /// `|x - l + sum_j t_j grad phi_j(nu)|`.
    pub fn slab_distance(&self, s: &Surface, x: &[f64], t: &[f64]) -> f64 {
        let g = s.grad(&self.freq);
        let tv = DVector::from_column_slice(t);
        let drift = g.transpose() * tv;
        (0..x.len())
            .map(|a| {
                let v = x[a] - self.base[a] + drift[a];
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, s: &Surface, x: &[f64], t: &[f64]) -> bool {
        self.slab_distance(s, x, t) <= self.radius()
    }

    /// Euclidean distance from a space-time point to the tube core line
    /// `{(l - sum t_j grad phi_j(nu), t) : t in R^k}` (exact least squares
    /// in `t`).
    pub fn core_distance(&self, s: &Surface, point: &[f64]) -> f64 {
        let d = self.base.len();
        let k = s.codim();
        let (x, t0) = point.split_at(d);
        let g = s.grad(&self.freq);
        // minimize |x - l + G^t t|^2 + |t - t0|^2 over t:
        // (G G^t + I) t = t0 - G (x - l)
        let dx = DVector::from_fn(d, |a, _| x[a] - self.base[a]);
        let rhs = DVector::from_column_slice(t0) - &g * &dx;
        let lhs = &g * g.transpose() + DMatrix::identity(k, k);
        let t = lhs.lu().solve(&rhs).expect("G G^t + I is positive definite");
        let xres = &dx + g.transpose() * &t;
        let tres = DVector::from_column_slice(t0) - &t;
        (xres.norm_squared() + tres.norm_squared()).sqrt()
    }
}

/// Outcome of the sampled two-tube intersection measurement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntersectionReport {
    /// Largest pairwise distance among accepted intersection samples.
    pub diameter: f64,
    /// Largest distance of a sample from the nominal intersection center.
    pub max_from_center: f64,
    /// `(2 / sigma_min + 2) R^{1/2}`.
    pub bound: f64,
    pub sigma_min: f64,
    pub samples_found: usize,
    pub pass: bool,
}

/// Samples `pi_1 cap pi_2` by rejection around the least-squares joint
/// center; asserts the intersection sits inside the ball of radius
/// `(2/sigma_min(Gap) + 2) R^{1/2}` around that center.
pub fn tube_intersection_diameter(
    s: &Surface,
    t1: &Tube,
    t2: &Tube,
    samples: usize,
    seed: u64,
) -> Result<IntersectionReport, GeometryError> {
    let d = s.dim();
    let k = s.codim();
    let gap = grad_gap(s, &t1.freq, &t2.freq);
    let sigma_min = linalg::min_singular_value(&gap);
    if sigma_min < 1e-10 {
        return Err(GeometryError::RankDeficientD(sigma_min));
    }
    assert!((t1.r - t2.r).abs() < 1e-9, "tubes must share one scale R");
    let r_memb = t1.radius().max(t2.radius());
    // joint center: t* from Gap^t t ~ l1 - l2, then x* on the first core
    let g1 = s.grad(&t1.freq);
    let lhs = &gap * gap.transpose();
    let rhs = DVector::from_fn(d, |a, _| t1.base[a] - t2.base[a]);
    let t_star = lhs
        .lu()
        .solve(&(&gap * rhs))
        .ok_or(GeometryError::RankDeficientD(sigma_min))?;
    let x_star = DVector::from_fn(d, |a, _| t1.base[a]) - g1.transpose() * &t_star;
    let t_halfwidth = 2.0 * r_memb / sigma_min;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accepted: Vec<Vec<f64>> = Vec::new();
    for _ in 0..samples {
        let t: Vec<f64> =
            (0..k).map(|j| t_star[j] + rng.gen_range(-t_halfwidth..t_halfwidth)).collect();
        let drift = g1.transpose() * DVector::from_column_slice(&t);
        let x: Vec<f64> = (0..d)
            .map(|a| t1.base[a] - drift[a] + rng.gen_range(-1.2..1.2) * r_memb)
            .collect();
        if t1.contains(s, &x, &t) && t2.contains(s, &x, &t) {
            let mut p = x;
            p.extend(t);
            accepted.push(p);
        }
    }
    let center: Vec<f64> = x_star.iter().cloned().chain(t_star.iter().cloned()).collect();
    let mut diameter: f64 = 0.0;
    let mut max_from_center: f64 = 0.0;
    for (i, p) in accepted.iter().enumerate() {
        let dist_c: f64 =
            p.iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        max_from_center = max_from_center.max(dist_c);
        for q in accepted.iter().skip(i + 1) {
            let dd: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            diameter = diameter.max(dd);
        }
    }
    let bound = (2.0 / sigma_min + 2.0) * t1.r.sqrt();
    Ok(IntersectionReport {
        diameter,
        max_from_center,
        bound,
        sigma_min,
        samples_found: accepted.len(),
        pass: max_from_center <= bound,
    })
}

/// A point of the resonance surface: `nu'` in `S1` with
/// `nu' + nu2' - nu1` in `S2` and matched `Phi` sums.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResonancePoint {
    pub point: Vec<f64>,
    /// Max-norm of the defining constraint at the returned point.
    pub residual: f64,
}

/// Constraint `F(nu') = Phi(nu1) + Phi(nu' + nu2' - nu1) - Phi(nu') -
/// Phi(nu2')` whose zero set (intersected with the boxes) is the
/// resonance surface.
pub fn resonance_residual(s: &Surface, nu1: &[f64], nu2p: &[f64], nup: &[f64]) -> DVector<f64> {
    let partner: Vec<f64> =
        nup.iter().zip(nu2p.iter().zip(nu1)).map(|(a, (b, c))| a + b - c).collect();
    s.phi(nu1) + s.phi(&partner) - s.phi(nup) - s.phi(nu2p)
}

/// Newton projection onto the resonance surface from `seed`, staying in
/// `s1` (the partner point must land in `s2` within `1e-9`). Damped steps
/// (factor 1/2 on rejection), at most 50 iterations, target residual
/// `1e-10`.
pub fn solve_resonance(
    s: &Surface,
    nu1: &[f64],
    nu2p: &[f64],
    seed: &[f64],
    s1: &BoxND,
    s2: &BoxND,
) -> Result<ResonancePoint, GeometryError> {
    const MAX_ITERS: usize = 50;
    const TARGET: f64 = 1e-10;
    let d = s.dim();
    if !s1.contains(seed, 1e-12) {
        return Err(GeometryError::LeftBox(seed.to_vec()));
    }
    let mut nup = seed.to_vec();
    let mut res = resonance_residual(s, nu1, nu2p, &nup);
    for _ in 0..MAX_ITERS {
        if res.amax() <= TARGET {
            break;
        }
        let partner: Vec<f64> =
            nup.iter().zip(nu2p.iter().zip(nu1)).map(|(a, (b, c))| a + b - c).collect();
        let jac = s.grad(&partner) - s.grad(&nup);
        let jjt = &jac * jac.transpose();
        let lam = jjt
            .lu()
            .solve(&res)
            .ok_or_else(|| GeometryError::PreconditionFailed("rank-deficient Jacobian".into()))?;
        let step = -(jac.transpose() * lam);
        // damped line search on the residual norm
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let cand: Vec<f64> = (0..d).map(|a| nup[a] + scale * step[a]).collect();
            let cres = resonance_residual(s, nu1, nu2p, &cand);
            if cres.norm() < res.norm() {
                nup = cand;
                res = cres;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if res.amax() > TARGET {
        return Err(GeometryError::NoConvergence {
            iters: MAX_ITERS,
            residual: res.amax(),
            target: TARGET,
        });
    }
    let partner: Vec<f64> =
        nup.iter().zip(nu2p.iter().zip(nu1)).map(|(a, (b, c))| a + b - c).collect();
    if !s1.contains(&nup, 1e-9) {
        return Err(GeometryError::LeftBox(nup));
    }
    if !s2.contains(&partner, 1e-9) {
        return Err(GeometryError::LeftBox(partner));
    }
    let residual = res.amax();
    Ok(ResonancePoint { point: nup, residual })
}

/// Settings for the cone transversality witness.
#[derive(Debug, Clone)]
pub struct WitnessConfig {
    /// Random shifts `u` applied to the opposite tube.
    pub shifts: usize,
    /// Points sampled on the cone per shift.
    pub samples: usize,
    pub seed: u64,
    /// Reported bound is `c1 * R^{1/2 + c2 delta}`.
    pub c1: f64,
    pub c2: f64,
}

impl Default for WitnessConfig {
    fn default() -> Self {
        WitnessConfig { shifts: 12, samples: 4000, seed: 7, c1: 8.0, c2: 2.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WitnessReport {
    /// Largest diameter of (cone cap thickened opposite tube) over shifts.
    pub diameter: f64,
    /// `c1 R^{1/2 + c2 delta}` with the constants recorded.
    pub bound: f64,
    /// Smallest `|det|` of the tangent-frame matrix over sampled bases.
    pub min_abs_det: f64,
    pub pass: bool,
}

/// Determinant of the `(d+k) x (d+k)` tangent-frame matrix at a base point
/// of the resonance surface: rows are the cone tangents
/// `(grad phi_j(nu0), -e_j)` and `(v_i H(t0), 0)` together with the
/// opposite-plane tangents `(grad phi_j(nu2), -e_j)`.
pub fn tangent_frame_det(
    s: &Surface,
    nu1: &[f64],
    nu2p: &[f64],
    nu0: &[f64],
    nu2: &[f64],
    t0: &[f64],
) -> f64 {
    let d = s.dim();
    let k = s.codim();
    let partner: Vec<f64> =
        nu0.iter().zip(nu2p.iter().zip(nu1)).map(|(a, (b, c))| a + b - c).collect();
    let jac = s.grad(&partner) - s.grad(nu0);
    let v = orthonormal_complement(&jac);
    let h = mixed_hessian(s, nu0, t0);
    let vh = &v * &h;
    let g0 = s.grad(nu0);
    let g2 = s.grad(nu2);
    let mut m = DMatrix::zeros(d + k, d + k);
    for j in 0..k {
        for a in 0..d {
            m[(j, a)] = g0[(j, a)];
            m[(d + j, a)] = g2[(j, a)];
        }
        m[(j, d + j)] = -1.0;
        m[(d + j, d + j)] = -1.0;
    }
    for i in 0..d - k {
        for a in 0..d {
            m[(k + i, a)] = vh[(i, a)];
        }
    }
    det(&m)
}

/// Samples the truncated cone over the resonance surface, intersects it
/// with translates of the thickened opposite tube and reports the worst
/// diameter, together with the minimum tangent-frame determinant.
pub fn cone_transversality_witness(
    s: &Surface,
    nu1: &[f64],
    nu2p: &[f64],
    nu2: &[f64],
    r: f64,
    delta: f64,
    s1: &BoxND,
    s2: &BoxND,
    cfg: &WitnessConfig,
) -> Result<WitnessReport, GeometryError> {
    let d = s.dim();
    let k = s.codim();
    let gap = grad_gap(s, nu1, nu2p);
    let sigma = linalg::min_singular_value(&gap);
    if d > k && sigma < 1e-10 {
        return Err(GeometryError::PreconditionFailed(format!(
            "gap matrix nearly rank deficient (sigma_min = {sigma:.3e})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // base points on the resonance surface from grid seeds
    let mut bases: Vec<Vec<f64>> = Vec::new();
    for seed_pt in s1.corner_grid(3) {
        if let Ok(p) = solve_resonance(s, nu1, nu2p, &seed_pt, s1, s2) {
            bases.push(p.point);
        }
    }
    if bases.is_empty() {
        return Err(GeometryError::PreconditionFailed(
            "no resonance base points converged".into(),
        ));
    }

    // tangent-frame determinant over base points and |t| = 1 directions
    let mut min_abs_det = f64::INFINITY;
    for nu0 in &bases {
        for t0 in linalg::unit_sphere_grid(k, 8) {
            let v = tangent_frame_det(s, nu1, nu2p, nu0, nu2, t0.as_slice()).abs();
            min_abs_det = min_abs_det.min(v);
        }
    }

    // sampled cone/tube intersection diameter over shifts that are aimed
    // so the two sets actually meet
    let thick = r.powf(0.5 + delta);
    let tube2 = Tube {
        base: vec![0.0; d],
        freq: nu2.to_vec(),
        r,
        thickening: delta,
        width_constant: 1.0,
    };
    let g2 = s.grad(nu2);
    let dyadic_span = (2.0 * r.powf(delta)).log2().max(0.1);
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.shifts {
        let nu0 = &bases[rng.gen_range(0..bases.len())];
        let g0 = s.grad(nu0);
        let tmag = r.powf(1.0 - delta) * rng.gen_range(1.0..2.0);
        let tdir: Vec<f64> = {
            let v: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
            v.into_iter().map(|x| x * tmag / n).collect()
        };
        let drift0 = g0.transpose() * DVector::from_column_slice(&tdir);
        let anchor: Vec<f64> = (0..d).map(|a| -drift0[a]).collect();
        let drift2 = g2.transpose() * DVector::from_column_slice(&tdir);
        // u translates the opposite tube core onto the anchor point
        let u: Vec<f64> = (0..d).map(|a| anchor[a] + drift2[a]).collect();

        let mut pts: Vec<Vec<f64>> = Vec::new();
        for _ in 0..cfg.samples {
            let nu_b = &bases[rng.gen_range(0..bases.len())];
            let gb = s.grad(nu_b);
            let mag = r.powf(1.0 - delta) * 2f64.powf(rng.gen_range(0.0..dyadic_span));
            if mag > 2.0 * r {
                continue;
            }
            let t: Vec<f64> = {
                let v: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
                v.into_iter().map(|x| x * mag / n).collect()
            };
            let driftb = gb.transpose() * DVector::from_column_slice(&t);
            let x: Vec<f64> =
                (0..d).map(|a| -driftb[a] + rng.gen_range(-thick..thick)).collect();
            // membership in the shifted opposite tube
            let xs: Vec<f64> = (0..d).map(|a| x[a] - u[a]).collect();
            if tube2.contains(s, &xs, &t) {
                let mut p = x;
                p.extend(t);
                pts.push(p);
            }
        }
        for (i, p) in pts.iter().enumerate() {
            for q in pts.iter().skip(i + 1) {
                let dd: f64 =
                    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                worst = worst.max(dd);
            }
        }
    }
    let bound = cfg.c1 * r.powf(0.5 + cfg.c2 * delta);
    Ok(WitnessReport {
        diameter: worst,
        bound,
        min_abs_det,
        pass: worst <= bound && min_abs_det > 1e-8,
    })
}
