//! Numerical laboratory for Fourier extension operators over surfaces of
//! codimension `k >= 1` in `R^{d+k}`.
//!
//! The crate is organized around the objects a desk-scale restriction
//! experiment needs:
//!
//! * [`surfaces`] — surfaces `xi -> (xi, Phi(xi))` with exact gradient and
//!   Hessian oracles (quadratic family, complex quadratic surfaces, custom).
//! * [`conditions`] — curvature/transversality matrices and grid-sampled
//!   certification of the nondegeneracy conditions they enter.
//! * [`geometry`] — tubes, their intersections, the resonance surface and
//!   the cone transversality witness.
//! * [`extension`] — quadrature evaluation of the extension operator,
//!   space-time grids, `L^q` norms and a bilinear `L^2` oracle.
//! * [`wavepackets`] — the wave-packet decomposition with partition
//!   kernels, coefficients and profiles.
//! * [`incidence`] — tube/cube incidence tables, dyadic load classes,
//!   anchor-cube relations and the Whitney decomposition.
//! * [`experiments`] — Knapp slabs, exponent sweeps, the model-surface
//!   Whitney pipeline and the config-driven experiment runner.

pub mod conditions;
pub mod experiments;
pub mod extension;
pub mod geometry;
pub mod incidence;
pub mod linalg;
pub mod surfaces;
pub mod wavepackets;

use std::sync::Once;

static THREAD_INIT: Once = Once::new();

/// Initializes the global worker pool, honoring `RESTRICTLAB_THREADS`.
///
/// Safe to call multiple times; only the first call has an effect. When the
/// variable is unset the rayon default (one worker per core) is used.
pub fn init_threads() {
    THREAD_INIT.call_once(|| {
        if let Ok(v) = std::env::var("RESTRICTLAB_THREADS") {
            if let Ok(n) = v.trim().parse::<usize>() {
                if n >= 1 {
                    // Ignore the error: a pool may already exist in tests.
                    let _ = rayon::ThreadPoolBuilder::new()
                        .num_threads(n)
                        .build_global();
                }
            }
        }
    });
}
