//! Measures where the per-slice transform overtakes direct pointwise
//! evaluation. Ignored by default; run with
//! `cargo test --test bench_crossover -- --ignored --nocapture`.

use std::time::Instant;

use restrictlab::extension::{extend, extend_grid, GridFunction, GridResolution, SpaceTimeGrid};
use restrictlab::linalg::BoxND;
use restrictlab::surfaces::{named_surface, NamedParams};

#[test]
#[ignore = "timing measurement, run manually"]
fn slice_transform_vs_direct_crossover() {
    restrictlab::init_threads();
    let s = named_surface("paraboloid", &NamedParams { d: Some(2), ..Default::default() })
        .unwrap();
    println!("n, grid points, slice-transform s, direct s, ratio");
    for n in [16usize, 32, 64, 128] {
        let f = GridFunction::random(BoxND::cube(&[0.0, 0.0], 2.0), vec![n, n], 1);
        let grid =
            SpaceTimeGrid::for_inputs(&s, &[&f], &[0.0; 3], 8.0, GridResolution::default())
                .unwrap();
        let t0 = Instant::now();
        let field = extend_grid(&s, &f, &grid).unwrap();
        let fft_time = t0.elapsed().as_secs_f64();
        // direct evaluation at the same number of points (capped so the
        // slow side stays measurable)
        let pts: Vec<Vec<f64>> = (0..grid.cells().min(2000))
            .map(|i| grid.point(i % grid.t_cells(), i % grid.x_cells()))
            .collect();
        let t1 = Instant::now();
        let _ = extend(&s, &f, &pts);
        let direct_per_pt = t1.elapsed().as_secs_f64() / pts.len() as f64;
        let direct_time = direct_per_pt * field.values.len() as f64;
        println!(
            "{n}, {}, {fft_time:.3}, {direct_time:.3}, {:.1}x",
            field.values.len(),
            direct_time / fft_time
        );
    }
}
