//! Two semicircles of variance 1 convolve to a semicircle of variance 2.
//! Compares the subordination solver with the closed form and prints the density.
//!
//! Run with `cargo run --release --example convolve_semicircles`.

use freeconv::density::{density_grid, DensityConfig};
use freeconv::edge::locate_edges;
use freeconv::measure::SpectralMeasure;
use freeconv::subordination::{solve_subordination, SolverConfig};
use num_complex::Complex64;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sc = SpectralMeasure::semicircle(1.0)?;
    let cfg = SolverConfig::default();

    for (x, eta) in [(0.0, 1.0), (1.0, 0.1), (2.5, 0.01), (-3.0, 1e-3)] {
        let z = Complex64::new(x, eta);
        let p = solve_subordination(&sc, &sc, z, &cfg, None)?;
        let r = (z * z - 8.0).sqrt();
        let exact = if ((-z + r) / 4.0).im > 0.0 { (-z + r) / 4.0 } else { (-z - r) / 4.0 };
        println!(
            "z = {z:.3}: m = {:.12}  error {:.1e}  omega = ({:.6}, {:.6})  residual {:.1e}",
            p.m,
            (p.m - exact).norm(),
            p.omega1,
            p.omega2,
            p.residual
        );
    }

    let edges = locate_edges(&sc, &sc, &cfg)?;
    println!("edges [{:.12}, {:.12}], 2√2 = {:.12}", edges.lower, edges.upper, 8f64.sqrt());

    let grid: Vec<f64> = (0..=16).map(|k| -3.0 + 6.0 * k as f64 / 16.0).collect();
    let table = density_grid(&sc, &sc, &grid, &DensityConfig::default())?;
    for (x, rho) in grid.iter().zip(&table.rho) {
        let exact = (8.0 - x * x).max(0.0).sqrt() / (4.0 * std::f64::consts::PI);
        println!("x = {x:+.3}  rho = {rho:.8}  closed form {exact:.8}");
    }
    Ok(())
}
