//! Samples H = A + U B U* with Haar U, then checks the exact finite-N
//! identities and the partial decomposition of U, and compares the
//! approximate subordination functions with the deterministic ones.
//!
//! Run with `cargo run --release --example haar_identities [N]`.

use freeconv::measure::SpectralMeasure;
use freeconv::rmt::{approx_subordination, fluctuation_observables, green_probe, partial_decomposition, sample_ensemble, Field, FluctuationOptions, GreenContext};
use freeconv::subordination::{solve_subordination, SolverConfig};
use num_complex::Complex64;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(200);
    let a: Vec<f64> = (1..=n).map(|j| (j as f64 - 0.5) / n as f64).collect();
    let sample = sample_ensemble(&a, &a, 7, Field::Unitary, true)?;
    println!("N = {n}: spectrum [{:.6}, {:.6}]", sample.eigenvalues[0], sample.eigenvalues[n - 1]);

    let ctx = GreenContext::new(&sample)?;
    let z = Complex64::new(1.0, 0.05);
    let rep = fluctuation_observables(&ctx, z, None, FluctuationOptions { direct_s: n <= 256, perturb: false })?;
    for c in &rep.identities {
        println!("  {:<28} {:.2e} {}", c.name, c.residual, if c.pass { "ok" } else { "FAIL" });
    }
    println!("Upsilon = {:.3e}, max |T_i| = {:.3e}", rep.upsilon, rep.t.iter().map(|t| t.norm()).fold(0.0, f64::max));

    let u = sample.u.as_ref();
    for i in [0, n / 2, n - 1] {
        let parts = partial_decomposition(u, &a, i)?;
        let worst = parts.residuals.iter().map(|c| c.residual).fold(0.0, f64::max);
        println!("decomposition at i = {i}: theta = {:.4}, worst residual {worst:.2e}", parts.theta);
    }

    let mu = SpectralMeasure::empirical(&a)?;
    let pair = solve_subordination(&mu, &mu, z, &SolverConfig::default(), None)?;
    let (wa, wb) = approx_subordination(&ctx, &green_probe(&ctx, z)?)?;
    println!("omega_A^c - omega_1 = {:.3e}, omega_B^c - omega_2 = {:.3e}", (wa - pair.omega1).norm(), (wb - pair.omega2).norm());
    Ok(())
}
