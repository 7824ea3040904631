//! Density, distribution function and quantiles of uniform[0,1] ⊞ uniform[0,1],
//! next to the same quantities for the N-point discretized pair.
//!
//! Run with `cargo run --release --example density_quantiles`.

use freeconv::density::{density_grid, ConvolutionCdf, DensityConfig, QuantileSource};
use freeconv::measure::SpectralMeasure;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = DensityConfig::default();
    let u = SpectralMeasure::uniform(0.0, 1.0)?;

    let t = std::time::Instant::now();
    let cdf = ConvolutionCdf::new(&u, &u, &cfg)?;
    println!(
        "continuous pair: support [{:.9}, {:.9}], mass {:.12}, {} panels ({:.2?})",
        cdf.lower(),
        cdf.upper(),
        cdf.mass(),
        cdf.panel_count(),
        t.elapsed()
    );
    let grid: Vec<f64> = (0..=8).map(|k| 0.25 * k as f64 - 0.0).collect();
    let table = density_grid(&u, &u, &grid, &cfg)?;
    for (x, r) in table.x.iter().zip(&table.rho) {
        println!("  x = {x:.2}  rho = {r:.10}  cdf = {:.10}", cdf.cdf(*x));
    }

    for n in [100, 1000] {
        let t = std::time::Instant::now();
        let a = u.discretize(n)?;
        let discrete = ConvolutionCdf::new(&a, &a, &cfg)?;
        let gs = discrete.quantile_table(n, QuantileSource::DiscretizedPair);
        let gc = cdf.quantile_table(n, QuantileSource::ContinuousPair);
        let worst = (0..n / 10)
            .map(|i| (gs.gamma[i] - gc.gamma[i]).abs() * ((i + 1) as f64).powf(1.0 / 3.0) * (n as f64).powf(2.0 / 3.0))
            .fold(0.0, f64::max);
        println!(
            "N = {n}: discretized edges [{:.9}, {:.9}], mass {:.10}; max_(i<=N/10) |gamma*_i - gamma_i| i^(1/3) N^(2/3) = {worst:.3e} ({:.2?})",
            discrete.lower(),
            discrete.upper(),
            discrete.mass(),
            t.elapsed()
        );
    }
    Ok(())
}
