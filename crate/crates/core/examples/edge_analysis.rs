//! Edge of uniform[0,1] ⊞ uniform[0,1]: location, curvature, square-root
//! expansion and the scaling of Im m, |S| and |ω'| near the edge.
//!
//! Run with `cargo run --release --example edge_analysis`.

use freeconv::edge::{edge_expansion, locate_edges, scaling_probe, ProbeRegion};
use freeconv::measure::SpectralMeasure;
use freeconv::subordination::{boundary_values, SolverConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let u = SpectralMeasure::uniform(0.0, 1.0)?;
    let cfg = SolverConfig::default();

    let t = std::time::Instant::now();
    let mut report = locate_edges(&u, &u, &cfg)?;
    println!("edges: [{:.12}, {:.12}]  |S(E-)| = {:.1e}", report.lower, report.upper, report.edge_residual);
    println!(
        "omega at edge: ({:.10}, {:.10}), gaps k0 = ({:.6}, {:.6})",
        report.omega1.unwrap(),
        report.omega2.unwrap(),
        report.gap1.unwrap(),
        report.gap2.unwrap()
    );
    println!("z''(w_e) = {:.8}", report.z_second.unwrap());

    let exp = edge_expansion(&u, &u, &report, &cfg)?;
    println!(
        "fitted coefficient {:.8} vs sqrt(2/|z''|) = {:.8} ({:+.2e} rel), form {:?}",
        exp.coefficient,
        exp.predicted,
        exp.coefficient / exp.predicted - 1.0,
        exp.form
    );
    println!("omega exponent {:.4} ± {:.4}, density coefficient c_rho = {:.6}", exp.exponent, exp.exponent_stderr, exp.density_coefficient);
    report.expansion = Some(exp);

    let probe = scaling_probe(&u, &u, &report, &cfg)?;
    println!("Im m exponent inside: {:.4}", probe.inside_exponent);
    println!("|S| exponent: {:.4}", probe.s_exponent);
    println!("|omega'| exponents: {:.4}, {:.4}", probe.omega1_prime_exponent, probe.omega2_prime_exponent);
    println!("outside: max Im m sqrt(kappa)/eta = {:.4} (bound 3)", probe.outside_ratio);
    for row in probe.rows.iter().filter(|r| r.region == ProbeRegion::Outside) {
        println!("  kappa {:.1e}: Im m sqrt(kappa)/eta = {:.4}", row.kappa, row.im_m * row.kappa.sqrt() / row.eta);
    }
    // Small-κ limit of that ratio is π c_ρ / 2.
    for kappa in [1e-8, 1e-6, 1e-4] {
        let p = boundary_values(&u, &u, report.lower + kappa, &cfg)?;
        println!("  rho(E- + {kappa:.0e}) / sqrt(kappa) = {:.6}", p.m.im / std::f64::consts::PI / kappa.sqrt());
    }
    println!("elapsed {:.2?}", t.elapsed());
    Ok(())
}
