//! Monte Carlo behaviour of the matrix model at moderate N.

use freeconv::measure::SpectralMeasure;
use freeconv::rmt::{approx_subordination, green_probe, sample_ensemble, stochastic_domination_test, Field, GreenContext};
use freeconv::stats::median;
use freeconv::subordination::{solve_subordination, SolverConfig};
use num_complex::Complex64;

fn midpoints(n: usize) -> Vec<f64> {
    (1..=n).map(|j| (j as f64 - 0.5) / n as f64).collect()
}

#[test]
fn approximate_subordination_is_within_one_over_n_eta() {
    let n = 500;
    let a = midpoints(n);
    let mu = SpectralMeasure::empirical(&a).unwrap();
    let z = Complex64::new(1.0, 0.1);
    let pair = solve_subordination(&mu, &mu, z, &SolverConfig::default(), None).unwrap();
    let devs: Vec<f64> = (1..=20)
        .map(|seed| {
            let s = sample_ensemble(&a, &a, seed, Field::Unitary, true).unwrap();
            let ctx = GreenContext::new(&s).unwrap();
            let (_, wb) = approx_subordination(&ctx, &green_probe(&ctx, z).unwrap()).unwrap();
            (wb - pair.omega2).norm()
        })
        .collect();
    let bound = 10.0 / (n as f64 * z.im);
    println!("median |Λ_B| = {:.3e}, bound {bound:.3e}", median(&devs));
    assert!(median(&devs) <= bound);
}

#[test]
fn averaged_law_passes_domination_and_absurd_bound_fails() {
    let n = 500;
    let a = midpoints(n);
    let mu = SpectralMeasure::empirical(&a).unwrap();
    let z = Complex64::new(0.8, 0.05);
    let m = solve_subordination(&mu, &mu, z, &SolverConfig::default(), None).unwrap().m;
    let stats: Vec<f64> = (1..=20)
        .map(|seed| {
            let s = sample_ensemble(&a, &a, seed, Field::Unitary, false).unwrap();
            n as f64 * z.im * (s.stieltjes(z) - m).norm()
        })
        .collect();
    let ok = stochastic_domination_test(&stats, |x| *x, n, 1.0, 0.25).unwrap();
    assert!(ok.pass, "{ok:?}");
    let tight = stochastic_domination_test(&stats, |x| *x, n, 1.0 / n as f64, 0.25).unwrap();
    assert!(!tight.pass);
    assert!(stochastic_domination_test(&stats[..9], |x| *x, n, 1.0, 0.25).is_err());
}

#[test]
fn permuting_a_preserves_spectral_moments_in_distribution() {
    let n = 40;
    let a: Vec<f64> = midpoints(n).iter().map(|x| x * x).collect();
    let b = midpoints(n);
    let mut perm = a.clone();
    perm.reverse();
    perm.rotate_left(7);
    let moments = |diag: &[f64], seed: u64| {
        let s = sample_ensemble(diag, &b, seed, Field::Unitary, false).unwrap();
        let m1 = s.eigenvalues.iter().sum::<f64>() / n as f64;
        let m2 = s.eigenvalues.iter().map(|l| l * l).sum::<f64>() / n as f64;
        (m1, m2)
    };
    let seeds = 1..=100u64;
    let x: Vec<(f64, f64)> = seeds.clone().map(|s| moments(&a, s)).collect();
    let y: Vec<(f64, f64)> = seeds.map(|s| moments(&perm, s + 1000)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let (x1, x2): (Vec<f64>, Vec<f64>) = x.into_iter().unzip();
    let (y1, y2): (Vec<f64>, Vec<f64>) = y.into_iter().unzip();
    // The first moment is the trace and exactly equal.
    assert!((mean(&x1) - mean(&y1)).abs() < 1e-12);
    let se = ((var(&x2) + var(&y2)) / 100.0).sqrt();
    assert!((mean(&x2) - mean(&y2)).abs() <= 4.0 * se, "{} vs {} (se {se:e})", mean(&x2), mean(&y2));
}
