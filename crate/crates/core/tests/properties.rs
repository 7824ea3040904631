//! Randomized invariants of transforms, the subordination solver and the matrix model.

use freeconv::measure::{MeasureSpec, SpectralMeasure};
use freeconv::rmt::{approx_subordination, assemble_and_diagonalize, fluctuation_observables, green_probe, sample_ensemble, sample_haar, unitarity_defect, Field, FluctuationOptions, GreenContext};
use freeconv::subordination::{solve_subordination, SolverConfig};
use num_complex::Complex64;
use proptest::prelude::*;

fn continuous_spec() -> impl Strategy<Value = MeasureSpec> {
    let interval = (-2.0..2.0f64, 0.2..3.0f64).prop_map(|(a, w)| [a, a + w]);
    prop_oneof![
        interval.clone().prop_map(|support| MeasureSpec::Uniform { support }),
        interval.clone().prop_map(|support| MeasureSpec::Arcsine { support }),
        (0.1..3.0f64).prop_map(|variance| MeasureSpec::Semicircle { variance }),
        (interval, -0.9..0.9f64, -0.9..0.9f64).prop_map(|(support, t_minus, t_plus)| MeasureSpec::PowerLaw { support, t_minus, t_plus }),
    ]
}

fn any_spec() -> impl Strategy<Value = MeasureSpec> {
    prop_oneof![
        4 => continuous_spec(),
        1 => (-1.0..1.0f64, 0.1..2.0f64, 0.05..0.95f64).prop_map(|(x, d, weight)| MeasureSpec::TwoAtoms { locations: [x, x + d], weight }),
    ]
}

fn scaled(spec: &MeasureSpec, s: f64) -> MeasureSpec {
    match spec.clone() {
        MeasureSpec::Uniform { support } => MeasureSpec::Uniform { support: [support[0] * s, support[1] * s] },
        MeasureSpec::Arcsine { support } => MeasureSpec::Arcsine { support: [support[0] * s, support[1] * s] },
        MeasureSpec::Semicircle { variance } => MeasureSpec::Semicircle { variance: variance * s * s },
        MeasureSpec::PowerLaw { support, t_minus, t_plus } => MeasureSpec::PowerLaw { support: [support[0] * s, support[1] * s], t_minus, t_plus },
        other => other,
    }
}

fn measure(spec: &MeasureSpec) -> SpectralMeasure {
    SpectralMeasure::from_spec(spec).unwrap()
}

fn upper_half_plane() -> impl Strategy<Value = Complex64> {
    (-4.0..4.0f64, -6.0..1.0f64).prop_map(|(re, log_eta)| Complex64::new(re, 10f64.powf(log_eta)))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 96, ..ProptestConfig::default() })]

    #[test]
    fn pick_property_and_resolvent_bound(spec in any_spec(), z in upper_half_plane()) {
        let mu = measure(&spec);
        let t = mu.transform(z).unwrap();
        prop_assert!(t.m.im > 0.0);
        prop_assert!(t.m.norm() <= (1.0 + 1e-9) / z.im);
        let f = -1.0 / t.m;
        prop_assert!(f.im >= z.im * (1.0 - 1e-9));
    }

    #[test]
    fn large_eta_decay(spec in any_spec()) {
        let mu = measure(&spec);
        let (lo, hi) = mu.support();
        let c = lo.abs().max(hi.abs());
        for eta in [10.0, 100.0] {
            let m = mu.stieltjes(Complex64::new(0.0, eta)).unwrap();
            // η m(iη) + 1 = ∫ x/(x - iη) dμ
            prop_assert!((Complex64::new(0.0, eta) * m + 1.0).norm() <= c / eta * (1.0 + 1e-9) + 1e-12);
        }
    }

    #[test]
    fn f_prime_gap_positive_below_support(spec in continuous_spec(), d in 1e-6..2.0f64) {
        let mu = measure(&spec);
        let g = mu.f_prime_gap(mu.inf_support() - d).unwrap();
        prop_assert!(g.value > 0.0 && !g.degenerate);
    }

    #[test]
    fn discretized_quantiles_track(spec in continuous_spec(), n in 5usize..200) {
        let mu = measure(&spec);
        let disc = mu.discretize(n).unwrap();
        let (lo, hi) = mu.support();
        // The largest gap between consecutive atoms bounds the displacement.
        let atoms = match &disc {
            SpectralMeasure::Atomic(a) => a.locations(),
            _ => unreachable!(),
        };
        let spacing = atoms.windows(2).map(|w| w[1] - w[0]).fold(atoms[0] - lo, f64::max).max(hi - atoms[atoms.len() - 1]);
        for j in 1..=n {
            let p = j as f64 / n as f64;
            prop_assert!((disc.quantile(p) - mu.quantile(p)).abs() <= spacing + 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn subordination_residuals_and_uniqueness(s1 in any_spec(), s2 in continuous_spec(), z in upper_half_plane()) {
        let (m1, m2) = (measure(&s1), measure(&s2));
        let cfg = SolverConfig::default();
        let p = solve_subordination(&m1, &m2, z, &cfg, None).unwrap();
        let f1 = -1.0 / m1.stieltjes(p.omega2).unwrap();
        let f2 = -1.0 / m2.stieltjes(p.omega1).unwrap();
        let scale = 1f64.max(p.omega1.norm()).max(p.omega2.norm()).max(f1.norm());
        prop_assert!((f1 - f2).norm() <= 2.0 * cfg.tolerance * scale * 10.0, "F1 - F2 = {}", (f1 - f2).norm());
        prop_assert!((p.omega1 + p.omega2 - z - f1).norm() <= 2.0 * cfg.tolerance * scale * 10.0);
        // A different admissible start converges to the same pair.
        let far = solve_subordination(&m1, &m2, z + Complex64::new(0.7, 2.0), &cfg, None).unwrap();
        let q = solve_subordination(&m1, &m2, z, &cfg, Some(&far)).unwrap();
        let tol = 10.0 * cfg.tolerance * scale / z.im.min(1.0);
        prop_assert!((q.m - p.m).norm() <= tol.max(1e-9) * p.m.norm().max(1.0), "{} vs {}", q.m, p.m);
        // Im ω₁ + Im ω₂ - η = Im(-1/m) = Im m/|m|², up to the equation residual.
        let budget = p.omega1.im + p.omega2.im - z.im;
        prop_assert!((budget - p.m.im / p.m.norm_sqr()).abs() <= 20.0 * cfg.tolerance * scale);
    }

    #[test]
    fn translation_covariance(s1 in continuous_spec(), s2 in any_spec(), z in upper_half_plane(), a in prop::sample::select(vec![1.0, -1.0, 0.3, -0.3])) {
        let (m1, m2) = (measure(&s1), measure(&s2));
        let cfg = SolverConfig::default();
        let shifted = solve_subordination(&m1.shift(a), &m2, z, &cfg, None).unwrap();
        let plain = solve_subordination(&m1, &m2, z - a, &cfg, None).unwrap();
        prop_assert!((shifted.m - plain.m).norm() <= 1e-9 * plain.m.norm().max(1.0 / z.im.max(1e-3)));
    }

    #[test]
    fn dilation_covariance(s1 in continuous_spec(), s2 in continuous_spec(), z in upper_half_plane(), s in 0.25..4.0f64) {
        let cfg = SolverConfig::default();
        let p = solve_subordination(&measure(&s1), &measure(&s2), z, &cfg, None).unwrap();
        let q = solve_subordination(&measure(&scaled(&s1, s)), &measure(&scaled(&s2, s)), z * s, &cfg, None).unwrap();
        let tol = 1e-9 * p.m.norm().max(1.0 / z.im.max(1e-3));
        prop_assert!((q.m * s - p.m).norm() <= tol, "{} vs {}", q.m * s, p.m);
        prop_assert!((q.omega1 - p.omega1 * s).norm() <= 1e-8 * s * p.omega1.norm().max(1.0));
        prop_assert!((q.omega2 - p.omega2 * s).norm() <= 1e-8 * s * p.omega2.norm().max(1.0));
    }
}

fn diag(n: usize, seed: u64, spread: f64) -> Vec<f64> {
    // Deterministic but irregular diagonal.
    (0..n).map(|i| spread * (((i as u64 * 2654435761 + seed) % 1000) as f64 / 1000.0 - 0.3)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn ensemble_invariants(n in 2usize..48, seed in any::<u64>(), orthogonal in any::<bool>()) {
        let field = if orthogonal { Field::Orthogonal } else { Field::Unitary };
        let u = sample_haar(n, seed, field).unwrap();
        prop_assert!(unitarity_defect(u.as_ref()) <= 1e-12);
        let (a, b) = (diag(n, seed, 2.0), diag(n, seed ^ 7, 1.5));
        let s = assemble_and_diagonalize(&a, &b, u, field, Some(seed), false).unwrap();
        let tr: f64 = s.eigenvalues.iter().sum();
        prop_assert!((tr - a.iter().sum::<f64>() - b.iter().sum::<f64>()).abs() <= 1e-9 * n as f64);
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(s.eigenvalues[0] >= min(&a) + min(&b) - 1e-9);
        prop_assert!(s.eigenvalues[n - 1] <= max(&a) + max(&b) + 1e-9);
        prop_assert!(s.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn exact_identities(n in 4usize..40, seed in any::<u64>(), orthogonal in any::<bool>(), z in (-1.0..2.0f64, -2.0..0.5f64).prop_map(|(e, l)| Complex64::new(e, 10f64.powf(l)))) {
        let field = if orthogonal { Field::Orthogonal } else { Field::Unitary };
        let (a, b) = (diag(n, seed, 1.0), diag(n, seed ^ 3, 1.0));
        let s = sample_ensemble(&a, &b, seed, field, true).unwrap();
        let ctx = GreenContext::new(&s).unwrap();
        let r = fluctuation_observables(&ctx, z, None, FluctuationOptions { direct_s: true, perturb: false }).unwrap();
        for c in &r.identities {
            prop_assert!(c.pass, "{}: {:e}", c.name, c.residual);
        }
        let p = green_probe(&ctx, z).unwrap();
        let (wa, wb) = approx_subordination(&ctx, &p).unwrap();
        prop_assert!((wa + wb - z + 1.0 / p.m_h).norm() <= 1e-10 * (z.norm() + 1.0 / p.m_h.norm()));
        // Resolvent identity in traced form against a second point.
        let z2 = z + Complex64::new(0.3, 0.1);
        let lhs = s.stieltjes(z) - s.stieltjes(z2);
        let rhs: Complex64 = s.eigenvalues.iter().map(|&l| (z - z2) / ((l - z) * (l - z2))).sum::<Complex64>() / n as f64;
        prop_assert!((lhs - rhs).norm() <= 1e-9 * lhs.norm().max(1.0));
    }

    #[test]
    fn swap_duality(n in 2usize..40, seed in any::<u64>()) {
        let (a, b) = (diag(n, seed, 1.0), diag(n, seed ^ 5, 2.0));
        let s = sample_ensemble(&a, &b, seed, Field::Unitary, false).unwrap();
        let t = assemble_and_diagonalize(&b, &a, s.u.adjoint().to_owned(), Field::Unitary, None, false).unwrap();
        let z = Complex64::new(0.2, 0.05);
        prop_assert!((s.stieltjes(z) - t.stieltjes(z)).norm() <= 1e-10 * s.stieltjes(z).norm());
    }
}
