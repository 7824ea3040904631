//! Acceptance suite: twelve end-to-end criteria, one PASS/FAIL line each.
//!
//! Runs with `cargo test --release --test acceptance` (or as part of `cargo test`).
//! Each criterion has a wall-clock budget; exceeding it is a failure.
//!
//! Criterion 4 includes the bound `Im m ≤ 3η/√κ` outside the spectrum of
//! uniform[0,1] ⊞ uniform[0,1]. As κ, η → 0 that ratio tends to `π c_ρ / 2 ≈ 3.19`
//! for this pair, so the bound cannot hold near the edge and the criterion fails.
//! It is listed in `KNOWN_FAILURES` so the suite as a whole still checks that
//! nothing else regresses. An unexpected pass is also reported as an error.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use freeconv::edge::{edge_expansion, locate_edges, scaling_probe, CoefficientForm};
use freeconv::experiments::{run_experiment, ExperimentConfig, ExperimentKind};
use freeconv::measure::SpectralMeasure;
use freeconv::rmt::{fluctuation_observables, partial_decomposition, sample_ensemble, sample_haar, Field, FluctuationOptions, GreenContext};
use freeconv::stats::{log_log_slope, percentile};
use freeconv::subordination::{boundary_values, free_conv_m, SolverConfig};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KNOWN_FAILURES: &[u32] = &[4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn uniform() -> SpectralMeasure {
    SpectralMeasure::uniform(0.0, 1.0).unwrap()
}

fn semicircle() -> SpectralMeasure {
    SpectralMeasure::semicircle(1.0).unwrap()
}

fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64)).collect()
}

fn ac1() -> Outcome {
    let mu = semicircle();
    let cfg = SolverConfig::default();
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let x = -4.0 + 8.0 * k as f64 / 49.0;
        let eta = [1e-3, 1e-2, 0.1, 1.0][k % 4];
        let z = Complex64::new(x, eta);
        let m = free_conv_m(&mu, &mu, z, &cfg).unwrap();
        // (-z + √(z² - 8))/4 on the branch with Im m > 0.
        let r = (z * z - 8.0).sqrt();
        let exact = [(-z + r) / 4.0, (-z - r) / 4.0].into_iter().find(|c| c.im > 0.0).unwrap();
        worst = worst.max((m - exact).norm());
    }
    outcome(worst <= 1e-10, format!("max |m - closed form| = {worst:.2e} over 50 points"))
}

fn ac2() -> Outcome {
    let r = locate_edges(&semicircle(), &semicircle(), &SolverConfig::default()).unwrap();
    let err = (r.lower + 8f64.sqrt()).abs();
    outcome(err <= 1e-6 && r.edge_residual <= 1e-9, format!("|E- + 2√2| = {err:.2e}, edge residual {:.2e}", r.edge_residual))
}

fn ac3() -> Outcome {
    let mu = uniform();
    let cfg = SolverConfig::default();
    let r = locate_edges(&mu, &mu, &cfg).unwrap();
    let exp = edge_expansion(&mu, &mu, &r, &cfg).unwrap();
    let kappas = geometric(1e-6, 1e-3, 13);
    let rho: Vec<f64> = kappas.iter().map(|k| boundary_values(&mu, &mu, r.lower + k, &cfg).unwrap().m.im / PI).collect();
    let fit = log_log_slope(&kappas, &rho);
    let rel = (exp.coefficient / exp.predicted - 1.0).abs();
    let pass = (fit.slope - 0.5).abs() <= 0.05 && rel <= 0.01 && exp.form == CoefficientForm::SqrtTwoOverCurvature;
    let detail = format!("density exponent {:.4}, ω coefficient {:.6} vs √(2/|z''|) = {:.6} ({:.1e} rel), form {:?}", fit.slope, exp.coefficient, exp.predicted, rel, exp.form);
    outcome(pass, detail)
}

fn ac4() -> Outcome {
    let mu = uniform();
    let cfg = SolverConfig::default();
    let mut r = locate_edges(&mu, &mu, &cfg).unwrap();
    r.expansion = Some(edge_expansion(&mu, &mu, &r, &cfg).unwrap());
    let p = scaling_probe(&mu, &mu, &r, &cfg).unwrap();
    let checks = [
        ("|S|", p.s_exponent, (p.s_exponent - 0.5).abs() <= 0.05),
        ("|ω1'|", p.omega1_prime_exponent, (p.omega1_prime_exponent + 0.5).abs() <= 0.1),
        ("|ω2'|", p.omega2_prime_exponent, (p.omega2_prime_exponent + 0.5).abs() <= 0.1),
        ("inside Im m", p.inside_exponent, (p.inside_exponent - 0.5).abs() <= 0.05),
        ("outside max Im m √κ/η (≤ 3)", p.outside_ratio, p.outside_ratio <= 3.0),
    ];
    let detail = checks.iter().map(|(n, v, ok)| format!("{n} {v:.4}{}", if *ok { "" } else { " ✗" })).collect::<Vec<_>>().join(", ");
    outcome(checks.iter().all(|c| c.2), detail)
}

fn ac5() -> Outcome {
    let mut worst: (f64, String) = (0.0, String::new());
    let mut all = true;
    let mut count = 0;
    for n in [64usize, 512] {
        let a: Vec<f64> = (1..=n).map(|j| (j as f64 - 0.5) / n as f64).collect();
        for field in [Field::Unitary, Field::Orthogonal] {
            for seed in 1..=5u64 {
                let s = sample_ensemble(&a, &a, seed, field, true).unwrap();
                let ctx = GreenContext::new(&s).unwrap();
                let mid = s.eigenvalues[n / 2];
                for z in [Complex64::new(mid, 0.05), Complex64::new(s.eigenvalues[0] - 0.05, 0.01), Complex64::new(mid, 1.0)] {
                    let rep = fluctuation_observables(&ctx, z, None, FluctuationOptions { direct_s: n <= 64, perturb: false }).unwrap();
                    for c in &rep.identities {
                        count += 1;
                        all &= c.pass;
                        if c.residual > worst.0 {
                            worst = (c.residual, format!("{} (N={n}, {field:?}, seed {seed})", c.name));
                        }
                    }
                }
            }
        }
    }
    outcome(all, format!("{count} residuals, max {:.2e} at {}", worst.0, worst.1))
}

fn ac6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let b: Vec<f64> = (0..64).map(|j| j as f64 / 64.0 - 0.5).collect();
    let mut worst: f64 = 0.0;
    let mut all = true;
    for _ in 0..10 {
        let seed: u64 = rng.random();
        let i = rng.random_range(0..64);
        let u = sample_haar(64, seed, Field::Unitary).unwrap();
        let parts = partial_decomposition(u.as_ref(), &b, i).unwrap();
        for c in &parts.residuals {
            all &= c.residual <= 1e-10;
            worst = worst.max(c.residual);
        }
    }
    outcome(all, format!("10 (seed, i) pairs at N = 64, max residual {worst:.2e}"))
}

fn ac7() -> Outcome {
    let n = 500;
    let eta = 0.05;
    let a: Vec<f64> = (1..=n).map(|j| (j as f64 - 0.5) / n as f64).collect();
    let scale = (n as f64 * eta).sqrt();
    let (mut t_all, mut ups) = (Vec::new(), Vec::new());
    for seed in 1..=20u64 {
        let s = sample_ensemble(&a, &a, seed, Field::Unitary, true).unwrap();
        let ctx = GreenContext::new(&s).unwrap();
        let r = fluctuation_observables(&ctx, Complex64::new(1.0, eta), None, FluctuationOptions::default()).unwrap();
        t_all.extend(r.t.iter().map(|t| scale * t.norm()));
        ups.push(scale * r.upsilon.norm());
    }
    let (qt, qu) = (percentile(&t_all, 0.9), percentile(&ups, 0.9));
    outcome(qt <= 10.0 && qu <= 10.0, format!("q90 √(Nη)|T_i| = {qt:.4}, q90 √(Nη)|Υ| = {qu:.4}"))
}

fn experiment(kind: ExperimentKind) -> (bool, Vec<String>) {
    let r = run_experiment(kind, ExperimentConfig::for_kind(kind)).unwrap();
    let lines = r.gates.iter().map(|g| format!("{} = {:.4}{}", g.name, g.achieved, if g.pass { "" } else { " ✗" })).collect();
    (r.pass && r.flagged.is_empty(), lines)
}

fn ac8() -> Outcome {
    let (pass, lines) = experiment(ExperimentKind::LocalLaw);
    outcome(pass, lines.join(", "))
}

fn ac9() -> Outcome {
    let (pass, lines) = experiment(ExperimentKind::Rigidity);
    outcome(pass, lines.join(", "))
}

fn ac10() -> Outcome {
    let (pass, lines) = experiment(ExperimentKind::EdgeFluct);
    let shown: Vec<String> = lines.into_iter().filter(|l| !l.starts_with("lambda1_above_floor") || l.ends_with('✗')).collect();
    outcome(pass, shown.join(", "))
}

fn ac11() -> Outcome {
    let (pass, lines) = experiment(ExperimentKind::Ks);
    outcome(pass, lines.join(", "))
}

fn ac12() -> Outcome {
    let cfg = ExperimentConfig { n: vec![200], seeds: (1..=10).collect(), ..ExperimentConfig::for_kind(ExperimentKind::Rigidity) };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_experiment(ExperimentKind::Rigidity, cfg.clone()).unwrap())
    };
    let first = run(1);
    let t = Instant::now();
    let bytes = first.to_json();
    let csv = first.records_csv();
    let overhead = t.elapsed();
    let second = run(2);
    let mut reversed = cfg.clone();
    reversed.seeds.reverse();
    let third = run_experiment(ExperimentKind::Rigidity, reversed).unwrap();
    let same = bytes == second.to_json() && bytes == third.to_json() && csv == second.records_csv();
    outcome(same && overhead < Duration::from_secs(1), format!("identical reports across reruns, thread counts and seed order: {same}; serialization overhead {:.1} ms", overhead.as_secs_f64() * 1e3))
}

fn main() -> ExitCode {
    // `cargo test` passes harness flags such as `--nocapture`; a filter argument selects criteria.
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.trim_start_matches("ac").parse().ok()).collect();
    let criteria: [(u32, &str, u64, fn() -> Outcome); 12] = [
        (1, "subordination vs closed form", 1, ac1),
        (2, "edge location", 10, ac2),
        (3, "square-root edge", 30, ac3),
        (4, "edge scaling laws", 60, ac4),
        (5, "exact identities", 30, ac5),
        (6, "partial decomposition", 5, ac6),
        (7, "entry-wise magnitudes", 300, ac7),
        (8, "local law", 600, ac8),
        (9, "rigidity", 600, ac9),
        (10, "edge fluctuation", 1200, ac10),
        (11, "Kolmogorov rate", 600, ac11),
        (12, "determinism", 60, ac12),
    ];
    let mut unexpected = Vec::new();
    for (id, title, budget, f) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        let elapsed = t.elapsed();
        let in_budget = elapsed <= Duration::from_secs(budget);
        let pass = o.pass && in_budget;
        let known = KNOWN_FAILURES.contains(&id);
        let note = match (pass, known) {
            (false, true) => " (known: bound unattainable for this pair)",
            (true, true) => " (listed as a known failure but passed)",
            _ => "",
        };
        println!(
            "AC{id:<2} {} {title}: {}{}{note} [{:.1} s / {budget} s]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            if in_budget { "" } else { ", over time budget" },
            elapsed.as_secs_f64()
        );
        if pass == known {
            unexpected.push(id);
        }
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected outcome for criteria {unexpected:?}");
        ExitCode::FAILURE
    }
}
