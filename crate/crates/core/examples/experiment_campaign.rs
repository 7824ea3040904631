//! Runs the four reference campaigns on uniform[0,1] ⊞ uniform[0,1] and prints
//! every gate with its achieved value.
//!
//! `cargo run --release --example experiment_campaign [rigidity|local-law|edge-fluct|ks]`

use freeconv::experiments::{run_experiment, ExperimentConfig, ExperimentKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kinds: Vec<ExperimentKind> = match std::env::args().nth(1) {
        Some(name) => vec![name.parse()?],
        None => ExperimentKind::ALL.to_vec(),
    };
    for kind in kinds {
        let t = std::time::Instant::now();
        let report = run_experiment(kind, ExperimentConfig::for_kind(kind))?;
        println!("== {kind} ({:.1?}, config {})", t.elapsed(), &report.config_hash[..12]);
        for c in &report.cells {
            let s = &c.summary;
            println!("  N={:5} {:30} median {:9.4} q90 {:9.4} q95 {:9.4} max {:9.4}", c.n, c.statistic, s.median, s.q90, s.q95, s.max);
        }
        for f in &report.fits {
            println!("  fit {}: slope {:.4} ± {:.4} (expected {:.4})", f.quantity, f.slope, f.slope_stderr, f.expected_slope);
        }
        for g in &report.gates {
            println!("  [{}] {} = {:.4} ({})", if g.pass { "PASS" } else { "FAIL" }, g.name, g.achieved, g.condition);
        }
        for f in &report.flagged {
            println!("  flagged: {f}");
        }
    }
    Ok(())
}
