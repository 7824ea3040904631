//! Command-line front end.
//!
//! Every command computes all of its outputs in memory, then writes them together
//! with a `manifest.json` into a run directory `<output-root>/<command>-<hash>`,
//! where the hash covers the resolved configuration and input file contents.
//! Files are staged in a temporary directory and renamed into place, so a failed
//! run leaves nothing behind.
//!
//! Exit codes: 0 success, 1 a gate or identity check failed, 2 invalid input.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::density::{density_grid, quantiles, DensityConfig, cosine_grid};
use crate::edge::{edge_expansion, locate_edges, scaling_probe, PROBE_CSV_HEADER};
use crate::experiments::{canonical_json, run_experiment, ExperimentConfig, ExperimentKind};
use crate::measure::{MeasureSpec, SpectralMeasure};
use crate::rmt::{fluctuation_observables, partial_decomposition, sample_ensemble, Field, FluctuationOptions, GreenContext, IdentityCheck};
use crate::subordination::SolverConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

/// Largest N for which `verify-identities` also runs the O(N³) direct route to `S_i`.
const DIRECT_S_MAX_N: usize = 256;

#[derive(Debug, Parser)]
#[command(name = "freeconv", version, about = "Free additive convolution, edge analysis and random-matrix experiments")]
pub struct Cli {
    /// Directory under which run directories are created
    #[arg(long, env = "FREECONV_OUTPUT_ROOT", default_value = "runs", global = true)]
    pub output_root: PathBuf,
    /// Maximum worker threads for seed-parallel work (default: all cores)
    #[arg(long, env = "FREECONV_THREADS", global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct PairArgs {
    /// JSON measure spec for μ_A (e.g. {"family":"semicircle","variance":1})
    #[arg(long = "mu-a", value_name = "FILE")]
    pub mu_a: PathBuf,
    /// JSON measure spec for μ_B
    #[arg(long = "mu-b", value_name = "FILE")]
    pub mu_b: PathBuf,
}

#[derive(Debug, Args)]
pub struct OptionalPairArgs {
    /// JSON measure spec for the law of diag(A) [default: uniform on [0,1]]
    #[arg(long = "mu-a", value_name = "FILE")]
    pub mu_a: Option<PathBuf>,
    /// JSON measure spec for the law of diag(B) [default: uniform on [0,1]]
    #[arg(long = "mu-b", value_name = "FILE")]
    pub mu_b: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Density of μ_A ⊞ μ_B on a grid (density.csv) and its edges (edge.json)
    Convolve {
        #[command(flatten)]
        pair: PairArgs,
        /// Number of grid points (count)
        #[arg(long, default_value_t = 2048)]
        grid_points: usize,
        /// Grid overhang beyond the support, as a fraction of its width
        #[arg(long, default_value_t = 0.1)]
        grid_margin: f64,
    },
    /// Support edges, square-root expansion and scaling probe (edge.json, probe.csv)
    Edge {
        #[command(flatten)]
        pair: PairArgs,
    },
    /// N-quantiles γ_j of μ_A ⊞ μ_B (quantiles.csv)
    Quantiles {
        #[command(flatten)]
        pair: PairArgs,
        /// Number of quantiles (count)
        #[arg(long, short = 'n', alias = "N")]
        n: usize,
    },
    /// Eigenvalues of A + UBU* for one Haar draw (eigenvalues.csv)
    Sample {
        #[command(flatten)]
        pair: OptionalPairArgs,
        /// Matrix dimension (count)
        #[arg(long, short = 'n', alias = "N")]
        n: usize,
        /// RNG seed
        #[arg(long)]
        seed: u64,
        /// Draw U from the orthogonal group instead of the unitary group
        #[arg(long)]
        orthogonal: bool,
    },
    /// Residuals of the exact Green-function and decomposition identities (identities.json)
    VerifyIdentities {
        #[command(flatten)]
        pair: OptionalPairArgs,
        /// Matrix dimension (count)
        #[arg(long, short = 'n', alias = "N", default_value_t = 64)]
        n: usize,
        /// RNG seed
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Draw U from the orthogonal group
        #[arg(long)]
        orthogonal: bool,
        /// Spectral parameter as RE,IM with IM > 0 (repeatable) [default: points derived from the spectrum]
        #[arg(long = "z", value_name = "RE,IM", value_parser = parse_complex)]
        z: Vec<Complex64>,
        /// Test hook: corrupt (B̃G)_ii by 1e-6 before checking
        #[arg(long)]
        perturb: bool,
    },
    /// Monte Carlo campaign: rigidity, local-law, edge-fluct or ks (report.json, records.csv)
    Experiment {
        /// Campaign name
        #[arg(value_parser = parse_kind)]
        name: ExperimentKind,
        /// JSON file overriding fields of the campaign's default config
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Seeds as A..B (half-open), A..=B, or a comma list
        #[arg(long, value_parser = parse_seed_list)]
        seeds: Option<SeedList>,
        /// Matrix dimensions (count), comma-separated
        #[arg(long, short = 'n', alias = "N", value_delimiter = ',')]
        n: Vec<usize>,
        /// Draw U from the orthogonal group
        #[arg(long)]
        orthogonal: bool,
        /// Slack exponent ε recorded in the report
        #[arg(long)]
        epsilon: Option<f64>,
    },
}

/// Parsed `--seeds` value.
#[derive(Debug, Clone)]
pub struct SeedList(pub Vec<u64>);

fn parse_seed_list(s: &str) -> Result<SeedList, String> {
    parse_seeds(s).map(SeedList)
}

fn parse_kind(s: &str) -> Result<ExperimentKind, String> {
    s.parse()
}

fn parse_complex(s: &str) -> Result<Complex64, String> {
    let (re, im) = s.split_once(',').ok_or("expected RE,IM")?;
    let re: f64 = re.trim().parse().map_err(|e| format!("real part: {e}"))?;
    let im: f64 = im.trim().parse().map_err(|e| format!("imaginary part: {e}"))?;
    if !(im > 0.0 && re.is_finite() && im.is_finite()) {
        return Err(format!("{s} is not in the upper half-plane"));
    }
    Ok(Complex64::new(re, im))
}

/// `1..5` → 1,2,3,4; `1..=5` → 1..5 inclusive; `3,7,9` → as listed.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let num = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("seed '{t}': {e}"));
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = s.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        s.split(',').map(num).collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(format!("seed range '{s}' is empty"));
    }
    Ok(seeds)
}

/// Failure of a command with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

fn invalid(message: impl ToString) -> CliError {
    CliError { code: EXIT_INVALID, message: message.to_string() }
}

fn failed(message: impl ToString) -> CliError {
    CliError { code: EXIT_FAILED, message: message.to_string() }
}

/// Provenance written next to every output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub resolved_config: Value,
    /// SHA-256 of each input file.
    pub input_hashes: Vec<(String, String)>,
    pub seeds: Vec<u64>,
    pub outputs: Vec<String>,
    /// SHA-256 of each output file, in the order of `outputs`.
    pub output_hashes: Vec<String>,
    pub tool_version: String,
    pub threads: usize,
    pub elapsed_seconds: f64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Input {
    measure: SpectralMeasure,
    spec: MeasureSpec,
    hash: Option<(String, String)>,
}

fn read_measure(path: &Path) -> Result<Input, CliError> {
    let bytes = fs::read(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| invalid(format!("{}: not UTF-8", path.display())))?;
    let measure = SpectralMeasure::from_json(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    Ok(Input { spec: measure.to_spec(), measure, hash: Some((path.display().to_string(), sha256_hex(&bytes))) })
}

fn read_optional(path: &Option<PathBuf>) -> Result<Input, CliError> {
    match path {
        Some(p) => read_measure(p),
        None => {
            let spec = MeasureSpec::Uniform { support: [0.0, 1.0] };
            Ok(Input { measure: SpectralMeasure::from_spec(&spec).map_err(invalid)?, spec, hash: None })
        }
    }
}

/// Outputs of one command, written atomically by [`commit`].
struct Run {
    command: String,
    config: Value,
    inputs: Vec<(String, String)>,
    seeds: Vec<u64>,
    files: Vec<(String, Vec<u8>)>,
}

fn commit(root: &Path, run: Run, threads: usize, started: Instant) -> Result<PathBuf, CliError> {
    let mut key = Sha256::new();
    key.update(run.command.as_bytes());
    key.update(canonical_json(&run.config).as_bytes());
    for (_, h) in &run.inputs {
        key.update(h.as_bytes());
    }
    key.update(format!("{:?}", run.seeds).as_bytes());
    let id = hex::encode(key.finalize());
    let dir = root.join(format!("{}-{}", run.command, &id[..12]));
    let manifest = RunManifest {
        command: run.command.clone(),
        resolved_config: run.config,
        input_hashes: run.inputs,
        seeds: run.seeds,
        outputs: run.files.iter().map(|(n, _)| n.clone()).collect(),
        output_hashes: run.files.iter().map(|(_, b)| sha256_hex(b)).collect(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        threads,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    };
    let io = |e: std::io::Error| failed(format!("writing {}: {e}", dir.display()));
    fs::create_dir_all(root).map_err(io)?;
    let staging = root.join(format!(".staging-{}-{}", &id[..12], std::process::id()));
    let write_all = || -> std::io::Result<()> {
        fs::create_dir_all(&staging)?;
        for (name, bytes) in &run.files {
            fs::write(staging.join(name), bytes)?;
        }
        fs::write(staging.join("manifest.json"), canonical_json(&manifest))?;
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::rename(&staging, &dir)
    };
    if let Err(e) = write_all() {
        let _ = fs::remove_dir_all(&staging);
        return Err(io(e));
    }
    Ok(dir)
}

/// Parses `args` (including the program name) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(invalid("--threads must be at least 1"));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| failed(format!("thread pool: {e}")))?;
    let threads = pool.current_num_threads();
    let started = Instant::now();
    let root = cli.output_root.clone();
    pool.install(|| {
        let (run, code) = match cli.command {
            Command::Convolve { pair, grid_points, grid_margin } => convolve(pair, grid_points, grid_margin)?,
            Command::Edge { pair } => edge(pair)?,
            Command::Quantiles { pair, n } => quantile_cmd(pair, n)?,
            Command::Sample { pair, n, seed, orthogonal } => sample(pair, n, seed, orthogonal)?,
            Command::VerifyIdentities { pair, n, seed, orthogonal, z, perturb } => verify(pair, n, seed, orthogonal, z, perturb)?,
            Command::Experiment { name, config, seeds, n, orthogonal, epsilon } => experiment(name, config, seeds.map(|s| s.0).unwrap_or_default(), n, orthogonal, epsilon)?,
        };
        let dir = commit(&root, run, threads, started)?;
        println!("outputs: {}", dir.display());
        Ok(code)
    })
}

fn pair_config(a: &Input, b: &Input, extra: Value) -> Value {
    let mut v = json!({ "mu_a": a.spec, "mu_b": b.spec });
    if let (Value::Object(m), Value::Object(e)) = (&mut v, extra) {
        m.extend(e);
    }
    v
}

fn inputs(a: &Input, b: &Input) -> Vec<(String, String)> {
    a.hash.iter().chain(b.hash.iter()).cloned().collect()
}

fn convolve(pair: PairArgs, grid_points: usize, grid_margin: f64) -> Result<(Run, i32), CliError> {
    let (a, b) = (read_measure(&pair.mu_a)?, read_measure(&pair.mu_b)?);
    if grid_points < 2 {
        return Err(invalid("--grid-points must be at least 2"));
    }
    if !(grid_margin >= 0.0 && grid_margin.is_finite()) {
        return Err(invalid("--grid-margin must be a non-negative number"));
    }
    let cfg = DensityConfig { grid_points, grid_margin, ..DensityConfig::default() };
    let edge_json = match locate_edges(&a.measure, &b.measure, &cfg.solver) {
        Ok(mut report) => {
            if !report.short_circuit {
                report.expansion = edge_expansion(&a.measure, &b.measure, &report, &cfg.solver).ok();
            }
            serde_json::to_value(&report).expect("serializable")
        }
        Err(e) => json!({ "error": e.to_string() }),
    };
    let (lo, hi) = match (edge_json.get("lower").and_then(Value::as_f64), edge_json.get("upper").and_then(Value::as_f64)) {
        (Some(l), Some(u)) => (l, u),
        _ => {
            let (a0, a1) = a.measure.support();
            let (b0, b1) = b.measure.support();
            (a0 + b0, a1 + b1)
        }
    };
    let pad = grid_margin * (hi - lo).max(1e-12);
    let grid = cosine_grid(lo - pad, hi + pad, grid_points);
    let table = density_grid(&a.measure, &b.measure, &grid, &cfg).map_err(failed)?;
    println!("support [{lo:.12}, {hi:.12}], mass {:.10}", table.mass);
    let run = Run {
        command: "convolve".into(),
        config: pair_config(&a, &b, json!({ "density": cfg })),
        inputs: inputs(&a, &b),
        seeds: Vec::new(),
        files: vec![("density.csv".into(), table.to_csv().into_bytes()), ("edge.json".into(), canonical_json(&edge_json).into_bytes())],
    };
    Ok((run, EXIT_OK))
}

fn edge(pair: PairArgs) -> Result<(Run, i32), CliError> {
    let (a, b) = (read_measure(&pair.mu_a)?, read_measure(&pair.mu_b)?);
    let cfg = SolverConfig::default();
    let mut report = locate_edges(&a.measure, &b.measure, &cfg).map_err(failed)?;
    let mut files = Vec::new();
    if !report.short_circuit {
        report.expansion = Some(edge_expansion(&a.measure, &b.measure, &report, &cfg).map_err(failed)?);
        let probe = scaling_probe(&a.measure, &b.measure, &report, &cfg).map_err(failed)?;
        let mut csv = format!("{PROBE_CSV_HEADER}\n");
        for row in &probe.rows {
            csv.push_str(&row.csv_line());
            csv.push('\n');
        }
        files.push(("probe.csv".into(), csv.into_bytes()));
        files.push(("probe.json".into(), canonical_json(&probe).into_bytes()));
    }
    println!("E- = {:.12}, E+ = {:.12}", report.lower, report.upper);
    files.insert(0, ("edge.json".into(), canonical_json(&report).into_bytes()));
    let run = Run { command: "edge".into(), config: pair_config(&a, &b, json!({ "solver": cfg })), inputs: inputs(&a, &b), seeds: Vec::new(), files };
    Ok((run, EXIT_OK))
}

fn quantile_cmd(pair: PairArgs, n: usize) -> Result<(Run, i32), CliError> {
    let (a, b) = (read_measure(&pair.mu_a)?, read_measure(&pair.mu_b)?);
    if n == 0 {
        return Err(invalid("--n must be at least 1"));
    }
    let cfg = DensityConfig::default();
    let table = quantiles(&a.measure, &b.measure, n, &cfg).map_err(failed)?;
    for (j, why) in &table.failures {
        eprintln!("warning: quantile {j}: {why}");
    }
    let run = Run {
        command: "quantiles".into(),
        config: pair_config(&a, &b, json!({ "n": n, "density": cfg })),
        inputs: inputs(&a, &b),
        seeds: Vec::new(),
        files: vec![("quantiles.csv".into(), table.to_csv().into_bytes())],
    };
    Ok((run, if table.failures.is_empty() { EXIT_OK } else { EXIT_FAILED }))
}

fn diagonals(a: &Input, b: &Input, n: usize) -> (Vec<f64>, Vec<f64>) {
    let grid = |m: &SpectralMeasure| (1..=n).map(|j| m.quantile((j as f64 - 0.5) / n as f64)).collect();
    (grid(&a.measure), grid(&b.measure))
}

fn field_of(orthogonal: bool) -> Field {
    if orthogonal {
        Field::Orthogonal
    } else {
        Field::Unitary
    }
}

fn sample(pair: OptionalPairArgs, n: usize, seed: u64, orthogonal: bool) -> Result<(Run, i32), CliError> {
    let (a, b) = (read_optional(&pair.mu_a)?, read_optional(&pair.mu_b)?);
    if n == 0 {
        return Err(invalid("--n must be at least 1"));
    }
    let (da, db) = diagonals(&a, &b, n);
    let field = field_of(orthogonal);
    let s = sample_ensemble(&da, &db, seed, field, false).map_err(failed)?;
    println!("lambda_1 = {:.12}, lambda_N = {:.12}", s.eigenvalues[0], s.eigenvalues[n - 1]);
    let run = Run {
        command: "sample".into(),
        config: pair_config(&a, &b, json!({ "n": n, "field": field })),
        inputs: inputs(&a, &b),
        seeds: vec![seed],
        files: vec![("eigenvalues.csv".into(), s.eigenvalues_csv().into_bytes())],
    };
    Ok((run, EXIT_OK))
}

#[derive(Serialize)]
struct IdentityRow<'a> {
    z: Option<Complex64>,
    index: Option<usize>,
    #[serde(flatten)]
    check: &'a IdentityCheck,
}

fn verify(pair: OptionalPairArgs, n: usize, seed: u64, orthogonal: bool, zs: Vec<Complex64>, perturb: bool) -> Result<(Run, i32), CliError> {
    let (a, b) = (read_optional(&pair.mu_a)?, read_optional(&pair.mu_b)?);
    if n < 2 {
        return Err(invalid("--n must be at least 2"));
    }
    let (da, db) = diagonals(&a, &b, n);
    let field = field_of(orthogonal);
    let sample = sample_ensemble(&da, &db, seed, field, true).map_err(failed)?;
    let ctx = GreenContext::new(&sample).map_err(failed)?;
    let lam = &sample.eigenvalues;
    let zs = if zs.is_empty() {
        let mid = lam[n / 2];
        vec![Complex64::new(mid, 0.05), Complex64::new(lam[0] - 0.1, 0.01), Complex64::new(mid, 1.0)]
    } else {
        zs
    };
    let opts = FluctuationOptions { direct_s: n <= DIRECT_S_MAX_N, perturb };
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &z in &zs {
        reports.push((z, fluctuation_observables(&ctx, z, None, opts).map_err(failed)?));
    }
    let mut parts = Vec::new();
    for i in [0, n / 2, n - 1] {
        parts.push((i, partial_decomposition(sample.u.as_ref(), &sample.centered_b(), i).map_err(failed)?));
    }
    for (z, r) in &reports {
        rows.extend(r.identities.iter().map(|c| IdentityRow { z: Some(*z), index: None, check: c }));
    }
    for (i, p) in &parts {
        rows.extend(p.residuals.iter().map(|c| IdentityRow { z: None, index: Some(*i), check: c }));
    }
    println!("{:<32} {:>24} {:>6} {:>12}  status", "identity", "z", "index", "residual");
    let mut failures = 0;
    for r in &rows {
        let z = r.z.map(|z| format!("{:.4}{:+.4}i", z.re, z.im)).unwrap_or_default();
        let i = r.index.map(|i| i.to_string()).unwrap_or_default();
        println!("{:<32} {:>24} {:>6} {:>12.3e}  {}", r.check.name, z, i, r.check.residual, if r.check.pass { "PASS" } else { "FAIL" });
        if !r.check.pass {
            failures += 1;
            eprintln!("identity {} failed at {z}{i}: residual {:e}", r.check.name, r.check.residual);
        }
    }
    let body = json!({ "identities": rows, "pass": failures == 0 });
    let run = Run {
        command: "verify-identities".into(),
        config: pair_config(&a, &b, json!({ "n": n, "field": field, "z": zs, "perturb": perturb, "direct_s": opts.direct_s })),
        inputs: inputs(&a, &b),
        seeds: vec![seed],
        files: vec![("identities.json".into(), canonical_json(&body).into_bytes())],
    };
    Ok((run, if failures == 0 { EXIT_OK } else { EXIT_FAILED }))
}

/// Overlays `patch` onto `base`, recursing into objects.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Resolves flag > config file > campaign default.
pub fn resolve_experiment_config(
    kind: ExperimentKind,
    file: Option<&Path>,
    seeds: &[u64],
    n: &[usize],
    orthogonal: bool,
    epsilon: Option<f64>,
) -> Result<(ExperimentConfig, Vec<(String, String)>), CliError> {
    let mut value = serde_json::to_value(ExperimentConfig::for_kind(kind)).expect("serializable");
    let mut hashes = Vec::new();
    if let Some(path) = file {
        let bytes = fs::read(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let patch: Value = serde_json::from_slice(&bytes).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        if !patch.is_object() {
            return Err(invalid(format!("{}: config must be a JSON object", path.display())));
        }
        merge(&mut value, patch);
        hashes.push((path.display().to_string(), sha256_hex(&bytes)));
    }
    let mut cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| invalid(format!("config: {e}")))?;
    if seeds.is_empty() {
        return Err(invalid("--seeds is required for experiments"));
    }
    cfg.seeds = seeds.to_vec();
    if !n.is_empty() {
        cfg.n = n.to_vec();
    }
    if orthogonal {
        cfg.field = Field::Orthogonal;
    }
    if let Some(e) = epsilon {
        cfg.epsilon = e;
    }
    let cfg = cfg.resolve().map_err(invalid)?;
    Ok((cfg, hashes))
}

fn experiment(kind: ExperimentKind, file: Option<PathBuf>, seeds: Vec<u64>, n: Vec<usize>, orthogonal: bool, epsilon: Option<f64>) -> Result<(Run, i32), CliError> {
    let (cfg, hashes) = resolve_experiment_config(kind, file.as_deref(), &seeds, &n, orthogonal, epsilon)?;
    let report = run_experiment(kind, cfg.clone()).map_err(failed)?;
    let json = report.to_json();
    println!("{kind}: config {} report {}", &report.config_hash[..12], &sha256_hex(json.as_bytes())[..12]);
    if report.underpowered {
        println!("note: fewer than 10 seeds, gates are indicative only");
    }
    for g in &report.gates {
        println!("  [{}] {} = {:.6} ({})", if g.pass { "PASS" } else { "FAIL" }, g.name, g.achieved, g.condition);
    }
    for f in &report.flagged {
        println!("  flagged: {f}");
    }
    let code = if report.pass { EXIT_OK } else { EXIT_FAILED };
    let run = Run {
        command: format!("experiment-{kind}"),
        config: serde_json::to_value(&cfg).expect("serializable"),
        inputs: hashes,
        seeds: cfg.seeds.clone(),
        files: vec![("report.json".into(), json.into_bytes()), ("records.csv".into(), report.records_csv().into_bytes())],
    };
    Ok((run, code))
}
