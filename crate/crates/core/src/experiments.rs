//! Seeded Monte Carlo campaigns on `H = A + UBU*` with deterministic `A`, `B`
//! built from the midpoint quantiles of a measure pair.
//!
//! Every campaign maps over `(N, seed)` in parallel and reduces in seed order, so
//! reports are byte-identical for any thread count and any ordering of the seed
//! list. Thresholds absorb the `N^ε` slack of stochastic domination as fixed
//! constants; a failing gate reports the achieved value and is never relaxed.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::density::{kolmogorov_distance, ConvolutionCdf, DensityConfig, DensityError, QuantileSource};
use crate::edge::{locate_edges, EdgeError};
use crate::measure::{MeasureError, MeasureSpec, SpectralMeasure};
use crate::rmt::{green_probe, random_phases, sample_ensemble, Field, GreenContext, RmtError};
use crate::stats::{log_log_slope, median, percentile};
use crate::subordination::{solve_subordination, SolverConfig, SolverError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Edge(#[from] EdgeError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Rmt(#[from] RmtError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Rigidity,
    LocalLaw,
    EdgeFluct,
    Ks,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] = [Self::Rigidity, Self::LocalLaw, Self::EdgeFluct, Self::Ks];

    pub fn name(self) -> &'static str {
        match self {
            Self::Rigidity => "rigidity",
            Self::LocalLaw => "local-law",
            Self::EdgeFluct => "edge-fluct",
            Self::Ks => "ks",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown experiment '{s}' (expected rigidity, local-law, edge-fluct or ks)"))
    }
}

/// Pass/fail constants. Each one is a multiple of the natural scale of its statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// 90th percentile of `max_{i ≤ cN} |λ_i - γ_i*| i^{1/3} N^{2/3}`.
    pub rigidity_q90: f64,
    /// Allowed relative deviation of the per-doubling ratio of medians from `2^{-2/3}`.
    pub rigidity_ratio_tolerance: f64,
    /// 90th percentile of `Nη |m_H - m|` over the bulk grid.
    pub local_law_q90: f64,
    /// 90th percentile of `Nκ |m_H - m|` at the gated outside point.
    pub outside_q90: f64,
    /// 95th percentile of `N^{2/3} |λ₁ - E₋|`.
    pub edge_q95: f64,
    /// Allowed deviation of the fitted slope of median `|λ₁ - E₋|` from `-2/3`.
    pub edge_slope_tolerance: f64,
    /// `C` in the gate `q90(N·KS) ≤ C log N`.
    pub ks_log_constant: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            rigidity_q90: 10.0,
            rigidity_ratio_tolerance: 0.3,
            local_law_q90: 10.0,
            outside_q90: 20.0,
            edge_q95: 10.0,
            edge_slope_tolerance: 0.15,
            ks_log_constant: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Law of the diagonal of `A`; `a_i` is its `(i - 1/2)/N` quantile.
    pub measure_a: MeasureSpec,
    pub measure_b: MeasureSpec,
    pub n: Vec<usize>,
    pub seeds: Vec<u64>,
    pub field: Field,
    /// Slack exponent `ε` recorded with every statistic; the thresholds already include it.
    pub epsilon: f64,
    /// `η_m = N^{-1+γ}`
    pub gamma: f64,
    /// `η_M`
    pub eta_max: f64,
    /// Rigidity uses the `cN` lowest eigenvalues.
    pub rigidity_fraction: f64,
    /// Bulk energies as fractions of the way from `E₋` to `E₊`.
    pub bulk_positions: Vec<f64>,
    /// Bulk heights; empty means `{η_m, 0.02, 0.05, η_M}`.
    pub bulk_etas: Vec<f64>,
    /// Outside points `E = E₋ - offset`; the first one is gated.
    pub outside_offsets: Vec<f64>,
    pub outside_eta: f64,
    pub thresholds: Thresholds,
    pub solver: SolverConfig,
    pub density: DensityConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let uniform = MeasureSpec::Uniform { support: [0.0, 1.0] };
        Self {
            measure_a: uniform.clone(),
            measure_b: uniform,
            n: vec![500],
            seeds: (1..=20).collect(),
            field: Field::Unitary,
            epsilon: 0.0,
            gamma: 0.3,
            eta_max: 0.1,
            rigidity_fraction: 0.1,
            bulk_positions: vec![0.2, 0.35, 0.5, 0.65, 0.8],
            bulk_etas: Vec::new(),
            outside_offsets: vec![0.2, 0.05],
            outside_eta: 1e-4,
            thresholds: Thresholds::default(),
            solver: SolverConfig::default(),
            density: DensityConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reference campaign for `kind` on uniform[0,1] ⊞ uniform[0,1].
    pub fn for_kind(kind: ExperimentKind) -> Self {
        let base = Self::default();
        match kind {
            ExperimentKind::Rigidity => Self { n: vec![500, 1000], ..base },
            ExperimentKind::LocalLaw => base,
            ExperimentKind::EdgeFluct => Self { n: vec![250, 500, 1000, 2000], seeds: (1..=50).collect(), ..base },
            ExperimentKind::Ks => Self { n: vec![1000], ..base },
        }
    }

    /// Sorts and deduplicates `n` and `seeds` and checks ranges.
    pub fn resolve(mut self) -> Result<Self, ExperimentError> {
        self.n.sort_unstable();
        self.n.dedup();
        self.seeds.sort_unstable();
        self.seeds.dedup();
        let bad = |m: String| Err(ExperimentError::Invalid(m));
        if self.n.is_empty() || self.n.iter().any(|&n| n < 50) {
            return bad(format!("every N must be at least 50 (got {:?})", self.n));
        }
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        if !(self.epsilon >= 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in [0, 1)".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)".into());
        }
        if !(self.rigidity_fraction > 0.0 && self.rigidity_fraction <= 1.0) {
            return bad("rigidity_fraction must lie in (0, 1]".into());
        }
        if self.bulk_positions.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return bad("bulk positions must lie in (0, 1)".into());
        }
        if self.bulk_etas.iter().chain([&self.eta_max, &self.outside_eta]).any(|e| !(*e > 0.0 && e.is_finite())) {
            return bad("heights must be positive".into());
        }
        if self.outside_offsets.iter().any(|o| !(*o > 0.0)) {
            return bad("outside offsets must be positive".into());
        }
        self.solver.validate()?;
        SpectralMeasure::from_spec(&self.measure_a)?;
        SpectralMeasure::from_spec(&self.measure_b)?;
        Ok(self)
    }

    /// SHA-256 of the canonical (sorted-key) JSON of the config.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(canonical_json(self).as_bytes()))
    }

    fn bulk_heights(&self, n: usize) -> Vec<f64> {
        if !self.bulk_etas.is_empty() {
            return self.bulk_etas.clone();
        }
        let eta_m = (n as f64).powf(-1.0 + self.gamma);
        let mut v = vec![eta_m, 0.02, 0.05, self.eta_max];
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

/// Pretty JSON with object keys sorted.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    // serde_json's Value map is a BTreeMap, so the round trip sorts keys.
    let v = serde_json::to_value(value).expect("serializable");
    serde_json::to_string_pretty(&v).expect("serializable")
}

/// One statistic for one `(N, seed)` and, where relevant, one spectral parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub n: usize,
    pub seed: u64,
    pub statistic: String,
    pub energy: Option<f64>,
    pub eta: Option<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub median: f64,
    pub q90: f64,
    pub q95: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            return Self { count: 0, median: f64::NAN, q90: f64::NAN, q95: f64::NAN, max: f64::NAN };
        }
        Self {
            count: finite.len(),
            median: median(&finite),
            q90: percentile(&finite, 0.9),
            q95: percentile(&finite, 0.95),
            max: finite.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Aggregate of one statistic at one `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub n: usize,
    pub statistic: String,
    /// The high-probability bound the statistic is normalized by.
    pub bound: String,
    pub slack_exponent: f64,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub quantity: String,
    pub n: Vec<usize>,
    pub values: Vec<f64>,
    pub slope: f64,
    pub slope_stderr: f64,
    pub expected_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub name: String,
    pub achieved: f64,
    /// Human-readable acceptance condition.
    pub condition: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentKind,
    pub config: ExperimentConfig,
    pub config_hash: String,
    /// `𝒦 = ‖A‖ + ‖B‖ + 1` at the largest `N`.
    pub operator_scale: f64,
    pub edges: Vec<EdgeCell>,
    pub cells: Vec<Cell>,
    pub fits: Vec<ScalingFit>,
    pub gates: Vec<Gate>,
    /// Points where a solver failed; their statistics are omitted.
    pub flagged: Vec<String>,
    pub records: Vec<SeedRecord>,
    /// Fewer than [`MIN_SEEDS`] seeds: gates are evaluated but carry no statistical weight.
    pub underpowered: bool,
    pub pass: bool,
}

pub const MIN_SEEDS: usize = 10;

/// Support of the discretized pair at one `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeCell {
    pub n: usize,
    pub lower: f64,
    pub upper: f64,
}

pub const RECORDS_CSV_HEADER: &str = "n,seed,statistic,E,eta,value";

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        canonical_json(self)
    }

    pub fn records_csv(&self) -> String {
        let mut out = format!("{RECORDS_CSV_HEADER}\n");
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            out.push_str(&format!("{},{},{},{},{},{}\n", r.n, r.seed, r.statistic, opt(r.energy), opt(r.eta), r.value));
        }
        out
    }

    pub fn gate(&self, name: &str) -> Option<&Gate> {
        self.gates.iter().find(|g| g.name == name)
    }

    pub fn cell(&self, n: usize, statistic: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.n == n && c.statistic == statistic)
    }
}

/// Diagonals and limiting measures at one `N`.
struct Fixture {
    a: Vec<f64>,
    b: Vec<f64>,
    mu_a: SpectralMeasure,
    mu_b: SpectralMeasure,
    scale: f64,
}

impl Fixture {
    fn new(cfg: &ExperimentConfig, n: usize) -> Result<Self, ExperimentError> {
        let ma = SpectralMeasure::from_spec(&cfg.measure_a)?;
        let mb = SpectralMeasure::from_spec(&cfg.measure_b)?;
        let grid = |m: &SpectralMeasure| -> Vec<f64> { (1..=n).map(|j| m.quantile((j as f64 - 0.5) / n as f64)).collect() };
        let (a, b) = (grid(&ma), grid(&mb));
        let norm = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let scale = norm(&a) + norm(&b) + 1.0;
        Ok(Self { mu_a: SpectralMeasure::empirical(&a)?, mu_b: SpectralMeasure::empirical(&b)?, a, b, scale })
    }

    fn eigenvalues(&self, seed: u64, field: Field) -> Result<Vec<f64>, RmtError> {
        Ok(sample_ensemble(&self.a, &self.b, seed, field, false)?.eigenvalues)
    }

    fn edges(&self, solver: &SolverConfig) -> Result<(f64, f64), ExperimentError> {
        let r = locate_edges(&self.mu_a, &self.mu_b, solver)?;
        Ok((r.lower, r.upper))
    }
}

/// Runs `f` over the seeds in parallel and returns the results in seed order.
fn map_seeds<T: Send, F: Fn(u64) -> T + Sync>(seeds: &[u64], f: F) -> Vec<T> {
    seeds.par_iter().map(|&s| f(s)).collect()
}

fn record(n: usize, seed: u64, statistic: &str, value: f64) -> SeedRecord {
    SeedRecord { n, seed, statistic: statistic.to_string(), energy: None, eta: None, value }
}

fn values_of<'a>(records: &'a [SeedRecord], n: usize, statistic: &'a str) -> impl Iterator<Item = f64> + 'a {
    records.iter().filter(move |r| r.n == n && r.statistic == statistic).map(|r| r.value)
}

fn cell(records: &[SeedRecord], n: usize, statistic: &str, bound: &str, eps: f64) -> Cell {
    let v: Vec<f64> = values_of(records, n, statistic).collect();
    Cell { n, statistic: statistic.to_string(), bound: bound.to_string(), slack_exponent: eps, summary: Summary::of(&v) }
}

fn gate(name: String, achieved: f64, condition: String, pass: bool) -> Gate {
    Gate { name, achieved, condition, pass: pass && achieved.is_finite() }
}

pub fn run_experiment(kind: ExperimentKind, cfg: ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    let cfg = cfg.resolve()?;
    match kind {
        ExperimentKind::Rigidity => rigidity_experiment(&cfg),
        ExperimentKind::LocalLaw => local_law_experiment(&cfg),
        ExperimentKind::EdgeFluct => edge_fluctuation_experiment(&cfg),
        ExperimentKind::Ks => ks_experiment(&cfg),
    }
}

struct Accumulator {
    records: Vec<SeedRecord>,
    cells: Vec<Cell>,
    fits: Vec<ScalingFit>,
    gates: Vec<Gate>,
    edges: Vec<EdgeCell>,
    flagged: Vec<String>,
    scale: f64,
}

impl Accumulator {
    fn new() -> Self {
        Self { records: Vec::new(), cells: Vec::new(), fits: Vec::new(), gates: Vec::new(), edges: Vec::new(), flagged: Vec::new(), scale: 0.0 }
    }

    fn finish(self, kind: ExperimentKind, cfg: &ExperimentConfig) -> ExperimentReport {
        let pass = !self.gates.is_empty() && self.gates.iter().all(|g| g.pass);
        ExperimentReport {
            experiment: kind,
            config: cfg.clone(),
            config_hash: cfg.hash(),
            operator_scale: self.scale,
            edges: self.edges,
            cells: self.cells,
            fits: self.fits,
            gates: self.gates,
            flagged: self.flagged,
            records: self.records,
            underpowered: cfg.seeds.len() < MIN_SEEDS,
            pass,
        }
    }

    /// Collects per-seed results, turning errors into flags.
    fn absorb(&mut self, n: usize, seeds: &[u64], results: Vec<Result<Vec<SeedRecord>, RmtError>>) {
        for (seed, r) in seeds.iter().zip(results) {
            match r {
                Ok(mut recs) => self.records.append(&mut recs),
                Err(e) => self.flagged.push(format!("N={n} seed={seed}: {e}")),
            }
        }
    }
}

const RIGIDITY_BOUND: &str = "|λ_i - γ_i*| ≺ i^{-1/3} N^{-2/3} for i ≤ cN";

pub fn rigidity_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    let mut acc = Accumulator::new();
    let mu_a = SpectralMeasure::from_spec(&cfg.measure_a)?;
    let mu_b = SpectralMeasure::from_spec(&cfg.measure_b)?;
    let limit = ConvolutionCdf::new(&mu_a, &mu_b, &cfg.density)?;
    let eps = cfg.epsilon;
    let mut medians = Vec::new();
    for &n in &cfg.n {
        let fx = Fixture::new(cfg, n)?;
        acc.scale = fx.scale;
        let cdf = ConvolutionCdf::new(&fx.mu_a, &fx.mu_b, &cfg.density)?;
        acc.edges.push(EdgeCell { n, lower: cdf.lower(), upper: cdf.upper() });
        let gamma_star = cdf.quantile_table(n, QuantileSource::DiscretizedPair).gamma;
        let gamma = limit.quantile_table(n, QuantileSource::ContinuousPair).gamma;
        let cut = ((cfg.rigidity_fraction * n as f64).floor() as usize).max(1);
        let n23 = (n as f64).powf(2.0 / 3.0);
        let results = map_seeds(&cfg.seeds, |seed| {
            let lam = fx.eigenvalues(seed, cfg.field)?;
            let (mut r_star, mut raw_star, mut r_cont) = (0.0f64, 0.0f64, 0.0f64);
            for i in 0..cut {
                let w = ((i + 1) as f64).powf(1.0 / 3.0) * n23;
                let d = (lam[i] - gamma_star[i]).abs();
                raw_star = raw_star.max(d);
                r_star = r_star.max(d * w);
                r_cont = r_cont.max((lam[i] - gamma[i]).abs() * w);
            }
            Ok(vec![
                record(n, seed, "rigidity_discretized", r_star),
                record(n, seed, "max_deviation_discretized", raw_star),
                record(n, seed, "rigidity_continuous", r_cont),
            ])
        });
        acc.absorb(n, &cfg.seeds, results);
        for stat in ["rigidity_discretized", "rigidity_continuous"] {
            acc.cells.push(cell(&acc.records, n, stat, RIGIDITY_BOUND, eps));
        }
        let raw = cell(&acc.records, n, "max_deviation_discretized", "max_{i ≤ cN} |λ_i - γ_i*| ≺ N^{-2/3}", eps);
        medians.push(raw.summary.median);
        acc.cells.push(raw);
        let q90 = acc.cell(n, "rigidity_discretized").summary.q90;
        let t = cfg.thresholds.rigidity_q90;
        acc.gates.push(gate(format!("rigidity_q90_N{n}"), q90, format!("q90 ≤ {t}"), q90 <= t));
    }
    if cfg.n.len() >= 2 {
        let ns: Vec<f64> = cfg.n.iter().map(|&n| n as f64).collect();
        let fit = log_log_slope(&ns, &medians);
        let ratio = 2f64.powf(fit.slope);
        let target = 2f64.powf(-2.0 / 3.0);
        let tol = cfg.thresholds.rigidity_ratio_tolerance;
        acc.gates.push(gate(
            "rigidity_doubling_ratio".into(),
            ratio,
            format!("median ratio per doubling within {:.0}% of 2^(-2/3) = {target:.4}", tol * 100.0),
            (ratio / target - 1.0).abs() <= tol,
        ));
        acc.fits.push(ScalingFit { quantity: "median max_deviation_discretized".into(), n: cfg.n.clone(), values: medians, slope: fit.slope, slope_stderr: fit.slope_stderr, expected_slope: -2.0 / 3.0 });
    }
    Ok(acc.finish(ExperimentKind::Rigidity, cfg))
}

impl Accumulator {
    fn cell(&self, n: usize, statistic: &str) -> &Cell {
        self.cells.iter().find(|c| c.n == n && c.statistic == statistic).expect("cell pushed before use")
    }
}

const LOCAL_LAW_BOUND: &str = "|m_H(z) - m(z)| ≺ 1/(Nη)";
const WEIGHTED_BOUND: &str = "|(1/N) Σ d_i (G_ii - 1/(a_i - ω_B))| ≺ 1/(Nη)";
const OUTSIDE_BOUND: &str = "|m_H(z) - m(z)| ≺ 1/(N(κ + η)) outside the spectrum";

pub fn local_law_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    let mut acc = Accumulator::new();
    let eps = cfg.epsilon;
    for &n in &cfg.n {
        let fx = Fixture::new(cfg, n)?;
        acc.scale = fx.scale;
        let (lo, hi) = fx.edges(&cfg.solver)?;
        acc.edges.push(EdgeCell { n, lower: lo, upper: hi });

        // Limiting quantities at every grid point, shared by all seeds.
        let mut bulk = Vec::new();
        for &p in &cfg.bulk_positions {
            for &eta in &cfg.bulk_heights(n) {
                bulk.push(Complex64::new(lo + p * (hi - lo), eta));
            }
        }
        let outside: Vec<Complex64> = cfg.outside_offsets.iter().map(|o| Complex64::new(lo - o, cfg.outside_eta)).collect();
        let mut solve = |z: Complex64| match solve_subordination(&fx.mu_a, &fx.mu_b, z, &cfg.solver, None) {
            Ok(p) => Some(p),
            Err(e) => {
                acc.flagged.push(format!("N={n} z={z}: {e}"));
                None
            }
        };
        let bulk: Vec<_> = bulk.into_iter().filter_map(|z| solve(z).map(|p| (z, p))).collect();
        let outside: Vec<_> = outside.into_iter().filter_map(|z| solve(z).map(|p| (z, p))).collect();

        let results = map_seeds(&cfg.seeds, |seed| -> Result<Vec<SeedRecord>, RmtError> {
            let sample = sample_ensemble(&fx.a, &fx.b, seed, cfg.field, true)?;
            let ctx = GreenContext::new(&sample)?;
            let phases = random_phases(n, seed);
            let mut out = Vec::new();
            let mut push = |stat: &str, z: Complex64, v: f64| out.push(SeedRecord { n, seed, statistic: stat.into(), energy: Some(z.re), eta: Some(z.im), value: v });
            for (z, pair) in &bulk {
                let probe = green_probe(&ctx, *z)?;
                let ne = n as f64 * z.im;
                push("bulk_averaged", *z, ne * (probe.m_h - pair.m).norm());
                let dev: Vec<Complex64> = probe.g_diag.iter().zip(&fx.a).map(|(g, a)| g - 1.0 / (a - pair.omega2)).collect();
                let avg = |w: &dyn Fn(usize) -> Complex64| ne * ((0..n).map(|i| w(i) * dev[i]).sum::<Complex64>() / n as f64).norm();
                push("bulk_weighted_one", *z, avg(&|_| Complex64::new(1.0, 0.0)));
                push("bulk_weighted_a", *z, avg(&|i| Complex64::new(fx.a[i], 0.0)));
                push("bulk_weighted_phase", *z, avg(&|i| phases[i]));
            }
            for (k, (z, pair)) in outside.iter().enumerate() {
                let mh = sample.stieltjes(*z);
                let kappa = lo - z.re;
                let d = (mh - pair.m).norm();
                if k == 0 {
                    push("outside_kappa", *z, n as f64 * kappa * d);
                }
                push("outside_kappa_eta", *z, n as f64 * (kappa + z.im) * d);
            }
            Ok(out)
        });
        acc.absorb(n, &cfg.seeds, results);
        acc.cells.push(cell(&acc.records, n, "bulk_averaged", LOCAL_LAW_BOUND, eps));
        for w in ["bulk_weighted_one", "bulk_weighted_a", "bulk_weighted_phase"] {
            acc.cells.push(cell(&acc.records, n, w, WEIGHTED_BOUND, eps));
        }
        acc.cells.push(cell(&acc.records, n, "outside_kappa", OUTSIDE_BOUND, eps));
        acc.cells.push(cell(&acc.records, n, "outside_kappa_eta", OUTSIDE_BOUND, eps));

        let t = cfg.thresholds;
        let q = acc.cell(n, "bulk_averaged").summary.q90;
        acc.gates.push(gate(format!("local_law_bulk_q90_N{n}"), q, format!("q90 ≤ {}", t.local_law_q90), q <= t.local_law_q90));
        if !outside.is_empty() {
            let q = acc.cell(n, "outside_kappa").summary.q90;
            acc.gates.push(gate(format!("local_law_outside_q90_N{n}"), q, format!("q90 ≤ {}", t.outside_q90), q <= t.outside_q90));
        }
    }
    Ok(acc.finish(ExperimentKind::LocalLaw, cfg))
}

const EDGE_BOUND: &str = "|λ₁ - E₋| ≺ N^{-2/3}";

pub fn edge_fluctuation_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    let mut acc = Accumulator::new();
    let eps = cfg.epsilon;
    let mut medians = Vec::new();
    for &n in &cfg.n {
        let fx = Fixture::new(cfg, n)?;
        acc.scale = fx.scale;
        let (lo, hi) = fx.edges(&cfg.solver)?;
        acc.edges.push(EdgeCell { n, lower: lo, upper: hi });
        let floor = fx.a.iter().copied().fold(f64::INFINITY, f64::min) + fx.b.iter().copied().fold(f64::INFINITY, f64::min);
        let n23 = (n as f64).powf(2.0 / 3.0);
        let results = map_seeds(&cfg.seeds, |seed| {
            let lam = fx.eigenvalues(seed, cfg.field)?;
            let d = (lam[0] - lo).abs();
            Ok(vec![
                record(n, seed, "edge_scaled", n23 * d),
                record(n, seed, "edge_deviation", d),
                record(n, seed, "lambda1_minus_operator_floor", lam[0] - floor),
            ])
        });
        acc.absorb(n, &cfg.seeds, results);
        acc.cells.push(cell(&acc.records, n, "edge_scaled", EDGE_BOUND, eps));
        let raw = cell(&acc.records, n, "edge_deviation", EDGE_BOUND, eps);
        medians.push(raw.summary.median);
        acc.cells.push(raw);
        let q = acc.cell(n, "edge_scaled").summary.q95;
        let t = cfg.thresholds.edge_q95;
        acc.gates.push(gate(format!("edge_q95_N{n}"), q, format!("q95 ≤ {t}"), q <= t));
        let worst = values_of(&acc.records, n, "lambda1_minus_operator_floor").fold(f64::INFINITY, f64::min);
        acc.gates.push(gate(format!("lambda1_above_floor_N{n}"), worst, "λ₁ ≥ min a + min b - 1e-9".into(), worst >= -1e-9));
    }
    if cfg.n.len() >= 2 {
        let ns: Vec<f64> = cfg.n.iter().map(|&n| n as f64).collect();
        let fit = log_log_slope(&ns, &medians);
        let tol = cfg.thresholds.edge_slope_tolerance;
        acc.gates.push(gate("edge_slope".into(), fit.slope, format!("slope within {tol} of -2/3"), (fit.slope + 2.0 / 3.0).abs() <= tol));
        acc.fits.push(ScalingFit { quantity: "median edge_deviation".into(), n: cfg.n.clone(), values: medians, slope: fit.slope, slope_stderr: fit.slope_stderr, expected_slope: -2.0 / 3.0 });
    }
    Ok(acc.finish(ExperimentKind::EdgeFluct, cfg))
}

const KS_BOUND: &str = "sup_x |F_H(x) - F(x)| ≺ 1/N";

pub fn ks_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    let mut acc = Accumulator::new();
    let eps = cfg.epsilon;
    let mut medians = Vec::new();
    for &n in &cfg.n {
        let fx = Fixture::new(cfg, n)?;
        acc.scale = fx.scale;
        let cdf = ConvolutionCdf::new(&fx.mu_a, &fx.mu_b, &cfg.density)?;
        acc.edges.push(EdgeCell { n, lower: cdf.lower(), upper: cdf.upper() });
        let results = map_seeds(&cfg.seeds, |seed| {
            let lam = fx.eigenvalues(seed, cfg.field)?;
            let ks = kolmogorov_distance(&lam, &cdf).map_err(|e| RmtError::Invalid(e.to_string()))?;
            Ok(vec![record(n, seed, "ks_scaled", n as f64 * ks)])
        });
        acc.absorb(n, &cfg.seeds, results);
        let c = cell(&acc.records, n, "ks_scaled", KS_BOUND, eps);
        medians.push(c.summary.median);
        let q = c.summary.q90;
        acc.cells.push(c);
        let limit = cfg.thresholds.ks_log_constant * (n as f64).ln();
        acc.gates.push(gate(format!("ks_q90_N{n}"), q, format!("q90 ≤ {} ln N = {limit:.3}", cfg.thresholds.ks_log_constant), q <= limit));
    }
    if cfg.n.len() >= 2 {
        let ns: Vec<f64> = cfg.n.iter().map(|&n| n as f64).collect();
        let fit = log_log_slope(&ns, &medians);
        acc.fits.push(ScalingFit { quantity: "median ks_scaled".into(), n: cfg.n.clone(), values: medians, slope: fit.slope, slope_stderr: fit.slope_stderr, expected_slope: 0.0 });
    }
    Ok(acc.finish(ExperimentKind::Ks, cfg))
}
