//! Density, distribution function and `N`-quantiles of `μ₁ ⊞ μ₂`.
//!
//! The density is `Im m(x + i0)/π` from the boundary values of the subordination
//! solver. For the distribution function the support `[E₋, E₊]` is cut into two
//! edge zones, where `x = E₋ + u²` (resp. `E₊ - u²`) turns the edge behaviour
//! `ρ ~ √κ` (or `1/√κ`) into a smooth integrand in `u`, and a middle part. Every
//! piece is covered by adaptively refined Chebyshev panels whose antiderivatives
//! are exact, so the CDF, its inverse and the density are cheap to evaluate
//! once built.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edge::{locate_edges, EdgeError};
use crate::measure::SpectralMeasure;
use crate::subordination::{boundary_values, SolverConfig, SolverError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DensityError {
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Edge(#[from] EdgeError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    pub solver: SolverConfig,
    /// Points of the default density grid.
    pub grid_points: usize,
    /// Margin of the default grid beyond `[E₋, E₊]`.
    pub grid_margin: f64,
    /// Boundary-extrapolation error above which a grid point is marked unresolved.
    pub unresolved_tolerance: f64,
    /// Fraction of the support covered by each square-root zone of the CDF.
    pub edge_zone: f64,
    /// Absolute tolerance on the trailing Chebyshev coefficients of a CDF panel.
    pub panel_tolerance: f64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            grid_points: 2048,
            grid_margin: 0.1,
            unresolved_tolerance: 1e-6,
            edge_zone: 0.05,
            panel_tolerance: 1e-11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityTable {
    pub x: Vec<f64>,
    pub rho: Vec<f64>,
    pub im_m: Vec<f64>,
    pub re_m: Vec<f64>,
    pub resolved: Vec<bool>,
    pub error_estimate: Vec<f64>,
    /// Trapezoidal integral of `ρ` over the finite entries.
    pub mass: f64,
    pub eta_floor: f64,
}

pub const DENSITY_CSV_HEADER: &str = "x,rho,im_m,re_m,resolved";

impl DensityTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(DENSITY_CSV_HEADER);
        out.push('\n');
        for i in 0..self.x.len() {
            out.push_str(&format!("{},{},{},{},{}\n", self.x[i], self.rho[i], self.im_m[i], self.re_m[i], self.resolved[i]));
        }
        out
    }
}

/// `n` points on `[a, b]` clustered like Chebyshev extrema towards both ends.
pub fn cosine_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (a + b)];
    }
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    (0..n).map(|k| c - h * (std::f64::consts::PI * k as f64 / (n - 1) as f64).cos()).collect()
}

/// Density on a grid. Points where the boundary extension fails are kept with
/// `NaN` values and `resolved = false`.
pub fn density_grid(mu1: &SpectralMeasure, mu2: &SpectralMeasure, grid: &[f64], cfg: &DensityConfig) -> Result<DensityTable, DensityError> {
    cfg.solver.validate()?;
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(DensityError::Invalid("grid must be strictly increasing".into()));
    }
    let shifted = translate(mu1, mu2);
    let rows: Vec<(f64, f64, f64, bool, f64)> = grid
        .par_iter()
        .map(|&x| {
            if let Some((nu, a)) = &shifted {
                if let Some(d) = nu.density(x - a) {
                    return (d, std::f64::consts::PI * d, f64::NAN, true, 0.0);
                }
            }
            match boundary_values(mu1, mu2, x, &cfg.solver) {
                Ok(p) => {
                    let ok = p.error_estimate <= cfg.unresolved_tolerance;
                    (p.m.im / std::f64::consts::PI, p.m.im, p.m.re, ok, p.error_estimate)
                }
                Err(_) => (f64::NAN, f64::NAN, f64::NAN, false, f64::INFINITY),
            }
        })
        .collect();
    let rho: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let mut mass = 0.0;
    let mut last: Option<(f64, f64)> = None;
    for (&x, &r) in grid.iter().zip(&rho) {
        if r.is_finite() {
            if let Some((x0, r0)) = last {
                mass += 0.5 * (x - x0) * (r + r0);
            }
            last = Some((x, r));
        }
    }
    Ok(DensityTable {
        x: grid.to_vec(),
        rho,
        im_m: rows.iter().map(|r| r.1).collect(),
        re_m: rows.iter().map(|r| r.2).collect(),
        resolved: rows.iter().map(|r| r.3).collect(),
        error_estimate: rows.iter().map(|r| r.4).collect(),
        mass,
        eta_floor: cfg.solver.ladder_floor,
    })
}

/// Density on the default cosine grid spanning the support plus a margin.
pub fn density_default_grid(mu1: &SpectralMeasure, mu2: &SpectralMeasure, cfg: &DensityConfig) -> Result<DensityTable, DensityError> {
    let report = locate_edges(mu1, mu2, &cfg.solver)?;
    let grid = cosine_grid(report.lower - cfg.grid_margin, report.upper + cfg.grid_margin, cfg.grid_points);
    density_grid(mu1, mu2, &grid, cfg)
}

/// `Some((ν, a))` when one summand is `δ_a`, so that `μ₁ ⊞ μ₂ = ν(· - a)`.
fn translate(mu1: &SpectralMeasure, mu2: &SpectralMeasure) -> Option<(SpectralMeasure, f64)> {
    if let Some(a) = mu1.point_mass_location() {
        return Some((mu2.clone(), a));
    }
    mu2.point_mass_location().map(|b| (mu1.clone(), b))
}

// Chebyshev machinery on [-1, 1].

const PANEL_POINTS: usize = 33;
const MAX_DEPTH: usize = 12;

fn cheb_nodes(n: usize) -> Vec<f64> {
    (0..n).map(|k| (std::f64::consts::PI * k as f64 / (n - 1) as f64).cos()).collect()
}

/// Coefficients of the interpolant through values at `cheb_nodes(n)`.
fn cheb_coefficients(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let m = (n - 1) as f64;
    (0..n)
        .map(|j| {
            let mut s = 0.0;
            for (k, v) in values.iter().enumerate() {
                let w = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
                s += w * v * (std::f64::consts::PI * (j * k) as f64 / m).cos();
            }
            let s = 2.0 * s / m;
            if j == 0 || j == n - 1 {
                0.5 * s
            } else {
                s
            }
        })
        .collect()
}

/// Antiderivative vanishing at `s = -1`.
fn cheb_integral(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    let at = |j: usize| c.get(j).copied().unwrap_or(0.0);
    let mut b = vec![0.0; n + 1];
    b[1] = at(0) - 0.5 * at(2);
    for j in 2..=n {
        b[j] = (at(j - 1) - at(j + 1)) / (2.0 * j as f64);
    }
    // T_j(-1) = (-1)^j
    b[0] = -(1..=n).map(|j| if j % 2 == 0 { b[j] } else { -b[j] }).sum::<f64>();
    b
}

fn clenshaw(c: &[f64], s: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &ck in c.iter().skip(1).rev() {
        let b0 = ck + 2.0 * s * b1 - b2;
        b2 = b1;
        b1 = b0;
    }
    c[0] + s * b1 - b2
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Zone {
    /// `x = E₋ + u²` with `u = (t + 1)/2 · U`
    Lower { edge: f64, span: f64 },
    /// `x = a + (b - a)(t + 1)/2`
    Middle { a: f64, b: f64 },
    /// `x = E₊ - u²` with `u = (1 - t)/2 · U`
    Upper { edge: f64, span: f64 },
}

impl Zone {
    fn x(&self, t: f64) -> f64 {
        match *self {
            Zone::Lower { edge, span } => edge + (0.5 * (t + 1.0) * span).powi(2),
            Zone::Middle { a, b } => a + (b - a) * 0.5 * (t + 1.0),
            Zone::Upper { edge, span } => edge - (0.5 * (1.0 - t) * span).powi(2),
        }
    }

    fn dx_dt(&self, t: f64) -> f64 {
        match *self {
            Zone::Lower { span, .. } => 0.5 * (t + 1.0) * span * span,
            Zone::Middle { a, b } => 0.5 * (b - a),
            Zone::Upper { span, .. } => 0.5 * (1.0 - t) * span * span,
        }
    }

    fn t(&self, x: f64) -> f64 {
        let t = match *self {
            Zone::Lower { edge, span } => 2.0 * (x - edge).max(0.0).sqrt() / span - 1.0,
            Zone::Middle { a, b } => 2.0 * (x - a) / (b - a) - 1.0,
            Zone::Upper { edge, span } => 1.0 - 2.0 * (edge - x).max(0.0).sqrt() / span,
        };
        t.clamp(-1.0, 1.0)
    }
}

/// One Chebyshev panel: `t ∈ [t0, t1]` of its zone, local variable `s ∈ [-1, 1]`.
#[derive(Debug, Clone)]
struct Panel {
    zone: Zone,
    t0: f64,
    t1: f64,
    x0: f64,
    x1: f64,
    /// Integrand `ρ(x) dx/ds` in `s`.
    coef: Vec<f64>,
    /// Its antiderivative.
    integral: Vec<f64>,
    /// Unnormalized mass before the panel.
    before: f64,
    converged: bool,
}

impl Panel {
    fn t_of_s(&self, s: f64) -> f64 {
        self.t0 + 0.5 * (s + 1.0) * (self.t1 - self.t0)
    }

    fn s_of_x(&self, x: f64) -> f64 {
        let t = self.zone.t(x);
        (2.0 * (t - self.t0) / (self.t1 - self.t0) - 1.0).clamp(-1.0, 1.0)
    }

    fn dx_ds(&self, s: f64) -> f64 {
        self.zone.dx_dt(self.t_of_s(s)) * 0.5 * (self.t1 - self.t0)
    }

    fn mass(&self) -> f64 {
        clenshaw(&self.integral, 1.0)
    }
}

/// Distribution function of `μ₁ ⊞ μ₂` as a piecewise Chebyshev representation.
#[derive(Debug, Clone)]
pub struct ConvolutionCdf {
    lower: f64,
    upper: f64,
    mass: f64,
    panels: Vec<Panel>,
    translate: Option<(SpectralMeasure, f64)>,
    /// Whether `[lower, upper]` came from edge location rather than the support hull.
    edges_located: bool,
}

impl ConvolutionCdf {
    pub fn new(mu1: &SpectralMeasure, mu2: &SpectralMeasure, cfg: &DensityConfig) -> Result<Self, DensityError> {
        cfg.solver.validate()?;
        if !(cfg.edge_zone > 0.0 && cfg.edge_zone < 0.5) {
            return Err(DensityError::Invalid("edge_zone must lie in (0, 0.5)".into()));
        }
        if let Some((nu, a)) = translate(mu1, mu2) {
            let (lo, hi) = nu.support();
            return Ok(Self { lower: lo + a, upper: hi + a, mass: 1.0, panels: Vec::new(), translate: Some((nu, a)), edges_located: true });
        }
        let (lower, upper, edges_located) = match locate_edges(mu1, mu2, &cfg.solver) {
            Ok(r) => (r.lower, r.upper, true),
            // Edges that are not of square-root type (e.g. two-atom summands) fall back
            // to the support hull; the density vanishes on the excess.
            Err(EdgeError::Irregular(_)) | Err(EdgeError::NotFound(_)) => {
                (mu1.inf_support() + mu2.inf_support(), mu1.sup_support() + mu2.sup_support(), false)
            }
            Err(e) => return Err(e.into()),
        };
        let len = upper - lower;
        let zw = cfg.edge_zone * len;
        let span = zw.sqrt();
        let mut zones = vec![Zone::Lower { edge: lower, span }];
        let (a, b) = (lower + zw, upper - zw);
        let pieces = 8;
        for k in 0..pieces {
            zones.push(Zone::Middle { a: a + (b - a) * k as f64 / pieces as f64, b: a + (b - a) * (k + 1) as f64 / pieces as f64 });
        }
        zones.push(Zone::Upper { edge: upper, span });

        let integrand = |zone: Zone, t: f64| -> Result<f64, SolverError> {
            let x = zone.x(t);
            let j = zone.dx_dt(t);
            if j == 0.0 || x <= lower || x >= upper {
                return Ok(0.0);
            }
            let p = boundary_values(mu1, mu2, x, &cfg.solver)?;
            Ok(p.m.im / std::f64::consts::PI * j)
        };

        let mut panels = Vec::new();
        for zone in zones {
            let mut stack = vec![(-1.0, 1.0, 0usize)];
            let mut done: Vec<Panel> = Vec::new();
            while let Some((t0, t1, depth)) = stack.pop() {
                let vals: Vec<f64> = cheb_nodes(PANEL_POINTS)
                    .par_iter()
                    .map(|&s| integrand(zone, t0 + 0.5 * (s + 1.0) * (t1 - t0)).map(|v| v * 0.5 * (t1 - t0)))
                    .collect::<Result<_, _>>()?;
                let coef = cheb_coefficients(&vals);
                let tail = coef[PANEL_POINTS - 3..].iter().fold(0.0f64, |m, c| m.max(c.abs()));
                let converged = tail <= cfg.panel_tolerance;
                if !converged && depth < MAX_DEPTH {
                    let mid = 0.5 * (t0 + t1);
                    // Left half last so it is processed first.
                    stack.push((mid, t1, depth + 1));
                    stack.push((t0, mid, depth + 1));
                    continue;
                }
                let integral = cheb_integral(&coef);
                done.push(Panel { zone, t0, t1, x0: zone.x(t0), x1: zone.x(t1), coef, integral, before: 0.0, converged });
            }
            panels.extend(done);
        }
        let mut acc = 0.0;
        for p in &mut panels {
            p.before = acc;
            acc += p.mass();
        }
        if !(acc > 0.0) {
            return Err(DensityError::Invalid(format!("computed total mass {acc} is not positive")));
        }
        Ok(Self { lower, upper, mass: acc, panels, translate: None, edges_located })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    /// Integrated density before normalization; `1` up to quadrature and extrapolation error.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn edges_located(&self) -> bool {
        self.edges_located
    }

    /// Whether every panel met the coefficient tolerance.
    pub fn converged(&self) -> bool {
        self.panels.iter().all(|p| p.converged)
    }

    pub fn panel_count(&self) -> usize {
        self.panels.len()
    }

    fn panel_index(&self, x: f64) -> usize {
        self.panels.partition_point(|p| p.x1 < x).min(self.panels.len() - 1)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if let Some((nu, a)) = &self.translate {
            return nu.cdf(x - a);
        }
        if x <= self.lower {
            return 0.0;
        }
        if x >= self.upper {
            return 1.0;
        }
        let p = &self.panels[self.panel_index(x)];
        ((p.before + clenshaw(&p.integral, p.s_of_x(x))) / self.mass).clamp(0.0, 1.0)
    }

    /// Density of the interpolant, normalized like [`Self::cdf`]. `None` for a translated atomic measure.
    pub fn density(&self, x: f64) -> Option<f64> {
        if let Some((nu, a)) = &self.translate {
            return nu.density(x - a);
        }
        if x <= self.lower || x >= self.upper {
            return Some(0.0);
        }
        let p = &self.panels[self.panel_index(x)];
        let s = p.s_of_x(x);
        let j = p.dx_ds(s);
        Some(if j > 0.0 { (clenshaw(&p.coef, s) / j / self.mass).max(0.0) } else { 0.0 })
    }

    /// Smallest `x` with `cdf(x) >= p`, refined by safeguarded Newton inside the bracketing panel.
    pub fn quantile(&self, p: f64) -> f64 {
        self.quantile_from(p, None)
    }

    fn quantile_from(&self, p: f64, guess: Option<f64>) -> f64 {
        if let Some((nu, a)) = &self.translate {
            return nu.quantile(p) + a;
        }
        if p <= 0.0 {
            return self.lower;
        }
        if p >= 1.0 {
            return self.upper;
        }
        let target = p * self.mass;
        let k = self.panels.partition_point(|q| q.before + q.mass() < target).min(self.panels.len() - 1);
        let panel = &self.panels[k];
        let local = target - panel.before;
        let (mut lo, mut hi) = (-1.0, 1.0);
        let mut s = guess.filter(|g| *g > panel.x0 && *g < panel.x1).map_or(0.0, |g| panel.s_of_x(g));
        for _ in 0..200 {
            let r = clenshaw(&panel.integral, s) - local;
            if r >= 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            if hi - lo <= 4.0 * f64::EPSILON {
                break;
            }
            let d = clenshaw(&panel.coef, s);
            let newton = s - r / d;
            let next = if d > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if (next - s).abs() <= 2.0 * f64::EPSILON {
                s = next;
                break;
            }
            s = next;
        }
        panel.zone.x(panel.t_of_s(s)).clamp(self.lower, self.upper)
    }

    /// `c_ρ` in `ρ(E₋ + κ) ≈ c_ρ √κ`, read off the interpolant close to the edge.
    pub fn edge_density_coefficient(&self) -> Option<f64> {
        if self.translate.is_some() || !self.edges_located {
            return None;
        }
        let kappa = 1e-6 * (self.upper - self.lower);
        self.density(self.lower + kappa).map(|d| d / kappa.sqrt())
    }
}

/// Distribution function of `μ₁ ⊞ μ₂` at one point. Builds the full representation;
/// reuse a [`ConvolutionCdf`] for repeated evaluation.
pub fn cdf(mu1: &SpectralMeasure, mu2: &SpectralMeasure, x: f64, cfg: &DensityConfig) -> Result<f64, DensityError> {
    Ok(ConvolutionCdf::new(mu1, mu2, cfg)?.cdf(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileSource {
    ContinuousPair,
    DiscretizedPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTable {
    pub n: usize,
    /// `γ_j`, `j = 1..=n`
    pub gamma: Vec<f64>,
    pub source: QuantileSource,
    /// Indices whose inversion failed, with the reason.
    pub failures: Vec<(usize, String)>,
}

pub const QUANTILE_CSV_HEADER: &str = "j,gamma_j";

impl QuantileTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(QUANTILE_CSV_HEADER);
        out.push('\n');
        for (j, g) in self.gamma.iter().enumerate() {
            out.push_str(&format!("{},{}\n", j + 1, g));
        }
        out
    }
}

impl ConvolutionCdf {
    /// `γ_j = inf{x : cdf(x) >= j/n}` for `j = 1..=n`.
    pub fn quantile_table(&self, n: usize, source: QuantileSource) -> QuantileTable {
        let c_rho = self.edge_density_coefficient().filter(|c| *c > 0.0);
        let mut failures = Vec::new();
        let mut gamma: Vec<f64> = (1..=n)
            .map(|j| {
                let p = j as f64 / n as f64;
                // Square-root law: cdf(E₋ + κ) ≈ (2/3) c_ρ κ^{3/2}.
                let guess = c_rho.map(|c| self.lower + (3.0 * p / (2.0 * c)).powf(2.0 / 3.0));
                let g = self.quantile_from(p, guess);
                if !g.is_finite() {
                    failures.push((j, "quantile inversion produced a non-finite value".to_string()));
                }
                g
            })
            .collect();
        // Rounding can leave adjacent levels a few ulps out of order.
        for j in 1..gamma.len() {
            if gamma[j] < gamma[j - 1] {
                gamma[j] = gamma[j - 1];
            }
        }
        QuantileTable { n, gamma, source, failures }
    }
}

pub fn quantiles(mu1: &SpectralMeasure, mu2: &SpectralMeasure, n: usize, cfg: &DensityConfig) -> Result<QuantileTable, DensityError> {
    if n == 0 {
        return Err(DensityError::Invalid("N must be positive".into()));
    }
    let source = if mu1.is_atomic() && mu2.is_atomic() { QuantileSource::DiscretizedPair } else { QuantileSource::ContinuousPair };
    Ok(ConvolutionCdf::new(mu1, mu2, cfg)?.quantile_table(n, source))
}

/// `sup |F_N - F|` over the jump points of the empirical distribution of sorted `eigenvalues`.
pub fn kolmogorov_distance(eigenvalues: &[f64], cdf: &ConvolutionCdf) -> Result<f64, DensityError> {
    if eigenvalues.is_empty() {
        return Err(DensityError::Invalid("no eigenvalues".into()));
    }
    if eigenvalues.iter().any(|x| !x.is_finite()) {
        return Err(DensityError::Invalid("eigenvalues must be finite".into()));
    }
    if eigenvalues.windows(2).any(|w| w[1] < w[0]) {
        return Err(DensityError::Invalid("eigenvalues must be sorted in increasing order".into()));
    }
    let n = eigenvalues.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in eigenvalues.iter().enumerate() {
        let f = cdf.cdf(x);
        d = d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    Ok(d)
}
