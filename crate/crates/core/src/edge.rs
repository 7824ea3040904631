//! Lower-edge analysis of `μ₁ ⊞ μ₂`.
//!
//! Below the support both subordination functions are real and the edge is the
//! point where the stability determinant `S = (F₁'(ω₂) - 1)(F₂'(ω₁) - 1) - 1`
//! reaches zero. Parametrizing the real branch by `w = ω₂`, with
//! `ω₁(w) = F₂⁻¹(F₁(w))` taken left of `supp μ₂`, the spectral parameter is
//!
//! ```text
//! z̃(w) = ω₁(w) + w - F₁(w),
//! ```
//!
//! and `S(w)` is increasing in `w`. The edge solves `S(w_e) = 0`, where `z̃` has a
//! nondegenerate maximum `E₋ = z̃(w_e)`, so `ω₂(z) - w_e ≈ -√(2/|z̃''|)·√(E₋ - z)`.
//! The upper edge is the lower edge of the reflected pair.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measure::{MeasureError, SpectralMeasure, SUPPORT_STANDOFF};
use crate::stats::{least_squares, log_log_slope};
use crate::subordination::{
    boundary_values, continuation_solve, ladder_heights, subordination_derivatives, SolverConfig, SolverError, SubordinationPair,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EdgeError {
    #[error("edge not found: {0}")]
    NotFound(String),
    #[error("edge is not a regular square-root edge: {0}")]
    Irregular(String),
    #[error("operation undefined for a point-mass summand: {0}")]
    Degenerate(String),
    #[error("edge expansion fit failed: {0}")]
    Fit(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// `S`, `T₁`, `T₂` at a solved pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityTriple {
    pub z: Complex64,
    pub s: Complex64,
    pub t1: Complex64,
    pub t2: Complex64,
}

pub fn stability_quantities(mu1: &SpectralMeasure, mu2: &SpectralMeasure, pair: &SubordinationPair) -> Result<StabilityTriple, EdgeError> {
    let a = mu1.transform(pair.omega2)?;
    let b = mu2.transform(pair.omega1)?;
    let (ga, gb) = (a.df - 1.0, b.df - 1.0);
    Ok(StabilityTriple {
        z: pair.z,
        s: ga * gb - 1.0,
        t1: 0.5 * (a.d2f * gb * gb + b.d2f * ga),
        t2: 0.5 * (b.d2f * ga * ga + a.d2f * gb),
    })
}

/// Which closed form the fitted square-root coefficient agrees with (to 1%).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientForm {
    SqrtTwoOverCurvature,
    TwoOverCurvature,
    Neither,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeExpansion {
    /// Leading coefficient `c` in `ω₂(E₋) - ω₂(z) ≈ c √(E₋ - z)`, fitted.
    pub coefficient: f64,
    /// `√(2/|z̃''|)`
    pub predicted: f64,
    pub form: CoefficientForm,
    /// Fitted exponent of `ω₂(E₋) - ω₂(z)` against `E₋ - z`.
    pub exponent: f64,
    pub exponent_stderr: f64,
    /// `c_ρ` in `ρ(E₋ + κ) ≈ c_ρ √κ`.
    pub density_coefficient: f64,
    /// Relative RMS residual of the three-term fit.
    pub fit_rms: f64,
    /// `(E₋ - z, ω₂(E₋) - ω₂(z))` on the ladder.
    pub samples: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeReport {
    pub lower: f64,
    pub upper: f64,
    /// Set when a summand is a point mass and the edges were obtained by translation.
    pub short_circuit: bool,
    pub omega1: Option<f64>,
    pub omega2: Option<f64>,
    /// `inf supp μ₂ - ω₁(E₋)`
    pub gap1: Option<f64>,
    /// `inf supp μ₁ - ω₂(E₋)`
    pub gap2: Option<f64>,
    /// Signed `z̃''(w_e)`; negative at a lower edge.
    pub z_second: Option<f64>,
    /// `|z̃''(w_e)|`
    pub curvature: Option<f64>,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    /// `|S|` at the located edge.
    pub edge_residual: f64,
    /// Grid bracket `[x_l, x_r]` from the boundary-value scan.
    pub bracket: Option<[f64; 2]>,
    /// Whether `Re ω₁`, `Re ω₂` increased along the scan below the edge.
    pub omega_monotone: bool,
    pub expansion: Option<EdgeExpansion>,
}

/// Real-axis data along the branch parametrized by `w = ω₂`.
#[derive(Debug, Clone, Copy)]
struct BranchPoint {
    w: f64,
    omega1: f64,
    f1: f64,
    df1: f64,
    d2f1: f64,
    df2: f64,
    d2f2: f64,
}

impl BranchPoint {
    fn s(&self) -> f64 {
        (self.df1 - 1.0) * (self.df2 - 1.0) - 1.0
    }

    fn z(&self) -> f64 {
        self.omega1 + self.w - self.f1
    }

    fn z_second(&self) -> f64 {
        self.d2f1 * (1.0 - self.df2) / self.df2 - self.d2f2 * self.df1 * self.df1 / self.df2.powi(3)
    }
}

fn real_transform(mu: &SpectralMeasure, x: f64) -> Result<crate::measure::Transform, MeasureError> {
    mu.transform(Complex64::new(x, 0.0))
}

/// Solves `F(v) = y` for `v` below `supp μ`, where `F` is increasing with `F' ≥ 1`.
/// `None` if `y` is not attained before the support.
pub fn inverse_f_below_support(mu: &SpectralMeasure, y: f64) -> Result<Option<f64>, MeasureError> {
    let inf = mu.inf_support();
    let f = |v: f64| real_transform(mu, v).map(|t| (t.f.re, t.df.re));
    let v0 = inf - 1.0;
    let (f0, _) = f(v0)?;
    let (mut lo, mut hi) = if y < f0 {
        // F(v0 - d) <= F(v0) - d because F' >= 1.
        (v0 - (f0 - y), v0)
    } else {
        let top = inf - 2.0 * SUPPORT_STANDOFF;
        if f(top)?.0 < y {
            return Ok(None);
        }
        (v0, top)
    };
    let mut v = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (fv, dfv) = f(v)?;
        let r = fv - y;
        if r.abs() <= 1e-15 * y.abs().max(1.0) {
            return Ok(Some(v));
        }
        if r > 0.0 {
            hi = v;
        } else {
            lo = v;
        }
        let newton = v - r / dfv;
        v = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 4.0 * f64::EPSILON * v.abs().max(1.0) {
            return Ok(Some(v));
        }
    }
    Ok(Some(v))
}

fn branch_point(mu1: &SpectralMeasure, mu2: &SpectralMeasure, w: f64) -> Result<Option<BranchPoint>, MeasureError> {
    let a = real_transform(mu1, w)?;
    let Some(omega1) = inverse_f_below_support(mu2, a.f.re)? else {
        return Ok(None);
    };
    let b = real_transform(mu2, omega1)?;
    Ok(Some(BranchPoint { w, omega1, f1: a.f.re, df1: a.df.re, d2f1: a.d2f.re, df2: b.df.re, d2f2: b.d2f.re }))
}

/// Locates the edge on the real branch by bisection in `w` followed by secant polish.
fn solve_branch_edge(mu1: &SpectralMeasure, mu2: &SpectralMeasure) -> Result<BranchPoint, EdgeError> {
    let inf1 = mu1.inf_support();
    let mut step = 1.0;
    let mut lo = loop {
        let w = inf1 - step;
        if let Some(p) = branch_point(mu1, mu2, w)? {
            if p.s() < 0.0 {
                break p;
            }
        }
        step *= 2.0;
        if step > 1e8 {
            return Err(EdgeError::NotFound("stability determinant never negative on the real branch".into()));
        }
    };
    let top = inf1 - 2.0 * SUPPORT_STANDOFF;
    let mut hi_w = top;
    let mut hi: Option<BranchPoint> = branch_point(mu1, mu2, top)?;
    if let Some(p) = hi {
        if p.s() < 0.0 {
            return Err(EdgeError::Irregular(format!("S stays negative up to the support of the first summand (S = {:e})", p.s())));
        }
    }
    // Bisection in w; a missing branch point counts as being past the edge.
    while hi_w - lo.w > 1e-10 {
        let mid = 0.5 * (lo.w + hi_w);
        match branch_point(mu1, mu2, mid)? {
            Some(p) if p.s() < 0.0 => lo = p,
            other => {
                hi_w = mid;
                hi = other;
            }
        }
    }
    let Some(mut hi) = hi else {
        return Err(EdgeError::Irregular("second subordination function reaches the support before S vanishes".into()));
    };
    // Illinois-type secant on the bracket.
    let (mut s_lo, mut s_hi) = (lo.s(), hi.s());
    let mut best = if s_hi.abs() < s_lo.abs() { hi } else { lo };
    for _ in 0..60 {
        if best.s().abs() <= 1e-15 || hi.w - lo.w <= 4.0 * f64::EPSILON * hi.w.abs().max(1.0) {
            break;
        }
        let w = hi.w - s_hi * (hi.w - lo.w) / (s_hi - s_lo);
        let w = if w > lo.w && w < hi.w { w } else { 0.5 * (lo.w + hi.w) };
        let Some(p) = branch_point(mu1, mu2, w)? else {
            break;
        };
        if p.s() < 0.0 {
            lo = p;
            s_lo = p.s();
            s_hi *= 0.5;
        } else {
            hi = p;
            s_hi = p.s();
            s_lo *= 0.5;
        }
        if p.s().abs() < best.s().abs() {
            best = p;
        }
    }
    Ok(best)
}

struct Scan {
    bracket: Option<[f64; 2]>,
    monotone: bool,
}

/// Boundary-value scan from `inf supp μ₁ + inf supp μ₂ - 1` upward until `Im m > 1e-4`.
fn scan_bracket(mu1: &SpectralMeasure, mu2: &SpectralMeasure, cfg: &SolverConfig) -> Scan {
    let start = mu1.inf_support() + mu2.inf_support() - 1.0;
    let stop = mu1.sup_support() + mu2.sup_support();
    let n = 96;
    let h = (stop - start) / n as f64;
    let mut prev: Option<(f64, SubordinationPair)> = None;
    let mut monotone = true;
    for k in 0..=n {
        let x = start + h * k as f64;
        let Ok(p) = boundary_values(mu1, mu2, x, cfg) else {
            return Scan { bracket: None, monotone: false };
        };
        if p.m.im > 1e-4 {
            return Scan { bracket: prev.map(|(xl, _)| [xl, x]), monotone };
        }
        if let Some((_, q)) = &prev {
            monotone &= p.omega1.re >= q.omega1.re && p.omega2.re >= q.omega2.re;
        }
        prev = Some((x, p));
    }
    Scan { bracket: None, monotone }
}

fn lower_edge_only(mu1: &SpectralMeasure, mu2: &SpectralMeasure) -> Result<(f64, Option<BranchPoint>), EdgeError> {
    if let Some(a) = mu1.point_mass_location() {
        return Ok((a + mu2.inf_support(), None));
    }
    if let Some(b) = mu2.point_mass_location() {
        return Ok((b + mu1.inf_support(), None));
    }
    let p = solve_branch_edge(mu1, mu2)?;
    Ok((p.z(), Some(p)))
}

/// Locates both edges and the local data at the lower edge.
pub fn locate_edges(mu1: &SpectralMeasure, mu2: &SpectralMeasure, cfg: &SolverConfig) -> Result<EdgeReport, EdgeError> {
    cfg.validate()?;
    if mu1.is_point_mass() && mu2.is_point_mass() {
        return Err(EdgeError::Degenerate("both summands are point masses".into()));
    }
    let (lower, branch) = lower_edge_only(mu1, mu2)?;
    let (neg_upper, _) = lower_edge_only(&mu1.reflect(), &mu2.reflect())?;
    let upper = -neg_upper;
    if !(lower < upper) {
        return Err(EdgeError::NotFound(format!("edges out of order: {lower} >= {upper}")));
    }
    let Some(p) = branch else {
        return Ok(EdgeReport {
            lower,
            upper,
            short_circuit: true,
            omega1: None,
            omega2: None,
            gap1: None,
            gap2: None,
            z_second: None,
            curvature: None,
            t1: None,
            t2: None,
            edge_residual: 0.0,
            bracket: None,
            omega_monotone: true,
            expansion: None,
        });
    };
    let scan = scan_bracket(mu1, mu2, cfg);
    if let Some([xl, xr]) = scan.bracket {
        let slack = 1e-8 * lower.abs().max(1.0);
        if lower < xl - slack || lower > xr + slack {
            return Err(EdgeError::NotFound(format!("branch edge {lower} outside scan bracket [{xl}, {xr}]")));
        }
    }
    let zs = p.z_second();
    let (ga, gb) = (p.df1 - 1.0, p.df2 - 1.0);
    Ok(EdgeReport {
        lower,
        upper,
        short_circuit: false,
        omega1: Some(p.omega1),
        omega2: Some(p.w),
        gap1: Some(mu2.inf_support() - p.omega1),
        gap2: Some(mu1.inf_support() - p.w),
        z_second: Some(zs),
        curvature: Some(zs.abs()),
        t1: Some(0.5 * (p.d2f1 * gb * gb + p.d2f2 * ga)),
        t2: Some(0.5 * (p.d2f2 * ga * ga + p.d2f1 * gb)),
        edge_residual: p.s().abs(),
        bracket: scan.bracket,
        omega_monotone: scan.monotone,
        expansion: None,
    })
}

/// `z̃(w)` on the real branch, exposed for cross-checks of the edge curvature.
pub fn branch_spectral_parameter(mu1: &SpectralMeasure, mu2: &SpectralMeasure, w: f64) -> Result<Option<f64>, MeasureError> {
    Ok(branch_point(mu1, mu2, w)?.map(|p| p.z()))
}

/// Fits the square-root expansion of `ω₂` on the ladder `z = E₋ - 2^{-k}`, `k = 8..=20`.
pub fn edge_expansion(mu1: &SpectralMeasure, mu2: &SpectralMeasure, report: &EdgeReport, cfg: &SolverConfig) -> Result<EdgeExpansion, EdgeError> {
    if report.short_circuit {
        return Err(EdgeError::Degenerate("no square-root expansion for a translated measure".into()));
    }
    let (Some(w_e), Some(curv)) = (report.omega2, report.curvature) else {
        return Err(EdgeError::Degenerate("edge report lacks subordination data".into()));
    };
    let mut kappa = Vec::new();
    let mut delta = Vec::new();
    for k in 8..=20 {
        let kap = 2f64.powi(-k);
        let p = boundary_values(mu1, mu2, report.lower - kap, cfg)?;
        kappa.push(kap);
        delta.push(w_e - p.omega2.re);
    }
    if delta.iter().any(|d| !(*d > 0.0)) {
        return Err(EdgeError::Fit("ω₂ not increasing towards the edge".into()));
    }
    let s: Vec<f64> = kappa.iter().map(|k| k.sqrt()).collect();
    let cols = vec![s.clone(), s.iter().map(|v| v * v).collect(), s.iter().map(|v| v * v * v).collect()];
    // Relative weighting so the small-κ points count as much as the large ones.
    let wcols: Vec<Vec<f64>> = cols.iter().map(|c| c.iter().zip(&delta).map(|(a, d)| a / d).collect()).collect();
    let ones = vec![1.0; delta.len()];
    let (coef, resid) = least_squares(&wcols, &ones);
    let fit_rms = resid / (delta.len() as f64).sqrt();
    if !(fit_rms < 1e-4) {
        return Err(EdgeError::Fit(format!("three-term square-root model misfits (relative rms {fit_rms:e})")));
    }
    let c = coef[0];
    let predicted = (2.0 / curv).sqrt();
    let form = if ((c - predicted) / predicted).abs() < 0.01 {
        CoefficientForm::SqrtTwoOverCurvature
    } else if ((c - 2.0 / curv) / (2.0 / curv)).abs() < 0.01 {
        CoefficientForm::TwoOverCurvature
    } else {
        CoefficientForm::Neither
    };
    let slope = log_log_slope(&kappa, &delta);
    let dm1 = real_transform(mu1, w_e)?.dm.re;
    Ok(EdgeExpansion {
        coefficient: c,
        predicted,
        form,
        exponent: slope.slope,
        exponent_stderr: slope.slope_stderr,
        density_coefficient: dm1 * c / std::f64::consts::PI,
        fit_rms,
        samples: kappa.iter().zip(&delta).map(|(k, d)| [*k, *d]).collect(),
    })
}

/// Which part of the edge neighbourhood a probe row samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeRegion {
    /// `z = E₋ + κ` on the real axis inside the support (boundary value).
    Inside,
    /// `z = E₋ - κ + iη` below the edge.
    Outside,
    /// `z = E₋ + κ + iη` with `κ ∈ {0, η}`.
    Above,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub region: ProbeRegion,
    pub e: f64,
    pub eta: f64,
    pub kappa: f64,
    pub re_m: f64,
    pub im_m: f64,
    pub abs_s: f64,
    pub abs_omega1_prime: f64,
    pub abs_omega2_prime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub rows: Vec<ProbeRow>,
    /// Slope of `ln Im m(E₋ + κ)` against `ln κ`.
    pub inside_exponent: f64,
    /// Slope of `ln |S|` against `ln(κ + η)` above the edge.
    pub s_exponent: f64,
    /// Slopes of `ln |ω_j'|` against `ln(κ + η)`.
    pub omega1_prime_exponent: f64,
    pub omega2_prime_exponent: f64,
    /// `max Im m · √κ / η` over the outside rows.
    pub outside_ratio: f64,
}

pub const PROBE_CSV_HEADER: &str = "E,eta,kappa,re_m,im_m,abs_S,abs_omega1_prime,abs_omega2_prime";

impl ProbeRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.e, self.eta, self.kappa, self.re_m, self.im_m, self.abs_s, self.abs_omega1_prime, self.abs_omega2_prime
        )
    }
}

fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64)).collect()
}

/// Samples `Im m`, `|S|` and `|ω'|` in a neighbourhood of the lower edge and fits
/// their scaling exponents.
pub fn scaling_probe(mu1: &SpectralMeasure, mu2: &SpectralMeasure, report: &EdgeReport, cfg: &SolverConfig) -> Result<ProbeReport, EdgeError> {
    if report.short_circuit {
        return Err(EdgeError::Degenerate("no stability data for a translated measure".into()));
    }
    let e = report.lower;
    let mut rows = Vec::new();

    let mut inside_k = Vec::new();
    let mut inside_im = Vec::new();
    for kappa in geometric(1e-6, 1e-3, 13) {
        let p = boundary_values(mu1, mu2, e + kappa, cfg)?;
        inside_k.push(kappa);
        inside_im.push(p.m.im);
        rows.push(ProbeRow {
            region: ProbeRegion::Inside,
            e: e + kappa,
            eta: 0.0,
            kappa,
            re_m: p.m.re,
            im_m: p.m.im,
            abs_s: f64::NAN,
            abs_omega1_prime: f64::NAN,
            abs_omega2_prime: f64::NAN,
        });
    }

    let path_to = |x: f64, etas: &[f64]| -> Result<Vec<SubordinationPair>, EdgeError> {
        let mut heights: Vec<f64> = ladder_heights(cfg).into_iter().filter(|h| *h > etas[0]).collect();
        heights.extend_from_slice(etas);
        let pts: Vec<Complex64> = heights.iter().map(|&h| Complex64::new(x, h)).collect();
        let pairs = continuation_solve(mu1, mu2, &pts, cfg)?;
        Ok(pairs[pairs.len() - etas.len()..].to_vec())
    };

    let etas: Vec<f64> = geometric(1e-6, 1e-3, 13).into_iter().rev().collect();
    let mut above_scale = Vec::new();
    let (mut s_abs, mut w1p, mut w2p) = (Vec::new(), Vec::new(), Vec::new());
    for diagonal in [false, true] {
        for &eta in &etas {
            let kappa = if diagonal { eta } else { 0.0 };
            let p = path_to(e + kappa, &[eta])?[0];
            let d = subordination_derivatives(mu1, mu2, &p)?;
            above_scale.push(kappa + eta);
            s_abs.push(d.stability.norm());
            w1p.push(d.omega1_prime.norm());
            w2p.push(d.omega2_prime.norm());
            rows.push(ProbeRow {
                region: ProbeRegion::Above,
                e: e + kappa,
                eta,
                kappa,
                re_m: p.m.re,
                im_m: p.m.im,
                abs_s: d.stability.norm(),
                abs_omega1_prime: d.omega1_prime.norm(),
                abs_omega2_prime: d.omega2_prime.norm(),
            });
        }
    }

    let eta_out = 1e-6;
    let mut outside_ratio: f64 = 0.0;
    for kappa in geometric(1e-5, 1e-1, 13) {
        let p = path_to(e - kappa, &[eta_out])?[0];
        let d = subordination_derivatives(mu1, mu2, &p)?;
        outside_ratio = outside_ratio.max(p.m.im * kappa.sqrt() / eta_out);
        rows.push(ProbeRow {
            region: ProbeRegion::Outside,
            e: e - kappa,
            eta: eta_out,
            kappa,
            re_m: p.m.re,
            im_m: p.m.im,
            abs_s: d.stability.norm(),
            abs_omega1_prime: d.omega1_prime.norm(),
            abs_omega2_prime: d.omega2_prime.norm(),
        });
    }

    Ok(ProbeReport {
        rows,
        inside_exponent: log_log_slope(&inside_k, &inside_im).slope,
        s_exponent: log_log_slope(&above_scale, &s_abs).slope,
        omega1_prime_exponent: log_log_slope(&above_scale, &w1p).slope,
        omega2_prime_exponent: log_log_slope(&above_scale, &w2p).slope,
        outside_ratio,
    })
}
