//! Subordination solver for the free additive convolution `μ₁ ⊞ μ₂`.
//!
//! For `z` in the upper half-plane the pair `(ω₁, ω₂)` is the unique solution in
//! `ℂ⁺ × ℂ⁺` of
//!
//! ```text
//! F₁(ω₂) = F₂(ω₁) = ω₁ + ω₂ - z,
//! ```
//!
//! and then `m(z) = m₁(ω₂) = m₂(ω₁)`. Writing `H_j(ω) = F_j(ω) - ω`, the map
//! `ω₂ ↦ z + H₂(z + H₁(ω₂))` is an analytic self-map of `ℂ⁺` whose attracting
//! fixed point is `ω₂(z)`. The solver runs that iteration with damping and hands
//! over to Newton on the 2×2 system once it is close.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measure::{MeasureError, SpectralMeasure};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Residual tolerance on both subordination equations (scaled by `max(1, |ω|)`).
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Initial relaxation factor of the fixed-point update; halved whenever the residual grows.
    pub damping: f64,
    pub newton_polish: bool,
    /// Ratio between successive heights of the boundary-value ladder.
    pub ladder_factor: f64,
    /// Smallest height of the boundary-value ladder.
    pub ladder_floor: f64,
    /// Largest height of the boundary-value ladder.
    pub ladder_start: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 500,
            damping: 1.0,
            newton_polish: true,
            ladder_factor: 0.5,
            ladder_floor: 1e-9,
            ladder_start: 2.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |msg: &str| Err(SolverError::InvalidConfig(msg.to_string()));
        if !(self.tolerance > 0.0 && self.tolerance < 1e-3) {
            return bad("tolerance must lie in (0, 1e-3)");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad("damping must lie in (0, 1]");
        }
        if !(self.ladder_factor > 0.0 && self.ladder_factor < 1.0) {
            return bad("ladder_factor must lie in (0, 1)");
        }
        if !(self.ladder_floor > 0.0 && self.ladder_floor < self.ladder_start && self.ladder_start >= 2.0) {
            return bad("ladder must satisfy 0 < floor < start and start >= 2");
        }
        Ok(())
    }
}

/// Converged subordination functions at one spectral parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubordinationPair {
    pub z: Complex64,
    pub omega1: Complex64,
    pub omega2: Complex64,
    pub m: Complex64,
    /// `max(|F₁(ω₂) - ω₁ - ω₂ + z|, |F₂(ω₁) - ω₁ - ω₂ + z|)` at the returned point.
    pub residual: f64,
    pub iterations: usize,
    pub newton_steps: usize,
    pub restarts: usize,
    /// Extrapolation error for boundary values; zero for direct solves.
    pub error_estimate: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("spectral parameter {0} is not in the open upper half-plane")]
    InvalidPoint(Complex64),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("continuation precondition violated: {0}")]
    Precondition(String),
    #[error("no convergence at z = {} after {} iterations (residual {:e})", .best.z, .best.iterations, .best.residual)]
    Diverged { best: Box<SubordinationPair> },
    #[error("iterate left the upper half-plane at z = {z}")]
    Unstable { z: Complex64 },
    #[error("subordination functions disagree at z = {z}: |m₁(ω₂) - m₂(ω₁)| = {gap:e}")]
    Inconsistent { z: Complex64, gap: f64 },
    #[error("stability determinant |S| = {s:e} too small at z = {z}")]
    SingularJacobian { z: Complex64, s: f64 },
    #[error("boundary extension at x = {x} failed: {reason}")]
    BoundaryExtension { x: f64, reason: String },
    #[error("sweep failed at point {index}: {source}")]
    Sweep {
        index: usize,
        partial: Vec<SubordinationPair>,
        #[source]
        source: Box<SolverError>,
    },
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

fn residuals(mu1: &SpectralMeasure, mu2: &SpectralMeasure, z: Complex64, w1: Complex64, w2: Complex64) -> Result<(Complex64, Complex64), MeasureError> {
    let f1 = mu1.transform(w2)?.f;
    let f2 = mu2.transform(w1)?.f;
    Ok((f1 - w1 - w2 + z, f2 - w1 - w2 + z))
}

fn scaled_tol(cfg: &SolverConfig, w1: Complex64, w2: Complex64) -> f64 {
    cfg.tolerance * w1.norm().max(w2.norm()).max(1.0)
}

struct NewtonOutcome {
    w1: Complex64,
    w2: Complex64,
    residual: f64,
    steps: usize,
    converged: bool,
}

/// Damped Newton on `Φ(ω₁, ω₂) = 0`. The Jacobian determinant is `-S`.
fn newton(mu1: &SpectralMeasure, mu2: &SpectralMeasure, z: Complex64, mut w1: Complex64, mut w2: Complex64, cfg: &SolverConfig) -> NewtonOutcome {
    let floor_im = if z.im > 0.0 { 0.0 } else { f64::NEG_INFINITY };
    let mut steps = 0;
    let eval = |w1: Complex64, w2: Complex64| -> Option<(Complex64, Complex64, Complex64, Complex64)> {
        let t1 = mu1.transform(w2).ok()?;
        let t2 = mu2.transform(w1).ok()?;
        Some((t1.f - w1 - w2 + z, t2.f - w1 - w2 + z, t1.df, t2.df))
    };
    let Some(mut state) = eval(w1, w2) else {
        return NewtonOutcome { w1, w2, residual: f64::INFINITY, steps, converged: false };
    };
    let mut res = state.0.norm().max(state.1.norm());
    while steps < 60 {
        if res <= scaled_tol(cfg, w1, w2) {
            return NewtonOutcome { w1, w2, residual: res, steps, converged: true };
        }
        let (r1, r2, d1, d2) = state;
        // [[-1, F₁'-1], [F₂'-1, -1]] (δ₁, δ₂) = -(r₁, r₂)
        let (a, b, c, d) = (Complex64::new(-1.0, 0.0), d1 - 1.0, d2 - 1.0, Complex64::new(-1.0, 0.0));
        let det = a * d - b * c;
        if !(det.norm() > 1e-300) {
            break;
        }
        let dw1 = (-r1 * d + b * r2) / det;
        let dw2 = (-a * r2 + c * r1) / det;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let c1 = w1 + dw1 * lambda;
            let c2 = w2 + dw2 * lambda;
            if c1.im >= floor_im && c2.im >= floor_im {
                if let Some(s) = eval(c1, c2) {
                    let r = s.0.norm().max(s.1.norm());
                    if r < res || r <= scaled_tol(cfg, c1, c2) {
                        w1 = c1;
                        w2 = c2;
                        state = s;
                        res = r;
                        accepted = true;
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        steps += 1;
        if !accepted {
            break;
        }
    }
    let converged = res <= scaled_tol(cfg, w1, w2);
    NewtonOutcome { w1, w2, residual: res, steps, converged }
}

fn finish(mu1: &SpectralMeasure, z: Complex64, w1: Complex64, w2: Complex64, residual: f64, iterations: usize, newton_steps: usize, restarts: usize) -> Result<SubordinationPair, SolverError> {
    let m = mu1.transform(w2)?.m;
    Ok(SubordinationPair { z, omega1: w1, omega2: w2, m, residual, iterations, newton_steps, restarts, error_estimate: 0.0 })
}

/// Solves the subordination system at `z ∈ ℂ⁺`, optionally warm-started from a
/// nearby solution.
pub fn solve_subordination(
    mu1: &SpectralMeasure,
    mu2: &SpectralMeasure,
    z: Complex64,
    cfg: &SolverConfig,
    warm: Option<&SubordinationPair>,
) -> Result<SubordinationPair, SolverError> {
    cfg.validate()?;
    if !(z.im > 0.0 && z.re.is_finite() && z.im.is_finite()) {
        return Err(SolverError::InvalidPoint(z));
    }
    let i = Complex64::i();
    let mut newton_steps = 0;

    if let (Some(p), true) = (warm, cfg.newton_polish) {
        let mut w2 = p.omega2;
        w2.im = w2.im.max(z.im);
        let w1 = z + mu1.transform(w2)?.f - w2;
        let out = newton(mu1, mu2, z, w1, w2, cfg);
        newton_steps += out.steps;
        if out.converged && out.w1.im > 0.0 && out.w2.im > 0.0 {
            return finish(mu1, z, out.w1, out.w2, out.residual, 0, newton_steps, 0);
        }
    }

    let mut w2 = warm.map_or(z + i, |p| p.omega2);
    w2.im = w2.im.max(z.im);
    let mut damping = cfg.damping;
    let mut halvings = 0;
    let mut restarts = 0;
    let mut prev_res = f64::INFINITY;
    let mut best: Option<SubordinationPair> = None;
    for it in 1..=cfg.max_iterations {
        let w1 = z + mu1.transform(w2)?.f - w2;
        if w1.im < 0.0 {
            return Err(SolverError::Unstable { z });
        }
        let target = z + mu2.transform(w1)?.f - w1;
        let step = target - w2;
        let res = step.norm();

        if best.as_ref().is_none_or(|b| res < b.residual) {
            best = Some(SubordinationPair {
                z,
                omega1: w1,
                omega2: w2,
                m: Complex64::new(f64::NAN, f64::NAN),
                residual: res,
                iterations: it,
                newton_steps,
                restarts,
                error_estimate: 0.0,
            });
        }
        if res <= scaled_tol(cfg, w1, w2) {
            let (r1, r2) = residuals(mu1, mu2, z, w1, target)?;
            let w1 = z + mu1.transform(target)?.f - target;
            return finish(mu1, z, w1, target, r1.norm().max(r2.norm()), it, newton_steps, restarts);
        }
        if res > prev_res {
            damping *= 0.5;
            halvings += 1;
            if halvings > 5 {
                if restarts > 0 {
                    break;
                }
                restarts += 1;
                w2 = z + 2.0 * i;
                damping = cfg.damping;
                halvings = 0;
                prev_res = f64::INFINITY;
                continue;
            }
        }
        prev_res = res;
        w2 += step * damping;

        let close = res < 1e-3 * w2.norm().max(1.0);
        if cfg.newton_polish && (close || it % 25 == 0) {
            let w1 = z + mu1.transform(w2)?.f - w2;
            let out = newton(mu1, mu2, z, w1, w2, cfg);
            newton_steps += out.steps;
            if out.converged && out.w1.im > 0.0 && out.w2.im > 0.0 {
                return finish(mu1, z, out.w1, out.w2, out.residual, it, newton_steps, restarts);
            }
        }
    }
    let mut best = best.expect("at least one iteration ran");
    best.m = mu1.transform(best.omega2).map_or(best.m, |t| t.m);
    best.iterations = cfg.max_iterations;
    Err(SolverError::Diverged { best: Box::new(best) })
}

/// Stieltjes transform of `μ₁ ⊞ μ₂` at `z ∈ ℂ⁺`, with the consistency checks
/// `m₁(ω₂) = m₂(ω₁) = -1/(ω₁ + ω₂ - z)`.
pub fn free_conv_m(mu1: &SpectralMeasure, mu2: &SpectralMeasure, z: Complex64, cfg: &SolverConfig) -> Result<Complex64, SolverError> {
    let p = solve_subordination(mu1, mu2, z, cfg, None)?;
    check_consistency(mu1, mu2, &p, cfg)?;
    Ok(p.m)
}

fn check_consistency(mu1: &SpectralMeasure, mu2: &SpectralMeasure, p: &SubordinationPair, cfg: &SolverConfig) -> Result<(), SolverError> {
    let m1 = mu1.transform(p.omega2)?.m;
    let m2 = mu2.transform(p.omega1)?.m;
    let m3 = -1.0 / (p.omega1 + p.omega2 - p.z);
    let gap = (m1 - m2).norm().max((m1 - m3).norm());
    let allowed = 10.0 * scaled_tol(cfg, p.omega1, p.omega2) * m1.norm_sqr().max(1.0);
    if gap > allowed {
        return Err(SolverError::Inconsistent { z: p.z, gap });
    }
    Ok(())
}

/// Derivatives of the subordination functions and of `m` along `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubordinationDerivatives {
    pub omega1_prime: Complex64,
    pub omega2_prime: Complex64,
    pub m_prime: Complex64,
    /// `S = (F₁'(ω₂) - 1)(F₂'(ω₁) - 1) - 1`
    pub stability: Complex64,
}

/// Analytic derivatives from implicit differentiation of the subordination system.
pub fn subordination_derivatives(mu1: &SpectralMeasure, mu2: &SpectralMeasure, pair: &SubordinationPair) -> Result<SubordinationDerivatives, SolverError> {
    let t1 = mu1.transform(pair.omega2)?;
    let t2 = mu2.transform(pair.omega1)?;
    let s = (t1.df - 1.0) * (t2.df - 1.0) - 1.0;
    if s.norm() < 1e-10 {
        return Err(SolverError::SingularJacobian { z: pair.z, s: s.norm() });
    }
    // [[1, 1-F₁'], [1-F₂', 1]] (ω₁', ω₂') = (1, 1), determinant -S.
    let det = -s;
    let omega1_prime = t1.df / det;
    let omega2_prime = t2.df / det;
    Ok(SubordinationDerivatives { omega1_prime, omega2_prime, m_prime: t1.dm * omega2_prime, stability: s })
}

/// The same derivatives by fourth-order central differences of re-solved pairs,
/// with step `max(1e-7, η/100)` along the real direction.
pub fn subordination_derivatives_fd(
    mu1: &SpectralMeasure,
    mu2: &SpectralMeasure,
    pair: &SubordinationPair,
    cfg: &SolverConfig,
) -> Result<SubordinationDerivatives, SolverError> {
    let h = (pair.z.im / 100.0).max(1e-7);
    let at = |k: f64| solve_subordination(mu1, mu2, pair.z + k * h, cfg, Some(pair));
    let (p2, p1, m1, m2) = (at(2.0)?, at(1.0)?, at(-1.0)?, at(-2.0)?);
    let d = |f: fn(&SubordinationPair) -> Complex64| (-f(&p2) + 8.0 * f(&p1) - 8.0 * f(&m1) + f(&m2)) / (12.0 * h);
    let t1 = mu1.transform(pair.omega2)?;
    let t2 = mu2.transform(pair.omega1)?;
    Ok(SubordinationDerivatives {
        omega1_prime: d(|p| p.omega1),
        omega2_prime: d(|p| p.omega2),
        m_prime: d(|p| p.m),
        stability: (t1.df - 1.0) * (t2.df - 1.0) - 1.0,
    })
}

/// Solves along a path of points sorted by decreasing imaginary part (then by
/// real part), each warm-started from its predecessor. The first point must
/// have `Im z >= 2`, where the plain iteration is a strict contraction.
pub fn continuation_solve(
    mu1: &SpectralMeasure,
    mu2: &SpectralMeasure,
    points: &[Complex64],
    cfg: &SolverConfig,
) -> Result<Vec<SubordinationPair>, SolverError> {
    let Some(first) = points.first() else {
        return Ok(Vec::new());
    };
    if first.im < 2.0 {
        return Err(SolverError::Precondition(format!("first point {first} has Im z < 2")));
    }
    for w in points.windows(2) {
        let ordered = w[1].im < w[0].im || (w[1].im == w[0].im && w[1].re >= w[0].re);
        if !ordered {
            return Err(SolverError::Precondition(format!("points {} and {} are not sorted by decreasing Im, then Re", w[0], w[1])));
        }
    }
    let mut out: Vec<SubordinationPair> = Vec::with_capacity(points.len());
    for (index, &z) in points.iter().enumerate() {
        match solve_subordination(mu1, mu2, z, cfg, out.last()) {
            Ok(p) => out.push(p),
            Err(e) => return Err(SolverError::Sweep { index, partial: out, source: Box::new(e) }),
        }
    }
    Ok(out)
}

/// Heights `start, start·f, start·f², …` down to the floor.
pub fn ladder_heights(cfg: &SolverConfig) -> Vec<f64> {
    let mut out = Vec::new();
    let mut eta = cfg.ladder_start;
    while eta >= cfg.ladder_floor {
        out.push(eta);
        eta *= cfg.ladder_factor;
    }
    out
}

/// Boundary values `ω_j(x + i0)` and `m(x + i0)` on the real axis.
///
/// Solves down the ladder of heights with warm starts and Richardson-extrapolates
/// the last three values to `η = 0`. The error estimate is the gap between the
/// quadratic and the linear extrapolant.
pub fn boundary_values(mu1: &SpectralMeasure, mu2: &SpectralMeasure, x: f64, cfg: &SolverConfig) -> Result<SubordinationPair, SolverError> {
    cfg.validate()?;
    let etas = ladder_heights(cfg);
    if etas.len() < 3 {
        return Err(SolverError::InvalidConfig("ladder needs at least three heights".into()));
    }
    let points: Vec<Complex64> = etas.iter().map(|&e| Complex64::new(x, e)).collect();
    let pairs = continuation_solve(mu1, mu2, &points, cfg).map_err(|e| SolverError::BoundaryExtension { x, reason: e.to_string() })?;

    // A converging ladder has shrinking increments; growth means the warm starts jumped branches.
    let diffs: Vec<f64> = pairs.windows(2).map(|w| (w[1].m - w[0].m).norm()).collect();
    let k = diffs.len();
    if k >= 2 && diffs[k - 1] > 2.0 * diffs[k - 2] && diffs[k - 1] > 1e-10 * pairs[k].m.norm().max(1.0) {
        return Err(SolverError::BoundaryExtension { x, reason: format!("ladder increments grew from {:e} to {:e}", diffs[k - 2], diffs[k - 1]) });
    }

    let n = pairs.len();
    let (e0, e1, e2) = (etas[n - 3], etas[n - 2], etas[n - 1]);
    let (p0, p1, p2) = (&pairs[n - 3], &pairs[n - 2], &pairs[n - 1]);
    let quad = |v0: Complex64, v1: Complex64, v2: Complex64| {
        v0 * (e1 * e2 / ((e0 - e1) * (e0 - e2))) + v1 * (e0 * e2 / ((e1 - e0) * (e1 - e2))) + v2 * (e0 * e1 / ((e2 - e0) * (e2 - e1)))
    };
    let lin = |v1: Complex64, v2: Complex64| v2 - (v1 - v2) * (e2 / (e1 - e2));
    let mut error: f64 = 0.0;
    let mut extrapolate = |v0, v1, v2| {
        let q = quad(v0, v1, v2);
        error = error.max((q - lin(v1, v2)).norm());
        q
    };
    let mut omega1 = extrapolate(p0.omega1, p1.omega1, p2.omega1);
    let mut omega2 = extrapolate(p0.omega2, p1.omega2, p2.omega2);
    let mut m = extrapolate(p0.m, p1.m, p2.m);
    // Boundary values live in the closed upper half-plane.
    omega1.im = omega1.im.max(0.0);
    omega2.im = omega2.im.max(0.0);
    m.im = m.im.max(0.0);
    Ok(SubordinationPair {
        z: Complex64::new(x, 0.0),
        omega1,
        omega2,
        m,
        residual: p2.residual,
        iterations: pairs.iter().map(|p| p.iterations).sum(),
        newton_steps: pairs.iter().map(|p| p.newton_steps).sum(),
        restarts: pairs.iter().map(|p| p.restarts).sum(),
        error_estimate: error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Semicircle of variance 2, the free convolution of two standard semicircles.
    fn semicircle2_m(z: Complex64) -> Complex64 {
        (-z + (z - 8f64.sqrt()).sqrt() * (z + 8f64.sqrt()).sqrt()) / 4.0
    }

    #[test]
    fn semicircle_pair_matches_closed_form() {
        let sc = SpectralMeasure::semicircle(1.0).unwrap();
        let cfg = SolverConfig::default();
        for &z in &[c(0.0, 1.0), c(2.5, 0.01), c(-2.8, 0.001), c(1.0, 5.0), c(-4.0, 0.1)] {
            let m = free_conv_m(&sc, &sc, z, &cfg).unwrap();
            assert!((m - semicircle2_m(z)).norm() < 1e-10, "{z}: {m}");
        }
    }

    #[test]
    fn point_mass_shifts_the_other_measure() {
        let a = 0.7;
        let pm = SpectralMeasure::point_mass(a).unwrap();
        let sc = SpectralMeasure::semicircle(1.0).unwrap();
        let cfg = SolverConfig::default();
        for &z in &[c(0.0, 1.0), c(1.5, 0.05)] {
            let p = solve_subordination(&pm, &sc, z, &cfg, None).unwrap();
            let expect = sc.stieltjes(z - a).unwrap();
            assert!((p.m - expect).norm() < 1e-11);
            assert!((p.omega1 - (z - a)).norm() < 1e-11);
        }
    }

    #[test]
    fn analytic_and_finite_difference_derivatives_agree() {
        let u = SpectralMeasure::uniform(0.0, 1.0).unwrap();
        let a = SpectralMeasure::arcsine(-1.0, 0.5).unwrap();
        let cfg = SolverConfig::default();
        for &z in &[c(0.2, 0.5), c(-0.9, 0.05), c(1.3, 0.2)] {
            let p = solve_subordination(&u, &a, z, &cfg, None).unwrap();
            let an = subordination_derivatives(&u, &a, &p).unwrap();
            let fd = subordination_derivatives_fd(&u, &a, &p, &cfg).unwrap();
            for (x, y) in [(an.omega1_prime, fd.omega1_prime), (an.omega2_prime, fd.omega2_prime), (an.m_prime, fd.m_prime)] {
                assert!((x - y).norm() < 1e-6 * x.norm(), "{z}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn continuation_rejects_bad_paths() {
        let sc = SpectralMeasure::semicircle(1.0).unwrap();
        let cfg = SolverConfig::default();
        let err = continuation_solve(&sc, &sc, &[c(0.0, 1.0)], &cfg).unwrap_err();
        assert!(matches!(err, SolverError::Precondition(_)));
        let err = continuation_solve(&sc, &sc, &[c(0.0, 2.0), c(0.0, 3.0)], &cfg).unwrap_err();
        assert!(matches!(err, SolverError::Precondition(_)));
    }

    #[test]
    fn boundary_values_on_the_real_axis() {
        let sc = SpectralMeasure::semicircle(1.0).unwrap();
        let cfg = SolverConfig::default();
        for &x in &[0.0, 1.5, -2.7, 3.5] {
            let p = boundary_values(&sc, &sc, x, &cfg).unwrap();
            let exact = semicircle2_m(c(x, 1e-300));
            assert!((p.m - exact).norm() < 1e-8, "{x}: {} vs {exact}", p.m);
            assert!(p.error_estimate < 1e-6);
        }
    }

    #[test]
    fn config_validation() {
        let sc = SpectralMeasure::semicircle(1.0).unwrap();
        let cfg = SolverConfig { damping: 0.0, ..SolverConfig::default() };
        assert!(matches!(solve_subordination(&sc, &sc, c(0.0, 1.0), &cfg, None), Err(SolverError::InvalidConfig(_))));
        assert!(matches!(
            solve_subordination(&sc, &sc, c(0.0, 0.0), &SolverConfig::default(), None),
            Err(SolverError::InvalidPoint(_))
        ));
    }
}
