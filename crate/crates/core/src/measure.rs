//! Spectral measures on the real line and their Stieltjes transforms.
//!
//! Two representations cover everything the crate needs: finite atomic measures
//! (the empirical spectra of `A` and `B`) and power-law densities
//! `(x-a)^t₋ (b-x)^t₊` on an interval, which include the semicircle, uniform and
//! arcsine laws. Transforms of the latter use Gauss–Jacobi quadrature matched to
//! the endpoint exponents, so the integrand is analytic on the support and the
//! node count can be predicted from the Bernstein ellipse through `z`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};
use thiserror::Error;

use crate::quadrature::{adaptive_gk, cached_rule, jacobi_mass};

/// Minimum distance from the support at which a real spectral argument is accepted.
pub const SUPPORT_STANDOFF: f64 = 1e-9;

/// Agreement required between successive Gauss–Jacobi rule sizes.
const QUAD_TOL: f64 = 1e-11;
const MAX_RULE: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("invalid measure: {0}")]
    Invalid(String),
    #[error("spectral argument {z} is on the support or within {SUPPORT_STANDOFF:e} of it")]
    Domain { z: Complex64 },
    #[error("Stieltjes transform vanishes at {z}")]
    Degenerate { z: Complex64 },
    #[error("quadrature did not reach tolerance at {z} (error estimate {estimate:e})")]
    Quadrature { z: Complex64, estimate: f64 },
    #[error("malformed measure description: {0}")]
    Parse(String),
}

/// Stieltjes transform `m(z) = ∫ dμ(x)/(x-z)`, its negative reciprocal `F = -1/m`,
/// and the first two derivatives of both.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub m: Complex64,
    /// `m'(z) = ∫ dμ/(x-z)²`
    pub dm: Complex64,
    /// `m''(z) = 2∫ dμ/(x-z)³`
    pub d2m: Complex64,
    pub f: Complex64,
    pub df: Complex64,
    pub d2f: Complex64,
}

impl Transform {
    fn from_moments(z: Complex64, m: Complex64, dm: Complex64, d2m: Complex64) -> Result<Self, MeasureError> {
        if !(m.norm() > 1e-300) || !m.is_finite() {
            return Err(MeasureError::Degenerate { z });
        }
        let inv = 1.0 / m;
        Ok(Self {
            m,
            dm,
            d2m,
            f: -inv,
            df: dm * inv * inv,
            d2f: (d2m * m - 2.0 * dm * dm) * inv * inv * inv,
        })
    }
}

/// Result of [`SpectralMeasure::f_prime_gap`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FPrimeGap {
    pub value: f64,
    /// Set for a point mass, where `F(ω) = ω - a` and the gap is identically zero.
    pub degenerate: bool,
}

/// Finite atomic measure. Atoms are kept sorted by location.
#[derive(Debug, Clone, PartialEq)]
pub struct Atomic {
    atoms: Vec<(f64, f64)>,
    cumulative: Vec<f64>,
}

/// Density proportional to `(x-a)^t_minus (b-x)^t_plus` on `[a, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerLaw {
    lower: f64,
    upper: f64,
    t_minus: f64,
    t_plus: f64,
    log_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpectralMeasure {
    Atomic(Atomic),
    PowerLaw(PowerLaw),
}

/// Serializable description of a measure, also the JSON input format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    PowerLaw { support: [f64; 2], t_minus: f64, t_plus: f64 },
    Atomic { atoms: Vec<[f64; 2]> },
    /// Centered semicircle law with the given variance.
    Semicircle { variance: f64 },
    Uniform { support: [f64; 2] },
    Arcsine { support: [f64; 2] },
    /// `w δ_{x₀} + (1-w) δ_{x₁}`
    TwoAtoms { locations: [f64; 2], weight: f64 },
    PointMass { location: f64 },
}

impl Atomic {
    pub fn new(mut atoms: Vec<(f64, f64)>) -> Result<Self, MeasureError> {
        if atoms.is_empty() {
            return Err(MeasureError::Invalid("atomic measure without atoms".into()));
        }
        for &(x, w) in &atoms {
            if !x.is_finite() || !w.is_finite() || w <= 0.0 {
                return Err(MeasureError::Invalid(format!("atom ({x}, {w}) needs a finite location and positive weight")));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-12 * atoms.len().max(1) as f64 {
            return Err(MeasureError::Invalid(format!("atom weights sum to {total}, not 1")));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut acc = 0.0;
        let cumulative = atoms
            .iter()
            .map(|a| {
                acc += a.1;
                acc
            })
            .collect();
        Ok(Self { atoms, cumulative })
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn locations(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.0).collect()
    }

    /// Locations if every atom has weight `1/N`, i.e. the measure is an empirical spectrum.
    pub fn equal_weight_locations(&self) -> Option<Vec<f64>> {
        let n = self.atoms.len() as f64;
        self.atoms
            .iter()
            .all(|a| (a.1 * n - 1.0).abs() < 1e-9)
            .then(|| self.locations())
    }
}

impl PowerLaw {
    pub fn new(lower: f64, upper: f64, t_minus: f64, t_plus: f64) -> Result<Self, MeasureError> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(MeasureError::Invalid(format!("support [{lower}, {upper}] is not a proper interval")));
        }
        if !(t_minus > -1.0 && t_plus > -1.0 && t_minus < 1.0 && t_plus < 1.0) {
            return Err(MeasureError::Invalid(format!("edge exponents ({t_minus}, {t_plus}) must lie in (-1, 1)")));
        }
        let log_norm = (1.0 + t_minus + t_plus) * (upper - lower).ln() + ln_beta(t_minus + 1.0, t_plus + 1.0);
        Ok(Self { lower, upper, t_minus, t_plus, log_norm })
    }

    pub fn exponents(&self) -> (f64, f64) {
        (self.t_minus, self.t_plus)
    }

    pub fn density(&self, x: f64) -> f64 {
        if x <= self.lower || x >= self.upper {
            return 0.0;
        }
        (self.t_minus * (x - self.lower).ln() + self.t_plus * (self.upper - x).ln() - self.log_norm).exp()
    }

    fn cdf(&self, x: f64) -> f64 {
        if x <= self.lower {
            0.0
        } else if x >= self.upper {
            1.0
        } else {
            beta_reg(self.t_minus + 1.0, self.t_plus + 1.0, (x - self.lower) / (self.upper - self.lower))
        }
    }

    fn half_width(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }

    fn center(&self) -> f64 {
        0.5 * (self.upper + self.lower)
    }

    /// Returns `[Σ w/(x-z), Σ w/(x-z)², Σ w/(x-z)³]` for the `n`-point rule, normalized.
    fn gauss_sums(&self, z: Complex64, n: usize) -> [Complex64; 3] {
        // Node weight (1-u)^t₊ (1+u)^t₋ in Jacobi's (alpha, beta) convention.
        let rule = cached_rule(n, self.t_plus, self.t_minus);
        let (c, h) = (self.center(), self.half_width());
        let mut s = [Complex64::new(0.0, 0.0); 3];
        let mut total = 0.0;
        for (&u, &w) in rule.nodes.iter().zip(&rule.weights) {
            let r = 1.0 / (Complex64::new(c + h * u, 0.0) - z);
            let r2 = r * r;
            s[0] += w * r;
            s[1] += w * r2;
            s[2] += w * r2 * r;
            total += w;
        }
        s.map(|v| v / total)
    }

    /// Endpoint-desingularized adaptive quadrature, for arguments too close to the
    /// support for a Gauss rule of moderate size.
    fn adaptive_sums(&self, z: Complex64) -> Result<[Complex64; 3], MeasureError> {
        let (a, b, h) = (self.lower, self.upper, self.half_width());
        let (tm, tp) = (self.t_minus, self.t_plus);
        let dist = distance_to_interval(z, a, b).max(1e-300);
        // Each power is rescaled by dist^(k-1) so the three components share one tolerance.
        let scale = [1.0, dist, dist * dist];
        let left = |s: f64| {
            let up = s.powf(1.0 / (1.0 + tm));
            let xz = Complex64::new(a - z.re + h * up, -z.im);
            let weight = (2.0 - up).powf(tp) / (1.0 + tm);
            sums_at(xz, weight, &scale)
        };
        let right = |s: f64| {
            let um = s.powf(1.0 / (1.0 + tp));
            let xz = Complex64::new(b - z.re - h * um, -z.im);
            let weight = (2.0 - um).powf(tm) / (1.0 + tp);
            sums_at(xz, weight, &scale)
        };
        let tol = 1e-14;
        let (l, el) = adaptive_gk(left, 0.0, 1.0, tol, 4000);
        let (r, er) = adaptive_gk(right, 0.0, 1.0, tol, 4000);
        let mass = jacobi_mass(tp, tm);
        let est = (el + er) / mass;
        if !(est < 1e-10) {
            return Err(MeasureError::Quadrature { z, estimate: est });
        }
        Ok([0, 1, 2].map(|k| (l[k] + r[k]) / (mass * scale[k])))
    }

    /// Same sums along the contour `c + h u - i δ h (1 - u²)`, bent away from a
    /// pole that sits just above the interior of the support (mirrored for
    /// `Im z < 0`). The density continues analytically off the real axis and the
    /// endpoint factors separate, so the Jacobi weight is unchanged.
    fn contour_sums(&self, z: Complex64, n: usize) -> [Complex64; 3] {
        let rule = cached_rule(n, self.t_plus, self.t_minus);
        let (c, h) = (self.center(), self.half_width());
        let dip = if z.im >= 0.0 { -0.5 } else { 0.5 };
        let i = Complex64::i();
        let mut s = [Complex64::new(0.0, 0.0); 3];
        let mut total = 0.0;
        for (&u, &w) in rule.nodes.iter().zip(&rule.weights) {
            let zeta = c + h * u + i * (dip * h * (1.0 - u * u));
            let jac = (1.0 + i * (dip * (1.0 - u))).powf(self.t_minus)
                * (1.0 - i * (dip * (1.0 + u))).powf(self.t_plus)
                * (1.0 - i * (2.0 * dip * u));
            let r = 1.0 / (zeta - z);
            let r2 = r * r;
            let wj = jac * w;
            s[0] += wj * r;
            s[1] += wj * r2;
            s[2] += wj * r2 * r;
            total += w;
        }
        s.map(|v| v / total)
    }

    /// Runs a rule family with doubling until two successive sizes agree.
    fn doubled<G>(&self, n0: usize, rule: G) -> Option<[Complex64; 3]>
    where
        G: Fn(usize) -> [Complex64; 3],
    {
        let mut n = n0.next_power_of_two().max(16);
        if n > MAX_RULE / 2 {
            return None;
        }
        let mut prev = rule(n);
        while 2 * n <= MAX_RULE {
            let next = rule(2 * n);
            if (0..3).all(|k| (next[k] - prev[k]).norm() <= QUAD_TOL * next[k].norm().max(1.0)) {
                return Some(next);
            }
            prev = next;
            n *= 2;
        }
        None
    }

    fn sums(&self, z: Complex64) -> Result<[Complex64; 3], MeasureError> {
        let (c, h) = (self.center(), self.half_width());
        let log_rho = bernstein_log_radius((z - c) / h);
        // Gauss error decays like rho^(-2n); aim for 1e-17 with a margin for the cubic power.
        let predicted = |lr: f64| if lr > 0.0 { (20.0 / lr).ceil() as usize + 8 } else { usize::MAX };
        let n = predicted(log_rho);
        if n <= 256 {
            if let Some(s) = self.doubled(n, |k| self.gauss_sums(z, k)) {
                return Ok(s);
            }
        }
        if z.im != 0.0 && z.re > self.lower && z.re < self.upper {
            // Distance from the pole to the bent contour, in units of h, controls the rule size.
            let u = (z.re - c) / h;
            let gap = z.im.abs() / h + 0.5 * (1.0 - u * u);
            let n_contour = predicted((1.0 + gap).ln().max(1e-300));
            if n_contour < n {
                if let Some(s) = self.doubled(n_contour, |k| self.contour_sums(z, k)) {
                    return Ok(s);
                }
            }
        }
        if let Some(s) = self.doubled(n, |k| self.gauss_sums(z, k)) {
            return Ok(s);
        }
        self.adaptive_sums(z)
    }
}

/// `ln ρ` of the Bernstein ellipse with foci ±1 passing through `zeta`.
fn bernstein_log_radius(zeta: Complex64) -> f64 {
    let root = (zeta - 1.0).sqrt() * (zeta + 1.0).sqrt();
    (zeta + root).norm().max((zeta - root).norm()).ln()
}

fn sums_at(xz: Complex64, weight: f64, scale: &[f64; 3]) -> [Complex64; 3] {
    let r = 1.0 / xz;
    let r2 = r * r;
    [r * weight, r2 * (weight * scale[1]), r2 * r * (weight * scale[2])]
}

fn distance_to_interval(z: Complex64, a: f64, b: f64) -> f64 {
    let dx = if z.re < a {
        a - z.re
    } else if z.re > b {
        z.re - b
    } else {
        0.0
    };
    dx.hypot(z.im)
}

impl SpectralMeasure {
    pub fn atomic(atoms: Vec<(f64, f64)>) -> Result<Self, MeasureError> {
        Atomic::new(atoms).map(Self::Atomic)
    }

    /// Equal-weight empirical measure of the given values.
    pub fn empirical(values: &[f64]) -> Result<Self, MeasureError> {
        let w = 1.0 / values.len().max(1) as f64;
        Self::atomic(values.iter().map(|&x| (x, w)).collect())
    }

    pub fn power_law(lower: f64, upper: f64, t_minus: f64, t_plus: f64) -> Result<Self, MeasureError> {
        PowerLaw::new(lower, upper, t_minus, t_plus).map(Self::PowerLaw)
    }

    pub fn semicircle(variance: f64) -> Result<Self, MeasureError> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(MeasureError::Invalid(format!("semicircle variance {variance} must be positive")));
        }
        let r = 2.0 * variance.sqrt();
        Self::power_law(-r, r, 0.5, 0.5)
    }

    pub fn uniform(lower: f64, upper: f64) -> Result<Self, MeasureError> {
        Self::power_law(lower, upper, 0.0, 0.0)
    }

    pub fn arcsine(lower: f64, upper: f64) -> Result<Self, MeasureError> {
        Self::power_law(lower, upper, -0.5, -0.5)
    }

    pub fn two_atoms(x0: f64, x1: f64, weight: f64) -> Result<Self, MeasureError> {
        if !(weight > 0.0 && weight < 1.0) {
            return Err(MeasureError::Invalid(format!("two-atom weight {weight} must lie in (0, 1)")));
        }
        Self::atomic(vec![(x0, weight), (x1, 1.0 - weight)])
    }

    pub fn point_mass(location: f64) -> Result<Self, MeasureError> {
        Self::atomic(vec![(location, 1.0)])
    }

    pub fn from_spec(spec: &MeasureSpec) -> Result<Self, MeasureError> {
        match spec {
            MeasureSpec::PowerLaw { support, t_minus, t_plus } => Self::power_law(support[0], support[1], *t_minus, *t_plus),
            MeasureSpec::Atomic { atoms } => Self::atomic(atoms.iter().map(|a| (a[0], a[1])).collect()),
            MeasureSpec::Semicircle { variance } => Self::semicircle(*variance),
            MeasureSpec::Uniform { support } => Self::uniform(support[0], support[1]),
            MeasureSpec::Arcsine { support } => Self::arcsine(support[0], support[1]),
            MeasureSpec::TwoAtoms { locations, weight } => Self::two_atoms(locations[0], locations[1], *weight),
            MeasureSpec::PointMass { location } => Self::point_mass(*location),
        }
    }

    pub fn to_spec(&self) -> MeasureSpec {
        match self {
            Self::Atomic(a) => MeasureSpec::Atomic { atoms: a.atoms.iter().map(|&(x, w)| [x, w]).collect() },
            Self::PowerLaw(p) => MeasureSpec::PowerLaw {
                support: [p.lower, p.upper],
                t_minus: p.t_minus,
                t_plus: p.t_plus,
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self, MeasureError> {
        let spec: MeasureSpec = serde_json::from_str(text).map_err(|e| MeasureError::Parse(e.to_string()))?;
        Self::from_spec(&spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_spec()).expect("measure specs always serialize")
    }

    pub fn support(&self) -> (f64, f64) {
        match self {
            Self::Atomic(a) => (a.atoms[0].0, a.atoms[a.atoms.len() - 1].0),
            Self::PowerLaw(p) => (p.lower, p.upper),
        }
    }

    pub fn inf_support(&self) -> f64 {
        self.support().0
    }

    pub fn sup_support(&self) -> f64 {
        self.support().1
    }

    /// Location of the atom if the measure is a single point mass.
    pub fn point_mass_location(&self) -> Option<f64> {
        match self {
            Self::Atomic(a) if a.atoms.len() == 1 || a.atoms.iter().all(|x| x.0 == a.atoms[0].0) => Some(a.atoms[0].0),
            _ => None,
        }
    }

    pub fn is_point_mass(&self) -> bool {
        self.point_mass_location().is_some()
    }

    pub fn is_atomic(&self) -> bool {
        matches!(self, Self::Atomic(_))
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Atomic(a) => a.atoms.iter().map(|&(x, w)| x * w).sum(),
            Self::PowerLaw(p) => p.lower + (p.upper - p.lower) * (p.t_minus + 1.0) / (p.t_minus + p.t_plus + 2.0),
        }
    }

    /// Density of an absolutely continuous measure; `None` for atomic measures.
    pub fn density(&self, x: f64) -> Option<f64> {
        match self {
            Self::Atomic(_) => None,
            Self::PowerLaw(p) => Some(p.density(x)),
        }
    }

    fn check_domain(&self, z: Complex64) -> Result<(), MeasureError> {
        if !(z.re.is_finite() && z.im.is_finite()) {
            return Err(MeasureError::Domain { z });
        }
        if z.im != 0.0 {
            return Ok(());
        }
        let bad = match self {
            Self::Atomic(a) => {
                let i = a.atoms.partition_point(|t| t.0 < z.re);
                let near = |j: usize| a.atoms.get(j).is_some_and(|t| (t.0 - z.re).abs() < SUPPORT_STANDOFF);
                near(i) || (i > 0 && near(i - 1))
            }
            Self::PowerLaw(p) => z.re > p.lower - SUPPORT_STANDOFF && z.re < p.upper + SUPPORT_STANDOFF,
        };
        if bad {
            Err(MeasureError::Domain { z })
        } else {
            Ok(())
        }
    }

    /// Stieltjes transform and `F = -1/m` with derivatives at `z` off the support.
    pub fn transform(&self, z: Complex64) -> Result<Transform, MeasureError> {
        self.check_domain(z)?;
        let [s1, s2, s3] = match self {
            Self::Atomic(a) => {
                let mut s = [Complex64::new(0.0, 0.0); 3];
                for &(x, w) in &a.atoms {
                    let r = 1.0 / (Complex64::new(x, 0.0) - z);
                    let r2 = r * r;
                    s[0] += w * r;
                    s[1] += w * r2;
                    s[2] += w * r2 * r;
                }
                s
            }
            Self::PowerLaw(p) => p.sums(z)?,
        };
        Transform::from_moments(z, s1, s2, 2.0 * s3)
    }

    pub fn stieltjes(&self, z: Complex64) -> Result<Complex64, MeasureError> {
        Ok(self.transform(z)?.m)
    }

    /// `F'(x) - 1` for real `x` below the support.
    pub fn f_prime_gap(&self, x: f64) -> Result<FPrimeGap, MeasureError> {
        if !(x < self.inf_support() - SUPPORT_STANDOFF) {
            return Err(MeasureError::Domain { z: Complex64::new(x, 0.0) });
        }
        if self.is_point_mass() {
            return Ok(FPrimeGap { value: 0.0, degenerate: true });
        }
        let t = self.transform(Complex64::new(x, 0.0))?;
        // F' - 1 = (m' - m²)/m², which is real and non-negative below the support.
        let value = ((t.dm - t.m * t.m) / (t.m * t.m)).re;
        Ok(FPrimeGap { value, degenerate: false })
    }

    /// Right-continuous distribution function.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::Atomic(a) => {
                let i = a.atoms.partition_point(|t| t.0 <= x);
                if i == 0 {
                    0.0
                } else {
                    a.cumulative[i - 1].min(1.0)
                }
            }
            Self::PowerLaw(p) => p.cdf(x),
        }
    }

    /// Left limit `μ((-∞, x))`.
    pub fn cdf_left(&self, x: f64) -> f64 {
        match self {
            Self::Atomic(a) => {
                let i = a.atoms.partition_point(|t| t.0 < x);
                if i == 0 {
                    0.0
                } else {
                    a.cumulative[i - 1].min(1.0)
                }
            }
            Self::PowerLaw(p) => p.cdf(x),
        }
    }

    /// Generalized inverse `inf{x : F(x) >= p}`.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match self {
            Self::Atomic(a) => {
                // Cumulative sums can fall a few ulps short of the target level.
                let target = p - 8.0 * f64::EPSILON;
                let i = a.cumulative.partition_point(|&c| c < target);
                a.atoms[i.min(a.atoms.len() - 1)].0
            }
            Self::PowerLaw(pl) => {
                if p <= 0.0 {
                    return pl.lower;
                }
                if p >= 1.0 {
                    return pl.upper;
                }
                let (mut lo, mut hi) = (pl.lower, pl.upper);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if pl.cdf(mid) >= p {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                hi
            }
        }
    }

    /// Equal-weight `N`-point discretization at the midpoint quantiles `(j - 1/2)/N`.
    pub fn discretize(&self, n: usize) -> Result<Self, MeasureError> {
        if n == 0 {
            return Err(MeasureError::Invalid("discretization needs N >= 1".into()));
        }
        let pts: Vec<f64> = (1..=n).map(|j| self.quantile((j as f64 - 0.5) / n as f64)).collect();
        Self::empirical(&pts)
    }

    /// Image under `x -> -x`.
    pub fn reflect(&self) -> Self {
        match self {
            Self::Atomic(a) => Self::Atomic(
                Atomic::new(a.atoms.iter().map(|&(x, w)| (-x, w)).collect()).expect("reflection keeps validity"),
            ),
            Self::PowerLaw(p) => Self::PowerLaw(PowerLaw::new(-p.upper, -p.lower, p.t_plus, p.t_minus).expect("reflection keeps validity")),
        }
    }

    /// Image under `x -> x + c`.
    pub fn shift(&self, c: f64) -> Self {
        match self {
            Self::Atomic(a) => {
                Self::Atomic(Atomic::new(a.atoms.iter().map(|&(x, w)| (x + c, w)).collect()).expect("shift keeps validity"))
            }
            Self::PowerLaw(p) => Self::PowerLaw(PowerLaw::new(p.lower + c, p.upper + c, p.t_minus, p.t_plus).expect("shift keeps validity")),
        }
    }

    /// The smallest `x` with `x + F(x) >= u`; the completed graph of `F` seen
    /// along the anti-diagonal. Used by the Lévy distance.
    fn diagonal_inverse(&self, u: f64) -> f64 {
        match self {
            Self::Atomic(a) => {
                let j = (0..a.atoms.len()).collect::<Vec<_>>().partition_point(|&j| a.atoms[j].0 + a.cumulative[j] < u);
                if j == a.atoms.len() {
                    return u - 1.0;
                }
                let before = if j == 0 { 0.0 } else { a.cumulative[j - 1] };
                if u <= a.atoms[j].0 + before {
                    u - before
                } else {
                    a.atoms[j].0
                }
            }
            Self::PowerLaw(p) => {
                if u <= p.lower {
                    return u;
                }
                if u >= p.upper + 1.0 {
                    return u - 1.0;
                }
                let (mut lo, mut hi) = (p.lower.max(u - 1.0), p.upper.min(u));
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if mid + p.cdf(mid) >= u {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                hi
            }
        }
    }
}

/// Lévy distance, accurate to about `1e-7`.
///
/// Rotating both completed distribution graphs by 45° turns them into graphs of
/// 1-Lipschitz nondecreasing functions `x*(u)`, and the Lévy distance is the sup
/// distance between them. That difference is itself 1-Lipschitz, so a grid plus
/// branch-and-bound refinement bounds the sup rigorously.
pub fn levy_distance(mu: &SpectralMeasure, nu: &SpectralMeasure) -> f64 {
    const TOL: f64 = 1e-8;
    let lo = mu.inf_support().min(nu.inf_support());
    let hi = mu.sup_support().max(nu.sup_support()) + 1.0;
    let gap = |u: f64| (mu.diagonal_inverse(u) - nu.diagonal_inverse(u)).abs();

    let cells = 4096;
    let h0 = (hi - lo) / cells as f64;
    let mut pts: Vec<(f64, f64)> = (0..=cells).map(|k| lo + h0 * k as f64).map(|u| (u, gap(u))).collect();
    let mut best = pts.iter().map(|p| p.1).fold(0.0, f64::max);
    let mut live: Vec<((f64, f64), (f64, f64))> = pts.windows(2).map(|w| (w[0], w[1])).collect();
    let mut evaluations = pts.len();
    while !live.is_empty() && evaluations < 200_000 {
        live.retain(|(a, b)| 0.5 * (a.1 + b.1 + (b.0 - a.0)) > best + TOL);
        let mut next = Vec::with_capacity(live.len() * 4);
        for &(a, b) in &live {
            let step = (b.0 - a.0) / 4.0;
            pts.clear();
            pts.push(a);
            for k in 1..4 {
                let u = a.0 + step * k as f64;
                let g = gap(u);
                best = best.max(g);
                pts.push((u, g));
            }
            pts.push(b);
            evaluations += 3;
            next.extend(pts.windows(2).map(|w| (w[0], w[1])));
        }
        live = next;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn semicircle_m(z: Complex64) -> Complex64 {
        // Branch with m ~ -1/z at infinity.
        let r = (z - 2.0).sqrt() * (z + 2.0).sqrt();
        (-z + r) / 2.0
    }

    #[test]
    fn semicircle_transform_at_i() {
        let sc = SpectralMeasure::semicircle(1.0).unwrap();
        let m = sc.stieltjes(c(0.0, 1.0)).unwrap();
        assert!((m - c(0.0, (5f64.sqrt() - 1.0) / 2.0)).norm() < 1e-13);
    }

    #[test]
    fn semicircle_transform_matches_closed_form_including_near_support() {
        let sc = SpectralMeasure::semicircle(1.0).unwrap();
        for &z in &[c(0.3, 1e-6), c(-1.9, 1e-4), c(2.5, 0.0), c(-2.0 - 2e-9, 0.0), c(5.0, 3.0), c(1.0, 0.01)] {
            let t = sc.transform(z).unwrap();
            let exact = semicircle_m(z);
            assert!((t.m - exact).norm() < 1e-10 * exact.norm().max(1.0), "{z}: {} vs {exact}", t.m);
            // m' of the semicircle: m' = -m/(2m + z) from m² + zm + 1 = 0.
            let dm = -exact / (2.0 * exact + z);
            assert!((t.dm - dm).norm() < 1e-8 * dm.norm().max(1.0), "{z}: {} vs {dm}", t.dm);
        }
    }

    #[test]
    fn uniform_transform_is_a_logarithm() {
        let u = SpectralMeasure::uniform(0.0, 1.0).unwrap();
        for &z in &[c(0.5, 0.3), c(-0.2, 0.0), c(0.999, 1e-5), c(3.0, -1.0)] {
            let exact = ((1.0 - z) / (-z)).ln();
            let m = u.stieltjes(z).unwrap();
            assert!((m - exact).norm() < 1e-10 * exact.norm().max(1.0), "{z}: {m} vs {exact}");
        }
    }

    #[test]
    fn arcsine_transform_closed_form() {
        // Arcsine on [-1, 1]: m(z) = -1/sqrt(z² - 1).
        let a = SpectralMeasure::arcsine(-1.0, 1.0).unwrap();
        for &z in &[c(0.0, 1.0), c(0.5, 0.01), c(-3.0, 0.0)] {
            let exact = -1.0 / ((z - 1.0).sqrt() * (z + 1.0).sqrt());
            let m = a.stieltjes(z).unwrap();
            assert!((m - exact).norm() < 1e-10 * exact.norm(), "{z}: {m} vs {exact}");
        }
    }

    #[test]
    fn second_derivative_of_f_matches_finite_differences() {
        let mu = SpectralMeasure::power_law(-1.0, 2.0, 0.7, -0.3).unwrap();
        let z = c(0.4, 0.8);
        let h = 1e-4;
        let f = |z| mu.transform(z).unwrap();
        let fd1 = (f(z + h).f - f(z - h).f) / (2.0 * h);
        let fd2 = (f(z + h).f - 2.0 * f(z).f + f(z - h).f) / (h * h);
        assert!((f(z).df - fd1).norm() < 1e-7);
        assert!((f(z).d2f - fd2).norm() < 1e-5);
    }

    #[test]
    fn power_law_density_normalization_by_independent_quadrature() {
        for &(tm, tp) in &[(0.5, 0.5), (0.0, 0.0), (0.9, 0.25), (0.75, 0.3)] {
            let mu = SpectralMeasure::power_law(-0.5, 1.5, tm, tp).unwrap();
            let n = 200_000;
            let h = 2.0 / n as f64;
            let total: f64 = (0..n).map(|k| mu.density(-0.5 + h * (k as f64 + 0.5)).unwrap() * h).sum();
            assert!((total - 1.0).abs() < 1e-6, "({tm},{tp}): {total}");
        }
        let sc = SpectralMeasure::semicircle(1.0).unwrap();
        assert_relative_eq!(sc.density(0.0).unwrap(), 1.0 / std::f64::consts::PI, epsilon = 1e-14);
    }

    #[test]
    fn domain_errors_on_support() {
        let sc = SpectralMeasure::semicircle(1.0).unwrap();
        assert!(matches!(sc.transform(c(0.3, 0.0)), Err(MeasureError::Domain { .. })));
        assert!(matches!(sc.transform(c(2.0 + 1e-10, 0.0)), Err(MeasureError::Domain { .. })));
        let atoms = SpectralMeasure::two_atoms(0.0, 1.0, 0.5).unwrap();
        assert!(atoms.transform(c(0.3, 0.0)).is_ok());
        assert!(matches!(atoms.transform(c(0.5, 0.0)), Err(MeasureError::Degenerate { .. })));
        assert!(matches!(atoms.transform(c(1.0, 0.0)), Err(MeasureError::Domain { .. })));
    }

    #[test]
    fn two_atom_f_prime_gap() {
        let mu = SpectralMeasure::two_atoms(0.0, 1.0, 0.5).unwrap();
        let g = mu.f_prime_gap(-1.0).unwrap();
        assert!((g.value - 1.0 / 9.0).abs() < 1e-15);
        let pm = SpectralMeasure::point_mass(0.3).unwrap();
        let g = pm.f_prime_gap(0.0).unwrap();
        assert!(g.degenerate && g.value == 0.0);
    }

    #[test]
    fn semicircle_quantile_against_closed_form_cdf() {
        let sc = SpectralMeasure::semicircle(1.0).unwrap();
        let cdf = |x: f64| 0.5 + x * (4.0 - x * x).sqrt() / (4.0 * std::f64::consts::PI) + (x / 2.0).asin() / std::f64::consts::PI;
        for &x in &[-1.9, -0.7, 0.0, 0.4, 1.99] {
            assert!((sc.cdf(x) - cdf(x)).abs() < 1e-13);
        }
        let q = sc.quantile(0.25);
        assert!((cdf(q) - 0.25).abs() < 1e-14);
    }

    #[test]
    fn atomic_cdf_and_quantile_conventions() {
        let mu = SpectralMeasure::atomic(vec![(1.0, 0.25), (0.0, 0.5), (2.0, 0.25)]).unwrap();
        assert_eq!(mu.cdf(0.0), 0.5);
        assert_eq!(mu.cdf_left(0.0), 0.0);
        assert_eq!(mu.quantile(0.5), 0.0);
        assert_eq!(mu.quantile(0.5000001), 1.0);
        assert_eq!(mu.quantile(1.0), 2.0);
    }

    #[test]
    fn discretization_is_within_half_step_in_levy_distance() {
        let u = SpectralMeasure::uniform(0.0, 1.0).unwrap();
        for &n in &[10, 100, 1000] {
            let d = levy_distance(&u.discretize(n).unwrap(), &u);
            assert!(d <= 1.0 / n as f64, "N={n}: {d}");
            assert!(d >= 0.2 / n as f64, "N={n}: {d}");
        }
    }

    #[test]
    fn levy_distance_between_point_masses() {
        for &a in &[0.0, 0.1, 0.37, 1.0, 2.5] {
            let d = levy_distance(&SpectralMeasure::point_mass(0.0).unwrap(), &SpectralMeasure::point_mass(a).unwrap());
            assert!((d - a.min(1.0)).abs() < 1e-7, "a={a}: {d}");
        }
    }

    /// Brute-force Lévy distance straight from the definition, for atomic measures.
    fn levy_by_definition(mu: &SpectralMeasure, nu: &SpectralMeasure) -> f64 {
        let mut xs: Vec<f64> = Vec::new();
        for m in [mu, nu] {
            if let SpectralMeasure::Atomic(a) = m {
                xs.extend(a.atoms().iter().map(|t| t.0));
            }
        }
        let ok = |eps: f64| {
            let mut cand = Vec::new();
            for &x in &xs {
                cand.extend([x, x - eps, x + eps]);
            }
            cand.iter().all(|&x| {
                let probe = [x, x - 1e-12];
                probe.iter().all(|&y| {
                    mu.cdf(y - eps) - eps <= nu.cdf(y) + 1e-12 && nu.cdf(y) <= mu.cdf(y + eps) + eps + 1e-12
                })
            })
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if ok(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    #[test]
    fn levy_distance_agrees_with_definition_on_random_atomic_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let make = |rng: &mut rand_chacha::ChaCha8Rng| {
                let k = rng.random_range(1..6);
                let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
                let s: f64 = w.iter().sum();
                SpectralMeasure::atomic(w.iter().map(|&wi| (rng.random_range(-1.0..1.0), wi / s)).collect()).unwrap()
            };
            let mu = make(&mut rng);
            let nu = make(&mut rng);
            let fast = levy_distance(&mu, &nu);
            let slow = levy_by_definition(&mu, &nu);
            assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
        }
    }

    #[test]
    fn atomic_json_round_trip_is_bit_exact() {
        let mu = SpectralMeasure::atomic(vec![(0.1 + 0.2, 1.0 / 3.0), (std::f64::consts::PI, 2.0 / 3.0)]).unwrap();
        let back = SpectralMeasure::from_json(&mu.to_json()).unwrap();
        assert_eq!(mu, back);
    }

    #[test]
    fn json_rejects_unknown_family_and_fields() {
        assert!(matches!(SpectralMeasure::from_json(r#"{"family":"cauchy"}"#), Err(MeasureError::Parse(_))));
        assert!(matches!(
            SpectralMeasure::from_json(r#"{"family":"uniform","support":[0,1],"extra":1}"#),
            Err(MeasureError::Parse(_))
        ));
        assert!(SpectralMeasure::from_json(r#"{"family":"power_law","support":[0,1],"t_minus":0.5,"t_plus":0.5}"#).is_ok());
        assert!(matches!(
            SpectralMeasure::from_json(r#"{"family":"power_law","support":[1,0],"t_minus":0.5,"t_plus":0.5}"#),
            Err(MeasureError::Invalid(_))
        ));
    }
}
