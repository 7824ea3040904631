//! Quadrature rules used by the transform and density code.
//!
//! Gauss–Jacobi rules come from the Golub–Welsch eigenvalue problem, solved with
//! an implicit QL sweep that only tracks the first row of the eigenvector matrix.
//! Rules are cached per `(alpha, beta, n)` because the same handful of exponent
//! pairs is hit millions of times by the subordination solver.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use statrs::function::gamma::ln_gamma;

/// Nodes on `[-1, 1]` and weights for the weight function `(1-u)^alpha (1+u)^beta`.
#[derive(Debug, Clone)]
pub struct GaussJacobi {
    pub alpha: f64,
    pub beta: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Total mass of the Jacobi weight, `2^(a+b+1) Γ(a+1) Γ(b+1) / Γ(a+b+2)`.
pub fn jacobi_mass(alpha: f64, beta: f64) -> f64 {
    ((alpha + beta + 1.0) * std::f64::consts::LN_2 + ln_gamma(alpha + 1.0) + ln_gamma(beta + 1.0)
        - ln_gamma(alpha + beta + 2.0))
    .exp()
}

impl GaussJacobi {
    /// Builds the `n`-point rule. Requires `alpha, beta > -1` and `n >= 1`.
    pub fn new(n: usize, alpha: f64, beta: f64) -> Self {
        assert!(n >= 1, "Gauss-Jacobi rule needs at least one node");
        assert!(alpha > -1.0 && beta > -1.0, "Jacobi exponents must exceed -1");
        let ab = alpha + beta;
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n];
        diag[0] = (beta - alpha) / (ab + 2.0);
        for k in 1..n {
            let kf = k as f64;
            let s = 2.0 * kf + ab;
            diag[k] = (beta * beta - alpha * alpha) / (s * (s + 2.0));
            let b2 = if k == 1 {
                4.0 * (1.0 + alpha) * (1.0 + beta) / ((2.0 + ab).powi(2) * (3.0 + ab))
            } else {
                4.0 * kf * (kf + alpha) * (kf + beta) * (kf + ab) / (s * s * (s + 1.0) * (s - 1.0))
            };
            off[k] = b2.sqrt();
        }
        let first_row = tridiagonal_ql(&mut diag, &mut off);
        let mu0 = jacobi_mass(alpha, beta);
        let mut pairs: Vec<(f64, f64)> = diag
            .into_iter()
            .zip(first_row)
            .map(|(x, v)| (x, mu0 * v * v))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (nodes, weights) = pairs.into_iter().unzip();
        Self { alpha, beta, nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Implicit QL on a symmetric tridiagonal matrix. `off[k]` couples rows `k-1`
/// and `k` (`off[0]` is ignored). On return `diag` holds the eigenvalues and the
/// returned vector the first component of each normalized eigenvector.
fn tridiagonal_ql(diag: &mut [f64], off: &mut [f64]) -> Vec<f64> {
    let n = diag.len();
    let mut z = vec![0.0; n];
    z[0] = 1.0;
    if n == 1 {
        return z;
    }
    let e = off;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let d = diag;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m < n - 1 {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter < 100, "tridiagonal QL failed to converge");
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                let zf = z[i + 1];
                z[i + 1] = s * z[i] + c * zf;
                z[i] = c * z[i] - s * zf;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    z
}

type RuleKey = (u64, u64, usize);

fn rule_cache() -> &'static Mutex<HashMap<RuleKey, Arc<GaussJacobi>>> {
    static CACHE: OnceLock<Mutex<HashMap<RuleKey, Arc<GaussJacobi>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Shared, memoized Gauss–Jacobi rule.
pub fn cached_rule(n: usize, alpha: f64, beta: f64) -> Arc<GaussJacobi> {
    let key = (alpha.to_bits(), beta.to_bits(), n);
    if let Some(rule) = rule_cache().lock().unwrap().get(&key) {
        return rule.clone();
    }
    // Built outside the lock so concurrent callers asking for other rules do not wait.
    let rule = Arc::new(GaussJacobi::new(n, alpha, beta));
    rule_cache().lock().unwrap().entry(key).or_insert(rule).clone()
}

// 15-point Kronrod extension of the 7-point Gauss rule, abscissae on [0, 1).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
// Gauss weights for the odd-indexed Kronrod abscissae (1, 3, 5) and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gk15<const K: usize, F>(f: &F, a: f64, b: f64) -> ([Complex64; K], f64)
where
    F: Fn(f64) -> [Complex64; K],
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = [Complex64::new(0.0, 0.0); K];
    let mut gauss = [Complex64::new(0.0, 0.0); K];
    for k in 0..K {
        kron[k] = fc[k] * WGK[7];
        gauss[k] = fc[k] * WG[3];
    }
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        for k in 0..K {
            let s = f1[k] + f2[k];
            kron[k] += s * WGK[j];
            if j % 2 == 1 {
                gauss[k] += s * WG[j / 2];
            }
        }
    }
    let mut err: f64 = 0.0;
    for k in 0..K {
        kron[k] *= h;
        gauss[k] *= h;
        err = err.max((kron[k] - gauss[k]).norm());
    }
    (kron, err)
}

/// Globally adaptive Gauss–Kronrod (7/15) quadrature of a vector-valued
/// integrand. Returns the integral and the final error estimate; `tol` is
/// absolute and applies to every component.
pub fn adaptive_gk<const K: usize, F>(f: F, a: f64, b: f64, tol: f64, max_intervals: usize) -> ([Complex64; K], f64)
where
    F: Fn(f64) -> [Complex64; K],
{
    let (v, e) = gk15(&f, a, b);
    let mut pieces = vec![(a, b, v, e)];
    let mut total_err = e;
    while total_err > tol && pieces.len() < max_intervals {
        let (idx, _) = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (lo, hi, _, _) = pieces.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        pieces.push((lo, mid, v1, e1));
        pieces.push((mid, hi, v2, e2));
        total_err = pieces.iter().map(|p| p.3).sum();
    }
    let mut sum = [Complex64::new(0.0, 0.0); K];
    for p in &pieces {
        for k in 0..K {
            sum[k] += p.2[k];
        }
    }
    (sum, total_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_three_point_matches_closed_form() {
        let r = GaussJacobi::new(3, 0.0, 0.0);
        let x = (0.6f64).sqrt();
        assert!((r.nodes[0] + x).abs() < 1e-15 && r.nodes[1].abs() < 1e-15 && (r.nodes[2] - x).abs() < 1e-15);
        assert!((r.weights[0] - 5.0 / 9.0).abs() < 1e-15 && (r.weights[1] - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn chebyshev_rule_has_equal_weights_at_cosine_nodes() {
        // alpha = beta = -1/2: nodes cos((2k-1)pi/2n), weights pi/n.
        let n = 7;
        let r = GaussJacobi::new(n, -0.5, -0.5);
        for k in 0..n {
            let expect = -(((2 * k + 1) as f64) * std::f64::consts::PI / (2.0 * n as f64)).cos();
            assert!((r.nodes[k] - expect).abs() < 1e-14);
            assert!((r.weights[k] - std::f64::consts::PI / n as f64).abs() < 1e-14);
        }
    }

    #[test]
    fn jacobi_rule_integrates_monomials_exactly() {
        // int_{-1}^{1} (1-u)^a (1+u)^b u^k du by substitution u = 2t-1 is a finite sum of beta functions.
        let (a, b) = (0.3, 1.7);
        let r = GaussJacobi::new(12, a, b);
        for k in 0..20usize {
            let quad: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(k as i32)).sum();
            // (2t-1)^k expanded binomially; each term is 2^(a+b+1) B(b+1+j, a+1).
            let mut exact = 0.0;
            let mut magnitude = 0.0;
            for j in 0..=k {
                let binom = (ln_gamma(k as f64 + 1.0) - ln_gamma(j as f64 + 1.0) - ln_gamma((k - j) as f64 + 1.0)).exp();
                let sign = if (k - j) % 2 == 0 { 1.0 } else { -1.0 };
                let beta = (ln_gamma(b + 1.0 + j as f64) + ln_gamma(a + 1.0) - ln_gamma(a + b + 2.0 + j as f64)).exp();
                exact += sign * binom * 2f64.powi(j as i32) * beta;
                magnitude += binom * 2f64.powi(j as i32) * beta;
            }
            exact *= 2f64.powf(a + b + 1.0);
            magnitude *= 2f64.powf(a + b + 1.0);
            // The alternating oracle loses digits to cancellation; compare on its own scale.
            assert!((quad - exact).abs() < 1e-13 * magnitude, "k={k}: {quad} vs {exact}");
        }
    }

    #[test]
    fn large_rule_weights_sum_to_mass() {
        let r = GaussJacobi::new(2048, 0.5, 0.5);
        let s: f64 = r.weights.iter().sum();
        assert!((s - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn adaptive_gk_handles_a_near_pole() {
        let z = Complex64::new(0.3, 1e-6);
        let (v, err) = adaptive_gk(|x| [1.0 / (x - z)], 0.0, 1.0, 1e-12, 4000);
        let exact = ((1.0 - z) / (-z)).ln();
        assert!((v[0] - exact).norm() < 1e-10, "{} vs {} err {err}", v[0], exact);
    }
}
