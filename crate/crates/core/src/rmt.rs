//! The random-matrix model `H = A + U B U*` at finite `N`.
//!
//! `A = diag(a)` and `B = diag(b)` are deterministic, `U` is Haar on the unitary
//! or orthogonal group. Observables are computed after shifting `A` and `B` to
//! trace zero; eigenvalues and spectral parameters are reported in the original
//! coordinates, and the shift is recorded on the sample.
//!
//! One eigendecomposition `H = V Λ V*` serves every spectral parameter: with the
//! z-independent products `W = U*V`, `B̃V` and `Ã W = U*AV` cached, each Green
//! function probe costs `O(N²)`.

use std::sync::Once;

use faer::{Mat, MatRef, Side};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::subordination::SubordinationPair;

/// ChaCha stream ids, one per purpose, so substreams of a seed never overlap.
pub const STREAM_HAAR: u64 = 1;
pub const STREAM_WEIGHTS: u64 = 2;

/// Exact identities pass when their relative residual is at most this.
pub const IDENTITY_TOLERANCE: f64 = 1e-9;
/// Tolerance of the structural identities of [`partial_decomposition`].
pub const DECOMPOSITION_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RmtError {
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("assembled matrix is not Hermitian (max asymmetry {0:e})")]
    NotHermitian(f64),
    #[error("eigendecomposition failed: {0}")]
    Eigen(String),
    #[error("sample was diagonalized without eigenvectors")]
    NoEigenvectors,
    #[error("degenerate: {0}")]
    Degenerate(String),
    #[error("weight singularity: |a_{index} - ω_B^c| = {distance:e}")]
    WeightSingularity { index: usize, distance: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Unitary,
    Orthogonal,
}

/// Makes faer run single-threaded so results do not depend on the thread count.
pub fn pin_sequential() {
    static ONCE: Once = Once::new();
    ONCE.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Haar-distributed `N×N` unitary (or real orthogonal) matrix.
///
/// Gaussian matrix from the seed's Haar stream, QR factorization, and the columns
/// of `Q` multiplied by the phases of `diag R`, which makes the law exactly Haar.
pub fn sample_haar(n: usize, seed: u64, field: Field) -> Result<Mat<Complex64>, RmtError> {
    if n == 0 {
        return Err(RmtError::Invalid("N must be at least 1".into()));
    }
    pin_sequential();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_HAAR);
    let mut g = Mat::<Complex64>::zeros(n, n);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    for j in 0..n {
        for i in 0..n {
            g[(i, j)] = match field {
                Field::Unitary => {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    Complex64::new(re * scale, im * scale)
                }
                Field::Orthogonal => c(rng.sample(StandardNormal)),
            };
        }
    }
    let qr = g.qr();
    let mut q = qr.compute_Q();
    let r = qr.R();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { c(1.0) };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    Ok(q)
}

/// `max |U*U - I|`
pub fn unitarity_defect(u: MatRef<'_, Complex64>) -> f64 {
    let p = u.adjoint() * u;
    let mut worst: f64 = 0.0;
    for j in 0..p.ncols() {
        for i in 0..p.nrows() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((p[(i, j)] - target).norm());
        }
    }
    worst
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// A draw of the model together with its spectrum.
#[derive(Debug, Clone)]
pub struct EnsembleSample {
    pub n: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub u: Mat<Complex64>,
    pub seed: Option<u64>,
    pub field: Field,
    /// Ascending eigenvalues of `A + UBU*`.
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors of `H` (columns), in the order of `eigenvalues`.
    pub eigenvectors: Option<Mat<Complex64>>,
    /// Always set: observables use trace-zero `A`, `B`.
    pub centered: bool,
    /// `tr A`, `tr B` (normalized traces) removed by the centering.
    pub shift_a: f64,
    pub shift_b: f64,
}

/// Assembles `H = A + UBU*` (after centering) and diagonalizes it.
pub fn assemble_and_diagonalize(a: &[f64], b: &[f64], u: Mat<Complex64>, field: Field, seed: Option<u64>, with_vectors: bool) -> Result<EnsembleSample, RmtError> {
    let n = a.len();
    if n == 0 || b.len() != n || u.nrows() != n || u.ncols() != n {
        return Err(RmtError::Invalid(format!("dimension mismatch: |a| = {n}, |b| = {}, U is {}x{}", b.len(), u.nrows(), u.ncols())));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(RmtError::Invalid("diagonal entries must be finite".into()));
    }
    pin_sequential();
    let (shift_a, shift_b) = (mean(a), mean(b));
    let ac: Vec<f64> = a.iter().map(|x| x - shift_a).collect();
    let bc: Vec<f64> = b.iter().map(|x| x - shift_b).collect();

    let ub = Mat::<Complex64>::from_fn(n, n, |i, j| u[(i, j)] * bc[j]);
    let mut h = &ub * u.adjoint();
    let scale = ac.iter().chain(&bc).fold(1.0f64, |m, x| m.max(x.abs()));
    let mut asym: f64 = 0.0;
    for j in 0..n {
        for i in 0..j {
            asym = asym.max((h[(i, j)] - h[(j, i)].conj()).norm());
        }
        asym = asym.max(h[(j, j)].im.abs());
    }
    if asym > 1e-12 * scale * (n as f64).sqrt().max(1.0) {
        return Err(RmtError::NotHermitian(asym));
    }
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (h[(i, j)] + h[(j, i)].conj());
            h[(i, j)] = v;
            h[(j, i)] = v.conj();
        }
        h[(j, j)] = c(h[(j, j)].re + ac[j]);
    }

    let shift = shift_a + shift_b;
    let (eigenvalues, eigenvectors) = if with_vectors {
        let evd = h.self_adjoint_eigen(Side::Lower).map_err(|e| RmtError::Eigen(format!("{e:?}")))?;
        let s = evd.S().column_vector();
        let vals: Vec<f64> = (0..n).map(|k| s[k].re + shift).collect();
        (vals, Some(evd.U().to_owned()))
    } else {
        let vals = h.self_adjoint_eigenvalues(Side::Lower).map_err(|e| RmtError::Eigen(format!("{e:?}")))?;
        (vals.into_iter().map(|v| v + shift).collect(), None)
    };
    Ok(EnsembleSample { n, a: a.to_vec(), b: b.to_vec(), u, seed, field, eigenvalues, eigenvectors, centered: true, shift_a, shift_b })
}

/// Samples `U` from `(seed, field)` and diagonalizes `A + UBU*`.
pub fn sample_ensemble(a: &[f64], b: &[f64], seed: u64, field: Field, with_vectors: bool) -> Result<EnsembleSample, RmtError> {
    let u = sample_haar(a.len(), seed, field)?;
    assemble_and_diagonalize(a, b, u, field, Some(seed), with_vectors)
}

impl EnsembleSample {
    /// Total shift `tr A + tr B` between centered and original coordinates.
    pub fn shift(&self) -> f64 {
        self.shift_a + self.shift_b
    }

    pub fn centered_a(&self) -> Vec<f64> {
        self.a.iter().map(|x| x - self.shift_a).collect()
    }

    pub fn centered_b(&self) -> Vec<f64> {
        self.b.iter().map(|x| x - self.shift_b).collect()
    }

    /// `m_H(z) = (1/N) Σ 1/(λ_k - z)` from the eigenvalues alone.
    pub fn stieltjes(&self, z: Complex64) -> Complex64 {
        self.eigenvalues.iter().map(|&l| 1.0 / (l - z)).sum::<Complex64>() / self.n as f64
    }

    pub fn eigenvalues_csv(&self) -> String {
        let mut out = String::from("rank,lambda\n");
        for (k, l) in self.eigenvalues.iter().enumerate() {
            out.push_str(&format!("{},{}\n", k + 1, l));
        }
        out
    }
}

/// z-independent products behind every Green-function probe of one sample.
#[derive(Debug, Clone)]
pub struct GreenContext {
    n: usize,
    ac: Vec<f64>,
    bc: Vec<f64>,
    /// Centered eigenvalues.
    lambda: Vec<f64>,
    shift: f64,
    shift_a: f64,
    shift_b: f64,
    /// `V`
    v: Mat<Complex64>,
    /// `W = U*V`, eigenvectors of the swapped matrix `B + U*AU`.
    w: Mat<Complex64>,
    /// `B̃V = U B W`
    bv: Mat<Complex64>,
    /// `ÃW = U* A V`
    aw: Mat<Complex64>,
    u: Mat<Complex64>,
    /// `B̃ = U B U*`, for the direct route to `S_i`.
    btilde: Mat<Complex64>,
}

impl GreenContext {
    pub fn new(sample: &EnsembleSample) -> Result<Self, RmtError> {
        let v = sample.eigenvectors.clone().ok_or(RmtError::NoEigenvectors)?;
        pin_sequential();
        let n = sample.n;
        let (ac, bc) = (sample.centered_a(), sample.centered_b());
        let u = sample.u.clone();
        let w = u.adjoint() * &v;
        let bw = Mat::<Complex64>::from_fn(n, n, |i, j| w[(i, j)] * bc[i]);
        let bv = &u * &bw;
        let av = Mat::<Complex64>::from_fn(n, n, |i, j| v[(i, j)] * ac[i]);
        let aw = u.adjoint() * &av;
        let ub = Mat::<Complex64>::from_fn(n, n, |i, j| u[(i, j)] * bc[j]);
        let btilde = &ub * u.adjoint();
        let shift = sample.shift();
        Ok(Self {
            n,
            ac,
            bc,
            lambda: sample.eigenvalues.iter().map(|l| l - shift).collect(),
            shift,
            shift_a: sample.shift_a,
            shift_b: sample.shift_b,
            v,
            w,
            bv,
            aw,
            u,
            btilde,
        })
    }

    fn resolvent_weights(&self, zc: Complex64) -> Vec<Complex64> {
        self.lambda.iter().map(|&l| 1.0 / (l - zc)).collect()
    }

    /// `Σ_k X_ik d_k conj(Y_ik)` for every `i`, i.e. the diagonal of `X D Y*`.
    fn diag_xdy(x: &Mat<Complex64>, d: &[Complex64], y: &Mat<Complex64>) -> Vec<Complex64> {
        let n = x.nrows();
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for (k, dk) in d.iter().enumerate() {
            for (i, o) in out.iter_mut().enumerate() {
                *o += x[(i, k)] * dk * y[(i, k)].conj();
            }
        }
        out
    }
}

/// Green-function data at one spectral parameter. Traces are normalized,
/// `tr X = (1/N) Tr X`, and use the centered `A`, `B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenProbe {
    /// Spectral parameter in original coordinates.
    pub z: Complex64,
    /// `z` minus the centering shift.
    pub z_centered: Complex64,
    pub m_h: Complex64,
    pub g_diag: Vec<Complex64>,
    /// `(B̃G)_ii` computed from `B̃` directly.
    pub bg_diag: Vec<Complex64>,
    pub tr_bg: Complex64,
    pub tr_ag: Complex64,
    /// `tr B̃GB̃`
    pub tr_bgb: Complex64,
    /// `tr B̃GA`
    pub tr_bga: Complex64,
    /// Relative residual of `B̃G = I - (A - z)G` on the diagonal and in trace.
    pub resolvent_identity_residual: f64,
}

/// Test hook: size of the corruption added to `(B̃G)_ii` by [`green_probe_perturbed`].
pub const PERTURBATION: f64 = 1e-6;

pub fn green_probe(ctx: &GreenContext, z: Complex64) -> Result<GreenProbe, RmtError> {
    probe_impl(ctx, z, 0.0)
}

/// [`green_probe`] with `(B̃G)_ii` corrupted by `perturbation`; a negative control
/// for the identity checks.
pub fn green_probe_perturbed(ctx: &GreenContext, z: Complex64, perturbation: f64) -> Result<GreenProbe, RmtError> {
    probe_impl(ctx, z, perturbation)
}

fn probe_impl(ctx: &GreenContext, z: Complex64, perturbation: f64) -> Result<GreenProbe, RmtError> {
    if !(z.im > 0.0) {
        return Err(RmtError::Invalid(format!("spectral parameter {z} must have Im z > 0")));
    }
    let n = ctx.n as f64;
    let zc = z - ctx.shift;
    let d = ctx.resolvent_weights(zc);
    let g_diag = GreenContext::diag_xdy(&ctx.v, &d, &ctx.v);
    let mut bg_diag = GreenContext::diag_xdy(&ctx.bv, &d, &ctx.v);
    for x in bg_diag.iter_mut() {
        *x += perturbation;
    }
    let m_h = g_diag.iter().sum::<Complex64>() / n;
    let tr_bg = bg_diag.iter().sum::<Complex64>() / n;
    let tr_ag = g_diag.iter().zip(&ctx.ac).map(|(g, a)| g * a).sum::<Complex64>() / n;
    let tr_bga = bg_diag.iter().zip(&ctx.ac).map(|(g, a)| g * a).sum::<Complex64>() / n;
    // tr GB̃² = (1/N) Σ_k d_k ‖B̃ v_k‖²
    let tr_bgb = (0..ctx.n)
        .map(|k| {
            let norm2: f64 = (0..ctx.n).map(|j| ctx.bv[(j, k)].norm_sqr()).sum();
            d[k] * norm2
        })
        .sum::<Complex64>()
        / n;

    let mut worst: f64 = 0.0;
    for i in 0..ctx.n {
        let rhs = 1.0 - (ctx.ac[i] - zc) * g_diag[i];
        let scale = 1.0f64.max(bg_diag[i].norm()).max(rhs.norm());
        worst = worst.max((bg_diag[i] - rhs).norm() / scale);
    }
    let traced = 1.0 - tr_ag + zc * m_h;
    worst = worst.max((tr_bg - traced).norm() / 1.0f64.max(tr_bg.norm()));

    Ok(GreenProbe { z, z_centered: zc, m_h, g_diag, bg_diag, tr_bg, tr_ag, tr_bgb, tr_bga, resolvent_identity_residual: worst })
}

/// `(ω_A^c, ω_B^c)` in original coordinates.
pub fn approx_subordination(ctx: &GreenContext, probe: &GreenProbe) -> Result<(Complex64, Complex64), RmtError> {
    let (wa, wb) = approx_centered(probe)?;
    Ok((wa + ctx.shift_b, wb + ctx.shift_a))
}

fn approx_centered(probe: &GreenProbe) -> Result<(Complex64, Complex64), RmtError> {
    if probe.m_h.norm() < 1e-12 {
        return Err(RmtError::Degenerate(format!("|m_H({})| < 1e-12", probe.z)));
    }
    let zc = probe.z_centered;
    Ok((zc - probe.tr_ag / probe.m_h, zc - probe.tr_bg / probe.m_h))
}

/// Householder-type pieces splitting the `i`-th Haar column off `U`.
#[derive(Debug, Clone)]
pub struct DecompositionParts {
    pub index: usize,
    /// `arg u_ii`
    pub theta: f64,
    /// `h_i = e^{-iθ_i} u_i`, the normalized `g_i`.
    pub h: Vec<Complex64>,
    /// `h_i` with its `i`-th entry removed.
    pub h_ring: Vec<Complex64>,
    pub ell: f64,
    pub r: Vec<Complex64>,
    /// `R_i = I - r_i r_i*`
    pub reflection: Mat<Complex64>,
    /// `U^{⟨i⟩} = -e^{-iθ_i} R_i U`
    pub u_minor: Mat<Complex64>,
    pub residuals: Vec<IdentityCheck>,
}

/// Partial randomness decomposition `U = -e^{iθ_i} R_i U^{⟨i⟩}` at index `i`,
/// with all structural identities evaluated.
pub fn partial_decomposition(u: MatRef<'_, Complex64>, b: &[f64], i: usize) -> Result<DecompositionParts, RmtError> {
    let n = u.nrows();
    if u.ncols() != n || i >= n || b.len() != n {
        return Err(RmtError::Invalid(format!("index {i} or dimensions invalid for a {n}x{} matrix", u.ncols())));
    }
    pin_sequential();
    let uii = u[(i, i)];
    if uii.norm() < 1e-14 {
        return Err(RmtError::Degenerate(format!("|u_ii| = {:e} leaves the phase undefined", uii.norm())));
    }
    let theta = uii.arg();
    let phase = Complex64::from_polar(1.0, -theta);
    let h: Vec<Complex64> = (0..n).map(|k| phase * u[(k, i)]).collect();
    let mut h_ring = h.clone();
    h_ring[i] = c(0.0);
    let mut e_plus_h = h.clone();
    e_plus_h[i] += 1.0;
    let norm = e_plus_h.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let ell = std::f64::consts::SQRT_2 / norm;
    let r: Vec<Complex64> = e_plus_h.iter().map(|x| x * ell).collect();
    let reflection = Mat::<Complex64>::from_fn(n, n, |p, q| if p == q { c(1.0) } else { c(0.0) } - r[p] * r[q].conj());
    let mut u_minor = &reflection * u;
    for q in 0..n {
        for p in 0..n {
            u_minor[(p, q)] *= -phase;
        }
    }

    let max_abs = |m: &Mat<Complex64>| {
        let mut w: f64 = 0.0;
        for q in 0..m.ncols() {
            for p in 0..m.nrows() {
                w = w.max(m[(p, q)].norm());
            }
        }
        w
    };
    let eye = Mat::<Complex64>::from_fn(n, n, |p, q| if p == q { c(1.0) } else { c(0.0) });
    let dcheck = |name: &str, r: f64| IdentityCheck::with_tolerance(name, r, DECOMPOSITION_TOLERANCE);
    let mut checks = Vec::new();
    let rr = &reflection * &reflection;
    checks.push(dcheck("reflection_involution", max_abs(&(&rr - &eye))));
    checks.push(dcheck("reflection_hermitian", max_abs(&(&reflection - reflection.adjoint()))));
    let re_i: f64 = (0..n).map(|p| (reflection[(p, i)] + h[p]).norm()).fold(0.0, f64::max);
    checks.push(dcheck("reflection_maps_e_to_minus_h", re_i));
    let rh: f64 = (0..n)
        .map(|p| {
            let v: Complex64 = (0..n).map(|q| reflection[(p, q)] * h[q]).sum();
            (v + if p == i { 1.0 } else { 0.0 }).norm()
        })
        .fold(0.0, f64::max);
    checks.push(dcheck("reflection_maps_h_to_minus_e", rh));
    let recon = &reflection * &u_minor;
    let back = Mat::<Complex64>::from_fn(n, n, |p, q| u[(p, q)] + Complex64::from_polar(1.0, theta) * recon[(p, q)]);
    checks.push(dcheck("factorization", max_abs(&back)));
    let fixed: f64 = (0..n)
        .map(|p| (u_minor[(p, i)] - if p == i { 1.0 } else { 0.0 }).norm().max((u_minor[(i, p)] - if p == i { 1.0 } else { 0.0 }).norm()))
        .fold(0.0, f64::max);
    checks.push(dcheck("minor_fixes_e_i", fixed));
    let column: f64 = (0..n).map(|p| (u[(p, i)] + Complex64::from_polar(1.0, theta) * reflection[(p, i)]).norm()).fold(0.0, f64::max);
    checks.push(dcheck("column_from_reflection", column));
    // e_i* B̃^{⟨i⟩} = b_i e_i*, with B̃^{⟨i⟩} = U^{⟨i⟩} B U^{⟨i⟩*}.
    let ub = Mat::<Complex64>::from_fn(n, n, |p, q| u_minor[(p, q)] * b[q]);
    let bi = &ub * u_minor.adjoint();
    let eig: f64 = (0..n).map(|q| (bi[(i, q)] - if q == i { b[i] } else { 0.0 }).norm()).fold(0.0, f64::max);
    let bscale = b.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    checks.push(dcheck("minor_eigenrelation", eig / bscale));
    Ok(DecompositionParts { index: i, theta, h, h_ring, ell, r, reflection, u_minor, residuals: checks })
}

/// Relative residual of one exact identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub residual: f64,
    pub pass: bool,
}

impl IdentityCheck {
    pub fn new(name: &str, residual: f64) -> Self {
        Self::with_tolerance(name, residual, IDENTITY_TOLERANCE)
    }

    pub fn with_tolerance(name: &str, residual: f64, tolerance: f64) -> Self {
        Self { name: name.to_string(), residual, pass: residual <= tolerance }
    }
}

/// `|x - y|` relative to the larger of `|x|`, `|y|` and the size of the terms that produced them.
fn rel(x: Complex64, y: Complex64, terms: f64) -> f64 {
    let scale = x.norm().max(y.norm()).max(terms).max(f64::MIN_POSITIVE);
    (x - y).norm() / scale
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FluctuationOptions {
    /// Also compute `S_i = h_i* R_i B̃ R_i G e_i` by explicit matrix-vector products
    /// (`O(N³)`), checked against the closed form.
    pub direct_s: bool,
    /// Corrupt `(B̃G)_ii` by [`PERTURBATION`] before anything else is derived.
    pub perturb: bool,
}

/// Every observable of the fluctuation analysis at one `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationReport {
    pub n: usize,
    pub z: Complex64,
    pub m_h: Complex64,
    pub tr_bg: Complex64,
    pub tr_ag: Complex64,
    pub upsilon: Complex64,
    /// `ω_A^c`, `ω_B^c` in original coordinates.
    pub omega_a_c: Complex64,
    pub omega_b_c: Complex64,
    pub phi1_c: Complex64,
    pub phi2_c: Complex64,
    pub z1: Complex64,
    pub z2: Complex64,
    /// `√(1/(Nη))`
    pub psi: f64,
    /// `√(Im m_H/(Nη))`
    pub pi: f64,
    pub pi_i: Vec<f64>,
    /// `ω_A^c - ω_A`, `ω_B^c - ω_B` when a subordination pair was supplied.
    pub lambda_a: Option<Complex64>,
    pub lambda_b: Option<Complex64>,
    /// `max_i |G_ii - 1/(a_i - ω_B^c)|`
    pub lambda_d_c: f64,
    /// Same with `ω_B` when a pair was supplied.
    pub lambda_d: Option<f64>,
    pub s: Vec<Complex64>,
    pub s_ring: Vec<Complex64>,
    pub t: Vec<Complex64>,
    pub t_ring: Vec<Complex64>,
    pub q: Vec<Complex64>,
    /// `𝒬_i` of the swapped ensemble `B + U*AU`.
    pub q_swapped: Vec<Complex64>,
    pub p: Vec<Complex64>,
    pub k: Vec<Complex64>,
    /// Weights `𝔡_{i,1}`, `𝔡_{i,2}` of `Z₁`.
    pub d1: Vec<Complex64>,
    pub d2: Vec<Complex64>,
    /// Mirrored weights of `Z₂` (A and B exchanged).
    pub d1_swapped: Vec<Complex64>,
    pub d2_swapped: Vec<Complex64>,
    pub identities: Vec<IdentityCheck>,
}

impl FluctuationReport {
    pub fn all_pass(&self) -> bool {
        self.identities.iter().all(|c| c.pass)
    }
}

fn f_atomic(atoms: &[f64], w: Complex64) -> (Complex64, Complex64) {
    let n = atoms.len() as f64;
    let (mut m, mut dm) = (c(0.0), c(0.0));
    for &a in atoms {
        let r = 1.0 / (a - w);
        m += r;
        dm += r * r;
    }
    let (m, dm) = (m / n, dm / n);
    (-1.0 / m, dm / (m * m))
}

pub fn fluctuation_observables(
    ctx: &GreenContext,
    z: Complex64,
    pair: Option<&SubordinationPair>,
    opts: FluctuationOptions,
) -> Result<FluctuationReport, RmtError> {
    let probe = probe_impl(ctx, z, if opts.perturb { PERTURBATION } else { 0.0 })?;
    let n = ctx.n;
    let nf = n as f64;
    let zc = probe.z_centered;
    let m = probe.m_h;
    let (ac, bc) = (&ctx.ac, &ctx.bc);
    let g = &probe.g_diag;
    let bg = &probe.bg_diag;
    let d = ctx.resolvent_weights(zc);

    // Swapped ensemble: 𝒢 = W D W*, Ã𝒢 = (ÃW) D W*.
    let gs = GreenContext::diag_xdy(&ctx.w, &d, &ctx.w);
    let ags = GreenContext::diag_xdy(&ctx.aw, &d, &ctx.w);
    let ms = gs.iter().sum::<Complex64>() / nf;
    let tr_ags = ags.iter().sum::<Complex64>() / nf;

    let (wa, wb) = approx_centered(&probe)?;
    for (i, &a) in ac.iter().enumerate() {
        let dist = (a - wb).norm();
        if dist < 1e-10 {
            return Err(RmtError::WeightSingularity { index: i, distance: dist });
        }
    }
    for &b in bc.iter() {
        if (b - wa).norm() < 1e-10 {
            return Err(RmtError::Degenerate(format!("|b_i - ω_A^c| < 1e-10 at {z}")));
        }
    }

    // Entries of G between u_i and e_i: u_i* G e_i = Σ_k W_ik d_k conj(V_ik).
    let ug = GreenContext::diag_xdy(&ctx.w, &d, &ctx.v);
    let mut t = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut h_diag = Vec::with_capacity(n);
    let mut ell2 = Vec::with_capacity(n);
    for i in 0..n {
        let uii = ctx.u[(i, i)];
        if uii.norm() < 1e-14 {
            return Err(RmtError::Degenerate(format!("|u_ii| < 1e-14 at i = {i}")));
        }
        let phase = uii / uii.norm();
        let hii = uii.norm();
        let ti = phase * ug[i];
        // ‖e_i + h_i‖² = 2 + 2 h_ii
        let l2 = 2.0 / (2.0 + 2.0 * hii);
        // S_i = -(B̃G)_ii + ℓ²(B̃_ii + b_i h_ii)(G_ii + T_i)
        let si = -bg[i] + l2 * (ctx.btilde[(i, i)] + bc[i] * hii) * (g[i] + ti);
        t.push(ti);
        s.push(si);
        h_diag.push(hii);
        ell2.push(l2);
    }
    let s_ring: Vec<Complex64> = (0..n).map(|i| s[i] - h_diag[i] * bc[i] * g[i]).collect();
    let t_ring: Vec<Complex64> = (0..n).map(|i| t[i] - h_diag[i] * g[i]).collect();

    let q: Vec<Complex64> = (0..n).map(|i| bg[i] * m - g[i] * probe.tr_bg).collect();
    let q_swapped: Vec<Complex64> = (0..n).map(|i| ags[i] * ms - gs[i] * tr_ags).collect();
    let upsilon = probe.tr_bg - probe.tr_bg * probe.tr_bg + m * probe.tr_bgb;
    let p: Vec<Complex64> = (0..n).map(|i| q[i] + (g[i] + t[i]) * upsilon).collect();
    let k: Vec<Complex64> = (0..n).map(|i| t[i] + (bc[i] * t[i] + bg[i]) * m - (g[i] + t[i]) * probe.tr_bg).collect();

    let (fa_c, _) = f_atomic(ac, wb);
    let (fb_c, _) = f_atomic(bc, wa);
    let phi1 = fa_c - wa - wb + zc;
    let phi2 = fb_c - wa - wb + zc;
    // True subordination functions in centered coordinates, or ω^c if none supplied.
    let (ta, tb) = match pair {
        Some(p) => (p.omega1 - ctx.shift_b, p.omega2 - ctx.shift_a),
        None => (wa, wb),
    };
    let (_, dfa) = f_atomic(ac, tb);
    let (_, dfb) = f_atomic(bc, ta);
    let z1 = phi1 + (dfa - 1.0) * phi2;
    let z2 = phi2 + (dfb - 1.0) * phi1;
    let m2 = m * m;
    let d1: Vec<Complex64> = ac.iter().map(|&a| -fa_c / m2 / (a - wb)).collect();
    let d2: Vec<Complex64> = bc.iter().map(|&b| -(dfa - 1.0) * fb_c / m2 / (b - wa)).collect();
    let d1_swapped: Vec<Complex64> = bc.iter().map(|&b| -fb_c / m2 / (b - wa)).collect();
    let d2_swapped: Vec<Complex64> = ac.iter().map(|&a| -(dfb - 1.0) * fa_c / m2 / (a - wb)).collect();

    let eta = z.im;
    let psi = (1.0 / (nf * eta)).sqrt();
    let pi = (m.im / (nf * eta)).sqrt();
    let pi_i: Vec<f64> = (0..n).map(|i| ((g[i].im + gs[i].im) / (nf * eta)).sqrt()).collect();
    let lambda_d_c = (0..n).map(|i| (g[i] - 1.0 / (ac[i] - wb)).norm()).fold(0.0, f64::max);
    let lambda_d = pair.map(|_| (0..n).map(|i| (g[i] - 1.0 / (ac[i] - tb)).norm()).fold(0.0, f64::max));

    // Identity residuals.
    let mut ids = Vec::new();
    ids.push(IdentityCheck::new("omega_c_sum", rel(wa + wb - zc, -1.0 / m, zc.norm() + (probe.tr_ag / m).norm() + (probe.tr_bg / m).norm())));
    ids.push(IdentityCheck::new("bg_resolvent", probe.resolvent_identity_residual));
    let k_res = (0..n)
        .map(|i| {
            let rhs = (1.0 + bc[i] * m - probe.tr_bg) * t[i] + q[i];
            rel(k[i], rhs, t[i].norm() * (1.0 + (bc[i] * m).norm() + probe.tr_bg.norm()) + q[i].norm())
        })
        .fold(0.0, f64::max);
    ids.push(IdentityCheck::new("k_linear_in_t_and_q", k_res));
    let ups_alt = probe.tr_ag * probe.tr_bg - m * probe.tr_bga;
    let ups_terms = probe.tr_bg.norm() + probe.tr_bg.norm_sqr() + (m * probe.tr_bgb).norm();
    ids.push(IdentityCheck::new("upsilon_two_forms", rel(upsilon, ups_alt, ups_terms)));
    let ups_avg = (0..n).map(|i| ac[i] * (g[i] * probe.tr_bg - bg[i] * m)).sum::<Complex64>() / nf;
    ids.push(IdentityCheck::new("upsilon_average_form", rel(ups_alt, ups_avg, ups_terms)));
    let q_terms: f64 = (0..n).map(|i| (bg[i] * m).norm() + (g[i] * probe.tr_bg).norm()).sum::<f64>() / nf;
    ids.push(IdentityCheck::new("sum_q_vanishes", rel(q.iter().sum::<Complex64>() / nf, c(0.0), q_terms)));
    let qs_terms: f64 = (0..n).map(|i| (ags[i] * ms).norm() + (gs[i] * tr_ags).norm()).sum::<f64>() / nf;
    ids.push(IdentityCheck::new("sum_q_swapped_vanishes", rel(q_swapped.iter().sum::<Complex64>() / nf, c(0.0), qs_terms)));
    ids.push(IdentityCheck::new("swap_duality", rel(ms, m, 0.0).max(rel(tr_ags, probe.tr_ag, 0.0))));
    let phi1_q = (0..n).map(|i| q[i] / (ac[i] - wb)).sum::<Complex64>() / nf * (-fa_c / m2);
    let phi1_terms = (0..n).map(|i| (q[i] / (ac[i] - wb)).norm()).sum::<f64>() / nf * (fa_c / m2).norm() + fa_c.norm();
    ids.push(IdentityCheck::new("phi1_from_q", rel(phi1, phi1_q, phi1_terms)));
    let phi2_q = (0..n).map(|i| q_swapped[i] / (bc[i] - wa)).sum::<Complex64>() / nf * (-fb_c / m2);
    let phi2_terms = (0..n).map(|i| (q_swapped[i] / (bc[i] - wa)).norm()).sum::<f64>() / nf * (fb_c / m2).norm() + fb_c.norm();
    ids.push(IdentityCheck::new("phi2_from_q_swapped", rel(phi2, phi2_q, phi2_terms)));
    let z1_w = (0..n).map(|i| d1[i] * q[i] + d2[i] * q_swapped[i]).sum::<Complex64>() / nf;
    let z1_terms = (0..n).map(|i| (d1[i] * q[i]).norm() + (d2[i] * q_swapped[i]).norm()).sum::<f64>() / nf + phi1_terms;
    ids.push(IdentityCheck::new("z1_weighted", rel(z1, z1_w, z1_terms)));
    let z2_w = (0..n).map(|i| d1_swapped[i] * q_swapped[i] + d2_swapped[i] * q[i]).sum::<Complex64>() / nf;
    let z2_terms = (0..n).map(|i| (d1_swapped[i] * q_swapped[i]).norm() + (d2_swapped[i] * q[i]).norm()).sum::<f64>() / nf + phi2_terms;
    ids.push(IdentityCheck::new("z2_weighted", rel(z2, z2_w, z2_terms)));

    if opts.direct_s {
        // G e_i = V d ∘ conj(V_i,:)
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let uii = ctx.u[(i, i)];
            let phase = (uii / uii.norm()).conj();
            let h: Vec<Complex64> = (0..n).map(|p| phase * ctx.u[(p, i)]).collect();
            let mut r: Vec<Complex64> = h.clone();
            r[i] += 1.0;
            let l = ell2[i].sqrt();
            r.iter_mut().for_each(|x| *x *= l);
            let reflect = |x: &mut Vec<Complex64>| {
                let dot: Complex64 = r.iter().zip(x.iter()).map(|(a, b)| a.conj() * b).sum();
                x.iter_mut().zip(&r).for_each(|(xi, ri)| *xi -= ri * dot);
            };
            let coeff: Vec<Complex64> = (0..n).map(|k| d[k] * ctx.v[(i, k)].conj()).collect();
            let mut x: Vec<Complex64> = (0..n).map(|p| (0..n).map(|k| ctx.v[(p, k)] * coeff[k]).sum()).collect();
            reflect(&mut x);
            let mut y: Vec<Complex64> = (0..n).map(|p| (0..n).map(|q| ctx.btilde[(p, q)] * x[q]).sum()).collect();
            reflect(&mut y);
            let direct: Complex64 = h.iter().zip(&y).map(|(a, b)| a.conj() * b).sum();
            worst = worst.max(rel(direct, s[i], bg[i].norm() + (ell2[i] * (g[i] + t[i])).norm()));
        }
        ids.push(IdentityCheck::new("s_direct_vs_decomposition", worst));
    }

    Ok(FluctuationReport {
        n,
        z,
        m_h: m,
        tr_bg: probe.tr_bg,
        tr_ag: probe.tr_ag,
        upsilon,
        omega_a_c: wa + ctx.shift_b,
        omega_b_c: wb + ctx.shift_a,
        phi1_c: phi1,
        phi2_c: phi2,
        z1,
        z2,
        psi,
        pi,
        pi_i,
        lambda_a: pair.map(|_| wa - ta),
        lambda_b: pair.map(|_| wb - tb),
        lambda_d_c,
        lambda_d,
        s,
        s_ring,
        t,
        t_ring,
        q,
        q_swapped,
        p,
        k,
        d1,
        d2,
        d1_swapped,
        d2_swapped,
        identities: ids,
    })
}

/// Finite-sample surrogate for `X ≺ bound`: at most 5% of trials may exceed `N^ε · bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominationReport {
    pub trials: usize,
    pub n: usize,
    pub epsilon: f64,
    pub bound: f64,
    pub threshold: f64,
    pub exceedances: usize,
    pub exceedance_fraction: f64,
    pub max_statistic: f64,
    pub pass: bool,
}

pub const DOMINATION_MAX_EXCEEDANCE: f64 = 0.05;

pub fn stochastic_domination_test<S, F: Fn(&S) -> f64>(samples: &[S], statistic: F, n: usize, bound: f64, epsilon: f64) -> Result<DominationReport, RmtError> {
    if samples.len() < 10 {
        return Err(RmtError::InsufficientData(format!("{} trials, at least 10 required", samples.len())));
    }
    if !(bound >= 0.0 && epsilon >= 0.0) {
        return Err(RmtError::Invalid("bound and epsilon must be non-negative".into()));
    }
    let threshold = (n as f64).powf(epsilon) * bound;
    let values: Vec<f64> = samples.iter().map(statistic).collect();
    let exceedances = values.iter().filter(|v| !(**v <= threshold)).count();
    let fraction = exceedances as f64 / values.len() as f64;
    Ok(DominationReport {
        trials: values.len(),
        n,
        epsilon,
        bound,
        threshold,
        exceedances,
        exceedance_fraction: fraction,
        max_statistic: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        pass: fraction <= DOMINATION_MAX_EXCEEDANCE,
    })
}

/// Unit-modulus weights `e^{iφ_i}` from the seed's weight stream.
pub fn random_phases(n: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_WEIGHTS);
    (0..n).map(|_| Complex64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|k| lo + (hi - lo) * (k as f64 + 0.5) / n as f64).collect()
    }

    #[test]
    fn haar_is_unitary_and_deterministic() {
        for field in [Field::Unitary, Field::Orthogonal] {
            let u = sample_haar(40, 7, field).unwrap();
            assert!(unitarity_defect(u.as_ref()) <= 1e-12);
            let again = sample_haar(40, 7, field).unwrap();
            assert!(u == again);
            if field == Field::Orthogonal {
                assert!((0..40).all(|j| (0..40).all(|i| u[(i, j)].im == 0.0)));
            }
        }
        assert!(sample_haar(0, 1, Field::Unitary).is_err());
    }

    #[test]
    fn haar_column_entries_are_exchangeable() {
        let draws = 10_000;
        let vals: Vec<f64> = (0..draws as u64).map(|s| sample_haar(8, s, Field::Unitary).unwrap()[(0, 0)].norm_sqr()).collect();
        let mean = vals.iter().sum::<f64>() / draws as f64;
        // |u_11|² ~ Beta(1, 7): variance 7/(64·9).
        let sd = (7.0f64 / (64.0 * 9.0) / draws as f64).sqrt();
        assert!((mean - 0.125).abs() < 3.0 * sd, "{mean}");
    }

    #[test]
    fn trivial_spectra() {
        let n = 30;
        let a = grid(n, -1.0, 2.0);
        let zero = vec![0.0; n];
        let s = sample_ensemble(&a, &zero, 3, Field::Unitary, false).unwrap();
        for (l, x) in s.eigenvalues.iter().zip(&a) {
            assert!((l - x).abs() < 1e-12);
        }
        let b = grid(n, 0.0, 1.0);
        let s = sample_ensemble(&vec![0.7; n], &b, 3, Field::Unitary, false).unwrap();
        for (l, x) in s.eigenvalues.iter().zip(&b) {
            assert!((l - 0.7 - x).abs() < 1e-12);
        }
        let s = sample_ensemble(&a, &b, 4, Field::Orthogonal, false).unwrap();
        let tr: f64 = s.eigenvalues.iter().sum();
        assert!((tr - a.iter().sum::<f64>() - b.iter().sum::<f64>()).abs() <= 1e-9 * n as f64);
        assert!(s.eigenvalues[0] >= -1.0 + 0.0 - 1e-9);
    }

    fn fixture(n: usize, seed: u64, field: Field) -> (EnsembleSample, GreenContext) {
        let a = grid(n, 0.0, 1.0);
        let b: Vec<f64> = grid(n, 0.0, 1.0).iter().map(|x| x * x).collect();
        let s = sample_ensemble(&a, &b, seed, field, true).unwrap();
        let ctx = GreenContext::new(&s).unwrap();
        (s, ctx)
    }

    #[test]
    fn green_probe_basics() {
        let (s, ctx) = fixture(48, 11, Field::Unitary);
        let z = Complex64::new(0.8, 0.05);
        let p = green_probe(&ctx, z).unwrap();
        assert!(p.resolvent_identity_residual < 1e-12);
        assert!((p.m_h - s.stieltjes(z)).norm() < 1e-12);
        assert!(p.m_h.im > 0.0);
        // Centered moments: m_H(z) = -1/z - tr H²/z³ + O(z⁻⁴) since tr H = 0.
        let zc = Complex64::new(s.shift(), 10.0);
        let p = green_probe(&ctx, zc).unwrap();
        let zz = zc - s.shift();
        let m2 = s.eigenvalues.iter().map(|l| (l - s.shift()).powi(2)).sum::<f64>() / s.n as f64;
        assert!((p.m_h + 1.0 / zz + m2 / (zz * zz * zz)).norm() < 1e-5);
        // Resolvent identity G(z) - G(z') = (z - z')G(z)G(z'), traced via eigenvalues.
        let (z1, z2) = (Complex64::new(0.5, 0.1), Complex64::new(1.1, 0.02));
        let lhs = s.stieltjes(z1) - s.stieltjes(z2);
        let rhs: Complex64 = s.eigenvalues.iter().map(|&l| (z1 - z2) / ((l - z1) * (l - z2))).sum::<Complex64>() / s.n as f64;
        assert!((lhs - rhs).norm() < 1e-9);
        assert!(green_probe(&ctx, Complex64::new(0.0, 0.0)).is_err());
    }

    #[test]
    fn omega_c_with_vanishing_b() {
        let n = 32;
        let a = grid(n, -1.0, 1.0);
        let s = sample_ensemble(&a, &vec![0.0; n], 5, Field::Unitary, true).unwrap();
        let ctx = GreenContext::new(&s).unwrap();
        let z = Complex64::new(0.1, 0.2);
        let p = green_probe(&ctx, z).unwrap();
        let (_, wb) = approx_subordination(&ctx, &p).unwrap();
        assert!((wb - z).norm() < 1e-10);
    }

    #[test]
    fn identities_hold_for_both_fields() {
        for field in [Field::Unitary, Field::Orthogonal] {
            let (_, ctx) = fixture(40, 21, field);
            for z in [Complex64::new(0.7, 0.03), Complex64::new(-0.5, 0.5)] {
                let r = fluctuation_observables(&ctx, z, None, FluctuationOptions { direct_s: true, perturb: false }).unwrap();
                for id in &r.identities {
                    assert!(id.pass, "{field:?} {z}: {} = {:e}", id.name, id.residual);
                }
            }
        }
    }

    #[test]
    fn perturbation_breaks_resolvent_identity() {
        let (_, ctx) = fixture(40, 2, Field::Unitary);
        let r = fluctuation_observables(&ctx, Complex64::new(0.7, 0.05), None, FluctuationOptions { direct_s: false, perturb: true }).unwrap();
        let bg = r.identities.iter().find(|c| c.name == "bg_resolvent").unwrap();
        assert!(!bg.pass && bg.residual > 1e-7);
    }

    #[test]
    fn decomposition_identities() {
        let u = sample_haar(24, 9, Field::Unitary).unwrap();
        let b = grid(24, -1.0, 1.0);
        for i in [0, 5, 23] {
            let parts = partial_decomposition(u.as_ref(), &b, i).unwrap();
            for chk in &parts.residuals {
                assert!(chk.pass, "{}: {:e}", chk.name, chk.residual);
            }
        }
        let mut bad = u.clone();
        bad[(3, 3)] = c(0.0);
        assert!(matches!(partial_decomposition(bad.as_ref(), &b, 3), Err(RmtError::Degenerate(_))));
    }

    #[test]
    fn swap_duality() {
        let (s, _) = fixture(36, 13, Field::Unitary);
        let ut = s.u.adjoint().to_owned();
        let swapped = assemble_and_diagonalize(&s.b, &s.a, ut, Field::Unitary, None, false).unwrap();
        for (x, y) in s.eigenvalues.iter().zip(&swapped.eigenvalues) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn domination_test_discriminates() {
        let zeros = vec![0.0; 10];
        assert!(stochastic_domination_test(&zeros, |x| *x, 100, 1.0, 0.1).unwrap().pass);
        assert!(stochastic_domination_test(&zeros[..5], |x| *x, 100, 1.0, 0.1).is_err());
        let ones = vec![1.0; 20];
        assert!(!stochastic_domination_test(&ones, |x| *x, 100, 0.01, 0.0).unwrap().pass);
    }
}
