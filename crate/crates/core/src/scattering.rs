//! The edge of the continuous spectrum: boundary values of the resolvent of
//! B, spectral densities δ(B−λ), distorted plane waves, the Fermi golden rule
//! matrices and the coefficients of the reduced mode system.
//!
//! The box-quantized continuum is handled in the momentum variable
//! k_n = √μ_n, where the levels are nearly equally spaced (dk ≈ π/2L) even
//! close to the threshold. Using b_n² − λ² = k_n² − k₀²,
//!
//! ```text
//! 1/(b_n − λ) = (b_n + λ)/(2k₀) · [1/(k_n − k₀) + 1/(−k_n − k₀)],
//! ```
//!
//! and the regularization k₀ → k₀ ± iε in the first bracket gives the
//! limiting-absorption values after extrapolating ε → 0 from a few ε of the
//! order of the level spacing. δ(B−λ) = (λ/k₀)·δ(A−k₀) with A = √(−Δ+V)
//! on range(P_c).

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jets::{expand_h_p, Nonlinearity};
use crate::linalg;
use crate::normalform::{birkhoff_normalize, NormalFormResult};
use crate::resonance::{degree, dot_omega, Exponent, MultiIndexSet};
use crate::spectral::SpectralData;

/// Relative agreement required between the two internal density estimates.
pub const DENSITY_AGREEMENT: f64 = 0.05;
/// Relative disagreement between Γ methods above which a run is flagged.
pub const GAMMA_AGREEMENT: f64 = 0.02;

/// Base of the Lorentzian width schedule, in units of the local level spacing.
const EPS_BASE: f64 = 4.0;
/// Base of the Gaussian width schedule, in units of the local level spacing.
const SIGMA_BASE: f64 = 3.0;
const SCHEDULE: [f64; 4] = [1.0, 1.25, 1.5, 1.75];

/// Lagrange weights L_i(0) for interpolation nodes x_i.
fn lagrange_at_zero(x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            x.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &xj)| xj / (xj - x[i]))
                .product()
        })
        .collect()
}

/// Per-mode multipliers that realize, after extrapolation, the boundary
/// value (B − λ − i0)⁻¹ and the density δ(B−λ) on the continuum eigenbasis.
#[derive(Clone, Debug)]
pub struct LapWeights {
    pub lambda: f64,
    pub k0: f64,
    /// Local level spacing in k.
    pub dk: f64,
    /// w_n with Σ_n w_n P_n → (B − λ − i0)⁻¹.
    pub resolvent: Vec<C64>,
    /// Gaussian-smoothed δ(B−λ) weights, extrapolated in σ² → 0.
    pub gaussian: Vec<f64>,
}

impl LapWeights {
    /// Lorentzian density weights Im(w_n)/π.
    pub fn density(&self) -> Vec<f64> {
        self.resolvent.iter().map(|w| w.im / PI).collect()
    }
}

fn local_spacing(ks: &[f64], k0: f64) -> f64 {
    let n = ks.len();
    let i = ks.partition_point(|&k| k < k0).min(n - 1);
    let lo = i.saturating_sub(3);
    let hi = (i + 3).min(n - 1);
    (ks[hi] - ks[lo]) / (hi - lo) as f64
}

pub fn lap_weights(s: &SpectralData, lambda: f64) -> Result<LapWeights> {
    let m = s.mass;
    if !(lambda > m) {
        return Err(Error::Precondition(format!(
            "λ = {lambda} is not above the threshold m = {m}; no continuous spectrum there"
        )));
    }
    let ks = s.continuum_momenta();
    if ks.len() < 16 {
        return Err(Error::Resolution("too few continuum modes".into()));
    }
    let k0 = (lambda * lambda - m * m).sqrt();
    let dk = local_spacing(&ks, k0);
    let db = dk * k0 / lambda;
    if lambda - m <= 5.0 * db {
        return Err(Error::Resolution(format!(
            "λ − m = {:.4} is within 5 level spacings ({:.4}) of the threshold; enlarge the box",
            lambda - m,
            5.0 * db
        )));
    }
    let m2 = m * m;
    let eps: Vec<f64> = SCHEDULE.iter().map(|c| c * EPS_BASE * dk).collect();
    let le = lagrange_at_zero(&eps);
    let sig: Vec<f64> = SCHEDULE.iter().map(|c| c * SIGMA_BASE * dk).collect();
    let s2: Vec<f64> = sig.iter().map(|x| x * x).collect();
    let ls = lagrange_at_zero(&s2);
    let mut resolvent = Vec::with_capacity(ks.len());
    let mut gaussian = Vec::with_capacity(ks.len());
    for &k in &ks {
        let b = (k * k + m2).sqrt();
        let e = (b + lambda) / (2.0 * k0);
        let mut w = C64::new(0.0, 0.0);
        for (l, &ep) in le.iter().zip(&eps) {
            let z = C64::new(k0, ep);
            w += *l * e * (1.0 / (k - z) + 1.0 / (-k - z));
        }
        resolvent.push(w);
        let mut g = 0.0;
        for (l, &sg) in ls.iter().zip(&sig) {
            let x = (k - k0) / sg;
            g += l * (-0.5 * x * x).exp() / (sg * (2.0 * PI).sqrt());
        }
        gaussian.push(g * lambda / k0);
    }
    Ok(LapWeights {
        lambda,
        k0,
        dk,
        resolvent,
        gaussian,
    })
}

/// L²-normalized continuum coefficients ⟨ψ_n, g⟩.
pub fn continuum_l2_coeffs(s: &SpectralData, g: &[C64]) -> Vec<C64> {
    let r = s.h().sqrt();
    s.continuum_coeffs(g).into_iter().map(|z| z * r).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralPairing {
    pub lambda: f64,
    pub k0: f64,
    /// ⟨ā, δ(B−λ) b⟩ from the extrapolated Lorentzian.
    pub density: C64,
    /// Same quantity from the extrapolated Gaussian smoothing.
    pub density_gaussian: C64,
    /// lim ⟨ā, (B − λ − iε)⁻¹ b⟩.
    pub resolvent_limit: C64,
    /// Principal-value part (F⁺ + F⁻)/2.
    pub principal_value: C64,
    /// |density − density_gaussian| / max(|density|, floor).
    pub disagreement: f64,
}

/// Pairing of two coefficient vectors (L²-normalized, as returned by
/// [`continuum_l2_coeffs`]).
pub fn pairing_from_coeffs(w: &LapWeights, a: &[C64], b: &[C64]) -> SpectralPairing {
    let mut res = C64::new(0.0, 0.0);
    let mut pv = C64::new(0.0, 0.0);
    let mut dens = C64::new(0.0, 0.0);
    let mut gauss = C64::new(0.0, 0.0);
    let mut mass = 0.0;
    for n in 0..a.len() {
        let p = a[n].conj() * b[n];
        res += p * w.resolvent[n];
        pv += p * w.resolvent[n].re;
        dens += p * (w.resolvent[n].im / PI);
        gauss += p * w.gaussian[n];
        mass += p.norm();
    }
    let floor = 1e-9 * mass * w.lambda / w.k0;
    let disagreement = (dens - gauss).norm() / dens.norm().max(gauss.norm()).max(floor).max(f64::MIN_POSITIVE);
    SpectralPairing {
        lambda: w.lambda,
        k0: w.k0,
        density: dens,
        density_gaussian: gauss,
        resolvent_limit: res,
        principal_value: pv,
        disagreement,
    }
}

/// ⟨ḡ, (B − λ − i0)⁻¹ g⟩ and ⟨ḡ, δ(B−λ) g⟩ for g projected onto the
/// continuum. Errors when the two internal density estimates disagree by
/// more than 5 %.
pub fn limiting_absorption(s: &SpectralData, lambda: f64, g: &[C64]) -> Result<SpectralPairing> {
    let w = lap_weights(s, lambda)?;
    let c = continuum_l2_coeffs(s, g);
    let p = pairing_from_coeffs(&w, &c, &c);
    check_agreement(&p)?;
    Ok(p)
}

fn check_agreement(p: &SpectralPairing) -> Result<()> {
    if p.disagreement > DENSITY_AGREEMENT {
        return Err(Error::Resolution(format!(
            "spectral density at λ = {:.6}: Lorentzian {:.6e} vs Gaussian {:.6e} ({:.1}% apart); increase half_width or points",
            p.lambda,
            p.density.re,
            p.density_gaussian.re,
            100.0 * p.disagreement
        )));
    }
    Ok(())
}

/// R⁺g = lim (B − λ − iε)⁻¹ P_c g as a grid function (outgoing on the box
/// scale set by the ε schedule).
pub fn outgoing_resolvent(s: &SpectralData, w: &LapWeights, g: &[C64]) -> Vec<C64> {
    let c = s.continuum_coeffs(g);
    let scaled: Vec<C64> = c.iter().zip(&w.resolvent).map(|(a, b)| a * b).collect();
    s.from_continuum_coeffs(&scaled)
}

// ---------------------------------------------------------------------------
// Distorted plane waves

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WaveSolve {
    Free,
    Born { iterations: usize },
    Direct,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistortedWave {
    pub k: f64,
    /// u(x, k) on the interior nodes; u = e^{ikx}(1 + w).
    pub u: Vec<C64>,
    /// Relative residual of the discretized integral equation.
    pub residual: f64,
    /// Transmission coefficient T(k) for k > 0 (for k < 0 it is T(|k|) read
    /// on the other side).
    pub transmission: C64,
    pub method: WaveSolve,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistortedWaves {
    pub waves: Vec<DistortedWave>,
}

/// Solves u = e^{ikx} + ∫ e^{i|k||x−y|}/(2i|k|) V(y) u(y) dy by Nyström
/// discretization on the support of V. The trapezoid rule is corrected for
/// the kink of the kernel at y = x (adds h²V(x)u(x)/12).
pub fn distorted_wave(s: &SpectralData, k: f64) -> Result<DistortedWave> {
    if k.abs() < 1e-3 {
        return Err(Error::Precondition(format!("momentum {k} too close to 0")));
    }
    let x = s.nodes();
    let v = &s.potential.values;
    let h = s.h();
    let n = x.len();
    let plane: Vec<C64> = x.iter().map(|&xi| C64::new(0.0, k * xi).exp()).collect();
    let vmax = s.potential.max_abs();
    let support: Vec<usize> = (0..n).filter(|&i| v[i].abs() > 1e-13 * vmax).collect();
    if vmax == 0.0 || support.is_empty() {
        return Ok(DistortedWave {
            k,
            u: plane,
            residual: 0.0,
            transmission: C64::new(1.0, 0.0),
            method: WaveSolve::Free,
        });
    }
    let ns = support.len();
    // outgoing kernel for either direction of incidence
    let ka = k.abs();
    let c = 1.0 / C64::new(0.0, 2.0 * ka);
    let green = |d: f64| C64::new(0.0, ka * d.abs()).exp() * c;
    let mut kmat = vec![C64::new(0.0, 0.0); ns * ns];
    for (a, &i) in support.iter().enumerate() {
        for (b, &j) in support.iter().enumerate() {
            kmat[a * ns + b] = green(x[i] - x[j]) * (h * v[j]);
        }
        kmat[a * ns + a] += h * h / 12.0 * v[i];
    }
    let u0: Vec<C64> = support.iter().map(|&i| plane[i]).collect();
    let apply = |u: &[C64]| -> Vec<C64> {
        (0..ns)
            .map(|a| {
                let row = &kmat[a * ns..(a + 1) * ns];
                row.iter().zip(u).map(|(p, q)| p * q).sum::<C64>()
            })
            .collect()
    };

    // Born series first; fall back to a direct solve if it stalls.
    let mut method = WaveSolve::Direct;
    let mut us = u0.clone();
    let mut last = f64::INFINITY;
    let mut born_ok = false;
    for it in 1..=200 {
        let ku = apply(&us);
        let next: Vec<C64> = u0.iter().zip(&ku).map(|(a, b)| a + b).collect();
        let diff = linalg::norm_c(&next.iter().zip(&us).map(|(a, b)| a - b).collect::<Vec<_>>());
        us = next;
        let scale = linalg::norm_c(&us);
        if !scale.is_finite() || (it > 3 && diff > 0.9 * last) {
            break;
        }
        last = diff;
        if diff < 1e-13 * scale {
            born_ok = true;
            method = WaveSolve::Born { iterations: it };
            break;
        }
    }
    if !born_ok {
        let mut a = kmat.iter().map(|z| -z).collect::<Vec<_>>();
        for i in 0..ns {
            a[i * ns + i] += 1.0;
        }
        us = linalg::solve_complex(&a, ns, &u0)
            .ok_or_else(|| Error::Resolution(format!("Lippmann–Schwinger solve failed at k = {k}")))?;
    }
    let ku = apply(&us);
    let res: Vec<C64> = (0..ns).map(|a| us[a] - ku[a] - u0[a]).collect();
    let residual = linalg::norm_c(&res) / linalg::norm_c(&u0);
    if residual > 1e-6 {
        return Err(Error::Resolution(format!(
            "Lippmann–Schwinger residual {residual:.2e} at k = {k}"
        )));
    }

    // Extend to every node through the kernel.
    let src: Vec<(f64, C64)> = support.iter().zip(&us).map(|(&j, &uj)| (x[j], uj * (h * v[j]))).collect();
    let mut u = plane.clone();
    for i in 0..n {
        let mut acc = C64::new(0.0, 0.0);
        for &(xj, w) in &src {
            acc += green(x[i] - xj) * w;
        }
        u[i] += acc;
    }
    for (a, &i) in support.iter().enumerate() {
        u[i] += h * h / 12.0 * v[i] * us[a];
    }
    let t_int: C64 = src.iter().map(|&(xj, w)| C64::new(0.0, -k * xj).exp() * w).sum();
    let transmission = 1.0 + t_int * c;
    Ok(DistortedWave {
        k,
        u,
        residual,
        transmission,
        method,
    })
}

pub fn build_distorted_waves(s: &SpectralData, ks: &[f64]) -> Result<DistortedWaves> {
    let waves = ks.iter().map(|&k| distorted_wave(s, k)).collect::<Result<Vec<_>>>()?;
    Ok(DistortedWaves { waves })
}

impl DistortedWave {
    /// ĝ(k) = (2π)^{−1/2} ∫ conj(u(x,k)) g(x) dx.
    pub fn transform(&self, s: &SpectralData, g: &[C64]) -> C64 {
        let acc: C64 = self.u.iter().zip(g).map(|(u, x)| u.conj() * x).sum();
        acc * s.h() / (2.0 * PI).sqrt()
    }
}

impl DistortedWaves {
    pub fn transform(&self, s: &SpectralData, g: &[C64]) -> Vec<C64> {
        self.waves.iter().map(|w| w.transform(s, g)).collect()
    }
}

/// ⟨ā, δ(B−λ) b⟩ through the distorted Fourier transform at ±k₀, for a
/// batch of functions: returns the matrix over all pairs.
pub fn distorted_density_matrix(s: &SpectralData, lambda: f64, fs: &[&[C64]]) -> Result<Vec<Vec<C64>>> {
    let m = s.mass;
    if !(lambda > m) {
        return Err(Error::Precondition(format!("λ = {lambda} is not above m = {m}")));
    }
    let k0 = (lambda * lambda - m * m).sqrt();
    let dw = build_distorted_waves(s, &[k0, -k0])?;
    let hats: Vec<Vec<C64>> = fs.iter().map(|g| dw.transform(s, g)).collect();
    let jac = lambda / k0;
    Ok(hats
        .iter()
        .map(|a| {
            hats.iter()
                .map(|b| jac * a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<C64>())
                .collect()
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Fermi golden rule matrices

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GammaBlock {
    pub lambda: f64,
    pub members: Vec<Exponent>,
    /// Γ_λ[μ][μ′] = ⟨conj Φ_{μ0}, πδ(B−λ) Φ_{μ′0}⟩, limiting absorption.
    pub limiting_absorption: Vec<Vec<C64>>,
    /// Same matrix from distorted plane waves.
    pub distorted_waves: Vec<Vec<C64>>,
    pub hermitian_defect: f64,
    pub min_eigenvalue: f64,
    pub trace: f64,
    /// Largest entrywise relative disagreement between the two methods.
    pub disagreement: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FgrData {
    pub blocks: Vec<GammaBlock>,
    /// γ_μ for μ ∈ M̂ (limiting-absorption value).
    pub gamma: Vec<(Exponent, f64)>,
    /// γ_μ from distorted waves.
    pub gamma_distorted: Vec<(Exponent, f64)>,
    pub threshold: f64,
    /// Every Γ_λ invertible (positive definite above threshold).
    pub h7_prime: bool,
    /// Equivalent to the matrix condition.
    pub h7: bool,
    /// Every γ_μ above threshold.
    pub h7_double_prime: bool,
    pub max_disagreement: f64,
    /// Methods disagree by more than 2 %.
    pub flagged: bool,
}

/// Smallest eigenvalue of a Hermitian matrix via its real 2n×2n embedding.
pub fn hermitian_min_eigenvalue(a: &[Vec<C64>]) -> f64 {
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    let herm = |i: usize, j: usize| 0.5 * (a[i][j] + a[j][i].conj());
    let m = faer::Mat::<f64>::from_fn(2 * n, 2 * n, |r, c| {
        let (i, j) = (r % n, c % n);
        let z = herm(i, j);
        match (r < n, c < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    let ev = m.self_adjoint_eigenvalues(faer::Side::Lower).expect("small symmetric eigenproblem");
    ev.into_iter().fold(f64::INFINITY, f64::min)
}

fn hermitian_defect(a: &[Vec<C64>]) -> f64 {
    let mut d = 0.0f64;
    for i in 0..a.len() {
        for j in 0..a.len() {
            d = d.max((a[i][j] - a[j][i].conj()).norm());
        }
    }
    d
}

/// Γ entries through the polarization identity on the diagonal density q.
fn polarized_block(w: &LapWeights, coeffs: &[Vec<C64>]) -> Vec<Vec<C64>> {
    let q = |x: &[C64]| -> f64 {
        x.iter().zip(&w.resolvent).map(|(c, r)| c.norm_sqr() * r.im).sum::<f64>()
    };
    let n = coeffs.len();
    let mut out = vec![vec![C64::new(0.0, 0.0); n]; n];
    let i = C64::new(0.0, 1.0);
    for a in 0..n {
        for b in 0..n {
            if a == b {
                out[a][a] = C64::new(q(&coeffs[a]), 0.0);
                continue;
            }
            let comb = |s: C64| -> Vec<C64> { coeffs[a].iter().zip(&coeffs[b]).map(|(x, y)| x + s * y).collect() };
            let v = 0.25
                * (q(&comb(C64::new(1.0, 0.0))) - q(&comb(C64::new(-1.0, 0.0))) - i * q(&comb(i))
                    + i * q(&comb(-i)));
            out[a][b] = v;
        }
    }
    // q(x) above is already π·density (Im w = π·δ-weight).
    out
}

/// Γ_λ for every λ ∈ Λ̂ by both methods, with positivity and (H7) verdicts.
pub fn fgr_matrix(s: &SpectralData, nf: &NormalFormResult, sets: &MultiIndexSet) -> Result<FgrData> {
    let mut blocks = Vec::new();
    let mut total_norm = 0.0;
    for (lambda, members) in sets.lambda_hat.iter().zip(&sets.fibers_hat) {
        let phis: Vec<&Vec<C64>> = members
            .iter()
            .map(|mu| {
                nf.couplings.get(mu).ok_or_else(|| {
                    Error::Precondition(format!("no coupling for μ = {mu:?}; normal form order too low"))
                })
            })
            .collect::<Result<_>>()?;
        for p in &phis {
            total_norm += s.l2_norm_c(p).powi(2);
        }
        let w = lap_weights(s, *lambda)?;
        let coeffs: Vec<Vec<C64>> = phis.iter().map(|p| continuum_l2_coeffs(s, p)).collect();
        for c in &coeffs {
            check_agreement(&pairing_from_coeffs(&w, c, c))?;
        }
        let gl = polarized_block(&w, &coeffs);
        let slices: Vec<&[C64]> = phis.iter().map(|p| p.as_slice()).collect();
        let gd: Vec<Vec<C64>> = distorted_density_matrix(s, *lambda, &slices)?
            .into_iter()
            .map(|row| row.into_iter().map(|z| z * PI).collect())
            .collect();
        let trace: f64 = (0..gl.len()).map(|i| gl[i][i].re).sum();
        let scale = gl
            .iter()
            .chain(&gd)
            .flatten()
            .fold(0.0f64, |m, z| m.max(z.norm()));
        let mut disagreement = 0.0f64;
        for i in 0..gl.len() {
            for j in 0..gl.len() {
                let d = (gl[i][j] - gd[i][j]).norm();
                disagreement = disagreement.max(d / scale.max(1e-300));
            }
        }
        if scale == 0.0 {
            disagreement = 0.0;
        }
        blocks.push(GammaBlock {
            lambda: *lambda,
            members: members.clone(),
            hermitian_defect: hermitian_defect(&gl),
            min_eigenvalue: hermitian_min_eigenvalue(&gl),
            trace,
            disagreement,
            limiting_absorption: gl,
            distorted_waves: gd,
        });
    }
    let threshold = 1e-14 + 1e-8 * total_norm;
    let h7_prime = blocks.iter().all(|b| b.min_eigenvalue > threshold);
    let mut gamma = Vec::new();
    let mut gamma_distorted = Vec::new();
    for b in &blocks {
        for (i, mu) in b.members.iter().enumerate() {
            gamma.push((mu.clone(), b.limiting_absorption[i][i].re));
            gamma_distorted.push((mu.clone(), b.distorted_waves[i][i].re));
        }
    }
    let h7_double_prime = gamma.iter().all(|(_, g)| *g > threshold);
    let max_disagreement = blocks.iter().map(|b| b.disagreement).fold(0.0, f64::max);
    Ok(FgrData {
        blocks,
        gamma,
        gamma_distorted,
        threshold,
        h7: h7_prime,
        h7_prime,
        h7_double_prime,
        max_disagreement,
        flagged: max_disagreement > GAMMA_AGREEMENT,
    })
}

// ---------------------------------------------------------------------------
// Genericity scan

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanPoint {
    pub beta: f64,
    pub gamma: f64,
    pub fit_residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenericityScan {
    pub mu: Exponent,
    /// Order j = |μ|+1 of the scanned derivative β^{(j)}(0).
    pub order: u32,
    pub points: Vec<ScanPoint>,
    /// γ ≈ a β² + b β + c.
    pub quadratic: [f64; 3],
    pub max_residual: f64,
    /// Real roots of the fitted quadratic (at most two).
    pub roots: Vec<f64>,
    /// Leading coefficient predicted from the direct term alone:
    /// |a^μ/(μ!√2)|²·⟨conj Ψ, πδ(B−λ) Ψ⟩ with Ψ = B^{−1/2}P_cφ^μ.
    pub predicted_leading: f64,
    /// Residual above 1e-4·max|γ|: higher-order β dependence leaks in.
    pub contaminated: bool,
}

/// Least-squares quadratic fit.
pub fn fit_quadratic(x: &[f64], y: &[f64]) -> [f64; 3] {
    let mut ata = [[0.0f64; 3]; 3];
    let mut aty = [0.0f64; 3];
    let xs = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    for (&xi, &yi) in x.iter().zip(y) {
        let t = xi / xs;
        let row = [t * t, t, 1.0];
        for i in 0..3 {
            aty[i] += row[i] * yi;
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    // Gaussian elimination with partial pivoting on the 3×3 normal equations.
    let mut a = ata;
    let mut b = aty;
    for col in 0..3 {
        let p = (col..3).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()).unwrap();
        a.swap(col, p);
        b.swap(col, p);
        for r in col + 1..3 {
            let f = a[r][col] / a[col][col];
            for c in col..3 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut sol = [0.0f64; 3];
    for r in (0..3).rev() {
        let mut acc = b[r];
        for c in r + 1..3 {
            acc -= a[r][c] * sol[c];
        }
        sol[r] = acc / a[r][r];
    }
    [sol[0] / (xs * xs), sol[1] / xs, sol[2]]
}

/// Real roots of q[0]x² + q[1]x + q[2]. `xs` is the scale of x and `ymax`
/// the scale of the values; a discriminant within 1e-9·ymax² of zero is a
/// touching (double) root.
fn quadratic_roots(q: [f64; 3], xs: f64, ymax: f64) -> Vec<f64> {
    let (a, b, c) = (q[0] * xs * xs, q[1] * xs, q[2]);
    let tiny = 1e-12 * ymax;
    if a.abs() <= tiny {
        if b.abs() <= tiny {
            return vec![];
        }
        return vec![-c / b * xs];
    }
    let disc = b * b - 4.0 * a * c;
    let tol = 1e-9 * ymax * ymax;
    if disc < -tol {
        vec![]
    } else if disc <= tol {
        vec![-b / (2.0 * a) * xs]
    } else {
        let sq = disc.sqrt();
        let mut r = vec![(-b - sq) / (2.0 * a) * xs, (-b + sq) / (2.0 * a) * xs];
        r.sort_by(|x, y| x.partial_cmp(y).unwrap());
        r
    }
}

/// γ_μ as a function of β^{(|μ|+1)}(0), all other Taylor data fixed.
pub fn genericity_scan(
    s: &SpectralData,
    sets: &MultiIndexSet,
    base: &Nonlinearity,
    mu: &[u32],
    values: &[f64],
    d_jet: u32,
) -> Result<GenericityScan> {
    let order = degree(mu) + 1;
    let lambda = dot_omega(mu, &sets.omega);
    let w = lap_weights(s, lambda)?;
    let mut gammas = Vec::with_capacity(values.len());
    for &b in values {
        let mut nl = base.clone();
        nl.set_derivative(order, b);
        let jet = expand_h_p(s, &nl, d_jet)?.jet;
        let gamma = if jet.is_empty() {
            0.0
        } else {
            let lowest = jet.lowest_degree().unwrap_or(4).max(3);
            let r = (order + 1).saturating_sub(lowest).max(1);
            let nf = birkhoff_normalize(&jet, s, sets, r)?;
            let phi = nf
                .couplings
                .get(mu)
                .ok_or_else(|| Error::Precondition(format!("μ = {mu:?} is not in M")))?;
            let c = continuum_l2_coeffs(s, phi);
            PI * pairing_from_coeffs(&w, &c, &c).density.re
        };
        gammas.push(gamma);
    }
    let q = fit_quadratic(values, &gammas);
    let gmax = gammas.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let points: Vec<ScanPoint> = values
        .iter()
        .zip(&gammas)
        .map(|(&b, &g)| ScanPoint {
            beta: b,
            gamma: g,
            fit_residual: g - (q[0] * b * b + q[1] * b + q[2]),
        })
        .collect();
    let max_residual = points.iter().fold(0.0f64, |m, p| m.max(p.fit_residual.abs()));
    let bscale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let roots = quadratic_roots(q, bscale, gmax);

    // Direct term: β_j a^μ/(μ!√2) B^{−1/2}P_c φ^μ.
    let omega = &sets.omega;
    let mut pw = vec![1.0; s.dim()];
    let mut pref = 1.0 / std::f64::consts::SQRT_2;
    for (j, &e) in mu.iter().enumerate() {
        let phi = s.bound_state(j);
        for (x, f) in pw.iter_mut().zip(&phi) {
            *x *= f.powi(e as i32);
        }
        let a = 1.0 / (2.0 * omega[j]).sqrt();
        pref *= a.powi(e as i32) / (1..=e).map(|k| k as f64).product::<f64>();
    }
    let psi = SpectralData::to_complex(&s.apply_b_power_real(-0.5, &pw));
    let c = continuum_l2_coeffs(s, &psi);
    let predicted_leading = pref * pref * PI * pairing_from_coeffs(&w, &c, &c).density.re;
    Ok(GenericityScan {
        mu: mu.to_vec(),
        order,
        points,
        quadratic: q,
        max_residual,
        roots,
        predicted_leading,
        contaminated: max_residual > 1e-4 * gmax,
    })
}

// ---------------------------------------------------------------------------
// Reduced-model coefficients

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFiber {
    pub lambda: f64,
    pub members: Vec<Exponent>,
    /// c[ν][μ] = c_{0νμ0} = lim ⟨conj Φ_{ν0}, (B − λ − i0)⁻¹ Φ_{μ0}⟩.
    pub c: Vec<Vec<C64>>,
    /// Γ_λ on the full fiber, π·density (Hermitian).
    pub gamma: Vec<Vec<C64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelCoefficients {
    pub omega: Vec<f64>,
    pub fibers: Vec<ModelFiber>,
    /// Y_μ = R⁺_{ω·μ} Φ_{μ0}; the radiation variable g = f + Σ_μ ξ^μ Y_μ
    /// removes the forced response. Only for μ ∈ M̂ and only on request.
    #[serde(skip)]
    pub y: BTreeMap<Exponent, Vec<C64>>,
    /// Largest relative gap between Im c_{0μμ0} and π × Gaussian density.
    pub plemelj_gap: f64,
}

impl ModelCoefficients {
    pub fn diagonal(&self, mu: &[u32]) -> Option<C64> {
        for f in &self.fibers {
            if let Some(i) = f.members.iter().position(|m| m == mu) {
                return Some(f.c[i][i]);
            }
        }
        None
    }
}

pub fn model_coefficients(
    s: &SpectralData,
    nf: &NormalFormResult,
    sets: &MultiIndexSet,
    with_y: bool,
) -> Result<ModelCoefficients> {
    let mut fibers = Vec::new();
    let mut plemelj_gap = 0.0f64;
    for (lambda, members) in sets.lambda.iter().zip(&sets.fibers) {
        let members: Vec<Exponent> = members.iter().filter(|mu| nf.couplings.contains_key(*mu)).cloned().collect();
        if members.is_empty() {
            continue;
        }
        let w = lap_weights(s, *lambda)?;
        let coeffs: Vec<Vec<C64>> = members.iter().map(|mu| continuum_l2_coeffs(s, &nf.couplings[mu])).collect();
        let n = members.len();
        let mut c = vec![vec![C64::new(0.0, 0.0); n]; n];
        let mut gamma = vec![vec![C64::new(0.0, 0.0); n]; n];
        for a in 0..n {
            for b in 0..n {
                let p = pairing_from_coeffs(&w, &coeffs[a], &coeffs[b]);
                c[a][b] = p.resolvent_limit;
                gamma[a][b] = PI * p.density;
                if a == b {
                    check_agreement(&p)?;
                    plemelj_gap = plemelj_gap.max(p.disagreement);
                }
            }
        }
        fibers.push(ModelFiber {
            lambda: *lambda,
            members,
            c,
            gamma,
        });
    }
    let mut y = BTreeMap::new();
    if with_y {
        for mu in &sets.m_hat {
            if let Some(phi) = nf.couplings.get(mu) {
                let w = lap_weights(s, dot_omega(mu, &sets.omega))?;
                y.insert(mu.clone(), outgoing_resolvent(s, &w, phi));
            }
        }
    }
    Ok(ModelCoefficients {
        omega: sets.omega.clone(),
        fibers,
        y,
        plemelj_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lagrange_weights_reproduce_cubic() {
        let x = [1.0, 1.25, 1.5, 1.75];
        let l = lagrange_at_zero(&x);
        let p = |t: f64| 2.0 - t + 0.5 * t * t - 0.25 * t * t * t;
        let v: f64 = l.iter().zip(&x).map(|(w, &t)| w * p(t)).sum();
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_fit_and_roots() {
        let x: Vec<f64> = (-4..=4).map(|i| i as f64 * 0.5).collect();
        let y: Vec<f64> = x.iter().map(|t| 3.0 * (t - 0.5) * (t + 1.0)).collect();
        let q = fit_quadratic(&x, &y);
        assert!((q[0] - 3.0).abs() < 1e-12 && (q[1] - 1.5).abs() < 1e-12 && (q[2] + 1.5).abs() < 1e-12);
        let r = quadratic_roots(q, 2.0, 12.0);
        assert!((r[0] + 1.0).abs() < 1e-12 && (r[1] - 0.5).abs() < 1e-12);
        let r = quadratic_roots([1.0, -2.0, 1.0 + 1e-14], 2.0, 1.0);
        assert_eq!(r.len(), 1);
        assert!(quadratic_roots([1.0, 0.0, 1.0], 1.0, 1.0).is_empty());
    }

    #[test]
    fn min_eigenvalue_of_hermitian() {
        let a = vec![
            vec![C64::new(2.0, 0.0), C64::new(0.0, 1.0)],
            vec![C64::new(0.0, -1.0), C64::new(2.0, 0.0)],
        ];
        assert!((hermitian_min_eigenvalue(&a) - 1.0).abs() < 1e-12);
    }
}
