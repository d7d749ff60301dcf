//! Time evolution: the full nonlinear Klein–Gordon equation
//! ü = Δu − Vu − m²u − β′(u) on the box, and the reduced discrete-mode
//! system obtained from the normal form.
//!
//! The PDE state is kept in the eigenbasis of −Δ+V, where the linear flow is
//! an exact rotation per mode. A Strang step costs one synthesis of u, one
//! projection of the kick (and one extra synthesis of v on sponge steps).

use std::f64::consts::SQRT_2;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jets::{inverse_change_of_variables, monomial_value, ComplexState, Kind, Nonlinearity};
use crate::linalg;
use crate::normalform::NormalFormResult;
use crate::resonance::{dot_omega, Exponent, TOL_RES};
use crate::scattering::{ModelCoefficients, ModelFiber};
use crate::spectral::SpectralData;

/// Fraction of the half-width covered by the absorbing layer.
pub const SPONGE_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sponge {
    /// Peak damping rate at the walls.
    pub strength: f64,
    /// Apply the damping every this many steps (with the accumulated dt).
    pub every: usize,
}

impl Default for Sponge {
    fn default() -> Self {
        Sponge { strength: 2.0, every: 4 }
    }
}

/// Real phase-space point with derived complex coordinates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldState {
    pub t: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Initial data with ξ(0) given and f(0) = 0.
pub fn initial_from_modes(s: &SpectralData, xi: &[C64]) -> FieldState {
    let st = ComplexState {
        xi: xi.to_vec(),
        f: vec![C64::new(0.0, 0.0); s.dim()],
    };
    let (u, v) = inverse_change_of_variables(s, &st);
    FieldState { t: 0.0, u, v }
}

pub struct PdeSolver<'a> {
    s: &'a SpectralData,
    nl: Nonlinearity,
    freq: Vec<f64>,
    /// ℓ² eigen-coordinates of u and v.
    a: Vec<f64>,
    b: Vec<f64>,
    pub t: f64,
    dt: f64,
    half_cos: Vec<f64>,
    half_sin: Vec<f64>,
    sigma: Option<Vec<f64>>,
    sponge_every: usize,
    steps: usize,
    /// Energy removed by the sponge so far.
    pub absorbed: f64,
    norm0: f64,
}

impl<'a> PdeSolver<'a> {
    pub fn new(s: &'a SpectralData, nl: Nonlinearity, init: &FieldState, dt: f64, sponge: Option<Sponge>) -> Result<Self> {
        let h = s.h();
        if !(dt > 0.0) || dt > 0.5 * h {
            return Err(Error::Precondition(format!("time step {dt} must lie in (0, h/2 = {})", 0.5 * h)));
        }
        let n = s.dim();
        if init.u.len() != n || init.v.len() != n {
            return Err(Error::Precondition("initial data does not match the grid".into()));
        }
        let q = s.eigenvector_matrix();
        let a = linalg::project(q, n, 0..n, &init.u);
        let b = linalg::project(q, n, 0..n, &init.v);
        let freq = s.all_frequencies();
        let half_cos = freq.iter().map(|w| (0.5 * dt * w).cos()).collect();
        let half_sin = freq.iter().map(|w| (0.5 * dt * w).sin()).collect();
        let sigma = sponge.as_ref().map(|sp| {
            let l = s.grid.half_width;
            let inner = (1.0 - SPONGE_FRACTION) * l;
            s.nodes()
                .iter()
                .map(|x| {
                    let r = ((x.abs() - inner) / (SPONGE_FRACTION * l)).clamp(0.0, 1.0);
                    sp.strength * r * r * r * (10.0 - 15.0 * r + 6.0 * r * r)
                })
                .collect()
        });
        let mut solver = PdeSolver {
            s,
            nl,
            freq,
            a,
            b,
            t: init.t,
            dt,
            half_cos,
            half_sin,
            sigma,
            sponge_every: sponge.map(|sp| sp.every.max(1)).unwrap_or(1),
            steps: 0,
            absorbed: 0.0,
            norm0: 0.0,
        };
        solver.norm0 = solver.energy_norm();
        Ok(solver)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn half_linear(&mut self) {
        for k in 0..self.a.len() {
            let (c, sn, w) = (self.half_cos[k], self.half_sin[k], self.freq[k]);
            let (a, b) = (self.a[k], self.b[k]);
            self.a[k] = a * c + b * sn / w;
            self.b[k] = -a * w * sn + b * c;
        }
    }

    /// (Σ Ω²a² + b²)^{1/2}·√h, the H¹×L² size of the state.
    pub fn energy_norm(&self) -> f64 {
        let s: f64 = (0..self.a.len())
            .map(|k| self.freq[k] * self.freq[k] * self.a[k] * self.a[k] + self.b[k] * self.b[k])
            .sum();
        (s * self.s.h()).sqrt()
    }

    pub fn step(&mut self) -> Result<()> {
        let n = self.a.len();
        let q = self.s.eigenvector_matrix();
        self.half_linear();
        let nonlinear = !self.nl.is_zero();
        self.steps += 1;
        let sponge_now = self.sigma.is_some() && self.steps % self.sponge_every == 0;
        if nonlinear || sponge_now {
            let mut kick = vec![0.0; n];
            if nonlinear {
                let u = linalg::synthesize(q, n, 0..n, &self.a);
                for (k, x) in kick.iter_mut().zip(&u) {
                    *k = -self.dt * self.nl.beta_prime(*x);
                }
            }
            if sponge_now {
                let sigma = self.sigma.as_ref().unwrap();
                let v = linalg::synthesize(q, n, 0..n, &self.b);
                let span = self.dt * self.sponge_every as f64;
                let mut removed = 0.0;
                for i in 0..n {
                    let damp = (-sigma[i] * span).exp();
                    let vi = v[i] + kick[i];
                    kick[i] += vi * (damp - 1.0);
                    removed += 0.5 * vi * vi * (1.0 - damp * damp);
                }
                self.absorbed += removed * self.s.h();
            }
            let db = linalg::project(q, n, 0..n, &kick);
            linalg::axpy(1.0, &db, &mut self.b);
        }
        self.half_linear();
        self.t += self.dt;
        let norm = self.energy_norm();
        if !norm.is_finite() || (self.norm0 > 0.0 && norm > 10.0 * self.norm0) {
            return Err(Error::Instability(format!(
                "state norm {norm:.3e} exceeds 10× its initial value {:.3e} at t = {:.3}",
                self.norm0, self.t
            )));
        }
        Ok(())
    }

    pub fn state(&self) -> FieldState {
        let n = self.a.len();
        let q = self.s.eigenvector_matrix();
        FieldState {
            t: self.t,
            u: linalg::synthesize(q, n, 0..n, &self.a),
            v: linalg::synthesize(q, n, 0..n, &self.b),
        }
    }

    /// H(u, v) = ½∫(v² + |∇u|² + Vu² + m²u²) + ∫β(u).
    pub fn energy(&self) -> f64 {
        let h = self.s.h();
        let lin: f64 = (0..self.a.len())
            .map(|k| self.freq[k] * self.freq[k] * self.a[k] * self.a[k] + self.b[k] * self.b[k])
            .sum::<f64>()
            * 0.5
            * h;
        if self.nl.is_zero() {
            return lin;
        }
        let n = self.a.len();
        let u = linalg::synthesize(self.s.eigenvector_matrix(), n, 0..n, &self.a);
        lin + h * u.iter().map(|&x| self.nl.beta(x)).sum::<f64>()
    }

    /// ξ_j from the bound eigen-coordinates (no synthesis needed).
    pub fn xi(&self) -> Vec<C64> {
        let r = self.s.h().sqrt();
        (0..self.s.n_bound)
            .map(|j| {
                let w = self.freq[j];
                C64::new(r * self.a[j] * w.sqrt(), r * self.b[j] / w.sqrt()) / SQRT_2
            })
            .collect()
    }

    /// ℓ² continuum coordinates of f = (B^{1/2}P_c u + iB^{−1/2}P_c v)/√2.
    pub fn f_coeffs(&self) -> Vec<C64> {
        (self.s.n_bound..self.a.len())
            .map(|k| {
                let w = self.freq[k];
                C64::new(self.a[k] * w.sqrt(), self.b[k] / w.sqrt()) / SQRT_2
            })
            .collect()
    }

    pub fn f_norm(&self) -> f64 {
        (self.s.h() * self.f_coeffs().iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// Reverse the velocity (time-reversal symmetry of the equation).
    pub fn reverse(&mut self) {
        self.b.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Complex coordinates of a field state.
pub fn extract_modes(s: &SpectralData, st: &FieldState) -> ComplexState {
    crate::jets::change_of_variables(s, &st.u, &st.v)
}

/// g = f + Σ_μ ξ^μ Y_μ, the radiation field with the forced response removed.
pub fn radiation_field(st: &ComplexState, coeffs: &ModelCoefficients) -> Vec<C64> {
    let mut g = st.f.clone();
    for (mu, y) in &coeffs.y {
        let w = monomial_value(&st.xi, mu, &vec![0; mu.len()]);
        for (gi, yi) in g.iter_mut().zip(y) {
            *gi += w * yi;
        }
    }
    g
}

// ---------------------------------------------------------------------------
// Reduced system

/// η̇_k = −iω_kη_k − i∂Z₀/∂η̄_k + i Σ ν_k c_{0νμ0} η^μ η̄^{ν−e_k}.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReducedModel {
    pub omega: Vec<f64>,
    /// Scalar monomials c η^μ η̄^ν of Z₀.
    pub z0: Vec<(Exponent, Exponent, C64)>,
    /// Resonant tensor entries (μ, ν, c_{0νμ0}), ω·μ = ω·ν.
    pub resonant: Vec<(Exponent, Exponent, C64)>,
    /// Fibers used for the dissipation identity.
    pub fibers: Vec<ModelFiber>,
    /// Every term is resonant, so the nonlinear part commutes with the linear
    /// rotation and the flow can be integrated in the rotating frame.
    #[serde(default)]
    pub rotating: bool,
}

impl ReducedModel {
    pub fn from_normal_form(nf: &NormalFormResult, coeffs: &ModelCoefficients) -> Self {
        let z0 = nf
            .z0()
            .terms
            .iter()
            .filter(|(k, _)| k.kind == Kind::Scalar)
            .filter_map(|(k, c)| match c {
                crate::jets::Coeff::Scalar(v) => Some((k.mu.clone(), k.nu.clone(), *v)),
                _ => None,
            })
            .collect();
        Self::from_parts(nf.omega.clone(), z0, coeffs.fibers.clone())
    }

    pub fn from_parts(omega: Vec<f64>, z0: Vec<(Exponent, Exponent, C64)>, fibers: Vec<ModelFiber>) -> Self {
        let mut resonant = Vec::new();
        for f in &fibers {
            for (i, nu) in f.members.iter().enumerate() {
                for (j, mu) in f.members.iter().enumerate() {
                    let gap = dot_omega(mu, &omega) - dot_omega(nu, &omega);
                    if gap.abs() < TOL_RES * (1.0 + f.lambda) {
                        resonant.push((mu.clone(), nu.clone(), f.c[i][j]));
                    }
                }
            }
        }
        let rotating = z0
            .iter()
            .all(|(mu, nu, _)| (dot_omega(mu, &omega) - dot_omega(nu, &omega)).abs() < TOL_RES * (1.0 + dot_omega(mu, &omega)));
        ReducedModel {
            omega,
            z0,
            resonant,
            fibers,
            rotating,
        }
    }

    /// A single-mode model with Z₀ = 0 and one resonant entry c at μ = p.
    pub fn single_mode(omega: f64, p: u32, c: C64) -> Self {
        let fiber = ModelFiber {
            lambda: omega * p as f64,
            members: vec![vec![p]],
            c: vec![vec![c]],
            gamma: vec![vec![C64::new(c.im, 0.0)]],
        };
        Self::from_parts(vec![omega], vec![], vec![fiber])
    }

    pub fn n(&self) -> usize {
        self.omega.len()
    }

    pub fn rhs(&self, eta: &[C64]) -> Vec<C64> {
        let i = C64::new(0.0, 1.0);
        let mut out = self.nonlinear_rhs(eta);
        for ((o, e), w) in out.iter_mut().zip(eta).zip(&self.omega) {
            *o -= i * w * e;
        }
        out
    }

    /// The right-hand side without the linear rotation −iω_kη_k.
    pub fn nonlinear_rhs(&self, eta: &[C64]) -> Vec<C64> {
        let i = C64::new(0.0, 1.0);
        let mut out = vec![C64::new(0.0, 0.0); eta.len()];
        let mut add = |mu: &[u32], nu: &[u32], c: C64, sign: C64| {
            for k in 0..eta.len() {
                if nu[k] == 0 {
                    continue;
                }
                let mut nk = nu.to_vec();
                nk[k] -= 1;
                out[k] += sign * c * nu[k] as f64 * monomial_value(eta, mu, &nk);
            }
        };
        for (mu, nu, c) in &self.z0 {
            add(mu, nu, *c, -i);
        }
        for (mu, nu, c) in &self.resonant {
            add(mu, nu, *c, i);
        }
        out
    }

    /// η after time dt (negative dt integrates backward). In the rotating
    /// frame ζ = e^{iωt}η the system is ζ̇ = N(ζ), free of the fast phase.
    pub fn flow(&self, eta: &[C64], dt: f64, opts: OdeOptions) -> Result<Vec<C64>> {
        if !self.rotating {
            return Ok(dopri5(&|y| self.rhs(y), eta, 0.0, dt, opts)?.0);
        }
        let (zeta, _) = dopri5(&|y| self.nonlinear_rhs(y), eta, 0.0, dt, opts)?;
        Ok(zeta
            .iter()
            .zip(&self.omega)
            .map(|(z, w)| z * C64::from_polar(1.0, -w * dt))
            .collect())
    }

    pub fn h0l(&self, eta: &[C64]) -> f64 {
        eta.iter().zip(&self.omega).map(|(e, w)| w * e.norm_sqr()).sum()
    }

    /// −2 Σ_λ λ ⟨F_λ, B_λ F̄_λ⟩ with F̄_λ = Σ_{μ∈M_λ} η^μ Φ_{μ0}.
    pub fn predicted_dissipation(&self, eta: &[C64]) -> f64 {
        let mut total = 0.0;
        for f in &self.fibers {
            let z: Vec<C64> = f.members.iter().map(|mu| monomial_value(eta, mu, &vec![0; mu.len()])).collect();
            let mut q = C64::new(0.0, 0.0);
            for (a, za) in z.iter().enumerate() {
                for (b, zb) in z.iter().enumerate() {
                    q += za.conj() * f.gamma[a][b] * zb;
                }
            }
            total += f.lambda * q.re;
        }
        -2.0 * total
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReducedState {
    pub t: f64,
    pub eta: Vec<C64>,
}

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_min: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-10,
            atol: 1e-10,
            h_min: 1e-12,
        }
    }
}

// Dormand–Prince 5(4) tableau (autonomous systems only, so no nodes c_i).
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Adaptive Dormand–Prince integration of y' = f(y) from t0 to t1
/// (t1 < t0 integrates backward). Returns the final state and the number of
/// accepted steps.
pub fn dopri5(
    f: &impl Fn(&[C64]) -> Vec<C64>,
    y0: &[C64],
    t0: f64,
    t1: f64,
    opts: OdeOptions,
) -> Result<(Vec<C64>, usize)> {
    let n = y0.len();
    let span = t1 - t0;
    if span == 0.0 || n == 0 {
        return Ok((y0.to_vec(), 0));
    }
    let dir = span.signum();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut h = (0.01 * span.abs()).min(0.1);
    let mut accepted = 0;
    let mut k = vec![vec![C64::new(0.0, 0.0); n]; 7];
    k[0] = f(&y);
    while (t1 - t) * dir > 0.0 {
        if h < opts.h_min {
            return Err(Error::Instability(format!("step size underflow at t = {t}")));
        }
        let hs = h.min((t1 - t).abs());
        let hd = hs * dir;
        for st in 1..7 {
            let mut yt = y.clone();
            for (j, kj) in k.iter().enumerate().take(st) {
                let a = A[st][j];
                if a != 0.0 {
                    for i in 0..n {
                        yt[i] += hd * a * kj[i];
                    }
                }
            }
            k[st] = f(&yt);
        }
        let mut y5 = y.clone();
        let mut err = 0.0f64;
        for i in 0..n {
            let mut d5 = C64::new(0.0, 0.0);
            let mut d4 = C64::new(0.0, 0.0);
            for st in 0..7 {
                d5 += B5[st] * k[st][i];
                d4 += B4[st] * k[st][i];
            }
            y5[i] += hd * d5;
            let sc = opts.atol + opts.rtol * y[i].norm().max(y5[i].norm());
            let e = ((d5 - d4) * hd).norm() / sc;
            // f64::max would drop a NaN
            err = if e.is_nan() { f64::INFINITY } else { err.max(e) };
        }
        if !err.is_finite() {
            h *= 0.25;
            continue;
        }
        if err <= 1.0 {
            t = if (t1 - (t + hd)) * dir <= 0.0 { t1 } else { t + hd };
            y = y5;
            k[0] = k[6].clone();
            accepted += 1;
        }
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h = hs * fac;
    }
    Ok((y, accepted))
}

impl ReducedState {
    pub fn step(&self, model: &ReducedModel, dt: f64, opts: OdeOptions) -> Result<ReducedState> {
        let eta = model.flow(&self.eta, dt, opts)?;
        Ok(ReducedState { t: self.t + dt, eta })
    }
}

/// Trajectory sampled at the given (increasing) times.
pub fn integrate_reduced(model: &ReducedModel, eta0: &[C64], times: &[f64], opts: OdeOptions) -> Result<Vec<ReducedState>> {
    let mut out = Vec::with_capacity(times.len());
    let mut st = ReducedState {
        t: 0.0,
        eta: eta0.to_vec(),
    };
    for &t in times {
        if t != st.t {
            st = st.step(model, t - st.t, opts)?;
        }
        out.push(st.clone());
    }
    Ok(out)
}

/// Closed-form single-mode law for d y/dt = −2pΓ y^p.
pub fn single_mode_decay(y0: f64, p: u32, gamma: f64, t: f64) -> f64 {
    let p = p as f64;
    (y0.powf(1.0 - p) + 2.0 * p * (p - 1.0) * gamma * t).powf(-1.0 / (p - 1.0))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DissipationSample {
    pub t: f64,
    pub measured: f64,
    pub predicted: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DissipationReport {
    pub samples: Vec<DissipationSample>,
    pub max_relative_residual: f64,
}

/// dH_{0L}/dt by twice Richardson-extrapolated central differences of the
/// integrated flow.
pub fn measured_dissipation(model: &ReducedModel, eta: &[C64], delta: f64, opts: OdeOptions) -> Result<f64> {
    let diff = |d: f64| -> Result<f64> {
        let p = model.flow(eta, d, opts)?;
        let m = model.flow(eta, -d, opts)?;
        Ok((model.h0l(&p) - model.h0l(&m)) / (2.0 * d))
    };
    let d1 = diff(delta)?;
    let d2 = diff(0.5 * delta)?;
    let d4 = diff(0.25 * delta)?;
    let (r1, r2) = ((4.0 * d2 - d1) / 3.0, (4.0 * d4 - d2) / 3.0);
    Ok((16.0 * r2 - r1) / 15.0)
}

/// Compares both sides of the dissipation identity along a trajectory.
pub fn dissipation_check(model: &ReducedModel, eta0: &[C64], times: &[f64], opts: OdeOptions) -> Result<DissipationReport> {
    let traj = integrate_reduced(model, eta0, times, opts)?;
    let wmax = model.omega.iter().fold(0.0f64, |m, w| m.max(*w)).max(1e-3);
    let mut samples = Vec::new();
    let mut worst = 0.0f64;
    for st in &traj {
        // the difference step resolves both the phase and the nonlinear rate
        let rate = model
            .nonlinear_rhs(&st.eta)
            .iter()
            .zip(&st.eta)
            .filter(|(_, e)| e.norm() > 0.0)
            .map(|(n, e)| n.norm() / e.norm())
            .fold(0.0f64, f64::max)
            .max(model.predicted_dissipation(&st.eta).abs() / model.h0l(&st.eta).max(f64::MIN_POSITIVE));
        let delta = if model.rotating { 0.02 / rate.max(1e-3) } else { (0.1 / wmax).min(0.02 / rate.max(1e-3)) };
        let predicted = model.predicted_dissipation(&st.eta);
        let measured = measured_dissipation(model, &st.eta, delta, opts)?;
        let scale = predicted.abs().max(measured.abs());
        if scale > 0.0 {
            worst = worst.max((measured - predicted).abs() / scale);
        }
        samples.push(DissipationSample {
            t: st.t,
            measured,
            predicted,
        });
    }
    Ok(DissipationReport {
        samples,
        max_relative_residual: worst,
    })
}

// ---------------------------------------------------------------------------
// PDE runs and the comparison

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagRow {
    pub t: f64,
    pub energy: f64,
    pub absorbed: f64,
    /// Σ ω_j |ξ_j|².
    pub h0l: f64,
    pub xi_sq: Vec<f64>,
    pub f_norm: f64,
    /// −2Σ_λ λ⟨F_λ, B_λF̄_λ⟩ evaluated at ξ, when model data is present.
    pub predicted: Option<f64>,
    /// Finite-difference dH_{0L}/dt minus the prediction.
    pub residual: Option<f64>,
    /// Running ∫|ξ^μ|² dt for each tracked μ.
    pub accum: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub tracked: Vec<Exponent>,
    pub rows: Vec<DiagRow>,
}

impl RunDiagnostics {
    /// ‖ξ^μ‖_{L²[0,T]} at the last sample.
    pub fn l2_in_time(&self) -> Vec<f64> {
        self.rows.last().map(|r| r.accum.iter().map(|a| a.sqrt()).collect()).unwrap_or_default()
    }

    pub fn max_energy_drift(&self) -> f64 {
        let e0 = match self.rows.first() {
            Some(r) => r.energy,
            None => return 0.0,
        };
        let scale = e0.abs().max(f64::MIN_POSITIVE);
        self.rows
            .iter()
            .map(|r| (r.energy + r.absorbed - e0).abs() / scale)
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PdeRunOptions {
    pub t_final: f64,
    pub dt: f64,
    pub sample_every: usize,
    pub sponge: Option<Sponge>,
}

/// Runs the PDE and records diagnostics every `sample_every` steps.
pub fn run_pde(
    s: &SpectralData,
    nl: &Nonlinearity,
    init: &FieldState,
    opts: &PdeRunOptions,
    tracked: &[Exponent],
    model: Option<&ReducedModel>,
) -> Result<RunDiagnostics> {
    let mut solver = PdeSolver::new(s, nl.clone(), init, opts.dt, opts.sponge.clone())?;
    let steps = (opts.t_final / opts.dt).round() as usize;
    let omega = s.omegas();
    let every = opts.sample_every.max(1);
    let mut accum = vec![0.0; tracked.len()];
    let weight = |xi: &[C64]| -> Vec<f64> {
        tracked
            .iter()
            .map(|mu| monomial_value(xi, mu, &vec![0; mu.len()]).norm_sqr())
            .collect()
    };
    let mut prev = weight(&solver.xi());
    let mut rows: Vec<DiagRow> = Vec::new();
    let record = |solver: &PdeSolver, accum: &[f64], rows: &mut Vec<DiagRow>| {
        let xi = solver.xi();
        let h0l: f64 = xi.iter().zip(&omega).map(|(x, w)| w * x.norm_sqr()).sum();
        let predicted = model.map(|m| m.predicted_dissipation(&xi));
        let residual = match (rows.last(), predicted) {
            (Some(last), Some(p)) => Some((h0l - last.h0l) / (solver.t - last.t) - p),
            _ => None,
        };
        rows.push(DiagRow {
            t: solver.t,
            energy: solver.energy(),
            absorbed: solver.absorbed,
            h0l,
            xi_sq: xi.iter().map(|x| x.norm_sqr()).collect(),
            f_norm: solver.f_norm(),
            predicted,
            residual,
            accum: accum.to_vec(),
        });
    };
    record(&solver, &accum, &mut rows);
    for step in 1..=steps {
        solver.step()?;
        let cur = weight(&solver.xi());
        for (a, (p, c)) in accum.iter_mut().zip(prev.iter().zip(&cur)) {
            *a += 0.5 * opts.dt * (p + c);
        }
        prev = cur;
        if step % every == 0 || step == steps {
            record(&solver, &accum, &mut rows);
        }
    }
    Ok(RunDiagnostics {
        tracked: tracked.to_vec(),
        rows,
    })
}

/// Evolves forward for `steps`, flips v, evolves the same number of steps
/// and flips back. Returns the relative L² mismatch of (u, v) with the start.
pub fn time_reversal_defect(s: &SpectralData, nl: &Nonlinearity, init: &FieldState, dt: f64, steps: usize) -> Result<f64> {
    let mut solver = PdeSolver::new(s, nl.clone(), init, dt, None)?;
    for _ in 0..steps {
        solver.step()?;
    }
    solver.reverse();
    for _ in 0..steps {
        solver.step()?;
    }
    solver.reverse();
    let end = solver.state();
    let du: Vec<f64> = end.u.iter().zip(&init.u).map(|(a, b)| a - b).collect();
    let dv: Vec<f64> = end.v.iter().zip(&init.v).map(|(a, b)| a - b).collect();
    let scale = (linalg::norm(&init.u).powi(2) + linalg::norm(&init.v).powi(2)).sqrt();
    Ok((linalg::norm(&du).powi(2) + linalg::norm(&dv).powi(2)).sqrt() / scale.max(f64::MIN_POSITIVE))
}

/// Distance of f(t) from the free wave e^{−iBt}f_∞ on the inner half of the
/// box, with f_∞ = e^{iBT}f(T) fitted at the last time T.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScatteringProbe {
    pub times: Vec<f64>,
    pub distance: Vec<f64>,
    /// The last half of the samples decrease monotonically.
    pub eventually_decreasing: bool,
}

pub fn scattering_probe(
    s: &SpectralData,
    nl: &Nonlinearity,
    init: &FieldState,
    dt: f64,
    t_final: f64,
    samples: usize,
) -> Result<ScatteringProbe> {
    let mut solver = PdeSolver::new(s, nl.clone(), init, dt, None)?;
    let steps = (t_final / dt).round() as usize;
    let every = (steps / samples.max(1)).max(1);
    let mut snaps: Vec<(f64, Vec<C64>)> = vec![(solver.t, solver.f_coeffs())];
    for step in 1..=steps {
        solver.step()?;
        if step % every == 0 {
            snaps.push((solver.t, solver.f_coeffs()));
        }
    }
    let b = s.b_values();
    let (t_end, f_end) = snaps.last().cloned().unwrap();
    let f_inf: Vec<C64> = f_end
        .iter()
        .zip(&b)
        .map(|(c, w)| c * C64::new(0.0, w * t_end).exp())
        .collect();
    let nodes = s.nodes();
    let l = s.grid.half_width;
    let mut times = Vec::new();
    let mut distance = Vec::new();
    for (t, f) in &snaps {
        let diff: Vec<C64> = f
            .iter()
            .zip(&f_inf)
            .zip(&b)
            .map(|((a, fi), w)| a - fi * C64::new(0.0, -w * t).exp())
            .collect();
        let g = s.from_continuum_coeffs(&diff);
        let d: f64 = g
            .iter()
            .zip(&nodes)
            .filter(|(_, x)| x.abs() <= 0.5 * l)
            .map(|(z, _)| z.norm_sqr())
            .sum::<f64>();
        times.push(*t);
        distance.push(d.sqrt());
    }
    let half = distance.len() / 2;
    let eventually_decreasing = distance[half..].windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
    Ok(ScatteringProbe {
        times,
        distance,
        eventually_decreasing,
    })
}

/// Window maxima of a sampled series: (window centre, max).
pub fn envelope(t: &[f64], y: &[f64], window: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < t.len() {
        let start = t[i];
        let mut j = i;
        let mut m = f64::NEG_INFINITY;
        while j < t.len() && t[j] < start + window {
            m = m.max(y[j]);
            j += 1;
        }
        if j == t.len() && t[j - 1] - start < 0.5 * window && !out.is_empty() {
            break;
        }
        out.push((0.5 * (start + t[j - 1]), m));
        i = j;
    }
    out
}

/// Least-squares slope of log y against log t.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(t, y)| *t > 0.0 && *y > 0.0)
        .map(|(t, y)| (t.ln(), y.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Comparison {
    pub t0: f64,
    pub t_final: f64,
    /// Envelope of the PDE's Σω|ξ|² is non-increasing after t0.
    pub pde_monotone: bool,
    /// Fitted exponent of the PDE |ξ₁|² envelope over [max(t0, T/10), T].
    pub pde_exponent: Option<f64>,
    /// Same fit for the reduced model.
    pub reduced_exponent: Option<f64>,
    /// Asymptotic law −1/(p−1) for the smallest p in M̂.
    pub law_exponent: Option<f64>,
    /// Energy moved out of the modes after t0, PDE and reduced.
    pub pde_transfer: f64,
    pub reduced_transfer: f64,
    /// PDE/reduced transfer at the divergence time (or at the end).
    pub transfer_ratio: Option<f64>,
    /// First time after t0 at which the H_{0L} envelopes differ by >10 %.
    pub divergence_time: Option<f64>,
    pub pde_energy_drift: f64,
    /// (t, PDE H_{0L}, reduced H_{0L}); written as CSV, not into reports.
    #[serde(skip)]
    pub series: Vec<(f64, f64, f64)>,
}

/// Runs PDE and reduced model from the same ξ(0) = η(0), f(0) = 0.
pub fn compare_pde_vs_reduced(
    s: &SpectralData,
    nl: &Nonlinearity,
    model: &ReducedModel,
    xi0: &[C64],
    opts: &PdeRunOptions,
    tracked: &[Exponent],
    p_min: Option<u32>,
) -> Result<Comparison> {
    let init = initial_from_modes(s, xi0);
    let diag = run_pde(s, nl, &init, opts, tracked, Some(model))?;
    compare_with_diagnostics(model, &diag, xi0, nl, opts, p_min, OdeOptions::default())
}

/// The comparison for an already finished PDE run.
pub fn compare_with_diagnostics(
    model: &ReducedModel,
    diag: &RunDiagnostics,
    xi0: &[C64],
    nl: &Nonlinearity,
    opts: &PdeRunOptions,
    p_min: Option<u32>,
    ode: OdeOptions,
) -> Result<Comparison> {
    let times: Vec<f64> = diag.rows.iter().map(|r| r.t).collect();
    let red = integrate_reduced(model, xi0, &times, ode)?;
    let omega = &model.omega;
    let t0 = 10.0 / omega[0];
    let window = 2.0 * std::f64::consts::PI / omega.iter().fold(f64::INFINITY, |m, w| m.min(*w)) * 4.0;
    let pde_h: Vec<f64> = diag.rows.iter().map(|r| r.h0l).collect();
    let red_h: Vec<f64> = red.iter().map(|r| model.h0l(&r.eta)).collect();
    let env_p = envelope(&times, &pde_h, window);
    let env_r = envelope(&times, &red_h, window);
    let after = |e: &[(f64, f64)]| -> Vec<(f64, f64)> { e.iter().copied().filter(|(t, _)| *t >= t0).collect() };
    let ep = after(&env_p);
    let er = after(&env_r);
    let pde_monotone = ep.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-6));
    let t_final = opts.t_final;
    let fit_from = t0.max(0.1 * t_final);
    let y1p: Vec<f64> = diag.rows.iter().map(|r| r.xi_sq.first().copied().unwrap_or(0.0)).collect();
    let y1r: Vec<f64> = red.iter().map(|r| r.eta.first().map(|z| z.norm_sqr()).unwrap_or(0.0)).collect();
    let fit = |y: &[f64]| {
        let e: Vec<(f64, f64)> = envelope(&times, y, window).into_iter().filter(|(t, _)| *t >= fit_from).collect();
        loglog_slope(&e)
    };
    let nonlinear = !nl.is_zero();
    let pde_exponent = if nonlinear { fit(&y1p) } else { None };
    let reduced_exponent = if nonlinear { fit(&y1r) } else { None };
    let law_exponent = p_min.filter(|&p| p > 1).map(|p| -1.0 / (p as f64 - 1.0));
    let mut divergence_time = None;
    for ((t, a), (_, b)) in ep.iter().zip(&er) {
        if (a - b).abs() > 0.1 * b.abs() {
            divergence_time = Some(*t);
            break;
        }
    }
    let start_p = ep.first().map(|x| x.1).unwrap_or(0.0);
    let start_r = er.first().map(|x| x.1).unwrap_or(0.0);
    let cut = divergence_time.unwrap_or(f64::INFINITY);
    let last_before = |e: &[(f64, f64)]| e.iter().filter(|(t, _)| *t <= cut).last().map(|x| x.1);
    let pde_transfer = start_p - last_before(&ep).unwrap_or(start_p);
    let reduced_transfer = start_r - last_before(&er).unwrap_or(start_r);
    let transfer_ratio = (nonlinear && reduced_transfer.abs() > 0.0).then(|| pde_transfer / reduced_transfer);
    let series = times.iter().zip(pde_h.iter().zip(&red_h)).map(|(t, (a, b))| (*t, *a, *b)).collect();
    Ok(Comparison {
        t0,
        t_final,
        pde_monotone,
        pde_exponent,
        reduced_exponent,
        law_exponent,
        pde_transfer,
        reduced_transfer,
        transfer_ratio,
        divergence_time,
        pde_energy_drift: diag.max_energy_drift(),
        series,
    })
}
