//! Shared fixtures for the integration suites: small spectral problems,
//! random formal Hamiltonians and independent oracles.
#![allow(dead_code)]

use nlkg_core::grid::{Grid1D, Potential, PotentialKind};
use nlkg_core::jets::{FormalHamiltonian, Kind, Nonlinearity};
use nlkg_core::resonance::{exponents_of_degree, Exponent};
use nlkg_core::spectral::SpectralData;
use nlkg_core::C64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn spectral(kind: PotentialKind, half_width: f64, points: usize, mass: f64) -> SpectralData {
    let grid = Grid1D::new(half_width, points).unwrap();
    let pot = Potential::sample(kind, &grid).unwrap();
    SpectralData::build(grid, pot, mass).unwrap()
}

pub fn poschl_teller(depth: f64, half_width: f64, points: usize, mass: f64) -> SpectralData {
    spectral(PotentialKind::PoschlTeller { depth, width: 1.0 }, half_width, points, mass)
}

pub fn free(half_width: f64, points: usize, mass: f64) -> SpectralData {
    spectral(PotentialKind::Free, half_width, points, mass)
}

/// Small problem used by the algebraic suites: one bound state, h ≈ 0.078.
pub fn small_pt() -> SpectralData {
    poschl_teller(2.0, 15.0, 384, 1.25)
}

/// Single bound state at −0.84: ω = 0.4 at m = 1.
pub fn omega_04() -> SpectralData {
    let width = 1.0 / 0.84f64.sqrt();
    spectral(PotentialKind::PoschlTeller { depth: 2.0 / (width * width), width }, 20.0, 512, 1.0)
}

pub fn gaussian(s: &SpectralData, centre: f64, width: f64) -> Vec<C64> {
    s.nodes()
        .iter()
        .map(|x| C64::new((-(x - centre) * (x - centre) / (2.0 * width * width)).exp(), 0.0))
        .collect()
}

pub fn crand(r: &mut ChaCha8Rng) -> C64 {
    C64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))
}

/// A random smooth complex grid function in range(P_c), unit sup-norm scale.
pub fn random_field(s: &SpectralData, r: &mut ChaCha8Rng) -> Vec<C64> {
    let xs = s.nodes();
    let mut g = vec![C64::new(0.0, 0.0); xs.len()];
    for _ in 0..2 {
        let c = r.gen_range(-4.0..4.0);
        let w = r.gen_range(0.5..2.0);
        let k = r.gen_range(-2.0..2.0);
        let a = crand(r);
        for (gi, x) in g.iter_mut().zip(&xs) {
            let e = (-(x - c) * (x - c) / (2.0 * w * w)).exp();
            *gi += a * e * C64::from_polar(1.0, k * x);
        }
    }
    s.project_c(&g)
}

fn random_exponent(r: &mut ChaCha8Rng, n: usize, d: u32) -> Exponent {
    let all = exponents_of_degree(n, d);
    all[r.gen_range(0..all.len())].clone()
}

/// Options for [`random_hamiltonian`].
#[derive(Clone, Copy)]
pub struct RandomSpec {
    pub n: usize,
    pub min_degree: u32,
    pub max_degree: u32,
    pub terms: usize,
    pub fields: bool,
    pub kappa: bool,
    pub real: bool,
    /// Degree bound of the jet container (≥ max_degree).
    pub container: u32,
}

/// A random formal Hamiltonian; with `real` every monomial comes with its
/// conjugate partner.
pub fn random_hamiltonian(s: &SpectralData, r: &mut ChaCha8Rng, spec: RandomSpec) -> FormalHamiltonian {
    let mut h = FormalHamiltonian::zero(spec.n, spec.container);
    h.real = spec.real;
    let one = C64::new(1.0, 0.0);
    for _ in 0..spec.terms {
        let d = r.gen_range(spec.min_degree..=spec.max_degree);
        let field = spec.fields && d >= 1 && r.gen_bool(0.4);
        let dx = if field { d - 1 } else { d };
        let dmu = r.gen_range(0..=dx);
        let mu = random_exponent(r, spec.n, dmu);
        let nu = random_exponent(r, spec.n, dx - dmu);
        if field {
            let phi = random_field(s, r);
            let kind = if r.gen_bool(0.5) { Kind::F } else { Kind::FBar };
            h.add_field(kind, mu.clone(), nu.clone(), &phi, one);
            if spec.real {
                let conj: Vec<C64> = phi.iter().map(|z| z.conj()).collect();
                let ck = if kind == Kind::F { Kind::FBar } else { Kind::F };
                h.add_field(ck, nu, mu, &conj, one);
            }
        } else if dx > 0 {
            let c = crand(r);
            if spec.real {
                if mu == nu {
                    h.add_scalar(mu, nu, C64::new(c.re, 0.0));
                } else {
                    h.add_scalar(mu.clone(), nu.clone(), c);
                    h.add_scalar(nu, mu, c.conj());
                }
            } else {
                h.add_scalar(mu, nu, c);
            }
        }
    }
    if spec.kappa && r.gen_bool(0.5) {
        h.field_quadratic = if spec.real {
            C64::new(r.gen_range(-1.0..1.0), 0.0)
        } else {
            crand(r)
        };
    }
    h.prune();
    h
}

/// Random frequencies in (0.1, 0.9·m).
pub fn random_omega(r: &mut ChaCha8Rng, n: usize, m: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(0.1..0.9 * m)).collect()
}

/// Independent quadrature of H_P(ξ, f) = ∫β(u) with
/// u = Σ_j √2 Re ξ_j/√ω_j · φ_j + B^{−1/2}(√2 Re f).
pub fn h_p_direct(s: &SpectralData, nl: &Nonlinearity, xi: &[C64], f: &[C64]) -> f64 {
    let omega = s.omegas();
    let re: Vec<f64> = f.iter().map(|z| std::f64::consts::SQRT_2 * z.re).collect();
    let mut u = s.apply_b_power_real(-0.5, &re);
    for (j, x) in xi.iter().enumerate() {
        let q = std::f64::consts::SQRT_2 * x.re / omega[j].sqrt();
        for (ui, p) in u.iter_mut().zip(s.bound_state(j)) {
            *ui += q * p;
        }
    }
    s.h() * u.iter().map(|&x| nl.beta(x)).sum::<f64>()
}

/// Five-point derivative at 0; exact for polynomials of degree ≤ 4.
pub fn d_ds(f: impl Fn(f64) -> f64, delta: f64) -> f64 {
    (8.0 * (f(delta) - f(-delta)) - (f(2.0 * delta) - f(-2.0 * delta))) / (12.0 * delta)
}

/// Gauss–Legendre nodes and weights on [a, b] (Newton on P_n).
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w));
    }
    out
}

/// Composite Simpson on [a, b] with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let x = a + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    s * h / 3.0
}
