//! Homological equation and Birkhoff normalization at jet level.
//!
//! A jet Z is in normal form when its scalar monomials are resonant
//! (ω·(μ−ν) = 0), its f-monomials satisfy ω·(μ−ν) < −m and its
//! f̄-monomials satisfy ω·(μ−ν) > m.

use std::collections::BTreeMap;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jets::{poisson_bracket, Coeff, FieldSpace, FormalHamiltonian, Key, Kind};
use crate::resonance::{Exponent, MultiIndexSet, TOL_RES};
use crate::spectral::SpectralData;

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Class {
    /// Resonant scalar monomial kept in Z₀.
    Kernel,
    /// Field monomial coupling to the continuum, kept in Z₁.
    ResonantField,
    /// Removed by the generator χ.
    Solved,
}

fn scalar_tol(key: &Key) -> f64 {
    let d: u32 = key.mu.iter().chain(&key.nu).sum();
    TOL_RES * (1.0 + d as f64)
}

/// The frequency s for which a field monomial needs (B − s)⁻¹, and whether
/// it already satisfies the normal-form condition.
fn field_shift(key: &Key, omega: &[f64]) -> f64 {
    match key.kind {
        // f-monomial: ω·(ν−μ)
        Kind::F => -key.frequency(omega),
        // f̄-monomial: ω·(μ−ν)
        Kind::FBar => key.frequency(omega),
        Kind::Scalar => unreachable!(),
    }
}

/// Is the monomial part of a normal form?
pub fn in_normal_form(key: &Key, omega: &[f64], m: f64) -> bool {
    match key.kind {
        Kind::Scalar => key.frequency(omega).abs() < scalar_tol(key),
        _ => field_shift(key, omega) > m,
    }
}

/// Monomials of `z` violating the normal-form conditions.
pub fn normal_form_violations(z: &FormalHamiltonian, omega: &[f64], m: f64) -> Vec<Key> {
    z.terms
        .keys()
        .filter(|k| !in_normal_form(k, omega, m))
        .cloned()
        .collect()
}

/// {H_L, K} computed monomial by monomial.
pub fn homological_op(k: &FormalHamiltonian, omega: &[f64], fs: &impl FieldSpace) -> FormalHamiltonian {
    let mut out = FormalHamiltonian::zero(k.n_modes, k.max_degree);
    out.real = k.real;
    for (key, c) in &k.terms {
        match c {
            Coeff::Scalar(x) => {
                let d = key.frequency(omega);
                out.insert(key.clone(), Coeff::Scalar(-I * d * x));
            }
            Coeff::Field(v) => {
                let s = field_shift(key, omega);
                let bv = fs.apply_b(v);
                let sign = if key.kind == Kind::F { -I } else { I };
                let w: Vec<C64> = bv.iter().zip(v).map(|(b, x)| sign * (b - s * x)).collect();
                out.insert(key.clone(), Coeff::Field(w));
            }
        }
    }
    out.prune();
    out
}

#[derive(Clone, Debug)]
pub struct HomologicalSolution {
    pub chi: FormalHamiltonian,
    pub z: FormalHamiltonian,
    pub classes: Vec<(Key, Class)>,
    /// Smallest |ω·(μ−ν)| among solved scalar monomials.
    pub smallest_divisor: f64,
    /// Largest |ω·(μ−ν)| among kernel monomials (should be round-off).
    pub kernel_defect: f64,
}

/// Solve {H_L, χ} + Z = K.
pub fn solve_homological(
    k: &FormalHamiltonian,
    omega: &[f64],
    m: f64,
    s: &SpectralData,
) -> Result<HomologicalSolution> {
    let mut chi = FormalHamiltonian::zero(k.n_modes, k.max_degree);
    let mut z = FormalHamiltonian::zero(k.n_modes, k.max_degree);
    chi.real = k.real;
    z.real = k.real;
    z.field_quadratic = k.field_quadratic;
    let mut classes = Vec::with_capacity(k.terms.len());
    let mut smallest_divisor = f64::INFINITY;
    let mut kernel_defect = 0.0f64;
    for (key, c) in &k.terms {
        match c {
            Coeff::Scalar(x) => {
                let d = key.frequency(omega);
                if d.abs() < scalar_tol(key) {
                    kernel_defect = kernel_defect.max(d.abs());
                    z.insert(key.clone(), c.clone());
                    classes.push((key.clone(), Class::Kernel));
                } else {
                    smallest_divisor = smallest_divisor.min(d.abs());
                    chi.insert(key.clone(), Coeff::Scalar(I * x / d));
                    classes.push((key.clone(), Class::Solved));
                }
            }
            Coeff::Field(v) => {
                let shift = field_shift(key, omega);
                if shift > m {
                    z.insert(key.clone(), c.clone());
                    classes.push((key.clone(), Class::ResonantField));
                    continue;
                }
                if shift > m - s.tol_edge {
                    return Err(Error::hypothesis(
                        "H4",
                        format!(
                            "field monomial {:?} ξ^{:?} ξ̄^{:?} has frequency {shift:.6} within {:.1e} of the threshold m = {m}",
                            key.kind, key.mu, key.nu, s.tol_edge
                        ),
                    ));
                }
                let r = s.resolvent_projected(C64::new(shift, 0.0), v);
                let sign = if key.kind == Kind::F { I } else { -I };
                let w: Vec<C64> = r.into_iter().map(|x| sign * x).collect();
                chi.insert(key.clone(), Coeff::Field(w));
                classes.push((key.clone(), Class::Solved));
            }
        }
    }
    chi.prune();
    z.prune();
    Ok(HomologicalSolution {
        chi,
        z,
        classes,
        smallest_divisor,
        kernel_defect,
    })
}

/// Largest per-monomial magnitude of {H_L, χ} + Z − K, with the bracket
/// evaluated by the general bracket engine.
pub fn homological_residual(
    k: &FormalHamiltonian,
    sol: &HomologicalSolution,
    omega: &[f64],
    fs: &impl FieldSpace,
) -> f64 {
    let hl = FormalHamiltonian::linear_part(omega, k.max_degree);
    let lhs = poisson_bracket(&hl, &sol.chi, fs).plus(&sol.z).minus(k);
    lhs.max_magnitude()
}

/// H∘φ¹ for the time-one flow of χ: Σ_n ad_χⁿ H / n!, ad_χ H = {χ, H},
/// truncated at the jet order of H.
pub fn lie_transform(h: &FormalHamiltonian, chi: &FormalHamiltonian, fs: &impl FieldSpace) -> FormalHamiltonian {
    let chi = chi.with_max_degree(h.max_degree);
    if chi.is_empty() {
        return h.clone();
    }
    debug_assert!(chi.lowest_degree().unwrap_or(3) >= 3, "generator must have degree ≥ 3");
    let mut total = h.clone();
    let mut term = h.clone();
    for n in 1.. {
        term = poisson_bracket(&chi, &term, fs).scaled(C64::new(1.0 / n as f64, 0.0));
        if term.is_empty() {
            break;
        }
        total.axpy(C64::new(1.0, 0.0), &term);
        total.discarded += term.discarded;
    }
    total.prune();
    total
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepLog {
    pub degree: u32,
    pub solved: usize,
    pub kernel: usize,
    pub resonant_field: usize,
    /// ‖{H_L, χ} + Z − K‖ per monomial.
    pub homological_residual: f64,
    /// Largest non-normal-form coefficient left at this degree after the transform.
    pub leftover: f64,
    pub smallest_divisor: f64,
    /// Size of everything truncated so far.
    pub discarded: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormalFormResult {
    pub order: u32,
    pub lowest_degree: u32,
    pub jet_order: u32,
    pub omega: Vec<f64>,
    pub mass: f64,
    /// Normal-form part through the last normalized degree (H_L excluded).
    pub z: FormalHamiltonian,
    /// Full transformed jet (H_L excluded), including not-yet-normalized
    /// degrees up to the jet order.
    pub transformed: FormalHamiltonian,
    /// Φ_{μ0}: the f̄-coefficient of ξ^μ in the transformed jet, for μ ∈ M.
    pub couplings: BTreeMap<Exponent, Vec<C64>>,
    #[serde(skip)]
    pub generators: Vec<FormalHamiltonian>,
    pub steps: Vec<StepLog>,
}

impl NormalFormResult {
    /// Resonant scalar part Z₀.
    pub fn z0(&self) -> FormalHamiltonian {
        let mut out = self.z.clone();
        out.terms.retain(|k, _| k.kind == Kind::Scalar);
        out.field_quadratic = C64::new(0.0, 0.0);
        out
    }

    /// The f-coefficient of ξ̄^ν (complex conjugate of Φ_{ν0} for real jets).
    pub fn coupling_bar(&self, nu: &[u32]) -> Option<Vec<C64>> {
        self.couplings
            .get(nu)
            .map(|v| v.iter().map(|z| z.conj()).collect())
    }

    pub fn last_normalized_degree(&self) -> u32 {
        self.lowest_degree + self.order - 1
    }
}

/// Normalize H_L + H_P through `r` orders starting from the lowest degree
/// present in H_P. Couplings are read for every μ ∈ M that fits in the jet.
pub fn birkhoff_normalize(
    hp: &FormalHamiltonian,
    s: &SpectralData,
    sets: &MultiIndexSet,
    r: u32,
) -> Result<NormalFormResult> {
    let omega = sets.omega.clone();
    let m = sets.mass;
    let d_jet = hp.max_degree;
    let hl = FormalHamiltonian::linear_part(&omega, d_jet);
    let lowest = hp.lowest_degree().unwrap_or(4).max(3);
    if r == 0 {
        return Err(Error::Precondition("normal-form order must be positive".into()));
    }
    if lowest + r - 1 > d_jet {
        return Err(Error::Precondition(format!(
            "order {r} needs degree {} but the jet stops at {d_jet}",
            lowest + r - 1
        )));
    }
    let mut h = hl.plus(hp);
    let mut generators = Vec::new();
    let mut steps = Vec::new();
    for k in 0..r {
        let d = lowest + k;
        let kd = h.homogeneous(d);
        let sol = solve_homological(&kd, &omega, m, s)?;
        let residual = homological_residual(&kd, &sol, &omega, s);
        if !sol.chi.is_empty() {
            h = lie_transform(&h, &sol.chi, s);
        }
        let after = h.homogeneous(d);
        let leftover = after
            .terms
            .iter()
            .filter(|(key, _)| !in_normal_form(key, &omega, m))
            .map(|(_, c)| c.magnitude())
            .fold(0.0, f64::max);
        let count = |c: Class| sol.classes.iter().filter(|(_, x)| *x == c).count();
        steps.push(StepLog {
            degree: d,
            solved: count(Class::Solved),
            kernel: count(Class::Kernel),
            resonant_field: count(Class::ResonantField),
            homological_residual: residual,
            leftover,
            smallest_divisor: sol.smallest_divisor,
            discarded: h.discarded,
        });
        generators.push(sol.chi);
    }
    let mut transformed = h.minus(&hl);
    // H_L cancels exactly; clear round-off in the κ slot and the ω|ξ|² terms.
    transformed.field_quadratic = C64::new(0.0, 0.0);
    transformed.terms.retain(|k, _| k.degree() >= 3);
    transformed.real = hp.real;
    let last = lowest + r - 1;
    let mut z = transformed.up_to_degree(last);
    z.terms.retain(|k, _| in_normal_form(k, &omega, m));

    let zero = vec![0u32; omega.len()];
    let mut couplings = BTreeMap::new();
    for mu in &sets.m_set {
        if crate::resonance::degree(mu) + 1 > d_jet {
            continue;
        }
        let v = transformed
            .field(Kind::FBar, mu, &zero)
            .map(|v| v.to_vec())
            .unwrap_or_else(|| vec![C64::new(0.0, 0.0); s.dim()]);
        couplings.insert(mu.clone(), v);
    }
    Ok(NormalFormResult {
        order: r,
        lowest_degree: lowest,
        jet_order: d_jet,
        omega,
        mass: m,
        z,
        transformed,
        couplings,
        generators,
        steps,
    })
}
