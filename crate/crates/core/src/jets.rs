//! Truncated jets of the Hamiltonian in the complex variables (ξ, f).
//!
//! A jet is a finite sum of monomials ξ^μ ξ̄^ν times either a complex scalar,
//! ∫Φ f or ∫Ψ f̄ with Φ, Ψ grid functions in range(P_c), plus an optional
//! multiple κ·∫ f̄ B f of the free radiation energy. Terms of order two or
//! more in f are never expanded: brackets that would produce them are
//! dropped and only their size is recorded.
//!
//! Bracket convention: {H, K} = i Σ_j (∂_{ξ_j}H ∂_{ξ̄_j}K − ∂_{ξ̄_j}H ∂_{ξ_j}K)
//! + i⟨∇_f H, ∇_{f̄} K⟩ − i⟨∇_{f̄} H, ∇_f K⟩ with the bilinear pairing ⟨a,b⟩ = ∫ab.
//! Hamilton's equations read Ḟ = {H, F}; in particular ξ̇_j = −iω_jξ_j under
//! H_L = Σω_j|ξ_j|² + ∫f̄Bf.

use std::collections::BTreeMap;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resonance::{degree, exponents_of_degree, Exponent};
use crate::spectral::SpectralData;

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Kind {
    Scalar,
    /// Linear in f: ξ^μ ξ̄^ν ∫Φ f.
    F,
    /// Linear in f̄: ξ^μ ξ̄^ν ∫Ψ f̄.
    FBar,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Key {
    pub kind: Kind,
    pub mu: Exponent,
    pub nu: Exponent,
}

impl Key {
    pub fn new(kind: Kind, mu: Exponent, nu: Exponent) -> Self {
        Key { kind, mu, nu }
    }

    pub fn degree(&self) -> u32 {
        degree(&self.mu) + degree(&self.nu) + u32::from(self.kind != Kind::Scalar)
    }

    /// ω·(μ−ν).
    pub fn frequency(&self, omega: &[f64]) -> f64 {
        self.mu
            .iter()
            .zip(&self.nu)
            .zip(omega)
            .map(|((&a, &b), w)| (a as f64 - b as f64) * w)
            .sum()
    }

    /// The key of the complex-conjugate monomial.
    pub fn conjugate(&self) -> Key {
        let kind = match self.kind {
            Kind::Scalar => Kind::Scalar,
            Kind::F => Kind::FBar,
            Kind::FBar => Kind::F,
        };
        Key::new(kind, self.nu.clone(), self.mu.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Coeff {
    Scalar(C64),
    Field(Vec<C64>),
}

impl Coeff {
    /// |c| for scalars, sup-norm for grid functions.
    pub fn magnitude(&self) -> f64 {
        match self {
            Coeff::Scalar(c) => c.norm(),
            Coeff::Field(v) => v.iter().fold(0.0f64, |a, z| a.max(z.norm())),
        }
    }

    pub fn conj(&self) -> Coeff {
        match self {
            Coeff::Scalar(c) => Coeff::Scalar(c.conj()),
            Coeff::Field(v) => Coeff::Field(v.iter().map(|z| z.conj()).collect()),
        }
    }

    fn scale(&mut self, s: C64) {
        match self {
            Coeff::Scalar(c) => *c *= s,
            Coeff::Field(v) => v.iter_mut().for_each(|z| *z *= s),
        }
    }

    fn is_zero(&self) -> bool {
        match self {
            Coeff::Scalar(c) => *c == C64::new(0.0, 0.0),
            Coeff::Field(v) => v.iter().all(|z| *z == C64::new(0.0, 0.0)),
        }
    }
}

/// The operations on grid functions the algebra needs.
pub trait FieldSpace {
    fn dim(&self) -> usize;
    /// ∫ a b (bilinear).
    fn pair(&self, a: &[C64], b: &[C64]) -> C64;
    /// B g for g in range(P_c).
    fn apply_b(&self, g: &[C64]) -> Vec<C64>;
}

impl FieldSpace for SpectralData {
    fn dim(&self) -> usize {
        SpectralData::dim(self)
    }

    fn pair(&self, a: &[C64], b: &[C64]) -> C64 {
        SpectralData::pair(self, a, b)
    }

    fn apply_b(&self, g: &[C64]) -> Vec<C64> {
        self.apply_b_power_projected(1.0, g)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormalHamiltonian {
    pub n_modes: usize,
    pub max_degree: u32,
    pub terms: BTreeMap<Key, Coeff>,
    /// κ in κ·∫ f̄ B f.
    pub field_quadratic: C64,
    pub real: bool,
    /// Accumulated size of everything dropped by truncation (degree above
    /// `max_degree` or order ≥ 2 in f).
    pub discarded: f64,
}

impl FormalHamiltonian {
    pub fn zero(n_modes: usize, max_degree: u32) -> Self {
        FormalHamiltonian {
            n_modes,
            max_degree,
            terms: BTreeMap::new(),
            field_quadratic: C64::new(0.0, 0.0),
            real: true,
            discarded: 0.0,
        }
    }

    /// H_L = Σ ω_j ξ_j ξ̄_j + ∫ f̄ B f.
    pub fn linear_part(omega: &[f64], max_degree: u32) -> Self {
        let n = omega.len();
        let mut h = Self::zero(n, max_degree);
        for (j, &w) in omega.iter().enumerate() {
            let mut e = vec![0; n];
            e[j] = 1;
            h.add_scalar(e.clone(), e, C64::new(w, 0.0));
        }
        h.field_quadratic = C64::new(1.0, 0.0);
        h
    }

    /// The coordinate function ξ_j (or ξ̄_j when `bar`).
    pub fn coordinate(n_modes: usize, j: usize, bar: bool, max_degree: u32) -> Self {
        let mut h = Self::zero(n_modes, max_degree);
        let mut e = vec![0; n_modes];
        e[j] = 1;
        let z = vec![0; n_modes];
        if bar {
            h.add_scalar(z, e, C64::new(1.0, 0.0));
        } else {
            h.add_scalar(e, z, C64::new(1.0, 0.0));
        }
        h.real = false;
        h
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty() && self.field_quadratic == C64::new(0.0, 0.0)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn add_scalar(&mut self, mu: Exponent, nu: Exponent, c: C64) {
        self.accumulate_scalar(Key::new(Kind::Scalar, mu, nu), c);
    }

    pub fn add_field(&mut self, kind: Kind, mu: Exponent, nu: Exponent, phi: &[C64], s: C64) {
        debug_assert!(kind != Kind::Scalar);
        self.accumulate_field(Key::new(kind, mu, nu), phi, s);
    }

    fn accumulate_scalar(&mut self, key: Key, c: C64) {
        if key.degree() > self.max_degree {
            self.discarded += c.norm();
            return;
        }
        match self.terms.get_mut(&key) {
            Some(Coeff::Scalar(x)) => *x += c,
            Some(Coeff::Field(_)) => unreachable!("kind mismatch"),
            None => {
                self.terms.insert(key, Coeff::Scalar(c));
            }
        }
    }

    fn accumulate_field(&mut self, key: Key, phi: &[C64], s: C64) {
        if key.degree() > self.max_degree {
            self.discarded += s.norm() * phi.iter().fold(0.0f64, |a, z| a.max(z.norm()));
            return;
        }
        match self.terms.get_mut(&key) {
            Some(Coeff::Field(v)) => {
                for (x, p) in v.iter_mut().zip(phi) {
                    *x += s * p;
                }
            }
            Some(Coeff::Scalar(_)) => unreachable!("kind mismatch"),
            None => {
                self.terms.insert(key, Coeff::Field(phi.iter().map(|p| s * p).collect()));
            }
        }
    }

    pub fn insert(&mut self, key: Key, coeff: Coeff) {
        match coeff {
            Coeff::Scalar(c) => self.accumulate_scalar(key, c),
            Coeff::Field(v) => self.accumulate_field(key, &v, C64::new(1.0, 0.0)),
        }
    }

    pub fn scalar(&self, mu: &[u32], nu: &[u32]) -> C64 {
        match self.terms.get(&Key::new(Kind::Scalar, mu.to_vec(), nu.to_vec())) {
            Some(Coeff::Scalar(c)) => *c,
            _ => C64::new(0.0, 0.0),
        }
    }

    pub fn field(&self, kind: Kind, mu: &[u32], nu: &[u32]) -> Option<&[C64]> {
        match self.terms.get(&Key::new(kind, mu.to_vec(), nu.to_vec())) {
            Some(Coeff::Field(v)) => Some(v),
            _ => None,
        }
    }

    /// self + s·other.
    pub fn axpy(&mut self, s: C64, other: &FormalHamiltonian) {
        assert_eq!(self.n_modes, other.n_modes);
        for (k, c) in &other.terms {
            match c {
                Coeff::Scalar(x) => self.accumulate_scalar(k.clone(), s * x),
                Coeff::Field(v) => self.accumulate_field(k.clone(), v, s),
            }
        }
        self.field_quadratic += s * other.field_quadratic;
        self.real = self.real && other.real && s.im == 0.0;
        self.discarded += s.norm() * other.discarded;
    }

    pub fn plus(&self, other: &FormalHamiltonian) -> FormalHamiltonian {
        let mut out = self.clone();
        out.axpy(C64::new(1.0, 0.0), other);
        out
    }

    pub fn minus(&self, other: &FormalHamiltonian) -> FormalHamiltonian {
        let mut out = self.clone();
        out.axpy(C64::new(-1.0, 0.0), other);
        out
    }

    pub fn scaled(&self, s: C64) -> FormalHamiltonian {
        let mut out = self.clone();
        out.terms.values_mut().for_each(|c| c.scale(s));
        out.field_quadratic *= s;
        out.real = self.real && s.im == 0.0;
        out
    }

    /// Drops terms whose coefficients are exactly zero.
    pub fn prune(&mut self) {
        self.terms.retain(|_, c| !c.is_zero());
    }

    /// Part of exact total degree d (the κ term has degree 2).
    pub fn homogeneous(&self, d: u32) -> FormalHamiltonian {
        let mut out = FormalHamiltonian::zero(self.n_modes, self.max_degree);
        out.real = self.real;
        for (k, c) in &self.terms {
            if k.degree() == d {
                out.terms.insert(k.clone(), c.clone());
            }
        }
        if d == 2 {
            out.field_quadratic = self.field_quadratic;
        }
        out
    }

    /// Part of total degree ≤ d.
    pub fn up_to_degree(&self, d: u32) -> FormalHamiltonian {
        let mut out = self.clone();
        out.terms.retain(|k, _| k.degree() <= d);
        if d < 2 {
            out.field_quadratic = C64::new(0.0, 0.0);
        }
        out
    }

    pub fn with_max_degree(&self, d: u32) -> FormalHamiltonian {
        let mut out = self.up_to_degree(d);
        out.max_degree = d;
        out
    }

    pub fn lowest_degree(&self) -> Option<u32> {
        let t = self.terms.keys().map(|k| k.degree()).min();
        if self.field_quadratic != C64::new(0.0, 0.0) {
            Some(t.map_or(2, |d| d.min(2)))
        } else {
            t
        }
    }

    /// Largest coefficient magnitude.
    pub fn max_magnitude(&self) -> f64 {
        self.terms
            .values()
            .map(|c| c.magnitude())
            .fold(self.field_quadratic.norm(), f64::max)
    }

    /// Largest violation of K_{μν} = conj K_{νμ}, Ψ_{νμ} = conj Φ_{μν} and κ ∈ ℝ.
    pub fn reality_defect(&self) -> f64 {
        let mut worst = self.field_quadratic.im.abs();
        for (k, c) in &self.terms {
            let partner = self.terms.get(&k.conjugate());
            let d = match (c, partner) {
                (Coeff::Scalar(a), Some(Coeff::Scalar(b))) => (a - b.conj()).norm(),
                (Coeff::Field(a), Some(Coeff::Field(b))) => a
                    .iter()
                    .zip(b)
                    .fold(0.0f64, |m, (x, y)| m.max((x - y.conj()).norm())),
                (c, None) => c.magnitude(),
                _ => f64::INFINITY,
            };
            worst = worst.max(d);
        }
        worst
    }

    /// Complex conjugate of the function.
    pub fn conjugate(&self) -> FormalHamiltonian {
        let mut out = FormalHamiltonian::zero(self.n_modes, self.max_degree);
        for (k, c) in &self.terms {
            out.terms.insert(k.conjugate(), c.conj());
        }
        out.field_quadratic = self.field_quadratic.conj();
        out.real = self.real;
        out.discarded = self.discarded;
        out
    }

    /// Evaluate at a phase-space point.
    pub fn evaluate(&self, fs: &impl FieldSpace, xi: &[C64], f: &[C64]) -> C64 {
        let fbar: Vec<C64> = f.iter().map(|z| z.conj()).collect();
        let mut total = C64::new(0.0, 0.0);
        for (k, c) in &self.terms {
            let mono = monomial_value(xi, &k.mu, &k.nu);
            total += mono
                * match (k.kind, c) {
                    (Kind::Scalar, Coeff::Scalar(x)) => *x,
                    (Kind::F, Coeff::Field(v)) => fs.pair(v, f),
                    (Kind::FBar, Coeff::Field(v)) => fs.pair(v, &fbar),
                    _ => unreachable!(),
                };
        }
        if self.field_quadratic != C64::new(0.0, 0.0) {
            total += self.field_quadratic * fs.pair(&fbar, &fs.apply_b(f));
        }
        total
    }

    /// JSON-friendly summary: exponents, scalar values, field norms.
    pub fn dump(&self) -> Vec<MonomialDump> {
        self.terms
            .iter()
            .map(|(k, c)| MonomialDump {
                kind: k.kind,
                mu: k.mu.clone(),
                nu: k.nu.clone(),
                value: match c {
                    Coeff::Scalar(x) => Some([x.re, x.im]),
                    Coeff::Field(_) => None,
                },
                magnitude: c.magnitude(),
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonomialDump {
    pub kind: Kind,
    pub mu: Exponent,
    pub nu: Exponent,
    pub value: Option<[f64; 2]>,
    pub magnitude: f64,
}

pub fn monomial_value(xi: &[C64], mu: &[u32], nu: &[u32]) -> C64 {
    let mut v = C64::new(1.0, 0.0);
    for ((x, &a), &b) in xi.iter().zip(mu).zip(nu) {
        v *= x.powu(a) * x.conj().powu(b);
    }
    v
}

fn shifted(a: &[u32], b: &[u32], j: usize) -> Exponent {
    let mut out: Exponent = a.iter().zip(b).map(|(x, y)| x + y).collect();
    out[j] -= 1;
    out
}

fn summed(a: &[u32], b: &[u32]) -> Exponent {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// {A, B}, truncated at min(max_degree).
pub fn poisson_bracket(a: &FormalHamiltonian, b: &FormalHamiltonian, fs: &impl FieldSpace) -> FormalHamiltonian {
    assert_eq!(a.n_modes, b.n_modes, "mode count mismatch");
    let n = a.n_modes;
    let dmax = a.max_degree.min(b.max_degree);
    let mut out = FormalHamiltonian::zero(n, dmax);
    out.real = a.real && b.real;

    let a_terms: Vec<(&Key, &Coeff, u32)> = a.terms.iter().map(|(k, c)| (k, c, k.degree())).collect();
    let b_terms: Vec<(&Key, &Coeff, u32)> = b.terms.iter().map(|(k, c)| (k, c, k.degree())).collect();

    for &(ka, ca, da) in &a_terms {
        for &(kb, cb, db) in &b_terms {
            if da == 0 || db == 0 {
                continue;
            }
            let dres = da + db - 2;
            if dres > dmax {
                out.discarded += ca.magnitude() * cb.magnitude();
                continue;
            }
            for j in 0..n {
                let w = ka.mu[j] as f64 * kb.nu[j] as f64 - ka.nu[j] as f64 * kb.mu[j] as f64;
                if w == 0.0 {
                    continue;
                }
                let s = I * w;
                let mu = shifted(&ka.mu, &kb.mu, j);
                let nu = shifted(&ka.nu, &kb.nu, j);
                match (ca, cb) {
                    (Coeff::Scalar(x), Coeff::Scalar(y)) => {
                        out.accumulate_scalar(Key::new(Kind::Scalar, mu, nu), s * x * y)
                    }
                    (Coeff::Scalar(x), Coeff::Field(v)) => {
                        out.accumulate_field(Key::new(kb.kind, mu, nu), v, s * x)
                    }
                    (Coeff::Field(v), Coeff::Scalar(y)) => {
                        out.accumulate_field(Key::new(ka.kind, mu, nu), v, s * y)
                    }
                    (Coeff::Field(_), Coeff::Field(_)) => {
                        // quadratic in f: outside the algebra
                        out.discarded += w.abs() * ca.magnitude() * cb.magnitude();
                    }
                }
            }
            match (ka.kind, kb.kind, ca, cb) {
                (Kind::F, Kind::FBar, Coeff::Field(p), Coeff::Field(q)) => out.accumulate_scalar(
                    Key::new(Kind::Scalar, summed(&ka.mu, &kb.mu), summed(&ka.nu, &kb.nu)),
                    I * fs.pair(p, q),
                ),
                (Kind::FBar, Kind::F, Coeff::Field(p), Coeff::Field(q)) => out.accumulate_scalar(
                    Key::new(Kind::Scalar, summed(&ka.mu, &kb.mu), summed(&ka.nu, &kb.nu)),
                    -I * fs.pair(p, q),
                ),
                _ => {}
            }
        }
    }

    // {κQ, K} for field-linear K: F ↦ −iκBΦ, F̄ ↦ +iκBΨ; {K, κQ} is the negative.
    let zero = C64::new(0.0, 0.0);
    for (sign, kappa, other) in [(1.0, a.field_quadratic, b), (-1.0, b.field_quadratic, a)] {
        if kappa == zero {
            continue;
        }
        for (k, c) in &other.terms {
            if let Coeff::Field(v) = c {
                let bv = fs.apply_b(v);
                let s = match k.kind {
                    Kind::F => -I * kappa * sign,
                    Kind::FBar => I * kappa * sign,
                    Kind::Scalar => unreachable!(),
                };
                out.accumulate_field(k.clone(), &bv, s);
            }
        }
    }
    out.prune();
    out
}

/// Raw-derivative Taylor data of the nonlinearity β.
///
/// Two conventions appear in the literature: raw derivatives β^{(j)}(0)
/// (stored here) and Taylor coefficients β^{(j)}(0)/j! (see
/// [`Nonlinearity::taylor_coefficient`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearity {
    /// β^{(j)}(0) for the listed j.
    pub derivatives: BTreeMap<u32, f64>,
    /// Highest order for which Taylor data is known; `None` means β is the
    /// polynomial given by `derivatives` (all higher derivatives vanish).
    pub j_max: Option<u32>,
    pub closed_form: ClosedForm,
    /// Permits β'''(0) ≠ 0 (outside the zero-of-order-four assumption); used
    /// only by exploratory scans.
    pub allow_cubic: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClosedForm {
    /// β is the Taylor polynomial itself.
    Polynomial,
    /// β(u) = c·u⁴/(1+u²).
    Saturating { c: f64 },
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

impl Nonlinearity {
    pub fn zero() -> Self {
        Nonlinearity {
            derivatives: BTreeMap::new(),
            j_max: None,
            closed_form: ClosedForm::Polynomial,
            allow_cubic: false,
        }
    }

    /// β(u) = c·u⁴.
    pub fn quartic(c: f64) -> Self {
        Self::polynomial(&[(4, c)]).expect("valid")
    }

    /// β(u) = Σ a_j u^j from Taylor coefficients a_j.
    pub fn polynomial(coeffs: &[(u32, f64)]) -> Result<Self> {
        let mut derivatives = BTreeMap::new();
        for &(j, a) in coeffs {
            if a != 0.0 {
                *derivatives.entry(j).or_insert(0.0) += a * factorial(j);
            }
        }
        let nl = Nonlinearity {
            derivatives,
            j_max: None,
            closed_form: ClosedForm::Polynomial,
            allow_cubic: false,
        };
        nl.validate()?;
        Ok(nl)
    }

    /// β(u) = c·u⁴/(1+u²) = c Σ_k (−1)^k u^{4+2k}; Taylor data kept to order j_max.
    pub fn saturating(c: f64, j_max: u32) -> Self {
        let mut derivatives = BTreeMap::new();
        let mut j = 4;
        let mut sign = 1.0;
        while j <= j_max {
            derivatives.insert(j, c * sign * factorial(j));
            sign = -sign;
            j += 2;
        }
        Nonlinearity {
            derivatives,
            j_max: Some(j_max),
            closed_form: ClosedForm::Saturating { c },
            allow_cubic: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (&j, &d) in &self.derivatives {
            if d == 0.0 {
                continue;
            }
            if j < 3 || (j == 3 && !self.allow_cubic) {
                return Err(Error::hypothesis(
                    "H6",
                    format!("β must vanish to fourth order at 0, but β^({j})(0) = {d}"),
                ));
            }
        }
        Ok(())
    }

    pub fn derivative(&self, j: u32) -> f64 {
        self.derivatives.get(&j).copied().unwrap_or(0.0)
    }

    /// β^{(j)}(0)/j!.
    pub fn taylor_coefficient(&self, j: u32) -> f64 {
        self.derivative(j) / factorial(j)
    }

    pub fn set_derivative(&mut self, j: u32, value: f64) {
        self.derivatives.insert(j, value);
    }

    pub fn is_zero(&self) -> bool {
        self.derivatives.values().all(|&d| d == 0.0)
            && !matches!(self.closed_form, ClosedForm::Saturating { c } if c != 0.0)
    }

    pub fn lowest_order(&self) -> Option<u32> {
        self.derivatives.iter().find(|(_, &d)| d != 0.0).map(|(&j, _)| j)
    }

    pub fn beta(&self, u: f64) -> f64 {
        match self.closed_form {
            ClosedForm::Polynomial => self
                .derivatives
                .iter()
                .map(|(&j, &d)| d / factorial(j) * u.powi(j as i32))
                .sum(),
            ClosedForm::Saturating { c } => c * u.powi(4) / (1.0 + u * u),
        }
    }

    pub fn beta_prime(&self, u: f64) -> f64 {
        match self.closed_form {
            ClosedForm::Polynomial => self
                .derivatives
                .iter()
                .map(|(&j, &d)| d / factorial(j - 1) * u.powi(j as i32 - 1))
                .sum(),
            ClosedForm::Saturating { c } => {
                let d = 1.0 + u * u;
                c * (4.0 * u.powi(3) * d - 2.0 * u.powi(5)) / (d * d)
            }
        }
    }

    pub fn available_to(&self, d: u32) -> bool {
        self.j_max.is_none_or(|j| d <= j)
    }
}

/// Complex coordinates (ξ, f) of a real phase-space point (u, v).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexState {
    pub xi: Vec<C64>,
    pub f: Vec<C64>,
}

/// ξ_j = (q_j√ω_j + i p_j/√ω_j)/√2, f = (B^{1/2}P_c u + i B^{−1/2}P_c v)/√2.
pub fn change_of_variables(s: &SpectralData, u: &[f64], v: &[f64]) -> ComplexState {
    let omega = s.omegas();
    let xi = (0..s.n_bound)
        .map(|j| {
            let phi = s.bound_state(j);
            let q = s.inner(u, &phi);
            let p = s.inner(v, &phi);
            let w = omega[j].sqrt();
            C64::new(q * w, p / w) / std::f64::consts::SQRT_2
        })
        .collect();
    let bu = s.apply_b_power_real(0.5, u);
    let bv = s.apply_b_power_real(-0.5, v);
    let f = bu
        .iter()
        .zip(&bv)
        .map(|(a, b)| C64::new(*a, *b) / std::f64::consts::SQRT_2)
        .collect();
    ComplexState { xi, f }
}

/// Inverse of [`change_of_variables`].
pub fn inverse_change_of_variables(s: &SpectralData, st: &ComplexState) -> (Vec<f64>, Vec<f64>) {
    let omega = s.omegas();
    let sq2 = std::f64::consts::SQRT_2;
    let re: Vec<f64> = st.f.iter().map(|z| z.re * sq2).collect();
    let im: Vec<f64> = st.f.iter().map(|z| z.im * sq2).collect();
    let mut u = s.apply_b_power_real(-0.5, &re);
    let mut v = s.apply_b_power_real(0.5, &im);
    for j in 0..s.n_bound {
        let phi = s.bound_state(j);
        let q = sq2 * st.xi[j].re / omega[j].sqrt();
        let p = sq2 * st.xi[j].im * omega[j].sqrt();
        for i in 0..u.len() {
            u[i] += q * phi[i];
            v[i] += p * phi[i];
        }
    }
    (u, v)
}

/// H_L(ξ, f) = Σ ω_j|ξ_j|² + ⟨f̄, B f⟩.
pub fn linear_energy(s: &SpectralData, st: &ComplexState) -> f64 {
    let omega = s.omegas();
    let disc: f64 = st.xi.iter().zip(&omega).map(|(x, w)| w * x.norm_sqr()).sum();
    let bf = s.apply_b_power_projected(1.0, &st.f);
    let fbar: Vec<C64> = st.f.iter().map(|z| z.conj()).collect();
    disc + s.pair(&fbar, &bf).re
}

/// Jet of H_P(ξ, f) = ∫β(Σ q_jφ_j + P_c u): every scalar monomial and every
/// monomial linear in (f, f̄) of total degree ≤ d_jet.
#[derive(Clone, Debug)]
pub struct HpJet {
    pub jet: FormalHamiltonian,
    /// Rough size of the discarded part quadratic and higher in f, at unit
    /// amplitude: Σ_d |β^{(d)}(0)|/(d−2)!·(Σ_j a_j‖φ_j‖_∞)^{d−2}.
    pub quadratic_remainder: f64,
}

pub fn expand_h_p(s: &SpectralData, nl: &Nonlinearity, d_jet: u32) -> Result<HpJet> {
    nl.validate()?;
    if !nl.available_to(d_jet) {
        return Err(Error::Config(format!(
            "jet order {d_jet} exceeds the available Taylor data (j_max = {:?})",
            nl.j_max
        )));
    }
    let n = s.n_bound;
    let omega = s.omegas();
    let a: Vec<f64> = omega.iter().map(|w| 1.0 / (2.0 * w).sqrt()).collect();
    let phis: Vec<Vec<f64>> = (0..n).map(|j| s.bound_state(j)).collect();
    let mut jet = FormalHamiltonian::zero(n, d_jet);
    let mut quadratic_remainder = 0.0;
    let sup: f64 = (0..n)
        .map(|j| a[j] * phis[j].iter().fold(0.0f64, |m, x| m.max(x.abs())))
        .sum();

    // φ^α products and B^{-1/2}P_c φ^α, shared across splittings α = μ+ν.
    let mut power_cache: BTreeMap<Exponent, Vec<f64>> = BTreeMap::new();
    let mut power = |alpha: &Exponent| -> Vec<f64> {
        power_cache
            .entry(alpha.clone())
            .or_insert_with(|| {
                let mut p = vec![1.0; s.dim()];
                for (j, &e) in alpha.iter().enumerate() {
                    for (x, f) in p.iter_mut().zip(&phis[j]) {
                        *x *= f.powi(e as i32);
                    }
                }
                p
            })
            .clone()
    };
    let mut field_cache: BTreeMap<Exponent, Vec<C64>> = BTreeMap::new();

    for d in 3..=d_jet {
        let bd = nl.derivative(d);
        if bd == 0.0 {
            continue;
        }
        if d >= 2 {
            quadratic_remainder += bd.abs() / factorial(d - 2) * sup.powi(d as i32 - 2);
        }
        if n == 0 {
            continue;
        }
        for alpha in exponents_of_degree(n, d) {
            let integral = s.h() * power(&alpha).iter().sum::<f64>();
            let weight: f64 = alpha.iter().zip(&a).map(|(&e, x)| x.powi(e as i32)).product();
            for_each_split(&alpha, |mu, nu| {
                let fact: f64 = mu.iter().chain(nu).map(|&e| factorial(e)).product();
                jet.add_scalar(mu.to_vec(), nu.to_vec(), C64::new(bd * weight / fact * integral, 0.0));
            });
        }
        for alpha in exponents_of_degree(n, d - 1) {
            let g = field_cache
                .entry(alpha.clone())
                .or_insert_with(|| {
                    let p = power(&alpha);
                    SpectralData::to_complex(&s.apply_b_power_real(-0.5, &p))
                })
                .clone();
            let weight: f64 = alpha.iter().zip(&a).map(|(&e, x)| x.powi(e as i32)).product();
            for_each_split(&alpha, |mu, nu| {
                let fact: f64 = mu.iter().chain(nu).map(|&e| factorial(e)).product();
                let c = C64::new(bd * weight / (fact * std::f64::consts::SQRT_2), 0.0);
                jet.add_field(Kind::F, mu.to_vec(), nu.to_vec(), &g, c);
                jet.add_field(Kind::FBar, mu.to_vec(), nu.to_vec(), &g, c);
            });
        }
    }
    jet.prune();
    Ok(HpJet {
        jet,
        quadratic_remainder,
    })
}

/// Every split α = μ + ν with μ, ν ∈ ℕ₀ⁿ.
pub fn for_each_split(alpha: &[u32], mut f: impl FnMut(&[u32], &[u32])) {
    fn rec(i: usize, alpha: &[u32], mu: &mut Vec<u32>, nu: &mut Vec<u32>, f: &mut impl FnMut(&[u32], &[u32])) {
        if i == alpha.len() {
            f(mu, nu);
            return;
        }
        for k in 0..=alpha[i] {
            mu[i] = k;
            nu[i] = alpha[i] - k;
            rec(i + 1, alpha, mu, nu, f);
        }
    }
    let mut mu = vec![0; alpha.len()];
    let mut nu = vec![0; alpha.len()];
    rec(0, alpha, &mut mu, &mut nu, &mut f);
}
