//! Multi-index arithmetic over the frequency vector: the counts N_j, the
//! non-resonance checks (H3)–(H5), and the resonant catalogues M, M̂, Λ.

use std::collections::BTreeMap;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when comparing frequency combinations.
pub const TOL_RES: f64 = 1e-9;

/// Largest mode count the exhaustive checks accept.
pub const MAX_MODES: usize = 6;

pub type Exponent = Vec<u32>;

pub fn abs_norm(mu: &[i64]) -> i64 {
    mu.iter().map(|x| x.abs()).sum()
}

pub fn degree(mu: &[u32]) -> u32 {
    mu.iter().sum()
}

pub fn dot_omega(mu: &[u32], omega: &[f64]) -> f64 {
    mu.iter().zip(omega).map(|(&a, w)| a as f64 * w).sum()
}

fn dot_signed(mu: &[i64], omega: &[f64]) -> f64 {
    mu.iter().zip(omega).map(|(&a, w)| a as f64 * w).sum()
}

/// N_j = ⌊m/ω_j⌋ and N = max_j N_j.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeCounts {
    pub per_mode: Vec<u32>,
    pub n: u32,
}

pub fn compute_n(omega: &[f64], m: f64) -> Result<ModeCounts> {
    if omega.is_empty() {
        return Err(Error::Precondition("no discrete modes".into()));
    }
    let mut per_mode = Vec::with_capacity(omega.len());
    for (j, &w) in omega.iter().enumerate() {
        if !(w > 0.0 && w < m) {
            return Err(Error::Precondition(format!(
                "frequency ω_{} = {w} must lie in (0, m = {m})",
                j + 1
            )));
        }
        let r = m / w;
        if (r - r.round()).abs() < TOL_RES * r.max(1.0) {
            return Err(Error::hypothesis(
                "H3",
                format!("m/ω_{} = {r} is an integer: {}·ω_{} = m", j + 1, r.round(), j + 1),
            ));
        }
        per_mode.push(r.floor() as u32);
    }
    let n = *per_mode.iter().max().unwrap();
    Ok(ModeCounts { per_mode, n })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    /// Violating multi-index (signed).
    pub mu: Vec<i64>,
    /// |μ·ω − target| in floating point.
    pub residual: f64,
    /// Whether the relation holds exactly for the frequencies rounded to
    /// nine decimals and read as rationals.
    pub certified: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub holds: bool,
    pub witness: Option<Witness>,
}

impl Verdict {
    fn ok() -> Self {
        Verdict {
            holds: true,
            witness: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceReport {
    pub omega: Vec<f64>,
    pub mass: f64,
    /// ⌊m/ω_j⌋, computed even when (H3) fails.
    pub n_per_mode: Vec<u32>,
    pub n: u32,
    pub h3: Verdict,
    pub h4: Verdict,
    pub h5: Verdict,
    pub degree_cap: u32,
    /// "2N+3" for the default cap, "override" otherwise.
    pub cap_source: String,
}

impl ResonanceReport {
    pub fn all_hold(&self) -> bool {
        self.h3.holds && self.h4.holds && self.h5.holds
    }

    /// First failing hypothesis as an error, if any.
    pub fn as_error(&self) -> Option<Error> {
        for (name, v) in [("H3", &self.h3), ("H4", &self.h4), ("H5", &self.h5)] {
            if !v.holds {
                let w = v
                    .witness
                    .as_ref()
                    .map(|w| format!("witness μ = {:?} (residual {:.2e})", w.mu, w.residual))
                    .unwrap_or_default();
                return Some(Error::hypothesis(name, w));
            }
        }
        None
    }
}

/// Calls `f` on every μ ∈ ℤⁿ with 0 < |μ| ≤ cap, in a fixed order.
fn for_each_signed(n: usize, cap: i64, f: &mut impl FnMut(&[i64])) {
    fn rec(i: usize, left: i64, cur: &mut Vec<i64>, f: &mut impl FnMut(&[i64])) {
        if i == cur.len() {
            if cur.iter().any(|&x| x != 0) {
                f(cur);
            }
            return;
        }
        for v in -left..=left {
            cur[i] = v;
            rec(i + 1, left - v.abs(), cur, f);
        }
        cur[i] = 0;
    }
    let mut cur = vec![0i64; n];
    rec(0, cap, &mut cur, f);
}

/// Calls `f` on every μ ∈ ℕ₀ⁿ with lo ≤ |μ| ≤ hi.
pub fn for_each_unsigned(n: usize, lo: u32, hi: u32, f: &mut impl FnMut(&[u32])) {
    fn rec(i: usize, left: u32, lo: u32, cur: &mut Vec<u32>, f: &mut impl FnMut(&[u32])) {
        if i == cur.len() {
            if degree(cur) >= lo {
                f(cur);
            }
            return;
        }
        for v in 0..=left {
            cur[i] = v;
            rec(i + 1, left - v, lo, cur, f);
        }
        cur[i] = 0;
    }
    let mut cur = vec![0u32; n];
    rec(0, hi, lo, &mut cur, f);
}

/// Multi-indices of exact total degree d, lexicographically ordered.
pub fn exponents_of_degree(n: usize, d: u32) -> Vec<Exponent> {
    let mut out = Vec::new();
    for_each_unsigned(n, d, d, &mut |mu| out.push(mu.to_vec()));
    out
}

fn to_rational(x: f64) -> Ratio<i128> {
    let scale: i128 = 1_000_000_000;
    Ratio::new((x * scale as f64).round() as i128, scale)
}

fn certify(mu: &[i64], omega: &[f64], target: f64) -> bool {
    let lhs: Ratio<i128> = mu
        .iter()
        .zip(omega)
        .map(|(&a, &w)| Ratio::from_integer(a as i128) * to_rational(w))
        .sum();
    lhs == to_rational(target)
}

/// Prefer the smallest |μ|, then (after sign normalization) the
/// lexicographically largest; deterministic regardless of enumeration.
fn better(a: &[i64], b: &[i64]) -> bool {
    let (na, nb) = (abs_norm(a), abs_norm(b));
    na < nb || (na == nb && a > b)
}

fn normalize_sign(mu: &[i64]) -> Vec<i64> {
    match mu.iter().find(|&&x| x != 0) {
        Some(&x) if x < 0 => mu.iter().map(|v| -v).collect(),
        _ => mu.to_vec(),
    }
}

/// Groups identical frequencies (within TOL_RES) and returns the distinct
/// values in order of first appearance.
pub fn distinct_frequencies(omega: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for &x in omega {
        if !out.iter().any(|&y| (x - y).abs() < TOL_RES * (1.0 + y.abs())) {
            out.push(x);
        }
    }
    out
}

/// Exhaustive check of (H3)–(H5) with degree cap D.
pub fn check_h4_h5(omega: &[f64], m: f64, cap: u32) -> Result<ResonanceReport> {
    check_with_source(omega, m, cap, "override")
}

/// Same as [`check_h4_h5`] with the default cap 2N+3.
pub fn check_default(omega: &[f64], m: f64) -> Result<ResonanceReport> {
    let n = floor_counts(omega, m)?.1;
    check_with_source(omega, m, 2 * n + 3, "2N+3")
}

fn floor_counts(omega: &[f64], m: f64) -> Result<(Vec<u32>, u32)> {
    if omega.is_empty() {
        return Err(Error::Precondition("no discrete modes".into()));
    }
    if omega.len() > MAX_MODES {
        return Err(Error::Precondition(format!(
            "{} modes exceed the enumeration guard of {MAX_MODES}",
            omega.len()
        )));
    }
    let mut per = Vec::new();
    for &w in omega {
        if !(w > 0.0 && w < m) {
            return Err(Error::Precondition(format!("frequency {w} must lie in (0, m = {m})")));
        }
        per.push((m / w).floor() as u32);
    }
    let n = *per.iter().max().unwrap();
    Ok((per, n))
}

fn check_with_source(omega: &[f64], m: f64, cap: u32, source: &str) -> Result<ResonanceReport> {
    if cap < 2 {
        return Err(Error::Precondition(format!("degree cap {cap} < 2")));
    }
    let (n_per_mode, n) = floor_counts(omega, m)?;

    let h3 = match compute_n(omega, m) {
        Ok(_) => Verdict::ok(),
        Err(_) => {
            let (j, w) = omega
                .iter()
                .enumerate()
                .find(|(_, &w)| {
                    let r = m / w;
                    (r - r.round()).abs() < TOL_RES * r.max(1.0)
                })
                .unwrap();
            let mut mu = vec![0i64; omega.len()];
            mu[j] = (m / w).round() as i64;
            Verdict {
                holds: false,
                witness: Some(Witness {
                    residual: (dot_signed(&mu, omega) - m).abs(),
                    certified: certify(&mu, omega, m),
                    mu,
                }),
            }
        }
    };

    let mut h4_best: Option<Vec<i64>> = None;
    for_each_signed(omega.len(), cap as i64, &mut |mu| {
        let norm = abs_norm(mu) as f64;
        if (dot_signed(mu, omega) - m).abs() < TOL_RES * (1.0 + norm)
            && h4_best.as_deref().is_none_or(|b| better(mu, b))
        {
            h4_best = Some(mu.to_vec());
        }
    });
    let mut h4 = match h4_best {
        None => Verdict::ok(),
        Some(mu) => Verdict {
            holds: false,
            witness: Some(Witness {
                residual: (dot_signed(&mu, omega) - m).abs(),
                certified: certify(&mu, omega, m),
                mu,
            }),
        },
    };
    if h4.holds && !h3.holds {
        // (H3) is the special case μ = N e_j of (H4).
        h4 = h3.clone();
    }

    let w = distinct_frequencies(omega);
    let mut h5_best: Option<Vec<i64>> = None;
    for_each_signed(w.len(), cap as i64, &mut |mu| {
        let norm = abs_norm(mu) as f64;
        if dot_signed(mu, &w).abs() < TOL_RES * (1.0 + norm) {
            let mu = normalize_sign(mu);
            if h5_best.as_deref().is_none_or(|b| better(&mu, b)) {
                h5_best = Some(mu);
            }
        }
    });
    let h5 = match h5_best {
        None => Verdict::ok(),
        Some(mu) => Verdict {
            holds: false,
            witness: Some(Witness {
                residual: dot_signed(&mu, &w).abs(),
                certified: certify(&mu, &w, 0.0),
                mu,
            }),
        },
    };

    Ok(ResonanceReport {
        omega: omega.to_vec(),
        mass: m,
        n_per_mode,
        n,
        h3,
        h4,
        h5,
        degree_cap: cap,
        cap_source: source.to_string(),
    })
}

/// Exact-arithmetic variant for rational frequencies. Returns the violating
/// multi-indices for (H4) and (H5) (with clustering of equal frequencies),
/// or `None` when the relation holds up to the cap.
pub fn exact_violations(
    omega: &[Ratio<i64>],
    m: Ratio<i64>,
    cap: u32,
) -> (Option<Vec<i64>>, Option<Vec<i64>>) {
    let mut distinct: Vec<Ratio<i64>> = Vec::new();
    for w in omega {
        if !distinct.contains(w) {
            distinct.push(*w);
        }
    }
    let eval = |mu: &[i64], w: &[Ratio<i64>]| -> Ratio<i64> {
        mu.iter().zip(w).map(|(&a, &x)| Ratio::from_integer(a) * x).sum()
    };
    let mut h4 = None;
    for_each_signed(omega.len(), cap as i64, &mut |mu| {
        if eval(mu, omega) == m && h4.as_deref().is_none_or(|b| better(mu, b)) {
            h4 = Some(mu.to_vec());
        }
    });
    let mut h5 = None;
    for_each_signed(distinct.len(), cap as i64, &mut |mu| {
        if eval(mu, &distinct) == Ratio::from_integer(0) {
            let mu = normalize_sign(mu);
            if h5.as_deref().is_none_or(|b| better(&mu, b)) {
                h5 = Some(mu);
            }
        }
    });
    (h4, h5)
}

/// The resonant catalogues.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiIndexSet {
    pub omega: Vec<f64>,
    pub mass: f64,
    pub cap: u32,
    /// All μ with μ·ω > m and 2 ≤ |μ| ≤ cap, lexicographically sorted.
    pub m_set: Vec<Exponent>,
    /// Minimal elements of M.
    pub m_hat: Vec<Exponent>,
    /// Distinct energies of M (ascending) with their fibers.
    pub lambda: Vec<f64>,
    pub fibers: Vec<Vec<Exponent>>,
    /// Distinct energies of M̂ (ascending) with their fibers.
    pub lambda_hat: Vec<f64>,
    pub fibers_hat: Vec<Vec<Exponent>>,
}

impl MultiIndexSet {
    pub fn contains(&self, mu: &[u32]) -> bool {
        self.m_set.binary_search_by(|x| x.as_slice().cmp(mu)).is_ok()
    }

    /// Energy λ = ω·μ.
    pub fn energy(&self, mu: &[u32]) -> f64 {
        dot_omega(mu, &self.omega)
    }

    /// Index into `lambda` of the energy of μ.
    pub fn lambda_index(&self, mu: &[u32]) -> Option<usize> {
        self.fibers.iter().position(|f| f.iter().any(|x| x == mu))
    }
}

/// M, M̂, Λ, Λ̂ with cap 2N+3.
pub fn enumerate_m(omega: &[f64], m: f64, n: u32) -> Result<MultiIndexSet> {
    enumerate_m_with_cap(omega, m, 2 * n + 3)
}

pub fn enumerate_m_with_cap(omega: &[f64], m: f64, cap: u32) -> Result<MultiIndexSet> {
    compute_n(omega, m)?;
    let mut m_set = Vec::new();
    let above = |mu: &[u32]| degree(mu) >= 2 && dot_omega(mu, omega) > m;
    for_each_unsigned(omega.len(), 2, cap, &mut |mu| {
        if above(mu) {
            m_set.push(mu.to_vec());
        }
    });
    m_set.sort();
    let m_hat: Vec<Exponent> = m_set
        .iter()
        .filter(|mu| {
            (0..mu.len()).all(|j| {
                if mu[j] == 0 {
                    return true;
                }
                let mut nu = (*mu).clone();
                nu[j] -= 1;
                !above(&nu)
            })
        })
        .cloned()
        .collect();
    let (lambda, fibers) = cluster(&m_set, omega);
    let (lambda_hat, fibers_hat) = cluster(&m_hat, omega);
    Ok(MultiIndexSet {
        omega: omega.to_vec(),
        mass: m,
        cap,
        m_set,
        m_hat,
        lambda,
        fibers,
        lambda_hat,
        fibers_hat,
    })
}

fn cluster(set: &[Exponent], omega: &[f64]) -> (Vec<f64>, Vec<Vec<Exponent>>) {
    let mut pairs: Vec<(f64, Exponent)> = set.iter().map(|mu| (dot_omega(mu, omega), mu.clone())).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    let mut groups: BTreeMap<usize, Vec<Exponent>> = BTreeMap::new();
    let mut energies: Vec<f64> = Vec::new();
    for (e, mu) in pairs {
        match energies.last() {
            Some(&last) if (e - last).abs() < TOL_RES * (1.0 + last.abs()) => {
                groups.get_mut(&(energies.len() - 1)).unwrap().push(mu);
            }
            _ => {
                energies.push(e);
                groups.insert(energies.len() - 1, vec![mu]);
            }
        }
    }
    let mut fibers: Vec<Vec<Exponent>> = groups.into_values().collect();
    fibers.iter_mut().for_each(|f| f.sort());
    (energies, fibers)
}
