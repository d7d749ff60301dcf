//! Uniform 1-D grid, potential presets and the discrete operator −Δ + V + m².

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid on [−L, L] with Dirichlet walls at both end nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub half_width: f64,
    pub points: usize,
}

impl Grid1D {
    pub fn new(half_width: f64, points: usize) -> Result<Self> {
        if points < 16 {
            return Err(Error::Config(format!("grid needs at least 16 points, got {points}")));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::Config(format!("half width must be positive, got {half_width}")));
        }
        Ok(Grid1D { half_width, points })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.points - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        // Written symmetrically so that x_i = −x_{N−1−i} holds bit-for-bit.
        let n1 = (self.points - 1) as f64;
        self.half_width * (2.0 * i as f64 - n1) / n1
    }

    /// Number of unknowns once the two wall nodes are removed.
    pub fn interior_len(&self) -> usize {
        self.points - 2
    }

    /// Coordinates of the interior nodes x_1 … x_{N−2}.
    pub fn interior_nodes(&self) -> Vec<f64> {
        (1..self.points - 1).map(|i| self.node(i)).collect()
    }
}

/// Analytic potential families. `depth` is the well depth (V ≤ 0), `width`
/// the length scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialKind {
    Free,
    /// V(x) = −depth·sech²(x/width). With width = 1 and depth = ℓ(ℓ+1) the
    /// bound states sit at −(ℓ−j)², j < ℓ.
    PoschlTeller { depth: f64, width: f64 },
    /// V(x) = −depth·exp(−x²/(2 width²)).
    GaussianWell { depth: f64, width: f64 },
    /// Sum of two Gaussian wells centred at ±offset with unequal depths; breaks parity.
    DoubleGaussian {
        depth_left: f64,
        depth_right: f64,
        width: f64,
        offset: f64,
    },
}

impl PotentialKind {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            PotentialKind::Free => 0.0,
            PotentialKind::PoschlTeller { depth, width } => {
                let s = 1.0 / (x / width).cosh();
                -depth * s * s
            }
            PotentialKind::GaussianWell { depth, width } => {
                -depth * (-(x * x) / (2.0 * width * width)).exp()
            }
            PotentialKind::DoubleGaussian {
                depth_left,
                depth_right,
                width,
                offset,
            } => {
                let g = |c: f64| (-((x - c) * (x - c)) / (2.0 * width * width)).exp();
                -depth_left * g(-offset) - depth_right * g(offset)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PotentialKind::Free => "free",
            PotentialKind::PoschlTeller { .. } => "poschl_teller",
            PotentialKind::GaussianWell { .. } => "gaussian_well",
            PotentialKind::DoubleGaussian { .. } => "double_gaussian",
        }
    }
}

/// Potential sampled on the interior nodes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Potential {
    #[serde(with = "kind_as_json")]
    pub kind: PotentialKind,
    pub values: Vec<f64>,
    /// Estimated exponential decay rate of |V| in the tails, 1/length.
    /// Infinite for V ≡ 0, large for super-exponential decay.
    pub decay_rate: f64,
}

/// The tagged enum needs a self-describing format; binary caches (bincode)
/// are not, so the kind is carried as a JSON string there.
mod kind_as_json {
    use super::PotentialKind;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(k: &PotentialKind, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&serde_json::to_string(k).map_err(serde::ser::Error::custom)?)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<PotentialKind, D::Error> {
        let text = String::deserialize(d)?;
        serde_json::from_str(&text).map_err(D::Error::custom)
    }
}

impl Potential {
    pub fn sample(kind: PotentialKind, grid: &Grid1D) -> Result<Self> {
        let values: Vec<f64> = grid.interior_nodes().iter().map(|&x| kind.eval(x)).collect();
        let vmax = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("potential has non-finite samples".into()));
        }
        let mut decay_rate = f64::INFINITY;
        if vmax > 0.0 {
            let edge = kind
                .eval(-grid.half_width)
                .abs()
                .max(kind.eval(grid.half_width).abs());
            if edge >= 1e-8 * vmax {
                return Err(Error::Config(format!(
                    "potential not short-range on this box: |V(±L)| = {edge:.3e} exceeds 1e-8·max|V| = {:.3e}; enlarge half_width",
                    1e-8 * vmax
                )));
            }
            decay_rate = estimate_decay_rate(&kind, grid.half_width, vmax);
        }
        Ok(Potential {
            kind,
            values,
            decay_rate,
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

/// Slope of −ln|V| between the points where |V| has fallen to 1e-3 and 1e-6
/// of its maximum, on the right tail.
fn estimate_decay_rate(kind: &PotentialKind, half_width: f64, vmax: f64) -> f64 {
    let find = |level: f64| -> Option<f64> {
        let steps = 4000;
        let mut last = None;
        for s in 0..=steps {
            let x = half_width * s as f64 / steps as f64;
            if kind.eval(x).abs() >= level * vmax {
                last = Some(x);
            }
        }
        last
    };
    match (find(1e-3), find(1e-6)) {
        (Some(a), Some(b)) if b > a => {
            let va = kind.eval(a).abs();
            let vb = kind.eval(b).abs();
            (va / vb).ln() / (b - a)
        }
        _ => f64::INFINITY,
    }
}

/// The discrete operator H₀ = −Δ + V + m² on the interior nodes, stored as
/// a symmetric pentadiagonal band.
///
/// −Δ uses the fourth-order stencil (u₋₂ − 16u₋₁ + 30u₀ − 16u₁ + u₂)/(12h²).
/// Ghost values beyond the walls follow odd reflection (u(−x) = −u(x) about
/// each wall), which keeps the matrix symmetric and makes the discrete sine
/// modes exact eigenvectors when V = 0.
#[derive(Clone, Debug)]
pub struct Operator {
    pub diag: Vec<f64>,
    pub off1: f64,
    pub off2: f64,
    pub mass: f64,
}

pub fn assemble_operator(grid: &Grid1D, pot: &Potential, mass: f64) -> Result<Operator> {
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::Config(format!("mass must be positive, got {mass}")));
    }
    let n = grid.interior_len();
    if pot.values.len() != n {
        return Err(Error::Config("potential was sampled on a different grid".into()));
    }
    let h = grid.spacing();
    if h * pot.max_abs().sqrt() > 0.5 {
        return Err(Error::Config(format!(
            "grid too coarse for the potential: h·max√|V| = {:.3} > 0.5",
            h * pot.max_abs().sqrt()
        )));
    }
    let c = 1.0 / (12.0 * h * h);
    let mut diag: Vec<f64> = pot.values.iter().map(|v| 30.0 * c + v + mass * mass).collect();
    // Ghost node u₋₁ = −u₁ folds into the first and last diagonal entries.
    diag[0] -= c;
    diag[n - 1] -= c;
    Ok(Operator {
        diag,
        off1: -16.0 * c,
        off2: c,
        mass,
    })
}

impl Operator {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut s = self.diag[i] * u[i];
            if i >= 1 {
                s += self.off1 * u[i - 1];
            }
            if i + 1 < n {
                s += self.off1 * u[i + 1];
            }
            if i >= 2 {
                s += self.off2 * u[i - 2];
            }
            if i + 2 < n {
                s += self.off2 * u[i + 2];
            }
            out[i] = s;
        }
        out
    }

    /// Dense copy of −Δ + V (without the m² shift), row-major.
    pub fn dense_schrodinger(&self) -> Vec<f64> {
        let n = self.len();
        let m2 = self.mass * self.mass;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = self.diag[i] - m2;
            if i + 1 < n {
                a[i * n + i + 1] = self.off1;
                a[(i + 1) * n + i] = self.off1;
            }
            if i + 2 < n {
                a[i * n + i + 2] = self.off2;
                a[(i + 2) * n + i] = self.off2;
            }
        }
        a
    }
}
