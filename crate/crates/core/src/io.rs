//! Configuration, caching, run reports and the three pipeline stages
//! (spectrum → fgr → evolve) shared by the command-line front end and the
//! tests. This is the only module that touches the file system.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{
    compare_with_diagnostics, initial_from_modes, integrate_reduced, run_pde, single_mode_decay, Comparison,
    OdeOptions, PdeRunOptions, ReducedModel, RunDiagnostics, Sponge,
};
use crate::error::{Error, Result};
use crate::grid::{Grid1D, Potential, PotentialKind};
use crate::jets::{expand_h_p, MonomialDump, Nonlinearity};
use crate::normalform::{birkhoff_normalize, NormalFormResult, StepLog};
use crate::resonance::{check_default, degree, enumerate_m, Exponent, MultiIndexSet, ResonanceReport};
use crate::scattering::{fgr_matrix, genericity_scan, model_coefficients, FgrData, GenericityScan, ModelCoefficients};
use crate::spectral::SpectralData;

/// Environment variable naming the spectral cache directory.
pub const CACHE_ENV: &str = "NLKG_CACHE_DIR";

// ---------------------------------------------------------------------------
// Configuration

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub half_width: f64,
    pub points: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosedFormKind {
    #[default]
    Polynomial,
    Saturating,
}

/// β(u) = Σ a_j u^j (`taylor`, keys are the powers j) or c·u⁴/(1+u²).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearityConfig {
    #[serde(default)]
    pub taylor: BTreeMap<String, f64>,
    #[serde(default)]
    pub closed_form: ClosedFormKind,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub j_max: Option<u32>,
    #[serde(default)]
    pub allow_cubic: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalFormConfig {
    /// Number of normalization steps r (default 2N, clipped to the jet).
    #[serde(default)]
    pub order: Option<u32>,
    /// Jet degree (default 2N + 4).
    #[serde(default)]
    pub jet_order: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub mu: Vec<u32>,
    pub from: f64,
    pub to: f64,
    #[serde(default = "default_scan_points")]
    pub points: usize,
}

fn default_scan_points() -> usize {
    9
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FgrConfig {
    #[serde(default)]
    pub scan: Option<ScanConfig>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvolveMode {
    Pde,
    Reduced,
    #[default]
    Both,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpongeMode {
    /// On when the run is longer than the half-width (radiation reaches the wall).
    #[default]
    Auto,
    On,
    Off,
}

/// Single-mode reduced model η̇ = −iωη + ipc|η|^{2p−2}η with c = iΓ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyModel {
    pub omega: f64,
    pub p: u32,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveConfig {
    #[serde(default)]
    pub mode: EvolveMode,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// ξ_j(0) = ε·(re, im)_j; defaults to (1, 0) for every mode.
    #[serde(default)]
    pub amplitudes: Vec<[f64; 2]>,
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_sample_every")]
    pub sample_every: usize,
    #[serde(default)]
    pub sponge: SpongeMode,
    #[serde(default = "default_sponge_strength")]
    pub sponge_strength: f64,
    #[serde(default)]
    pub toy: Option<ToyModel>,
}

fn default_epsilon() -> f64 {
    0.05
}
fn default_t_final() -> f64 {
    100.0
}
fn default_dt() -> f64 {
    0.01
}
fn default_sample_every() -> usize {
    10
}
fn default_sponge_strength() -> f64 {
    Sponge::default().strength
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig {
            mode: EvolveMode::default(),
            epsilon: default_epsilon(),
            amplitudes: Vec::new(),
            t_final: default_t_final(),
            dt: default_dt(),
            sample_every: default_sample_every(),
            sponge: SpongeMode::default(),
            sponge_strength: default_sponge_strength(),
            toy: None,
        }
    }
}

/// Tolerances that can be overridden per run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_ode_tol")]
    pub ode_rtol: f64,
    #[serde(default = "default_ode_tol")]
    pub ode_atol: f64,
}

fn default_ode_tol() -> f64 {
    1e-10
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            ode_rtol: default_ode_tol(),
            ode_atol: default_ode_tol(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: String,
    pub mass: f64,
    /// Replace `mass` by the value for which m = k·ω₁ holds exactly on the
    /// grid (a deliberately resonant configuration).
    #[serde(default)]
    pub mass_harmonic: Option<u32>,
    pub potential: PotentialKind,
    pub grid: GridConfig,
    #[serde(default)]
    pub nonlinearity: NonlinearityConfig,
    #[serde(default)]
    pub normal_form: NormalFormConfig,
    #[serde(default)]
    pub fgr: FgrConfig,
    #[serde(default)]
    pub evolve: EvolveConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

pub const PRESETS: &[&str] = &["free", "pt-single", "pt-fgr", "pt-two-mode", "pt-resonant", "toy-reduced"];

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn preset(name: &str) -> Result<Self> {
        let pt = |depth: f64| PotentialKind::PoschlTeller { depth, width: 1.0 };
        let quartic = || NonlinearityConfig {
            taylor: BTreeMap::from([("4".to_string(), 1.0)]),
            ..Default::default()
        };
        let base = |name: &str, mass: f64, potential: PotentialKind, half_width: f64, points: usize| RunConfig {
            name: name.into(),
            mass,
            mass_harmonic: None,
            potential,
            grid: GridConfig { half_width, points },
            nonlinearity: quartic(),
            normal_form: NormalFormConfig::default(),
            fgr: FgrConfig::default(),
            evolve: EvolveConfig::default(),
            tolerances: Tolerances::default(),
            output_dir: None,
            seed: 0,
        };
        let cfg = match name {
            "free" => base(name, 1.0, PotentialKind::Free, 40.0, 512),
            // ω = 0.75, N = 1, M̂ = {2}.
            "pt-single" => base(name, 1.25, pt(2.0), 30.0, 512),
            // ω = √0.21, N = 2, M̂ = {3}: the first channel fed by a quartic β.
            "pt-fgr" => base(name, 1.1, pt(2.0), 40.0, 768),
            // ω = (1.5, √5.25).
            "pt-two-mode" => base(name, 2.5, pt(6.0), 30.0, 768),
            // m = 2ω exactly on the grid: (H3) fails.
            "pt-resonant" => {
                let mut c = base(name, 2.0 / 3f64.sqrt(), pt(2.0), 30.0, 256);
                c.mass_harmonic = Some(2);
                c
            }
            "toy-reduced" => {
                let mut c = base(name, 1.25, pt(2.0), 30.0, 256);
                c.evolve.mode = EvolveMode::Reduced;
                c.evolve.epsilon = 1.0;
                c.evolve.t_final = 1.0;
                c.evolve.toy = Some(ToyModel {
                    omega: 0.75,
                    p: 3,
                    gamma: 1.0,
                });
                c
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown preset '{other}'; known presets: {}",
                    PRESETS.join(", ")
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        if !(self.mass > 0.0) || !self.mass.is_finite() {
            return bad("mass", format!("must be positive, got {}", self.mass));
        }
        if self.mass_harmonic.is_some_and(|k| k < 2) {
            return bad("mass_harmonic", "must be at least 2".into());
        }
        Grid1D::new(self.grid.half_width, self.grid.points).map_err(|e| Error::Config(format!("grid: {e}")))?;
        self.nonlinearity().map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("nonlinearity: {m}")),
            other => other,
        })?;
        let ev = &self.evolve;
        if !(ev.epsilon > 0.0) {
            return bad("evolve.epsilon", format!("must be positive, got {}", ev.epsilon));
        }
        if !(ev.t_final > 0.0) {
            return bad("evolve.t_final", format!("must be positive, got {}", ev.t_final));
        }
        if !(ev.dt > 0.0) {
            return bad("evolve.dt", format!("must be positive, got {}", ev.dt));
        }
        if ev.sample_every == 0 {
            return bad("evolve.sample_every", "must be at least 1".into());
        }
        if let Some(toy) = &ev.toy {
            if toy.p < 2 || !(toy.omega > 0.0) || toy.gamma < 0.0 {
                return bad("evolve.toy", "needs p ≥ 2, ω > 0 and Γ ≥ 0".into());
            }
        }
        if let Some(scan) = &self.fgr.scan {
            if scan.points < 3 || !(scan.to > scan.from) {
                return bad("fgr.scan", "needs at least 3 points and from < to".into());
            }
        }
        let t = &self.tolerances;
        if !(t.ode_rtol > 0.0 && t.ode_atol > 0.0) {
            return bad("tolerances", "ODE tolerances must be positive".into());
        }
        Ok(())
    }

    pub fn nonlinearity(&self) -> Result<Nonlinearity> {
        let nc = &self.nonlinearity;
        let mut coeffs = Vec::new();
        for (k, v) in &nc.taylor {
            let j: u32 = k
                .parse()
                .map_err(|_| Error::Config(format!("taylor key '{k}' is not a power")))?;
            coeffs.push((j, *v));
        }
        let mut nl = match nc.closed_form {
            ClosedFormKind::Polynomial => {
                let mut nl = Nonlinearity::zero();
                nl.allow_cubic = nc.allow_cubic;
                for (j, a) in coeffs {
                    if a != 0.0 {
                        nl.set_derivative(j, a * (1..=j).map(|k| k as f64).product::<f64>());
                    }
                }
                nl
            }
            ClosedFormKind::Saturating => {
                let c = nc
                    .c
                    .ok_or_else(|| Error::Config("saturating nonlinearity needs `c`".into()))?;
                if !coeffs.is_empty() {
                    return Err(Error::Config("saturating nonlinearity takes no taylor table".into()));
                }
                Nonlinearity::saturating(c, nc.j_max.unwrap_or(16))
            }
        };
        nl.allow_cubic = nc.allow_cubic;
        nl.validate()?;
        Ok(nl)
    }

    pub fn grid(&self) -> Grid1D {
        Grid1D {
            half_width: self.grid.half_width,
            points: self.grid.points,
        }
    }

    /// SHA-256 of the canonical JSON rendering (output directory excluded).
    pub fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        sha256_hex(serde_json::to_string(&c).expect("serializable").as_bytes())
    }

    /// Hash of the inputs the spectral decomposition depends on.
    pub fn spectral_key(&self) -> String {
        let key = serde_json::json!({
            "grid": self.grid,
            "potential": self.potential,
            "mass": self.mass,
            "format": 1,
        });
        sha256_hex(key.to_string().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

// ---------------------------------------------------------------------------
// Spectral cache

pub fn cache_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).map(PathBuf::from)
}

/// Loads the decomposition from `dir` when present, computes and stores it
/// otherwise. Returns the data and whether it came from the cache.
pub fn load_or_build_spectrum(cfg: &RunConfig, dir: Option<&Path>) -> Result<(SpectralData, bool)> {
    let grid = cfg.grid();
    let path = dir.map(|d| d.join(format!("spectral-{}.bin", cfg.spectral_key())));
    if let Some(p) = &path {
        if let Ok(bytes) = std::fs::read(p) {
            if let Ok(s) = bincode::deserialize::<SpectralData>(&bytes) {
                return Ok((s, true));
            }
        }
    }
    let pot = Potential::sample(cfg.potential.clone(), &grid)?;
    let s = SpectralData::build(grid, pot, cfg.mass)?;
    if let Some(p) = &path {
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let bytes = bincode::serialize(&s).map_err(|e| Error::Serialization(e.to_string()))?;
        // Write-then-rename so concurrent sweeps never read a partial file.
        let tmp = p.with_extension(format!("tmp{}", std::process::id()));
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, p)?;
    }
    Ok((s, false))
}

// ---------------------------------------------------------------------------
// Report

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SpectrumSection {
    /// Mass actually used (differs from the config under `mass_harmonic`).
    pub mass: f64,
    pub dimension: usize,
    pub spacing: f64,
    pub n_bound: usize,
    pub bound_eigenvalues: Vec<f64>,
    pub omega: Vec<f64>,
    pub lowest_continuum_b: Vec<f64>,
    pub tol_edge: f64,
    pub threshold_clear: bool,
    pub decay_rate: f64,
    pub cache_hit: bool,
    pub note: Option<String>,
    pub resonance: Option<ResonanceReport>,
    pub n: Option<u32>,
    pub m_hat: Vec<Exponent>,
    pub lambda_hat: Vec<f64>,
    pub m_size: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CouplingNorm {
    pub mu: Exponent,
    pub energy: f64,
    pub l2_norm: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct NormalFormSection {
    pub jet_order: u32,
    pub order: u32,
    pub lowest_degree: u32,
    pub steps: Vec<StepLog>,
    pub z0: Vec<MonomialDump>,
    pub couplings: Vec<CouplingNorm>,
    pub quadratic_remainder: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FgrSection {
    pub degenerate: bool,
    pub data: Option<FgrData>,
    pub plemelj_gap: Option<f64>,
    pub resonant_diagonal: Vec<(Exponent, [f64; 2])>,
    pub scan: Option<GenericityScan>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EvolveSection {
    pub mode: EvolveMode,
    pub xi0: Vec<[f64; 2]>,
    pub sponge: bool,
    pub pde_energy_drift: Option<f64>,
    pub absorbed: Option<f64>,
    pub l2_in_time: Vec<(Exponent, f64)>,
    pub reduced_final: Vec<f64>,
    pub closed_form_final: Option<f64>,
    pub closed_form_error: Option<f64>,
    pub comparison: Option<Comparison>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub config: Option<RunConfig>,
    pub content_hash: String,
    pub spectrum: Option<SpectrumSection>,
    pub normal_form: Option<NormalFormSection>,
    pub fgr: Option<FgrSection>,
    pub evolve: Option<EvolveSection>,
    pub verdict: Option<String>,
    pub files: Vec<String>,
}

fn e(x: f64) -> String {
    format!("{x:.6e}")
}

impl RunReport {
    pub fn new(cfg: &RunConfig) -> Self {
        RunReport {
            config: Some(cfg.clone()),
            content_hash: cfg.content_hash(),
            ..Default::default()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn to_text(&self) -> String {
        let mut t = String::new();
        let _ = writeln!(t, "run {}", self.content_hash);
        if let Some(c) = &self.config {
            let _ = writeln!(t, "config: {} (m = {}, {})", c.name, c.mass, c.potential.name());
        }
        if let Some(s) = &self.spectrum {
            let _ = writeln!(t, "[spectrum]");
            let _ = writeln!(t, "  mass {}  grid unknowns {}  h = {}", e(s.mass), s.dimension, e(s.spacing));
            let _ = writeln!(t, "  bound states {}  (threshold clear: {})", s.n_bound, s.threshold_clear);
            for (j, w) in s.omega.iter().enumerate() {
                let _ = writeln!(t, "  omega[{j}] = {}", e(*w));
            }
            if let Some(note) = &s.note {
                let _ = writeln!(t, "  note: {note}");
            }
            if let Some(n) = s.n {
                let _ = writeln!(t, "  N = {n}");
            }
            if let Some(r) = &s.resonance {
                let _ = writeln!(t, "  H3 {}  H4 {}  H5 {}", r.h3.holds, r.h4.holds, r.h5.holds);
                for (name, v) in [("H3", &r.h3), ("H4", &r.h4), ("H5", &r.h5)] {
                    if let Some(w) = &v.witness {
                        let _ = writeln!(t, "  {name} witness {:?} residual {}", w.mu, e(w.residual));
                    }
                }
            }
            if !s.m_hat.is_empty() {
                let _ = writeln!(t, "  M-hat {:?}  Lambda-hat {:?}", s.m_hat, s.lambda_hat.iter().map(|x| e(*x)).collect::<Vec<_>>());
            }
        }
        if let Some(n) = &self.normal_form {
            let _ = writeln!(t, "[normal form]");
            let _ = writeln!(t, "  jet order {}  steps {}  lowest degree {}", n.jet_order, n.order, n.lowest_degree);
            for st in &n.steps {
                let _ = writeln!(
                    t,
                    "  degree {}: solved {} kernel {} resonant-field {} residual {} divisor {}",
                    st.degree,
                    st.solved,
                    st.kernel,
                    st.resonant_field,
                    e(st.homological_residual),
                    e(st.smallest_divisor)
                );
            }
            for z in &n.z0 {
                if let Some([re, im]) = z.value {
                    let _ = writeln!(t, "  Z0 {:?} {:?} = {} + {}i", z.mu, z.nu, e(re), e(im));
                }
            }
            for c in &n.couplings {
                let _ = writeln!(t, "  |Phi_{:?}| = {}  (lambda {})", c.mu, e(c.l2_norm), e(c.energy));
            }
        }
        if let Some(f) = &self.fgr {
            let _ = writeln!(t, "[fgr]");
            if f.degenerate {
                let _ = writeln!(t, "  degenerate nonlinearity: Gamma = 0");
            }
            if let Some(d) = &f.data {
                let _ = writeln!(t, "  H7 {}  H7' {}  H7'' {}  threshold {}", d.h7, d.h7_prime, d.h7_double_prime, e(d.threshold));
                for ((mu, g), (_, gd)) in d.gamma.iter().zip(&d.gamma_distorted) {
                    let _ = writeln!(t, "  gamma{:?} = {}  (distorted waves {})", mu, e(*g), e(*gd));
                }
                for b in &d.blocks {
                    let _ = writeln!(
                        t,
                        "  lambda {}: min eig {} trace {} hermitian defect {} disagreement {}",
                        e(b.lambda),
                        e(b.min_eigenvalue),
                        e(b.trace),
                        e(b.hermitian_defect),
                        e(b.disagreement)
                    );
                }
                if d.flagged {
                    let _ = writeln!(t, "  flagged: methods differ by more than 2%");
                }
            }
            if let Some(s) = &f.scan {
                let _ = writeln!(
                    t,
                    "  scan {:?}: quadratic [{}, {}, {}] roots {:?} max residual {} contaminated {}",
                    s.mu,
                    e(s.quadratic[0]),
                    e(s.quadratic[1]),
                    e(s.quadratic[2]),
                    s.roots.iter().map(|x| e(*x)).collect::<Vec<_>>(),
                    e(s.max_residual),
                    s.contaminated
                );
            }
        }
        if let Some(ev) = &self.evolve {
            let _ = writeln!(t, "[evolve]");
            let _ = writeln!(t, "  mode {:?}  sponge {}", ev.mode, ev.sponge);
            if let Some(d) = ev.pde_energy_drift {
                let _ = writeln!(t, "  energy drift {}", e(d));
            }
            if let Some(a) = ev.absorbed {
                let _ = writeln!(t, "  absorbed {}", e(a));
            }
            for (mu, v) in &ev.l2_in_time {
                let _ = writeln!(t, "  |xi^{:?}|_L2(0,T) = {}", mu, e(*v));
            }
            if !ev.reduced_final.is_empty() {
                let _ = writeln!(t, "  reduced |eta|^2 final {:?}", ev.reduced_final.iter().map(|x| e(*x)).collect::<Vec<_>>());
            }
            if let (Some(c), Some(err)) = (ev.closed_form_final, ev.closed_form_error) {
                let _ = writeln!(t, "  closed form {}  error {}", e(c), e(err));
            }
            if let Some(c) = &ev.comparison {
                let opt = |x: Option<f64>| x.map(e).unwrap_or_else(|| "-".into());
                let _ = writeln!(t, "  monotone after t0 = {}: {}", e(c.t0), c.pde_monotone);
                let _ = writeln!(
                    t,
                    "  exponents: pde {}  reduced {}  law {}",
                    opt(c.pde_exponent),
                    opt(c.reduced_exponent),
                    opt(c.law_exponent)
                );
                let _ = writeln!(
                    t,
                    "  transfer: pde {}  reduced {}  ratio {}  divergence time {}",
                    e(c.pde_transfer),
                    e(c.reduced_transfer),
                    opt(c.transfer_ratio),
                    opt(c.divergence_time)
                );
            }
        }
        if let Some(v) = &self.verdict {
            let _ = writeln!(t, "verdict: {v}");
        }
        if !self.files.is_empty() {
            let _ = writeln!(t, "files: {}", self.files.join(", "));
        }
        t
    }
}

// ---------------------------------------------------------------------------
// CSV

pub fn diagnostics_csv(d: &RunDiagnostics) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let n = d.rows.first().map(|r| r.xi_sq.len()).unwrap_or(0);
    let mut header = vec!["t".to_string(), "H".into(), "absorbed".into(), "H0L".into()];
    header.extend((0..n).map(|j| format!("abs_xi{j}_sq")));
    header.extend(["f_norm".to_string(), "predicted".into(), "residual".into()]);
    header.extend(d.tracked.iter().map(|mu| format!("accum_{}", exponent_label(mu))));
    w.write_record(&header).map_err(csv_err)?;
    let opt = |x: Option<f64>| x.map(|v| format!("{v:.12e}")).unwrap_or_default();
    for r in &d.rows {
        let mut rec = vec![
            format!("{:.6}", r.t),
            format!("{:.15e}", r.energy),
            format!("{:.12e}", r.absorbed),
            format!("{:.15e}", r.h0l),
        ];
        rec.extend(r.xi_sq.iter().map(|x| format!("{x:.15e}")));
        rec.push(format!("{:.12e}", r.f_norm));
        rec.push(opt(r.predicted));
        rec.push(opt(r.residual));
        rec.extend(r.accum.iter().map(|x| format!("{x:.12e}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish_csv(w)
}

pub fn scan_csv(s: &GenericityScan) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["beta", "gamma", "fit_residual"]).map_err(csv_err)?;
    for p in &s.points {
        w.write_record([format!("{:.12e}", p.beta), format!("{:.12e}", p.gamma), format!("{:.6e}", p.fit_residual)])
            .map_err(csv_err)?;
    }
    finish_csv(w)
}

/// Rows (t, |η_j|²…, H0L).
pub fn reduced_csv(rows: &[(f64, Vec<f64>, f64)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let n = rows.first().map(|r| r.1.len()).unwrap_or(0);
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|j| format!("abs_eta{j}_sq")));
    header.push("H0L".into());
    w.write_record(&header).map_err(csv_err)?;
    for (t, y, h) in rows {
        let mut rec = vec![format!("{t:.6}")];
        rec.extend(y.iter().map(|x| format!("{x:.15e}")));
        rec.push(format!("{h:.15e}"));
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish_csv(w)
}

pub fn comparison_csv(c: &Comparison) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "H0L_pde", "H0L_reduced"]).map_err(csv_err)?;
    for (t, a, b) in &c.series {
        w.write_record([format!("{t:.6}"), format!("{a:.15e}"), format!("{b:.15e}")])
            .map_err(csv_err)?;
    }
    finish_csv(w)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serialization(e.to_string())
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Serialization(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serialization(e.to_string()))
}

pub fn exponent_label(mu: &[u32]) -> String {
    mu.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("_")
}

// ---------------------------------------------------------------------------
// Pipeline stages

pub struct SpectrumOutput {
    pub s: SpectralData,
    pub resonance: Option<ResonanceReport>,
    pub sets: Option<MultiIndexSet>,
}

/// Decomposition plus resonance bookkeeping. Hypothesis failures are
/// recorded in the report before being returned.
pub fn spectrum_stage(cfg: &RunConfig, cache: Option<&Path>, report: &mut RunReport) -> Result<SpectrumOutput> {
    let (mut s, cache_hit) = load_or_build_spectrum(cfg, cache)?;
    if let Some(k) = cfg.mass_harmonic {
        // ω₁² = m² + e₁ and m = kω₁  ⇒  m² = −k²e₁/(k² − 1).
        let e1 = *s.eigenvalues.first().filter(|e| **e < -s.tol_edge).ok_or_else(|| {
            Error::Config("mass_harmonic needs at least one bound state".into())
        })?;
        let k2 = (k * k) as f64;
        s.mass = (-k2 * e1 / (k2 - 1.0)).sqrt();
    }
    let mass = s.mass;
    let omega = s.omegas();
    let mut sec = SpectrumSection {
        mass,
        dimension: s.dim(),
        spacing: s.h(),
        n_bound: s.n_bound,
        bound_eigenvalues: s.bound_eigenvalues().to_vec(),
        omega: omega.clone(),
        lowest_continuum_b: s.b_values().into_iter().take(5).collect(),
        tol_edge: s.tol_edge,
        threshold_clear: s.threshold_clear,
        decay_rate: s.potential.decay_rate,
        cache_hit,
        ..Default::default()
    };
    if !s.threshold_clear {
        report.spectrum = Some(sec);
        return Err(Error::hypothesis("H2", "an eigenvalue of −Δ+V lies within tol_edge of the threshold 0"));
    }
    if s.n_bound == 0 {
        sec.note = Some("no bound states; trivial scattering regime".into());
        report.spectrum = Some(sec);
        return Ok(SpectrumOutput {
            s,
            resonance: None,
            sets: None,
        });
    }
    let res = check_default(&omega, mass)?;
    sec.n = Some(res.n);
    sec.resonance = Some(res.clone());
    if let Some(err) = res.as_error() {
        report.spectrum = Some(sec);
        return Err(err);
    }
    let sets = enumerate_m(&omega, mass, res.n)?;
    sec.m_hat = sets.m_hat.clone();
    sec.lambda_hat = sets.lambda_hat.clone();
    sec.m_size = sets.m_set.len();
    report.spectrum = Some(sec);
    Ok(SpectrumOutput {
        s,
        resonance: Some(res),
        sets: Some(sets),
    })
}

pub struct FgrOutput {
    pub nl: Nonlinearity,
    pub nf: Option<NormalFormResult>,
    pub fgr: Option<FgrData>,
    pub coeffs: Option<ModelCoefficients>,
    pub scan: Option<GenericityScan>,
    /// (H7) failure, if any; the stage output is still usable.
    pub violation: Option<Error>,
}

/// Default (jet degree, normalization steps) for N resonance order.
pub fn default_orders(cfg: &RunConfig, n: u32, lowest: u32) -> (u32, u32) {
    let d_jet = cfg.normal_form.jet_order.unwrap_or(2 * n + 4);
    let r = cfg.normal_form.order.unwrap_or(2 * n).max(1);
    (d_jet, r.min(d_jet + 1 - lowest.min(d_jet)).max(1))
}

pub fn fgr_stage(cfg: &RunConfig, sp: &SpectrumOutput, report: &mut RunReport) -> Result<FgrOutput> {
    let nl = cfg.nonlinearity()?;
    let sets = match &sp.sets {
        Some(sets) => sets,
        None => {
            report.fgr = Some(FgrSection::default());
            return Ok(FgrOutput {
                nl,
                nf: None,
                fgr: None,
                coeffs: None,
                scan: None,
                violation: None,
            });
        }
    };
    let n = sp.resonance.as_ref().map(|r| r.n).unwrap_or(1);
    if nl.is_zero() {
        report.fgr = Some(FgrSection {
            degenerate: true,
            ..Default::default()
        });
        return Ok(FgrOutput {
            nl,
            nf: None,
            fgr: None,
            coeffs: None,
            scan: None,
            violation: Some(Error::hypothesis(
                "H7",
                "degenerate nonlinearity: β ≡ 0, every coupling vanishes and Γ = 0",
            )),
        });
    }
    let lowest = nl.lowest_order().unwrap_or(4).max(3);
    let (d_jet, r) = default_orders(cfg, n, lowest);
    let hp = expand_h_p(&sp.s, &nl, d_jet)?;
    let nf = birkhoff_normalize(&hp.jet, &sp.s, sets, r)?;
    let omega = &sets.omega;
    report.normal_form = Some(NormalFormSection {
        jet_order: d_jet,
        order: nf.order,
        lowest_degree: nf.lowest_degree,
        steps: nf.steps.clone(),
        z0: nf.z0().dump(),
        couplings: nf
            .couplings
            .iter()
            .map(|(mu, phi)| CouplingNorm {
                mu: mu.clone(),
                energy: crate::resonance::dot_omega(mu, omega),
                l2_norm: sp.s.l2_norm_c(phi),
            })
            .collect(),
        quadratic_remainder: hp.quadratic_remainder,
    });
    let fgr = fgr_matrix(&sp.s, &nf, sets)?;
    let coeffs = model_coefficients(&sp.s, &nf, sets, false)?;
    let scan = match &cfg.fgr.scan {
        Some(sc) => {
            let values: Vec<f64> = (0..sc.points)
                .map(|i| sc.from + (sc.to - sc.from) * i as f64 / (sc.points - 1) as f64)
                .collect();
            Some(genericity_scan(&sp.s, sets, &nl, &sc.mu, &values, d_jet.max(degree(&sc.mu) + 1))?)
        }
        None => None,
    };
    let mut resonant_diagonal = Vec::new();
    for f in &coeffs.fibers {
        for (i, mu) in f.members.iter().enumerate() {
            resonant_diagonal.push((mu.clone(), [f.c[i][i].re, f.c[i][i].im]));
        }
    }
    report.fgr = Some(FgrSection {
        degenerate: false,
        data: Some(fgr.clone()),
        plemelj_gap: Some(coeffs.plemelj_gap),
        resonant_diagonal,
        scan: scan.clone(),
    });
    let violation = (!fgr.h7).then(|| {
        let worst = fgr
            .blocks
            .iter()
            .map(|b| b.min_eigenvalue)
            .fold(f64::INFINITY, f64::min);
        Error::hypothesis(
            "H7",
            format!(
                "some Γ_λ is not positive definite: smallest eigenvalue {worst:.3e} ≤ threshold {:.3e}",
                fgr.threshold
            ),
        )
    });
    Ok(FgrOutput {
        nl,
        nf: Some(nf),
        fgr: Some(fgr),
        coeffs: Some(coeffs),
        scan,
        violation,
    })
}

pub struct EvolveOutput {
    pub diagnostics: Option<RunDiagnostics>,
    pub reduced: Vec<(f64, Vec<f64>, f64)>,
    pub comparison: Option<Comparison>,
}

fn initial_modes(cfg: &RunConfig, n: usize) -> Vec<C64> {
    let eps = cfg.evolve.epsilon;
    (0..n)
        .map(|j| {
            let [re, im] = cfg.evolve.amplitudes.get(j).copied().unwrap_or([1.0, 0.0]);
            C64::new(eps * re, eps * im)
        })
        .collect()
}

fn sample_times(cfg: &RunConfig) -> Vec<f64> {
    let ev = &cfg.evolve;
    let steps = (ev.t_final / ev.dt).round() as usize;
    let mut t: Vec<f64> = (0..=steps).step_by(ev.sample_every).map(|k| k as f64 * ev.dt).collect();
    if steps % ev.sample_every != 0 {
        t.push(steps as f64 * ev.dt);
    }
    t
}

/// Time evolution. `sp`/`fg` may be absent for the toy reduced model.
pub fn evolve_stage(
    cfg: &RunConfig,
    sp: Option<&SpectrumOutput>,
    fg: Option<&FgrOutput>,
    report: &mut RunReport,
) -> Result<EvolveOutput> {
    let ev = &cfg.evolve;
    let opts = OdeOptions {
        rtol: cfg.tolerances.ode_rtol,
        atol: cfg.tolerances.ode_atol,
        ..OdeOptions::default()
    };
    let mut sec = EvolveSection {
        mode: ev.mode,
        ..Default::default()
    };
    let mut out = EvolveOutput {
        diagnostics: None,
        reduced: Vec::new(),
        comparison: None,
    };

    if let Some(toy) = &ev.toy {
        let model = ReducedModel::single_mode(toy.omega, toy.p, C64::new(0.0, toy.gamma));
        let eta0 = initial_modes(cfg, 1);
        sec.xi0 = eta0.iter().map(|z| [z.re, z.im]).collect();
        let times = sample_times(cfg);
        let traj = integrate_reduced(&model, &eta0, &times, opts)?;
        out.reduced = traj
            .iter()
            .map(|st| (st.t, st.eta.iter().map(|z| z.norm_sqr()).collect(), model.h0l(&st.eta)))
            .collect();
        let y_final = traj.last().unwrap().eta[0].norm_sqr();
        let exact = single_mode_decay(eta0[0].norm_sqr(), toy.p, toy.gamma, ev.t_final);
        sec.reduced_final = vec![y_final];
        sec.closed_form_final = Some(exact);
        sec.closed_form_error = Some((y_final - exact).abs() / exact);
        report.evolve = Some(sec);
        return Ok(out);
    }

    let sp = sp.ok_or_else(|| Error::Precondition("evolution needs the spectral stage".into()))?;
    let s = &sp.s;
    let nl = cfg.nonlinearity()?;
    let xi0 = initial_modes(cfg, s.n_bound);
    sec.xi0 = xi0.iter().map(|z| [z.re, z.im]).collect();
    let tracked: Vec<Exponent> = sp.sets.as_ref().map(|x| x.m_hat.clone()).unwrap_or_default();
    let model = match (fg.and_then(|f| f.nf.as_ref()), fg.and_then(|f| f.coeffs.as_ref())) {
        (Some(nf), Some(c)) => Some(ReducedModel::from_normal_form(nf, c)),
        _ => None,
    };
    let sponge = match ev.sponge {
        SpongeMode::On => true,
        SpongeMode::Off => false,
        SpongeMode::Auto => ev.t_final > cfg.grid.half_width,
    };
    sec.sponge = sponge;
    let pde_opts = PdeRunOptions {
        t_final: ev.t_final,
        dt: ev.dt,
        sample_every: ev.sample_every,
        sponge: sponge.then(|| Sponge {
            strength: ev.sponge_strength,
            ..Sponge::default()
        }),
    };

    if matches!(ev.mode, EvolveMode::Reduced | EvolveMode::Both) && model.is_none() && !nl.is_zero() {
        return Err(Error::Precondition("the reduced model needs the normal-form stage".into()));
    }
    let zero_model = || ReducedModel::from_parts(s.omegas(), vec![], vec![]);

    match ev.mode {
        EvolveMode::Pde => {
            let init = initial_from_modes(s, &xi0);
            let diag = run_pde(s, &nl, &init, &pde_opts, &tracked, model.as_ref())?;
            sec.pde_energy_drift = Some(diag.max_energy_drift());
            sec.absorbed = diag.rows.last().map(|r| r.absorbed);
            sec.l2_in_time = tracked.iter().cloned().zip(diag.l2_in_time()).collect();
            out.diagnostics = Some(diag);
        }
        EvolveMode::Reduced => {
            let model = model.unwrap_or_else(zero_model);
            let times = sample_times(cfg);
            let traj = integrate_reduced(&model, &xi0, &times, opts)?;
            out.reduced = traj
                .iter()
                .map(|st| (st.t, st.eta.iter().map(|z| z.norm_sqr()).collect(), model.h0l(&st.eta)))
                .collect();
            sec.reduced_final = traj.last().unwrap().eta.iter().map(|z| z.norm_sqr()).collect();
        }
        EvolveMode::Both => {
            let model = model.unwrap_or_else(zero_model);
            let p_min = tracked.iter().map(|mu| degree(mu)).min();
            let init = initial_from_modes(s, &xi0);
            let diag = run_pde(s, &nl, &init, &pde_opts, &tracked, Some(&model))?;
            let cmp = compare_with_diagnostics(&model, &diag, &xi0, &nl, &pde_opts, p_min, opts)?;
            sec.pde_energy_drift = Some(diag.max_energy_drift());
            sec.absorbed = diag.rows.last().map(|r| r.absorbed);
            sec.l2_in_time = tracked.iter().cloned().zip(diag.l2_in_time()).collect();
            sec.comparison = Some(cmp.clone());
            out.comparison = Some(cmp);
            out.diagnostics = Some(diag);
        }
    }
    report.evolve = Some(sec);
    Ok(out)
}
