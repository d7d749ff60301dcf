//! `nlkg`: spectra, normal forms, Fermi golden rule data and time evolution
//! for the nonlinear Klein–Gordon equation with a trapping potential.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nlkg_core::io::{
    cache_dir_from_env, comparison_csv, diagnostics_csv, evolve_stage, fgr_stage, reduced_csv, scan_csv,
    spectrum_stage, EvolveMode, RunConfig, RunReport, ScanConfig, PRESETS,
};
use nlkg_core::resonance::degree;
use nlkg_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "nlkg", version, about = "Metastable bound states and radiation for nonlinear Klein–Gordon")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    config: Option<PathBuf>,
    /// Start from a named preset instead of (or underneath) a config file.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed recorded in the report (used by `sweep --random`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Spectrum of −Δ+V, the frequencies ω_j and the resonance hypotheses.
    Spectrum(Common),
    /// Normal form, couplings and the Fermi golden rule matrices.
    Fgr {
        #[command(flatten)]
        common: Common,
        /// Scan γ_μ against β^{(|μ|+1)}(0) and write scan.csv.
        #[arg(long)]
        scan: bool,
    },
    /// Integrate the PDE, the reduced system, or both.
    Evolve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Independent runs over a parameter, in parallel.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "spectrum")]
        run: Stage,
        /// One of: mass, depth, width, points, half_width, epsilon.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', conflicts_with = "random")]
        values: Vec<f64>,
        /// Draw this many values uniformly from --range using --seed.
        #[arg(long, requires = "range")]
        random: Option<usize>,
        /// Interval `lo,hi` for --random.
        #[arg(long, value_delimiter = ',')]
        range: Vec<f64>,
    },
    /// Print a preset as TOML.
    Preset { name: Option<String> },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Pde,
    Reduced,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Stage {
    Spectrum,
    Fgr,
    Evolve,
}

fn resolve(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match (&common.config, &common.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => return Err(Error::Config("give a config file or --preset".into())),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("nlkg-out"));
    cfg.output_dir = Some(out.display().to_string());
    Ok((cfg, out))
}

struct Outputs<'a> {
    dir: &'a Path,
    report: RunReport,
}

impl Outputs<'_> {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        std::fs::write(self.dir.join(name), contents)?;
        self.report.files.push(name.to_string());
        Ok(())
    }

    fn finish(mut self, outcome: Result<()>) -> Result<()> {
        self.report.verdict = Some(match &outcome {
            Ok(()) => "ok".into(),
            Err(e) => e.to_string(),
        });
        for name in ["report.json", "report.txt"] {
            if !self.report.files.iter().any(|f| f == name) {
                self.report.files.push(name.into());
            }
        }
        let text = self.report.to_text();
        std::fs::write(self.dir.join("report.json"), self.report.to_json())?;
        std::fs::write(self.dir.join("report.txt"), &text)?;
        print!("{text}");
        outcome
    }
}

fn cache_dir(out: &Path) -> PathBuf {
    cache_dir_from_env().unwrap_or_else(|| out.join("cache"))
}

fn run_stage(cfg: &RunConfig, out: &Path, stage: Stage, scan: bool) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut o = Outputs {
        dir: out,
        report: RunReport::new(cfg),
    };
    o.write("config.toml", &cfg.to_toml())?;
    let cache = cache_dir(out);
    let result = (|| -> Result<()> {
        if stage == Stage::Evolve && cfg.evolve.toy.is_some() {
            let ev = evolve_stage(cfg, None, None, &mut o.report)?;
            o.write("reduced.csv", &reduced_csv(&ev.reduced)?)?;
            return Ok(());
        }
        let sp = spectrum_stage(cfg, Some(&cache), &mut o.report)?;
        if stage == Stage::Spectrum {
            return Ok(());
        }
        let needs_fgr = stage == Stage::Fgr || !cfg.nonlinearity()?.is_zero();
        let mut cfg_fgr = cfg.clone();
        if scan && cfg_fgr.fgr.scan.is_none() {
            if let Some(mu) = sp.sets.as_ref().and_then(|s| s.m_hat.first()) {
                let j = degree(mu) + 1;
                let fact: f64 = (1..=j).map(|k| k as f64).product();
                cfg_fgr.fgr.scan = Some(ScanConfig {
                    mu: mu.clone(),
                    from: -2.0 * fact,
                    to: 2.0 * fact,
                    points: 9,
                });
            }
        }
        let fg = if needs_fgr {
            Some(fgr_stage(&cfg_fgr, &sp, &mut o.report)?)
        } else {
            None
        };
        if let Some(s) = fg.as_ref().and_then(|f| f.scan.as_ref()) {
            o.write("scan.csv", &scan_csv(s)?)?;
        }
        if stage == Stage::Fgr {
            return match fg.and_then(|f| f.violation) {
                Some(v) => Err(v),
                None => Ok(()),
            };
        }
        let ev = evolve_stage(cfg, Some(&sp), fg.as_ref(), &mut o.report)?;
        if let Some(d) = &ev.diagnostics {
            o.write("series.csv", &diagnostics_csv(d)?)?;
        }
        if !ev.reduced.is_empty() {
            o.write("reduced.csv", &reduced_csv(&ev.reduced)?)?;
        }
        if let Some(c) = &ev.comparison {
            o.write("comparison.csv", &comparison_csv(c)?)?;
        }
        Ok(())
    })();
    o.finish(result)
}

fn apply_param(cfg: &mut RunConfig, param: &str, value: f64) -> Result<()> {
    use nlkg_core::grid::PotentialKind as P;
    match (param, &mut cfg.potential) {
        ("mass", _) => cfg.mass = value,
        ("half_width", _) => cfg.grid.half_width = value,
        ("points", _) => cfg.grid.points = value.round() as usize,
        ("epsilon", _) => cfg.evolve.epsilon = value,
        ("depth", P::PoschlTeller { depth, .. } | P::GaussianWell { depth, .. }) => *depth = value,
        ("width", P::PoschlTeller { width, .. } | P::GaussianWell { width, .. }) => *width = value,
        _ => {
            return Err(Error::Config(format!(
                "cannot sweep '{param}' for a {} potential",
                cfg.potential.name()
            )))
        }
    }
    cfg.validate()
}

fn sweep(common: &Common, stage: Stage, param: &str, values: &[f64], random: Option<usize>, range: &[f64]) -> Result<()> {
    let (cfg, out) = resolve(common)?;
    let values: Vec<f64> = match random {
        Some(count) => {
            if range.len() != 2 || !(range[0] < range[1]) {
                return Err(Error::Config("--range needs two increasing values lo,hi".into()));
            }
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
            (0..count).map(|_| rng.gen_range(range[0]..range[1])).collect()
        }
        None => values.to_vec(),
    };
    if values.is_empty() {
        return Err(Error::Config("sweep needs --values or --random".into()));
    }
    std::fs::create_dir_all(&out)?;
    let results: Vec<(usize, f64, i32, String)> = values
        .par_iter()
        .enumerate()
        .map(|(i, &v)| {
            let dir = out.join(format!("run_{i:03}"));
            let mut c = cfg.clone();
            c.output_dir = Some(dir.display().to_string());
            let res = apply_param(&mut c, param, v).and_then(|_| run_stage(&c, &dir, stage, false));
            match res {
                Ok(()) => (i, v, 0, "ok".to_string()),
                Err(e) => (i, v, e.exit_code(), e.to_string()),
            }
        })
        .collect();
    let summary: Vec<serde_json::Value> = results
        .iter()
        .map(|(i, v, code, msg)| serde_json::json!({"run": i, "param": param, "value": v, "exit_code": code, "message": msg}))
        .collect();
    std::fs::write(
        out.join("sweep.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| Error::Serialization(e.to_string()))?,
    )?;
    for (i, v, code, msg) in &results {
        println!("run_{i:03} {param}={v} exit {code}: {msg}");
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors, which here means a hypothesis violation
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(4) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Spectrum(c) => resolve(c).and_then(|(cfg, out)| run_stage(&cfg, &out, Stage::Spectrum, false)),
        Command::Fgr { common, scan } => resolve(common).and_then(|(cfg, out)| run_stage(&cfg, &out, Stage::Fgr, *scan)),
        Command::Evolve { common, mode } => resolve(common).and_then(|(mut cfg, out)| {
            if let Some(m) = mode {
                cfg.evolve.mode = match m {
                    ModeArg::Pde => EvolveMode::Pde,
                    ModeArg::Reduced => EvolveMode::Reduced,
                    ModeArg::Both => EvolveMode::Both,
                };
            }
            run_stage(&cfg, &out, Stage::Evolve, false)
        }),
        Command::Sweep {
            common,
            run,
            param,
            values,
            random,
            range,
        } => sweep(common, *run, param, values, *random, range),
        Command::Preset { name } => match name {
            None => {
                println!("{}", PRESETS.join("\n"));
                Ok(())
            }
            Some(n) => RunConfig::preset(n).map(|c| print!("{}", c.to_toml())),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
