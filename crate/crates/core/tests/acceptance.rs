//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! The process exits 0 even when a criterion fails, so the workspace test
//! run records the outcome without aborting; set NLKG_ACCEPTANCE_STRICT=1 to
//! turn any FAIL into a nonzero exit. NLKG_ACCEPTANCE_ONLY=3,7 runs a subset.

mod common;

use std::time::Instant;

use common::*;
use nlkg_core::dynamics::{
    compare_pde_vs_reduced, dissipation_check, integrate_reduced, run_pde, single_mode_decay, initial_from_modes,
    OdeOptions, PdeRunOptions, PdeSolver, ReducedModel, Sponge,
};
use nlkg_core::jets::{expand_h_p, poisson_bracket, ClosedForm, FormalHamiltonian, Nonlinearity};
use nlkg_core::normalform::{birkhoff_normalize, homological_op, homological_residual, solve_homological, NormalFormResult};
use nlkg_core::resonance::{check_default, compute_n, degree, enumerate_m, MultiIndexSet};
use nlkg_core::scattering::{fgr_matrix, genericity_scan, limiting_absorption, model_coefficients};
use nlkg_core::spectral::SpectralData;
use nlkg_core::C64;
use rand::Rng;

const I: C64 = C64 { re: 0.0, im: 1.0 };

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn sets_for(s: &SpectralData) -> MultiIndexSet {
    let omega = s.omegas();
    let n = compute_n(&omega, s.mass).unwrap().n;
    enumerate_m(&omega, s.mass, n).unwrap()
}

/// Normal form through jet order `d_jet`, all degrees up to it normalized.
fn try_normalize(
    s: &SpectralData,
    nl: &Nonlinearity,
    sets: &MultiIndexSet,
    d_jet: u32,
) -> nlkg_core::Result<NormalFormResult> {
    let hp = expand_h_p(s, nl, d_jet)?.jet;
    let lowest = hp.lowest_degree().unwrap_or(4);
    birkhoff_normalize(&hp, s, sets, (d_jet + 1).saturating_sub(lowest).max(1))
}

fn normalize(s: &SpectralData, nl: &Nonlinearity, sets: &MultiIndexSet, d_jet: u32) -> NormalFormResult {
    try_normalize(s, nl, sets, d_jet).unwrap()
}

fn c1_homological() -> Outcome {
    let s = small_pt();
    let mut r = rng(101);
    let t = Instant::now();
    let (mut solved, mut refused, mut worst, mut reality) = (0, 0, 0.0f64, 0.0f64);
    while solved < 200 {
        let n = r.gen_range(1..=3);
        let omega = random_omega(&mut r, n, s.mass);
        let spec = RandomSpec { n, min_degree: 3, max_degree: 6, terms: 12, fields: true, kappa: false, real: true, container: 6 };
        let k = random_hamiltonian(&s, &mut r, spec);
        match solve_homological(&k, &omega, s.mass, &s) {
            Ok(sol) => {
                worst = worst.max(homological_residual(&k, &sol, &omega, &s));
                reality = reality.max(sol.chi.reality_defect()).max(sol.z.reality_defect());
                solved += 1;
            }
            Err(e) if e.exit_code() == 2 => refused += 1,
            Err(e) => return outcome(false, format!("solver error: {e}")),
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst < 1e-10 && reality < 1e-12 && secs < 10.0,
        format!("200 solved ({refused} refused at the threshold band), residual {worst:.2e}, reality {reality:.2e}, {secs:.1} s"),
    )
}

fn c2_bracket() -> Outcome {
    let s = small_pt();
    let mut r = rng(102);
    let mut op_err = 0.0f64;
    for trial in 0..50 {
        let n = 1 + trial % 3;
        let omega = random_omega(&mut r, n, s.mass);
        let spec = RandomSpec { n, min_degree: 2, max_degree: 6, terms: 12, fields: true, kappa: false, real: false, container: 6 };
        let k = random_hamiltonian(&s, &mut r, spec);
        let hl = FormalHamiltonian::linear_part(&omega, 6);
        op_err = op_err.max(poisson_bracket(&hl, &k, &s).minus(&homological_op(&k, &omega, &s)).max_magnitude());
    }
    let mut jacobi = 0.0f64;
    for trial in 0..50 {
        let n = 1 + trial % 3;
        let spec = |fields| RandomSpec { n, min_degree: 1, max_degree: 3, terms: 8, fields, kappa: true, real: false, container: 12 };
        // at most two members carry field-linear terms
        let mut t = [
            random_hamiltonian(&s, &mut r, spec(true)),
            random_hamiltonian(&s, &mut r, spec(true)),
            random_hamiltonian(&s, &mut r, spec(false)),
        ];
        t.rotate_left(trial % 3);
        let [a, b, c] = t;
        let sum = poisson_bracket(&a, &poisson_bracket(&b, &c, &s), &s)
            .plus(&poisson_bracket(&b, &poisson_bracket(&c, &a, &s), &s))
            .plus(&poisson_bracket(&c, &poisson_bracket(&a, &b, &s), &s));
        jacobi = jacobi.max(sum.max_magnitude());
    }
    outcome(
        op_err < 1e-10 && jacobi < 1e-10,
        format!("operator vs bracket {op_err:.2e} (50 jets), Jacobi {jacobi:.2e} (50 triples)"),
    )
}

fn c3_coupling_structure() -> Outcome {
    let s = poschl_teller(2.0, 40.0, 768, 1.1);
    let sets = sets_for(&s);
    if sets.m_hat != vec![vec![3]] {
        return outcome(false, format!("unexpected M̂ {:?}", sets.m_hat));
    }
    let d_jet = 2 * compute_n(&s.omegas(), s.mass).unwrap().n + 4;
    let w = s.omegas()[0];
    let p3: Vec<f64> = s.bound_state(0).iter().map(|x| x.powi(3)).collect();
    let shape = s.apply_b_power_real(-0.5, &p3);
    let big = shape.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    // pointwise proportionality
    let phi = normalize(&s, &Nonlinearity::quartic(1.0), &sets, d_jet).couplings[&vec![3]].clone();
    let ratios: Vec<C64> = phi
        .iter()
        .zip(&shape)
        .filter(|(_, b)| b.abs() > 1e-3 * big)
        .map(|(a, b)| a / b)
        .collect();
    let mean = ratios.iter().sum::<C64>() / ratios.len() as f64;
    let var = ratios.iter().map(|z| (z - mean).norm_sqr()).sum::<f64>() / ratios.len() as f64;
    let rel_var = var.sqrt() / mean.norm();

    // linearity in β⁽⁴⁾(0) with a sextic term present
    let values = [-30.0, -6.0, 12.0, 24.0, 60.0];
    let runs: Vec<Vec<C64>> = values
        .iter()
        .map(|&b4| {
            let mut nl = Nonlinearity::polynomial(&[(4, 1.0), (6, 0.5)]).unwrap();
            nl.set_derivative(4, b4);
            normalize(&s, &nl, &sets, d_jet).couplings[&vec![3]].clone()
        })
        .collect();
    let xm = values.iter().sum::<f64>() / values.len() as f64;
    let sxx: f64 = values.iter().map(|x| (x - xm).powi(2)).sum();
    let mut fit_res = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..s.dim() {
        let ym = runs.iter().map(|v| v[i]).sum::<C64>() / values.len() as f64;
        let slope = values.iter().zip(&runs).map(|(x, v)| (v[i] - ym) * (x - xm)).sum::<C64>() / sxx;
        for (x, v) in values.iter().zip(&runs) {
            fit_res = fit_res.max((v[i] - (ym + slope * (x - xm))).norm());
            scale = scale.max(v[i].norm());
        }
    }
    let lin = fit_res / scale;

    // the constant against θ-Fourier finite differences of H_P
    let nl = Nonlinearity::quartic(1.0);
    let g = random_field(&s, &mut rng(103));
    let ig: Vec<C64> = g.iter().map(|z| I * z).collect();
    let gbar: Vec<C64> = g.iter().map(|z| z.conj()).collect();
    let m = 16;
    let thetas: Vec<f64> = (0..m).map(|i| 2.0 * std::f64::consts::PI * i as f64 / m as f64).collect();
    let deriv = |dir: &[C64], t: f64| {
        let xi = [C64::from_polar(1.0, t)];
        d_ds(
            |e| {
                let f: Vec<C64> = dir.iter().map(|z| z * e).collect();
                h_p_direct(&s, &nl, &xi, &f)
            },
            1e-2,
        )
    };
    let fourier3 = |dir: &[C64]| -> C64 {
        thetas.iter().map(|t| deriv(dir, *t) * C64::from_polar(1.0, -3.0 * t)).sum::<C64>() / m as f64
    };
    let fbar_oracle = (fourier3(&g) + I * fourier3(&ig)) / 2.0;
    let shape_c: Vec<C64> = shape.iter().map(|x| C64::new(*x, 0.0)).collect();
    let c_oracle = fbar_oracle / s.pair(&shape_c, &gbar);
    let c_closed = 24.0 / (6.0 * std::f64::consts::SQRT_2) * (2.0 * w).powf(-1.5);
    let c_err = (mean - c_oracle).norm() / c_oracle.norm();
    outcome(
        rel_var < 1e-6 && lin < 1e-8 && c_err < 1e-6,
        format!(
            "ratio spread {rel_var:.2e}, linear-fit residual {lin:.2e}, constant {:.8} vs oracle {:.8} (rel {c_err:.2e}; closed form {c_closed:.8})",
            mean.re, c_oracle.re
        ),
    )
}

fn c4_free_density() -> Outcome {
    let t = Instant::now();
    let s = free(40.0, 2048, 1.0);
    let g = gaussian(&s, 0.0, 1.0);
    let p = match limiting_absorption(&s, 1.2, &g) {
        Ok(p) => p,
        Err(e) => return outcome(false, format!("{e}")),
    };
    let secs = t.elapsed().as_secs_f64();
    let k0 = (1.2f64 * 1.2 - 1.0).sqrt();
    let oracle = 1.2 / k0 * 2.0 * (-k0 * k0).exp();
    let e1 = (p.density.re - oracle).abs() / oracle;
    let e2 = (p.density_gaussian.re - oracle).abs() / oracle;
    outcome(
        e1 < 5e-3 && e2 < 5e-3 && secs < 30.0,
        format!(
            "oracle {oracle:.6}, resolvent {:.6} ({:.3}%), Gaussian {:.6} ({:.3}%), {secs:.1} s",
            p.density.re,
            100.0 * e1,
            p.density_gaussian.re,
            100.0 * e2
        ),
    )
}

fn c5_plemelj_sweep() -> Outcome {
    let mut r = rng(105);
    let (mut done, mut skipped_h, mut skipped_res, mut attempts) = (0, 0, 0, 0);
    let (mut herm, mut neg, mut dis) = (0.0f64, 0.0f64, 0.0f64);
    let mut failures = Vec::new();
    let t = Instant::now();
    while done < 50 && attempts < 400 {
        attempts += 1;
        let depth: f64 = r.gen_range(0.8..4.0);
        // ground state at −ν², ν(ν+1) = depth
        let nu = 0.5 * ((1.0 + 4.0 * depth).sqrt() - 1.0);
        let mass = nu * r.gen_range(1.05..1.8);
        let s = poschl_teller(depth, 40.0, 1024, mass);
        if s.n_bound == 0 {
            skipped_h += 1;
            continue;
        }
        let omega = s.omegas();
        if check_default(&omega, mass).is_err() || compute_n(&omega, mass).is_err() {
            skipped_h += 1;
            continue;
        }
        let sets = match enumerate_m(&omega, mass, compute_n(&omega, mass).unwrap().n) {
            Ok(x) => x,
            Err(_) => {
                skipped_h += 1;
                continue;
            }
        };
        let d_jet = sets.m_hat.iter().map(|mu| degree(mu)).max().unwrap_or(3) + 1;
        let nf = match try_normalize(&s, &Nonlinearity::quartic(1.0), &sets, d_jet.max(4)) {
            Ok(nf) => nf,
            // a field frequency inside the threshold band (H4)
            Err(e) if e.exit_code() == 2 => {
                skipped_h += 1;
                continue;
            }
            Err(e) => return outcome(false, format!("depth {depth:.3}, m {mass:.3}: {e}")),
        };
        let fgr = match fgr_matrix(&s, &nf, &sets) {
            Ok(f) => f,
            Err(e) if e.exit_code() == 3 => {
                skipped_res += 1;
                continue;
            }
            Err(e) => return outcome(false, format!("depth {depth:.3}, m {mass:.3}: {e}")),
        };
        done += 1;
        for b in &fgr.blocks {
            herm = herm.max(b.hermitian_defect);
            let rel_neg = -b.min_eigenvalue / b.trace.abs().max(1e-300);
            neg = neg.max(rel_neg);
            dis = dis.max(b.disagreement);
            if b.hermitian_defect >= 1e-9 || b.min_eigenvalue < -1e-8 * b.trace.abs() || b.disagreement >= 0.02 {
                failures.push(format!("depth {depth:.3} m {mass:.3} λ {:.4}: disagreement {:.3}", b.lambda, b.disagreement));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let mut detail = format!(
        "{done} configurations ({skipped_h} skipped on H3–H5, {skipped_res} on threshold resolution), Hermitian defect {herm:.2e}, worst −min eig/trace {neg:.2e}, disagreement {:.2}%, {secs:.0} s",
        100.0 * dis
    );
    if !failures.is_empty() {
        detail.push_str(&format!("; failing blocks: {}", failures.join(", ")));
    }
    outcome(done == 50 && failures.is_empty(), detail)
}

fn c6_genericity() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;

    // μ = (3) at m = 1.1, varying β⁽⁴⁾ with quintic and sextic terms present
    let s = poschl_teller(2.0, 40.0, 768, 1.1);
    let sets = sets_for(&s);
    let base = Nonlinearity::polynomial(&[(5, 0.3), (6, 0.5)]).unwrap();
    let values: Vec<f64> = (0..9).map(|i| -48.0 + 12.0 * i as f64).collect();
    match genericity_scan(&s, &sets, &base, &[3], &values, 8) {
        Ok(scan) => {
            let max = scan.points.iter().map(|p| p.gamma.abs()).fold(0.0, f64::max);
            let ok = scan.max_residual < 1e-4 * max && scan.roots.len() <= 2;
            pass &= ok;
            lines.push(format!(
                "μ=(3): residual/max {:.2e}, roots {:?}",
                scan.max_residual / max,
                scan.roots.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>()
            ));
        }
        Err(e) => {
            pass = false;
            lines.push(format!("μ=(3): {e}"));
        }
    }

    // μ = (2) at m = 1.25, varying β‴(0)
    let s = poschl_teller(2.0, 40.0, 768, 1.25);
    let sets = sets_for(&s);
    let base = Nonlinearity {
        derivatives: [(4, 24.0)].into_iter().collect(),
        j_max: None,
        closed_form: ClosedForm::Polynomial,
        allow_cubic: true,
    };
    let values: Vec<f64> = (0..9).map(|i| -12.0 + 3.0 * i as f64).collect();
    match genericity_scan(&s, &sets, &base, &[2], &values, 6) {
        Ok(scan) => {
            let max = scan.points.iter().map(|p| p.gamma.abs()).fold(0.0, f64::max);
            let ok = scan.max_residual < 1e-4 * max && scan.roots.len() <= 2;
            pass &= ok;
            lines.push(format!(
                "μ=(2): residual/max {:.2e}, roots {:?}",
                scan.max_residual / max,
                scan.roots.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>()
            ));
        }
        Err(e) => {
            pass = false;
            lines.push(format!("μ=(2): {e}"));
        }
    }
    outcome(pass, lines.join("; "))
}

fn c7_dissipation() -> Outcome {
    let opts = OdeOptions { rtol: 1e-10, atol: 1e-10, ..OdeOptions::default() };
    // model from the normal form at m = 1.1
    let s = poschl_teller(2.0, 40.0, 768, 1.1);
    let sets = sets_for(&s);
    let n = compute_n(&s.omegas(), s.mass).unwrap().n;
    let nf = normalize(&s, &Nonlinearity::quartic(1.0), &sets, 2 * n + 4);
    let coeffs = model_coefficients(&s, &nf, &sets, false).unwrap();
    let model = ReducedModel::from_normal_form(&nf, &coeffs);
    let times: Vec<f64> = (0..=8).map(|i| 50.0 * i as f64).collect();
    let a = match dissipation_check(&model, &[C64::new(0.3, 0.0)], &times, opts) {
        Ok(rep) => rep.max_relative_residual,
        Err(e) => return outcome(false, format!("{e}")),
    };
    // a two-photon single mode
    let toy = ReducedModel::single_mode(0.75, 2, C64::new(-0.2, 0.4));
    let b = dissipation_check(&toy, &[C64::new(0.5, 0.1)], &[0.0, 1.0, 4.0, 9.0], opts)
        .unwrap()
        .max_relative_residual;
    // closed form: Γ = 1, y₀ = 1, p = 3, t = 1
    let one = ReducedModel::single_mode(0.6, 3, C64::new(0.0, 1.0));
    let y = integrate_reduced(&one, &[C64::new(1.0, 0.0)], &[1.0], opts).unwrap()[0].eta[0].norm_sqr();
    let exact = single_mode_decay(1.0, 3, 1.0, 1.0);
    let cf = (y - 1.0 / 13f64.sqrt()).abs();
    outcome(
        a < 1e-6 && b < 1e-6 && cf < 1e-6 && (exact - 1.0 / 13f64.sqrt()).abs() < 1e-15,
        format!("residual {a:.2e} (normal-form model), {b:.2e} (single mode); y(1) = {y:.10} vs 1/√13 (err {cf:.2e})"),
    )
}

fn energy_drift(s: &SpectralData, nl: &Nonlinearity, eps: f64, dt: f64, t_final: f64) -> f64 {
    let init = initial_from_modes(s, &[C64::new(eps, 0.0)]);
    let mut p = PdeSolver::new(s, nl.clone(), &init, dt, None).unwrap();
    let e0 = p.energy();
    let mut worst = 0.0f64;
    for _ in 0..(t_final / dt).round() as usize {
        p.step().unwrap();
        worst = worst.max((p.energy() - e0).abs());
    }
    worst / e0
}

fn c8_pde_integrity() -> Outcome {
    let s = poschl_teller(6.0, 20.0, 400, 2.5);
    let omega = s.omegas();
    let xi0 = [C64::new(0.05, 0.0), C64::new(0.0, 0.02)];
    let dt = 0.01;
    let mut p = PdeSolver::new(&s, Nonlinearity::zero(), &initial_from_modes(&s, &xi0), dt, None).unwrap();
    let mut prev = p.xi();
    let mut phase = 0.0f64;
    for _ in 0..1000 {
        p.step().unwrap();
        let cur = p.xi();
        for j in 0..omega.len() {
            phase = phase.max((cur[j] - prev[j] * C64::from_polar(1.0, -omega[j] * dt)).norm());
        }
        prev = cur;
    }
    let s = poschl_teller(2.0, 30.0, 512, 1.25);
    let nl = Nonlinearity::quartic(1.0);
    let d1 = energy_drift(&s, &nl, 0.05, 0.01, 100.0);
    let d2 = energy_drift(&s, &nl, 0.05, 0.005, 100.0);
    let ratio = d1 / d2;
    outcome(
        phase < 1e-12 && d1 < 1e-6 && (3.0..5.0).contains(&ratio),
        format!("phase error {phase:.2e} per step, drift {d1:.2e} at dt 0.01, {d2:.2e} at dt 0.005 (ratio {ratio:.2})"),
    )
}

fn c9_energy_leak() -> Outcome {
    let s = poschl_teller(2.0, 40.0, 2048, 1.25);
    let sets = sets_for(&s);
    let n = compute_n(&s.omegas(), s.mass).unwrap().n;
    let nl = Nonlinearity::quartic(1.0);
    let nf = normalize(&s, &nl, &sets, 2 * n + 4);
    let coeffs = model_coefficients(&s, &nf, &sets, false).unwrap();
    let model = ReducedModel::from_normal_form(&nf, &coeffs);
    let p_min = sets.m_hat.iter().map(|mu| degree(mu)).min();
    let mut pass = true;
    let mut parts = Vec::new();
    for eps in [0.02, 0.05] {
        let t = Instant::now();
        let opts = PdeRunOptions { t_final: 400.0, dt: 0.015, sample_every: 20, sponge: Some(Sponge::default()) };
        let c = match compare_pde_vs_reduced(&s, &nl, &model, &[C64::new(eps, 0.0)], &opts, &sets.m_hat, p_min) {
            Ok(c) => c,
            Err(e) => return outcome(false, format!("ε = {eps}: {e}")),
        };
        let secs = t.elapsed().as_secs_f64();
        let exp_ok = c.pde_exponent.map_or(false, |e| (e + 1.0).abs() <= 0.2);
        let ratio_ok = c.transfer_ratio.map_or(false, |r| (0.7..=1.3).contains(&r));
        pass &= c.pde_monotone && exp_ok && ratio_ok && secs <= 600.0;
        let fmt = |x: Option<f64>| x.map_or("none".to_string(), |v| format!("{v:.3}"));
        parts.push(format!(
            "ε={eps}: monotone {}, PDE exponent {}, reduced exponent {}, transfer PDE {:.2e} / reduced {:.2e} (ratio {}), divergence {}, {secs:.0} s",
            c.pde_monotone,
            fmt(c.pde_exponent),
            fmt(c.reduced_exponent),
            c.pde_transfer,
            c.reduced_transfer,
            fmt(c.transfer_ratio),
            fmt(c.divergence_time),
        ));
    }
    let gamma: Vec<String> = fgr_matrix(&s, &nf, &sets)
        .map(|f| f.gamma.iter().map(|(mu, g)| format!("γ{mu:?} = {g:.2e}")).collect())
        .unwrap_or_default();
    parts.push(gamma.join(", "));
    outcome(pass, parts.join("; "))
}

fn c10_scaling() -> Outcome {
    let s = poschl_teller(2.0, 30.0, 512, 1.25);
    let sets = sets_for(&s);
    let nl = Nonlinearity::quartic(1.0);
    let mut pts: Vec<Vec<(f64, f64)>> = vec![Vec::new(); sets.m_hat.len()];
    for eps in [0.02, 0.04, 0.08] {
        let init = initial_from_modes(&s, &[C64::new(eps, 0.0)]);
        let opts = PdeRunOptions { t_final: 100.0, dt: 0.02, sample_every: 50, sponge: None };
        let diag = match run_pde(&s, &nl, &init, &opts, &sets.m_hat, None) {
            Ok(d) => d,
            Err(e) => return outcome(false, format!("ε = {eps}: {e}")),
        };
        for (k, l2) in diag.l2_in_time().into_iter().enumerate() {
            pts[k].push((eps, l2));
        }
    }
    let mut pass = true;
    let mut parts = Vec::new();
    for (mu, p) in sets.m_hat.iter().zip(&pts) {
        let slope = nlkg_core::dynamics::loglog_slope(p);
        let ok = slope.map_or(false, |v| (v - degree(mu) as f64).abs() <= 0.3);
        pass &= ok;
        parts.push(format!("μ={mu:?}: slope {}", slope.map_or("none".into(), |v| format!("{v:.4}"))));
    }
    outcome(pass, parts.join(", "))
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("NLKG_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let strict = std::env::var("NLKG_ACCEPTANCE_STRICT").map_or(false, |v| v == "1");
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "homological exactness", c1_homological),
        (2, "bracket engine", c2_bracket),
        (3, "leading coupling structure", c3_coupling_structure),
        (4, "free-field spectral density", c4_free_density),
        (5, "Plemelj consistency and positivity", c5_plemelj_sweep),
        (6, "genericity scan", c6_genericity),
        (7, "reduced dissipation identity", c7_dissipation),
        (8, "PDE integrity", c8_pde_integrity),
        (9, "energy-leak experiment", c9_energy_leak),
        (10, "ε-scaling", c10_scaling),
    ];
    let mut failed = 0;
    for (k, name, f) in criteria {
        if only.as_ref().map_or(false, |o| !o.contains(&k)) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} criterion {k:>2} ({name}): {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {failed} failing");
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
