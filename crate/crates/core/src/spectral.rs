//! Dense spectral decomposition of −Δ+V and the functional calculus of
//! B = P_c(−Δ+V+m²)^{1/2}P_c.
//!
//! Grid functions live on the interior nodes. Inner products are the
//! trapezoid rule h·Σ aᵢbᵢ (exact here because both wall values vanish).
//! Eigenvectors are stored ℓ²-normalized; the L²-normalized bound states are
//! φ_j = Q_j/√h.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{assemble_operator, Grid1D, Operator, Potential};
use crate::linalg;

/// Relative tolerance for "g lies in range(P_c)".
pub const RANGE_TOL: f64 = 1e-8;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralData {
    pub grid: Grid1D,
    pub potential: Potential,
    pub mass: f64,
    /// Eigenvalues of −Δ+V in ascending order.
    pub eigenvalues: Vec<f64>,
    /// Column-major orthonormal eigenvectors, one column per eigenvalue.
    eigenvectors: Vec<f64>,
    /// Number of eigenvalues below −tol_edge.
    pub n_bound: usize,
    pub tol_edge: f64,
    /// Numerical analog of the no-threshold-eigenvalue hypothesis: no
    /// eigenvalue in [−tol_edge, 0]. A threshold resonance (bounded, non-L²
    /// solution at zero energy) cannot be seen this way.
    pub threshold_clear: bool,
}

pub fn spectral_decompose(op: &Operator, grid: &Grid1D, pot: &Potential) -> Result<SpectralData> {
    let n = op.len();
    let dense = op.dense_schrodinger();
    let a = faer::Mat::<f64>::from_fn(n, n, |i, j| dense[i * n + j]);
    let eig = a
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Resolution(format!("eigendecomposition failed: {e:?}")))?;
    let s = eig.S();
    let u = eig.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[i].partial_cmp(&s[j]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| s[i]).collect();
    let mut eigenvectors = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        let dst = &mut eigenvectors[col * n..(col + 1) * n];
        for i in 0..n {
            dst[i] = u[(i, src)];
        }
        // Deterministic sign: a slightly tilted weight distinguishes odd states.
        let w: f64 = dst
            .iter()
            .enumerate()
            .map(|(i, v)| v * (1.0 + 0.5 * i as f64 / n as f64))
            .sum();
        if w < 0.0 {
            dst.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let m2 = op.mass * op.mass;
    if eigenvalues[0] + m2 <= 0.0 {
        return Err(Error::Domain(format!(
            "−Δ+V+m² is not positive definite (lowest eigenvalue {:.6} < −m² = {:.6}); increase the mass",
            eigenvalues[0], -m2
        )));
    }
    let h = grid.spacing();
    let tol_edge = 10.0 * h * h;
    let n_bound = eigenvalues.iter().take_while(|&&e| e < -tol_edge).count();
    let threshold_clear = !eigenvalues.iter().any(|&e| (-tol_edge..=0.0).contains(&e));
    Ok(SpectralData {
        grid: *grid,
        potential: pot.clone(),
        mass: op.mass,
        eigenvalues,
        eigenvectors,
        n_bound,
        tol_edge,
        threshold_clear,
    })
}

impl SpectralData {
    /// Assemble and decompose in one go.
    pub fn build(grid: Grid1D, pot: Potential, mass: f64) -> Result<Self> {
        let op = assemble_operator(&grid, &pot, mass)?;
        spectral_decompose(&op, &grid, &pot)
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn h(&self) -> f64 {
        self.grid.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        self.grid.interior_nodes()
    }

    pub fn operator(&self) -> Operator {
        assemble_operator(&self.grid, &self.potential, self.mass).expect("validated at build time")
    }

    /// Eigenvalues −λ_j² of the bound states.
    pub fn bound_eigenvalues(&self) -> &[f64] {
        &self.eigenvalues[..self.n_bound]
    }

    /// ω_j = √(m² − λ_j²); NaN-free only when m² > λ_j².
    pub fn omegas(&self) -> Vec<f64> {
        let m2 = self.mass * self.mass;
        self.bound_eigenvalues().iter().map(|e| (m2 + e).sqrt()).collect()
    }

    /// L²-normalized bound state φ_j.
    pub fn bound_state(&self, j: usize) -> Vec<f64> {
        assert!(j < self.n_bound);
        let s = 1.0 / self.h().sqrt();
        self.eigvec(j).iter().map(|v| v * s).collect()
    }

    /// Raw ℓ²-normalized eigenvector.
    pub fn eigvec(&self, k: usize) -> &[f64] {
        linalg::column(&self.eigenvectors, self.dim(), k)
    }

    pub fn eigenvector_matrix(&self) -> &[f64] {
        &self.eigenvectors
    }

    /// b_k = √(μ_k + m²) for every continuum eigenpair.
    pub fn b_values(&self) -> Vec<f64> {
        let m2 = self.mass * self.mass;
        self.eigenvalues[self.n_bound..].iter().map(|e| (e + m2).sqrt()).collect()
    }

    /// Ω_k = √(μ_k + m²) for every eigenpair (bound states included).
    pub fn all_frequencies(&self) -> Vec<f64> {
        let m2 = self.mass * self.mass;
        self.eigenvalues.iter().map(|e| (e + m2).sqrt()).collect()
    }

    /// Trapezoid inner product h·Σ a b (bilinear).
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.h() * linalg::dot(a, b)
    }

    /// Bilinear complex pairing ∫ a b (no conjugation).
    pub fn pair(&self, a: &[C64], b: &[C64]) -> C64 {
        self.h() * a.iter().zip(b).map(|(x, y)| x * y).sum::<C64>()
    }

    pub fn l2_norm_c(&self, a: &[C64]) -> f64 {
        (self.h() * a.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt()
    }

    pub fn continuum_range(&self) -> std::ops::Range<usize> {
        self.n_bound..self.dim()
    }

    /// Coordinates of g in the continuum eigenbasis (ℓ² coefficients).
    pub fn continuum_coeffs(&self, g: &[C64]) -> Vec<C64> {
        linalg::project_c(&self.eigenvectors, self.dim(), self.continuum_range(), g)
    }

    pub fn from_continuum_coeffs(&self, c: &[C64]) -> Vec<C64> {
        linalg::synthesize_c(&self.eigenvectors, self.dim(), self.continuum_range(), c)
    }

    /// Discrete coordinates ⟨g, φ_j⟩ (L² pairing).
    pub fn bound_coeffs(&self, g: &[C64]) -> Vec<C64> {
        let s = self.h().sqrt();
        linalg::project_c(&self.eigenvectors, self.dim(), 0..self.n_bound, g)
            .into_iter()
            .map(|z| z * s)
            .collect()
    }

    pub fn project_c(&self, g: &[C64]) -> Vec<C64> {
        let d = linalg::project_c(&self.eigenvectors, self.dim(), 0..self.n_bound, g);
        let back = linalg::synthesize_c(&self.eigenvectors, self.dim(), 0..self.n_bound, &d);
        g.iter().zip(back).map(|(a, b)| a - b).collect()
    }

    pub fn project_c_real(&self, g: &[f64]) -> Vec<f64> {
        let d = linalg::project(&self.eigenvectors, self.dim(), 0..self.n_bound, g);
        let back = linalg::synthesize(&self.eigenvectors, self.dim(), 0..self.n_bound, &d);
        g.iter().zip(back).map(|(a, b)| a - b).collect()
    }

    /// Relative size of the discrete component of g.
    pub fn discrete_fraction(&self, g: &[C64]) -> f64 {
        let gn = linalg::norm_c(g);
        if gn == 0.0 {
            return 0.0;
        }
        let d = linalg::project_c(&self.eigenvectors, self.dim(), 0..self.n_bound, g);
        linalg::norm_c(&d) / gn
    }

    fn check_in_range(&self, g: &[C64]) -> Result<()> {
        if g.len() != self.dim() {
            return Err(Error::Precondition(format!(
                "grid function has {} samples, expected {}",
                g.len(),
                self.dim()
            )));
        }
        let frac = self.discrete_fraction(g);
        if frac > RANGE_TOL {
            return Err(Error::Precondition(format!(
                "grid function has a discrete component of relative size {frac:.3e} (> {RANGE_TOL:e})"
            )));
        }
        Ok(())
    }

    /// F(B)g for g in range(P_c), F evaluated on the continuum values b_k.
    pub fn apply_function(&self, g: &[C64], f: impl Fn(f64) -> C64) -> Vec<C64> {
        let c = self.continuum_coeffs(g);
        let m2 = self.mass * self.mass;
        let scaled: Vec<C64> = c
            .iter()
            .zip(&self.eigenvalues[self.n_bound..])
            .map(|(ck, mu)| ck * f((mu + m2).sqrt()))
            .collect();
        self.from_continuum_coeffs(&scaled)
    }

    /// B^a g. Errors when g has a discrete component above tolerance.
    pub fn apply_b_power(&self, a: f64, g: &[C64]) -> Result<Vec<C64>> {
        self.check_in_range(g)?;
        Ok(self.apply_b_power_projected(a, g))
    }

    /// B^a P_c g without the range check.
    pub fn apply_b_power_projected(&self, a: f64, g: &[C64]) -> Vec<C64> {
        if a == 0.0 {
            return self.apply_function(g, |_| C64::new(1.0, 0.0));
        }
        self.apply_function(g, |b| C64::new(b.powf(a), 0.0))
    }

    /// Real-valued B^a P_c g.
    pub fn apply_b_power_real(&self, a: f64, g: &[f64]) -> Vec<f64> {
        let c = linalg::project(&self.eigenvectors, self.dim(), self.continuum_range(), g);
        let m2 = self.mass * self.mass;
        let scaled: Vec<f64> = c
            .iter()
            .zip(&self.eigenvalues[self.n_bound..])
            .map(|(ck, mu)| ck * (mu + m2).sqrt().powf(a))
            .collect();
        linalg::synthesize(&self.eigenvectors, self.dim(), self.continuum_range(), &scaled)
    }

    /// (B − z)⁻¹ g on range(P_c). Real z must lie below the mass gap; the
    /// continuous spectrum itself needs the limiting-absorption path.
    pub fn resolvent(&self, z: C64, g: &[C64]) -> Result<Vec<C64>> {
        if z.im == 0.0 && z.re >= self.mass {
            return Err(Error::Precondition(format!(
                "real z = {} lies in the continuous spectrum [m, ∞); use limiting absorption",
                z.re
            )));
        }
        self.check_in_range(g)?;
        Ok(self.resolvent_projected(z, g))
    }

    pub fn resolvent_projected(&self, z: C64, g: &[C64]) -> Vec<C64> {
        self.apply_function(g, |b| 1.0 / (C64::new(b, 0.0) - z))
    }

    /// Smallest continuum value of B.
    pub fn b_min(&self) -> f64 {
        self.b_values().first().copied().unwrap_or(f64::INFINITY)
    }

    /// Continuum momenta k_n = √μ_n (μ_n > 0 for continuum modes when the
    /// threshold is clear; clamped at 0 otherwise).
    pub fn continuum_momenta(&self) -> Vec<f64> {
        self.eigenvalues[self.n_bound..].iter().map(|e| e.max(0.0).sqrt()).collect()
    }

    pub fn to_complex(g: &[f64]) -> Vec<C64> {
        g.iter().map(|&x| C64::new(x, 0.0)).collect()
    }
}
