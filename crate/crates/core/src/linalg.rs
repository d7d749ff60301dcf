//! Dense kernels over a column-major orthonormal basis.
//!
//! The eigenvector matrix is large (≈33 MB at N = 2048) and is streamed once
//! per product, so these loops are memory bound; several accumulators let
//! the compiler vectorize without `target-cpu` flags.

use num_complex::Complex64 as C64;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s: f64 = acc.iter().sum();
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yy, xx) in y.iter_mut().zip(x) {
        *yy += alpha * xx;
    }
}

/// Column view of a column-major n×n matrix.
#[inline]
pub fn column(q: &[f64], n: usize, j: usize) -> &[f64] {
    &q[j * n..(j + 1) * n]
}

/// c_j = ⟨Q_j, x⟩ for j in `cols`.
pub fn project(q: &[f64], n: usize, cols: std::ops::Range<usize>, x: &[f64]) -> Vec<f64> {
    cols.map(|j| dot(column(q, n, j), x)).collect()
}

/// Σ_j c_j Q_j over `cols` (c indexed from cols.start).
pub fn synthesize(q: &[f64], n: usize, cols: std::ops::Range<usize>, c: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (k, j) in cols.enumerate() {
        if c[k] != 0.0 {
            axpy(c[k], column(q, n, j), &mut out);
        }
    }
    out
}

/// Complex version of [`project`], streaming the matrix once.
pub fn project_c(q: &[f64], n: usize, cols: std::ops::Range<usize>, x: &[C64]) -> Vec<C64> {
    let re: Vec<f64> = x.iter().map(|z| z.re).collect();
    let im: Vec<f64> = x.iter().map(|z| z.im).collect();
    let any_im = im.iter().any(|v| *v != 0.0);
    cols.map(|j| {
        let col = column(q, n, j);
        let r = dot(col, &re);
        let i = if any_im { dot(col, &im) } else { 0.0 };
        C64::new(r, i)
    })
    .collect()
}

/// Complex version of [`synthesize`].
pub fn synthesize_c(q: &[f64], n: usize, cols: std::ops::Range<usize>, c: &[C64]) -> Vec<C64> {
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for (k, j) in cols.enumerate() {
        let col = column(q, n, j);
        if c[k].re != 0.0 {
            axpy(c[k].re, col, &mut re);
        }
        if c[k].im != 0.0 {
            axpy(c[k].im, col, &mut im);
        }
    }
    re.into_iter().zip(im).map(|(r, i)| C64::new(r, i)).collect()
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn norm_c(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Solve a dense complex system by partial-pivot LU. `a` is row-major n×n.
pub fn solve_complex(a: &[C64], n: usize, rhs: &[C64]) -> Option<Vec<C64>> {
    use faer::linalg::solvers::Solve;
    let m = faer::Mat::<faer::c64>::from_fn(n, n, |i, j| {
        let z = a[i * n + j];
        faer::c64::new(z.re, z.im)
    });
    let b = faer::Mat::<faer::c64>::from_fn(n, 1, |i, _| faer::c64::new(rhs[i].re, rhs[i].im));
    let lu = m.partial_piv_lu();
    let x = lu.solve(&b);
    let out: Vec<C64> = (0..n).map(|i| C64::new(x[(i, 0)].re, x[(i, 0)].im)).collect();
    if out.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Some(out)
    } else {
        None
    }
}
