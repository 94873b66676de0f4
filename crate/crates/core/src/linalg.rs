//! Thin dense kernels shared by the spectral modules: shifted matrices,
//! Hermitian eigendecompositions and complex resolvent inverses. Everything
//! here is a direct dense solve; exactness tests upstream rely on
//! machine-precision residuals, and the sizes stay at desk scale.

use crate::ensemble::{MatrixSample, SampleEntries};
use crate::error::{Error, Result};
use crate::C64;
use faer::linalg::solvers::DenseSolveCore;
use faer::{Mat, Side};

/// Y_z = X - z I as a complex matrix.
pub fn shifted_matrix(sample: &MatrixSample, z: C64) -> Mat<C64> {
    let n = sample.dimension();
    match sample.entries() {
        SampleEntries::Real(m) => Mat::from_fn(n, n, |i, j| {
            let mut v = C64::new(m[(i, j)], 0.0);
            if i == j {
                v -= z;
            }
            v
        }),
        SampleEntries::Complex(m) => Mat::from_fn(n, n, |i, j| {
            let mut v = m[(i, j)];
            if i == j {
                v -= z;
            }
            v
        }),
    }
}

/// Eigenvalues of the Hermitian matrix M, ascending.
pub fn hermitian_eigenvalues(m: &Mat<C64>) -> Result<Vec<f64>> {
    let mut vals = m
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Eigensolver(format!("self-adjoint eigenvalues: {e:?}")))?;
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

/// Full Hermitian eigendecomposition M = V diag(vals) V^*.
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: Mat<C64>,
}

pub fn hermitian_eigen(m: &Mat<C64>) -> Result<HermitianEigen> {
    let eig = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigensolver(format!("self-adjoint eigen: {e:?}")))?;
    let n = m.nrows();
    let values: Vec<f64> = (0..n).map(|k| eig.S()[k].re).collect();
    Ok(HermitianEigen {
        values,
        vectors: eig.U().to_owned(),
    })
}

/// Eigenvalues of a general (non-Hermitian) real or complex sample matrix.
pub fn general_eigenvalues(sample: &MatrixSample) -> Result<Vec<C64>> {
    match sample.entries() {
        SampleEntries::Real(m) => m
            .eigenvalues()
            .map_err(|e| Error::Eigensolver(format!("real eigenvalues: {e:?}"))),
        SampleEntries::Complex(m) => m
            .eigenvalues()
            .map_err(|e| Error::Eigensolver(format!("complex eigenvalues: {e:?}"))),
    }
}

/// (M - w I)^-1 for Hermitian M given as a dense complex matrix.
pub fn resolvent_inverse(m: &Mat<C64>, w: C64) -> Result<Mat<C64>> {
    let n = m.nrows();
    if w.im <= 0.0 {
        return Err(Error::SingularSolve(format!(
            "resolvent requested at w = {w} with Im w <= 0"
        )));
    }
    let shifted = Mat::from_fn(n, n, |i, j| {
        let mut v = m[(i, j)];
        if i == j {
            v -= w;
        }
        v
    });
    Ok(shifted.partial_piv_lu().inverse())
}

/// Max-norm residual of ||(M - w) G - I||.
pub fn resolvent_residual(m: &Mat<C64>, w: C64, g: &Mat<C64>) -> f64 {
    let n = m.nrows();
    let shifted = Mat::from_fn(n, n, |i, j| {
        let mut v = m[(i, j)];
        if i == j {
            v -= w;
        }
        v
    });
    let prod = &shifted * g;
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let want = if i == j {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            };
            worst = worst.max((prod[(i, j)] - want).norm());
        }
    }
    worst
}

/// Trace / N of a square complex matrix, normalized by an explicit N (the
/// minor calculus always normalizes by the original dimension).
pub fn trace_over_n(m: &Mat<C64>, n: usize) -> C64 {
    let mut t = C64::new(0.0, 0.0);
    for i in 0..m.nrows() {
        t += m[(i, i)];
    }
    t / n as f64
}

/// m(w) = N^-1 sum_j (lambda_j - w)^-1 from a precomputed spectrum,
/// normalized by an explicit N.
pub fn stieltjes_from_spectrum(lambda: &[f64], w: C64, n: usize) -> C64 {
    let mut s = C64::new(0.0, 0.0);
    for &l in lambda {
        s += (C64::new(l, 0.0) - w).inv();
    }
    s / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{sample_matrix, EnsembleSpec, EntryLaw};

    #[test]
    fn resolvent_inverse_matches_residual_bound() {
        let spec = EnsembleSpec::new(24, EntryLaw::Gaussian);
        let s = sample_matrix(&spec, 2).unwrap();
        let y = shifted_matrix(&s, C64::new(0.3, 0.1));
        let a = y.adjoint() * &y;
        let w = C64::new(0.4, 0.05);
        let g = resolvent_inverse(&a, w).unwrap();
        assert!(resolvent_residual(&a, w, &g) < 1e-10);
    }

    #[test]
    fn stieltjes_from_spectrum_matches_trace() {
        let spec = EnsembleSpec::new(16, EntryLaw::Uniform);
        let s = sample_matrix(&spec, 3).unwrap();
        let y = shifted_matrix(&s, C64::new(0.2, 0.0));
        let a = y.adjoint() * &y;
        let w = C64::new(0.5, 0.2);
        let g = resolvent_inverse(&a, w).unwrap();
        let m_trace = trace_over_n(&g, 16);
        let lambda = hermitian_eigenvalues(&a).unwrap();
        let m_spec = stieltjes_from_spectrum(&lambda, w, 16);
        assert!((m_trace - m_spec).norm() < 1e-12);
    }
}
