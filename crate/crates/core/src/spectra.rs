//! Eigenvalues of X, singular-value squares of Y_z = X - z, and the Girko
//! hermitization identity
//!
//!   N^-1 sum_j F(mu_j) = (4 pi N)^-1 int Delta F(z) Tr log (Y_z^* Y_z) dA(z)
//!
//! evaluated on both sides. Tr log is always computed from the singular-value
//! squares lambda_j(z), never from a matrix logarithm, so near-singular
//! quadrature nodes are detected explicitly and refined.

use crate::ensemble::MatrixSample;
use crate::error::{Error, Result};
use crate::linalg;
use crate::locallaw::TestFunctionSpec;
use crate::par::{par_map, Parallelism};
use crate::C64;
use serde::{Deserialize, Serialize};

/// Eigenvalues mu_j of X, with multiplicity, unordered.
pub fn eigenvalues(sample: &MatrixSample) -> Result<Vec<C64>> {
    linalg::general_eigenvalues(sample)
}

/// Eigenvalues of Y_z^* Y_z, ascending and clamped to be nonnegative.
/// Values in [-tol, 0) with tol = 1e-12 max(1, lambda_max) are rounded to 0;
/// anything more negative is a solver failure.
pub fn singular_squares(sample: &MatrixSample, z: C64) -> Result<Vec<f64>> {
    let y = linalg::shifted_matrix(sample, z);
    let gram = y.adjoint() * &y;
    let mut lambda = linalg::hermitian_eigenvalues(&gram)?;
    let max = lambda.last().copied().unwrap_or(0.0).abs().max(1.0);
    let tol = 1e-12 * max;
    for l in lambda.iter_mut() {
        if *l < 0.0 {
            if *l >= -tol {
                *l = 0.0;
            } else {
                return Err(Error::Eigensolver(format!(
                    "negative singular square {l} below clamp tolerance {tol}"
                )));
            }
        }
    }
    Ok(lambda)
}

/// Record of lambda_j(z) at one z.
#[derive(Debug, Clone)]
pub struct SingularRecord {
    pub z: C64,
    pub lambda: Vec<f64>,
}

/// Cached spectral data with its trace-consistency validations.
#[derive(Debug, Clone)]
pub struct SpectralData {
    pub mu: Vec<C64>,
    pub records: Vec<SingularRecord>,
}

impl SpectralData {
    pub fn collect(sample: &MatrixSample, z_list: &[C64]) -> Result<Self> {
        let mu = eigenvalues(sample)?;
        let mut records = Vec::with_capacity(z_list.len());
        for &z in z_list {
            records.push(SingularRecord {
                z,
                lambda: singular_squares(sample, z)?,
            });
        }
        let data = SpectralData { mu, records };
        data.validate(sample)?;
        Ok(data)
    }

    /// Trace consistency: sum mu_j = tr X and sum lambda_j(z) = |Y_z|_F^2.
    pub fn validate(&self, sample: &MatrixSample) -> Result<()> {
        let n = sample.dimension();
        let mut tr = C64::new(0.0, 0.0);
        let mut max_entry = 0.0f64;
        for i in 1..=n {
            for j in 1..=n {
                let e = sample.entry(i, j);
                max_entry = max_entry.max(e.norm());
                if i == j {
                    tr += e;
                }
            }
        }
        let sum_mu: C64 = self.mu.iter().sum();
        let tol = 1e-8 * n as f64 * max_entry.max(1e-300);
        if (sum_mu - tr).norm() > tol {
            return Err(Error::Eigensolver(format!(
                "eigenvalue sum {sum_mu} vs trace {tr} beyond {tol}"
            )));
        }
        for rec in &self.records {
            let y = linalg::shifted_matrix(sample, rec.z);
            let mut frob = 0.0;
            for j in 0..n {
                for i in 0..n {
                    frob += y[(i, j)].norm_sqr();
                }
            }
            let sum_lambda: f64 = rec.lambda.iter().sum();
            if (sum_lambda - frob).abs() > 1e-10 * frob.max(1e-300) {
                return Err(Error::Eigensolver(format!(
                    "singular-square sum {sum_lambda} vs Frobenius^2 {frob} at z = {}",
                    rec.z
                )));
            }
        }
        Ok(())
    }
}

/// Left side of the hermitization identity: N^-1 sum_j f_{z0}(mu_j).
pub fn girko_lhs(f: &TestFunctionSpec, mu: &[C64]) -> f64 {
    let n = mu.len();
    mu.iter().map(|&m| f.eval_rescaled(n, m)).sum::<f64>() / n as f64
}

/// Per-node audit row of the right-side quadrature.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GirkoNode {
    pub z: C64,
    pub lambda_min: f64,
    pub sum_log: f64,
}

#[derive(Debug, Clone)]
pub struct GirkoRhs {
    pub value: f64,
    /// Nodes replaced by one level of dyadic refinement.
    pub refined: usize,
    /// Refined children that still needed the logarithm clamp.
    pub flagged: usize,
    pub nodes: Vec<GirkoNode>,
}

/// Right side of the hermitization identity by midpoint quadrature on a
/// `grid x grid` tensor grid over the bounding square of supp f_{z0}:
///
///   (4 pi N)^-1 N^{2s} sum_cells Delta f(xi) [sum_j log lambda_j(z(xi))] h^2
///
/// Near-singular nodes (lambda_min below 1e-14 lambda_max) are re-evaluated
/// on four half-spacing children; a child that is still singular gets the
/// clamped logarithm and is flagged.
pub fn girko_rhs(
    sample: &MatrixSample,
    f: &TestFunctionSpec,
    grid: usize,
    par: Parallelism,
) -> Result<GirkoRhs> {
    let n = sample.dimension();
    let r = f.radius;
    let h = 2.0 * r / grid as f64;
    let ns = (n as f64).powf(f.scale);

    struct NodeOut {
        contribution: f64,
        refined: bool,
        flagged: usize,
        nodes: Vec<GirkoNode>,
    }

    let cells: Vec<(usize, usize)> = (0..grid)
        .flat_map(|i| (0..grid).map(move |j| (i, j)))
        .collect();

    let evaluate = |xi: C64| -> Result<(f64, f64, bool)> {
        // returns (sum log lambda, lambda_min, clamped?)
        let z = f.center + xi / ns;
        let lambda = singular_squares(sample, z)?;
        let max = lambda.last().copied().unwrap_or(0.0);
        let floor = 1e-14 * max;
        let min = lambda.first().copied().unwrap_or(0.0);
        let mut clamped = false;
        let mut sum = 0.0;
        for &l in &lambda {
            let v = if l < floor {
                clamped = true;
                floor
            } else {
                l
            };
            sum += v.ln();
        }
        Ok((sum, min, clamped))
    };

    let outputs = par_map(cells.len(), par, |idx| -> Result<NodeOut> {
        let (i, j) = cells[idx];
        let xi = C64::new(-r + (i as f64 + 0.5) * h, -r + (j as f64 + 0.5) * h);
        let df = f.base_laplacian(xi);
        if df == 0.0 {
            return Ok(NodeOut {
                contribution: 0.0,
                refined: false,
                flagged: 0,
                nodes: Vec::new(),
            });
        }
        let (sum_log, min, clamped) = evaluate(xi)?;
        if !clamped {
            return Ok(NodeOut {
                contribution: df * sum_log * h * h,
                refined: false,
                flagged: 0,
                nodes: vec![GirkoNode {
                    z: f.center + xi / ns,
                    lambda_min: min,
                    sum_log,
                }],
            });
        }
        // one level of dyadic refinement around the rejected node
        let q = h / 4.0;
        let mut contribution = 0.0;
        let mut flagged = 0;
        let mut nodes = Vec::with_capacity(4);
        for (dx, dy) in [(-q, -q), (-q, q), (q, -q), (q, q)] {
            let xic = xi + C64::new(dx, dy);
            let (sum_log, min, still_clamped) = evaluate(xic)?;
            if still_clamped {
                flagged += 1;
            }
            contribution += f.base_laplacian(xic) * sum_log * (h / 2.0) * (h / 2.0);
            nodes.push(GirkoNode {
                z: f.center + xic / ns,
                lambda_min: min,
                sum_log,
            });
        }
        Ok(NodeOut {
            contribution,
            refined: true,
            flagged,
            nodes,
        })
    });

    let mut value = 0.0;
    let mut refined = 0;
    let mut flagged = 0;
    let mut nodes = Vec::new();
    for out in outputs {
        let out = out?;
        value += out.contribution;
        refined += out.refined as usize;
        flagged += out.flagged;
        nodes.extend(out.nodes);
    }
    let scale = ns * ns / (4.0 * std::f64::consts::PI * n as f64);
    Ok(GirkoRhs {
        value: value * scale,
        refined,
        flagged,
        nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{sample_matrix, EnsembleSpec, EntryLaw};
    use faer::Mat;

    #[test]
    fn zero_matrix_eigenvalues_are_zero() {
        let s = MatrixSample::from_real_matrix(Mat::<f64>::zeros(8, 8));
        let mu = eigenvalues(&s).unwrap();
        assert_eq!(mu.len(), 8);
        for m in mu {
            assert!(m.norm() < 1e-14);
        }
    }

    #[test]
    fn diagonal_matrix_eigenvalues() {
        let mut m = Mat::<f64>::zeros(2, 2);
        m[(0, 0)] = 0.3;
        m[(1, 1)] = -0.7;
        let s = MatrixSample::from_real_matrix(m);
        let mut mu = eigenvalues(&s).unwrap();
        mu.sort_by(|a, b| a.re.total_cmp(&b.re));
        assert!((mu[0] - C64::new(-0.7, 0.0)).norm() < 1e-14);
        assert!((mu[1] - C64::new(0.3, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn real_matrix_spectrum_is_conjugate_closed() {
        let spec = EnsembleSpec::new(31, EntryLaw::Gaussian);
        let s = sample_matrix(&spec, 5).unwrap();
        let mu = eigenvalues(&s).unwrap();
        for &m in &mu {
            if m.im.abs() > 1e-12 {
                let found = mu
                    .iter()
                    .any(|&other| (other - m.conj()).norm() < 1e-8);
                assert!(found, "conjugate of {m} missing");
            }
        }
    }

    #[test]
    fn singular_squares_of_zero_matrix() {
        let s = MatrixSample::from_real_matrix(Mat::<f64>::zeros(6, 6));
        // X = 0, z = 1: Y*Y = I
        let l = singular_squares(&s, C64::new(1.0, 0.0)).unwrap();
        for v in &l {
            assert!((v - 1.0).abs() < 1e-12);
        }
        // general z: all |z|^2
        let z = C64::new(0.3, -0.4);
        let l = singular_squares(&s, z).unwrap();
        for v in &l {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn conjugate_symmetry_for_real_samples() {
        let spec = EnsembleSpec::new(24, EntryLaw::Laplace);
        let s = sample_matrix(&spec, 8).unwrap();
        let z = C64::new(0.4, 0.3);
        let a = singular_squares(&s, z).unwrap();
        let b = singular_squares(&s, z.conj()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn spectral_data_trace_consistency() {
        let spec = EnsembleSpec::new(40, EntryLaw::Uniform);
        let s = sample_matrix(&spec, 21).unwrap();
        let zs = [C64::new(0.0, 0.0), C64::new(0.5, 0.2)];
        // collect() runs validate() internally
        let data = SpectralData::collect(&s, &zs).unwrap();
        assert_eq!(data.mu.len(), 40);
        assert_eq!(data.records.len(), 2);
    }

    #[test]
    fn circular_law_headcount_at_n_2000() {
        // area oracle: P(|mu| < 0.8) -> 0.64
        let spec = EnsembleSpec::new(2000, EntryLaw::Gaussian);
        let s = sample_matrix(&spec, 42).unwrap();
        let mu = eigenvalues(&s).unwrap();
        let frac = mu.iter().filter(|m| m.norm() < 0.8).count() as f64 / 2000.0;
        assert!((frac - 0.64).abs() < 0.03, "fraction {frac}");
    }

    #[test]
    fn girko_lhs_zero_function() {
        let mut f = TestFunctionSpec::bump(1.0, C64::new(0.0, 0.0), 0.0);
        f.amplitude = 0.0;
        let mu = vec![C64::new(0.1, 0.2); 5];
        assert_eq!(girko_lhs(&f, &mu), 0.0);
    }

    #[test]
    fn girko_lhs_zero_matrix_bump_at_origin() {
        // all eigenvalues at 0, s = 0: lhs = f(0)
        let f = TestFunctionSpec::bump(3.0, C64::new(0.0, 0.0), 0.0);
        let mu = vec![C64::new(0.0, 0.0); 10];
        let got = girko_lhs(&f, &mu);
        let want = f.base_eval(C64::new(0.0, 0.0));
        assert!((got - want).abs() < 1e-15);
        assert!((want - 1.0).abs() < 1e-15, "peak normalized to 1");
    }

    #[test]
    fn girko_rhs_zero_function() {
        let spec = EnsembleSpec::new(12, EntryLaw::Gaussian);
        let s = sample_matrix(&spec, 2).unwrap();
        let mut f = TestFunctionSpec::bump(0.5, C64::new(0.0, 0.0), 0.0);
        f.amplitude = 0.0;
        let rhs = girko_rhs(&s, &f, 20, Parallelism::Sequential).unwrap();
        assert_eq!(rhs.value, 0.0);
    }

    #[test]
    fn girko_identity_small_matrix() {
        // N = 24, radius-1/2 bump at the origin: identity to quadrature error
        let spec = EnsembleSpec::new(24, EntryLaw::Gaussian);
        let s = sample_matrix(&spec, 77).unwrap();
        let f = TestFunctionSpec::bump(0.5, C64::new(0.0, 0.0), 0.0);
        let mu = eigenvalues(&s).unwrap();
        let lhs = girko_lhs(&f, &mu);
        let rhs = girko_rhs(&s, &f, 100, Parallelism::Rayon).unwrap();
        let gap = (rhs.value - lhs).abs() / (lhs.abs() + 1e-6);
        assert!(gap < 2e-2, "lhs {lhs} rhs {} gap {gap}", rhs.value);
    }
}
