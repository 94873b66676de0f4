//! The local circular law as a measurable experiment.
//!
//! A rescaled test function f_{z0}(mu) = N^{2s} f(N^s (mu - z0)) probes the
//! spectrum at scale N^{-s}. The local statistic
//!
//!   L = N^-1 sum_j f_{z0}(mu_j) - pi^-1 int_D f_{z0} dA
//!
//! is stochastically dominated by N^{-1+2s}; the scaling experiment fits the
//! exponent from Monte Carlo percentiles, and the domination probe measures
//! exceedance frequencies for the `W < N^sigma Psi` events directly.

use crate::ensemble::MatrixSample;
use crate::error::{Error, Result};
use crate::par::{par_map, Parallelism};
use crate::{spectra, C64};
use serde::{Deserialize, Serialize};

/// Compactly supported radial bump with closed-form Laplacian:
/// f(zeta) = amplitude * exp(-1 / (1 - |zeta/r|^2)) inside |zeta| < r, 0
/// outside, shifted to `center` and shrunk to scale N^-s at evaluation time.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TestFunctionSpec {
    pub radius: f64,
    pub amplitude: f64,
    /// Center z0 of the rescaled function.
    pub center: C64,
    /// Scaling parameter s; the support shrinks like N^-s.
    pub scale: f64,
}

impl TestFunctionSpec {
    pub fn bump(radius: f64, center: C64, scale: f64) -> Self {
        TestFunctionSpec {
            radius,
            // normalize the peak to 1
            amplitude: std::f64::consts::E,
            center,
            scale,
        }
    }

    /// Base bump at the unscaled argument.
    pub fn base_eval(&self, xi: C64) -> f64 {
        let t = xi.norm_sqr() / (self.radius * self.radius);
        if t >= 1.0 {
            return 0.0;
        }
        self.amplitude * (-1.0 / (1.0 - t)).exp()
    }

    /// Closed-form Laplacian of the base bump:
    /// with t = |xi/r|^2 and u = 1/(1-t),
    /// (Delta f)(xi) = -(4 A / r^2) e^{-u} u^2 [1 + t (2u - u^2)].
    pub fn base_laplacian(&self, xi: C64) -> f64 {
        let r2 = self.radius * self.radius;
        let t = xi.norm_sqr() / r2;
        if t >= 1.0 {
            return 0.0;
        }
        let u = 1.0 / (1.0 - t);
        -(4.0 * self.amplitude / r2) * (-u).exp() * u * u * (1.0 + t * (2.0 * u - u * u))
    }

    /// f_{z0}(mu) = N^{2s} f(N^s (mu - z0)).
    pub fn eval_rescaled(&self, n: usize, mu: C64) -> f64 {
        let ns = (n as f64).powf(self.scale);
        ns * ns * self.base_eval((mu - self.center) * ns)
    }

    /// Laplacian of the rescaled function: N^{4s} (Delta f)(N^s (z - z0)).
    pub fn laplacian_rescaled(&self, n: usize, z: C64) -> f64 {
        let ns = (n as f64).powf(self.scale);
        ns * ns * ns * ns * self.base_laplacian((z - self.center) * ns)
    }

    /// Radius of supp f_{z0}: r N^{-s}.
    pub fn support_radius(&self, n: usize) -> f64 {
        self.radius * (n as f64).powf(-self.scale)
    }

    /// Integral of the base bump over the plane (equals the L1 norm; the
    /// rescaling preserves it).
    pub fn base_integral(&self) -> f64 {
        // 2 pi int_0^r g(rho) rho drho, radial midpoint rule
        let m = 20_000;
        let h = self.radius / m as f64;
        let mut s = 0.0;
        for k in 0..m {
            let rho = (k as f64 + 0.5) * h;
            s += self.base_eval(C64::new(rho, 0.0)) * rho;
        }
        2.0 * std::f64::consts::PI * s * h
    }
}

/// int_D f_{z0} dA over the unit disk D. In the blown-up variable
/// xi = N^s (zeta - z0) this is the integral of the fixed radial bump over
/// {|xi| < r} intersected with {|z0 + N^-s xi| < 1}; the bump is radial, so
/// the angular measure of the admissible arc is explicit and only a 1D
/// radial quadrature remains.
pub fn disk_integral(f: &TestFunctionSpec, n: usize) -> Result<f64> {
    let coarse = disk_integral_with_nodes(f, n, 4096);
    let fine = disk_integral_with_nodes(f, n, 8192);
    let scale = f.amplitude.abs().max(1e-300) * f.radius * f.radius;
    if (coarse - fine).abs() <= 1e-7 * scale {
        return Ok(fine);
    }
    let finest = disk_integral_with_nodes(f, n, 32_768);
    if (fine - finest).abs() <= 1e-7 * scale {
        Ok(finest)
    } else {
        Err(Error::Quadrature(format!(
            "disk integral did not stabilize: {coarse} vs {fine} vs {finest}"
        )))
    }
}

fn disk_integral_with_nodes(f: &TestFunctionSpec, n: usize, nodes: usize) -> f64 {
    let c = (n as f64).powf(-f.scale);
    let d = f.center.norm();
    let h = f.radius / nodes as f64;
    let mut sum = 0.0;
    for k in 0..nodes {
        let rho = (k as f64 + 0.5) * h;
        let arc = admissible_arc(d, c * rho);
        if arc > 0.0 {
            sum += f.base_eval(C64::new(rho, 0.0)) * rho * arc;
        }
    }
    sum * h
}

/// Angular measure of {theta : |z0 + s e^{i theta}| < 1} given d = |z0|.
fn admissible_arc(d: f64, s: f64) -> f64 {
    use std::f64::consts::PI;
    if d == 0.0 {
        return if s < 1.0 { 2.0 * PI } else { 0.0 };
    }
    let kappa = (1.0 - d * d - s * s) / (2.0 * s * d);
    if kappa >= 1.0 {
        2.0 * PI
    } else if kappa <= -1.0 {
        0.0
    } else {
        2.0 * PI - 2.0 * kappa.acos()
    }
}

/// One evaluation of the local statistic.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LocalStatRecord {
    pub n: usize,
    pub s: f64,
    pub z0: C64,
    pub seed: u64,
    pub value: f64,
}

/// L = N^-1 sum_j f_{z0}(mu_j) - pi^-1 int_D f_{z0} dA.
pub fn local_statistic(sample: &MatrixSample, f: &TestFunctionSpec) -> Result<LocalStatRecord> {
    let mu = spectra::eigenvalues(sample)?;
    local_statistic_from_mu(&mu, f, sample.seed())
}

/// Same, reusing precomputed eigenvalues.
pub fn local_statistic_from_mu(
    mu: &[C64],
    f: &TestFunctionSpec,
    seed: u64,
) -> Result<LocalStatRecord> {
    let n = mu.len();
    let lhs = mu.iter().map(|&m| f.eval_rescaled(n, m)).sum::<f64>() / n as f64;
    let integral = disk_integral(f, n)?;
    Ok(LocalStatRecord {
        n,
        s: f.scale,
        z0: f.center,
        seed,
        value: lhs - integral / std::f64::consts::PI,
    })
}

/// Result of the N^{-1+2s} scaling experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingResult {
    pub records: Vec<LocalStatRecord>,
    /// (N, 90th percentile of |L|) per dimension.
    pub percentiles: Vec<(usize, f64)>,
    /// Least-squares slope of log pct90 vs log N.
    pub slope: f64,
    pub intercept: f64,
}

/// p-th percentile by rank: the ceil(p * len)-th smallest value.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Run `trials` independent local-statistic measurements per dimension and
/// fit the scaling exponent of the 90th percentile. Per-trial seeds are
/// seed ^ trial-index, so the result is independent of execution order.
pub fn scaling_experiment(
    law: crate::ensemble::EntryLaw,
    f_template: &TestFunctionSpec,
    n_list: &[usize],
    trials: usize,
    seed: u64,
    par: Parallelism,
) -> Result<ScalingResult> {
    if n_list.len() < 3 {
        return Err(Error::InsufficientTrials {
            needed: 3,
            got: n_list.len(),
        });
    }
    if trials < 20 {
        return Err(Error::InsufficientTrials {
            needed: 20,
            got: trials,
        });
    }
    let mut records = Vec::with_capacity(n_list.len() * trials);
    let mut percentiles = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let spec = crate::ensemble::EnsembleSpec::new(n, law);
        let f = *f_template;
        let batch = par_map(trials, par, |t| {
            let trial_seed = seed ^ t as u64;
            let sample = crate::ensemble::sample_matrix(&spec, trial_seed)?;
            local_statistic(&sample, &f)
        });
        let batch: Vec<LocalStatRecord> = batch.into_iter().collect::<Result<_>>()?;
        let mut magnitudes: Vec<f64> = batch.iter().map(|r| r.value.abs()).collect();
        magnitudes.sort_by(f64::total_cmp);
        percentiles.push((n, percentile(&magnitudes, 0.9)));
        records.extend(batch);
    }
    let (slope, intercept) = fit_log_slope(&percentiles);
    Ok(ScalingResult {
        records,
        percentiles,
        slope,
        intercept,
    })
}

/// Least squares of ln(y) on ln(N).
pub fn fit_log_slope(points: &[(usize, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let lx = (x as f64).ln();
        let ly = y.ln();
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    (slope, intercept)
}

/// Exceedance frequencies of {|W| > N^sigma Psi(N)}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DominationProbeResult {
    pub rows: Vec<DominationRow>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DominationRow {
    pub sigma: f64,
    pub n: usize,
    pub frequency: f64,
}

/// Sample W(N) `trials` times per (sigma, N) pair and tabulate the frequency
/// of |W| > N^sigma Psi(N). Rows are ordered by sigma then N, so each sigma
/// block reads as a presentation in increasing N.
pub fn domination_probe<W, P>(
    sampler: W,
    psi: P,
    sigma_list: &[f64],
    n_list: &[usize],
    trials: usize,
    seed: u64,
    par: Parallelism,
) -> Result<DominationProbeResult>
where
    W: Fn(usize, u64) -> Result<f64> + Sync,
    P: Fn(usize) -> f64,
{
    let mut rows = Vec::new();
    for &n in n_list {
        let draws = par_map(trials, par, |t| sampler(n, seed ^ t as u64));
        let draws: Vec<f64> = draws.into_iter().collect::<Result<_>>()?;
        for &sigma in sigma_list {
            let threshold = (n as f64).powf(sigma) * psi(n);
            let count = draws.iter().filter(|w| w.abs() > threshold).count();
            rows.push(DominationRow {
                sigma,
                n,
                frequency: count as f64 / trials as f64,
            });
        }
    }
    rows.sort_by(|a, b| {
        a.sigma
            .total_cmp(&b.sigma)
            .then(a.n.cmp(&b.n))
    });
    Ok(DominationProbeResult { rows })
}
