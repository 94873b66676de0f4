//! The deterministic spectral limit: the self-consistent Stieltjes transform
//! m_c(w,z) solving
//!
//!   m_c^-1 = -w (1 + m_c) + |z|^2 (1 + m_c)^-1,   Im m_c > 0,
//!
//! its density rho_c(x,z), the spectral edges lambda_pm(z), and comparisons
//! against empirical spectra. Clearing denominators turns the equation into
//! the cubic  w m^3 + 2w m^2 + (w + 1 - |z|^2) m + 1 = 0, solved in closed
//! form with a Newton polish on the original equation; the unique root in the
//! upper half plane is the Herglotz branch.

use crate::ensemble::MatrixSample;
use crate::error::{Error, Result};
use crate::{linalg, spectra, C64};
use serde::{Deserialize, Serialize};

/// Solved point of the self-consistent equation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SelfConsistentPoint {
    pub w: C64,
    pub z: C64,
    pub m_c: C64,
    /// |m^-1 + w(1+m) - |z|^2 (1+m)^-1| at the returned root.
    pub residual: f64,
    pub branch: BranchNote,
}

/// Which cubic root was selected, plus all three roots for audit.
///
/// For z != 0 the cubic generically has TWO roots in the upper half plane:
/// the Stieltjes branch and a spurious root from the -1 - |z| w^(-1/2)
/// family. The physical branch is the one that is the Stieltjes transform of
/// a positive measure on [0, inf), characterized by Im m > 0 AND
/// Im(w m) > 0 (the latter equals eta int x rho/|x-w|^2 >= 0); the spurious
/// root always has Im(w m) ~ -eta - |z| Im sqrt(w) < 0.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BranchNote {
    pub selected: usize,
    pub roots: [C64; 3],
}

impl BranchNote {
    pub fn im_parts(&self) -> [f64; 3] {
        [self.roots[0].im, self.roots[1].im, self.roots[2].im]
    }
}

fn cubic_residual(m: C64, w: C64, zsq: f64) -> f64 {
    (m.inv() + w * (C64::new(1.0, 0.0) + m) - zsq / (C64::new(1.0, 0.0) + m)).norm()
}

/// Roots of the monic cubic t^3 + a2 t^2 + a1 t + a0 over C (Cardano).
fn cubic_roots(a2: C64, a1: C64, a0: C64) -> [C64; 3] {
    let third: f64 = 1.0 / 3.0;
    let shift = a2 * third;
    // depressed cubic t^3 + p t + q, m = t - a2/3
    let p = a1 - a2 * a2 * third;
    let q = a0 - a2 * a1 * third + a2 * a2 * a2 * (2.0 / 27.0);
    let disc = (q * q * 0.25 + p * p * p / 27.0).sqrt();
    // pick the cube-root argument with the larger magnitude to dodge
    // cancellation
    let c1 = -q * 0.5 + disc;
    let c2 = -q * 0.5 - disc;
    let c = if c1.norm() >= c2.norm() { c1 } else { c2 };
    let u = c.powf(1.0 / 3.0);
    let omega = C64::new(-0.5, 3.0f64.sqrt() / 2.0);
    let mut roots = [C64::new(0.0, 0.0); 3];
    for (k, root) in roots.iter_mut().enumerate() {
        let uk = u * omega.powu(k as u32);
        let t = if uk.norm() > 1e-300 {
            uk - p / (uk * 3.0)
        } else {
            C64::new(0.0, 0.0)
        };
        *root = t - shift;
    }
    roots
}

/// Solve the self-consistent equation at (w, z), Im w > 0.
pub fn mc_solve(w: C64, z: C64) -> Result<SelfConsistentPoint> {
    if w.im <= 0.0 {
        return Err(Error::Domain(format!(
            "mc_solve needs Im w > 0, got w = {w}"
        )));
    }
    let zsq = z.norm_sqr();
    // w m^3 + 2w m^2 + (w + 1 - |z|^2) m + 1 = 0, made monic
    let a2 = C64::new(2.0, 0.0);
    let a1 = (w + 1.0 - zsq) / w;
    let a0 = w.inv();
    let mut roots = cubic_roots(a2, a1, a0);
    // Newton polish on the original equation; F(m) = 1/m + w(1+m) - |z|^2/(1+m)
    for m in roots.iter_mut() {
        for _ in 0..3 {
            let one_plus = C64::new(1.0, 0.0) + *m;
            let f = m.inv() + w * one_plus - zsq / one_plus;
            let fp = -m.inv() * m.inv() + w + zsq / (one_plus * one_plus);
            if fp.norm() < 1e-300 {
                break;
            }
            let step = f / fp;
            if !step.re.is_finite() || !step.im.is_finite() {
                break;
            }
            *m -= step;
        }
    }
    let stieltjes: Vec<usize> = (0..3)
        .filter(|&k| roots[k].im > 1e-14 && (w * roots[k]).im > 0.0)
        .collect();
    if stieltjes.len() != 1 {
        return Err(Error::DegenerateRoots {
            w,
            z,
            count: stieltjes.len(),
            roots,
        });
    }
    let selected = stieltjes[0];
    let m_c = roots[selected];
    Ok(SelfConsistentPoint {
        w,
        z,
        m_c,
        residual: cubic_residual(m_c, w, zsq),
        branch: BranchNote { selected, roots },
    })
}

/// Deterministic spectral edges of the singular-square density of X - z.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EdgeData {
    pub z: C64,
    /// alpha = sqrt(1 + 8 |z|^2).
    pub alpha: f64,
    /// (alpha - 3)^3 / (8 (alpha - 1)); -infinity at z = 0.
    pub lambda_minus: f64,
    /// (alpha + 3)^3 / (8 (alpha + 1)).
    pub lambda_plus: f64,
}

impl EdgeData {
    /// max{0, lambda_-}.
    pub fn support_lower(&self) -> f64 {
        self.lambda_minus.max(0.0)
    }

    pub fn support_upper(&self) -> f64 {
        self.lambda_plus
    }
}

/// lambda_pm(z) = (alpha +- 3)^3 / (8 (alpha +- 1)), alpha = sqrt(1+8|z|^2).
pub fn lambda_pm(z: C64) -> EdgeData {
    let zsq = z.norm_sqr();
    let alpha = (1.0 + 8.0 * zsq).sqrt();
    let lambda_plus = (alpha + 3.0).powi(3) / (8.0 * (alpha + 1.0));
    let lambda_minus = if zsq == 0.0 {
        f64::NEG_INFINITY
    } else {
        (alpha - 3.0).powi(3) / (8.0 * (alpha - 1.0))
    };
    EdgeData {
        z,
        alpha,
        lambda_minus,
        lambda_plus,
    }
}

/// rho_c(x, z) on a grid, from the eta -> 0 limit of Im m_c / pi.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityCurve {
    pub z: C64,
    pub x: Vec<f64>,
    pub rho: Vec<f64>,
    pub eta: f64,
    /// Grid indices where the solver failed.
    pub invalid: Vec<usize>,
}

impl DensityCurve {
    /// Trapezoid mass on the curve's own grid.
    pub fn mass(&self) -> f64 {
        let mut s = 0.0;
        for k in 1..self.x.len() {
            s += 0.5 * (self.rho[k] + self.rho[k - 1]) * (self.x[k] - self.x[k - 1]);
        }
        s
    }

    /// Largest grid x with rho > threshold.
    pub fn detected_right_edge(&self, threshold: f64) -> Option<f64> {
        self.x
            .iter()
            .zip(&self.rho)
            .rev()
            .find(|(_, &r)| r > threshold)
            .map(|(&x, _)| x)
    }
}

/// Edge-aware grid over [support - margin, support + margin]: square-root
/// clustering at a hard lower edge (|z| <= 1, where the density blows up like
/// an inverse root) keeps the trapezoid mass accurate.
pub fn support_grid(z: C64, nodes: usize, margin: f64) -> Vec<f64> {
    let edges = lambda_pm(z);
    let lo = edges.support_lower();
    let hi = edges.support_upper();
    let hard_edge = edges.lambda_minus <= 0.0;
    let mut x = Vec::with_capacity(nodes + 64);
    let below = 32.min(nodes / 8).max(2);
    if margin > 0.0 {
        if hard_edge {
            // approach the hard edge geometrically so the junction cell is
            // tiny: the density blows up like an inverse root at lo and a
            // wide trapezoid cell against it would fabricate mass
            for k in 0..below {
                x.push(lo - margin * 0.5f64.powi(k as i32));
            }
        } else {
            for k in 0..below {
                x.push(lo - margin + margin * k as f64 / below as f64);
            }
        }
    }
    if hard_edge {
        for k in 0..nodes {
            let u = k as f64 / (nodes - 1) as f64;
            x.push(lo + u * u * (hi - lo));
        }
    } else {
        for k in 0..nodes {
            let u = k as f64 / (nodes - 1) as f64;
            x.push(lo + u * (hi - lo));
        }
    }
    if margin > 0.0 {
        for k in 1..=below {
            x.push(hi + margin * k as f64 / below as f64);
        }
    }
    x
}

/// Evaluate rho_c on the given grid: Im m_c(x + i eta)/pi Richardson-
/// extrapolated from eta and eta/2, with the support indicator applied.
pub fn rho_c(x_grid: &[f64], z: C64, eta: f64) -> Result<DensityCurve> {
    let edges = lambda_pm(z);
    let lo = edges.support_lower();
    let hi = edges.support_upper();
    let mut rho = Vec::with_capacity(x_grid.len());
    let mut invalid = Vec::new();
    for (k, &x) in x_grid.iter().enumerate() {
        if x < lo || x > hi {
            rho.push(0.0);
            continue;
        }
        let v1 = mc_solve(C64::new(x, eta), z);
        let v2 = mc_solve(C64::new(x, eta / 2.0), z);
        match (v1, v2) {
            (Ok(p1), Ok(p2)) => {
                let extrapolated = 2.0 * p2.m_c.im - p1.m_c.im;
                rho.push((extrapolated / std::f64::consts::PI).max(0.0));
            }
            _ => {
                rho.push(f64::NAN);
                invalid.push(k);
            }
        }
    }
    Ok(DensityCurve {
        z,
        x: x_grid.to_vec(),
        rho,
        eta,
        invalid,
    })
}

/// Marchenko-Pastur density (square case): sqrt((4-x)/x) / (2 pi) on (0, 4].
/// This is rho_c(x, 0); kept in closed form as the z = 0 reference.
pub fn mp_density(x: f64) -> f64 {
    if x <= 0.0 || x >= 4.0 {
        return 0.0;
    }
    ((4.0 - x) / x).sqrt() / (2.0 * std::f64::consts::PI)
}

/// Marchenko-Pastur Stieltjes transform (-1 + sqrt(1 - 4/w)) / 2 on the
/// principal branch, Herglotz for Im w > 0.
pub fn mp_stieltjes(w: C64) -> C64 {
    (C64::new(-1.0, 0.0) + (C64::new(1.0, 0.0) - 4.0 * w.inv()).sqrt()) * 0.5
}

/// Marchenko-Pastur CDF in closed form: (2/pi)(u sqrt(1-u^2) + asin u),
/// u = sqrt(x)/2.
pub fn mp_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 4.0 {
        return 1.0;
    }
    let u = x.sqrt() / 2.0;
    (2.0 / std::f64::consts::PI) * (u * (1.0 - u * u).sqrt() + u.asin())
}

/// Comparison of an empirical singular-square spectrum against rho_c.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceReport {
    pub z: C64,
    /// Kolmogorov distance between the empirical CDF and the rho_c CDF.
    pub ks: f64,
    /// |m(w) - m_c(w)| at the supplied w nodes.
    pub m_diffs: Vec<(C64, f64)>,
    /// Input had zero entry variance (deterministic matrix).
    pub flagged_deterministic: bool,
}

/// CDF of rho_c tabulated on a dense edge-aware grid.
pub struct RhoCdf {
    x: Vec<f64>,
    cdf: Vec<f64>,
}

impl RhoCdf {
    pub fn build(z: C64, nodes: usize) -> Result<RhoCdf> {
        let grid = support_grid(z, nodes, 0.0);
        let curve = rho_c(&grid, z, 1e-5)?;
        let mut cdf = Vec::with_capacity(grid.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for k in 1..grid.len() {
            acc += 0.5 * (curve.rho[k] + curve.rho[k - 1]) * (grid[k] - grid[k - 1]);
            cdf.push(acc);
        }
        let total = acc;
        if total <= 0.0 {
            return Err(Error::Domain("rho_c mass vanished".into()));
        }
        for v in cdf.iter_mut() {
            *v /= total;
        }
        Ok(RhoCdf { x: grid, cdf })
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.x[0] {
            return 0.0;
        }
        if x >= *self.x.last().unwrap() {
            return 1.0;
        }
        let k = self.x.partition_point(|&v| v <= x);
        let (x0, x1) = (self.x[k - 1], self.x[k]);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        if x1 > x0 {
            c0 + (c1 - c0) * (x - x0) / (x1 - x0)
        } else {
            c1
        }
    }
}

/// Kolmogorov distance of a sorted sample against a CDF.
pub fn kolmogorov_distance(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    let mut ks = 0.0f64;
    for (j, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        ks = ks.max((f - j as f64 / n).abs());
        ks = ks.max((f - (j + 1) as f64 / n).abs());
    }
    ks
}

/// KS distance between the empirical singular-square CDF at z and rho_c,
/// plus pointwise |m - m_c| at the supplied w grid.
pub fn empirical_vs_rho(
    sample: &MatrixSample,
    z: C64,
    w_grid: &[C64],
) -> Result<DistanceReport> {
    let lambda = spectra::singular_squares(sample, z)?;
    let rho_cdf = RhoCdf::build(z, 6000)?;
    let ks = kolmogorov_distance(&lambda, |x| rho_cdf.eval(x));
    let n = sample.dimension();
    let mut m_diffs = Vec::with_capacity(w_grid.len());
    for &w in w_grid {
        let m = linalg::stieltjes_from_spectrum(&lambda, w, n);
        let mc = mc_solve(w, z)?;
        m_diffs.push((w, (m - mc.m_c).norm()));
    }
    Ok(DistanceReport {
        z,
        ks,
        m_diffs,
        flagged_deterministic: sample.scaled_variance() == 0.0,
    })
}
