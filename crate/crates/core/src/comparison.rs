//! Green-function comparison apparatus: the cutoff kit (h, chi, phi), the
//! integration domain I_eps, the functionals A_X^(f) and Z_{X,c}^(g), the
//! entry-swapping interpolation with its matrices Qtilde/Q/R/S/T, the Taylor
//! coefficients P_n and B_n, the script-P integrals, and the Monte Carlo
//! probe of the N^(-1/2) expectation gain.
//!
//! The expansion machinery works at fixed (a,b) and real entry perturbations
//! v; the P coefficients are the exact Taylor coefficients of
//! v -> Re tr S(v)/N, valid for complex z (they reduce to the familiar
//! one-sided expressions when z is real, where R is complex-symmetric).

use crate::ensemble::{EnsembleSpec, MatrixSample};
use crate::error::{Error, Result};
use crate::jet::Jet4;
use crate::locallaw::TestFunctionSpec;
use crate::par::{par_map, Parallelism};
use crate::{density, green, linalg, C64};
use faer::Mat;
use serde::{Deserialize, Serialize};

/// Smooth cutoff machinery at a fixed epsilon.
///
/// h is the psi-ratio partition-of-unity step: 0 on (-inf, 1], 1 on
/// [2, +inf), strictly increasing in between, extended evenly to the whole
/// line (h(x) = h(-x)); all derivatives vanish outside 1 < |x| < 2.
/// chi(y) = 1 - h(2|y|) is 1 on |y| <= 1/2 and supported in [-1, 1].
/// phi_{eps,z}(x) = h(N^{2-2eps} x) log(x) (1 - h(x / (2 lambda_+))).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CutoffKit {
    pub epsilon: f64,
}

fn psi(t: Jet4) -> Jet4 {
    if t.value() <= 0.0 {
        Jet4::constant(0.0)
    } else {
        (-(t.recip())).exp()
    }
}

impl CutoffKit {
    pub fn new(epsilon: f64) -> Self {
        CutoffKit { epsilon }
    }

    /// h and its first four derivatives at x.
    pub fn h_jet(&self, x: f64) -> Jet4 {
        let ax = x.abs();
        let jet = if ax <= 1.0 {
            Jet4::constant(0.0)
        } else if ax >= 2.0 {
            Jet4::constant(1.0)
        } else {
            let t = Jet4::variable(ax);
            let up = psi(t - Jet4::constant(1.0));
            let down = psi(Jet4::constant(2.0) - t);
            up / (up + down)
        };
        if x < 0.0 {
            jet.reflect()
        } else {
            jet
        }
    }

    pub fn h(&self, x: f64) -> f64 {
        self.h_jet(x).value()
    }

    /// [h, h', h'', h''', h''''] at x.
    pub fn h_derivs(&self, x: f64) -> [f64; 5] {
        self.h_jet(x).derivatives()
    }

    /// chi(y) = 1 - h(2|y|).
    pub fn chi(&self, y: f64) -> f64 {
        1.0 - self.h(2.0 * y.abs())
    }

    /// phi_{eps,z}(x); lambda_plus is the z-dependent right edge.
    pub fn phi(&self, x: f64, n: usize, lambda_plus: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let inner_scale = (n as f64).powf(2.0 - 2.0 * self.epsilon);
        self.h(inner_scale * x) * x.ln() * (1.0 - self.h(x / (2.0 * lambda_plus)))
    }

    /// phi'(x) in closed form from the h derivatives.
    pub fn phi_prime(&self, x: f64, n: usize, lambda_plus: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let c = (n as f64).powf(2.0 - 2.0 * self.epsilon);
        let h_in = self.h_jet(c * x);
        let h_out = self.h_jet(x / (2.0 * lambda_plus));
        let hi = h_in.value();
        let hi_p = h_in.derivatives()[1];
        let ho = h_out.value();
        let ho_p = h_out.derivatives()[1];
        c * hi_p * x.ln() * (1.0 - ho) + hi * (1.0 - ho) / x
            - hi * x.ln() * ho_p / (2.0 * lambda_plus)
    }
}

/// One quadrature node of I_eps.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DomainNode {
    pub e: f64,
    pub eta: f64,
    /// dE * deta weight of the node.
    pub weight: f64,
}

/// Quadrature over I_eps = { w = E + i eta : N^{-1+eps} sqrt(E) <= eta,
/// E >= N^{-2+2eps}, |w| <= eps }, log-spaced in both E and eta, with the
/// E-range clipped to where phi' can be nonzero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntegrationDomain {
    pub n: usize,
    pub epsilon: f64,
    pub nodes: Vec<DomainNode>,
}

impl IntegrationDomain {
    pub fn new(n: usize, epsilon: f64, e_nodes: usize, eta_nodes: usize) -> Result<Self> {
        if epsilon <= 0.0 || epsilon >= 1.0 {
            return Err(Error::Domain(format!("epsilon {epsilon} out of (0,1)")));
        }
        let nf = n as f64;
        let e_min = nf.powf(-2.0 + 2.0 * epsilon);
        let e_max = epsilon;
        if e_min >= e_max {
            return Err(Error::Domain(format!(
                "I_eps empty: E range [{e_min}, {e_max}]"
            )));
        }
        let lu_min = e_min.ln();
        let lu_max = e_max.ln();
        let du = (lu_max - lu_min) / e_nodes as f64;
        let mut nodes = Vec::new();
        for i in 0..e_nodes {
            let e = (lu_min + (i as f64 + 0.5) * du).exp();
            let de = e * du;
            let eta_lo = nf.powf(-1.0 + epsilon) * e.sqrt();
            let eta_hi_sq = epsilon * epsilon - e * e;
            if eta_hi_sq <= 0.0 {
                continue;
            }
            let eta_hi = eta_hi_sq.sqrt();
            if eta_lo >= eta_hi {
                continue;
            }
            let lv_min = eta_lo.ln();
            let lv_max = eta_hi.ln();
            let dv = (lv_max - lv_min) / eta_nodes as f64;
            for j in 0..eta_nodes {
                let eta = (lv_min + (j as f64 + 0.5) * dv).exp();
                let deta = eta * dv;
                nodes.push(DomainNode {
                    e,
                    eta,
                    weight: de * deta,
                });
            }
        }
        let domain = IntegrationDomain { n, epsilon, nodes };
        domain.validate()?;
        Ok(domain)
    }

    /// Every node satisfies |w|^(1/2) <= 2 N^(1-eps) eta.
    pub fn validate(&self) -> Result<()> {
        let c = 2.0 * (self.n as f64).powf(1.0 - self.epsilon);
        for node in &self.nodes {
            let w_abs = (node.e * node.e + node.eta * node.eta).sqrt();
            if w_abs.sqrt() > c * node.eta {
                return Err(Error::Domain(format!(
                    "node E={} eta={} violates |w|^(1/2) <= 2 N^(1-eps) eta",
                    node.e, node.eta
                )));
            }
        }
        Ok(())
    }
}

/// t_X = N^(-eps) N eta Re m(w, z).
pub fn t_from_re_m(re_m: f64, n: usize, eta: f64, epsilon: f64) -> f64 {
    (n as f64).powf(-epsilon) * n as f64 * eta * re_m
}

/// t statistic of a sample at (w, z).
pub fn t_statistic(sample: &MatrixSample, epsilon: f64, w: C64, z: C64) -> Result<f64> {
    let lambda = crate::spectra::singular_squares(sample, z)?;
    let m = linalg::stieltjes_from_spectrum(&lambda, w, sample.dimension());
    Ok(t_from_re_m(m.re, sample.dimension(), w.im, epsilon))
}

/// chi_a = 1(|Re m^(a,a)| >= 1/2 N^eps (N eta)^-1), with the minor trace
/// m^(a,a) from the green module.
pub fn chi_a_indicator(
    sample: &MatrixSample,
    a: usize,
    epsilon: f64,
    w: C64,
    z: C64,
) -> Result<bool> {
    let n = sample.dimension();
    let state = green::green(sample, z, w, &green::MinorIndex::new([a], [a]))?;
    let threshold = 0.5 * (n as f64).powf(epsilon) / (n as f64 * w.im);
    Ok(state.m_g.re.abs() >= threshold)
}

/// xi-plane tensor grid paired with the I_eps quadrature.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionalGrids {
    /// Midpoint cells per side over the bounding square of supp f.
    pub xi_per_side: usize,
    pub domain: IntegrationDomain,
}

impl FunctionalGrids {
    pub fn standard(n: usize, epsilon: f64) -> Result<Self> {
        Ok(FunctionalGrids {
            xi_per_side: 16,
            domain: IntegrationDomain::new(n, epsilon, 48, 32)?,
        })
    }
}

/// Per-cell audit row of the outer xi quadrature.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CellAudit {
    pub xi: C64,
    pub z: C64,
    pub laplacian: f64,
    /// Inner I_eps integral at this cell.
    pub inner: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionalValue {
    pub value: f64,
    pub nodes_total: usize,
    pub nodes_failed: usize,
    pub cells: Vec<CellAudit>,
}

enum Integrand {
    /// h(t_X) Re m - Re m_c
    WithCutoff,
    /// Re(m - m_c)
    Plain,
}

fn functional_impl(
    sample: &MatrixSample,
    f: &TestFunctionSpec,
    epsilon: f64,
    grids: &FunctionalGrids,
    kind: Integrand,
    par: Parallelism,
) -> Result<FunctionalValue> {
    let n = sample.dimension();
    let kit = CutoffKit::new(epsilon);
    let m_side = grids.xi_per_side;
    let r = f.radius;
    let h_cell = 2.0 * r / m_side as f64;
    let ns = (n as f64).powf(f.scale);
    let cells: Vec<(usize, usize)> = (0..m_side)
        .flat_map(|i| (0..m_side).map(move |j| (i, j)))
        .collect();

    let outputs = par_map(
        cells.len(),
        par,
        |idx| -> Result<(f64, usize, usize, Option<CellAudit>)> {
            let (i, j) = cells[idx];
            let xi = C64::new(-r + (i as f64 + 0.5) * h_cell, -r + (j as f64 + 0.5) * h_cell);
            let df = f.base_laplacian(xi);
            if df == 0.0 {
                return Ok((0.0, 0, 0, None));
            }
            let z = f.center + xi / ns;
            let lambda_plus = density::lambda_pm(z).lambda_plus;
            let spectrum = crate::spectra::singular_squares(sample, z)?;
            let mut inner = 0.0;
            let mut failed = 0usize;
            for node in &grids.domain.nodes {
                let w = C64::new(node.e, node.eta);
                let phi_p = kit.phi_prime(node.e, n, lambda_plus);
                if phi_p == 0.0 {
                    continue;
                }
                let chi = kit.chi(node.eta);
                if chi == 0.0 {
                    continue;
                }
                let m = linalg::stieltjes_from_spectrum(&spectrum, w, n);
                let mc = match density::mc_solve(w, z) {
                    Ok(p) => p.m_c,
                    Err(_) => {
                        failed += 1;
                        continue;
                    }
                };
                let term = match kind {
                    Integrand::WithCutoff => {
                        let t = t_from_re_m(m.re, n, node.eta, epsilon);
                        kit.h(t) * m.re - mc.re
                    }
                    Integrand::Plain => m.re - mc.re,
                };
                inner += chi * phi_p * term * node.weight;
            }
            let audit = CellAudit {
                xi,
                z,
                laplacian: df,
                inner,
            };
            Ok((
                df * inner * h_cell * h_cell,
                grids.domain.nodes.len(),
                failed,
                Some(audit),
            ))
        },
    );

    let mut value = 0.0;
    let mut total = 0usize;
    let mut failed = 0usize;
    let mut audits = Vec::new();
    for out in outputs {
        let (v, t, f_, audit) = out?;
        value += v;
        total += t;
        failed += f_;
        audits.extend(audit);
    }
    let limit = (total as f64 * 0.001).ceil() as usize;
    if failed > limit {
        return Err(Error::NodeFailures {
            failed,
            total,
            limit,
        });
    }
    Ok(FunctionalValue {
        value: value * n as f64,
        nodes_total: total,
        nodes_failed: failed,
        cells: audits,
    })
}

/// A_X^(f) = N int Delta f(xi) int_I chi(eta) phi'(E)
///   (h(t_X) Re m - Re m_c) dE deta dA(xi).
pub fn a_functional(
    sample: &MatrixSample,
    f: &TestFunctionSpec,
    epsilon: f64,
    grids: &FunctionalGrids,
    par: Parallelism,
) -> Result<FunctionalValue> {
    functional_impl(sample, f, epsilon, grids, Integrand::WithCutoff, par)
}

/// Z_{X,c}^(g): same integral with Re(m - m_c) and no cutoff factor.
pub fn z_functional(
    sample: &MatrixSample,
    g: &TestFunctionSpec,
    epsilon: f64,
    grids: &FunctionalGrids,
    par: Parallelism,
) -> Result<FunctionalValue> {
    functional_impl(sample, g, epsilon, grids, Integrand::Plain, par)
}

/// Cutoff-region gap budget: N int |Delta f| int_I chi |phi'| 2 N^eps (N eta)^-1.
/// |A - Z| never exceeds this, node by node, because h(t) < 1 forces
/// |Re m| < 2 N^eps (N eta)^-1.
pub fn az_gap_budget(
    n: usize,
    f: &TestFunctionSpec,
    epsilon: f64,
    grids: &FunctionalGrids,
) -> f64 {
    let kit = CutoffKit::new(epsilon);
    let m_side = grids.xi_per_side;
    let r = f.radius;
    let h_cell = 2.0 * r / m_side as f64;
    let ns = (n as f64).powf(f.scale);
    let mut total = 0.0;
    for i in 0..m_side {
        for j in 0..m_side {
            let xi = C64::new(-r + (i as f64 + 0.5) * h_cell, -r + (j as f64 + 0.5) * h_cell);
            let df_abs = f.base_laplacian(xi).abs();
            if df_abs == 0.0 {
                continue;
            }
            let z = f.center + xi / ns;
            let lambda_plus = density::lambda_pm(z).lambda_plus;
            let mut inner = 0.0;
            for node in &grids.domain.nodes {
                let phi_p = kit.phi_prime(node.e, n, lambda_plus).abs();
                let chi = kit.chi(node.eta);
                inner += chi
                    * phi_p
                    * 2.0
                    * (n as f64).powf(epsilon)
                    * node.weight
                    / (n as f64 * node.eta);
            }
            total += df_abs * inner * h_cell * h_cell;
        }
    }
    total * n as f64
}

/// The swap interpolation state at step k: X_k agrees with X at linear
/// indices <= k and with X' above, the swapped entry is (a,b) with
/// k = (a-1) N + b, and Qtilde zeroes that entry out.
#[derive(Debug, Clone)]
pub struct SwapState {
    pub k: usize,
    pub a: usize,
    pub b: usize,
    /// v_ab = X'(a,b), the entry being removed.
    pub v: f64,
    /// u_ab = X(a,b), the entry being installed.
    pub u: f64,
    pub w: C64,
    pub z: C64,
    pub n: usize,
    /// Qtilde = X_{k-1} - v e_ab (real entries).
    pub q_tilde: Mat<f64>,
    /// Q = Qtilde - z.
    pub q: Mat<C64>,
    /// R = (Q^* Q - w)^-1.
    pub r: Mat<C64>,
    /// calR = (Q Q^* - w)^-1.
    pub cal_r: Mat<C64>,
    /// S = (Y_{k-1}^* Y_{k-1} - w)^-1.
    pub s: Mat<C64>,
    /// T = (Y_k^* Y_k - w)^-1.
    pub t: Mat<C64>,
    pub m_r: C64,
    pub m_s: C64,
    pub m_t: C64,
}

/// Entry of the interpolating matrix X_k.
pub fn interpolated_entry(
    x: &MatrixSample,
    x_prime: &MatrixSample,
    k: usize,
    i: usize,
    j: usize,
) -> f64 {
    let n = x.dimension();
    let linear = (i - 1) * n + j;
    if k >= linear {
        x.entry(i, j).re
    } else {
        x_prime.entry(i, j).re
    }
}

pub fn swap_setup(
    x: &MatrixSample,
    x_prime: &MatrixSample,
    k: usize,
    w: C64,
    z: C64,
) -> Result<SwapState> {
    let n = x.dimension();
    if x_prime.dimension() != n {
        return Err(Error::Domain(format!(
            "swap needs equal dimensions, got {n} and {}",
            x_prime.dimension()
        )));
    }
    x.real_mat()?;
    x_prime.real_mat()?;
    if k == 0 || k > n * n {
        return Err(Error::IndexOutOfRange { index: k, n: n * n });
    }
    if w.im <= 0.0 {
        return Err(Error::Domain(format!("swap needs Im w > 0, got {w}")));
    }
    let a = (k - 1) / n + 1;
    let b = (k - 1) % n + 1;
    let v = x_prime.entry(a, b).re;
    let u = x.entry(a, b).re;

    let x_km1 = Mat::from_fn(n, n, |i, j| interpolated_entry(x, x_prime, k - 1, i + 1, j + 1));
    let x_k = Mat::from_fn(n, n, |i, j| interpolated_entry(x, x_prime, k, i + 1, j + 1));
    let mut q_tilde = x_km1.clone();
    q_tilde[(a - 1, b - 1)] = 0.0;

    let to_shifted = |m: &Mat<f64>| -> Mat<C64> {
        Mat::from_fn(n, n, |i, j| {
            let mut v = C64::new(m[(i, j)], 0.0);
            if i == j {
                v -= z;
            }
            v
        })
    };
    let q = to_shifted(&q_tilde);
    let y_km1 = to_shifted(&x_km1);
    let y_k = to_shifted(&x_k);

    let r = linalg::resolvent_inverse(&(q.adjoint() * &q), w)?;
    let cal_r = linalg::resolvent_inverse(&(&q * q.adjoint()), w)?;
    let s = linalg::resolvent_inverse(&(y_km1.adjoint() * &y_km1), w)?;
    let t = linalg::resolvent_inverse(&(y_k.adjoint() * &y_k), w)?;
    let m_r = linalg::trace_over_n(&r, n);
    let m_s = linalg::trace_over_n(&s, n);
    let m_t = linalg::trace_over_n(&t, n);

    // rank-<=2 interlacing: |m_S - m_R| <= 4 / (N eta), same for T
    let bound = 4.0 / (n as f64 * w.im);
    for (name, m) in [("S", m_s), ("T", m_t)] {
        let gap = (m - m_r).norm();
        if gap > bound {
            let _ = name;
            return Err(Error::InterlacingViolation {
                observed: gap,
                bound,
            });
        }
    }

    Ok(SwapState {
        k,
        a,
        b,
        v,
        u,
        w,
        z,
        n,
        q_tilde,
        q,
        r,
        cal_r,
        s,
        t,
        m_r,
        m_s,
        m_t,
    })
}

/// Taylor and cutoff coefficients of the one-entry perturbation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PerturbationCoeffs {
    /// Taylor coefficients of v -> Re m_{S(v)} around v = 0.
    pub p: [f64; 3],
    /// Cutoff Taylor coefficients B_n at t_Qtilde.
    pub b: [f64; 3],
    pub t_q_tilde: f64,
    /// r(v)/v^4 estimate from the smallest probed v, when available.
    pub v4_remainder: Option<f64>,
}

/// Matrix-entry ingredients shared by the P formulas.
struct PIngredients {
    q1a: C64, // (Q R)_ab
    q1b: C64, // (R Q^*)_ba
    q2a: C64, // (Q R^2)_ab
    q2b: C64, // (R^2 Q^*)_ba
    q3: C64,  // (Q R^2 Q^*)_aa
    r1: C64,  // R_bb
    r2: C64,  // (R^2)_bb
    rho: C64, // w calR_aa
}

impl PIngredients {
    fn p_values(&self, n: usize) -> [f64; 3] {
        let nf = n as f64;
        let p1 = -(self.q2a + self.q2b).re / nf;
        let p2 = (self.rho * self.r2
            + self.q1a * self.q2a
            + self.q1b * self.q2b
            + self.r1 * self.q3)
            .re
            / nf;
        let p3 = (-self.rho * (self.r1 * (self.q2a + self.q2b) + self.r2 * (self.q1a + self.q1b))
            - self.q1a * self.q1a * self.q2a
            - self.q1b * self.q1b * self.q2b
            - self.r1 * self.q3 * (self.q1a + self.q1b))
            .re
            / nf;
        [p1, p2, p3]
    }
}

fn p_ingredients_from_state(state: &SwapState) -> PIngredients {
    let n = state.n;
    let (a, b) = (state.a - 1, state.b - 1);
    let r2 = &state.r * &state.r;
    let q_row_a: Vec<C64> = (0..n).map(|k| state.q[(a, k)]).collect();
    let dot = |m: &Mat<C64>, col: usize, row: &[C64]| -> C64 {
        (0..n).map(|k| row[k] * m[(k, col)]).sum()
    };
    let q1a = dot(&state.r, b, &q_row_a);
    let q2a = dot(&r2, b, &q_row_a);
    // (R Q^*)_ba = sum_k R[b,k] conj(Q[a,k])
    let q1b: C64 = (0..n).map(|k| state.r[(b, k)] * q_row_a[k].conj()).sum();
    let q2b: C64 = (0..n).map(|k| r2[(b, k)] * q_row_a[k].conj()).sum();
    // (Q R^2 Q^*)_aa = (row_a Q) R^2 (row_a Q)^*
    let t_row: Vec<C64> = (0..n)
        .map(|l| (0..n).map(|k| q_row_a[k] * r2[(k, l)]).sum())
        .collect();
    let q3: C64 = (0..n).map(|l| t_row[l] * q_row_a[l].conj()).sum();
    PIngredients {
        q1a,
        q1b,
        q2a,
        q2b,
        q3,
        r1: state.r[(b, b)],
        r2: r2[(b, b)],
        rho: state.w * state.cal_r[(a, a)],
    }
}

/// The exact Taylor coefficients P_1..P_3 of v -> Re m_{S(v)}.
pub fn p_coefficients(state: &SwapState) -> [f64; 3] {
    p_ingredients_from_state(state).p_values(state.n)
}

/// B_n = (1/n!) (N^{1-eps} eta)^{n-1} (n h^(n-1)(t) + h^(n)(t) t) at
/// t = t_Qtilde.
pub fn b_coefficients(state: &SwapState, kit: &CutoffKit) -> ([f64; 3], f64) {
    let c = (state.n as f64).powf(1.0 - kit.epsilon) * state.w.im;
    let t = c * state.m_r.re;
    let h = kit.h_derivs(t);
    let b1 = h[0] + h[1] * t;
    let b2 = 0.5 * c * (2.0 * h[1] + h[2] * t);
    let b3 = (1.0 / 6.0) * c * c * (3.0 * h[2] + h[3] * t);
    ([b1, b2, b3], t)
}

/// Assembled coefficients.
pub fn perturbation_coeffs(state: &SwapState, kit: &CutoffKit) -> PerturbationCoeffs {
    let p = p_coefficients(state);
    let (b, t) = b_coefficients(state, kit);
    PerturbationCoeffs {
        p,
        b,
        t_q_tilde: t,
        v4_remainder: None,
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExpansionRow {
    pub v: f64,
    /// r(v) = Re m_{S(v)} - Re m_R - sum_n P_n v^n.
    pub r: f64,
    pub r_over_v4: f64,
}

/// Fourth-order remainder table: S(v) by direct solve with entry (a,b) set
/// to v on top of Qtilde.
pub fn expansion_residual(state: &SwapState, v_values: &[f64]) -> Result<Vec<ExpansionRow>> {
    let p = p_coefficients(state);
    let n = state.n;
    let mut rows = Vec::with_capacity(v_values.len());
    for &v in v_values {
        let mut q_v = state.q.clone();
        q_v[(state.a - 1, state.b - 1)] += C64::new(v, 0.0);
        let s = linalg::resolvent_inverse(&(q_v.adjoint() * &q_v), state.w)?;
        let m_s = linalg::trace_over_n(&s, n);
        let r = m_s.re - state.m_r.re - p[0] * v - p[1] * v * v - p[2] * v * v * v;
        rows.push(ExpansionRow {
            v,
            r,
            r_over_v4: r / (v * v * v * v),
        });
    }
    Ok(rows)
}

/// Which script-P integral to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptPIndex {
    P1,
    P2,
    P3,
}

/// scriptP_n at a zeroed-entry sample:
///   scriptP_1 = N int Delta f int_I (B_1 P_1) chi phi',
///   scriptP_2 = N int Delta f int_I (B_1 P_2 + B_2 P_1^2) chi phi',
///   scriptP_3 = N int Delta f int_I (B_1 P_3 + 2 B_2 P_1 P_2 + B_3 P_1^3) chi phi'.
/// P_n and B_n are evaluated with Qtilde -> X, Q -> Y_z, R -> (Y^*Y - w)^-1.
pub fn script_p(
    sample: &MatrixSample,
    f: &TestFunctionSpec,
    epsilon: f64,
    grids: &FunctionalGrids,
    which: ScriptPIndex,
    par: Parallelism,
) -> Result<FunctionalValue> {
    let n = sample.dimension();
    let (a, b) = match sample.spec().zeroed_entry {
        Some((a, b)) if a != b => (a, b),
        Some(_) => {
            return Err(Error::Domain(
                "script_p needs a zeroed off-diagonal entry (a != b)".into(),
            ))
        }
        None => {
            return Err(Error::Domain(
                "script_p needs spec.zeroed_entry = (a,b)".into(),
            ))
        }
    };
    sample.real_mat()?;
    let kit = CutoffKit::new(epsilon);
    let m_side = grids.xi_per_side;
    let r = f.radius;
    let h_cell = 2.0 * r / m_side as f64;
    let ns = (n as f64).powf(f.scale);
    let cells: Vec<(usize, usize)> = (0..m_side)
        .flat_map(|i| (0..m_side).map(move |j| (i, j)))
        .collect();

    let outputs = par_map(
        cells.len(),
        par,
        |idx| -> Result<(f64, usize, usize, Option<CellAudit>)> {
        let (ci, cj) = cells[idx];
        let xi = C64::new(
            -r + (ci as f64 + 0.5) * h_cell,
            -r + (cj as f64 + 0.5) * h_cell,
        );
        let df = f.base_laplacian(xi);
        if df == 0.0 {
            return Ok((0.0, 0, 0, None));
        }
        let z = f.center + xi / ns;
        let lambda_plus = density::lambda_pm(z).lambda_plus;
        let q = linalg::shifted_matrix(sample, z);
        let gram = q.adjoint() * &q;
        let eig = linalg::hermitian_eigen(&gram)?;
        let gram_cal = &q * q.adjoint();
        let eig_cal = linalg::hermitian_eigen(&gram_cal)?;
        // rows used by the O(N)-per-node entry reconstructions
        let vmat = &eig.vectors;
        let umat = &eig_cal.vectors;
        let q_row_a: Vec<C64> = (0..n).map(|k| q[(a - 1, k)]).collect();
        let qv_a: Vec<C64> = (0..n)
            .map(|col| (0..n).map(|k| q_row_a[k] * vmat[(k, col)]).sum())
            .collect();
        let v_b: Vec<C64> = (0..n).map(|col| vmat[(b - 1, col)]).collect();
        let u_a: Vec<C64> = (0..n).map(|col| umat[(a - 1, col)]).collect();

        let mut inner = 0.0;
        let failed = 0usize;
        for node in &grids.domain.nodes {
            let w = C64::new(node.e, node.eta);
            let phi_p = kit.phi_prime(node.e, n, lambda_plus);
            if phi_p == 0.0 {
                continue;
            }
            let chi = kit.chi(node.eta);
            if chi == 0.0 {
                continue;
            }
            let mut q1a = C64::new(0.0, 0.0);
            let mut q1b = C64::new(0.0, 0.0);
            let mut q2a = C64::new(0.0, 0.0);
            let mut q2b = C64::new(0.0, 0.0);
            let mut q3 = C64::new(0.0, 0.0);
            let mut r1 = C64::new(0.0, 0.0);
            let mut r2 = C64::new(0.0, 0.0);
            let mut m_r = C64::new(0.0, 0.0);
            for k in 0..n {
                let d = (C64::new(eig.values[k], 0.0) - w).inv();
                let d2 = d * d;
                m_r += d;
                q1a += qv_a[k] * d * v_b[k].conj();
                q2a += qv_a[k] * d2 * v_b[k].conj();
                q1b += v_b[k] * d * qv_a[k].conj();
                q2b += v_b[k] * d2 * qv_a[k].conj();
                q3 += C64::new(qv_a[k].norm_sqr(), 0.0) * d2;
                r1 += C64::new(v_b[k].norm_sqr(), 0.0) * d;
                r2 += C64::new(v_b[k].norm_sqr(), 0.0) * d2;
            }
            m_r /= n as f64;
            let mut rho_aa = C64::new(0.0, 0.0);
            for k in 0..n {
                let d = (C64::new(eig_cal.values[k], 0.0) - w).inv();
                rho_aa += C64::new(u_a[k].norm_sqr(), 0.0) * d;
            }
            let ing = PIngredients {
                q1a,
                q1b,
                q2a,
                q2b,
                q3,
                r1,
                r2,
                rho: w * rho_aa,
            };
            let p = ing.p_values(n);
            let c = (n as f64).powf(1.0 - epsilon) * node.eta;
            let t = c * m_r.re;
            let hd = kit.h_derivs(t);
            let b1 = hd[0] + hd[1] * t;
            let b2 = 0.5 * c * (2.0 * hd[1] + hd[2] * t);
            let b3 = (1.0 / 6.0) * c * c * (3.0 * hd[2] + hd[3] * t);
            let integrand = match which {
                ScriptPIndex::P1 => b1 * p[0],
                ScriptPIndex::P2 => b1 * p[1] + b2 * p[0] * p[0],
                ScriptPIndex::P3 => b1 * p[2] + 2.0 * b2 * p[0] * p[1] + b3 * p[0] * p[0] * p[0],
            };
            inner += chi * phi_p * integrand * node.weight;
        }
        let audit = CellAudit {
            xi,
            z,
            laplacian: df,
            inner,
        };
        Ok((
            df * inner * h_cell * h_cell,
            grids.domain.nodes.len(),
            failed,
            Some(audit),
        ))
    },
    );

    let mut value = 0.0;
    let mut total = 0usize;
    let mut failed = 0usize;
    let mut audits = Vec::new();
    for out in outputs {
        let (v, t, f_, audit) = out?;
        value += v;
        total += t;
        failed += f_;
        audits.extend(audit);
    }
    Ok(FunctionalValue {
        value: value * n as f64,
        nodes_total: total,
        nodes_failed: failed,
        cells: audits,
    })
}

/// Monte Carlo report of the expectation gain for h(t_X) (Y G)_ab.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HalfGainReport {
    pub n: usize,
    pub trials: usize,
    pub w: C64,
    pub z: C64,
    /// median |h(t_X) (Y G)_ab| over trials.
    pub typical: f64,
    /// |mean of h(t_X) (Y G)_ab|.
    pub mean_abs: f64,
    /// mean_abs / typical; the gain claim says this is ~ N^(-1/2).
    pub ratio: f64,
    /// Standard error of the complex mean.
    pub mean_stderr: f64,
}

/// Estimate (i) the typical size and (ii) the expectation of
/// h(t_X) (Y G)_ab over `trials` fresh samples of the zeroed-entry ensemble.
pub fn half_gain_probe(
    spec: &EnsembleSpec,
    w: C64,
    z: C64,
    trials: usize,
    seed: u64,
    epsilon: f64,
    par: Parallelism,
) -> Result<HalfGainReport> {
    let (a, b) = match spec.zeroed_entry {
        Some((a, b)) if a != b => (a, b),
        _ => {
            return Err(Error::Domain(
                "half_gain_probe needs zeroed_entry = (a,b) with a != b".into(),
            ))
        }
    };
    if trials < 2000 {
        return Err(Error::InsufficientTrials {
            needed: 2000,
            got: trials,
        });
    }
    let n = spec.dimension;
    let kit = CutoffKit::new(epsilon);
    let values = par_map(trials, par, |t| -> Result<C64> {
        let sample = crate::ensemble::sample_matrix(spec, seed ^ t as u64)?;
        let y = linalg::shifted_matrix(&sample, z);
        let gram = y.adjoint() * &y;
        let eig = linalg::hermitian_eigen(&gram)?;
        let vmat = &eig.vectors;
        let y_row_a: Vec<C64> = (0..n).map(|k| y[(a - 1, k)]).collect();
        let yv_a: Vec<C64> = (0..n)
            .map(|col| (0..n).map(|k| y_row_a[k] * vmat[(k, col)]).sum())
            .collect();
        let mut m = C64::new(0.0, 0.0);
        let mut yg_ab = C64::new(0.0, 0.0);
        for k in 0..n {
            let d = (C64::new(eig.values[k], 0.0) - w).inv();
            m += d;
            yg_ab += yv_a[k] * d * vmat[(b - 1, k)].conj();
        }
        m /= n as f64;
        let t_x = t_from_re_m(m.re, n, w.im, epsilon);
        Ok(yg_ab * kit.h(t_x))
    });
    let values: Vec<C64> = values.into_iter().collect::<Result<_>>()?;
    let mean = values.iter().sum::<C64>() / trials as f64;
    let var = values.iter().map(|v| (v - mean).norm_sqr()).sum::<f64>() / trials as f64;
    let mut magnitudes: Vec<f64> = values.iter().map(|v| v.norm()).collect();
    magnitudes.sort_by(f64::total_cmp);
    let typical = if trials % 2 == 0 {
        0.5 * (magnitudes[trials / 2 - 1] + magnitudes[trials / 2])
    } else {
        magnitudes[trials / 2]
    };
    Ok(HalfGainReport {
        n,
        trials,
        w,
        z,
        typical,
        mean_abs: mean.norm(),
        ratio: mean.norm() / typical,
        mean_stderr: (var / trials as f64).sqrt(),
    })
}
