//! Fourth-order truncated Taylor arithmetic.
//!
//! A [`Jet4`] carries the Taylor coefficients f(x), f'(x), f''(x)/2!,
//! f'''(x)/3!, f''''(x)/4! of a scalar function along one variable. Composing
//! jets through arithmetic and `exp` yields exact derivatives up to order
//! four without hand-expanding quotient rules; the cutoff functions of the
//! comparison module get their h', .., h'''' this way.

/// Taylor coefficients `coeff[k] = f^(k)(x) / k!` for k = 0..=4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet4 {
    pub coeff: [f64; 5],
}

impl Jet4 {
    /// The constant function c.
    pub fn constant(c: f64) -> Self {
        Jet4 {
            coeff: [c, 0.0, 0.0, 0.0, 0.0],
        }
    }

    /// The identity function evaluated at `x`.
    pub fn variable(x: f64) -> Self {
        Jet4 {
            coeff: [x, 1.0, 0.0, 0.0, 0.0],
        }
    }

    pub fn value(&self) -> f64 {
        self.coeff[0]
    }

    /// Raw derivatives `[f, f', f'', f''', f'''']`.
    pub fn derivatives(&self) -> [f64; 5] {
        let c = &self.coeff;
        [c[0], c[1], 2.0 * c[2], 6.0 * c[3], 24.0 * c[4]]
    }

    pub fn recip(&self) -> Self {
        let b = &self.coeff;
        let mut c = [0.0; 5];
        c[0] = 1.0 / b[0];
        for k in 1..5 {
            let mut s = 0.0;
            for i in 1..=k {
                s += b[i] * c[k - i];
            }
            c[k] = -s / b[0];
        }
        Jet4 { coeff: c }
    }

    pub fn exp(&self) -> Self {
        let a = &self.coeff;
        let mut e = [0.0; 5];
        e[0] = a[0].exp();
        // k e_k = sum_{j=1..k} j a_j e_{k-j}
        for k in 1..5 {
            let mut s = 0.0;
            for j in 1..=k {
                s += (j as f64) * a[j] * e[k - j];
            }
            e[k] = s / (k as f64);
        }
        Jet4 { coeff: e }
    }

    /// Flip the sign of the odd-order coefficients: the jet of x -> f(-x).
    pub fn reflect(&self) -> Self {
        let c = &self.coeff;
        Jet4 {
            coeff: [c[0], -c[1], c[2], -c[3], c[4]],
        }
    }
}

impl std::ops::Add for Jet4 {
    type Output = Jet4;
    fn add(self, rhs: Jet4) -> Jet4 {
        let mut c = self.coeff;
        for (a, b) in c.iter_mut().zip(rhs.coeff) {
            *a += b;
        }
        Jet4 { coeff: c }
    }
}

impl std::ops::Sub for Jet4 {
    type Output = Jet4;
    fn sub(self, rhs: Jet4) -> Jet4 {
        let mut c = self.coeff;
        for (a, b) in c.iter_mut().zip(rhs.coeff) {
            *a -= b;
        }
        Jet4 { coeff: c }
    }
}

impl std::ops::Mul for Jet4 {
    type Output = Jet4;
    fn mul(self, rhs: Jet4) -> Jet4 {
        let a = &self.coeff;
        let b = &rhs.coeff;
        let mut c = [0.0; 5];
        for k in 0..5 {
            for i in 0..=k {
                c[k] += a[i] * b[k - i];
            }
        }
        Jet4 { coeff: c }
    }
}

impl std::ops::Div for Jet4 {
    type Output = Jet4;
    fn div(self, rhs: Jet4) -> Jet4 {
        self * rhs.recip()
    }
}

impl std::ops::Neg for Jet4 {
    type Output = Jet4;
    fn neg(self) -> Jet4 {
        let mut c = self.coeff;
        for a in c.iter_mut() {
            *a = -*a;
        }
        Jet4 { coeff: c }
    }
}

impl std::ops::Mul<f64> for Jet4 {
    type Output = Jet4;
    fn mul(self, s: f64) -> Jet4 {
        let mut c = self.coeff;
        for a in c.iter_mut() {
            *a *= s;
        }
        Jet4 { coeff: c }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recip_derivatives_exact() {
        // d^k/dx^k (1/x) = (-1)^k k! x^-(k+1)
        for &x in &[0.3, 1.7, -2.4] {
            let got = Jet4::variable(x).recip().derivatives();
            for (k, &g) in got.iter().enumerate() {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                let fact = (1..=k).product::<usize>() as f64;
                let want = sign * fact / x.powi(k as i32 + 1);
                assert!(
                    (g - want).abs() < 1e-12 * want.abs(),
                    "order {k} at x={x}: {g} vs {want}"
                );
            }
        }
    }

    #[test]
    fn exp_of_scaled_variable_exact() {
        // d^k/dx^k e^{cx} = c^k e^{cx}
        let c = -1.37;
        let x = 0.8;
        let got = (Jet4::variable(x) * c).exp().derivatives();
        for (k, &g) in got.iter().enumerate() {
            let want = c.powi(k as i32) * (c * x).exp();
            assert!(
                (g - want).abs() < 1e-12 * want.abs(),
                "order {k}: {g} vs {want}"
            );
        }
    }

    #[test]
    fn product_and_quotient_derivatives_exact() {
        // f(x) = x^2 / (1 + x): closed-form derivatives
        let x = 1.4f64;
        let xj = Jet4::variable(x);
        let got = ((xj * xj) / (Jet4::constant(1.0) + xj)).derivatives();
        let u = 1.0 + x;
        // f = x^2/u; f' = (x^2 + 2x)/u^2; f'' = 2/u^3; f''' = -6/u^4; f'''' = 24/u^5
        let want = [
            x * x / u,
            (x * x + 2.0 * x) / (u * u),
            2.0 / (u * u * u),
            -6.0 / u.powi(4),
            24.0 / u.powi(5),
        ];
        for k in 0..5 {
            assert!(
                (got[k] - want[k]).abs() < 1e-12 * want[k].abs().max(1.0),
                "order {k}: {} vs {}",
                got[k],
                want[k]
            );
        }
    }

    #[test]
    fn composed_bump_low_orders_match_finite_differences() {
        // g(x) = exp(-1/x) / (x^2 + 1): FD validation where the stencils are
        // numerically trustworthy (orders 1 and 2)
        let g = |x: f64| (-1.0 / x).exp() / (x * x + 1.0);
        for &x in &[0.4, 0.9, 1.3, 2.7] {
            let xj = Jet4::variable(x);
            let got = ((-(xj.recip())).exp() / (xj * xj + Jet4::constant(1.0))).derivatives();
            let h = 1e-5;
            let d1 = (g(x + h) - g(x - h)) / (2.0 * h);
            let h2 = 1e-4;
            let d2 = (g(x + h2) - 2.0 * g(x) + g(x - h2)) / (h2 * h2);
            assert!((got[1] - d1).abs() < 1e-8 * d1.abs().max(1.0), "g' at {x}");
            assert!((got[2] - d2).abs() < 1e-4 * d2.abs().max(1.0), "g'' at {x}");
        }
    }

    #[test]
    fn reflect_flips_odd_orders() {
        let x = Jet4::variable(1.5);
        let f = x * x * x; // x^3
        let r = f.reflect();
        let d = f.derivatives();
        let rd = r.derivatives();
        assert_eq!(rd[0], d[0]);
        assert_eq!(rd[1], -d[1]);
        assert_eq!(rd[2], d[2]);
        assert_eq!(rd[3], -d[3]);
    }
}
