//! Chebyshev series on an interval: interpolation at Chebyshev–Lobatto points,
//! Clenshaw evaluation and term-wise differentiation.

use std::f64::consts::PI;

/// `f(x) = Σ c_k T_k((2x − a − b)/(b − a))` on `[a, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cheb {
    pub a: f64,
    pub b: f64,
    pub coeffs: Vec<f64>,
}

impl Cheb {
    /// Lobatto points `x_j = cos(jπ/n)` mapped to `[a, b]`, `j = 0..=n`.
    pub fn nodes(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..=n)
            .map(|j| Self::map(a, b, (j as f64 * PI / n as f64).cos()))
            .collect()
    }

    fn map(a: f64, b: f64, x: f64) -> f64 {
        0.5 * (a + b) + 0.5 * (b - a) * x
    }

    /// Interpolant of degree `n` through values at [`Cheb::nodes`].
    pub fn from_values(a: f64, b: f64, values: &[f64]) -> Self {
        let n = values.len() - 1;
        assert!(n >= 1, "Chebyshev interpolation needs at least two nodes");
        let nf = n as f64;
        let coeffs = (0..=n)
            .map(|k| {
                let mut s = 0.0;
                for (j, v) in values.iter().enumerate() {
                    let w = if j == 0 || j == n { 0.5 } else { 1.0 };
                    s += w * v * ((k * j) as f64 * PI / nf).cos();
                }
                let c = 2.0 * s / nf;
                if k == 0 || k == n {
                    0.5 * c
                } else {
                    c
                }
            })
            .collect();
        Self { a, b, coeffs }
    }

    pub fn from_fn(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> Self {
        let vals: Vec<f64> = Self::nodes(a, b, n).into_iter().map(f).collect();
        Self::from_values(a, b, &vals)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let y = (2.0 * x - self.a - self.b) / (self.b - self.a);
        let (mut b1, mut b2) = (0.0, 0.0);
        for &c in self.coeffs.iter().skip(1).rev() {
            let b0 = 2.0 * y * b1 - b2 + c;
            b2 = b1;
            b1 = b0;
        }
        y * b1 - b2 + self.coeffs[0]
    }

    /// Series of the derivative in `x`.
    pub fn derivative(&self) -> Self {
        let n = self.coeffs.len();
        if n <= 1 {
            return Self {
                a: self.a,
                b: self.b,
                coeffs: vec![0.0],
            };
        }
        let mut d = vec![0.0; n + 1];
        for k in (1..n).rev() {
            d[k - 1] = d[k + 1] + 2.0 * k as f64 * self.coeffs[k];
        }
        d[0] *= 0.5;
        d.truncate(n - 1);
        let scale = 2.0 / (self.b - self.a);
        Self {
            a: self.a,
            b: self.b,
            coeffs: d.into_iter().map(|c| c * scale).collect(),
        }
    }

    /// Magnitude of the trailing coefficients, a proxy for the interpolation error.
    pub fn tail_magnitude(&self) -> f64 {
        self.coeffs
            .iter()
            .rev()
            .take(3)
            .map(|c| c.abs())
            .fold(0.0, f64::max)
    }
}
