//! Chebyshev interpolation on an interval.
//!
//! Curves produced by the graph transform are analytic, so a modest number of
//! cosine-clustered nodes represents them to near machine precision and
//! derivatives come from the coefficient recurrence instead of finite
//! differences.

use std::f64::consts::PI;

/// Interpolant `sum a_k T_k(t)` with `t` the affine pullback of `[lo, hi]`
/// to `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct Cheb {
    lo: f64,
    hi: f64,
    coeffs: Vec<f64>,
}

/// Chebyshev–Lobatto nodes of degree `n` on `[lo, hi]`, in the fit order
/// `x_j = mid + half * cos(pi j / n)` (descending).
pub fn nodes(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 1);
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    (0..=n).map(|j| mid + half * (PI * j as f64 / n as f64).cos()).collect()
}

impl Cheb {
    /// Fit to values sampled at `nodes(lo, hi, n)` (same order).
    pub fn fit(lo: f64, hi: f64, values: &[f64]) -> Cheb {
        let n = values.len() - 1;
        assert!(n >= 1, "need at least two nodes");
        let mut coeffs = vec![0.0; n + 1];
        let nf = n as f64;
        for (k, c) in coeffs.iter_mut().enumerate() {
            let kf = k as f64;
            let mut acc = 0.5 * (values[0] + if k % 2 == 0 { values[n] } else { -values[n] });
            for (j, &v) in values.iter().enumerate().take(n).skip(1) {
                acc += v * (PI * kf * j as f64 / nf).cos();
            }
            let scale = if k == 0 || k == n { 1.0 / nf } else { 2.0 / nf };
            *c = scale * acc;
        }
        Cheb { lo, hi, coeffs }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Evaluate by Clenshaw recurrence. Arguments a hair outside the domain
    /// (interval endpoints after rounding) are clamped.
    pub fn eval(&self, x: f64) -> f64 {
        let t = ((2.0 * x - self.lo - self.hi) / (self.hi - self.lo)).clamp(-1.0, 1.0);
        let mut b1 = 0.0;
        let mut b2 = 0.0;
        for &a in self.coeffs.iter().skip(1).rev() {
            let b0 = 2.0 * t * b1 - b2 + a;
            b2 = b1;
            b1 = b0;
        }
        t * b1 - b2 + self.coeffs[0]
    }

    /// Derivative as a new interpolant (degree drops by one).
    pub fn deriv(&self) -> Cheb {
        let n = self.coeffs.len() - 1;
        let scale = 2.0 / (self.hi - self.lo);
        if n == 0 {
            return Cheb { lo: self.lo, hi: self.hi, coeffs: vec![0.0] };
        }
        let mut d = vec![0.0; n + 1];
        for k in (1..=n).rev() {
            let next = if k + 1 <= n { d[k + 1] } else { 0.0 };
            d[k - 1] = next + 2.0 * k as f64 * self.coeffs[k];
        }
        d[0] *= 0.5;
        d.truncate(n.max(1));
        for c in d.iter_mut() {
            *c *= scale;
        }
        Cheb { lo: self.lo, hi: self.hi, coeffs: d }
    }

    /// Zero out coefficients below `rel_tol` times the largest magnitude.
    /// Keeps spectral differentiation of analytic data from amplifying the
    /// rounding floor.
    pub fn chopped(mut self, rel_tol: f64) -> Cheb {
        let max = self.coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        if max > 0.0 {
            let floor = max * rel_tol;
            for c in self.coeffs.iter_mut() {
                if c.abs() < floor {
                    *c = 0.0;
                }
            }
        }
        self
    }

    /// Sup of `|p|` on an `m`-point uniform grid (endpoints included).
    pub fn max_abs_on_grid(&self, m: usize) -> f64 {
        let mut best = 0.0_f64;
        for i in 0..m {
            let x = self.lo + (self.hi - self.lo) * i as f64 / (m - 1) as f64;
            best = best.max(self.eval(x).abs());
        }
        best
    }
}
