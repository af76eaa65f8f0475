//! Gauss–Legendre quadrature.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Nodes and weights on [-1, 1], computed once by Newton iteration on the
/// Legendre polynomial.
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize) -> GaussRule {
        assert!(n >= 2);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = (n + 1) / 2;
        for i in 0..m {
            // Chebyshev-like initial guess.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussRule { nodes, weights }
    }

    /// Integrate `f` over `[a, b]` with this rule on a single panel.
    pub fn integrate<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: &F) -> f64 {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }
}

/// Legendre polynomial P_n and derivative at x by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn rule64() -> &'static GaussRule {
    static RULE: OnceLock<GaussRule> = OnceLock::new();
    RULE.get_or_init(|| GaussRule::new(64))
}

/// Adaptive Gauss–Legendre: a 64-node panel is accepted when splitting it in
/// half changes the value by less than `tol` (relative to the running scale).
pub fn integrate_adaptive<F: Fn(f64) -> f64>(a: f64, b: f64, f: &F, tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(
        rule: &GaussRule,
        a: f64,
        b: f64,
        f: &F,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let mid = 0.5 * (a + b);
        let left = rule.integrate(a, mid, f);
        let right = rule.integrate(mid, b, f);
        let refined = left + right;
        if depth >= 30 || (refined - whole).abs() <= tol * (1.0 + refined.abs()) {
            return refined;
        }
        recurse(rule, a, mid, f, left, 0.5 * tol, depth + 1)
            + recurse(rule, mid, b, f, right, 0.5 * tol, depth + 1)
    }
    if a == b {
        return 0.0;
    }
    let rule = rule64();
    let whole = rule.integrate(a, b, f);
    recurse(rule, a, b, f, whole, tol, 0)
}
