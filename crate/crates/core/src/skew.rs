//! The skew product `F(theta, y) = (h(theta), Q_b(y) + alpha * phi(theta))`
//! and its orbit statistics.
//!
//! Orbits are iterated in `x`-coordinates of the base: the conjugacy collapses
//! `h = u o Q_a^{m1} o u^{-1}` to plain quadratic steps, and the expansion
//! log-derivative comes from the cancelled product form, so the hot loop never
//! touches the coordinate tables.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expanding::ExpandingModel;
use crate::mt::MTCertificate;
use crate::rng::CounterRng;

/// Fiber excursions beyond the rectangle by more than this are an error;
/// anything smaller is rounding and gets pulled back inside.
const ESCAPE_TOL: f64 = 1e-9;

/// Grid used to normalize the coupling polynomial.
const PHI_NORM_GRID: usize = 10_000;

/// The assembled system. Immutable and shareable; all methods are reads.
#[derive(Clone)]
pub struct SkewSystem {
    base: ExpandingModel,
    fiber: MTCertificate,
    alpha: f64,
    phi_coeffs: Vec<f64>,
    /// `phi = phi_poly / phi_scale`, with `sup |phi| <= 1` on the interval.
    phi_scale: f64,
    phi_sup: f64,
    odd_degree: bool,
    /// Half-height of the invariant rectangle: `sqrt(2b)`.
    y_bound: f64,
    alpha_max: f64,
}

impl std::fmt::Debug for SkewSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SkewSystem")
            .field("a", &self.base.param().c())
            .field("b", &self.fiber.param.c())
            .field("m1", &self.base.m1())
            .field("alpha", &self.alpha)
            .field("phi_coeffs", &self.phi_coeffs)
            .finish()
    }
}

impl SkewSystem {
    /// Assemble the system. The coupling polynomial (coefficients in
    /// ascending powers of `x`) is rescaled by its sampled sup over the base
    /// interval with a 1% safety margin, so `|phi| <= 1` holds strictly.
    /// An even-degree coupling is accepted (iteration is well defined) but
    /// flagged, since the separation mechanism can degenerate.
    pub fn build(
        base: ExpandingModel,
        fiber: MTCertificate,
        alpha: f64,
        phi_poly: &[f64],
    ) -> Result<SkewSystem> {
        assert!(alpha >= 0.0, "alpha must be nonnegative");
        if phi_poly.iter().skip(1).all(|&c| c == 0.0) {
            return Err(Error::ConstantCoupling);
        }
        let degree = phi_poly.iter().rposition(|&c| c != 0.0).unwrap_or(0);
        let odd_degree = degree % 2 == 1;

        let (x_lo, x_hi) = base.domain_x();
        let horner = |x: f64| phi_poly.iter().rev().fold(0.0, |acc, &c| acc * x + c);
        let mut sup = 0.0_f64;
        for i in 0..PHI_NORM_GRID {
            let x = x_lo + (x_hi - x_lo) * i as f64 / (PHI_NORM_GRID - 1) as f64;
            sup = sup.max(horner(x).abs());
        }
        if sup == 0.0 {
            return Err(Error::ConstantCoupling);
        }
        let phi_scale = 1.01 * sup;

        let b = fiber.param.c();
        let y_bound = (2.0 * b).sqrt();
        let phi_sup = sup / phi_scale;

        // Invariance of the rectangle: the fiber image spans
        // [-b - alpha sup|phi|, b + alpha sup|phi|].
        let invariant = |al: f64| b + al * phi_sup <= y_bound;
        if !invariant(alpha) {
            return Err(Error::AlphaTooLarge {
                alpha,
                reach: b + alpha * phi_sup,
                bound: y_bound,
            });
        }
        // Largest admissible alpha by bisection on the invariance predicate.
        let alpha_max = if invariant(1.0) {
            1.0
        } else {
            let mut lo = alpha;
            let mut hi = 1.0;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if invariant(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        };

        Ok(SkewSystem {
            base,
            fiber,
            alpha,
            phi_coeffs: phi_poly.to_vec(),
            phi_scale,
            phi_sup,
            odd_degree,
            y_bound,
            alpha_max,
        })
    }

    pub fn base(&self) -> &ExpandingModel {
        &self.base
    }

    pub fn fiber(&self) -> &MTCertificate {
        &self.fiber
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn alpha_max(&self) -> f64 {
        self.alpha_max
    }

    pub fn y_bound(&self) -> f64 {
        self.y_bound
    }

    pub fn odd_degree(&self) -> bool {
        self.odd_degree
    }

    pub fn phi_scale(&self) -> f64 {
        self.phi_scale
    }

    pub fn phi_coeffs(&self) -> &[f64] {
        &self.phi_coeffs
    }

    /// Rebuild with a different coupling size (same base and fiber).
    pub fn with_alpha(&self, alpha: f64) -> Result<SkewSystem> {
        SkewSystem::build(self.base.clone(), self.fiber, alpha, &self.phi_coeffs)
    }

    /// Normalized coupling in x-coordinates: `phi_poly(x) / scale`.
    #[inline]
    pub fn phi_x(&self, x: f64) -> f64 {
        self.phi_coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c) / self.phi_scale
    }

    /// `phi(theta) = phi_poly(u^{-1}(theta)) / scale`, through the monotone
    /// table (no re-expansion in theta).
    pub fn phi(&self, theta: f64) -> f64 {
        self.phi_x(self.base.x_of_theta_fast(theta))
    }

    /// Derivative of `phi` with respect to theta:
    /// `phi_poly'(x) / (scale * rho(x))`.
    pub fn dphi(&self, theta: f64) -> f64 {
        self.dphi_x(self.base.x_of_theta_fast(theta))
    }

    /// Theta-derivative of `phi` expressed through the x-coordinate; extends
    /// by 0 onto the singularities of the metric.
    pub fn dphi_x(&self, x: f64) -> f64 {
        let dpoly = self
            .phi_coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, &c)| acc * x + k as f64 * c);
        let rho = self.base.metric().rho(x).unwrap_or(f64::INFINITY);
        dpoly / (self.phi_scale * rho)
    }

    /// `Q_b(y)`.
    #[inline]
    pub fn qb(&self, y: f64) -> f64 {
        self.fiber.param.map(y)
    }

    /// `Q_b'(y) = -2y`.
    #[inline]
    pub fn dqb(&self, y: f64) -> f64 {
        -2.0 * y
    }

    /// One step of `F` in mixed coordinates: base in `x`, fiber in `y`.
    /// Adds `log|h'|` of this step into `log_dh`.
    #[inline]
    pub(crate) fn step_x(&self, x: f64, y: f64, log_dh: &mut f64) -> (f64, f64) {
        let y_next = self.qb(y) + self.alpha * self.phi_x(x);
        let mut p = x;
        let mut acc = 0.0;
        for _ in 0..self.base.m1() {
            acc += self.base.log_abs_dh0_x(p);
            p = self.base_step(p);
        }
        *log_dh += acc;
        (p, y_next)
    }

    #[inline]
    fn base_step(&self, x: f64) -> f64 {
        let (lo, hi) = self.base.domain_x();
        self.base.param().map(x).clamp(lo, hi)
    }

    /// Full map in theta-coordinates: `F(theta, y)`.
    pub fn f_theta(&self, theta: f64, y: f64) -> (f64, f64) {
        let x = self.base.x_of_theta_fast(theta);
        let y_next = self.qb(y) + self.alpha * self.phi_x(x);
        (self.base.u_fast(self.base.h_x(x)), y_next)
    }

    /// `F^n(theta, y) = (h^n(theta), f_n(theta, y))`.
    pub fn f_n(&self, theta: f64, y: f64, n: u32) -> (f64, f64) {
        let mut x = self.base.x_of_theta_fast(theta);
        let mut yy = y;
        for _ in 0..n {
            yy = self.qb(yy) + self.alpha * self.phi_x(x);
            for _ in 0..self.base.m1() {
                x = self.base_step(x);
            }
        }
        (self.base.u_fast(x), yy)
    }

    /// Signed `df_n/dy(theta, y) = prod_{i<n} Q_b'(y_i)`: the lower-triangular
    /// cocycle has no base contribution in the fiber direction.
    pub fn fiber_derivative_product(&self, theta: f64, y: f64, n: u32) -> f64 {
        let mut x = self.base.x_of_theta_fast(theta);
        let mut yy = y;
        let mut prod = 1.0;
        for _ in 0..n {
            prod *= self.dqb(yy);
            yy = self.qb(yy) + self.alpha * self.phi_x(x);
            for _ in 0..self.base.m1() {
                x = self.base_step(x);
            }
        }
        prod
    }
}

/// Running orbit state with the two Lyapunov log-sums and the recorded
/// close approaches to the critical line.
#[derive(Clone, Debug, Serialize)]
pub struct OrbitAccumulator {
    pub theta: f64,
    pub y: f64,
    pub steps: u64,
    /// Compensated sum of `log|h'(theta_i)|`.
    pub sum_log_dh: f64,
    /// Compensated sum of `log|Q_b'(y_i)| = log(2|y_i|)`.
    pub sum_log_dqb: f64,
    /// `(step index, |y_i|)` whenever `|y_i| < delta`.
    pub events: Vec<(u64, f64)>,
}

impl OrbitAccumulator {
    pub fn lambda_theta(&self) -> f64 {
        self.sum_log_dh / self.steps as f64
    }

    pub fn lambda_y(&self) -> f64 {
        self.sum_log_dqb / self.steps as f64
    }

    /// Recurrence sum `S_n = sum over events with index < n of log(1/|y_i|)`,
    /// recomputed from the stored events in event order (bit-identical to an
    /// online accumulation).
    pub fn recurrence_sum(&self, n: u64) -> f64 {
        self.events
            .iter()
            .take_while(|(i, _)| *i < n)
            .map(|(_, ay)| -ay.ln())
            .sum()
    }
}

/// Advance `n` steps after `burn_in` discarded ones, accumulating both
/// log-sums and the `|y| < delta` recurrence events.
pub fn iterate(
    system: &SkewSystem,
    theta0: f64,
    y0: f64,
    n: u64,
    burn_in: u64,
    delta: f64,
) -> Result<OrbitAccumulator> {
    let iv = system.base().interval();
    if !(theta0 >= iv.lo - 1e-12 && theta0 <= iv.hi + 1e-12) {
        return Err(Error::OutOfDomain { what: "theta0", value: theta0, lo: iv.lo, hi: iv.hi });
    }
    let bound = system.y_bound();
    if y0.abs() > bound + ESCAPE_TOL {
        return Err(Error::OutOfDomain { what: "y0", value: y0, lo: -bound, hi: bound });
    }

    let mut x = system.base().x_of_theta_fast(theta0);
    let mut y = y0.clamp(-bound, bound);
    let mut scratch = 0.0;
    for step in 0..burn_in {
        let (xn, yn) = system.step_x(x, y, &mut scratch);
        x = xn;
        y = confine(system, yn, step, x)?;
    }

    let mut sum_dh = Kahan::default();
    let mut sum_dqb = Kahan::default();
    let mut events = Vec::new();
    for step in 0..n {
        let ay = y.abs();
        if ay < delta {
            events.push((step, ay));
        }
        sum_dqb.add((2.0 * ay).ln());
        let mut dh = 0.0;
        let (xn, yn) = system.step_x(x, y, &mut dh);
        sum_dh.add(dh);
        x = xn;
        y = confine(system, yn, step, x)?;
    }

    Ok(OrbitAccumulator {
        theta: system.base().u_fast(x),
        y,
        steps: n,
        sum_log_dh: sum_dh.value(),
        sum_log_dqb: sum_dqb.value(),
        events,
    })
}

/// Pull rounding excursions back strictly inside the rectangle; anything
/// beyond tolerance means the invariance check was wrong.
#[inline]
fn confine(system: &SkewSystem, y: f64, step: u64, x: f64) -> Result<f64> {
    let bound = system.y_bound();
    if y.abs() <= bound {
        return Ok(y);
    }
    if y.abs() <= bound + ESCAPE_TOL {
        // Strictly inside, so an exactly-boundary fixed point (b = 2) cannot
        // trap the orbit.
        return Ok(y.signum() * bound * (1.0 - 1e-12));
    }
    Err(Error::EscapedRectangle { step, theta: system.base().u_fast(x), y })
}

#[derive(Default)]
struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    #[inline]
    fn add(&mut self, v: f64) {
        let t = v - self.carry;
        let s = self.sum + t;
        self.carry = (s - self.sum) - t;
        self.sum = s;
    }

    fn value(&self) -> f64 {
        self.sum
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LyapunovRecord {
    pub orbit_id: u32,
    pub lambda_theta: f64,
    pub lambda_y: f64,
    pub n: u64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct EnsembleStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

fn stats(values: &[f64]) -> EnsembleStats {
    let nf = values.len() as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let mut var = 0.0;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        var += (v - mean) * (v - mean);
        min = min.min(v);
        max = max.max(v);
    }
    EnsembleStats { mean, std: (var / nf).sqrt(), min, max }
}

#[derive(Clone, Debug, Serialize)]
pub struct LyapunovSummary {
    pub records: Vec<LyapunovRecord>,
    pub theta_stats: EnsembleStats,
    pub y_stats: EnsembleStats,
    pub n: u64,
    pub burn_in: u64,
    pub seed: u64,
}

/// Both Lyapunov exponents over an ensemble of uniformly random initial
/// conditions. Orbits are independent workers with per-orbit seeds; the
/// reduction runs in orbit-index order, so the result is reproducible under
/// any thread count.
pub fn lyapunov_exponents(
    system: &SkewSystem,
    n_orbits: u32,
    n: u64,
    burn_in: u64,
    seed: u64,
) -> Result<LyapunovSummary> {
    let iv = system.base().interval();
    let bound = system.y_bound();
    let records: Result<Vec<LyapunovRecord>> = (0..n_orbits)
        .into_par_iter()
        .map(|orbit_id| {
            let mut rng = CounterRng::new(seed, orbit_id as u64);
            let theta0 = rng.uniform(iv.lo, iv.hi);
            let y0 = rng.uniform(-bound, bound);
            let acc = iterate(system, theta0, y0, n, burn_in, 0.0)?;
            Ok(LyapunovRecord {
                orbit_id,
                lambda_theta: acc.lambda_theta(),
                lambda_y: acc.lambda_y(),
                n,
                seed,
            })
        })
        .collect();
    let records = records?;
    let lth: Vec<f64> = records.iter().map(|r| r.lambda_theta).collect();
    let ly: Vec<f64> = records.iter().map(|r| r.lambda_y).collect();
    Ok(LyapunovSummary {
        theta_stats: stats(&lth),
        y_stats: stats(&ly),
        records,
        n,
        burn_in,
        seed,
    })
}

/// Derived constants of the small-coupling regime.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BEConstants {
    pub sigma: f64,
    /// Empirical recovery depth; a fit by-product, never asserted.
    pub delta_star: f64,
    /// Empirical growth prefactor; a fit by-product, never asserted.
    pub c_star: f64,
    pub n_alpha: u32,
    pub m_alpha: u32,
    pub eta: f64,
    pub r0: f64,
    pub beta: f64,
}

/// Exponent bookkeeping: `N_alpha` is the smallest integer with
/// `4^{N_alpha} >= 1/alpha` (the companion inequality
/// `sigma^{N_alpha} <= 1/alpha` is then verified), `M_alpha` is the integer
/// part of `log(1/alpha)/log 32`, `eta = log sigma / (8 log 32)` and
/// `r0 = (1/2 - 2 eta) log(1/alpha)`.
pub fn compute_constants(alpha: f64, sigma: f64) -> Result<BEConstants> {
    assert!(alpha > 0.0 && alpha < 1.0, "alpha in (0,1)");
    assert!(sigma > 1.0 && sigma < 2.0, "sigma in (1,2)");
    let log_inv_alpha = (1.0 / alpha).ln();
    let n_alpha = (log_inv_alpha / 4.0_f64.ln()).ceil().max(1.0) as u32;
    let lhs = sigma.powi(n_alpha as i32);
    if lhs > 1.0 / alpha {
        return Err(Error::InconsistentConstants { lhs, rhs: 1.0 / alpha });
    }
    let m_alpha = (log_inv_alpha / 32.0_f64.ln()).floor() as u32;
    let eta = sigma.ln() / (8.0 * 32.0_f64.ln());
    let r0 = (0.5 - 2.0 * eta) * log_inv_alpha;
    Ok(BEConstants {
        sigma,
        delta_star: f64::NAN,
        c_star: f64::NAN,
        n_alpha,
        m_alpha,
        eta,
        r0,
        // 1/(2 l_0) for the l_0 = 2 observed on the default systems; only the
        // formula-level identities involving beta are contractual.
        beta: 0.25,
    })
}

impl BEConstants {
    /// Attach the empirical fit by-products from a growth-rate estimate.
    pub fn with_fit(mut self, fit: &SigmaEstimate) -> BEConstants {
        self.delta_star = fit.delta_star;
        self.c_star = fit.c_star;
        self
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SigmaEstimate {
    pub sigma: f64,
    pub clamped: bool,
    pub c_star: f64,
    pub delta_star: f64,
    /// RMS residual of the least-squares line.
    pub residual: f64,
    pub segments: usize,
    pub points: usize,
}

/// Fit `log |(Q_b^k)'| ~ log C + k log sigma` by least squares over orbit
/// segments of the fiber map that stay outside the `radius`-neighborhood of
/// the critical point. Segments shorter than 10 steps are rejected.
pub fn estimate_sigma(
    fiber: &MTCertificate,
    radius: f64,
    n_steps: u64,
    seed: u64,
) -> Result<SigmaEstimate> {
    let b = fiber.param.c();
    let bound = (2.0 * b).sqrt();
    let mut rng = CounterRng::new(seed, 0x51);
    let mut y = rng.uniform(-bound, bound);
    for _ in 0..1000 {
        y = fiber.param.map(y);
    }

    const MIN_SEG: usize = 10;
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut segments = 0usize;
    let mut seg_len = 0usize;
    let mut seg_acc = 0.0;
    let mut delta_star = f64::INFINITY;
    let mut prev_deep = false;
    for _ in 0..n_steps {
        if prev_deep {
            delta_star = delta_star.min(y.abs());
        }
        prev_deep = y.abs() < 2.0 * radius.max(1e-8);
        if y.abs() >= radius {
            seg_len += 1;
            seg_acc += (2.0 * y.abs()).ln();
            if seg_len >= MIN_SEG {
                xs.push(seg_len as f64);
                ys.push(seg_acc);
            }
        } else {
            if seg_len >= MIN_SEG {
                segments += 1;
            }
            seg_len = 0;
            seg_acc = 0.0;
        }
        y = fiber.param.map(y);
    }
    if seg_len >= MIN_SEG {
        segments += 1;
    }
    if segments < 1 || xs.len() < 30 {
        return Err(Error::InsufficientSegments { found: segments, need: 1 });
    }

    let (slope, intercept, residual) = least_squares(&xs, &ys);
    let sigma_raw = slope.exp();
    let sigma = sigma_raw.clamp(1.0 + 1e-9, 2.0 - 1e-9);
    Ok(SigmaEstimate {
        sigma,
        clamped: sigma != sigma_raw,
        c_star: intercept.exp(),
        delta_star: if delta_star.is_finite() { delta_star } else { radius.max(1e-3) },
        residual,
        segments,
        points: xs.len(),
    })
}

/// Plain least squares `y ~ intercept + slope * x`; returns
/// `(slope, intercept, rms residual)`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let r = y - intercept - slope * x;
        ss += r * r;
    }
    (slope, intercept, (ss / n).sqrt())
}

/// Coefficient of determination of a fitted line.
pub fn r_squared(xs: &[f64], ys: &[f64], slope: f64, intercept: f64) -> f64 {
    let n = ys.len() as f64;
    let my = ys.iter().sum::<f64>() / n;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        ss_res += (y - intercept - slope * x).powi(2);
        ss_tot += (y - my).powi(2);
    }
    1.0 - ss_res / ss_tot
}
