//! Expanding coordinates for a certified quadratic base map.
//!
//! The subhyperbolic metric is realized as the orbifold product
//! `rho(x) = prod_{v in PC} |x - v|^{-1/2}`, which has the required
//! inverse-square-root singularity at every post-critical point. The
//! coordinate change `u(x) = int_0^x rho` conjugates `Q_a` to a map `h0` that
//! is uniformly expanding; the expansion constant is measured, not assumed.
//!
//! The one-step expansion factor `|h0'(u(x))| = rho(Q_a x) |Q_a'(x)| / rho(x)`
//! extends continuously across the singularities. Writing `|Q_a x - v| =
//! |x^2 - (a - v)|` and factoring, every singular term cancels symbolically
//! against a post-critical factor, leaving
//!
//! ```text
//! log |h0'| = log 2 - 1/2 * sum_{u in leftover} log |x - u|
//! ```
//!
//! with a short, often empty, list of leftover points outside the orbit
//! structure (empty for a = 2, where `|h0'| = 2` exactly). All hot-path
//! evaluations use this cancelled form.

mod partition;
mod utable;

pub use partition::{markov_defect, nesting_defect, MarkovPartition, DEPTH_CAP, MARKOV_TOL};
pub use utable::UTable;

use serde::Serialize;
use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::mt::{postcritical_set, MTCertificate, PostCriticalSet, QuadraticParam};
use crate::quad::integrate_adaptive;
use crate::rng::CounterRng;

/// Closed interval with the handful of accessors the partition and curve code
/// need.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval, tol: f64) -> bool {
        other.lo >= self.lo - tol && other.hi <= self.hi + tol
    }
}

/// The singular product metric over a post-critical set.
#[derive(Clone, Debug)]
pub struct MetricModel {
    points: Vec<f64>,
}

/// Evaluator for `rho(x) = prod |x - v|^{-1/2}`.
pub fn build_metric(pc: &PostCriticalSet) -> Result<MetricModel> {
    assert!(!pc.is_empty(), "post-critical set must be nonempty");
    Ok(MetricModel { points: pc.points().to_vec() })
}

impl MetricModel {
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn rho(&self, x: f64) -> Result<f64> {
        Ok(self.log_rho(x)?.exp())
    }

    pub fn log_rho(&self, x: f64) -> Result<f64> {
        let mut acc = 0.0;
        for &v in &self.points {
            let d = (x - v).abs();
            if d == 0.0 {
                return Err(Error::EvaluationAtSingularity { x });
            }
            acc -= 0.5 * d.ln();
        }
        Ok(acc)
    }
}

/// Which evaluation mode produced the accepted expansion constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum LambdaMode {
    /// Infimum of the one-step ratio.
    OneStep,
    /// Best n-step geometric mean, used when the one-step infimum is <= 1.
    GeoMean(u32),
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LambdaEstimate {
    pub lambda: f64,
    pub mode: LambdaMode,
}

/// Expanding model: metric, coordinate tables, expansion constants.
/// Immutable after construction and cheap to share.
#[derive(Clone)]
pub struct ExpandingModel {
    cert: MTCertificate,
    metric: MetricModel,
    table: UTable,
    /// Leftover denominator points of the cancelled `log |h0'|` form.
    dh0_leftover: Vec<f64>,
    u_pc: Vec<f64>,
    m1: u32,
    lambda: LambdaEstimate,
    m0: u32,
    tilde_lambda_a: f64,
    lambda_g: f64,
}

/// Grid size used for the expansion-constant estimate at build time.
pub const LAMBDA_GRID: usize = 20_000;
/// Nodes in the `u` interpolation table.
pub const U_TABLE_NODES: usize = 1 << 14;
/// Structural snapping distance onto post-critical points, in x-coordinates.
/// Genuine distinct breakpoints stay further apart than this at the partition
/// depths in use (the gap shrinks like the inverse branch contraction).
pub(crate) const PC_SNAP_TOL: f64 = 1e-11;

impl ExpandingModel {
    /// Build the model. `m1` defaults to the minimal `m0` with
    /// `lambda_a^{m0} > 4` and can only be raised above it.
    pub fn build(cert: MTCertificate, m1_request: Option<u32>) -> Result<ExpandingModel> {
        let pc = postcritical_set(&cert);
        let metric = build_metric(&pc)?;
        let table = UTable::build(metric.points(), U_TABLE_NODES);
        let dh0_leftover = cancelled_leftover(&cert, metric.points());

        let lambda = estimate_lambda_with(
            &cert,
            &dh0_leftover,
            metric.points(),
            LAMBDA_GRID,
        )?;
        let mut m0 = 1u32;
        while lambda.lambda.powi(m0 as i32) <= 4.0 {
            m0 += 1;
            assert!(m0 < 1000, "expansion too weak for a finite m0");
        }
        let tilde_lambda_a = 0.5 * (lambda.lambda + 4f64.powf(1.0 / m0 as f64));
        let m1 = m1_request.unwrap_or(m0).max(m0);
        let lambda_g = lambda.lambda.powi(m1 as i32);

        let u_pc: Vec<f64> = metric.points().iter().map(|&v| table.u(v)).collect();

        Ok(ExpandingModel {
            cert,
            metric,
            table,
            dh0_leftover,
            u_pc,
            m1,
            lambda,
            m0,
            tilde_lambda_a,
            lambda_g,
        })
    }

    pub fn cert(&self) -> &MTCertificate {
        &self.cert
    }

    pub fn param(&self) -> &QuadraticParam {
        &self.cert.param
    }

    pub fn metric(&self) -> &MetricModel {
        &self.metric
    }

    pub fn m1(&self) -> u32 {
        self.m1
    }

    pub fn m0(&self) -> u32 {
        self.m0
    }

    pub fn lambda_a(&self) -> f64 {
        self.lambda.mode_lambda()
    }

    pub fn lambda_estimate(&self) -> LambdaEstimate {
        self.lambda
    }

    pub fn tilde_lambda_a(&self) -> f64 {
        self.tilde_lambda_a
    }

    pub fn lambda_g(&self) -> f64 {
        self.lambda_g
    }

    /// `I_a = u([a - a^2, a])`.
    pub fn interval(&self) -> Interval {
        let (lo, hi) = self.table.theta_range();
        Interval { lo, hi }
    }

    pub(crate) fn interval_pair(&self) -> (f64, f64) {
        self.table.theta_range()
    }

    /// Dynamical interval of `Q_a` in `x`-coordinates.
    pub fn domain_x(&self) -> (f64, f64) {
        self.table.x_range()
    }

    /// `u(PC)` in theta-coordinates (sorted).
    pub fn u_postcritical(&self) -> &[f64] {
        &self.u_pc
    }

    /// Expanding coordinate by singular-splitting quadrature. This is the
    /// slow reference path; the table path must agree with it to 1e-10.
    pub fn u_quadrature(&self, x: f64) -> Result<f64> {
        let (lo, hi) = self.domain_x();
        if !(x >= lo && x <= hi) {
            return Err(Error::OutOfDomain { what: "x", value: x, lo, hi });
        }
        Ok(self.cumulative_quadrature(x) - self.cumulative_quadrature(0.0))
    }

    /// `int_{v_0}^{x} rho` with the substitution `t = v +/- s^2` applied at
    /// singular segment endpoints.
    fn cumulative_quadrature(&self, x: f64) -> f64 {
        let pc = self.metric.points();
        let mut acc = 0.0;
        for seg in pc.windows(2) {
            let (p, q) = (seg[0], seg[1]);
            if x <= p {
                break;
            }
            let upto = x.min(q);
            acc += self.segment_quadrature(p, q, upto);
        }
        acc
    }

    /// `int_p^{upto} rho` on the segment `[p, q]`, split at the midpoint.
    fn segment_quadrature(&self, p: f64, q: f64, upto: f64) -> f64 {
        let pc = self.metric.points();
        let mid = 0.5 * (p + q);
        // Metric with one endpoint factor removed.
        let reduced = |t: f64, skip: f64| -> f64 {
            let mut log_r = 0.0;
            for &v in pc {
                if v == skip {
                    continue;
                }
                log_r -= 0.5 * (t - v).abs().ln();
            }
            log_r.exp()
        };
        let mut acc = 0.0;
        // Left half: t = p + s^2, rho dt = 2 * reduced(t; p) ds.
        let s_end = (upto.min(mid) - p).max(0.0).sqrt();
        if s_end > 0.0 {
            acc += integrate_adaptive(0.0, s_end, &|s| 2.0 * reduced(p + s * s, p), 1e-13);
        }
        // Right half: t = q - s^2, from s = sqrt(q - mid) down to sqrt(q - upto).
        if upto > mid {
            let s_hi = (q - mid).sqrt();
            let s_lo = (q - upto).max(0.0).sqrt();
            acc += integrate_adaptive(s_lo, s_hi, &|s| 2.0 * reduced(q - s * s, q), 1e-13);
        }
        acc
    }

    /// `u(x)` through the interpolation table (fast path, clamps to domain).
    #[inline]
    pub fn u_fast(&self, x: f64) -> f64 {
        self.table.u(x)
    }

    /// `u(x)` with domain checking: the public coordinate map.
    pub fn u_of_x(&self, x: f64) -> Result<f64> {
        let (lo, hi) = self.domain_x();
        if !(x >= lo && x <= hi) {
            return Err(Error::OutOfDomain { what: "x", value: x, lo, hi });
        }
        Ok(self.table.u(x))
    }

    /// `u^{-1}(theta)` (fast path, clamps to the interval).
    #[inline]
    pub fn x_of_theta_fast(&self, theta: f64) -> f64 {
        self.table.inv(theta)
    }

    /// Monotone inversion of `u` with a final Newton polish against the
    /// quadrature evaluator; round trip is accurate to 1e-10 or better.
    pub fn x_of_theta(&self, theta: f64) -> Result<f64> {
        let iv = self.interval();
        if !(theta >= iv.lo - 1e-12 && theta <= iv.hi + 1e-12) {
            return Err(Error::OutOfDomain { what: "theta", value: theta, lo: iv.lo, hi: iv.hi });
        }
        let mut x = self.table.inv(theta);
        // Skip the polish right next to a singularity, where rho blows up and
        // the table value is already node-exact.
        if self.pc_distance(x) > 1e-9 {
            let residual = self.u_quadrature(x)? - theta;
            let rho = self.metric.rho(x)?;
            let (lo, hi) = self.domain_x();
            x = (x - residual / rho).clamp(lo, hi);
        }
        Ok(x)
    }

    fn pc_distance(&self, x: f64) -> f64 {
        self.metric
            .points()
            .iter()
            .fold(f64::INFINITY, |d, v| d.min((x - v).abs()))
    }

    /// Index of the post-critical point within `tol` of `x`, if any.
    fn pc_index_within(&self, x: f64, tol: f64) -> Option<usize> {
        self.metric
            .points()
            .iter()
            .position(|&v| (x - v).abs() <= tol)
    }

    /// Snap `x` onto a post-critical point when it is within rounding reach.
    ///
    /// Near a singularity of `rho` the theta-coordinate responds to `x` like a
    /// square root, so an `x` known to 1e-16 carries ~1e-8 of theta noise.
    /// Points that are *structurally* post-critical (pullbacks and forward
    /// images of orbit points) must therefore be snapped onto the exact stored
    /// values before converting to theta.
    #[inline]
    pub(crate) fn snap_to_pc(&self, x: f64) -> f64 {
        match self.pc_index_within(x, PC_SNAP_TOL) {
            Some(j) => self.metric.points()[j],
            None => x,
        }
    }

    /// `u(x)` returning the exact tabulated value on post-critical points.
    #[inline]
    pub(crate) fn u_snapped(&self, x: f64) -> f64 {
        match self.pc_index_within(x, PC_SNAP_TOL) {
            Some(j) => self.u_pc[j],
            None => self.table.u(x),
        }
    }

    /// One forward base-map step with post-critical snapping, in x-coordinates.
    #[inline]
    pub(crate) fn q_step_snapped(&self, x: f64) -> f64 {
        self.snap_to_pc(self.cert.param.map(x))
    }

    /// `h0(theta)` through the structural forward map: exact on breakpoints
    /// that sit on the post-critical orbit.
    pub fn h0_theta_snapped(&self, theta: f64) -> f64 {
        let x = self.table.inv(theta);
        self.u_snapped(self.q_step_snapped(x))
    }

    /// `h(theta) = h0^{m1}(theta)` through the structural forward map.
    pub fn h_theta_snapped(&self, theta: f64) -> f64 {
        let mut x = self.table.inv(theta);
        for _ in 0..self.m1 {
            x = self.q_step_snapped(x);
        }
        self.u_snapped(x)
    }

    /// `h0 = u o Q_a o u^{-1}` (fast path).
    #[inline]
    pub fn h0_theta_fast(&self, theta: f64) -> f64 {
        self.table.u(self.cert.param.map(self.table.inv(theta)))
    }

    /// `h0(theta)` with domain checking.
    pub fn h0(&self, theta: f64) -> Result<f64> {
        let x = self.x_of_theta(theta)?;
        Ok(self.table.u(self.cert.param.map(x)))
    }

    /// `h = h0^{m1}` (fast path).
    #[inline]
    pub fn h_theta_fast(&self, theta: f64) -> f64 {
        self.table.u(self.h_x(self.table.inv(theta)))
    }

    /// `h(theta)` with domain checking.
    pub fn h(&self, theta: f64) -> Result<f64> {
        let x = self.x_of_theta(theta)?;
        Ok(self.table.u(self.h_x(x)))
    }

    /// `Q_a^{m1}` in `x`-coordinates.
    #[inline]
    pub fn h_x(&self, mut x: f64) -> f64 {
        for _ in 0..self.m1 {
            x = self.cert.param.map(x);
        }
        x
    }

    /// `log |h0'(u(x))|` in the cancelled form; finite everywhere except at
    /// the (rare, domain-exterior for small orbits) leftover points.
    #[inline]
    pub fn log_abs_dh0_x(&self, x: f64) -> f64 {
        let mut acc = LN_2;
        for &u in &self.dh0_leftover {
            let d = (x - u).abs().max(1e-300);
            acc -= 0.5 * d.ln();
        }
        acc
    }

    /// Sign of `h0'` at `u(x)`: the branch orientation.
    #[inline]
    pub fn dh0_sign_x(&self, x: f64) -> f64 {
        if x < 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Signed `h'(u(x))` together with the forward orbit of `x` under `Q_a`
    /// (one full `h`-step, `m1` substeps).
    pub fn dh_x(&self, x: f64) -> f64 {
        let mut log_abs = 0.0;
        let mut sign = 1.0;
        let mut p = x;
        for _ in 0..self.m1 {
            log_abs += self.log_abs_dh0_x(p);
            sign *= self.dh0_sign_x(p);
            p = self.cert.param.map(p);
        }
        sign * log_abs.exp()
    }

    /// Markov partition at pullback level `n` (levels of `h0`).
    pub fn partition(&self, n: u32) -> Result<MarkovPartition> {
        partition::build_partition(self, n)
    }

    /// Partition for the iterate `h = h0^{m1}`: level `n` of `h` is level
    /// `n * m1` of `h0`.
    pub fn p_partition(&self, n: u32) -> Result<MarkovPartition> {
        self.partition(n * self.m1)
    }
}

/// Leftover denominator points after cancelling the post-critical factors of
/// `rho(Q_a x) / rho(x)` symbolically.
fn cancelled_leftover(cert: &MTCertificate, pc: &[f64]) -> Vec<f64> {
    let a = cert.param.c();
    let mut denominator: Vec<f64> = Vec::new();
    for &v in pc {
        if (v - a).abs() <= 1e-9 {
            continue;
        }
        let s = (a - v).max(0.0).sqrt();
        denominator.push(s);
        denominator.push(-s);
    }
    // Cancel numerator factors (all post-critical points appear).
    let mut leftover = denominator;
    for &v in pc {
        if let Some(i) = leftover
            .iter()
            .enumerate()
            .filter(|(_, &d)| (d - v).abs() <= 1e-9)
            .map(|(i, _)| i)
            .next()
        {
            leftover.swap_remove(i);
        } else {
            // Every post-critical point has a post-critical preimage, so this
            // branch signals broken certification rather than a new case.
            panic!("post-critical point {v} has no matching preimage factor");
        }
    }
    leftover.sort_by(|x, y| x.partial_cmp(y).unwrap());
    leftover
}

/// Measured expansion constant of the metric, on a midpoint grid that avoids
/// the post-critical points. Falls back to the best n-step geometric mean
/// (n <= 8) when the one-step infimum is not expanding.
pub fn estimate_lambda_a(model: &ExpandingModel, grid_size: usize) -> Result<LambdaEstimate> {
    estimate_lambda_with(&model.cert, &model.dh0_leftover, model.metric.points(), grid_size)
}

fn estimate_lambda_with(
    cert: &MTCertificate,
    leftover: &[f64],
    _pc: &[f64],
    grid_size: usize,
) -> Result<LambdaEstimate> {
    assert!(grid_size >= 1000, "grid too coarse for an infimum estimate");
    let param = cert.param;
    let (lo, hi) = (param.c() - param.c() * param.c(), param.c());
    let log_ratio = |x: f64| -> f64 {
        let mut acc = LN_2;
        for &u in leftover {
            acc -= 0.5 * (x - u).abs().max(1e-300).ln();
        }
        acc
    };

    let mut inf_log = f64::INFINITY;
    for i in 0..grid_size {
        let x = lo + (hi - lo) * (i as f64 + 0.5) / grid_size as f64;
        inf_log = inf_log.min(log_ratio(x));
    }
    if inf_log > 0.0 {
        return Ok(LambdaEstimate { lambda: inf_log.exp(), mode: LambdaMode::OneStep });
    }

    // Geometric-mean fallback over orbit segments of length n <= 8.
    let mut best = f64::NEG_INFINITY;
    let mut best_n = 0u32;
    for n in 2..=8u32 {
        let mut inf_mean = f64::INFINITY;
        for i in 0..grid_size {
            let mut x = lo + (hi - lo) * (i as f64 + 0.5) / grid_size as f64;
            let mut acc = 0.0;
            for _ in 0..n {
                acc += log_ratio(x);
                x = param.map(x);
            }
            inf_mean = inf_mean.min(acc / n as f64);
        }
        if inf_mean > best {
            best = inf_mean;
            best_n = n;
        }
    }
    if best > 0.0 {
        Ok(LambdaEstimate { lambda: best.exp(), mode: LambdaMode::GeoMean(best_n) })
    } else {
        Err(Error::NotExpanding { best: best.exp(), mode: "geometric-mean" })
    }
}

impl LambdaEstimate {
    fn mode_lambda(&self) -> f64 {
        self.lambda
    }
}

/// Inverse branch `tau_n = (h^n|_{omega_n})^{-1}`, stored as the substep
/// branch signs of the pullback chain.
#[derive(Clone, Debug)]
pub struct InverseBranch {
    /// Depth in `h`-steps.
    pub depth: u32,
    /// Branch sign per `h0`-substep, in pullback order.
    signs: Vec<i8>,
    pub source: Interval,
    pub target: Interval,
}

impl InverseBranch {
    /// Pull `theta` back through the chain (in `x`-coordinates throughout).
    pub fn eval(&self, model: &ExpandingModel, theta: f64) -> f64 {
        model.u_snapped(self.eval_x(model, model.x_of_theta_fast(theta)))
    }

    pub(crate) fn eval_x(&self, model: &ExpandingModel, mut x: f64) -> f64 {
        let a = model.param().c();
        for &s in &self.signs {
            x = model.snap_to_pc(f64::from(s) * (a - x).max(0.0).sqrt());
        }
        x
    }

    /// Exact `tau'(theta)` through the chain rule: the product of `1/h0'`
    /// over the pullback points. Finite differences are useless here once the
    /// contraction reaches rounding scale, and the orientation comes from the
    /// branch signs so that points landing exactly on the turning point stay
    /// on the correct branch.
    pub fn deriv(&self, model: &ExpandingModel, theta: f64) -> f64 {
        let a = model.param().c();
        let mut x = model.x_of_theta_fast(theta);
        let mut log_abs = 0.0;
        let mut sign = 1.0;
        for &s in &self.signs {
            x = model.snap_to_pc(f64::from(s) * (a - x).max(0.0).sqrt());
            log_abs -= model.log_abs_dh0_x(x);
            sign *= -f64::from(s);
        }
        sign * log_abs.exp()
    }
}

/// Construct the inverse branch for a Markov-related pair of elements.
pub fn inverse_branch(
    model: &ExpandingModel,
    source: &Interval,
    target: &Interval,
    depth: u32,
) -> Result<InverseBranch> {
    let substeps = depth * model.m1();
    // Forward orbit of the target midpoint fixes the branch signs.
    let mut x = model.x_of_theta_fast(target.mid());
    let mut forward = Vec::with_capacity(substeps as usize);
    for _ in 0..substeps {
        forward.push(x);
        x = model.param().map(x);
    }
    if !source.contains(model.u_snapped(x)) {
        return Err(Error::NotABranch { depth });
    }
    let signs: Vec<i8> = forward
        .iter()
        .rev()
        .map(|&p| if p < 0.0 { -1 } else { 1 })
        .collect();
    let branch = InverseBranch { depth, signs, source: *source, target: *target };
    // Markov onto-property: the branch must carry the source element onto the
    // target element.
    let lo_img = branch.eval(model, source.lo);
    let hi_img = branch.eval(model, source.hi);
    let (im_lo, im_hi) = if lo_img <= hi_img { (lo_img, hi_img) } else { (hi_img, lo_img) };
    if (im_lo - target.lo).abs() > MARKOV_TOL || (im_hi - target.hi).abs() > MARKOV_TOL {
        return Err(Error::NotABranch { depth });
    }
    Ok(branch)
}

/// Sampled distortion constant for level-`n` elements.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DistortionReport {
    pub level: u32,
    pub samples: u32,
    /// Smallest constant satisfying both distortion inequalities on the sample.
    pub c_d: f64,
    /// Worst constant demanded by the lower (quadratic) inequality.
    pub worst_lower: f64,
    /// Worst constant demanded by the upper (linear) inequality.
    pub worst_upper: f64,
}

/// Sample random subintervals `E` of random level-`n` elements and bound the
/// distortion `C_d^{-1} |h0^n E|^2 <= |E|/|omega_n| <= C_d |h0^n E|`.
pub fn distortion_report(
    model: &ExpandingModel,
    n: u32,
    samples: u32,
    seed: u64,
) -> Result<DistortionReport> {
    let part = model.partition(n)?;
    let mut rng = CounterRng::new(seed, 0xD15);
    let mut worst_lower = 0.0_f64;
    let mut worst_upper = 0.0_f64;
    for _ in 0..samples {
        let omega = part.element(rng.below(part.len() as u64) as usize);
        let (mut e0, mut e1);
        loop {
            e0 = rng.uniform(omega.lo, omega.hi);
            e1 = rng.uniform(omega.lo, omega.hi);
            if (e1 - e0).abs() > 1e-9 * omega.len() {
                break;
            }
        }
        if e1 < e0 {
            std::mem::swap(&mut e0, &mut e1);
        }
        // Forward images after n base-map steps, in x-coordinates.
        let mut xa = model.x_of_theta_fast(e0);
        let mut xb = model.x_of_theta_fast(e1);
        for _ in 0..n {
            xa = model.param().map(xa);
            xb = model.param().map(xb);
        }
        let image_len = (model.u_fast(xb) - model.u_fast(xa)).abs();
        let ratio = (e1 - e0) / omega.len();
        if image_len == 0.0 {
            continue;
        }
        worst_lower = worst_lower.max(image_len * image_len / ratio);
        worst_upper = worst_upper.max(ratio / image_len);
    }
    Ok(DistortionReport {
        level: n,
        samples,
        c_d: worst_lower.max(worst_upper),
        worst_lower,
        worst_upper,
    })
}

#[cfg(test)]
mod tests;
