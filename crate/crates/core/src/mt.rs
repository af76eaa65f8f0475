//! Certification of quadratic parameters with strictly pre-periodic critical
//! orbit, and their post-critical data.
//!
//! For `Q_c(x) = c - x^2` with `1 < c <= 2`, a parameter is accepted when the
//! critical orbit `0, Q_c(0), Q_c^2(0), ...` lands on a periodic cycle after
//! exactly `preperiod` steps and the first `preperiod + period` orbit points
//! are pairwise separated. Orbits are evaluated in double-double arithmetic so
//! the certificate residual carries more digits than the search itself needs.

use serde::Serialize;

use crate::dd::{quad_step, Dd};
use crate::error::{Error, Result};
use crate::expanding::ExpandingModel;

/// Residual below which `Q_c^{k+p}(0) = Q_c^k(0)` is accepted.
pub const CERT_TOL: f64 = 1e-12;
/// Minimal pairwise separation of the leading orbit points.
pub const STRICTNESS_TOL: f64 = 1e-6;
/// Deduplication tolerance for post-critical points.
pub const DEDUP_TOL: f64 = 1e-9;

/// Quadratic parameter `c` with `1 < c <= 2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuadraticParam {
    c: f64,
}

impl QuadraticParam {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 1.0 && c <= 2.0) || !c.is_finite() {
            return Err(Error::BadParameter { c });
        }
        Ok(QuadraticParam { c })
    }

    #[inline]
    pub fn c(&self) -> f64 {
        self.c
    }

    /// `Q_c(x) = c - x^2`.
    #[inline]
    pub fn map(&self, x: f64) -> f64 {
        self.c - x * x
    }

    /// `Q_c'(x) = -2x`.
    #[inline]
    pub fn dmap(&self, x: f64) -> f64 {
        -2.0 * x
    }

    /// Dynamical interval `[c - c^2, c]`.
    pub fn interval(&self) -> (f64, f64) {
        (self.c - self.c * self.c, self.c)
    }
}

/// `Q_c^n(x)` by n-fold application in plain doubles.
pub fn iterate_quadratic(param: &QuadraticParam, x: f64, n: u32) -> f64 {
    let mut y = x;
    for _ in 0..n {
        y = param.map(y);
    }
    y
}

/// Critical orbit `Q_c(0), ..., Q_c^len(0)` in double-double.
fn critical_orbit_dd(c: f64, len: u32) -> Vec<Dd> {
    let cd = Dd::from(c);
    let mut x = Dd::ZERO;
    let mut orbit = Vec::with_capacity(len as usize);
    for _ in 0..len {
        x = quad_step(cd, x);
        orbit.push(x);
    }
    orbit
}

/// Certificate that the critical point of `Q_c` is strictly pre-periodic with
/// the stated combinatorics.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MTCertificate {
    pub param: QuadraticParam,
    pub preperiod: u32,
    pub period: u32,
    /// `|Q_c^{k+p}(0) - Q_c^k(0)|` evaluated in double-double.
    pub residual: f64,
    /// Minimal distance between distinct orbit points `Q_c^i(0)`, `i < k+p`.
    pub strictness_gap: f64,
}

/// Finite forward orbit of the critical value, sorted ascending.
#[derive(Clone, Debug, Serialize)]
pub struct PostCriticalSet {
    points: Vec<f64>,
}

impl PostCriticalSet {
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Distance from `x` to the nearest post-critical point.
    pub fn distance(&self, x: f64) -> f64 {
        self.points.iter().fold(f64::INFINITY, |d, v| d.min((x - v).abs()))
    }
}

/// `G(c) = Q_c^{k+p}(0) - Q_c^k(0)` and `dG/dc`, in double-double.
fn gap_fn(c: f64, k: u32, p: u32) -> (Dd, f64) {
    let cd = Dd::from(c);
    let mut x = Dd::ZERO;
    let mut dx = 0.0; // d/dc of the orbit point, f64 is plenty for Newton
    let mut x_k = Dd::ZERO;
    let mut dx_k = 0.0;
    for n in 1..=(k + p) {
        dx = 1.0 - 2.0 * x.value() * dx;
        x = quad_step(cd, x);
        if n == k {
            x_k = x;
            dx_k = dx;
        }
    }
    (x.sub(x_k), dx - dx_k)
}

/// Certify the orbit combinatorics of a candidate parameter.
fn certify(c: f64, preperiod: u32, period: u32) -> Result<MTCertificate> {
    let param = QuadraticParam::new(c)?;
    let len = preperiod + period;
    let orbit = critical_orbit_dd(c, len);
    // Leading points Q^0(0) = 0, ..., Q^{k+p-1}(0) must be pairwise separated;
    // this is exactly minimality of (preperiod, period).
    let mut pts = vec![Dd::ZERO];
    pts.extend_from_slice(&orbit[..(len - 1) as usize]);
    let mut gap = f64::INFINITY;
    let mut worst = (0u32, 0u32);
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            let d = pts[i].sub(pts[j]).abs().value();
            if d < gap {
                gap = d;
                worst = (i as u32, j as u32);
            }
        }
    }
    if gap <= STRICTNESS_TOL {
        return Err(Error::StrictnessViolation {
            c,
            preperiod,
            period,
            i: worst.0,
            j: worst.1,
            gap,
        });
    }
    let residual = orbit[(len - 1) as usize]
        .sub(if preperiod == 0 { Dd::ZERO } else { orbit[(preperiod - 1) as usize] })
        .abs()
        .value();
    if residual > CERT_TOL {
        return Err(Error::NoSignChange { lo: c, hi: c, g_lo: residual, g_hi: residual });
    }
    Ok(MTCertificate { param, preperiod, period, residual, strictness_gap: gap })
}

/// Find a strictly pre-periodic parameter with the given combinatorics inside
/// a bracket on which `G(c) = Q_c^{k+p}(0) - Q_c^k(0)` changes sign.
///
/// Bisection runs to width `1e-14`, then two safeguarded Newton steps polish
/// the root. Deterministic: identical inputs give bit-identical output. Only
/// the first sign-change root in the bracket is located; others may exist.
pub fn find_mt_parameter(preperiod: u32, period: u32, bracket: (f64, f64)) -> Result<MTCertificate> {
    assert!(preperiod >= 1 && period >= 1, "combinatorics must be positive");
    let (mut lo, mut hi) = bracket;
    assert!(lo < hi && lo >= 1.0 && hi <= 2.0, "bracket must satisfy 1 <= lo < hi <= 2");

    let g = |c: f64| gap_fn(c, preperiod, period);
    let (g_lo, _) = g(lo);
    let (g_hi, _) = g(hi);
    let (g_lo, g_hi) = (g_lo.value(), g_hi.value());

    // Roots sitting exactly on an endpoint (c = 2 is the classical case).
    if g_lo.abs() < 1e-13 {
        return certify(lo, preperiod, period);
    }
    if g_hi.abs() < 1e-13 {
        return certify(hi, preperiod, period);
    }
    if g_lo.signum() == g_hi.signum() {
        return Err(Error::NoSignChange { lo, hi, g_lo, g_hi });
    }

    let mut f_lo = g_lo;
    while hi - lo > 1e-14 {
        let mid = 0.5 * (lo + hi);
        let (g_mid, _) = g(mid);
        let g_mid = g_mid.value();
        if g_mid == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if g_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = g_mid;
        } else {
            hi = mid;
        }
    }

    let mut c = 0.5 * (lo + hi);
    for _ in 0..2 {
        let (gc, dgc) = g(c);
        if dgc == 0.0 {
            break;
        }
        let step = gc.value() / dgc;
        let next = c - step;
        if next >= bracket.0 && next <= bracket.1 {
            c = next;
        }
    }
    certify(c, preperiod, period)
}

/// Certify a parameter given by value, detecting the minimal combinatorics.
pub fn certify_value(c: f64, max_len: u32) -> Result<MTCertificate> {
    QuadraticParam::new(c)?;
    let orbit = critical_orbit_dd(c, max_len);
    let mut pts = vec![Dd::ZERO];
    pts.extend(orbit.iter().copied());
    // First revisit: smallest k + p with Q^{k+p}(0) = Q^k(0).
    for n in 1..pts.len() {
        for k in 0..n {
            if pts[n].sub(pts[k]).abs().value() <= CERT_TOL {
                let preperiod = k as u32;
                let period = (n - k) as u32;
                if preperiod == 0 {
                    // 0 itself periodic: superstable, not strictly pre-periodic.
                    return Err(Error::StrictnessViolation {
                        c,
                        preperiod,
                        period,
                        i: 0,
                        j: n as u32,
                        gap: pts[n].sub(pts[k]).abs().value(),
                    });
                }
                return certify(c, preperiod, period);
            }
        }
    }
    Err(Error::NoSignChange { lo: c, hi: c, g_lo: f64::NAN, g_hi: f64::NAN })
}

/// Post-critical set `{Q_c^n(0) : 1 <= n <= k+p}`, deduplicated and sorted.
pub fn postcritical_set(cert: &MTCertificate) -> PostCriticalSet {
    let orbit = critical_orbit_dd(cert.param.c(), cert.preperiod + cert.period);
    let mut points: Vec<f64> = orbit.iter().map(|d| d.value()).collect();
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    points.dedup_by(|a, b| (*a - *b).abs() <= DEDUP_TOL);
    PostCriticalSet { points }
}

/// Smallest `M0 <= max_steps` such that every level-0 partition element maps
/// onto the whole of `I_a` under `h^{M0}`, via reachability on the element
/// transition graph. Returns `(false, max_steps)` when no such time exists.
pub fn check_topological_exactness(model: &ExpandingModel, max_steps: u32) -> (bool, u32) {
    let p0 = model.partition(0).expect("level 0 partition");
    let n0 = p0.elements().len();
    if n0 == 1 {
        return (true, 0);
    }
    if max_steps == 0 {
        return (false, 0);
    }
    let p1 = match model.partition(model.m1()) {
        Ok(p) => p,
        Err(_) => return (false, max_steps),
    };

    // One-step relation: parent element -> image element, over level-1 cells.
    let mut step = vec![vec![false; n0]; n0];
    for elem in p1.elements() {
        let parent = p0.locate(elem.mid()).expect("nested");
        let image = model.h_x(model.x_of_theta_fast(elem.mid()));
        let image_elem = p0.locate(model.u_fast(image)).expect("markov image");
        step[parent][image_elem] = true;
    }

    let mut reach = step.clone();
    for m in 1..=max_steps {
        if reach.iter().all(|row| row.iter().all(|&b| b)) {
            return (true, m);
        }
        if m == max_steps {
            break;
        }
        let mut next = vec![vec![false; n0]; n0];
        for (i, row) in reach.iter().enumerate() {
            for (j, &r) in row.iter().enumerate() {
                if r {
                    for (k, &s) in step[j].iter().enumerate() {
                        if s {
                            next[i][k] = true;
                        }
                    }
                }
            }
        }
        reach = next;
    }
    (false, max_steps)
}
