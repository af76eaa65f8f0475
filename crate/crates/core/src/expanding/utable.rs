//! Monotone interpolation structure for the expanding coordinate `u` and its
//! inverse.
//!
//! `u(x) = int_0^x rho(t) dt` where `rho` has an inverse-square-root
//! singularity at every post-critical point. Between two consecutive singular
//! points `p < q` the substitution `x = mid + half * sin(psi)` absorbs both
//! endpoint singularities exactly:
//!
//! ```text
//! rho(x) dx = prod_{v != p,q} |x - v|^{-1/2} dpsi
//! ```
//!
//! so the integrand in `psi` is analytic on the closed segment. The table
//! stores cumulative integrals on a uniform `psi`-grid per segment (which is
//! cosine-clustered in `x`) together with the integrand values, and evaluates
//! `u` and `u^{-1}` by monotone cubic Hermite interpolation plus a safeguarded
//! Newton step.

use std::f64::consts::FRAC_PI_2;

use crate::quad::GaussRule;

/// One inter-singularity segment `[p, q]` with its `psi`-grid data.
#[derive(Clone)]
struct Segment {
    p: f64,
    q: f64,
    mid: f64,
    half: f64,
    /// Cumulative `int_{v_0}^{x(psi_i)} rho`, anchored at the global left end.
    u_vals: Vec<f64>,
    /// `dU/dpsi` at the nodes: the smooth integrand `w(psi)`.
    w_vals: Vec<f64>,
}

#[derive(Clone)]
pub struct UTable {
    segments: Vec<Segment>,
    /// `int_{v_0}^{0} rho`, subtracted so that `u(0) = 0`.
    anchor: f64,
    x_lo: f64,
    x_hi: f64,
    theta_lo: f64,
    theta_hi: f64,
}

/// Integrand in `psi` for the segment `[p, q]`: the metric with the two
/// endpoint factors cancelled.
fn w_of_psi(pc: &[f64], p: f64, q: f64, mid: f64, half: f64, psi: f64) -> f64 {
    let x = mid + half * psi.sin();
    let mut log_w = 0.0;
    for &v in pc {
        if v == p || v == q {
            continue;
        }
        log_w -= 0.5 * (x - v).abs().ln();
    }
    log_w.exp()
}

impl UTable {
    /// Build from the sorted post-critical points, `nodes_total` grid nodes
    /// split across segments.
    pub fn build(pc: &[f64], nodes_total: usize) -> UTable {
        assert!(pc.len() >= 2, "need at least the two endpoint singularities");
        let n_seg = pc.len() - 1;
        let per_seg = (nodes_total / n_seg).max(1024);
        let rule = GaussRule::new(16);

        let mut segments = Vec::with_capacity(n_seg);
        let mut acc = 0.0;
        for s in 0..n_seg {
            let (p, q) = (pc[s], pc[s + 1]);
            assert!(q - p > 1e-9, "post-critical points too close: [{p}, {q}]");
            let mid = 0.5 * (p + q);
            let half = 0.5 * (q - p);
            let dpsi = std::f64::consts::PI / per_seg as f64;
            let mut u_vals = Vec::with_capacity(per_seg + 1);
            let mut w_vals = Vec::with_capacity(per_seg + 1);
            u_vals.push(acc);
            w_vals.push(w_of_psi(pc, p, q, mid, half, -FRAC_PI_2));
            for i in 0..per_seg {
                let a = -FRAC_PI_2 + i as f64 * dpsi;
                let b = a + dpsi;
                acc += rule.integrate(a, b, &|psi| w_of_psi(pc, p, q, mid, half, psi));
                u_vals.push(acc);
                w_vals.push(w_of_psi(pc, p, q, mid, half, b.min(FRAC_PI_2)));
            }
            segments.push(Segment { p, q, mid, half, u_vals, w_vals });
        }

        let mut table = UTable {
            segments,
            anchor: 0.0,
            x_lo: pc[0],
            x_hi: pc[pc.len() - 1],
            theta_lo: 0.0,
            theta_hi: 0.0,
        };
        table.anchor = table.eval_raw(0.0);
        table.theta_lo = -table.anchor;
        table.theta_hi = table.segments.last().unwrap().u_vals.last().unwrap() - table.anchor;
        table
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.x_lo, self.x_hi)
    }

    pub fn theta_range(&self) -> (f64, f64) {
        (self.theta_lo, self.theta_hi)
    }

    fn segment_of_x(&self, x: f64) -> usize {
        // Segments are few; linear scan beats binary search here.
        for (i, s) in self.segments.iter().enumerate() {
            if x <= s.q {
                return i;
            }
        }
        self.segments.len() - 1
    }

    /// Cumulative integral from the left domain end (no anchor shift).
    fn eval_raw(&self, x: f64) -> f64 {
        let x = x.clamp(self.x_lo, self.x_hi);
        let seg = &self.segments[self.segment_of_x(x)];
        let psi = ((x - seg.mid) / seg.half).clamp(-1.0, 1.0).asin();
        let n = seg.u_vals.len() - 1;
        let dpsi = std::f64::consts::PI / n as f64;
        let pos = (psi + FRAC_PI_2) / dpsi;
        let i = (pos.floor() as usize).min(n - 1);
        let s = pos - i as f64;
        hermite(seg.u_vals[i], seg.u_vals[i + 1], seg.w_vals[i], seg.w_vals[i + 1], dpsi, s)
    }

    /// `u(x)`, anchored so `u(0) = 0`. Caller guarantees `x` is in (or within
    /// rounding of) the domain.
    #[inline]
    pub fn u(&self, x: f64) -> f64 {
        self.eval_raw(x) - self.anchor
    }

    /// `u^{-1}(theta)` by table inversion: binary search for the cell, then
    /// safeguarded Newton on the Hermite cubic in `psi`.
    pub fn inv(&self, theta: f64) -> f64 {
        let target = theta.clamp(self.theta_lo, self.theta_hi) + self.anchor;
        // Locate segment by cumulative range.
        let mut si = self.segments.len() - 1;
        for (i, s) in self.segments.iter().enumerate() {
            if target <= *s.u_vals.last().unwrap() {
                si = i;
                break;
            }
        }
        let seg = &self.segments[si];
        let n = seg.u_vals.len() - 1;
        let dpsi = std::f64::consts::PI / n as f64;
        // Binary search for the cell with u_vals[i] <= target <= u_vals[i+1].
        let i = match seg.u_vals.binary_search_by(|v| v.partial_cmp(&target).unwrap()) {
            Ok(j) => j.min(n - 1),
            Err(j) => j.saturating_sub(1).min(n - 1),
        };
        let (u0, u1) = (seg.u_vals[i], seg.u_vals[i + 1]);
        let (w0, w1) = (seg.w_vals[i], seg.w_vals[i + 1]);
        let mut s = if u1 > u0 { ((target - u0) / (u1 - u0)).clamp(0.0, 1.0) } else { 0.5 };
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..40 {
            let f = hermite(u0, u1, w0, w1, dpsi, s) - target;
            if f > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            let d = hermite_deriv(u0, u1, w0, w1, dpsi, s);
            let mut next = s - f / d;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - s).abs() < 1e-16 {
                s = next;
                break;
            }
            s = next;
        }
        let psi = -FRAC_PI_2 + (i as f64 + s) * dpsi;
        seg.mid + seg.half * psi.sin()
    }
}

/// Cubic Hermite on a cell of width `h`, local coordinate `s` in [0, 1].
#[inline]
fn hermite(u0: f64, u1: f64, w0: f64, w1: f64, h: f64, s: f64) -> f64 {
    let delta = (u1 - u0) / h;
    u0 + h * s * (w0 + s * ((3.0 * delta - 2.0 * w0 - w1) + s * (w0 + w1 - 2.0 * delta)))
}

#[inline]
fn hermite_deriv(u0: f64, u1: f64, w0: f64, w1: f64, h: f64, s: f64) -> f64 {
    let delta = (u1 - u0) / h;
    h * (w0 + s * (2.0 * (3.0 * delta - 2.0 * w0 - w1) + s * 3.0 * (w0 + w1 - 2.0 * delta)))
}
