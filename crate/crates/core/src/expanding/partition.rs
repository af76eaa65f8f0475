//! Nested Markov partitions of the conjugated base map.
//!
//! Level-`n` breakpoints are the pullbacks `h0^{-n}(u(PC))` inside `I_a`,
//! together with the interval endpoints. Pulling a point back through the two
//! monotone branches of `h0` happens in `x`-coordinates, where the branches
//! are the explicit square roots of `Q_a`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expanding::{ExpandingModel, Interval};

/// Hard cap on the pullback depth, in base-map steps.
pub const DEPTH_CAP: u32 = 40;
/// Breakpoints closer than this are merged.
pub const MERGE_TOL: f64 = 1e-12;
/// Endpoint tolerance for the Markov onto-property checks.
pub const MARKOV_TOL: f64 = 1e-9;

/// Partition into the open intervals between consecutive breakpoints.
#[derive(Clone, Debug, Serialize)]
pub struct MarkovPartition {
    pub level: u32,
    breakpoints: Vec<f64>,
}

impl MarkovPartition {
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn elements(&self) -> Vec<Interval> {
        self.breakpoints
            .windows(2)
            .map(|w| Interval { lo: w[0], hi: w[1] })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.breakpoints.len() < 2
    }

    pub fn element(&self, i: usize) -> Interval {
        Interval { lo: self.breakpoints[i], hi: self.breakpoints[i + 1] }
    }

    /// Index of the element containing `theta` (breakpoints resolve upward).
    pub fn locate(&self, theta: f64) -> Option<usize> {
        if theta < self.breakpoints[0] - MARKOV_TOL
            || theta > *self.breakpoints.last().unwrap() + MARKOV_TOL
        {
            return None;
        }
        let i = match self
            .breakpoints
            .binary_search_by(|b| b.partial_cmp(&theta).unwrap())
        {
            Ok(j) => j,
            Err(j) => j.saturating_sub(1),
        };
        Some(i.min(self.len() - 1))
    }
}

/// Breakpoints of level `n`: pull the level-`(n-1)` set back one step.
pub(super) fn build_partition(model: &ExpandingModel, n: u32) -> Result<MarkovPartition> {
    if n > DEPTH_CAP {
        return Err(Error::DepthExceeded { requested: n, cap: DEPTH_CAP });
    }
    let (theta_lo, theta_hi) = model.interval_pair();
    let mut points: Vec<f64> = model.u_postcritical().to_vec();
    for _ in 0..n {
        points = pull_back(model, &points);
        if points.len() > (1 << 22) {
            return Err(Error::DepthExceeded { requested: n, cap: DEPTH_CAP });
        }
    }
    points.push(theta_lo);
    points.push(theta_hi);
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    points.dedup_by(|a, b| (*a - *b).abs() <= MERGE_TOL);
    Ok(MarkovPartition { level: n, breakpoints: points })
}

/// All preimages under `h0` of a breakpoint set, in theta-coordinates.
/// Preimages landing on the post-critical orbit are snapped to the exact
/// stored values; otherwise a square root of rounding noise leaks into theta.
fn pull_back(model: &ExpandingModel, points: &[f64]) -> Vec<f64> {
    let a = model.param().c();
    let (x_lo, x_hi) = model.domain_x();
    let mut out = Vec::with_capacity(2 * points.len());
    for &theta in points {
        let target = model.x_of_theta_fast(theta);
        let r2 = a - target;
        if r2 < 0.0 {
            continue;
        }
        let r = r2.sqrt();
        for x in [r, -r] {
            if x >= x_lo - 1e-12 && x <= x_hi + 1e-12 {
                out.push(model.u_snapped(model.snap_to_pc(x.clamp(x_lo, x_hi))));
            }
        }
    }
    out
}

/// Worst endpoint defect of the Markov property between consecutive levels:
/// each fine element must map onto a coarse element under `h0`.
pub fn markov_defect(model: &ExpandingModel, fine: &MarkovPartition, coarse: &MarkovPartition) -> f64 {
    assert_eq!(fine.level, coarse.level + 1);
    let mut worst = 0.0_f64;
    for elem in fine.elements() {
        let a = model.h0_theta_snapped(elem.lo);
        let b = model.h0_theta_snapped(elem.hi);
        let (im_lo, im_hi) = if a <= b { (a, b) } else { (b, a) };
        let idx = coarse.locate(0.5 * (im_lo + im_hi)).expect("image inside interval");
        let target = coarse.element(idx);
        worst = worst.max((im_lo - target.lo).abs().max((im_hi - target.hi).abs()));
    }
    worst
}

/// Worst defect of nesting: every coarse breakpoint must reappear at the
/// finer level.
pub fn nesting_defect(fine: &MarkovPartition, coarse: &MarkovPartition) -> f64 {
    let mut worst = 0.0_f64;
    for &b in coarse.breakpoints() {
        let nearest = fine
            .breakpoints()
            .iter()
            .fold(f64::INFINITY, |acc, &f| acc.min((f - b).abs()));
        worst = worst.max(nearest);
    }
    worst
}
