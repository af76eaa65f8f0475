//! Invariant-measure estimation and the recurrence Monte-Carlo experiments:
//! transfer-operator discretization on a rectangle grid, attractor covers by
//! exact vertical-interval evolution, slow recurrence tails, critical-return
//! statistics, and the inverse-norm averages of the Jacobian.

use rayon::prelude::*;
use serde::Serialize;

use crate::curves::{AdmissibleCurve, BranchChain};
use crate::error::{Error, Result};
use crate::expanding::ExpandingModel;
use crate::mt::MTCertificate;
use crate::rng::CounterRng;
use crate::skew::{least_squares, r_squared, BEConstants, LyapunovSummary, SkewSystem};

/// Power iteration stops when the L1 step change drops below this.
pub const POWER_TOL: f64 = 1e-10;
/// Iteration cap for the power method.
pub const POWER_CAP: u32 = 10_000;

/// Rectangle grid over `I_a x [-sqrt(2b), sqrt(2b)]`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct UlamGrid {
    pub n_theta: usize,
    pub n_y: usize,
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub y_bound: f64,
}

impl UlamGrid {
    pub fn cells(&self) -> usize {
        self.n_theta * self.n_y
    }

    #[inline]
    pub fn locate(&self, theta: f64, y: f64) -> usize {
        let ft = (theta - self.theta_lo) / (self.theta_hi - self.theta_lo);
        let fy = (y + self.y_bound) / (2.0 * self.y_bound);
        let it = ((ft * self.n_theta as f64) as usize).min(self.n_theta - 1);
        let iy = ((fy * self.n_y as f64) as usize).min(self.n_y - 1);
        it * self.n_y + iy
    }

    pub fn theta_cell(&self, i: usize) -> usize {
        i / self.n_y
    }

    pub fn y_cell(&self, i: usize) -> usize {
        i % self.n_y
    }
}

/// Column-stochastic transition structure in compressed form: entries of
/// column `j` are `rows[col_ptr[j]..col_ptr[j+1]]` with integer sample counts.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    col_ptr: Vec<u64>,
    rows: Vec<u32>,
    counts: Vec<u16>,
    samples_per_cell: u32,
}

impl SparseOperator {
    /// `out = P d` where `P[i,j]` is the fraction of cell `j` mapping into
    /// cell `i`.
    pub fn apply(&self, d: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let inv = 1.0 / f64::from(self.samples_per_cell);
        for j in 0..self.col_ptr.len() - 1 {
            let dj = d[j];
            if dj == 0.0 {
                continue;
            }
            let scaled = dj * inv;
            for k in self.col_ptr[j] as usize..self.col_ptr[j + 1] as usize {
                out[self.rows[k] as usize] += f64::from(self.counts[k]) * scaled;
            }
        }
    }

    /// Column sums in units of the sampling fraction (must all be 1).
    pub fn column_sum_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for j in 0..self.col_ptr.len() - 1 {
            let total: u64 = (self.col_ptr[j]..self.col_ptr[j + 1])
                .map(|k| u64::from(self.counts[k as usize]))
                .sum();
            worst = worst.max((total as f64 / f64::from(self.samples_per_cell) - 1.0).abs());
        }
        worst
    }
}

/// Discretized transfer operator with its stationary density.
#[derive(Clone, Debug)]
pub struct UlamEstimate {
    pub grid: UlamGrid,
    pub operator: SparseOperator,
    pub density: Vec<f64>,
    /// `||P d - d||_1` at the accepted density.
    pub residual: f64,
    pub iterations: u32,
    pub converged: bool,
    /// L1 step changes, one entry every 32 iterations.
    pub convergence_log: Vec<f64>,
}

impl UlamEstimate {
    pub fn require_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NotConverged { step_change: self.residual, iterations: self.iterations })
        }
    }

    /// Mass per theta-column.
    pub fn theta_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.n_theta];
        for (i, &m) in self.density.iter().enumerate() {
            out[self.grid.theta_cell(i)] += m;
        }
        out
    }

    /// Mass per y-row.
    pub fn y_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.n_y];
        for (i, &m) in self.density.iter().enumerate() {
            out[self.grid.y_cell(i)] += m;
        }
        out
    }
}

/// Assemble the Ulam operator by stratified sampling (a `s x s` sub-grid with
/// per-cell seeded jitter) and run the power iteration from the uniform
/// density.
pub fn build_ulam(
    system: &SkewSystem,
    n_theta: usize,
    n_y: usize,
    samples_per_cell: u32,
    seed: u64,
) -> Result<UlamEstimate> {
    assert!(n_theta >= 16 && n_y >= 16, "grid at least 16 x 16");
    assert!(samples_per_cell >= 32, "at least 32 samples per cell");
    let iv = system.base().interval();
    let grid = UlamGrid {
        n_theta,
        n_y,
        theta_lo: iv.lo,
        theta_hi: iv.hi,
        y_bound: system.y_bound(),
    };
    let s = (f64::from(samples_per_cell).sqrt().floor()) as u32;
    let samples = s * s;
    let d_theta = (grid.theta_hi - grid.theta_lo) / n_theta as f64;
    let d_y = 2.0 * grid.y_bound / n_y as f64;

    let cells: Vec<Vec<(u32, u16)>> = (0..grid.cells())
        .into_par_iter()
        .map(|cell| {
            let it = cell / n_y;
            let iy = cell % n_y;
            let mut rng = CounterRng::new(seed, cell as u64);
            let t0 = grid.theta_lo + it as f64 * d_theta;
            let y0 = -grid.y_bound + iy as f64 * d_y;
            let mut hits: Vec<u32> = Vec::with_capacity(samples as usize);
            for a in 0..s {
                for b in 0..s {
                    let theta =
                        t0 + d_theta * (a as f64 + rng.next_f64()) / s as f64;
                    let y = y0 + d_y * (b as f64 + rng.next_f64()) / s as f64;
                    let (tn, yn) = system.f_theta(theta, y.clamp(-grid.y_bound, grid.y_bound));
                    let yn = yn.clamp(-grid.y_bound, grid.y_bound);
                    hits.push(grid.locate(tn, yn) as u32);
                }
            }
            hits.sort_unstable();
            let mut packed: Vec<(u32, u16)> = Vec::new();
            for h in hits {
                match packed.last_mut() {
                    Some((row, c)) if *row == h => *c += 1,
                    _ => packed.push((h, 1)),
                }
            }
            packed
        })
        .collect();

    let nnz: usize = cells.iter().map(|c| c.len()).sum();
    let mut col_ptr = Vec::with_capacity(grid.cells() + 1);
    let mut rows = Vec::with_capacity(nnz);
    let mut counts = Vec::with_capacity(nnz);
    col_ptr.push(0u64);
    for cell in &cells {
        for &(r, c) in cell {
            rows.push(r);
            counts.push(c);
        }
        col_ptr.push(rows.len() as u64);
    }
    let operator = SparseOperator { col_ptr, rows, counts, samples_per_cell: samples };

    let uniform = vec![1.0 / grid.cells() as f64; grid.cells()];
    let (density, residual, iterations, converged, convergence_log) =
        power_iteration(&operator, uniform);
    Ok(UlamEstimate { grid, operator, density, residual, iterations, converged, convergence_log })
}

fn power_iteration(
    op: &SparseOperator,
    start: Vec<f64>,
) -> (Vec<f64>, f64, u32, bool, Vec<f64>) {
    let mut d = start;
    let mut next = vec![0.0; d.len()];
    let mut log = Vec::new();
    let mut change = f64::INFINITY;
    let mut iters = 0;
    while iters < POWER_CAP {
        op.apply(&d, &mut next);
        // Defensive renormalization against rounding drift.
        let total: f64 = next.iter().sum();
        if total > 0.0 {
            let inv = 1.0 / total;
            next.iter_mut().for_each(|v| *v *= inv);
        }
        change = d.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut d, &mut next);
        iters += 1;
        if iters % 32 == 0 {
            log.push(change);
        }
        if change < POWER_TOL {
            break;
        }
    }
    op.apply(&d, &mut next);
    let residual: f64 = d.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
    (d, residual, iters, change < POWER_TOL, log)
}

/// One-dimensional Ulam discretization of an interval map; the oracle used to
/// cross-check marginals of the two-dimensional estimate.
pub fn ulam_1d<F: Fn(f64) -> f64 + Sync>(
    map: F,
    lo: f64,
    hi: f64,
    n: usize,
    samples_per_cell: u32,
    seed: u64,
) -> (Vec<f64>, f64, bool) {
    let width = (hi - lo) / n as f64;
    let cells: Vec<Vec<(u32, u16)>> = (0..n)
        .into_par_iter()
        .map(|cell| {
            let mut rng = CounterRng::new(seed, cell as u64);
            let c0 = lo + cell as f64 * width;
            let mut hits: Vec<u32> = (0..samples_per_cell)
                .map(|k| {
                    let x = c0 + width * (k as f64 + rng.next_f64()) / f64::from(samples_per_cell);
                    let y = map(x).clamp(lo, hi);
                    (((y - lo) / width) as usize).min(n - 1) as u32
                })
                .collect();
            hits.sort_unstable();
            let mut packed: Vec<(u32, u16)> = Vec::new();
            for h in hits {
                match packed.last_mut() {
                    Some((row, c)) if *row == h => *c += 1,
                    _ => packed.push((h, 1)),
                }
            }
            packed
        })
        .collect();
    let mut col_ptr = vec![0u64];
    let mut rows = Vec::new();
    let mut counts = Vec::new();
    for cell in &cells {
        for &(r, c) in cell {
            rows.push(r);
            counts.push(c);
        }
        col_ptr.push(rows.len() as u64);
    }
    let op = SparseOperator { col_ptr, rows, counts, samples_per_cell };
    let (density, residual, _, converged, _) = power_iteration(&op, vec![1.0 / n as f64; n]);
    (density, residual, converged)
}

/// Stationary density of the base map alone on its interval.
pub fn base_ulam(
    model: &ExpandingModel,
    n: usize,
    samples_per_cell: u32,
    seed: u64,
) -> (Vec<f64>, f64, bool) {
    let iv = model.interval();
    ulam_1d(|t| model.h_theta_fast(t), iv.lo, iv.hi, n, samples_per_cell, seed)
}

/// Stationary density of the fiber map alone on its invariant interval.
pub fn fiber_ulam(
    fiber: &MTCertificate,
    n: usize,
    samples_per_cell: u32,
    seed: u64,
) -> (Vec<f64>, f64, bool) {
    let b = fiber.param.c();
    let bound = (2.0 * b).sqrt();
    let p = fiber.param;
    ulam_1d(move |y| p.map(y), -bound, bound, n, samples_per_cell, seed)
}

#[derive(Clone, Debug, Serialize)]
pub struct UniquenessReport {
    pub n_starts: u32,
    pub max_pairwise_l1: f64,
    pub all_converged: bool,
}

/// Power-iterate from random normalized starting densities and report the
/// worst pairwise L1 distance of the limits.
pub fn uniqueness_diagnostic(
    estimate: &UlamEstimate,
    n_starts: u32,
    seed: u64,
) -> Result<UniquenessReport> {
    assert!(n_starts >= 2);
    let cells = estimate.grid.cells();
    let limits: Vec<(Vec<f64>, bool)> = (0..n_starts)
        .into_par_iter()
        .map(|k| {
            let mut rng = CounterRng::new(seed, 0xD1A6 + k as u64);
            let mut start: Vec<f64> = (0..cells).map(|_| rng.next_f64() + 1e-3).collect();
            let total: f64 = start.iter().sum();
            start.iter_mut().for_each(|v| *v /= total);
            let (d, _, _, converged, _) = power_iteration(&estimate.operator, start);
            (d, converged)
        })
        .collect();
    let all_converged = limits.iter().all(|(_, c)| *c);
    let mut max_pairwise = 0.0_f64;
    for i in 0..limits.len() {
        for j in (i + 1)..limits.len() {
            let dist: f64 = limits[i]
                .0
                .iter()
                .zip(&limits[j].0)
                .map(|(a, b)| (a - b).abs())
                .sum();
            max_pairwise = max_pairwise.max(dist);
        }
    }
    if !all_converged {
        return Err(Error::NotConverged { step_change: f64::NAN, iterations: POWER_CAP });
    }
    Ok(UniquenessReport { n_starts, max_pairwise_l1: max_pairwise, all_converged })
}

/// Grid cover of the `n`-th forward image of the invariant rectangle.
#[derive(Clone, Debug, Serialize)]
pub struct AttractorEstimate {
    pub n: u32,
    pub n_theta: usize,
    pub n_y: usize,
    pub cells: Vec<bool>,
    pub count: usize,
}

impl AttractorEstimate {
    /// Fraction of cells in `self` missing from `other` after dilating
    /// `other` by one cell in the y-direction (boundary tolerance).
    pub fn excess_fraction(&self, other: &AttractorEstimate) -> f64 {
        assert_eq!((self.n_theta, self.n_y), (other.n_theta, other.n_y));
        let mut missing = 0usize;
        for it in 0..self.n_theta {
            for iy in 0..self.n_y {
                if !self.cells[it * self.n_y + iy] {
                    continue;
                }
                let mut covered = false;
                for dy in [-1i64, 0, 1] {
                    let jy = iy as i64 + dy;
                    if jy >= 0 && (jy as usize) < self.n_y && other.cells[it * self.n_y + jy as usize]
                    {
                        covered = true;
                        break;
                    }
                }
                if !covered {
                    missing += 1;
                }
            }
        }
        missing as f64 / self.count.max(1) as f64
    }
}

/// Cover `F^n(I_a x I_b)` by cells: for every branch chain of depth `n` and
/// every theta-sample of its image element, the fiber of the image is the
/// interval obtained by iterating the full fiber interval exactly (the
/// quadratic fold makes each step an interval with a computable extremum).
pub fn attractor(system: &SkewSystem, n: u32, n_theta: usize, n_y: usize) -> Result<AttractorEstimate> {
    let model = system.base();
    let iv = model.interval();
    let bound = system.y_bound();
    let chains = BranchChain::enumerate(model, n)?;
    let d_theta = iv.len() / n_theta as f64;
    let d_y = 2.0 * bound / n_y as f64;
    let m1 = model.m1();

    let marks: Vec<Vec<(usize, usize, usize)>> = chains
        .par_iter()
        .map(|chain| {
            let dom = chain.domain();
            // theta-samples: centers of every grid column touching the domain,
            // plus the endpoints.
            let i_lo = ((dom.lo - iv.lo) / d_theta).floor().max(0.0) as usize;
            let i_hi = (((dom.hi - iv.lo) / d_theta).ceil() as usize).min(n_theta);
            let mut local = Vec::new();
            let mut thetas: Vec<f64> = (i_lo..i_hi)
                .map(|i| iv.lo + (i as f64 + 0.5) * d_theta)
                .filter(|t| dom.contains(*t))
                .collect();
            thetas.push(dom.lo + 1e-12 * dom.len());
            thetas.push(dom.hi - 1e-12 * dom.len());
            for theta in thetas {
                // Evolve the full fiber interval along this branch.
                let mut x = chain.tau_x(model, n, theta);
                let (mut y_lo, mut y_hi) = (-bound, bound);
                for _ in 0..n {
                    let phi = system.alpha() * system.phi_x(x);
                    let (q_lo, q_hi) = quad_interval(system, y_lo, y_hi);
                    y_lo = q_lo + phi;
                    y_hi = q_hi + phi;
                    for _ in 0..m1 {
                        x = model.param().map(x);
                    }
                }
                let it = (((theta - iv.lo) / d_theta) as usize).min(n_theta - 1);
                let j_lo = (((y_lo + bound) / d_y).floor().max(0.0) as usize).min(n_y - 1);
                let j_hi = (((y_hi + bound) / d_y).floor().max(0.0) as usize).min(n_y - 1);
                local.push((it, j_lo, j_hi));
            }
            local
        })
        .collect();

    let mut cells = vec![false; n_theta * n_y];
    for chunk in marks {
        for (it, j_lo, j_hi) in chunk {
            for j in j_lo..=j_hi {
                cells[it * n_y + j] = true;
            }
        }
    }
    let count = cells.iter().filter(|&&c| c).count();
    Ok(AttractorEstimate { n, n_theta, n_y, cells, count })
}

/// Exact image of `[lo, hi]` under the quadratic fiber map: the fold at 0
/// contributes the critical value when the interval straddles it.
fn quad_interval(system: &SkewSystem, lo: f64, hi: f64) -> (f64, f64) {
    let a = system.qb(lo);
    let b = system.qb(hi);
    let mut q_lo = a.min(b);
    let mut q_hi = a.max(b);
    if lo <= 0.0 && hi >= 0.0 {
        q_hi = q_hi.max(system.qb(0.0));
    }
    // Q_b is even around 0; the minimum is always at an endpoint.
    (q_lo.min(q_hi), q_hi)
}

/// Slow-recurrence tail experiment.
#[derive(Clone, Debug, Serialize)]
pub struct RecurrenceReport {
    pub delta: f64,
    /// `floor(log(1/delta)/log lambda_g)`: the depth scale of the recurrence.
    pub delta_cap: u32,
    pub epsilon: f64,
    pub n_orbits: u32,
    /// `(n, exceedance fraction, mean S_n/n, std S_n/n)` per requested n.
    pub rows: Vec<RecurrenceRow>,
    /// Least-squares slope of `log(fraction)` against `sqrt(n)` (positive
    /// fractions only).
    pub slope: f64,
    pub intercept: f64,
    pub fit_points: usize,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RecurrenceRow {
    pub n: u64,
    pub fraction: f64,
    pub mean_ratio: f64,
    pub std_ratio: f64,
}

/// Per-orbit sums `S_n = sum_{i<n, |y_i|<delta} log(1/|y_i|)` over an
/// ensemble, with the exceedance fractions `|{S_n > eps n}|/N`.
pub fn slow_recurrence(
    system: &SkewSystem,
    n_orbits: u32,
    n_list: &[u64],
    epsilon: f64,
    delta_tilde: f64,
    eta: f64,
    seed: u64,
) -> Result<RecurrenceReport> {
    assert!(delta_tilde > 0.0 && delta_tilde < 0.5, "delta_tilde in (0, 1/2)");
    let alpha = system.alpha();
    let delta = delta_tilde * alpha.powf(1.0 - 2.0 * eta);
    assert!(delta < 1.0);
    let n_max = *n_list.iter().max().expect("nonempty n list");
    let iv = system.base().interval();
    let bound = system.y_bound();

    let sums: Result<Vec<Vec<f64>>> = (0..n_orbits)
        .into_par_iter()
        .map(|orbit| {
            let mut rng = CounterRng::new(seed, 0x5_10_0 + orbit as u64);
            let theta0 = rng.uniform(iv.lo, iv.hi);
            let y0 = rng.uniform(-bound, bound);
            let acc = crate::skew::iterate(system, theta0, y0, n_max, 0, delta)?;
            Ok(n_list.iter().map(|&n| acc.recurrence_sum(n)).collect())
        })
        .collect();
    let sums = sums?;

    let mut rows = Vec::with_capacity(n_list.len());
    for (k, &n) in n_list.iter().enumerate() {
        let mut exceed = 0u32;
        let mut mean = 0.0;
        for orbit in &sums {
            if orbit[k] > epsilon * n as f64 {
                exceed += 1;
            }
            mean += orbit[k] / n as f64;
        }
        mean /= n_orbits as f64;
        let mut var = 0.0;
        for orbit in &sums {
            var += (orbit[k] / n as f64 - mean).powi(2);
        }
        rows.push(RecurrenceRow {
            n,
            fraction: f64::from(exceed) / f64::from(n_orbits),
            mean_ratio: mean,
            std_ratio: (var / n_orbits as f64).sqrt(),
        });
    }

    let xs: Vec<f64> = rows
        .iter()
        .filter(|r| r.fraction > 0.0)
        .map(|r| (r.n as f64).sqrt())
        .collect();
    let ys: Vec<f64> = rows
        .iter()
        .filter(|r| r.fraction > 0.0)
        .map(|r| r.fraction.ln())
        .collect();
    let (slope, intercept) = if xs.len() >= 2 {
        let (s, i, _) = least_squares(&xs, &ys);
        (s, i)
    } else {
        (f64::NAN, f64::NAN)
    };
    let lambda_g = system.base().lambda_g();
    Ok(RecurrenceReport {
        delta,
        delta_cap: ((1.0 / delta).ln() / lambda_g.ln()).floor() as u32,
        epsilon,
        n_orbits,
        rows,
        slope,
        intercept,
        fit_points: xs.len(),
    })
}

/// Critical-return experiment along an admissible curve.
#[derive(Clone, Debug, Serialize)]
pub struct CriticalReturnReport {
    pub m_alpha: u32,
    pub samples: u32,
    /// `(r, fraction of theta with |f_{M_alpha}(theta, Y(theta))| <= sqrt(alpha) e^{-r})`.
    pub rows: Vec<(f64, f64)>,
    /// Exponential decay rate fitted on the positive fractions.
    pub beta0_hat: f64,
    pub r_squared: f64,
}

pub fn critical_return_test(
    system: &SkewSystem,
    curve: &AdmissibleCurve,
    r_values: &[f64],
    samples: u32,
    m_alpha: u32,
    seed: u64,
) -> CriticalReturnReport {
    let dom = curve.domain();
    let sqrt_alpha = system.alpha().sqrt();
    let values: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = CounterRng::new(seed, 0xC417 + k as u64);
            let theta = rng.uniform(dom.lo, dom.hi);
            let y = curve.eval(theta);
            let (_, f) = system.f_n(theta, y, m_alpha);
            f.abs()
        })
        .collect();
    let mut rows = Vec::with_capacity(r_values.len());
    for &r in r_values {
        let threshold = sqrt_alpha * (-r).exp();
        let count = values.iter().filter(|&&v| v <= threshold).count();
        rows.push((r, count as f64 / f64::from(samples)));
    }
    let xs: Vec<f64> = rows.iter().filter(|(_, f)| *f > 0.0).map(|(r, _)| *r).collect();
    let ys: Vec<f64> = rows.iter().filter(|(_, f)| *f > 0.0).map(|(_, f)| f.ln()).collect();
    let (beta0_hat, r2) = if xs.len() >= 3 {
        let (slope, intercept, _) = least_squares(&xs, &ys);
        (-slope, r_squared(&xs, &ys, slope, intercept))
    } else {
        (f64::NAN, f64::NAN)
    };
    CriticalReturnReport { m_alpha, samples, rows, beta0_hat, r_squared: r2 }
}

/// Comparison of the measured vertical exponent against the derived bound,
/// plus the inverse-norm average of the Jacobian.
#[derive(Clone, Debug, Serialize)]
pub struct VerticalBoundReport {
    /// `(eta/2) log sigma`: the lower bound for the vertical exponent.
    pub exponent_bound: f64,
    pub min_lambda_y: f64,
    pub exponent_consistent: bool,
    /// Ensemble average of `(1/n) sum log ||DF^{-1}||`.
    pub inverse_norm_avg: f64,
    /// `-(eta/3) log sigma`: the required negativity level.
    pub inverse_norm_bound: f64,
    pub inverse_norm_consistent: bool,
    /// Worst per-orbit value of `(avg + Lambda_y) / alpha`, the constant `C`
    /// in the `C alpha - Lambda_y` comparison (reported, not asserted).
    pub c_required: f64,
}

/// Smallest singular value of the Jacobian `[[h', 0], [alpha phi', Q_b']]`.
#[inline]
fn log_inverse_norm(dh: f64, dphi: f64, dqb: f64) -> f64 {
    let f2 = dh * dh + dphi * dphi + dqb * dqb;
    let det = (dh * dqb).abs();
    let sigma_max_sq = 0.5 * (f2 + (f2 * f2 - 4.0 * det * det).max(0.0).sqrt());
    let sigma_min = det / sigma_max_sq.sqrt();
    -(sigma_min.max(1e-300)).ln()
}

pub fn vertical_exponent_vs_bound(
    system: &SkewSystem,
    lyapunov: &LyapunovSummary,
    constants: &BEConstants,
    n_orbits: u32,
    n: u64,
    seed: u64,
) -> Result<VerticalBoundReport> {
    let exponent_bound = 0.5 * constants.eta * constants.sigma.ln();
    let inverse_norm_bound = -(constants.eta / 3.0) * constants.sigma.ln();
    let iv = system.base().interval();
    let bound = system.y_bound();
    let model = system.base();

    let per_orbit: Result<Vec<(f64, f64)>> = (0..n_orbits)
        .into_par_iter()
        .map(|orbit| {
            let mut rng = CounterRng::new(seed, 0x1_44_4 + orbit as u64);
            let mut x = model.x_of_theta_fast(rng.uniform(iv.lo, iv.hi));
            let mut y = rng.uniform(-bound, bound);
            let mut sum_inv = 0.0;
            let mut sum_dqb = 0.0;
            for _ in 0..n {
                // |h'| over the step and phi' at the current position.
                let mut log_dh = 0.0;
                let mut p = x;
                for _ in 0..model.m1() {
                    log_dh += model.log_abs_dh0_x(p);
                    p = model.param().map(p);
                }
                let dphi_theta = {
                    let rho = model.metric().log_rho(x).map(|l| l.exp()).unwrap_or(f64::INFINITY);
                    let coeffs = system.phi_coeffs();
                    let dpoly = coeffs
                        .iter()
                        .enumerate()
                        .skip(1)
                        .rev()
                        .fold(0.0, |acc, (k, &c)| acc * x + k as f64 * c);
                    dpoly / (system.phi_scale() * rho)
                };
                let dqb = system.dqb(y);
                sum_inv += log_inverse_norm(log_dh.exp(), system.alpha() * dphi_theta, dqb);
                sum_dqb += (2.0 * y.abs()).max(1e-300).ln();
                let y_next = system.qb(y) + system.alpha() * system.phi_x(x);
                x = p.clamp(model.domain_x().0, model.domain_x().1);
                y = y_next.clamp(-bound, bound);
            }
            Ok((sum_inv / n as f64, sum_dqb / n as f64))
        })
        .collect();
    let per_orbit = per_orbit?;

    let inverse_norm_avg =
        per_orbit.iter().map(|(inv, _)| *inv).sum::<f64>() / per_orbit.len() as f64;
    let c_required = per_orbit
        .iter()
        .map(|(inv, lam)| (inv + lam) / system.alpha().max(1e-300))
        .fold(f64::NEG_INFINITY, f64::max);
    let min_lambda_y = lyapunov.y_stats.min;
    Ok(VerticalBoundReport {
        exponent_bound,
        min_lambda_y,
        exponent_consistent: min_lambda_y >= exponent_bound,
        inverse_norm_avg,
        inverse_norm_bound,
        inverse_norm_consistent: inverse_norm_avg <= inverse_norm_bound,
        c_required,
    })
}
