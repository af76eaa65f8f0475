//! Horizontal-curve evolution under the graph transform, the truncated series
//! family approximating curve derivatives, and the non-flatness, linear
//! approximation, recurrence and separation tests built on them.
//!
//! A depth-`n` admissible curve is the image of a horizontal segment over a
//! level-`n` partition element under `n` iterates of the skew product. Its
//! provenance is the backward chain of elements `omega_0 <- omega_1 <- ...`
//! with `h(omega_{k+1}) = omega_k`; the curve itself is stored as a Chebyshev
//! interpolant over `omega_0 = h^n(omega_n)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::cheb::{self, Cheb};
use crate::error::{Error, Result};
use crate::expanding::{ExpandingModel, Interval};
use crate::rng::CounterRng;
use crate::skew::SkewSystem;

/// Default interpolation degree; doubled adaptively up to [`MAX_DEGREE`].
pub const BASE_DEGREE: usize = 64;
pub const MAX_DEGREE: usize = 512;
/// Relative interpolation residual target at off-node points.
pub const INTERP_TOL: f64 = 1e-9;
/// Branch enumeration stops here.
pub const ENUM_CAP: usize = 1 << 16;

/// Backward chain of partition elements recording a curve's provenance.
///
/// `elements[k]` is the level-`k` element (theta-interval); the sign block
/// `signs[k*m1 .. (k+1)*m1]` pulls it back into `elements[k+1]` one base-map
/// substep at a time.
#[derive(Clone, Debug, Serialize)]
pub struct BranchChain {
    signs: Vec<i8>,
    elements: Vec<Interval>,
    /// The same elements in x-coordinates, endpoints snapped onto the orbit.
    x_elements: Vec<(f64, f64)>,
    m1: u32,
}

impl BranchChain {
    pub fn depth(&self) -> u32 {
        (self.elements.len() - 1) as u32
    }

    /// Domain of the fully evolved curve: `omega_0`.
    pub fn domain(&self) -> Interval {
        self.elements[0]
    }

    pub fn element(&self, k: usize) -> Interval {
        self.elements[k]
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    /// Compact text form of the branch word (one `+`/`-` per substep).
    pub fn word(&self) -> String {
        self.signs.iter().map(|&s| if s > 0 { '+' } else { '-' }).collect()
    }

    /// Trivial chain at a level-0 element.
    pub fn root(model: &ExpandingModel, domain: Interval) -> BranchChain {
        let x_lo = model.snap_to_pc(model.x_of_theta_fast(domain.lo));
        let x_hi = model.snap_to_pc(model.x_of_theta_fast(domain.hi));
        BranchChain {
            signs: Vec::new(),
            elements: vec![domain],
            x_elements: vec![(x_lo, x_hi)],
            m1: model.m1(),
        }
    }

    /// All one-level extensions of this chain (every valid sign block).
    fn extend_all(&self, model: &ExpandingModel) -> Vec<BranchChain> {
        let a = model.param().c();
        let (dom_lo, dom_hi) = model.domain_x();
        let (lo0, hi0) = *self.x_elements.last().unwrap();
        let mut stack: Vec<(Vec<i8>, f64, f64)> = vec![(Vec::new(), lo0, hi0)];
        for _ in 0..self.m1 {
            let mut next = Vec::with_capacity(stack.len() * 2);
            for (sv, lo, hi) in &stack {
                for s in [1i8, -1] {
                    let (p, q) = pulled(a, *lo, *hi, s);
                    if p >= dom_lo - 1e-9 && q <= dom_hi + 1e-9 {
                        let mut sv2 = sv.clone();
                        sv2.push(s);
                        next.push((
                            sv2,
                            model.snap_to_pc(p.clamp(dom_lo, dom_hi)),
                            model.snap_to_pc(q.clamp(dom_lo, dom_hi)),
                        ));
                    }
                }
            }
            stack = next;
        }
        stack
            .into_iter()
            .map(|(sv, lo, hi)| {
                let mut c = self.clone();
                c.signs.extend(sv);
                c.x_elements.push((lo, hi));
                c.elements.push(Interval { lo: model.u_snapped(lo), hi: model.u_snapped(hi) });
                c
            })
            .collect()
    }

    /// One random one-level extension.
    fn extend_random(&self, model: &ExpandingModel, rng: &mut CounterRng) -> Result<BranchChain> {
        let all = self.extend_all(model);
        if all.is_empty() {
            return Err(Error::NotABranch { depth: self.depth() + 1 });
        }
        Ok(all[rng.below(all.len() as u64) as usize].clone())
    }

    /// Random chain of the given depth from a random level-0 element.
    pub fn random(model: &ExpandingModel, depth: u32, rng: &mut CounterRng) -> Result<BranchChain> {
        let p0 = model.p_partition(0)?;
        let domain = p0.element(rng.below(p0.len() as u64) as usize);
        let mut chain = BranchChain::root(model, domain);
        for _ in 0..depth {
            chain = chain.extend_random(model, rng)?;
        }
        Ok(chain)
    }

    /// All chains of the given depth rooted at `domain`.
    pub fn enumerate_from(
        model: &ExpandingModel,
        domain: Interval,
        depth: u32,
    ) -> Result<Vec<BranchChain>> {
        let mut chains = vec![BranchChain::root(model, domain)];
        for _ in 0..depth {
            let mut next = Vec::with_capacity(chains.len() * 2);
            for c in &chains {
                next.extend(c.extend_all(model));
                if next.len() > ENUM_CAP {
                    return Err(Error::DepthExceeded {
                        requested: depth * model.m1(),
                        cap: ENUM_CAP as u32,
                    });
                }
            }
            chains = next;
        }
        Ok(chains)
    }

    /// All chains of the given depth (one per level-`depth` element).
    pub fn enumerate(model: &ExpandingModel, depth: u32) -> Result<Vec<BranchChain>> {
        let p0 = model.p_partition(0)?;
        let mut out = Vec::new();
        for e in p0.elements() {
            out.extend(BranchChain::enumerate_from(model, e, depth)?);
            if out.len() > ENUM_CAP {
                return Err(Error::DepthExceeded {
                    requested: depth * model.m1(),
                    cap: ENUM_CAP as u32,
                });
            }
        }
        Ok(out)
    }

    /// Restrict to `sub` (one partition level deeper, inside the domain) and
    /// prepend the corresponding branch: the provenance of the pushed curve.
    pub fn extended_by(&self, model: &ExpandingModel, sub: &Interval) -> Result<BranchChain> {
        if !self.domain().contains_interval(sub, 1e-9) {
            return Err(Error::NotSubElement { lo: sub.lo, hi: sub.hi });
        }
        // Head: the one-step chain from h(sub) into sub, signs from the
        // forward substep orbit of the midpoint.
        let m1 = model.m1() as usize;
        let a = model.param().c();
        let (dom_lo, dom_hi) = model.domain_x();
        let mut x = model.x_of_theta_fast(sub.mid());
        let mut head_signs = Vec::with_capacity(m1);
        let mut x_lo = model.snap_to_pc(model.x_of_theta_fast(sub.lo));
        let mut x_hi = model.snap_to_pc(model.x_of_theta_fast(sub.hi));
        let sub_x = (x_lo, x_hi);
        for _ in 0..m1 {
            head_signs.push(if x < 0.0 { -1i8 } else { 1 });
            x = model.param().map(x);
            let p = model.q_step_snapped(x_lo);
            let q = model.q_step_snapped(x_hi);
            x_lo = p.min(q).clamp(dom_lo, dom_hi);
            x_hi = p.max(q).clamp(dom_lo, dom_hi);
        }
        head_signs.reverse();
        let new_domain_x = (x_lo, x_hi);
        let new_domain = Interval {
            lo: model.u_snapped(new_domain_x.0),
            hi: model.u_snapped(new_domain_x.1),
        };

        let mut signs = head_signs;
        signs.extend_from_slice(&self.signs);
        let mut elements = vec![new_domain, *sub];
        let mut x_elements = vec![new_domain_x, sub_x];
        // Pull `sub` back through the old blocks.
        let (mut lo, mut hi) = sub_x;
        for block in 0..self.depth() as usize {
            for j in 0..m1 {
                let s = self.signs[block * m1 + j];
                let (p, q) = pulled(a, lo, hi, s);
                lo = model.snap_to_pc(p.clamp(dom_lo, dom_hi));
                hi = model.snap_to_pc(q.clamp(dom_lo, dom_hi));
            }
            x_elements.push((lo, hi));
            elements.push(Interval { lo: model.u_snapped(lo), hi: model.u_snapped(hi) });
        }
        Ok(BranchChain { signs, elements, x_elements, m1: self.m1 })
    }

    /// Pull a point of the domain back `k` levels, in x-coordinates.
    pub fn tau_x(&self, model: &ExpandingModel, k: u32, theta: f64) -> f64 {
        let a = model.param().c();
        let mut x = model.x_of_theta_fast(theta);
        for &s in self.signs.iter().take((k * self.m1) as usize) {
            x = model.snap_to_pc(f64::from(s) * (a - x).max(0.0).sqrt());
        }
        x
    }

    /// `tau_k(theta)` in theta-coordinates.
    pub fn tau(&self, model: &ExpandingModel, k: u32, theta: f64) -> f64 {
        model.u_snapped(self.tau_x(model, k, theta))
    }

    /// Exact `tau_k'(theta)`: the product of `1/h0'` over the pullback points.
    /// (Finite differences lose to rounding as soon as the contraction
    /// approaches machine scale.) The orientation comes from the branch signs
    /// themselves, which stays correct even when a point lands exactly on the
    /// turning point.
    pub fn tau_deriv(&self, model: &ExpandingModel, k: u32, theta: f64) -> f64 {
        let a = model.param().c();
        let mut x = model.x_of_theta_fast(theta);
        let mut log_abs = 0.0;
        let mut sign = 1.0;
        for &s in self.signs.iter().take((k * self.m1) as usize) {
            x = model.snap_to_pc(f64::from(s) * (a - x).max(0.0).sqrt());
            log_abs -= model.log_abs_dh0_x(x);
            sign *= -f64::from(s);
        }
        sign * log_abs.exp()
    }
}

#[inline]
fn pulled(a: f64, lo: f64, hi: f64, s: i8) -> (f64, f64) {
    let p = f64::from(s) * (a - lo).max(0.0).sqrt();
    let q = f64::from(s) * (a - hi).max(0.0).sqrt();
    if p <= q {
        (p, q)
    } else {
        (q, p)
    }
}

/// An evolved horizontal curve: Chebyshev interpolants of the values and of
/// the exact first derivative, plus provenance.
///
/// The derivative is carried through the push recursion
/// `X_1' = alpha (phi o tau)' + Q_b'(X o tau) X' o tau tau'` rather than
/// differentiated spectrally: the curve values sit on an O(1) offset whose
/// rounding floor would otherwise drown the O(alpha) derivatives after two
/// or three differentiations.
#[derive(Clone, Debug)]
pub struct AdmissibleCurve {
    interp: Cheb,
    deriv: Cheb,
    pub y0: f64,
    pub depth: u32,
    pub chain: BranchChain,
    /// Largest relative off-node interpolation residual seen while building.
    pub residual: f64,
}

impl AdmissibleCurve {
    pub fn domain(&self) -> Interval {
        self.chain.domain()
    }

    pub fn eval(&self, theta: f64) -> f64 {
        self.interp.eval(theta)
    }

    pub fn eval_deriv(&self, theta: f64) -> f64 {
        self.deriv.eval(theta)
    }

    pub fn interp(&self) -> &Cheb {
        &self.interp
    }

    pub fn deriv_interp(&self) -> &Cheb {
        &self.deriv
    }

    /// Constant curve `y = y0` over a level-0 element (depth 0; the input of
    /// an evolution, not itself admissible).
    pub fn horizontal(system: &SkewSystem, y0: f64, domain: Interval) -> AdmissibleCurve {
        let nodes = cheb::nodes(domain.lo, domain.hi, 2);
        let vals = vec![y0; nodes.len()];
        let zeros = vec![0.0; nodes.len()];
        AdmissibleCurve {
            interp: Cheb::fit(domain.lo, domain.hi, &vals),
            deriv: Cheb::fit(domain.lo, domain.hi, &zeros),
            y0,
            depth: 0,
            chain: BranchChain::root(system.base(), domain),
            residual: 0.0,
        }
    }

    /// Derivative interpolants `X^{(1)}, ..., X^{(l)}`: the exact first
    /// derivative followed by spectral differentiation of it.
    pub fn derivatives(&self, l: u32) -> Vec<Cheb> {
        let mut out = Vec::with_capacity(l as usize);
        let mut d = self.deriv.clone().chopped(1e-14);
        out.push(d.clone());
        for _ in 1..l {
            d = d.deriv().chopped(1e-14);
            out.push(d.clone());
        }
        out
    }
}

/// Fit the push formula on a domain, doubling the degree until the off-node
/// residuals of both the value and the derivative are below tolerance.
fn fit_adaptive2<F: Fn(f64) -> (f64, f64)>(domain: Interval, f: &F, alpha: f64) -> (Cheb, Cheb, f64) {
    let mut degree = BASE_DEGREE;
    loop {
        let nodes = cheb::nodes(domain.lo, domain.hi, degree);
        let pairs: Vec<(f64, f64)> = nodes.iter().map(|&t| f(t)).collect();
        let vals: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let ders: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let interp = Cheb::fit(domain.lo, domain.hi, &vals);
        let deriv = Cheb::fit(domain.lo, domain.hi, &ders);
        let mut worst = 0.0_f64;
        let mut v_scale = 1.0_f64;
        let mut d_scale = alpha.max(1e-300);
        for i in 0..33 {
            let t = domain.lo + domain.len() * (i as f64 + 0.5) / 33.0;
            let (ev, ed) = f(t);
            v_scale = v_scale.max(ev.abs());
            d_scale = d_scale.max(ed.abs());
            worst = worst.max((interp.eval(t) - ev).abs() / v_scale);
            worst = worst.max((deriv.eval(t) - ed).abs() / d_scale);
        }
        if worst <= INTERP_TOL || degree >= MAX_DEGREE {
            return (interp, deriv, worst);
        }
        degree *= 2;
    }
}

/// One graph-transform step: values and exact derivatives of
/// `X_1(theta) = alpha phi(tau theta) + Q_b(X(tau theta))` over
/// `elements[level]`, with
/// `X_1'(theta) = alpha (phi o tau)'(theta) + Q_b'(X(tau theta)) X'(tau theta) tau'(theta)`.
fn push_block(
    system: &SkewSystem,
    prev: &dyn Fn(f64) -> f64,
    prev_deriv: &dyn Fn(f64) -> f64,
    chain: &BranchChain,
    level: usize,
) -> (Cheb, Cheb, f64) {
    let model = system.base();
    let a = model.param().c();
    let domain = chain.elements[level];
    let inner = chain.elements[level + 1];
    let m1 = chain.m1 as usize;
    let alpha = system.alpha();
    let f = |theta: f64| {
        let mut x = model.x_of_theta_fast(theta);
        let mut log_abs = 0.0;
        let mut sign = 1.0;
        for &s in &chain.signs[level * m1..(level + 1) * m1] {
            x = model.snap_to_pc(f64::from(s) * (a - x).max(0.0).sqrt());
            log_abs -= model.log_abs_dh0_x(x);
            sign *= -f64::from(s);
        }
        let tau_prime = sign * log_abs.exp();
        let theta_in = model.u_snapped(x).clamp(inner.lo, inner.hi);
        let inner_val = prev(theta_in);
        let value = alpha * system.phi_x(x) + system.qb(inner_val);
        let deriv = alpha * system.dphi_x(x) * tau_prime
            + system.dqb(inner_val) * prev_deriv(theta_in) * tau_prime;
        (value, deriv)
    };
    fit_adaptive2(domain, &f, alpha)
}

/// Evolve the constant curve `y = y0` along a chain into the depth-`n`
/// admissible curve with that provenance.
pub fn evolve_chain(system: &SkewSystem, y0: f64, chain: &BranchChain) -> Result<AdmissibleCurve> {
    if y0.abs() > system.y_bound() {
        return Err(Error::OutOfDomain {
            what: "y0",
            value: y0,
            lo: -system.y_bound(),
            hi: system.y_bound(),
        });
    }
    let depth = chain.depth();
    assert!(depth >= 1, "admissible curves have depth >= 1");
    let (mut interp, mut deriv, mut residual) =
        push_block(system, &|_| y0, &|_| 0.0, chain, depth as usize - 1);
    for level in (0..depth as usize - 1).rev() {
        let prev = interp.clone();
        let prev_d = deriv.clone();
        let (next, next_d, r) = push_block(
            system,
            &move |t| prev.eval(t),
            &move |t| prev_d.eval(t),
            chain,
            level,
        );
        residual = residual.max(r);
        interp = next;
        deriv = next_d;
    }
    Ok(AdmissibleCurve { interp, deriv, y0, depth, chain: chain.clone(), residual })
}

/// Which branch words to evolve.
pub enum WordSpec {
    /// Every chain of the given depth (within the enumeration cap).
    All,
    /// `count` random chains drawn with the given seed.
    Random { count: u32, seed: u64 },
}

/// Evolve the horizontal curve `Y = y0` to all requested depth-`n` curves.
pub fn evolve_horizontal(
    system: &SkewSystem,
    y0: f64,
    depth: u32,
    word: WordSpec,
) -> Result<Vec<AdmissibleCurve>> {
    let model = system.base();
    let chains = match word {
        WordSpec::All => BranchChain::enumerate(model, depth)?,
        WordSpec::Random { count, seed } => {
            let mut out = Vec::with_capacity(count as usize);
            for i in 0..count {
                let mut rng = CounterRng::new(seed, 0xC0DE + i as u64);
                out.push(BranchChain::random(model, depth, &mut rng)?);
            }
            out
        }
    };
    chains
        .par_iter()
        .map(|chain| evolve_chain(system, y0, chain))
        .collect()
}

/// Push a curve one step through a sub-element of its domain (`sub` one
/// partition level deeper). The result carries the extended provenance.
pub fn push_curve(
    system: &SkewSystem,
    curve: &AdmissibleCurve,
    sub: &Interval,
) -> Result<AdmissibleCurve> {
    let chain = curve.chain.extended_by(system.base(), sub)?;
    let inner = curve.interp.clone();
    let inner_d = curve.deriv.clone();
    let (interp, deriv, residual) = push_block(
        system,
        &move |t| inner.eval(t),
        &move |t| inner_d.eval(t),
        &chain,
        0,
    );
    Ok(AdmissibleCurve {
        interp,
        deriv,
        y0: curve.y0,
        depth: curve.depth + 1,
        chain,
        residual: residual.max(curve.residual),
    })
}

/// A truncated element of the series family
/// `T = (phi o tau_1)' + sum_{k=2}^{N} c_k (phi o tau_k)'` with
/// `|c_k| <= 4^{k-1}`.
#[derive(Clone, Debug)]
pub struct TFamilyElement {
    pub chain: BranchChain,
    /// `c_k` for `k = 2..=depth`.
    pub coeffs: Vec<f64>,
    /// Geometric bound on the discarded tail of the series.
    pub truncation_bound: f64,
}

/// Sup of `|phi'|` (theta-derivative) over the interval, by grid sampling.
fn dphi_sup(system: &SkewSystem) -> f64 {
    let iv = system.base().interval();
    let mut sup = 0.0_f64;
    for i in 0..512 {
        let theta = iv.lo + iv.len() * (i as f64 + 0.5) / 512.0;
        sup = sup.max(system.dphi(theta).abs());
    }
    sup
}

impl TFamilyElement {
    /// Random element over a random level-0 element, coefficients uniform in
    /// `[-4^{k-1}, 4^{k-1}]`.
    pub fn random(system: &SkewSystem, depth: u32, rng: &mut CounterRng) -> Result<TFamilyElement> {
        let chain = BranchChain::random(system.base(), depth, rng)?;
        let coeffs = (2..=depth)
            .map(|k| {
                let bound = 4f64.powi(k as i32 - 1);
                rng.uniform(-bound, bound)
            })
            .collect();
        Ok(TFamilyElement::new(system, chain, coeffs))
    }

    pub fn new(system: &SkewSystem, chain: BranchChain, coeffs: Vec<f64>) -> TFamilyElement {
        let lambda_g = system.base().lambda_g();
        let n_t = chain.depth() as i32;
        // sum_{k>N} 4^{k-1} lambda_g^{-k} = (1/4)(4/lambda_g)^{N+1}/(1 - 4/lambda_g);
        // lambda_g > 4 makes the tail geometric.
        let r = 4.0 / lambda_g;
        let tail = 0.25 * r.powi(n_t + 1) / (1.0 - r);
        TFamilyElement { chain, coeffs, truncation_bound: tail * dphi_sup(system) }
    }

    /// Evaluate the truncated series at points of the domain.
    pub fn eval(&self, system: &SkewSystem, thetas: &[f64]) -> Vec<f64> {
        thetas
            .iter()
            .map(|&theta| {
                let mut acc = composed_coupling_deriv(system, &self.chain, 1, theta);
                for (i, &c) in self.coeffs.iter().enumerate() {
                    let k = i as u32 + 2;
                    acc += c * composed_coupling_deriv(system, &self.chain, k, theta);
                }
                acc
            })
            .collect()
    }

    /// Chebyshev interpolant of the series over the domain.
    pub fn interpolant(&self, system: &SkewSystem) -> Cheb {
        let d = self.chain.domain();
        let nodes = cheb::nodes(d.lo, d.hi, BASE_DEGREE);
        let vals = self.eval(system, &nodes);
        Cheb::fit(d.lo, d.hi, &vals).chopped(1e-14)
    }
}

/// `(phi o tau_k)'(theta) = phi'(tau_k theta) * tau_k'(theta)`.
pub fn composed_coupling_deriv(
    system: &SkewSystem,
    chain: &BranchChain,
    k: u32,
    theta: f64,
) -> f64 {
    let model = system.base();
    let tau_theta = model.u_snapped(chain.tau_x(model, k, theta));
    system.dphi(tau_theta) * chain.tau_deriv(model, k, theta)
}

/// Sampled bounds over random family elements: `a_hat[i]` estimates
/// `sup |T^{(i)}|`; `min_sums[l]` the infimum of `sum_{i<=l} |T^{(i)}|`
/// (positivity of `min_sums[l0-1]` is the no-zero-element property).
#[derive(Clone, Debug, Serialize)]
pub struct TBoundsReport {
    pub samples: u32,
    pub a_hat: Vec<f64>,
    pub min_sums: Vec<f64>,
}

pub fn sample_t_family_bounds(
    system: &SkewSystem,
    samples: u32,
    i_max: u32,
    depth: u32,
    seed: u64,
) -> Result<TBoundsReport> {
    let per: Result<Vec<(Vec<f64>, Vec<f64>)>> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = CounterRng::new(seed, 0x7F + s as u64);
            let elem = TFamilyElement::random(system, depth, &mut rng)?;
            let interp = elem.interpolant(system);
            let domain = elem.chain.domain();
            let mut ladder = vec![interp.clone()];
            let mut d = interp;
            for _ in 0..i_max {
                d = d.deriv().chopped(1e-13);
                ladder.push(d.clone());
            }
            let mut sup = vec![0.0_f64; ladder.len()];
            let mut min_sums = vec![f64::INFINITY; ladder.len()];
            for g in 0..256 {
                let theta = domain.lo + domain.len() * (g as f64 + 0.5) / 256.0;
                let mut running = 0.0;
                for (i, l) in ladder.iter().enumerate() {
                    let v = l.eval(theta).abs();
                    sup[i] = sup[i].max(v);
                    running += v;
                    min_sums[i] = min_sums[i].min(running);
                }
            }
            Ok((sup, min_sums))
        })
        .collect();
    let per = per?;
    let levels = i_max as usize + 1;
    let mut a_hat = vec![0.0_f64; levels];
    let mut min_sums = vec![f64::INFINITY; levels];
    for (sup, mins) in per {
        for i in 0..levels {
            a_hat[i] = a_hat[i].max(sup[i]);
            min_sums[i] = min_sums[i].min(mins[i]);
        }
    }
    Ok(TBoundsReport { samples, a_hat, min_sums })
}

/// Sup-norms of `(X' - alpha T)^{(i)}` per depth along a replayed evolution.
#[derive(Clone, Debug, Serialize)]
pub struct LinearApproxRecord {
    pub depth: u32,
    /// `sup |(X' - alpha T)^{(i)}|` for `i = 0..=l`.
    pub sup_norms: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LinearApproxReport {
    pub records: Vec<LinearApproxRecord>,
}

/// Replay the evolution of `curve` while carrying the matched series element
/// through the recursion
/// `T_1 = (phi o tau)' + Q_b'(X(tau theta_0)) * T o tau * tau'`,
/// with `theta_0` the midpoint of each new domain. Reports the sup-norms of
/// `(X' - alpha T)^{(i)}` for `i <= l` at every depth.
pub fn check_linear_approx(
    system: &SkewSystem,
    curve: &AdmissibleCurve,
    l: u32,
) -> Result<LinearApproxReport> {
    let model = system.base();
    let chain = &curve.chain;
    let depth = chain.depth();
    if depth < 1 {
        return Err(Error::MissingProvenance);
    }
    let alpha = system.alpha();
    let mut records = Vec::with_capacity(depth as usize);

    // Depth 1: X' = alpha T exactly (up to interpolation error).
    let mut level = depth as usize - 1;
    let (mut x_interp, mut d_interp, _) =
        push_block(system, &|_| curve.y0, &|_| 0.0, chain, level);
    let one = subchain(chain, level);
    let domain = chain.elements[level];
    let mut t_interp = {
        let nodes = cheb::nodes(domain.lo, domain.hi, BASE_DEGREE);
        let vals: Vec<f64> = nodes
            .iter()
            .map(|&th| composed_coupling_deriv(system, &one, 1, th))
            .collect();
        Cheb::fit(domain.lo, domain.hi, &vals).chopped(1e-14)
    };
    records.push(diff_record(1, &d_interp, &t_interp, alpha, l, domain));

    while level > 0 {
        level -= 1;
        let domain = chain.elements[level];
        let inner = chain.elements[level + 1];
        let one = subchain(chain, level);
        // theta_0 = midpoint of the new domain; D = Q_b'(X(tau theta_0)).
        let tau_mid = one.tau(model, 1, domain.mid()).clamp(inner.lo, inner.hi);
        let d_mid = system.dqb(x_interp.eval(tau_mid));
        assert!(d_mid.abs() <= 4.0 + 1e-9, "|Q_b'| <= 4 on the invariant strip");

        let prev_x = x_interp.clone();
        let prev_d = d_interp.clone();
        let (next_x, next_d, _) = push_block(
            system,
            &move |t| prev_x.eval(t),
            &move |t| prev_d.eval(t),
            chain,
            level,
        );

        let prev_t = t_interp.clone();
        let t_vals: Vec<f64> = cheb::nodes(domain.lo, domain.hi, BASE_DEGREE)
            .iter()
            .map(|&th| {
                let lead = composed_coupling_deriv(system, &one, 1, th);
                let tau_th = one.tau(model, 1, th).clamp(inner.lo, inner.hi);
                lead + d_mid * prev_t.eval(tau_th) * one.tau_deriv(model, 1, th)
            })
            .collect();
        t_interp = Cheb::fit(domain.lo, domain.hi, &t_vals).chopped(1e-14);
        x_interp = next_x;
        d_interp = next_d;
        records.push(diff_record(depth - level as u32, &d_interp, &t_interp, alpha, l, domain));
    }
    Ok(LinearApproxReport { records })
}

/// Chain truncated to the single block at `level`.
fn subchain(chain: &BranchChain, level: usize) -> BranchChain {
    let m1 = chain.m1 as usize;
    BranchChain {
        signs: chain.signs[level * m1..(level + 1) * m1].to_vec(),
        elements: chain.elements[level..=level + 1].to_vec(),
        x_elements: chain.x_elements[level..=level + 1].to_vec(),
        m1: chain.m1,
    }
}

fn diff_record(
    depth: u32,
    d_interp: &Cheb,
    t_interp: &Cheb,
    alpha: f64,
    l: u32,
    domain: Interval,
) -> LinearApproxRecord {
    let nodes = cheb::nodes(domain.lo, domain.hi, BASE_DEGREE.max(d_interp.degree()));
    let vals: Vec<f64> =
        nodes.iter().map(|&t| d_interp.eval(t) - alpha * t_interp.eval(t)).collect();
    let mut g = Cheb::fit(domain.lo, domain.hi, &vals).chopped(1e-13);
    let mut sup_norms = vec![g.max_abs_on_grid(512)];
    for _ in 0..l {
        g = g.deriv().chopped(1e-13);
        sup_norms.push(g.max_abs_on_grid(512));
    }
    LinearApproxRecord { depth, sup_norms }
}

/// Non-flatness report: the smallest derivative count whose magnitude sum is
/// bounded away from zero, with the empirical constants.
#[derive(Clone, Debug, Serialize)]
pub struct NonFlatReport {
    pub l0: u32,
    /// `inf_theta sum_{i=1}^{l0} |X^{(i)}| / alpha` over all curves.
    pub b_hat: f64,
    /// `sup_theta sum_{i=1}^{l0+1} |X^{(i)}| / alpha` over all curves.
    pub a_hat: f64,
    pub grid: usize,
    pub per_curve: Vec<CurveFlatness>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CurveFlatness {
    pub depth: u32,
    pub word: String,
    pub min_sum: f64,
    pub max_sum: f64,
}

/// Find the smallest `l0 <= l_max` such that
/// `inf sum_{i=1}^{l0} |X^{(i)}|/alpha >= 1e-3` and the infimum is stable
/// (within 20%) under doubling the evaluation grid.
pub fn check_nonflat(
    system: &SkewSystem,
    curves: &[AdmissibleCurve],
    l_max: u32,
    grid: usize,
) -> Result<NonFlatReport> {
    assert!(!curves.is_empty());
    for c in curves {
        assert!(c.depth >= 1, "non-flatness is a property of evolved curves");
    }
    let alpha = system.alpha();
    let ladders: Vec<Vec<Cheb>> = curves.iter().map(|c| c.derivatives(l_max + 1)).collect();

    let min_sum_at = |l0: u32, g: usize| -> f64 {
        let mut worst = f64::INFINITY;
        for ladder in &ladders {
            let (lo, hi) = ladder[0].domain();
            for i in 0..g {
                let theta = lo + (hi - lo) * (i as f64 + 0.5) / g as f64;
                let s: f64 = ladder[..l0 as usize].iter().map(|d| d.eval(theta).abs()).sum();
                worst = worst.min(s / alpha);
            }
        }
        worst
    };

    let mut best = 0.0_f64;
    let mut best_at = 0u32;
    for l0 in 1..=l_max {
        let coarse = min_sum_at(l0, grid);
        let fine = min_sum_at(l0, 2 * grid);
        if fine > best {
            best = fine;
            best_at = l0;
        }
        let stable = (coarse - fine).abs() <= 0.2 * fine.abs();
        if fine >= 1e-3 && stable {
            let mut a_hat = 0.0_f64;
            let mut per_curve = Vec::with_capacity(curves.len());
            for (c, ladder) in curves.iter().zip(&ladders) {
                let (lo, hi) = ladder[0].domain();
                let mut cmin = f64::INFINITY;
                let mut cmax = 0.0_f64;
                for i in 0..2 * grid {
                    let theta = lo + (hi - lo) * (i as f64 + 0.5) / (2 * grid) as f64;
                    let s: f64 =
                        ladder[..l0 as usize].iter().map(|d| d.eval(theta).abs()).sum();
                    let s1: f64 =
                        ladder[..=l0 as usize].iter().map(|d| d.eval(theta).abs()).sum();
                    cmin = cmin.min(s / alpha);
                    cmax = cmax.max(s1 / alpha);
                }
                a_hat = a_hat.max(cmax);
                per_curve.push(CurveFlatness {
                    depth: c.depth,
                    word: c.chain.word(),
                    min_sum: cmin,
                    max_sum: cmax,
                });
            }
            return Ok(NonFlatReport { l0, b_hat: fine, a_hat, grid, per_curve });
        }
    }
    Err(Error::NoFiniteL0 { l_max, best, at: best_at })
}

/// Lebesgue measure (normalized by `|I_a|`) of `{theta: |X| <= alpha eps}`
/// for each threshold, by adaptive bisection on the interpolant down to a
/// resolution of `1e-6 |omega|`.
pub fn curve_recurrence(system: &SkewSystem, curve: &AdmissibleCurve, eps: &[f64]) -> Vec<f64> {
    let domain = curve.domain();
    let d_sup = curve.derivatives(1)[0].max_abs_on_grid(1024);
    let res = 1e-6 * domain.len();
    let total = system.base().interval().len();
    eps.iter()
        .map(|&e| {
            let bound = system.alpha() * e;
            measure_below(curve.interp(), bound, domain.lo, domain.hi, d_sup, res) / total
        })
        .collect()
}

fn measure_below(interp: &Cheb, bound: f64, lo: f64, hi: f64, d_sup: f64, res: f64) -> f64 {
    let w = hi - lo;
    let m = interp.eval(0.5 * (lo + hi)).abs();
    if m + d_sup * 0.5 * w <= bound {
        return w;
    }
    if m - d_sup * 0.5 * w > bound {
        return 0.0;
    }
    if w < res {
        return if m <= bound { w } else { 0.0 };
    }
    let mid = 0.5 * (lo + hi);
    measure_below(interp, bound, lo, mid, d_sup, res)
        + measure_below(interp, bound, mid, hi, d_sup, res)
}

/// Result of the sibling-separation search.
#[derive(Clone, Debug, Serialize)]
pub struct SeparationReport {
    /// Smallest level at which a sibling pair separated above threshold.
    pub m_star: u32,
    /// Best observed `sup|Z+ - Z-| / alpha`.
    pub epsilon0: f64,
    /// Branch word of the witness pair's common ancestor chain.
    pub witness_word: String,
    /// Best spread per searched level, scaled by alpha.
    pub per_level: Vec<f64>,
    /// Spread of the level-1 central sibling pair (the degenerate coupling
    /// diagnostic), when the curve domain is the central element.
    pub central_spread: Option<f64>,
}

/// Search the sibling pairs that straddle the critical line: for each chain
/// of depth `m-1` carrying the curve domain onto the central element, push the
/// curve along it and split through the two central children, recording
/// `sup |Z+ - Z-|`. Smallest `m` reaching `threshold` wins.
pub fn separation_test(
    system: &SkewSystem,
    curve: &AdmissibleCurve,
    m_search: u32,
    threshold: f64,
) -> Result<SeparationReport> {
    let model = system.base();
    let p0 = model.p_partition(0)?;
    let p1 = model.p_partition(1)?;
    let central_idx = p0.locate(0.0).expect("0 lies in the interval");
    let central = p0.element(central_idx);
    let minus = p1.element(p1.locate(-1e-9).expect("left central child"));
    let plus = p1.element(p1.locate(1e-9).expect("right central child"));

    let mut per_level = Vec::new();
    let mut best = 0.0_f64;
    let mut best_word = String::new();
    let mut m_star = None;
    let mut central_spread = None;

    for m in 1..=m_search {
        let mut level_best = 0.0_f64;
        // Backward chains from the central element, deepest element inside
        // the curve's domain.
        let chains = BranchChain::enumerate_from(model, central, m - 1)?;
        for anc in chains.iter().filter(|c| {
            curve
                .domain()
                .contains_interval(&c.element(c.depth() as usize), 1e-9)
        }) {
            // Push the curve along the ancestor ladder onto the central
            // element, restricting through the level-1 container of each
            // intermediate element (deepest first).
            let mut cur = curve.clone();
            let mut ok = true;
            for k in (1..=anc.depth() as usize).rev() {
                let sub_idx = match p1.locate(anc.element(k).mid()) {
                    Some(i) => i,
                    None => {
                        ok = false;
                        break;
                    }
                };
                cur = match push_curve(system, &cur, &p1.element(sub_idx)) {
                    Ok(c) => c,
                    Err(_) => {
                        ok = false;
                        break;
                    }
                };
            }
            if !ok {
                continue;
            }
            debug_assert!((cur.domain().mid() - central.mid()).abs() < 1e-6);
            let z_plus = push_curve(system, &cur, &plus)?;
            let z_minus = push_curve(system, &cur, &minus)?;
            let dom = z_plus.domain();
            let mut sup = 0.0_f64;
            for i in 0..=256 {
                let theta = dom.lo + dom.len() * i as f64 / 256.0;
                sup = sup.max((z_plus.eval(theta) - z_minus.eval(theta)).abs());
            }
            if m == 1 {
                central_spread = Some(sup / system.alpha());
            }
            level_best = level_best.max(sup);
            if sup > best {
                best = sup;
                best_word = anc.word();
            }
            if sup >= threshold && m_star.is_none() {
                m_star = Some(m);
            }
        }
        per_level.push(level_best / system.alpha());
    }

    match m_star {
        Some(m) => Ok(SeparationReport {
            m_star: m,
            epsilon0: best / system.alpha(),
            witness_word: best_word,
            per_level,
            central_spread,
        }),
        None => Err(Error::NoSeparation { m_search, threshold, best }),
    }
}
