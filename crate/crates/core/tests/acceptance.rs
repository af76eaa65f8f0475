//! Acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line. Closed-form oracles (arcsine coordinates and the tent map
//! at a = 2, the cubic root for the fiber parameter, log 2 for the full
//! quadratic map) live in this file, independent of the library paths they
//! check.

use std::f64::consts::{FRAC_PI_2, LN_2, PI};
use std::sync::OnceLock;

use skewlab::curves::{
    check_linear_approx, check_nonflat, curve_recurrence, evolve_chain, separation_test,
    AdmissibleCurve, BranchChain,
};
use skewlab::expanding::{
    distortion_report, markov_defect, nesting_defect, ExpandingModel,
};
use skewlab::measures::{
    attractor, build_ulam, critical_return_test, slow_recurrence, uniqueness_diagnostic,
};
use skewlab::mt::{find_mt_parameter, MTCertificate};
use skewlab::rng::CounterRng;
use skewlab::skew::{
    compute_constants, estimate_sigma, iterate, lyapunov_exponents, SkewSystem,
};
use skewlab::Error;

fn check(criterion: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("acceptance {criterion}: {verdict} — {detail}");
    assert!(pass, "{criterion}: {detail}");
}

fn base_a2() -> &'static ExpandingModel {
    static M: OnceLock<ExpandingModel> = OnceLock::new();
    M.get_or_init(|| {
        ExpandingModel::build(find_mt_parameter(2, 1, (1.9, 2.0)).unwrap(), Some(3)).unwrap()
    })
}

fn fiber_31() -> MTCertificate {
    find_mt_parameter(3, 1, (1.5, 1.6)).unwrap()
}

/// Default system: a = 2, m1 = 3, b the (3,1) parameter, alpha = 1e-3,
/// coupling phi(x) = x (odd).
fn default_system() -> &'static SkewSystem {
    static S: OnceLock<SkewSystem> = OnceLock::new();
    S.get_or_init(|| SkewSystem::build(base_a2().clone(), fiber_31(), 1e-3, &[0.0, 1.0]).unwrap())
}

/// The 50-curve ensemble of criterion 7: depths 5..=20, fixed seeds.
fn criterion7_chains() -> &'static Vec<BranchChain> {
    static C: OnceLock<Vec<BranchChain>> = OnceLock::new();
    C.get_or_init(|| {
        (0..50u32)
            .map(|i| {
                let mut rng = CounterRng::new(4097, i as u64);
                BranchChain::random(base_a2(), 5 + (i % 16), &mut rng).unwrap()
            })
            .collect()
    })
}

/// Independent oracle: root of c^3 - 2c^2 + 2c - 2 by bisection on the cubic.
fn cubic_root_oracle() -> f64 {
    let cubic = |c: f64| ((c - 2.0) * c + 2.0) * c - 2.0;
    let (mut lo, mut hi) = (1.5, 1.6);
    assert!(cubic(lo) < 0.0 && cubic(hi) > 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cubic(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn criterion_01_mt_certification() {
    let c2 = find_mt_parameter(2, 1, (1.9, 2.0)).unwrap();
    let c31 = find_mt_parameter(3, 1, (1.5, 1.6)).unwrap();
    let oracle = cubic_root_oracle();
    let pass = c2.param.c() == 2.0
        && c2.residual == 0.0
        && (c31.param.c() - oracle).abs() < 1e-10
        && c31.strictness_gap > 1e-6
        && c31.residual < 1e-12;
    check(
        "01 mt-certification",
        pass,
        format!(
            "c(2,1) = {} residual {}; c(3,1) = {:.15} vs cubic oracle {:.15}, gap {:.3e}",
            c2.param.c(),
            c2.residual,
            c31.param.c(),
            oracle,
            c31.strictness_gap
        ),
    );
}

#[test]
fn criterion_02_closed_form_conjugacy() {
    let model = base_a2();
    let mut worst_u = 0.0_f64;
    for i in 0..=1000 {
        let x = -2.0 + 4.0 * i as f64 / 1000.0;
        worst_u = worst_u.max((model.u_of_x(x).unwrap() - (x / 2.0).asin()).abs());
    }
    let mut worst_h0 = 0.0_f64;
    for i in 0..=1000 {
        let theta = -FRAC_PI_2 + PI * i as f64 / 1000.0;
        worst_h0 = worst_h0.max((model.h0(theta).unwrap() - (FRAC_PI_2 - 2.0 * theta.abs())).abs());
    }
    let lambda = model.lambda_a();
    let q3 = model.partition(3).unwrap();
    let q3_sizes_ok =
        q3.len() == 8 && q3.elements().iter().all(|e| (e.len() - PI / 8.0).abs() < 1e-10);
    let pass = worst_u < 1e-10
        && worst_h0 < 1e-8
        && (lambda - 2.0).abs() < 1e-6
        && model.m0() == 3
        && q3_sizes_ok;
    check(
        "02 closed-form-conjugacy",
        pass,
        format!(
            "sup|u - asin(x/2)| = {worst_u:.2e}, sup|h0 - tent| = {worst_h0:.2e}, \
             lambda_a = {lambda:.9}, m0 = {}, |Q3| = {}",
            model.m0(),
            q3.len()
        ),
    );
}

#[test]
fn criterion_03_markov_nesting_distortion() {
    let mut worst_nest = 0.0_f64;
    let mut worst_markov = 0.0_f64;
    for model in [base_a2(), &ExpandingModel::build(fiber_31(), None).unwrap()] {
        let mut prev = model.partition(0).unwrap();
        for n in 1..=8 {
            let cur = model.partition(n).unwrap();
            worst_nest = worst_nest.max(nesting_defect(&cur, &prev));
            worst_markov = worst_markov.max(markov_defect(model, &cur, &prev));
            prev = cur;
        }
    }
    let mut c_d: f64 = 0.0;
    let mut samples = 0;
    for n in [2u32, 5, 8] {
        let rep = distortion_report(base_a2(), n, 334, 2024).unwrap();
        samples += rep.samples;
        c_d = c_d.max(rep.c_d);
    }
    // At a = 2 the exact piecewise-linear value is pi^2 for the lower
    // inequality and 1/pi for the upper.
    let pass = worst_nest < 1e-9
        && worst_markov < 1e-9
        && samples >= 1000
        && c_d.is_finite()
        && c_d > 0.0
        && c_d <= PI * PI + 1e-6;
    check(
        "03 markov-nesting-distortion",
        pass,
        format!(
            "nesting defect {worst_nest:.2e}, markov defect {worst_markov:.2e}, \
             C_d = {c_d:.6} over {samples} sampled pairs (exact pi^2 = {:.6})",
            PI * PI
        ),
    );
}

#[test]
fn criterion_04_triangular_cocycle() {
    let sys = default_system();
    let iv = sys.base().interval();
    let mut rng = CounterRng::new(2024, 0);
    let mut worst = 0.0_f64;
    let mut checked = 0;
    while checked < 100 {
        let theta = rng.uniform(iv.lo, iv.hi);
        let y = rng.uniform(-sys.y_bound(), sys.y_bound());
        let n = 1 + (rng.below(30) as u32);
        let product = sys.fiber_derivative_product(theta, y, n);
        let fd = |eps: f64| {
            let (_, yp) = sys.f_n(theta, y + eps, n);
            let (_, ym) = sys.f_n(theta, y - eps, n);
            (yp - ym) / (2.0 * eps)
        };
        let richardson = (4.0 * fd(5e-7) - fd(1e-6)) / 3.0;
        worst = worst.max(((richardson - product) / product).abs());
        checked += 1;
    }
    check(
        "04 triangular-cocycle",
        worst < 1e-5,
        format!("worst relative FD defect {worst:.3e} over {checked} points, n <= 30"),
    );
}

#[test]
fn criterion_05_two_positive_exponents() {
    let sys = default_system();
    let lyap = lyapunov_exponents(sys, 100, 1_000_000, 1_000, 42).unwrap();
    let theta_exact = lyap
        .records
        .iter()
        .map(|r| (r.lambda_theta - 3.0 * LN_2).abs())
        .fold(0.0_f64, f64::max);
    let positive = lyap.records.iter().filter(|r| r.lambda_y > 0.0).count();
    let rel_spread = lyap.y_stats.std / lyap.y_stats.mean.abs();
    let pass = theta_exact < 1e-9 && positive == 100 && rel_spread < 0.05;
    check(
        "05 two-positive-exponents",
        pass,
        format!(
            "max|Lambda_theta - 3log2| = {theta_exact:.2e}, Lambda_y > 0 for {positive}/100, \
             min = {:.4}, std/mean = {rel_spread:.4}",
            lyap.y_stats.min
        ),
    );
}

#[test]
fn criterion_06_decoupled_oracle() {
    let b2 = find_mt_parameter(2, 1, (1.9, 2.0)).unwrap();
    let sys = SkewSystem::build(base_a2().clone(), b2, 0.0, &[0.0, 1.0]).unwrap();
    let acc = iterate(&sys, 0.337, 0.618, 10_000_000, 1_000, 0.0).unwrap();
    let diff = (acc.lambda_y() - LN_2).abs();
    check(
        "06 decoupled-oracle",
        diff < 5e-3,
        format!("Lambda_y = {:.6} vs log 2 = {LN_2:.6} (diff {diff:.2e}) at n = 1e7", acc.lambda_y()),
    );
}

#[test]
fn criterion_07_nonflatness() {
    let chains = criterion7_chains();
    let mut b_hats = Vec::new();
    let mut a_hats = Vec::new();
    let mut l0 = 0;
    for alpha in [1e-2, 1e-3, 1e-4] {
        let sys = default_system().with_alpha(alpha).unwrap();
        let curves: Vec<AdmissibleCurve> =
            chains.iter().map(|c| evolve_chain(&sys, 0.3, c).unwrap()).collect();
        let rep = check_nonflat(&sys, &curves, 8, 256).unwrap();
        l0 = rep.l0;
        b_hats.push(rep.b_hat);
        a_hats.push(rep.a_hat);
    }
    let spread = |v: &[f64]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(0.0_f64, f64::max);
        (hi - lo) / lo
    };
    let b_spread = spread(&b_hats);
    let a_spread = spread(&a_hats);
    let pass = l0 <= 8 && b_hats.iter().all(|&b| b > 0.0) && b_spread < 0.2 && a_spread < 0.2;
    check(
        "07 non-flatness",
        pass,
        format!(
            "l0 = {l0}, B = {b_hats:?}, A = {a_hats:?}, spreads {b_spread:.3}/{a_spread:.3} over 50 curves of depth 5..=20"
        ),
    );
}

#[test]
fn criterion_08_linear_approximation() {
    let sys = default_system();
    // Depth-1 exactness over several branches.
    let mut worst_depth1 = 0.0_f64;
    for seed in 0..5u64 {
        let mut rng = CounterRng::new(808, seed);
        let chain = BranchChain::random(sys.base(), 1, &mut rng).unwrap();
        let curve = evolve_chain(sys, 0.3, &chain).unwrap();
        let rep = check_linear_approx(sys, &curve, 0).unwrap();
        worst_depth1 = worst_depth1.max(rep.records[0].sup_norms[0]);
    }
    // Depth-8 chain: the alpha^2 ratio across three couplings.
    let mut rng = CounterRng::new(888, 0);
    let chain8 = BranchChain::random(sys.base(), 8, &mut rng).unwrap();
    let mut ratios = Vec::new();
    for alpha in [1e-2, 1e-3, 1e-4] {
        let s = sys.with_alpha(alpha).unwrap();
        let curve = evolve_chain(&s, 0.3, &chain8).unwrap();
        let rep = check_linear_approx(&s, &curve, 0).unwrap();
        ratios.push(rep.records.last().unwrap().sup_norms[0] / (alpha * alpha));
    }
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0_f64, f64::max);
    let pass = worst_depth1 <= 1e-9 && hi / lo < 2.0;
    check(
        "08 linear-approximation",
        pass,
        format!("depth-1 sup = {worst_depth1:.2e}; depth-8 ratios/alpha^2 = {ratios:?} (x{:.2})", hi / lo),
    );
}

#[test]
fn criterion_09_separation() {
    // Odd coupling: a separated sibling pair exists and eps0 is alpha-stable.
    let mut eps0 = Vec::new();
    for alpha in [1e-2, 1e-3] {
        let sys = default_system().with_alpha(alpha).unwrap();
        let mut rng = CounterRng::new(909, 0);
        let chain = BranchChain::random(sys.base(), 1, &mut rng).unwrap();
        let curve = evolve_chain(&sys, 0.3, &chain).unwrap();
        let rep = separation_test(&sys, &curve, 2, 1e-4 * alpha).unwrap();
        eps0.push(rep.epsilon0);
    }
    let stable = (eps0[0] - eps0[1]).abs() / eps0[1] < 0.2;

    // Even coupling (x^2): the central sibling pair coincides.
    let even = SkewSystem::build(base_a2().clone(), fiber_31(), 1e-3, &[0.0, 0.0, 1.0]).unwrap();
    let domain = even.base().p_partition(0).unwrap().element(0);
    let horizontal = AdmissibleCurve::horizontal(&even, 0.3, domain);
    let degenerate = matches!(
        separation_test(&even, &horizontal, 1, 1e-4 * even.alpha()),
        Err(Error::NoSeparation { best, .. }) if best < 1e-12
    );
    let pass = eps0.iter().all(|&e| e > 1e-4) && stable && degenerate;
    check(
        "09 separation",
        pass,
        format!("odd phi: eps0 = {eps0:?} (alpha-stable {stable}); even phi: central NoSeparation {degenerate}"),
    );
}

#[test]
fn criterion_10_curve_recurrence() {
    let sys = default_system();
    let curves: Vec<AdmissibleCurve> = criterion7_chains()
        .iter()
        .map(|c| evolve_chain(sys, 0.3, c).unwrap())
        .collect();
    let rep = check_nonflat(sys, &curves, 8, 256).unwrap();
    let l0 = rep.l0 as f64;

    // Also include curves that actually straddle the critical line, so the
    // bound is exercised away from zero.
    let b = sys.fiber().param.c();
    let y_star = (b - b.sqrt()).sqrt();
    let p1 = sys.base().p_partition(1).unwrap();
    let plus = p1.element(p1.locate(1e-9).unwrap());
    let root = BranchChain::root(sys.base(), sys.base().p_partition(0).unwrap().element(0));
    let central = root.extended_by(sys.base(), &plus).unwrap();
    let mut all = curves;
    all.push(evolve_chain(sys, y_star, &central).unwrap());

    let eps = [1e-1, 1e-2, 1e-3];
    let mut worst_ratio = 0.0_f64;
    let mut max_fraction = 0.0_f64;
    for curve in &all {
        let fr = curve_recurrence(sys, curve, &eps);
        for (f, e) in fr.iter().zip(eps) {
            worst_ratio = worst_ratio.max(f / e.powf(1.0 / (2.0 * l0)));
            max_fraction = max_fraction.max(*f);
        }
    }
    check(
        "10 curve-recurrence",
        worst_ratio <= 1.0,
        format!(
            "worst fraction/bound ratio {worst_ratio:.4} (largest fraction {max_fraction:.2e}, l0 = {l0})"
        ),
    );
}

#[test]
fn criterion_11_critical_return() {
    let sys = default_system();
    let constants = compute_constants(sys.alpha(), 1.5).unwrap();
    let b = sys.fiber().param.c();
    let y_star = (b - b.sqrt()).sqrt();
    // Depth-1 curve through the central branch: its next image straddles the
    // critical line.
    let p1 = sys.base().p_partition(1).unwrap();
    let plus = p1.element(p1.locate(1e-9).unwrap());
    let root = BranchChain::root(sys.base(), sys.base().p_partition(0).unwrap().element(0));
    let chain = root.extended_by(sys.base(), &plus).unwrap();
    let curve = evolve_chain(sys, y_star, &chain).unwrap();

    let rs: Vec<f64> = (0..=10).map(|i| constants.r0 + 0.5 * i as f64).collect();
    let rep = critical_return_test(sys, &curve, &rs, 100_000, constants.m_alpha, 417);
    let monotone = rep.rows.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12);
    let pass = rep.beta0_hat > 0.0 && rep.r_squared > 0.8 && monotone;
    check(
        "11 critical-return",
        pass,
        format!(
            "M_alpha = {}, beta0 = {:.4}, R^2 = {:.4}, fractions {:.4} -> {:.4}",
            constants.m_alpha,
            rep.beta0_hat,
            rep.r_squared,
            rep.rows.first().unwrap().1,
            rep.rows.last().unwrap().1
        ),
    );
}

#[test]
fn criterion_12_slow_recurrence() {
    // The recurrence experiment runs at a larger coupling (alpha = 0.05,
    // still far below alpha_max) so that the delta-neighborhood is visited at
    // the listed n at all; see the CLI defaults.
    let sys = default_system().with_alpha(0.05).unwrap();
    let sigma = estimate_sigma(sys.fiber(), sys.alpha().sqrt(), 200_000, 42).unwrap();
    let constants = compute_constants(sys.alpha(), sigma.sigma).unwrap();
    let rep = slow_recurrence(
        &sys,
        1000,
        &[1_000, 10_000, 100_000],
        0.055,
        0.45,
        constants.eta,
        42,
    )
    .unwrap();
    let f: Vec<f64> = rep.rows.iter().map(|r| r.fraction).collect();
    let strictly_decreasing = f[0] > f[1] && f[1] > f[2] && f[2] > 0.0;
    // Mean S_n/n nonincreasing within noise (two standard errors).
    let se: Vec<f64> = rep.rows.iter().map(|r| r.std_ratio / (rep.n_orbits as f64).sqrt()).collect();
    let trend_ok = rep
        .rows
        .windows(2)
        .enumerate()
        .all(|(i, w)| w[1].mean_ratio <= w[0].mean_ratio + 2.0 * (se[i] + se[i + 1]));
    let pass = strictly_decreasing && rep.slope < 0.0 && trend_ok;
    check(
        "12 slow-recurrence",
        pass,
        format!(
            "fractions {f:?}, slope vs sqrt(n) = {:.4}, mean S_n/n = {:?}",
            rep.slope,
            rep.rows.iter().map(|r| (r.mean_ratio * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn criterion_13_acip() {
    let sys = default_system();
    let est = build_ulam(sys, 512, 256, 64, 1313).unwrap();
    let residual_ok = est.converged && est.residual < 1e-6;

    let tm = est.theta_marginal();
    let cell = 1.0 / 512.0;
    let sup_dev = tm.iter().map(|&m| (m - cell).abs()).fold(0.0_f64, f64::max);
    let marginal_ok = sup_dev <= 2.0 * cell;

    let uniq = uniqueness_diagnostic(&est, 4, 1313).unwrap();
    let uniq_ok = uniq.max_pairwise_l1 < 1e-3;

    let a2 = attractor(sys, 2, 512, 256).unwrap();
    let a3 = attractor(sys, 3, 512, 256).unwrap();
    let cell_diff = (a2.count as f64 - a3.count as f64).abs() / a2.count as f64;
    let attractor_ok = cell_diff <= 0.01 && a3.excess_fraction(&a2) <= 0.01;

    let pass = residual_ok && marginal_ok && uniq_ok && attractor_ok;
    check(
        "13 acip",
        pass,
        format!(
            "residual {:.2e} ({} iters), base-marginal sup dev {:.2} cells, uniqueness L1 {:.2e}, \
             attractor n=2/3 cell diff {:.4}",
            est.residual,
            est.iterations,
            sup_dev / cell,
            uniq.max_pairwise_l1,
            cell_diff
        ),
    );
}

/// Invariance smoke test alongside the acceptance list: a long random
/// ensemble never leaves the rectangle (iterate would error out).
#[test]
fn invariance_of_the_rectangle() {
    let sys = default_system();
    let iv = sys.base().interval();
    let mut rng = CounterRng::new(7_777, 0);
    for _ in 0..20 {
        let theta0 = rng.uniform(iv.lo, iv.hi);
        let y0 = rng.uniform(-sys.y_bound(), sys.y_bound());
        let acc = iterate(sys, theta0, y0, 50_000, 0, 0.0).unwrap();
        assert!(acc.y.abs() <= sys.y_bound());
    }
}
