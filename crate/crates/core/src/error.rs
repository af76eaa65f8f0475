//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter {c} outside admissible range (1, 2]")]
    BadParameter { c: f64 },

    #[error("no sign change on bracket [{lo}, {hi}]: G(lo) = {g_lo:e}, G(hi) = {g_hi:e}")]
    NoSignChange { lo: f64, hi: f64, g_lo: f64, g_hi: f64 },

    #[error(
        "critical orbit of c = {c} is degenerate for (preperiod, period) = ({preperiod}, {period}): \
         orbit points {i} and {j} are {gap:e} apart"
    )]
    StrictnessViolation { c: f64, preperiod: u32, period: u32, i: u32, j: u32, gap: f64 },

    #[error("metric evaluated exactly at post-critical point {x}")]
    EvaluationAtSingularity { x: f64 },

    #[error("{what} = {value} outside domain [{lo}, {hi}]")]
    OutOfDomain { what: &'static str, value: f64, lo: f64, hi: f64 },

    #[error("metric is not expanding: best estimate {best} <= 1 (mode {mode})")]
    NotExpanding { best: f64, mode: &'static str },

    #[error("partition depth {requested} base-map steps exceeds cap {cap}")]
    DepthExceeded { requested: u32, cap: u32 },

    #[error("elements are not related by the Markov structure at depth {depth}")]
    NotABranch { depth: u32 },

    #[error("alpha = {alpha} breaks invariance of the rectangle: fiber reaches {reach} > {bound}")]
    AlphaTooLarge { alpha: f64, reach: f64, bound: f64 },

    #[error("coupling polynomial is constant")]
    ConstantCoupling,

    #[error("orbit escaped the invariant rectangle at step {step}: ({theta}, {y})")]
    EscapedRectangle { step: u64, theta: f64, y: f64 },

    #[error("sigma^N_alpha = {lhs:e} exceeds 1/alpha = {rhs:e}; constants inconsistent")]
    InconsistentConstants { lhs: f64, rhs: f64 },

    #[error("only {found} usable orbit segments (need {need}) for the growth-rate fit")]
    InsufficientSegments { found: usize, need: usize },

    #[error("branch interval [{lo}, {hi}] is not contained in the curve domain")]
    NotSubElement { lo: f64, hi: f64 },

    #[error("curve carries no branch provenance; cannot rebuild the matched series")]
    MissingProvenance,

    #[error("no l0 <= {l_max} gives a stable positive lower bound (best {best:e} at l = {at})")]
    NoFiniteL0 { l_max: u32, best: f64, at: u32 },

    #[error("no sibling pair separates above {threshold:e} within {m_search} iterate levels (best {best:e})")]
    NoSeparation { m_search: u32, threshold: f64, best: f64 },

    #[error("power iteration did not converge: step change {step_change:e} after {iterations} iterations")]
    NotConverged { step_change: f64, iterations: u32 },
}
