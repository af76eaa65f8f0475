//! Minimal double-double arithmetic.
//!
//! Unevaluated sums `hi + lo` with `|lo| <= ulp(hi)/2` give roughly 32
//! significant digits. Only the handful of operations needed by parameter
//! certification are provided; bulk simulation stays in plain `f64`.

/// Double-double number. Invariant: `hi + lo` is the represented value and
/// `lo` is a rounding correction to `hi`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

/// Error-free sum of two doubles (Knuth two-sum).
#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

/// Error-free product via fused multiply-add.
#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let err = a.mul_add(b, -p);
    (p, err)
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    #[inline]
    pub fn from(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.hi + self.lo
    }

    #[inline]
    pub fn add(self, other: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, other.hi);
        let e = e + self.lo + other.lo;
        let (hi, lo) = two_sum(s, e);
        Dd { hi, lo }
    }

    #[inline]
    pub fn sub(self, other: Dd) -> Dd {
        self.add(Dd { hi: -other.hi, lo: -other.lo })
    }

    #[inline]
    pub fn mul(self, other: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, other.hi);
        let e = e + self.hi * other.lo + self.lo * other.hi;
        let (hi, lo) = two_sum(p, e);
        Dd { hi, lo }
    }

    #[inline]
    pub fn sqr(self) -> Dd {
        self.mul(self)
    }

    #[inline]
    pub fn abs(self) -> Dd {
        if self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0) {
            Dd { hi: -self.hi, lo: -self.lo }
        } else {
            self
        }
    }
}

/// One step of the quadratic map `x -> c - x^2` in double-double.
#[inline]
pub fn quad_step(c: Dd, x: Dd) -> Dd {
    c.sub(x.sqr())
}
