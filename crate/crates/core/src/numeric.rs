//! Small numeric helpers: compensated summation, log-domain arithmetic and
//! exact dyadic probabilities.

use serde::{Deserialize, Serialize};

/// Neumaier (improved Kahan–Babuška) compensated accumulator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    /// Folds another accumulator into this one. Merging in a fixed order is
    /// deterministic.
    pub fn merge(&mut self, other: &NeumaierSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = NeumaierSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// `ln(e^a + e^b)` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Rounds to 12 significant decimal digits (report convention for constants).
pub fn sig12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.11e}", x).parse().unwrap_or(x)
}

/// True when `v` is a dyadic rational `p / 2^q` with `q <= max_exp` that
/// survives exact `f64` arithmetic.
pub fn is_dyadic(v: f64, max_exp: u32) -> bool {
    if !v.is_finite() {
        return false;
    }
    let scaled = v * f64::from(1u32 << max_exp);
    scaled.fract() == 0.0 && scaled.abs() < 9.007_199_254_740_992e15
}

/// A probability of the form `num / 2^den2exp`, as produced by exhaustive
/// enumeration over sign vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dyadic {
    pub num: u64,
    pub den2exp: u32,
}

impl Dyadic {
    pub fn new(num: u64, den2exp: u32) -> Self {
        debug_assert!(den2exp < 64 && num <= 1u64 << den2exp);
        Dyadic { num, den2exp }
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / (1u64 << self.den2exp) as f64
    }
}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        // cross-multiply on a common denominator; both exponents are < 64
        let a = u128::from(self.num) << other.den2exp;
        let b = u128::from(other.num) << self.den2exp;
        Some(a.cmp(&b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neumaier_recovers_cancelled_terms() {
        let xs = [1.0, 1e100, 1.0, -1e100];
        let naive: f64 = xs.iter().sum();
        let acc: NeumaierSum = xs.iter().copied().collect();
        assert_eq!(naive, 0.0);
        assert_eq!(acc.value(), 2.0);
    }

    #[test]
    fn log_add_exp_matches_direct() {
        let v = log_add_exp(2.0f64.ln(), 3.0f64.ln());
        assert!((v - 5.0f64.ln()).abs() < 1e-15);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 1.5), 1.5);
        // far outside f64 range
        let big = log_add_exp(1e4, 1e4);
        assert!((big - (1e4 + 2.0f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn sig12_rounds() {
        assert_eq!(sig12(5.774_433_155_378_277), 5.774_433_155_38);
        assert_eq!(sig12(0.0), 0.0);
    }

    #[test]
    fn dyadic_detection() {
        assert!(is_dyadic(0.5, 20));
        assert!(is_dyadic(3.0 / 1024.0, 20));
        assert!(!is_dyadic(0.1, 20));
        assert!(!is_dyadic(1.0 / f64::from(1u32 << 21), 20));
    }

    #[test]
    fn dyadic_ordering() {
        assert!(Dyadic::new(6, 4) > Dyadic::new(1, 2));
        assert_eq!(
            Dyadic::new(2, 2).partial_cmp(&Dyadic::new(1, 1)),
            Some(std::cmp::Ordering::Equal)
        );
    }
}
