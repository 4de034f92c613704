//! The discounted same-color urn: draw two balls with replacement, add one of
//! the shared color or one of each, then discount both weights by `1 - x`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UrnState {
    pub red: f64,
    pub black: f64,
    pub t: u64,
}

impl UrnState {
    pub fn new(red: f64, black: f64) -> Result<Self> {
        if !(red >= 0.0 && black >= 0.0 && red + black > 0.0) || !(red + black).is_finite() {
            return Err(Error::Domain(format!("urn weights ({red}, {black}) must be nonnegative with positive total")));
        }
        Ok(Self { red, black, t: 0 })
    }

    pub fn total(&self) -> f64 {
        self.red + self.black
    }

    /// Red fraction `R / (R + B)`.
    pub fn fraction(&self) -> f64 {
        self.red / self.total()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UrnOutcomes {
    pub red_only: f64,
    pub black_only: f64,
    pub both: f64,
}

pub fn urn_outcome_probabilities(w: f64) -> UrnOutcomes {
    UrnOutcomes { red_only: w * w, black_only: (1.0 - w) * (1.0 - w), both: 2.0 * w * (1.0 - w) }
}

/// Red and black additions for one draw at red fraction `w`.
pub fn urn_additions<R: Rng + ?Sized>(w: f64, rng: &mut R) -> (f64, f64) {
    let first = rng.random::<f64>() < w;
    let second = rng.random::<f64>() < w;
    match (first, second) {
        (true, true) => (1.0, 0.0),
        (false, false) => (0.0, 1.0),
        _ => (1.0, 1.0),
    }
}

pub fn urn_step<R: Rng + ?Sized>(state: &UrnState, x: f64, rng: &mut R) -> UrnState {
    let (r, b) = urn_additions(state.fraction(), rng);
    UrnState { red: (1.0 - x) * (state.red + r), black: (1.0 - x) * (state.black + b), t: state.t + 1 }
}

/// Exact `E[w(t+1)] - w(t)`. The discount cancels in the fraction, so this
/// depends only on the weights.
pub fn urn_expected_fraction_change(state: &UrnState) -> f64 {
    let (r, s) = (state.red, state.total());
    let w = state.fraction();
    let o = urn_outcome_probabilities(w);
    o.red_only * (r + 1.0) / (s + 1.0) + o.black_only * r / (s + 1.0) + o.both * (r + 1.0) / (s + 2.0) - w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::replica_rng;

    #[test]
    fn monochrome_is_absorbing() {
        let mut s = UrnState::new(1.0, 0.0).unwrap();
        let mut rng = replica_rng(1, 0);
        for _ in 0..100 {
            s = urn_step(&s, 0.1, &mut rng);
            assert_eq!(s.black, 0.0);
            assert_eq!(s.fraction(), 1.0);
        }
    }

    #[test]
    fn outcome_probabilities_at_quarter() {
        let o = urn_outcome_probabilities(0.25);
        assert_eq!((o.red_only, o.black_only, o.both), (1.0 / 16.0, 9.0 / 16.0, 6.0 / 16.0));
    }

    #[test]
    fn drift_points_to_half() {
        for total in [1.0, 5.0, 40.0, 1000.0] {
            for i in 1..100 {
                let w = i as f64 / 200.0;
                let s = UrnState::new(w * total, (1.0 - w) * total).unwrap();
                assert!(urn_expected_fraction_change(&s) > 0.0, "w = {w}, total = {total}");
            }
        }
    }

    #[test]
    fn frozen_fraction_fixed_point() {
        let (x, w) = (0.05, 0.3);
        let mut rng = replica_rng(2, 0);
        let fixed = (1.0 - x) * (1.0 + 2.0 * w * (1.0 - w)) / x;
        let mut total = fixed;
        let mut acc = 0.0;
        let n = 100_000;
        for _ in 0..n {
            let (r, b) = urn_additions(w, &mut rng);
            total = (1.0 - x) * (total + r + b);
            acc += total;
        }
        assert!((acc / n as f64 - fixed).abs() < 0.02 * fixed);
    }

    #[test]
    fn rejects_empty_urn() {
        assert!(UrnState::new(0.0, 0.0).is_err());
        assert!(UrnState::new(-1.0, 2.0).is_err());
    }
}
