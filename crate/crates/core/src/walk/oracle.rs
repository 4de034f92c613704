//! Exact expected exit times of finite birth-death chains by first-step analysis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::increments::IncrementFamily;

use super::Walk1DConfig;

pub const MAX_STATES: usize = 10_000;

/// Interior states `0..len` of a birth-death chain. A down move from state 0
/// or an up move from the last state leaves the interior and absorbs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirthDeathChain {
    pub up: Vec<f64>,
    pub stay: Vec<f64>,
    pub down: Vec<f64>,
}

impl BirthDeathChain {
    pub fn new(up: Vec<f64>, stay: Vec<f64>, down: Vec<f64>) -> Result<Self> {
        let n = up.len();
        if n == 0 || stay.len() != n || down.len() != n {
            return Err(Error::Domain("chain rows must be non-empty and aligned".into()));
        }
        if n > MAX_STATES {
            return Err(Error::Size(format!("{n} interior states exceed the limit of {MAX_STATES}")));
        }
        for i in 0..n {
            let row = [up[i], stay[i], down[i]];
            if row.iter().any(|p| !(*p >= 0.0)) {
                return Err(Error::Domain(format!("negative or NaN transition in row {i}")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::Domain(format!("row {i} sums to {s}")));
            }
        }
        Ok(Self { up, stay, down })
    }

    pub fn len(&self) -> usize {
        self.up.len()
    }

    pub fn is_empty(&self) -> bool {
        self.up.is_empty()
    }

    /// The lattice chain induced by a walk whose offsets lie in `{-1, 0, +1}`.
    /// Returns the chain and the index of `config.w0`.
    pub fn from_walk(config: &Walk1DConfig) -> Result<(Self, usize)> {
        config.validate()?;
        let fam: &IncrementFamily = &config.family;
        let x = config.x;
        let below = ((config.w0 - config.a_x) / x + super::EPS / x).floor() as i64;
        let above = ((1.0 - config.a_x - config.w0) / x + super::EPS / x).floor() as i64;
        let (mut up, mut stay, mut down) = (Vec::new(), Vec::new(), Vec::new());
        for k in -below..=above {
            let w = (config.w0 + x * k as f64).clamp(0.0, 1.0);
            let atoms = fam.atoms(w)?;
            let (mut u, mut s, mut d) = (0.0, 0.0, 0.0);
            for a in atoms.iter() {
                match a.offset {
                    1.0 => u += a.prob,
                    0.0 => s += a.prob,
                    -1.0 => d += a.prob,
                    o => return Err(Error::Domain(format!("offset {o} is not a unit lattice step"))),
                }
            }
            up.push(u);
            stay.push(s);
            down.push(d);
        }
        Ok((Self::new(up, stay, down)?, below as usize))
    }
}

/// Solves `(I - P_interior) h = 1` for the expected absorption time from every
/// interior state (tridiagonal elimination).
pub fn exact_exit_oracle(chain: &BirthDeathChain) -> Result<Vec<f64>> {
    let n = chain.len();
    // a_i h_{i-1} + b_i h_i + c_i h_{i+1} = 1
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    for i in 0..n {
        let a = -chain.down[i];
        let b = 1.0 - chain.stay[i];
        let c = -chain.up[i];
        let (pivot, rhs) = if i == 0 {
            (b, 1.0)
        } else {
            (b - a * c_prime[i - 1], 1.0 - a * d_prime[i - 1])
        };
        if !(pivot > 1e-14) {
            return Err(Error::Domain(format!("absorption is unreachable from some states (pivot {pivot:e} at row {i})")));
        }
        c_prime[i] = c / pivot;
        d_prime[i] = rhs / pivot;
    }
    let mut h = vec![0.0; n];
    h[n - 1] = d_prime[n - 1];
    for i in (0..n - 1).rev() {
        h[i] = d_prime[i] - c_prime[i] * h[i + 1];
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sure_escape() {
        let c = BirthDeathChain::new(vec![1.0], vec![0.0], vec![0.0]).unwrap();
        assert_eq!(exact_exit_oracle(&c).unwrap(), vec![1.0]);
    }

    #[test]
    fn gamblers_ruin() {
        // states 1..=3 of {0, ..., 4}
        let c = BirthDeathChain::new(vec![0.5; 3], vec![0.0; 3], vec![0.5; 3]).unwrap();
        let h = exact_exit_oracle(&c).unwrap();
        for (k, v) in h.iter().enumerate() {
            let k = (k + 1) as f64;
            assert!((v - k * (4.0 - k)).abs() < 1e-12);
        }
    }

    #[test]
    fn induced_three_state_chain() {
        let cfg = Walk1DConfig::new(IncrementFamily::binary(0.5).unwrap(), 0.25)
            .unwrap()
            .with_a_x(0.25)
            .with_w0(0.5);
        let (chain, start) = BirthDeathChain::from_walk(&cfg).unwrap();
        assert_eq!(chain.len(), 3);
        assert_eq!(start, 1);
        let h = exact_exit_oracle(&chain).unwrap();
        assert!((h[start] - 16.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn singular_and_invalid() {
        let c = BirthDeathChain::new(vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]).unwrap();
        assert!(matches!(exact_exit_oracle(&c), Err(Error::Domain(_))));
        assert!(BirthDeathChain::new(vec![0.5], vec![0.0], vec![0.4]).is_err());
        assert!(matches!(
            BirthDeathChain::new(vec![0.5; MAX_STATES + 1], vec![0.0; MAX_STATES + 1], vec![0.5; MAX_STATES + 1]),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn large_chain_solves() {
        let n = MAX_STATES;
        let c = BirthDeathChain::new(vec![0.5; n], vec![0.0; n], vec![0.5; n]).unwrap();
        let h = exact_exit_oracle(&c).unwrap();
        let mid = n / 2;
        let k = (mid + 1) as f64;
        let expect = k * ((n + 1) as f64 - k);
        assert!((h[mid] - expect).abs() / expect < 1e-9);
    }
}
