//! Three's Company: each agent picks a trio containing itself with probability
//! proportional to a product of pair weights, every chosen trio reinforces its
//! three pairs by 1, and all weights are discounted by `1 - x`.
//!
//! Agents are numbered from 0. Pair weights are stored once per unordered pair.

mod partition;

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use partition::{
    detect_partition, run_replicas, run_until_trap, PartitionReport, TrapConfig, TrapRun, TrapSummary,
    TrajectoryRow, DEFAULT_PERSISTENCE, DEFAULT_THRESHOLD,
};

/// Which pair weights enter a trio's selection weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrioRule {
    /// `W(i,j) W(i,k) W(j,k)`.
    #[default]
    AllPairs,
    /// `W(i,j) W(i,k)`: only the chooser's own pairs.
    ChooserPairs,
}

/// Where the discount is applied relative to the reinforcement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateOrder {
    /// `W' = (1 - x) W + increments`.
    #[default]
    DecayThenAdd,
    /// `W' = (1 - x) (W + increments)`.
    DecayAfterAdd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Unit,
    /// Unit weights scaled to the stationary total `3N / x`.
    Stationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrioChoice {
    pub chooser: usize,
    /// Sorted member ids, including the chooser.
    pub members: [usize; 3],
}

impl TrioChoice {
    pub fn new(chooser: usize, j: usize, k: usize) -> Self {
        let mut members = [chooser, j, k];
        members.sort_unstable();
        Self { chooser, members }
    }
}

/// Storage slot of the unordered pair `{i, j}`, `i != j`.
#[inline]
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    let (a, b) = if i < j { (i, j) } else { (j, i) };
    a * (2 * n - a - 1) / 2 + (b - a - 1)
}

pub fn pair_count(n: usize) -> usize {
    n * (n - 1) / 2
}

/// Unordered pairs in storage order.
pub fn edge_list(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub n: usize,
    pub x: f64,
    pub t: u64,
    pub rule: TrioRule,
    pub order: UpdateOrder,
    weights: Vec<f64>,
}

impl NetworkState {
    /// Builds a state from the upper triangle of the weight matrix, row by row
    /// (`(0,1), (0,2), ..., (1,2), ...`). `x = 0` is accepted for hand-built states.
    pub fn from_upper(n: usize, x: f64, upper: Vec<f64>) -> Result<Self> {
        if n < 4 {
            return Err(Error::Domain(format!("population must be at least 4, got {n}")));
        }
        if !(0.0..1.0).contains(&x) {
            return Err(Error::Domain(format!("x must lie in [0, 1), got {x}")));
        }
        if upper.len() != pair_count(n) {
            return Err(Error::Domain(format!("expected {} pair weights, got {}", pair_count(n), upper.len())));
        }
        if let Some(w) = upper.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Domain(format!("pair weight {w} is not a finite nonnegative number")));
        }
        Ok(Self { n, x, t: 0, rule: TrioRule::default(), order: UpdateOrder::default(), weights: upper })
    }

    /// Builds a state from a full symmetric matrix with zero diagonal.
    pub fn from_matrix(x: f64, matrix: &[Vec<f64>]) -> Result<Self> {
        let n = matrix.len();
        let mut upper = Vec::with_capacity(pair_count(n));
        for (i, row) in matrix.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Domain("weight matrix is not square".into()));
            }
            if row[i] != 0.0 {
                return Err(Error::Domain(format!("diagonal entry {i} is nonzero")));
            }
            for j in i + 1..n {
                if row[j] != matrix[j][i] {
                    return Err(Error::Domain(format!("weights ({i},{j}) and ({j},{i}) differ")));
                }
                upper.push(row[j]);
            }
        }
        Self::from_upper(n, x, upper)
    }

    pub fn with_rule(mut self, rule: TrioRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn with_order(mut self, order: UpdateOrder) -> Self {
        self.order = order;
        self
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            self.weights[pair_index(self.n, i, j)]
        }
    }

    pub fn set_weight(&mut self, i: usize, j: usize, w: f64) {
        assert!(i != j, "the diagonal is fixed at zero");
        let k = pair_index(self.n, i, j);
        self.weights[k] = w;
    }

    /// Upper-triangle weights in row order.
    pub fn upper(&self) -> &[f64] {
        &self.weights
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.weight(i, j)).collect()).collect()
    }

    /// Unordered total `S_t`.
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn trio_weight(&self, i: usize, j: usize, k: usize) -> f64 {
        let base = self.weight(i, j) * self.weight(i, k);
        match self.rule {
            TrioRule::AllPairs => base * self.weight(j, k),
            TrioRule::ChooserPairs => base,
        }
    }

    pub fn write_matrix_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.matrix() {
            w.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn init_state(n: usize, x: f64, mode: InitMode) -> Result<NetworkState> {
    if n < 4 {
        return Err(Error::Domain(format!("population must be at least 4, got {n}")));
    }
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::Domain(format!("x must lie in (0, 1), got {x}")));
    }
    let w = match mode {
        InitMode::Unit => 1.0,
        InitMode::Stationary => 3.0 * n as f64 / x / pair_count(n) as f64,
    };
    NetworkState::from_upper(n, x, vec![w; pair_count(n)])
}

fn check_agent(state: &NetworkState, i: usize) -> Result<()> {
    if i >= state.n {
        Err(Error::Domain(format!("agent {i} outside 0..{}", state.n)))
    } else {
        Ok(())
    }
}

/// Every trio containing agent `i`, in lexicographic order of the other two
/// members, with its selection probability.
pub fn trio_distribution(state: &NetworkState, i: usize) -> Result<Vec<(TrioChoice, f64)>> {
    check_agent(state, i)?;
    let mut out = Vec::with_capacity(pair_count(state.n - 1));
    for j in (0..state.n).filter(|&j| j != i) {
        for k in (j + 1..state.n).filter(|&k| k != i) {
            out.push((TrioChoice::new(i, j, k), state.trio_weight(i, j, k)));
        }
    }
    let total: f64 = out.iter().map(|(_, w)| w).sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateAgent { agent: i });
    }
    for (_, w) in &mut out {
        *w /= total;
    }
    Ok(out)
}

// Inverse-CDF draw with one uniform; weights need not be normalized.
fn sample_trio<R: Rng + ?Sized>(state: &NetworkState, i: usize, scratch: &mut Vec<(usize, usize, f64)>, rng: &mut R) -> Result<TrioChoice> {
    scratch.clear();
    let mut total = 0.0;
    for j in (0..state.n).filter(|&j| j != i) {
        for k in (j + 1..state.n).filter(|&k| k != i) {
            let w = state.trio_weight(i, j, k);
            total += w;
            scratch.push((j, k, w));
        }
    }
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateAgent { agent: i });
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for &(j, k, w) in scratch.iter() {
        if w > 0.0 {
            acc += w;
            last = Some((j, k));
            if target < acc {
                return Ok(TrioChoice::new(i, j, k));
            }
        }
    }
    let (j, k) = last.expect("positive total implies a positive trio");
    Ok(TrioChoice::new(i, j, k))
}

/// Advances the state in place and fills `choices` with one trio per agent.
/// All agents choose from the pre-step weights.
pub fn step_in_place<R: Rng + ?Sized>(state: &mut NetworkState, choices: &mut Vec<TrioChoice>, rng: &mut R) -> Result<()> {
    let mut scratch = Vec::with_capacity(pair_count(state.n - 1));
    choices.clear();
    for i in 0..state.n {
        choices.push(sample_trio(state, i, &mut scratch, rng)?);
    }
    let keep = 1.0 - state.x;
    if state.order == UpdateOrder::DecayThenAdd {
        state.weights.iter_mut().for_each(|w| *w *= keep);
    }
    let n = state.n;
    for c in choices.iter() {
        let [a, b, d] = c.members;
        for (p, q) in [(a, b), (a, d), (b, d)] {
            state.weights[pair_index(n, p, q)] += 1.0;
        }
    }
    if state.order == UpdateOrder::DecayAfterAdd {
        state.weights.iter_mut().for_each(|w| *w *= keep);
    }
    state.t += 1;
    Ok(())
}

pub fn step<R: Rng + ?Sized>(state: &NetworkState, rng: &mut R) -> Result<(NetworkState, Vec<TrioChoice>)> {
    let mut next = state.clone();
    let mut choices = Vec::with_capacity(state.n);
    step_in_place(&mut next, &mut choices, rng)?;
    Ok((next, choices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::replica_rng;

    #[test]
    fn pair_index_is_a_bijection() {
        for n in 4..9 {
            let mut seen = vec![false; pair_count(n)];
            for i in 0..n {
                for j in i + 1..n {
                    let k = pair_index(n, i, j);
                    assert_eq!(k, pair_index(n, j, i));
                    assert!(!seen[k]);
                    seen[k] = true;
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn initial_totals() {
        assert_eq!(init_state(6, 0.4, InitMode::Unit).unwrap().total(), 15.0);
        assert!((init_state(6, 0.4, InitMode::Stationary).unwrap().total() - 45.0).abs() < 1e-12);
        assert!(matches!(init_state(3, 0.4, InitMode::Unit), Err(Error::Domain(_))));
        assert!(init_state(6, 0.0, InitMode::Unit).is_err());
        let s = init_state(5, 0.3, InitMode::Unit).unwrap();
        let m = s.matrix();
        for (i, row) in m.iter().enumerate() {
            assert_eq!(row[i], 0.0);
            for (j, w) in row.iter().enumerate() {
                assert_eq!(*w, m[j][i]);
            }
        }
    }

    #[test]
    fn uniform_distribution() {
        for (n, count) in [(6, 10), (4, 3)] {
            let s = init_state(n, 0.3, InitMode::Unit).unwrap();
            let d = trio_distribution(&s, 0).unwrap();
            assert_eq!(d.len(), count);
            for (c, p) in d {
                assert!((p - 1.0 / count as f64).abs() < 1e-15);
                assert!(c.members.contains(&0));
            }
        }
    }

    #[test]
    fn weighted_example() {
        let mut s = init_state(4, 0.3, InitMode::Unit).unwrap();
        s.set_weight(0, 1, 2.0);
        let d = trio_distribution(&s, 0).unwrap();
        let probs: Vec<f64> = d.iter().map(|(_, p)| *p).collect();
        assert_eq!(d[0].0.members, [0, 1, 2]);
        assert_eq!(d[1].0.members, [0, 1, 3]);
        assert_eq!(d[2].0.members, [0, 2, 3]);
        for (p, e) in probs.iter().zip([0.4, 0.4, 0.2]) {
            assert!((p - e).abs() < 1e-12);
        }
    }

    #[test]
    fn chooser_rule_ignores_the_far_pair() {
        let mut s = init_state(4, 0.3, InitMode::Unit).unwrap().with_rule(TrioRule::ChooserPairs);
        s.set_weight(1, 2, 5.0);
        let d = trio_distribution(&s, 0).unwrap();
        assert!(d.iter().all(|(_, p)| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn degenerate_agent() {
        let mut s = init_state(4, 0.3, InitMode::Unit).unwrap();
        for j in 1..4 {
            s.set_weight(0, j, 0.0);
        }
        assert!(matches!(trio_distribution(&s, 0), Err(Error::DegenerateAgent { agent: 0 })));
        let mut rng = replica_rng(0, 0);
        assert!(matches!(step(&s, &mut rng), Err(Error::DegenerateAgent { agent: 0 })));
    }

    #[test]
    fn one_step_totals() {
        let mut rng = replica_rng(1, 0);
        let s = init_state(6, 0.4, InitMode::Unit).unwrap();
        let (a, _) = step(&s, &mut rng).unwrap();
        assert!((a.total() - 27.0).abs() < 1e-12);
        let (b, _) = step(&s.clone().with_order(UpdateOrder::DecayAfterAdd), &mut rng).unwrap();
        assert!((b.total() - 19.8).abs() < 1e-12);
    }

    #[test]
    fn no_discount_adds_integers() {
        let mut rng = replica_rng(2, 0);
        let mut s = NetworkState::from_upper(5, 0.0, vec![1.0; 10]).unwrap();
        for _ in 0..20 {
            let (next, _) = step(&s, &mut rng).unwrap();
            for (a, b) in s.upper().iter().zip(next.upper()) {
                assert!(b >= a && (b - a).fract() == 0.0);
            }
            s = next;
        }
    }

    #[test]
    fn matrix_roundtrip() {
        let s = init_state(5, 0.3, InitMode::Stationary).unwrap();
        assert_eq!(NetworkState::from_matrix(0.3, &s.matrix()).unwrap().upper(), s.upper());
        let mut bad = s.matrix();
        bad[0][1] = 7.0;
        assert!(NetworkState::from_matrix(0.3, &bad).is_err());
    }
}
