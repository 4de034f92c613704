//! Mean motion of Three's Company near the symmetric point.
//!
//! Edge vectors are indexed in [`edge_list`] order. The normalized state puts
//! the total weight at `C(N,2)`, so the symmetric point `c` is the all-ones
//! vector, and `n = N - 1` throughout.

mod certificate;

use std::io::Write;

use nalgebra::Matrix3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::replica_rng;
use crate::triad::{edge_list, pair_count, pair_index, step, trio_distribution, NetworkState};

pub use certificate::{
    lyapunov_certificate, one_step_change, recheck, CertificateConfig, CertificatePoint, LyapunovCertificate,
    MAX_LEAVES,
};

pub const MAX_EXACT_AGENTS: usize = 10;
pub const MIN_MC_REPLICATES: u64 = 1000;

/// Expected one-step motion at a state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftField {
    pub n: usize,
    /// Normalized evaluation point (sums to `C(N,2)`).
    pub at: Vec<f64>,
    /// Expected number of agents whose trio contains each edge.
    pub reinforcement: Vec<f64>,
    /// Expected displacement of the normalized state over one step.
    pub value: Vec<f64>,
}

impl DriftField {
    /// `reinforcement - 6/n`, per edge.
    pub fn excess(&self) -> Vec<f64> {
        let base = 6.0 / self.n as f64;
        self.reinforcement.iter().map(|r| r - base).collect()
    }
}

fn normalized(state: &NetworkState) -> Vec<f64> {
    let scale = pair_count(state.n) as f64 / state.total();
    state.upper().iter().map(|w| w * scale).collect()
}

fn displacement(state: &NetworkState, reinforcement: &[f64]) -> Vec<f64> {
    let p = pair_count(state.n) as f64;
    let s = state.total();
    let s_next = (1.0 - state.x) * s + 3.0 * state.n as f64;
    state
        .upper()
        .iter()
        .zip(reinforcement)
        .map(|(w, r)| p * ((1.0 - state.x) * w + r) / s_next - p * w / s)
        .collect()
}

/// Per-agent probabilities that each edge lies in the agent's trio.
pub(crate) fn membership(state: &NetworkState) -> Result<Vec<Vec<f64>>> {
    let n = state.n;
    (0..n)
        .map(|i| {
            let mut p = vec![0.0; pair_count(n)];
            for (c, q) in trio_distribution(state, i)? {
                let [a, b, d] = c.members;
                for (u, v) in [(a, b), (a, d), (b, d)] {
                    p[pair_index(n, u, v)] += q;
                }
            }
            Ok(p)
        })
        .collect()
}

/// Exact drift by enumerating every agent's trio distribution.
pub fn drift(state: &NetworkState) -> Result<DriftField> {
    if state.n > MAX_EXACT_AGENTS {
        return Err(Error::Size(format!(
            "exact drift enumerates trios for at most {MAX_EXACT_AGENTS} agents, got {}; use mc_drift",
            state.n
        )));
    }
    let mut reinforcement = vec![0.0; pair_count(state.n)];
    for p in membership(state)? {
        reinforcement.iter_mut().zip(p).for_each(|(r, q)| *r += q);
    }
    Ok(DriftField {
        n: state.n - 1,
        at: normalized(state),
        value: displacement(state, &reinforcement),
        reinforcement,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEstimate {
    pub field: DriftField,
    pub reinforcement_se: Vec<f64>,
    pub value_se: Vec<f64>,
    pub replicates: u64,
}

const MC_CHUNKS: u64 = 64;

/// Monte Carlo drift from `replicates` independent single steps.
pub fn mc_drift<R: Rng + ?Sized>(state: &NetworkState, replicates: u64, rng: &mut R) -> Result<DriftEstimate> {
    if replicates < MIN_MC_REPLICATES {
        return Err(Error::Config(format!("mc_drift needs at least {MIN_MC_REPLICATES} replicates, got {replicates}")));
    }
    let seed: u64 = rng.random();
    let m = pair_count(state.n);
    let chunk = replicates.div_ceil(MC_CHUNKS);
    let partial = (0..MC_CHUNKS)
        .into_par_iter()
        .map(|c| {
            let lo = c * chunk;
            let hi = ((c + 1) * chunk).min(replicates);
            let mut rng = replica_rng(seed, c);
            let (mut s1, mut s2) = (vec![0.0; m], vec![0.0; m]);
            let mut counts = vec![0.0; m];
            for _ in lo..hi {
                let (_, choices) = step(state, &mut rng)?;
                counts.iter_mut().for_each(|v| *v = 0.0);
                for ch in &choices {
                    let [a, b, d] = ch.members;
                    for (u, v) in [(a, b), (a, d), (b, d)] {
                        counts[pair_index(state.n, u, v)] += 1.0;
                    }
                }
                for e in 0..m {
                    s1[e] += counts[e];
                    s2[e] += counts[e] * counts[e];
                }
            }
            Ok((s1, s2))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut s1, mut s2) = (vec![0.0; m], vec![0.0; m]);
    for (a, b) in partial {
        for e in 0..m {
            s1[e] += a[e];
            s2[e] += b[e];
        }
    }
    let k = replicates as f64;
    let mean: Vec<f64> = s1.iter().map(|s| s / k).collect();
    let se: Vec<f64> = s2
        .iter()
        .zip(&mean)
        .map(|(q, mu)| ((q / k - mu * mu).max(0.0) * k / (k - 1.0) / k).sqrt())
        .collect();
    let p = m as f64;
    let s_next = (1.0 - state.x) * state.total() + 3.0 * state.n as f64;
    Ok(DriftEstimate {
        value_se: se.iter().map(|v| p * v / s_next).collect(),
        field: DriftField {
            n: state.n - 1,
            at: normalized(state),
            value: displacement(state, &mean),
            reinforcement: mean,
        },
        reinforcement_se: se,
        replicates,
    })
}

/// Edge distance classes relative to `e`: 0 for `e` itself, 1 for edges
/// sharing one endpoint, 2 for disjoint edges.
pub fn edge_distance(e: (usize, usize), f: (usize, usize)) -> usize {
    let shared = [f.0, f.1].iter().filter(|v| **v == e.0 || **v == e.1).count();
    2 - shared
}

pub fn edge_distances(agents: usize, e: (usize, usize)) -> Vec<usize> {
    edge_list(agents).into_iter().map(|f| edge_distance(e, f)).collect()
}

/// `(B0, B1, B2)`.
pub fn bj_coefficients(n: usize) -> Result<(f64, f64, f64)> {
    if n < 3 {
        return Err(Error::Domain(format!("B_j coefficients need n >= 3, got {n}")));
    }
    let nf = n as f64;
    Ok((2.0 * (nf - 2.0) / (3.0 * nf), 0.0, -4.0 / (3.0 * nf * (nf - 1.0))))
}

fn choose2(k: f64) -> f64 {
    k * (k - 1.0) / 2.0
}

/// The reduced action on `(a2, a1, a0)`, the coefficients of `H2 = 1_e`, of the
/// sum over edges touching `e` and of the sum over edges disjoint from `e`.
pub fn reduced_matrix(n: usize) -> Result<Matrix3<f64>> {
    if n < 4 {
        return Err(Error::Domain(format!("reduced matrix needs n >= 4, got {n}")));
    }
    let nf = n as f64;
    let pre = 4.0 / (3.0 * nf * (nf - 1.0));
    let (a, b) = (choose2(nf - 1.0), choose2(nf - 2.0));
    Ok(pre
        * Matrix3::new(
            a, 0.0, -1.0, //
            0.0, b, -2.0 * (nf - 3.0), //
            -a, -b, 2.0 * nf - 5.0,
        ))
}

/// The closed-form eigenvalues `[0, mu2, mu3]`.
pub fn closed_form_eigenvalues(n: usize) -> [f64; 3] {
    let nf = n as f64;
    [
        0.0,
        2.0 / 3.0 * (nf + 1.0) * (nf - 2.0) / (nf * (nf - 1.0)),
        2.0 / 3.0 * (nf - 3.0) / (nf - 1.0),
    ]
}

/// Left eigenvectors matching [`closed_form_eigenvalues`].
pub fn closed_form_left_eigenvectors(n: usize) -> [[f64; 3]; 3] {
    let nf = n as f64;
    [
        [1.0, 1.0, 1.0],
        [(nf - 1.0) / 2.0, (nf - 3.0) / 4.0, -1.0],
        [choose2(nf - 1.0), -(nf - 2.0) / 2.0, 1.0],
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldLinearization {
    pub n: usize,
    #[serde(rename = "B0")]
    pub b0: f64,
    #[serde(rename = "B1")]
    pub b1: f64,
    #[serde(rename = "B2")]
    pub b2: f64,
    pub reduced: [[f64; 3]; 3],
    pub eigenvalues: [f64; 3],
    /// Eigenvalues of `reduced` from a numeric solver, ascending.
    pub numeric_eigenvalues: [f64; 3],
    pub eigenvalue_discrepancy: f64,
    pub left_eigenvectors: [[f64; 3]; 3],
    /// `max |v R - mu v|` for each left eigenvector.
    pub left_residuals: [f64; 3],
    pub attracting: bool,
}

impl MeanFieldLinearization {
    /// `1 - max(mu2, mu3)`.
    pub fn spectral_gap(&self) -> f64 {
        1.0 - self.eigenvalues[1].max(self.eigenvalues[2])
    }
}

pub fn spectrum(n: usize) -> Result<MeanFieldLinearization> {
    let r = reduced_matrix(n)?;
    let (b0, b1, b2) = bj_coefficients(n)?;
    let eigenvalues = closed_form_eigenvalues(n);
    let numeric = r.complex_eigenvalues();
    if let Some(z) = numeric.iter().find(|z| z.im.abs() > 1e-9) {
        return Err(Error::Numerical(format!("reduced matrix has a complex eigenvalue {z}")));
    }
    let mut num = [numeric[0].re, numeric[1].re, numeric[2].re];
    num.sort_by(f64::total_cmp);
    let mut expect = eigenvalues;
    expect.sort_by(f64::total_cmp);
    let discrepancy = num.iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let vecs = closed_form_left_eigenvectors(n);
    let mut residuals = [0.0; 3];
    for k in 0..3 {
        let v = nalgebra::RowVector3::from_row_slice(&vecs[k]);
        let d = v * r - v * eigenvalues[k];
        residuals[k] = d.amax();
    }
    let mut reduced = [[0.0; 3]; 3];
    for (i, row) in reduced.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = r[(i, j)];
        }
    }
    Ok(MeanFieldLinearization {
        n,
        b0,
        b1,
        b2,
        reduced,
        eigenvalues,
        numeric_eigenvalues: num,
        eigenvalue_discrepancy: discrepancy,
        left_eigenvectors: vecs,
        left_residuals: residuals,
        attracting: eigenvalues[1] < 1.0 && eigenvalues[2] < 1.0,
    })
}

/// Closed-form attractivity for every `n` in `4..=n_max`; returns the first
/// failing `n`, if any.
pub fn attractivity_scan(n_max: usize) -> Option<usize> {
    (4..=n_max).find(|&n| {
        let [_, a, b] = closed_form_eigenvalues(n);
        !(a < 1.0 && b < 1.0)
    })
}

/// CSV rows `n, lambda2, lambda3, attracting` from numeric and closed-form checks.
pub fn write_spectrum_scan<W: Write>(ns: impl IntoIterator<Item = usize>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "lambda2", "lambda3", "attracting"])?;
    for n in ns {
        let s = spectrum(n)?;
        w.write_record([
            n.to_string(),
            format!("{:.17e}", s.eigenvalues[1]),
            format!("{:.17e}", s.eigenvalues[2]),
            s.attracting.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triad::{init_state, InitMode, TrioRule};

    fn chooser(n: usize) -> NetworkState {
        init_state(n, 0.1, InitMode::Unit).unwrap().with_rule(TrioRule::ChooserPairs)
    }

    #[test]
    fn symmetric_point_is_fixed() {
        for agents in 4..=8 {
            for rule in [TrioRule::AllPairs, TrioRule::ChooserPairs] {
                let d = drift(&init_state(agents, 0.1, InitMode::Unit).unwrap().with_rule(rule)).unwrap();
                let six_n = 6.0 / (agents - 1) as f64;
                assert!(d.value.iter().all(|v| v.abs() < 1e-12));
                assert!(d.reinforcement.iter().all(|r| (r - six_n).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn displacement_sums_to_zero() {
        let mut s = chooser(6);
        s.set_weight(0, 1, 3.0);
        s.set_weight(2, 5, 0.2);
        let d = drift(&s).unwrap();
        assert!(d.value.iter().sum::<f64>().abs() < 1e-12);
        assert!((d.at.iter().sum::<f64>() - 15.0).abs() < 1e-12);
    }

    #[test]
    fn chooser_rule_reproduces_b_pattern() {
        let agents = 6;
        let n = agents - 1;
        let (b0, _, b2) = bj_coefficients(n).unwrap();
        let dist = edge_distances(agents, (0, 1));
        let mut residuals = Vec::new();
        for eps in [0.01, 0.005] {
            let mut s = chooser(agents);
            s.set_weight(0, 1, 1.0 + eps);
            let ex = drift(&s).unwrap().excess();
            let six_n = 6.0 / n as f64;
            let mut r = [0.0f64; 3];
            for (e, d) in dist.iter().enumerate() {
                let predicted = six_n * [b0, 0.0, b2][*d] * eps;
                r[*d] = r[*d].max((ex[e] - predicted).abs());
            }
            assert!(r[1] < 1e-12);
            assert!(r[0] < 10.0 * eps * eps && r[2] < 10.0 * eps * eps);
            residuals.push(r);
        }
        for d in [0, 2] {
            let ratio = residuals[0][d] / residuals[1][d];
            assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn hand_computed_self_reinforcement() {
        // 2(n-1)(1+eps)/(C(n,2)+(n-1)eps) + (n-1)/C(n,2)
        let (agents, eps) = (7usize, 0.3);
        let n = (agents - 1) as f64;
        let mut s = chooser(agents);
        s.set_weight(2, 4, 1.0 + eps);
        let d = drift(&s).unwrap();
        let cn2 = n * (n - 1.0) / 2.0;
        let expect = 2.0 * (n - 1.0) * (1.0 + eps) / (cn2 + (n - 1.0) * eps) + (n - 1.0) / cn2;
        assert!((d.reinforcement[pair_index(agents, 2, 4)] - expect).abs() < 1e-12);
    }

    #[test]
    fn drift_size_limit() {
        assert!(matches!(drift(&chooser(11)), Err(Error::Size(_))));
    }

    #[test]
    fn coefficients() {
        let (b0, b1, b2) = bj_coefficients(5).unwrap();
        assert!((b0 - 0.4).abs() < 1e-15 && b1 == 0.0 && (b2 + 1.0 / 15.0).abs() < 1e-15);
        let (b0, _, b2) = bj_coefficients(3).unwrap();
        assert!((b0 - 2.0 / 9.0).abs() < 1e-15 && (b2 + 2.0 / 9.0).abs() < 1e-15);
        assert!(bj_coefficients(2).is_err());
        assert!(reduced_matrix(3).is_err());
    }

    #[test]
    fn n5_left_eigenvectors() {
        let r = reduced_matrix(5).unwrap();
        let ones = nalgebra::RowVector3::new(1.0, 1.0, 1.0) * r;
        assert!(ones.amax() < 1e-12);
        let v = nalgebra::RowVector3::new(2.0, 0.5, -1.0);
        assert!((v * r - 0.6 * v).amax() < 1e-12);
        let v = nalgebra::RowVector3::new(6.0, -1.5, 1.0);
        assert!((v * r - v / 3.0).amax() < 1e-12);
    }

    #[test]
    fn spectra() {
        let s = spectrum(5).unwrap();
        assert!((s.eigenvalues[1] - 0.6).abs() < 1e-15 && (s.eigenvalues[2] - 1.0 / 3.0).abs() < 1e-15);
        assert!(s.attracting);
        let s = spectrum(4).unwrap();
        assert!((s.eigenvalues[1] - 5.0 / 9.0).abs() < 1e-15 && (s.eigenvalues[2] - 2.0 / 9.0).abs() < 1e-15);
        for n in 4..=40 {
            let s = spectrum(n).unwrap();
            assert!(s.eigenvalue_discrepancy < 1e-9, "n = {n}");
            assert!(s.left_residuals.iter().all(|r| *r < 1e-12), "n = {n}");
            assert!(s.attracting);
        }
        assert_eq!(attractivity_scan(10_000), None);
    }

    #[test]
    fn edge_space_matrix_has_the_same_spectrum() {
        // Edge-space M: B0 on the diagonal, B2 on disjoint pairs, symmetric.
        for agents in 5..=8 {
            let n = agents - 1;
            let (b0, _, b2) = bj_coefficients(n).unwrap();
            let edges = edge_list(agents);
            let m = edges.len();
            let mat = nalgebra::DMatrix::from_fn(m, m, |i, j| match edge_distance(edges[i], edges[j]) {
                0 => b0,
                2 => b2,
                _ => 0.0,
            });
            let mut ev: Vec<f64> = mat.symmetric_eigenvalues().iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            let cf = closed_form_eigenvalues(n);
            for v in ev {
                assert!(cf.iter().any(|c| (c - v).abs() < 1e-9), "n = {n}: {v}");
            }
        }
    }

    #[test]
    fn mc_agrees_with_exact() {
        let mut s = chooser(6);
        s.set_weight(0, 1, 1.5);
        let exact = drift(&s).unwrap();
        let mut rng = replica_rng(5, 0);
        let est = mc_drift(&s, 200_000, &mut rng).unwrap();
        for e in 0..exact.reinforcement.len() {
            let z = (est.field.reinforcement[e] - exact.reinforcement[e]) / est.reinforcement_se[e];
            assert!(z.abs() < 4.0, "edge {e}: z = {z}");
        }
        assert!(mc_drift(&s, 10, &mut rng).is_err());
    }

    #[test]
    fn scan_csv() {
        let mut buf = Vec::new();
        write_spectrum_scan(4..=6, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("n,lambda2,lambda3,attracting"));
    }
}
