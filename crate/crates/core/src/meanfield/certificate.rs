//! A checkable quadratic Lyapunov certificate near the symmetric point.
//!
//! In stationarity the normalized state moves as `v' = v + x y` with
//! `y = (n/6) A - v`, where `A` counts how many chosen trios contain each edge.
//! With `h = v - c` and the spectral gap `g`, the certificate uses
//! `V(h) = g (r^2 - |h|^2)`: positive at `c`, zero on the sphere of radius `r`
//! and negative outside. Points are checked on the annulus
//! `r / sqrt 2 <= |h| <= r`, the part of the neighborhood where `V <= V(c) / 2`.
//! Each point must satisfy `E V(h') > V(h)`, and for a common
//! `lambda = 2^-k` also `E exp(-lambda (V(h') - V(h))) < 1`, computed by
//! enumerating every joint trio choice of the `N` agents.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::replica_rng;
use crate::triad::{edge_list, pair_count, pair_index, trio_distribution, NetworkState, TrioRule};

use super::{edge_distance, membership, spectrum};

/// Largest number of joint trio outcomes enumerated per grid point.
pub const MAX_LEAVES: u64 = 20_000_000;
pub const MAX_LAMBDA_EXPONENT: u32 = 20;
/// Annulus radii as fractions `sqrt(1/2 + j/8)` of the outer radius.
const RADIUS_STEPS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateConfig {
    pub agents: usize,
    pub x: f64,
    pub radius: f64,
    pub grid_points: usize,
    pub seed: u64,
}

impl CertificateConfig {
    pub fn new(agents: usize, x: f64, radius: f64, grid_points: usize) -> Self {
        Self { agents, x, radius, grid_points, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificatePoint {
    /// Displacement from `c` in normalized coordinates.
    pub h: Vec<f64>,
    pub norm: f64,
    pub v: f64,
    /// Exact `E V(h') - V(h)`.
    pub expected_change: f64,
    /// Smallest `k` with `E exp(-2^-k dV) < 1`, if any up to the cap.
    pub lambda_exponent: Option<u32>,
    /// `E exp(-lambda dV) - 1` at the certificate's common `lambda`.
    pub tilt_excess: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCertificate {
    pub config: CertificateConfig,
    pub n: usize,
    /// Spectral gap `g`; the quadratic form is `Q = g I` on sum-zero vectors.
    pub gap: f64,
    #[serde(rename = "V0")]
    pub v0: f64,
    pub inner_radius: f64,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub grid_checked: usize,
    pub verified: bool,
    /// Index into `points` of the worst point (smallest expected change, or
    /// the first failure).
    pub worst: Option<usize>,
    pub points: Vec<CertificatePoint>,
}

impl LyapunovCertificate {
    pub fn worst_point(&self) -> Option<&CertificatePoint> {
        self.worst.map(|i| &self.points[i])
    }
}

struct Model {
    agents: usize,
    x: f64,
    gap: f64,
    v0: f64,
}

impl Model {
    fn scale(&self) -> f64 {
        self.x * (self.agents - 1) as f64 / 6.0
    }

    fn state(&self, h: &[f64]) -> Result<NetworkState> {
        let v: Vec<f64> = h.iter().map(|d| 1.0 + d).collect();
        if let Some(w) = v.iter().find(|w| !(**w > 0.0)) {
            return Err(Error::Domain(format!("point leaves the state space (weight {w})")));
        }
        Ok(NetworkState::from_upper(self.agents, 0.0, v)?.with_rule(TrioRule::ChooserPairs))
    }

    fn v(&self, h: &[f64]) -> f64 {
        self.v0 - self.gap * norm2(h)
    }

    /// Exact `E V(h') - V(h)` from per-agent means and variances.
    fn expected_change(&self, h: &[f64], state: &NetworkState) -> Result<f64> {
        let probs = membership(state)?;
        let s = self.scale();
        let mut mean_next = 0.0;
        let mut var = 0.0;
        for (e, he) in h.iter().enumerate() {
            let reinf: f64 = probs.iter().map(|p| p[e]).sum();
            let v = 1.0 + he;
            // h + x E y
            let m = he + s * reinf - self.x * v;
            mean_next += m * m;
            var += probs.iter().map(|p| p[e] * (1.0 - p[e])).sum::<f64>();
        }
        let e_norm2 = mean_next + s * s * var;
        Ok(-self.gap * (e_norm2 - norm2(h)))
    }

    /// `E exp(-lambda dV) - 1` by enumerating all joint trio choices.
    fn tilt_excess(&self, h: &[f64], state: &NetworkState, lambda: f64) -> Result<f64> {
        let n = self.agents;
        let s = self.scale();
        // h' = u + s A
        let u: Vec<f64> = h.iter().map(|d| d - self.x * (1.0 + d)).collect();
        let mut levels = Vec::with_capacity(n);
        for i in 0..n {
            let opts: Vec<([usize; 3], f64, f64)> = trio_distribution(state, i)?
                .into_iter()
                .filter(|(_, p)| *p > 0.0)
                .map(|(c, p)| {
                    let [a, b, d] = c.members;
                    let idx = [pair_index(n, a, b), pair_index(n, a, d), pair_index(n, b, d)];
                    (idx, p, idx.iter().map(|&k| u[k]).sum())
                })
                .collect();
            levels.push(opts);
        }
        let leaves: f64 = levels.iter().map(|l| l.len() as f64).product();
        if leaves > MAX_LEAVES as f64 {
            return Err(Error::Size(format!("{leaves:e} joint trio outcomes exceed the budget of {MAX_LEAVES}")));
        }
        let base = norm2(&u) - norm2(h);
        let coef = lambda * self.gap;
        let mut counts = vec![0u32; pair_count(n)];
        let mut acc = 0.0;
        // dV = -g (|h'|^2 - |h|^2) with |h'|^2 = |u|^2 + 2 s u.A + s^2 |A|^2
        let mut visit = |acc: &mut f64, prob: f64, ua: f64, aa: f64| {
            let d = base + 2.0 * s * ua + s * s * aa;
            *acc += prob * (coef * d).exp_m1();
        };
        #[allow(clippy::too_many_arguments)]
        fn walk(
            levels: &[Vec<([usize; 3], f64, f64)>],
            depth: usize,
            counts: &mut [u32],
            prob: f64,
            ua: f64,
            aa: f64,
            acc: &mut f64,
            visit: &mut dyn FnMut(&mut f64, f64, f64, f64),
        ) {
            if depth == levels.len() {
                visit(acc, prob, ua, aa);
                return;
            }
            for (idx, p, du) in &levels[depth] {
                let shared: u32 = idx.iter().map(|&k| counts[k]).sum();
                for &k in idx {
                    counts[k] += 1;
                }
                walk(levels, depth + 1, counts, prob * p, ua + du, aa + 2.0 * shared as f64 + 3.0, acc, visit);
                for &k in idx {
                    counts[k] -= 1;
                }
            }
        }
        walk(&levels, 0, &mut counts, 1.0, 0.0, 0.0, &mut acc, &mut visit);
        Ok(acc)
    }

    fn smallest_exponent(&self, h: &[f64], state: &NetworkState) -> Result<Option<u32>> {
        for k in 0..=MAX_LAMBDA_EXPONENT {
            if self.tilt_excess(h, state, 0.5f64.powi(k as i32))? < 0.0 {
                return Ok(Some(k));
            }
        }
        Ok(None)
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

fn unit_sum_zero(mut v: Vec<f64>) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|a| *a -= mean);
    let norm = norm2(&v).sqrt();
    v.iter_mut().for_each(|a| *a /= norm);
    v
}

fn grid(cfg: &CertificateConfig) -> Vec<Vec<f64>> {
    let edges = edge_list(cfg.agents);
    let radii: Vec<f64> = (0..RADIUS_STEPS)
        .map(|j| cfg.radius * (0.5 + j as f64 / (2.0 * (RADIUS_STEPS - 1) as f64)).sqrt())
        .collect();
    let mut dirs = Vec::new();
    for dist in 0..3 {
        let pattern: Vec<f64> = edges.iter().map(|&f| (edge_distance(edges[0], f) == dist) as u8 as f64).collect();
        let d = unit_sum_zero(pattern);
        dirs.push(d.iter().map(|a| -a).collect());
        dirs.push(d);
    }
    let mut out = Vec::with_capacity(cfg.grid_points);
    'outer: for d in &dirs {
        for r in &radii {
            if out.len() == cfg.grid_points {
                break 'outer;
            }
            out.push(d.iter().map(|a| a * r).collect());
        }
    }
    let mut rng = replica_rng(cfg.seed, 0);
    let mut j = 0;
    while out.len() < cfg.grid_points {
        let g: Vec<f64> = (0..edges.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let r = radii[j % RADIUS_STEPS];
        out.push(unit_sum_zero(g).into_iter().map(|a| a * r).collect());
        j += 1;
    }
    out
}

fn model(cfg: &CertificateConfig) -> Result<Model> {
    if cfg.agents < 5 {
        return Err(Error::Domain(format!("the certificate needs at least 5 agents, got {}", cfg.agents)));
    }
    if !(cfg.x > 0.0 && cfg.x < 1.0) {
        return Err(Error::Config(format!("x must lie in (0, 1), got {}", cfg.x)));
    }
    if !(cfg.radius > 0.0) {
        return Err(Error::Config(format!("radius must be positive, got {}", cfg.radius)));
    }
    if cfg.grid_points == 0 {
        return Err(Error::Config("grid_points must be at least 1".into()));
    }
    let leaves = ((cfg.agents - 1) * (cfg.agents - 2) / 2) as f64;
    if leaves.powi(cfg.agents as i32) > MAX_LEAVES as f64 {
        return Err(Error::Size(format!(
            "{} agents need {:e} joint outcomes per point, above the budget of {MAX_LEAVES}",
            cfg.agents,
            leaves.powi(cfg.agents as i32)
        )));
    }
    let gap = spectrum(cfg.agents - 1)?.spectral_gap();
    Ok(Model { agents: cfg.agents, x: cfg.x, gap, v0: gap * cfg.radius * cfg.radius })
}

/// Exact `E V(h') - V(h)` for the certificate's quadratic at displacement `h`.
pub fn one_step_change(cfg: &CertificateConfig, h: &[f64]) -> Result<f64> {
    let m = model(cfg)?;
    if h.len() != pair_count(cfg.agents) {
        return Err(Error::Domain(format!("expected {} edge coordinates", pair_count(cfg.agents))));
    }
    m.expected_change(h, &m.state(h)?)
}

fn evaluate(m: &Model, h: Vec<f64>) -> CertificatePoint {
    let norm = norm2(&h).sqrt();
    let v = m.v(&h);
    let mut p = CertificatePoint {
        h,
        norm,
        v,
        expected_change: f64::NAN,
        lambda_exponent: None,
        tilt_excess: None,
        failure: None,
    };
    let state = match m.state(&p.h) {
        Ok(s) => s,
        Err(e) => {
            p.failure = Some(e.to_string());
            return p;
        }
    };
    match m.expected_change(&p.h, &state) {
        Ok(c) => p.expected_change = c,
        Err(e) => {
            p.failure = Some(e.to_string());
            return p;
        }
    }
    if !(p.expected_change > 0.0) {
        p.failure = Some(format!("expected change of V is {:e}", p.expected_change));
        return p;
    }
    match m.smallest_exponent(&p.h, &state) {
        Ok(Some(k)) => p.lambda_exponent = Some(k),
        Ok(None) => p.failure = Some(format!("no lambda down to 2^-{MAX_LAMBDA_EXPONENT}")),
        Err(e) => p.failure = Some(e.to_string()),
    }
    p
}

pub fn lyapunov_certificate(cfg: &CertificateConfig) -> Result<LyapunovCertificate> {
    let m = model(cfg)?;
    let mut points: Vec<CertificatePoint> = grid(cfg).into_par_iter().map(|h| evaluate(&m, h)).collect();
    let all_ok = points.iter().all(|p| p.failure.is_none());
    let lambda = if all_ok {
        points.iter().filter_map(|p| p.lambda_exponent).max().map(|k| 0.5f64.powi(k as i32))
    } else {
        None
    };
    if let Some(l) = lambda {
        let excess: Vec<Result<f64>> = points
            .par_iter()
            .map(|p| m.tilt_excess(&p.h, &m.state(&p.h)?, l))
            .collect();
        for (p, e) in points.iter_mut().zip(excess) {
            let e = e?;
            p.tilt_excess = Some(e);
            if !(e < 0.0) {
                p.failure = Some(format!("E exp(-lambda dV) - 1 = {e:e} at the common lambda"));
            }
        }
    }
    let worst = points.iter().position(|p| p.failure.is_some()).or_else(|| {
        points
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.expected_change.total_cmp(&b.1.expected_change))
            .map(|(i, _)| i)
    });
    let verified = lambda.is_some() && points.iter().all(|p| p.failure.is_none());
    Ok(LyapunovCertificate {
        config: cfg.clone(),
        n: cfg.agents - 1,
        gap: m.gap,
        v0: m.v0,
        inner_radius: cfg.radius / 2f64.sqrt(),
        lambda: if verified { lambda } else { None },
        gamma: if verified { lambda.map(|l| l * m.v0 / 4.0) } else { None },
        grid_checked: points.len(),
        verified,
        worst,
        points,
    })
}

/// Re-evaluates every stored point from scratch and confirms each inequality
/// the certificate claims.
pub fn recheck(cert: &LyapunovCertificate) -> Result<bool> {
    let Some(lambda) = cert.lambda.filter(|_| cert.verified) else {
        return Ok(false);
    };
    let m = model(&cert.config)?;
    let ok = cert
        .points
        .par_iter()
        .map(|p| {
            let state = m.state(&p.h)?;
            Ok(m.expected_change(&p.h, &state)? > 0.0 && m.tilt_excess(&p.h, &state, lambda)? < 0.0)
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(ok.into_iter().all(|b| b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_lies_on_the_annulus() {
        let cfg = CertificateConfig::new(6, 0.01, 0.3, 60);
        let g = grid(&cfg);
        assert_eq!(g.len(), 60);
        for h in &g {
            let r = norm2(h).sqrt();
            assert!(r <= 0.3 + 1e-12 && r >= 0.3 / 2f64.sqrt() - 1e-12);
            assert!(h.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn expected_change_matches_enumeration() {
        // The derivative of E exp(-lambda dV) at 0 is -E dV; compare with a
        // small-lambda difference quotient of the full enumeration.
        let cfg = CertificateConfig::new(5, 0.05, 0.3, 1);
        let m = model(&cfg).unwrap();
        let h = grid(&cfg).pop().unwrap();
        let s = m.state(&h).unwrap();
        let exact = m.expected_change(&h, &s).unwrap();
        let lam = 1e-6;
        let fd = -m.tilt_excess(&h, &s, lam).unwrap() / lam;
        assert!((fd - exact).abs() < 1e-6 * exact.abs().max(1e-3), "{fd} vs {exact}");
    }

    #[test]
    fn centre_loses_value() {
        let cfg = CertificateConfig::new(6, 0.05, 0.02, 1);
        assert!(one_step_change(&cfg, &[0.0; 15]).unwrap() < 0.0);
    }

    #[test]
    fn large_radius_fails_with_a_worst_point() {
        let cert = lyapunov_certificate(&CertificateConfig::new(5, 0.05, 3.0, 20)).unwrap();
        assert!(!cert.verified);
        assert!(cert.worst_point().unwrap().failure.is_some());
        assert!(cert.gamma.is_none());
    }

    #[test]
    fn verifies_where_noise_is_small() {
        let cert = lyapunov_certificate(&CertificateConfig::new(5, 0.001, 0.25, 40)).unwrap();
        assert!(cert.verified);
        let lambda = cert.lambda.unwrap();
        assert!(lambda > 0.0);
        assert!((cert.gamma.unwrap() - lambda * cert.v0 / 4.0).abs() < 1e-15);
        assert!(cert.points.iter().all(|p| p.expected_change > 0.0 && p.tilt_excess.unwrap() < 0.0));
        assert!(recheck(&cert).unwrap());
    }

    #[test]
    fn budget_guard() {
        assert!(matches!(lyapunov_certificate(&CertificateConfig::new(7, 0.01, 0.2, 1)), Err(Error::Size(_))));
    }
}
