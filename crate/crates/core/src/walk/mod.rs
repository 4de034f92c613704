//! The one-dimensional discounted walk `W(n+1) = W(n) + x Y(n+1)`, `Y ~ Q_W(n)`,
//! run until it leaves the window `I_x = [a_x, 1 - a_x]`.

mod importance;
mod oracle;
mod urn;

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::increments::IncrementFamily;
use crate::rate::{build_profile, DEFAULT_ROOT_TOL};
use crate::seeding::replica_rng;

pub use importance::{importance_exit, naive_excursions, ExcursionEstimate, ExcursionSample};
pub use oracle::{exact_exit_oracle, BirthDeathChain, MAX_STATES};
pub use urn::{urn_additions, urn_expected_fraction_change, urn_outcome_probabilities, urn_step, UrnOutcomes, UrnState};

/// Tolerance used when comparing a state against the window edges.
pub const EPS: f64 = 1e-12;
pub const MIN_MARGIN: f64 = 0.02;
pub const MAX_STEPS_CAP: u64 = 100_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Walk1DConfig {
    pub family: IncrementFamily,
    pub x: f64,
    pub a_x: f64,
    pub w0: f64,
    pub max_steps: u64,
}

/// `ceil(100 exp(1.5 C / x))`, capped at [`MAX_STEPS_CAP`].
pub fn default_max_steps(c: f64, x: f64) -> u64 {
    let v = (100.0 * (1.5 * c / x).exp()).ceil();
    if v.is_finite() && v < MAX_STEPS_CAP as f64 {
        v as u64
    } else {
        MAX_STEPS_CAP
    }
}

impl Walk1DConfig {
    /// Defaults: `a_x = max(x y_max, 0.02)`, `w0 = 1/2` and the step cap from
    /// [`default_max_steps`].
    pub fn new(family: IncrementFamily, x: f64) -> Result<Self> {
        if !(x > 0.0 && x < 1.0) {
            return Err(Error::Config(format!("x must lie in (0, 1), got {x}")));
        }
        let c = build_profile(&family, 64, DEFAULT_ROOT_TOL)?.c;
        let cfg = Self {
            a_x: (x * family.y_max()).max(MIN_MARGIN),
            w0: 0.5,
            max_steps: default_max_steps(c, x),
            family,
            x,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_a_x(mut self, a_x: f64) -> Self {
        self.a_x = a_x;
        self
    }

    pub fn with_w0(mut self, w0: f64) -> Self {
        self.w0 = w0;
        self
    }

    pub fn with_max_steps(mut self, max_steps: u64) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let Self { x, a_x, w0, .. } = *self;
        if !(x > 0.0 && x < 1.0) {
            return Err(Error::Config(format!("x must lie in (0, 1), got {x}")));
        }
        if !(a_x > 0.0 && a_x < 0.5) {
            return Err(Error::Config(format!("a_x must lie in (0, 1/2), got {a_x}")));
        }
        if a_x < x * self.family.y_max() - EPS {
            return Err(Error::Config(format!(
                "a_x = {a_x} is below x * y_max = {}; a step could leave [0, 1]",
                x * self.family.y_max()
            )));
        }
        if !self.in_window(w0) {
            return Err(Error::Config(format!("w0 = {w0} lies outside [{a_x}, {}]", 1.0 - a_x)));
        }
        Ok(())
    }

    pub fn in_window(&self, w: f64) -> bool {
        w >= self.a_x - EPS && w <= 1.0 - self.a_x + EPS
    }

    fn side_of(&self, w: f64) -> Side {
        if w < 0.5 {
            Side::Low
        } else {
            Side::High
        }
    }
}

/// Walk position. `w` is recomputed as `origin + x * displacement` so that long
/// runs stay on the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Walk1DState {
    pub w: f64,
    pub t: u64,
    pub origin: f64,
    pub displacement: f64,
}

impl Walk1DState {
    pub fn new(w: f64) -> Self {
        Self { w, t: 0, origin: w, displacement: 0.0 }
    }
}

/// One transition of the walk. Fails if `state.w` is outside `I_x`.
pub fn step<R: Rng + ?Sized>(state: &Walk1DState, config: &Walk1DConfig, rng: &mut R) -> Result<Walk1DState> {
    if !config.in_window(state.w) {
        return Err(Error::Contract(format!(
            "step called at w = {} outside [{}, {}]",
            state.w,
            config.a_x,
            1.0 - config.a_x
        )));
    }
    let y = config.family.sample(state.w, rng)?;
    Ok(advance(state, config.x, y))
}

fn advance(state: &Walk1DState, x: f64, y: f64) -> Walk1DState {
    let displacement = state.displacement + y;
    Walk1DState {
        w: (state.origin + x * displacement).clamp(0.0, 1.0),
        t: state.t + 1,
        origin: state.origin,
        displacement,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Low,
    High,
    Censored,
    /// An excursion that came back to (or crossed) 1/2 before exiting.
    Center,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Low => "low",
            Side::High => "high",
            Side::Censored => "censored",
            Side::Center => "center",
        }
    }

    pub fn is_exit(self) -> bool {
        matches!(self, Side::Low | Side::High)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord {
    pub run_id: u64,
    pub tau: u64,
    pub side: Side,
    /// `ln dP/dP~` of the whole path; zero for naive runs.
    pub log_weight: f64,
    pub final_w: f64,
    pub min_w: f64,
    pub max_w: f64,
}

/// Runs one walk from `config.w0` until it leaves `I_x` or hits the step cap.
pub fn run_exit<R: Rng + ?Sized>(config: &Walk1DConfig, rng: &mut R) -> Result<ExitRecord> {
    config.validate()?;
    let mut state = Walk1DState::new(config.w0);
    let (mut lo, mut hi) = (state.w, state.w);
    while state.t < config.max_steps {
        state = step(&state, config, rng)?;
        lo = lo.min(state.w);
        hi = hi.max(state.w);
        if !config.in_window(state.w) {
            return Ok(ExitRecord {
                run_id: 0,
                tau: state.t,
                side: config.side_of(state.w),
                log_weight: 0.0,
                final_w: state.w,
                min_w: lo,
                max_w: hi,
            });
        }
    }
    Ok(ExitRecord {
        run_id: 0,
        tau: state.t,
        side: Side::Censored,
        log_weight: 0.0,
        final_w: state.w,
        min_w: lo,
        max_w: hi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Estimator {
    Naive,
    Tilted { delta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitTimeSummary {
    pub n_runs: u64,
    pub estimator: Estimator,
    pub x: f64,
    #[serde(rename = "mean_T")]
    pub mean_t: f64,
    #[serde(rename = "se_T")]
    pub se_t: f64,
    #[serde(rename = "median_T")]
    pub median_t: f64,
    #[serde(rename = "min_T")]
    pub min_t: u64,
    #[serde(rename = "max_T")]
    pub max_t: u64,
    pub censored: u64,
    /// Every run hit the cap, so `mean_t` is only a lower bound.
    pub all_censored: bool,
    pub seed: u64,
}

impl ExitTimeSummary {
    pub fn from_records(estimator: Estimator, x: f64, seed: u64, records: &[ExitRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Domain("summary of zero runs".into()));
        }
        let n = records.len() as f64;
        let mut taus: Vec<u64> = records.iter().map(|r| r.tau).collect();
        taus.sort_unstable();
        let mean = taus.iter().map(|&t| t as f64).sum::<f64>() / n;
        let se = if records.len() > 1 {
            let ss: f64 = taus.iter().map(|&t| (t as f64 - mean).powi(2)).sum();
            (ss / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        let m = taus.len();
        let median = if m % 2 == 1 {
            taus[m / 2] as f64
        } else {
            0.5 * (taus[m / 2 - 1] as f64 + taus[m / 2] as f64)
        };
        let censored = records.iter().filter(|r| r.side == Side::Censored).count() as u64;
        Ok(Self {
            n_runs: m as u64,
            estimator,
            x,
            mean_t: mean,
            se_t: se,
            median_t: median,
            min_t: taus[0],
            max_t: taus[m - 1],
            censored,
            all_censored: censored == m as u64,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitSample {
    pub summary: ExitTimeSummary,
    pub runs: Vec<ExitRecord>,
}

impl ExitSample {
    pub fn write_runs_csv<W: Write>(&self, out: W) -> Result<()> {
        write_runs_csv(&self.runs, out)
    }
}

pub(crate) fn write_runs_csv<W: Write>(runs: &[ExitRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run_id", "tau", "side", "log_weight"])?;
    for r in runs {
        w.write_record([
            r.run_id.to_string(),
            r.tau.to_string(),
            r.side.as_str().to_string(),
            format!("{:e}", r.log_weight),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `n_runs` independent exits; run `i` uses stream `i` of `master_seed`.
pub fn mc_exit(config: &Walk1DConfig, n_runs: u64, master_seed: u64) -> Result<ExitSample> {
    if n_runs == 0 {
        return Err(Error::Config("n_runs must be at least 1".into()));
    }
    config.validate()?;
    let runs = (0..n_runs)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(master_seed, i);
            run_exit(config, &mut rng).map(|r| ExitRecord { run_id: i, ..r })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = ExitTimeSummary::from_records(Estimator::Naive, config.x, master_seed, &runs)?;
    if summary.all_censored {
        log::warn!("all {n_runs} runs censored at {} steps; mean_T is a lower bound", config.max_steps);
    }
    Ok(ExitSample { summary, runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::replica_rng;

    fn binary() -> IncrementFamily {
        IncrementFamily::binary(0.5).unwrap()
    }

    #[test]
    fn defaults() {
        let cfg = Walk1DConfig::new(binary(), 0.1).unwrap();
        assert_eq!(cfg.a_x, 0.1);
        assert_eq!(cfg.w0, 0.5);
        assert_eq!(cfg.max_steps, (100.0 * (1.5 * 0.26162407 / 0.1f64).exp()).ceil() as u64);
        assert_eq!(Walk1DConfig::new(binary(), 0.01).unwrap().a_x, MIN_MARGIN);
        assert_eq!(default_max_steps(0.26, 1e-4), MAX_STEPS_CAP);
    }

    #[test]
    fn validation() {
        let cfg = Walk1DConfig::new(binary(), 0.1).unwrap();
        assert!(cfg.clone().with_a_x(0.05).validate().is_err());
        assert!(cfg.clone().with_w0(0.05).validate().is_err());
        assert!(cfg.clone().with_w0(0.1).validate().is_ok());
        assert!(Walk1DConfig::new(binary(), 1.0).is_err());
    }

    #[test]
    fn step_moves_by_x() {
        let cfg = Walk1DConfig::new(binary(), 0.05).unwrap();
        let mut rng = replica_rng(1, 0);
        let mut s = Walk1DState::new(0.5);
        for _ in 0..50 {
            let n = step(&s, &cfg, &mut rng).unwrap();
            let d = (n.w - s.w).abs();
            assert!((d - 0.05).abs() < 1e-12);
            assert_eq!(n.t, s.t + 1);
            s = n;
            if !cfg.in_window(s.w) {
                break;
            }
        }
    }

    #[test]
    fn step_outside_window_is_a_contract_error() {
        let cfg = Walk1DConfig::new(binary(), 0.1).unwrap();
        let mut rng = replica_rng(1, 0);
        assert!(matches!(step(&Walk1DState::new(0.05), &cfg, &mut rng), Err(Error::Contract(_))));
    }

    #[test]
    fn mean_increment() {
        let x = 0.05;
        let cfg = Walk1DConfig::new(binary(), x).unwrap();
        let mut rng = replica_rng(7, 0);
        let n = 1_000_000;
        for (w, mu) in [(0.25, 0.25), (0.5, 0.0)] {
            let start = Walk1DState::new(w);
            let sum: f64 = (0..n).map(|_| step(&start, &cfg, &mut rng).unwrap().w - w).sum();
            let var = x * x * (1.0 - mu * mu);
            let sigma = (var / n as f64).sqrt();
            assert!((sum / n as f64 - mu * x).abs() < 4.0 * sigma);
        }
    }

    #[test]
    fn boundary_start_and_zero_cap() {
        let cfg = Walk1DConfig::new(binary(), 0.1).unwrap().with_w0(0.1);
        let mut rng = replica_rng(3, 0);
        assert!(run_exit(&cfg, &mut rng).unwrap().tau >= 1);
        let capped = cfg.with_max_steps(0);
        let r = run_exit(&capped, &mut rng).unwrap();
        assert_eq!((r.tau, r.side), (0, Side::Censored));
    }

    #[test]
    fn exit_records_are_consistent() {
        let cfg = Walk1DConfig::new(binary(), 0.125).unwrap();
        let sample = mc_exit(&cfg, 200, 11).unwrap();
        for r in &sample.runs {
            assert!(r.side.is_exit());
            assert!(!cfg.in_window(r.final_w));
            assert!((0.0..=1.0).contains(&r.min_w) && (0.0..=1.0).contains(&r.max_w));
        }
        let s = &sample.summary;
        assert!(s.min_t as f64 <= s.median_t && s.median_t <= s.max_t as f64);
        assert_eq!(s.censored, 0);
    }

    #[test]
    fn mc_exit_is_deterministic() {
        let cfg = Walk1DConfig::new(binary(), 0.125).unwrap();
        assert_eq!(mc_exit(&cfg, 300, 5).unwrap(), mc_exit(&cfg, 300, 5).unwrap());
        assert_ne!(mc_exit(&cfg, 300, 5).unwrap().summary, mc_exit(&cfg, 300, 6).unwrap().summary);
    }

    #[test]
    fn all_censored_is_flagged() {
        let cfg = Walk1DConfig::new(binary(), 0.05).unwrap().with_max_steps(2);
        let s = mc_exit(&cfg, 10, 1).unwrap().summary;
        assert!(s.all_censored);
        assert_eq!(s.censored, 10);
    }

    #[test]
    fn runs_csv_layout() {
        let cfg = Walk1DConfig::new(binary(), 0.25).unwrap();
        let sample = mc_exit(&cfg, 3, 1).unwrap();
        let mut buf = Vec::new();
        sample.write_runs_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "run_id,tau,side,log_weight");
        assert_eq!(text.lines().count(), 4);
    }
}
