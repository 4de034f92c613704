//! Excursion sampling under the tilted kernel.
//!
//! An excursion starts at `w0`, and ends when the walk leaves `I_x`, returns
//! to (or crosses) 1/2, or reaches the step cap. Its weight is the exact
//! likelihood ratio of the path under the untilted law, so the weighted exit
//! indicator is unbiased for the naive exit probability per excursion.

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rate::{tilt_kernel, RateProfile, EXP_GUARD};
use crate::seeding::replica_rng;

use super::{advance, Estimator, ExitRecord, ExitTimeSummary, Side, Walk1DConfig, Walk1DState, EPS};

/// Fraction of discarded runs above which a warning is logged.
pub const DISCARD_WARN_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcursionEstimate {
    pub estimator: Estimator,
    pub n_runs: u64,
    pub discarded: u64,
    pub exit_probability: f64,
    pub se: f64,
    pub relative_se: f64,
    /// Kish effective sample size of the weighted exit indicators.
    pub ess: f64,
    pub total_steps: u64,
}

impl ExcursionEstimate {
    /// Relative standard error rescaled to a budget of `steps` simulated transitions.
    pub fn rse_at_budget(&self, steps: u64) -> f64 {
        self.relative_se * (self.total_steps as f64 / steps as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcursionSample {
    pub summary: ExitTimeSummary,
    pub estimate: ExcursionEstimate,
    pub runs: Vec<ExitRecord>,
}

impl ExcursionSample {
    pub fn write_runs_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        super::write_runs_csv(&self.runs, out)
    }
}

fn sign(v: f64) -> i8 {
    if v > EPS {
        1
    } else if v < -EPS {
        -1
    } else {
        0
    }
}

fn excursion<R: Rng + ?Sized>(
    config: &Walk1DConfig,
    tilt: Option<(&RateProfile, f64)>,
    run_id: u64,
    rng: &mut R,
) -> Result<ExitRecord> {
    let mut state = Walk1DState::new(config.w0);
    let mut side_sign = sign(config.w0 - 0.5);
    let mut log_weight = 0.0;
    let (mut lo, mut hi) = (state.w, state.w);
    let mut end = Side::Censored;
    while state.t < config.max_steps {
        let y = match tilt {
            Some((profile, delta)) => {
                let kernel = tilt_kernel(&config.family, profile, state.w, config.x, delta)?;
                let y = kernel.atoms.sample(rng);
                log_weight += kernel.log_likelihood_ratio(y).expect("sampled offset is an atom");
                y
            }
            None => config.family.atoms(state.w)?.sample(rng),
        };
        state = advance(&state, config.x, y);
        lo = lo.min(state.w);
        hi = hi.max(state.w);
        if !config.in_window(state.w) {
            end = config.side_of(state.w);
            break;
        }
        let s = sign(state.w - 0.5);
        if s == 0 || (side_sign != 0 && s != side_sign) {
            end = Side::Center;
            break;
        }
        side_sign = s;
    }
    Ok(ExitRecord { run_id, tau: state.t, side: end, log_weight, final_w: state.w, min_w: lo, max_w: hi })
}

fn sample(
    config: &Walk1DConfig,
    tilt: Option<(&RateProfile, f64)>,
    n_runs: u64,
    master_seed: u64,
) -> Result<ExcursionSample> {
    if n_runs == 0 {
        return Err(Error::Config("n_runs must be at least 1".into()));
    }
    config.validate()?;
    let runs = (0..n_runs)
        .into_par_iter()
        .map(|i| excursion(config, tilt, i, &mut replica_rng(master_seed, i)))
        .collect::<Result<Vec<_>>>()?;
    let estimator = match tilt {
        Some((_, delta)) => Estimator::Tilted { delta },
        None => Estimator::Naive,
    };
    let summary = ExitTimeSummary::from_records(estimator, config.x, master_seed, &runs)?;

    let mut values = Vec::with_capacity(runs.len());
    let mut discarded = 0u64;
    for r in &runs {
        if !r.log_weight.is_finite() || r.log_weight > EXP_GUARD {
            discarded += 1;
            continue;
        }
        values.push(if r.side.is_exit() { r.log_weight.exp() } else { 0.0 });
    }
    if discarded as f64 > DISCARD_WARN_FRACTION * n_runs as f64 {
        warn!("{discarded} of {n_runs} excursions discarded for likelihood-ratio overflow");
    }
    let k = values.len() as f64;
    let (mean, se, ess) = if values.is_empty() {
        (f64::NAN, f64::NAN, 0.0)
    } else {
        let mean = values.iter().sum::<f64>() / k;
        let se = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
        } else {
            0.0
        };
        let s2: f64 = values.iter().map(|v| v * v).sum();
        let ess = if s2 > 0.0 { (mean * k).powi(2) / s2 } else { 0.0 };
        (mean, se, ess)
    };
    let estimate = ExcursionEstimate {
        estimator,
        n_runs,
        discarded,
        exit_probability: mean,
        se,
        relative_se: if mean > 0.0 { se / mean } else { f64::INFINITY },
        ess,
        total_steps: runs.iter().map(|r| r.tau).sum(),
    };
    Ok(ExcursionSample { summary, estimate, runs })
}

/// Excursions under the untilted law.
pub fn naive_excursions(config: &Walk1DConfig, n_runs: u64, master_seed: u64) -> Result<ExcursionSample> {
    sample(config, None, n_runs, master_seed)
}

/// Excursions under the tilted kernel with parameter `delta`, weighted back to
/// the untilted law. `delta = -1` is the identity tilt.
pub fn importance_exit(
    config: &Walk1DConfig,
    profile: &RateProfile,
    delta: f64,
    n_runs: u64,
    master_seed: u64,
) -> Result<ExcursionSample> {
    if !profile.matches(&config.family) {
        return Err(Error::Config(format!(
            "profile was built for {} {:?}, walk uses {} {:?}",
            profile.family_id,
            profile.parameters,
            config.family.id(),
            config.family.parameters()
        )));
    }
    if !(delta >= -1.0) || !delta.is_finite() {
        return Err(Error::Domain(format!("delta must be >= -1, got {delta}")));
    }
    sample(config, Some((profile, delta)), n_runs, master_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::increments::IncrementFamily;
    use crate::rate::{build_profile, DEFAULT_GRID_SIZE, DEFAULT_ROOT_TOL};

    fn setup(x: f64) -> (Walk1DConfig, RateProfile) {
        let fam = IncrementFamily::binary(0.5).unwrap();
        let profile = build_profile(&fam, DEFAULT_GRID_SIZE, DEFAULT_ROOT_TOL).unwrap();
        (Walk1DConfig::new(fam, x).unwrap(), profile)
    }

    #[test]
    fn identity_tilt_reproduces_naive() {
        let (cfg, profile) = setup(1.0 / 6.0);
        let naive = naive_excursions(&cfg, 500, 4).unwrap();
        let ident = importance_exit(&cfg, &profile, -1.0, 500, 4).unwrap();
        assert!(ident.runs.iter().all(|r| r.log_weight == 0.0));
        for (a, b) in naive.runs.iter().zip(&ident.runs) {
            assert_eq!((a.tau, a.side, a.final_w), (b.tau, b.side, b.final_w));
        }
        assert_eq!(naive.estimate.exit_probability, ident.estimate.exit_probability);
        assert_eq!(naive.estimate.se, ident.estimate.se);
    }

    #[test]
    fn excursions_end_where_expected() {
        let (cfg, profile) = setup(0.125);
        let s = importance_exit(&cfg, &profile, 0.5, 400, 9).unwrap();
        for r in &s.runs {
            match r.side {
                Side::Low | Side::High => assert!(!cfg.in_window(r.final_w)),
                Side::Center => assert!((r.final_w - 0.5).abs() < 1e-9),
                Side::Censored => panic!("no censoring expected"),
            }
        }
        assert!(s.estimate.ess > 0.0 && s.estimate.ess <= 400.0);
    }

    #[test]
    fn tilting_raises_exit_frequency() {
        let (cfg, profile) = setup(0.125);
        let naive = naive_excursions(&cfg, 2000, 2).unwrap();
        let tilted = importance_exit(&cfg, &profile, 0.5, 2000, 2).unwrap();
        let count = |s: &ExcursionSample| s.runs.iter().filter(|r| r.side.is_exit()).count();
        assert!(count(&tilted) > 3 * count(&naive));
    }

    #[test]
    fn profile_must_match() {
        let (cfg, _) = setup(0.125);
        let other = build_profile(&IncrementFamily::binary(0.25).unwrap(), 64, 1e-10).unwrap();
        assert!(matches!(importance_exit(&cfg, &other, 0.2, 10, 1), Err(Error::Config(_))));
    }
}
