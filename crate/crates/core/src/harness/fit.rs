//! Weighted least-squares fit of `log mean_T` against `1/x`.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rate::RateProfile;
use crate::walk::ExitTimeSummary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub x: f64,
    #[serde(rename = "mean_T")]
    pub mean_t: f64,
    #[serde(rename = "se_T")]
    pub se_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFitReport {
    /// Points used in the fit, by descending `x`.
    pub points: Vec<FitPoint>,
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    #[serde(rename = "reference_C")]
    pub reference_c: f64,
    /// `x` values of partially censored summaries left out of the fit.
    pub excluded: Vec<f64>,
    /// Whether the fit used weights `(mean_T / se_T)^2`; false when some
    /// summary has a zero standard error.
    pub weighted: bool,
}

/// Fits `log mean_T = intercept + slope / x`, weighting each point by its
/// inverse squared relative standard error.
pub fn fit_rate(summaries: &[ExitTimeSummary], profile: &RateProfile) -> Result<RateFitReport> {
    if let Some(s) = summaries.iter().find(|s| s.all_censored) {
        return Err(Error::Domain(format!("summary at x = {} is fully censored", s.x)));
    }
    let mut excluded = Vec::new();
    let mut points = Vec::new();
    for s in summaries {
        if s.censored > 0 {
            warn!("x = {}: {} of {} runs censored; excluded from the rate fit", s.x, s.censored, s.n_runs);
            excluded.push(s.x);
        } else if !(s.mean_t > 0.0) {
            return Err(Error::Domain(format!("mean_T at x = {} is not positive", s.x)));
        } else {
            points.push(FitPoint { x: s.x, mean_t: s.mean_t, se_t: s.se_t });
        }
    }
    points.sort_by(|a, b| b.x.total_cmp(&a.x));
    let mut distinct = points.iter().map(|p| p.x).collect::<Vec<_>>();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Domain(format!("rate fit needs at least 3 distinct x values, got {}", distinct.len())));
    }
    let weighted = points.iter().all(|p| p.se_t > 0.0);
    let w: Vec<f64> = points
        .iter()
        .map(|p| if weighted { (p.mean_t / p.se_t).powi(2) } else { 1.0 })
        .collect();
    let u: Vec<f64> = points.iter().map(|p| 1.0 / p.x).collect();
    let y: Vec<f64> = points.iter().map(|p| p.mean_t.ln()).collect();
    let sw: f64 = w.iter().sum();
    let ub = w.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() / sw;
    let yb = w.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(&u).map(|(a, b)| a * (b - ub).powi(2)).sum();
    let sxy: f64 = (0..u.len()).map(|i| w[i] * (u[i] - ub) * (y[i] - yb)).sum();
    let slope = sxy / sxx;
    let intercept = yb - slope * ub;
    let slope_se = if weighted {
        // weights are inverse variances of log mean_T
        (1.0 / sxx).sqrt()
    } else {
        let k = points.len() as f64;
        let rss: f64 = (0..u.len()).map(|i| (y[i] - intercept - slope * u[i]).powi(2)).sum();
        (rss / (k - 2.0) / sxx).sqrt()
    };
    Ok(RateFitReport { points, slope, intercept, slope_se, reference_c: profile.c, excluded, weighted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::increments::IncrementFamily;
    use crate::rate::build_profile;
    use crate::walk::Estimator;

    fn summary(x: f64, mean: f64, se: f64, censored: u64) -> ExitTimeSummary {
        ExitTimeSummary {
            n_runs: 100,
            estimator: Estimator::Naive,
            x,
            mean_t: mean,
            se_t: se,
            median_t: mean,
            min_t: 1,
            max_t: 10,
            censored,
            all_censored: censored == 100,
            seed: 0,
        }
    }

    fn profile() -> RateProfile {
        build_profile(&IncrementFamily::binary(0.5).unwrap(), 64, 1e-10).unwrap()
    }

    #[test]
    fn exact_exponential_inputs() {
        let p = profile();
        let c = p.c;
        let xs = [0.25, 1.0 / 6.0, 0.125, 0.1];
        let s: Vec<_> = xs.iter().map(|x| summary(*x, (c / x).exp(), 0.01 * (c / x).exp(), 0)).collect();
        let f = fit_rate(&s, &p).unwrap();
        assert!((f.slope - c).abs() < 1e-9 && f.intercept.abs() < 1e-9);
        let s: Vec<_> = xs.iter().rev().map(|x| summary(*x, 7.0 * (0.9 * c / x).exp(), 0.0, 0)).collect();
        let f = fit_rate(&s, &p).unwrap();
        assert!((f.slope - 0.9 * c).abs() < 1e-9 && (f.intercept - 7f64.ln()).abs() < 1e-9);
        assert!(!f.weighted);
        assert!(f.points.windows(2).all(|w| w[0].x > w[1].x));
        assert_eq!(f.reference_c, c);
    }

    #[test]
    fn censoring_and_point_count() {
        let p = profile();
        let s = vec![summary(0.25, 5.0, 0.1, 0), summary(0.2, 8.0, 0.2, 0), summary(0.1, 70.0, 2.0, 3)];
        assert!(matches!(fit_rate(&s, &p), Err(Error::Domain(_))));
        let mut s2 = s.clone();
        s2.push(summary(0.125, 30.0, 1.0, 0));
        let f = fit_rate(&s2, &p).unwrap();
        assert_eq!(f.excluded, vec![0.1]);
        assert!(f.slope_se >= 0.0);
        s2.push(summary(0.05, 1e4, 1.0, 100));
        assert!(fit_rate(&s2, &p).is_err());
    }
}
