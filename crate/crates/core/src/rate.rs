//! Exponential moments, tilt roots and the trapping-time exponent.
//!
//! For an increment family `Q_w`, `Z_w(lambda) = sum p exp(-lambda y)` is convex
//! with `Z_w(0) = 1` and negative slope at zero whenever the drift is positive,
//! so it crosses 1 again at a unique `lambda_w > 0`. Integrating that root from
//! `w` to `1/2` gives `Lambda(w)`, and `C = Lambda(0)` is the exponent in
//! `E T_x ~ exp(C / x)`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::increments::{AtomList, IncrementFamily};

/// Largest exponent magnitude accepted by [`z_value`].
pub const EXP_GUARD: f64 = 700.0;
pub const DEFAULT_GRID_SIZE: usize = 512;
pub const DEFAULT_ROOT_TOL: f64 = 1e-10;
/// States closer to 0 than this are clipped when a family's drift degenerates there.
pub const W_MIN: f64 = 1e-4;
/// Slack allowed in the supermartingale inequality.
pub const SUPERMARTINGALE_SLACK: f64 = 1e-9;

fn guard(atoms: &AtomList, lambda: f64) -> Result<()> {
    if !lambda.is_finite() {
        return Err(Error::Range(format!("lambda = {lambda} is not finite")));
    }
    if lambda.abs() * atoms.max_abs_offset() > EXP_GUARD {
        return Err(Error::Range(format!(
            "|lambda| * y_max = {} exceeds {EXP_GUARD}",
            lambda.abs() * atoms.max_abs_offset()
        )));
    }
    Ok(())
}

/// `Z_w(lambda)`.
pub fn z_value(family: &IncrementFamily, w: f64, lambda: f64) -> Result<f64> {
    let atoms = family.atoms(w)?;
    guard(&atoms, lambda)?;
    Ok(atoms.iter().map(|a| a.prob * (-lambda * a.offset).exp()).sum())
}

// Z_w(lambda) - 1 without cancellation near lambda = 0.
fn z_minus_one(atoms: &AtomList, lambda: f64) -> f64 {
    atoms.iter().map(|a| a.prob * (-lambda * a.offset).exp_m1()).sum()
}

/// The positive root `lambda_w` of `Z_w(lambda) = 1`, for `0 <= w < 1/2`.
///
/// The root is bracketed by doubling from 1, bisected down to adjacent floats
/// and polished with one secant step. `tol` bounds `|Z_w(lambda_w) - 1|`.
pub fn lambda_root(family: &IncrementFamily, w: f64, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("root tolerance must be positive, got {tol}")));
    }
    if !(0.0..0.5).contains(&w) {
        return Err(Error::Domain(format!("lambda_w needs 0 <= w < 1/2, got {w}")));
    }
    let atoms = family.atoms(w)?;
    let mean = atoms.mean();
    if mean <= 0.0 {
        return Err(Error::Domain(format!("increment mean {mean} at w = {w} is not positive")));
    }
    let f = |l: f64| z_minus_one(&atoms, l);

    let y_max = atoms.max_abs_offset();
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while f(hi) <= 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi * y_max > EXP_GUARD {
            return Err(Error::Numerical(format!("no sign change of Z_w - 1 below lambda = {hi} at w = {w}")));
        }
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (f_lo, f_hi) = (f(lo), f(hi));
    let mut root = if f_hi.abs() <= f_lo.abs() { hi } else { lo };
    if f_hi != f_lo {
        let s = lo - f_lo * (hi - lo) / (f_hi - f_lo);
        if s >= lo && s <= hi && f(s).abs() <= f(root).abs() {
            root = s;
        }
    }
    let resid = f(root).abs();
    if !(resid <= tol) {
        return Err(Error::Numerical(format!("root residual {resid:e} exceeds tolerance {tol:e} at w = {w}")));
    }
    Ok(root)
}

/// Tabulated `lambda_w` and `Lambda(w)` on a uniform grid of `[0, 1/2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateProfile {
    pub family_id: String,
    pub parameters: BTreeMap<String, f64>,
    pub grid_size: usize,
    pub tol: f64,
    pub grid: Vec<f64>,
    pub lambda: Vec<f64>,
    pub biglambda: Vec<f64>,
    #[serde(rename = "C")]
    pub c: f64,
}

/// JSON header written next to the profile CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileHeader {
    pub family_id: String,
    pub parameters: BTreeMap<String, f64>,
    pub grid_size: usize,
    pub tol: f64,
    #[serde(rename = "C")]
    pub c: f64,
}

/// Builds the profile with composite Simpson quadrature on `grid_size`
/// (even) intervals.
pub fn build_profile(family: &IncrementFamily, grid_size: usize, tol: f64) -> Result<RateProfile> {
    if grid_size < 16 {
        return Err(Error::Config(format!("grid_size must be at least 16, got {grid_size}")));
    }
    if !grid_size.is_multiple_of(2) {
        return Err(Error::Config(format!("grid_size must be even for Simpson quadrature, got {grid_size}")));
    }
    let h = 0.5 / grid_size as f64;
    let grid: Vec<f64> = (0..=grid_size)
        .map(|i| if i == grid_size { 0.5 } else { i as f64 * h })
        .collect();

    let lambda: Vec<f64> = grid
        .par_iter()
        .enumerate()
        .map(|(i, &w)| {
            if i == grid_size {
                return Ok(0.0);
            }
            if family.mean(w)? <= 0.0 && w < W_MIN {
                warn!("drift vanishes at w = {w}; using lambda at w = {W_MIN} (biases C low)");
                return lambda_root(family, W_MIN, tol);
            }
            lambda_root(family, w, tol)
        })
        .collect::<Result<_>>()?;
    if let Some((i, l)) = lambda.iter().enumerate().find(|(_, l)| !l.is_finite()) {
        return Err(Error::Numerical(format!("lambda = {l} at w = {}", grid[i])));
    }

    let n = grid_size;
    let mut big = vec![0.0; n + 1];
    let mut i = n;
    while i >= 2 {
        big[i - 2] = big[i] + h / 3.0 * (lambda[i - 2] + 4.0 * lambda[i - 1] + lambda[i]);
        i -= 2;
    }
    // Odd nodes: quadratic through (i-1, i, i+1) integrated over [w_i, w_{i+1}].
    for i in (1..n).step_by(2) {
        big[i] = big[i + 1] + h / 12.0 * (-lambda[i - 1] + 8.0 * lambda[i] + 5.0 * lambda[i + 1]);
    }
    if let Some((i, v)) = big.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Numerical(format!("Lambda = {v} at w = {}", grid[i])));
    }

    Ok(RateProfile {
        family_id: family.id().to_string(),
        parameters: family.parameters(),
        grid_size,
        tol,
        c: big[0],
        grid,
        lambda,
        biglambda: big,
    })
}

impl RateProfile {
    fn spacing(&self) -> f64 {
        0.5 / self.grid_size as f64
    }

    /// `Lambda(w)` for `w in [0, 1/2]`, by monotone cubic Hermite interpolation
    /// using the tabulated slopes `-lambda`. Exact at grid points.
    pub fn biglambda_at(&self, w: f64) -> Result<f64> {
        if !(0.0..=0.5).contains(&w) {
            return Err(Error::Domain(format!("Lambda is tabulated on [0, 1/2], got w = {w}")));
        }
        let h = self.spacing();
        let j = ((w / h).floor() as usize).min(self.grid_size - 1);
        if w == self.grid[j] {
            return Ok(self.biglambda[j]);
        }
        if w == self.grid[j + 1] {
            return Ok(self.biglambda[j + 1]);
        }
        let (y0, y1) = (self.biglambda[j], self.biglambda[j + 1]);
        let (mut m0, mut m1) = (-self.lambda[j], -self.lambda[j + 1]);
        let secant = (y1 - y0) / h;
        if secant == 0.0 {
            return Ok(y0);
        }
        // Fritsch-Carlson limiter keeps each cell monotone.
        let (a, b) = (m0 / secant, m1 / secant);
        if a < 0.0 {
            m0 = 0.0;
        }
        if b < 0.0 {
            m1 = 0.0;
        }
        let r = a * a + b * b;
        if r > 9.0 {
            let t = 3.0 / r.sqrt();
            m0 *= t;
            m1 *= t;
        }
        let s = (w - self.grid[j]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        Ok(h00 * y0 + h10 * h * m0 + h01 * y1 + h11 * h * m1)
    }

    /// `Lambda` extended to `[0, 1]` by `Lambda(w) = Lambda(1 - w)`.
    pub fn reflected(&self, w: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::Domain(format!("reflected Lambda needs w in [0, 1], got {w}")));
        }
        if w > 0.5 {
            self.biglambda_at(1.0 - w)
        } else {
            self.biglambda_at(w)
        }
    }

    pub fn header(&self) -> ProfileHeader {
        ProfileHeader {
            family_id: self.family_id.clone(),
            parameters: self.parameters.clone(),
            grid_size: self.grid_size,
            tol: self.tol,
            c: self.c,
        }
    }

    /// Writes the `(w, lambda, biglambda)` table.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["w", "lambda", "biglambda"])?;
        for i in 0..self.grid.len() {
            wtr.serialize((self.grid[i], self.lambda[i], self.biglambda[i]))?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Writes `profile.csv` and `profile.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(dir.join("profile.csv"))?)?;
        let mut f = std::fs::File::create(dir.join("profile.json"))?;
        serde_json::to_writer_pretty(&mut f, &self.header())?;
        writeln!(f)?;
        Ok(())
    }

    pub fn matches(&self, family: &IncrementFamily) -> bool {
        self.family_id == family.id() && self.parameters == family.parameters()
    }
}

/// The exponentially tilted increment law used for importance sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltedKernel {
    pub base: String,
    pub delta: f64,
    pub w: f64,
    pub x: f64,
    pub atoms: AtomList,
    /// Per-atom tilt exponents `(1 + delta) (Lambda(w + x y) - Lambda(w)) / x`,
    /// aligned with `atoms`.
    pub exponents: Vec<f64>,
    /// `ln sum p exp(exponent)` under the base law.
    pub log_normalizer: f64,
}

impl TiltedKernel {
    /// `ln dP/dP~` for a step with the given offset.
    pub fn log_likelihood_ratio(&self, offset: f64) -> Option<f64> {
        self.atoms
            .iter()
            .position(|a| a.offset == offset)
            .map(|k| self.log_normalizer - self.exponents[k])
    }
}

fn check_step_domain(atoms: &AtomList, w: f64, x: f64) -> Result<()> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::Domain(format!("step scale x must lie in (0, 1), got {x}")));
    }
    for a in atoms.iter() {
        let v = w + x * a.offset;
        if !(-1e-12..=1.0 + 1e-12).contains(&v) {
            return Err(Error::Domain(format!("step from w = {w} by {} leaves [0, 1]", x * a.offset)));
        }
    }
    Ok(())
}

// Lambda difference over one scaled step, divided by x.
fn scaled_increments(profile: &RateProfile, atoms: &AtomList, w: f64, x: f64) -> Result<Vec<f64>> {
    let base = profile.reflected(w)?;
    atoms
        .iter()
        .map(|a| {
            let v = (w + x * a.offset).clamp(0.0, 1.0);
            Ok((profile.reflected(v)? - base) / x)
        })
        .collect()
}

/// Tilts `Q_w` by `exp((1 + delta) (Lambda(w + x y) - Lambda(w)) / x)`,
/// with `Lambda` reflected about 1/2. `delta = -1` leaves the law unchanged.
pub fn tilt_kernel(family: &IncrementFamily, profile: &RateProfile, w: f64, x: f64, delta: f64) -> Result<TiltedKernel> {
    if !(delta >= -1.0) || !delta.is_finite() {
        return Err(Error::Domain(format!("tilt needs delta >= -1, got {delta}")));
    }
    let base = family.atoms(w)?;
    check_step_domain(&base, w, x)?;
    let theta = 1.0 + delta;
    if theta == 0.0 {
        return Ok(TiltedKernel {
            base: family.id().to_string(),
            delta,
            w,
            x,
            exponents: vec![0.0; base.len()],
            atoms: base,
            log_normalizer: 0.0,
        });
    }
    let exponents: Vec<f64> = scaled_increments(profile, &base, w, x)?
        .into_iter()
        .map(|d| theta * d)
        .collect();
    let top = base
        .iter()
        .zip(&exponents)
        .filter(|(a, _)| a.prob > 0.0)
        .map(|(_, &e)| e)
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = base
        .iter()
        .zip(&exponents)
        .map(|(a, &e)| a.prob * (e - top).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Numerical(format!("tilted normalizer underflow at w = {w}")));
    }
    let log_normalizer = top + total.ln();
    let atoms = AtomList::new(base.iter().zip(&weights).map(|(a, &q)| (a.offset, q / total)))?;
    Ok(TiltedKernel { base: family.id().to_string(), delta, w, x, atoms, exponents, log_normalizer })
}

/// `sum p exp((1 - delta) (Lambda(w + x y) - Lambda(w)) / x)`: the one-step
/// conditional growth factor of `exp((1 - delta) Lambda(W) / x)`.
pub fn supermartingale_ratio(family: &IncrementFamily, profile: &RateProfile, w: f64, x: f64, delta: f64) -> Result<f64> {
    let atoms = family.atoms(w)?;
    check_step_domain(&atoms, w, x)?;
    let inc = scaled_increments(profile, &atoms, w, x)?;
    Ok(atoms
        .iter()
        .zip(inc)
        .map(|(a, d)| a.prob * ((1.0 - delta) * d).exp())
        .sum())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupermartingaleReport {
    pub delta: f64,
    pub x: f64,
    /// `(w, ratio)` for every checked state.
    pub points: Vec<(f64, f64)>,
    pub worst_w: f64,
    pub worst_ratio: f64,
    /// Every ratio is at most `1 + SUPERMARTINGALE_SLACK`.
    pub holds: bool,
}

impl SupermartingaleReport {
    /// States where the inequality fails.
    pub fn violations(&self) -> impl Iterator<Item = &(f64, f64)> {
        self.points.iter().filter(|(_, r)| *r > 1.0 + SUPERMARTINGALE_SLACK)
    }
}

/// Evaluates [`supermartingale_ratio`] on every state of `grid`.
pub fn check_supermartingale(
    family: &IncrementFamily,
    profile: &RateProfile,
    delta: f64,
    x: f64,
    grid: &[f64],
) -> Result<SupermartingaleReport> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::Domain(format!("supermartingale check needs 0 <= delta < 1, got {delta}")));
    }
    if grid.is_empty() {
        return Err(Error::Domain("empty state grid".into()));
    }
    let points = grid
        .iter()
        .map(|&w| Ok((w, supermartingale_ratio(family, profile, w, x, delta)?)))
        .collect::<Result<Vec<_>>>()?;
    let (worst_w, worst_ratio) = points
        .iter()
        .copied()
        .fold((f64::NAN, f64::NEG_INFINITY), |acc, p| if p.1 > acc.1 { p } else { acc });
    Ok(SupermartingaleReport {
        delta,
        x,
        holds: worst_ratio <= 1.0 + SUPERMARTINGALE_SLACK,
        points,
        worst_w,
        worst_ratio,
    })
}

/// `resolution` equally spaced states on `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, resolution: usize) -> Vec<f64> {
    match resolution {
        0 => vec![],
        1 => vec![lo],
        r => (0..r).map(|i| lo + (hi - lo) * i as f64 / (r - 1) as f64).collect(),
    }
}

/// Largest dyadic step scale `x = 2^-k`, `1 <= k <= k_max`, for which the
/// supermartingale inequality holds on `resolution` states spanning
/// `[max(x y_max, w_lo), w_hi]`.
pub fn search_supermartingale_scale(
    family: &IncrementFamily,
    profile: &RateProfile,
    delta: f64,
    w_lo: f64,
    w_hi: f64,
    resolution: usize,
    k_max: u32,
) -> Result<Option<f64>> {
    for k in 1..=k_max {
        let x = (-(k as f64)).exp2();
        let lo = (x * family.y_max()).max(w_lo);
        if lo > w_hi {
            continue;
        }
        if check_supermartingale(family, profile, delta, x, &uniform_grid(lo, w_hi, resolution))?.holds {
            return Ok(Some(x));
        }
    }
    Ok(None)
}
