//! Experiment configuration, presets, the rate fit and artifact directories.

mod config;
mod fit;
mod presets;
mod run;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::increments::IncrementFamily;
use crate::rate::{DEFAULT_GRID_SIZE, DEFAULT_ROOT_TOL};
use crate::triad::{InitMode, TrioRule, UpdateOrder, DEFAULT_PERSISTENCE, DEFAULT_THRESHOLD};

pub use config::{format_real, parse_real, Entry, RawConfig};
pub use fit::{fit_rate, FitPoint, RateFitReport};
pub use presets::{preset, PRESETS};
pub use run::{execute, resolve_out_dir, run_experiment, Manifest, OutSource, RunOutcome, FAILED_MARKER, OUT_ENV};

pub const DEFAULT_N_RUNS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Rate,
    Walk1d,
    Urn,
    Network,
    Meanfield,
    Certificate,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Rate,
        ExperimentKind::Walk1d,
        ExperimentKind::Urn,
        ExperimentKind::Network,
        ExperimentKind::Meanfield,
        ExperimentKind::Certificate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Rate => "rate",
            ExperimentKind::Walk1d => "walk1d",
            ExperimentKind::Urn => "urn",
            ExperimentKind::Network => "network",
            ExperimentKind::Meanfield => "meanfield",
            ExperimentKind::Certificate => "certificate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub id: String,
    pub params: BTreeMap<String, f64>,
}

impl FamilySpec {
    pub fn binary(kappa: f64) -> Self {
        Self { id: "binary".into(), params: BTreeMap::from([("kappa".to_string(), kappa)]) }
    }

    pub fn build(&self) -> Result<IncrementFamily> {
        IncrementFamily::from_id(&self.id, &self.params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupermartingaleParams {
    pub delta: f64,
    pub x: f64,
    pub w_lo: f64,
    pub w_hi: f64,
    pub resolution: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    pub family: FamilySpec,
    pub grid_size: usize,
    pub tol: f64,
    pub supermartingale: Option<SupermartingaleParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkParams {
    pub family: FamilySpec,
    pub x: Vec<f64>,
    pub a_x: Option<f64>,
    pub w0: f64,
    pub max_steps: Option<u64>,
    /// Tilt parameter for the excursion estimators; none skips them.
    pub importance_delta: Option<f64>,
    pub importance_runs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrnParams {
    pub x: f64,
    pub red: f64,
    pub black: f64,
    pub steps: u64,
    pub stride: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub agents: usize,
    pub x: Vec<f64>,
    pub init: InitMode,
    pub rule: TrioRule,
    pub order: UpdateOrder,
    pub max_steps: u64,
    pub threshold: f64,
    pub persistence: usize,
    pub log_stride: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldParams {
    pub n_min: usize,
    pub n_max: usize,
    pub drift_agents: Vec<usize>,
    pub epsilon: f64,
    pub rule: TrioRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateParams {
    pub agents: usize,
    pub x: f64,
    pub radius: f64,
    pub grid_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Experiment {
    Rate(RateParams),
    Walk1d(WalkParams),
    Urn(UrnParams),
    Network(NetworkParams),
    Meanfield(MeanFieldParams),
    Certificate(CertificateParams),
}

impl Experiment {
    pub fn kind(&self) -> ExperimentKind {
        match self {
            Experiment::Rate(_) => ExperimentKind::Rate,
            Experiment::Walk1d(_) => ExperimentKind::Walk1d,
            Experiment::Urn(_) => ExperimentKind::Urn,
            Experiment::Network(_) => ExperimentKind::Network,
            Experiment::Meanfield(_) => ExperimentKind::Meanfield,
            Experiment::Certificate(_) => ExperimentKind::Certificate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub n_runs: u64,
    pub out: Option<PathBuf>,
    pub experiment: Experiment,
}

fn rule_name(r: TrioRule) -> &'static str {
    match r {
        TrioRule::AllPairs => "all-pairs",
        TrioRule::ChooserPairs => "chooser-pairs",
    }
}

fn order_name(o: UpdateOrder) -> &'static str {
    match o {
        UpdateOrder::DecayThenAdd => "decay-then-add",
        UpdateOrder::DecayAfterAdd => "decay-after-add",
    }
}

fn init_name(m: InitMode) -> &'static str {
    match m {
        InitMode::Unit => "unit",
        InitMode::Stationary => "stationary",
    }
}

fn parse_rule(e: &Entry, key: &str) -> Result<TrioRule> {
    Ok(match e.choice(key, &["all-pairs", "chooser-pairs"])? {
        "all-pairs" => TrioRule::AllPairs,
        _ => TrioRule::ChooserPairs,
    })
}

fn reals(v: &[f64]) -> String {
    v.iter().map(|x| format_real(*x)).collect::<Vec<_>>().join(", ")
}

fn check(ok: bool, e: Option<&Entry>, key: &str, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(match e {
            Some(e) => e.fail(key, msg),
            None => Error::Config(format!("{key}: {msg}")),
        })
    }
}

struct Reader {
    raw: RawConfig,
    section: &'static str,
}

impl Reader {
    fn entry(&mut self, key: &str) -> Option<Entry> {
        self.raw.take(self.section, key)
    }

    fn real(&mut self, key: &str, default: f64) -> Result<(f64, Option<Entry>)> {
        match self.entry(key) {
            Some(e) => Ok((e.real(key)?, Some(e))),
            None => Ok((default, None)),
        }
    }

    fn opt_real(&mut self, key: &str) -> Result<(Option<f64>, Option<Entry>)> {
        match self.entry(key) {
            Some(e) => Ok((Some(e.real(key)?), Some(e))),
            None => Ok((None, None)),
        }
    }

    fn int<T: std::str::FromStr + Copy>(&mut self, key: &str, default: T) -> Result<(T, Option<Entry>)> {
        match self.entry(key) {
            Some(e) => Ok((e.int(key)?, Some(e))),
            None => Ok((default, None)),
        }
    }
}

fn parse_family(raw: &mut RawConfig) -> Result<FamilySpec> {
    let header = raw.section_line("family");
    let id = raw.take("family", "id");
    let params = raw
        .drain("family")
        .into_iter()
        .map(|(k, e)| Ok((k.clone(), e.real(&k)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let spec = match &id {
        Some(e) => FamilySpec { id: e.value.clone(), params },
        None if params.is_empty() => FamilySpec::binary(crate::increments::DEFAULT_KAPPA),
        None => {
            return Err(Error::Config(format!(
                "line {}: [family] sets parameters without an id",
                header.unwrap_or(0)
            )))
        }
    };
    spec.build().map_err(|err| match (&id, err) {
        (Some(e), Error::Config(m)) => e.fail("id", m),
        (_, other) => other,
    })?;
    Ok(spec)
}

impl ExperimentConfig {
    /// Parses a config file. `seed` overrides `master_seed`; one of the two
    /// must be present.
    pub fn from_text(text: &str, seed: Option<u64>) -> Result<Self> {
        let mut raw = RawConfig::parse(text)?;
        let kind_entry = raw.take("", "kind").ok_or_else(|| Error::Config("missing required key `kind`".into()))?;
        let kind = ExperimentKind::parse(&kind_entry.value).ok_or_else(|| {
            kind_entry.fail(
                "kind",
                format!(
                    "unknown experiment kind `{}` (expected one of {})",
                    kind_entry.value,
                    ExperimentKind::ALL.map(|k| k.as_str()).join(", ")
                ),
            )
        })?;
        let file_seed = match raw.take("", "master_seed") {
            Some(e) => Some(e.int::<u64>("master_seed")?),
            None => None,
        };
        let master_seed = seed.or(file_seed).ok_or_else(|| {
            Error::Config("missing required key `master_seed` (seeds are never chosen implicitly)".into())
        })?;
        let n_runs = match raw.take("", "n_runs") {
            Some(e) => {
                let n: u64 = e.int("n_runs")?;
                check(n >= 1, Some(&e), "n_runs", "must be at least 1")?;
                n
            }
            None => DEFAULT_N_RUNS,
        };
        let out = raw.take("", "out").map(|e| PathBuf::from(e.value));
        for other in ExperimentKind::ALL.iter().filter(|k| **k != kind) {
            if let Some(line) = raw.section_line(other.as_str()) {
                return Err(Error::Config(format!(
                    "line {line}: section [{}] does not apply to a {} experiment",
                    other.as_str(),
                    kind.as_str()
                )));
            }
        }
        let uses_family = matches!(kind, ExperimentKind::Rate | ExperimentKind::Walk1d);
        if !uses_family {
            if let Some(line) = raw.section_line("family") {
                return Err(Error::Config(format!(
                    "line {line}: section [family] does not apply to a {} experiment",
                    kind.as_str()
                )));
            }
        }
        let family = if uses_family { Some(parse_family(&mut raw)?) } else { None };
        let mut r = Reader { raw, section: kind.as_str() };
        let experiment = match kind {
            ExperimentKind::Rate => {
                let (grid_size, ge) = r.int("grid_size", DEFAULT_GRID_SIZE)?;
                check(grid_size >= 16 && grid_size % 2 == 0, ge.as_ref(), "grid_size", "must be even and at least 16")?;
                let (tol, te) = r.real("tol", DEFAULT_ROOT_TOL)?;
                check(tol > 0.0, te.as_ref(), "tol", "must be positive")?;
                let (delta, de) = r.opt_real("delta")?;
                let supermartingale = match delta {
                    Some(delta) => {
                        check((0.0..1.0).contains(&delta), de.as_ref(), "delta", "must lie in [0, 1)")?;
                        let (x, xe) = r.real("x", 1.0 / 40.0)?;
                        check(x > 0.0 && x < 0.5, xe.as_ref(), "x", "must lie in (0, 1/2)")?;
                        let (w_lo, le) = r.real("w_lo", x.max(0.02))?;
                        let (w_hi, he) = r.real("w_hi", 0.5)?;
                        check(w_lo >= x && w_lo < w_hi, le.as_ref(), "w_lo", "must satisfy x <= w_lo < w_hi")?;
                        check(w_hi <= 1.0 - x, he.as_ref(), "w_hi", "must not exceed 1 - x")?;
                        let (resolution, re) = r.int("resolution", 200usize)?;
                        check(resolution >= 1, re.as_ref(), "resolution", "must be at least 1")?;
                        Some(SupermartingaleParams { delta, x, w_lo, w_hi, resolution })
                    }
                    None => None,
                };
                Experiment::Rate(RateParams { family: family.expect("rate uses a family"), grid_size, tol, supermartingale })
            }
            ExperimentKind::Walk1d => {
                let xe = r.entry("x").ok_or_else(|| Error::Config("[walk1d] needs `x`".into()))?;
                let x = xe.reals("x")?;
                check(x.iter().all(|v| *v > 0.0 && *v < 1.0), Some(&xe), "x", "every value must lie in (0, 1)")?;
                let (a_x, ae) = r.opt_real("a_x")?;
                check(a_x.is_none_or(|a| a > 0.0 && a < 0.5), ae.as_ref(), "a_x", "must lie in (0, 1/2)")?;
                let (w0, we) = r.real("w0", 0.5)?;
                check(w0 > 0.0 && w0 < 1.0, we.as_ref(), "w0", "must lie in (0, 1)")?;
                let max_steps = match r.entry("max_steps") {
                    Some(e) => Some(e.int("max_steps")?),
                    None => None,
                };
                let (importance_delta, de) = r.opt_real("importance_delta")?;
                check(importance_delta.is_none_or(|d| d >= -1.0), de.as_ref(), "importance_delta", "must be at least -1")?;
                let (importance_runs, ie) = r.int("importance_runs", n_runs)?;
                check(importance_runs >= 1, ie.as_ref(), "importance_runs", "must be at least 1")?;
                Experiment::Walk1d(WalkParams {
                    family: family.expect("walk uses a family"),
                    x,
                    a_x,
                    w0,
                    max_steps,
                    importance_delta,
                    importance_runs,
                })
            }
            ExperimentKind::Urn => {
                let (x, xe) = r.real("x", 0.1)?;
                check(x > 0.0 && x < 1.0, xe.as_ref(), "x", "must lie in (0, 1)")?;
                let (red, re) = r.real("red", 1.0)?;
                let (black, be) = r.real("black", 1.0)?;
                check(red >= 0.0, re.as_ref(), "red", "must be nonnegative")?;
                check(black >= 0.0 && red + black > 0.0, be.as_ref(), "black", "must be nonnegative with red + black > 0")?;
                let (steps, _) = r.int("steps", 1000u64)?;
                let (stride, se) = r.int("stride", 1u64)?;
                check(stride >= 1, se.as_ref(), "stride", "must be at least 1")?;
                Experiment::Urn(UrnParams { x, red, black, steps, stride })
            }
            ExperimentKind::Network => {
                let (agents, ae) = r.int("agents", 6usize)?;
                check(agents >= 4, ae.as_ref(), "agents", "must be at least 4")?;
                let xe = r.entry("x").ok_or_else(|| Error::Config("[network] needs `x`".into()))?;
                let x = xe.reals("x")?;
                check(x.iter().all(|v| *v > 0.0 && *v < 1.0), Some(&xe), "x", "every value must lie in (0, 1)")?;
                let init = match r.entry("init") {
                    Some(e) => match e.choice("init", &["unit", "stationary"])? {
                        "unit" => InitMode::Unit,
                        _ => InitMode::Stationary,
                    },
                    None => InitMode::Unit,
                };
                let rule = match r.entry("rule") {
                    Some(e) => parse_rule(&e, "rule")?,
                    None => TrioRule::default(),
                };
                let order = match r.entry("order") {
                    Some(e) => match e.choice("order", &["decay-then-add", "decay-after-add"])? {
                        "decay-then-add" => UpdateOrder::DecayThenAdd,
                        _ => UpdateOrder::DecayAfterAdd,
                    },
                    None => UpdateOrder::default(),
                };
                let (max_steps, _) = r.int("max_steps", 5000u64)?;
                let (threshold, te) = r.real("threshold", DEFAULT_THRESHOLD)?;
                check(threshold > 0.0 && threshold < 1.0, te.as_ref(), "threshold", "must lie in (0, 1)")?;
                let (persistence, pe) = r.int("persistence", DEFAULT_PERSISTENCE)?;
                check(persistence >= 1, pe.as_ref(), "persistence", "must be at least 1")?;
                let (log_stride, _) = r.int("log_stride", 0u64)?;
                Experiment::Network(NetworkParams { agents, x, init, rule, order, max_steps, threshold, persistence, log_stride })
            }
            ExperimentKind::Meanfield => {
                let (n_min, le) = r.int("n_min", 4usize)?;
                check(n_min >= 4, le.as_ref(), "n_min", "must be at least 4")?;
                let (n_max, he) = r.int("n_max", 40usize)?;
                check(n_max >= n_min, he.as_ref(), "n_max", "must be at least n_min")?;
                let drift_agents = match r.entry("drift_agents") {
                    Some(e) => {
                        let v: Vec<usize> = e.ints("drift_agents")?;
                        check(v.iter().all(|a| (4..=10).contains(a)), Some(&e), "drift_agents", "values must lie in 4..=10")?;
                        v
                    }
                    None => vec![4, 5, 6, 7, 8],
                };
                let (epsilon, ee) = r.real("epsilon", 0.01)?;
                check(epsilon > 0.0 && epsilon < 1.0, ee.as_ref(), "epsilon", "must lie in (0, 1)")?;
                let rule = match r.entry("rule") {
                    Some(e) => parse_rule(&e, "rule")?,
                    None => TrioRule::ChooserPairs,
                };
                Experiment::Meanfield(MeanFieldParams { n_min, n_max, drift_agents, epsilon, rule })
            }
            ExperimentKind::Certificate => {
                let (agents, ae) = r.int("agents", 6usize)?;
                check((5..=6).contains(&agents), ae.as_ref(), "agents", "exact enumeration supports 5 or 6 agents")?;
                let (x, xe) = r.real("x", 0.05)?;
                check(x > 0.0 && x <= 0.1, xe.as_ref(), "x", "must lie in (0, 0.1]")?;
                let (radius, re) = r.real("radius", 0.02)?;
                check(radius > 0.0, re.as_ref(), "radius", "must be positive")?;
                let (grid_points, ge) = r.int("grid_points", 500usize)?;
                check(grid_points >= 1, ge.as_ref(), "grid_points", "must be at least 1")?;
                Experiment::Certificate(CertificateParams { agents, x, radius, grid_points })
            }
        };
        r.raw.finish()?;
        Ok(Self { master_seed, n_runs, out, experiment })
    }

    pub fn from_file(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, seed).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Reads the config echoed in a manifest written by [`execute`].
    pub fn from_manifest(path: &Path) -> Result<Self> {
        let m: Manifest = serde_json::from_reader(std::fs::File::open(path)?)?;
        Ok(m.config)
    }

    pub fn kind(&self) -> ExperimentKind {
        self.experiment.kind()
    }

    /// Renders the config in the file format; parsing the text gives back `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "kind = {}", self.kind().as_str());
        let _ = writeln!(s, "master_seed = {}", self.master_seed);
        let _ = writeln!(s, "n_runs = {}", self.n_runs);
        if let Some(out) = &self.out {
            let _ = writeln!(s, "out = {}", out.display());
        }
        let family = |s: &mut String, f: &FamilySpec| {
            let _ = writeln!(s, "\n[family]\nid = {}", f.id);
            for (k, v) in &f.params {
                let _ = writeln!(s, "{k} = {}", format_real(*v));
            }
        };
        match &self.experiment {
            Experiment::Rate(p) => {
                family(&mut s, &p.family);
                let _ = writeln!(s, "\n[rate]\ngrid_size = {}\ntol = {}", p.grid_size, format_real(p.tol));
                if let Some(m) = &p.supermartingale {
                    let _ = writeln!(
                        s,
                        "delta = {}\nx = {}\nw_lo = {}\nw_hi = {}\nresolution = {}",
                        format_real(m.delta),
                        format_real(m.x),
                        format_real(m.w_lo),
                        format_real(m.w_hi),
                        m.resolution
                    );
                }
            }
            Experiment::Walk1d(p) => {
                family(&mut s, &p.family);
                let _ = writeln!(s, "\n[walk1d]\nx = {}\nw0 = {}", reals(&p.x), format_real(p.w0));
                if let Some(a) = p.a_x {
                    let _ = writeln!(s, "a_x = {}", format_real(a));
                }
                if let Some(m) = p.max_steps {
                    let _ = writeln!(s, "max_steps = {m}");
                }
                if let Some(d) = p.importance_delta {
                    let _ = writeln!(s, "importance_delta = {}", format_real(d));
                }
                let _ = writeln!(s, "importance_runs = {}", p.importance_runs);
            }
            Experiment::Urn(p) => {
                let _ = writeln!(
                    s,
                    "\n[urn]\nx = {}\nred = {}\nblack = {}\nsteps = {}\nstride = {}",
                    format_real(p.x),
                    format_real(p.red),
                    format_real(p.black),
                    p.steps,
                    p.stride
                );
            }
            Experiment::Network(p) => {
                let _ = writeln!(
                    s,
                    "\n[network]\nagents = {}\nx = {}\ninit = {}\nrule = {}\norder = {}\nmax_steps = {}\nthreshold = {}\npersistence = {}\nlog_stride = {}",
                    p.agents,
                    reals(&p.x),
                    init_name(p.init),
                    rule_name(p.rule),
                    order_name(p.order),
                    p.max_steps,
                    format_real(p.threshold),
                    p.persistence,
                    p.log_stride
                );
            }
            Experiment::Meanfield(p) => {
                let agents = p.drift_agents.iter().map(usize::to_string).collect::<Vec<_>>().join(", ");
                let _ = writeln!(
                    s,
                    "\n[meanfield]\nn_min = {}\nn_max = {}\ndrift_agents = {}\nepsilon = {}\nrule = {}",
                    p.n_min,
                    p.n_max,
                    agents,
                    format_real(p.epsilon),
                    rule_name(p.rule)
                );
            }
            Experiment::Certificate(p) => {
                let _ = writeln!(
                    s,
                    "\n[certificate]\nagents = {}\nx = {}\nradius = {}\ngrid_points = {}",
                    p.agents,
                    format_real(p.x),
                    format_real(p.radius),
                    p.grid_points
                );
            }
        }
        s
    }
}
