//! Canned experiments.

use crate::error::{Error, Result};
use crate::triad::{InitMode, TrioRule, UpdateOrder, DEFAULT_PERSISTENCE, DEFAULT_THRESHOLD};

use super::{CertificateParams, Experiment, ExperimentConfig, FamilySpec, MeanFieldParams, NetworkParams, WalkParams};

pub const PRESET_SEED: u64 = 20_240_917;

/// Preset names with one-line descriptions.
pub const PRESETS: [(&str, &str); 4] = [
    ("theorem31-trend", "binary walk, x in {1/4, 1/6, 1/8, 1/10}, 2000 exits each, with the rate fit"),
    ("threes-company-N6", "Three's Company with 6 agents at x = 0.4 and x = 0.2, 100 runs of 5000 steps"),
    ("spectrum-scan", "reduced-matrix spectrum for n = 4..40 and drift checks for 4..8 agents"),
    ("certificate-N6", "Lyapunov certificate for 6 agents, x = 0.05, radius 0.02, 500 grid points"),
];

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let (n_runs, experiment) = match name {
        "theorem31-trend" => (
            2000,
            Experiment::Walk1d(WalkParams {
                family: FamilySpec::binary(0.5),
                x: vec![0.25, 1.0 / 6.0, 0.125, 0.1],
                a_x: None,
                w0: 0.5,
                max_steps: None,
                importance_delta: None,
                importance_runs: 2000,
            }),
        ),
        "threes-company-N6" => (
            100,
            Experiment::Network(NetworkParams {
                agents: 6,
                x: vec![0.4, 0.2],
                init: InitMode::Unit,
                rule: TrioRule::AllPairs,
                order: UpdateOrder::DecayThenAdd,
                max_steps: 5000,
                threshold: DEFAULT_THRESHOLD,
                persistence: DEFAULT_PERSISTENCE,
                log_stride: 0,
            }),
        ),
        "spectrum-scan" => (
            1,
            Experiment::Meanfield(MeanFieldParams {
                n_min: 4,
                n_max: 40,
                drift_agents: vec![4, 5, 6, 7, 8],
                epsilon: 0.01,
                rule: TrioRule::ChooserPairs,
            }),
        ),
        "certificate-N6" => (
            1,
            Experiment::Certificate(CertificateParams { agents: 6, x: 0.05, radius: 0.02, grid_points: 500 }),
        ),
        other => {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            return Err(Error::Config(format!("unknown preset `{other}`; available: {}", names.join(", "))));
        }
    };
    Ok(ExperimentConfig { master_seed: PRESET_SEED, n_runs, out: None, experiment })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_preset_lists_names() {
        let e = preset("nope").unwrap_err().to_string();
        for (n, _) in PRESETS {
            assert!(e.contains(n));
        }
    }

    #[test]
    fn preset_contents() {
        match preset("threes-company-N6").unwrap().experiment {
            Experiment::Network(p) => {
                assert_eq!((p.agents, p.max_steps), (6, 5000));
                assert_eq!(p.x, vec![0.4, 0.2]);
            }
            _ => unreachable!(),
        }
        match preset("spectrum-scan").unwrap().experiment {
            Experiment::Meanfield(p) => assert_eq!((p.n_min, p.n_max), (4, 40)),
            _ => unreachable!(),
        }
        let t = preset("theorem31-trend").unwrap();
        assert_eq!(t.n_runs, 2000);
    }
}
