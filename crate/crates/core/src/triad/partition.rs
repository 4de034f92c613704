//! Trap detection: strong-edge components plus a window of trio choices that
//! never cross between components.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::replica_rng;

use super::{init_state, pair_count, step_in_place, InitMode, NetworkState, TrioChoice, TrioRule, UpdateOrder};

pub const DEFAULT_THRESHOLD: f64 = 1e-4;
pub const DEFAULT_PERSISTENCE: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub trapped: bool,
    pub blocks: Vec<Vec<usize>>,
    pub block_sizes: Vec<usize>,
    pub detected_at: Option<u64>,
    pub cross_weight_fraction: f64,
}

impl PartitionReport {
    /// Block sizes joined with `+`, e.g. `"3+3"`.
    pub fn pattern(&self) -> String {
        self.block_sizes.iter().map(usize::to_string).collect::<Vec<_>>().join("+")
    }
}

fn find(parent: &mut [usize], mut a: usize) -> usize {
    while parent[a] != a {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    a
}

/// Component label (smallest member) for every agent.
fn components(state: &NetworkState, threshold: f64) -> Vec<usize> {
    let n = state.n;
    let cut = threshold * state.total() / pair_count(n) as f64;
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if state.weight(i, j) >= cut {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    (0..n).map(|i| find(&mut parent, i)).collect()
}

fn is_internal(labels: &[usize], choices: &[TrioChoice]) -> bool {
    choices.iter().all(|c| {
        let l = labels[c.members[0]];
        labels[c.members[1]] == l && labels[c.members[2]] == l
    })
}

fn report(state: &NetworkState, labels: &[usize], clean: bool) -> PartitionReport {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let blocks: Vec<Vec<usize>> = groups.into_values().collect();
    let mut block_sizes: Vec<usize> = blocks.iter().map(Vec::len).collect();
    block_sizes.sort_unstable();
    let total = state.total();
    let mut cross = 0.0;
    for i in 0..state.n {
        for j in i + 1..state.n {
            if labels[i] != labels[j] {
                cross += state.weight(i, j);
            }
        }
    }
    let trapped = clean && block_sizes.iter().all(|s| (3..=5).contains(s));
    PartitionReport {
        trapped,
        blocks,
        block_sizes,
        detected_at: trapped.then_some(state.t),
        cross_weight_fraction: if total > 0.0 { cross / total } else { 0.0 },
    }
}

fn check_detector(threshold: f64, persistence: usize) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    if persistence == 0 {
        return Err(Error::Config("persistence must be at least 1".into()));
    }
    Ok(())
}

/// Components of the graph of pairs with weight at least `threshold` times the
/// mean pair weight. Trapped when every component has 3 to 5 members and the
/// last `persistence` entries of `history` (oldest first) hold no trio that
/// spans two components.
pub fn detect_partition(
    state: &NetworkState,
    threshold: f64,
    history: &[Vec<TrioChoice>],
    persistence: usize,
) -> Result<PartitionReport> {
    check_detector(threshold, persistence)?;
    let labels = components(state, threshold);
    let clean = history.len() >= persistence
        && history[history.len() - persistence..].iter().all(|c| is_internal(&labels, c));
    Ok(report(state, &labels, clean))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: u64,
    #[serde(rename = "S_t")]
    pub total: f64,
    pub cross_weight_fraction: f64,
    pub trapped: bool,
    pub choices: Vec<TrioChoice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapRun {
    pub run_id: u64,
    pub report: PartitionReport,
    pub steps_taken: u64,
    pub log: Vec<TrajectoryRow>,
}

impl TrapRun {
    pub fn write_log_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "S_t", "cross_weight_fraction", "trapped_flag"])?;
        for r in &self.log {
            w.write_record([
                r.t.to_string(),
                format!("{:e}", r.total),
                format!("{:e}", r.cross_weight_fraction),
                (r.trapped as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapConfig {
    pub n: usize,
    pub x: f64,
    pub init: InitMode,
    pub rule: TrioRule,
    pub order: UpdateOrder,
    pub max_steps: u64,
    pub threshold: f64,
    pub persistence: usize,
    /// Log every `log_stride` steps; 0 disables the log.
    pub log_stride: u64,
}

impl TrapConfig {
    pub fn new(n: usize, x: f64) -> Self {
        Self {
            n,
            x,
            init: InitMode::Unit,
            rule: TrioRule::default(),
            order: UpdateOrder::default(),
            max_steps: 5000,
            threshold: DEFAULT_THRESHOLD,
            persistence: DEFAULT_PERSISTENCE,
            log_stride: 0,
        }
    }

    pub fn initial_state(&self) -> Result<NetworkState> {
        Ok(init_state(self.n, self.x, self.init)?.with_rule(self.rule).with_order(self.order))
    }
}

/// Steps until the partition detector fires or `max_steps` is reached.
pub fn run_until_trap<R: Rng + ?Sized>(
    mut state: NetworkState,
    max_steps: u64,
    threshold: f64,
    persistence: usize,
    log_stride: u64,
    rng: &mut R,
) -> Result<TrapRun> {
    check_detector(threshold, persistence)?;
    let mut labels = components(&state, threshold);
    let mut window: VecDeque<Vec<TrioChoice>> = VecDeque::with_capacity(persistence + 1);
    // consecutive most recent steps without a cross-component trio
    let mut clean_run = 0usize;
    let mut log = Vec::new();
    let mut choices = Vec::with_capacity(state.n);
    let mut steps = 0u64;
    let log_row = |state: &NetworkState, labels: &[usize], clean: bool, choices: &[TrioChoice]| {
        let r = report(state, labels, clean);
        TrajectoryRow {
            t: state.t,
            total: state.total(),
            cross_weight_fraction: r.cross_weight_fraction,
            trapped: r.trapped,
            choices: choices.to_vec(),
        }
    };
    if log_stride > 0 {
        log.push(log_row(&state, &labels, false, &[]));
    }
    let mut trapped = false;
    while steps < max_steps {
        step_in_place(&mut state, &mut choices, rng)?;
        steps += 1;
        window.push_back(choices.clone());
        if window.len() > persistence {
            window.pop_front();
        }
        let next = components(&state, threshold);
        if next == labels {
            clean_run = if is_internal(&labels, &choices) { clean_run + 1 } else { 0 };
        } else {
            labels = next;
            clean_run = window.iter().rev().take_while(|c| is_internal(&labels, c)).count();
        }
        let clean = clean_run >= persistence;
        trapped = clean && report(&state, &labels, true).trapped;
        if log_stride > 0 && (steps.is_multiple_of(log_stride) || trapped || steps == max_steps) {
            log.push(log_row(&state, &labels, clean, &choices));
        }
        if trapped {
            break;
        }
    }
    let report = report(&state, &labels, trapped || clean_run >= persistence);
    Ok(TrapRun { run_id: 0, report, steps_taken: steps, log })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapSummary {
    pub config: TrapConfig,
    pub n_runs: u64,
    pub seed: u64,
    pub trapped: u64,
    /// Trapped runs by block pattern such as `"3+3"`.
    pub patterns: BTreeMap<String, u64>,
    pub runs: Vec<TrapRun>,
}

impl TrapSummary {
    pub fn trapped_with(&self, pattern: &str) -> u64 {
        self.patterns.get(pattern).copied().unwrap_or(0)
    }
}

/// Independent replicas of [`run_until_trap`]; run `i` uses stream `i` of `master_seed`.
pub fn run_replicas(config: &TrapConfig, n_runs: u64, master_seed: u64) -> Result<TrapSummary> {
    if n_runs == 0 {
        return Err(Error::Config("n_runs must be at least 1".into()));
    }
    let start = config.initial_state()?;
    let runs = (0..n_runs)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(master_seed, i);
            run_until_trap(start.clone(), config.max_steps, config.threshold, config.persistence, config.log_stride, &mut rng)
                .map(|r| TrapRun { run_id: i, ..r })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut patterns = BTreeMap::new();
    for r in runs.iter().filter(|r| r.report.trapped) {
        *patterns.entry(r.report.pattern()).or_insert(0) += 1;
    }
    Ok(TrapSummary {
        config: config.clone(),
        n_runs,
        seed: master_seed,
        trapped: patterns.values().sum(),
        patterns,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blocks_state(sizes: &[usize]) -> NetworkState {
        let n: usize = sizes.iter().sum();
        let mut s = NetworkState::from_upper(n, 0.4, vec![1e-12; pair_count(n)]).unwrap();
        let mut start = 0;
        for &b in sizes {
            for i in start..start + b {
                for j in i + 1..start + b {
                    s.set_weight(i, j, 10.0);
                }
            }
            start += b;
        }
        s
    }

    fn internal_history(sizes: &[usize], len: usize) -> Vec<Vec<TrioChoice>> {
        let mut step = Vec::new();
        let mut start = 0;
        for &b in sizes {
            for i in start..start + b {
                let others: Vec<usize> = (start..start + b).filter(|&j| j != i).collect();
                step.push(TrioChoice::new(i, others[0], others[1]));
            }
            start += b;
        }
        vec![step; len]
    }

    #[test]
    fn two_triangles_are_trapped() {
        let s = blocks_state(&[3, 3]);
        let r = detect_partition(&s, DEFAULT_THRESHOLD, &internal_history(&[3, 3], 200), 200).unwrap();
        assert!(r.trapped);
        assert_eq!(r.block_sizes, vec![3, 3]);
        assert_eq!(r.blocks, vec![vec![0, 1, 2], vec![3, 4, 5]]);
        assert!(r.cross_weight_fraction < 1e-12);
    }

    #[test]
    fn three_plus_four() {
        let s = blocks_state(&[3, 4]);
        let r = detect_partition(&s, DEFAULT_THRESHOLD, &internal_history(&[3, 4], 10), 10).unwrap();
        assert!(r.trapped);
        assert_eq!(r.pattern(), "3+4");
    }

    #[test]
    fn uniform_is_not_trapped() {
        for n in 6..9 {
            let s = init_state(n, 0.4, InitMode::Unit).unwrap();
            let r = detect_partition(&s, DEFAULT_THRESHOLD, &[], 1).unwrap();
            assert!(!r.trapped);
            assert_eq!(r.block_sizes, vec![n]);
        }
    }

    #[test]
    fn cross_trio_or_short_history_blocks_detection() {
        let s = blocks_state(&[3, 3]);
        let mut h = internal_history(&[3, 3], 200);
        h[150][0] = TrioChoice::new(0, 1, 4);
        assert!(!detect_partition(&s, DEFAULT_THRESHOLD, &h, 200).unwrap().trapped);
        assert!(!detect_partition(&s, DEFAULT_THRESHOLD, &h[..100], 200).unwrap().trapped);
        assert!(detect_partition(&s, DEFAULT_THRESHOLD, &h, 40).unwrap().trapped);
    }

    #[test]
    fn bad_block_sizes() {
        let s = blocks_state(&[2, 4]);
        assert!(!detect_partition(&s, DEFAULT_THRESHOLD, &internal_history(&[3, 3], 5), 1).unwrap().trapped);
    }

    #[test]
    fn detector_parameters_are_checked() {
        let s = blocks_state(&[3, 3]);
        assert!(detect_partition(&s, 0.0, &[], 1).is_err());
        assert!(detect_partition(&s, 0.5, &[], 0).is_err());
    }

    #[test]
    fn zero_cap() {
        let mut rng = replica_rng(0, 0);
        let r = run_until_trap(init_state(6, 0.4, InitMode::Unit).unwrap(), 0, 1e-4, 200, 1, &mut rng).unwrap();
        assert!(!r.report.trapped);
        assert_eq!(r.steps_taken, 0);
        assert_eq!(r.log.len(), 1);
    }

    #[test]
    fn run_agrees_with_detector() {
        // Replays a run and checks the incremental verdict against the batch detector.
        let cfg = TrapConfig { persistence: 30, ..TrapConfig::new(6, 0.5) };
        let mut rng = replica_rng(17, 3);
        let run = run_until_trap(cfg.initial_state().unwrap(), 3000, cfg.threshold, cfg.persistence, 0, &mut rng).unwrap();
        let mut rng = replica_rng(17, 3);
        let mut s = cfg.initial_state().unwrap();
        let mut history = Vec::new();
        for t in 1..=run.steps_taken {
            let (next, c) = super::super::step(&s, &mut rng).unwrap();
            s = next;
            history.push(c);
            let r = detect_partition(&s, cfg.threshold, &history, cfg.persistence).unwrap();
            assert_eq!(r.trapped, t == run.steps_taken && run.report.trapped, "t = {t}");
        }
    }

    #[test]
    fn replicas_are_deterministic() {
        let cfg = TrapConfig { max_steps: 300, log_stride: 50, ..TrapConfig::new(6, 0.4) };
        let a = run_replicas(&cfg, 8, 3).unwrap();
        assert_eq!(a, run_replicas(&cfg, 8, 3).unwrap());
        let mut buf = Vec::new();
        a.runs[0].write_log_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,S_t,cross_weight_fraction,trapped_flag"));
    }
}
