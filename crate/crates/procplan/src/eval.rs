//! Metrics and baselines: offline/interactive success, per-step top-1
//! accuracy, set-based mIoU, compounding-error curves for rolled-out
//! dynamics, and the Random / Retrieval reference planners. Reports come in
//! two shapes: fixed-width text for humans and CSV with the stable schema
//! `metric,horizon,method,value,seed`.

use crate::envgen::{derive_seed, TaskGraph, Trajectory};
use crate::planner::{beam_search, greedy_plan, BeamConfig, PlanError, PlanningModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no episodes to evaluate")]
    NoEpisodes,
    #[error("retrieval needs a non-empty train set")]
    EmptyTrainSet,
    #[error("episode {id} has horizon {len}, rollout needs at least {want}")]
    ShortEpisode { id: usize, len: usize, want: usize },
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// One evaluated episode: what the planner proposed next to what the expert
/// did, plus enough task-graph coordinates to replay the proposal.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanRecord {
    pub trajectory_id: usize,
    pub task: usize,
    pub start_state: usize,
    pub goal_state: usize,
    /// Expert plan length; also the grouping key for per-horizon rows.
    pub horizon: usize,
    pub predicted: Vec<usize>,
    pub expert: Vec<usize>,
}

impl PlanRecord {
    pub fn from_trajectory(traj: &Trajectory, predicted: Vec<usize>) -> Self {
        PlanRecord {
            trajectory_id: traj.id,
            task: traj.task,
            start_state: traj.start_state(),
            goal_state: traj.goal_state(),
            horizon: traj.horizon(),
            predicted,
            expert: traj.actions.clone(),
        }
    }

    /// Exact positionwise match including length.
    pub fn offline_success(&self) -> bool {
        self.predicted == self.expert
    }

    /// Replay the proposal on the task graph and check goal attainment; any
    /// goal-reaching sequence counts, expert match not required.
    pub fn interactive_success(&self, graph: &TaskGraph) -> bool {
        graph.replay(self.task, self.start_state, &self.predicted) == Some(self.goal_state)
    }

    /// Matches at positions aligned to the expert sequence; predictions
    /// beyond it are ignored, missing ones count as misses.
    fn aligned_matches(&self) -> usize {
        self.predicted
            .iter()
            .zip(&self.expert)
            .filter(|(p, e)| p == e)
            .count()
    }

    /// Order-insensitive, duplicate-collapsing intersection over union.
    /// Two empty plans score 1.0; the second flag reports that case.
    pub fn iou(&self) -> (f64, bool) {
        let p: BTreeSet<usize> = self.predicted.iter().copied().collect();
        let e: BTreeSet<usize> = self.expert.iter().copied().collect();
        let union = p.union(&e).count();
        if union == 0 {
            return (1.0, true);
        }
        (p.intersection(&e).count() as f64 / union as f64, false)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsSlice {
    pub count: usize,
    pub success_offline: f64,
    pub success_interactive: f64,
    pub top1_accuracy: f64,
    pub miou: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub method: String,
    pub seed: u64,
    pub overall: MetricsSlice,
    /// Ascending by horizon; row counts sum to `overall.count`.
    pub per_horizon: Vec<(usize, MetricsSlice)>,
    /// `(t, mean squared latent error)` for t = 1..; empty when the
    /// compounding study was not run.
    pub compounding: Vec<(usize, f64)>,
    pub num_params: Option<usize>,
    /// Labeled anomalies: plan/expert length mismatches, empty-set IoU.
    pub flags: Vec<String>,
}

#[derive(Default)]
struct Tally {
    count: usize,
    offline_hits: usize,
    interactive_hits: usize,
    step_matches: usize,
    step_total: usize,
    iou_sum: f64,
}

impl Tally {
    fn absorb(&mut self, rec: &PlanRecord, graph: &TaskGraph, flags: Option<&mut Vec<String>>) {
        let offline = rec.offline_success();
        let matches = rec.aligned_matches();
        let (iou, both_empty) = rec.iou();
        if offline {
            // Exact match forces the per-plan chain accuracy = 1, IoU = 1.
            assert_eq!(matches, rec.expert.len(), "exact match with step misses");
            assert_eq!(iou, 1.0, "exact match with IoU below 1");
        }
        if let Some(flags) = flags {
            if rec.predicted.len() != rec.expert.len() {
                flags.push(format!(
                    "trajectory {}: plan length {} vs expert {}, counted as offline failure",
                    rec.trajectory_id,
                    rec.predicted.len(),
                    rec.expert.len()
                ));
            }
            if both_empty {
                flags.push(format!(
                    "trajectory {}: empty plan and empty expert, IoU defined as 1.0",
                    rec.trajectory_id
                ));
            }
        }
        self.count += 1;
        self.offline_hits += offline as usize;
        self.interactive_hits += rec.interactive_success(graph) as usize;
        self.step_matches += matches;
        self.step_total += rec.expert.len();
        self.iou_sum += iou;
    }

    fn slice(&self) -> MetricsSlice {
        let n = self.count as f64;
        let slice = MetricsSlice {
            count: self.count,
            success_offline: self.offline_hits as f64 / n,
            success_interactive: self.interactive_hits as f64 / n,
            top1_accuracy: if self.step_total == 0 {
                1.0
            } else {
                self.step_matches as f64 / self.step_total as f64
            },
            miou: self.iou_sum / n,
        };
        for v in [
            slice.success_offline,
            slice.success_interactive,
            slice.top1_accuracy,
            slice.miou,
        ] {
            assert!((0.0..=1.0).contains(&v), "metric {v} outside [0,1]");
        }
        slice
    }
}

/// Aggregate records into a labeled report. Records are processed in
/// trajectory-id order, so the report (flags included) does not depend on
/// input ordering.
pub fn summarize(
    records: &[PlanRecord],
    graph: &TaskGraph,
    method: &str,
    seed: u64,
) -> Result<MetricsReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::NoEpisodes);
    }
    let mut ordered: Vec<&PlanRecord> = records.iter().collect();
    ordered.sort_by_key(|r| r.trajectory_id);

    let mut flags = Vec::new();
    let mut total = Tally::default();
    let mut groups: BTreeMap<usize, Tally> = BTreeMap::new();
    for rec in &ordered {
        total.absorb(rec, graph, Some(&mut flags));
        groups.entry(rec.horizon).or_default().absorb(rec, graph, None);
    }

    // Per-horizon rows must account for exactly the aggregate counts.
    assert_eq!(total.count, groups.values().map(|t| t.count).sum::<usize>());
    assert_eq!(
        total.offline_hits,
        groups.values().map(|t| t.offline_hits).sum::<usize>()
    );
    assert_eq!(
        total.step_matches,
        groups.values().map(|t| t.step_matches).sum::<usize>()
    );

    Ok(MetricsReport {
        method: method.to_string(),
        seed,
        overall: total.slice(),
        per_horizon: groups.iter().map(|(h, t)| (*h, t.slice())).collect(),
        compounding: Vec::new(),
        num_params: None,
        flags,
    })
}

/// How plans are decoded when evaluating a model.
#[derive(Clone, Debug)]
pub enum Decoder {
    Greedy,
    Beam(BeamConfig),
}

/// Plan every episode with the model (actions restricted to the task's
/// admissible set, horizon taken from the expert trajectory).
pub fn plan_episodes<M: PlanningModel>(
    model: &M,
    graph: &TaskGraph,
    episodes: &[&Trajectory],
    decoder: &Decoder,
) -> Result<Vec<PlanRecord>, EvalError> {
    let mut records = Vec::with_capacity(episodes.len());
    for traj in episodes {
        let allowed = graph.admissible_actions(traj.task);
        let start = &traj.observations[0];
        let goal = traj.goal_observation();
        let hyp = match decoder {
            Decoder::Greedy => greedy_plan(model, start, goal, traj.horizon(), allowed)?,
            Decoder::Beam(config) => {
                beam_search(model, start, goal, traj.horizon(), config, allowed)?
            }
        };
        records.push(PlanRecord::from_trajectory(traj, hyp.actions));
    }
    Ok(records)
}

/// Uniform over the full action set at every step.
pub fn random_plan<R: Rng>(num_actions: usize, horizon: usize, rng: &mut R) -> Vec<usize> {
    (0..horizon).map(|_| rng.random_range(0..num_actions)).collect()
}

/// Random baseline over a corpus; each episode gets an independent stream
/// derived from `seed` and its trajectory id, so results do not depend on
/// episode order.
pub fn random_episodes(
    num_actions: usize,
    episodes: &[&Trajectory],
    seed: u64,
) -> Vec<PlanRecord> {
    episodes
        .iter()
        .map(|traj| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, "random-plan", traj.id as u64));
            PlanRecord::from_trajectory(traj, random_plan(num_actions, traj.horizon(), &mut rng))
        })
        .collect()
}

/// Nearest neighbor over concatenated (start, goal) observation features by
/// Euclidean distance; returns the stored expert actions of the winner.
/// Ties go to the lowest trajectory id.
pub fn retrieval_plan(
    start_obs: &[f64],
    goal_obs: &[f64],
    train: &[Trajectory],
) -> Result<Vec<usize>, EvalError> {
    if train.is_empty() {
        return Err(EvalError::EmptyTrainSet);
    }
    let dist2 = |traj: &Trajectory| -> f64 {
        let d_start: f64 = traj.observations[0]
            .iter()
            .zip(start_obs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let d_goal: f64 = traj
            .goal_observation()
            .iter()
            .zip(goal_obs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        d_start + d_goal
    };
    let best = train
        .iter()
        .min_by(|a, b| {
            dist2(a)
                .total_cmp(&dist2(b))
                .then(a.id.cmp(&b.id))
        })
        .expect("non-empty");
    Ok(best.actions.clone())
}

pub fn retrieval_episodes(
    train: &[Trajectory],
    episodes: &[&Trajectory],
) -> Result<Vec<PlanRecord>, EvalError> {
    episodes
        .iter()
        .map(|traj| {
            let plan =
                retrieval_plan(&traj.observations[0], traj.goal_observation(), train)?;
            Ok(PlanRecord::from_trajectory(traj, plan))
        })
        .collect()
}

/// Action source for the compounding rollout. Greedy isolates the dynamics
/// model; the beam variant measures the curve along beam-chosen actions.
#[derive(Clone, Debug)]
pub enum RolloutPolicy {
    Greedy,
    Beam(BeamConfig),
}

/// Roll the dynamics model forward on its own latent predictions from
/// ŝ₁ = encode(o₁), choosing actions with the model's own policy over the
/// full action set, and report the mean squared error against the encoded
/// expert observation at each step t = 1..=t_max. t = 1 compares ŝ₁ with
/// itself and is exactly zero.
pub fn compounding_error<M: PlanningModel>(
    model: &M,
    episodes: &[&Trajectory],
    t_max: usize,
    policy: &RolloutPolicy,
) -> Result<Vec<(usize, f64)>, EvalError> {
    if episodes.is_empty() || t_max == 0 {
        return Err(EvalError::NoEpisodes);
    }
    let allowed: Vec<usize> = (0..model.num_actions()).collect();
    let mut sums = vec![0.0; t_max];
    for traj in episodes {
        if traj.horizon() < t_max {
            return Err(EvalError::ShortEpisode {
                id: traj.id,
                len: traj.horizon(),
                want: t_max,
            });
        }
        let start = &traj.observations[0];
        let goal = traj.goal_observation();
        let rolled: Vec<Vec<f64>> = if t_max == 1 {
            vec![model.encode(start)?]
        } else {
            let hyp = match policy {
                RolloutPolicy::Greedy => greedy_plan(model, start, goal, t_max - 1, &allowed)?,
                RolloutPolicy::Beam(config) => {
                    beam_search(model, start, goal, t_max - 1, config, &allowed)?
                }
            };
            hyp.latents
        };
        for t in 1..=t_max {
            let target = model.encode(&traj.observations[t - 1])?;
            let pred = &rolled[t - 1];
            let mse = pred
                .iter()
                .zip(&target)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                / target.len() as f64;
            sums[t - 1] += mse;
        }
    }
    Ok(sums
        .iter()
        .enumerate()
        .map(|(i, s)| (i + 1, s / episodes.len() as f64))
        .collect())
}

fn csv_value(v: f64) -> String {
    format!("{v}")
}

/// Machine-readable rows, schema `metric,horizon,method,value,seed`. The
/// horizon column holds a trajectory length for metric rows ("all" for the
/// aggregate) and the rollout step t for `compounding_mse` rows.
pub fn csv_report(reports: &[&MetricsReport]) -> String {
    let mut out = String::from("metric,horizon,method,value,seed\n");
    for r in reports {
        let mut push = |metric: &str, horizon: &str, value: String| {
            writeln!(out, "{metric},{horizon},{},{value},{}", r.method, r.seed).unwrap();
        };
        let rows: [(&str, fn(&MetricsSlice) -> String); 5] = [
            ("episodes", |s| s.count.to_string()),
            ("success_offline", |s| csv_value(s.success_offline)),
            ("success_interactive", |s| csv_value(s.success_interactive)),
            ("top1_accuracy", |s| csv_value(s.top1_accuracy)),
            ("miou", |s| csv_value(s.miou)),
        ];
        for (metric, get) in rows {
            push(metric, "all", get(&r.overall));
            for (h, slice) in &r.per_horizon {
                push(metric, &h.to_string(), get(slice));
            }
        }
        if let Some(p) = r.num_params {
            push("num_params", "all", p.to_string());
        }
        for (t, mse) in &r.compounding {
            push("compounding_mse", &t.to_string(), csv_value(*mse));
        }
    }
    out
}

/// Fixed-width text report for terminals and logs.
pub fn table_report(reports: &[&MetricsReport]) -> String {
    let mut out = String::new();
    for r in reports {
        writeln!(out, "== {} (seed {}) ==", r.method, r.seed).unwrap();
        if let Some(p) = r.num_params {
            writeln!(out, "parameters: {p}").unwrap();
        }
        writeln!(
            out,
            "{:>8} {:>6} {:>12} {:>12} {:>10} {:>8}",
            "horizon", "n", "succ-off", "succ-inter", "top1", "miou"
        )
        .unwrap();
        let mut row = |label: &str, s: &MetricsSlice| {
            writeln!(
                out,
                "{:>8} {:>6} {:>12.4} {:>12.4} {:>10.4} {:>8.4}",
                label, s.count, s.success_offline, s.success_interactive, s.top1_accuracy, s.miou
            )
            .unwrap();
        };
        row("all", &r.overall);
        for (h, slice) in &r.per_horizon {
            row(&h.to_string(), slice);
        }
        if !r.compounding.is_empty() {
            writeln!(out, "compounding error (t, mse):").unwrap();
            for (t, mse) in &r.compounding {
                writeln!(out, "  t={t:<3} {mse:.6}").unwrap();
            }
        }
        for f in &r.flags {
            writeln!(out, "note: {f}").unwrap();
        }
        writeln!(out).unwrap();
    }
    out
}
