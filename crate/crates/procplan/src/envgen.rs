//! Synthetic goal-conditioned task families with exact planning oracles.
//!
//! A family is a deterministic transition table over `S` discrete states
//! shared action vocabulary of size `|A|`. States are partitioned across
//! tasks; each task restricts the action set to an admissible subset. The
//! generator arranges every task's states on a random ring and gives each
//! action a small fixed jump along that ring, which keeps pairwise distances
//! spread out (a dense random table would have diameter ~2 and no pairs at
//! horizon 3+). Because every family is a plain transition table, shortest
//! paths — and therefore expert demonstrations and exhaustive plan oracles —
//! are exact.
//!
//! Observations are noisy linear embeddings of the discrete state: a fixed
//! `[S, obs_dim]` matrix with standard-normal entries, plus iid Gaussian
//! noise. Noise makes raw-vector memorization useless while leaving the
//! state recoverable by a trained encoder.

use crate::numcore::Array;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::VecDeque;
use std::path::Path;
use thiserror::Error;

/// Bumped whenever the on-disk layout of [`Dataset`] changes.
pub const DATASET_FORMAT_VERSION: u32 = 1;

const FAMILY_ATTEMPTS: usize = 50;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt artifact: {0}")]
    Corrupt(#[from] serde_json::Error),
    #[error("artifact format version {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("invalid task family: {0}")]
    InvalidFamily(String),
    #[error("generation failed after {attempts} attempts: {reason}")]
    Unsatisfiable { attempts: usize, reason: String },
    #[error("no path in task {task} from state {start} to {goal}")]
    Unreachable { task: usize, start: usize, goal: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Deterministic transition structure shared by all tasks, plus the per-task
/// admissible action subsets. Applying an action outside the admissible set
/// (or from a state outside the task) is undefined and [`TaskGraph::apply`]
/// returns `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskGraph {
    pub num_states: usize,
    pub num_actions: usize,
    pub seed: u64,
    /// `transitions[s][a]` — next state, defined for every pair.
    transitions: Vec<Vec<usize>>,
    /// Sorted admissible action ids per task.
    admissible: Vec<Vec<usize>>,
    /// States owned by each task. Order is the generator's ring order; only
    /// membership matters to consumers.
    task_states: Vec<Vec<usize>>,
}

impl TaskGraph {
    /// Validated construction from explicit tables; used by tests that need
    /// hand-built graphs with known oracle answers.
    pub fn from_parts(
        transitions: Vec<Vec<usize>>,
        admissible: Vec<Vec<usize>>,
        task_states: Vec<Vec<usize>>,
        seed: u64,
    ) -> Result<Self, DataError> {
        let num_states = transitions.len();
        if num_states == 0 {
            return Err(DataError::InvalidFamily("no states".into()));
        }
        let num_actions = transitions[0].len();
        if num_actions == 0 {
            return Err(DataError::InvalidFamily("no actions".into()));
        }
        if transitions.iter().any(|row| row.len() != num_actions) {
            return Err(DataError::InvalidFamily("ragged transition table".into()));
        }
        if let Some(&bad) = transitions.iter().flatten().find(|&&t| t >= num_states) {
            return Err(DataError::InvalidFamily(format!("transition to {bad} out of range")));
        }
        if admissible.len() != task_states.len() || admissible.is_empty() {
            return Err(DataError::InvalidFamily("task count mismatch".into()));
        }
        let mut seen = vec![false; num_states];
        for states in &task_states {
            for &s in states {
                if s >= num_states || seen[s] {
                    return Err(DataError::InvalidFamily(format!(
                        "state {s} missing or assigned twice"
                    )));
                }
                seen[s] = true;
            }
        }
        if !seen.iter().all(|&v| v) {
            return Err(DataError::InvalidFamily("states not fully partitioned".into()));
        }
        for (k, actions) in admissible.iter().enumerate() {
            if actions.is_empty() {
                return Err(DataError::InvalidFamily(format!("task {k} has no actions")));
            }
            if actions.windows(2).any(|w| w[0] >= w[1]) {
                return Err(DataError::InvalidFamily(format!(
                    "task {k} admissible set not sorted/unique"
                )));
            }
            if actions.iter().any(|&a| a >= num_actions) {
                return Err(DataError::InvalidFamily(format!(
                    "task {k} admissible action out of range"
                )));
            }
            // Tasks must be closed: admissible moves stay inside the task.
            for &s in &task_states[k] {
                for &a in actions {
                    let t = transitions[s][a];
                    if !task_states[k].contains(&t) {
                        return Err(DataError::InvalidFamily(format!(
                            "task {k} leaks: δ({s}, {a}) = {t} outside task"
                        )));
                    }
                }
            }
        }
        Ok(TaskGraph { num_states, num_actions, seed, transitions, admissible, task_states })
    }

    pub fn num_tasks(&self) -> usize {
        self.admissible.len()
    }

    pub fn admissible_actions(&self, task: usize) -> &[usize] {
        &self.admissible[task]
    }

    pub fn task_states(&self, task: usize) -> &[usize] {
        &self.task_states[task]
    }

    pub fn task_of_state(&self, state: usize) -> Option<usize> {
        self.task_states.iter().position(|states| states.contains(&state))
    }

    /// One admissible step; `None` if the action is inadmissible for the
    /// task or the state belongs to another task.
    pub fn apply(&self, task: usize, state: usize, action: usize) -> Option<usize> {
        if !self.admissible[task].contains(&action) || !self.task_states[task].contains(&state) {
            return None;
        }
        Some(self.transitions[state][action])
    }

    /// Execute an action sequence; `None` as soon as a step is undefined.
    pub fn replay(&self, task: usize, start: usize, actions: &[usize]) -> Option<usize> {
        let mut s = start;
        for &a in actions {
            s = self.apply(task, s, a)?;
        }
        Some(s)
    }

    /// Shortest admissible path length, `None` if unreachable.
    pub fn dist(&self, task: usize, start: usize, goal: usize) -> Option<usize> {
        if !self.task_states[task].contains(&start) || !self.task_states[task].contains(&goal) {
            return None;
        }
        let mut dist = vec![usize::MAX; self.num_states];
        let mut queue = VecDeque::new();
        dist[start] = 0;
        queue.push_back(start);
        while let Some(s) = queue.pop_front() {
            if s == goal {
                return Some(dist[s]);
            }
            for &a in &self.admissible[task] {
                let t = self.transitions[s][a];
                if dist[t] == usize::MAX {
                    dist[t] = dist[s] + 1;
                    queue.push_back(t);
                }
            }
        }
        None
    }

    /// All ordered `(start, goal)` pairs at exact distance `horizon`,
    /// sorted for deterministic sampling.
    pub fn exact_distance_pairs(&self, task: usize, horizon: usize) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for &s in &self.task_states[task] {
            for &g in &self.task_states[task] {
                if self.dist(task, s, g) == Some(horizon) {
                    pairs.push((s, g));
                }
            }
        }
        pairs.sort_unstable();
        pairs
    }

    /// The lexicographically smallest shortest action sequence from `start`
    /// to `goal`: at every step take the lowest action id that still admits
    /// a shortest completion.
    pub fn expert_actions(
        &self,
        task: usize,
        start: usize,
        goal: usize,
    ) -> Result<Vec<usize>, DataError> {
        let Some(total) = self.dist(task, start, goal) else {
            return Err(DataError::Unreachable { task, start, goal });
        };
        let mut actions = Vec::with_capacity(total);
        let mut s = start;
        for remaining in (1..=total).rev() {
            let mut chosen = None;
            for &a in &self.admissible[task] {
                let t = self.transitions[s][a];
                if self.dist(task, t, goal) == Some(remaining - 1) {
                    chosen = Some((a, t));
                    break;
                }
            }
            let (a, t) = chosen.expect("BFS distance guarantees a decrementing move");
            actions.push(a);
            s = t;
        }
        Ok(actions)
    }

    /// Every admissible action sequence of length exactly `horizon` that
    /// drives `start` to `goal`, in lexicographic order. Exhaustive DFS with
    /// distance pruning — intended for small `|A|^horizon` only.
    pub fn oracle_plans(
        &self,
        task: usize,
        start: usize,
        goal: usize,
        horizon: usize,
    ) -> Vec<Vec<usize>> {
        let mut found = Vec::new();
        let mut prefix = Vec::with_capacity(horizon);
        self.oracle_dfs(task, start, goal, horizon, &mut prefix, &mut found);
        found
    }

    fn oracle_dfs(
        &self,
        task: usize,
        s: usize,
        goal: usize,
        remaining: usize,
        prefix: &mut Vec<usize>,
        found: &mut Vec<Vec<usize>>,
    ) {
        if remaining == 0 {
            if s == goal {
                found.push(prefix.clone());
            }
            return;
        }
        match self.dist(task, s, goal) {
            Some(d) if d <= remaining => {}
            _ => return,
        }
        for &a in &self.admissible[task] {
            prefix.push(a);
            self.oracle_dfs(task, self.transitions[s][a], goal, remaining - 1, prefix, found);
            prefix.pop();
        }
    }
}

/// Fixed random linear embedding of discrete states plus iid Gaussian noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationModel {
    pub obs_dim: usize,
    /// Per-coordinate noise std; embedding entries are standard normal, so
    /// this is relative to unit scale.
    pub noise_sigma: f64,
    /// `[num_states, obs_dim]`, row per state.
    embedding: Array,
}

impl ObservationModel {
    pub fn generate(num_states: usize, obs_dim: usize, noise_sigma: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> =
            (0..num_states * obs_dim).map(|_| rng.sample(StandardNormal)).collect();
        let embedding = Array::new(vec![num_states, obs_dim], data).expect("shape");
        ObservationModel { obs_dim, noise_sigma, embedding }
    }

    /// Noiseless embedding row for a state.
    pub fn embedding_row(&self, state: usize) -> &[f64] {
        self.embedding.row(state)
    }

    pub fn render<R: Rng>(&self, state: usize, rng: &mut R) -> Vec<f64> {
        self.embedding_row(state)
            .iter()
            .map(|&e| e + self.noise_sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

/// One expert demonstration. `states` has `T + 1` entries (start through
/// goal); `observations[t]` renders `states[t]`, so the last observation is
/// the goal observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: usize,
    pub task: usize,
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub observations: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn start_state(&self) -> usize {
        self.states[0]
    }

    pub fn goal_state(&self) -> usize {
        *self.states.last().expect("non-empty")
    }

    pub fn goal_observation(&self) -> &[f64] {
        self.observations.last().expect("non-empty")
    }
}

/// Everything needed to generate a dataset; hashed into artifact lineage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub num_states: usize,
    pub num_actions: usize,
    pub num_tasks: usize,
    pub obs_dim: usize,
    pub noise_sigma: f64,
    pub horizons: Vec<usize>,
    pub num_trajectories: usize,
    pub train_fraction: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 7,
            num_states: 20,
            num_actions: 8,
            num_tasks: 2,
            obs_dim: 64,
            noise_sigma: 0.05,
            horizons: vec![3, 4],
            num_trajectories: 500,
            train_fraction: 0.7,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.num_tasks == 0 || self.num_states / self.num_tasks < 4 {
            return Err(DataError::InvalidConfig(format!(
                "{} states across {} tasks leaves blocks below 4 states",
                self.num_states, self.num_tasks
            )));
        }
        if self.num_actions < 2 {
            return Err(DataError::InvalidConfig("need at least 2 actions".into()));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(DataError::InvalidConfig("horizons must be non-empty, positive".into()));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(DataError::InvalidConfig("train_fraction outside [0, 1]".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(DataError::InvalidConfig("negative noise_sigma".into()));
        }
        if self.obs_dim == 0 || self.num_trajectories == 0 {
            return Err(DataError::InvalidConfig("zero obs_dim or trajectory count".into()));
        }
        Ok(())
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Stable per-purpose seed derivation so independent streams (graph, noise,
/// each trajectory) never alias.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub config_hash: String,
    pub config: GenConfig,
    pub train_count: usize,
}

/// A generated corpus: the family, the observation model (needed to render
/// fresh observations during interactive replay), and the demonstrations.
/// Trajectories `[0, train_count)` are the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub graph: TaskGraph,
    pub obs_model: ObservationModel,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn train(&self) -> &[Trajectory] {
        &self.trajectories[..self.header.train_count]
    }

    pub fn test(&self) -> &[Trajectory] {
        &self.trajectories[self.header.train_count..]
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let raw = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&raw)?;
        let found = value
            .get("header")
            .and_then(|h| h.get("version"))
            .and_then(|v| v.as_u64())
            .ok_or_else(|| DataError::InvalidFamily("missing header.version".into()))?
            as u32;
        if found != DATASET_FORMAT_VERSION {
            return Err(DataError::VersionMismatch {
                found,
                expected: DATASET_FORMAT_VERSION,
            });
        }
        Ok(serde_json::from_value(value)?)
    }
}

/// Generate a task family alone. Jump sizes are from {1, 2} with at least
/// one unit jump admissible per task, which guarantees
/// all-pairs-within-task reachability and a spread of exact distances.
pub fn generate_task_family(
    seed: u64,
    num_states: usize,
    num_actions: usize,
    num_tasks: usize,
) -> Result<TaskGraph, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Jump size per action along each task's ring. Action 0 always steps by
    // one so unit progress is representable.
    let jumps: Vec<usize> =
        (0..num_actions).map(|a| if a == 0 { 1 } else { rng.random_range(1..=2) }).collect();

    // Random partition of states into contiguous ring blocks.
    let mut order: Vec<usize> = (0..num_states).collect();
    order.shuffle(&mut rng);
    let base = num_states / num_tasks;
    let extra = num_states % num_tasks;
    let mut task_states = Vec::with_capacity(num_tasks);
    let mut cursor = 0;
    for k in 0..num_tasks {
        let size = base + usize::from(k < extra);
        task_states.push(order[cursor..cursor + size].to_vec());
        cursor += size;
    }

    let mut transitions = vec![vec![0; num_actions]; num_states];
    for ring in &task_states {
        for (pos, &s) in ring.iter().enumerate() {
            for (a, &j) in jumps.iter().enumerate() {
                transitions[s][a] = ring[(pos + j) % ring.len()];
            }
        }
    }

    let subset_size = ((num_actions as f64) * 0.75).round().max(2.0) as usize;
    let subset_size = subset_size.min(num_actions);
    let mut admissible = Vec::with_capacity(num_tasks);
    let all_actions: Vec<usize> = (0..num_actions).collect();
    for k in 0..num_tasks {
        let mut subset;
        let mut tries = 0;
        loop {
            subset = all_actions
                .choose_multiple(&mut rng, subset_size)
                .copied()
                .collect::<Vec<usize>>();
            subset.sort_unstable();
            if subset.iter().any(|&a| jumps[a] == 1) {
                break;
            }
            tries += 1;
            if tries > 32 {
                return Err(DataError::Unsatisfiable {
                    attempts: tries,
                    reason: format!("no unit-jump action for task {k}"),
                });
            }
        }
        admissible.push(subset);
    }

    TaskGraph::from_parts(transitions, admissible, task_states, seed)
}

/// Full pipeline: family + observation model + expert trajectories. Retries
/// family generation (bounded) until every requested horizon has exact-
/// distance pairs in at least one task.
pub fn generate_dataset(config: &GenConfig) -> Result<Dataset, DataError> {
    config.validate()?;
    let mut graph = None;
    for attempt in 0..FAMILY_ATTEMPTS {
        let candidate = generate_task_family(
            derive_seed(config.seed, "family", attempt as u64),
            config.num_states,
            config.num_actions,
            config.num_tasks,
        )?;
        let feasible = config.horizons.iter().all(|&t| {
            (0..candidate.num_tasks()).any(|k| !candidate.exact_distance_pairs(k, t).is_empty())
        });
        if feasible {
            graph = Some(candidate);
            break;
        }
    }
    let graph = graph.ok_or_else(|| DataError::Unsatisfiable {
        attempts: FAMILY_ATTEMPTS,
        reason: format!("no family realizes horizons {:?}", config.horizons),
    })?;

    let obs_model = ObservationModel::generate(
        config.num_states,
        config.obs_dim,
        config.noise_sigma,
        derive_seed(config.seed, "observations", 0),
    );

    // Exact-distance pair pools per (horizon, task).
    let mut pools: Vec<Vec<Vec<(usize, usize)>>> = Vec::new();
    for &t in &config.horizons {
        pools.push(
            (0..graph.num_tasks()).map(|k| graph.exact_distance_pairs(k, t)).collect(),
        );
    }

    let mut trajectories = Vec::with_capacity(config.num_trajectories);
    for id in 0..config.num_trajectories {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "trajectory", id as u64));
        let h_idx = rng.random_range(0..config.horizons.len());
        let horizon = config.horizons[h_idx];
        let tasks_with_pairs: Vec<usize> =
            (0..graph.num_tasks()).filter(|&k| !pools[h_idx][k].is_empty()).collect();
        let task = tasks_with_pairs[rng.random_range(0..tasks_with_pairs.len())];
        let &(start, goal) = &pools[h_idx][task][rng.random_range(0..pools[h_idx][task].len())];

        let actions = graph.expert_actions(task, start, goal)?;
        debug_assert_eq!(actions.len(), horizon);
        let mut states = vec![start];
        for &a in &actions {
            let next = graph.apply(task, *states.last().unwrap(), a).expect("expert is admissible");
            states.push(next);
        }
        let observations: Vec<Vec<f64>> =
            states.iter().map(|&s| obs_model.render(s, &mut rng)).collect();
        trajectories.push(Trajectory { id, task, states, actions, observations });
    }

    let train_count = (config.num_trajectories as f64 * config.train_fraction).floor() as usize;
    Ok(Dataset {
        header: DatasetHeader {
            version: DATASET_FORMAT_VERSION,
            config_hash: config.config_hash(),
            config: config.clone(),
            train_count,
        },
        graph,
        obs_model,
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 4-state graph with two distinct shortest paths 0 -> 3 so the lex
    /// tie-break is observable: [0, 3] and [1, 2].
    fn diamond() -> TaskGraph {
        // actions:        0        1        2        3
        let transitions = vec![
            vec![2, 1, 0, 0], // state 0: a0 -> 2, a1 -> 1
            vec![1, 1, 3, 1], // state 1: a2 -> 3
            vec![2, 2, 2, 3], // state 2: a3 -> 3
            vec![3, 3, 3, 3],
        ];
        TaskGraph::from_parts(transitions, vec![vec![0, 1, 2, 3]], vec![vec![0, 1, 2, 3]], 0)
            .unwrap()
    }

    #[test]
    fn expert_takes_lexicographically_smallest_shortest_path() {
        let g = diamond();
        assert_eq!(g.dist(0, 0, 3), Some(2));
        assert_eq!(g.expert_actions(0, 0, 3).unwrap(), vec![0, 3]);
    }

    #[test]
    fn oracle_enumerates_all_exact_length_plans_sorted() {
        let g = diamond();
        let plans = g.oracle_plans(0, 0, 3, 2);
        assert_eq!(plans, vec![vec![0, 3], vec![1, 2]]);
        // Length-3 plans must pad with self-loops where available.
        let plans3 = g.oracle_plans(0, 0, 3, 3);
        assert!(plans3.iter().all(|p| p.len() == 3));
        assert!(plans3.contains(&vec![1, 1, 2]));
        assert!(plans3.windows(2).all(|w| w[0] < w[1]), "lexicographic order");
    }

    #[test]
    fn apply_rejects_inadmissible_action_and_foreign_state() {
        let transitions = vec![vec![1, 0], vec![0, 1]];
        let g = TaskGraph::from_parts(
            transitions,
            vec![vec![0]],
            vec![vec![0, 1]],
            0,
        )
        .unwrap();
        assert_eq!(g.apply(0, 0, 0), Some(1));
        assert_eq!(g.apply(0, 0, 1), None); // action 1 inadmissible
        assert_eq!(g.replay(0, 0, &[0, 1]), None);
        assert_eq!(g.replay(0, 0, &[0, 0]), Some(0));
    }

    #[test]
    fn from_parts_rejects_leaky_tasks() {
        // Task 0 owns {0}, but its admissible action jumps to state 1.
        let transitions = vec![vec![1], vec![1]];
        let err = TaskGraph::from_parts(transitions, vec![vec![0], vec![0]], vec![vec![0], vec![1]], 0);
        assert!(matches!(err, Err(DataError::InvalidFamily(_))));
    }

    #[test]
    fn generated_family_structure_holds() {
        let g = generate_task_family(11, 20, 8, 2).unwrap();
        assert_eq!(g.num_states, 20);
        assert_eq!(g.num_tasks(), 2);
        let total: usize = (0..2).map(|k| g.task_states(k).len()).sum();
        assert_eq!(total, 20);
        for k in 0..2 {
            let actions = g.admissible_actions(k);
            assert!(actions.len() >= 2);
            assert!(actions.windows(2).all(|w| w[0] < w[1]));
            // Closure + all-pairs reachability within the task.
            for &s in g.task_states(k) {
                for &t in g.task_states(k) {
                    assert!(g.dist(k, s, t).is_some(), "unreachable {s} -> {t} in task {k}");
                }
            }
        }
    }

    #[test]
    fn default_config_dataset_has_exact_horizon_trajectories() {
        let config = GenConfig { num_trajectories: 40, ..GenConfig::default() };
        let ds = generate_dataset(&config).unwrap();
        assert_eq!(ds.trajectories.len(), 40);
        assert_eq!(ds.header.train_count, 28);
        assert_eq!(ds.train().len(), 28);
        assert_eq!(ds.test().len(), 12);
        for tr in &ds.trajectories {
            assert!(config.horizons.contains(&tr.horizon()));
            assert_eq!(ds.graph.dist(tr.task, tr.start_state(), tr.goal_state()), Some(tr.horizon()));
            assert_eq!(tr.states.len(), tr.horizon() + 1);
            assert_eq!(tr.observations.len(), tr.horizon() + 1);
            assert!(tr.observations.iter().all(|o| o.len() == config.obs_dim));
            // Expert replays to the goal.
            assert_eq!(ds.graph.replay(tr.task, tr.start_state(), &tr.actions), Some(tr.goal_state()));
            // Expert is the lex-smallest shortest path.
            assert_eq!(
                ds.graph.expert_actions(tr.task, tr.start_state(), tr.goal_state()).unwrap(),
                tr.actions
            );
        }
    }

    #[test]
    fn long_horizon_family_reaches_distance_eight() {
        let config = GenConfig {
            num_states: 24,
            num_tasks: 1,
            horizons: vec![8],
            num_trajectories: 10,
            ..GenConfig::default()
        };
        let ds = generate_dataset(&config).unwrap();
        assert!(ds.trajectories.iter().all(|t| t.horizon() == 8));
    }

    #[test]
    fn zero_noise_observations_equal_embedding_rows() {
        let config = GenConfig {
            noise_sigma: 0.0,
            num_trajectories: 5,
            ..GenConfig::default()
        };
        let ds = generate_dataset(&config).unwrap();
        for tr in &ds.trajectories {
            for (t, &s) in tr.states.iter().enumerate() {
                assert_eq!(tr.observations[t], ds.obs_model.embedding_row(s));
            }
        }
    }

    #[test]
    fn same_seed_regenerates_bit_identical_dataset() {
        let config = GenConfig { num_trajectories: 12, ..GenConfig::default() };
        let a = generate_dataset(&config).unwrap();
        let b = generate_dataset(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dataset_roundtrips_exactly_through_json_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.json");
        let config = GenConfig { num_trajectories: 8, ..GenConfig::default() };
        let ds = generate_dataset(&config).unwrap();
        ds.save(&path).unwrap();
        let back = Dataset::load(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn version_mismatch_and_corruption_are_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let config = GenConfig { num_trajectories: 4, ..GenConfig::default() };
        let ds = generate_dataset(&config).unwrap();

        let bumped = dir.path().join("bumped.json");
        let mut value = serde_json::to_value(&ds).unwrap();
        value["header"]["version"] = serde_json::json!(DATASET_FORMAT_VERSION + 1);
        std::fs::write(&bumped, serde_json::to_string(&value).unwrap()).unwrap();
        assert!(matches!(
            Dataset::load(&bumped),
            Err(DataError::VersionMismatch { found, expected })
                if found == DATASET_FORMAT_VERSION + 1 && expected == DATASET_FORMAT_VERSION
        ));

        let corrupt = dir.path().join("corrupt.json");
        std::fs::write(&corrupt, "{\"header\": {\"version\": 1, ").unwrap();
        assert!(matches!(Dataset::load(&corrupt), Err(DataError::Corrupt(_))));
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = GenConfig::default();
        let mut b = GenConfig::default();
        assert_eq!(a.config_hash(), b.config_hash());
        b.noise_sigma = 0.06;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn generated_families_expert_matches_oracle_front(seed in 0u64..200) {
            let g = generate_task_family(seed, 12, 4, 1).unwrap();
            // For a few exact-distance pairs, the expert must equal the
            // first oracle plan of that length.
            for horizon in 1..=3usize {
                for &(s, goal) in g.exact_distance_pairs(0, horizon).iter().take(3) {
                    let expert = g.expert_actions(0, s, goal).unwrap();
                    proptest::prop_assert_eq!(expert.len(), horizon);
                    let oracle = g.oracle_plans(0, s, goal, horizon);
                    proptest::prop_assert!(!oracle.is_empty());
                    proptest::prop_assert_eq!(&oracle[0], &expert);
                    proptest::prop_assert_eq!(g.replay(0, s, &oracle[0]), Some(goal));
                }
            }
        }
    }
}
