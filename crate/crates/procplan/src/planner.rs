//! Greedy decoding and discrepancy-constrained beam search over a learned
//! planning model.
//!
//! Search talks to the model through [`PlanningModel`], which exposes exactly
//! three things: encode an observation into a latent, score the next action
//! given the latent/action prefix, and predict the next latent. Tests drive
//! the search with hand-built probability tables through the same trait.
//!
//! Scores are cumulative next-action log-probabilities; predicted latents
//! carry no score mass. Plans have a fixed horizon: every hypothesis is
//! extended exactly `horizon` times, so "end of sequence" is reaching the
//! horizon rather than a special token.

use crate::numcore::log_softmax;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid beam config: {0}")]
    InvalidConfig(String),
    #[error("horizon {horizon} exceeds n_max {n_max}")]
    HorizonTooLong { horizon: usize, n_max: usize },
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error("no allowed actions to extend with")]
    NoAllowedActions,
    #[error("allowed action {action} out of range ({num_actions} actions)")]
    ActionOutOfRange { action: usize, num_actions: usize },
    #[error("model failure: {0}")]
    Model(String),
}

/// What beam search needs from a model. `latents` always holds the latent
/// for every visited step (so `latents.len() == actions.len() + 1`), `goal`
/// is the encoded goal observation.
pub trait PlanningModel {
    fn num_actions(&self) -> usize;

    fn encode(&self, observation: &[f64]) -> Result<Vec<f64>, PlanError>;

    /// Logits over the next action given the prefix.
    fn action_logits(
        &self,
        latents: &[Vec<f64>],
        actions: &[usize],
        goal: &[f64],
    ) -> Result<Vec<f64>, PlanError>;

    /// Latent after also taking `actions.last()` (i.e. `actions` here is one
    /// longer than in [`PlanningModel::action_logits`]).
    fn next_latent(
        &self,
        latents: &[Vec<f64>],
        actions: &[usize],
        goal: &[f64],
    ) -> Result<Vec<f64>, PlanError>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    /// Beam width: hypotheses kept after each step.
    pub width: usize,
    /// Discrepancy buffer: one-token extensions tried per hypothesis.
    pub buffer: usize,
    /// Hard cap on hypothesis length; horizons beyond this are rejected.
    pub n_max: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig { width: 2, buffer: 3, n_max: 16 }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.width == 0 || self.buffer == 0 || self.n_max == 0 {
            return Err(PlanError::InvalidConfig(
                "width, buffer and n_max must all be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One step of a finished plan. `t` is 1-based; `latent` is the latent the
/// action was chosen from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub t: usize,
    pub latent: Vec<f64>,
    pub action_id: usize,
    pub action_logits: Vec<f64>,
}

/// A (partial) plan under search. `latents[i]` is the latent before action
/// `i`; the final entry is the latent after the last action, so
/// `latents.len() == actions.len() + 1` always holds.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamHypothesis {
    pub actions: Vec<usize>,
    pub latents: Vec<Vec<f64>>,
    /// Sum of chosen-action log-probabilities.
    pub score: f64,
    /// Logits the step's action was drawn from, one row per action.
    pub step_logits: Vec<Vec<f64>>,
}

impl BeamHypothesis {
    pub fn to_plan(&self) -> Vec<PlanStep> {
        (0..self.actions.len())
            .map(|i| PlanStep {
                t: i + 1,
                latent: self.latents[i].clone(),
                action_id: self.actions[i],
                action_logits: self.step_logits[i].clone(),
            })
            .collect()
    }
}

/// Log-probability margin between the best-scoring action and the chosen
/// one; 0 exactly when the argmax was chosen. Works on raw logits since the
/// normalizer cancels.
pub fn discrepancy_gap(logits: &[f64], chosen: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max - logits[chosen]
}

fn check_allowed(allowed: &[usize], num_actions: usize) -> Result<(), PlanError> {
    if allowed.is_empty() {
        return Err(PlanError::NoAllowedActions);
    }
    if let Some(&bad) = allowed.iter().find(|&&a| a >= num_actions) {
        return Err(PlanError::ActionOutOfRange { action: bad, num_actions });
    }
    Ok(())
}

/// The top-`buffer` one-token extensions of a hypothesis, restricted to
/// `allowed`, ordered by descending log-probability with ties broken by
/// ascending action id. Returns `(action, log_prob, logits)` tuples; the
/// caller decides which to keep.
pub fn admissible_extensions<M: PlanningModel>(
    hyp: &BeamHypothesis,
    model: &M,
    goal: &[f64],
    allowed: &[usize],
    buffer: usize,
) -> Result<Vec<(usize, f64, Vec<f64>)>, PlanError> {
    let logits = model.action_logits(&hyp.latents, &hyp.actions, goal)?;
    if logits.len() != model.num_actions() {
        return Err(PlanError::Model(format!(
            "model produced {} logits for {} actions",
            logits.len(),
            model.num_actions()
        )));
    }
    let log_probs = log_softmax(&logits);
    let mut ranked: Vec<usize> = allowed.to_vec();
    ranked.sort_by(|&a, &b| {
        log_probs[b].total_cmp(&log_probs[a]).then(a.cmp(&b))
    });
    ranked.truncate(buffer);
    Ok(ranked
        .into_iter()
        .map(|a| (a, log_probs[a], logits.clone()))
        .collect())
}

/// Discrepancy-constrained beam search to a fixed horizon.
///
/// Each step expands every live hypothesis with its top-`buffer` extensions,
/// then prunes the pooled candidates back to `width` by (score desc, then
/// lexicographically smallest action prefix). The returned hypothesis is the
/// best-scoring one after exactly `horizon` extensions.
pub fn beam_search<M: PlanningModel>(
    model: &M,
    start_obs: &[f64],
    goal_obs: &[f64],
    horizon: usize,
    config: &BeamConfig,
    allowed: &[usize],
) -> Result<BeamHypothesis, PlanError> {
    config.validate()?;
    if horizon == 0 {
        return Err(PlanError::EmptyHorizon);
    }
    if horizon > config.n_max {
        return Err(PlanError::HorizonTooLong { horizon, n_max: config.n_max });
    }
    check_allowed(allowed, model.num_actions())?;

    let goal = model.encode(goal_obs)?;
    let root = BeamHypothesis {
        actions: Vec::new(),
        latents: vec![model.encode(start_obs)?],
        score: 0.0,
        step_logits: Vec::new(),
    };

    let mut beam = vec![root];
    for _ in 0..horizon {
        let mut candidates = Vec::with_capacity(beam.len() * config.buffer);
        for hyp in &beam {
            for (action, log_prob, logits) in
                admissible_extensions(hyp, model, &goal, allowed, config.buffer)?
            {
                let mut actions = hyp.actions.clone();
                actions.push(action);
                let next = model.next_latent(&hyp.latents, &actions, &goal)?;
                let mut latents = hyp.latents.clone();
                latents.push(next);
                let mut step_logits = hyp.step_logits.clone();
                step_logits.push(logits);
                candidates.push(BeamHypothesis {
                    actions,
                    latents,
                    score: hyp.score + log_prob,
                    step_logits,
                });
            }
        }
        candidates.sort_by(|a, b| {
            b.score.total_cmp(&a.score).then_with(|| a.actions.cmp(&b.actions))
        });
        candidates.truncate(config.width);
        beam = candidates;
    }
    Ok(beam.into_iter().next().expect("beam never empties"))
}

/// Greedy decoding: argmax over allowed actions at every step, ties to the
/// lowest action id. Identical to beam search with `width = buffer = 1`.
pub fn greedy_plan<M: PlanningModel>(
    model: &M,
    start_obs: &[f64],
    goal_obs: &[f64],
    horizon: usize,
    allowed: &[usize],
) -> Result<BeamHypothesis, PlanError> {
    if horizon == 0 {
        return Err(PlanError::EmptyHorizon);
    }
    check_allowed(allowed, model.num_actions())?;
    let goal = model.encode(goal_obs)?;
    let mut hyp = BeamHypothesis {
        actions: Vec::new(),
        latents: vec![model.encode(start_obs)?],
        score: 0.0,
        step_logits: Vec::new(),
    };
    for _ in 0..horizon {
        let logits = model.action_logits(&hyp.latents, &hyp.actions, &goal)?;
        let log_probs = log_softmax(&logits);
        let &best = allowed
            .iter()
            .min_by(|&&a, &&b| log_probs[b].total_cmp(&log_probs[a]).then(a.cmp(&b)))
            .expect("allowed non-empty");
        hyp.actions.push(best);
        hyp.score += log_probs[best];
        hyp.step_logits.push(logits);
        let next = model.next_latent(&hyp.latents, &hyp.actions, &goal)?;
        hyp.latents.push(next);
    }
    Ok(hyp)
}
