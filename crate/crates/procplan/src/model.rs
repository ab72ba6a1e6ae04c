//! The planning model: a shared observation encoder feeding twin sequence
//! cores — one scoring the next action, one predicting the next latent
//! state. Both consume the same interleaved token layout
//!
//! ```text
//! [goal, ŝ₁, â₀, ŝ₂, â₁, …, ŝ_t, â_{t−1}]            (action core)
//! [goal, ŝ₁, â₀, ŝ₂, â₁, …, ŝ_t, â_{t−1}, â_t]       (state core)
//! ```
//!
//! where â₀ is a reserved begin-of-plan embedding row and the goal latent is
//! prepended as token 0. Training is teacher-forced imitation: encoder
//! latents of expert observations stand in for the ŝ's, and the loss is
//! mean cross-entropy on actions plus mean squared error on next latents.
//! The same forward builders run at inference on throwaway tapes, so there
//! is exactly one implementation of the model math.

use crate::attention::{AttentionConfig, DropoutCtx, MaskKind, TransformerParams, LEAKY_SLOPE};
use crate::envgen::Trajectory;
use crate::numcore::{Array, NumError, ParamId, ParamStore, Tape, Var};
use crate::planner::{greedy_plan, PlanError, PlanStep, PlanningModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Embedding row reserved for the begin-of-plan marker; environment action
/// `a` lives at row `a + 1`.
pub const BOS_ROW: usize = 0;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("action id {id} out of range for {num_actions} actions")]
    ActionRange { id: usize, num_actions: usize },
    #[error("checkpoint format version {found}, this build reads {expected}")]
    Version { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Which sequence core sits behind the twin models. `Mlp` is the ablation:
/// a 2-layer perceptron over `concat(ŝ_t, â, goal)` with no access to
/// earlier steps.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoreKind {
    Transformer,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub obs_dim: usize,
    pub num_actions: usize,
    /// Width of the latent state space the encoder maps into.
    pub latent_dim: usize,
    /// Hidden width of the encoder (and of the MLP ablation cores).
    pub encoder_hidden: usize,
    pub core: CoreKind,
    pub attention: AttentionConfig,
    /// Parallel prediction heads. Head `j` is trained on the (t+j)-th future
    /// target; inference always reads head 0. Must be 1 under a causal mask,
    /// where positions already align one output per step.
    pub future_heads: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            obs_dim: 64,
            num_actions: 8,
            latent_dim: 32,
            encoder_hidden: 64,
            core: CoreKind::Transformer,
            attention: AttentionConfig::default(),
            future_heads: 1,
            init_seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.obs_dim == 0
            || self.num_actions == 0
            || self.latent_dim == 0
            || self.encoder_hidden == 0
        {
            return Err(ModelError::Config("zero-sized dimension".into()));
        }
        self.attention.validate().map_err(|e| ModelError::Config(e.to_string()))?;
        if self.future_heads == 0 {
            return Err(ModelError::Config("future_heads must be at least 1".into()));
        }
        if self.attention.mask == MaskKind::Causal && self.future_heads != 1 {
            return Err(ModelError::Config(
                "causal masking pins future_heads to 1; extra heads would \
                 retarget supervised positions"
                    .into(),
            ));
        }
        if self.core == CoreKind::Mlp && self.future_heads != 1 {
            return Err(ModelError::Config("MLP core supports a single head".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct EncoderParams {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum CoreParams {
    Transformer {
        /// Projects latents (goal included) into token space.
        proj_w: ParamId,
        proj_b: ParamId,
        stack: TransformerParams,
        /// `(weight, bias)` per future head.
        heads: Vec<(ParamId, ParamId)>,
    },
    Mlp {
        w1: ParamId,
        b1: ParamId,
        w2: ParamId,
        b2: ParamId,
    },
}

/// Encoder + twin cores + the shared action embedding, with every parameter
/// in one deterministic-ordered store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub store: ParamStore,
    encoder: EncoderParams,
    action_embed: ParamId,
    action_core: CoreParams,
    state_core: CoreParams,
}

fn init_matrix<R: Rng>(
    store: &mut ParamStore,
    name: String,
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> ParamId {
    let scale = 1.0 / (rows as f64).sqrt();
    store.add(name, Array::uniform(&[rows, cols], scale, rng))
}

impl ModelBundle {
    pub fn init(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let d = config.attention.d_model;

        let encoder = EncoderParams {
            w1: init_matrix(&mut store, "enc.w1".into(), config.obs_dim, config.encoder_hidden, &mut rng),
            b1: store.add("enc.b1", Array::zeros(&[config.encoder_hidden])),
            w2: init_matrix(&mut store, "enc.w2".into(), config.encoder_hidden, config.latent_dim, &mut rng),
            b2: store.add("enc.b2", Array::zeros(&[config.latent_dim])),
        };
        let action_embed = init_matrix(
            &mut store,
            "embed".into(),
            config.num_actions + 1,
            d,
            &mut rng,
        );
        let action_core =
            Self::init_core("act", &config, config.num_actions, &mut store, &mut rng)?;
        let state_core =
            Self::init_core("state", &config, config.latent_dim, &mut store, &mut rng)?;
        Ok(ModelBundle { config, store, encoder, action_embed, action_core, state_core })
    }

    fn init_core<R: Rng>(
        prefix: &str,
        config: &ModelConfig,
        out_dim: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<CoreParams, ModelError> {
        let d = config.attention.d_model;
        Ok(match config.core {
            CoreKind::Transformer => {
                let proj_w =
                    init_matrix(store, format!("{prefix}.proj.w"), config.latent_dim, d, rng);
                let proj_b = store.add(format!("{prefix}.proj.b"), Array::zeros(&[d]));
                let stack =
                    TransformerParams::init(prefix, config.attention.clone(), store, rng)?;
                let heads = (0..config.future_heads)
                    .map(|j| {
                        let w = init_matrix(store, format!("{prefix}.head{j}.w"), d, out_dim, rng);
                        let b = store.add(format!("{prefix}.head{j}.b"), Array::zeros(&[out_dim]));
                        (w, b)
                    })
                    .collect();
                CoreParams::Transformer { proj_w, proj_b, stack, heads }
            }
            CoreKind::Mlp => {
                let in_dim = 2 * config.latent_dim + d;
                CoreParams::Mlp {
                    w1: init_matrix(store, format!("{prefix}.mlp.w1"), in_dim, config.encoder_hidden, rng),
                    b1: store.add(format!("{prefix}.mlp.b1"), Array::zeros(&[config.encoder_hidden])),
                    w2: init_matrix(store, format!("{prefix}.mlp.w2"), config.encoder_hidden, out_dim, rng),
                    b2: store.add(format!("{prefix}.mlp.b2"), Array::zeros(&[out_dim])),
                }
            }
        })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Encode observation rows `[n, obs_dim]` into latents `[n, latent_dim]`.
    pub fn encode_rows(&self, tape: &mut Tape, obs: Var) -> Result<Var, ModelError> {
        if tape.value(obs).cols() != self.config.obs_dim {
            return Err(ModelError::Dim(format!(
                "observation width {} vs obs_dim {}",
                tape.value(obs).cols(),
                self.config.obs_dim
            )));
        }
        let w1 = tape.param(&self.store, self.encoder.w1);
        let b1 = tape.param(&self.store, self.encoder.b1);
        let w2 = tape.param(&self.store, self.encoder.w2);
        let b2 = tape.param(&self.store, self.encoder.b2);
        let h = tape.matmul(obs, w1)?;
        let h = tape.add_row_bias(h, b1)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        let h = tape.matmul(h, w2)?;
        let h = tape.add_row_bias(h, b2)?;
        Ok(tape.leaky_relu(h, LEAKY_SLOPE))
    }

    fn check_action(&self, id: usize) -> Result<(), ModelError> {
        if id >= self.config.num_actions {
            return Err(ModelError::ActionRange { id, num_actions: self.config.num_actions });
        }
        Ok(())
    }

    /// Interleave goal/latent/action-embedding rows into the token matrix,
    /// add positions, and run the stack. `prior_actions` are â₁..â_{t−1}
    /// (the BOS row is prepended internally); `extra_action`, when given,
    /// appends â_t after the final latent token.
    fn transformer_tokens(
        &self,
        tape: &mut Tape,
        proj_w: ParamId,
        proj_b: ParamId,
        stack: &TransformerParams,
        states: &[Var],
        prior_actions: &[usize],
        goal: Var,
        extra_action: Option<usize>,
        dropout: &mut Option<DropoutCtx<'_>>,
    ) -> Result<Var, ModelError> {
        let t = states.len();
        if prior_actions.len() + 1 != t {
            return Err(ModelError::Dim(format!(
                "{} latents need {} prior actions, got {}",
                t,
                t - 1,
                prior_actions.len()
            )));
        }
        let mut embed_ids = Vec::with_capacity(t + 1);
        embed_ids.push(BOS_ROW);
        for &a in prior_actions {
            self.check_action(a)?;
            embed_ids.push(a + 1);
        }
        if let Some(a) = extra_action {
            self.check_action(a)?;
            embed_ids.push(a + 1);
        }

        // Rows 0..=t: goal then ŝ₁..ŝ_t, projected into token space.
        let mut latent_rows = Vec::with_capacity(t + 1);
        latent_rows.push(goal);
        latent_rows.extend_from_slice(states);
        let stacked = tape.concat_rows(&latent_rows)?;
        let pw = tape.param(&self.store, proj_w);
        let pb = tape.param(&self.store, proj_b);
        let projected = tape.matmul(stacked, pw)?;
        let projected = tape.add_row_bias(projected, pb)?;

        let table = tape.param(&self.store, self.action_embed);
        let embedded = tape.embed_rows(table, &embed_ids)?;
        let block = tape.concat_rows(&[projected, embedded])?;

        // Interleave: goal, then (ŝ_i, â_{i−1}) pairs, then the optional â_t.
        // In `block`, latent row i sits at index i and action row k at
        // t + 1 + k.
        let mut order = Vec::with_capacity(1 + embed_ids.len() + t);
        order.push(0);
        for i in 1..=t {
            order.push(i);
            order.push(t + 1 + (i - 1));
        }
        if extra_action.is_some() {
            order.push(t + 1 + t);
        }
        let tokens = tape.gather_rows(block, &order)?;
        let pe = crate::attention::positional_encoding(order.len(), self.config.attention.d_model);
        let tokens = tape.add_const(tokens, &pe)?;
        Ok(stack.forward(tape, &self.store, tokens, dropout)?)
    }

    fn head_output(
        &self,
        tape: &mut Tape,
        features: Var,
        head: (ParamId, ParamId),
    ) -> Result<Var, ModelError> {
        let w = tape.param(&self.store, head.0);
        let b = tape.param(&self.store, head.1);
        let out = tape.matmul(features, w)?;
        Ok(tape.add_row_bias(out, b)?)
    }

    fn mlp_forward(
        &self,
        tape: &mut Tape,
        core: &CoreParams,
        state: Var,
        action_row: usize,
        goal: Var,
    ) -> Result<Var, ModelError> {
        let CoreParams::Mlp { w1, b1, w2, b2 } = core else {
            return Err(ModelError::Config("not an MLP core".into()));
        };
        let table = tape.param(&self.store, self.action_embed);
        let emb = tape.embed_rows(table, &[action_row])?;
        let input = tape.concat_cols(&[state, emb, goal])?;
        let p1 = tape.param(&self.store, *w1);
        let q1 = tape.param(&self.store, *b1);
        let p2 = tape.param(&self.store, *w2);
        let q2 = tape.param(&self.store, *b2);
        let h = tape.matmul(input, p1)?;
        let h = tape.add_row_bias(h, q1)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        let h = tape.matmul(h, p2)?;
        Ok(tape.add_row_bias(h, q2)?)
    }

    /// Per-head `[1, num_actions]` logits for the next action after the
    /// given prefix (`states` = ŝ₁..ŝ_t, `prior_actions` = â₁..â_{t−1}).
    fn action_forward(
        &self,
        tape: &mut Tape,
        states: &[Var],
        prior_actions: &[usize],
        goal: Var,
        dropout: &mut Option<DropoutCtx<'_>>,
    ) -> Result<Vec<Var>, ModelError> {
        match &self.action_core {
            CoreParams::Transformer { proj_w, proj_b, stack, heads } => {
                let out = self.transformer_tokens(
                    tape,
                    *proj_w,
                    *proj_b,
                    stack,
                    states,
                    prior_actions,
                    goal,
                    None,
                    dropout,
                )?;
                let last = tape.value(out).rows() - 1;
                let feat = tape.gather_rows(out, &[last])?;
                heads.iter().map(|&h| self.head_output(tape, feat, h)).collect()
            }
            core @ CoreParams::Mlp { .. } => {
                let state = *states.last().expect("non-empty prefix");
                let row = prior_actions.last().map_or(BOS_ROW, |&a| a + 1);
                if let Some(&a) = prior_actions.last() {
                    self.check_action(a)?;
                }
                Ok(vec![self.mlp_forward(tape, core, state, row, goal)?])
            }
        }
    }

    /// Per-head `[1, latent_dim]` next-latent predictions after taking
    /// `actions.last()` (`states` = ŝ₁..ŝ_t, `actions` = â₁..â_t).
    fn state_forward(
        &self,
        tape: &mut Tape,
        states: &[Var],
        actions: &[usize],
        goal: Var,
        dropout: &mut Option<DropoutCtx<'_>>,
    ) -> Result<Vec<Var>, ModelError> {
        if actions.len() != states.len() {
            return Err(ModelError::Dim(format!(
                "state core wants one action per latent: {} vs {}",
                actions.len(),
                states.len()
            )));
        }
        let (&last_action, prior) = actions.split_last().expect("non-empty");
        match &self.state_core {
            CoreParams::Transformer { proj_w, proj_b, stack, heads } => {
                let out = self.transformer_tokens(
                    tape,
                    *proj_w,
                    *proj_b,
                    stack,
                    states,
                    prior,
                    goal,
                    Some(last_action),
                    dropout,
                )?;
                let last = tape.value(out).rows() - 1;
                let feat = tape.gather_rows(out, &[last])?;
                heads.iter().map(|&h| self.head_output(tape, feat, h)).collect()
            }
            core @ CoreParams::Mlp { .. } => {
                self.check_action(last_action)?;
                let state = *states.last().expect("non-empty");
                Ok(vec![self.mlp_forward(tape, core, state, last_action + 1, goal)?])
            }
        }
    }

    /// Next-action logits for every step of a teacher-forced sequence:
    /// row `t-1` scores â_t given goal, ŝ₁..ŝ_t and â₁..â_{t−1}. Under a
    /// causal mask this is one pass with per-step readout positions;
    /// otherwise each prefix runs separately. Output is `[T, num_actions]`.
    pub fn action_logits_sweep_var(
        &self,
        tape: &mut Tape,
        states: &[Var],
        prior_actions: &[usize],
        goal: Var,
        dropout: &mut Option<DropoutCtx<'_>>,
    ) -> Result<Var, ModelError> {
        let t = states.len();
        match &self.action_core {
            CoreParams::Transformer { proj_w, proj_b, stack, heads }
                if self.config.attention.mask == MaskKind::Causal =>
            {
                let out = self.transformer_tokens(
                    tape,
                    *proj_w,
                    *proj_b,
                    stack,
                    states,
                    prior_actions,
                    goal,
                    None,
                    dropout,
                )?;
                // â_{i−1} sits at token 2i; its causal prefix is exactly the
                // step-i conditioning set.
                let positions: Vec<usize> = (1..=t).map(|i| 2 * i).collect();
                let feats = tape.gather_rows(out, &positions)?;
                self.head_output(tape, feats, heads[0])
            }
            _ => {
                let mut rows = Vec::with_capacity(t);
                for i in 1..=t {
                    let heads =
                        self.action_forward(tape, &states[..i], &prior_actions[..i - 1], goal, dropout)?;
                    rows.push(heads[0]);
                }
                Ok(tape.concat_rows(&rows)?)
            }
        }
    }

    /// Teacher-forced imitation loss over a batch: mean over trajectories of
    /// (mean action cross-entropy + mean next-latent squared error). Both
    /// terms backpropagate into the encoder. `dropout_rng` enables dropout.
    pub fn training_loss(
        &self,
        tape: &mut Tape,
        batch: &[&Trajectory],
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::Dim("empty batch".into()));
        }
        let mut per_traj = Vec::with_capacity(batch.len());
        for traj in batch {
            let horizon = traj.actions.len();
            if horizon == 0 || traj.observations.len() != horizon + 1 {
                return Err(ModelError::Dim(format!(
                    "trajectory {} malformed: {} actions, {} observations",
                    traj.id,
                    horizon,
                    traj.observations.len()
                )));
            }
            let obs = Array::from_rows(&traj.observations)?;
            let obs = tape.input(obs);
            let encoded = self.encode_rows(tape, obs)?;
            // Latent i (1-based step) is row i−1; the goal row is the last.
            let states: Vec<Var> = (0..horizon)
                .map(|i| tape.gather_rows(encoded, &[i]))
                .collect::<Result<_, _>>()?;
            let goal = tape.gather_rows(encoded, &[horizon])?;

            // Action supervision.
            let mut logit_rows = Vec::new();
            let mut targets = Vec::new();
            if self.config.future_heads == 1 {
                let sweep = {
                    let mut ctx = dropout_ctx(&self.config, &mut dropout_rng);
                    self.action_logits_sweep_var(
                        tape,
                        &states,
                        &traj.actions[..horizon - 1],
                        goal,
                        &mut ctx,
                    )?
                };
                logit_rows.push(sweep);
                targets.extend_from_slice(&traj.actions);
            } else {
                for t in 1..=horizon {
                    let heads = {
                        let mut ctx = dropout_ctx(&self.config, &mut dropout_rng);
                        self.action_forward(
                            tape,
                            &states[..t],
                            &traj.actions[..t - 1],
                            goal,
                            &mut ctx,
                        )?
                    };
                    for (j, head) in heads.into_iter().enumerate() {
                        if t + j <= horizon {
                            logit_rows.push(head);
                            targets.push(traj.actions[t + j - 1]);
                        }
                    }
                }
            }
            let logits = if logit_rows.len() == 1 {
                logit_rows[0]
            } else {
                tape.concat_rows(&logit_rows)?
            };
            let ce = tape.cross_entropy(logits, &targets)?;

            // Next-latent supervision: step t's head j predicts ŝ_{t+1+j},
            // whose teacher latent is encoder row t+j.
            let mut preds = Vec::new();
            let mut target_rows = Vec::new();
            for t in 1..=horizon {
                let heads = {
                    let mut ctx = dropout_ctx(&self.config, &mut dropout_rng);
                    self.state_forward(tape, &states[..t], &traj.actions[..t], goal, &mut ctx)?
                };
                for (j, head) in heads.into_iter().enumerate() {
                    if t + j <= horizon {
                        preds.push(head);
                        target_rows.push(t + j);
                    }
                }
            }
            let pred = tape.concat_rows(&preds)?;
            let target = tape.gather_rows(encoded, &target_rows)?;
            let mse = tape.mse(pred, target)?;

            per_traj.push(tape.add(ce, mse)?);
        }
        Ok(tape.mean_scalars(&per_traj)?)
    }

    /// Inference conveniences on throwaway tapes.
    pub fn encode_value(&self, observation: &[f64]) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let obs = tape.input(Array::from_rows(&[observation.to_vec()])?);
        let encoded = self.encode_rows(&mut tape, obs)?;
        Ok(tape.value(encoded).row(0).to_vec())
    }

    fn latent_vars(
        &self,
        tape: &mut Tape,
        latents: &[Vec<f64>],
        goal: &[f64],
    ) -> Result<(Vec<Var>, Var), ModelError> {
        if latents.is_empty() {
            return Err(ModelError::Dim("empty latent prefix".into()));
        }
        for l in latents.iter().chain(std::iter::once(&goal.to_vec())) {
            if l.len() != self.config.latent_dim {
                return Err(ModelError::Dim(format!(
                    "latent width {} vs latent_dim {}",
                    l.len(),
                    self.config.latent_dim
                )));
            }
        }
        let states = latents
            .iter()
            .map(|l| Ok(tape.input(Array::from_rows(&[l.clone()])?)))
            .collect::<Result<Vec<_>, ModelError>>()?;
        let goal = tape.input(Array::from_rows(&[goal.to_vec()])?);
        Ok((states, goal))
    }

    /// Logits over the next action given a decoded prefix.
    pub fn action_logits_value(
        &self,
        latents: &[Vec<f64>],
        actions: &[usize],
        goal: &[f64],
    ) -> Result<Vec<f64>, ModelError> {
        if latents.len() != actions.len() + 1 {
            return Err(ModelError::Dim(format!(
                "{} latents vs {} actions (want one more latent)",
                latents.len(),
                actions.len()
            )));
        }
        let mut tape = Tape::new();
        let (states, goal) = self.latent_vars(&mut tape, latents, goal)?;
        let heads = self.action_forward(&mut tape, &states, actions, goal, &mut None)?;
        Ok(tape.value(heads[0]).row(0).to_vec())
    }

    /// Latent after taking `actions.last()` from the prefix.
    pub fn next_latent_value(
        &self,
        latents: &[Vec<f64>],
        actions: &[usize],
        goal: &[f64],
    ) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let (states, goal) = self.latent_vars(&mut tape, latents, goal)?;
        let heads = self.state_forward(&mut tape, &states, actions, goal, &mut None)?;
        Ok(tape.value(heads[0]).row(0).to_vec())
    }

    /// Teacher-forced next-action logits per step (values, `[T][A]`).
    pub fn action_logits_sweep(
        &self,
        latents: &[Vec<f64>],
        prior_actions: &[usize],
        goal: &[f64],
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut tape = Tape::new();
        let (states, goal) = self.latent_vars(&mut tape, latents, goal)?;
        let sweep =
            self.action_logits_sweep_var(&mut tape, &states, prior_actions, goal, &mut None)?;
        let v = tape.value(sweep);
        Ok((0..v.rows()).map(|r| v.row(r).to_vec()).collect())
    }

    /// Greedy plan of fixed `horizon` from raw observations.
    pub fn rollout(
        &self,
        start_obs: &[f64],
        goal_obs: &[f64],
        horizon: usize,
        allowed: &[usize],
    ) -> Result<Vec<PlanStep>, PlanError> {
        Ok(greedy_plan(self, start_obs, goal_obs, horizon, allowed)?.to_plan())
    }
}

impl PlanningModel for ModelBundle {
    fn num_actions(&self) -> usize {
        self.config.num_actions
    }

    fn encode(&self, observation: &[f64]) -> Result<Vec<f64>, PlanError> {
        self.encode_value(observation).map_err(|e| PlanError::Model(e.to_string()))
    }

    fn action_logits(
        &self,
        latents: &[Vec<f64>],
        actions: &[usize],
        goal: &[f64],
    ) -> Result<Vec<f64>, PlanError> {
        self.action_logits_value(latents, actions, goal)
            .map_err(|e| PlanError::Model(e.to_string()))
    }

    fn next_latent(
        &self,
        latents: &[Vec<f64>],
        actions: &[usize],
        goal: &[f64],
    ) -> Result<Vec<f64>, PlanError> {
        self.next_latent_value(latents, actions, goal)
            .map_err(|e| PlanError::Model(e.to_string()))
    }
}

fn dropout_ctx<'r>(
    config: &ModelConfig,
    rng: &'r mut Option<&mut ChaCha8Rng>,
) -> Option<DropoutCtx<'r>> {
    match rng {
        Some(r) if config.attention.dropout > 0.0 => {
            Some(DropoutCtx { rate: config.attention.dropout, rng: r })
        }
        _ => None,
    }
}

/// Everything a training run persists: model, optimizer, progress counters,
/// and the lineage hashes eval uses to refuse mismatched artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Hash of the dataset's generation config.
    pub dataset_hash: String,
    /// Hash of the resolved experiment config that produced this run.
    pub experiment_hash: String,
    pub epoch: usize,
    pub best_test_loss: f64,
    pub model: ModelBundle,
    pub adam: Option<crate::numcore::AdamState>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let raw = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&raw)?;
        let found = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| ModelError::Config("checkpoint missing version".into()))?
            as u32;
        if found != CHECKPOINT_FORMAT_VERSION {
            return Err(ModelError::Version { found, expected: CHECKPOINT_FORMAT_VERSION });
        }
        Ok(serde_json::from_value(value)?)
    }
}
