//! Masked multi-head attention and pre-norm transformer blocks on the tape.
//!
//! One attention layout is shared by both sequence models; the only knob that
//! differs is the mask. `Causal` restricts position i to keys j ≤ i, `Full`
//! lets every position see the whole prefix being processed.

use crate::numcore::{Array, NumError, ParamId, ParamStore, Tape, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskKind {
    Causal,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub mask: MaskKind,
    /// Single dropout rate applied to attention weights and FFN output
    /// during training.
    pub dropout: f64,
}

impl Default for AttentionConfig {
    /// Desk-scale default. The reference-scale configuration is
    /// `d_model: 128, num_heads: 8, num_layers: 2`.
    fn default() -> Self {
        AttentionConfig {
            d_model: 32,
            num_heads: 4,
            num_layers: 2,
            mask: MaskKind::Causal,
            dropout: 0.1,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<(), NumError> {
        if self.d_model == 0 || self.num_heads == 0 || self.num_layers == 0 {
            return Err(NumError::invalid("AttentionConfig", "zero-sized dimension"));
        }
        if self.d_model % self.num_heads != 0 {
            return Err(NumError::invalid(
                "AttentionConfig",
                format!("d_model {} not divisible by {} heads", self.d_model, self.num_heads),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NumError::invalid(
                "AttentionConfig",
                format!("dropout {} outside [0, 1)", self.dropout),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }
}

/// Additive mask matrix: 0 where attendable, -inf where blocked.
/// Causal means key j attends from query i iff j ≤ i.
pub fn build_mask(kind: MaskKind, t: usize) -> Array {
    let mut m = Array::zeros(&[t, t]);
    if kind == MaskKind::Causal {
        for i in 0..t {
            for j in (i + 1)..t {
                m.data_mut()[i * t + j] = f64::NEG_INFINITY;
            }
        }
    }
    m
}

/// Sinusoidal position rows: `pe[t, 2i] = sin(t / 10000^(2i/d))`,
/// `pe[t, 2i+1] = cos(t / 10000^(2i/d))`.
pub fn positional_encoding(len: usize, d_model: usize) -> Array {
    let mut pe = Array::zeros(&[len, d_model]);
    for t in 0..len {
        for i in 0..d_model {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d_model as f64);
            let angle = t as f64 * freq;
            pe.data_mut()[t * d_model + i] =
                if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

/// `softmax((q k^T + mask) / sqrt(d)) v` — scores are masked *before* the
/// shared 1/sqrt(d) scaling. A fully masked row is an error.
pub fn scaled_dot_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: &Array,
) -> Result<Var, NumError> {
    let d = tape.value(q).cols();
    let scores = tape.matmul_nt(q, k)?;
    let masked = tape.add_const(scores, mask)?;
    let scaled = tape.scale(masked, 1.0 / (d as f64).sqrt());
    let attn = tape.softmax_rows(scaled)?;
    tape.matmul(attn, v)
}

/// Parameter handles for one transformer block: per-head q/k/v projections,
/// output projection, two layer norms, and the 4x-wide FFN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    wq: Vec<ParamId>,
    wk: Vec<ParamId>,
    wv: Vec<ParamId>,
    wo: ParamId,
    bo: ParamId,
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
    ff1: ParamId,
    ff1_bias: ParamId,
    ff2: ParamId,
    ff2_bias: ParamId,
}

/// A stack of pre-norm attention blocks plus a final layer norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerParams {
    pub config: AttentionConfig,
    blocks: Vec<BlockParams>,
    final_gain: ParamId,
    final_bias: ParamId,
}

pub const LEAKY_SLOPE: f64 = 0.01;
const LN_EPS: f64 = 1e-5;

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

fn ones(store: &mut ParamStore, name: String, n: usize) -> ParamId {
    store.add(name, Array::new(vec![n], vec![1.0; n]).expect("shape"))
}

fn zeros_vec(store: &mut ParamStore, name: String, n: usize) -> ParamId {
    store.add(name, Array::zeros(&[n]))
}

impl TransformerParams {
    pub fn init<R: Rng>(
        prefix: &str,
        config: AttentionConfig,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self, NumError> {
        config.validate()?;
        let d = config.d_model;
        let hd = config.head_dim();
        let mut blocks = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let mut wq = Vec::new();
            let mut wk = Vec::new();
            let mut wv = Vec::new();
            for h in 0..config.num_heads {
                wq.push(init_matrix(store, format!("{prefix}.b{l}.h{h}.wq"), d, hd, rng));
                wk.push(init_matrix(store, format!("{prefix}.b{l}.h{h}.wk"), d, hd, rng));
                wv.push(init_matrix(store, format!("{prefix}.b{l}.h{h}.wv"), d, hd, rng));
            }
            blocks.push(BlockParams {
                wq,
                wk,
                wv,
                wo: init_matrix(store, format!("{prefix}.b{l}.wo"), d, d, rng),
                bo: zeros_vec(store, format!("{prefix}.b{l}.bo"), d),
                ln1_gain: ones(store, format!("{prefix}.b{l}.ln1.g"), d),
                ln1_bias: zeros_vec(store, format!("{prefix}.b{l}.ln1.b"), d),
                ln2_gain: ones(store, format!("{prefix}.b{l}.ln2.g"), d),
                ln2_bias: zeros_vec(store, format!("{prefix}.b{l}.ln2.b"), d),
                ff1: init_matrix(store, format!("{prefix}.b{l}.ff1"), d, 4 * d, rng),
                ff1_bias: zeros_vec(store, format!("{prefix}.b{l}.ff1.b"), 4 * d),
                ff2: init_matrix(store, format!("{prefix}.b{l}.ff2"), 4 * d, d, rng),
                ff2_bias: zeros_vec(store, format!("{prefix}.b{l}.ff2.b"), d),
            });
        }
        Ok(TransformerParams {
            config,
            blocks,
            final_gain: ones(store, format!("{prefix}.final_ln.g"), d),
            final_bias: zeros_vec(store, format!("{prefix}.final_ln.b"), d),
        })
    }

    /// Run the full stack over `tokens` (`[T, d_model]`, positions already
    /// added). `dropout` supplies masks during training; `None` disables it.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        tokens: Var,
        dropout: &mut Option<DropoutCtx<'_>>,
    ) -> Result<Var, NumError> {
        let t = tape.value(tokens).rows();
        let mask = build_mask(self.config.mask, t);
        let mut x = tokens;
        for block in &self.blocks {
            x = self.block_forward(tape, store, block, x, &mask, dropout)?;
        }
        let g = tape.param(store, self.final_gain);
        let b = tape.param(store, self.final_bias);
        tape.layer_norm_rows(x, g, b, LN_EPS)
    }

    /// Pre-norm: `x + Attn(LN(x))`, then `x + FFN(LN(x))`.
    fn block_forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        block: &BlockParams,
        x: Var,
        mask: &Array,
        dropout: &mut Option<DropoutCtx<'_>>,
    ) -> Result<Var, NumError> {
        let g1 = tape.param(store, block.ln1_gain);
        let b1 = tape.param(store, block.ln1_bias);
        let normed = tape.layer_norm_rows(x, g1, b1, LN_EPS)?;

        let mut heads = Vec::with_capacity(self.config.num_heads);
        for h in 0..self.config.num_heads {
            let wq = tape.param(store, block.wq[h]);
            let wk = tape.param(store, block.wk[h]);
            let wv = tape.param(store, block.wv[h]);
            let q = tape.matmul(normed, wq)?;
            let k = tape.matmul(normed, wk)?;
            let v = tape.matmul(normed, wv)?;
            let d = tape.value(q).cols();
            let scores = tape.matmul_nt(q, k)?;
            let masked = tape.add_const(scores, mask)?;
            let scaled = tape.scale(masked, 1.0 / (d as f64).sqrt());
            let mut attn = tape.softmax_rows(scaled)?;
            if let Some(ctx) = dropout {
                attn = ctx.apply(tape, attn)?;
            }
            heads.push(tape.matmul(attn, v)?);
        }
        let cat = tape.concat_cols(&heads)?;
        let wo = tape.param(store, block.wo);
        let bo = tape.param(store, block.bo);
        let proj = tape.matmul(cat, wo)?;
        let proj = tape.add_row_bias(proj, bo)?;
        let x = tape.add(x, proj)?;

        let g2 = tape.param(store, block.ln2_gain);
        let b2 = tape.param(store, block.ln2_bias);
        let normed = tape.layer_norm_rows(x, g2, b2, LN_EPS)?;
        let ff1 = tape.param(store, block.ff1);
        let ff1b = tape.param(store, block.ff1_bias);
        let ff2 = tape.param(store, block.ff2);
        let ff2b = tape.param(store, block.ff2_bias);
        let h = tape.matmul(normed, ff1)?;
        let h = tape.add_row_bias(h, ff1b)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        let h = tape.matmul(h, ff2)?;
        let mut h = tape.add_row_bias(h, ff2b)?;
        if let Some(ctx) = dropout {
            h = ctx.apply(tape, h)?;
        }
        tape.add(x, h)
    }
}

/// Inverted-scaling dropout: keep with probability `1 - rate`, scale kept
/// activations by `1/(1 - rate)` so eval needs no rescaling.
pub struct DropoutCtx<'r> {
    pub rate: f64,
    pub rng: &'r mut rand_chacha::ChaCha8Rng,
}

impl DropoutCtx<'_> {
    fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var, NumError> {
        if self.rate == 0.0 {
            return Ok(x);
        }
        let shape = tape.value(x).shape().to_vec();
        let n: usize = shape.iter().product();
        let keep = 1.0 - self.rate;
        let mask_data: Vec<f64> = (0..n)
            .map(|_| if self.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = Array::new(shape, mask_data)?;
        tape.mul_const(x, &mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_array(shape: &[usize], rng: &mut ChaCha8Rng) -> Array {
        let n: usize = shape.iter().product();
        Array::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn attention_matches_scalar_oracle_t3() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let qa = rand_array(&[3, 4], &mut rng);
        let ka = rand_array(&[3, 4], &mut rng);
        let va = rand_array(&[3, 4], &mut rng);
        let mask = build_mask(MaskKind::Causal, 3);

        let mut tape = Tape::new();
        let q = tape.input(qa.clone());
        let k = tape.input(ka.clone());
        let v = tape.input(va.clone());
        let out = scaled_dot_attention(&mut tape, q, k, v, &mask).unwrap();
        let got = tape.value(out);

        // Explicit-loop oracle.
        let d = 4.0f64;
        for i in 0..3 {
            // scores over allowed j ≤ i
            let mut scores = vec![f64::NEG_INFINITY; 3];
            for j in 0..=i {
                let mut dot = 0.0;
                for c in 0..4 {
                    dot += qa.at(i, c) * ka.at(j, c);
                }
                scores[j] = dot / d.sqrt();
            }
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> =
                scores.iter().map(|s| if s.is_finite() { (s - m).exp() } else { 0.0 }).collect();
            let z: f64 = exps.iter().sum();
            for c in 0..4 {
                let mut want = 0.0;
                for j in 0..3 {
                    want += exps[j] / z * va.at(j, c);
                }
                assert!(
                    (got.at(i, c) - want).abs() < 1e-9,
                    "mismatch at ({}, {}): {} vs {}",
                    i,
                    c,
                    got.at(i, c),
                    want
                );
            }
        }
    }

    #[test]
    fn causal_rows_are_row_softmaxes_over_prefix() {
        // Row i of the attention weights must be supported on j ≤ i only.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = rand_array(&[4, 4], &mut rng);
        let k = rand_array(&[4, 4], &mut rng);
        let mask = build_mask(MaskKind::Causal, 4);
        let mut tape = Tape::new();
        let qv = tape.input(q);
        let kv = tape.input(k);
        let scores = tape.matmul_nt(qv, kv).unwrap();
        let masked = tape.add_const(scores, &mask).unwrap();
        let scaled = tape.scale(masked, 0.5);
        let probs = tape.softmax_rows(scaled).unwrap();
        let pv = tape.value(probs);
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert_eq!(pv.at(i, j), 0.0);
            }
            assert!((pv.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_position_full_and_causal_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = rand_array(&[1, 4], &mut rng);
        let k = rand_array(&[1, 4], &mut rng);
        let v = rand_array(&[1, 4], &mut rng);
        let mut t1 = Tape::new();
        let (a, b, c) = (t1.input(q.clone()), t1.input(k.clone()), t1.input(v.clone()));
        let causal =
            scaled_dot_attention(&mut t1, a, b, c, &build_mask(MaskKind::Causal, 1)).unwrap();
        let mut t2 = Tape::new();
        let (a, b, c) = (t2.input(q), t2.input(k), t2.input(v));
        let full =
            scaled_dot_attention(&mut t2, a, b, c, &build_mask(MaskKind::Full, 1)).unwrap();
        assert_eq!(t1.value(causal), t2.value(full));
    }

    #[test]
    fn mask_shapes_match_kind() {
        let c = build_mask(MaskKind::Causal, 3);
        assert_eq!(c.at(0, 1), f64::NEG_INFINITY);
        assert_eq!(c.at(1, 0), 0.0);
        assert_eq!(c.at(2, 2), 0.0);
        let f = build_mask(MaskKind::Full, 3);
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn config_validation_rejects_bad_dims() {
        let mut cfg = AttentionConfig::default();
        cfg.d_model = 30; // not divisible by 4 heads
        assert!(cfg.validate().is_err());
        let mut cfg = AttentionConfig::default();
        cfg.dropout = 1.0;
        assert!(cfg.validate().is_err());
        assert!(AttentionConfig::default().validate().is_ok());
    }

    #[test]
    fn positional_encoding_first_rows() {
        let pe = positional_encoding(3, 4);
        assert_eq!(pe.at(0, 0), 0.0);
        assert_eq!(pe.at(0, 1), 1.0);
        assert!((pe.at(1, 0) - 1f64.sin()).abs() < 1e-12);
        assert!((pe.at(1, 1) - 1f64.cos()).abs() < 1e-12);
        assert!((pe.at(2, 2) - (2.0 / 100.0f64).sin()).abs() < 1e-12);
    }

    #[test]
    fn block_forward_gradients_check_numerically() {
        // End-to-end gradient through a 1-layer, 2-head block.
        use crate::numcore::{grad_check, DEFAULT_FD_STEP, DEFAULT_FD_TOL};
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cfg = AttentionConfig {
            d_model: 6,
            num_heads: 2,
            num_layers: 1,
            mask: MaskKind::Causal,
            dropout: 0.0,
        };
        let mut store = ParamStore::new();
        let params = TransformerParams::init("t", cfg, &mut store, &mut rng).unwrap();
        let tokens = rand_array(&[3, 6], &mut rng);

        // Check wrt the token input; parameter gradients go through the same
        // ops so the input check exercises every VJP in the block.
        let f = move |tape: &mut Tape, vars: &[Var]| {
            let out = params.forward(tape, &store, vars[0], &mut None)?;
            let zeros = tape.input(Array::zeros(&[3, 6]));
            tape.mse(out, zeros)
        };
        let report = grad_check(&f, &[tokens], DEFAULT_FD_STEP).unwrap();
        assert!(report.max_rel_err < DEFAULT_FD_TOL, "rel err {}", report.max_rel_err);
    }

    proptest::proptest! {
        #[test]
        fn causal_prefix_outputs_ignore_suffix(
            seed in 0u64..500,
            t in 2usize..6,
        ) {
            // Outputs at positions < t must not change when more tokens are
            // appended under a causal mask.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = AttentionConfig {
                d_model: 8,
                num_heads: 2,
                num_layers: 2,
                mask: MaskKind::Causal,
                dropout: 0.0,
            };
            let mut store = ParamStore::new();
            let params = TransformerParams::init("t", cfg, &mut store, &mut rng).unwrap();
            let full = rand_array(&[t, 8], &mut rng);
            let prefix = Array::new(
                vec![t - 1, 8],
                full.data()[..(t - 1) * 8].to_vec(),
            ).unwrap();

            let mut tape1 = Tape::new();
            let v1 = tape1.input(full);
            let o1 = params.forward(&mut tape1, &store, v1, &mut None).unwrap();
            let mut tape2 = Tape::new();
            let v2 = tape2.input(prefix);
            let o2 = params.forward(&mut tape2, &store, v2, &mut None).unwrap();

            let a = tape1.value(o1);
            let b = tape2.value(o2);
            for r in 0..(t - 1) {
                for c in 0..8 {
                    // Bit-identical: same op sequence on the same values.
                    proptest::prop_assert_eq!(a.at(r, c), b.at(r, c));
                }
            }
        }
    }
}
