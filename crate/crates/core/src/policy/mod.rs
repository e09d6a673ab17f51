//! Small autoregressive token policy with hand-derived gradients.
//!
//! ```text
//! cond   = context · context_proj + mean(embed[prefix])     (zero mean for an empty prefix)
//! hidden = tanh(cond · hidden_w + hidden_b)
//! logits = hidden · out_w + out_b
//! p      = softmax(logits)
//! ```
//!
//! Parameters are immutable snapshots: updates return a new value.

mod checkpoint;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};

use crate::error::{LabError, Result};
use crate::exec::ExecMode;
use crate::vocab::{TokenId, Vocab};

/// Examples per work unit in batched gradient accumulation. Fixed so the
/// summation order does not depend on the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub vocab: usize,
    pub embed: usize,
    pub context: usize,
    pub hidden: usize,
}

/// All trainable tensors, row-major. Also used as the gradient type.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub embed: Vec<f64>,
    pub context_proj: Vec<f64>,
    pub hidden_w: Vec<f64>,
    pub hidden_b: Vec<f64>,
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
}

pub const TENSOR_NAMES: [&str; 6] = ["embed", "context_proj", "hidden_w", "hidden_b", "out_w", "out_b"];

impl Weights {
    pub fn zeros(d: Dims) -> Self {
        Self {
            embed: vec![0.0; d.vocab * d.embed],
            context_proj: vec![0.0; d.context * d.embed],
            hidden_w: vec![0.0; d.embed * d.hidden],
            hidden_b: vec![0.0; d.hidden],
            out_w: vec![0.0; d.hidden * d.vocab],
            out_b: vec![0.0; d.vocab],
        }
    }

    /// (rows, cols) of each tensor, in [`TENSOR_NAMES`] order.
    pub fn shapes(d: Dims) -> [(usize, usize); 6] {
        [
            (d.vocab, d.embed),
            (d.context, d.embed),
            (d.embed, d.hidden),
            (1, d.hidden),
            (d.hidden, d.vocab),
            (1, d.vocab),
        ]
    }

    pub fn tensors(&self) -> [&Vec<f64>; 6] {
        [&self.embed, &self.context_proj, &self.hidden_w, &self.hidden_b, &self.out_w, &self.out_b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.embed,
            &mut self.context_proj,
            &mut self.hidden_w,
            &mut self.hidden_b,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.tensors().into_iter().flat_map(|t| t.iter())
    }

    pub fn get(&self, flat: usize) -> f64 {
        *self.iter().nth(flat).expect("flat index in range")
    }

    pub fn set(&mut self, flat: usize, value: f64) {
        let mut i = flat;
        for t in self.tensors_mut() {
            if i < t.len() {
                t[i] = value;
                return;
            }
            i -= t.len();
        }
        panic!("flat index {flat} out of range");
    }

    pub fn same_shape(&self, other: &Weights) -> bool {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .all(|(a, b)| a.len() == b.len())
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Weights, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub vocab: Arc<Vocab>,
    pub dims: Dims,
    pub weights: Weights,
    /// Seed the parameters were initialised from.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascend,
    Descend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub context: Vec<f64>,
    pub target_tokens: Vec<TokenId>,
}

/// One sampled sequence with the per-position statistics recorded at
/// sampling time.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub tokens: Vec<TokenId>,
    pub logprobs: Vec<f64>,
    pub entropies: Vec<f64>,
}

/// Scratch space for one decoding step.
struct Step {
    cond: Vec<f64>,
    act: Vec<f64>,
    logits: Vec<f64>,
    probs: Vec<f64>,
    log_norm: f64,
}

/// Shannon entropy in nats with 0·ln 0 = 0. No input validation.
pub fn shannon_entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

impl PolicyParams {
    /// Uniform(-0.1, 0.1) weights, zero biases.
    pub fn init(vocab: Arc<Vocab>, embed: usize, hidden: usize, context: usize, seed: u64) -> Result<Self> {
        Self::init_scaled(vocab, embed, hidden, context, seed, 0.1)
    }

    pub fn init_scaled(
        vocab: Arc<Vocab>,
        embed: usize,
        hidden: usize,
        context: usize,
        seed: u64,
        range: f64,
    ) -> Result<Self> {
        if vocab.len() > 128 || embed == 0 || embed > 32 || hidden == 0 || hidden > 64 || context == 0 {
            return Err(LabError::Shape(format!(
                "unsupported dims: vocab {} (max 128), embed {embed} (1..=32), hidden {hidden} (1..=64), context {context}",
                vocab.len()
            )));
        }
        let dims = Dims {
            vocab: vocab.len(),
            embed,
            context,
            hidden,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Weights::zeros(dims);
        for t in [&mut weights.embed, &mut weights.context_proj, &mut weights.hidden_w, &mut weights.out_w] {
            t.iter_mut().for_each(|x| *x = rng.random_range(-range..range));
        }
        Ok(Self {
            vocab,
            dims,
            weights,
            seed,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.len()
    }

    fn check_context(&self, context: &[f64]) -> Result<()> {
        if context.len() != self.dims.context {
            return Err(LabError::Shape(format!(
                "context has length {}, policy expects {}",
                context.len(),
                self.dims.context
            )));
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        match tokens.iter().find(|&&t| t >= self.dims.vocab) {
            Some(&id) => Err(LabError::TokenOutOfRange {
                id,
                vocab: self.dims.vocab,
            }),
            None => Ok(()),
        }
    }

    fn project_context(&self, context: &[f64]) -> Vec<f64> {
        let d = self.dims.embed;
        let mut out = vec![0.0; d];
        for (i, &x) in context.iter().enumerate() {
            let row = &self.weights.context_proj[i * d..(i + 1) * d];
            out.iter_mut().zip(row).for_each(|(o, w)| *o += x * w);
        }
        out
    }

    fn add_embedding(&self, sum: &mut [f64], token: TokenId) {
        let d = self.dims.embed;
        let row = &self.weights.embed[token * d..(token + 1) * d];
        sum.iter_mut().zip(row).for_each(|(s, e)| *s += e);
    }

    fn step(&self, ctx_proj: &[f64], embed_sum: &[f64], prefix_len: usize) -> Step {
        let Dims { embed: d, hidden: h, vocab: v, .. } = self.dims;
        let w = &self.weights;
        let cond: Vec<f64> = if prefix_len == 0 {
            ctx_proj.to_vec()
        } else {
            let inv = 1.0 / prefix_len as f64;
            ctx_proj.iter().zip(embed_sum).map(|(c, s)| c + s * inv).collect()
        };
        let mut act = w.hidden_b.clone();
        for (j, &c) in cond.iter().enumerate() {
            let row = &w.hidden_w[j * h..(j + 1) * h];
            act.iter_mut().zip(row).for_each(|(a, wt)| *a += c * wt);
        }
        act.iter_mut().for_each(|a| *a = a.tanh());
        let mut logits = w.out_b.clone();
        for (k, &a) in act.iter().enumerate() {
            let row = &w.out_w[k * v..(k + 1) * v];
            logits.iter_mut().zip(row).for_each(|(l, wt)| *l += a * wt);
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= z);
        debug_assert_eq!(cond.len(), d);
        Step {
            cond,
            act,
            logits,
            probs,
            log_norm: max + z.ln(),
        }
    }

    /// Next-token distribution after `prefix`.
    pub fn forward_distribution(&self, context: &[f64], prefix: &[TokenId]) -> Result<Vec<f64>> {
        self.check_context(context)?;
        self.check_tokens(prefix)?;
        let ctx = self.project_context(context);
        let mut sum = vec![0.0; self.dims.embed];
        for &t in prefix {
            self.add_embedding(&mut sum, t);
        }
        Ok(self.step(&ctx, &sum, prefix.len()).probs)
    }

    /// Σ_t log p(token_t | tokens_<t, context).
    pub fn sequence_logprob(&self, context: &[f64], tokens: &[TokenId]) -> Result<f64> {
        self.check_context(context)?;
        self.check_tokens(tokens)?;
        let ctx = self.project_context(context);
        let mut sum = vec![0.0; self.dims.embed];
        let mut total = 0.0;
        for (t, &y) in tokens.iter().enumerate() {
            let s = self.step(&ctx, &sum, t);
            total += s.logits[y] - s.log_norm;
            self.add_embedding(&mut sum, y);
        }
        Ok(total)
    }

    /// Ancestral sampling at temperature 1 until `<eos>` or `max_len`
    /// tokens. Deterministic in (parameters, context, seed).
    pub fn sample(&self, context: &[f64], seed: u64, max_len: usize) -> Result<Rollout> {
        self.check_context(context)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.decode(context, max_len, |probs| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut last = 0;
            for (i, &p) in probs.iter().enumerate() {
                if p > 0.0 {
                    last = i;
                    acc += p;
                    if u < acc {
                        return i;
                    }
                }
            }
            last
        })
    }

    /// Argmax decoding (lowest id on ties).
    pub fn greedy(&self, context: &[f64], max_len: usize) -> Result<Rollout> {
        self.check_context(context)?;
        self.decode(context, max_len, |probs| {
            probs
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
                .0
        })
    }

    fn decode(&self, context: &[f64], max_len: usize, mut pick: impl FnMut(&[f64]) -> TokenId) -> Result<Rollout> {
        let eos = self.vocab.eos();
        let ctx = self.project_context(context);
        let mut sum = vec![0.0; self.dims.embed];
        let mut out = Rollout {
            tokens: Vec::new(),
            logprobs: Vec::new(),
            entropies: Vec::new(),
        };
        for t in 0..max_len {
            let s = self.step(&ctx, &sum, t);
            let y = pick(&s.probs);
            out.tokens.push(y);
            out.logprobs.push(s.logits[y] - s.log_norm);
            out.entropies.push(shannon_entropy(&s.probs));
            if y == eos {
                break;
            }
            self.add_embedding(&mut sum, y);
        }
        Ok(out)
    }

    /// Adds ∇_θ Σ_t coeffs[t]·log p(tokens[t] | tokens_<t, context) into
    /// `grad` and returns (Σ_t coeffs[t]·log p_t, Σ_t log p_t). Positions
    /// with a zero coefficient contribute nothing to the gradient.
    pub fn accumulate_logprob_grad(
        &self,
        context: &[f64],
        tokens: &[TokenId],
        coeffs: &[f64],
        grad: &mut Weights,
    ) -> Result<(f64, f64)> {
        self.check_context(context)?;
        self.check_tokens(tokens)?;
        if coeffs.len() != tokens.len() {
            return Err(LabError::Shape(format!(
                "{} coefficients for {} tokens",
                coeffs.len(),
                tokens.len()
            )));
        }
        if !grad.same_shape(&self.weights) {
            return Err(LabError::Shape("gradient buffer does not match parameters".into()));
        }
        let Dims { embed: d, hidden: h, vocab: v, .. } = self.dims;
        let w = &self.weights;
        let ctx = self.project_context(context);
        let mut sum = vec![0.0; d];
        // d(objective)/d(cond_t) divided by t, for the prefix-embedding pass
        let mut dcond_scaled: Vec<Vec<f64>> = vec![Vec::new(); tokens.len()];
        let mut dctx = vec![0.0; d];
        let mut weighted = 0.0;
        let mut total = 0.0;
        let mut g_logit = vec![0.0; v];
        let mut dz = vec![0.0; h];

        for (t, (&y, &c)) in tokens.iter().zip(coeffs).enumerate() {
            let s = self.step(&ctx, &sum, t);
            let lp = s.logits[y] - s.log_norm;
            total += lp;
            weighted += c * lp;
            self.add_embedding(&mut sum, y);
            if c == 0.0 {
                continue;
            }
            for (i, (g, p)) in g_logit.iter_mut().zip(&s.probs).enumerate() {
                *g = c * (if i == y { 1.0 } else { 0.0 } - p);
            }
            grad.out_b.iter_mut().zip(&g_logit).for_each(|(b, g)| *b += g);
            for k in 0..h {
                let a = s.act[k];
                let row = &w.out_w[k * v..(k + 1) * v];
                let grow = &mut grad.out_w[k * v..(k + 1) * v];
                let mut da = 0.0;
                for ((gw, &wt), &g) in grow.iter_mut().zip(row).zip(&g_logit) {
                    *gw += a * g;
                    da += wt * g;
                }
                dz[k] = da * (1.0 - a * a);
            }
            grad.hidden_b.iter_mut().zip(&dz).for_each(|(b, g)| *b += g);
            let mut dcond = vec![0.0; d];
            for j in 0..d {
                let row = &w.hidden_w[j * h..(j + 1) * h];
                let grow = &mut grad.hidden_w[j * h..(j + 1) * h];
                let cj = s.cond[j];
                let mut acc = 0.0;
                for ((gw, &wt), &g) in grow.iter_mut().zip(row).zip(&dz) {
                    *gw += cj * g;
                    acc += wt * g;
                }
                dcond[j] = acc;
            }
            dctx.iter_mut().zip(&dcond).for_each(|(a, g)| *a += g);
            if t > 0 {
                let inv = 1.0 / t as f64;
                dcond_scaled[t] = dcond.iter().map(|g| g * inv).collect();
            }
        }

        // context_proj: cond_t depends on it through context for every t
        for (i, &x) in context.iter().enumerate() {
            let grow = &mut grad.context_proj[i * d..(i + 1) * d];
            grow.iter_mut().zip(&dctx).for_each(|(g, dc)| *g += x * dc);
        }
        // token s is in the prefix of every t > s, entering with weight 1/t
        let mut suffix = vec![0.0; d];
        for t in (1..tokens.len()).rev() {
            if !dcond_scaled[t].is_empty() {
                suffix.iter_mut().zip(&dcond_scaled[t]).for_each(|(a, g)| *a += g);
            }
            let tok = tokens[t - 1];
            let grow = &mut grad.embed[tok * d..(tok + 1) * d];
            grow.iter_mut().zip(&suffix).for_each(|(g, a)| *g += a);
        }
        Ok((weighted, total))
    }

    /// Token-averaged cross-entropy over a batch and its analytic gradient.
    pub fn ce_loss_grad(&self, batch: &[TrainingExample], mode: ExecMode) -> Result<(f64, Weights)> {
        if batch.is_empty() {
            return Err(LabError::Empty("training batch"));
        }
        let n_tokens: usize = batch.iter().map(|e| e.target_tokens.len()).sum();
        if n_tokens == 0 {
            return Err(LabError::Empty("training batch has no target tokens"));
        }
        let coeff = -1.0 / n_tokens as f64;
        let chunks: Vec<(usize, &[TrainingExample])> =
            batch.chunks(CHUNK).enumerate().map(|(i, c)| (i * CHUNK, c)).collect();
        let parts = mode.try_map(&chunks, |&(start, chunk)| -> Result<(f64, Weights)> {
            let mut grad = Weights::zeros(self.dims);
            let mut loss = 0.0;
            for (offset, ex) in chunk.iter().enumerate() {
                let coeffs = vec![coeff; ex.target_tokens.len()];
                let (part, _) = self.accumulate_logprob_grad(&ex.context, &ex.target_tokens, &coeffs, &mut grad)?;
                if !part.is_finite() {
                    return Err(LabError::NonFiniteLoss {
                        batch_index: start + offset,
                    });
                }
                loss += part;
            }
            Ok((loss, grad))
        })?;
        let mut grad = Weights::zeros(self.dims);
        let mut loss = 0.0;
        for (l, g) in &parts {
            loss += l;
            grad.add_scaled(g, 1.0);
        }
        Ok((loss, grad))
    }

    /// θ ± lr·g, as a new snapshot.
    pub fn apply_gradient(&self, grad: &Weights, learning_rate: f64, direction: Direction) -> Result<PolicyParams> {
        if !grad.same_shape(&self.weights) {
            return Err(LabError::Shape("gradient does not match parameters".into()));
        }
        let step = match direction {
            Direction::Ascend => learning_rate,
            Direction::Descend => -learning_rate,
        };
        let mut next = self.clone();
        next.weights.add_scaled(grad, step);
        Ok(next)
    }
}
