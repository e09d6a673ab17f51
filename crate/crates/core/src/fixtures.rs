//! Small deterministic policies shared by unit tests, integration tests
//! and benchmarks.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cot_format::{ANSWER_CLOSE, ANSWER_OPEN, THINK_CLOSE, THINK_OPEN};
use crate::policy::PolicyParams;
use crate::synth::CONTEXT_DIM;
use crate::vocab::{Vocab, EOS};

/// Twelve-token vocabulary for gradient checks.
pub fn tiny_vocab() -> Arc<Vocab> {
    let tokens = [EOS, THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE, "Level 1:", "a", "b", "c", "d", "e", "f"];
    Arc::new(Vocab::new(tokens.iter().map(|s| s.to_string()).collect()).expect("valid vocab"))
}

/// 258-parameter policy with every tensor (biases included) drawn from
/// uniform(-0.5, 0.5), so tanh units sit in their curved region.
pub fn gradcheck_policy(seed: u64) -> PolicyParams {
    let mut p = PolicyParams::init_scaled(tiny_vocab(), 4, 6, CONTEXT_DIM, seed, 0.5).expect("valid dims");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for t in [&mut p.weights.hidden_b, &mut p.weights.out_b] {
        t.iter_mut().for_each(|x| *x = rng.random_range(-0.5..0.5));
    }
    p
}

/// Random context vector of the synthetic-task width.
pub fn random_context(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..CONTEXT_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Random token sequence over `vocab_len` ids of length `len`.
pub fn random_tokens(seed: u64, vocab_len: usize, len: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(0..vocab_len)).collect()
}

/// All-zero output layer: uniform next-token distribution everywhere.
pub fn uniform_policy(vocab: Arc<Vocab>, seed: u64) -> PolicyParams {
    let mut p = PolicyParams::init(vocab, 8, 8, CONTEXT_DIM, seed).expect("valid dims");
    p.weights.out_w.iter_mut().for_each(|x| *x = 0.0);
    p.weights.out_b.iter_mut().for_each(|x| *x = 0.0);
    p
}

/// Near-zero-temperature policy that puts essentially all mass on `token`
/// at every position, whatever the context.
pub fn degenerate_policy(vocab: Arc<Vocab>, token: &str) -> PolicyParams {
    let id = vocab.id(token).expect("token in vocabulary");
    let mut p = uniform_policy(vocab, 0);
    p.weights.out_b[id] = 1e3;
    p
}
