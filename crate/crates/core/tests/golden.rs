//! Forward pass against values produced by the NumPy reference in
//! `fixtures/reference_eval.py`.

use serde::Deserialize;
use surgrl::fixtures::gradcheck_policy;
use surgrl::policy::{read_checkpoint, write_checkpoint};

#[derive(Deserialize)]
struct Golden {
    context: Vec<f64>,
    empty_prefix_distribution: Vec<f64>,
    prefix: Vec<usize>,
    prefix_distribution: Vec<f64>,
    sequence: Vec<usize>,
    sequence_logprob: f64,
}

const CKPT: &str = include_str!("fixtures/gradcheck_policy.ckpt");
const GOLDEN: &str = include_str!("fixtures/golden_forward.json");

#[test]
fn fixture_checkpoint_matches_initializer() {
    assert_eq!(write_checkpoint(&gradcheck_policy(42)), CKPT);
}

#[test]
fn forward_matches_reference_evaluation() {
    let policy = read_checkpoint(CKPT).unwrap();
    let g: Golden = serde_json::from_str(GOLDEN).unwrap();
    let empty = policy.forward_distribution(&g.context, &[]).unwrap();
    let pre = policy.forward_distribution(&g.context, &g.prefix).unwrap();
    for (a, b) in empty.iter().zip(&g.empty_prefix_distribution) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
    for (a, b) in pre.iter().zip(&g.prefix_distribution) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
    let lp = policy.sequence_logprob(&g.context, &g.sequence).unwrap();
    assert!((lp - g.sequence_logprob).abs() < 1e-9, "{lp} vs {}", g.sequence_logprob);
}
