//! Plain-text checkpoint format.
//!
//! ```text
//! surgrl-policy-checkpoint
//! format_version 1
//! seed <u64>
//! dims <vocab> <embed> <context> <hidden>
//! vocab <n>
//! <one JSON string per token>
//! tensor <name> <rows> <cols>
//! <one line per row, space-separated decimals>
//! ...
//! end
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so
//! save→load is exact and identical parameters give identical files.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use super::{Dims, PolicyParams, Weights, TENSOR_NAMES};
use crate::error::{LabError, Result};
use crate::vocab::Vocab;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "surgrl-policy-checkpoint";

pub fn write_checkpoint(policy: &PolicyParams) -> String {
    let d = policy.dims;
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "format_version {CHECKPOINT_VERSION}");
    let _ = writeln!(out, "seed {}", policy.seed);
    let _ = writeln!(out, "dims {} {} {} {}", d.vocab, d.embed, d.context, d.hidden);
    let _ = writeln!(out, "vocab {}", policy.vocab.len());
    for t in policy.vocab.tokens() {
        let _ = writeln!(out, "{}", serde_json::to_string(t).expect("strings serialize"));
    }
    for ((name, (rows, cols)), data) in TENSOR_NAMES
        .iter()
        .zip(Weights::shapes(d))
        .zip(policy.weights.tensors())
    {
        let _ = writeln!(out, "tensor {name} {rows} {cols}");
        for r in 0..rows {
            let row: Vec<String> = data[r * cols..(r + 1) * cols].iter().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => Err(self.err("unexpected end of file")),
        }
    }

    fn err(&self, reason: impl Into<String>) -> LabError {
        LabError::Checkpoint {
            line: self.line,
            reason: reason.into(),
        }
    }

    fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let l = self.next()?;
        let mut parts = l.split(' ');
        if parts.next() != Some(key) {
            return Err(self.err(format!("expected `{key}`")));
        }
        Ok(parts.collect())
    }

    fn number<T: std::str::FromStr>(&self, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(format!("bad number `{s}`")))
    }
}

pub fn read_checkpoint(text: &str) -> Result<PolicyParams> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    if lines.next()? != MAGIC {
        return Err(lines.err("not a policy checkpoint"));
    }
    let version: u32 = {
        let v = lines.keyed("format_version")?;
        lines.number(v.first().copied().unwrap_or(""))?
    };
    if version != CHECKPOINT_VERSION {
        return Err(lines.err(format!("unsupported format_version {version}")));
    }
    let seed: u64 = {
        let v = lines.keyed("seed")?;
        lines.number(v.first().copied().unwrap_or(""))?
    };
    let dims_raw = lines.keyed("dims")?;
    if dims_raw.len() != 4 {
        return Err(lines.err("dims needs four values"));
    }
    let dims = Dims {
        vocab: lines.number(dims_raw[0])?,
        embed: lines.number(dims_raw[1])?,
        context: lines.number(dims_raw[2])?,
        hidden: lines.number(dims_raw[3])?,
    };
    let n_vocab: usize = {
        let v = lines.keyed("vocab")?;
        lines.number(v.first().copied().unwrap_or(""))?
    };
    if n_vocab != dims.vocab {
        return Err(lines.err("vocab size disagrees with dims"));
    }
    let mut tokens = Vec::with_capacity(n_vocab);
    for _ in 0..n_vocab {
        let l = lines.next()?;
        tokens.push(serde_json::from_str::<String>(l).map_err(|e| lines.err(e.to_string()))?);
    }
    let vocab = Vocab::new(tokens).map_err(|e| lines.err(e.to_string()))?;

    let mut weights = Weights::zeros(dims);
    for ((name, (rows, cols)), data) in TENSOR_NAMES
        .iter()
        .zip(Weights::shapes(dims))
        .zip(weights.tensors_mut())
    {
        let header = lines.keyed("tensor")?;
        if header != [*name, &rows.to_string(), &cols.to_string()] {
            return Err(lines.err(format!("expected tensor {name} {rows} {cols}")));
        }
        for r in 0..rows {
            let l = lines.next()?;
            let vals: Vec<&str> = l.split(' ').collect();
            if vals.len() != cols {
                return Err(lines.err(format!("row has {} values, expected {cols}", vals.len())));
            }
            for (c, v) in vals.into_iter().enumerate() {
                let x: f64 = lines.number(v)?;
                if !x.is_finite() {
                    return Err(lines.err("non-finite parameter"));
                }
                data[r * cols + c] = x;
            }
        }
    }
    if lines.next()? != "end" {
        return Err(lines.err("expected `end`"));
    }
    Ok(PolicyParams {
        vocab: Arc::new(vocab),
        dims,
        weights,
        seed,
    })
}

pub fn save_checkpoint(policy: &PolicyParams, path: &Path) -> Result<()> {
    std::fs::write(path, write_checkpoint(policy)).map_err(|e| LabError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    read_checkpoint(&text)
}
