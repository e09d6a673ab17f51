//! Hierarchical chain-of-thought output grammar:
//!
//! ```text
//! <think> Level 1 ... Level 2 ... Level 3 ... </think> <answer> final answer </answer>
//! ```
//!
//! Tags are matched literally and case-sensitively. A segment is recoverable
//! only when its opening and closing tag each occur exactly once, in order.

use serde::{Deserialize, Serialize};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

pub const LEVEL_MARKERS: [&str; 3] = ["Level 1", "Level 2", "Level 3"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotTrace {
    pub raw: String,
    pub think_segment: Option<String>,
    pub answer_segment: Option<String>,
    pub has_level1: bool,
    pub has_level2: bool,
    pub has_level3: bool,
    pub well_formed: bool,
}

impl CotTrace {
    /// Trimmed answer segment, if one could be recovered.
    pub fn answer(&self) -> Option<&str> {
        self.answer_segment.as_deref().map(str::trim)
    }
}

/// Byte span of a recoverable `open ... close` block: (open start, content
/// start, content end, close end).
struct Block {
    start: usize,
    content: (usize, usize),
    end: usize,
}

fn find_block(raw: &str, open: &str, close: &str) -> Option<Block> {
    if raw.matches(open).count() != 1 || raw.matches(close).count() != 1 {
        return None;
    }
    let start = raw.find(open)?;
    let close_at = raw.find(close)?;
    let content_start = start + open.len();
    if close_at < content_start {
        return None;
    }
    Some(Block {
        start,
        content: (content_start, close_at),
        end: close_at + close.len(),
    })
}

/// Parses arbitrary text. Never fails; malformed input yields
/// `well_formed = false` with whatever segments were recoverable.
pub fn parse_output(raw: &str) -> CotTrace {
    let think = find_block(raw, THINK_OPEN, THINK_CLOSE);
    let answer = find_block(raw, ANSWER_OPEN, ANSWER_CLOSE);

    let think_segment = think
        .as_ref()
        .map(|b| raw[b.content.0..b.content.1].to_string());
    let answer_segment = answer
        .as_ref()
        .map(|b| raw[b.content.0..b.content.1].to_string());

    let level = |marker: &str| think_segment.as_deref().is_some_and(|t| t.contains(marker));

    // Whitespace only before <think> and after </answer>; anything may sit
    // between </think> and <answer>.
    let well_formed = match (&think, &answer) {
        (Some(t), Some(a)) => {
            t.end <= a.start
                && raw[..t.start].trim().is_empty()
                && raw[a.end..].trim().is_empty()
        }
        _ => false,
    };

    CotTrace {
        raw: raw.to_string(),
        has_level1: level(LEVEL_MARKERS[0]),
        has_level2: level(LEVEL_MARKERS[1]),
        has_level3: level(LEVEL_MARKERS[2]),
        think_segment,
        answer_segment,
        well_formed,
    }
}

/// Trimmed answer segment if recoverable. No case folding.
pub fn extract_answer(raw: &str) -> Option<String> {
    parse_output(raw).answer().map(str::to_string)
}
