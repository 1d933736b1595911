//! Prominence-driven target/context splitting of word sequences, plus the
//! fixed-length baseline.

use crate::error::{Error, Result};

/// Half-open word-index span `[start, end)`. May be empty (`start == end`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// One segmentation unit: a target span with its adjacent contexts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentTriple {
    pub left: Span,
    pub target: Span,
    pub right: Span,
}

/// Ordered list of segmentation triples. Targets never overlap each other;
/// contexts may overlap neighboring targets (units are processed one at a
/// time).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Segmentation {
    pub triples: Vec<SegmentTriple>,
}

/// Word sequence with per-word prominence scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ProminenceLabeledText {
    words: Vec<String>,
    prominence: Vec<f64>,
}

impl ProminenceLabeledText {
    pub fn new(words: Vec<String>, prominence: Vec<f64>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::InvalidConfig("word list must be nonempty".into()));
        }
        if words.len() != prominence.len() {
            return Err(Error::SizeMismatch {
                what: "prominence labels",
                expected: words.len(),
                actual: prominence.len(),
            });
        }
        if prominence.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                what: "prominence score",
            });
        }
        Ok(Self { words, prominence })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn prominence(&self) -> &[f64] {
        &self.prominence
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false // nonempty by construction
    }
}

/// Split at prominent words: each target runs from a prominent word up to (not
/// including) the next prominent word, or the sentence end. Left and right
/// contexts take the same number of words as their target, clipped (possibly
/// to empty) at the sentence boundaries.
pub fn segment_prominence(text: &ProminenceLabeledText, threshold: f64) -> Result<Segmentation> {
    let n = text.len();
    let prominent: Vec<usize> = (0..n).filter(|&i| text.prominence[i] >= threshold).collect();
    if prominent.is_empty() {
        return Err(Error::NoProminentWord { threshold });
    }
    let mut triples = Vec::with_capacity(prominent.len());
    for (idx, &start) in prominent.iter().enumerate() {
        let end = prominent.get(idx + 1).copied().unwrap_or(n);
        let len = end - start;
        let left = Span::new(start.saturating_sub(len), start);
        let right = Span::new(end, (end + len).min(n));
        triples.push(SegmentTriple {
            left,
            target: Span::new(start, end),
            right,
        });
    }
    Ok(Segmentation { triples })
}

/// Fixed-length baseline: alternating context/target/context blocks of `n`
/// words, with any trailing remainder attached to the last block. Depends only
/// on the word count.
pub fn segment_fixed(words: &[String], n: usize) -> Result<Segmentation> {
    if n == 0 {
        return Err(Error::InvalidConfig("block length must be >= 1".into()));
    }
    let total = words.len();
    let full_blocks = total / n;
    if full_blocks == 0 {
        // Too short for even one block boundary: context only, no targets.
        return Ok(Segmentation::default());
    }
    // Block b covers [b*n, (b+1)*n), except the last block absorbs the
    // remainder.
    let block = |b: usize| -> Span {
        let start = b * n;
        let end = if b + 1 == full_blocks { total } else { (b + 1) * n };
        Span::new(start, end)
    };
    // Target blocks sit at odd positions and need a following context block.
    let mut triples = Vec::new();
    let mut b = 1;
    while b + 1 < full_blocks {
        triples.push(SegmentTriple {
            left: block(b - 1),
            target: block(b),
            right: block(b + 1),
        });
        b += 2;
    }
    Ok(Segmentation { triples })
}
