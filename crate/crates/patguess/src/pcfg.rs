//! Character-class patterns and their empirical distribution.
//!
//! A pattern is the maximal-run segmentation of a password into letter,
//! digit, and special-character segments: "abc123!" segments into L3N3S1.
//! The distribution of patterns over a corpus drives both pattern-guided
//! generation and the divide-and-conquer scheduler.

use crate::corpus::Corpus;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

/// Longest segment representable by the vocabulary's pattern tokens.
pub const MAX_SEGMENT_LEN: usize = 12;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PatternError {
    #[error("character {ch:?} at position {pos} is not a visible ASCII character")]
    Unclassifiable { ch: char, pos: usize },
    #[error("empty password has no pattern")]
    Empty,
    #[error("segment length {0} exceeds the maximum of {MAX_SEGMENT_LEN}")]
    SegmentTooLong(usize),
    #[error("adjacent segments share class {0:?}")]
    AdjacentSameClass(CharClass),
    #[error("position {pos} out of range for pattern of length {len}")]
    PositionOutOfRange { pos: usize, len: usize },
    #[error("cannot parse pattern text {0:?}")]
    Parse(String),
    #[error("empty corpus has no pattern distribution")]
    EmptyCorpus,
}

/// One of the three character classes a visible ASCII character falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CharClass {
    Letter,
    Digit,
    Symbol,
}

impl CharClass {
    /// Classify a character, if it lies in the 94-character visible ASCII
    /// charset (codes 33..=126).
    pub fn of(ch: char) -> Option<CharClass> {
        match ch {
            'A'..='Z' | 'a'..='z' => Some(CharClass::Letter),
            '0'..='9' => Some(CharClass::Digit),
            '!'..='~' => Some(CharClass::Symbol),
            _ => None,
        }
    }

    /// Number of characters in the class: 52 letters, 10 digits, 32 specials.
    pub fn size(self) -> u64 {
        match self {
            CharClass::Letter => 52,
            CharClass::Digit => 10,
            CharClass::Symbol => 32,
        }
    }

    /// The letter used in pattern text form: L, N, or S.
    pub fn label(self) -> char {
        match self {
            CharClass::Letter => 'L',
            CharClass::Digit => 'N',
            CharClass::Symbol => 'S',
        }
    }

    pub fn from_label(label: char) -> Option<CharClass> {
        match label {
            'L' => Some(CharClass::Letter),
            'N' => Some(CharClass::Digit),
            'S' => Some(CharClass::Symbol),
            _ => None,
        }
    }
}

/// A maximal run of same-class characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Segment {
    pub class: CharClass,
    pub len: usize,
}

/// An ordered, non-empty list of segments with alternating classes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pattern {
    segments: Vec<Segment>,
}

impl Pattern {
    /// Build a pattern from explicit segments, checking the invariants:
    /// non-empty, segment lengths in 1..=12, no two adjacent segments of the
    /// same class.
    pub fn new(segments: Vec<Segment>) -> Result<Pattern, PatternError> {
        if segments.is_empty() {
            return Err(PatternError::Empty);
        }
        for pair in segments.windows(2) {
            if pair[0].class == pair[1].class {
                return Err(PatternError::AdjacentSameClass(pair[0].class));
            }
        }
        for seg in &segments {
            if seg.len == 0 || seg.len > MAX_SEGMENT_LEN {
                return Err(PatternError::SegmentTooLong(seg.len));
            }
        }
        Ok(Pattern { segments })
    }

    /// Extract the unique maximal-run segmentation of a password.
    pub fn extract(password: &str) -> Result<Pattern, PatternError> {
        let mut segments: Vec<Segment> = Vec::new();
        for (pos, ch) in password.chars().enumerate() {
            let class = CharClass::of(ch).ok_or(PatternError::Unclassifiable { ch, pos })?;
            match segments.last_mut() {
                Some(seg) if seg.class == class => seg.len += 1,
                _ => segments.push(Segment { class, len: 1 }),
            }
        }
        if segments.iter().any(|s| s.len > MAX_SEGMENT_LEN) {
            let too_long = segments.iter().map(|s| s.len).max().unwrap();
            return Err(PatternError::SegmentTooLong(too_long));
        }
        if segments.is_empty() {
            return Err(PatternError::Empty);
        }
        Ok(Pattern { segments })
    }

    /// Parse the text form, e.g. "L4N3S1".
    pub fn parse(text: &str) -> Result<Pattern, PatternError> {
        let mut segments = Vec::new();
        let mut chars = text.chars().peekable();
        while let Some(label) = chars.next() {
            let class = CharClass::from_label(label)
                .ok_or_else(|| PatternError::Parse(text.to_string()))?;
            let mut digits = String::new();
            while let Some(c) = chars.peek() {
                if c.is_ascii_digit() {
                    digits.push(*c);
                    chars.next();
                } else {
                    break;
                }
            }
            let len: usize = digits
                .parse()
                .map_err(|_| PatternError::Parse(text.to_string()))?;
            segments.push(Segment { class, len });
        }
        Pattern::new(segments).map_err(|e| match e {
            PatternError::Empty => PatternError::Parse(text.to_string()),
            other => other,
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    /// Total password length the pattern describes.
    pub fn total_len(&self) -> usize {
        self.segments.iter().map(|s| s.len).sum()
    }

    /// Class of the character at a 0-based position within the pattern.
    pub fn class_at(&self, position: usize) -> Result<CharClass, PatternError> {
        let mut offset = 0;
        for seg in &self.segments {
            if position < offset + seg.len {
                return Ok(seg.class);
            }
            offset += seg.len;
        }
        Err(PatternError::PositionOutOfRange {
            pos: position,
            len: self.total_len(),
        })
    }

    /// Number of distinct passwords conforming to the pattern, i.e. the
    /// product of class_size^len over its segments. Saturates at `u128::MAX`.
    pub fn space_size(&self) -> u128 {
        self.suffix_space(0)
    }

    /// Number of distinct completions once the first `from` characters are
    /// fixed: the product of class sizes over positions `from..total_len`.
    pub fn suffix_space(&self, from: usize) -> u128 {
        let mut size: u128 = 1;
        let mut offset = 0;
        for seg in &self.segments {
            for pos in offset..offset + seg.len {
                if pos >= from {
                    size = size.saturating_mul(seg.class.size() as u128);
                }
            }
            offset += seg.len;
        }
        size
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for seg in &self.segments {
            write!(f, "{}{}", seg.class.label(), seg.len)?;
        }
        Ok(())
    }
}

/// Empirical pattern distribution over a corpus. Stores raw counts so that
/// distributions merge losslessly; probabilities are derived on demand.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatternDistribution {
    counts: HashMap<Pattern, u64>,
    total: u64,
}

impl PatternDistribution {
    /// Count every password's extracted pattern.
    pub fn from_corpus(corpus: &Corpus) -> Result<PatternDistribution, PatternError> {
        if corpus.is_empty() {
            return Err(PatternError::EmptyCorpus);
        }
        let mut dist = PatternDistribution::default();
        for pw in corpus.passwords() {
            dist.add(Pattern::extract(pw)?, 1);
        }
        Ok(dist)
    }

    pub fn add(&mut self, pattern: Pattern, count: u64) {
        *self.counts.entry(pattern).or_insert(0) += count;
        self.total += count;
    }

    /// Merge another distribution's counts into this one. Associative and
    /// commutative, so sharded counting is exact.
    pub fn merge(&mut self, other: &PatternDistribution) {
        for (p, &c) in &other.counts {
            self.add(p.clone(), c);
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn count(&self, pattern: &Pattern) -> u64 {
        self.counts.get(pattern).copied().unwrap_or(0)
    }

    pub fn probability(&self, pattern: &Pattern) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count(pattern) as f64 / self.total as f64
        }
    }

    /// Entries sorted by descending count, then lexicographic pattern text.
    /// This is the canonical order for files and budget apportionment.
    pub fn sorted_entries(&self) -> Vec<(Pattern, u64)> {
        let mut entries: Vec<(Pattern, u64)> = self
            .counts
            .iter()
            .map(|(p, &c)| (p.clone(), c))
            .collect();
        entries.sort_by(|(pa, ca), (pb, cb)| {
            cb.cmp(ca).then_with(|| pa.to_string().cmp(&pb.to_string()))
        });
        entries
    }

    /// Serialize as `PATTERN<TAB>COUNT` lines in canonical order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (p, c) in self.sorted_entries() {
            out.push_str(&format!("{p}\t{c}\n"));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<PatternDistribution, PatternError> {
        let mut dist = PatternDistribution::default();
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            let (pat, count) = line
                .split_once('\t')
                .ok_or_else(|| PatternError::Parse(line.to_string()))?;
            let count: u64 = count
                .parse()
                .map_err(|_| PatternError::Parse(line.to_string()))?;
            dist.add(Pattern::parse(pat)?, count);
        }
        Ok(dist)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{clean, CleanPolicy};
    use proptest::prelude::*;

    fn pat(text: &str) -> Pattern {
        Pattern::parse(text).unwrap()
    }

    #[test]
    fn extracts_known_patterns() {
        assert_eq!(Pattern::extract("abc123!").unwrap(), pat("L3N3S1"));
        assert_eq!(Pattern::extract("Pass123$").unwrap(), pat("L4N3S1"));
        assert_eq!(Pattern::extract("password123").unwrap(), pat("L8N3"));
        assert_eq!(Pattern::extract("1234").unwrap(), pat("N4"));
    }

    #[test]
    fn extract_rejects_unclassifiable() {
        assert_eq!(
            Pattern::extract("ab cd"),
            Err(PatternError::Unclassifiable { ch: ' ', pos: 2 })
        );
        assert!(matches!(
            Pattern::extract("héllo"),
            Err(PatternError::Unclassifiable { .. })
        ));
        assert_eq!(Pattern::extract(""), Err(PatternError::Empty));
    }

    #[test]
    fn extract_rejects_overlong_segment() {
        let pw = "a".repeat(13);
        assert_eq!(Pattern::extract(&pw), Err(PatternError::SegmentTooLong(13)));
    }

    #[test]
    fn space_sizes() {
        assert_eq!(pat("N3").space_size(), 1000);
        assert_eq!(pat("L1").space_size(), 52);
        assert_eq!(pat("L2N1").space_size(), 52 * 52 * 10);
        assert_eq!(pat("L1N1S1").space_size(), 52 * 10 * 32);
    }

    #[test]
    fn suffix_spaces() {
        let p = pat("L1N2");
        assert_eq!(p.suffix_space(0), 52 * 10 * 10);
        assert_eq!(p.suffix_space(1), 100);
        assert_eq!(p.suffix_space(2), 10);
        assert_eq!(p.suffix_space(3), 1);
    }

    #[test]
    fn segment_counts() {
        assert_eq!(pat("L8N3").segment_count(), 2);
        assert_eq!(pat("N4").segment_count(), 1);
        assert_eq!(pat("L4N3S1").segment_count(), 3);
    }

    #[test]
    fn class_at_positions() {
        let p = pat("L4N3S1");
        assert_eq!(p.class_at(0).unwrap(), CharClass::Letter);
        assert_eq!(p.class_at(4).unwrap(), CharClass::Digit);
        assert_eq!(p.class_at(7).unwrap(), CharClass::Symbol);
        assert_eq!(
            p.class_at(8),
            Err(PatternError::PositionOutOfRange { pos: 8, len: 8 })
        );
    }

    #[test]
    fn parse_round_trip_and_rejects() {
        assert_eq!(pat("L4N3S1").to_string(), "L4N3S1");
        assert!(Pattern::parse("").is_err());
        assert!(Pattern::parse("L0").is_err());
        assert!(Pattern::parse("L13").is_err());
        assert!(Pattern::parse("L2L3").is_err());
        assert!(Pattern::parse("X4").is_err());
    }

    #[test]
    fn distribution_hand_count() {
        let (corpus, _) = clean(
            ["ab12", "cd34", "ef5!"].iter().map(|s| s.to_string()),
            &CleanPolicy::default(),
        );
        let dist = PatternDistribution::from_corpus(&corpus).unwrap();
        assert_eq!(dist.count(&pat("L2N2")), 2);
        assert_eq!(dist.count(&pat("L2N1S1")), 1);
        assert!((dist.probability(&pat("L2N2")) - 2.0 / 3.0).abs() < 1e-12);
        let prob_sum: f64 = dist
            .sorted_entries()
            .iter()
            .map(|(p, _)| dist.probability(p))
            .sum();
        assert!((prob_sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn distribution_single_password() {
        let (corpus, _) = clean(
            ["only1pass"].iter().map(|s| s.to_string()),
            &CleanPolicy::default(),
        );
        let dist = PatternDistribution::from_corpus(&corpus).unwrap();
        assert_eq!(dist.len(), 1);
        assert!((dist.probability(&pat("L4N1L4")) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn distribution_merge_is_additive() {
        let policy = CleanPolicy::default();
        let (a, _) = clean(["ab12", "cd34"].iter().map(|s| s.to_string()), &policy);
        let (b, _) = clean(["ef5!", "gh67"].iter().map(|s| s.to_string()), &policy);
        let (union, _) = clean(
            ["ab12", "cd34", "ef5!", "gh67"].iter().map(|s| s.to_string()),
            &policy,
        );
        let mut merged = PatternDistribution::from_corpus(&a).unwrap();
        merged.merge(&PatternDistribution::from_corpus(&b).unwrap());
        assert_eq!(merged, PatternDistribution::from_corpus(&union).unwrap());
    }

    #[test]
    fn tsv_round_trip_canonical_order() {
        let mut dist = PatternDistribution::default();
        dist.add(pat("L2N2"), 5);
        dist.add(pat("N4"), 5);
        dist.add(pat("L4"), 1);
        let tsv = dist.to_tsv();
        assert_eq!(tsv, "L2N2\t5\nN4\t5\nL4\t1\n");
        assert_eq!(PatternDistribution::from_tsv(&tsv).unwrap(), dist);
    }

    proptest! {
        // Maximal-run property: adjacent segments of an extracted pattern
        // never share a class, and segment lengths reproduce the password.
        #[test]
        fn extraction_is_maximal_run(pw in "[!-~]{1,12}") {
            let p = Pattern::extract(&pw).unwrap();
            prop_assert_eq!(p.total_len(), pw.chars().count());
            for pair in p.segments().windows(2) {
                prop_assert_ne!(pair[0].class, pair[1].class);
            }
            for (i, ch) in pw.chars().enumerate() {
                prop_assert_eq!(p.class_at(i).unwrap(), CharClass::of(ch).unwrap());
            }
        }
    }
}
