//! Password corpus ingestion: cleaning policy and deterministic splits.

use crate::apportion::largest_remainder;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("invalid cleaning policy: min_len {min} must satisfy 1 <= min <= max ({max})")]
    InvalidPolicy { min: usize, max: usize },
    #[error("split ratios {0:?} must be non-negative and sum to 1")]
    InvalidRatios([f64; 3]),
    #[error("cannot split an empty corpus")]
    EmptyCorpus,
}

/// Cleaning policy: length bounds plus the fixed 94-character visible ASCII
/// charset (codes 33..=126, space excluded).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CleanPolicy {
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for CleanPolicy {
    fn default() -> Self {
        CleanPolicy {
            min_len: 4,
            max_len: 12,
        }
    }
}

impl CleanPolicy {
    pub fn new(min_len: usize, max_len: usize) -> Result<CleanPolicy, CorpusError> {
        if min_len < 1 || min_len > max_len {
            return Err(CorpusError::InvalidPolicy {
                min: min_len,
                max: max_len,
            });
        }
        Ok(CleanPolicy { min_len, max_len })
    }

    pub fn charset_allows(ch: char) -> bool {
        ('!'..='~').contains(&ch)
    }
}

/// A deduplicated, policy-conforming password list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    passwords: Vec<String>,
    pub provenance: String,
}

impl Corpus {
    pub fn passwords(&self) -> &[String] {
        &self.passwords
    }

    pub fn len(&self) -> usize {
        self.passwords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passwords.is_empty()
    }

    pub fn contains(&self, pw: &str) -> bool {
        // Linear scan is fine for the sizes this is called with in tests;
        // hit-rate evaluation builds its own set.
        self.passwords.iter().any(|p| p == pw)
    }
}

/// Tally of what the cleaning pass did with its input.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanReport {
    pub read: u64,
    pub kept: u64,
    pub deduped: u64,
    pub rejected_by_length: u64,
    pub rejected_by_charset: u64,
}

/// Drop entries violating the policy, deduplicate keeping the first
/// occurrence, and report the tally. Idempotent: cleaning a cleaned corpus
/// changes nothing.
pub fn clean<I>(entries: I, policy: &CleanPolicy) -> (Corpus, CleanReport)
where
    I: IntoIterator<Item = String>,
{
    let mut report = CleanReport::default();
    let mut seen: HashSet<String> = HashSet::new();
    let mut passwords = Vec::new();
    for entry in entries {
        report.read += 1;
        let char_count = entry.chars().count();
        if char_count < policy.min_len || char_count > policy.max_len {
            report.rejected_by_length += 1;
            continue;
        }
        if !entry.chars().all(CleanPolicy::charset_allows) {
            report.rejected_by_charset += 1;
            continue;
        }
        if !seen.insert(entry.clone()) {
            report.deduped += 1;
            continue;
        }
        passwords.push(entry);
    }
    report.kept = passwords.len() as u64;
    (
        Corpus {
            passwords,
            provenance: String::new(),
        },
        report,
    )
}

/// Train/validation/test split specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: [0.7, 0.1, 0.2],
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let sum: f64 = self.ratios.iter().sum();
        if self.ratios.iter().any(|&r| r < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::InvalidRatios(self.ratios));
        }
        Ok(())
    }
}

fn split_hash(seed: u64, password: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(password.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Partition a corpus into train/validation/test sets.
///
/// Sizes are the exact largest-remainder apportionment of the corpus size by
/// the ratios. Membership is decided by ranking passwords on a seeded hash of
/// the password string, so the split is reproducible and stable under corpus
/// reordering.
pub fn split(corpus: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus, Corpus), CorpusError> {
    spec.validate()?;
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }

    let sizes = largest_remainder(corpus.len() as u64, &spec.ratios);
    let mut ranked: Vec<&String> = corpus.passwords.iter().collect();
    ranked.sort_by_cached_key(|pw| (split_hash(spec.seed, pw), (*pw).clone()));

    let train_end = sizes[0] as usize;
    let val_end = train_end + sizes[1] as usize;
    let part = |range: std::ops::Range<usize>, label: &str| Corpus {
        passwords: ranked[range].iter().map(|s| (*s).clone()).collect(),
        provenance: format!("{} ({label} split, seed {})", corpus.provenance, spec.seed),
    };
    Ok((
        part(0..train_end, "train"),
        part(train_end..val_end, "val"),
        part(val_end..ranked.len(), "test"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn strings(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn clean_drops_and_dedups() {
        let (corpus, report) = clean(
            strings(&["abc123!", "abc123!", "ab", "héllo12"]),
            &CleanPolicy::default(),
        );
        assert_eq!(corpus.passwords(), &["abc123!".to_string()]);
        assert_eq!(report.read, 4);
        assert_eq!(report.kept, 1);
        assert_eq!(report.deduped, 1);
        assert_eq!(report.rejected_by_length, 1);
        assert_eq!(report.rejected_by_charset, 1);
    }

    #[test]
    fn clean_keeps_valid_password() {
        let (corpus, _) = clean(strings(&["Pass123$"]), &CleanPolicy::default());
        assert_eq!(corpus.passwords(), &["Pass123$".to_string()]);
    }

    #[test]
    fn clean_rejects_all_overlong() {
        let entries: Vec<String> = (0..1000).map(|i| format!("{i:013}")).collect();
        let (corpus, report) = clean(entries, &CleanPolicy::default());
        assert!(corpus.is_empty());
        assert_eq!(report.rejected_by_length, 1000);
    }

    #[test]
    fn clean_is_idempotent() {
        let (once, _) = clean(
            strings(&["abcd", "efgh1", "abcd", "no pe", "x"]),
            &CleanPolicy::default(),
        );
        let (twice, report) = clean(once.passwords().to_vec(), &CleanPolicy::default());
        assert_eq!(once.passwords(), twice.passwords());
        assert_eq!(report.read, report.kept);
    }

    #[test]
    fn policy_validation() {
        assert!(CleanPolicy::new(0, 5).is_err());
        assert!(CleanPolicy::new(6, 5).is_err());
        assert!(CleanPolicy::new(4, 12).is_ok());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let entries: Vec<String> = (0..10).map(|i| format!("pass{i:04}")).collect();
        let (corpus, _) = clean(entries, &CleanPolicy::default());
        let spec = SplitSpec {
            ratios: [0.7, 0.1, 0.2],
            seed: 1,
        };
        let (train, val, test) = split(&corpus, &spec).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (7, 1, 2));
        let (train2, val2, test2) = split(&corpus, &spec).unwrap();
        assert_eq!(train.passwords(), train2.passwords());
        assert_eq!(val.passwords(), val2.passwords());
        assert_eq!(test.passwords(), test2.passwords());
    }

    #[test]
    fn split_three_passwords() {
        let (corpus, _) = clean(strings(&["aaaa", "bbbb", "cccc"]), &CleanPolicy::default());
        let spec = SplitSpec::default();
        let (train, val, test) = split(&corpus, &spec).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (2, 0, 1));
    }

    #[test]
    fn split_empty_corpus_errors() {
        let (corpus, _) = clean(Vec::new(), &CleanPolicy::default());
        assert_eq!(
            split(&corpus, &SplitSpec::default()),
            Err(CorpusError::EmptyCorpus)
        );
    }

    #[test]
    fn split_rejects_bad_ratios() {
        let (corpus, _) = clean(strings(&["aaaa"]), &CleanPolicy::default());
        let spec = SplitSpec {
            ratios: [0.5, 0.1, 0.2],
            seed: 0,
        };
        assert!(matches!(
            split(&corpus, &spec),
            Err(CorpusError::InvalidRatios(_))
        ));
    }

    #[test]
    fn split_is_stable_under_reordering() {
        let entries: Vec<String> = (0..50).map(|i| format!("word{i:03}a")).collect();
        let (corpus, _) = clean(entries.clone(), &CleanPolicy::default());
        let mut reversed = entries;
        reversed.reverse();
        let (corpus_rev, _) = clean(reversed, &CleanPolicy::default());
        let spec = SplitSpec {
            ratios: [0.7, 0.1, 0.2],
            seed: 9,
        };
        let (a, _, _) = split(&corpus, &spec).unwrap();
        let (b, _, _) = split(&corpus_rev, &spec).unwrap();
        assert_eq!(a.passwords(), b.passwords());
    }

    proptest! {
        // Split is a partition: disjoint parts whose union is the corpus.
        #[test]
        fn split_partitions(entries in prop::collection::hash_set("[!-~]{4,12}", 1..60), seed in any::<u64>()) {
            let (corpus, _) = clean(entries.into_iter().collect::<Vec<_>>(), &CleanPolicy::default());
            prop_assume!(!corpus.is_empty());
            let spec = SplitSpec { ratios: [0.7, 0.1, 0.2], seed };
            let (train, val, test) = split(&corpus, &spec).unwrap();
            let mut all: Vec<String> = Vec::new();
            all.extend_from_slice(train.passwords());
            all.extend_from_slice(val.passwords());
            all.extend_from_slice(test.passwords());
            prop_assert_eq!(all.len(), corpus.len());
            let set: HashSet<&String> = all.iter().collect();
            prop_assert_eq!(set.len(), corpus.len());
            for pw in corpus.passwords() {
                prop_assert!(set.contains(pw));
            }
        }
    }
}
