//! Evaluation metrics: hit rates, repeat rate, distribution distances, and
//! the pattern-guided benchmark.

use crate::corpus::Corpus;
use crate::generator::{sample_guided, GenError};
use crate::model::NextTokenModel;
use crate::pcfg::{Pattern, PatternDistribution, PatternError, MAX_SEGMENT_LEN};
use crate::tokenizer::Vocabulary;
use serde::Serialize;
use std::collections::{BTreeMap, HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("test corpus must be non-empty")]
    EmptyTest,
    #[error("generated set must be non-empty")]
    EmptyGenerated,
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Generation(#[from] GenError),
}

/// Hit-rate summary. `hits` counts unique generated passwords that appear
/// in the deduplicated test set.
#[derive(Debug, Clone, Serialize)]
pub struct HitReport {
    pub generated_unique: u64,
    pub test_unique: u64,
    pub hits: u64,
    pub hit_rate: f64,
    /// Segment-count category -> hit rate, omitting empty categories.
    pub by_segments: BTreeMap<usize, f64>,
}

/// Length and pattern distribution distances, with the underlying tables.
#[derive(Debug, Clone, Serialize)]
pub struct DistanceReport {
    pub length_distance: f64,
    pub pattern_distance: f64,
    /// Probability of each length 4..=12, generated then test.
    pub length_bins: Vec<(usize, f64, f64)>,
    /// Top test patterns with generated and test probabilities.
    pub pattern_bins: Vec<(String, f64, f64)>,
}

fn dedup(passwords: &[String]) -> HashSet<&str> {
    passwords.iter().map(String::as_str).collect()
}

/// Overall hit rate with the per-segment-count breakdown: dedup both
/// sides, then |generated ∩ test| / |test|.
pub fn hit_rate(generated: &[String], test: &Corpus) -> Result<HitReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTest);
    }
    let gen_set = dedup(generated);
    let test_set = dedup(test.passwords());

    let mut per_cat_hits: BTreeMap<usize, u64> = BTreeMap::new();
    let mut per_cat_total: BTreeMap<usize, u64> = BTreeMap::new();
    let mut hits = 0u64;
    for &pw in &test_set {
        let segments = Pattern::extract(pw)?.segment_count();
        *per_cat_total.entry(segments).or_insert(0) += 1;
        if gen_set.contains(pw) {
            hits += 1;
            *per_cat_hits.entry(segments).or_insert(0) += 1;
        }
    }
    let by_segments = per_cat_total
        .iter()
        .map(|(&s, &total)| {
            let h = per_cat_hits.get(&s).copied().unwrap_or(0);
            (s, h as f64 / total as f64)
        })
        .collect();
    Ok(HitReport {
        generated_unique: gen_set.len() as u64,
        test_unique: test_set.len() as u64,
        hits,
        hit_rate: hits as f64 / test_set.len() as f64,
        by_segments,
    })
}

/// Hit rate per segment-count category.
pub fn hit_rate_by_segments(
    generated: &[String],
    test: &Corpus,
) -> Result<BTreeMap<usize, f64>, EvalError> {
    Ok(hit_rate(generated, test)?.by_segments)
}

/// Hit rate restricted to test passwords of one exact pattern. Returns
/// `None` when the pattern never occurs in the test set.
pub fn hit_rate_by_pattern(
    generated: &[String],
    test: &Corpus,
    pattern: &Pattern,
) -> Result<Option<f64>, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTest);
    }
    let gen_set = dedup(generated);
    let mut total = 0u64;
    let mut hits = 0u64;
    for pw in dedup(test.passwords()) {
        if Pattern::extract(pw)? == *pattern {
            total += 1;
            if gen_set.contains(pw) {
                hits += 1;
            }
        }
    }
    if total == 0 {
        return Ok(None);
    }
    Ok(Some(hits as f64 / total as f64))
}

/// Fraction of duplicate passwords in a generated multiset:
/// 1 - unique/total.
pub fn repeat_rate(generated: &[String]) -> Result<f64, EvalError> {
    if generated.is_empty() {
        return Err(EvalError::EmptyGenerated);
    }
    let unique = dedup(generated).len();
    Ok(1.0 - unique as f64 / generated.len() as f64)
}

fn length_histogram(passwords: &[String]) -> [f64; 9] {
    let mut bins = [0.0f64; 9];
    let mut total = 0u64;
    for pw in passwords {
        let len = pw.chars().count();
        if (4..=12).contains(&len) {
            bins[len - 4] += 1.0;
            total += 1;
        }
    }
    if total > 0 {
        bins.iter_mut().for_each(|b| *b /= total as f64);
    }
    bins
}

/// Euclidean distance between the length distributions over lengths 4-12.
pub fn length_distance(generated: &[String], test: &[String]) -> Result<f64, EvalError> {
    if generated.is_empty() {
        return Err(EvalError::EmptyGenerated);
    }
    if test.is_empty() {
        return Err(EvalError::EmptyTest);
    }
    let a = length_histogram(generated);
    let b = length_histogram(test);
    Ok(a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// The top `k` test patterns ranked by count (ties broken by pattern text).
fn top_test_patterns(test_dist: &PatternDistribution, k: usize) -> Vec<Pattern> {
    test_dist
        .sorted_entries()
        .into_iter()
        .take(k)
        .map(|(p, _)| p)
        .collect()
}

/// Euclidean distance between pattern probability vectors over the `k` most
/// frequent test-set patterns. Probabilities are relative to each side's
/// whole corpus, not renormalized over the selected patterns.
pub fn pattern_distance(generated: &[String], test: &[String], k: usize) -> Result<f64, EvalError> {
    Ok(distance_report(generated, test, k)?.pattern_distance)
}

pub fn distance_report(
    generated: &[String],
    test: &[String],
    k: usize,
) -> Result<DistanceReport, EvalError> {
    if generated.is_empty() {
        return Err(EvalError::EmptyGenerated);
    }
    if test.is_empty() {
        return Err(EvalError::EmptyTest);
    }
    let gen_dist = distribution_of(generated)?;
    let test_dist = distribution_of(test)?;
    let top = top_test_patterns(&test_dist, k);

    let mut pattern_bins = Vec::with_capacity(top.len());
    let mut sq_sum = 0.0;
    for pattern in &top {
        let pg = gen_dist.probability(pattern);
        let pt = test_dist.probability(pattern);
        sq_sum += (pg - pt) * (pg - pt);
        pattern_bins.push((pattern.to_string(), pg, pt));
    }

    let gen_bins = length_histogram(generated);
    let test_bins = length_histogram(test);
    let length_bins = (4..=12)
        .map(|len| (len, gen_bins[len - 4], test_bins[len - 4]))
        .collect();

    Ok(DistanceReport {
        length_distance: length_distance(generated, test)?,
        pattern_distance: sq_sum.sqrt(),
        length_bins,
        pattern_bins,
    })
}

fn distribution_of(passwords: &[String]) -> Result<PatternDistribution, PatternError> {
    let mut dist = PatternDistribution::default();
    for pw in passwords {
        dist.add(Pattern::extract(pw)?, 1);
    }
    Ok(dist)
}

/// One row of the pattern-guided benchmark.
#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkRow {
    pub segments: usize,
    pub pattern: String,
    pub test_count: u64,
    pub generated: u64,
    pub hit_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    /// Segment-count category -> aggregate hit rate over its selected
    /// patterns.
    pub category_hit_rate: BTreeMap<usize, f64>,
}

/// Pattern-guided benchmark: categorize test patterns by segment count,
/// take the most frequent patterns per category, generate a fixed budget of
/// guesses per pattern with guided sampling, and report HR_P and HR_s.
pub fn pattern_guided_benchmark(
    model: &dyn NextTokenModel,
    test: &Corpus,
    patterns_per_category: usize,
    guesses_per_pattern: u64,
    seed: u64,
) -> Result<BenchmarkReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTest);
    }
    let vocab = Vocabulary::new();
    let test_dist = PatternDistribution::from_corpus(test)?;

    let mut by_category: HashMap<usize, Vec<(Pattern, u64)>> = HashMap::new();
    for (pattern, count) in test_dist.sorted_entries() {
        by_category
            .entry(pattern.segment_count())
            .or_default()
            .push((pattern, count));
    }

    let mut rows = Vec::new();
    let mut category_hit_rate = BTreeMap::new();
    for segments in 1..=MAX_SEGMENT_LEN {
        let Some(patterns) = by_category.get(&segments) else {
            continue;
        };
        let mut cat_hits = 0u64;
        let mut cat_total = 0u64;
        for (pattern, _) in patterns.iter().take(patterns_per_category) {
            let guesses = sample_guided(model, &vocab, pattern, guesses_per_pattern, seed, 1.0)?;
            let hr = hit_rate_by_pattern(&guesses, test, pattern)?
                .expect("pattern was drawn from the test distribution");
            let test_count: u64 = test
                .passwords()
                .iter()
                .collect::<HashSet<_>>()
                .iter()
                .filter(|pw| Pattern::extract(pw).map(|p| p == *pattern).unwrap_or(false))
                .count() as u64;
            cat_hits += (hr * test_count as f64).round() as u64;
            cat_total += test_count;
            rows.push(BenchmarkRow {
                segments,
                pattern: pattern.to_string(),
                test_count,
                generated: guesses_per_pattern,
                hit_rate: hr,
            });
        }
        if cat_total > 0 {
            category_hit_rate.insert(segments, cat_hits as f64 / cat_total as f64);
        }
    }
    Ok(BenchmarkReport {
        rows,
        category_hit_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{clean, CleanPolicy};
    use crate::model::train_ngram;

    fn corpus_of(items: &[&str]) -> Corpus {
        clean(items.iter().map(|s| s.to_string()), &CleanPolicy::default()).0
    }

    fn strings(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn hit_rate_identical_and_disjoint() {
        let test = corpus_of(&["abcd", "1234"]);
        let same = hit_rate(&strings(&["abcd", "1234"]), &test).unwrap();
        assert_eq!(same.hit_rate, 1.0);
        let none = hit_rate(&strings(&["zzzz"]), &test).unwrap();
        assert_eq!(none.hit_rate, 0.0);
        assert_eq!(none.hits, 0);
    }

    #[test]
    fn hit_rate_hand_intersection() {
        // generated {a,b,b,c}, test {b,c,d,e} -> 2/4. Four-letter stand-ins
        // keep the cleaning policy satisfied.
        let generated = strings(&["aaaa", "bbbb", "bbbb", "cccc"]);
        let test = corpus_of(&["bbbb", "cccc", "dddd", "eeee"]);
        let report = hit_rate(&generated, &test).unwrap();
        assert_eq!(report.hits, 2);
        assert_eq!(report.hit_rate, 0.5);
        assert_eq!(report.generated_unique, 3);
        assert_eq!(report.test_unique, 4);
    }

    #[test]
    fn duplicates_never_inflate_hits() {
        let test = corpus_of(&["abcd", "wxyz"]);
        let few = hit_rate(&strings(&["abcd"]), &test).unwrap();
        let many = hit_rate(&strings(&["abcd"; 50]), &test).unwrap();
        assert_eq!(few.hit_rate, many.hit_rate);
    }

    #[test]
    fn segment_breakdown() {
        // Single-segment test passwords, all hit.
        let test = corpus_of(&["abcd", "efgh"]);
        let report = hit_rate(&strings(&["abcd", "efgh"]), &test).unwrap();
        assert_eq!(report.by_segments, BTreeMap::from([(1, 1.0)]));

        // Mixed categories: one-segment hit 1/2, two-segment hit 0/1.
        let test = corpus_of(&["abcd", "efgh", "ab12"]);
        let by = hit_rate_by_segments(&strings(&["abcd"]), &test).unwrap();
        assert_eq!(by, BTreeMap::from([(1, 0.5), (2, 0.0)]));
    }

    #[test]
    fn category_hits_sum_to_total() {
        let test = corpus_of(&["abcd", "ab12", "a1b2", "1234", "pass!"]);
        let generated = strings(&["abcd", "a1b2", "1234", "none"]);
        let report = hit_rate(&generated, &test).unwrap();
        let cat_hits: f64 = report
            .by_segments
            .iter()
            .map(|(&s, &hr)| {
                let total = test
                    .passwords()
                    .iter()
                    .filter(|pw| Pattern::extract(pw).unwrap().segment_count() == s)
                    .count();
                hr * total as f64
            })
            .sum();
        assert!((cat_hits - report.hits as f64).abs() < 1e-9);
    }

    #[test]
    fn per_pattern_hit_rate() {
        let test = corpus_of(&["abcd", "ab12", "cd34"]);
        let pat = Pattern::parse("L2N2").unwrap();
        let hr = hit_rate_by_pattern(&strings(&["ab12"]), &test, &pat).unwrap();
        assert_eq!(hr, Some(0.5));
        let absent = Pattern::parse("S4").unwrap();
        assert_eq!(
            hit_rate_by_pattern(&strings(&["ab12"]), &test, &absent).unwrap(),
            None
        );
        let full = hit_rate_by_pattern(&strings(&["ab12", "cd34"]), &test, &pat).unwrap();
        assert_eq!(full, Some(1.0));
    }

    #[test]
    fn repeat_rate_examples() {
        assert_eq!(repeat_rate(&strings(&["aaaa", "bbbb", "cccc"])).unwrap(), 0.0);
        let ten = strings(&[
            "p1", "p2", "p3", "p4", "p5", "p6", "p7", "p1", "p2", "p3",
        ]);
        assert!((repeat_rate(&ten).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(repeat_rate(&strings(&["same"; 4])).unwrap(), 0.75);
        assert!(repeat_rate(&[]).is_err());
    }

    #[test]
    fn repeat_rate_of_dedup_is_zero() {
        let items = strings(&["x1", "x1", "y2", "y2", "z3"]);
        let deduped: Vec<String> = dedup(&items).into_iter().map(String::from).collect();
        assert_eq!(repeat_rate(&deduped).unwrap(), 0.0);
    }

    #[test]
    fn length_distance_examples() {
        let a = strings(&["abcd", "wxyz"]);
        assert_eq!(length_distance(&a, &a).unwrap(), 0.0);
        // All length 4 vs all length 5: vectors (1,0,...) vs (0,1,...).
        let b = strings(&["abcde", "vwxyz"]);
        assert!((length_distance(&a, &b).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        // Two-bin toy case: (0.5, 0.5) vs (1, 0) -> sqrt(0.5).
        let c = strings(&["abcd", "abcde"]);
        let d = strings(&["abcd", "wxyz"]);
        assert!((length_distance(&c, &d).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn pattern_distance_examples() {
        let a = strings(&["ab12", "cd34", "efgh"]);
        assert_eq!(pattern_distance(&a, &a, 150).unwrap(), 0.0);

        // Disjoint patterns: distance is the test-side norm.
        let generated = strings(&["!!!!"]);
        let test = strings(&["ab12", "ab12", "efgh"]);
        let expected = ((2.0f64 / 3.0).powi(2) + (1.0f64 / 3.0).powi(2)).sqrt();
        assert!((pattern_distance(&generated, &test, 150).unwrap() - expected).abs() < 1e-12);

        // Three-pattern toy case by hand: generated (1/2, 1/4, 1/4) vs test
        // (1/3, 1/3, 1/3) over {L4, L2N2, N4}.
        let generated = strings(&["abcd", "efgh", "ab12", "1234"]);
        let test = strings(&["abcd", "cd34", "5678"]);
        let expected = ((0.5f64 - 1.0 / 3.0).powi(2) * 1.0
            + (0.25f64 - 1.0 / 3.0).powi(2) * 2.0)
            .sqrt();
        assert!((pattern_distance(&generated, &test, 150).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn distances_symmetric_and_triangular() {
        let x = strings(&["abcd", "ab12"]);
        let y = strings(&["abcd", "1234"]);
        let z = strings(&["!!!!", "ab12"]);
        let d = |a: &Vec<String>, b: &Vec<String>| length_distance(a, b).unwrap();
        assert!((d(&x, &y) - d(&y, &x)).abs() < 1e-12);
        assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-12);
        // Pattern distance symmetry only holds when both sides share the
        // same reference pattern set; check it on equal-support corpora.
        let p = strings(&["abcd", "ab12", "ab12"]);
        let q = strings(&["abcd", "abcd", "ab12"]);
        let dp = pattern_distance(&p, &q, 150).unwrap();
        let dq = pattern_distance(&q, &p, 150).unwrap();
        assert!((dp - dq).abs() < 1e-12);
    }

    #[test]
    fn metrics_ignore_input_order() {
        let test = corpus_of(&["abcd", "ab12", "cd34"]);
        let fwd = strings(&["ab12", "zzzz", "cd34"]);
        let mut rev = fwd.clone();
        rev.reverse();
        assert_eq!(
            hit_rate(&fwd, &test).unwrap().hit_rate,
            hit_rate(&rev, &test).unwrap().hit_rate
        );
        assert_eq!(repeat_rate(&fwd).unwrap(), repeat_rate(&rev).unwrap());
        assert_eq!(
            length_distance(&fwd, test.passwords()).unwrap(),
            length_distance(&rev, test.passwords()).unwrap()
        );
    }

    #[test]
    fn benchmark_on_memorizing_model() {
        // High-order n-gram on a tiny corpus memorizes it; with train=test
        // the dominant pattern's hit rate should be near 1.
        let corpus = corpus_of(&["ab12", "cd34", "ef56", "gh78", "xy90"]);
        let model = train_ngram(&corpus, 8).unwrap();
        let report = pattern_guided_benchmark(&model, &corpus, 3, 2000, 0).unwrap();
        assert_eq!(report.rows.len(), 1);
        let row = &report.rows[0];
        assert_eq!(row.pattern, "L2N2");
        assert_eq!(row.test_count, 5);
        assert!(row.hit_rate > 0.9, "hit rate was {}", row.hit_rate);
        assert_eq!(report.category_hit_rate.len(), 1);
    }

    #[test]
    fn empty_inputs_rejected() {
        let empty = corpus_of(&[]);
        assert!(hit_rate(&strings(&["abcd"]), &empty).is_err());
        assert!(length_distance(&[], &strings(&["abcd"])).is_err());
        assert!(pattern_distance(&strings(&["abcd"]), &[], 150).is_err());
    }
}
