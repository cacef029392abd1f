//! Password generation: free sampling, pattern-guided masked sampling, and
//! the divide-and-conquer scheduler.
//!
//! The scheduler apportions the guess budget over patterns, then recursively
//! over next-token prefixes, so that any two leaf tasks can only emit
//! disjoint sets of passwords. Every leaf's RNG is derived from the run seed
//! and the leaf's token prefix, never from scheduling order, so results are
//! identical across worker counts.

use crate::apportion::{largest_remainder, largest_remainder_capped};
use crate::model::{ModelError, NextTokenModel};
use crate::pcfg::{Pattern, PatternDistribution, PatternError};
use crate::tokenizer::{TokenId, TokenizerError, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use thiserror::Error;

/// Chunk size for splitting a large sample request across workers. Fixed so
/// the chunking (and therefore the output) is independent of the worker
/// count.
const SAMPLE_CHUNK: u64 = 1024;

/// Sliding window over which free generation tracks its malformed rate.
const MALFORMED_WINDOW: usize = 512;

#[derive(Debug, Error)]
pub enum GenError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error(
        "model unusable for free generation: {malformed} of the last {window} samples were malformed"
    )]
    ModelUnusable { malformed: usize, window: usize },
}

/// Generation parameters shared by all modes.
#[derive(Debug, Clone)]
pub struct GenConfig {
    /// Total number of guesses N.
    pub total: u64,
    /// Task-division threshold T.
    pub threshold: u64,
    pub seed: u64,
    pub temperature: f64,
    /// Worker threads; 0 means use all available parallelism.
    pub workers: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            total: 1,
            threshold: 4000,
            seed: 0,
            temperature: 1.0,
            workers: 0,
        }
    }
}

impl GenConfig {
    fn validate(&self) -> Result<(), GenError> {
        if self.total < 1 {
            return Err(GenError::InvalidConfig("total guesses must be >= 1".into()));
        }
        if self.threshold < 1 {
            return Err(GenError::InvalidConfig(
                "division threshold must be >= 1".into(),
            ));
        }
        if !(self.temperature > 0.0) {
            return Err(GenError::InvalidConfig("temperature must be > 0".into()));
        }
        Ok(())
    }
}

/// A unit of scheduled work: generate `count` passwords conforming to
/// `pattern` that extend `prefix` (`<BOS>` pattern `<SEP>` plus zero or more
/// character tokens).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub pattern: Pattern,
    pub prefix: Vec<TokenId>,
    pub count: u64,
}

/// Scheduler bookkeeping produced while planning tasks.
#[derive(Debug, Clone, Default, Serialize)]
pub struct PlanStats {
    /// Budget per pattern after capping, in canonical distribution order.
    pub pattern_budgets: Vec<(String, u64)>,
    /// Guesses removed because a pattern budget exceeded its space size.
    pub cap_reduction: u64,
    pub tasks_expanded: u64,
    /// (parent count, sum of child counts) for every expanded node.
    pub expansion_sums: Vec<(u64, u64)>,
}

/// Final report for a divide-and-conquer run.
#[derive(Debug, Clone, Serialize)]
pub struct DcgenReport {
    pub total_requested: u64,
    pub total_generated: u64,
    pub cap_reduction: u64,
    pub tasks_expanded: u64,
    pub leaves_executed: u64,
    pub duplicates: u64,
    pub malformed: u64,
    pub per_pattern: Vec<(String, u64)>,
}

/// Report for free generation.
#[derive(Debug, Clone, Serialize)]
pub struct FreeReport {
    pub requested: u64,
    pub malformed: u64,
}

fn task_rng(seed: u64, prefix: &[TokenId]) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for &id in prefix {
        hasher.update(id.to_le_bytes());
    }
    ChaCha20Rng::from_seed(hasher.finalize().into())
}

/// Sample one token id from the masked, temperature-adjusted distribution
/// over `block`. Falls back to uniform over the block if the model assigns
/// it zero mass.
fn sample_masked(
    dist: &[f64],
    block: std::ops::RangeInclusive<TokenId>,
    temperature: f64,
    rng: &mut ChaCha20Rng,
) -> TokenId {
    let start = *block.start() as usize;
    let end = *block.end() as usize;
    let mut weights: Vec<f64> = dist[start..=end]
        .iter()
        .map(|&p| if p > 0.0 { p.powf(1.0 / temperature) } else { 0.0 })
        .collect();
    let sum: f64 = weights.iter().sum();
    if !(sum > 0.0) {
        eprintln!("warning: masked distribution had zero mass; falling back to uniform");
        weights.iter_mut().for_each(|w| *w = 1.0);
    }
    let sum: f64 = weights.iter().sum();
    let mut draw = rng.gen::<f64>() * sum;
    for (i, &w) in weights.iter().enumerate() {
        draw -= w;
        if draw <= 0.0 {
            return (start + i) as TokenId;
        }
    }
    end as TokenId
}

/// Sample `count` completions of a task sequentially with one RNG.
fn complete_task(
    model: &dyn NextTokenModel,
    vocab: &Vocabulary,
    task: &Task,
    rng: &mut ChaCha20Rng,
    temperature: f64,
) -> Result<Vec<String>, GenError> {
    let prompt_len = task.pattern.segment_count() + 2;
    let fixed: String = task.prefix[prompt_len..]
        .iter()
        .map(|&id| vocab.char_of(id).expect("task prefix holds character tokens"))
        .collect();
    let total_len = task.pattern.total_len();

    let mut out = Vec::with_capacity(task.count as usize);
    for _ in 0..task.count {
        let mut ctx = task.prefix.clone();
        let mut pw = fixed.clone();
        for pos in fixed.chars().count()..total_len {
            let dist = model.next_distribution(&ctx)?;
            let class = task.pattern.class_at(pos)?;
            let id = sample_masked(&dist, Vocabulary::char_block(class), temperature, rng);
            ctx.push(id);
            pw.push(vocab.char_of(id).unwrap());
        }
        // End of sequence is forced structurally once the pattern's length
        // is reached.
        out.push(pw);
    }
    Ok(out)
}

/// Run a single task with its deterministic per-task RNG.
pub fn run_task(
    model: &dyn NextTokenModel,
    vocab: &Vocabulary,
    task: &Task,
    seed: u64,
    temperature: f64,
) -> Result<Vec<String>, GenError> {
    let mut rng = task_rng(seed, &task.prefix);
    complete_task(model, vocab, task, &mut rng, temperature)
}

/// Pattern-guided sampling: `n` passwords conforming to `pattern`, sampled
/// autoregressively with the model distribution masked to the class block at
/// every position. Duplicates are permitted.
pub fn sample_guided(
    model: &dyn NextTokenModel,
    vocab: &Vocabulary,
    pattern: &Pattern,
    n: u64,
    seed: u64,
    temperature: f64,
) -> Result<Vec<String>, GenError> {
    if n < 1 {
        return Err(GenError::InvalidConfig("sample count must be >= 1".into()));
    }
    let prompt = vocab.encode_prompt(pattern);
    // Split into fixed-size chunks with prefix+chunk-derived RNGs so the
    // result is the same no matter how many workers run them.
    let chunks: Vec<(u64, u64)> = (0..n.div_ceil(SAMPLE_CHUNK))
        .map(|i| (i, SAMPLE_CHUNK.min(n - i * SAMPLE_CHUNK)))
        .collect();
    let results: Vec<Result<Vec<String>, GenError>> = chunks
        .par_iter()
        .map(|&(chunk_idx, count)| {
            let mut chunk_prefix = prompt.clone();
            chunk_prefix.push(chunk_idx as TokenId);
            let mut rng = task_rng(seed, &chunk_prefix);
            let task = Task {
                pattern: pattern.clone(),
                prefix: prompt.clone(),
                count,
            };
            complete_task(model, vocab, &task, &mut rng, temperature)
        })
        .collect();
    let mut out = Vec::with_capacity(n as usize);
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Free generation: sample whole rules from `<BOS>` alone, discard malformed
/// outputs, and resample until `n` valid passwords exist. Aborts if more
/// than half of a recent window of attempts were malformed.
pub fn sample_free(
    model: &dyn NextTokenModel,
    vocab: &Vocabulary,
    n: u64,
    seed: u64,
    temperature: f64,
) -> Result<(Vec<String>, FreeReport), GenError> {
    if n < 1 {
        return Err(GenError::InvalidConfig("sample count must be >= 1".into()));
    }
    let mut rng = task_rng(seed, &[crate::tokenizer::BOS]);
    let mut out = Vec::with_capacity(n as usize);
    let mut malformed = 0u64;
    let mut recent = std::collections::VecDeque::with_capacity(MALFORMED_WINDOW);
    let mut recent_malformed = 0usize;

    while (out.len() as u64) < n {
        let mut seq = vec![crate::tokenizer::BOS];
        let mut saw_eos = false;
        while seq.len() < model.window() {
            let dist = model.next_distribution(&seq)?;
            let id = sample_unmasked(&dist, temperature, &mut rng);
            if id == crate::tokenizer::EOS {
                seq.push(id);
                saw_eos = true;
                break;
            }
            seq.push(id);
        }
        let valid = saw_eos && vocab.decode(&seq).is_ok();
        if valid {
            let (_, pw) = vocab.decode(&seq).unwrap();
            out.push(pw);
        } else {
            malformed += 1;
        }

        if recent.len() == MALFORMED_WINDOW {
            if recent.pop_front().unwrap() {
                recent_malformed -= 1;
            }
        }
        recent.push_back(!valid);
        if !valid {
            recent_malformed += 1;
        }
        if recent.len() == MALFORMED_WINDOW && recent_malformed * 2 > MALFORMED_WINDOW {
            return Err(GenError::ModelUnusable {
                malformed: recent_malformed,
                window: MALFORMED_WINDOW,
            });
        }
    }
    Ok((
        out,
        FreeReport {
            requested: n,
            malformed,
        },
    ))
}

fn sample_unmasked(dist: &[f64], temperature: f64, rng: &mut ChaCha20Rng) -> TokenId {
    let weights: Vec<f64> = dist
        .iter()
        .map(|&p| if p > 0.0 { p.powf(1.0 / temperature) } else { 0.0 })
        .collect();
    let sum: f64 = weights.iter().sum();
    let mut draw = rng.gen::<f64>() * sum;
    for (i, &w) in weights.iter().enumerate() {
        draw -= w;
        if draw <= 0.0 {
            return i as TokenId;
        }
    }
    (dist.len() - 1) as TokenId
}

fn saturating_u64(x: u128) -> u64 {
    x.min(u64::MAX as u128) as u64
}

/// Plan the divide-and-conquer task tree without sampling anything.
///
/// Budgets per pattern are the largest-remainder apportionment of the total
/// by pattern probability, capped at the pattern's space size. A task whose
/// count exceeds the threshold is expanded: the model distribution at its
/// prefix is masked to the class block of the next position and the count is
/// apportioned over the candidate tokens (capped at each child's remaining
/// suffix space, so child counts always sum to the parent count). Children
/// apportioned zero are dropped.
pub fn plan_tasks(
    model: &dyn NextTokenModel,
    vocab: &Vocabulary,
    dist: &PatternDistribution,
    cfg: &GenConfig,
) -> Result<(Vec<Task>, PlanStats), GenError> {
    cfg.validate()?;
    if dist.is_empty() {
        return Err(GenError::InvalidConfig("empty pattern distribution".into()));
    }

    let entries = dist.sorted_entries();
    let weights: Vec<f64> = entries.iter().map(|(_, c)| *c as f64).collect();
    let raw_budgets = largest_remainder(cfg.total, &weights);

    let mut stats = PlanStats::default();
    let mut tasks = Vec::new();
    for ((pattern, _), raw) in entries.iter().zip(raw_budgets.iter()) {
        let cap = saturating_u64(pattern.space_size());
        let budget = (*raw).min(cap);
        stats.cap_reduction += raw - budget;
        stats.pattern_budgets.push((pattern.to_string(), budget));
        if budget == 0 {
            continue;
        }

        let prompt = vocab.encode_prompt(pattern);
        let mut stack: Vec<(Vec<TokenId>, u64)> = vec![(Vec::new(), budget)];
        while let Some((chars, n)) = stack.pop() {
            if n <= cfg.threshold {
                let mut prefix = prompt.clone();
                prefix.extend_from_slice(&chars);
                tasks.push(Task {
                    pattern: pattern.clone(),
                    prefix,
                    count: n,
                });
                continue;
            }
            stats.tasks_expanded += 1;
            let mut ctx = prompt.clone();
            ctx.extend_from_slice(&chars);
            let model_dist = model.next_distribution(&ctx)?;
            let class = pattern.class_at(chars.len())?;
            let block = Vocabulary::char_block(class);
            let start = *block.start() as usize;
            let end = *block.end() as usize;
            let mut child_weights: Vec<f64> = model_dist[start..=end].to_vec();
            if !(child_weights.iter().sum::<f64>() > 0.0) {
                eprintln!("warning: zero-mass expansion; using uniform child weights");
                child_weights.iter_mut().for_each(|w| *w = 1.0);
            }
            let child_cap = saturating_u64(pattern.suffix_space(chars.len() + 1));
            let caps = vec![child_cap; child_weights.len()];
            let child_counts = largest_remainder_capped(n, &child_weights, &caps);
            stats
                .expansion_sums
                .push((n, child_counts.iter().sum::<u64>()));
            // Push in reverse so lower token ids are expanded first.
            for (offset, &count) in child_counts.iter().enumerate().rev() {
                if count == 0 {
                    continue;
                }
                let mut child = chars.clone();
                child.push((start + offset) as TokenId);
                stack.push((child, count));
            }
        }
    }
    Ok((tasks, stats))
}

/// Divide-and-conquer generation over a pattern distribution.
pub fn dcgen(
    model: &dyn NextTokenModel,
    vocab: &Vocabulary,
    dist: &PatternDistribution,
    cfg: &GenConfig,
) -> Result<(Vec<String>, DcgenReport), GenError> {
    let (tasks, stats) = plan_tasks(model, vocab, dist, cfg)?;

    let run_all = || -> Result<Vec<Vec<String>>, GenError> {
        tasks
            .par_iter()
            .map(|task| run_task(model, vocab, task, cfg.seed, cfg.temperature))
            .collect()
    };
    let leaf_outputs = if cfg.workers == 0 {
        run_all()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| GenError::InvalidConfig(format!("worker pool: {e}")))?;
        pool.install(run_all)?
    };

    let mut per_pattern: HashMap<String, u64> = HashMap::new();
    let mut passwords = Vec::new();
    for (task, output) in tasks.iter().zip(leaf_outputs) {
        *per_pattern.entry(task.pattern.to_string()).or_insert(0) += output.len() as u64;
        passwords.extend(output);
    }
    let unique: std::collections::HashSet<&String> = passwords.iter().collect();

    let mut per_pattern: Vec<(String, u64)> = stats
        .pattern_budgets
        .iter()
        .map(|(p, _)| (p.clone(), per_pattern.get(p).copied().unwrap_or(0)))
        .collect();
    per_pattern.retain(|(_, n)| *n > 0);

    let report = DcgenReport {
        total_requested: cfg.total,
        total_generated: passwords.len() as u64,
        cap_reduction: stats.cap_reduction,
        tasks_expanded: stats.tasks_expanded,
        leaves_executed: tasks.len() as u64,
        duplicates: passwords.len() as u64 - unique.len() as u64,
        malformed: 0,
        per_pattern,
    };
    Ok((passwords, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{clean, CleanPolicy};
    use crate::model::{train_ngram, NGramModel};
    use crate::tokenizer::DEFAULT_WINDOW;
    use std::collections::HashSet;

    fn uniform_model() -> NGramModel {
        NGramModel::new(2, 0.01, DEFAULT_WINDOW).unwrap()
    }

    fn pat(text: &str) -> Pattern {
        Pattern::parse(text).unwrap()
    }

    #[test]
    fn guided_outputs_conform() {
        let vocab = Vocabulary::new();
        let model = uniform_model();
        let out = sample_guided(&model, &vocab, &pat("L1N1"), 5, 3, 1.0).unwrap();
        assert_eq!(out.len(), 5);
        for pw in &out {
            assert_eq!(Pattern::extract(pw).unwrap(), pat("L1N1"));
        }
    }

    #[test]
    fn guided_uniform_digit_frequencies() {
        // Untrained model => uniform over the digit block; each digit should
        // appear with frequency 1/10 within 3 sigma.
        let vocab = Vocabulary::new();
        let model = uniform_model();
        let n = 20_000u64;
        let out = sample_guided(&model, &vocab, &pat("N1"), n, 11, 1.0).unwrap();
        let mut counts = [0u64; 10];
        for pw in &out {
            counts[pw.chars().next().unwrap() as usize - '0' as usize] += 1;
        }
        let expected = n as f64 / 10.0;
        let sigma = (n as f64 * 0.1 * 0.9).sqrt();
        for &c in &counts {
            assert!(
                (c as f64 - expected).abs() < 3.0 * sigma,
                "digit count {c} vs expected {expected}"
            );
        }
    }

    #[test]
    fn guided_is_deterministic() {
        let vocab = Vocabulary::new();
        let model = uniform_model();
        let a = sample_guided(&model, &vocab, &pat("L2N2"), 500, 9, 1.0).unwrap();
        let b = sample_guided(&model, &vocab, &pat("L2N2"), 500, 9, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn free_sampling_replays_trained_rule() {
        let corpus = clean(["1234".to_string()], &CleanPolicy::default()).0;
        let model = train_ngram(&corpus, 5).unwrap();
        let vocab = Vocabulary::new();
        let (out, report) = sample_free(&model, &vocab, 50, 1, 1.0).unwrap();
        assert_eq!(out.len(), 50);
        let hits = out.iter().filter(|pw| *pw == "1234").count();
        assert!(hits > 25, "expected the trained password to dominate, got {hits}");
        let (again, _) = sample_free(&model, &vocab, 50, 1, 1.0).unwrap();
        assert_eq!(out, again);
        assert!(report.malformed < 200);
        for pw in &out {
            assert!(Pattern::extract(pw).is_ok());
        }
    }

    #[test]
    fn free_sampling_aborts_on_unusable_model() {
        // An untrained model emits essentially random token soup; the
        // malformed-rate guard must trip rather than loop forever.
        let vocab = Vocabulary::new();
        let model = uniform_model();
        assert!(matches!(
            sample_free(&model, &vocab, 10_000, 0, 1.0),
            Err(GenError::ModelUnusable { .. })
        ));
    }

    fn toy_distribution() -> PatternDistribution {
        let mut dist = PatternDistribution::default();
        dist.add(pat("N2"), 3);
        dist.add(pat("L1N1"), 1);
        dist
    }

    #[test]
    fn dcgen_conserves_and_conforms() {
        let vocab = Vocabulary::new();
        let model = uniform_model();
        let cfg = GenConfig {
            total: 400,
            threshold: 10,
            seed: 5,
            ..GenConfig::default()
        };
        let (out, report) = dcgen(&model, &vocab, &toy_distribution(), &cfg).unwrap();
        // N2 budget 300 capped to 100; L1N1 budget 100 fits its 520-space.
        assert_eq!(report.cap_reduction, 200);
        assert_eq!(report.total_generated, 200);
        assert_eq!(out.len(), 200);
        assert_eq!(report.malformed, 0);
        for (parent, children) in
            plan_tasks(&model, &vocab, &toy_distribution(), &cfg).unwrap().1.expansion_sums
        {
            assert_eq!(parent, children);
        }
        let n2 = out.iter().filter(|pw| Pattern::extract(pw).unwrap() == pat("N2")).count();
        let l1n1 = out.iter().filter(|pw| Pattern::extract(pw).unwrap() == pat("L1N1")).count();
        assert_eq!((n2, l1n1), (100, 100));
    }

    #[test]
    fn dcgen_budget_capping_n3_example() {
        // A pattern N3 apportioned 5000 guesses is capped to its space of
        // 1000.
        let vocab = Vocabulary::new();
        let model = uniform_model();
        let mut dist = PatternDistribution::default();
        dist.add(pat("N3"), 1);
        let cfg = GenConfig {
            total: 5000,
            threshold: 4000,
            seed: 0,
            ..GenConfig::default()
        };
        let (_, stats) = plan_tasks(&model, &vocab, &dist, &cfg).unwrap();
        assert_eq!(stats.pattern_budgets, vec![("N3".to_string(), 1000)]);
        assert_eq!(stats.cap_reduction, 4000);
    }

    #[test]
    fn dcgen_expansion_respects_class_width() {
        // Expanding under a digit position yields at most 10 children.
        let vocab = Vocabulary::new();
        let model = uniform_model();
        let mut dist = PatternDistribution::default();
        dist.add(pat("N4"), 1);
        let cfg = GenConfig {
            total: 2000,
            threshold: 100,
            seed: 0,
            ..GenConfig::default()
        };
        let (tasks, stats) = plan_tasks(&model, &vocab, &dist, &cfg).unwrap();
        assert!(stats.tasks_expanded >= 1);
        // Root expands into <= 10 children; all tasks stay within budget.
        assert!(tasks.len() <= 10 * 10);
        let total: u64 = tasks.iter().map(|t| t.count).sum();
        assert_eq!(total, 2000);
    }

    #[test]
    fn dcgen_cross_leaf_disjointness() {
        let vocab = Vocabulary::new();
        let model = uniform_model();
        let mut dist = PatternDistribution::default();
        dist.add(pat("N2"), 2);
        dist.add(pat("L1N1"), 1);
        let cfg = GenConfig {
            total: 90,
            threshold: 5,
            seed: 21,
            ..GenConfig::default()
        };
        let (tasks, _) = plan_tasks(&model, &vocab, &dist, &cfg).unwrap();
        assert!(tasks.len() > 2);
        let mut seen: HashSet<String> = HashSet::new();
        for task in &tasks {
            let out = run_task(&model, &vocab, task, cfg.seed, 1.0).unwrap();
            let leaf_set: HashSet<String> = out.into_iter().collect();
            for pw in &leaf_set {
                assert!(seen.insert(pw.clone()), "password {pw} crossed leaves");
            }
        }
    }

    #[test]
    fn dcgen_identical_across_worker_counts() {
        let vocab = Vocabulary::new();
        let model = uniform_model();
        let dist = toy_distribution();
        let outputs: Vec<Vec<String>> = [1usize, 2, 8]
            .iter()
            .map(|&workers| {
                let cfg = GenConfig {
                    total: 300,
                    threshold: 8,
                    seed: 77,
                    workers,
                    ..GenConfig::default()
                };
                dcgen(&model, &vocab, &dist, &cfg).unwrap().0
            })
            .collect();
        assert_eq!(outputs[0], outputs[1]);
        assert_eq!(outputs[0], outputs[2]);
    }

    #[test]
    fn invalid_configs_rejected() {
        let vocab = Vocabulary::new();
        let model = uniform_model();
        let dist = toy_distribution();
        let bad = GenConfig {
            threshold: 0,
            ..GenConfig::default()
        };
        assert!(matches!(
            dcgen(&model, &vocab, &dist, &bad),
            Err(GenError::InvalidConfig(_))
        ));
        assert!(sample_guided(&model, &vocab, &pat("N1"), 0, 0, 1.0).is_err());
    }
}
