//! Interpolated back-off n-gram backend.
//!
//! Counts are accumulated over encoded rules (`<BOS>` through `<EOS>`,
//! padding excluded). The conditional probability interpolates maximum-
//! likelihood estimates of increasing order; each level spreads a total
//! smoothing mass of `delta` uniformly over the vocabulary:
//!
//!   P_1(t)      = (c_1(t) + d/V) / (C_1 + d)
//!   P_k(t|ctx)  = w * (c_k(ctx,t) + d/V) / (C_k(ctx) + d) + (1-w) * P_{k-1}
//!
//! with w = C_k(ctx) / (C_k(ctx) + d). Every level is a proper distribution,
//! so the blend is one too, and every token keeps strictly positive mass.

use super::{ModelError, NextTokenModel};
use crate::corpus::Corpus;
use crate::pcfg::Pattern;
use crate::tokenizer::{TokenId, Vocabulary, DEFAULT_WINDOW, VOCAB_SIZE};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{Read, Write};

pub const DEFAULT_ORDER: usize = 5;
pub const DEFAULT_DELTA: f64 = 0.01;

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    counts: HashMap<TokenId, u64>,
}

/// Hyperparameters stored in the checkpoint header.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NGramHyperparameters {
    pub order: usize,
    pub delta: f64,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    delta: f64,
    window: usize,
    /// tables[k-1] maps a context of length k-1 to next-token counts.
    tables: Vec<HashMap<Vec<TokenId>, ContextCounts>>,
}

impl NGramModel {
    pub fn new(order: usize, delta: f64, window: usize) -> Result<NGramModel, ModelError> {
        if order < 1 {
            return Err(ModelError::InvalidOrder);
        }
        if !(delta > 0.0) {
            return Err(ModelError::InvalidConfig(
                "smoothing constant must be positive".into(),
            ));
        }
        Ok(NGramModel {
            order,
            delta,
            window,
            tables: vec![HashMap::new(); order],
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn hyperparameters(&self) -> NGramHyperparameters {
        NGramHyperparameters {
            order: self.order,
            delta: self.delta,
            window: self.window,
        }
    }

    /// Accumulate counts from one unpadded encoded rule.
    pub fn observe_sequence(&mut self, seq: &[TokenId]) {
        for target_pos in 1..seq.len() {
            let target = seq[target_pos];
            for k in 1..=self.order {
                if target_pos < k - 1 {
                    break;
                }
                let context = seq[target_pos - (k - 1)..target_pos].to_vec();
                let entry = self.tables[k - 1].entry(context).or_default();
                entry.total += 1;
                *entry.counts.entry(target).or_insert(0) += 1;
            }
        }
    }

    /// Add another model's counts. Equivalent to training on the
    /// concatenated data; merging is associative and commutative.
    pub fn merge(&mut self, other: &NGramModel) {
        assert_eq!(self.order, other.order);
        for (table, other_table) in self.tables.iter_mut().zip(other.tables.iter()) {
            for (ctx, counts) in other_table {
                let entry = table.entry(ctx.clone()).or_default();
                entry.total += counts.total;
                for (&t, &c) in &counts.counts {
                    *entry.counts.entry(t).or_insert(0) += c;
                }
            }
        }
    }

    fn count(&self, context: &[TokenId], token: TokenId) -> (u64, u64) {
        match self.tables[context.len()].get(context) {
            Some(entry) => (
                entry.counts.get(&token).copied().unwrap_or(0),
                entry.total,
            ),
            None => (0, 0),
        }
    }

    /// Interpolated probability of a single token after `context`.
    pub fn probability(&self, context: &[TokenId], token: TokenId) -> f64 {
        let v = VOCAB_SIZE as f64;
        let d = self.delta;
        let (c1, n1) = self.count(&[], token);
        let mut p = (c1 as f64 + d / v) / (n1 as f64 + d);
        let max_level = self.order.min(context.len() + 1);
        for k in 2..=max_level {
            let ctx = &context[context.len() - (k - 1)..];
            let (c, total) = self.count(ctx, token);
            let level = (c as f64 + d / v) / (total as f64 + d);
            let weight = total as f64 / (total as f64 + d);
            p = weight * level + (1.0 - weight) * p;
        }
        p
    }

    pub(super) fn write_body<W: Write>(&self, writer: &mut W) -> std::io::Result<()> {
        for (level, table) in self.tables.iter().enumerate() {
            // Canonical order so identical models serialize identically.
            let mut contexts: Vec<&Vec<TokenId>> = table.keys().collect();
            contexts.sort();
            writer.write_u64::<LittleEndian>(contexts.len() as u64)?;
            for ctx in contexts {
                debug_assert_eq!(ctx.len(), level);
                for &id in ctx {
                    writer.write_u16::<LittleEndian>(id)?;
                }
                let entry = &table[ctx];
                let mut tokens: Vec<(&TokenId, &u64)> = entry.counts.iter().collect();
                tokens.sort();
                writer.write_u32::<LittleEndian>(tokens.len() as u32)?;
                for (&t, &c) in tokens {
                    writer.write_u16::<LittleEndian>(t)?;
                    writer.write_u64::<LittleEndian>(c)?;
                }
            }
        }
        Ok(())
    }

    pub(super) fn read_body<R: Read>(
        hyper: NGramHyperparameters,
        reader: &mut R,
    ) -> Result<NGramModel, ModelError> {
        let mut model = NGramModel::new(hyper.order, hyper.delta, hyper.window)?;
        for level in 0..hyper.order {
            let n_contexts = reader.read_u64::<LittleEndian>()?;
            for _ in 0..n_contexts {
                let mut ctx = Vec::with_capacity(level);
                for _ in 0..level {
                    ctx.push(reader.read_u16::<LittleEndian>()?);
                }
                let n_tokens = reader.read_u32::<LittleEndian>()?;
                let mut entry = ContextCounts::default();
                for _ in 0..n_tokens {
                    let t = reader.read_u16::<LittleEndian>()?;
                    let c = reader.read_u64::<LittleEndian>()?;
                    entry.total += c;
                    entry.counts.insert(t, c);
                }
                model.tables[level].insert(ctx, entry);
            }
        }
        Ok(model)
    }
}

impl NextTokenModel for NGramModel {
    fn window(&self) -> usize {
        self.window
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<Vec<f64>, ModelError> {
        if context.is_empty() {
            return Err(ModelError::EmptyContext);
        }
        if context.len() > self.window {
            return Err(ModelError::ContextTooLong {
                len: context.len(),
                window: self.window,
            });
        }
        Ok((0..VOCAB_SIZE as TokenId)
            .map(|t| self.probability(context, t))
            .collect())
    }
}

/// Train an n-gram model on a corpus with default smoothing and window.
pub fn train_ngram(corpus: &Corpus, order: usize) -> Result<NGramModel, ModelError> {
    train_ngram_with(corpus, order, DEFAULT_DELTA, DEFAULT_WINDOW)
}

pub fn train_ngram_with(
    corpus: &Corpus,
    order: usize,
    delta: f64,
    window: usize,
) -> Result<NGramModel, ModelError> {
    if corpus.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let vocab = Vocabulary::new();
    let mut model = NGramModel::new(order, delta, window)?;
    for pw in corpus.passwords() {
        let pattern = Pattern::extract(pw)
            .map_err(|e| ModelError::InvalidRequest(format!("uncleaned password {pw:?}: {e}")))?;
        let mut seq = vocab.encode_prompt(&pattern);
        for ch in pw.chars() {
            seq.push(Vocabulary::char_token_id(ch).unwrap());
        }
        seq.push(crate::tokenizer::EOS);
        if seq.len() > window {
            return Err(ModelError::ContextTooLong {
                len: seq.len(),
                window,
            });
        }
        model.observe_sequence(&seq);
    }
    Ok(model)
}
