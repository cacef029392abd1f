//! Conditional next-token models behind a uniform interface.
//!
//! Two backends implement [`NextTokenModel`]: a deterministic interpolated
//! n-gram (reference backend, exact and fast to train) and a small
//! decoder-only transformer trained from scratch.

mod ngram;
mod transformer;

pub use ngram::{train_ngram, train_ngram_with, NGramModel, DEFAULT_DELTA, DEFAULT_ORDER};
pub use transformer::{
    encode_rules, gradient_check, train_transformer, train_transformer_on_sequences, TrainConfig,
    TransformerConfig, TransformerModel,
};

use crate::tokenizer::TokenId;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("context must be non-empty")]
    EmptyContext,
    #[error("context length {len} exceeds window {window}")]
    ContextTooLong { len: usize, window: usize },
    #[error("cannot train on an empty corpus")]
    EmptyCorpus,
    #[error("n-gram order must be at least 1")]
    InvalidOrder,
    #[error("training loss became non-finite at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tokenizer(#[from] crate::tokenizer::TokenizerError),
}

/// The conditional distribution over the 135-token vocabulary given a
/// context that starts with `<BOS>`.
pub trait NextTokenModel: Send + Sync {
    /// Maximum context length the model accepts.
    fn window(&self) -> usize;

    /// Probability vector over the vocabulary; non-negative, sums to 1
    /// within 1e-6, deterministic given (model state, context).
    fn next_distribution(&self, context: &[TokenId]) -> Result<Vec<f64>, ModelError>;
}

/// Checkpoint magic; the trailing byte is the format version.
const CHECKPOINT_MAGIC: &[u8; 8] = b"PGMODEL\x01";
const BACKEND_NGRAM: u8 = 1;
const BACKEND_TRANSFORMER: u8 = 2;

/// A loaded model of either backend.
pub enum AnyModel {
    NGram(NGramModel),
    Transformer(TransformerModel),
}

impl AnyModel {
    pub fn backend_name(&self) -> &'static str {
        match self {
            AnyModel::NGram(_) => "ngram",
            AnyModel::Transformer(_) => "transformer",
        }
    }

    pub fn as_next_token_model(&self) -> &dyn NextTokenModel {
        match self {
            AnyModel::NGram(m) => m,
            AnyModel::Transformer(m) => m,
        }
    }
}

impl NextTokenModel for AnyModel {
    fn window(&self) -> usize {
        self.as_next_token_model().window()
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<Vec<f64>, ModelError> {
        self.as_next_token_model().next_distribution(context)
    }
}

/// Serialize a model to the versioned checkpoint format:
/// magic+version, backend discriminator, JSON hyperparameter header, then
/// the backend-specific binary body.
pub fn save_model(model: &AnyModel, path: &Path) -> Result<(), ModelError> {
    let file = std::fs::File::create(path)?;
    let mut writer = BufWriter::new(file);
    write_model(model, &mut writer)?;
    writer.flush()?;
    Ok(())
}

pub fn write_model<W: Write>(model: &AnyModel, writer: &mut W) -> Result<(), ModelError> {
    writer.write_all(CHECKPOINT_MAGIC)?;
    match model {
        AnyModel::NGram(m) => {
            writer.write_u8(BACKEND_NGRAM)?;
            let header = serde_json::to_vec(&m.hyperparameters()).unwrap();
            writer.write_u32::<LittleEndian>(header.len() as u32)?;
            writer.write_all(&header)?;
            m.write_body(writer)?;
        }
        AnyModel::Transformer(m) => {
            writer.write_u8(BACKEND_TRANSFORMER)?;
            let header = serde_json::to_vec(m.config()).unwrap();
            writer.write_u32::<LittleEndian>(header.len() as u32)?;
            writer.write_all(&header)?;
            m.write_body(writer)?;
        }
    }
    Ok(())
}

pub fn load_model(path: &Path) -> Result<AnyModel, ModelError> {
    let file = std::fs::File::open(path)?;
    let mut reader = BufReader::new(file);
    read_model(&mut reader)
}

pub fn read_model<R: Read>(reader: &mut R) -> Result<AnyModel, ModelError> {
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic)?;
    if magic[..7] != CHECKPOINT_MAGIC[..7] {
        return Err(ModelError::Checkpoint("not a model checkpoint".into()));
    }
    if magic[7] != CHECKPOINT_MAGIC[7] {
        return Err(ModelError::Checkpoint(format!(
            "unsupported checkpoint version {}",
            magic[7]
        )));
    }
    let backend = reader.read_u8()?;
    let header_len = reader.read_u32::<LittleEndian>()? as usize;
    let mut header = vec![0u8; header_len];
    reader.read_exact(&mut header)?;
    match backend {
        BACKEND_NGRAM => {
            let hyper = serde_json::from_slice(&header)
                .map_err(|e| ModelError::Checkpoint(format!("bad n-gram header: {e}")))?;
            Ok(AnyModel::NGram(NGramModel::read_body(hyper, reader)?))
        }
        BACKEND_TRANSFORMER => {
            let cfg = serde_json::from_slice(&header)
                .map_err(|e| ModelError::Checkpoint(format!("bad transformer header: {e}")))?;
            Ok(AnyModel::Transformer(TransformerModel::read_body(
                cfg, reader,
            )?))
        }
        other => Err(ModelError::Checkpoint(format!("unknown backend {other}"))),
    }
}

/// Human-readable checkpoint header summary, without loading the body.
pub fn describe_checkpoint(path: &Path) -> Result<String, ModelError> {
    let file = std::fs::File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic)?;
    if magic[..7] != CHECKPOINT_MAGIC[..7] {
        return Err(ModelError::Checkpoint("not a model checkpoint".into()));
    }
    let backend = reader.read_u8()?;
    let header_len = reader.read_u32::<LittleEndian>()? as usize;
    let mut header = vec![0u8; header_len];
    reader.read_exact(&mut header)?;
    let backend = match backend {
        BACKEND_NGRAM => "ngram",
        BACKEND_TRANSFORMER => "transformer",
        _ => "unknown",
    };
    Ok(format!(
        "backend: {backend}\nformat version: {}\nhyperparameters: {}",
        magic[7],
        String::from_utf8_lossy(&header)
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{clean, CleanPolicy};

    fn desk_corpus() -> crate::corpus::Corpus {
        let entries: Vec<String> = (0..40)
            .map(|i| format!("word{:02}{}", i, "!@#$".chars().nth(i % 4).unwrap()))
            .collect();
        clean(entries, &CleanPolicy::default()).0
    }

    #[test]
    fn checkpoint_round_trip_ngram() {
        let corpus = desk_corpus();
        let model = train_ngram(&corpus, 3).unwrap();
        let mut buf = Vec::new();
        write_model(&AnyModel::NGram(model.clone()), &mut buf).unwrap();
        let loaded = read_model(&mut buf.as_slice()).unwrap();
        assert_eq!(loaded.backend_name(), "ngram");
        for ctx in [vec![0u16], vec![0, 25, 14, 1], vec![0, 13, 1, 42]] {
            let a = model.next_distribution(&ctx).unwrap();
            let b = loaded.next_distribution(&ctx).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn corrupted_checkpoint_rejected() {
        let corpus = desk_corpus();
        let model = train_ngram(&corpus, 2).unwrap();
        let mut buf = Vec::new();
        write_model(&AnyModel::NGram(model), &mut buf).unwrap();

        // Truncated body.
        let truncated = &buf[..buf.len() - 3];
        assert!(read_model(&mut &truncated[..]).is_err());

        // Bad magic.
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_model(&mut bad.as_slice()).is_err());

        // Unsupported version.
        let mut versioned = buf.clone();
        versioned[7] = 9;
        assert!(matches!(
            read_model(&mut versioned.as_slice()),
            Err(ModelError::Checkpoint(_))
        ));

        // Unknown backend.
        let mut backend = buf;
        backend[8] = 7;
        assert!(read_model(&mut backend.as_slice()).is_err());
    }
}
