//! Fixed vocabulary and rule encoding.
//!
//! Training sequences ("rules") have the shape
//! `<BOS> pattern-tokens <SEP> character-tokens <EOS>` followed by `<PAD>`
//! up to the model window. The vocabulary layout is pinned:
//!
//! ids 0..=4    special tokens `<BOS>` `<SEP>` `<EOS>` `<UNK>` `<PAD>`
//! ids 5..=16   pattern tokens N12..N1
//! ids 17..=28  pattern tokens L12..L1
//! ids 29..=40  pattern tokens S12..S1
//! ids 41..=50  digits '0'..'9'
//! ids 51..=76  uppercase 'A'..'Z'
//! ids 77..=102 lowercase 'a'..'z'
//! ids 103..=134 the 32 special characters in ascending ASCII order

use crate::pcfg::{CharClass, Pattern, MAX_SEGMENT_LEN};
use thiserror::Error;

pub type TokenId = u16;

pub const VOCAB_SIZE: usize = 135;
pub const BOS: TokenId = 0;
pub const SEP: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const PAD: TokenId = 4;

/// Default model window (maximum encoded rule length, padding included).
pub const DEFAULT_WINDOW: usize = 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenizerError {
    #[error("token id {0} out of range (vocabulary size {VOCAB_SIZE})")]
    IdOutOfRange(TokenId),
    #[error("password {password:?} does not conform to pattern {pattern}")]
    PatternMismatch { pattern: String, password: String },
    #[error("encoded rule length {len} exceeds window {window}")]
    Overlong { len: usize, window: usize },
    #[error("malformed rule at position {pos}: {reason}")]
    Malformed { pos: usize, reason: String },
}

/// Which layout block a token id belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenClass {
    Special,
    Pattern,
    Letter,
    Digit,
    Symbol,
}

const SPECIAL_CHARS: &[u8] = b"!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

/// Magic header for encoded-corpus files; the trailing byte is the version.
const ENCODED_MAGIC: &[u8; 6] = b"PGENC\x01";

/// The fixed 135-entry token table. Construction is deterministic; the same
/// layout is produced on every call.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::new()
    }
}

impl Vocabulary {
    pub fn new() -> Vocabulary {
        let mut tokens: Vec<String> = vec![
            "<BOS>".into(),
            "<SEP>".into(),
            "<EOS>".into(),
            "<UNK>".into(),
            "<PAD>".into(),
        ];
        for label in ['N', 'L', 'S'] {
            for len in (1..=MAX_SEGMENT_LEN).rev() {
                tokens.push(format!("{label}{len}"));
            }
        }
        for d in b'0'..=b'9' {
            tokens.push((d as char).to_string());
        }
        for c in b'A'..=b'Z' {
            tokens.push((c as char).to_string());
        }
        for c in b'a'..=b'z' {
            tokens.push((c as char).to_string());
        }
        for &c in SPECIAL_CHARS {
            tokens.push((c as char).to_string());
        }
        debug_assert_eq!(tokens.len(), VOCAB_SIZE);
        Vocabulary { tokens }
    }

    pub fn token_str(&self, id: TokenId) -> Result<&str, TokenizerError> {
        self.tokens
            .get(id as usize)
            .map(|s| s.as_str())
            .ok_or(TokenizerError::IdOutOfRange(id))
    }

    /// Layout-block membership of a token id.
    pub fn classify(&self, id: TokenId) -> Result<TokenClass, TokenizerError> {
        match id {
            0..=4 => Ok(TokenClass::Special),
            5..=40 => Ok(TokenClass::Pattern),
            41..=50 => Ok(TokenClass::Digit),
            51..=102 => Ok(TokenClass::Letter),
            103..=134 => Ok(TokenClass::Symbol),
            _ => Err(TokenizerError::IdOutOfRange(id)),
        }
    }

    /// Id of the pattern token for a (class, length) segment. The blocks are
    /// stored descending, so e.g. N4 sits at 17 - 4 = 13.
    pub fn pattern_token_id(class: CharClass, len: usize) -> TokenId {
        debug_assert!((1..=MAX_SEGMENT_LEN).contains(&len));
        let block_start = match class {
            CharClass::Digit => 5,
            CharClass::Letter => 17,
            CharClass::Symbol => 29,
        };
        (block_start + MAX_SEGMENT_LEN - len) as TokenId
    }

    /// Id of a single-character token, if the character is in the charset.
    pub fn char_token_id(ch: char) -> Option<TokenId> {
        match ch {
            '0'..='9' => Some(41 + (ch as u8 - b'0') as TokenId),
            'A'..='Z' => Some(51 + (ch as u8 - b'A') as TokenId),
            'a'..='z' => Some(77 + (ch as u8 - b'a') as TokenId),
            _ => SPECIAL_CHARS
                .iter()
                .position(|&c| c as char == ch)
                .map(|i| 103 + i as TokenId),
        }
    }

    /// The character a token id stands for, if it is a character token.
    pub fn char_of(&self, id: TokenId) -> Option<char> {
        match self.classify(id).ok()? {
            TokenClass::Digit | TokenClass::Letter | TokenClass::Symbol => {
                self.tokens[id as usize].chars().next()
            }
            _ => None,
        }
    }

    /// Inclusive id range of the character block for a class. Used for
    /// constrained decoding masks.
    pub fn char_block(class: CharClass) -> std::ops::RangeInclusive<TokenId> {
        match class {
            CharClass::Digit => 41..=50,
            CharClass::Letter => 51..=102,
            CharClass::Symbol => 103..=134,
        }
    }

    /// `<BOS> pattern-tokens <SEP>`, unpadded.
    pub fn encode_prompt(&self, pattern: &Pattern) -> Vec<TokenId> {
        let mut ids = vec![BOS];
        for seg in pattern.segments() {
            ids.push(Self::pattern_token_id(seg.class, seg.len));
        }
        ids.push(SEP);
        ids
    }

    /// Encode a full rule, padded with `<PAD>` to `window`.
    pub fn encode_rule(
        &self,
        pattern: &Pattern,
        password: &str,
        window: usize,
    ) -> Result<Vec<TokenId>, TokenizerError> {
        let extracted = Pattern::extract(password).map_err(|_| TokenizerError::PatternMismatch {
            pattern: pattern.to_string(),
            password: password.to_string(),
        })?;
        if &extracted != pattern {
            return Err(TokenizerError::PatternMismatch {
                pattern: pattern.to_string(),
                password: password.to_string(),
            });
        }
        let mut ids = self.encode_prompt(pattern);
        for ch in password.chars() {
            // Extraction succeeded, so every character has a token.
            ids.push(Self::char_token_id(ch).unwrap());
        }
        ids.push(EOS);
        if ids.len() > window {
            return Err(TokenizerError::Overlong {
                len: ids.len(),
                window,
            });
        }
        ids.resize(window, PAD);
        Ok(ids)
    }

    /// Decode an encoded rule back to (pattern, password). Exact inverse of
    /// `encode_rule`; structural violations name the first offending
    /// position.
    pub fn decode(&self, ids: &[TokenId]) -> Result<(Pattern, String), TokenizerError> {
        let malformed = |pos: usize, reason: &str| TokenizerError::Malformed {
            pos,
            reason: reason.to_string(),
        };
        if ids.first() != Some(&BOS) {
            return Err(malformed(0, "rule must begin with <BOS>"));
        }

        let mut segments = Vec::new();
        let mut pos = 1;
        loop {
            let &id = ids.get(pos).ok_or_else(|| malformed(pos, "missing <SEP>"))?;
            match self.classify(id)? {
                TokenClass::Pattern => {
                    let token = &self.tokens[id as usize];
                    let class = CharClass::from_label(token.chars().next().unwrap()).unwrap();
                    let len: usize = token[1..].parse().unwrap();
                    segments.push(crate::pcfg::Segment { class, len });
                    pos += 1;
                }
                TokenClass::Special if id == SEP => break,
                _ => {
                    return Err(malformed(
                        pos,
                        "expected pattern token or <SEP> before the separator",
                    ))
                }
            }
        }
        let pattern = Pattern::new(segments)
            .map_err(|e| malformed(pos, &format!("invalid pattern section: {e}")))?;
        pos += 1; // past <SEP>

        let mut password = String::new();
        loop {
            let &id = ids.get(pos).ok_or_else(|| malformed(pos, "missing <EOS>"))?;
            match self.classify(id)? {
                TokenClass::Digit | TokenClass::Letter | TokenClass::Symbol => {
                    password.push(self.char_of(id).unwrap());
                    pos += 1;
                }
                TokenClass::Special if id == EOS => break,
                TokenClass::Special if id == UNK => {
                    return Err(malformed(pos, "<UNK> present"));
                }
                _ => return Err(malformed(pos, "expected character token or <EOS>")),
            }
        }
        pos += 1; // past <EOS>
        if let Some(bad) = ids[pos..].iter().position(|&id| id != PAD) {
            return Err(malformed(pos + bad, "non-<PAD> token after <EOS>"));
        }

        let extracted = Pattern::extract(&password)
            .map_err(|e| malformed(pos, &format!("password section: {e}")))?;
        if extracted != pattern {
            return Err(TokenizerError::PatternMismatch {
                pattern: pattern.to_string(),
                password,
            });
        }
        Ok((pattern, password))
    }

    /// Write encoded rules (all padded to the same window) as a versioned
    /// binary stream.
    pub fn write_encoded<W: std::io::Write>(
        writer: &mut W,
        window: usize,
        sequences: &[Vec<TokenId>],
    ) -> std::io::Result<()> {
        use byteorder::{LittleEndian, WriteBytesExt};
        writer.write_all(ENCODED_MAGIC)?;
        writer.write_u32::<LittleEndian>(window as u32)?;
        writer.write_u64::<LittleEndian>(sequences.len() as u64)?;
        for seq in sequences {
            debug_assert_eq!(seq.len(), window);
            for &id in seq {
                writer.write_u16::<LittleEndian>(id)?;
            }
        }
        Ok(())
    }

    /// Read an encoded-corpus stream written by [`Vocabulary::write_encoded`].
    pub fn read_encoded<R: std::io::Read>(
        reader: &mut R,
    ) -> std::io::Result<(usize, Vec<Vec<TokenId>>)> {
        use byteorder::{LittleEndian, ReadBytesExt};
        use std::io::{Error, ErrorKind};
        let mut magic = [0u8; 6];
        reader.read_exact(&mut magic)?;
        if &magic != ENCODED_MAGIC {
            return Err(Error::new(ErrorKind::InvalidData, "bad encoded-corpus magic"));
        }
        let window = reader.read_u32::<LittleEndian>()? as usize;
        let count = reader.read_u64::<LittleEndian>()?;
        let mut sequences = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let mut seq = Vec::with_capacity(window);
            for _ in 0..window {
                seq.push(reader.read_u16::<LittleEndian>()?);
            }
            sequences.push(seq);
        }
        Ok((window, sequences))
    }

    /// `ID<TAB>TOKEN` lines for auditing the layout.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (id, token) in self.tokens.iter().enumerate() {
            out.push_str(&format!("{id}\t{token}\n"));
        }
        out
    }
}
