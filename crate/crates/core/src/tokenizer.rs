//! Byte-level BPE encoder/decoder compatible with the published GPT-2
//! vocabulary assets (JSON vocab map + plain-text merges file), plus
//! fixed-length padding/truncation.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

/// Surface form of the end-of-text token in the published assets.
pub const END_OF_TEXT: &str = "<|endoftext|>";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("vocab file {path} is not a JSON map of token to id: {source}")]
    VocabJson {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("vocab ids not dense in [0, {vocab_size}): {detail}")]
    NonDenseIds { vocab_size: usize, detail: String },
    #[error("vocab missing single-byte token for byte 0x{byte:02x}")]
    MissingByteToken { byte: u8 },
    #[error("vocab missing the end-of-text token \"<|endoftext|>\"")]
    MissingEndOfText,
    #[error("vocab token {token:?} contains a symbol outside the byte-encoder alphabet")]
    BadTokenSymbol { token: String },
    #[error("merges line {line}: expected two space-separated symbols, got {text:?}")]
    MergesFormat { line: usize, text: String },
    #[error("merges line {line}: merge result {token:?} not present in vocab")]
    UnknownMergeToken { line: usize, token: String },
    #[error("token id {id} out of range for vocab of size {vocab_size}")]
    IdOutOfRange { id: u32, vocab_size: usize },
}

/// A sequence of token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
}

impl TokenSeq {
    pub fn new(ids: Vec<u32>) -> Self {
        Self { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// GPT-2 byte-to-unicode table: printable bytes map to themselves, the rest
/// to code points starting at U+0100, forming a bijection over all 256 bytes.
pub(crate) fn byte_encoder_table() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut mapped = [false; 256];
    let printable = (b'!'..=b'~').chain(0xa1..=0xac).chain(0xae..=0xff);
    for b in printable {
        table[b as usize] = char::from_u32(b as u32).unwrap();
        mapped[b as usize] = true;
    }
    let mut next = 0u32;
    for b in 0..256 {
        if !mapped[b] {
            table[b] = char::from_u32(256 + next).unwrap();
            next += 1;
        }
    }
    table
}

/// Loaded vocabulary assets: token map, ordered merges, byte-level alphabet.
pub struct BpeVocab {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    merge_ranks: HashMap<String, u32>,
    byte_encoder: [char; 256],
    byte_decoder: HashMap<char, u8>,
    eot_id: u32,
}

impl BpeVocab {
    /// Load from the two standard published asset files: a JSON vocabulary
    /// map and a merges file (first line is a header, rank = line order).
    pub fn load(vocab_path: &Path, merges_path: &Path) -> Result<Self, TokenizerError> {
        let vocab_text = fs::read_to_string(vocab_path).map_err(|source| TokenizerError::Io {
            path: vocab_path.display().to_string(),
            source,
        })?;
        let token_to_id: HashMap<String, u32> =
            serde_json::from_str(&vocab_text).map_err(|source| TokenizerError::VocabJson {
                path: vocab_path.display().to_string(),
                source,
            })?;

        let vocab_size = token_to_id.len();
        let mut id_to_token = vec![String::new(); vocab_size];
        let mut seen = vec![false; vocab_size];
        for (token, &id) in &token_to_id {
            let slot = id as usize;
            if slot >= vocab_size {
                return Err(TokenizerError::NonDenseIds {
                    vocab_size,
                    detail: format!("id {id} >= vocab size"),
                });
            }
            if seen[slot] {
                return Err(TokenizerError::NonDenseIds {
                    vocab_size,
                    detail: format!("id {id} assigned twice"),
                });
            }
            seen[slot] = true;
            id_to_token[slot] = token.clone();
        }

        let byte_encoder = byte_encoder_table();
        let byte_decoder: HashMap<char, u8> = byte_encoder
            .iter()
            .enumerate()
            .map(|(b, &c)| (c, b as u8))
            .collect();

        // Byte-level coverage: every single-byte symbol must be its own token,
        // and every token must decode through the byte alphabet.
        for b in 0..=255u8 {
            let sym = byte_encoder[b as usize].to_string();
            if !token_to_id.contains_key(&sym) {
                return Err(TokenizerError::MissingByteToken { byte: b });
            }
        }
        for token in &id_to_token {
            if token.chars().any(|c| !byte_decoder.contains_key(&c)) {
                return Err(TokenizerError::BadTokenSymbol {
                    token: token.clone(),
                });
            }
        }

        let eot_id = *token_to_id
            .get(END_OF_TEXT)
            .ok_or(TokenizerError::MissingEndOfText)?;

        let merges_text = fs::read_to_string(merges_path).map_err(|source| TokenizerError::Io {
            path: merges_path.display().to_string(),
            source,
        })?;
        let mut merge_ranks = HashMap::new();
        // First line is the "#version" header; rank = order of the rest.
        for (line_no, line) in merges_text.lines().enumerate().skip(1) {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let (left, right) = match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => (l, r),
                _ => {
                    return Err(TokenizerError::MergesFormat {
                        line: line_no + 1,
                        text: line.to_string(),
                    })
                }
            };
            let merged = format!("{left}{right}");
            if !token_to_id.contains_key(&merged) {
                return Err(TokenizerError::UnknownMergeToken {
                    line: line_no + 1,
                    token: merged,
                });
            }
            let rank = merge_ranks.len() as u32;
            merge_ranks.entry(format!("{left} {right}")).or_insert(rank);
        }

        Ok(Self {
            token_to_id,
            id_to_token,
            merge_ranks,
            byte_encoder,
            byte_decoder,
            eot_id,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.id_to_token.len()
    }

    /// Id of `<|endoftext|>`, also used as the padding token.
    pub fn eot_id(&self) -> u32 {
        self.eot_id
    }

    /// Byte-level BPE: UTF-8 bytes -> byte symbols -> pre-split pieces ->
    /// iterative lowest-rank merges -> id lookup. Total on all inputs.
    pub fn encode(&self, text: &str) -> TokenSeq {
        let mut ids = Vec::new();
        for piece in pre_split(text) {
            let symbols: String = piece
                .bytes()
                .map(|b| self.byte_encoder[b as usize])
                .collect();
            for token in self.merge_piece(&symbols) {
                ids.push(self.token_to_id[&token]);
            }
        }
        TokenSeq::new(ids)
    }

    /// Inverse of `encode`. Errors on ids outside the vocabulary.
    pub fn decode(&self, seq: &TokenSeq) -> Result<String, TokenizerError> {
        let mut bytes = Vec::new();
        for &id in &seq.ids {
            let token =
                self.id_to_token
                    .get(id as usize)
                    .ok_or_else(|| TokenizerError::IdOutOfRange {
                        id,
                        vocab_size: self.vocab_size(),
                    })?;
            bytes.extend(token.chars().map(|c| self.byte_decoder[&c]));
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    /// Repeatedly merge the lowest-ranked adjacent pair within one piece.
    fn merge_piece(&self, symbols: &str) -> Vec<String> {
        let mut word: Vec<String> = symbols.chars().map(String::from).collect();
        while word.len() > 1 {
            let mut best: Option<(u32, usize)> = None;
            for i in 0..word.len() - 1 {
                let key = format!("{} {}", word[i], word[i + 1]);
                if let Some(&rank) = self.merge_ranks.get(&key) {
                    if best.map_or(true, |(r, _)| rank < r) {
                        best = Some((rank, i));
                    }
                }
            }
            let Some((_, at)) = best else { break };
            let first = word[at].clone();
            let second = word[at + 1].clone();
            let merged = format!("{first}{second}");
            let mut out = Vec::with_capacity(word.len());
            let mut j = 0;
            while j < word.len() {
                if j + 1 < word.len() && word[j] == first && word[j + 1] == second {
                    out.push(merged.clone());
                    j += 2;
                } else {
                    out.push(word[j].clone());
                    j += 1;
                }
            }
            word = out;
        }
        word
    }
}

/// Keep the first `target_len` ids, or right-pad with `pad_id` up to it.
pub fn pad_or_truncate(seq: &TokenSeq, target_len: usize, pad_id: u32) -> TokenSeq {
    let mut ids: Vec<u32> = seq.ids.iter().copied().take(target_len).collect();
    while ids.len() < target_len {
        ids.push(pad_id);
    }
    TokenSeq::new(ids)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Letter,
    Number,
    Other,
}

// \p{N} before \p{L}: letter-numbers (Nl) count as numbers, matching the
// regex category split used by the reference pre-tokenizer.
fn classify(c: char) -> CharClass {
    if c.is_numeric() {
        CharClass::Number
    } else if c.is_alphabetic() {
        CharClass::Letter
    } else {
        CharClass::Other
    }
}

/// Split text into the pre-tokenization pieces of the GPT-2 pattern:
/// contractions, optionally space-prefixed letter/number/symbol runs, and
/// whitespace runs that leave their last character to attach to the next
/// word. Hand-rolled because the pattern needs lookahead.
fn pre_split(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let n = chars.len();
    let byte_at = |i: usize| -> usize {
        if i < n {
            chars[i].0
        } else {
            text.len()
        }
    };
    let mut pieces = Vec::new();
    let mut i = 0;
    while i < n {
        let start = chars[i].0;
        let c = chars[i].1;

        if c == '\'' {
            if let Some(len) = contraction_len(&chars, i) {
                pieces.push(&text[start..byte_at(i + len)]);
                i += len;
                continue;
            }
        }

        // ` ?` prefix applies only to the ASCII space.
        if c == ' ' && i + 1 < n && !chars[i + 1].1.is_whitespace() {
            let class = classify(chars[i + 1].1);
            let mut j = i + 2;
            while j < n && !chars[j].1.is_whitespace() && classify(chars[j].1) == class {
                j += 1;
            }
            pieces.push(&text[start..byte_at(j)]);
            i = j;
            continue;
        }

        if c.is_whitespace() {
            let mut j = i + 1;
            while j < n && chars[j].1.is_whitespace() {
                j += 1;
            }
            if j < n && j - i > 1 {
                // Leave the final whitespace char for the next piece.
                pieces.push(&text[start..byte_at(j - 1)]);
                i = j - 1;
            } else {
                pieces.push(&text[start..byte_at(j)]);
                i = j;
            }
            continue;
        }

        let class = classify(c);
        let mut j = i + 1;
        while j < n && !chars[j].1.is_whitespace() && classify(chars[j].1) == class {
            j += 1;
        }
        pieces.push(&text[start..byte_at(j)]);
        i = j;
    }
    pieces
}

// 's 't 're 've 'm 'll 'd, lowercase only.
fn contraction_len(chars: &[(usize, char)], i: usize) -> Option<usize> {
    let at = |k: usize| chars.get(i + k).map(|&(_, c)| c);
    match at(1)? {
        's' | 't' | 'm' | 'd' => Some(2),
        'r' if at(2) == Some('e') => Some(3),
        'v' if at(2) == Some('e') => Some(3),
        'l' if at(2) == Some('l') => Some(3),
        _ => None,
    }
}
