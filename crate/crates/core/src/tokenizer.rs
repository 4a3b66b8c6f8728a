//! Word-level vocabulary with reserved and style tokens.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const BOS: TokenId = 2;
pub const EOS: TokenId = 3;
pub const SEP: TokenId = 4;

const RESERVED: [&str; 5] = ["<pad>", "<unk>", "<s>", "</s>", "<sep>"];
const STYLE_PREFIX: &str = "<style:";

fn style_token(tag: &str) -> String {
    format!("{STYLE_PREFIX}{tag}>")
}

fn is_special_spelling(tok: &str) -> bool {
    RESERVED.contains(&tok) || (tok.starts_with(STYLE_PREFIX) && tok.ends_with('>'))
}

/// Collapses whitespace and optionally lowercases.
pub fn normalize(text: &str, lowercase: bool) -> String {
    let joined = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if lowercase {
        joined.to_lowercase()
    } else {
        joined
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    style_tags: Vec<String>,
    lowercase: bool,
}

/// Fixed-length token sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<TokenId>,
    pub true_length: usize,
}

impl TokenSeq {
    /// Builds a sequence from raw ids, deriving `true_length` from the last
    /// non-PAD position.
    pub fn from_ids(ids: Vec<TokenId>) -> Self {
        let true_length = ids.iter().rposition(|&i| i != PAD).map_or(0, |p| p + 1);
        TokenSeq { ids, true_length }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl Vocab {
    /// Builds a vocabulary from whitespace tokens with frequency at least
    /// `min_freq`, ordered by descending frequency then lexicographically.
    pub fn build<S: AsRef<str>>(
        corpus: &[S],
        min_freq: usize,
        style_tags: &[String],
        lowercase: bool,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Vocab("cannot build a vocabulary from an empty corpus".into()));
        }
        if min_freq == 0 {
            return Err(Error::Vocab("min_freq must be at least 1".into()));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in corpus {
            for tok in normalize(text.as_ref(), lowercase).split(' ') {
                if !tok.is_empty() && !is_special_spelling(tok) {
                    *counts.entry(tok.to_string()).or_default() += 1;
                }
            }
        }
        let mut kept: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut tags = Vec::new();
        for tag in style_tags {
            if tags.contains(tag) {
                continue;
            }
            if tag.is_empty() || tag.contains(char::is_whitespace) || tag.contains('>') {
                return Err(Error::Vocab(format!("invalid style tag {tag:?}")));
            }
            tokens.push(style_token(tag));
            tags.push(tag.clone());
        }
        tokens.extend(kept.into_iter().map(|(t, _)| t));
        Ok(Self::from_tokens(tokens, tags, lowercase))
    }

    fn from_tokens(tokens: Vec<String>, style_tags: Vec<String>, lowercase: bool) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Vocab {
            tokens,
            index,
            style_tags,
            lowercase,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn style_tags(&self) -> &[String] {
        &self.style_tags
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Id of a corpus word, or UNK.
    pub fn word_id(&self, word: &str) -> TokenId {
        match self.index.get(word) {
            Some(&id) if !self.is_special(id) => id,
            _ => UNK,
        }
    }

    pub fn style_id(&self, tag: &str) -> Option<TokenId> {
        self.style_tags
            .iter()
            .position(|t| t == tag)
            .map(|p| (RESERVED.len() + p) as TokenId)
    }

    /// Reserved and style tokens.
    pub fn is_special(&self, id: TokenId) -> bool {
        (id as usize) < RESERVED.len() + self.style_tags.len()
    }

    /// Number of reserved plus style ids; corpus words start here.
    pub fn first_word_id(&self) -> TokenId {
        (RESERVED.len() + self.style_tags.len()) as TokenId
    }

    /// Lays out `[style? BOS words… EOS PAD…]`. Words beyond the capacity
    /// are dropped; EOS is always kept.
    pub fn encode(&self, text: &str, style_tag: Option<&str>, max_len: usize) -> Result<TokenSeq> {
        let mut ids = Vec::with_capacity(max_len);
        if let Some(tag) = style_tag {
            let sid = self
                .style_id(tag)
                .ok_or_else(|| Error::Vocab(format!("style tag {tag:?} is not registered")))?;
            ids.push(sid);
        }
        let overhead = ids.len() + 2;
        if max_len < overhead {
            return Err(Error::Vocab(format!(
                "max_len {max_len} cannot hold the {overhead} framing tokens"
            )));
        }
        ids.push(BOS);
        let norm = normalize(text, self.lowercase);
        ids.extend(
            norm.split(' ')
                .filter(|w| !w.is_empty())
                .take(max_len - overhead)
                .map(|w| self.word_id(w)),
        );
        ids.push(EOS);
        let true_length = ids.len();
        ids.resize(max_len, PAD);
        Ok(TokenSeq { ids, true_length })
    }

    /// Drops reserved and style tokens and joins the rest with spaces.
    pub fn decode(&self, seq: &TokenSeq) -> Result<String> {
        self.decode_ids(&seq.ids)
    }

    pub fn decode_ids(&self, ids: &[TokenId]) -> Result<String> {
        let mut words = Vec::new();
        for &id in ids {
            let tok = self
                .token(id)
                .ok_or_else(|| Error::Vocab(format!("token id {id} out of range ({})", self.len())))?;
            if !self.is_special(id) {
                words.push(tok);
            }
        }
        Ok(words.join(" "))
    }

    /// Normalized whitespace words with no special tokens, used by metrics.
    pub fn words(&self, text: &str) -> Vec<String> {
        normalize(text, self.lowercase)
            .split(' ')
            .filter(|w| !w.is_empty() && !is_special_spelling(w))
            .map(str::to_string)
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = self.tokens.join("\n");
        out.push('\n');
        fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// Reads a vocabulary file: one token per line, line number = id.
    pub fn load(path: &Path, lowercase: bool) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text, lowercase)
    }

    pub fn parse(text: &str, lowercase: bool) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Vocab("vocabulary must start with the reserved tokens".into()));
        }
        let mut tags = Vec::new();
        for tok in &tokens[RESERVED.len()..] {
            match tok.strip_prefix(STYLE_PREFIX).and_then(|t| t.strip_suffix('>')) {
                Some(tag) => tags.push(tag.to_string()),
                None => break,
            }
        }
        let vocab = Self::from_tokens(tokens, tags, lowercase);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(Error::Vocab("duplicate tokens in vocabulary file".into()));
        }
        if vocab.tokens[vocab.first_word_id() as usize..]
            .iter()
            .any(|t| t.is_empty() || is_special_spelling(t))
        {
            return Err(Error::Vocab("special or empty token after the style block".into()));
        }
        Ok(vocab)
    }
}
