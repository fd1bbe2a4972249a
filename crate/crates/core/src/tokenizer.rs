//! WordPiece vocabulary induction and greedy longest-match segmentation.
//!
//! Pre-tokenization lowercases, splits on whitespace and isolates every
//! punctuation character. Training starts from the character alphabet
//! (word-initial characters bare, the rest with a `##` prefix) and repeatedly
//! merges the adjacent pair with the highest
//! `count(pair) / (count(left) * count(right))`, ties going to the
//! lexicographically smallest `(left, right)`.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const SPECIALS: [&str; 4] = ["[PAD]", "[BOS]", "[EOS]", "[UNK]"];
pub const CONTINUATION: &str = "##";
pub const DEFAULT_VOCAB_SIZE: usize = 8192;
const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    lookup: HashMap<String, u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VocabMeta {
    pad: u32,
    bos: u32,
    eos: u32,
    unk: u32,
    lowercase: bool,
    continuation_prefix: String,
    size: usize,
}

/// Lowercased words with punctuation split off.
pub fn pre_tokenize(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    for chunk in text.split_whitespace() {
        let mut current = String::new();
        for ch in chunk.chars().flat_map(char::to_lowercase) {
            if is_punctuation(ch) {
                if !current.is_empty() {
                    words.push(std::mem::take(&mut current));
                }
                words.push(ch.to_string());
            } else {
                current.push(ch);
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
    }
    words
}

fn is_punctuation(ch: char) -> bool {
    ch.is_ascii_punctuation() || (!ch.is_alphanumeric() && !ch.is_whitespace() && !ch.is_control())
}

/// The text form that `decode(encode(x))` reproduces for UNK-free input.
pub fn normalize(text: &str) -> String {
    pre_tokenize(text).join(" ")
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Format("vocabulary must start with the special tokens".into()));
        }
        let mut lookup = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if lookup.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token {t}")));
            }
        }
        Ok(Vocab { tokens, lookup })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.lookup.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for word in pre_tokenize(text) {
            self.encode_word(&word, &mut ids);
        }
        ids
    }

    fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_WORD_CHARS {
            out.push(UNK);
            return;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let mut piece: String = chars[start..end].iter().collect();
                if start > 0 {
                    piece.insert_str(0, CONTINUATION);
                }
                if let Some(id) = self.id(&piece) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    pieces.push(id);
                    start = end;
                }
                None => {
                    out.push(UNK);
                    return;
                }
            }
        }
        out.extend(pieces);
    }

    /// Joins pieces back into words; special tokens are dropped.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let token = self.token(id).ok_or(Error::TokenOutOfRange {
                id,
                size: self.len(),
            })?;
            if (id as usize) < SPECIALS.len() {
                continue;
            }
            match token.strip_prefix(CONTINUATION) {
                Some(rest) => out.push_str(rest),
                None => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(token);
                }
            }
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut body = self.tokens.join("\n");
        body.push('\n');
        fs::write(path, body).map_err(|e| Error::io(path, e))?;
        let meta = VocabMeta {
            pad: PAD,
            bos: BOS,
            eos: EOS,
            unk: UNK,
            lowercase: true,
            continuation_prefix: CONTINUATION.into(),
            size: self.len(),
        };
        let side = meta_path(path);
        fs::write(&side, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&side, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = raw.lines().map(str::to_owned).collect();
        let vocab = Self::from_tokens(tokens)?;
        let side = meta_path(path);
        if side.exists() {
            let raw = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            let meta: VocabMeta = serde_json::from_str(&raw)?;
            if meta.size != vocab.len() || meta.unk != UNK || !meta.lowercase {
                return Err(Error::Format("vocabulary sidecar does not match".into()));
            }
        }
        Ok(vocab)
    }
}

fn meta_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

struct Word {
    symbols: Vec<u32>,
    count: u64,
}

type Pair = (u32, u32);

/// Induces a WordPiece vocabulary of at most `target_size` tokens.
///
/// Stops early when no adjacent pairs remain.
pub fn train_vocab<S: AsRef<str>>(texts: &[S], target_size: usize) -> Result<Vocab> {
    let mut word_counts: HashMap<String, u64> = HashMap::new();
    for text in texts {
        for w in pre_tokenize(text.as_ref()) {
            if w.chars().count() <= MAX_WORD_CHARS {
                *word_counts.entry(w).or_insert(0) += 1;
            }
        }
    }
    if word_counts.is_empty() {
        return Err(Error::Config("cannot train a vocabulary on an empty corpus".into()));
    }
    let mut unique: Vec<(String, u64)> = word_counts.into_iter().collect();
    unique.sort();

    let mut alphabet = BTreeSet::new();
    for (w, _) in &unique {
        for (i, ch) in w.chars().enumerate() {
            alphabet.insert(if i == 0 {
                ch.to_string()
            } else {
                format!("{CONTINUATION}{ch}")
            });
        }
    }
    if target_size < SPECIALS.len() + alphabet.len() {
        return Err(Error::Config(format!(
            "target vocabulary {target_size} is smaller than {} specials plus {} alphabet symbols",
            SPECIALS.len(),
            alphabet.len()
        )));
    }

    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(alphabet);
    let mut lookup: HashMap<String, u32> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();

    let mut words: Vec<Word> = unique
        .iter()
        .map(|(w, count)| Word {
            symbols: w
                .chars()
                .enumerate()
                .map(|(i, ch)| {
                    let t = if i == 0 {
                        ch.to_string()
                    } else {
                        format!("{CONTINUATION}{ch}")
                    };
                    lookup[&t]
                })
                .collect(),
            count: *count,
        })
        .collect();

    // Symbol and pair statistics, kept incrementally.
    let mut symbol_counts: Vec<u64> = vec![0; tokens.len()];
    let mut pair_counts: HashMap<Pair, u64> = HashMap::new();
    let mut pair_words: HashMap<Pair, BTreeSet<usize>> = HashMap::new();
    for (wi, w) in words.iter().enumerate() {
        for &s in &w.symbols {
            symbol_counts[s as usize] += w.count;
        }
        for p in w.symbols.windows(2) {
            let pair = (p[0], p[1]);
            *pair_counts.entry(pair).or_insert(0) += w.count;
            pair_words.entry(pair).or_default().insert(wi);
        }
    }

    while tokens.len() < target_size {
        let best = pair_counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .max_by(|(pa, &ca), (pb, &cb)| {
                // ca/(la*ra) vs cb/(lb*rb) without rounding
                let la = symbol_counts[pa.0 as usize] as u128 * symbol_counts[pa.1 as usize] as u128;
                let lb = symbol_counts[pb.0 as usize] as u128 * symbol_counts[pb.1 as usize] as u128;
                (ca as u128 * lb)
                    .cmp(&(cb as u128 * la))
                    .then_with(|| {
                        let ka = (&tokens[pa.0 as usize], &tokens[pa.1 as usize]);
                        let kb = (&tokens[pb.0 as usize], &tokens[pb.1 as usize]);
                        kb.cmp(&ka)
                    })
            })
            .map(|(p, _)| *p);
        let Some(pair) = best else { break };

        let merged = format!(
            "{}{}",
            tokens[pair.0 as usize],
            &tokens[pair.1 as usize][CONTINUATION.len()..]
        );
        let new_id = match lookup.get(&merged) {
            Some(&id) => id,
            None => {
                let id = tokens.len() as u32;
                tokens.push(merged.clone());
                lookup.insert(merged, id);
                symbol_counts.push(0);
                id
            }
        };

        let affected = pair_words.remove(&pair).unwrap_or_default();
        for wi in affected {
            let word = &mut words[wi];
            let count = word.count;
            if !word.symbols.windows(2).any(|p| (p[0], p[1]) == pair) {
                continue;
            }
            for p in word.symbols.windows(2) {
                if let Some(c) = pair_counts.get_mut(&(p[0], p[1])) {
                    *c -= count;
                }
            }
            for &s in &word.symbols {
                symbol_counts[s as usize] -= count;
            }
            let mut merged_symbols = Vec::with_capacity(word.symbols.len());
            let mut i = 0;
            while i < word.symbols.len() {
                if i + 1 < word.symbols.len() && (word.symbols[i], word.symbols[i + 1]) == pair {
                    merged_symbols.push(new_id);
                    i += 2;
                } else {
                    merged_symbols.push(word.symbols[i]);
                    i += 1;
                }
            }
            word.symbols = merged_symbols;
            for &s in &word.symbols {
                symbol_counts[s as usize] += count;
            }
            for p in word.symbols.windows(2) {
                let np = (p[0], p[1]);
                *pair_counts.entry(np).or_insert(0) += count;
                pair_words.entry(np).or_default().insert(wi);
            }
        }
        pair_counts.retain(|_, c| *c > 0);
    }

    Vocab::from_tokens(tokens)
}
