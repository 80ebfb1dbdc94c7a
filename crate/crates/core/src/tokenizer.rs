//! Subword tokenization with character offsets into the original text.
//!
//! Text is first split into words: maximal runs of non-whitespace,
//! non-punctuation characters, with every punctuation character forming a
//! word of its own. Each word is then segmented by greedy longest match
//! against the vocabulary. Pieces that continue a word carry the `##` prefix.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const UNK_PIECE: &str = "[UNK]";
pub const CONTINUATION_PREFIX: &str = "##";
pub const MIN_PAIR_COUNT: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub id: u32,
    /// Matched vocabulary piece, `##`-prefixed for continuations. For unknown
    /// characters this is the folded character itself, not `[UNK]`.
    pub piece: String,
    pub start: usize,
    pub end: usize,
    pub word_start: bool,
}

impl Token {
    /// Case-folded surface characters, without the continuation marker.
    pub fn surface(&self) -> &str {
        self.piece.strip_prefix(CONTINUATION_PREFIX).unwrap_or(&self.piece)
    }

    pub fn char_len(&self) -> usize {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.tokens.iter().map(|t| t.id).collect()
    }
}

/// Lowercases a character when that keeps it a single character.
pub fn fold(c: char) -> char {
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

fn is_punctuation(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Word boundaries as `[start, end)` char ranges.
pub fn split_words(chars: &[char]) -> Vec<(usize, usize)> {
    let mut words = Vec::new();
    let mut start: Option<usize> = None;
    for (i, &c) in chars.iter().enumerate() {
        if c.is_whitespace() || is_punctuation(c) {
            if let Some(s) = start.take() {
                words.push((s, i));
            }
            if is_punctuation(c) {
                words.push((i, i + 1));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        words.push((s, chars.len()));
    }
    words
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pieces: Vec<String>,
    index: HashMap<String, u32>,
    max_piece_chars: usize,
}

impl Vocabulary {
    pub const UNK_ID: u32 = 0;

    /// Builds a vocabulary from pieces; `[UNK]` is placed at id 0 if absent.
    pub fn from_pieces<I, S>(pieces: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![UNK_PIECE.to_string()];
        for p in pieces {
            let p = p.into();
            if p == UNK_PIECE {
                continue;
            }
            if p.is_empty() || p == CONTINUATION_PREFIX {
                return Err(Error::Vocabulary("empty piece".into()));
            }
            all.push(p);
        }
        let mut index = HashMap::with_capacity(all.len());
        for (i, p) in all.iter().enumerate() {
            if index.insert(p.clone(), i as u32).is_some() {
                return Err(Error::Vocabulary(format!("duplicate piece '{p}'")));
            }
        }
        let max_piece_chars = all
            .iter()
            .map(|p| p.strip_prefix(CONTINUATION_PREFIX).unwrap_or(p).chars().count())
            .max()
            .unwrap_or(1);
        Ok(Vocabulary {
            pieces: all,
            index,
            max_piece_chars,
        })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    /// One piece per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = self.pieces.join("\n");
        body.push('\n');
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = body.lines();
        match lines.next() {
            Some(UNK_PIECE) => {}
            _ => return Err(Error::parse(path, Some(0), "first line must be [UNK]")),
        }
        Self::from_pieces(lines.map(str::to_string))
    }

    /// Greedy pair-merge induction over the words of `corpus`.
    ///
    /// Starts from every positional character symbol seen (`c` at word start,
    /// `##c` elsewhere) and repeatedly merges the most frequent adjacent
    /// pair, ties going to the pair seen first, until `target_size` pieces
    /// (not counting `[UNK]`) exist or no pair occurs at least
    /// [`MIN_PAIR_COUNT`] times. Hapax pairs are never merged: on small
    /// corpora they only memorise whole rare words.
    pub fn induce<S: AsRef<str>>(corpus: &[S], target_size: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Vocabulary("empty corpus".into()));
        }
        let mut word_ids: HashMap<String, usize> = HashMap::new();
        let mut words: Vec<(Vec<String>, usize)> = Vec::new();
        let mut pieces: Vec<String> = Vec::new();
        let mut known: HashSet<String> = HashSet::new();
        for text in corpus {
            let chars: Vec<char> = text.as_ref().chars().map(fold).collect();
            for (s, e) in split_words(&chars) {
                let word: String = chars[s..e].iter().collect();
                if let Some(&w) = word_ids.get(&word) {
                    words[w].1 += 1;
                    continue;
                }
                let symbols: Vec<String> = chars[s..e]
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        if i == 0 {
                            c.to_string()
                        } else {
                            format!("{CONTINUATION_PREFIX}{c}")
                        }
                    })
                    .collect();
                for sym in &symbols {
                    if known.insert(sym.clone()) {
                        pieces.push(sym.clone());
                    }
                }
                word_ids.insert(word, words.len());
                words.push((symbols, 1));
            }
        }
        if target_size < pieces.len() {
            return Err(Error::Vocabulary(format!(
                "target size {target_size} is below the character inventory of {}",
                pieces.len()
            )));
        }

        while pieces.len() < target_size {
            // (left, right) -> (count, first-seen rank)
            let mut pairs: HashMap<(&str, &str), (usize, usize)> = HashMap::new();
            let mut rank = 0;
            for (symbols, count) in &words {
                for w in symbols.windows(2) {
                    let entry = pairs.entry((w[0].as_str(), w[1].as_str())).or_insert_with(|| {
                        rank += 1;
                        (0, rank)
                    });
                    entry.0 += count;
                }
            }
            let Some((&(left, right), &(count, _))) = pairs
                .iter()
                .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
            else {
                break;
            };
            if count < MIN_PAIR_COUNT {
                break;
            }
            let (left, right) = (left.to_string(), right.to_string());
            let merged = format!("{left}{}", right.strip_prefix(CONTINUATION_PREFIX).unwrap_or(&right));
            for (symbols, _) in &mut words {
                let mut i = 0;
                while i + 1 < symbols.len() {
                    if symbols[i] == left && symbols[i + 1] == right {
                        symbols[i] = merged.clone();
                        symbols.remove(i + 1);
                    }
                    i += 1;
                }
            }
            if known.insert(merged.clone()) {
                pieces.push(merged);
            }
        }
        Self::from_pieces(pieces)
    }

    /// Tokenizes `text`. Never fails: characters with no matching piece become
    /// single-character `[UNK]` tokens.
    pub fn tokenize(&self, text: &str) -> TokenSequence {
        let chars: Vec<char> = text.chars().map(fold).collect();
        let mut tokens = Vec::new();
        let mut candidate = String::new();
        for (ws, we) in split_words(&chars) {
            let mut i = ws;
            while i < we {
                let prefix = if i == ws { "" } else { CONTINUATION_PREFIX };
                let longest = (we - i).min(self.max_piece_chars);
                let mut matched = None;
                for len in (1..=longest).rev() {
                    candidate.clear();
                    candidate.push_str(prefix);
                    candidate.extend(&chars[i..i + len]);
                    if let Some(id) = self.id(&candidate) {
                        matched = Some((id, len));
                        break;
                    }
                }
                let (id, len) = matched.unwrap_or((Self::UNK_ID, 1));
                let mut piece = prefix.to_string();
                piece.extend(&chars[i..i + len]);
                tokens.push(Token {
                    id,
                    piece,
                    start: i,
                    end: i + len,
                    word_start: i == ws,
                });
                i += len;
            }
        }
        TokenSequence { tokens }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn joseph_vocab() -> Vocabulary {
        Vocabulary::from_pieces(["my", "name", "is", "jo", "##se", "##ph", "sch", "##moe", "j", "##o"]).unwrap()
    }

    #[test]
    fn joseph_sentence_pieces() {
        let v = joseph_vocab();
        let text = "My name is Joseph Schmoe";
        let ts = v.tokenize(text);
        let pieces: Vec<_> = ts.tokens.iter().map(|t| t.piece.as_str()).collect();
        assert_eq!(pieces, ["my", "name", "is", "jo", "##se", "##ph", "sch", "##moe"]);
        let starts: Vec<_> = ts.tokens.iter().map(|t| t.word_start as u8).collect();
        assert_eq!(starts, [1, 1, 1, 1, 0, 0, 1, 0]);
        assert_eq!((ts.tokens[3].start, ts.tokens[5].end), (11, 17));
        assert!(ts.tokens.iter().all(|t| t.id != Vocabulary::UNK_ID));
    }

    #[test]
    fn single_digit() {
        let v = Vocabulary::from_pieces(["7"]).unwrap();
        let ts = v.tokenize("7");
        assert_eq!(ts.tokens.len(), 1);
        let t = &ts.tokens[0];
        assert_eq!((t.start, t.end, t.word_start), (0, 1, true));
    }

    #[test]
    fn greedy_longest_match_on_8pm() {
        let v = Vocabulary::from_pieces(["8", "pm", "##pm", "p", "##p", "##m"]).unwrap();
        let ts = v.tokenize("8pm");
        let got: Vec<_> = ts.tokens.iter().map(|t| (t.piece.as_str(), t.start, t.end, t.word_start)).collect();
        assert_eq!(got, [("8", 0, 1, true), ("##pm", 1, 3, false)]);
    }

    #[test]
    fn unknown_chars_fall_back_to_unk() {
        let v = Vocabulary::from_pieces(["a"]).unwrap();
        let ts = v.tokenize("ab!");
        let got: Vec<_> = ts.tokens.iter().map(|t| (t.id, t.start, t.end)).collect();
        assert_eq!(got, [(1, 0, 1), (0, 1, 2), (0, 2, 3)]);
        assert!(v.tokenize("").is_empty());
    }

    #[test]
    fn induction_merges_most_frequent_pair() {
        let v = Vocabulary::induce(&["aaab", "aaab"], 5).unwrap();
        assert_eq!(v.len(), 6);
        for p in ["a", "##a", "##b", "aa"] {
            assert!(v.id(p).is_some(), "missing {p}: {:?}", v.pieces());
        }
    }

    #[test]
    fn induction_single_char() {
        let v = Vocabulary::induce(&["x"], 1).unwrap();
        assert_eq!(v.pieces(), ["[UNK]", "x"]);
    }

    #[test]
    fn induction_rejects_small_target() {
        assert!(Vocabulary::induce(&["abc"], 2).is_err());
        assert!(Vocabulary::induce::<&str>(&[], 10).is_err());
    }

    #[test]
    fn induced_vocab_splits_unseen_name() {
        let corpus = ["my name is jose", "jo and joe", "sep phone", "joseph"];
        let v = Vocabulary::induce(&corpus, 22).unwrap();
        let text = "My name is Joseph Schmoe";
        let ts = v.tokenize(text);
        let joseph: Vec<_> = ts.tokens.iter().filter(|t| t.start >= 11 && t.end <= 17).collect();
        assert!(joseph.len() >= 2, "{:?}", joseph);
        assert_eq!(joseph.first().unwrap().start, 11);
        assert_eq!(joseph.last().unwrap().end, 17);
        assert!(joseph[0].word_start && joseph[1..].iter().all(|t| !t.word_start));
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        let v = joseph_vocab();
        v.save(&p).unwrap();
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
    }
}
