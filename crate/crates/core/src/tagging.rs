//! The four-tag single-span scheme.
//!
//! A tag sequence is either all `Bef` (no span) or `Bef* Beg In* Aft*`.

use std::fmt;

use crate::data::CharSpan;
use crate::tokenizer::TokenSequence;

pub const NUM_TAGS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Tag {
    Bef = 0,
    Beg = 1,
    In = 2,
    Aft = 3,
}

impl Tag {
    pub const ALL: [Tag; NUM_TAGS] = [Tag::Bef, Tag::Beg, Tag::In, Tag::Aft];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Tag> {
        Tag::ALL.get(i).copied()
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tag::Bef => "BEF",
            Tag::Beg => "BEG",
            Tag::In => "IN",
            Tag::Aft => "AFT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TaggingError {
    #[error("span {0} covers no token")]
    EmptyCover(CharSpan),
    #[error("tag sequence {0:?} violates BEF* (BEG IN* AFT*)?")]
    Grammar(Vec<Tag>),
    #[error("tag sequence has {tags} tags for {tokens} tokens")]
    Length { tags: usize, tokens: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TagSequence(pub Vec<Tag>);

impl TagSequence {
    pub fn all_bef(len: usize) -> Self {
        TagSequence(vec![Tag::Bef; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tags(&self) -> &[Tag] {
        &self.0
    }

    pub fn is_well_formed(&self) -> bool {
        is_well_formed(&self.0)
    }
}

/// Direct recogniser for `BEF* (BEG IN* AFT*)?`.
pub fn is_well_formed(tags: &[Tag]) -> bool {
    let mut i = 0;
    while i < tags.len() && tags[i] == Tag::Bef {
        i += 1;
    }
    if i == tags.len() {
        return true;
    }
    if tags[i] != Tag::Beg {
        return false;
    }
    i += 1;
    while i < tags.len() && tags[i] == Tag::In {
        i += 1;
    }
    tags[i..].iter().all(|&t| t == Tag::Aft)
}

/// Allowed transitions plus admissible first and last tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitionMask {
    /// `allowed[from][to]`
    pub allowed: [[bool; NUM_TAGS]; NUM_TAGS],
    pub start: [bool; NUM_TAGS],
    pub end: [bool; NUM_TAGS],
}

impl TransitionMask {
    pub fn allows(&self, from: Tag, to: Tag) -> bool {
        self.allowed[from.index()][to.index()]
    }

    /// Whether the mask's automaton accepts `tags`.
    pub fn accepts(&self, tags: &[Tag]) -> bool {
        match (tags.first(), tags.last()) {
            (Some(&f), Some(&l)) => {
                self.start[f.index()]
                    && self.end[l.index()]
                    && tags.windows(2).all(|w| self.allows(w[0], w[1]))
            }
            _ => true,
        }
    }
}

/// The grammar's transition structure.
pub fn valid_transitions() -> TransitionMask {
    use Tag::*;
    let mut allowed = [[false; NUM_TAGS]; NUM_TAGS];
    for (from, to) in [(Bef, Bef), (Bef, Beg), (Beg, In), (Beg, Aft), (In, In), (In, Aft), (Aft, Aft)] {
        allowed[from.index()][to.index()] = true;
    }
    TransitionMask {
        allowed,
        start: [true, true, false, false],
        end: [true; NUM_TAGS],
    }
}

/// Tags the minimal contiguous run of tokens covering `span`.
pub fn span_to_tags(tokens: &TokenSequence, span: Option<CharSpan>) -> Result<TagSequence, TaggingError> {
    let n = tokens.len();
    let Some(span) = span else {
        return Ok(TagSequence::all_bef(n));
    };
    let mut covered = tokens
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.start < span.end && t.end > span.start)
        .map(|(i, _)| i);
    let first = covered.next().ok_or(TaggingError::EmptyCover(span))?;
    let last = covered.last().unwrap_or(first);
    let tags = (0..n)
        .map(|i| match i {
            i if i < first => Tag::Bef,
            i if i == first => Tag::Beg,
            i if i <= last => Tag::In,
            _ => Tag::Aft,
        })
        .collect();
    let cover = CharSpan::new(tokens.tokens[first].start, tokens.tokens[last].end);
    if cover != span {
        log::debug!("span {span} does not align to token boundaries; training on cover {cover}");
    }
    Ok(TagSequence(tags))
}

/// Reads the span back off a well-formed tag sequence.
pub fn tags_to_span(tokens: &TokenSequence, tags: &TagSequence) -> Result<Option<CharSpan>, TaggingError> {
    if tags.len() != tokens.len() {
        return Err(TaggingError::Length {
            tags: tags.len(),
            tokens: tokens.len(),
        });
    }
    if !tags.is_well_formed() {
        return Err(TaggingError::Grammar(tags.0.clone()));
    }
    let Some(first) = tags.0.iter().position(|&t| t == Tag::Beg) else {
        return Ok(None);
    };
    let last = tags.0[first + 1..]
        .iter()
        .take_while(|&&t| t == Tag::In)
        .count()
        + first;
    Ok(Some(CharSpan::new(tokens.tokens[first].start, tokens.tokens[last].end)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::Token;
    use Tag::*;

    fn toks(spec: &[(&str, usize, usize)]) -> TokenSequence {
        TokenSequence {
            tokens: spec
                .iter()
                .map(|&(p, s, e)| Token {
                    id: 1,
                    piece: p.into(),
                    start: s,
                    end: e,
                    word_start: !p.starts_with("##"),
                })
                .collect(),
        }
    }

    fn joseph_tokens() -> TokenSequence {
        // "My name is Joseph Schmoe"
        toks(&[
            ("my", 0, 2),
            ("name", 3, 7),
            ("is", 8, 10),
            ("jo", 11, 13),
            ("##se", 13, 15),
            ("##ph", 15, 17),
            ("sch", 18, 21),
            ("##moe", 21, 24),
        ])
    }

    #[test]
    fn joseph_lattice_path() {
        let ts = joseph_tokens();
        let tags = span_to_tags(&ts, Some(CharSpan::new(11, 17))).unwrap();
        assert_eq!(tags.0, [Bef, Bef, Bef, Beg, In, In, Aft, Aft]);
        assert_eq!(tags_to_span(&ts, &tags).unwrap(), Some(CharSpan::new(11, 17)));
    }

    #[test]
    fn absent_span_is_all_bef() {
        let ts = joseph_tokens();
        assert_eq!(span_to_tags(&ts, None).unwrap(), TagSequence::all_bef(8));
        assert_eq!(tags_to_span(&toks(&[("a", 0, 1), ("b", 2, 3)]), &TagSequence(vec![Bef, Bef])).unwrap(), None);
    }

    #[test]
    fn full_cover_and_single_token() {
        let ts = toks(&[("8", 0, 1), ("##pm", 1, 3)]);
        assert_eq!(span_to_tags(&ts, Some(CharSpan::new(0, 3))).unwrap().0, [Beg, In]);
        let ts = toks(&[("7", 0, 1), ("##pm", 1, 3)]);
        assert_eq!(tags_to_span(&ts, &TagSequence(vec![Beg, Aft])).unwrap(), Some(CharSpan::new(0, 1)));
    }

    #[test]
    fn misaligned_span_expands_to_cover() {
        let ts = joseph_tokens();
        let tags = span_to_tags(&ts, Some(CharSpan::new(12, 14))).unwrap();
        assert_eq!(tags.0, [Bef, Bef, Bef, Beg, In, Aft, Aft, Aft]);
        assert_eq!(tags_to_span(&ts, &tags).unwrap(), Some(CharSpan::new(11, 15)));
    }

    #[test]
    fn whitespace_span_is_an_error() {
        let ts = joseph_tokens();
        assert_eq!(
            span_to_tags(&ts, Some(CharSpan::new(2, 3))),
            Err(TaggingError::EmptyCover(CharSpan::new(2, 3)))
        );
    }

    #[test]
    fn grammar_violation_rejected() {
        let ts = toks(&[("a", 0, 1), ("b", 2, 3)]);
        assert!(matches!(tags_to_span(&ts, &TagSequence(vec![Beg, Bef])), Err(TaggingError::Grammar(_))));
        assert!(matches!(tags_to_span(&ts, &TagSequence(vec![Bef])), Err(TaggingError::Length { .. })));
    }

    #[test]
    fn mask_entries() {
        let m = valid_transitions();
        assert!(!m.allows(Beg, Bef));
        assert!(m.allows(In, Aft));
        assert!(!m.allows(Bef, In));
        assert!(!m.allows(Aft, Beg));
        assert_eq!(m.allowed.iter().flatten().filter(|&&b| b).count(), 7);
    }

    #[test]
    fn mask_acceptor_equals_grammar_exhaustively() {
        let m = valid_transitions();
        for len in 1..=6u32 {
            for code in 0..4usize.pow(len) {
                let tags: Vec<Tag> = (0..len)
                    .map(|k| Tag::ALL[(code / 4usize.pow(k)) % 4])
                    .collect();
                assert_eq!(m.accepts(&tags), is_well_formed(&tags), "{tags:?}");
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn random_spans_give_well_formed_tags(n in 1usize..12, a in 0usize..12, b in 0usize..12) {
            // n adjacent two-char tokens separated by one space.
            let spec: Vec<(String, usize, usize)> = (0..n).map(|i| (format!("t{i}"), 3 * i, 3 * i + 2)).collect();
            let ts = TokenSequence { tokens: spec.iter().map(|(p, s, e)| Token { id: 1, piece: p.clone(), start: *s, end: *e, word_start: true }).collect() };
            let (lo, hi) = (a.min(b) % n, a.max(b) % n);
            let (lo, hi) = (lo.min(hi), lo.max(hi));
            let span = CharSpan::new(3 * lo + 1, 3 * hi + 2);
            let tags = span_to_tags(&ts, Some(span)).unwrap();
            proptest::prop_assert!(tags.is_well_formed());
            proptest::prop_assert_eq!(tags_to_span(&ts, &tags).unwrap(), Some(CharSpan::new(3 * lo, 3 * hi + 2)));
        }
    }
}
