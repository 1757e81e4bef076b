//! Initial word-boundary tags by greedy longest matching against a lexicon.

use std::collections::BTreeSet;

use crate::corpus::{AnnotatedSentence, BoundaryTag, CorpusError};

/// A set of multi-syllable words.
///
/// Single-syllable entries are dropped on insertion: a one-syllable match is
/// indistinguishable from the no-match fallback.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeSet<Vec<String>>,
    max_len: usize,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<S: AsRef<str>>(&mut self, syllables: &[S]) {
        if syllables.len() < 2 {
            return;
        }
        self.max_len = self.max_len.max(syllables.len());
        self.entries
            .insert(syllables.iter().map(|s| s.as_ref().to_string()).collect());
    }

    pub fn contains<S: AsRef<str>>(&self, syllables: &[S]) -> bool {
        let key: Vec<String> = syllables.iter().map(|s| s.as_ref().to_string()).collect();
        self.entries.contains(&key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Entries as underscore-joined words, in sorted order.
    pub fn words(&self) -> impl Iterator<Item = String> + '_ {
        self.entries.iter().map(|e| e.join("_"))
    }

    /// Every multi-syllable word type in segmented sentences.
    pub fn from_sentences<'a>(sentences: impl IntoIterator<Item = &'a AnnotatedSentence>) -> Self {
        let mut lex = Lexicon::new();
        for s in sentences {
            if let Some(words) = &s.words {
                for w in words {
                    lex.insert(&s.syllables[w.first..=w.last]);
                }
            }
        }
        lex
    }

    /// One word per line, syllables joined by `_`.
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut lex = Lexicon::new();
        for (i, line) in text.lines().enumerate() {
            let word = line.trim();
            if word.is_empty() {
                continue;
            }
            let syllables: Vec<&str> = word.split('_').collect();
            if syllables.iter().any(|s| s.is_empty()) {
                return Err(CorpusError {
                    line: i + 1,
                    message: format!("malformed lexicon entry {word:?}"),
                });
            }
            lex.insert(&syllables);
        }
        Ok(lex)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for w in self.words() {
            out.push_str(&w);
            out.push('\n');
        }
        out
    }

    /// Greedy left-to-right longest match. A match of length `k` emits
    /// `B I^(k-1)`; a position with no match emits a lone `B`.
    pub fn initial_tags<S: AsRef<str>>(&self, syllables: &[S]) -> Vec<BoundaryTag> {
        let m = syllables.len();
        let mut tags = Vec::with_capacity(m);
        let mut key: Vec<String> = Vec::with_capacity(self.max_len);
        let mut i = 0;
        while i < m {
            let longest = (2..=self.max_len.min(m - i)).rev().find(|&k| {
                key.clear();
                key.extend(syllables[i..i + k].iter().map(|s| s.as_ref().to_string()));
                self.entries.contains(&key)
            });
            let k = longest.unwrap_or(1);
            tags.push(BoundaryTag::B);
            tags.extend(std::iter::repeat(BoundaryTag::I).take(k - 1));
            i += k;
        }
        tags
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::corpus::read_segmented;
    use BoundaryTag::*;

    fn lex(words: &[&str]) -> Lexicon {
        Lexicon::parse(&words.join("\n")).unwrap()
    }

    #[test]
    fn figure_sentence() {
        let l = lex(&["sinh_viên"]);
        assert_eq!(l.initial_tags(&["Tôi", "là", "sinh", "viên"]), [B, B, B, I]);
    }

    #[test]
    fn empty_lexicon_gives_all_b() {
        assert_eq!(Lexicon::new().initial_tags(&["a", "b", "c"]), [B, B, B]);
    }

    #[test]
    fn longest_entry_wins() {
        let l = lex(&["a_b", "a_b_c", "b_c"]);
        assert_eq!(l.initial_tags(&["a", "b", "c"]), [B, I, I]);
        assert_eq!(l.initial_tags(&["x", "b", "c", "a", "b"]), [B, B, I, B, I]);
    }

    #[test]
    fn matching_is_case_sensitive() {
        let l = lex(&["sinh_viên"]);
        assert_eq!(l.initial_tags(&["Sinh", "viên"]), [B, B]);
    }

    #[test]
    fn build_from_corpus() {
        let s = read_segmented("Tôi là sinh_viên").unwrap();
        let l = Lexicon::from_sentences(&s);
        assert_eq!(l.words().collect::<Vec<_>>(), ["sinh_viên"]);
        assert!(Lexicon::from_sentences(&[]).is_empty());
        let s = read_segmented("a_b x\na_b").unwrap();
        assert_eq!(Lexicon::from_sentences(&s).len(), 1);
    }

    #[test]
    fn single_syllable_entries_ignored() {
        let l = lex(&["a", "b_c"]);
        assert_eq!(l.len(), 1);
        assert_eq!(l.to_text(), "b_c\n");
        assert!(Lexicon::parse("a__b").is_err());
    }

    /// Exhaustive oracle: at each position try every length and take the
    /// longest one present.
    fn oracle(l: &Lexicon, syl: &[String]) -> Vec<BoundaryTag> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < syl.len() {
            let mut best = 1;
            for k in 2..=syl.len() - i {
                if l.contains(&syl[i..i + k]) {
                    best = k;
                }
            }
            out.push(B);
            out.extend(std::iter::repeat(I).take(best - 1));
            i += best;
        }
        out
    }

    proptest! {
        #[test]
        fn matches_exhaustive_oracle(
            entries in prop::collection::vec(prop::collection::vec(0u8..3, 2..4), 0..6),
            input in prop::collection::vec(0u8..3, 1..12),
        ) {
            let mut l = Lexicon::new();
            for e in &entries {
                let syl: Vec<String> = e.iter().map(|c| c.to_string()).collect();
                l.insert(&syl);
            }
            let syl: Vec<String> = input.iter().map(|c| c.to_string()).collect();
            let tags = l.initial_tags(&syl);
            prop_assert_eq!(tags.len(), syl.len());
            prop_assert_eq!(tags[0], B);
            prop_assert_eq!(&tags, &oracle(&l, &syl));
            prop_assert_eq!(tags, l.initial_tags(&syl));
        }
    }
}
