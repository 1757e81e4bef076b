//! Annotated sentences and the text formats they travel in.
//!
//! Three annotation formats are supported, plus raw text:
//!
//! * segmented text: one sentence per line, words separated by whitespace,
//!   syllables inside a word joined by `_` (`Tôi là sinh_viên`);
//! * tagged text: segmented text where every word carries `/TAG`
//!   (`Tôi/PRON là/VERB sinh_viên/NOUN`);
//! * CoNLL-U: blank-line separated blocks of ten tab-separated columns, of
//!   which ID, FORM, UPOS (XPOS as a fallback), HEAD and DEPREL are read;
//! * raw text: one unsegmented sentence per line, syllables separated by
//!   whitespace.

use std::fmt;

use log::warn;
use thiserror::Error;

/// Word-boundary tag of one syllable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryTag {
    /// Word-initial syllable.
    B,
    /// Word-internal syllable.
    I,
    /// Outside any lexical word; never present in gold data and read as `B`.
    O,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 3] = [BoundaryTag::B, BoundaryTag::I, BoundaryTag::O];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }
}

impl fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BoundaryTag::B => "B",
            BoundaryTag::I => "I",
            BoundaryTag::O => "O",
        };
        f.write_str(s)
    }
}

/// Inclusive syllable range `[first, last]` covered by one word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WordSpan {
    pub first: usize,
    pub last: usize,
}

impl WordSpan {
    pub fn new(first: usize, last: usize) -> Self {
        debug_assert!(first <= last);
        WordSpan { first, last }
    }

    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct CorpusError {
    pub line: usize,
    pub message: String,
}

impl CorpusError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        CorpusError {
            line,
            message: message.into(),
        }
    }
}

/// A sentence with whatever annotation layers its source provides.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct AnnotatedSentence {
    pub syllables: Vec<String>,
    pub boundary_tags: Option<Vec<BoundaryTag>>,
    pub words: Option<Vec<WordSpan>>,
    pub pos_tags: Option<Vec<String>>,
    /// 1-based head word per word; 0 is the artificial root.
    pub heads: Option<Vec<usize>>,
    pub deprels: Option<Vec<String>>,
}

impl AnnotatedSentence {
    /// Unsegmented sentence.
    pub fn raw(syllables: Vec<String>) -> Self {
        AnnotatedSentence {
            syllables,
            ..Default::default()
        }
    }

    /// Segmented sentence from per-word syllable lists.
    pub fn from_words<S: AsRef<str>>(words: &[Vec<S>]) -> Self {
        let mut syllables = Vec::new();
        let mut spans = Vec::with_capacity(words.len());
        for w in words {
            let first = syllables.len();
            syllables.extend(w.iter().map(|s| s.as_ref().to_string()));
            spans.push(WordSpan::new(first, syllables.len() - 1));
        }
        let mut s = AnnotatedSentence::raw(syllables);
        s.set_words(spans);
        s
    }

    /// Installs word spans and the boundary tags they imply.
    pub fn set_words(&mut self, spans: Vec<WordSpan>) {
        self.boundary_tags = Some(tags_from_spans(&spans, self.syllables.len()));
        self.words = Some(spans);
    }

    pub fn len(&self) -> usize {
        self.syllables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.syllables.is_empty()
    }

    pub fn word_count(&self) -> Option<usize> {
        self.words.as_ref().map(Vec::len)
    }

    /// Underscore-joined surface form of a word span.
    pub fn span_form(&self, span: WordSpan) -> String {
        self.syllables[span.first..=span.last].join("_")
    }

    pub fn word_forms(&self) -> Option<Vec<String>> {
        self.words
            .as_ref()
            .map(|ws| ws.iter().map(|w| self.span_form(*w)).collect())
    }

    /// Copy carrying only the syllables.
    pub fn unsegmented(&self) -> Self {
        AnnotatedSentence::raw(self.syllables.clone())
    }

    pub fn parse_tree(&self) -> Option<ParseTree> {
        let heads = self.heads.clone()?;
        let labels = self
            .deprels
            .clone()
            .unwrap_or_else(|| vec!["_".to_string(); heads.len()]);
        Some(ParseTree { heads, labels })
    }
}

/// BIO tags implied by a partition into words.
pub fn tags_from_spans(spans: &[WordSpan], len: usize) -> Vec<BoundaryTag> {
    let mut tags = vec![BoundaryTag::I; len];
    for span in spans {
        tags[span.first] = BoundaryTag::B;
    }
    tags
}

/// Word spans from boundary tags together with the number of repairs made.
///
/// `O` closes a single-syllable word. An `I` that opens the sentence or
/// follows an `O` cannot continue a word and is promoted to `B`; each such
/// promotion counts as one repair.
pub fn spans_from_tags(tags: &[BoundaryTag]) -> (Vec<WordSpan>, usize) {
    let mut spans: Vec<WordSpan> = Vec::new();
    let mut repairs = 0;
    let mut open = false;
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            BoundaryTag::B => {
                spans.push(WordSpan::new(i, i));
                open = true;
            }
            BoundaryTag::O => {
                spans.push(WordSpan::new(i, i));
                open = false;
            }
            BoundaryTag::I if open => {
                spans.last_mut().expect("open word").last = i;
            }
            BoundaryTag::I => {
                repairs += 1;
                spans.push(WordSpan::new(i, i));
                open = true;
            }
        }
    }
    (spans, repairs)
}

/// Head indices and labels of an `n`-word dependency tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseTree {
    pub heads: Vec<usize>,
    pub labels: Vec<String>,
}

impl ParseTree {
    pub fn validate(&self) -> Result<(), String> {
        validate_heads(&self.heads)
    }

    pub fn is_projective(&self) -> bool {
        is_projective(&self.heads)
    }
}

/// Checks that 1-based `heads` form a tree rooted at 0.
pub fn validate_heads(heads: &[usize]) -> Result<(), String> {
    let n = heads.len();
    for (d, &h) in heads.iter().enumerate() {
        if h > n {
            return Err(format!("word {} has head {h} outside 0..={n}", d + 1));
        }
        if h == d + 1 {
            return Err(format!("word {} is its own head", d + 1));
        }
    }
    for start in 1..=n {
        let mut cur = start;
        let mut steps = 0;
        while cur != 0 {
            cur = heads[cur - 1];
            steps += 1;
            if steps > n {
                return Err(format!("word {start} lies on a cycle"));
            }
        }
    }
    Ok(())
}

/// True iff no two arcs, root arcs included, cross when drawn above the
/// sentence. `heads` are 1-based with 0 for the root.
pub fn is_projective(heads: &[usize]) -> bool {
    let arcs: Vec<(usize, usize)> = heads
        .iter()
        .enumerate()
        .map(|(d, &h)| {
            let d = d + 1;
            (h.min(d), h.max(d))
        })
        .collect();
    for (i, &(a1, b1)) in arcs.iter().enumerate() {
        for &(a2, b2) in &arcs[i + 1..] {
            if (a1 < a2 && a2 < b1 && b1 < b2) || (a2 < a1 && a1 < b2 && b2 < b1) {
                return false;
            }
        }
    }
    true
}

fn split_word(token: &str, line: usize) -> Result<Vec<String>, CorpusError> {
    let syllables: Vec<String> = token.split('_').map(str::to_string).collect();
    if syllables.iter().any(String::is_empty) {
        return Err(CorpusError::new(
            line,
            format!("word {token:?} contains an empty syllable"),
        ));
    }
    Ok(syllables)
}

/// One unsegmented sentence per non-empty line.
pub fn read_raw(text: &str) -> Vec<AnnotatedSentence> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let syllables: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if syllables.is_empty() {
            warn!("line {}: empty sentence skipped", i + 1);
            continue;
        }
        out.push(AnnotatedSentence::raw(syllables));
    }
    out
}

pub fn write_raw(sentences: &[AnnotatedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&s.syllables.join(" "));
        out.push('\n');
    }
    out
}

/// Segmented text: words separated by whitespace, syllables by `_`.
pub fn read_segmented(text: &str) -> Result<Vec<AnnotatedSentence>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            warn!("line {}: empty sentence skipped", i + 1);
            continue;
        }
        let words = tokens
            .iter()
            .map(|t| split_word(t, i + 1))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(AnnotatedSentence::from_words(&words));
    }
    Ok(out)
}

fn segmented_line(s: &AnnotatedSentence, tags: Option<&[String]>) -> String {
    let forms = s
        .word_forms()
        .unwrap_or_else(|| s.syllables.clone());
    let mut parts = Vec::with_capacity(forms.len());
    for (j, form) in forms.into_iter().enumerate() {
        match tags {
            Some(t) => parts.push(format!("{form}/{}", t[j])),
            None => parts.push(form),
        }
    }
    parts.join(" ")
}

/// Inverse of [`read_segmented`]; unsegmented sentences are written one
/// syllable per word.
pub fn write_segmented(sentences: &[AnnotatedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&segmented_line(s, None));
        out.push('\n');
    }
    out
}

/// Tagged text: `word/TAG` tokens; the tag follows the last `/`.
pub fn read_tagged(text: &str) -> Result<Vec<AnnotatedSentence>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            warn!("line {}: empty sentence skipped", i + 1);
            continue;
        }
        let mut words = Vec::with_capacity(tokens.len());
        let mut tags = Vec::with_capacity(tokens.len());
        for t in tokens {
            let (word, tag) = t
                .rsplit_once('/')
                .filter(|(w, tag)| !w.is_empty() && !tag.is_empty())
                .ok_or_else(|| CorpusError::new(i + 1, format!("token {t:?} lacks a /TAG suffix")))?;
            words.push(split_word(word, i + 1)?);
            tags.push(tag.to_string());
        }
        let mut s = AnnotatedSentence::from_words(&words);
        s.pos_tags = Some(tags);
        out.push(s);
    }
    Ok(out)
}

/// Inverse of [`read_tagged`]. Sentences without POS tags are an error.
pub fn write_tagged(sentences: &[AnnotatedSentence]) -> Result<String, CorpusError> {
    let mut out = String::new();
    for (i, s) in sentences.iter().enumerate() {
        let tags = s
            .pos_tags
            .as_deref()
            .ok_or_else(|| CorpusError::new(i + 1, "sentence has no POS tags"))?;
        out.push_str(&segmented_line(s, Some(tags)));
        out.push('\n');
    }
    Ok(out)
}

fn column(value: &str) -> Option<String> {
    (value != "_").then(|| value.to_string())
}

fn finish_block(
    rows: &mut Vec<(usize, Vec<String>)>,
    start_line: usize,
    out: &mut Vec<AnnotatedSentence>,
) -> Result<(), CorpusError> {
    if rows.is_empty() {
        return Ok(());
    }
    let n = rows.len();
    let mut words = Vec::with_capacity(n);
    let mut pos = Vec::with_capacity(n);
    let mut heads = Vec::with_capacity(n);
    let mut rels = Vec::with_capacity(n);
    for (k, (line, cols)) in rows.iter().enumerate() {
        let id: usize = cols[0]
            .parse()
            .map_err(|_| CorpusError::new(*line, format!("non-integer ID {:?}", cols[0])))?;
        if id != k + 1 {
            return Err(CorpusError::new(*line, format!("expected ID {} but found {id}", k + 1)));
        }
        words.push(split_word(&cols[1], *line)?);
        pos.push(column(&cols[3]).or_else(|| column(&cols[4])));
        heads.push(match cols[6].as_str() {
            "_" => None,
            h => Some(
                h.parse::<usize>()
                    .map_err(|_| CorpusError::new(*line, format!("non-integer head {h:?}")))?,
            ),
        });
        rels.push(column(&cols[7]));
    }
    let mut s = AnnotatedSentence::from_words(&words);
    if pos.iter().all(Option::is_some) {
        s.pos_tags = Some(pos.into_iter().flatten().collect());
    }
    if heads.iter().all(Option::is_some) {
        let heads: Vec<usize> = heads.into_iter().flatten().collect();
        for (k, &h) in heads.iter().enumerate() {
            if h > n {
                return Err(CorpusError::new(
                    rows[k].0,
                    format!("head {h} out of range for a {n}-word sentence"),
                ));
            }
        }
        validate_heads(&heads).map_err(|m| CorpusError::new(start_line, m))?;
        s.heads = Some(heads);
    }
    if rels.iter().all(Option::is_some) {
        s.deprels = Some(rels.into_iter().flatten().collect());
    }
    out.push(s);
    rows.clear();
    Ok(())
}

/// CoNLL-U reader. Comment lines, multiword-token ranges and empty nodes are
/// skipped. Errors carry the offending line number.
pub fn read_conllu(text: &str) -> Result<Vec<AnnotatedSentence>, CorpusError> {
    let mut out = Vec::new();
    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
    let mut start_line = 1;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() {
            finish_block(&mut rows, start_line, &mut out)?;
            continue;
        }
        if trimmed.starts_with('#') {
            continue;
        }
        if rows.is_empty() {
            start_line = lineno;
        }
        let cols: Vec<String> = trimmed.split('\t').map(str::to_string).collect();
        if cols.len() != 10 {
            return Err(CorpusError::new(
                lineno,
                format!("expected 10 tab-separated columns, found {}", cols.len()),
            ));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        rows.push((lineno, cols));
    }
    finish_block(&mut rows, start_line, &mut out)?;
    Ok(out)
}

/// CoNLL-U writer; columns the sentence does not carry are `_`.
pub fn write_conllu(sentences: &[AnnotatedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        let spans = s.words.clone().unwrap_or_else(|| {
            (0..s.syllables.len()).map(|i| WordSpan::new(i, i)).collect()
        });
        for (j, span) in spans.iter().enumerate() {
            let get = |v: &Option<Vec<String>>| {
                v.as_ref().map_or_else(|| "_".to_string(), |x| x[j].clone())
            };
            let head = s
                .heads
                .as_ref()
                .map_or_else(|| "_".to_string(), |h| h[j].to_string());
            out.push_str(&format!(
                "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t_\n",
                j + 1,
                s.span_form(*span),
                get(&s.pos_tags),
                head,
                get(&s.deprels),
            ));
        }
        out.push('\n');
    }
    out
}
