//! Token-level tagged corpora: the TSV contract, realis filtering, statistics,
//! document splits and labeled-fraction sampling.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const TRAIN: &str = "train";
pub const DEV: &str = "dev";
pub const TEST: &str = "test";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    O,
    Event,
}

impl Tag {
    pub fn as_str(self) -> &'static str {
        match self {
            Tag::O => "O",
            Tag::Event => "EVENT",
        }
    }

    pub fn parse(s: &str) -> Option<Tag> {
        match s {
            "O" => Some(Tag::O),
            "EVENT" => Some(Tag::Event),
            _ => None,
        }
    }

    /// Class index used by the classifiers: O = 0, EVENT = 1.
    pub fn index(self) -> usize {
        match self {
            Tag::O => 0,
            Tag::Event => 1,
        }
    }

    pub fn is_event(self) -> bool {
        self == Tag::Event
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn index(self) -> usize {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub pos: Option<String>,
    pub attrs: BTreeMap<String, String>,
}

impl Token {
    pub fn new(surface: impl Into<String>) -> Self {
        Token {
            surface: surface.into(),
            pos: None,
            attrs: BTreeMap::new(),
        }
    }

    pub fn with_pos(mut self, pos: impl Into<String>) -> Self {
        self.pos = Some(pos.into());
        self
    }

    pub fn with_attr(mut self, key: impl Into<String>, val: impl Into<String>) -> Self {
        self.attrs.insert(key.into(), val.into());
        self
    }

    fn validate(&self) -> core::result::Result<(), String> {
        if self.surface.is_empty() {
            return Err("empty token surface".to_string());
        }
        if self.surface.chars().any(|c| c == '\t' || c == '\n') {
            return Err("token surface contains a tab or newline".to_string());
        }
        for key in self.attrs.keys() {
            if !is_lower_ident(key) {
                return Err(format!("attribute key {key:?} is not a lowercase identifier"));
            }
        }
        Ok(())
    }
}

fn is_lower_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub doc_id: String,
    pub sent_index: usize,
    pub tokens: Vec<Token>,
    pub tags: Vec<Tag>,
}

impl TaggedSentence {
    pub fn new(doc_id: impl Into<String>, sent_index: usize, tokens: Vec<Token>, tags: Vec<Tag>) -> Result<Self> {
        let s = TaggedSentence {
            doc_id: doc_id.into(),
            sent_index,
            tokens,
            tags,
        };
        s.validate().map_err(Error::Invalid)?;
        Ok(s)
    }

    /// Builds a sentence from `surface/TAG`-free words; tags parallel `words`.
    pub fn from_words(doc_id: &str, sent_index: usize, words: &[&str], tags: &[Tag]) -> Result<Self> {
        let tokens = words.iter().map(|w| Token::new(*w)).collect();
        TaggedSentence::new(doc_id, sent_index, tokens, tags.to_vec())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.tags.iter().filter(|t| t.is_event()).count()
    }

    pub fn key(&self) -> (String, usize) {
        (self.doc_id.clone(), self.sent_index)
    }

    fn validate(&self) -> core::result::Result<(), String> {
        if self.tokens.is_empty() {
            return Err("sentence has no tokens".to_string());
        }
        if self.tokens.len() != self.tags.len() {
            return Err(format!(
                "sentence ({}, {}) has {} tokens but {} tags",
                self.doc_id,
                self.sent_index,
                self.tokens.len(),
                self.tags.len()
            ));
        }
        if self.doc_id.is_empty() || self.doc_id.chars().any(char::is_whitespace) {
            return Err(format!("invalid doc_id {:?}", self.doc_id));
        }
        self.tokens.iter().try_for_each(Token::validate)
    }
}

/// A token sequence with a domain label and no event tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainExample {
    pub doc_id: String,
    pub sent_index: usize,
    pub tokens: Vec<Token>,
    pub domain: Domain,
}

impl DomainExample {
    /// Drops the event tags. This is the only way target sentences enter
    /// adversarial training.
    pub fn unlabeled(s: &TaggedSentence, domain: Domain) -> Self {
        DomainExample {
            doc_id: s.doc_id.clone(),
            sent_index: s.sent_index,
            tokens: s.tokens.clone(),
            domain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub sentences: Vec<TaggedSentence>,
    /// Split name to doc ids. Empty means the corpus is unsplit.
    pub splits: BTreeMap<String, Vec<String>>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, sentences: Vec<TaggedSentence>) -> Self {
        Corpus {
            name: name.into(),
            sentences,
            splits: BTreeMap::new(),
        }
    }

    /// Doc ids in order of first appearance.
    pub fn doc_ids(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for s in &self.sentences {
            if seen.insert(s.doc_id.as_str()) {
                out.push(s.doc_id.clone());
            }
        }
        out
    }

    pub fn n_tokens(&self) -> usize {
        self.sentences.iter().map(TaggedSentence::len).sum()
    }

    pub fn n_events(&self) -> usize {
        self.sentences.iter().map(TaggedSentence::n_events).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.sentences {
            s.validate().map_err(Error::Invalid)?;
        }
        if self.splits.is_empty() {
            return Ok(());
        }
        let all: BTreeSet<&str> = self.sentences.iter().map(|s| s.doc_id.as_str()).collect();
        let mut assigned = BTreeSet::new();
        for (name, docs) in &self.splits {
            for d in docs {
                if !all.contains(d.as_str()) {
                    return Err(Error::invalid(format!("split {name} names unknown document {d}")));
                }
                if !assigned.insert(d.as_str()) {
                    return Err(Error::invalid(format!("document {d} appears in more than one split")));
                }
            }
        }
        if assigned.len() != all.len() {
            return Err(Error::invalid(format!(
                "splits cover {} of {} documents",
                assigned.len(),
                all.len()
            )));
        }
        Ok(())
    }

    /// Sentences of the named split, in corpus order.
    pub fn split(&self, name: &str) -> Option<Vec<&TaggedSentence>> {
        let docs: BTreeSet<&str> = self.splits.get(name)?.iter().map(String::as_str).collect();
        Some(
            self.sentences
                .iter()
                .filter(|s| docs.contains(s.doc_id.as_str()))
                .collect(),
        )
    }

    /// Like [`Corpus::split`], but an unsplit corpus yields every sentence.
    pub fn split_or_all(&self, name: &str) -> Vec<&TaggedSentence> {
        if self.splits.is_empty() {
            self.sentences.iter().collect()
        } else {
            self.split(name).unwrap_or_default()
        }
    }

    /// A new corpus holding only the named split.
    pub fn subset(&self, name: &str) -> Result<Corpus> {
        let sents = self
            .split(name)
            .ok_or_else(|| Error::invalid(format!("corpus {} has no {name} split", self.name)))?;
        Ok(corpus_from(&self.name, sents.into_iter().cloned().collect(), name))
    }
}

fn corpus_from(name: &str, sentences: Vec<TaggedSentence>, split: &str) -> Corpus {
    let mut c = Corpus::new(name, sentences);
    let docs = c.doc_ids();
    if !docs.is_empty() {
        c.splits.insert(split.to_string(), docs);
    }
    c
}

// ---------------------------------------------------------------------------
// TSV

/// Parses the six-column token TSV
/// (`doc_id sent_index token tag pos attrs`, blank line between sentences).
pub fn parse_tsv(name: &str, text: &str) -> Result<Corpus> {
    let mut sentences = Vec::new();
    let mut block: Vec<(usize, &str)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            if !block.is_empty() {
                sentences.push(parse_block(&block)?);
                block.clear();
            }
        } else {
            block.push((i + 1, line));
        }
    }
    if !block.is_empty() {
        sentences.push(parse_block(&block)?);
    }
    if sentences.is_empty() {
        return Err(Error::invalid("no sentences"));
    }
    Ok(Corpus::new(name, sentences))
}

fn parse_block(lines: &[(usize, &str)]) -> Result<TaggedSentence> {
    let mut doc_id = "";
    let mut sent_index = 0;
    let mut tokens = Vec::with_capacity(lines.len());
    let mut tags = Vec::with_capacity(lines.len());
    for (k, &(lineno, line)) in lines.iter().enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 6 tab-separated columns, found {}", cols.len()),
            });
        }
        let idx: usize = cols[1].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("sent_index {:?} is not a non-negative integer", cols[1]),
        })?;
        if k == 0 {
            doc_id = cols[0];
            sent_index = idx;
        } else if cols[0] != doc_id || idx != sent_index {
            return Err(Error::Validation {
                line: lineno,
                msg: format!("token belongs to ({}, {idx}) inside sentence ({doc_id}, {sent_index})", cols[0]),
            });
        }
        let tag = Tag::parse(cols[3]).ok_or_else(|| Error::Validation {
            line: lineno,
            msg: format!("unknown tag {:?} (expected EVENT or O)", cols[3]),
        })?;
        let mut token = Token::new(cols[2]);
        if cols[4] != "_" {
            token.pos = Some(cols[4].to_string());
        }
        if cols[5] != "_" {
            for kv in cols[5].split(';').filter(|kv| !kv.is_empty()) {
                let (k, v) = kv.split_once('=').ok_or_else(|| Error::Parse {
                    line: lineno,
                    msg: format!("attribute {kv:?} is not key=val"),
                })?;
                token.attrs.insert(k.to_string(), v.to_string());
            }
        }
        token.validate().map_err(|msg| Error::Validation { line: lineno, msg })?;
        tokens.push(token);
        tags.push(tag);
    }
    let s = TaggedSentence {
        doc_id: doc_id.to_string(),
        sent_index,
        tokens,
        tags,
    };
    s.validate().map_err(|msg| Error::Validation { line: lines[0].0, msg })?;
    Ok(s)
}

/// Canonical TSV rendering; `parse_tsv` followed by this is byte-identical
/// on canonical input.
pub fn write_tsv(corpus: &Corpus) -> String {
    let mut out = String::new();
    for s in &corpus.sentences {
        for (tok, tag) in s.tokens.iter().zip(&s.tags) {
            let pos = tok.pos.as_deref().unwrap_or("_");
            let attrs = if tok.attrs.is_empty() {
                "_".to_string()
            } else {
                let parts: Vec<String> = tok.attrs.iter().map(|(k, v)| format!("{k}={v}")).collect();
                parts.join(";")
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                s.doc_id,
                s.sent_index,
                tok.surface,
                tag.as_str(),
                pos,
                attrs
            );
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Realis filtering

/// Which token attributes mark an event as not having occurred.
///
/// Values are compared case-insensitively.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealisPolicy {
    pub drop_tenses: Vec<String>,
    /// A present `modality` attribute drops the event unless its value is
    /// one of these.
    pub assertion_modalities: Vec<String>,
    pub drop_polarities: Vec<String>,
}

impl Default for RealisPolicy {
    fn default() -> Self {
        RealisPolicy {
            drop_tenses: alloc::vec!["FUTURE".to_string()],
            assertion_modalities: alloc::vec!["NONE".to_string(), "ASSERTED".to_string()],
            drop_polarities: alloc::vec!["NEG".to_string()],
        }
    }
}

impl RealisPolicy {
    pub fn drops(&self, token: &Token) -> bool {
        let any = |set: &[String], v: &str| set.iter().any(|s| s.eq_ignore_ascii_case(v));
        if let Some(t) = token.attrs.get("tense") {
            if any(&self.drop_tenses, t) {
                return true;
            }
        }
        if let Some(m) = token.attrs.get("modality") {
            if !any(&self.assertion_modalities, m) {
                return true;
            }
        }
        if let Some(p) = token.attrs.get("polarity") {
            if any(&self.drop_polarities, p) {
                return true;
            }
        }
        false
    }
}

/// Turns EVENT into O for every token the policy marks as unrealized.
pub fn filter_unrealized_events(corpus: &Corpus, policy: &RealisPolicy) -> Corpus {
    let mut out = corpus.clone();
    for s in &mut out.sentences {
        for (tok, tag) in s.tokens.iter().zip(s.tags.iter_mut()) {
            if tag.is_event() && policy.drops(tok) {
                *tag = Tag::O;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Statistics

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub n_tokens: usize,
    pub n_events: usize,
    pub density: f64,
}

impl CorpusStats {
    pub fn from_counts(n_docs: usize, n_tokens: usize, n_events: usize) -> Result<Self> {
        if n_tokens == 0 {
            return Err(Error::invalid("cannot compute event density of an empty corpus"));
        }
        Ok(CorpusStats {
            n_docs,
            n_tokens,
            n_events,
            density: n_events as f64 / n_tokens as f64,
        })
    }

    /// Density in percent, rounded to two decimals for display.
    pub fn density_display(&self) -> String {
        format!("{:.2}%", self.density * 100.0)
    }
}

pub fn compute_stats(corpus: &Corpus) -> Result<CorpusStats> {
    CorpusStats::from_counts(corpus.doc_ids().len(), corpus.n_tokens(), corpus.n_events())
}

// ---------------------------------------------------------------------------
// Splits and sampling

/// Document-level train/dev/test split, deterministic per seed.
pub fn split_corpus(corpus: &Corpus, fractions: (f64, f64, f64), seed: u64) -> Result<Corpus> {
    let (ftr, fdev, ftest) = fractions;
    if [ftr, fdev, ftest].iter().any(|f| !(0.0..=1.0).contains(f)) || (ftr + fdev + ftest - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions ({ftr}, {fdev}, {ftest}) must be in [0,1] and sum to 1"
        )));
    }
    let mut docs = corpus.doc_ids();
    let n = docs.len();
    if n < 3 {
        return Err(Error::invalid(format!("need at least 3 documents to split, found {n}")));
    }
    let mut rng = seed::rng(seed, "split");
    docs.shuffle(&mut rng);

    let want = |f: f64| -> usize {
        let k = (f * n as f64).round() as usize;
        if f > 0.0 {
            k.max(1)
        } else {
            k
        }
    };
    let n_dev = want(fdev);
    let n_test = want(ftest);
    if n_dev + n_test >= n {
        return Err(Error::invalid(format!("{n} documents are too few for fractions {fractions:?}")));
    }
    let n_train = n - n_dev - n_test;

    let mut out = corpus.clone();
    out.splits.clear();
    let mut it = docs.into_iter();
    let mut take = |k: usize| -> Vec<String> {
        let mut v: Vec<String> = it.by_ref().take(k).collect();
        v.sort();
        v
    };
    out.splits.insert(TRAIN.to_string(), take(n_train));
    out.splits.insert(DEV.to_string(), take(n_dev));
    out.splits.insert(TEST.to_string(), take(n_test));
    Ok(out)
}

/// Number of labeled sentences for `percent` of `n`: half-up rounding,
/// clamped to at least one.
pub fn labeled_count(n: usize, percent: f64) -> usize {
    let k = (percent * n as f64 + 0.5).floor() as usize;
    k.clamp(1, n.max(1))
}

/// Sentence-level sample of `percent` of the train split (or of the whole
/// corpus when unsplit). Both halves keep corpus order.
pub fn sample_labeled_fraction(corpus: &Corpus, percent: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(percent > 0.0 && percent < 1.0) {
        return Err(Error::invalid(format!("labeled fraction {percent} must lie in (0, 1)")));
    }
    let pool = corpus.split_or_all(TRAIN);
    if pool.is_empty() {
        return Err(Error::invalid(format!("corpus {} has no training sentences", corpus.name)));
    }
    let k = labeled_count(pool.len(), percent);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut rng = seed::rng(seed, "labeled-fraction");
    order.shuffle(&mut rng);
    let mut chosen = alloc::vec![false; pool.len()];
    for &i in &order[..k] {
        chosen[i] = true;
    }
    let (mut lab, mut rest) = (Vec::new(), Vec::new());
    for (i, s) in pool.into_iter().enumerate() {
        if chosen[i] {
            lab.push(s.clone());
        } else {
            rest.push(s.clone());
        }
    }
    Ok((corpus_from(&corpus.name, lab, TRAIN), corpus_from(&corpus.name, rest, TRAIN)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const FIXTURE: &str = "d1\t0\tJohn\tO\tNNP\t_\nd1\t0\twas\tO\tVBD\t_\nd1\t0\tborn\tEVENT\tVBN\ttense=PAST\n\n";

    fn toy(n_docs: usize, sents_per_doc: usize) -> Corpus {
        let mut sents = Vec::new();
        for d in 0..n_docs {
            for s in 0..sents_per_doc {
                sents.push(
                    TaggedSentence::from_words(&format!("doc{d:03}"), s, &["a", "b"], &[Tag::O, Tag::Event]).unwrap(),
                );
            }
        }
        Corpus::new("toy", sents)
    }

    #[test]
    fn three_line_fixture() {
        let c = parse_tsv("fx", FIXTURE).unwrap();
        assert_eq!(c.sentences.len(), 1);
        assert_eq!(c.n_tokens(), 3);
        assert_eq!(c.n_events(), 1);
        assert_eq!(c.sentences[0].tokens[2].attrs.get("tense").map(String::as_str), Some("PAST"));
        assert_eq!(write_tsv(&c), FIXTURE);
    }

    #[test]
    fn empty_file_has_no_sentences() {
        assert_eq!(parse_tsv("e", "").unwrap_err(), Error::Invalid("no sentences".into()));
        assert!(parse_tsv("e", "\n\n").is_err());
    }

    #[test]
    fn unknown_tag_names_line() {
        let text = "d1\t0\tJohn\tO\t_\t_\nd1\t0\tran\tEVNT\t_\t_\n";
        match parse_tsv("x", text).unwrap_err() {
            Error::Validation { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("EVNT"));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn wrong_column_count_is_parse_error() {
        let text = "d1\t0\tJohn\tO\t_\t_\nd1\t0\tran\tO\n";
        assert!(matches!(parse_tsv("x", text), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn mixed_sentence_ids_rejected() {
        let text = "d1\t0\tJohn\tO\t_\t_\nd1\t1\tran\tO\t_\t_\n";
        assert!(matches!(parse_tsv("x", text), Err(Error::Validation { line: 2, .. })));
    }

    #[test]
    fn realis_default_policy() {
        let p = RealisPolicy::default();
        let fut = Token::new("leave").with_attr("tense", "FUTURE");
        let neg = Token::new("leave").with_attr("polarity", "NEG");
        let modal = Token::new("leave").with_attr("modality", "would");
        let asserted = Token::new("left").with_attr("modality", "none").with_attr("tense", "PAST");
        let bare = Token::new("left");
        assert!(p.drops(&fut) && p.drops(&neg) && p.drops(&modal));
        assert!(!p.drops(&asserted) && !p.drops(&bare));

        let s = TaggedSentence::new("d", 0, vec![fut, bare], vec![Tag::Event, Tag::Event]).unwrap();
        let c = filter_unrealized_events(&Corpus::new("c", vec![s]), &p);
        assert_eq!(c.sentences[0].tags, vec![Tag::O, Tag::Event]);
    }

    #[test]
    fn realis_identity_without_events() {
        let s = TaggedSentence::new("d", 0, vec![Token::new("x").with_attr("tense", "FUTURE")], vec![Tag::O]).unwrap();
        let c = Corpus::new("c", vec![s]);
        assert_eq!(filter_unrealized_events(&c, &RealisPolicy::default()), c);
    }

    #[test]
    fn stats_density() {
        let s = TaggedSentence::from_words("d", 0, &["a", "b", "c", "d"], &[Tag::O, Tag::Event, Tag::O, Tag::O]).unwrap();
        let st = compute_stats(&Corpus::new("c", vec![s])).unwrap();
        assert_eq!((st.n_docs, st.n_tokens, st.n_events), (1, 4, 1));
        assert_eq!(st.density, 0.25);
        assert!(compute_stats(&Corpus::new("e", vec![])).is_err());
    }

    #[test]
    fn published_densities_round_as_reported() {
        let lit = CorpusStats::from_counts(100, 210_532, 7849).unwrap();
        assert_eq!(lit.density_display(), "3.73%");
        let tb = CorpusStats::from_counts(183, 80_281, 8103).unwrap();
        assert!((tb.density * 100.0 - 10.10).abs() <= 0.02);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let c = toy(10, 2);
        let a = split_corpus(&c, (0.8, 0.1, 0.1), 7).unwrap();
        let b = split_corpus(&c, (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(a.splits, b.splits);
        assert_eq!(a.splits[TRAIN].len(), 8);
        assert_eq!(a.splits[DEV].len(), 1);
        assert_eq!(a.splits[TEST].len(), 1);
        a.validate().unwrap();

        let c = toy(100, 1);
        let s = split_corpus(&c, (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!(
            (s.splits[TRAIN].len(), s.splits[DEV].len(), s.splits[TEST].len()),
            (80, 10, 10)
        );
    }

    #[test]
    fn split_rejects_bad_input() {
        assert!(split_corpus(&toy(10, 1), (0.5, 0.5, 0.5), 0).is_err());
        assert!(split_corpus(&toy(2, 1), (0.8, 0.1, 0.1), 0).is_err());
    }

    #[test]
    fn labeled_fraction_rounding() {
        let c = toy(200, 1);
        let (l, r) = sample_labeled_fraction(&c, 0.01, 3).unwrap();
        assert_eq!((l.sentences.len(), r.sentences.len()), (2, 198));
        let (l2, _) = sample_labeled_fraction(&c, 0.01, 3).unwrap();
        assert_eq!(l, l2);

        let c = toy(50, 1);
        let (l, r) = sample_labeled_fraction(&c, 0.01, 3).unwrap();
        assert_eq!((l.sentences.len(), r.sentences.len()), (1, 49));
        assert!(sample_labeled_fraction(&c, 0.0, 3).is_err());
        assert!(sample_labeled_fraction(&c, 1.0, 3).is_err());
    }

    #[test]
    fn labeled_fraction_uses_train_split_only() {
        let c = split_corpus(&toy(10, 3), (0.8, 0.1, 0.1), 5).unwrap();
        let (l, r) = sample_labeled_fraction(&c, 0.1, 9).unwrap();
        assert_eq!(l.sentences.len() + r.sentences.len(), 24);
        let train: BTreeSet<&str> = c.splits[TRAIN].iter().map(String::as_str).collect();
        assert!(l.sentences.iter().chain(&r.sentences).all(|s| train.contains(s.doc_id.as_str())));
    }
}
