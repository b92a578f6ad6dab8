//! Shared vocabulary, frozen word vectors, precomputed contextual features
//! and padded batches.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DomainExample, Tag, TaggedSentence, Token};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Matrix;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Bound of the uniform init for rows missing from a pretrained file and for
/// trainable POS rows.
pub const OOV_INIT_BOUND: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: BTreeMap<String, usize>,
    case_fold: bool,
}

impl Vocab {
    /// Counts `items` and keeps those seen at least `min_count` times,
    /// ordered by frequency (descending) then lexicographically.
    pub fn from_counts<'a>(items: impl IntoIterator<Item = &'a str>, min_count: usize, case_fold: bool) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for w in items {
            *counts.entry(fold(w, case_fold)).or_default() += 1;
        }
        let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut words = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        words.extend(kept.into_iter().map(|(w, _)| w));
        Vocab::from_words(words, case_fold)
    }

    /// Rebuilds a vocab from its word list (index order, PAD and UNK first).
    pub fn from_words(words: Vec<String>, case_fold: bool) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { words, index, case_fold }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 2
    }

    pub fn case_fold(&self) -> bool {
        self.case_fold
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(fold(word, self.case_fold).as_str()).copied()
    }

    pub fn lookup(&self, word: &str) -> usize {
        self.get(word).unwrap_or(UNK)
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }
}

fn fold(w: &str, case_fold: bool) -> String {
    if case_fold {
        w.to_lowercase()
    } else {
        w.to_string()
    }
}

/// Shared word vocabulary over the union of both domains' tokens.
pub fn build_vocab(source: &Corpus, target: &Corpus, min_count: usize, case_fold: bool) -> Vocab {
    let words = source
        .sentences
        .iter()
        .chain(&target.sentences)
        .flat_map(|s| s.tokens.iter())
        .map(|t| t.surface.as_str());
    Vocab::from_counts(words, min_count, case_fold)
}

/// POS tag vocabulary over both domains (tokens without a tag are skipped).
pub fn build_pos_vocab(source: &Corpus, target: &Corpus) -> Vocab {
    let tags = source
        .sentences
        .iter()
        .chain(&target.sentences)
        .flat_map(|s| s.tokens.iter())
        .filter_map(|t| t.pos.as_deref());
    Vocab::from_counts(tags, 1, false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    /// `|V| x dim`, row `PAD` all zero.
    pub rows: Matrix,
    pub trainable: bool,
}

impl EmbeddingTable {
    /// Copies vectors for in-vocabulary words; everything else gets a seeded
    /// uniform(-0.05, 0.05) row. With case folding the first spelling in the
    /// file wins.
    pub fn from_vectors(
        vectors: impl IntoIterator<Item = (String, Vec<f64>)>,
        declared_dim: usize,
        vocab: &Vocab,
        expected_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if declared_dim != expected_dim {
            return Err(Error::Shape(format!(
                "embedding file has dimension {declared_dim}, feature plan expects {expected_dim}"
            )));
        }
        let dim = declared_dim;
        let mut rows = Matrix::zeros(vocab.len(), dim);
        let mut filled = vec![false; vocab.len()];
        for (word, v) in vectors {
            if v.len() != dim {
                return Err(Error::Shape(format!("vector for {word:?} has {} values, expected {dim}", v.len())));
            }
            if let Some(i) = vocab.get(&word) {
                if i != PAD && !filled[i] {
                    rows.row_mut(i).copy_from_slice(&v);
                    filled[i] = true;
                }
            }
        }
        let mut rng = seed::rng(seed, "oov-embeddings");
        for (i, done) in filled.iter().enumerate().skip(1) {
            if !done {
                rows.row_mut(i)
                    .iter_mut()
                    .for_each(|x| *x = rng.random_range(-OOV_INIT_BOUND..OOV_INIT_BOUND));
            }
        }
        Ok(EmbeddingTable {
            dim,
            rows,
            trainable: false,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.rows.row(i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Static,
    StaticPos,
    Contextual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturePlan {
    pub kind: FeatureKind,
    pub word_dim: usize,
    pub pos_dim: usize,
    pub contextual_dim: usize,
}

impl Default for FeaturePlan {
    fn default() -> Self {
        FeaturePlan {
            kind: FeatureKind::Static,
            word_dim: 100,
            pos_dim: 50,
            contextual_dim: 3072,
        }
    }
}

impl FeaturePlan {
    /// Width of the fixed (non-trainable) part of each token vector.
    pub fn base_dim(&self) -> usize {
        match self.kind {
            FeatureKind::Static | FeatureKind::StaticPos => self.word_dim,
            FeatureKind::Contextual => self.contextual_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self.kind {
            FeatureKind::Static => self.word_dim,
            FeatureKind::StaticPos => self.word_dim + self.pos_dim,
            FeatureKind::Contextual => self.contextual_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    FirstSubtoken,
    #[default]
    MeanSubtokens,
}

/// Collapses an `n_sub x dim` subtoken matrix to `n_tokens x dim` given the
/// token index of every subtoken.
pub fn collapse_subtokens(
    sub: &[f32],
    dim: usize,
    alignment: &[usize],
    n_tokens: usize,
    rule: Alignment,
) -> Result<Vec<f32>> {
    if sub.len() != alignment.len() * dim {
        return Err(Error::Shape(format!(
            "{} subtoken values do not match {} subtokens of dimension {dim}",
            sub.len(),
            alignment.len()
        )));
    }
    let mut out = vec![0.0f32; n_tokens * dim];
    let mut counts = vec![0usize; n_tokens];
    for (s, &t) in alignment.iter().enumerate() {
        if t >= n_tokens {
            return Err(Error::Shape(format!("subtoken {s} aligned to token {t}, sentence has {n_tokens}")));
        }
        let src = &sub[s * dim..(s + 1) * dim];
        let dst = &mut out[t * dim..(t + 1) * dim];
        match rule {
            Alignment::MeanSubtokens => dst.iter_mut().zip(src).for_each(|(d, x)| *d += x),
            Alignment::FirstSubtoken if counts[t] == 0 => dst.copy_from_slice(src),
            Alignment::FirstSubtoken => {}
        }
        counts[t] += 1;
    }
    if let Some(t) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Shape(format!("token {t} has no subtokens")));
    }
    if rule == Alignment::MeanSubtokens {
        for (t, &c) in counts.iter().enumerate() {
            let inv = 1.0 / c as f32;
            out[t * dim..(t + 1) * dim].iter_mut().for_each(|x| *x *= inv);
        }
    }
    Ok(out)
}

/// Token-level contextual vectors keyed by `(doc_id, sent_index)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContextualFeatureStore {
    pub dim: usize,
    entries: BTreeMap<(String, usize), Vec<f32>>,
}

impl ContextualFeatureStore {
    pub fn new(dim: usize) -> Self {
        ContextualFeatureStore {
            dim,
            entries: BTreeMap::new(),
        }
    }

    /// Inserts `rows` (`n_tokens x dim`, row-major).
    pub fn insert(&mut self, doc_id: &str, sent_index: usize, rows: Vec<f32>) -> Result<()> {
        if self.dim == 0 || rows.len() % self.dim != 0 {
            return Err(Error::Shape(format!(
                "feature block of {} values is not a multiple of dimension {}",
                rows.len(),
                self.dim
            )));
        }
        self.entries.insert((doc_id.to_string(), sent_index), rows);
        Ok(())
    }

    pub fn get(&self, doc_id: &str, sent_index: usize) -> Option<&[f32]> {
        self.entries
            .get(&(doc_id.to_string(), sent_index))
            .map(Vec::as_slice)
    }

    pub fn n_rows(&self, doc_id: &str, sent_index: usize) -> Option<usize> {
        self.get(doc_id, sent_index).map(|r| r.len() / self.dim)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Merges another store of the same dimension.
    pub fn extend(&mut self, other: ContextualFeatureStore) -> Result<()> {
        if other.dim != self.dim && !other.is_empty() {
            return Err(Error::Shape(format!("cannot merge stores of dimension {} and {}", self.dim, other.dim)));
        }
        self.entries.extend(other.entries);
        Ok(())
    }
}

/// Everything needed to turn sentences into model inputs.
#[derive(Debug, Clone)]
pub struct FeatureContext {
    pub plan: FeaturePlan,
    pub vocab: Vocab,
    pub pos_vocab: Vocab,
    pub embeddings: Option<EmbeddingTable>,
    pub store: Option<ContextualFeatureStore>,
}

/// A sentence mapped to vocabulary indices; tags are absent for unlabeled
/// data.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedSentence {
    pub doc_id: String,
    pub sent_index: usize,
    pub word_ids: Vec<usize>,
    pub pos_ids: Vec<usize>,
    pub tags: Option<Vec<Tag>>,
}

impl IndexedSentence {
    pub fn len(&self) -> usize {
        self.word_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_ids.is_empty()
    }

    pub fn with_tags(&self, tags: Vec<Tag>) -> IndexedSentence {
        assert_eq!(tags.len(), self.len());
        IndexedSentence {
            tags: Some(tags),
            ..self.clone()
        }
    }
}

impl FeatureContext {
    pub fn check(&self) -> Result<()> {
        match self.plan.kind {
            FeatureKind::Static | FeatureKind::StaticPos => {
                let table = self
                    .embeddings
                    .as_ref()
                    .ok_or_else(|| Error::invalid("static features need an embedding table"))?;
                if table.dim != self.plan.word_dim || table.rows.rows != self.vocab.len() {
                    return Err(Error::Shape(format!(
                        "embedding table is {}x{}, expected {}x{}",
                        table.rows.rows,
                        table.dim,
                        self.vocab.len(),
                        self.plan.word_dim
                    )));
                }
            }
            FeatureKind::Contextual => {
                let store = self
                    .store
                    .as_ref()
                    .ok_or_else(|| Error::invalid("contextual features need a feature store"))?;
                if store.dim != self.plan.contextual_dim {
                    return Err(Error::Shape(format!(
                        "feature store has dimension {}, plan expects {}",
                        store.dim, self.plan.contextual_dim
                    )));
                }
            }
        }
        Ok(())
    }

    fn index_tokens(&self, doc_id: &str, sent_index: usize, tokens: &[Token]) -> Result<IndexedSentence> {
        if self.plan.kind == FeatureKind::Contextual {
            let store = self
                .store
                .as_ref()
                .ok_or_else(|| Error::invalid("contextual features need a feature store"))?;
            match store.n_rows(doc_id, sent_index) {
                None => {
                    return Err(Error::MissingFeatures {
                        doc_id: doc_id.to_string(),
                        sent_index,
                    })
                }
                Some(n) if n != tokens.len() => {
                    return Err(Error::Shape(format!(
                        "({doc_id}, {sent_index}) has {n} feature rows for {} tokens",
                        tokens.len()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(IndexedSentence {
            doc_id: doc_id.to_string(),
            sent_index,
            word_ids: tokens.iter().map(|t| self.vocab.lookup(&t.surface)).collect(),
            pos_ids: tokens
                .iter()
                .map(|t| t.pos.as_deref().map_or(UNK, |p| self.pos_vocab.lookup(p)))
                .collect(),
            tags: None,
        })
    }

    pub fn index(&self, s: &TaggedSentence) -> Result<IndexedSentence> {
        let mut out = self.index_tokens(&s.doc_id, s.sent_index, &s.tokens)?;
        out.tags = Some(s.tags.clone());
        Ok(out)
    }

    pub fn index_unlabeled(&self, e: &DomainExample) -> Result<IndexedSentence> {
        self.index_tokens(&e.doc_id, e.sent_index, &e.tokens)
    }

    pub fn index_all<'a>(&self, sents: impl IntoIterator<Item = &'a TaggedSentence>) -> Result<Vec<IndexedSentence>> {
        sents.into_iter().map(|s| self.index(s)).collect()
    }
}

/// A padded batch: `B x L` positions flattened batch-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub batch_size: usize,
    pub max_len: usize,
    pub lengths: Vec<usize>,
    pub mask: Vec<bool>,
    /// `(B*L) x plan.base_dim()`; padded rows are zero.
    pub inputs: Matrix,
    pub pos_ids: Vec<usize>,
    /// Padded with O; absent when any sentence is unlabeled.
    pub tags: Option<Vec<Tag>>,
}

impl Batch {
    pub fn assemble(sents: &[&IndexedSentence], ctx: &FeatureContext) -> Result<Batch> {
        if sents.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let b = sents.len();
        let l = sents.iter().map(|s| s.len()).max().unwrap_or(0);
        if l == 0 {
            return Err(Error::invalid("batch contains an empty sentence"));
        }
        let dim = ctx.plan.base_dim();
        let mut inputs = Matrix::zeros(b * l, dim);
        let mut mask = vec![false; b * l];
        let mut pos_ids = vec![PAD; b * l];
        let labeled = sents.iter().all(|s| s.tags.is_some());
        let mut tags = vec![Tag::O; b * l];
        for (bi, s) in sents.iter().enumerate() {
            let feats = match ctx.plan.kind {
                FeatureKind::Contextual => Some(
                    ctx.store
                        .as_ref()
                        .and_then(|st| st.get(&s.doc_id, s.sent_index))
                        .ok_or_else(|| Error::MissingFeatures {
                            doc_id: s.doc_id.clone(),
                            sent_index: s.sent_index,
                        })?,
                ),
                _ => None,
            };
            if let Some(f) = feats {
                if f.len() != s.len() * dim {
                    return Err(Error::Shape(format!(
                        "({}, {}) features do not match {} tokens",
                        s.doc_id,
                        s.sent_index,
                        s.len()
                    )));
                }
            }
            for t in 0..s.len() {
                let r = bi * l + t;
                mask[r] = true;
                pos_ids[r] = s.pos_ids[t];
                match feats {
                    Some(f) => inputs
                        .row_mut(r)
                        .iter_mut()
                        .zip(&f[t * dim..(t + 1) * dim])
                        .for_each(|(d, x)| *d = f64::from(*x)),
                    None => {
                        let table = ctx
                            .embeddings
                            .as_ref()
                            .ok_or_else(|| Error::invalid("static features need an embedding table"))?;
                        inputs.row_mut(r).copy_from_slice(table.row(s.word_ids[t]));
                    }
                }
                if let Some(tg) = &s.tags {
                    tags[r] = tg[t];
                }
            }
        }
        Ok(Batch {
            batch_size: b,
            max_len: l,
            lengths: sents.iter().map(|s| s.len()).collect(),
            mask,
            inputs,
            pos_ids,
            tags: labeled.then_some(tags),
        })
    }

    /// Pads dense per-sentence input matrices (each `len x dim`) into a
    /// batch without going through a vocabulary.
    pub fn from_sequences(seqs: &[Matrix], tags: Option<&[Vec<Tag>]>) -> Result<Batch> {
        if seqs.is_empty() || seqs.iter().any(|m| m.rows == 0) {
            return Err(Error::invalid("empty batch or empty sequence"));
        }
        let dim = seqs[0].cols;
        if seqs.iter().any(|m| m.cols != dim) {
            return Err(Error::Shape("sequences differ in width".to_string()));
        }
        let b = seqs.len();
        let l = seqs.iter().map(|m| m.rows).max().unwrap_or(0);
        let mut inputs = Matrix::zeros(b * l, dim);
        let mut mask = vec![false; b * l];
        let mut padded_tags = vec![Tag::O; b * l];
        for (bi, m) in seqs.iter().enumerate() {
            for t in 0..m.rows {
                inputs.row_mut(bi * l + t).copy_from_slice(m.row(t));
                mask[bi * l + t] = true;
                if let Some(tg) = tags {
                    padded_tags[bi * l + t] = tg[bi][t];
                }
            }
        }
        Ok(Batch {
            batch_size: b,
            max_len: l,
            lengths: seqs.iter().map(|m| m.rows).collect(),
            mask,
            inputs,
            pos_ids: vec![PAD; b * l],
            tags: tags.map(|_| padded_tags),
        })
    }

    pub fn n_real(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Indexes and pads `sentences` under the context's feature plan.
pub fn encode_batch(sentences: &[TaggedSentence], ctx: &FeatureContext) -> Result<Batch> {
    let idx = ctx.index_all(sentences)?;
    let refs: Vec<&IndexedSentence> = idx.iter().collect();
    Batch::assemble(&refs, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Tag::{Event as E, O};

    fn corpus(words: &[&str]) -> Corpus {
        let tags = vec![O; words.len()];
        Corpus::new("c", vec![TaggedSentence::from_words("d", 0, words, &tags).unwrap()])
    }

    pub(crate) fn static_ctx(vocab: Vocab, dim: usize) -> FeatureContext {
        let table = EmbeddingTable::from_vectors(Vec::new(), dim, &vocab, dim, 1).unwrap();
        FeatureContext {
            plan: FeaturePlan {
                kind: FeatureKind::Static,
                word_dim: dim,
                ..FeaturePlan::default()
            },
            vocab,
            pos_vocab: Vocab::from_counts([], 1, false),
            embeddings: Some(table),
            store: None,
        }
    }

    #[test]
    fn vocab_union() {
        let v = build_vocab(&corpus(&["a", "b"]), &corpus(&["b", "c"]), 1, false);
        assert_eq!(v.words(), &["<pad>", "<unk>", "b", "a", "c"]);
        assert_eq!(v.lookup("zzz"), UNK);
        let v2 = build_vocab(&corpus(&["a", "b"]), &corpus(&["b", "c"]), 1, false);
        assert_eq!(v, v2);
    }

    #[test]
    fn vocab_min_count() {
        let v = build_vocab(&corpus(&["a", "b"]), &corpus(&["c"]), 2, false);
        assert_eq!(v.words(), &["<pad>", "<unk>"]);
    }

    #[test]
    fn case_folding() {
        let v = build_vocab(&corpus(&["The"]), &corpus(&["the"]), 2, true);
        assert_eq!(v.lookup("THE"), 2);
    }

    #[test]
    fn pretrained_rows() {
        let v = build_vocab(&corpus(&["cat", "dog"]), &corpus(&["cat"]), 1, false);
        let vecs = vec![("cat".to_string(), vec![0.5, -1.0, 2.0])];
        let t = EmbeddingTable::from_vectors(vecs, 3, &v, 3, 9).unwrap();
        assert_eq!(t.row(v.lookup("cat")), &[0.5, -1.0, 2.0]);
        assert!(t.row(v.lookup("dog")).iter().all(|x| x.abs() < 0.05));
        assert!(t.row(PAD).iter().all(|x| *x == 0.0));
        assert!(!t.trainable);
        assert!(EmbeddingTable::from_vectors(Vec::new(), 300, &v, 100, 9).is_err());
    }

    #[test]
    fn subtoken_rules() {
        let sub = [2.0f32, 2.0, 4.0, 4.0];
        let mean = collapse_subtokens(&sub, 2, &[0, 0], 1, Alignment::MeanSubtokens).unwrap();
        assert_eq!(mean, vec![3.0, 3.0]);
        let first = collapse_subtokens(&sub, 2, &[0, 0], 1, Alignment::FirstSubtoken).unwrap();
        assert_eq!(first, vec![2.0, 2.0]);
        assert!(collapse_subtokens(&sub, 2, &[0, 0], 2, Alignment::MeanSubtokens).is_err());
        assert!(collapse_subtokens(&sub, 2, &[0, 5], 2, Alignment::MeanSubtokens).is_err());
    }

    #[test]
    fn batch_masks_and_unk() {
        let v = build_vocab(&corpus(&["a", "b", "c"]), &corpus(&["d"]), 1, false);
        let ctx = static_ctx(v, 4);
        let s1 = TaggedSentence::from_words("d", 0, &["a", "b", "zz"], &[O, E, O]).unwrap();
        let s2 = TaggedSentence::from_words("d", 1, &["a", "b", "c", "d", "a"], &[O; 5]).unwrap();
        let b = encode_batch(&[s1, s2], &ctx).unwrap();
        assert_eq!((b.batch_size, b.max_len), (2, 5));
        assert_eq!(
            b.mask,
            vec![true, true, true, false, false, true, true, true, true, true]
        );
        assert_eq!(b.inputs.rows, 10);
        assert_eq!(b.inputs.cols, 4);
        assert_eq!(b.inputs.row(2), ctx.embeddings.as_ref().unwrap().row(UNK));
        assert!(b.inputs.row(3).iter().all(|x| *x == 0.0));
        assert_eq!(b.tags.as_ref().unwrap()[1], E);
    }

    #[test]
    fn missing_contextual_key_named() {
        let v = build_vocab(&corpus(&["a"]), &corpus(&["b"]), 1, false);
        let mut store = ContextualFeatureStore::new(2);
        store.insert("d", 0, vec![1.0, 2.0]).unwrap();
        let ctx = FeatureContext {
            plan: FeaturePlan {
                kind: FeatureKind::Contextual,
                contextual_dim: 2,
                ..FeaturePlan::default()
            },
            vocab: v,
            pos_vocab: Vocab::from_counts([], 1, false),
            embeddings: None,
            store: Some(store),
        };
        let ok = TaggedSentence::from_words("d", 0, &["a"], &[O]).unwrap();
        let missing = TaggedSentence::from_words("d", 7, &["a"], &[O]).unwrap();
        let b = encode_batch(&[ok.clone()], &ctx).unwrap();
        assert_eq!(b.inputs.data, vec![1.0, 2.0]);
        assert_eq!(
            encode_batch(&[ok, missing], &ctx).unwrap_err(),
            Error::MissingFeatures {
                doc_id: "d".into(),
                sent_index: 7
            }
        );
    }
}
