//! Corpus, embedding and contextual-feature files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use evadapt_core::corpus::{parse_tsv, write_tsv, Corpus};
use evadapt_core::features::{collapse_subtokens, Alignment, ContextualFeatureStore, EmbeddingTable, Vocab};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const CORPUS_TSV: &str = "corpus.tsv";
pub const CORPUS_META: &str = "corpus.meta.json";
pub const FEATURE_INDEX: &str = "index.json";

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e))?;
    text.push('\n');
    write_file(path, text)
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| format_err(path, e))
}

pub(crate) fn format_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

/// Core errors carry line numbers but no file; attach the path.
fn in_file(path: &Path, e: evadapt_core::Error) -> Error {
    match e {
        evadapt_core::Error::Parse { .. } | evadapt_core::Error::Validation { .. } | evadapt_core::Error::Invalid(_) => {
            format_err(path, e)
        }
        other => Error::Core(other),
    }
}

// ---------------------------------------------------------------------------
// Corpora

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusMeta {
    pub name: String,
    #[serde(default)]
    pub splits: BTreeMap<String, Vec<String>>,
}

fn meta_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(CORPUS_META)
    } else {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        path.with_file_name(format!("{stem}.meta.json"))
    }
}

/// Loads a corpus from a directory (`corpus.tsv` + `corpus.meta.json`) or
/// from a bare TSV file, whose optional sidecar is `<stem>.meta.json`.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let tsv = if path.is_dir() { path.join(CORPUS_TSV) } else { path.to_path_buf() };
    let meta_file = meta_path(path);
    let meta: Option<CorpusMeta> = if meta_file.is_file() {
        Some(read_json(&meta_file)?)
    } else {
        None
    };
    let default_name = if path.is_dir() { path } else { tsv.as_path() }
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into());
    let name = meta.as_ref().map_or(default_name, |m| m.name.clone());
    let mut corpus = parse_tsv(&name, &read_text(&tsv)?).map_err(|e| in_file(&tsv, e))?;
    if corpus.sentences.is_empty() {
        return Err(format_err(&tsv, "corpus has no sentences"));
    }
    if let Some(m) = meta {
        corpus.splits = m.splits;
        corpus.validate().map_err(|e| in_file(&meta_file, e))?;
    }
    Ok(corpus)
}

/// Writes `dir/corpus.tsv` and `dir/corpus.meta.json`.
pub fn save_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    write_file(&dir.join(CORPUS_TSV), write_tsv(corpus))?;
    write_json(
        &dir.join(CORPUS_META),
        &CorpusMeta {
            name: corpus.name.clone(),
            splits: corpus.splits.clone(),
        },
    )
}

// ---------------------------------------------------------------------------
// Vocabularies

/// One word per line, in index order (PAD and UNK included).
pub fn vocab_text(v: &Vocab) -> String {
    let mut s = String::new();
    for w in v.words() {
        s.push_str(w);
        s.push('\n');
    }
    s
}

pub fn parse_vocab(text: &str, case_fold: bool) -> Vocab {
    Vocab::from_words(text.lines().map(str::to_string).collect(), case_fold)
}

// ---------------------------------------------------------------------------
// Word vectors

/// Parses word2vec text format: a `count dim` header, then `word v1 .. vd`.
pub fn parse_word2vec(text: &str) -> std::result::Result<(usize, Vec<(String, Vec<f64>)>), String> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or("empty embedding file")?;
    let mut h = header.split_whitespace();
    let (Some(n), Some(d), None) = (h.next(), h.next(), h.next()) else {
        return Err(format!("line 1: expected `count dim` header, got {header:?}"));
    };
    let n: usize = n.parse().map_err(|_| format!("line 1: bad vector count {n:?}"))?;
    let dim: usize = d.parse().map_err(|_| format!("line 1: bad dimension {d:?}"))?;
    let mut out = Vec::with_capacity(n);
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().unwrap_or_default().to_string();
        let v = parts
            .map(|x| x.parse::<f64>().map_err(|_| format!("line {}: bad value {x:?}", i + 1)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if v.len() != dim {
            return Err(format!("line {}: {} values, header says {dim}", i + 1, v.len()));
        }
        out.push((word, v));
    }
    if out.len() != n {
        return Err(format!("header declares {n} vectors, file has {}", out.len()));
    }
    Ok((dim, out))
}

pub fn word2vec_text(vectors: &[(String, Vec<f64>)], dim: usize) -> String {
    let mut s = format!("{} {dim}\n", vectors.len());
    for (w, v) in vectors {
        s.push_str(w);
        for x in v {
            s.push(' ');
            s.push_str(&format!("{x:.6}"));
        }
        s.push('\n');
    }
    s
}

pub fn load_pretrained_embeddings(path: &Path, vocab: &Vocab, expected_dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let (dim, vectors) = parse_word2vec(&read_text(path)?).map_err(|m| format_err(path, m))?;
    Ok(EmbeddingTable::from_vectors(vectors, dim, vocab, expected_dim, seed)?)
}

// ---------------------------------------------------------------------------
// Contextual features

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureEntry {
    pub doc_id: String,
    pub sent_index: usize,
    /// Relative to the feature directory.
    pub file: String,
    /// In f32 elements, not bytes.
    pub offset: usize,
    pub n_subtokens: usize,
    /// Token index of each subtoken.
    pub alignment: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureIndex {
    pub dim: usize,
    pub entries: Vec<FeatureEntry>,
}

fn f32s_le(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Reads a feature directory and collapses subtokens to tokens. Sentences
/// of `corpus` without an entry are reported when they are first indexed,
/// not here; entries are checked against the corpus' token counts.
pub fn import_contextual_features(
    dir: &Path,
    corpus: &Corpus,
    rule: Alignment,
    expected_dim: usize,
) -> Result<ContextualFeatureStore> {
    let index_path = dir.join(FEATURE_INDEX);
    let index: FeatureIndex = read_json(&index_path)?;
    if index.dim != expected_dim {
        return Err(format_err(
            &index_path,
            format!("features have dimension {}, feature plan expects {expected_dim}", index.dim),
        ));
    }
    let lengths: BTreeMap<(&str, usize), usize> = corpus
        .sentences
        .iter()
        .map(|s| ((s.doc_id.as_str(), s.sent_index), s.len()))
        .collect();
    let mut files: BTreeMap<&str, Vec<f32>> = BTreeMap::new();
    let mut store = ContextualFeatureStore::new(index.dim);
    for e in &index.entries {
        let Some(&n_tokens) = lengths.get(&(e.doc_id.as_str(), e.sent_index)) else {
            continue;
        };
        let where_ = || format!("entry ({}, {})", e.doc_id, e.sent_index);
        if e.alignment.len() != e.n_subtokens {
            return Err(format_err(
                &index_path,
                format!("{}: {} alignment indices for {} subtokens", where_(), e.alignment.len(), e.n_subtokens),
            ));
        }
        if !files.contains_key(e.file.as_str()) {
            files.insert(&e.file, f32s_le(&read_bytes(&dir.join(&e.file))?));
        }
        let data = &files[e.file.as_str()];
        let end = e.offset + e.n_subtokens * index.dim;
        if end > data.len() {
            return Err(format_err(
                &dir.join(&e.file),
                format!("{} reads past the end of the file", where_()),
            ));
        }
        let rows = collapse_subtokens(&data[e.offset..end], index.dim, &e.alignment, n_tokens, rule)
            .map_err(|err| format_err(&index_path, format!("{}: {err}", where_())))?;
        store.insert(&e.doc_id, e.sent_index, rows)?;
    }
    Ok(store)
}

/// Writes subtoken matrices as one binary file per document plus the index.
/// Each item is `(doc_id, sent_index, alignment, n_sub x dim values)`.
pub fn export_contextual_features(dir: &Path, dim: usize, items: &[(String, usize, Vec<usize>, Vec<f32>)]) -> Result<()> {
    let mut per_doc: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
    let mut entries = Vec::with_capacity(items.len());
    for (doc, sent, alignment, values) in items {
        if values.len() != alignment.len() * dim {
            return Err(Error::Core(evadapt_core::Error::Shape(format!(
                "({doc}, {sent}): {} values for {} subtokens of dimension {dim}",
                values.len(),
                alignment.len()
            ))));
        }
        let buf = per_doc.entry(doc.as_str()).or_default();
        let offset = buf.len() / 4;
        buf.extend(values.iter().flat_map(|x| x.to_le_bytes()));
        entries.push(FeatureEntry {
            doc_id: doc.clone(),
            sent_index: *sent,
            file: feature_file_name(doc),
            offset,
            n_subtokens: alignment.len(),
            alignment: alignment.clone(),
        });
    }
    for (doc, bytes) in per_doc {
        write_file(&dir.join(feature_file_name(doc)), bytes)?;
    }
    write_json(&dir.join(FEATURE_INDEX), &FeatureIndex { dim, entries })
}

fn feature_file_name(doc: &str) -> String {
    let safe: String = doc
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.f32")
}
