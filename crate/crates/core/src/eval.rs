//! Token-level precision/recall/F1 with EVENT as the positive class,
//! transfer matrices and disagreement export.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Domain, Tag, TaggedSentence, TEST};
use crate::error::{Error, Result};
use crate::features::{Batch, FeatureContext, IndexedSentence};
use crate::nets::SequenceTagger;

/// Sentences per inference batch.
pub const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn add(&mut self, pred: Tag, gold: Tag) {
        match (pred.is_event(), gold.is_event()) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => {}
        }
    }

    pub fn merge(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of `p` and `r`, 0 when both are 0. Works in any unit.
pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// One decimal, as in the results tables; `value` is already in points.
pub fn display_points(value: f64) -> String {
    format!("{value:.1}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub model: String,
    #[serde(flatten)]
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EvalReport {
    pub fn from_counts(counts: Counts) -> Self {
        let precision = ratio(counts.tp, counts.tp + counts.fp);
        let recall = ratio(counts.tp, counts.tp + counts.fn_);
        EvalReport {
            dataset: String::new(),
            model: String::new(),
            counts,
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }

    pub fn named(mut self, dataset: &str, model: &str) -> Self {
        self.dataset = dataset.to_string();
        self.model = model.to_string();
        self
    }

    /// `(P, R, F1)` in points with one decimal.
    pub fn display(&self) -> (String, String, String) {
        (
            display_points(100.0 * self.precision),
            display_points(100.0 * self.recall),
            display_points(100.0 * self.f1),
        )
    }
}

/// Counts over positions where `mask` is set. `masks` may be omitted, in
/// which case every position counts.
pub fn score(pred: &[Vec<Tag>], gold: &[Vec<Tag>], masks: Option<&[Vec<bool>]>) -> Result<EvalReport> {
    if pred.len() != gold.len() {
        return Err(Error::invalid(format!(
            "{} predicted sequences for {} gold sequences",
            pred.len(),
            gold.len()
        )));
    }
    if let Some(m) = masks {
        if m.len() != gold.len() {
            return Err(Error::invalid(format!("{} masks for {} sequences", m.len(), gold.len())));
        }
    }
    let mut counts = Counts::default();
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::invalid(format!(
                "sequence {i}: {} predicted tags for {} gold tags",
                p.len(),
                g.len()
            )));
        }
        let mask = masks.map(|m| &m[i]);
        if let Some(m) = mask {
            if m.len() != g.len() {
                return Err(Error::invalid(format!("sequence {i}: mask length {} for {} tags", m.len(), g.len())));
            }
        }
        for t in 0..g.len() {
            if mask.is_none_or(|m| m[t]) {
                counts.add(p[t], g[t]);
            }
        }
    }
    Ok(EvalReport::from_counts(counts))
}

/// Argmax over (O, EVENT) logits; an exact tie goes to O.
pub fn argmax_tag(o: f64, event: f64) -> Tag {
    if event > o {
        Tag::Event
    } else {
        Tag::O
    }
}

/// Tags every sentence with `model` in evaluation mode.
pub fn predict_indexed(
    model: &dyn SequenceTagger,
    ctx: &FeatureContext,
    sents: &[&IndexedSentence],
    domain: Domain,
) -> Result<Vec<Vec<Tag>>> {
    let mut out = Vec::with_capacity(sents.len());
    for chunk in sents.chunks(EVAL_BATCH) {
        let batch = Batch::assemble(chunk, ctx)?;
        let logits = model.event_logits(&batch, domain)?;
        for (b, s) in chunk.iter().enumerate() {
            let base = b * batch.max_len;
            out.push(
                (0..s.len())
                    .map(|t| argmax_tag(logits.get(base + t, 0), logits.get(base + t, 1)))
                    .collect(),
            );
        }
    }
    Ok(out)
}

pub fn predict(
    model: &dyn SequenceTagger,
    ctx: &FeatureContext,
    sents: &[&TaggedSentence],
    domain: Domain,
) -> Result<Vec<Vec<Tag>>> {
    let idx = ctx.index_all(sents.iter().copied())?;
    let refs: Vec<&IndexedSentence> = idx.iter().collect();
    predict_indexed(model, ctx, &refs, domain)
}

/// Predicts and scores against the sentences' own tags.
pub fn evaluate(
    model: &dyn SequenceTagger,
    ctx: &FeatureContext,
    sents: &[&TaggedSentence],
    domain: Domain,
) -> Result<EvalReport> {
    let pred = predict(model, ctx, sents, domain)?;
    let gold: Vec<Vec<Tag>> = sents.iter().map(|s| s.tags.clone()).collect();
    score(&pred, &gold, None)
}

/// Same as [`evaluate`] for pre-indexed labeled sentences.
pub fn evaluate_indexed(
    model: &dyn SequenceTagger,
    ctx: &FeatureContext,
    sents: &[&IndexedSentence],
    domain: Domain,
) -> Result<EvalReport> {
    let pred = predict_indexed(model, ctx, sents, domain)?;
    let mut gold = Vec::with_capacity(sents.len());
    for s in sents {
        gold.push(
            s.tags
                .clone()
                .ok_or_else(|| Error::invalid(format!("({}, {}) has no gold tags", s.doc_id, s.sent_index)))?,
        );
    }
    score(&pred, &gold, None)
}

/// A trained model together with the inputs it was trained under.
pub struct MatrixEntry<'a> {
    pub id: String,
    /// Name of the corpus the model was trained on.
    pub train_domain: String,
    pub model: &'a dyn SequenceTagger,
    pub ctx: &'a FeatureContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub model: String,
    pub train_domain: String,
    /// One cell per column, in column order.
    pub cells: Vec<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub columns: Vec<String>,
    pub rows: Vec<TransferRow>,
}

/// In-domain cells score the training corpus's test split; out-of-domain
/// cells score the whole other corpus. A model sees its own training domain
/// as [`Domain::Source`] and every other corpus as [`Domain::Target`].
pub fn build_transfer_matrix(models: &[MatrixEntry<'_>], corpora: &[&Corpus]) -> Result<TransferMatrix> {
    let mut rows = Vec::with_capacity(models.len());
    for m in models {
        let mut cells = Vec::with_capacity(corpora.len());
        for c in corpora {
            let in_domain = c.name == m.train_domain;
            let (sents, dataset, domain) = if in_domain {
                let s = c
                    .split(TEST)
                    .ok_or_else(|| Error::invalid(format!("corpus {} has no {TEST} split", c.name)))?;
                (s, format!("{}/{TEST}", c.name), Domain::Source)
            } else {
                (c.sentences.iter().collect(), c.name.clone(), Domain::Target)
            };
            if sents.is_empty() {
                return Err(Error::invalid(format!("evaluation set {dataset} is empty")));
            }
            cells.push(evaluate(m.model, m.ctx, &sents, domain)?.named(&dataset, &m.id));
        }
        rows.push(TransferRow {
            model: m.id.clone(),
            train_domain: m.train_domain.clone(),
            cells,
        });
    }
    Ok(TransferMatrix {
        columns: corpora.iter().map(|c| c.name.clone()).collect(),
        rows,
    })
}

impl TransferMatrix {
    /// Aligned text table with P/R/F1 per evaluation corpus; in-domain cells
    /// are starred.
    pub fn to_text(&self) -> String {
        let mut header = Vec::from(["model".to_string(), "trained on".to_string()]);
        for c in &self.columns {
            for m in ["P", "R", "F1"] {
                header.push(format!("{c} {m}"));
            }
        }
        let mut lines = Vec::from([header]);
        for r in &self.rows {
            let mut line = Vec::from([r.model.clone(), r.train_domain.clone()]);
            for (c, cell) in self.columns.iter().zip(&r.cells) {
                let star = if *c == r.train_domain { "*" } else { "" };
                let (p, rc, f) = cell.display();
                line.push(p);
                line.push(rc);
                line.push(format!("{f}{star}"));
            }
            lines.push(line);
        }
        let n = lines[0].len();
        let widths: Vec<usize> = (0..n)
            .map(|i| lines.iter().map(|l| l[i].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (s, w))| if i < 2 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out.push_str("* in-domain (test split)\n");
        out
    }
}

/// A sentence where model B found gold events that model A missed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub doc_id: String,
    pub sent_index: usize,
    pub token_indices: Vec<usize>,
    /// Space-joined tokens with the disputed ones wrapped in `**`.
    pub text: String,
}

/// Sentences with a gold EVENT token that `pred_a` tags O and `pred_b`
/// tags EVENT, in corpus order, at most `limit` of them.
pub fn disagreements(
    gold: &[&TaggedSentence],
    pred_a: &[Vec<Tag>],
    pred_b: &[Vec<Tag>],
    limit: usize,
) -> Result<Vec<Disagreement>> {
    if pred_a.len() != gold.len() || pred_b.len() != gold.len() {
        return Err(Error::invalid("prediction count does not match sentence count"));
    }
    let mut out = Vec::new();
    for ((s, a), b) in gold.iter().zip(pred_a).zip(pred_b) {
        if out.len() >= limit {
            break;
        }
        if a.len() != s.len() || b.len() != s.len() {
            return Err(Error::invalid(format!("({}, {}) prediction length mismatch", s.doc_id, s.sent_index)));
        }
        let hits: Vec<usize> = (0..s.len())
            .filter(|&t| s.tags[t].is_event() && !a[t].is_event() && b[t].is_event())
            .collect();
        if hits.is_empty() {
            continue;
        }
        let words: Vec<String> = s
            .tokens
            .iter()
            .enumerate()
            .map(|(t, tok)| {
                if hits.contains(&t) {
                    format!("**{}**", tok.surface)
                } else {
                    tok.surface.clone()
                }
            })
            .collect();
        out.push(Disagreement {
            doc_id: s.doc_id.clone(),
            sent_index: s.sent_index,
            token_indices: hits,
            text: words.join(" "),
        });
    }
    Ok(out)
}

/// Runs both models over `sents` and collects their disagreements.
#[allow(clippy::too_many_arguments)]
pub fn export_disagreements(
    model_a: &dyn SequenceTagger,
    ctx_a: &FeatureContext,
    model_b: &dyn SequenceTagger,
    ctx_b: &FeatureContext,
    sents: &[&TaggedSentence],
    domain: Domain,
    limit: usize,
) -> Result<Vec<Disagreement>> {
    let a = predict(model_a, ctx_a, sents, domain)?;
    let b = predict(model_b, ctx_b, sents, domain)?;
    disagreements(sents, &a, &b, limit)
}

/// `doc_id  sent_index  token_indices  text` with a header line.
pub fn disagreements_tsv(rows: &[Disagreement]) -> String {
    let mut out = String::from("doc_id\tsent_index\ttokens\ttext\n");
    for d in rows {
        let idx: Vec<String> = d.token_indices.iter().map(|i| i.to_string()).collect();
        out.push_str(&format!("{}\t{}\t{}\t{}\n", d.doc_id, d.sent_index, idx.join(","), d.text));
    }
    out
}
