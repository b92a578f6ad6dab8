#![allow(dead_code)]

use evadapt_core::corpus::{split_corpus, Corpus, Domain, DomainExample, TaggedSentence, DEV, TRAIN};
use evadapt_core::features::{build_pos_vocab, build_vocab, EmbeddingTable, FeatureContext, FeatureKind, FeaturePlan};
use evadapt_core::nets::Tagger;
use evadapt_core::synth::{make_synthetic_pair, synthetic_word_vectors, GeneratedSpec, SyntheticSpec};
use evadapt_core::tensor::Parameters;
use evadapt_core::training::AdaConfig;

pub struct Data {
    pub source: Corpus,
    pub target: Corpus,
    pub ctx: FeatureContext,
}

/// A small split synthetic pair with its static feature context.
pub fn data(sentences: usize, seed: u64) -> Data {
    let g = GeneratedSpec {
        n_templates: 12,
        content_words_per_domain: 30,
        sentences_per_domain: sentences,
        ..GeneratedSpec::default()
    };
    let spec = SyntheticSpec::generated(&g, seed);
    let (s, t) = make_synthetic_pair(&spec, seed).unwrap();
    let source = split_corpus(&s, (0.8, 0.1, 0.1), seed).unwrap();
    let target = split_corpus(&t, (0.8, 0.1, 0.1), seed).unwrap();
    let vocab = build_vocab(&source, &target, 1, false);
    let dim = spec.embedding.dim;
    let vectors = synthetic_word_vectors(&spec, seed).unwrap();
    let ctx = FeatureContext {
        plan: FeaturePlan {
            kind: FeatureKind::Static,
            word_dim: dim,
            ..FeaturePlan::default()
        },
        pos_vocab: build_pos_vocab(&source, &target),
        embeddings: Some(EmbeddingTable::from_vectors(vectors, dim, &vocab, dim, seed).unwrap()),
        vocab,
        store: None,
    };
    Data { source, target, ctx }
}

/// Narrow layers and a short run.
pub fn small_cfg(epochs: usize) -> AdaConfig {
    AdaConfig {
        hidden: 8,
        classifier_hidden: 8,
        domain_hidden: 8,
        max_epochs: epochs,
        patience: 1000,
        finetune_epochs: 2,
        seed: 5,
        ..AdaConfig::default()
    }
}

pub fn unlabeled(c: &Corpus, split: &str) -> Vec<DomainExample> {
    c.split(split)
        .unwrap()
        .iter()
        .map(|s| DomainExample::unlabeled(s, Domain::Target))
        .collect()
}

pub fn target_streams(c: &Corpus) -> (Vec<DomainExample>, Vec<DomainExample>) {
    (unlabeled(c, TRAIN), unlabeled(c, DEV))
}

pub fn values(m: &impl Parameters) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    m.visit("", &mut |n, p| out.push((n.to_string(), p.value.clone())));
    out
}

/// Largest absolute difference over the task (non-domain) parameters.
pub fn task_param_gap(a: &Tagger, b: &Tagger) -> f64 {
    let va: Vec<_> = values(a).into_iter().filter(|(n, _)| !n.starts_with("domain.")).collect();
    let vb: Vec<_> = values(b).into_iter().filter(|(n, _)| !n.starts_with("domain.")).collect();
    assert_eq!(va.len(), vb.len());
    let mut gap: f64 = 0.0;
    for ((na, x), (nb, y)) in va.iter().zip(&vb) {
        assert_eq!(na, nb);
        for (p, q) in x.iter().zip(y) {
            gap = gap.max((p - q).abs());
        }
    }
    gap
}

/// The same corpus with every tag flipped.
pub fn flipped(c: &Corpus) -> Corpus {
    let mut out = c.clone();
    for s in &mut out.sentences {
        flip(s);
    }
    out
}

pub fn flip(s: &mut TaggedSentence) {
    use evadapt_core::corpus::Tag;
    for t in &mut s.tags {
        *t = if t.is_event() { Tag::O } else { Tag::Event };
    }
}
