//! The synthetic two-domain benchmark: data preparation and the paired
//! experiments used to check adaptation end to end.

use evadapt_core::corpus::{split_corpus, Corpus, Domain, DomainExample, TaggedSentence, DEV, TEST, TRAIN};
use evadapt_core::eval::evaluate;
use evadapt_core::features::{build_pos_vocab, build_vocab, EmbeddingTable, FeatureContext, FeatureKind, FeaturePlan};
use evadapt_core::nets::Tagger;
use evadapt_core::selftrain::{self_train, SelfTrainSetup, SelfTrainSpec};
use evadapt_core::synth::{make_synthetic_pair, synthetic_word_vectors, EmbeddingSpec, GeneratedSpec, SyntheticSpec};
use evadapt_core::training::{AdaConfig, Trainer};
use evadapt_core::corpus::sample_labeled_fraction;
use serde::{Deserialize, Serialize};

use crate::clock::WallClock;
use crate::Result;

pub const SPLIT: (f64, f64, f64) = (0.8, 0.1, 0.1);

/// Student training length in the self-training benchmark.
pub const STUDENT_EPOCHS: usize = 20;

/// Corpus shape of the benchmark. Both domains share one event density so
/// that the domains differ in their words only.
pub fn benchmark_generated() -> GeneratedSpec {
    GeneratedSpec {
        sentences_per_domain: 1500,
        source_density: 0.08,
        target_density: 0.08,
        ..GeneratedSpec::default()
    }
}

pub fn benchmark_embedding() -> EmbeddingSpec {
    EmbeddingSpec {
        domain_shift: 1.5,
        noise: 0.3,
        ..EmbeddingSpec::default()
    }
}

/// Default hyperparameters with a narrower recurrent layer and shorter
/// patience, which keeps five seeds inside the time budget.
pub fn benchmark_config() -> AdaConfig {
    AdaConfig {
        hidden: 50,
        patience: 10,
        ..AdaConfig::default()
    }
}

/// Split corpora plus the shared feature context.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub source: Corpus,
    pub target: Corpus,
    pub ctx: FeatureContext,
}

pub fn synth_data(spec: &SyntheticSpec, seed: u64) -> Result<SynthData> {
    let (s, t) = make_synthetic_pair(spec, seed)?;
    let source = split_corpus(&s, SPLIT, seed)?;
    let target = split_corpus(&t, SPLIT, seed)?;
    let vocab = build_vocab(&source, &target, 1, false);
    let dim = spec.embedding.dim;
    let vectors = synthetic_word_vectors(spec, seed)?;
    let embeddings = EmbeddingTable::from_vectors(vectors, dim, &vocab, dim, seed)?;
    let plan = FeaturePlan {
        kind: FeatureKind::Static,
        word_dim: dim,
        ..FeaturePlan::default()
    };
    Ok(SynthData {
        ctx: FeatureContext {
            plan,
            pos_vocab: build_pos_vocab(&source, &target),
            vocab,
            embeddings: Some(embeddings),
            store: None,
        },
        source,
        target,
    })
}

fn split<'c>(c: &'c Corpus, name: &str) -> Vec<&'c TaggedSentence> {
    c.split(name).unwrap_or_default()
}

pub fn unlabeled_target(s: &TaggedSentence) -> DomainExample {
    DomainExample::unlabeled(s, Domain::Target)
}

fn unlabeled(sents: &[&TaggedSentence]) -> Vec<DomainExample> {
    sents.iter().map(|s| unlabeled_target(s)).collect()
}

/// One seed of the baseline-vs-adversarial comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferResult {
    pub seed: u64,
    pub baseline_in: f64,
    pub baseline_out: f64,
    pub ada_in: f64,
    pub ada_out: f64,
    pub ada_domain_acc: f64,
    pub baseline_epochs: usize,
    pub ada_epochs: usize,
    pub secs: f64,
}

/// Trained models from [`transfer`], kept for the downstream experiments.
pub struct TransferModels {
    pub baseline: Tagger,
    pub ada: Tagger,
}

/// Trains the supervised baseline and the adversarial model on the source
/// and scores them in-domain (source test split) and out-of-domain (the
/// whole target corpus).
pub fn transfer(data: &SynthData, cfg: &AdaConfig) -> Result<(TransferResult, TransferModels)> {
    let clock = WallClock::start();
    let trainer = Trainer::new(&data.ctx, cfg, &clock)?;
    let base = trainer.train_supervised(&data.source)?;
    let tgt_train = unlabeled(&split(&data.target, TRAIN));
    let tgt_dev = unlabeled(&split(&data.target, DEV));
    let ada = trainer.train_ada(&data.source, &tgt_train, &tgt_dev)?;
    let src_test = split(&data.source, TEST);
    let tgt_all: Vec<&TaggedSentence> = data.target.sentences.iter().collect();
    let f1 = |m: &Tagger, s: &[&TaggedSentence], d| evaluate(m, &data.ctx, s, d).map(|r| r.f1);
    let acc = ada
        .log
        .records
        .iter()
        .find(|r| r.epoch == ada.best_epoch)
        .and_then(|r| r.domain_acc)
        .unwrap_or(f64::NAN);
    let result = TransferResult {
        seed: cfg.seed,
        baseline_in: f1(&base.best, &src_test, Domain::Source)?,
        baseline_out: f1(&base.best, &tgt_all, Domain::Target)?,
        ada_in: f1(&ada.best, &src_test, Domain::Source)?,
        ada_out: f1(&ada.best, &tgt_all, Domain::Target)?,
        ada_domain_acc: acc,
        baseline_epochs: base.log.records.len(),
        ada_epochs: ada.log.records.len(),
        secs: clock.elapsed(),
    };
    Ok((
        result,
        TransferModels {
            baseline: base.best,
            ada: ada.best,
        },
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelfTrainResult {
    pub seed: u64,
    pub teacher: f64,
    pub student: f64,
}

/// Finetunes `teacher` on 1% of the target train split, pseudo-labels the
/// rest and trains a fresh BiLSTM student; F1 on the target test split.
pub fn selftrain(data: &SynthData, cfg: &AdaConfig, teacher: &Tagger, spec: &SelfTrainSpec) -> Result<SelfTrainResult> {
    let clock = WallClock::start();
    let setup = SelfTrainSetup {
        teacher,
        teacher_ctx: &data.ctx,
        student_ctx: &data.ctx,
        cfg,
        clock: &clock,
    };
    let out = self_train(spec, &setup, &data.target)?;
    Ok(SelfTrainResult {
        seed: spec.seed,
        teacher: out.report.teacher.f1,
        student: out.report.student.f1,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FedaResult {
    pub seed: u64,
    pub feda: f64,
    pub ada: f64,
    pub ada_finetuned: f64,
}

/// FEDA trained with `percent` of the target train split labeled, against
/// the adversarial model with and without finetuning on the same subset.
pub fn feda(data: &SynthData, cfg: &AdaConfig, ada: &Tagger, percent: f64) -> Result<FedaResult> {
    let clock = WallClock::start();
    let trainer = Trainer::new(&data.ctx, cfg, &clock)?;
    let (labeled, _) = sample_labeled_fraction(&data.target, percent, cfg.seed)?;
    let lab: Vec<&TaggedSentence> = labeled.sentences.iter().collect();
    let tdev = split(&data.target, DEV);
    let model = trainer.train_feda(&data.source, &lab, &tdev)?;
    let test = split(&data.target, TEST);
    let (tuned, _) = trainer.finetune(ada, &lab, Domain::Target, cfg.seed)?;
    Ok(FedaResult {
        seed: cfg.seed,
        feda: evaluate(&model.best, &data.ctx, &test, Domain::Target)?.f1,
        ada: evaluate(ada, &data.ctx, &test, Domain::Target)?.f1,
        ada_finetuned: evaluate(&tuned, &data.ctx, &test, Domain::Target)?.f1,
    })
}

pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}
