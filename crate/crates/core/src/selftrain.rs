//! Teacher/student self-training on a target domain with few labels.
//!
//! 1. Finetune the teacher on the labeled part `D^l`.
//! 2. Tag every sentence of the unlabeled part `D^u` with the teacher.
//! 3. Train a fresh student on `D^l` plus the pseudo-labeled `D^u`, each
//!    term averaged over its own dataset.
//! 4. Optionally repeat 2-3 with the latest student as the labeler.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{sample_labeled_fraction, Corpus, Domain, DomainExample, TaggedSentence, TEST};
use crate::error::{Error, Result};
use crate::eval::{argmax_tag, evaluate, EvalReport, EVAL_BATCH};
use crate::features::{Batch, FeatureContext, IndexedSentence};
use crate::nets::{weighted_cross_entropy, LearnerKind, SequenceTagger, Tagger};
use crate::seed;
use crate::training::{AdaConfig, Clock, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfTrainSpec {
    pub labeled_fraction: f64,
    pub iterations: usize,
    pub student_kind: LearnerKind,
    /// Fixed student training length; `D^l` is too small to early-stop on.
    pub student_epochs: usize,
    pub seed: u64,
}

impl Default for SelfTrainSpec {
    fn default() -> Self {
        SelfTrainSpec {
            labeled_fraction: 0.01,
            iterations: 1,
            student_kind: LearnerKind::Contextual,
            student_epochs: 20,
            seed: 0,
        }
    }
}

impl SelfTrainSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "labeled_fraction {} must lie in (0, 1); no labeled sentences otherwise",
                self.labeled_fraction
            )));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be >= 1"));
        }
        if self.student_epochs == 0 {
            return Err(Error::invalid("student_epochs must be >= 1"));
        }
        Ok(())
    }
}

/// Argmax tags for each unlabeled sentence (ties go to O). Input
/// sentences carry no tags, so gold labels cannot leak into the output.
pub fn pseudo_label(
    model: &dyn SequenceTagger,
    ctx: &FeatureContext,
    sents: &[DomainExample],
    domain: Domain,
) -> Result<Vec<TaggedSentence>> {
    let idx: Vec<IndexedSentence> = sents.iter().map(|e| ctx.index_unlabeled(e)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(sents.len());
    for (chunk, examples) in idx.chunks(EVAL_BATCH).zip(sents.chunks(EVAL_BATCH)) {
        let refs: Vec<&IndexedSentence> = chunk.iter().collect();
        let batch = Batch::assemble(&refs, ctx)?;
        let logits = model.event_logits(&batch, domain)?;
        for (b, e) in examples.iter().enumerate() {
            let base = b * batch.max_len;
            let tags = (0..e.tokens.len())
                .map(|t| argmax_tag(logits.get(base + t, 0), logits.get(base + t, 1)))
                .collect();
            out.push(TaggedSentence::new(e.doc_id.clone(), e.sent_index, e.tokens.clone(), tags)?);
        }
    }
    Ok(out)
}

/// Per-example weights `1/m` for the `m` labeled and `1/n` for the `n`
/// pseudo-labeled sentences.
pub fn student_weights(m: usize, n: usize) -> (f64, f64) {
    (1.0 / m.max(1) as f64, 1.0 / n.max(1) as f64)
}

/// `(1/m) sum L(S(x_l), e_l) + (1/n) sum L(S(x_u), e_u)` in evaluation
/// mode, where `L` is a sentence's mean token cross-entropy.
pub fn student_objective(
    model: &Tagger,
    ctx: &FeatureContext,
    labeled: &[&TaggedSentence],
    pseudo: &[&TaggedSentence],
) -> Result<f64> {
    let (wl, wu) = student_weights(labeled.len(), pseudo.len());
    let mut total = 0.0;
    for (set, w) in [(labeled, wl), (pseudo, wu)] {
        for s in set {
            let idx = ctx.index(s)?;
            let batch = Batch::assemble(&[&idx], ctx)?;
            let logits = model.event_logits(&batch, Domain::Target)?;
            let targets: Vec<usize> = s.tags.iter().map(|t| t.index()).collect();
            let weights = alloc::vec![w / s.len() as f64; s.len()];
            total += weighted_cross_entropy(&logits, &targets, &weights).0;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    /// The model that produced this iteration's pseudo-labels.
    pub labeler: EvalReport,
    pub student: EvalReport,
    pub pseudo_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainReport {
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub teacher_before: EvalReport,
    pub teacher: EvalReport,
    pub iterations: Vec<IterationReport>,
    pub student: EvalReport,
}

#[derive(Debug, Clone)]
pub struct SelfTrainOutcome {
    pub student: Tagger,
    pub teacher: Tagger,
    pub labeled: Corpus,
    /// The final pass's pseudo-labeled `D^u`.
    pub pseudo_labeled: Corpus,
    pub pseudo_passes: usize,
    pub report: SelfTrainReport,
}

/// Models and contexts for one self-training run.
pub struct SelfTrainSetup<'a> {
    pub teacher: &'a Tagger,
    pub teacher_ctx: &'a FeatureContext,
    pub student_ctx: &'a FeatureContext,
    /// Optimizer, batching and layer sizes; `learner` is overridden by the
    /// spec's student kind for the student.
    pub cfg: &'a AdaConfig,
    pub clock: &'a dyn Clock,
}

/// Runs the pipeline on `target`'s train split and reports on its test
/// split.
pub fn self_train(spec: &SelfTrainSpec, setup: &SelfTrainSetup<'_>, target: &Corpus) -> Result<SelfTrainOutcome> {
    spec.validate()?;
    if setup.teacher.updates == 0 {
        return Err(Error::invalid("the teacher model has not been trained"));
    }
    let test = target
        .split(TEST)
        .ok_or_else(|| Error::invalid(format!("corpus {} has no {TEST} split", target.name)))?;
    let (labeled, unlabeled) = sample_labeled_fraction(target, spec.labeled_fraction, spec.seed)?;
    if labeled.sentences.is_empty() {
        return Err(Error::invalid("no labeled sentences"));
    }
    if unlabeled.sentences.is_empty() {
        return Err(Error::invalid("the unlabeled set is empty"));
    }
    // Gold tags of D^u are dropped here and never consulted again.
    let d_u: Vec<DomainExample> = unlabeled
        .sentences
        .iter()
        .map(|s| DomainExample::unlabeled(s, Domain::Target))
        .collect();
    let d_l: Vec<&TaggedSentence> = labeled.sentences.iter().collect();

    let mut teacher_cfg = setup.cfg.clone();
    teacher_cfg.learner = setup.teacher.arch.kind;
    let teacher_trainer = Trainer::new(setup.teacher_ctx, &teacher_cfg, setup.clock)?;
    let teacher_before = evaluate(setup.teacher, setup.teacher_ctx, &test, Domain::Target)?.named("test", "teacher");
    let (teacher, _) = teacher_trainer.finetune(setup.teacher, &d_l, Domain::Target, seed::derive(spec.seed, "teacher"))?;
    let teacher_report = evaluate(&teacher, setup.teacher_ctx, &test, Domain::Target)?.named("test", "teacher");

    let mut student_cfg = setup.cfg.clone();
    student_cfg.learner = spec.student_kind;
    let student_trainer = Trainer::new(setup.student_ctx, &student_cfg, setup.clock)?;
    let (wl, wu) = student_weights(d_l.len(), d_u.len());

    let mut iterations = Vec::with_capacity(spec.iterations);
    let mut passes = 0;
    let mut student: Option<Tagger> = None;
    let mut labeler_report = teacher_report.clone();
    let mut pseudo = Vec::new();
    for it in 1..=spec.iterations {
        pseudo = match &student {
            None => pseudo_label(&teacher, setup.teacher_ctx, &d_u, Domain::Target)?,
            Some(s) => pseudo_label(s, setup.student_ctx, &d_u, Domain::Target)?,
        };
        passes += 1;
        let mut data: Vec<(&TaggedSentence, f64)> = d_l.iter().map(|s| (*s, wl)).collect();
        data.extend(pseudo.iter().map(|s| (s, wu)));
        let init_seed = seed::derive(spec.seed, &format!("student.{it}"));
        let fresh = Tagger::new(student_cfg.arch(setup.student_ctx, false), init_seed)?;
        let (s, _) = student_trainer.train_weighted(fresh, &data, spec.student_epochs, init_seed)?;
        let report = evaluate(&s, setup.student_ctx, &test, Domain::Target)?.named("test", "student");
        iterations.push(IterationReport {
            iteration: it,
            labeler: labeler_report.clone(),
            student: report.clone(),
            pseudo_events: pseudo.iter().map(|s| s.n_events()).sum(),
        });
        labeler_report = report;
        student = Some(s);
    }
    let student = student.expect("iterations >= 1");
    let report = SelfTrainReport {
        n_labeled: d_l.len(),
        n_unlabeled: d_u.len(),
        teacher_before,
        teacher: teacher_report,
        student: labeler_report,
        iterations,
    };
    Ok(SelfTrainOutcome {
        student,
        teacher,
        pseudo_labeled: Corpus::new(format!("{}-pseudo", target.name), pseudo),
        labeled,
        pseudo_passes: passes,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Tag::{self, Event as E, O};
    use crate::features::{EmbeddingTable, FeatureKind, FeaturePlan, Vocab};
    use crate::nets::TaggerArch;
    use crate::tensor::Parameters;
    use alloc::string::ToString;
    use alloc::vec;

    fn ctx() -> FeatureContext {
        let vocab = Vocab::from_words(vec!["a".to_string(), "b".to_string(), "c".to_string()], false);
        let plan = FeaturePlan {
            kind: FeatureKind::Static,
            word_dim: 3,
            ..FeaturePlan::default()
        };
        FeatureContext {
            embeddings: Some(EmbeddingTable::from_vectors(Vec::new(), 3, &vocab, 3, 0).unwrap()),
            plan,
            vocab,
            pos_vocab: Vocab::from_words(Vec::new(), false),
            store: None,
        }
    }

    /// Classifier output is a constant `(0, b)` for every token.
    fn biased_tagger(ctx: &FeatureContext, b: f64) -> Tagger {
        let mut arch = TaggerArch::new(LearnerKind::Bilstm, ctx.plan, 2);
        arch.hidden = 4;
        let mut t = Tagger::new(arch, 0).unwrap();
        t.classifier.visit_mut("", &mut |name, p| {
            p.value.iter_mut().for_each(|v| *v = 0.0);
            if name == "1.bias" {
                p.value[1] = b;
            }
        });
        t
    }

    fn sent(id: &str, words: &[&str], tags: &[Tag]) -> TaggedSentence {
        TaggedSentence::from_words(id, 0, words, tags).unwrap()
    }

    #[test]
    fn each_term_normalized_by_its_own_size() {
        let ctx = ctx();
        let b = 0.7;
        let t = biased_tagger(&ctx, b);
        let l1 = sent("l", &["a", "b"], &[E, O]);
        let u1 = sent("u1", &["c"], &[O]);
        let u2 = sent("u2", &["a", "c"], &[E, E]);
        let nll_e = (1.0 + (-b).exp()).ln();
        let nll_o = (1.0 + b.exp()).ln();
        let expected = (nll_e + nll_o) / 2.0 + 0.5 * (nll_o + nll_e);
        let got = student_objective(&t, &ctx, &[&l1], &[&u1, &u2]).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        // differs from a plain mean over all tokens
        let pooled = (3.0 * nll_e + 2.0 * nll_o) / 5.0;
        assert!((got - pooled).abs() > 1e-3);
    }

    #[test]
    fn argmax_with_tie_to_o() {
        let ctx = ctx();
        let ex = [DomainExample::unlabeled(&sent("d", &["a", "b", "c"], &[O, O, O]), Domain::Target)];
        let tie = pseudo_label(&biased_tagger(&ctx, 0.0), &ctx, &ex, Domain::Target).unwrap();
        assert_eq!(tie[0].tags, vec![O, O, O]);
        let ev = pseudo_label(&biased_tagger(&ctx, 1.0), &ctx, &ex, Domain::Target).unwrap();
        assert_eq!(ev[0].tags, vec![E, E, E]);
        assert_eq!(ev[0].len(), 3);
    }

    #[test]
    fn spec_bounds() {
        assert!(SelfTrainSpec::default().validate().is_ok());
        for f in [0.0, 1.0, -0.5] {
            let s = SelfTrainSpec {
                labeled_fraction: f,
                ..SelfTrainSpec::default()
            };
            assert!(s.validate().is_err());
        }
        let s = SelfTrainSpec {
            iterations: 0,
            ..SelfTrainSpec::default()
        };
        assert!(s.validate().is_err());
    }
}
