mod common;

use std::collections::BTreeSet;

use common::*;
use evadapt_core::corpus::{Corpus, TRAIN};
use evadapt_core::nets::{LearnerKind, Tagger};
use evadapt_core::selftrain::{self_train, SelfTrainSetup, SelfTrainSpec};
use evadapt_core::training::{NoClock, Trainer};

fn teacher(d: &Data) -> Tagger {
    let cfg = small_cfg(3);
    Trainer::new(&d.ctx, &cfg, &NoClock).unwrap().train_supervised(&d.source).unwrap().best
}

fn spec(iterations: usize) -> SelfTrainSpec {
    SelfTrainSpec {
        labeled_fraction: 0.1,
        iterations,
        student_kind: LearnerKind::Bilstm,
        student_epochs: 2,
        seed: 3,
    }
}

fn run(d: &Data, t: &Tagger, spec: &SelfTrainSpec, target: &Corpus) -> evadapt_core::selftrain::SelfTrainOutcome {
    let cfg = small_cfg(3);
    let setup = SelfTrainSetup {
        teacher: t,
        teacher_ctx: &d.ctx,
        student_ctx: &d.ctx,
        cfg: &cfg,
        clock: &NoClock,
    };
    self_train(spec, &setup, target).unwrap()
}

#[test]
fn one_pseudo_labeling_pass_per_iteration() {
    let d = data(80, 1);
    let t = teacher(&d);
    for k in 1..=3 {
        let out = run(&d, &t, &spec(k), &d.target);
        assert_eq!(out.pseudo_passes, k);
        assert_eq!(out.report.iterations.len(), k);
    }
}

#[test]
fn labeled_and_unlabeled_partition_the_train_split() {
    let d = data(80, 2);
    let t = teacher(&d);
    let out = run(&d, &t, &spec(1), &d.target);
    let keys = |c: &Corpus| c.sentences.iter().map(|s| s.key()).collect::<BTreeSet<_>>();
    let l = keys(&out.labeled);
    let u = keys(&out.pseudo_labeled);
    assert!(l.is_disjoint(&u));
    let train: BTreeSet<_> = d.target.split(TRAIN).unwrap().iter().map(|s| s.key()).collect();
    assert_eq!(l.union(&u).cloned().collect::<BTreeSet<_>>(), train);
    assert_eq!(out.report.n_labeled + out.report.n_unlabeled, train.len());
}

#[test]
fn gold_tags_of_the_unlabeled_pool_are_never_used() {
    let d = data(80, 3);
    let t = teacher(&d);
    let s = spec(2);
    let a = run(&d, &t, &s, &d.target);
    // Relabel everything in the train split except the labeled sample.
    let labeled: BTreeSet<_> = a.labeled.sentences.iter().map(|x| x.key()).collect();
    let train: BTreeSet<_> = d.target.split(TRAIN).unwrap().iter().map(|x| x.key()).collect();
    let mut scrambled = d.target.clone();
    for sent in &mut scrambled.sentences {
        if train.contains(&sent.key()) && !labeled.contains(&sent.key()) {
            flip(sent);
        }
    }
    let b = run(&d, &t, &s, &scrambled);
    assert_eq!(values(&a.student), values(&b.student));
    assert_eq!(a.pseudo_labeled, b.pseudo_labeled);
}

#[test]
fn untrained_teacher_is_rejected() {
    let d = data(40, 4);
    let cfg = small_cfg(1);
    let fresh = Tagger::new(cfg.arch(&d.ctx, false), 1).unwrap();
    let setup = SelfTrainSetup {
        teacher: &fresh,
        teacher_ctx: &d.ctx,
        student_ctx: &d.ctx,
        cfg: &cfg,
        clock: &NoClock,
    };
    assert!(self_train(&spec(1), &setup, &d.target).is_err());
}
