//! Differentiable components with hand-derived backward passes.
//!
//! Every layer follows the same protocol: `forward(&self, ..)` returns its
//! output plus an owned cache, and `backward(&mut self, &cache, upstream)`
//! accumulates into the parameters' `grad` buffers and returns the gradient
//! with respect to the layer input. Caches are independent, so one learner
//! can run several forward passes (source batch, mixed-domain batch) before
//! any backward pass.

mod heads;
mod learner;
mod linear;
mod lstm;
mod model;

pub use heads::{
    pool, pool_backward, token_cross_entropy, weighted_cross_entropy, GradientReversal, PoolCache, PoolMode,
};
pub use learner::{LearnerKind, Mode, ReprCache, ReprLearner};
pub use linear::{Linear, Mlp, MlpCache};
pub use lstm::{reverse_within_lengths, Lstm, LstmCache, FORGET_BIAS, LSTM_INIT_BOUND};
pub use model::{
    AnyModel, DomainCache, DomainHead, DomainHeadArch, FedaCache, FedaModel, SequenceTagger, Tagger, TaggerArch,
    N_CLASSES,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Domain;
    use crate::features::{Batch, FeatureKind, FeaturePlan};
    use crate::seed;
    use crate::tensor::{Matrix, Parameters};

    use alloc::vec::Vec;
    use rand::Rng as _;

    fn plan(dim: usize) -> FeaturePlan {
        FeaturePlan {
            kind: FeatureKind::Static,
            word_dim: dim,
            ..FeaturePlan::default()
        }
    }

    fn rand_seq(len: usize, dim: usize, rng: &mut seed::Rng) -> Matrix {
        Matrix::from_vec(len, dim, (0..len * dim).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn small(kind: LearnerKind, hidden: usize, dim: usize) -> Tagger {
        let mut arch = TaggerArch::new(kind, plan(dim), 0);
        arch.hidden = hidden;
        Tagger::new(arch, 3).unwrap()
    }

    #[test]
    fn bilstm_doubles_output() {
        let t = small(LearnerKind::Bilstm, 100, 6);
        let mut rng = seed::rng(1, "t");
        let b = Batch::from_sequences(&[rand_seq(4, 6, &mut rng)], None).unwrap();
        let (h, _) = t.represent(&b, Mode::Eval).unwrap();
        assert_eq!((h.rows, h.cols), (4, 200));
        let u = small(LearnerKind::Lstm, 100, 6);
        assert_eq!(u.represent(&b, Mode::Eval).unwrap().0.cols, 100);
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let t = small(LearnerKind::Bilstm, 16, 6);
        let mut rng = seed::rng(2, "t");
        let b = Batch::from_sequences(&[rand_seq(5, 6, &mut rng), rand_seq(3, 6, &mut rng)], None).unwrap();
        let a1 = t.represent(&b, Mode::Eval).unwrap().0;
        let a2 = t.represent(&b, Mode::Eval).unwrap().0;
        assert_eq!(a1, a2);
        let mut drng = seed::rng(9, "dropout");
        let d = t.represent(&b, Mode::Train(&mut drng)).unwrap().0;
        assert_ne!(a1, d);
    }

    #[test]
    fn lstm_is_position_sensitive() {
        let t = small(LearnerKind::Lstm, 16, 6);
        let mut rng = seed::rng(4, "t");
        let s = rand_seq(5, 6, &mut rng);
        let mut rev = s.clone();
        for i in 0..5 {
            rev.row_mut(i).copy_from_slice(s.row(4 - i));
        }
        let h1 = t.represent(&Batch::from_sequences(&[s], None).unwrap(), Mode::Eval).unwrap().0;
        let h2 = t.represent(&Batch::from_sequences(&[rev], None).unwrap(), Mode::Eval).unwrap().0;
        // last state of the original vs last state of the reversal
        assert!(h1.row(4).iter().zip(h2.row(4)).any(|(a, b)| (a - b).abs() > 1e-6));
    }

    #[test]
    fn zero_classifier_gives_uniform_logits() {
        let mut t = small(LearnerKind::Bilstm, 8, 4);
        t.classifier.visit_mut("", &mut |_, p| p.value.iter_mut().for_each(|v| *v = 0.0));
        let mut rng = seed::rng(5, "t");
        let b = Batch::from_sequences(&[rand_seq(1, 4, &mut rng)], None).unwrap();
        let z = t.event_logits(&b, Domain::Source).unwrap();
        assert_eq!((b.batch_size, b.max_len, z.cols), (1, 1, 2));
        assert_eq!(z.get(0, 0), z.get(0, 1));
    }

    #[test]
    fn logits_ignore_padding_length() {
        let t = small(LearnerKind::Bilstm, 12, 5);
        let mut rng = seed::rng(6, "t");
        let s = rand_seq(4, 5, &mut rng);
        let b5 = Batch::from_sequences(&[s.clone(), rand_seq(5, 5, &mut rng)], None).unwrap();
        let b9 = Batch::from_sequences(&[s, rand_seq(9, 5, &mut rng)], None).unwrap();
        let z5 = t.event_logits(&b5, Domain::Source).unwrap();
        let z9 = t.event_logits(&b9, Domain::Source).unwrap();
        for i in 0..4 {
            for c in 0..2 {
                assert!((z5.get(i, c) - z9.get(i, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn domain_predictor_shapes() {
        let mut arch = TaggerArch::new(LearnerKind::Bilstm, plan(4), 0).with_domain_head(PoolMode::Mean, 1.0);
        arch.hidden = 8;
        let mut t = Tagger::new(arch, 1).unwrap();
        let mut rng = seed::rng(7, "t");
        let seqs: Vec<Matrix> = (0..16).map(|i| rand_seq(1 + i % 5, 4, &mut rng)).collect();
        let b = Batch::from_sequences(&seqs, None).unwrap();
        let z = t.domain_logits(&b).unwrap();
        assert_eq!((z.rows, z.cols), (16, 2));
        assert_eq!(z, t.domain_logits(&b).unwrap());
        t.domain
            .as_mut()
            .unwrap()
            .predictor
            .visit_mut("", &mut |_, p| p.value.iter_mut().for_each(|v| *v = 0.0));
        let z = t.domain_logits(&b).unwrap();
        assert!((0..16).all(|r| z.get(r, 0) == z.get(r, 1)));
    }

    #[test]
    fn cross_entropy_matches_direct_sum() {
        let mut rng = seed::rng(8, "t");
        let n = 37;
        let logits = Matrix::from_vec(n, 2, (0..2 * n).map(|_| rng.random_range(-4.0..4.0)).collect());
        let tags: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        let (loss, _) = token_cross_entropy(&logits, &tags, &mask).unwrap();
        let mut sum = 0.0;
        let mut count = 0.0;
        for i in 0..n {
            if mask[i] {
                let (a, b) = (logits.get(i, 0), logits.get(i, 1));
                let p = [a, b][tags[i]].exp() / (a.exp() + b.exp());
                sum -= num_traits::Float::ln(p);
                count += 1.0;
            }
        }
        assert!((loss - sum / count).abs() < 1e-6);
    }

    #[test]
    fn plan_kind_mismatch() {
        let arch = TaggerArch::new(LearnerKind::Pos, plan(4), 3);
        assert!(Tagger::new(arch, 0).is_err());
        let ctx_plan = FeaturePlan {
            kind: FeatureKind::Contextual,
            contextual_dim: 8,
            ..FeaturePlan::default()
        };
        assert!(Tagger::new(TaggerArch::new(LearnerKind::Bilstm, ctx_plan, 0), 0).is_err());
    }

    #[test]
    fn outputs_finite_on_random_inputs() {
        let mut rng = seed::rng(10, "t");
        let learners = [small(LearnerKind::Lstm, 8, 3), small(LearnerKind::Bilstm, 8, 3)];
        for trial in 0..1000 {
            let t = &learners[trial % 2];
            let len = 1 + trial % 7;
            let b = Batch::from_sequences(&[rand_seq(len, 3, &mut rng)], None).unwrap();
            let (h, _) = t.represent(&b, Mode::Eval).unwrap();
            assert!(h.is_finite());
        }
    }

    #[test]
    fn feda_gating_ignores_inactive_extractor() {
        let mut arch = TaggerArch::new(LearnerKind::Bilstm, plan(4), 0);
        arch.hidden = 6;
        let mut m = FedaModel::new(arch, 2).unwrap();
        let mut rng = seed::rng(11, "t");
        let b = Batch::from_sequences(&[rand_seq(3, 4, &mut rng), rand_seq(2, 4, &mut rng)], None).unwrap();
        let before = m.event_logits(&b, Domain::Source).unwrap();
        let tgt_before = m.event_logits(&b, Domain::Target).unwrap();
        m.target.visit_mut("", &mut |_, p| p.value.iter_mut().for_each(|v| *v = 0.0));
        assert_eq!(before, m.event_logits(&b, Domain::Source).unwrap());
        assert_ne!(tgt_before, m.event_logits(&b, Domain::Target).unwrap());
    }

    #[test]
    fn feda_parameter_count() {
        let mut arch = TaggerArch::new(LearnerKind::Bilstm, plan(5), 0);
        arch.hidden = 7;
        let m = FedaModel::new(arch.clone(), 0).unwrap();
        let single = Tagger::new(arch.clone(), 0).unwrap();
        let extractor = single.learner.num_params();
        let d = arch.output_dim();
        let heads = (3 * d * 100 + 100) + (100 * 2 + 2);
        assert_eq!(m.num_params(), 3 * extractor + heads);
        // each direction: 4H x (in + H) weights plus 4H biases
        assert_eq!(extractor, 2 * (4 * 7 * (5 + 7) + 4 * 7));
    }

    #[test]
    fn forget_gate_bias_initialized_to_one() {
        let t = small(LearnerKind::Lstm, 5, 3);
        let b = &t.learner.fwd.bias.value;
        assert!(b[5..10].iter().all(|v| *v == FORGET_BIAS));
        assert!(t.learner.fwd.w_ih.value.iter().all(|v| v.abs() < LSTM_INIT_BOUND));
    }
}
