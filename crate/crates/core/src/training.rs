//! Supervised training, adversarial adaptation through the gradient
//! reversal layer, the FEDA baseline, finetuning and finetuning sweeps.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{sample_labeled_fraction, Corpus, Domain, DomainExample, TaggedSentence, DEV, TRAIN};
use crate::error::{Error, Result};
use crate::eval::{evaluate_indexed, Counts, EvalReport};
use crate::features::{Batch, FeatureContext, IndexedSentence};
use crate::nets::{
    weighted_cross_entropy, FedaModel, LearnerKind, Mode, PoolMode, SequenceTagger, Tagger, TaggerArch,
};
use crate::optim::{clip_grad_norm, Adam, AdamConfig};
use crate::seed::{self, Rng};
use crate::tensor::{Matrix, Parameters};

/// The λ grid swept for adversarial training.
pub const LAMBDA_GRID: [f64; 6] = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0];

/// Which examples the reversed domain gradient reaches the learner from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainLossMode {
    /// Source and target halves of the mixed batch.
    #[default]
    Mixed,
    /// Only the source half; the predictor still trains on both.
    SourceOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaConfig {
    pub learner: LearnerKind,
    pub lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub finetune_epochs: usize,
    pub patience: usize,
    pub adam: AdamConfig,
    pub pooling: PoolMode,
    pub seed: u64,
    pub hidden: usize,
    pub input_dropout: f64,
    pub classifier_hidden: usize,
    pub domain_hidden: usize,
    pub domain_layers: usize,
    pub domain_loss: DomainLossMode,
    /// Global gradient-norm cap; off unless set.
    pub max_grad_norm: Option<f64>,
    /// Upper bound on sentences per domain when measuring held-out domain
    /// accuracy.
    pub domain_eval_size: usize,
}

impl Default for AdaConfig {
    fn default() -> Self {
        AdaConfig {
            learner: LearnerKind::Bilstm,
            lambda: 1.0,
            batch_size: 16,
            max_epochs: 1000,
            finetune_epochs: 10,
            patience: 25,
            adam: AdamConfig::default(),
            pooling: PoolMode::Mean,
            seed: 0,
            hidden: 100,
            input_dropout: 0.5,
            classifier_hidden: 100,
            domain_hidden: 100,
            domain_layers: 3,
            domain_loss: DomainLossMode::Mixed,
            max_grad_norm: None,
            domain_eval_size: 256,
        }
    }
}

impl AdaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda {} must be finite and >= 0", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.input_dropout) {
            return Err(Error::invalid(format!("input_dropout {} must lie in [0, 1)", self.input_dropout)));
        }
        if self.hidden == 0 || self.classifier_hidden == 0 || self.domain_hidden == 0 {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if let Some(n) = self.max_grad_norm {
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::invalid(format!("max_grad_norm {n} must be positive")));
            }
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }

    /// Tagger architecture for this config under `ctx`'s feature plan.
    pub fn arch(&self, ctx: &FeatureContext, domain_head: bool) -> TaggerArch {
        let mut arch = TaggerArch::new(self.learner, ctx.plan, ctx.pos_vocab.len());
        arch.hidden = self.hidden;
        arch.input_dropout = self.input_dropout;
        arch.classifier_hidden = self.classifier_hidden;
        if domain_head {
            arch = arch.with_domain_head(self.pooling, self.lambda);
            if let Some(h) = arch.domain_head.as_mut() {
                h.hidden = self.domain_hidden;
                h.layers = self.domain_layers;
            }
        }
        arch
    }
}

/// Wall-clock source for log records; core code never reads the clock
/// itself.
pub trait Clock {
    fn now_secs(&self) -> f64;
}

/// Reports zero elapsed time.
pub struct NoClock;

impl Clock for NoClock {
    fn now_secs(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task_loss: f64,
    pub domain_loss: Option<f64>,
    pub domain_acc: Option<f64>,
    pub dev_f1: f64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    /// Epochs strictly increase and every loss is finite.
    pub fn check(&self) -> Result<()> {
        for w in self.records.windows(2) {
            if w[1].epoch <= w[0].epoch {
                return Err(Error::invalid(format!("epoch {} follows {}", w[1].epoch, w[0].epoch)));
            }
        }
        for r in &self.records {
            if !r.task_loss.is_finite() || r.domain_loss.is_some_and(|d| !d.is_finite()) {
                return Err(Error::invalid(format!("non-finite loss logged at epoch {}", r.epoch)));
            }
        }
        Ok(())
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping on a score to maximize.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Only a strict improvement resets patience.
    pub fn observe(&mut self, epoch: usize, score: f64) -> StopDecision {
        match self.best {
            Some((_, b)) if score <= b => {
                self.since_best += 1;
                if self.since_best >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, score));
                self.since_best = 0;
                StopDecision::Improved
            }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// The best-dev checkpoint, the last-epoch model and the log.
#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub best: M,
    pub last: M,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub log: TrainLog,
    pub warnings: Vec<String>,
}

/// A model whose token loss can be back-propagated.
pub trait Trainable: SequenceTagger + Parameters + Clone {
    /// Accumulates gradients of `sum_r weights[r] * NLL_r` over the batch's
    /// token rows and returns that sum.
    fn token_loss_backward(&mut self, batch: &Batch, domain: Domain, weights: &[f64], rng: &mut Rng) -> Result<f64>;

    fn record_update(&mut self);

    fn updates(&self) -> usize;
}

fn tag_targets(batch: &Batch) -> Result<Vec<usize>> {
    let tags = batch
        .tags
        .as_ref()
        .ok_or_else(|| Error::invalid("token loss needs a labeled batch"))?;
    Ok(tags.iter().map(|t| t.index()).collect())
}

/// `1/n` on each of the `n` real tokens.
pub fn mean_weights(batch: &Batch) -> Vec<f64> {
    let w = 1.0 / batch.n_real().max(1) as f64;
    batch.mask.iter().map(|&m| if m { w } else { 0.0 }).collect()
}

impl Trainable for Tagger {
    fn token_loss_backward(&mut self, batch: &Batch, _domain: Domain, weights: &[f64], rng: &mut Rng) -> Result<f64> {
        let targets = tag_targets(batch)?;
        let (h, rc) = self.represent(batch, Mode::Train(rng))?;
        let (logits, cc) = self.classify(&h);
        let (loss, dl) = weighted_cross_entropy(&logits, &targets, weights);
        let dh = self.classify_backward(&cc, &dl);
        self.represent_backward(&rc, &dh);
        Ok(loss)
    }

    fn record_update(&mut self) {
        self.updates += 1;
    }

    fn updates(&self) -> usize {
        self.updates
    }
}

impl Trainable for FedaModel {
    fn token_loss_backward(&mut self, batch: &Batch, domain: Domain, weights: &[f64], rng: &mut Rng) -> Result<f64> {
        let targets = tag_targets(batch)?;
        let (logits, cache) = self.forward(batch, domain, Mode::Train(rng))?;
        let (loss, dl) = weighted_cross_entropy(&logits, &targets, weights);
        self.backward(&cache, &dl);
        Ok(loss)
    }

    fn record_update(&mut self) {
        self.updates += 1;
    }

    fn updates(&self) -> usize {
        self.updates
    }
}

/// Endless shuffled index stream; reshuffles after each pass.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl Cycler {
    fn new(n: usize, rng: Rng) -> Self {
        let mut c = Cycler {
            order: (0..n).collect(),
            pos: n,
            rng,
        };
        c.reshuffle();
        c
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    fn take(&mut self, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.order.len() {
                self.reshuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn check_finite(loss: f64, epoch: usize, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { epoch, step })
    }
}

struct EpochStats {
    task_loss: f64,
    domain_loss: Option<f64>,
}

struct DevStats {
    f1: f64,
    domain_acc: Option<f64>,
}

/// Runs one training job: a feature context, a config and a clock.
pub struct Trainer<'a> {
    pub ctx: &'a FeatureContext,
    pub cfg: &'a AdaConfig,
    pub clock: &'a dyn Clock,
}

fn labeled_split<'c>(corpus: &'c Corpus, name: &str) -> Result<Vec<&'c TaggedSentence>> {
    let s = corpus
        .split(name)
        .ok_or_else(|| Error::invalid(format!("corpus {} has no {name} split", corpus.name)))?;
    if s.is_empty() {
        return Err(Error::invalid(format!("corpus {} has an empty {name} split", corpus.name)));
    }
    Ok(s)
}

fn refs(v: &[IndexedSentence]) -> Vec<&IndexedSentence> {
    v.iter().collect()
}

impl<'a> Trainer<'a> {
    pub fn new(ctx: &'a FeatureContext, cfg: &'a AdaConfig, clock: &'a dyn Clock) -> Result<Self> {
        cfg.validate()?;
        ctx.check()?;
        if ctx.plan.kind != cfg.learner.feature_kind() {
            return Err(Error::invalid(format!(
                "learner {} needs {:?} features, the context provides {:?}",
                cfg.learner.name(),
                cfg.learner.feature_kind(),
                ctx.plan.kind
            )));
        }
        Ok(Trainer { ctx, cfg, clock })
    }

    fn optimizer(&self) -> Adam {
        Adam::new(self.cfg.adam)
    }

    fn apply(&self, model: &mut dyn Parameters, opt: &mut Adam) {
        if let Some(n) = self.cfg.max_grad_norm {
            clip_grad_norm(model, n);
        }
        opt.step(model);
    }

    /// Shared epoch loop: early stopping on the dev score, best-checkpoint
    /// tracking and logging.
    fn run_epochs<M: Clone>(
        &self,
        mut model: M,
        mut epoch_fn: impl FnMut(&mut M, usize) -> Result<EpochStats>,
        mut dev_fn: impl FnMut(&M) -> Result<DevStats>,
    ) -> Result<TrainOutcome<M>> {
        let start = self.clock.now_secs();
        let mut warnings = Vec::new();
        let mut log = TrainLog::default();
        let mut stopper = EarlyStopper::new(self.cfg.patience);
        let mut best = model.clone();
        if self.cfg.max_epochs == 0 {
            warnings.push(String::from("max_epochs is 0; returning the initialized model"));
        }
        for epoch in 1..=self.cfg.max_epochs {
            let stats = epoch_fn(&mut model, epoch)?;
            let dev = dev_fn(&model)?;
            log.records.push(EpochRecord {
                epoch,
                task_loss: stats.task_loss,
                domain_loss: stats.domain_loss,
                domain_acc: dev.domain_acc,
                dev_f1: dev.f1,
                wall_secs: self.clock.now_secs() - start,
            });
            match stopper.observe(epoch, dev.f1) {
                StopDecision::Improved => best = model.clone(),
                StopDecision::Continue => {}
                StopDecision::Stop => break,
            }
        }
        let (best_epoch, best_dev_f1) = stopper.best().unwrap_or((0, 0.0));
        Ok(TrainOutcome {
            best,
            last: model,
            best_epoch,
            best_dev_f1,
            log,
            warnings,
        })
    }

    /// One pass of token-loss updates over `data` in shuffled batches.
    fn token_epoch<M: Trainable>(
        &self,
        model: &mut M,
        data: &[(&IndexedSentence, Domain)],
        order_rng: &mut Rng,
        drop_rng: &mut Rng,
        opt: &mut Adam,
        epoch: usize,
        weights: Option<&[f64]>,
    ) -> Result<f64> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(order_rng);
        // Batches are single-domain so FEDA can route them.
        let mut batches: Vec<Vec<usize>> = Vec::new();
        for d in [Domain::Source, Domain::Target] {
            let idx: Vec<usize> = order.iter().copied().filter(|&i| data[i].1 == d).collect();
            batches.extend(idx.chunks(self.cfg.batch_size).map(|c| c.to_vec()));
        }
        if batches.iter().any(|b| data[b[0]].1 == Domain::Target) && batches.iter().any(|b| data[b[0]].1 == Domain::Source) {
            batches.shuffle(order_rng);
        }
        let mut total = 0.0;
        for (step, b) in batches.iter().enumerate() {
            let sents: Vec<&IndexedSentence> = b.iter().map(|&i| data[i].0).collect();
            let batch = Batch::assemble(&sents, self.ctx)?;
            let w = match weights {
                None => mean_weights(&batch),
                Some(per_example) => {
                    let mut w = vec![0.0; batch.mask.len()];
                    for (bi, &i) in b.iter().enumerate() {
                        let len = data[i].0.len();
                        for t in 0..len {
                            w[bi * batch.max_len + t] = per_example[i] / len as f64;
                        }
                    }
                    w
                }
            };
            model.zero_grad();
            let loss = model.token_loss_backward(&batch, data[b[0]].1, &w, drop_rng)?;
            check_finite(loss, epoch, step + 1)?;
            self.apply(model, opt);
            model.record_update();
            total += loss;
        }
        Ok(total / batches.len().max(1) as f64)
    }

    fn source_data(&self, source: &Corpus) -> Result<(Vec<IndexedSentence>, Vec<IndexedSentence>)> {
        let train = self.ctx.index_all(labeled_split(source, TRAIN)?)?;
        let dev = self.ctx.index_all(labeled_split(source, DEV)?)?;
        Ok((train, dev))
    }

    /// Token cross-entropy on the source train split, early-stopped on
    /// source-dev F1.
    pub fn train_supervised(&self, source: &Corpus) -> Result<TrainOutcome<Tagger>> {
        let (train, dev) = self.source_data(source)?;
        let model = Tagger::new(self.cfg.arch(self.ctx, false), self.cfg.seed)?;
        let data: Vec<(&IndexedSentence, Domain)> = train.iter().map(|s| (s, Domain::Source)).collect();
        let mut opt = self.optimizer();
        let mut order_rng = seed::rng(self.cfg.seed, "batches");
        let mut drop_rng = seed::rng(self.cfg.seed, "dropout");
        let dev_refs = refs(&dev);
        self.run_epochs(
            model,
            |m, epoch| {
                let task_loss = self.token_epoch(m, &data, &mut order_rng, &mut drop_rng, &mut opt, epoch, None)?;
                Ok(EpochStats {
                    task_loss,
                    domain_loss: None,
                })
            },
            |m| {
                Ok(DevStats {
                    f1: evaluate_indexed(m, self.ctx, &dev_refs, Domain::Source)?.f1,
                    domain_acc: None,
                })
            },
        )
    }

    /// Adversarial training. Each step takes one source batch for the event
    /// loss and one mixed-domain batch (half source, half target) for the
    /// domain loss through pool, reversal and predictor. Target examples
    /// carry no tags. `target_heldout` (with the source dev split) measures
    /// the predictor's accuracy after every epoch.
    pub fn train_ada(
        &self,
        source: &Corpus,
        target_unlabeled: &[DomainExample],
        target_heldout: &[DomainExample],
    ) -> Result<TrainOutcome<Tagger>> {
        if target_unlabeled.is_empty() {
            return Err(Error::invalid("adversarial training needs unlabeled target sentences"));
        }
        let (train, dev) = self.source_data(source)?;
        let target: Vec<IndexedSentence> = target_unlabeled
            .iter()
            .map(|e| self.ctx.index_unlabeled(e))
            .collect::<Result<_>>()?;
        let heldout: Vec<IndexedSentence> = target_heldout
            .iter()
            .map(|e| self.ctx.index_unlabeled(e))
            .collect::<Result<_>>()?;
        let model = Tagger::new(self.cfg.arch(self.ctx, true), self.cfg.seed)?;
        let mut opt = self.optimizer();
        let mut order_rng = seed::rng(self.cfg.seed, "batches");
        let mut drop_rng = seed::rng(self.cfg.seed, "dropout");
        let mut mixed_drop = seed::rng(self.cfg.seed, "dropout.mixed");
        let mut src_stream = Cycler::new(train.len(), seed::rng(self.cfg.seed, "mixed.source"));
        let mut tgt_stream = Cycler::new(target.len(), seed::rng(self.cfg.seed, "mixed.target"));
        let n_src = (self.cfg.batch_size / 2).max(1);
        let n_tgt = (self.cfg.batch_size - n_src).max(1);
        let dev_refs = refs(&dev);
        let n_probe = self.cfg.domain_eval_size.min(dev.len()).min(heldout.len());
        let probe: Vec<(&IndexedSentence, usize)> = dev
            .iter()
            .take(n_probe)
            .map(|s| (s, Domain::Source.index()))
            .chain(heldout.iter().take(n_probe).map(|s| (s, Domain::Target.index())))
            .collect();
        let source_only = self.cfg.domain_loss == DomainLossMode::SourceOnly;

        self.run_epochs(
            model,
            |m, epoch| {
                let mut order: Vec<usize> = (0..train.len()).collect();
                order.shuffle(&mut order_rng);
                let (mut task_sum, mut dom_sum, mut steps) = (0.0, 0.0, 0usize);
                for chunk in order.chunks(self.cfg.batch_size) {
                    steps += 1;
                    let sents: Vec<&IndexedSentence> = chunk.iter().map(|&i| &train[i]).collect();
                    let batch = Batch::assemble(&sents, self.ctx)?;
                    let mixed_src = src_stream.take(n_src);
                    let mixed_tgt = tgt_stream.take(n_tgt);
                    let mut msents: Vec<&IndexedSentence> = mixed_src.iter().map(|&i| &train[i]).collect();
                    msents.extend(mixed_tgt.iter().map(|&i| &target[i]));
                    let mixed = Batch::assemble(&msents, self.ctx)?;
                    debug_assert!(mixed.tags.is_none(), "target examples must stay unlabeled");
                    let labels: Vec<usize> = (0..n_src)
                        .map(|_| Domain::Source.index())
                        .chain((0..n_tgt).map(|_| Domain::Target.index()))
                        .collect();

                    m.zero_grad();
                    let task = m.token_loss_backward(&batch, Domain::Source, &mean_weights(&batch), &mut drop_rng)?;
                    check_finite(task, epoch, steps)?;

                    let (h, rc) = m.represent(&mixed, Mode::Train(&mut mixed_drop))?;
                    let (dlogits, dc) = m.domain_forward(&h, &mixed)?;
                    let w = 1.0 / labels.len() as f64;
                    let (dom, dgrad) = weighted_cross_entropy(&dlogits, &labels, &vec![w; labels.len()]);
                    check_finite(dom, epoch, steps)?;
                    let mut dh = m.domain_backward(&dc, &dgrad);
                    if source_only {
                        let l = mixed.max_len;
                        dh.data[n_src * l * dh.cols..].iter_mut().for_each(|g| *g = 0.0);
                    }
                    m.represent_backward(&rc, &dh);

                    self.apply(m, &mut opt);
                    m.record_update();
                    task_sum += task;
                    dom_sum += dom;
                }
                let n = steps.max(1) as f64;
                Ok(EpochStats {
                    task_loss: task_sum / n,
                    domain_loss: Some(dom_sum / n),
                })
            },
            |m| {
                let f1 = evaluate_indexed(m, self.ctx, &dev_refs, Domain::Source)?.f1;
                let domain_acc = if probe.is_empty() {
                    None
                } else {
                    Some(domain_accuracy(m, self.ctx, &probe)?)
                };
                Ok(DevStats { f1, domain_acc })
            },
        )
    }

    /// FEDA on the union of the source train split and the labeled target
    /// sentences, early-stopped on source-dev plus target-dev F1 (counts
    /// pooled).
    pub fn train_feda(
        &self,
        source: &Corpus,
        target_train: &[&TaggedSentence],
        target_dev: &[&TaggedSentence],
    ) -> Result<TrainOutcome<FedaModel>> {
        let (train, dev) = self.source_data(source)?;
        let ttrain = self.ctx.index_all(target_train.iter().copied())?;
        let tdev = self.ctx.index_all(target_dev.iter().copied())?;
        let model = FedaModel::new(self.cfg.arch(self.ctx, false), self.cfg.seed)?;
        let data: Vec<(&IndexedSentence, Domain)> = train
            .iter()
            .map(|s| (s, Domain::Source))
            .chain(ttrain.iter().map(|s| (s, Domain::Target)))
            .collect();
        let mut opt = self.optimizer();
        let mut order_rng = seed::rng(self.cfg.seed, "batches");
        let mut drop_rng = seed::rng(self.cfg.seed, "dropout");
        let (dev_refs, tdev_refs) = (refs(&dev), refs(&tdev));
        self.run_epochs(
            model,
            |m, epoch| {
                let task_loss = self.token_epoch(m, &data, &mut order_rng, &mut drop_rng, &mut opt, epoch, None)?;
                Ok(EpochStats {
                    task_loss,
                    domain_loss: None,
                })
            },
            |m| {
                let mut counts = evaluate_indexed(m, self.ctx, &dev_refs, Domain::Source)?.counts;
                if !tdev_refs.is_empty() {
                    counts.merge(evaluate_indexed(m, self.ctx, &tdev_refs, Domain::Target)?.counts);
                }
                Ok(DevStats {
                    f1: EvalReport::from_counts(counts).f1,
                    domain_acc: None,
                })
            },
        )
    }

    /// Continues training every parameter on `labeled` for
    /// `finetune_epochs` epochs of token loss and returns the final model.
    pub fn finetune<M: Trainable>(
        &self,
        model: &M,
        labeled: &[&TaggedSentence],
        domain: Domain,
        seed: u64,
    ) -> Result<(M, TrainLog)> {
        let mut m = model.clone();
        let mut log = TrainLog::default();
        if self.cfg.finetune_epochs == 0 {
            return Ok((m, log));
        }
        if labeled.is_empty() {
            return Err(Error::invalid("finetuning needs labeled sentences"));
        }
        let idx = self.ctx.index_all(labeled.iter().copied())?;
        let data: Vec<(&IndexedSentence, Domain)> = idx.iter().map(|s| (s, domain)).collect();
        let mut opt = self.optimizer();
        let mut order_rng = seed::rng(seed, "finetune.batches");
        let mut drop_rng = seed::rng(seed, "finetune.dropout");
        let start = self.clock.now_secs();
        for epoch in 1..=self.cfg.finetune_epochs {
            let loss = self.token_epoch(&mut m, &data, &mut order_rng, &mut drop_rng, &mut opt, epoch, None)?;
            log.records.push(EpochRecord {
                epoch,
                task_loss: loss,
                domain_loss: None,
                domain_acc: None,
                dev_f1: f64::NAN,
                wall_secs: self.clock.now_secs() - start,
            });
        }
        Ok((m, log))
    }

    /// Fixed-epoch training of `model` on labeled sentences with explicit
    /// per-example loss weights (no early stopping).
    pub fn train_weighted<M: Trainable>(
        &self,
        model: M,
        data: &[(&TaggedSentence, f64)],
        epochs: usize,
        seed: u64,
    ) -> Result<(M, TrainLog)> {
        let mut m = model;
        let idx = self.ctx.index_all(data.iter().map(|(s, _)| *s))?;
        let pairs: Vec<(&IndexedSentence, Domain)> = idx.iter().map(|s| (s, Domain::Source)).collect();
        let weights: Vec<f64> = data.iter().map(|(_, w)| *w).collect();
        let mut opt = self.optimizer();
        let mut order_rng = seed::rng(seed, "student.batches");
        let mut drop_rng = seed::rng(seed, "student.dropout");
        let mut log = TrainLog::default();
        let start = self.clock.now_secs();
        for epoch in 1..=epochs {
            let loss = self.token_epoch(&mut m, &pairs, &mut order_rng, &mut drop_rng, &mut opt, epoch, Some(&weights))?;
            log.records.push(EpochRecord {
                epoch,
                task_loss: loss,
                domain_loss: None,
                domain_acc: None,
                dev_f1: f64::NAN,
                wall_secs: self.clock.now_secs() - start,
            });
        }
        Ok((m, log))
    }

    /// Samples `percent` of the target's train split with `seed`, finetunes
    /// a copy of `model` on it and scores `eval`.
    pub fn finetune_run<M: Trainable>(
        &self,
        model: &M,
        target: &Corpus,
        percent: f64,
        seed: u64,
        eval: &[&TaggedSentence],
    ) -> Result<EvalReport> {
        let (labeled, _) = sample_labeled_fraction(target, percent, seed)?;
        let sents: Vec<&TaggedSentence> = labeled.sentences.iter().collect();
        let (m, _) = self.finetune(model, &sents, Domain::Target, seed)?;
        crate::eval::evaluate(&m, self.ctx, eval, Domain::Target)
    }

    /// Every `percent x seed` finetuning run, summarized per percent.
    pub fn run_finetune_sweep<M: Trainable>(
        &self,
        model: &M,
        target: &Corpus,
        percents: &[f64],
        seeds: &[u64],
        eval: &[&TaggedSentence],
    ) -> Result<CurveReport> {
        for &p in percents {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::invalid(format!("percent {p} must lie in (0, 1)")));
            }
        }
        let mut runs = Vec::with_capacity(percents.len() * seeds.len());
        for &p in percents {
            for &s in seeds {
                runs.push((p, s, self.finetune_run(model, target, p, s, eval)?.f1));
            }
        }
        Ok(CurveReport::from_runs(percents, &runs))
    }
}

/// Accuracy of the model's own domain predictor on labeled
/// `(sentence, domain index)` pairs.
pub fn domain_accuracy(model: &Tagger, ctx: &FeatureContext, probe: &[(&IndexedSentence, usize)]) -> Result<f64> {
    let mut correct = 0usize;
    for chunk in probe.chunks(crate::eval::EVAL_BATCH) {
        let sents: Vec<&IndexedSentence> = chunk.iter().map(|(s, _)| *s).collect();
        let logits: Matrix = model.domain_logits(&Batch::assemble(&sents, ctx)?)?;
        for (r, (_, d)) in chunk.iter().enumerate() {
            let pred = usize::from(logits.get(r, 1) > logits.get(r, 0));
            correct += usize::from(pred == *d);
        }
    }
    Ok(correct as f64 / probe.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub percent: f64,
    pub mean_f1: f64,
    /// Sample standard deviation; 0 for a single run.
    pub stdev_f1: f64,
    pub f1s: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub rows: Vec<CurveRow>,
    pub warnings: Vec<String>,
}

pub fn mean_stdev(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl CurveReport {
    /// Groups `(percent, seed, f1)` runs by percent, in `percents` order.
    pub fn from_runs(percents: &[f64], runs: &[(f64, u64, f64)]) -> Self {
        let mut report = CurveReport::default();
        if percents.is_empty() {
            report.warnings.push(String::from("no percents requested; the curve is empty"));
        }
        for &p in percents {
            let f1s: Vec<f64> = runs.iter().filter(|r| r.0 == p).map(|r| r.2).collect();
            let (mean_f1, stdev_f1) = mean_stdev(&f1s);
            report.rows.push(CurveRow {
                percent: p,
                mean_f1,
                stdev_f1,
                f1s,
            });
        }
        report
    }

    /// `percent  mean  stdev` in points, one row per percent.
    pub fn to_text(&self) -> String {
        let mut out = String::from("percent  mean_f1  stdev\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:>6.1}%  {:>7.1}  {:>5.1}\n",
                100.0 * r.percent,
                100.0 * r.mean_f1,
                100.0 * r.stdev_f1
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaCandidate {
    pub lambda: f64,
    pub dev_f1: f64,
    pub domain_acc: Option<f64>,
}

/// Highest source-dev F1; among equal scores, domain accuracy closest to
/// 0.5 wins, then the earlier candidate.
pub fn select_lambda(candidates: &[LambdaCandidate]) -> Option<usize> {
    let confusion = |c: &LambdaCandidate| c.domain_acc.map_or(f64::INFINITY, |a| (a - 0.5).abs());
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        best = match best {
            None => Some(i),
            Some(b) => {
                let cb = &candidates[b];
                if c.dev_f1 > cb.dev_f1 || (c.dev_f1 == cb.dev_f1 && confusion(c) < confusion(cb)) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// Token counts pooled over several reports.
pub fn pooled(reports: &[EvalReport]) -> EvalReport {
    let mut c = Counts::default();
    for r in reports {
        c.merge(r.counts);
    }
    EvalReport::from_counts(c)
}
