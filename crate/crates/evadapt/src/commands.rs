//! The CLI stages. Each takes a validated config and returns the directory it
//! wrote; nothing is written outside the config's output root.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use evadapt_core::corpus::{
    compute_stats, filter_unrealized_events, sample_labeled_fraction, split_corpus, write_tsv, Corpus, CorpusStats,
    Domain, DomainExample, TaggedSentence, DEV, TEST, TRAIN,
};
use evadapt_core::eval::{
    build_transfer_matrix, disagreements_tsv, evaluate, export_disagreements, EvalReport, MatrixEntry,
};
use evadapt_core::features::{build_pos_vocab, build_vocab, FeatureContext, FeatureKind, FeaturePlan, Vocab};
use evadapt_core::nets::{AnyModel, Tagger};
use evadapt_core::selftrain::self_train;
use evadapt_core::synth::{make_synthetic_pair, synthetic_word_vectors, SyntheticSpec};
use evadapt_core::training::{
    select_lambda, AdaConfig, CurveReport, LambdaCandidate, Trainable, TrainLog, TrainOutcome, Trainer,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::clock::WallClock;
use crate::config::{ExperimentConfig, TrainMode};
use crate::io::{
    import_contextual_features, load_corpus, load_pretrained_embeddings, parse_vocab, read_text, save_corpus,
    vocab_text, word2vec_text, write_file, write_json,
};
use crate::{Error, Result};

pub const CONFIG_COPY: &str = "config.toml";

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    write_file(&dir.join(CONFIG_COPY), cfg.to_toml())
}

// ---------------------------------------------------------------------------
// synth

/// Writes `source.tsv`, `target.tsv`, `embeddings.txt` and the expanded
/// `spec.toml`.
pub fn synth(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.stage_dir("synth");
    let spec = cfg.synthetic.spec(cfg.seed)?;
    let (s, t) = make_synthetic_pair(&spec, cfg.seed)?;
    write_file(&dir.join("source.tsv"), write_tsv(&s))?;
    write_file(&dir.join("target.tsv"), write_tsv(&t))?;
    write_embeddings(&dir, &spec, cfg.seed)?;
    write_file(&dir.join("spec.toml"), toml::to_string(&spec).expect("spec serializes"))?;
    write_config(&dir, cfg)?;
    Ok(dir)
}

fn write_embeddings(dir: &Path, spec: &SyntheticSpec, seed: u64) -> Result<()> {
    let vectors = synthetic_word_vectors(spec, seed)?;
    write_file(&dir.join(EMBEDDINGS), word2vec_text(&vectors, spec.embedding.dim))
}

// ---------------------------------------------------------------------------
// prepare

const SOURCE_DIR: &str = "source";
const TARGET_DIR: &str = "target";
const VOCAB: &str = "vocab.txt";
const POS_VOCAB: &str = "pos_vocab.txt";
const EMBEDDINGS: &str = "embeddings.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub role: String,
    pub name: String,
    pub stats: CorpusStats,
    pub density: String,
    /// Before realis filtering, when it was applied.
    pub unfiltered: Option<CorpusStats>,
    pub splits: BTreeMap<String, CorpusStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub corpora: Vec<CorpusReport>,
    pub vocab_size: usize,
    pub pos_tags: usize,
}

impl StatsReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<8} {:<16} {:>6} {:>9} {:>7} {:>8}\n",
            "role", "corpus", "docs", "tokens", "events", "density"
        );
        let row = |out: &mut String, role: &str, name: &str, s: &CorpusStats| {
            out.push_str(&format!(
                "{:<8} {:<16} {:>6} {:>9} {:>7} {:>8}\n",
                role,
                name,
                s.n_docs,
                s.n_tokens,
                s.n_events,
                s.density_display()
            ))
        };
        for c in &self.corpora {
            if let Some(u) = &c.unfiltered {
                row(&mut out, &c.role, &format!("{} (raw)", c.name), u);
            }
            row(&mut out, &c.role, &c.name, &c.stats);
            for (split, s) in &c.splits {
                row(&mut out, "", &format!("  {split}"), s);
            }
        }
        out.push_str(&format!("vocabulary {} words, {} POS tags\n", self.vocab_size, self.pos_tags));
        out
    }
}

fn corpus_report(role: &str, c: &Corpus, unfiltered: Option<&Corpus>) -> Result<CorpusReport> {
    let stats = compute_stats(c)?;
    let mut splits = BTreeMap::new();
    for name in c.splits.keys() {
        let sub = c.subset(name)?;
        if sub.n_tokens() > 0 {
            splits.insert(name.clone(), compute_stats(&sub)?);
        }
    }
    Ok(CorpusReport {
        role: role.into(),
        name: c.name.clone(),
        density: stats.density_display(),
        stats,
        unfiltered: unfiltered.map(compute_stats).transpose()?,
        splits,
    })
}

/// Raw corpora for `prepare`: from files, or generated.
fn raw_corpora(cfg: &ExperimentConfig) -> Result<(Corpus, Corpus, Option<SyntheticSpec>)> {
    if cfg.data.synthetic {
        let spec = cfg.synthetic.spec(cfg.seed)?;
        let (s, t) = make_synthetic_pair(&spec, cfg.seed)?;
        return Ok((s, t, Some(spec)));
    }
    let need = |p: &Option<PathBuf>, role: &str| {
        p.clone()
            .ok_or_else(|| Error::Config(format!("data.{role} is required unless data.synthetic = true")))
    };
    let s = load_corpus(&need(&cfg.data.source, "source")?)?;
    let t = load_corpus(&need(&cfg.data.target, "target")?)?;
    Ok((s, t, None))
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.prepared_dir();
    let (raw_s, raw_t, spec) = raw_corpora(cfg)?;
    let [a, b, c] = cfg.data.split;
    let mut reports = Vec::new();
    let mut out = Vec::new();
    for (role, raw) in [("source", raw_s), ("target", raw_t)] {
        let filter = cfg.data.realis_filter.iter().any(|r| r == role);
        let filtered = filter.then(|| filter_unrealized_events(&raw, &cfg.data.realis_policy));
        let chosen = filtered.unwrap_or_else(|| raw.clone());
        let split = if chosen.splits.is_empty() {
            split_corpus(&chosen, (a, b, c), cfg.data.split_seed)?
        } else {
            chosen
        };
        reports.push(corpus_report(role, &split, filter.then_some(&raw))?);
        out.push(split);
    }
    let (source, target) = (&out[0], &out[1]);
    let vocab = build_vocab(source, target, cfg.data.min_count, cfg.data.case_fold);
    let pos = build_pos_vocab(source, target);
    save_corpus(&dir.join(SOURCE_DIR), source)?;
    save_corpus(&dir.join(TARGET_DIR), target)?;
    write_file(&dir.join(VOCAB), vocab_text(&vocab))?;
    write_file(&dir.join(POS_VOCAB), vocab_text(&pos))?;
    if let Some(spec) = &spec {
        write_embeddings(&dir, spec, cfg.seed)?;
    }
    let report = StatsReport {
        corpora: reports,
        vocab_size: vocab.len(),
        pos_tags: pos.len(),
    };
    write_json(&dir.join("stats.json"), &report)?;
    write_file(&dir.join("stats.txt"), report.to_text())?;
    write_config(&dir, cfg)?;
    Ok(dir)
}

/// The output of `prepare`, loaded back.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dir: PathBuf,
    pub source: Corpus,
    pub target: Corpus,
    pub vocab: Vocab,
    pub pos_vocab: Vocab,
}

impl Prepared {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let dir = cfg.prepared_dir();
        if !dir.join(VOCAB).is_file() {
            return Err(Error::Config(format!("{} holds no prepared data; run prepare first", dir.display())));
        }
        Ok(Prepared {
            source: load_corpus(&dir.join(SOURCE_DIR))?,
            target: load_corpus(&dir.join(TARGET_DIR))?,
            vocab: parse_vocab(&read_text(&dir.join(VOCAB))?, cfg.data.case_fold),
            pos_vocab: parse_vocab(&read_text(&dir.join(POS_VOCAB))?, false),
            dir,
        })
    }

    fn role(&self, role: &str) -> &Corpus {
        if role == "source" {
            &self.source
        } else {
            &self.target
        }
    }
}

/// OOV rows of the embedding table are seeded from the vocabulary itself, so
/// a checkpoint gets the same table wherever it is reloaded.
fn oov_seed(vocab: &Vocab) -> u64 {
    let h = crate::checkpoint::vocab_hash(vocab);
    u64::from_str_radix(&h[..16], 16).expect("hex digest")
}

pub fn feature_context(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    plan: FeaturePlan,
    vocab: Vocab,
    pos_vocab: Vocab,
) -> Result<FeatureContext> {
    let mut ctx = FeatureContext {
        plan,
        vocab,
        pos_vocab,
        embeddings: None,
        store: None,
    };
    match plan.kind {
        FeatureKind::Static | FeatureKind::StaticPos => {
            let path = cfg.features.embeddings.clone().unwrap_or_else(|| prepared.dir.join(EMBEDDINGS));
            if !path.is_file() {
                return Err(Error::Config(format!(
                    "static features need features.embeddings ({} does not exist)",
                    path.display()
                )));
            }
            ctx.embeddings = Some(load_pretrained_embeddings(&path, &ctx.vocab, plan.word_dim, oov_seed(&ctx.vocab))?);
        }
        FeatureKind::Contextual => {
            let dir = cfg
                .features
                .contextual
                .as_ref()
                .ok_or_else(|| Error::Config("contextual features need features.contextual".into()))?;
            let mut store = import_contextual_features(dir, &prepared.source, cfg.features.alignment, plan.contextual_dim)?;
            store.extend(import_contextual_features(
                dir,
                &prepared.target,
                cfg.features.alignment,
                plan.contextual_dim,
            )?)?;
            ctx.store = Some(store);
        }
    }
    ctx.check()?;
    Ok(ctx)
}

fn context_for_checkpoint(cfg: &ExperimentConfig, prepared: &Prepared, ck: &Checkpoint) -> Result<FeatureContext> {
    feature_context(cfg, prepared, ck.meta.arch.plan, ck.vocab.clone(), ck.pos_vocab.clone())
}

// ---------------------------------------------------------------------------
// train

fn unlabeled(sents: &[&TaggedSentence]) -> Vec<DomainExample> {
    sents.iter().map(|s| DomainExample::unlabeled(s, Domain::Target)).collect()
}

fn split<'c>(c: &'c Corpus, name: &str) -> Result<Vec<&'c TaggedSentence>> {
    c.split(name)
        .ok_or_else(|| Error::Config(format!("corpus {} has no {name} split", c.name)))
}

/// Metrics of one training run. Wall-clock time stays in the log so that
/// reruns produce identical results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config_hash: String,
    pub mode: TrainMode,
    pub seed: u64,
    pub lambda: Option<f64>,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    /// Held-out domain-classifier accuracy at the best epoch.
    pub domain_accuracy: Option<f64>,
    pub in_domain: EvalReport,
    pub out_of_domain: EvalReport,
    pub warnings: Vec<String>,
}

fn trainlog_jsonl(log: &TrainLog) -> String {
    let mut s = String::new();
    for r in &log.records {
        s.push_str(&serde_json::to_string(r).expect("record serializes"));
        s.push('\n');
    }
    s
}

struct Trained {
    best: AnyModel,
    last: AnyModel,
    result: RunResult,
    log: TrainLog,
}

fn finish<M: Trainable>(
    o: TrainOutcome<M>,
    wrap: fn(M) -> AnyModel,
    scores: impl Fn(&M) -> Result<(EvalReport, EvalReport)>,
    cfg: &ExperimentConfig,
) -> Result<Trained> {
    let (in_domain, out_of_domain) = scores(&o.best)?;
    let domain_accuracy = o
        .log
        .records
        .iter()
        .find(|r| r.epoch == o.best_epoch)
        .and_then(|r| r.domain_acc);
    let result = RunResult {
        config_hash: cfg.hash(),
        mode: cfg.train.mode,
        seed: cfg.seed,
        lambda: (cfg.train.mode == TrainMode::Ada).then_some(cfg.model.lambda),
        epochs: o.log.records.len(),
        best_epoch: o.best_epoch,
        best_dev_f1: o.best_dev_f1,
        domain_accuracy,
        in_domain,
        out_of_domain,
        warnings: o.warnings,
    };
    Ok(Trained {
        best: wrap(o.best),
        last: wrap(o.last),
        result,
        log: o.log,
    })
}

fn run_training(cfg: &ExperimentConfig, prepared: &Prepared, dir: &Path) -> Result<RunResult> {
    let plan = cfg.features.plan(cfg.model.learner);
    let ctx = feature_context(cfg, prepared, plan, prepared.vocab.clone(), prepared.pos_vocab.clone())?;
    let clock = WallClock::start();
    let trainer = Trainer::new(&ctx, &cfg.model, &clock)?;
    let (src, tgt) = (&prepared.source, &prepared.target);
    let src_test = split(src, TEST)?;
    let src_name = format!("{}/{TEST}", src.name);
    let tgt_all: Vec<&TaggedSentence> = tgt.sentences.iter().collect();
    let trained = match cfg.train.mode {
        TrainMode::Supervised | TrainMode::Ada => {
            let o = if cfg.train.mode == TrainMode::Ada {
                let tgt_train = unlabeled(&split(tgt, TRAIN)?);
                let tgt_dev = unlabeled(&split(tgt, DEV)?);
                trainer.train_ada(src, &tgt_train, &tgt_dev)?
            } else {
                trainer.train_supervised(src)?
            };
            let scores = |m: &Tagger| {
                Ok((
                    evaluate(m, &ctx, &src_test, Domain::Source)?.named(&src_name, "best"),
                    evaluate(m, &ctx, &tgt_all, Domain::Target)?.named(&tgt.name, "best"),
                ))
            };
            finish(o, AnyModel::Tagger, scores, cfg)?
        }
        TrainMode::Feda => {
            let (labeled, _) = sample_labeled_fraction(tgt, cfg.train.feda_fraction, cfg.seed)?;
            let lab: Vec<&TaggedSentence> = labeled.sentences.iter().collect();
            let o = trainer.train_feda(src, &lab, &split(tgt, DEV)?)?;
            let tgt_test = split(tgt, TEST)?;
            let scores = |m: &evadapt_core::nets::FedaModel| {
                Ok((
                    evaluate(m, &ctx, &src_test, Domain::Source)?.named(&src_name, "best"),
                    evaluate(m, &ctx, &tgt_test, Domain::Target)?.named(&format!("{}/{TEST}", tgt.name), "best"),
                ))
            };
            finish(o, AnyModel::Feda, scores, cfg)?
        }
    };
    let hash = cfg.hash();
    write_config(dir, cfg)?;
    write_file(&dir.join("trainlog.jsonl"), trainlog_jsonl(&trained.log))?;
    save_checkpoint(&dir.join("best.ckpt"), &trained.best, &ctx.vocab, &ctx.pos_vocab, &hash)?;
    save_checkpoint(&dir.join("final.ckpt"), &trained.last, &ctx.vocab, &ctx.pos_vocab, &hash)?;
    write_json(&dir.join("result.json"), &trained.result)?;
    Ok(trained.result)
}

pub fn train(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let prepared = Prepared::load(cfg)?;
    let dir = cfg.run_dir();
    run_training(cfg, &prepared, &dir)?;
    Ok(dir)
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub seeds: Vec<u64>,
    pub dev_f1: f64,
    pub domain_accuracy: Option<f64>,
    pub in_domain_f1: f64,
    pub out_of_domain_f1: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub best_lambda: f64,
}

impl SweepReport {
    pub fn to_text(&self) -> String {
        let mut out = String::from("  lambda  dev_f1  dom_acc  in_f1  out_f1\n");
        for r in &self.rows {
            let acc = r.domain_accuracy.map_or("-".to_string(), |a| format!("{a:.3}"));
            out.push_str(&format!(
                "{} {:>6}  {:>6.1}  {:>7}  {:>5.1}  {:>6.1}\n",
                if r.selected { '*' } else { ' ' },
                r.lambda,
                100.0 * r.dev_f1,
                acc,
                100.0 * r.in_domain_f1,
                100.0 * r.out_of_domain_f1
            ));
        }
        out
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

pub fn sweep(cfg: &ExperimentConfig) -> Result<PathBuf> {
    if cfg.sweep.lambdas.is_empty() {
        return Err(Error::Config("sweep.lambdas is empty".into()));
    }
    if cfg.train.mode != TrainMode::Ada {
        return Err(Error::Config("sweep varies lambda and needs train.mode = \"ada\"".into()));
    }
    let prepared = Prepared::load(cfg)?;
    let dir = cfg.stage_dir("sweeps");
    let seeds = if cfg.sweep.seeds.is_empty() { vec![cfg.seed] } else { cfg.sweep.seeds.clone() };
    let jobs: Vec<(f64, u64)> = cfg
        .sweep
        .lambdas
        .iter()
        .flat_map(|&l| seeds.iter().map(move |&s| (l, s)))
        .collect();
    let run = |&(lambda, seed): &(f64, u64)| -> Result<RunResult> {
        let mut c = cfg.clone();
        c.model.lambda = lambda;
        c.seed = seed;
        c.model.seed = seed;
        c.validate()?;
        run_training(&c, &prepared, &dir.join(format!("lambda-{lambda}-seed-{seed}")))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.sweep.jobs)
        .build()
        .map_err(|e| Error::Config(format!("sweep.jobs: {e}")))?;
    let results: Vec<RunResult> = pool.install(|| jobs.par_iter().map(run).collect::<Result<Vec<_>>>())?;
    let mut rows = Vec::new();
    for &lambda in &cfg.sweep.lambdas {
        let rs: Vec<&RunResult> = results.iter().filter(|r| r.lambda == Some(lambda)).collect();
        let accs: Vec<f64> = rs.iter().filter_map(|r| r.domain_accuracy).collect();
        rows.push(SweepRow {
            lambda,
            seeds: seeds.clone(),
            dev_f1: mean(&rs.iter().map(|r| r.best_dev_f1).collect::<Vec<_>>()),
            domain_accuracy: (!accs.is_empty()).then(|| mean(&accs)),
            in_domain_f1: mean(&rs.iter().map(|r| r.in_domain.f1).collect::<Vec<_>>()),
            out_of_domain_f1: mean(&rs.iter().map(|r| r.out_of_domain.f1).collect::<Vec<_>>()),
            selected: false,
        });
    }
    let candidates: Vec<LambdaCandidate> = rows
        .iter()
        .map(|r| LambdaCandidate {
            lambda: r.lambda,
            dev_f1: r.dev_f1,
            domain_acc: r.domain_accuracy,
        })
        .collect();
    let best = select_lambda(&candidates).expect("at least one lambda");
    rows[best].selected = true;
    let report = SweepReport {
        best_lambda: rows[best].lambda,
        rows,
    };
    write_config(&dir, cfg)?;
    write_json(&dir.join("sweep.json"), &report)?;
    write_file(&dir.join("sweep.txt"), report.to_text())?;
    Ok(dir)
}

// ---------------------------------------------------------------------------
// finetune, selftrain, eval

fn default_checkpoint(cfg: &ExperimentConfig, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| cfg.run_dir().join("best.ckpt"))
}

fn curve_tsv(report: &CurveReport, seeds: &[u64]) -> String {
    let mut out = String::from("fraction\tseed\tf1\n");
    for r in &report.rows {
        for (s, f) in seeds.iter().zip(&r.f1s) {
            out.push_str(&format!("{}\t{s}\t{f:.6}\n", r.percent));
        }
        out.push_str(&format!("{}\tmean\t{:.6}\n", r.percent, r.mean_f1));
    }
    out
}

pub fn finetune(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let prepared = Prepared::load(cfg)?;
    let ck = load_checkpoint(&default_checkpoint(cfg, &cfg.finetune.checkpoint))?;
    let ctx = context_for_checkpoint(cfg, &prepared, &ck)?;
    let mut model_cfg: AdaConfig = cfg.model.clone();
    model_cfg.learner = ck.meta.kind;
    let clock = WallClock::start();
    let trainer = Trainer::new(&ctx, &model_cfg, &clock)?;
    let test = split(&prepared.target, TEST)?;
    let (fr, seeds) = (&cfg.finetune.fractions, &cfg.finetune.seeds);
    let report = match &ck.model {
        AnyModel::Tagger(m) => trainer.run_finetune_sweep(m, &prepared.target, fr, seeds, &test)?,
        AnyModel::Feda(m) => trainer.run_finetune_sweep(m, &prepared.target, fr, seeds, &test)?,
    };
    let dir = cfg.stage_dir("finetune");
    write_config(&dir, cfg)?;
    write_json(&dir.join("curve.json"), &report)?;
    write_file(&dir.join("curve.tsv"), curve_tsv(&report, seeds))?;
    write_file(&dir.join("curve.txt"), report.to_text())?;
    Ok(dir)
}

pub fn selftrain(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let prepared = Prepared::load(cfg)?;
    let ck = load_checkpoint(&default_checkpoint(cfg, &cfg.selftrain.teacher))?;
    let AnyModel::Tagger(teacher) = &ck.model else {
        return Err(Error::Config("the self-training teacher must be a single-extractor model, not FEDA".into()));
    };
    let teacher_ctx = context_for_checkpoint(cfg, &prepared, &ck)?;
    let student_plan = cfg.features.plan(cfg.selftrain.student_kind);
    let student_ctx = feature_context(cfg, &prepared, student_plan, prepared.vocab.clone(), prepared.pos_vocab.clone())?;
    let clock = WallClock::start();
    let setup = evadapt_core::selftrain::SelfTrainSetup {
        teacher,
        teacher_ctx: &teacher_ctx,
        student_ctx: &student_ctx,
        cfg: &cfg.model,
        clock: &clock,
    };
    let out = self_train(&cfg.selftrain_spec(cfg.seed), &setup, &prepared.target)?;
    let dir = cfg.stage_dir("selftrain");
    write_config(&dir, cfg)?;
    write_file(&dir.join("pseudo_labels.tsv"), write_tsv(&out.pseudo_labeled))?;
    write_file(&dir.join("labeled.tsv"), write_tsv(&out.labeled))?;
    write_json(&dir.join("selftrain_report.json"), &out.report)?;
    let hash = cfg.hash();
    let (v, p) = (&student_ctx.vocab, &student_ctx.pos_vocab);
    save_checkpoint(&dir.join("student.ckpt"), &AnyModel::Tagger(out.student), v, p, &hash)?;
    let (v, p) = (&teacher_ctx.vocab, &teacher_ctx.pos_vocab);
    save_checkpoint(&dir.join("teacher.ckpt"), &AnyModel::Tagger(out.teacher), v, p, &hash)?;
    Ok(dir)
}

pub fn eval(cfg: &ExperimentConfig) -> Result<PathBuf> {
    if cfg.eval.models.is_empty() {
        return Err(Error::Config("eval.models is empty".into()));
    }
    let prepared = Prepared::load(cfg)?;
    let mut loaded = Vec::new();
    for m in &cfg.eval.models {
        let ck = load_checkpoint(&m.checkpoint)?;
        let ctx = context_for_checkpoint(cfg, &prepared, &ck)?;
        loaded.push((m, ck, ctx));
    }
    let entries: Vec<MatrixEntry<'_>> = loaded
        .iter()
        .map(|(m, ck, ctx)| MatrixEntry {
            id: m.id.clone(),
            train_domain: prepared.role(&m.trained_on).name.clone(),
            model: &ck.model,
            ctx,
        })
        .collect();
    let matrix = build_transfer_matrix(&entries, &[&prepared.source, &prepared.target])?;
    let dir = cfg.stage_dir("eval");
    write_config(&dir, cfg)?;
    write_json(&dir.join("matrix.json"), &matrix)?;
    write_file(&dir.join("matrix.txt"), matrix.to_text())?;
    if let Some(d) = &cfg.eval.disagreements {
        let find = |id: &str| loaded.iter().find(|(m, _, _)| m.id == id).expect("validated id");
        let (a, b) = (find(&d.a), find(&d.b));
        let corpus = prepared.role(&d.corpus);
        let sents: Vec<&TaggedSentence> = corpus.sentences.iter().collect();
        let domain = if d.corpus == "source" { Domain::Source } else { Domain::Target };
        let rows = export_disagreements(&a.1.model, &a.2, &b.1.model, &b.2, &sents, domain, d.limit)?;
        write_file(&dir.join("disagreements.tsv"), disagreements_tsv(&rows))?;
    }
    Ok(dir)
}
