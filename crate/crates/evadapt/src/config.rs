//! The experiment configuration file.
//!
//! A TOML document with one table per stage. Unknown keys are errors, every
//! default is written out in the copy stored next to each run, and the
//! config hash covers that materialized copy minus the output root.

use std::path::{Path, PathBuf};

use evadapt_core::corpus::RealisPolicy;
use evadapt_core::features::{Alignment, FeatureKind, FeaturePlan};
use evadapt_core::nets::LearnerKind;
use evadapt_core::synth::{EmbeddingSpec, GeneratedSpec, SyntheticSpec};
use evadapt_core::training::{AdaConfig, LAMBDA_GRID};
use serde::{Deserialize, Serialize};

use crate::checkpoint::sha256_hex;
use crate::io::read_text;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Overrides `output_dir` when set.
pub const OUTPUT_ENV: &str = "EVADAPT_OUTPUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Names the run directories of every stage.
    pub name: String,
    pub output_dir: PathBuf,
    /// Root of every random stream.
    pub seed: u64,
    pub data: DataConfig,
    pub synthetic: SyntheticConfig,
    pub features: FeaturesConfig,
    pub train: TrainConfig,
    /// Training hyperparameters. `model.seed` is replaced by the root seed.
    pub model: AdaConfig,
    pub sweep: SweepConfig,
    pub finetune: FinetuneConfig,
    pub selftrain: SelfTrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            name: "run".into(),
            output_dir: "out".into(),
            seed: 0,
            data: DataConfig::default(),
            synthetic: SyntheticConfig::default(),
            features: FeaturesConfig::default(),
            train: TrainConfig::default(),
            model: AdaConfig::default(),
            sweep: SweepConfig::default(),
            finetune: FinetuneConfig::default(),
            selftrain: SelfTrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Generate both corpora from `[synthetic]` instead of reading files.
    pub synthetic: bool,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    /// Train/dev/test fractions for corpora without a split sidecar.
    pub split: [f64; 3],
    /// Kept apart from the root seed so that seed sweeps share splits.
    pub split_seed: u64,
    /// Corpora (`source`, `target`) whose unrealized events become O.
    pub realis_filter: Vec<String>,
    pub realis_policy: RealisPolicy,
    pub min_count: usize,
    pub case_fold: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            synthetic: false,
            source: None,
            target: None,
            split: [0.8, 0.1, 0.1],
            split_seed: 0,
            realis_filter: Vec::new(),
            realis_policy: RealisPolicy::default(),
            min_count: 1,
            case_fold: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    /// A full spec file; the generator knobs below are ignored when set.
    pub spec: Option<PathBuf>,
    pub n_templates: usize,
    pub content_words_per_domain: usize,
    pub trigger_share: f64,
    pub source_density: f64,
    pub target_density: f64,
    pub sentences_per_domain: usize,
    pub embedding: EmbeddingSpec,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let g = GeneratedSpec::default();
        SyntheticConfig {
            spec: None,
            n_templates: g.n_templates,
            content_words_per_domain: g.content_words_per_domain,
            trigger_share: g.trigger_share,
            source_density: g.source_density,
            target_density: g.target_density,
            sentences_per_domain: g.sentences_per_domain,
            embedding: EmbeddingSpec::default(),
        }
    }
}

impl SyntheticConfig {
    pub fn spec(&self, seed: u64) -> Result<SyntheticSpec> {
        let spec = match &self.spec {
            Some(path) => parse_synthetic_spec(path)?,
            None => {
                let g = GeneratedSpec {
                    n_templates: self.n_templates,
                    content_words_per_domain: self.content_words_per_domain,
                    trigger_share: self.trigger_share,
                    source_density: self.source_density,
                    target_density: self.target_density,
                    sentences_per_domain: self.sentences_per_domain,
                };
                let mut s = SyntheticSpec::generated(&g, seed);
                s.embedding = self.embedding.clone();
                s
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub fn parse_synthetic_spec(path: &Path) -> Result<SyntheticSpec> {
    toml::from_str(&read_text(path)?).map_err(|e| crate::io::format_err(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    /// word2vec text file; defaults to the vectors written by `prepare` for
    /// synthetic data.
    pub embeddings: Option<PathBuf>,
    /// Contextual feature directory (`index.json` plus binary arrays).
    pub contextual: Option<PathBuf>,
    pub alignment: Alignment,
    pub word_dim: usize,
    pub pos_dim: usize,
    pub contextual_dim: usize,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        let p = FeaturePlan::default();
        FeaturesConfig {
            embeddings: None,
            contextual: None,
            alignment: Alignment::default(),
            word_dim: p.word_dim,
            pos_dim: p.pos_dim,
            contextual_dim: p.contextual_dim,
        }
    }
}

impl FeaturesConfig {
    pub fn plan(&self, kind: LearnerKind) -> FeaturePlan {
        FeaturePlan {
            kind: kind.feature_kind(),
            word_dim: self.word_dim,
            pos_dim: self.pos_dim,
            contextual_dim: self.contextual_dim,
        }
    }

    pub fn needs_contextual(kind: LearnerKind) -> bool {
        kind.feature_kind() == FeatureKind::Contextual
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Supervised,
    Ada,
    Feda,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Share of the target train split labeled for FEDA, in (0, 1).
    pub feda_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Ada,
            feda_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
    /// Empty means the root seed only.
    pub seeds: Vec<u64>,
    /// Concurrent runs; 0 picks the number of cores.
    pub jobs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            lambdas: LAMBDA_GRID.to_vec(),
            seeds: Vec::new(),
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    /// Defaults to the `best.ckpt` of the `train` run with this config's
    /// name.
    pub checkpoint: Option<PathBuf>,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            checkpoint: None,
            fractions: vec![0.01, 0.02, 0.03, 0.04, 0.05],
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfTrainConfig {
    /// Defaults like `finetune.checkpoint`.
    pub teacher: Option<PathBuf>,
    pub labeled_fraction: f64,
    pub iterations: usize,
    pub student_kind: LearnerKind,
    pub student_epochs: usize,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        let s = evadapt_core::selftrain::SelfTrainSpec::default();
        SelfTrainConfig {
            teacher: None,
            labeled_fraction: s.labeled_fraction,
            iterations: s.iterations,
            student_kind: s.student_kind,
            student_epochs: s.student_epochs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalModel {
    pub id: String,
    pub checkpoint: PathBuf,
    /// `source` or `target`: the corpus the model was trained on.
    pub trained_on: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisagreementConfig {
    /// Model ids from `eval.models`.
    pub a: String,
    pub b: String,
    /// `source` or `target`; the whole corpus is scanned.
    #[serde(default = "default_target")]
    pub corpus: String,
    #[serde(default = "default_limit")]
    pub limit: usize,
}

fn default_target() -> String {
    "target".into()
}

fn default_limit() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub models: Vec<EvalModel>,
    pub disagreements: Option<DisagreementConfig>,
}

pub const ROLES: [&str; 2] = ["source", "target"];

impl ExperimentConfig {
    /// Parses, applies `--set` overrides, resolves relative paths against
    /// `base` and validates.
    pub fn from_toml(text: &str, overrides: &[String], base: &Path) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: ExperimentConfig = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.resolve_paths(base);
        cfg.model.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&read_text(path)?, overrides, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let fix_opt = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                fix(p)
            }
        };
        fix(&mut self.output_dir);
        fix_opt(&mut self.data.source);
        fix_opt(&mut self.data.target);
        fix_opt(&mut self.synthetic.spec);
        fix_opt(&mut self.features.embeddings);
        fix_opt(&mut self.features.contextual);
        fix_opt(&mut self.finetune.checkpoint);
        fix_opt(&mut self.selftrain.teacher);
        for m in &mut self.eval.models {
            fix(&mut m.checkpoint);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} is not {SCHEMA_VERSION}", self.schema_version));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return bad(format!("name {:?} must be a plain directory name", self.name));
        }
        let [a, b, c] = self.data.split;
        if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return bad(format!("data.split {:?} must be three fractions summing to 1", self.data.split));
        }
        for r in &self.data.realis_filter {
            if !ROLES.contains(&r.as_str()) {
                return bad(format!("data.realis_filter entry {r:?} is not source or target"));
            }
        }
        if self.data.min_count == 0 {
            return bad("data.min_count must be >= 1".into());
        }
        if !(self.train.feda_fraction > 0.0 && self.train.feda_fraction < 1.0) {
            return bad(format!("train.feda_fraction {} must lie in (0, 1)", self.train.feda_fraction));
        }
        self.model.validate().map_err(|e| Error::Config(format!("model: {e}")))?;
        for f in &self.finetune.fractions {
            if !(*f > 0.0 && *f < 1.0) {
                return bad(format!("finetune.fractions entry {f} must lie in (0, 1)"));
            }
        }
        self.selftrain_spec(self.seed)
            .validate()
            .map_err(|e| Error::Config(format!("selftrain: {e}")))?;
        for m in &self.eval.models {
            if !ROLES.contains(&m.trained_on.as_str()) {
                return bad(format!("eval model {}: trained_on must be source or target", m.id));
            }
        }
        if let Some(d) = &self.eval.disagreements {
            for id in [&d.a, &d.b] {
                if !self.eval.models.iter().any(|m| &m.id == id) {
                    return bad(format!("eval.disagreements names unknown model {id:?}"));
                }
            }
            if !ROLES.contains(&d.corpus.as_str()) {
                return bad("eval.disagreements.corpus must be source or target".into());
            }
        }
        Ok(())
    }

    pub fn selftrain_spec(&self, seed: u64) -> evadapt_core::selftrain::SelfTrainSpec {
        evadapt_core::selftrain::SelfTrainSpec {
            labeled_fraction: self.selftrain.labeled_fraction,
            iterations: self.selftrain.iterations,
            student_kind: self.selftrain.student_kind,
            student_epochs: self.selftrain.student_epochs,
            seed,
        }
    }

    /// The output root, honouring the environment override.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }

    pub fn prepared_dir(&self) -> PathBuf {
        self.output_root().join("prepared")
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_root().join("runs").join(&self.name)
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.output_root().join(stage).join(&self.name)
    }

    /// Every field, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical (sorted-key JSON) form, output root excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let v = serde_json::to_value(&c).expect("config serializes");
        sha256_hex(serde_json::to_string(&v).expect("json"))
    }
}

/// Applies one `dotted.key=value` override. The value is read as a TOML
/// literal and falls back to a bare string.
pub fn apply_override(doc: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key {key:?} is malformed")));
    }
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {p} is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, sets: &[&str]) -> Result<ExperimentConfig> {
        let sets: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
        ExperimentConfig::from_toml(text, &sets, Path::new("/base"))
    }

    #[test]
    fn defaults_are_materialized_and_reparse() {
        let cfg = parse("", &[]).unwrap();
        assert_eq!(cfg.model.patience, 25);
        assert_eq!(cfg.sweep.lambdas, LAMBDA_GRID.to_vec());
        let text = cfg.to_toml();
        assert!(text.contains("patience = 25"), "{text}");
        let again = parse(&text, &[]).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_and_bad_modes_are_rejected() {
        assert!(parse("colour = 1", &[]).is_err());
        assert!(parse("[model]\nlamda = 1.0", &[]).is_err());
        let err = parse("[train]\nmode = \"adda\"", &[]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn overrides_set_nested_values() {
        let cfg = parse("[model]\nlambda = 1.0", &["model.lambda=0.5", "train.mode=feda", "name = x"]).unwrap();
        assert_eq!(cfg.model.lambda, 0.5);
        assert_eq!(cfg.train.mode, TrainMode::Feda);
        assert_eq!(cfg.name, "x");
        assert!(parse("", &["nokey"]).is_err());
        assert!(parse("", &["model.typo=1"]).is_err());
    }

    #[test]
    fn hash_tracks_content_not_output_root() {
        let a = parse("", &[]).unwrap();
        let b = parse("output_dir = \"elsewhere\"", &[]).unwrap();
        let c = parse("", &["model.lambda=2.0"]).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn relative_paths_resolve_against_the_config() {
        let cfg = parse("[data]\nsource = \"lit.tsv\"", &[]).unwrap();
        assert_eq!(cfg.data.source.unwrap(), Path::new("/base/lit.tsv"));
        assert_eq!(cfg.output_dir, Path::new("/base/out"));
    }

    #[test]
    fn root_seed_reaches_the_model() {
        let cfg = parse("seed = 7", &[]).unwrap();
        assert_eq!(cfg.model.seed, 7);
    }

    #[test]
    fn validation_catches_bad_values() {
        assert!(parse("[data]\nsplit = [0.5, 0.5, 0.5]", &[]).is_err());
        assert!(parse("[model]\nbatch_size = 0", &[]).is_err());
        assert!(parse("[finetune]\nfractions = [5.0]", &[]).is_err());
        assert!(parse("[data]\nrealis_filter = [\"both\"]", &[]).is_err());
        assert!(parse("name = \"../up\"", &[]).is_err());
    }
}
