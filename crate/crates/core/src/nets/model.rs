//! Complete taggers: representation learner, event classifier and the
//! optional adversarial domain head; plus the FEDA triple-extractor variant.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::heads::{pool, pool_backward, GradientReversal, PoolCache, PoolMode};
use super::learner::{LearnerKind, Mode, ReprCache, ReprLearner};
use super::linear::{Mlp, MlpCache};
use crate::corpus::Domain;
use crate::error::{Error, Result};
use crate::features::{Batch, FeaturePlan};
use crate::seed;
use crate::tensor::{join, Matrix, Param, Parameters};

pub const N_CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainHeadArch {
    pub pooling: PoolMode,
    pub hidden: usize,
    /// Hidden layers before the 2-way output.
    pub layers: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaggerArch {
    pub kind: LearnerKind,
    pub plan: FeaturePlan,
    pub n_pos: usize,
    pub hidden: usize,
    pub input_dropout: f64,
    pub classifier_hidden: usize,
    pub domain_head: Option<DomainHeadArch>,
}

impl TaggerArch {
    /// Hidden 100, input dropout 0.5, a 100-wide event classifier and no
    /// domain head.
    pub fn new(kind: LearnerKind, plan: FeaturePlan, n_pos: usize) -> Self {
        TaggerArch {
            kind,
            plan,
            n_pos,
            hidden: 100,
            input_dropout: 0.5,
            classifier_hidden: 100,
            domain_head: None,
        }
    }

    pub fn with_domain_head(mut self, pooling: PoolMode, lambda: f64) -> Self {
        self.domain_head = Some(DomainHeadArch {
            pooling,
            hidden: 100,
            layers: 3,
            lambda,
        });
        self
    }

    pub fn output_dim(&self) -> usize {
        if self.kind.bidirectional() {
            2 * self.hidden
        } else {
            self.hidden
        }
    }
}

/// Event classification for padded batches in evaluation mode.
pub trait SequenceTagger {
    /// `(B*L) x 2` logits (O, EVENT).
    fn event_logits(&self, batch: &Batch, domain: Domain) -> Result<Matrix>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainHead {
    pub pooling: PoolMode,
    pub grl: GradientReversal,
    pub predictor: Mlp,
}

#[derive(Debug, Clone)]
pub struct DomainCache {
    mask: Vec<bool>,
    pool: PoolCache,
    mlp: MlpCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tagger {
    pub arch: TaggerArch,
    pub learner: ReprLearner,
    pub classifier: Mlp,
    pub domain: Option<DomainHead>,
    /// Optimizer updates applied so far.
    pub updates: usize,
}

fn domain_head(arch: &TaggerArch, h: &DomainHeadArch, seed: u64) -> Result<DomainHead> {
    let mut dims = Vec::with_capacity(h.layers + 2);
    dims.push(arch.output_dim());
    dims.extend(core::iter::repeat(h.hidden).take(h.layers));
    dims.push(N_CLASSES);
    let mut rng = seed::rng(seed, "init.domain");
    Ok(DomainHead {
        pooling: h.pooling,
        grl: GradientReversal::new(h.lambda)?,
        predictor: Mlp::new(&dims, &mut rng),
    })
}

impl Tagger {
    /// Learner, classifier and domain head draw from separate seed streams,
    /// so adding a domain head leaves the other initial weights unchanged.
    pub fn new(arch: TaggerArch, seed: u64) -> Result<Self> {
        let mut rng = seed::rng(seed, "init.learner");
        let learner = ReprLearner::new(arch.kind, arch.plan, arch.n_pos, arch.hidden, arch.input_dropout, &mut rng)?;
        let mut rng = seed::rng(seed, "init.classifier");
        let classifier = Mlp::new(&[learner.output_dim(), arch.classifier_hidden, N_CLASSES], &mut rng);
        let domain = match &arch.domain_head {
            Some(h) => Some(domain_head(&arch, h, seed)?),
            None => None,
        };
        Ok(Tagger {
            arch,
            learner,
            classifier,
            domain,
            updates: 0,
        })
    }

    pub fn represent(&self, batch: &Batch, mode: Mode<'_>) -> Result<(Matrix, ReprCache)> {
        self.learner.represent(batch, mode)
    }

    pub fn represent_backward(&mut self, cache: &ReprCache, dh: &Matrix) {
        self.learner.backward(cache, dh);
    }

    pub fn classify(&self, h: &Matrix) -> (Matrix, MlpCache) {
        self.classifier.forward(h)
    }

    pub fn classify_backward(&mut self, cache: &MlpCache, dlogits: &Matrix) -> Matrix {
        self.classifier.backward(cache, dlogits)
    }

    /// pool → GRL → domain predictor; `B x 2` logits.
    pub fn domain_forward(&self, h: &Matrix, batch: &Batch) -> Result<(Matrix, DomainCache)> {
        let head = self
            .domain
            .as_ref()
            .ok_or_else(|| Error::invalid("model has no domain head"))?;
        let (pooled, pc) = pool(head.pooling, h, &batch.mask, batch.batch_size, batch.max_len)?;
        let (logits, mc) = head.predictor.forward(&head.grl.forward(&pooled));
        Ok((
            logits,
            DomainCache {
                mask: batch.mask.clone(),
                pool: pc,
                mlp: mc,
            },
        ))
    }

    /// The predictor receives the plain gradient; the returned `dL/dh` has
    /// passed back through the reversal.
    pub fn domain_backward(&mut self, cache: &DomainCache, dlogits: &Matrix) -> Matrix {
        let head = self.domain.as_mut().expect("domain_forward succeeded");
        let dpooled = head.predictor.backward(&cache.mlp, dlogits);
        let reversed = head.grl.backward(&dpooled);
        pool_backward(&cache.pool, &reversed, &cache.mask)
    }

    /// Domain logits in evaluation mode.
    pub fn domain_logits(&self, batch: &Batch) -> Result<Matrix> {
        let (h, _) = self.represent(batch, Mode::Eval)?;
        Ok(self.domain_forward(&h, batch)?.0)
    }

    /// Non-domain parameters of `self` and `other` agree within `tol`.
    pub fn task_params_close(&self, other: &Tagger, tol: f64) -> bool {
        let mut a = Vec::new();
        self.learner.visit("", &mut |_, p| a.push(p.value.clone()));
        self.classifier.visit("", &mut |_, p| a.push(p.value.clone()));
        let mut i = 0;
        let mut ok = true;
        let mut check = |_: &str, p: &Param| {
            ok &= a.get(i).is_some_and(|v| {
                v.len() == p.value.len() && v.iter().zip(&p.value).all(|(x, y)| (x - y).abs() <= tol)
            });
            i += 1;
        };
        other.learner.visit("", &mut check);
        other.classifier.visit("", &mut check);
        ok && i == a.len()
    }
}

impl SequenceTagger for Tagger {
    fn event_logits(&self, batch: &Batch, _domain: Domain) -> Result<Matrix> {
        let (h, _) = self.represent(batch, Mode::Eval)?;
        Ok(self.classify(&h).0)
    }
}

impl Parameters for Tagger {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.learner.visit(&join(prefix, "learner"), f);
        self.classifier.visit(&join(prefix, "classifier"), f);
        if let Some(d) = &self.domain {
            d.predictor.visit(&join(prefix, "domain"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.learner.visit_mut(&join(prefix, "learner"), f);
        self.classifier.visit_mut(&join(prefix, "classifier"), f);
        if let Some(d) = &mut self.domain {
            d.predictor.visit_mut(&join(prefix, "domain"), f);
        }
    }
}

/// Neural feature augmentation: a general extractor shared by both domains
/// plus one extractor per domain. The classifier reads
/// `[general | source-specific | target-specific]`, with the inactive
/// domain's slot held at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FedaModel {
    pub arch: TaggerArch,
    pub general: ReprLearner,
    pub source: ReprLearner,
    pub target: ReprLearner,
    pub classifier: Mlp,
    pub updates: usize,
}

#[derive(Debug, Clone)]
pub struct FedaCache {
    domain: Domain,
    general: ReprCache,
    specific: ReprCache,
    mlp: MlpCache,
}

impl FedaModel {
    pub fn new(arch: TaggerArch, seed: u64) -> Result<Self> {
        if arch.domain_head.is_some() {
            return Err(Error::invalid("FEDA models do not take a domain head"));
        }
        let mk = |label: &str| {
            let mut rng = seed::rng(seed, label);
            ReprLearner::new(arch.kind, arch.plan, arch.n_pos, arch.hidden, arch.input_dropout, &mut rng)
        };
        let general = mk("init.feda.general")?;
        let source = mk("init.feda.source")?;
        let target = mk("init.feda.target")?;
        let mut rng = seed::rng(seed, "init.classifier");
        let classifier = Mlp::new(&[3 * general.output_dim(), arch.classifier_hidden, N_CLASSES], &mut rng);
        Ok(FedaModel {
            arch,
            general,
            source,
            target,
            classifier,
            updates: 0,
        })
    }

    fn specific(&self, d: Domain) -> &ReprLearner {
        match d {
            Domain::Source => &self.source,
            Domain::Target => &self.target,
        }
    }

    /// The augmented `(B*L) x 3D` representation.
    pub fn represent(&self, batch: &Batch, domain: Domain, mut mode: Mode<'_>) -> Result<(Matrix, ReprCache, ReprCache)> {
        let (hg, cg) = self.general.represent(batch, reborrow(&mut mode))?;
        let (hs, cs) = self.specific(domain).represent(batch, reborrow(&mut mode))?;
        let zero = Matrix::zeros(hs.rows, hs.cols);
        let h = match domain {
            Domain::Source => hg.hcat(&hs).hcat(&zero),
            Domain::Target => hg.hcat(&zero).hcat(&hs),
        };
        Ok((h, cg, cs))
    }

    pub fn forward(&self, batch: &Batch, domain: Domain, mode: Mode<'_>) -> Result<(Matrix, FedaCache)> {
        let (h, general, specific) = self.represent(batch, domain, mode)?;
        let (logits, mlp) = self.classifier.forward(&h);
        Ok((
            logits,
            FedaCache {
                domain,
                general,
                specific,
                mlp,
            },
        ))
    }

    pub fn backward(&mut self, cache: &FedaCache, dlogits: &Matrix) {
        let dh = self.classifier.backward(&cache.mlp, dlogits);
        let d = self.general.output_dim();
        let (dg, rest) = dh.hsplit(d);
        let (ds, dt) = rest.hsplit(d);
        self.general.backward(&cache.general, &dg);
        match cache.domain {
            Domain::Source => self.source.backward(&cache.specific, &ds),
            Domain::Target => self.target.backward(&cache.specific, &dt),
        }
    }
}

fn reborrow<'a>(mode: &'a mut Mode<'_>) -> Mode<'a> {
    match mode {
        Mode::Eval => Mode::Eval,
        Mode::Train(rng) => Mode::Train(rng),
    }
}

impl SequenceTagger for FedaModel {
    fn event_logits(&self, batch: &Batch, domain: Domain) -> Result<Matrix> {
        Ok(self.forward(batch, domain, Mode::Eval)?.0)
    }
}

impl Parameters for FedaModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.general.visit(&join(prefix, "general"), f);
        self.source.visit(&join(prefix, "source"), f);
        self.target.visit(&join(prefix, "target"), f);
        self.classifier.visit(&join(prefix, "classifier"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.general.visit_mut(&join(prefix, "general"), f);
        self.source.visit_mut(&join(prefix, "source"), f);
        self.target.visit_mut(&join(prefix, "target"), f);
        self.classifier.visit_mut(&join(prefix, "classifier"), f);
    }
}

/// Either trained model flavour, for checkpoints and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Tagger(Tagger),
    Feda(FedaModel),
}

impl AnyModel {
    pub fn arch(&self) -> &TaggerArch {
        match self {
            AnyModel::Tagger(t) => &t.arch,
            AnyModel::Feda(f) => &f.arch,
        }
    }

    pub fn is_feda(&self) -> bool {
        matches!(self, AnyModel::Feda(_))
    }

    /// A freshly initialized model of the same architecture.
    pub fn blank(arch: TaggerArch, feda: bool) -> Result<Self> {
        Ok(if feda {
            AnyModel::Feda(FedaModel::new(arch, 0)?)
        } else {
            AnyModel::Tagger(Tagger::new(arch, 0)?)
        })
    }

    /// Overwrites parameter values by name, checking every shape.
    pub fn load_params(&mut self, named: &[(alloc::string::String, Vec<usize>, Vec<f64>)]) -> Result<()> {
        let mut expected = 0;
        let mut err = None;
        self.visit_mut("", &mut |name, p| {
            expected += 1;
            match named.iter().find(|(n, _, _)| n == name) {
                None => err = err.take().or(Some(Error::Shape(format!("checkpoint lacks tensor {name}")))),
                Some((_, shape, vals)) if *shape != p.shape || vals.len() != p.value.len() => {
                    err = err.take().or(Some(Error::Shape(format!(
                        "tensor {name} has shape {shape:?}, architecture expects {:?}",
                        p.shape
                    ))))
                }
                Some((_, _, vals)) => p.value.copy_from_slice(vals),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if named.len() != expected {
            return Err(Error::Shape(format!(
                "checkpoint has {} tensors, architecture has {expected}",
                named.len()
            )));
        }
        Ok(())
    }
}

impl SequenceTagger for AnyModel {
    fn event_logits(&self, batch: &Batch, domain: Domain) -> Result<Matrix> {
        match self {
            AnyModel::Tagger(t) => t.event_logits(batch, domain),
            AnyModel::Feda(f) => f.event_logits(batch, domain),
        }
    }
}

impl Parameters for AnyModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        match self {
            AnyModel::Tagger(t) => t.visit(prefix, f),
            AnyModel::Feda(m) => m.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        match self {
            AnyModel::Tagger(t) => t.visit_mut(prefix, f),
            AnyModel::Feda(m) => m.visit_mut(prefix, f),
        }
    }
}
