use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::lstm::{reverse_within_lengths, Lstm, LstmCache};
use crate::error::{Error, Result};
use crate::features::{Batch, FeatureKind, FeaturePlan, OOV_INIT_BOUND, PAD};
use crate::seed::Rng;
use crate::tensor::{join, Matrix, Param, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Lstm,
    Bilstm,
    Pos,
    Contextual,
}

impl LearnerKind {
    pub fn bidirectional(self) -> bool {
        self != LearnerKind::Lstm
    }

    /// The feature kind this learner consumes.
    pub fn feature_kind(self) -> FeatureKind {
        match self {
            LearnerKind::Lstm | LearnerKind::Bilstm => FeatureKind::Static,
            LearnerKind::Pos => FeatureKind::StaticPos,
            LearnerKind::Contextual => FeatureKind::Contextual,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Lstm => "lstm",
            LearnerKind::Bilstm => "bilstm",
            LearnerKind::Pos => "pos",
            LearnerKind::Contextual => "contextual",
        }
    }
}

/// Train mode carries the dropout stream; eval mode is deterministic.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Recurrent representation learner over per-token input vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprLearner {
    pub kind: LearnerKind,
    pub plan: FeaturePlan,
    pub input_dropout: f64,
    /// `n_pos x pos_dim`, present for [`LearnerKind::Pos`].
    pub pos_embedding: Option<Param>,
    pub fwd: Lstm,
    pub bwd: Option<Lstm>,
}

#[derive(Debug, Clone)]
pub struct ReprCache {
    batch: usize,
    len: usize,
    lengths: Vec<usize>,
    pos_ids: Vec<usize>,
    drop_scale: Option<Vec<f64>>,
    fwd: LstmCache,
    bwd: Option<LstmCache>,
}

impl ReprLearner {
    pub fn new(kind: LearnerKind, plan: FeaturePlan, n_pos: usize, hidden: usize, input_dropout: f64, rng: &mut Rng) -> Result<Self> {
        if plan.kind != kind.feature_kind() {
            return Err(Error::invalid(format!(
                "learner {} needs {:?} features, plan provides {:?}",
                kind.name(),
                kind.feature_kind(),
                plan.kind
            )));
        }
        if hidden == 0 {
            return Err(Error::invalid("hidden size must be positive"));
        }
        if !(0.0..1.0).contains(&input_dropout) {
            return Err(Error::invalid(format!("input dropout {input_dropout} must lie in [0, 1)")));
        }
        let din = plan.input_dim();
        let fwd = Lstm::new(din, hidden, rng);
        let bwd = kind.bidirectional().then(|| Lstm::new(din, hidden, rng));
        let pos_embedding = (kind == LearnerKind::Pos).then(|| {
            let mut p = Param::uniform(&[n_pos.max(2), plan.pos_dim], OOV_INIT_BOUND, rng);
            p.value[..plan.pos_dim].iter_mut().for_each(|v| *v = 0.0);
            p
        });
        Ok(ReprLearner {
            kind,
            plan,
            input_dropout,
            pos_embedding,
            fwd,
            bwd,
        })
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden()
    }

    pub fn output_dim(&self) -> usize {
        if self.bwd.is_some() {
            2 * self.hidden()
        } else {
            self.hidden()
        }
    }

    /// The learner's full input: fixed features, plus POS rows when present.
    pub fn assemble_inputs(&self, batch: &Batch) -> Result<Matrix> {
        if batch.inputs.cols != self.plan.base_dim() {
            return Err(Error::Shape(format!(
                "batch features have width {}, learner {} expects {}",
                batch.inputs.cols,
                self.kind.name(),
                self.plan.base_dim()
            )));
        }
        let Some(pos) = &self.pos_embedding else {
            return Ok(batch.inputs.clone());
        };
        let pd = self.plan.pos_dim;
        let n_pos = pos.shape[0];
        let mut rows = Matrix::zeros(batch.inputs.rows, pd);
        for (r, &id) in batch.pos_ids.iter().enumerate() {
            if id >= n_pos {
                return Err(Error::Shape(format!("POS id {id} outside table of {n_pos}")));
            }
            if batch.mask[r] {
                rows.row_mut(r).copy_from_slice(&pos.value[id * pd..(id + 1) * pd]);
            }
        }
        Ok(batch.inputs.hcat(&rows))
    }

    /// Per-token representations, `(B*L) x output_dim`.
    pub fn represent(&self, batch: &Batch, mode: Mode<'_>) -> Result<(Matrix, ReprCache)> {
        let mut x = self.assemble_inputs(batch)?;
        let drop_scale = match mode {
            Mode::Train(rng) if self.input_dropout > 0.0 => {
                let keep = 1.0 - self.input_dropout;
                let scale: Vec<f64> = (0..x.data.len())
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                x.data.iter_mut().zip(&scale).for_each(|(v, s)| *v *= s);
                Some(scale)
            }
            _ => None,
        };
        let (b, l) = (batch.batch_size, batch.max_len);
        let (hf, fwd) = self.fwd.forward(&x, b, l);
        let (h, bwd) = match &self.bwd {
            Some(lstm) => {
                let xr = reverse_within_lengths(&x, &batch.lengths, l);
                let (hr, cache) = lstm.forward(&xr, b, l);
                (hf.hcat(&reverse_within_lengths(&hr, &batch.lengths, l)), Some(cache))
            }
            None => (hf, None),
        };
        let cache = ReprCache {
            batch: b,
            len: l,
            lengths: batch.lengths.clone(),
            pos_ids: batch.pos_ids.clone(),
            drop_scale,
            fwd,
            bwd,
        };
        Ok((h, cache))
    }

    /// Accumulates gradients for `dh` (`(B*L) x output_dim`).
    pub fn backward(&mut self, cache: &ReprCache, dh: &Matrix) {
        let hidden = self.hidden();
        let mut dx = match (&mut self.bwd, &cache.bwd) {
            (Some(lstm), Some(bc)) => {
                let (df, db) = dh.hsplit(hidden);
                let mut dx = self.fwd.backward(&cache.fwd, &df);
                let dbr = reverse_within_lengths(&db, &cache.lengths, cache.len);
                let dxr = lstm.backward(bc, &dbr);
                dx.add_assign(&reverse_within_lengths(&dxr, &cache.lengths, cache.len));
                dx
            }
            _ => self.fwd.backward(&cache.fwd, dh),
        };
        if let Some(scale) = &cache.drop_scale {
            dx.data.iter_mut().zip(scale).for_each(|(g, s)| *g *= s);
        }
        if let Some(pos) = &mut self.pos_embedding {
            let base = self.plan.base_dim();
            let pd = self.plan.pos_dim;
            for r in 0..cache.batch * cache.len {
                let id = cache.pos_ids[r];
                if id == PAD {
                    continue;
                }
                let src = &dx.row(r)[base..base + pd];
                for (g, d) in pos.grad[id * pd..(id + 1) * pd].iter_mut().zip(src) {
                    *g += d;
                }
            }
        }
    }
}

impl Parameters for ReprLearner {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.fwd.visit(&join(prefix, "fwd"), f);
        if let Some(b) = &self.bwd {
            b.visit(&join(prefix, "bwd"), f);
        }
        if let Some(p) = &self.pos_embedding {
            f(&join(prefix, "pos_embedding"), p);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.fwd.visit_mut(&join(prefix, "fwd"), f);
        if let Some(b) = &mut self.bwd {
            b.visit_mut(&join(prefix, "bwd"), f);
        }
        if let Some(p) = &mut self.pos_embedding {
            f(&join(prefix, "pos_embedding"), p);
        }
    }
}
