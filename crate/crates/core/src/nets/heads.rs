use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    #[default]
    Mean,
    Max,
    Last,
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    mode: PoolMode,
    batch: usize,
    len: usize,
    counts: Vec<usize>,
    /// For max: source row per output cell; for last: source row per sequence.
    argrows: Vec<usize>,
}

/// Pools `(B*L) x D` token vectors into `B x D`, ignoring masked positions.
pub fn pool(mode: PoolMode, h: &Matrix, mask: &[bool], batch: usize, len: usize) -> Result<(Matrix, PoolCache)> {
    assert_eq!(h.rows, batch * len, "pool input rows");
    let d = h.cols;
    let mut out = Matrix::zeros(batch, d);
    let mut counts = vec![0usize; batch];
    let mut argrows = Vec::new();
    for b in 0..batch {
        let rows: Vec<usize> = (b * len..(b + 1) * len).filter(|&r| mask[r]).collect();
        if rows.is_empty() {
            return Err(Error::invalid(format!("sequence {b} has no unmasked positions")));
        }
        counts[b] = rows.len();
        let o = out.row_mut(b);
        match mode {
            PoolMode::Mean => {
                for &r in &rows {
                    o.iter_mut().zip(h.row(r)).for_each(|(a, x)| *a += x);
                }
                let inv = 1.0 / rows.len() as f64;
                o.iter_mut().for_each(|a| *a *= inv);
            }
            PoolMode::Max => {
                for j in 0..d {
                    let mut best = rows[0];
                    for &r in &rows[1..] {
                        if h.get(r, j) > h.get(best, j) {
                            best = r;
                        }
                    }
                    o[j] = h.get(best, j);
                    argrows.push(best);
                }
            }
            PoolMode::Last => {
                let last = *rows.last().expect("non-empty");
                o.copy_from_slice(h.row(last));
                argrows.push(last);
            }
        }
    }
    Ok((
        out,
        PoolCache {
            mode,
            batch,
            len,
            counts,
            argrows,
        },
    ))
}

pub fn pool_backward(cache: &PoolCache, dp: &Matrix, mask: &[bool]) -> Matrix {
    let d = dp.cols;
    let mut dh = Matrix::zeros(cache.batch * cache.len, d);
    for b in 0..cache.batch {
        let g = dp.row(b);
        match cache.mode {
            PoolMode::Mean => {
                let inv = 1.0 / cache.counts[b] as f64;
                for r in (b * cache.len..(b + 1) * cache.len).filter(|&r| mask[r]) {
                    dh.row_mut(r).iter_mut().zip(g).for_each(|(a, x)| *a = x * inv);
                }
            }
            PoolMode::Max => {
                for (j, gj) in g.iter().enumerate() {
                    let r = cache.argrows[b * d + j];
                    dh.data[r * d + j] += gj;
                }
            }
            PoolMode::Last => {
                dh.row_mut(cache.argrows[b]).copy_from_slice(g);
            }
        }
    }
    dh
}

/// Identity forward; multiplies gradients by `-lambda` on the way back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReversal {
    pub lambda: f64,
}

impl GradientReversal {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda {lambda} must be finite and non-negative")));
        }
        Ok(GradientReversal { lambda })
    }

    pub fn forward(&self, v: &Matrix) -> Matrix {
        v.clone()
    }

    pub fn backward(&self, upstream: &Matrix) -> Matrix {
        let mut g = upstream.clone();
        g.scale(-self.lambda);
        g
    }
}

/// `sum_i w_i * NLL_i` and its gradient with respect to the logits.
/// Rows with zero weight contribute nothing.
pub fn weighted_cross_entropy(logits: &Matrix, targets: &[usize], weights: &[f64]) -> (f64, Matrix) {
    assert_eq!(logits.rows, targets.len());
    assert_eq!(logits.rows, weights.len());
    let c = logits.cols;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(logits.rows, c);
    for r in 0..logits.rows {
        let w = weights[r];
        if w == 0.0 {
            continue;
        }
        let z = logits.row(r);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        loss += w * (lse - z[targets[r]]);
        let g = grad.row_mut(r);
        for k in 0..c {
            let p = (z[k] - lse).exp();
            g[k] = w * (p - if k == targets[r] { 1.0 } else { 0.0 });
        }
    }
    (loss, grad)
}

/// Mean negative log-likelihood over unmasked tokens.
pub fn token_cross_entropy(logits: &Matrix, tags: &[usize], mask: &[bool]) -> Result<(f64, Matrix)> {
    let n = mask.iter().filter(|m| **m).count();
    if n == 0 {
        return Err(Error::invalid("cross-entropy over an empty mask"));
    }
    let w = 1.0 / n as f64;
    let weights: Vec<f64> = mask.iter().map(|&m| if m { w } else { 0.0 }).collect();
    Ok(weighted_cross_entropy(logits, tags, &weights))
}
