//! Single-direction LSTM over padded batches with backpropagation through
//! time.
//!
//! Gate order in the stacked weights is input, forget, cell, output:
//!
//! ```text
//! i = σ(W_i x + U_i h + b_i)    f = σ(W_f x + U_f h + b_f)
//! g = tanh(W_g x + U_g h + b_g) o = σ(W_o x + U_o h + b_o)
//! c' = f ⊙ c + i ⊙ g            h' = o ⊙ tanh(c')
//! ```

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

use crate::seed::Rng;
use crate::tensor::{gemm, join, Matrix, Param, Parameters};

pub const LSTM_INIT_BOUND: f64 = 0.08;
pub const FORGET_BIAS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub w_ih: Param,
    pub w_hh: Param,
    pub bias: Param,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    x: Matrix,
    batch: usize,
    len: usize,
    /// Activated gates, time-major `[t][b][4H]`.
    gates: Vec<f64>,
    /// Cell states `[t][b][H]`.
    cells: Vec<f64>,
    tanh_cells: Vec<f64>,
    hidden: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Lstm {
    pub fn new(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut bias = Param::uniform(&[4 * hidden], LSTM_INIT_BOUND, rng);
        bias.value[hidden..2 * hidden].iter_mut().for_each(|b| *b = FORGET_BIAS);
        Lstm {
            w_ih: Param::uniform(&[4 * hidden, input], LSTM_INIT_BOUND, rng),
            w_hh: Param::uniform(&[4 * hidden, hidden], LSTM_INIT_BOUND, rng),
            bias,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape[1]
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.shape[1]
    }

    /// `x` is `(B*L) x input`, batch-major. Returns `(B*L) x H`.
    pub fn forward(&self, x: &Matrix, batch: usize, len: usize) -> (Matrix, LstmCache) {
        let h = self.hidden();
        let g4 = 4 * h;
        let din = self.input_dim();
        assert_eq!((x.rows, x.cols), (batch * len, din), "lstm input shape");

        let mut xp = vec![0.0; batch * len * g4];
        gemm(batch * len, din, g4, 1.0, &x.data, false, &self.w_ih.value, true, 0.0, &mut xp);

        let mut gates = vec![0.0; len * batch * g4];
        let mut cells = vec![0.0; len * batch * h];
        let mut tanh_cells = vec![0.0; len * batch * h];
        let mut hidden = vec![0.0; len * batch * h];
        let mut out = Matrix::zeros(batch * len, h);

        for t in 0..len {
            let gt = &mut gates[t * batch * g4..(t + 1) * batch * g4];
            for b in 0..batch {
                let src = &xp[(b * len + t) * g4..(b * len + t + 1) * g4];
                for ((d, s), bias) in gt[b * g4..(b + 1) * g4].iter_mut().zip(src).zip(&self.bias.value) {
                    *d = s + bias;
                }
            }
            if t > 0 {
                let hprev = &hidden[(t - 1) * batch * h..t * batch * h];
                gemm(batch, h, g4, 1.0, hprev, false, &self.w_hh.value, true, 1.0, gt);
            }
            for b in 0..batch {
                let g = &mut gt[b * g4..(b + 1) * g4];
                for j in 0..h {
                    g[j] = sigmoid(g[j]);
                    g[h + j] = sigmoid(g[h + j]);
                    g[2 * h + j] = g[2 * h + j].tanh();
                    g[3 * h + j] = sigmoid(g[3 * h + j]);
                }
                let base = t * batch * h + b * h;
                for j in 0..h {
                    let cprev = if t > 0 { cells[base - batch * h + j] } else { 0.0 };
                    let c = g[h + j] * cprev + g[j] * g[2 * h + j];
                    let tc = c.tanh();
                    cells[base + j] = c;
                    tanh_cells[base + j] = tc;
                    hidden[base + j] = g[3 * h + j] * tc;
                }
                out.row_mut(b * len + t)
                    .copy_from_slice(&hidden[base..base + h]);
            }
        }
        let cache = LstmCache {
            x: x.clone(),
            batch,
            len,
            gates,
            cells,
            tanh_cells,
            hidden,
        };
        (out, cache)
    }

    /// Accumulates parameter gradients from `dout` (`(B*L) x H`) and returns
    /// `dL/dx`.
    pub fn backward(&mut self, cache: &LstmCache, dout: &Matrix) -> Matrix {
        let h = self.hidden();
        let g4 = 4 * h;
        let din = self.input_dim();
        let (batch, len) = (cache.batch, cache.len);

        let mut dxp = vec![0.0; batch * len * g4];
        let mut dgt = vec![0.0; batch * g4];
        let mut dh_next = vec![0.0; batch * h];
        let mut dc_next = vec![0.0; batch * h];

        for t in (0..len).rev() {
            for b in 0..batch {
                let g = &cache.gates[(t * batch + b) * g4..(t * batch + b + 1) * g4];
                let base = t * batch * h + b * h;
                let drow = dout.row(b * len + t);
                let dg = &mut dgt[b * g4..(b + 1) * g4];
                for j in 0..h {
                    let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                    let tc = cache.tanh_cells[base + j];
                    let cprev = if t > 0 { cache.cells[base - batch * h + j] } else { 0.0 };
                    let dh = drow[j] + dh_next[b * h + j];
                    let d_o = dh * tc;
                    let dc = dh * o * (1.0 - tc * tc) + dc_next[b * h + j];
                    dc_next[b * h + j] = dc * f;
                    dg[j] = dc * gg * i * (1.0 - i);
                    dg[h + j] = dc * cprev * f * (1.0 - f);
                    dg[2 * h + j] = dc * i * (1.0 - gg * gg);
                    dg[3 * h + j] = d_o * o * (1.0 - o);
                }
                dxp[(b * len + t) * g4..(b * len + t + 1) * g4].copy_from_slice(dg);
            }
            if t > 0 {
                let hprev = &cache.hidden[(t - 1) * batch * h..t * batch * h];
                gemm(g4, batch, h, 1.0, &dgt, true, hprev, false, 1.0, &mut self.w_hh.grad);
                gemm(batch, g4, h, 1.0, &dgt, false, &self.w_hh.value, false, 0.0, &mut dh_next);
            }
        }

        gemm(g4, batch * len, din, 1.0, &dxp, true, &cache.x.data, false, 1.0, &mut self.w_ih.grad);
        for r in 0..batch * len {
            for (gb, d) in self.bias.grad.iter_mut().zip(&dxp[r * g4..(r + 1) * g4]) {
                *gb += d;
            }
        }
        let mut dx = Matrix::zeros(batch * len, din);
        gemm(batch * len, g4, din, 1.0, &dxp, false, &self.w_ih.value, false, 0.0, &mut dx.data);
        dx
    }
}

impl Parameters for Lstm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "w_ih"), &self.w_ih);
        f(&join(prefix, "w_hh"), &self.w_hh);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "w_ih"), &mut self.w_ih);
        f(&join(prefix, "w_hh"), &mut self.w_hh);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Reverses each row block within its true length; padded rows stay put.
/// The permutation is its own inverse.
pub fn reverse_within_lengths(m: &Matrix, lengths: &[usize], len: usize) -> Matrix {
    let mut out = m.clone();
    for (b, &n) in lengths.iter().enumerate() {
        for t in 0..n {
            out.row_mut(b * len + t).copy_from_slice(m.row(b * len + n - 1 - t));
        }
    }
    out
}
