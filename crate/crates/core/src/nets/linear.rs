use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

use crate::seed::Rng;
use crate::tensor::{gemm, join, Matrix, Param, Parameters};

/// Affine map `y = x W^T + b` applied row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
    pub fn new(input: usize, output: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        Linear {
            weight: Param::uniform(&[output, input], bound, rng),
            bias: Param::uniform(&[output], bound, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let (n, din, dout) = (x.rows, self.input_dim(), self.output_dim());
        assert_eq!(x.cols, din, "linear input width");
        let mut y = Matrix::zeros(n, dout);
        for r in 0..n {
            y.row_mut(r).copy_from_slice(&self.bias.value);
        }
        gemm(n, din, dout, 1.0, &x.data, false, &self.weight.value, true, 1.0, &mut y.data);
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &Matrix, dy: &Matrix) -> Matrix {
        let (n, din, dout) = (x.rows, self.input_dim(), self.output_dim());
        gemm(dout, n, din, 1.0, &dy.data, true, &x.data, false, 1.0, &mut self.weight.grad);
        for r in 0..n {
            for (g, d) in self.bias.grad.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
        let mut dx = Matrix::zeros(n, din);
        gemm(n, dout, din, 1.0, &dy.data, false, &self.weight.value, false, 0.0, &mut dx.data);
        dx
    }
}

impl Parameters for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Feed-forward stack with ReLU between layers and linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
}

impl Mlp {
    /// `dims = [input, hidden..., output]`.
    pub fn new(dims: &[usize], rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        Mlp {
            layers: dims.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect(),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.layers.len() + 1);
        d.push(self.layers[0].input_dim());
        d.extend(self.layers.iter().map(Linear::output_dim));
        d
    }

    pub fn forward(&self, x: &Matrix) -> (Matrix, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let y = layer.forward(&cur);
            inputs.push(cur);
            if i + 1 < self.layers.len() {
                let mut a = y.clone();
                a.data.iter_mut().for_each(|v| *v = v.max(0.0));
                pre.push(y);
                cur = a;
            } else {
                cur = y;
            }
        }
        (cur, MlpCache { inputs, pre })
    }

    pub fn backward(&mut self, cache: &MlpCache, dy: &Matrix) -> Matrix {
        let mut d = dy.clone();
        for i in (0..self.layers.len()).rev() {
            let dx = self.layers[i].backward(&cache.inputs[i], &d);
            d = dx;
            if i > 0 {
                for (g, z) in d.data.iter_mut().zip(&cache.pre[i - 1].data) {
                    if *z <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
        }
        d
    }
}

impl Parameters for Mlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("{i}")), f);
        }
    }
}
