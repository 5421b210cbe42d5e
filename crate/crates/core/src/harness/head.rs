//! Small two-layer head: `features -> relu(W1 x + b1) -> W2 h + b2` class
//! logits, plus a linear box-delta regressor on the hidden layer.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyHead {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub wr: Array2<f64>,
    pub br: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct HeadForward {
    pub pre: Array2<f64>,
    pub hidden: Array2<f64>,
    pub logits: Array2<f64>,
    pub deltas: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub wr: Array2<f64>,
    pub br: Array1<f64>,
}

impl ToyHead {
    /// He-style Gaussian initialisation of the class layers; the box
    /// regressor and all biases start at zero.
    pub fn new(input: usize, hidden: usize, outputs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |rows: usize, cols: usize| {
            let n = Normal::new(0.0, (2.0 / cols as f64).sqrt()).expect("positive std");
            Array2::from_shape_simple_fn((rows, cols), || n.sample(&mut rng))
        };
        let w1 = init(hidden, input);
        let w2 = init(outputs, hidden);
        Self {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(outputs),
            wr: Array2::zeros((4, hidden)),
            br: Array1::zeros(4),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<HeadForward> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "head expects {} features, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let pre = x.dot(&self.w1.t()) + &self.b1;
        let hidden = pre.mapv(|v| v.max(0.0));
        let logits = hidden.dot(&self.w2.t()) + &self.b2;
        let deltas = hidden.dot(&self.wr.t()) + &self.br;
        Ok(HeadForward {
            pre,
            hidden,
            logits,
            deltas,
        })
    }

    pub fn backward(
        &self,
        x: ArrayView2<'_, f64>,
        fwd: &HeadForward,
        grad_logits: ArrayView2<'_, f64>,
        grad_deltas: ArrayView2<'_, f64>,
    ) -> HeadGrads {
        self.backward_with_hidden(x, fwd, grad_logits, grad_deltas, None)
    }

    /// As [`ToyHead::backward`], plus an optional loss gradient arriving
    /// directly at the (post-rectifier) hidden layer.
    pub fn backward_with_hidden(
        &self,
        x: ArrayView2<'_, f64>,
        fwd: &HeadForward,
        grad_logits: ArrayView2<'_, f64>,
        grad_deltas: ArrayView2<'_, f64>,
        extra_hidden: Option<ArrayView2<'_, f64>>,
    ) -> HeadGrads {
        let w2 = grad_logits.t().dot(&fwd.hidden);
        let b2 = grad_logits.sum_axis(Axis(0));
        let wr = grad_deltas.t().dot(&fwd.hidden);
        let br = grad_deltas.sum_axis(Axis(0));
        let mut grad_hidden = grad_logits.dot(&self.w2) + grad_deltas.dot(&self.wr);
        if let Some(g) = extra_hidden {
            grad_hidden += &g;
        }
        grad_hidden.zip_mut_with(&fwd.pre, |g, &p| {
            if p <= 0.0 {
                *g = 0.0;
            }
        });
        let w1 = grad_hidden.t().dot(&x);
        let b1 = grad_hidden.sum_axis(Axis(0));
        HeadGrads { w1, b1, w2, b2, wr, br }
    }

    pub fn step(&mut self, grads: &HeadGrads, lr: f64) {
        self.step_split(grads, lr, lr);
    }

    /// Gradient step with a separate step size for the box regressor.
    pub fn step_split(&mut self, grads: &HeadGrads, lr: f64, regressor_lr: f64) {
        self.w1.scaled_add(-lr, &grads.w1);
        self.b1.scaled_add(-lr, &grads.b1);
        self.w2.scaled_add(-lr, &grads.w2);
        self.b2.scaled_add(-lr, &grads.b2);
        self.wr.scaled_add(-regressor_lr, &grads.wr);
        self.br.scaled_add(-regressor_lr, &grads.br);
    }

    pub fn is_finite(&self) -> bool {
        [&self.w1, &self.w2, &self.wr].iter().all(|w| w.iter().all(|v| v.is_finite()))
            && [&self.b1, &self.b2, &self.br].iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}
