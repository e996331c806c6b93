//! Dense tensors with define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] is a tape owned by one thread. Leaves are created with
//! [`Graph::param`] (tracked) or [`Graph::constant`]; every op returns a new
//! [`Var`]. [`Graph::backward`] returns gradients for all tracked leaves,
//! zero-filled for leaves the loss does not depend on.
//!
//! Broadcasting is limited to scalar operands and trailing-axis suffixes
//! (`[N, C] + [C]`); anything else is a dimension error.

mod graph;
pub mod gradcheck;
mod ops;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use ops::conv::conv_out_size;
pub use tensor::{DType, Real, Tensor};


use crate::error::{Error, Result};

impl<T: Real> Graph<T> {
    /// Multi-head scaled dot-product self-attention core:
    /// `softmax(q kᵀ / √d) v` per head, heads split along columns.
    /// `q, k, v: [N, C]`, `C` divisible by `heads`.
    pub fn attention(&self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let shape = self.shape(q);
        if shape.len() != 2 || self.shape(k) != shape || self.shape(v) != shape {
            return Err(Error::dim(format!("attention inputs must share a [N, C] shape, got {shape:?}")));
        }
        let c = shape[1];
        if heads == 0 || !c.is_multiple_of(heads) {
            return Err(Error::config(format!("{c} channels do not split into {heads} heads")));
        }
        let dh = c / heads;
        let scale = T::c(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.narrow(q, 1, h * dh, dh)?;
            let kh = self.narrow(k, 1, h * dh, dh)?;
            let vh = self.narrow(v, 1, h * dh, dh)?;
            let kt = self.transpose(kh)?;
            let scores = self.mul_scalar(self.matmul(qh, kt)?, scale);
            let attn = self.softmax(scores, 1)?;
            outs.push(self.matmul(attn, vh)?);
        }
        self.concat(&outs, 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::from_fn(&[2, 3, 4], |i| i as f64));
        let grads = g.backward(g.sum(x)).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn disconnected_leaf_gets_zero_gradient() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::ones(&[3]));
        let y = g.param(Tensor::ones(&[2, 2]));
        let grads = g.backward(g.sum(x)).unwrap();
        let gy = grads.get(y).unwrap();
        assert_eq!(gy.shape(), &[2, 2]);
        assert!(gy.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::ones(&[3]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn detach_blocks_gradient() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(3.0));
        let d = g.detach(x);
        let y = g.mul(d, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 3.0);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[5, 8], |i| (i as f64 * 0.7).sin()));
        // with v = identity-like one-hot rows, output rows are attention rows
        let v = g.constant(Tensor::from_fn(&[5, 8], |i| if i % 8 == i / 8 { 1.0 } else { 0.0 }));
        let out = g.value(g.attention(x, x, v, 1).unwrap());
        for r in 0..5 {
            let s: f64 = out.data()[r * 8..r * 8 + 5].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
