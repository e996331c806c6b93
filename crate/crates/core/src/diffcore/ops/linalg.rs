use crate::diffcore::graph::{Graph, Var};
use crate::diffcore::ops::reduce::split_axis;
use crate::diffcore::tensor::{Real, Tensor};
use crate::error::{Error, Result};

impl<T: Real> Graph<T> {
    /// `[m, k] × [k, n] -> [m, n]`. Counts `m·k·n` multiply-adds.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let va = self.value(a);
        let vb = self.value(b);
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(format!("matmul of {sa:?} and {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, va.data(), false, vb.data(), false, T::zero(), &mut out);
        self.add_macs((m * k * n) as u64);
        let out = Tensor::from_parts(vec![m, n], out);
        Ok(self.push_op(out, &[a, b], move |g, inputs, _| {
            // dA = G Bᵀ, dB = Aᵀ G
            let mut ga = vec![T::zero(); m * k];
            T::gemm(m, n, k, g.data(), false, inputs[1].data(), true, T::zero(), &mut ga);
            let mut gb = vec![T::zero(); k * n];
            T::gemm(k, m, n, inputs[0].data(), true, g.data(), false, T::zero(), &mut gb);
            vec![
                Some(Tensor::from_parts(vec![m, k], ga)),
                Some(Tensor::from_parts(vec![k, n], gb)),
            ]
        }))
    }

    /// `x W + b` for `x: [rows, in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s = v.shape();
        if s.len() != 2 {
            return Err(Error::dim(format!("transpose needs a matrix, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let out = Tensor::from_parts(vec![c, r], transpose_data(v.data(), r, c));
        Ok(self.push_op(out, &[a], move |g, _, _| {
            vec![Some(Tensor::from_parts(vec![r, c], transpose_data(g.data(), c, r)))]
        }))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a);
        let out = (*v).clone().reshape(shape)?;
        Ok(self.push_op(out, &[a], |g, inputs, _| {
            vec![Some(g.clone().reshape(inputs[0].shape()).unwrap())]
        }))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = self.value(a);
        let (outer, full, inner) = split_axis(v.shape(), axis)?;
        if len == 0 || start + len > full {
            return Err(Error::dim(format!(
                "narrow [{start}, {}) out of range for axis {axis} of {:?}",
                start + len,
                v.shape()
            )));
        }
        let x = v.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut shape = v.shape().to_vec();
        shape[axis] = len;
        let out = Tensor::from_parts(shape, out);
        Ok(self.push_op(out, &[a], move |g, inputs, _| {
            let mut gx = vec![T::zero(); outer * full * inner];
            for o in 0..outer {
                let base = (o * full + start) * inner;
                gx[base..base + len * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(Tensor::from_parts(inputs[0].shape().to_vec(), gx))]
        }))
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        let values: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let first = values[0].shape().to_vec();
        let (outer, _, inner) = split_axis(&first, axis)?;
        let mut lens = Vec::with_capacity(parts.len());
        for v in &values {
            let s = v.shape();
            let same_rest = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same_rest {
                return Err(Error::dim(format!("concat on axis {axis}: {first:?} vs {s:?}")));
            }
            lens.push(s[axis]);
        }
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &l) in values.iter().zip(&lens) {
                out.extend_from_slice(&v.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let out = Tensor::from_parts(shape, out);
        Ok(self.push_op(out, parts, move |g, inputs, _| {
            let mut grads: Vec<Vec<T>> = lens.iter().map(|l| Vec::with_capacity(outer * l * inner)).collect();
            let gd = g.data();
            let mut off = 0;
            for _ in 0..outer {
                for (gv, &l) in grads.iter_mut().zip(&lens) {
                    gv.extend_from_slice(&gd[off..off + l * inner]);
                    off += l * inner;
                }
            }
            grads
                .into_iter()
                .zip(inputs)
                .map(|(gv, x)| Some(Tensor::from_parts(x.shape().to_vec(), gv)))
                .collect()
        }))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&self, parts: &[Var]) -> Result<Var> {
        let lifted = parts
            .iter()
            .map(|&p| {
                let mut s = self.shape(p);
                s.insert(0, 1);
                self.reshape(p, &s)
            })
            .collect::<Result<Vec<_>>>()?;
        self.concat(&lifted, 0)
    }
}

pub(crate) fn transpose_data<T: Copy>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for c in 0..cols {
        for r in 0..rows {
            out.push(x[r * cols + c]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let g = Graph::<f64>::new();
        let eye = g.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let m = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        assert_eq!(g.value(g.matmul(eye, m).unwrap()).data(), &[1., 2., 3., 4.]);

        let a = g.constant(t(&[1, 2], &[1., 2.]));
        let b = g.constant(t(&[2, 1], &[3., 4.]));
        assert_eq!(g.value(g.matmul(a, b).unwrap()).data(), &[11.]);

        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[4, 5]));
        assert!(matches!(g.matmul(a, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn matmul_counts_macs() {
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[3, 4]));
        let b = g.constant(Tensor::zeros(&[4, 5]));
        g.matmul(a, b).unwrap();
        assert_eq!(g.macs(), 60);
    }

    #[test]
    fn narrow_and_concat_invert() {
        let g = Graph::<f64>::new();
        let a = g.param(Tensor::from_fn(&[2, 5], |i| i as f64));
        let l = g.narrow(a, 1, 0, 2).unwrap();
        let r = g.narrow(a, 1, 2, 3).unwrap();
        let back = g.concat(&[l, r], 1).unwrap();
        assert_eq!(*g.value(back), *g.value(a));
        assert!(g.narrow(a, 1, 4, 2).is_err());
    }

    #[test]
    fn stack_adds_leading_axis() {
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::ones(&[2, 3]));
        let s = g.stack(&[a, b]).unwrap();
        assert_eq!(g.shape(s), vec![2, 2, 3]);
    }
}
