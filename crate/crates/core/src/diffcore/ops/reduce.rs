use crate::diffcore::graph::{Graph, Var};
use crate::diffcore::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Splits a shape around `axis` into `(outer, len, inner)`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::dim(format!("axis {axis} out of range for shape {shape:?}")));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn without_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    s
}

#[derive(Clone, Copy)]
enum Extremum {
    Min,
    Max,
}

impl Extremum {
    fn better<T: Real>(self, candidate: T, current: T) -> bool {
        // strict comparison keeps the first attaining index
        match self {
            Extremum::Min => candidate < current,
            Extremum::Max => candidate > current,
        }
    }
}

impl<T: Real> Graph<T> {
    pub fn sum(&self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::scalar(v.sum());
        self.push_op(out, &[a], |g, inputs, _| {
            vec![Some(Tensor::full(inputs[0].shape(), g.item()))]
        })
    }

    pub fn mean(&self, a: Var) -> Var {
        let v = self.value(a);
        let n = T::c(v.numel() as f64);
        let out = Tensor::scalar(v.sum() / n);
        self.push_op(out, &[a], move |g, inputs, _| {
            vec![Some(Tensor::full(inputs[0].shape(), g.item() / n))]
        })
    }

    fn extremum(&self, a: Var, kind: Extremum) -> Var {
        let v = self.value(a);
        let mut best = 0;
        for (i, &x) in v.data().iter().enumerate() {
            if kind.better(x, v.data()[best]) {
                best = i;
            }
        }
        let out = Tensor::scalar(v.data()[best]);
        self.push_op(out, &[a], move |g, inputs, _| {
            let mut gx = Tensor::zeros(inputs[0].shape());
            gx.data_mut()[best] = g.item();
            vec![Some(gx)]
        })
    }

    pub fn min(&self, a: Var) -> Var {
        self.extremum(a, Extremum::Min)
    }

    pub fn max(&self, a: Var) -> Var {
        self.extremum(a, Extremum::Max)
    }

    pub fn sum_axis(&self, a: Var, axis: usize) -> Result<Var> {
        self.sum_axis_scaled(a, axis, false)
    }

    pub fn mean_axis(&self, a: Var, axis: usize) -> Result<Var> {
        self.sum_axis_scaled(a, axis, true)
    }

    fn sum_axis_scaled(&self, a: Var, axis: usize, average: bool) -> Result<Var> {
        let v = self.value(a);
        let (outer, len, inner) = split_axis(v.shape(), axis)?;
        let scale = if average { T::one() / T::c(len as f64) } else { T::one() };
        let x = v.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                let row = &mut out[o * inner..(o + 1) * inner];
                for (r, &xv) in row.iter_mut().zip(&x[base..base + inner]) {
                    *r += xv;
                }
            }
        }
        for r in &mut out {
            *r *= scale;
        }
        let out = Tensor::from_parts(without_axis(v.shape(), axis), out);
        Ok(self.push_op(out, &[a], move |g, inputs, _| {
            let mut gx = vec![T::zero(); outer * len * inner];
            let gd = g.data();
            for o in 0..outer {
                for l in 0..len {
                    let base = (o * len + l) * inner;
                    for i in 0..inner {
                        gx[base + i] = gd[o * inner + i] * scale;
                    }
                }
            }
            vec![Some(Tensor::from_parts(inputs[0].shape().to_vec(), gx))]
        }))
    }

    fn extremum_axis(&self, a: Var, axis: usize, kind: Extremum) -> Result<Var> {
        let v = self.value(a);
        let (outer, len, inner) = split_axis(v.shape(), axis)?;
        let x = v.data();
        let mut idx = vec![0usize; outer * inner];
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * len * inner + i;
                for l in 1..len {
                    let j = (o * len + l) * inner + i;
                    if kind.better(x[j], x[best]) {
                        best = j;
                    }
                }
                idx[o * inner + i] = best;
                out[o * inner + i] = x[best];
            }
        }
        let out = Tensor::from_parts(without_axis(v.shape(), axis), out);
        Ok(self.push_op(out, &[a], move |g, inputs, _| {
            let mut gx = Tensor::zeros(inputs[0].shape());
            for (k, &j) in idx.iter().enumerate() {
                gx.data_mut()[j] += g.data()[k];
            }
            vec![Some(gx)]
        }))
    }

    /// Per-axis minimum; ties route the subgradient to the first index.
    pub fn min_axis(&self, a: Var, axis: usize) -> Result<Var> {
        self.extremum_axis(a, axis, Extremum::Min)
    }

    /// Per-axis maximum; ties route the subgradient to the first index.
    pub fn max_axis(&self, a: Var, axis: usize) -> Result<Var> {
        self.extremum_axis(a, axis, Extremum::Max)
    }

    /// Numerically stable softmax along `axis` (max-subtracted).
    pub fn softmax(&self, a: Var, axis: usize) -> Result<Var> {
        let v = self.value(a);
        let (outer, len, inner) = split_axis(v.shape(), axis)?;
        let x = v.data();
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let m = (0..len).map(|l| x[at(l)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for l in 0..len {
                    let e = (x[at(l)] - m).exp();
                    out[at(l)] = e;
                    total += e;
                }
                for l in 0..len {
                    out[at(l)] = out[at(l)] / total;
                }
            }
        }
        let out = Tensor::from_parts(v.shape().to_vec(), out);
        Ok(self.push_op(out, &[a], move |g, _, y| {
            let (gd, yd) = (g.data(), y.data());
            let mut gx = vec![T::zero(); gd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |l: usize| (o * len + l) * inner + i;
                    let dot: T = (0..len).map(|l| gd[at(l)] * yd[at(l)]).sum();
                    for l in 0..len {
                        gx[at(l)] = yd[at(l)] * (gd[at(l)] - dot);
                    }
                }
            }
            vec![Some(Tensor::from_parts(y.shape().to_vec(), gx))]
        }))
    }

    /// Inclusive cumulative sum along `axis`.
    pub fn cumsum(&self, a: Var, axis: usize) -> Result<Var> {
        let v = self.value(a);
        let (outer, len, inner) = split_axis(v.shape(), axis)?;
        let x = v.data();
        let mut out = x.to_vec();
        for o in 0..outer {
            for l in 1..len {
                for i in 0..inner {
                    let j = (o * len + l) * inner + i;
                    out[j] = out[j - inner] + x[j];
                }
            }
        }
        let out = Tensor::from_parts(v.shape().to_vec(), out);
        Ok(self.push_op(out, &[a], move |g, inputs, _| {
            // reverse cumulative sum
            let mut gx = g.data().to_vec();
            for o in 0..outer {
                for l in (0..len.saturating_sub(1)).rev() {
                    for i in 0..inner {
                        let j = (o * len + l) * inner + i;
                        gx[j] = gx[j] + gx[j + inner];
                    }
                }
            }
            vec![Some(Tensor::from_parts(inputs[0].shape().to_vec(), gx))]
        }))
    }

    /// Normalizes over the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(&self, a: Var, eps: f64) -> Var {
        let v = self.value(a);
        let c = *v.shape().last().unwrap_or(&1);
        let rows = v.numel() / c;
        let eps = T::c(eps);
        let cn = T::c(c as f64);
        let x = v.data();
        let mut out = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &x[r * c..(r + 1) * c];
            let mu = row.iter().copied().sum::<T>() / cn;
            let var = row.iter().map(|&z| (z - mu) * (z - mu)).sum::<T>() / cn;
            let s = T::one() / (var + eps).sqrt();
            inv_std[r] = s;
            for k in 0..c {
                out[r * c + k] = (row[k] - mu) * s;
            }
        }
        let out = Tensor::from_parts(v.shape().to_vec(), out);
        self.push_op(out, &[a], move |g, _, y| {
            let (gd, yd) = (g.data(), y.data());
            let mut gx = vec![T::zero(); gd.len()];
            for r in 0..rows {
                let gr = &gd[r * c..(r + 1) * c];
                let yr = &yd[r * c..(r + 1) * c];
                let mg = gr.iter().copied().sum::<T>() / cn;
                let mgy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / cn;
                for k in 0..c {
                    gx[r * c + k] = inv_std[r] * (gr[k] - mg - yr[k] * mgy);
                }
            }
            vec![Some(Tensor::from_parts(y.shape().to_vec(), gx))]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_f64(vec![2], &[0.0, 0.0]).unwrap());
        assert_eq!(g.value(g.softmax(a, 0).unwrap()).data(), &[0.5, 0.5]);

        let b = g.constant(Tensor::from_f64(vec![2], &[1000.0, 0.0]).unwrap());
        let sb = g.value(g.softmax(b, 0).unwrap());
        assert!(sb.is_finite());
        assert!((sb.data()[0] - 1.0).abs() < 1e-12 && sb.data()[1] < 1e-300);

        let c = g.constant(
            Tensor::from_f64(vec![3], &[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap(),
        );
        let sc = g.value(g.softmax(c, 0).unwrap());
        for (got, want) in sc.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_bad_axis() {
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 2]));
        assert!(g.softmax(a, 2).is_err());
    }

    #[test]
    fn min_max_tie_routes_to_first_index() {
        let g = Graph::<f64>::new();
        let a = g.param(Tensor::from_f64(vec![4], &[3.0, 1.0, 1.0, 3.0]).unwrap());
        let grads = g.backward(g.min(a)).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
        let g2 = Graph::<f64>::new();
        let b = g2.param(Tensor::from_f64(vec![4], &[3.0, 1.0, 1.0, 3.0]).unwrap());
        let grads = g2.backward(g2.max(b)).unwrap();
        assert_eq!(grads.get(b).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn axis_reductions() {
        let g = Graph::<f64>::new();
        let a = g.param(Tensor::from_f64(vec![2, 3], &[1., 5., 3., 4., 2., 6.]).unwrap());
        assert_eq!(g.value(g.sum_axis(a, 0).unwrap()).data(), &[5., 7., 9.]);
        assert_eq!(g.value(g.mean_axis(a, 1).unwrap()).data(), &[3., 4.]);
        assert_eq!(g.value(g.min_axis(a, 0).unwrap()).data(), &[1., 2., 3.]);
        assert_eq!(g.value(g.max_axis(a, 1).unwrap()).data(), &[5., 6.]);
    }

    #[test]
    fn cumsum_values() {
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_f64(vec![3], &[0.2, 0.3, 0.5]).unwrap());
        let c = g.value(g.cumsum(a, 0).unwrap());
        assert!((c.data()[1] - 0.5).abs() < 1e-15 && (c.data()[2] - 1.0).abs() < 1e-15);
    }
}
