use crate::diffcore::graph::{Graph, Var};
use crate::diffcore::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
struct Tap<T> {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: T,
    fy: T,
    /// coordinate strictly inside the clamp range (gradient flows)
    live_u: bool,
    live_v: bool,
}

fn tap<T: Real>(u: T, v: T, w: usize, h: usize) -> Tap<T> {
    let (wmax, hmax) = (T::c((w - 1) as f64), T::c((h - 1) as f64));
    let uc = u.max(T::zero()).min(wmax);
    let vc = v.max(T::zero()).min(hmax);
    let x0 = uc.floor().to_usize().unwrap_or(0).min(w - 1);
    let y0 = vc.floor().to_usize().unwrap_or(0).min(h - 1);
    Tap {
        x0,
        y0,
        x1: (x0 + 1).min(w - 1),
        y1: (y0 + 1).min(h - 1),
        fx: uc - T::c(x0 as f64),
        fy: vc - T::c(y0 as f64),
        live_u: u > T::zero() && u < wmax,
        live_v: v > T::zero() && v < hmax,
    }
}

impl<T: Real> Graph<T> {
    /// Samples `image: [C, H, W]` at continuous pixel coordinates `u` (column)
    /// and `v` (row), both `[H', W']`, by bilinear interpolation of the four
    /// neighbours. Coordinates are clamped to the border. Differentiable
    /// w.r.t. the image and both coordinate maps.
    pub fn bilinear_sample(&self, image: Var, u: Var, v: Var) -> Result<Var> {
        let img = self.value(image);
        let (gu, gv) = (self.value(u), self.value(v));
        let s = img.shape();
        if s.len() != 3 || gu.ndim() != 2 || gu.shape() != gv.shape() {
            return Err(Error::dim(format!(
                "bilinear_sample of {s:?} at grid {:?}/{:?}",
                gu.shape(),
                gv.shape()
            )));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (ho, wo) = (gu.shape()[0], gu.shape()[1]);
        let n = ho * wo;
        let taps: Vec<Tap<T>> =
            gu.data().iter().zip(gv.data()).map(|(&a, &b)| tap(a, b, w, h)).collect();
        let id = img.data();
        let mut out = vec![T::zero(); c * n];
        for ch in 0..c {
            let p = &id[ch * h * w..(ch + 1) * h * w];
            for (i, t) in taps.iter().enumerate() {
                let top = p[t.y0 * w + t.x0] * (T::one() - t.fx) + p[t.y0 * w + t.x1] * t.fx;
                let bot = p[t.y1 * w + t.x0] * (T::one() - t.fx) + p[t.y1 * w + t.x1] * t.fx;
                out[ch * n + i] = top * (T::one() - t.fy) + bot * t.fy;
            }
        }
        let out = Tensor::from_parts(vec![c, ho, wo], out);
        Ok(self.push_op(out, &[image, u, v], move |g, inputs, _| {
            let gd = g.data();
            let id = inputs[0].data();
            let mut gimg = vec![T::zero(); c * h * w];
            let mut g_u = vec![T::zero(); n];
            let mut g_v = vec![T::zero(); n];
            for ch in 0..c {
                let p = &id[ch * h * w..(ch + 1) * h * w];
                let gp = &mut gimg[ch * h * w..(ch + 1) * h * w];
                for (i, t) in taps.iter().enumerate() {
                    let go = gd[ch * n + i];
                    let (ax, ay) = (T::one() - t.fx, T::one() - t.fy);
                    gp[t.y0 * w + t.x0] += go * ay * ax;
                    gp[t.y0 * w + t.x1] += go * ay * t.fx;
                    gp[t.y1 * w + t.x0] += go * t.fy * ax;
                    gp[t.y1 * w + t.x1] += go * t.fy * t.fx;
                    let (i00, i01) = (p[t.y0 * w + t.x0], p[t.y0 * w + t.x1]);
                    let (i10, i11) = (p[t.y1 * w + t.x0], p[t.y1 * w + t.x1]);
                    if t.live_u {
                        g_u[i] += go * (ay * (i01 - i00) + t.fy * (i11 - i10));
                    }
                    if t.live_v {
                        g_v[i] += go * (ax * (i10 - i00) + t.fx * (i11 - i01));
                    }
                }
            }
            vec![
                Some(Tensor::from_parts(vec![c, h, w], gimg)),
                Some(Tensor::from_parts(vec![ho, wo], g_u)),
                Some(Tensor::from_parts(vec![ho, wo], g_v)),
            ]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_grid_is_identity() {
        let g = Graph::<f64>::new();
        let img = g.constant(Tensor::from_fn(&[2, 3, 4], |i| (i as f64 * 0.37).cos()));
        let u = g.constant(Tensor::from_fn(&[3, 4], |i| (i % 4) as f64));
        let v = g.constant(Tensor::from_fn(&[3, 4], |i| (i / 4) as f64));
        let out = g.bilinear_sample(img, u, v).unwrap();
        assert_eq!(*g.value(out), *g.value(img));
    }

    #[test]
    fn midpoint_of_pair() {
        let g = Graph::<f64>::new();
        let img = g.constant(Tensor::from_f64(vec![1, 1, 2], &[10.0, 20.0]).unwrap());
        let u = g.constant(Tensor::full(&[1, 1], 0.5));
        let v = g.constant(Tensor::full(&[1, 1], 0.0));
        let out = g.bilinear_sample(img, u, v).unwrap();
        assert_eq!(g.value(out).data(), &[15.0]);
    }

    #[test]
    fn out_of_range_clamps_to_border() {
        let g = Graph::<f64>::new();
        let img = g.constant(Tensor::from_f64(vec![1, 1, 2], &[10.0, 20.0]).unwrap());
        let u = g.param(Tensor::full(&[1, 1], 7.0));
        let v = g.constant(Tensor::full(&[1, 1], -3.0));
        let out = g.bilinear_sample(img, u, v).unwrap();
        assert_eq!(g.value(out).data(), &[20.0]);
        let grads = g.backward(g.sum(out)).unwrap();
        assert_eq!(grads.get(u).unwrap().data(), &[0.0]);
    }
}
