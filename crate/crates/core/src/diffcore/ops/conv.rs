use crate::diffcore::graph::{Graph, Var};
use crate::diffcore::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Calls `f(row, col, input_offset)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (k, s, p) = (self.k, self.stride as isize, self.pad as isize);
        for ci in 0..self.c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    for oy in 0..self.h_out {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let in_row = (ci * self.h + iy as usize) * self.w;
                        for ox in 0..self.w_out {
                            let ix = ox as isize * s + kx as isize - p;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            f(row, oy * self.w_out + ox, in_row + ix as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Real>(&self, x: &[T]) -> Vec<T> {
        let cols = self.cols();
        let mut col = vec![T::zero(); self.rows() * cols];
        self.for_each_tap(|r, c, i| col[r * cols + c] = x[i]);
        col
    }

    fn col2im<T: Real>(&self, col: &[T]) -> Vec<T> {
        let cols = self.cols();
        let mut x = vec![T::zero(); self.c_in * self.h * self.w];
        self.for_each_tap(|r, c, i| x[i] += col[r * cols + c]);
        x
    }
}

/// Output size of a convolution along one axis.
pub fn conv_out_size(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - k) / stride + 1
}

impl<T: Real> Graph<T> {
    /// 2-D cross-correlation of `x: [C_in, H, W]` with `w: [C_out, C_in, k, k]`,
    /// zero padding, optional per-output-channel bias. Counts
    /// `H'·W'·k²·C_in·C_out` multiply-adds.
    pub fn conv2d(
        &self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        if stride == 0 {
            return Err(Error::Parameter("conv2d stride must be positive".into()));
        }
        let vx = self.value(x);
        let vw = self.value(w);
        let (sx, sw) = (vx.shape(), vw.shape());
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] || sw[2] != sw[3] {
            return Err(Error::dim(format!("conv2d of input {sx:?} with kernel {sw:?}")));
        }
        let (c_in, h, wd) = (sx[0], sx[1], sx[2]);
        let (c_out, k) = (sw[0], sw[2]);
        if k > h + 2 * pad || k > wd + 2 * pad {
            return Err(Error::dim(format!("kernel {k} larger than padded input {h}x{wd}")));
        }
        let geom = ConvGeom {
            c_in,
            h,
            w: wd,
            k,
            stride,
            pad,
            h_out: conv_out_size(h, k, stride, pad),
            w_out: conv_out_size(wd, k, stride, pad),
        };
        let mut parents = vec![x, w];
        let bias_vals = match bias {
            Some(b) => {
                let vb = self.value(b);
                if vb.shape() != [c_out] {
                    return Err(Error::dim(format!("conv2d bias {:?} for {c_out} outputs", vb.shape())));
                }
                parents.push(b);
                Some(vb)
            }
            None => None,
        };

        let (kk, p) = (geom.rows(), geom.cols());
        let col = geom.im2col(vx.data());
        let mut out = vec![T::zero(); c_out * p];
        T::gemm(c_out, kk, p, vw.data(), false, &col, false, T::zero(), &mut out);
        if let Some(b) = bias_vals {
            for (co, &bv) in b.data().iter().enumerate() {
                for o in &mut out[co * p..(co + 1) * p] {
                    *o += bv;
                }
            }
        }
        self.add_macs((p * kk * c_out) as u64);
        let out = Tensor::from_parts(vec![c_out, geom.h_out, geom.w_out], out);
        let has_bias = bias.is_some();
        Ok(self.push_op(out, &parents, move |g, inputs, _| {
            let gd = g.data();
            let col = geom.im2col(inputs[0].data());
            let mut gw = vec![T::zero(); c_out * kk];
            T::gemm(c_out, p, kk, gd, false, &col, true, T::zero(), &mut gw);
            let mut gcol = vec![T::zero(); kk * p];
            T::gemm(kk, c_out, p, inputs[1].data(), true, gd, false, T::zero(), &mut gcol);
            let gx = geom.col2im(&gcol);
            let mut grads = vec![
                Some(Tensor::from_parts(inputs[0].shape().to_vec(), gx)),
                Some(Tensor::from_parts(inputs[1].shape().to_vec(), gw)),
            ];
            if has_bias {
                let gb = (0..c_out).map(|co| gd[co * p..(co + 1) * p].iter().copied().sum()).collect();
                grads.push(Some(Tensor::from_parts(vec![c_out], gb)));
            }
            grads
        }))
    }

    /// Nearest-neighbour ×2 upsampling of `[C, H, W]`.
    pub fn upsample_nearest2x(&self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = v.shape();
        if s.len() != 3 {
            return Err(Error::dim(format!("upsample needs [C,H,W], got {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (h2, w2) = (2 * h, 2 * w);
        let xd = v.data();
        let mut out = vec![T::zero(); c * h2 * w2];
        for ch in 0..c {
            for y in 0..h2 {
                for xx in 0..w2 {
                    out[(ch * h2 + y) * w2 + xx] = xd[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        let out = Tensor::from_parts(vec![c, h2, w2], out);
        Ok(self.push_op(out, &[x], move |g, inputs, _| {
            let gd = g.data();
            let mut gx = vec![T::zero(); c * h * w];
            for ch in 0..c {
                for y in 0..h2 {
                    for xx in 0..w2 {
                        gx[(ch * h + y / 2) * w + xx / 2] += gd[(ch * h2 + y) * w2 + xx];
                    }
                }
            }
            vec![Some(Tensor::from_parts(inputs[0].shape().to_vec(), gx))]
        }))
    }

    /// Bilinear resize of `[C, H, W]` (half-pixel centres, edge clamped).
    /// Every output is a convex combination of inputs.
    pub fn resize_bilinear(&self, x: Var, h_out: usize, w_out: usize) -> Result<Var> {
        let v = self.value(x);
        let s = v.shape();
        if s.len() != 3 || h_out == 0 || w_out == 0 {
            return Err(Error::dim(format!("resize of {s:?} to {h_out}x{w_out}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let ys = resize_taps(h, h_out);
        let xs = resize_taps(w, w_out);
        let xd = v.data();
        let mut out = vec![T::zero(); c * h_out * w_out];
        for ch in 0..c {
            let plane = &xd[ch * h * w..(ch + 1) * h * w];
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                let fy = T::c(fy);
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let fx = T::c(fx);
                    let top = plane[y0 * w + x0] * (T::one() - fx) + plane[y0 * w + x1] * fx;
                    let bot = plane[y1 * w + x0] * (T::one() - fx) + plane[y1 * w + x1] * fx;
                    out[(ch * h_out + oy) * w_out + ox] = top * (T::one() - fy) + bot * fy;
                }
            }
        }
        let out = Tensor::from_parts(vec![c, h_out, w_out], out);
        Ok(self.push_op(out, &[x], move |g, inputs, _| {
            let gd = g.data();
            let mut gx = vec![T::zero(); c * h * w];
            for ch in 0..c {
                let plane = &mut gx[ch * h * w..(ch + 1) * h * w];
                for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                    let fy = T::c(fy);
                    for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                        let fx = T::c(fx);
                        let go = gd[(ch * h_out + oy) * w_out + ox];
                        plane[y0 * w + x0] += go * (T::one() - fy) * (T::one() - fx);
                        plane[y0 * w + x1] += go * (T::one() - fy) * fx;
                        plane[y1 * w + x0] += go * fy * (T::one() - fx);
                        plane[y1 * w + x1] += go * fy * fx;
                    }
                }
            }
            vec![Some(Tensor::from_parts(inputs[0].shape().to_vec(), gx))]
        }))
    }

    /// 3×3 box mean of `[C, H, W]` with reflect padding (needs `H, W ≥ 2`).
    pub fn box3_reflect(&self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = v.shape();
        if s.len() != 3 || s[1] < 2 || s[2] < 2 {
            return Err(Error::dim(format!("box filter needs [C,H>=2,W>=2], got {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let ninth = T::c(1.0 / 9.0);
        let xd = v.data();
        let mut out = vec![T::zero(); c * h * w];
        for ch in 0..c {
            let plane = &xd[ch * h * w..(ch + 1) * h * w];
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = T::zero();
                    for dy in [-1isize, 0, 1] {
                        let yy = reflect(y as isize + dy, h);
                        for dx in [-1isize, 0, 1] {
                            acc += plane[yy * w + reflect(xx as isize + dx, w)];
                        }
                    }
                    out[(ch * h + y) * w + xx] = acc * ninth;
                }
            }
        }
        let out = Tensor::from_parts(vec![c, h, w], out);
        Ok(self.push_op(out, &[x], move |g, inputs, _| {
            let gd = g.data();
            let mut gx = vec![T::zero(); c * h * w];
            for ch in 0..c {
                for y in 0..h {
                    for xx in 0..w {
                        let go = gd[(ch * h + y) * w + xx] * ninth;
                        for dy in [-1isize, 0, 1] {
                            let yy = reflect(y as isize + dy, h);
                            for dx in [-1isize, 0, 1] {
                                gx[(ch * h + yy) * w + reflect(xx as isize + dx, w)] += go;
                            }
                        }
                    }
                }
            }
            vec![Some(Tensor::from_parts(inputs[0].shape().to_vec(), gx))]
        }))
    }
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if i < 0 {
        (-i) as usize
    } else if i as usize >= n {
        2 * n - 2 - i as usize
    } else {
        i as usize
    }
}

/// `(i0, i1, frac)` per output index for half-pixel bilinear resizing.
fn resize_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_identity_kernel() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[1, 3, 3], |i| i as f64));
        let w = g.constant(Tensor::ones(&[1, 1, 1, 1]));
        let y = g.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(*g.value(y), *g.value(x));
    }

    #[test]
    fn all_ones_kernel_sums() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(vec![1, 2, 2], &[1., 2., 3., 4.]).unwrap());
        let w = g.constant(Tensor::ones(&[1, 1, 2, 2]));
        let y = g.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), &[10.0]);
        assert_eq!(g.value(y).shape(), &[1, 1, 1]);
    }

    #[test]
    fn stride_two_shape() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 4, 4]));
        let w = g.constant(Tensor::zeros(&[1, 1, 2, 2]));
        let y = g.conv2d(x, w, None, 2, 0).unwrap();
        assert_eq!(g.shape(y), vec![1, 2, 2]);
        assert!(matches!(g.conv2d(x, w, None, 0, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn conv_mac_count() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[2, 8, 8]));
        let w = g.constant(Tensor::zeros(&[4, 2, 3, 3]));
        g.conv2d(x, w, None, 1, 1).unwrap();
        assert_eq!(g.macs(), 8 * 8 * 9 * 2 * 4);
    }

    #[test]
    fn resize_identity_and_range() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[1, 4, 6], |i| (i as f64).sin()));
        let same = g.resize_bilinear(x, 4, 6).unwrap();
        assert!(g.value(same).max_abs_diff(&g.value(x)) < 1e-15);
        let up = g.value(g.resize_bilinear(x, 8, 12).unwrap());
        let (lo, hi) = (-1.0, 1.0);
        assert!(up.data().iter().all(|&v| (lo..=hi).contains(&v)));
    }

    #[test]
    fn box_filter_of_constant_is_constant() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[2, 3, 4], 0.7));
        let y = g.value(g.box3_reflect(x).unwrap());
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(2, 5), 2);
    }
}
