use crate::diffcore::graph::{Graph, Var};
use crate::diffcore::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// How the smaller operand repeats across the larger one. Only scalars and
/// trailing-axis suffixes broadcast; anything else is a dimension error.
#[derive(Clone, Copy, Debug)]
enum Bcast {
    Same,
    /// left operand repeats with this period
    Left(usize),
    /// right operand repeats with this period
    Right(usize),
}

fn is_suffix(short: &[usize], long: &[usize]) -> bool {
    short.len() < long.len() && long[long.len() - short.len()..] == *short
}

fn broadcast(a: &[usize], b: &[usize]) -> Result<(Vec<usize>, Bcast)> {
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    if a == b {
        return Ok((a.to_vec(), Bcast::Same));
    }
    if na == 1 && nb == 1 {
        let shape = if a.len() >= b.len() { a } else { b };
        return Ok((shape.to_vec(), Bcast::Same));
    }
    if nb == 1 || is_suffix(b, a) {
        return Ok((a.to_vec(), Bcast::Right(nb)));
    }
    if na == 1 || is_suffix(a, b) {
        return Ok((b.to_vec(), Bcast::Left(na)));
    }
    Err(Error::dim(format!("shapes {a:?} and {b:?} do not broadcast")))
}

fn reduce_period<T: Real>(g: &Tensor<T>, period: usize, shape: &[usize]) -> Tensor<T> {
    let mut out = vec![T::zero(); period];
    for (i, &v) in g.data().iter().enumerate() {
        out[i % period] += v;
    }
    Tensor::from_parts(shape.to_vec(), out)
}

impl<T: Real> Graph<T> {
    /// Elementwise binary op; `dfa`/`dfb` take `(a, b, out)` and return the
    /// local partial derivative.
    fn binary(
        &self,
        a: Var,
        b: Var,
        f: fn(T, T) -> T,
        dfa: fn(T, T, T) -> T,
        dfb: fn(T, T, T) -> T,
    ) -> Result<Var> {
        let va = self.value(a);
        let vb = self.value(b);
        let (shape, mode) = broadcast(va.shape(), vb.shape())?;
        let n: usize = shape.iter().product();
        let (da, db) = (va.data(), vb.data());
        let data: Vec<T> = match mode {
            Bcast::Same => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
            Bcast::Left(p) => (0..n).map(|i| f(da[i % p], db[i])).collect(),
            Bcast::Right(p) => (0..n).map(|i| f(da[i], db[i % p])).collect(),
        };
        let out = Tensor::from_parts(shape, data);
        Ok(self.push_op(out, &[a, b], move |g, inputs, out| {
            let (x, y) = (inputs[0], inputs[1]);
            let (dx, dy, dout, dg) = (x.data(), y.data(), out.data(), g.data());
            let pick = |i: usize| -> (T, T) {
                match mode {
                    Bcast::Same => (dx[i], dy[i]),
                    Bcast::Left(p) => (dx[i % p], dy[i]),
                    Bcast::Right(p) => (dx[i], dy[i % p]),
                }
            };
            let ga: Vec<T> = (0..dg.len())
                .map(|i| {
                    let (u, v) = pick(i);
                    dg[i] * dfa(u, v, dout[i])
                })
                .collect();
            let gb: Vec<T> = (0..dg.len())
                .map(|i| {
                    let (u, v) = pick(i);
                    dg[i] * dfb(u, v, dout[i])
                })
                .collect();
            let ga = Tensor::from_parts(out.shape().to_vec(), ga);
            let gb = Tensor::from_parts(out.shape().to_vec(), gb);
            let ga = match mode {
                Bcast::Left(p) => reduce_period(&ga, p, x.shape()),
                _ => ga,
            };
            let gb = match mode {
                Bcast::Right(p) => reduce_period(&gb, p, y.shape()),
                _ => gb,
            };
            vec![Some(ga), Some(gb)]
        }))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, |_, _, _| T::one(), |_, _, _| T::one())
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, |_, _, _| T::one(), |_, _, _| -T::one())
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, |_, y, _| y, |x, _, _| x)
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x / y, |_, y, _| T::one() / y, |_, y, o| -o / y)
    }

    /// Elementwise unary op; `df` takes `(x, out)`.
    fn unary(&self, a: Var, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var {
        let out = self.value(a).map(f);
        self.push_op(out, &[a], move |g, inputs, out| {
            let x = inputs[0].data();
            let o = out.data();
            let data = g.data().iter().enumerate().map(|(i, &gi)| gi * df(x[i], o[i])).collect();
            vec![Some(Tensor::from_parts(g.shape().to_vec(), data))]
        })
    }

    pub fn neg(&self, a: Var) -> Var {
        self.unary(a, |x| -x, |_, _| -T::one())
    }

    pub fn add_scalar(&self, a: Var, c: T) -> Var {
        self.unary(a, move |x| x + c, |_, _| T::one())
    }

    pub fn mul_scalar(&self, a: Var, c: T) -> Var {
        self.unary(a, move |x| x * c, move |_, _| c)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), |_, y| y)
    }

    /// Natural log. Non-positive inputs yield non-finite values; callers keep
    /// the argument positive.
    pub fn log(&self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), |x, _| T::one() / x)
    }

    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(a, |x| x.sqrt(), |_, y| T::c(0.5) / y)
    }

    pub fn recip(&self, a: Var) -> Var {
        self.unary(a, |x| x.recip(), |_, y| -y * y)
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, |x| x * x, |x, _| T::c(2.0) * x)
    }

    pub fn abs(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, sigmoid, |_, y| y * (T::one() - y))
    }

    /// tanh-approximated GELU.
    pub fn gelu(&self, a: Var) -> Var {
        let k = T::c((2.0 / std::f64::consts::PI).sqrt());
        let c3 = T::c(0.044715);
        let half = T::c(0.5);
        self.unary(
            a,
            move |x| half * x * (T::one() + (k * (x + c3 * x * x * x)).tanh()),
            move |x, _| {
                let t = (k * (x + c3 * x * x * x)).tanh();
                half * (T::one() + t)
                    + half * x * (T::one() - t * t) * k * (T::one() + T::c(3.0) * c3 * x * x)
            },
        )
    }

    /// Clamp to `[lo, hi]`; zero gradient where clamped.
    pub fn clamp(&self, a: Var, lo: T, hi: T) -> Var {
        self.unary(
            a,
            move |x| x.max(lo).min(hi),
            move |x, _| if x > lo && x < hi { T::one() } else { T::zero() },
        )
    }

    pub fn clamp_min(&self, a: Var, lo: T) -> Var {
        self.clamp(a, lo, T::infinity())
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn broadcast_rules() {
        assert!(broadcast(&[2, 3], &[3]).is_ok());
        assert!(broadcast(&[2, 3], &[]).is_ok());
        assert!(broadcast(&[3], &[2, 3]).is_ok());
        assert!(broadcast(&[2, 3], &[2]).is_err());
        assert!(broadcast(&[2, 3], &[2, 1]).is_err());
    }

    #[test]
    fn product_rule() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(2.0));
        let y = g.param(Tensor::scalar(3.0));
        let z = g.mul(x, y).unwrap();
        let grads = g.backward(z).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 3.0);
        assert_eq!(grads.get(y).unwrap().item(), 2.0);
    }

    #[test]
    fn trailing_broadcast_reduces_gradient() {
        let g = Graph::<f64>::new();
        let a = g.param(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let b = g.param(t(&[3], &[10., 20., 30.]));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11., 22., 33., 14., 25., 36.]);
        let s = g.sum(c);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(b).unwrap().data(), &[2., 2., 2.]);
        assert_eq!(grads.get(a).unwrap().data(), &[1.; 6]);
    }

    #[test]
    fn mismatched_shapes_error() {
        let g = Graph::<f64>::new();
        let a = g.param(Tensor::zeros(&[2, 3]));
        let b = g.param(Tensor::zeros(&[4]));
        assert!(matches!(g.add(a, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn sigmoid_stable_at_extremes() {
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
    }
}
