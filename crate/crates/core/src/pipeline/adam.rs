//! Bias-corrected Adam and the step learning-rate schedule.

use crate::diffcore::{Real, Tensor};
use crate::error::{Error, Result};
use crate::networks::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments per parameter plus the update counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real> {
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        let zeros = || {
            let mut s = ParamSet::new();
            for (n, t) in params.iter() {
                s.insert(n.clone(), Tensor::zeros(t.shape())).expect("names are unique");
            }
            s
        };
        Self { m: zeros(), v: zeros(), step: 0 }
    }
}

fn check_match<T: Real>(params: &ParamSet<T>, other: &ParamSet<T>, what: &str) -> Result<()> {
    if params.len() != other.len() {
        return Err(Error::Contract(format!("{what} has {} tensors, parameters have {}", other.len(), params.len())));
    }
    for ((pn, pt), (on, ot)) in params.iter().zip(other.iter()) {
        if pn != on || pt.shape() != ot.shape() {
            return Err(Error::Contract(format!("{what} entry {on} {:?} does not match parameter {pn} {:?}", ot.shape(), pt.shape())));
        }
    }
    Ok(())
}

/// One Adam update: `θ ← θ − lr · m̂ / (√v̂ + ε)`.
pub fn adam_update<T: Real>(
    params: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    state: &mut AdamState<T>,
    hyper: &AdamHyper,
) -> Result<()> {
    check_match(params, grads, "gradient set")?;
    check_match(params, &state.m, "first moment")?;
    check_match(params, &state.v, "second moment")?;
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let ms = state.m.iter_mut();
    let vs = state.v.iter_mut();
    for ((((_, p), (_, g)), (_, m)), (_, v)) in params.iter_mut().zip(grads.iter()).zip(ms).zip(vs) {
        let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            let gi = g.data()[i].f64();
            let mi = b1 * m[i].f64() + (1.0 - b1) * gi;
            let vi = b2 * v[i].f64() + (1.0 - b2) * gi * gi;
            m[i] = T::c(mi);
            v[i] = T::c(vi);
            let upd = hyper.lr * (mi / c1) / ((vi / c2).sqrt() + hyper.eps);
            p[i] = T::c(p[i].f64() - upd);
        }
    }
    Ok(())
}

/// `lr_initial` before `decay_epoch`, `lr_after_decay` from then on.
pub fn lr_schedule(epoch: usize, lr_initial: f64, lr_after_decay: f64, decay_epoch: usize) -> f64 {
    if epoch < decay_epoch {
        lr_initial
    } else {
        lr_after_decay
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(vals: &[(&str, &[f64])]) -> ParamSet<f64> {
        let mut s = ParamSet::new();
        for (n, v) in vals {
            s.insert(n.to_string(), Tensor::from_f64(vec![v.len()], v).unwrap()).unwrap();
        }
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = set(&[("a", &[1.0, -2.0])]);
        let g = set(&[("a", &[1.0, 1.0])]);
        let mut st = AdamState::new(&p);
        let h = AdamHyper { lr: 1e-3, ..Default::default() };
        adam_update(&mut p, &g, &mut st, &h).unwrap();
        let expect = 1e-3 / (1.0 + 1e-8);
        assert!((p.get("a").unwrap().data()[0] - (1.0 - expect)).abs() < 1e-15);
        assert!((p.get("a").unwrap().data()[1] - (-2.0 - expect)).abs() < 1e-15);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradients_keep_params_and_decay_moments() {
        let mut p = set(&[("a", &[0.5])]);
        let mut st = AdamState::new(&p);
        let h = AdamHyper::default();
        adam_update(&mut p, &set(&[("a", &[2.0])]), &mut st, &h).unwrap();
        let before = p.clone();
        let (m0, v0) = (st.m.get("a").unwrap().data()[0], st.v.get("a").unwrap().data()[0]);
        let zero = set(&[("a", &[0.0])]);
        adam_update(&mut p, &zero, &mut st, &h).unwrap();
        assert!((st.m.get("a").unwrap().data()[0] - 0.9 * m0).abs() < 1e-15);
        assert!((st.v.get("a").unwrap().data()[0] - 0.999 * v0).abs() < 1e-15);
        // with m ≠ 0 the parameter still moves; from a fresh state it does not
        let mut fresh = AdamState::new(&before);
        let mut q = before.clone();
        adam_update(&mut q, &zero, &mut fresh, &h).unwrap();
        assert_eq!(q, before);
    }

    #[test]
    fn mismatch_is_contract_error() {
        let mut p = set(&[("a", &[1.0])]);
        let mut st = AdamState::new(&p);
        let h = AdamHyper::default();
        let bad_name = set(&[("b", &[1.0])]);
        let bad_shape = set(&[("a", &[1.0, 2.0])]);
        assert!(matches!(adam_update(&mut p, &bad_name, &mut st, &h), Err(Error::Contract(_))));
        assert!(matches!(adam_update(&mut p, &bad_shape, &mut st, &h), Err(Error::Contract(_))));
    }

    #[test]
    fn deterministic_over_ten_steps() {
        let run = || {
            let mut p = set(&[("a", &[0.3, -0.7]), ("b", &[2.0])]);
            let mut st = AdamState::new(&p);
            for k in 0..10 {
                let g = set(&[("a", &[k as f64 * 0.1, -0.2]), ("b", &[(k as f64).sin()])]);
                adam_update(&mut p, &g, &mut st, &AdamHyper::default()).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn schedule() {
        assert_eq!(lr_schedule(0, 1e-4, 1e-5, 15), 1e-4);
        assert_eq!(lr_schedule(14, 1e-4, 1e-5, 15), 1e-4);
        assert_eq!(lr_schedule(15, 1e-4, 1e-5, 15), 1e-5);
        assert_eq!(lr_schedule(0, 1e-4, 1e-5, 0), 1e-5);
    }
}
