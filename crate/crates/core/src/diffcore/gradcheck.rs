//! Finite-difference verification of analytic gradients (float64).
//!
//! Each registered op reduces its output to a scalar through a fixed random
//! weighting, `L = Σ w ⊙ op(inputs)`, so every output element contributes a
//! distinct upstream gradient. Analytic gradients of `L` are compared with
//! central differences using `ε = 1e-6 · max(1, |x|)`.

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Xoshiro256;

type InputGen = Box<dyn Fn(&mut Xoshiro256, &[Vec<usize>]) -> Vec<Tensor<f64>>>;
type Builder = Box<dyn Fn(&Graph<f64>, &[Var]) -> Result<Var>>;

/// A differentiable op (or composition) registered for gradient checking.
pub struct OpSpec {
    pub name: &'static str,
    pub default_shapes: Vec<Vec<usize>>,
    inputs: InputGen,
    build: Builder,
}

impl OpSpec {
    pub fn new(
        name: &'static str,
        default_shapes: Vec<Vec<usize>>,
        inputs: impl Fn(&mut Xoshiro256, &[Vec<usize>]) -> Vec<Tensor<f64>> + 'static,
        build: impl Fn(&Graph<f64>, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        Self { name, default_shapes, inputs: Box::new(inputs), build: Box::new(build) }
    }

    /// Inputs drawn uniformly from `[lo, hi)`.
    pub fn uniform(
        name: &'static str,
        default_shapes: Vec<Vec<usize>>,
        lo: f64,
        hi: f64,
        build: impl Fn(&Graph<f64>, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        Self::new(name, default_shapes, move |rng, shapes| uniform_inputs(rng, shapes, lo, hi), build)
    }
}

pub fn uniform_tensor(rng: &mut Xoshiro256, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(lo, hi))
}

pub fn uniform_inputs(rng: &mut Xoshiro256, shapes: &[Vec<usize>], lo: f64, hi: f64) -> Vec<Tensor<f64>> {
    shapes.iter().map(|s| uniform_tensor(rng, s, lo, hi)).collect()
}

/// Values with magnitude in `[0.1, 1)` and random sign; keeps kinks at zero
/// out of the finite-difference stencil.
pub fn away_from_zero(rng: &mut Xoshiro256, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.uniform(0.1, 1.0);
        if rng.uniform(0.0, 1.0) < 0.5 {
            -m
        } else {
            m
        }
    })
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub op: String,
    pub seed: u64,
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Relative error with a floor on the denominator so that near-zero
/// gradients are compared absolutely at the 1e-3 scale.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn scalarize(g: &Graph<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = g.constant(weights.clone());
    let flat = g.reshape(out, &[weights.numel()])?;
    let prod = g.mul(flat, w)?;
    Ok(g.sum(prod))
}

fn eval_loss(spec: &OpSpec, inputs: &[Tensor<f64>], weights: &Tensor<f64>) -> Result<f64> {
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = (spec.build)(&g, &vars)?;
    let loss = scalarize(&g, out, weights)?;
    Ok(g.value(loss).item())
}

/// Runs a gradient check of `spec` at the given shapes and seed.
pub fn check_spec(spec: &OpSpec, shapes: Option<&[Vec<usize>]>, seed: u64) -> Result<GradcheckReport> {
    let shapes = shapes.unwrap_or(&spec.default_shapes);
    let mut rng = Xoshiro256::derived(seed, 0x6772_6164);
    let inputs = (spec.inputs)(&mut rng, shapes);

    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = (spec.build)(&g, &vars)?;
    let out_shape = g.shape(out);
    let weights = uniform_tensor(&mut rng, &[out_shape.iter().product()], -1.0, 1.0);
    let loss = scalarize(&g, out, &weights)?;
    let grads = g.backward(loss)?;

    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut probe = inputs.clone();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("param leaf has a gradient").clone();
        for j in 0..inputs[i].numel() {
            let x = inputs[i].data()[j];
            let eps = 1e-6 * x.abs().max(1.0);
            probe[i].data_mut()[j] = x + eps;
            let fp = eval_loss(spec, &probe, &weights)?;
            probe[i].data_mut()[j] = x - eps;
            let fm = eval_loss(spec, &probe, &weights)?;
            probe[i].data_mut()[j] = x;
            let numeric = (fp - fm) / (2.0 * eps);
            let e = rel_err(analytic.data()[j], numeric);
            if !e.is_finite() {
                return Err(Error::Numerical { step: None, detail: format!("{} produced a non-finite gradient", spec.name) });
            }
            worst = worst.max(e);
            checked += 1;
        }
    }
    Ok(GradcheckReport { op: spec.name.to_string(), seed, max_rel_err: worst, checked })
}

/// Every registered differentiable op and composition.
pub fn registry() -> Vec<OpSpec> {
    let mut specs = core_ops();
    specs.extend(crate::geometry::gradcheck_entries());
    specs.extend(crate::losses::gradcheck_entries());
    specs.extend(crate::sql::gradcheck_entries());
    specs.extend(crate::networks::gradcheck_entries());
    specs
}

pub fn registered_names() -> Vec<&'static str> {
    registry().iter().map(|s| s.name).collect()
}

/// Gradient check for the op registered as `op_name`.
pub fn gradcheck(op_name: &str, shapes: Option<&[Vec<usize>]>, seed: u64) -> Result<GradcheckReport> {
    let specs = registry();
    let spec = specs
        .iter()
        .find(|s| s.name == op_name)
        .ok_or_else(|| Error::Lookup(format!("no registered op named `{op_name}`")))?;
    check_spec(spec, shapes, seed)
}

fn core_ops() -> Vec<OpSpec> {
    let s = |v: &[usize]| v.to_vec();
    vec![
        OpSpec::uniform("add", vec![s(&[3, 4]), s(&[4])], -1.0, 1.0, |g, x| g.add(x[0], x[1])),
        OpSpec::uniform("sub", vec![s(&[3, 4]), s(&[3, 4])], -1.0, 1.0, |g, x| g.sub(x[0], x[1])),
        OpSpec::uniform("mul", vec![s(&[3, 4]), s(&[3, 4])], -1.0, 1.0, |g, x| g.mul(x[0], x[1])),
        OpSpec::uniform("mul_scalar_broadcast", vec![s(&[3, 4]), s(&[])], -1.0, 1.0, |g, x| g.mul(x[0], x[1])),
        OpSpec::uniform("div", vec![s(&[3, 4]), s(&[4])], 0.5, 2.0, |g, x| g.div(x[0], x[1])),
        OpSpec::uniform("exp", vec![s(&[3, 4])], -1.0, 1.0, |g, x| Ok(g.exp(x[0]))),
        OpSpec::uniform("log", vec![s(&[3, 4])], 0.2, 3.0, |g, x| Ok(g.log(x[0]))),
        OpSpec::uniform("sqrt", vec![s(&[3, 4])], 0.2, 3.0, |g, x| Ok(g.sqrt(x[0]))),
        OpSpec::uniform("recip", vec![s(&[3, 4])], 0.2, 3.0, |g, x| Ok(g.recip(x[0]))),
        OpSpec::uniform("square", vec![s(&[3, 4])], -1.0, 1.0, |g, x| Ok(g.square(x[0]))),
        OpSpec::new("abs", vec![s(&[3, 4])], |r, sh| vec![away_from_zero(r, &sh[0])], |g, x| Ok(g.abs(x[0]))),
        OpSpec::new("relu", vec![s(&[3, 4])], |r, sh| vec![away_from_zero(r, &sh[0])], |g, x| Ok(g.relu(x[0]))),
        OpSpec::uniform("gelu", vec![s(&[3, 4])], -2.0, 2.0, |g, x| Ok(g.gelu(x[0]))),
        OpSpec::uniform("sigmoid", vec![s(&[3, 4])], -3.0, 3.0, |g, x| Ok(g.sigmoid(x[0]))),
        OpSpec::new(
            "clamp",
            vec![s(&[3, 4])],
            |r, sh| vec![away_from_zero(r, &sh[0]).map(|v| v * 2.0)],
            |g, x| Ok(g.clamp(x[0], -1.05, 1.05)),
        ),
        OpSpec::uniform("matmul", vec![s(&[3, 4]), s(&[4, 5])], -1.0, 1.0, |g, x| g.matmul(x[0], x[1])),
        OpSpec::uniform("linear", vec![s(&[2, 3]), s(&[3, 2]), s(&[2])], -1.0, 1.0, |g, x| {
            g.linear(x[0], x[1], Some(x[2]))
        }),
        OpSpec::uniform("transpose", vec![s(&[3, 5])], -1.0, 1.0, |g, x| g.transpose(x[0])),
        OpSpec::uniform("reshape", vec![s(&[3, 4])], -1.0, 1.0, |g, x| g.reshape(x[0], &[2, 6])),
        OpSpec::uniform("narrow", vec![s(&[3, 6])], -1.0, 1.0, |g, x| g.narrow(x[0], 1, 2, 3)),
        OpSpec::uniform("conv2d", vec![s(&[3, 8, 8]), s(&[2, 3, 3, 3]), s(&[2])], -1.0, 1.0, |g, x| {
            g.conv2d(x[0], x[1], Some(x[2]), 1, 1)
        }),
        OpSpec::uniform("conv2d_strided", vec![s(&[2, 9, 7]), s(&[3, 2, 3, 3])], -1.0, 1.0, |g, x| {
            g.conv2d(x[0], x[1], None, 2, 1)
        }),
        OpSpec::uniform("upsample_nearest2x", vec![s(&[2, 3, 4])], -1.0, 1.0, |g, x| g.upsample_nearest2x(x[0])),
        OpSpec::uniform("resize_bilinear", vec![s(&[2, 4, 5])], -1.0, 1.0, |g, x| g.resize_bilinear(x[0], 7, 9)),
        OpSpec::uniform("box3_reflect", vec![s(&[2, 4, 5])], -1.0, 1.0, |g, x| g.box3_reflect(x[0])),
        OpSpec::uniform("softmax", vec![s(&[3, 5])], -2.0, 2.0, |g, x| g.softmax(x[0], 1)),
        OpSpec::uniform("softmax_axis0", vec![s(&[4, 2, 3])], -2.0, 2.0, |g, x| g.softmax(x[0], 0)),
        OpSpec::uniform("cumsum", vec![s(&[2, 5])], -1.0, 1.0, |g, x| g.cumsum(x[0], 1)),
        OpSpec::uniform("sum", vec![s(&[3, 4])], -1.0, 1.0, |g, x| Ok(g.sum(x[0]))),
        OpSpec::uniform("mean", vec![s(&[3, 4])], -1.0, 1.0, |g, x| Ok(g.mean(x[0]))),
        OpSpec::uniform("min", vec![s(&[3, 4])], -1.0, 1.0, |g, x| Ok(g.min(x[0]))),
        OpSpec::uniform("max", vec![s(&[3, 4])], -1.0, 1.0, |g, x| Ok(g.max(x[0]))),
        OpSpec::uniform("sum_axis", vec![s(&[3, 4, 2])], -1.0, 1.0, |g, x| g.sum_axis(x[0], 1)),
        OpSpec::uniform("mean_axis", vec![s(&[3, 4, 2])], -1.0, 1.0, |g, x| g.mean_axis(x[0], 2)),
        OpSpec::uniform("min_axis", vec![s(&[3, 4, 2])], -1.0, 1.0, |g, x| g.min_axis(x[0], 0)),
        OpSpec::uniform("max_axis", vec![s(&[3, 4, 2])], -1.0, 1.0, |g, x| g.max_axis(x[0], 1)),
        OpSpec::uniform("concat", vec![s(&[2, 3]), s(&[2, 2])], -1.0, 1.0, |g, x| g.concat(&[x[0], x[1]], 1)),
        OpSpec::uniform("stack", vec![s(&[2, 3]), s(&[2, 3])], -1.0, 1.0, |g, x| g.stack(&[x[0], x[1]])),
        OpSpec::uniform("layer_norm", vec![s(&[3, 6])], -1.0, 1.0, |g, x| Ok(g.layer_norm(x[0], 1e-5))),
        OpSpec::uniform("attention", vec![s(&[4, 8]), s(&[4, 8]), s(&[4, 8])], -1.0, 1.0, |g, x| {
            g.attention(x[0], x[1], x[2], 2)
        }),
        OpSpec::new(
            "bilinear_sample",
            vec![s(&[2, 5, 6]), s(&[4, 4])],
            |rng, sh| {
                // fractional coordinates strictly between lattice points
                let grid = &sh[1];
                let (h, w) = (sh[0][1], sh[0][2]);
                let frac = |rng: &mut Xoshiro256, n: usize| {
                    (rng.uniform(0.0, (n - 1) as f64).floor() + rng.uniform(0.1, 0.9)).min(n as f64 - 1.1)
                };
                vec![
                    uniform_tensor(rng, &sh[0], 0.0, 1.0),
                    Tensor::from_fn(grid, |_| frac(rng, w)),
                    Tensor::from_fn(grid, |_| frac(rng, h)),
                ]
            },
            |g, x| g.bilinear_sample(x[0], x[1], x[2]),
        ),
    ]
}
