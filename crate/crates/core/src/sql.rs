//! Self Query Layer: coarse queries from a mini-transformer over patch
//! tokens, a self-cost volume of query/pixel dot products, depth bins from
//! counting over the volume, and a probabilistic combination of bin centers.
//!
//! Ablation variants (query source, bin estimator, combination head) are
//! selected through [`ModelConfig`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::gradcheck::{uniform_tensor, OpSpec};
use crate::diffcore::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::networks::params::{Bound, Init, ParamSet, ParamSpec};
use crate::networks::ModelConfig;

/// Mixing weight of the uniform distribution in the bin widths and margin
/// of the sigmoid heads, keeping every output strictly inside the range.
pub const BIN_FLOOR: f64 = 1e-3;

const LN_EPS: f64 = 1e-5;

macro_rules! string_enum {
    ($(#[$m:meta])* $name:ident { $($var:ident => $s:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name { $(#[serde(rename = $s)] $var),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$var),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$var => $s),+ }
            }

            pub fn index(self) -> usize {
                Self::ALL.iter().position(|&m| m == self).unwrap()
            }

            pub fn from_index(i: usize) -> Option<Self> {
                Self::ALL.get(i).copied()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($name::$var),)+
                    _ => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($name), " `{}` (expected one of: {})"),
                        s,
                        [$($s),+].join(", ")
                    ))),
                }
            }
        }
    };
}

string_enum!(
    /// Source of the queries.
    QueryMode {
        Coarse => "coarse",
        Fine => "fine",
        LearnedStatic => "learned-static",
        Bypass => "none",
    }
);

string_enum!(
    /// How bin widths are obtained.
    BinMode {
        Counting => "counting",
        Regression => "regression",
        FixedUniform => "fixed-uniform",
    }
);

string_enum!(
    /// How the volume is turned into depth.
    CombineMode {
        Probabilistic => "probabilistic",
        Conv1x1 => "conv1x1",
        Gap => "gap",
    }
);

/// `S: [C, h, w]`.
#[derive(Clone, Copy, Debug)]
pub struct FeatureMap {
    pub var: Var,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FeatureMap {
    pub fn new<T: Real>(g: &Graph<T>, var: Var) -> Result<Self> {
        match g.shape(var)[..] {
            [c, h, w] if c > 0 && h > 0 && w > 0 => Ok(Self { var, channels: c, height: h, width: w }),
            ref s => Err(Error::dim(format!("feature map must be [C, h, w], got {s:?}"))),
        }
    }

    fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Tokens `[N, C]` with positional embeddings added.
#[derive(Clone, Copy, Debug)]
pub struct PatchTokens {
    pub var: Var,
    pub count: usize,
}

/// Queries `[Q, C]`.
#[derive(Clone, Copy, Debug)]
pub struct QuerySet {
    pub var: Var,
    pub count: usize,
}

/// `V: [Q, h, w]`.
#[derive(Clone, Copy, Debug)]
pub struct SelfCostVolume {
    pub var: Var,
    pub planes: usize,
}

/// Bin widths `b: [D]` and centers `c: [D]`.
#[derive(Clone, Copy, Debug)]
pub struct DepthBins {
    pub widths: Var,
    pub centers: Var,
    pub d_min: f64,
    pub d_max: f64,
}

/// `p: [D, h, w]`, softmax over the plane axis.
#[derive(Clone, Copy, Debug)]
pub struct PlaneProbabilities {
    pub var: Var,
}

/// Everything [`sql_forward`] produced; intermediate pieces are absent for
/// modes that skip them.
#[derive(Clone, Copy, Debug)]
pub struct SqlOutput {
    /// `[h, w]`
    pub depth: Var,
    pub volume: Option<SelfCostVolume>,
    pub bins: Option<DepthBins>,
    pub probabilities: Option<PlaneProbabilities>,
}

/// Parameters of the query layer for `cfg`, in initialization order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let c = cfg.channels;
    let mut specs = Vec::new();
    match cfg.query_mode {
        QueryMode::Bypass => {
            specs.extend(ParamSpec::conv("sql.head", 1, c, 3));
            return specs;
        }
        QueryMode::Coarse | QueryMode::Fine => {
            let p = cfg.effective_patch();
            specs.extend(ParamSpec::conv("sql.patch", c, c, p));
            specs.push(ParamSpec::new("sql.pos", &[cfg.tokens(), c], Init::Uniform(0.02)));
            for l in 0..cfg.transformer_layers {
                let pre = format!("sql.tf{l}");
                specs.push(ParamSpec::new(format!("{pre}.ln1.gamma"), &[c], Init::Ones));
                specs.push(ParamSpec::new(format!("{pre}.ln1.beta"), &[c], Init::Zeros));
                for m in ["q", "k", "v", "out"] {
                    specs.extend(ParamSpec::linear(&format!("{pre}.attn.{m}"), c, c));
                }
                specs.push(ParamSpec::new(format!("{pre}.ln2.gamma"), &[c], Init::Ones));
                specs.push(ParamSpec::new(format!("{pre}.ln2.beta"), &[c], Init::Zeros));
                specs.extend(ParamSpec::linear(&format!("{pre}.mlp.fc1"), c, c * cfg.mlp_ratio));
                specs.extend(ParamSpec::linear(&format!("{pre}.mlp.fc2"), c * cfg.mlp_ratio, c));
            }
        }
        QueryMode::LearnedStatic => {
            specs.push(ParamSpec::new("sql.queries", &[cfg.queries, c], Init::HeUniform { fan_in: c }));
        }
    }
    match cfg.combine_mode {
        CombineMode::Probabilistic => {
            let bin_in = match cfg.bin_mode {
                BinMode::Counting => Some(cfg.queries * c),
                BinMode::Regression => Some(c),
                BinMode::FixedUniform => None,
            };
            if let Some(din) = bin_in {
                specs.extend(ParamSpec::linear("sql.bins.fc1", din, cfg.bins_hidden));
                specs.extend(ParamSpec::linear("sql.bins.fc2", cfg.bins_hidden, cfg.bins));
            }
            specs.extend(ParamSpec::conv("sql.planes", cfg.bins, cfg.queries, 1));
        }
        CombineMode::Conv1x1 => specs.extend(ParamSpec::conv("sql.combine", 1, cfg.queries, 1)),
        CombineMode::Gap => {}
    }
    specs
}

/// Learned `p×p` stride-`p` convolution, flattened to `[N, C]`, plus learned
/// positional embeddings.
pub fn patch_embed<T: Real>(g: &Graph<T>, params: &Bound, s: &FeatureMap, p: usize) -> Result<PatchTokens> {
    if p == 0 || !s.height.is_multiple_of(p) || !s.width.is_multiple_of(p) {
        return Err(Error::config(format!("patch size {p} does not divide the {}x{} feature map", s.height, s.width)));
    }
    let n = (s.height / p) * (s.width / p);
    let y = g.conv2d(s.var, params.get("sql.patch.weight")?, Some(params.get("sql.patch.bias")?), p, 0)?;
    let tokens = g.transpose(g.reshape(y, &[s.channels, n])?)?;
    let pos = params.get("sql.pos")?;
    if g.shape(pos) != [n, s.channels] {
        return Err(Error::config(format!("positional embeddings {:?} do not fit {n} tokens", g.shape(pos))));
    }
    Ok(PatchTokens { var: g.add(tokens, pos)?, count: n })
}

fn affine_norm<T: Real>(g: &Graph<T>, params: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let y = g.layer_norm(x, LN_EPS);
    let y = g.mul(y, params.get(&format!("{prefix}.gamma"))?)?;
    g.add(y, params.get(&format!("{prefix}.beta"))?)
}

fn dense<T: Real>(g: &Graph<T>, params: &Bound, prefix: &str, x: Var) -> Result<Var> {
    g.linear(x, params.get(&format!("{prefix}.weight"))?, Some(params.get(&format!("{prefix}.bias"))?))
}

/// Pre-norm encoder layer over `x: [N, C]`.
fn transformer_layer<T: Real>(g: &Graph<T>, params: &Bound, prefix: &str, x: Var, heads: usize) -> Result<Var> {
    let h = affine_norm(g, params, &format!("{prefix}.ln1"), x)?;
    let q = dense(g, params, &format!("{prefix}.attn.q"), h)?;
    let k = dense(g, params, &format!("{prefix}.attn.k"), h)?;
    let v = dense(g, params, &format!("{prefix}.attn.v"), h)?;
    let a = g.attention(q, k, v, heads)?;
    let x = g.add(x, dense(g, params, &format!("{prefix}.attn.out"), a)?)?;
    let h = affine_norm(g, params, &format!("{prefix}.ln2"), x)?;
    let h = g.gelu(dense(g, params, &format!("{prefix}.mlp.fc1"), h)?);
    g.add(x, dense(g, params, &format!("{prefix}.mlp.fc2"), h)?)
}

/// Runs `layers` transformer layers over the tokens and keeps the first `q`.
pub fn coarse_queries<T: Real>(
    g: &Graph<T>,
    params: &Bound,
    tokens: &PatchTokens,
    q: usize,
    layers: usize,
    heads: usize,
) -> Result<QuerySet> {
    if q == 0 || q > tokens.count {
        return Err(Error::config(format!("{q} queries requested from {} tokens", tokens.count)));
    }
    let mut x = tokens.var;
    for l in 0..layers {
        x = transformer_layer(g, params, &format!("sql.tf{l}"), x, heads)?;
    }
    Ok(QuerySet { var: g.narrow(x, 0, 0, q)?, count: q })
}

/// `V[i, j, k] = ⟨Q_i, S[:, j, k]⟩`, one `[Q, C] × [C, h·w]` product.
pub fn build_self_cost_volume<T: Real>(g: &Graph<T>, queries: &QuerySet, s: &FeatureMap) -> Result<SelfCostVolume> {
    let qc = g.shape(queries.var)[1];
    if qc != s.channels {
        return Err(Error::dim(format!("queries have {qc} channels, features have {}", s.channels)));
    }
    let flat = g.reshape(s.var, &[s.channels, s.pixels()])?;
    let v = g.matmul(queries.var, flat)?;
    Ok(SelfCostVolume { var: g.reshape(v, &[queries.count, s.height, s.width])?, planes: queries.count })
}

/// Per plane, a spatial softmax of `V_i` weighting the feature columns:
/// `[Q, C]`.
pub fn aggregate_planes<T: Real>(g: &Graph<T>, volume: &SelfCostVolume, s: &FeatureMap) -> Result<Var> {
    let v = g.reshape(volume.var, &[volume.planes, s.pixels()])?;
    let w = g.softmax(v, 1)?;
    let st = g.transpose(g.reshape(s.var, &[s.channels, s.pixels()])?)?;
    g.matmul(w, st)
}

/// Softmax over MLP logits, mixed with the uniform distribution by
/// [`BIN_FLOOR`].
fn bin_mlp<T: Real>(g: &Graph<T>, params: &Bound, x: Var, d: usize) -> Result<Var> {
    let h = g.gelu(dense(g, params, "sql.bins.fc1", x)?);
    let logits = g.reshape(dense(g, params, "sql.bins.fc2", h)?, &[d])?;
    let b = g.softmax(logits, 0)?;
    Ok(g.add_scalar(g.mul_scalar(b, T::c(1.0 - BIN_FLOOR)), T::c(BIN_FLOOR / d as f64)))
}

/// Centers `c_i = d_min + (d_max − d_min)(b_i/2 + Σ_{j<i} b_j)`.
pub fn bins_from_widths<T: Real>(g: &Graph<T>, widths: Var, d_min: f64, d_max: f64) -> Result<DepthBins> {
    let cum = g.cumsum(widths, 0)?;
    let mid = g.sub(cum, g.mul_scalar(widths, T::c(0.5)))?;
    let centers = g.add_scalar(g.mul_scalar(mid, T::c(d_max - d_min)), T::c(d_min));
    Ok(DepthBins { widths, centers, d_min, d_max })
}

/// Bins by counting: aggregate each plane, concatenate, MLP, softmax.
pub fn estimate_bins<T: Real>(
    g: &Graph<T>,
    params: &Bound,
    volume: &SelfCostVolume,
    s: &FeatureMap,
    cfg: &ModelConfig,
) -> Result<DepthBins> {
    let agg = aggregate_planes(g, volume, s)?;
    let flat = g.reshape(agg, &[1, volume.planes * s.channels])?;
    let widths = bin_mlp(g, params, flat, cfg.bins)?;
    bins_from_widths(g, widths, cfg.d_min, cfg.d_max)
}

/// Bins regressed from the first query token alone.
pub fn regress_bins<T: Real>(g: &Graph<T>, params: &Bound, queries: &QuerySet, cfg: &ModelConfig) -> Result<DepthBins> {
    let token = g.narrow(queries.var, 0, 0, 1)?;
    let widths = bin_mlp(g, params, token, cfg.bins)?;
    bins_from_widths(g, widths, cfg.d_min, cfg.d_max)
}

/// Equal widths `1/D`.
pub fn uniform_bins<T: Real>(g: &Graph<T>, d: usize, d_min: f64, d_max: f64) -> Result<DepthBins> {
    let widths = g.constant(Tensor::full(&[d], T::c(1.0 / d as f64)));
    bins_from_widths(g, widths, d_min, d_max)
}

/// 1×1 convolution `Q → D` planes, softmax over planes per pixel.
pub fn plane_probabilities<T: Real>(g: &Graph<T>, params: &Bound, volume: &SelfCostVolume) -> Result<PlaneProbabilities> {
    let logits = g.conv2d(volume.var, params.get("sql.planes.weight")?, Some(params.get("sql.planes.bias")?), 1, 0)?;
    Ok(PlaneProbabilities { var: g.softmax(logits, 0)? })
}

/// `d(j, k) = Σ_i c_i p[i, j, k]`, `[h, w]`.
pub fn combine_depth<T: Real>(g: &Graph<T>, probs: &PlaneProbabilities, bins: &DepthBins) -> Result<Var> {
    let ps = g.shape(probs.var);
    let d = g.shape(bins.centers)[0];
    if ps.len() != 3 || ps[0] != d {
        return Err(Error::dim(format!("{d} bin centers against probabilities {ps:?}")));
    }
    let c = g.reshape(bins.centers, &[1, d])?;
    let p = g.reshape(probs.var, &[d, ps[1] * ps[2]])?;
    g.reshape(g.matmul(c, p)?, &[ps[1], ps[2]])
}

/// `d_min + (d_max − d_min)(η/2 + (1 − η) σ(x))`: a sigmoid head kept
/// strictly inside the range.
pub fn range_map<T: Real>(g: &Graph<T>, x: Var, d_min: f64, d_max: f64) -> Var {
    let r = d_max - d_min;
    let s = g.sigmoid(x);
    g.add_scalar(g.mul_scalar(s, T::c(r * (1.0 - BIN_FLOOR))), T::c(d_min + r * BIN_FLOOR / 2.0))
}

/// Full query layer on `S`, producing depth `[h, w]`.
pub fn sql_forward<T: Real>(g: &Graph<T>, params: &Bound, s: &FeatureMap, cfg: &ModelConfig) -> Result<SqlOutput> {
    if s.channels != cfg.channels {
        return Err(Error::config(format!("features have {} channels, config says {}", s.channels, cfg.channels)));
    }
    let queries = match cfg.query_mode {
        QueryMode::Bypass => {
            let y = g.conv2d(s.var, params.get("sql.head.weight")?, Some(params.get("sql.head.bias")?), 1, 1)?;
            let y = g.reshape(y, &[s.height, s.width])?;
            return Ok(SqlOutput {
                depth: range_map(g, y, cfg.d_min, cfg.d_max),
                volume: None,
                bins: None,
                probabilities: None,
            });
        }
        QueryMode::Coarse | QueryMode::Fine => {
            let tokens = patch_embed(g, params, s, cfg.effective_patch())?;
            coarse_queries(g, params, &tokens, cfg.queries, cfg.transformer_layers, cfg.heads)?
        }
        QueryMode::LearnedStatic => {
            let var = params.get("sql.queries")?;
            QuerySet { var, count: g.shape(var)[0] }
        }
    };
    let volume = build_self_cost_volume(g, &queries, s)?;
    let (depth, bins, probabilities) = match cfg.combine_mode {
        CombineMode::Probabilistic => {
            let bins = match cfg.bin_mode {
                BinMode::Counting => estimate_bins(g, params, &volume, s, cfg)?,
                BinMode::Regression => regress_bins(g, params, &queries, cfg)?,
                BinMode::FixedUniform => uniform_bins(g, cfg.bins, cfg.d_min, cfg.d_max)?,
            };
            let probs = plane_probabilities(g, params, &volume)?;
            (combine_depth(g, &probs, &bins)?, Some(bins), Some(probs))
        }
        CombineMode::Conv1x1 => {
            let y = g.conv2d(volume.var, params.get("sql.combine.weight")?, Some(params.get("sql.combine.bias")?), 1, 0)?;
            let y = g.reshape(y, &[s.height, s.width])?;
            (range_map(g, y, cfg.d_min, cfg.d_max), None, None)
        }
        CombineMode::Gap => {
            let y = g.mean_axis(volume.var, 0)?;
            (range_map(g, y, cfg.d_min, cfg.d_max), None, None)
        }
    };
    Ok(SqlOutput { depth, volume: Some(volume), bins, probabilities })
}

/// Writes each plane of `volume: [Q, h, w]` as `plane_<i>.pgm`, min-max
/// normalized per plane.
pub fn export_volume_pgm<T: Real>(volume: &Tensor<T>, dir: &Path) -> Result<Vec<PathBuf>> {
    let s = volume.shape();
    if s.len() != 3 {
        return Err(Error::dim(format!("volume must be [Q, h, w], got {s:?}")));
    }
    let n = s[1] * s[2];
    let mut paths = Vec::with_capacity(s[0]);
    for i in 0..s[0] {
        let plane = &volume.data()[i * n..(i + 1) * n];
        let lo = plane.iter().map(|v| v.f64()).fold(f64::INFINITY, f64::min);
        let hi = plane.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let img = Tensor::<f64>::from_fn(&[s[1], s[2]], |j| (plane[j].f64() - lo) / span);
        let path = dir.join(format!("plane_{i}.pgm"));
        crate::io::write_pgm(&path, &img)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Configuration used by the end-to-end query-layer gradient check.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        height: 16,
        width: 16,
        channels: 4,
        patch: 4,
        fine_patch: 4,
        queries: 2,
        bins: 4,
        d_min: 0.5,
        d_max: 10.0,
        bins_hidden: 8,
        ..ModelConfig::default()
    }
}

pub(crate) fn gradcheck_entries() -> Vec<OpSpec> {
    let cfg = toy_config();
    let specs = param_specs(&cfg);
    let mut shapes = vec![vec![cfg.channels, 8, 8]];
    shapes.extend(specs.iter().map(|s| s.shape.clone()));
    let names: Vec<String> = specs.iter().map(|s| s.name.clone()).collect();
    vec![
        OpSpec::new(
            "sql_forward",
            shapes,
            move |rng, sh| {
                let mut inputs = vec![uniform_tensor(rng, &sh[0], -1.0, 1.0)];
                let seed = rand_core::RngCore::next_u64(rng);
                let init = ParamSet::<f64>::from_specs(&specs, seed).expect("unique names");
                inputs.extend(init.iter().map(|(_, t)| t.clone()));
                inputs
            },
            move |g, x| {
                // bound inputs follow the sorted-name order of ParamSet
                let mut sorted = names.clone();
                sorted.sort();
                let mut params = Bound::default();
                for (name, v) in sorted.iter().zip(&x[1..]) {
                    params.insert(name.clone(), *v);
                }
                let s = FeatureMap::new(g, x[0])?;
                Ok(sql_forward(g, &params, &s, &cfg)?.depth)
            },
        ),
        OpSpec::uniform("self_cost_volume", vec![vec![3, 5], vec![5, 4, 6]], -1.0, 1.0, |g, x| {
            let s = FeatureMap::new(g, x[1])?;
            Ok(build_self_cost_volume(g, &QuerySet { var: x[0], count: 3 }, &s)?.var)
        }),
        OpSpec::uniform("aggregate_planes", vec![vec![3, 4, 5], vec![6, 4, 5]], -1.0, 1.0, |g, x| {
            let s = FeatureMap::new(g, x[1])?;
            aggregate_planes(g, &SelfCostVolume { var: x[0], planes: 3 }, &s)
        }),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::gradcheck::check_spec;
    use crate::rng::Xoshiro256;
    use proptest::prelude::*;

    fn bind(g: &Graph<f64>, cfg: &ModelConfig, seed: u64) -> (ParamSet<f64>, Bound) {
        let set = ParamSet::from_specs(&param_specs(cfg), seed).unwrap();
        let b = set.bind(g, false);
        (set, b)
    }

    fn features(g: &Graph<f64>, c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
        let mut rng = Xoshiro256::seed_from(seed);
        FeatureMap::new(g, g.constant(uniform_tensor(&mut rng, &[c, h, w], -1.0, 1.0))).unwrap()
    }

    #[test]
    fn mode_strings_round_trip() {
        for m in QueryMode::ALL {
            assert_eq!(m.as_str().parse::<QueryMode>().unwrap(), *m);
        }
        assert_eq!("none".parse::<QueryMode>().unwrap(), QueryMode::Bypass);
        assert!(matches!("diagonal".parse::<BinMode>(), Err(Error::Config(_))));
        assert!(matches!("max".parse::<CombineMode>(), Err(Error::Config(_))));
    }

    #[test]
    fn patch_embed_shapes() {
        let g = Graph::<f64>::new();
        for (hw, p, n) in [(8, 8, 1), (32, 16, 4)] {
            let mut b = Bound::default();
            let c = 2;
            b.insert("sql.patch.weight", g.constant(Tensor::zeros(&[c, c, p, p])));
            b.insert("sql.patch.bias", g.constant(Tensor::zeros(&[c])));
            b.insert("sql.pos", g.constant(Tensor::zeros(&[n, c])));
            let s = features(&g, c, hw, hw, 1);
            let t = patch_embed(&g, &b, &s, p).unwrap();
            assert_eq!(t.count, n);
            assert_eq!(g.shape(t.var), vec![n, c]);
        }
    }

    #[test]
    fn patch_embed_identity_kernel_flattens() {
        let g = Graph::<f64>::new();
        let c = 3;
        let mut b = Bound::default();
        b.insert("sql.patch.weight", g.constant(Tensor::from_fn(&[c, c, 1, 1], |i| if i / c == i % c { 1.0 } else { 0.0 })));
        b.insert("sql.patch.bias", g.constant(Tensor::zeros(&[c])));
        b.insert("sql.pos", g.constant(Tensor::zeros(&[20, c])));
        let s = features(&g, c, 4, 5, 2);
        let t = g.value(patch_embed(&g, &b, &s, 1).unwrap().var);
        let sv = g.value(s.var);
        for n in 0..20 {
            for ch in 0..c {
                assert_eq!(t.at(&[n, ch]), sv.data()[ch * 20 + n]);
            }
        }
        assert!(matches!(patch_embed(&g, &b, &s, 3), Err(Error::Config(_))));
    }

    #[test]
    fn zeroed_residual_branches_pass_tokens_through() {
        let cfg = toy_config();
        let g = Graph::<f64>::new();
        let mut set = ParamSet::<f64>::from_specs(&param_specs(&cfg), 3).unwrap();
        for (name, t) in set.iter_mut() {
            if name.contains(".attn.out.") || name.contains(".mlp.fc2.") {
                *t = Tensor::zeros(t.shape());
            }
        }
        let b = set.bind(&g, false);
        let tokens = PatchTokens { var: g.constant(Tensor::from_fn(&[4, 4], |i| (i as f64).sin())), count: 4 };
        let q = coarse_queries(&g, &b, &tokens, 3, 4, 4).unwrap();
        let out = g.value(q.var);
        let inp = g.value(tokens.var);
        assert_eq!(out.data(), &inp.data()[..12]);
        // Q = N keeps every token; Q > N is rejected
        assert_eq!(coarse_queries(&g, &b, &tokens, 4, 4, 4).unwrap().count, 4);
        assert!(matches!(coarse_queries(&g, &b, &tokens, 5, 4, 4), Err(Error::Config(_))));
    }

    #[test]
    fn cost_volume_hand_case() {
        let g = Graph::<f64>::new();
        // S: 2 channels on a 2x2 grid
        let s = FeatureMap::new(&g, g.constant(Tensor::from_f64(vec![2, 2, 2], &[1., 2., 3., 4., 5., 6., 7., 8.]).unwrap())).unwrap();
        let q = QuerySet { var: g.constant(Tensor::from_f64(vec![2, 2], &[1., 0., 0.5, -1.]).unwrap()), count: 2 };
        let v = g.value(build_self_cost_volume(&g, &q, &s).unwrap().var);
        assert_eq!(v.data(), &[1., 2., 3., 4., 0.5 - 5., 1. - 6., 1.5 - 7., 2. - 8.]);
        let zero = QuerySet { var: g.constant(Tensor::zeros(&[2, 2])), count: 2 };
        let v0 = g.value(build_self_cost_volume(&g, &zero, &s).unwrap().var);
        assert!(v0.data().iter().all(|&x| x == 0.0));
        let bad = QuerySet { var: g.constant(Tensor::zeros(&[2, 3])), count: 2 };
        assert!(matches!(build_self_cost_volume(&g, &bad, &s), Err(Error::Dimension(_))));
    }

    #[test]
    fn constant_plane_aggregates_to_spatial_mean() {
        let g = Graph::<f64>::new();
        let s = features(&g, 3, 4, 5, 7);
        let v = SelfCostVolume { var: g.constant(Tensor::full(&[2, 4, 5], 0.3)), planes: 2 };
        let agg = g.value(aggregate_planes(&g, &v, &s).unwrap());
        let sv = g.value(s.var);
        for c in 0..3 {
            let mean: f64 = sv.data()[c * 20..(c + 1) * 20].iter().sum::<f64>() / 20.0;
            assert!((agg.at(&[0, c]) - mean).abs() < 1e-12);
            assert!((agg.at(&[1, c]) - mean).abs() < 1e-12);
        }
    }

    fn centers(widths: &[f64], lo: f64, hi: f64) -> Vec<f64> {
        let g = Graph::<f64>::new();
        let w = g.constant(Tensor::from_f64(vec![widths.len()], widths).unwrap());
        g.value(bins_from_widths(&g, w, lo, hi).unwrap().centers).data().to_vec()
    }

    #[test]
    fn center_examples() {
        let c = centers(&[0.5, 0.5], 0.0, 1.0);
        assert!((c[0] - 0.25).abs() < 1e-12 && (c[1] - 0.75).abs() < 1e-12);
        let c = centers(&[0.2, 0.3, 0.5], 1.0, 2.0);
        for (a, b) in c.iter().zip([1.10, 1.35, 1.75]) {
            assert!((a - b).abs() < 1e-12);
        }
        let g = Graph::<f64>::new();
        let u = g.value(uniform_bins(&g, 4, 0.0, 1.0).unwrap().centers);
        for (a, b) in u.data().iter().zip([0.125, 0.375, 0.625, 0.875]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn plane_probability_cases() {
        let g = Graph::<f64>::new();
        let v = SelfCostVolume { var: g.constant(Tensor::from_fn(&[3, 2, 2], |i| (i as f64).cos())), planes: 3 };
        let mut b = Bound::default();
        b.insert("sql.planes.weight", g.constant(Tensor::from_fn(&[1, 3, 1, 1], |i| i as f64)));
        b.insert("sql.planes.bias", g.constant(Tensor::zeros(&[1])));
        let p = g.value(plane_probabilities(&g, &b, &v).unwrap().var);
        assert!(p.data().iter().all(|&x| x == 1.0));
        let mut b = Bound::default();
        b.insert("sql.planes.weight", g.constant(Tensor::zeros(&[4, 3, 1, 1])));
        b.insert("sql.planes.bias", g.constant(Tensor::zeros(&[4])));
        let p = g.value(plane_probabilities(&g, &b, &v).unwrap().var);
        assert!(p.data().iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn combine_depth_cases() {
        let g = Graph::<f64>::new();
        let bins = uniform_bins(&g, 2, 0.0, 1.0).unwrap();
        let onehot = PlaneProbabilities { var: g.constant(Tensor::from_f64(vec![2, 1, 2], &[1., 0., 0., 1.]).unwrap()) };
        assert_eq!(g.value(combine_depth(&g, &onehot, &bins).unwrap()).data(), &[0.25, 0.75]);
        let uniform = PlaneProbabilities { var: g.constant(Tensor::full(&[2, 1, 2], 0.5)) };
        assert_eq!(g.value(combine_depth(&g, &uniform, &bins).unwrap()).data(), &[0.5, 0.5]);
        let wrong = PlaneProbabilities { var: g.constant(Tensor::full(&[3, 1, 2], 0.5)) };
        assert!(matches!(combine_depth(&g, &wrong, &bins), Err(Error::Dimension(_))));
    }

    #[test]
    fn all_mode_combinations_run() {
        for &qm in QueryMode::ALL {
            for &bm in BinMode::ALL {
                for &cm in CombineMode::ALL {
                    let cfg = ModelConfig { query_mode: qm, bin_mode: bm, combine_mode: cm, ..toy_config() };
                    cfg.validate().unwrap();
                    let g = Graph::<f64>::new();
                    let (_, b) = bind(&g, &cfg, 5);
                    let s = features(&g, cfg.channels, 8, 8, 9);
                    let out = sql_forward(&g, &b, &s, &cfg).unwrap();
                    let d = g.value(out.depth);
                    assert_eq!(d.shape(), &[8, 8]);
                    assert!(d.data().iter().all(|&x| x > cfg.d_min && x < cfg.d_max), "{qm} {bm} {cm}");
                }
            }
        }
    }

    #[test]
    fn volume_mac_count_is_exact() {
        let g = Graph::<f64>::new();
        let s = features(&g, 7, 5, 6, 1);
        let q = QuerySet { var: g.constant(Tensor::ones(&[3, 7])), count: 3 };
        let before = g.macs();
        build_self_cost_volume(&g, &q, &s).unwrap();
        assert_eq!(g.macs() - before, 3 * 5 * 6 * 7);
    }

    #[test]
    fn export_writes_one_pgm_per_plane() {
        let dir = tempfile::tempdir().unwrap();
        let v = Tensor::<f64>::from_fn(&[3, 4, 5], |i| i as f64);
        let paths = export_volume_pgm(&v, dir.path()).unwrap();
        assert_eq!(paths.len(), 3);
        let img = crate::io::read_pgm(&paths[2]).unwrap();
        assert_eq!(img.at(&[0, 0]), 0.0);
        assert_eq!(img.at(&[3, 4]), 1.0);
    }

    #[test]
    fn gradchecks_pass() {
        for spec in gradcheck_entries() {
            let r = check_spec(&spec, None, 0).unwrap();
            assert!(r.max_rel_err < 1e-4, "{}: {}", spec.name, r.max_rel_err);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn cost_volume_matches_definition(q in 1usize..=8, c in 1usize..=16, h in 1usize..=12, w in 1usize..=12, seed: u64) {
            let g = Graph::<f64>::new();
            let s = features(&g, c, h, w, seed);
            let mut rng = Xoshiro256::seed_from(seed ^ 1);
            let qv = uniform_tensor(&mut rng, &[q, c], -1.0, 1.0);
            let qs = QuerySet { var: g.constant(qv.clone()), count: q };
            let v = g.value(build_self_cost_volume(&g, &qs, &s).unwrap().var);
            let sv = g.value(s.var);
            for i in 0..q {
                for j in 0..h {
                    for k in 0..w {
                        let dot: f64 = (0..c).map(|ch| qv.at(&[i, ch]) * sv.at(&[ch, j, k])).sum();
                        prop_assert!((v.at(&[i, j, k]) - dot).abs() < 1e-5);
                    }
                }
            }
        }

        #[test]
        fn counting_conserves_mass(q in 1usize..=4, c in 1usize..=6, h in 1usize..=6, w in 1usize..=6, seed: u64) {
            let g = Graph::<f64>::new();
            let s = features(&g, c, h, w, seed);
            let mut rng = Xoshiro256::seed_from(seed ^ 2);
            let vol = g.constant(uniform_tensor(&mut rng, &[q, h, w], -3.0, 3.0));
            let sm = g.value(g.softmax(g.reshape(vol, &[q, h * w]).unwrap(), 1).unwrap());
            for i in 0..q {
                let total: f64 = sm.data()[i * h * w..(i + 1) * h * w].iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-6);
            }
            let agg = g.value(aggregate_planes(&g, &SelfCostVolume { var: vol, planes: q }, &s).unwrap());
            let sv = g.value(s.var);
            for ch in 0..c {
                let col = &sv.data()[ch * h * w..(ch + 1) * h * w];
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for i in 0..q {
                    let a = agg.at(&[i, ch]);
                    prop_assert!(a >= lo - 1e-12 && a <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn bins_partition_the_range(logits in proptest::collection::vec(-20.0f64..20.0, 1..40), lo in 0.0f64..5.0, span in 0.1f64..100.0) {
            let g = Graph::<f32>::new();
            let d = logits.len();
            let l = g.constant(Tensor::from_fn(&[d], |i| logits[i] as f32));
            let b = g.softmax(l, 0).unwrap();
            let b = g.add_scalar(g.mul_scalar(b, 1.0 - BIN_FLOOR as f32), (BIN_FLOOR / d as f64) as f32);
            let hi = lo + span;
            let bins = bins_from_widths(&g, b, lo, hi).unwrap();
            let w = g.value(bins.widths);
            let c = g.value(bins.centers);
            prop_assert!(w.data().iter().all(|&x| x > 0.0));
            let sum: f64 = w.data().iter().map(|&x| x as f64).sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            for i in 1..d {
                prop_assert!(c.data()[i] > c.data()[i - 1]);
            }
            prop_assert!(c.data().iter().all(|&x| (x as f64) > lo && (x as f64) < hi));
            let last = c.data()[d - 1] as f64 + w.data()[d - 1] as f64 / 2.0 * span;
            prop_assert!((last - hi).abs() < 1e-5 * hi.max(1.0));
        }
    }
}
