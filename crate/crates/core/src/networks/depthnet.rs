use super::params::{Bound, ParamSpec};
use super::ModelConfig;
use crate::diffcore::gradcheck::OpSpec;
use crate::diffcore::{Graph, Real, Var};
use crate::error::{Error, Result};
use crate::sql::{sql_forward, FeatureMap, SqlOutput};

pub(super) fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let [w0, w1, w2, w3] = cfg.encoder_widths();
    let c = cfg.channels;
    let mut specs = Vec::new();
    for (i, (cin, cout)) in [(3, w0), (w0, w1), (w1, w2), (w2, w3)].into_iter().enumerate() {
        specs.extend(ParamSpec::conv(&format!("depth.enc{i}"), cout, cin, 3));
    }
    for (i, (cin, cout)) in [(w3 + w2, 2 * c), (2 * c + w1, c), (c + w0, c)].into_iter().enumerate() {
        specs.extend(ParamSpec::conv(&format!("depth.dec{i}"), cout, cin, 3));
    }
    specs
}

pub(crate) fn conv<T: Real>(g: &Graph<T>, p: &Bound, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
    g.conv2d(x, p.get(&format!("{name}.weight"))?, Some(p.get(&format!("{name}.bias"))?), stride, pad)
}

pub(crate) fn check_image<T: Real>(g: &Graph<T>, image: Var, cfg: &ModelConfig) -> Result<()> {
    let s = g.shape(image);
    if s != [3, cfg.height, cfg.width] {
        return Err(Error::config(format!("image {s:?} does not match the configured [3, {}, {}]", cfg.height, cfg.width)));
    }
    Ok(())
}

/// Four stride-2 conv stages, then three nearest-upsample + skip-concat +
/// conv stages back to half resolution: `S: [C, H/2, W/2]`.
pub fn depth_encode_decode<T: Real>(g: &Graph<T>, params: &Bound, image: Var, cfg: &ModelConfig) -> Result<FeatureMap> {
    check_image(g, image, cfg)?;
    let mut skips = Vec::with_capacity(4);
    let mut x = image;
    for i in 0..4 {
        x = g.relu(conv(g, params, &format!("depth.enc{i}"), x, 2, 1)?);
        skips.push(x);
    }
    for i in 0..3 {
        let up = g.upsample_nearest2x(x)?;
        let cat = g.concat(&[up, skips[2 - i]], 0)?;
        x = conv(g, params, &format!("depth.dec{i}"), cat, 1, 1)?;
        // the last stage stays linear so features can be signed
        if i < 2 {
            x = g.relu(x);
        }
    }
    FeatureMap::new(g, x)
}

pub struct DepthOutput {
    /// `[H, W]`
    pub depth: Var,
    pub features: FeatureMap,
    pub sql: SqlOutput,
}

/// Image `[3, H, W]` to depth `[H, W]`: features, query layer, bilinear
/// upsampling from `H/2 × W/2`.
pub fn depthnet_forward<T: Real>(g: &Graph<T>, params: &Bound, image: Var, cfg: &ModelConfig) -> Result<DepthOutput> {
    let features = depth_encode_decode(g, params, image, cfg)?;
    let sql = sql_forward(g, params, &features, cfg)?;
    let low = g.reshape(sql.depth, &[1, features.height, features.width])?;
    let up = g.resize_bilinear(low, cfg.height, cfg.width)?;
    let depth = g.reshape(up, &[cfg.height, cfg.width])?;
    Ok(DepthOutput { depth, features, sql })
}

pub(super) fn gradcheck_entries() -> Vec<OpSpec> {
    vec![OpSpec::uniform("encoder_stage", vec![vec![3, 8, 8], vec![4, 3, 3, 3], vec![4]], -1.0, 1.0, |g, x| {
        Ok(g.relu(g.conv2d(x[0], x[1], Some(x[2]), 2, 1)?))
    })]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::gradcheck::{check_spec, uniform_tensor};
    use crate::diffcore::Tensor;
    use crate::networks::{init_params, ParamSet};
    use crate::rng::Xoshiro256;

    fn image(cfg: &ModelConfig, seed: u64) -> Tensor<f32> {
        let mut rng = Xoshiro256::seed_from(seed);
        uniform_tensor(&mut rng, &[3, cfg.height, cfg.width], 0.0, 1.0).cast()
    }

    #[test]
    fn feature_shape_contract() {
        let cfg = ModelConfig { height: 64, width: 64, channels: 32, patch: 8, ..Default::default() };
        let p = init_params::<f32>(&cfg, 0).unwrap();
        let g = Graph::new();
        let b = p.bind(&g, false);
        let s = depth_encode_decode(&g, &b, g.constant(image(&cfg, 1)), &cfg).unwrap();
        assert_eq!(g.shape(s.var), vec![32, 32, 32]);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_features() {
        let cfg = ModelConfig { height: 32, width: 32, channels: 8, patch: 4, queries: 4, ..Default::default() };
        let p = init_params::<f32>(&cfg, 0).unwrap();
        let g = Graph::new();
        let b = p.bind(&g, false);
        let s = depth_encode_decode(&g, &b, g.constant(Tensor::zeros(&[3, 32, 32])), &cfg).unwrap();
        assert!(g.value(s.var).data().iter().all(|&v| v == 0.0));
        let wrong = g.constant(Tensor::zeros(&[3, 32, 16]));
        assert!(matches!(depth_encode_decode(&g, &b, wrong, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn shape_sweep_and_range() {
        for (h, w) in [(64, 64), (96, 128)] {
            for p in [4, 8, 16] {
                let cfg = ModelConfig { height: h, width: w, channels: 8, patch: p, queries: 2, bins: 8, bins_hidden: 16, ..Default::default() };
                if cfg.validate().is_err() {
                    continue;
                }
                let params: ParamSet<f32> = init_params(&cfg, 3).unwrap();
                let g = Graph::new();
                let b = params.bind(&g, false);
                let out = depthnet_forward(&g, &b, g.constant(image(&cfg, p as u64)), &cfg).unwrap();
                let d = g.value(out.depth);
                assert_eq!(d.shape(), &[h, w]);
                assert!(d.data().iter().all(|&v| (v as f64) > cfg.d_min && (v as f64) < cfg.d_max));
                assert_eq!(g.shape(out.features.var), vec![8, h / 2, w / 2]);
            }
        }
    }

    #[test]
    fn forward_is_deterministic_and_per_sample() {
        let cfg = ModelConfig { height: 32, width: 32, channels: 8, patch: 4, queries: 4, bins: 8, ..Default::default() };
        let params: ParamSet<f32> = init_params(&cfg, 4).unwrap();
        let run = |img: &Tensor<f32>| {
            let g = Graph::new();
            let b = params.bind(&g, false);
            g.value(depthnet_forward(&g, &b, g.constant(img.clone()), &cfg).unwrap().depth).as_ref().clone()
        };
        let (a, b) = (image(&cfg, 1), image(&cfg, 2));
        let (da, db) = (run(&a), run(&b));
        assert_eq!(run(&a), da);
        // batch order does not leak between samples
        let batch: Vec<_> = [&b, &a].iter().map(|x| run(x)).collect();
        assert_eq!(batch, vec![db, da]);
    }

    #[test]
    fn encoder_stage_gradcheck() {
        for spec in gradcheck_entries() {
            let r = check_spec(&spec, None, 0).unwrap();
            assert!(r.max_rel_err < 1e-4, "{}", r.max_rel_err);
        }
    }
}
