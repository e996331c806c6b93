use super::depthnet::{check_image, conv};
use super::params::{Bound, Init, ParamSpec};
use super::ModelConfig;
use crate::diffcore::gradcheck::{uniform_tensor, OpSpec};
use crate::diffcore::{Graph, Real, Tensor, Var};
use crate::error::Result;
use crate::geometry::{warp_frame, CameraIntrinsics, PoseVars, POSE_SCALE};

pub(super) fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let [w0, w1, w2, w3] = cfg.pose_widths();
    let mut specs = Vec::new();
    for (i, (cin, cout)) in [(6, w0), (w0, w1), (w1, w2), (w2, w3)].into_iter().enumerate() {
        specs.extend(ParamSpec::conv(&format!("pose.conv{i}"), cout, cin, 3));
    }
    specs.push(ParamSpec::new("pose.out.weight", &[6, w3, 1, 1], Init::Zeros));
    specs.push(ParamSpec::new("pose.out.bias", &[6], Init::Zeros));
    specs
}

/// Global-average-pooled pose head output `[6]` before scaling.
fn pose_head<T: Real>(g: &Graph<T>, params: &Bound, features: Var) -> Result<Var> {
    let y = conv(g, params, "pose.out", features, 1, 0)?;
    let s = g.shape(y);
    let flat = g.reshape(y, &[6, s[1] * s[2]])?;
    g.mean_axis(flat, 1)
}

/// Relative pose `T_{t→ref}` from the channel-concatenated pair.
pub fn posenet_forward<T: Real>(
    g: &Graph<T>,
    params: &Bound,
    target: Var,
    reference: Var,
    cfg: &ModelConfig,
) -> Result<PoseVars> {
    check_image(g, target, cfg)?;
    check_image(g, reference, cfg)?;
    let mut x = g.concat(&[target, reference], 0)?;
    for i in 0..4 {
        x = g.relu(conv(g, params, &format!("pose.conv{i}"), x, 2, 1)?);
    }
    let six = g.mul_scalar(pose_head(g, params, x)?, T::c(POSE_SCALE));
    PoseVars::from_six(g, six)
}

pub(super) fn gradcheck_entries() -> Vec<OpSpec> {
    // warp of a fixed textured frame under the pose predicted from fixed
    // pooled features; checked w.r.t. the pose head
    let k = CameraIntrinsics::centered(8.0, 8.0, 8, 6).unwrap();
    vec![OpSpec::new(
        "pose_head_warp",
        vec![vec![6, 8, 1, 1], vec![6]],
        |rng, sh| vec![uniform_tensor(rng, &sh[0], -1.0, 1.0), uniform_tensor(rng, &sh[1], -1.0, 1.0)],
        move |g, x| {
            let mut params = Bound::default();
            params.insert("pose.out.weight", x[0]);
            params.insert("pose.out.bias", x[1]);
            let feats = g.constant(Tensor::from_fn(&[8, 2, 3], |i| ((i as f64) * 0.7).sin().abs()));
            let six = g.mul_scalar(pose_head(g, &params, feats)?, 10.0 * POSE_SCALE);
            let pose = PoseVars::from_six(g, six)?;
            let reference = g.constant(Tensor::from_fn(&[3, 6, 8], |i| 0.5 + 0.4 * ((i % 8) as f64 * 0.9 + (i / 8) as f64 * 0.5).sin()));
            let depth = g.constant(Tensor::from_fn(&[6, 8], |i| 2.0 + 0.3 * ((i as f64) * 0.4).cos()));
            let w = warp_frame(g, reference, depth, &pose, &k)?;
            Ok(g.mean(g.square(w.image)))
        },
    )]
}
