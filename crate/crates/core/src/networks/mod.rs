//! DepthNet (convolutional encoder-decoder followed by the self query layer)
//! and PoseNet.

mod config;
mod depthnet;
pub mod params;
mod posenet;

pub use config::ModelConfig;
pub use depthnet::{depth_encode_decode, depthnet_forward, DepthOutput};
pub use params::{Bound, Init, ParamSet, ParamSpec};
pub use posenet::posenet_forward;

use crate::diffcore::gradcheck::OpSpec;
use crate::diffcore::Real;
use crate::error::Result;

/// Every DepthNet and PoseNet parameter for `cfg`.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut specs = depthnet::param_specs(cfg);
    specs.extend(crate::sql::param_specs(cfg));
    specs.extend(posenet::param_specs(cfg));
    specs
}

/// Fan-in scaled uniform weights, zero biases, zero pose head.
pub fn init_params<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<ParamSet<T>> {
    cfg.validate()?;
    ParamSet::from_specs(&param_specs(cfg), seed)
}

pub(crate) fn gradcheck_entries() -> Vec<OpSpec> {
    let mut v = depthnet::gradcheck_entries();
    v.extend(posenet::gradcheck_entries());
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = ModelConfig::default();
        let a = init_params::<f32>(&cfg, 1).unwrap();
        let b = init_params::<f32>(&cfg, 1).unwrap();
        let c = init_params::<f32>(&cfg, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.get("depth.enc0.weight").unwrap(), c.get("depth.enc0.weight").unwrap());
        assert!(a.get("pose.out.weight").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(a.get("depth.enc0.bias").unwrap().data().iter().all(|&v| v == 0.0));
        a.check_specs(&param_specs(&cfg)).unwrap();
    }

    #[test]
    fn names_are_unique() {
        for qm in crate::sql::QueryMode::ALL {
            let cfg = ModelConfig { query_mode: *qm, ..Default::default() };
            let specs = param_specs(&cfg);
            let mut names: Vec<_> = specs.iter().map(|s| &s.name).collect();
            names.sort();
            names.dedup();
            assert_eq!(names.len(), specs.len());
        }
    }
}
