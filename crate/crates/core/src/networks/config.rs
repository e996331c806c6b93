use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sql::{BinMode, CombineMode, QueryMode};

/// Sizes and switches for DepthNet (encoder-decoder + self query layer) and
/// PoseNet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    /// feature channels `C` of the decoder output and the query layer
    pub channels: usize,
    /// patch size `p` for coarse queries
    pub patch: usize,
    /// patch size used by the fine-grained query ablation
    pub fine_patch: usize,
    /// number of queries `Q`
    pub queries: usize,
    /// number of depth bins `D`
    pub bins: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub query_mode: QueryMode,
    pub bin_mode: BinMode,
    pub combine_mode: CombineMode,
    pub transformer_layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// hidden width of the bin-regression MLP
    pub bins_hidden: usize,
    /// first PoseNet stage width; stages are (w, 2w, 4w, 4w)
    pub pose_width: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            height: 96,
            width: 128,
            channels: 32,
            patch: 8,
            fine_patch: 4,
            queries: 16,
            bins: 32,
            d_min: 0.1,
            d_max: 100.0,
            query_mode: QueryMode::Coarse,
            bin_mode: BinMode::Counting,
            combine_mode: CombineMode::Probabilistic,
            transformer_layers: 4,
            heads: 4,
            mlp_ratio: 2,
            bins_hidden: 128,
            pose_width: 16,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Feature-map size `(h, w) = (H/2, W/2)`.
    pub fn feature_size(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    /// Patch size actually used by the current query mode.
    pub fn effective_patch(&self) -> usize {
        match self.query_mode {
            QueryMode::Fine => self.fine_patch,
            _ => self.patch,
        }
    }

    /// Number of patch tokens `N = h·w / p²`.
    pub fn tokens(&self) -> usize {
        let (h, w) = self.feature_size();
        let p = self.effective_patch();
        (h / p) * (w / p)
    }

    /// Encoder stage widths `(C/2, C, 2C, 4C)`.
    pub fn encoder_widths(&self) -> [usize; 4] {
        let c = self.channels;
        [c / 2, c, 2 * c, 4 * c]
    }

    pub fn pose_widths(&self) -> [usize; 4] {
        let w = self.pose_width;
        [w, 2 * w, 4 * w, 4 * w]
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(16) || !self.width.is_multiple_of(16) {
            return fail(format!(
                "input {}x{} must be a positive multiple of 16 (four stride-2 stages)",
                self.height, self.width
            ));
        }
        if self.channels < 2 || !self.channels.is_multiple_of(2) {
            return fail(format!("channels {} must be even and at least 2", self.channels));
        }
        if self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
            return fail(format!("{} channels do not split into {} heads", self.channels, self.heads));
        }
        let (h, w) = self.feature_size();
        for (name, p) in [("patch", self.patch), ("fine_patch", self.fine_patch)] {
            if p == 0 || h % p != 0 || w % p != 0 {
                return fail(format!("{name} {p} must divide the {h}x{w} feature map"));
            }
        }
        if self.queries == 0 || self.queries > self.tokens() {
            return fail(format!(
                "queries {} must be in 1..={} (patch tokens)",
                self.queries,
                self.tokens()
            ));
        }
        if self.bins == 0 {
            return fail("bins must be positive".into());
        }
        if !(self.d_min >= 0.0 && self.d_min < self.d_max && self.d_max.is_finite()) {
            return fail(format!("depth range ({}, {}) is invalid", self.d_min, self.d_max));
        }
        if self.transformer_layers == 0 || self.mlp_ratio == 0 || self.bins_hidden == 0 || self.pose_width == 0 {
            return fail("layer counts and widths must be positive".into());
        }
        Ok(())
    }
}
