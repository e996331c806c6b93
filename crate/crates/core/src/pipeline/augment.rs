//! Per-triple augmentation: shared color jitter and a consistent
//! horizontal flip.

use rand::Rng;

use crate::diffcore::Tensor;
use crate::geometry::CameraIntrinsics;
use crate::rng::Xoshiro256;

/// Color jitter factors, each in `[1 − JITTER, 1 + JITTER]`.
pub const JITTER: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Augmentation {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub flip: bool,
}

impl Augmentation {
    pub fn identity() -> Self {
        Self { brightness: 1.0, contrast: 1.0, saturation: 1.0, flip: false }
    }

    /// Draws one augmentation; disabled parts stay at identity but the
    /// stream advances by the same amount either way.
    pub fn draw(rng: &mut Xoshiro256, jitter: bool, flip: bool) -> Self {
        let b = rng.uniform(1.0 - JITTER, 1.0 + JITTER);
        let c = rng.uniform(1.0 - JITTER, 1.0 + JITTER);
        let s = rng.uniform(1.0 - JITTER, 1.0 + JITTER);
        let f = rng.gen_bool(0.5);
        if jitter {
            Self { brightness: b, contrast: c, saturation: s, flip: flip && f }
        } else {
            Self { flip: flip && f, ..Self::identity() }
        }
    }

    pub fn has_jitter(&self) -> bool {
        (self.brightness, self.contrast, self.saturation) != (1.0, 1.0, 1.0)
    }
}

/// Mirrors a `[C, H, W]` or `[H, W]` tensor along its last axis.
pub fn flip_horizontal(t: &Tensor<f32>) -> Tensor<f32> {
    let w = *t.shape().last().expect("non-scalar");
    Tensor::from_fn(t.shape(), |i| {
        let (row, x) = (i / w, i % w);
        t.data()[row * w + (w - 1 - x)]
    })
}

/// Brightness, then contrast about the mean gray level, then saturation
/// about per-pixel gray; clamped to `[0, 1]`.
pub fn color_jitter(img: &Tensor<f32>, aug: &Augmentation) -> Tensor<f32> {
    let n = img.shape()[1] * img.shape()[2];
    let d = img.data();
    let gray = |i: usize, v: &[f64]| 0.299 * v[i] + 0.587 * v[n + i] + 0.114 * v[2 * n + i];
    let mut v: Vec<f64> = d.iter().map(|&x| x as f64 * aug.brightness).collect();
    let mean = (0..n).map(|i| gray(i, &v)).sum::<f64>() / n as f64;
    for x in v.iter_mut() {
        *x = (*x - mean) * aug.contrast + mean;
    }
    let grays: Vec<f64> = (0..n).map(|i| gray(i, &v)).collect();
    for c in 0..3 {
        for i in 0..n {
            let x = &mut v[c * n + i];
            *x = grays[i] + (*x - grays[i]) * aug.saturation;
        }
    }
    Tensor::from_fn(img.shape(), |i| v[i].clamp(0.0, 1.0) as f32)
}

/// Frames for the loss (flipped only) and for the networks (flipped and
/// jittered), plus the matching intrinsics.
pub fn apply(frames: &[Tensor<f32>; 3], k: &CameraIntrinsics, aug: &Augmentation) -> ([Tensor<f32>; 3], [Tensor<f32>; 3], CameraIntrinsics) {
    let (loss, k) = if aug.flip {
        (frames.clone().map(|f| flip_horizontal(&f)), k.flipped_horizontal())
    } else {
        (frames.clone(), *k)
    };
    let net = if aug.has_jitter() { loss.clone().map(|f| color_jitter(&f, aug)) } else { loss.clone() };
    (loss, net, k)
}
