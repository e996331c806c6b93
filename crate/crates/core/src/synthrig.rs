//! Deterministic ray-cast scenes: a textured fronto-parallel background
//! plane and a few axis-aligned textured boxes under fixed Lambertian
//! lighting, rendered along smooth camera trajectories with exact depth and
//! relative poses.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{project_point, se3_from_axis_angle, CameraIntrinsics, RigidTransform};
use crate::rng::Xoshiro256;

/// Frames rendered per dataset scene; each scene yields `FRAMES_PER_SCENE - 2`
/// triples.
pub const FRAMES_PER_SCENE: usize = 3;

const LIGHT: [f64; 3] = [0.35, -0.45, -0.82];
const AMBIENT: f64 = 0.35;

/// Smooth 2-D value noise: two octaves on hashed lattices with quintic
/// interpolation. `scale` is the coarse lattice spacing in scene units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub seed: u64,
    pub scale: f64,
    pub color: [f64; 3],
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let mut h = seed ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h = h.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (tx, ty) = (fade(x - fx), fade(y - fy));
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + (b - a) * tx;
    let bot = c + (d - c) * tx;
    top + (bot - top) * ty
}

impl Texture {
    fn random(rng: &mut Xoshiro256) -> Self {
        let seed = rand_core::RngCore::next_u64(rng);
        let scale = rng.uniform(0.7, 1.1);
        let color = [rng.uniform(0.35, 1.0), rng.uniform(0.35, 1.0), rng.uniform(0.35, 1.0)];
        Self { seed, scale, color }
    }

    /// Intensity in `[0, 1]` at surface coordinates `(a, b)`.
    pub fn intensity(&self, a: f64, b: f64) -> f64 {
        let n1 = value_noise(self.seed, a / self.scale, b / self.scale);
        let n2 = value_noise(self.seed ^ 0xA5A5, 2.0 * a / self.scale + 17.3, 2.0 * b / self.scale - 5.1);
        0.2 + 0.8 * (0.65 * n1 + 0.35 * n2)
    }

    fn rgb(&self, a: f64, b: f64) -> [f64; 3] {
        let t = self.intensity(a, b);
        [self.color[0] * t, self.color[1] * t, self.color[2] * t]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBox {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub texture: Texture,
}

/// Background plane `z = plane_depth` (world frame) plus boxes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub plane_depth: f64,
    pub plane_texture: Texture,
    pub boxes: Vec<SceneBox>,
}

/// Deterministic scene: plane at depth 8–12, 0–4 boxes at depth 3–7 inside
/// a ±0.4 (x) / ±0.3 (y) view cone.
pub fn make_default_scene(seed: u64) -> Scene {
    let mut rng = Xoshiro256::derived(seed, 0x7363_656e);
    let plane_depth = rng.uniform(8.0, 12.0);
    let plane_texture = Texture::random(&mut rng);
    let n = (rng.uniform(0.0, 5.0) as usize).min(4);
    let boxes = (0..n)
        .map(|_| {
            let z = rng.uniform(3.0, 7.0);
            let center = [rng.uniform(-0.4, 0.4) * z, rng.uniform(-0.3, 0.3) * z, z];
            let size = [rng.uniform(0.6, 2.0), rng.uniform(0.6, 2.0), rng.uniform(0.6, 2.0)];
            SceneBox { center, size, texture: Texture::random(&mut rng) }
        })
        .collect();
    Scene { plane_depth, plane_texture, boxes }
}

impl Scene {
    /// Nearest and farthest surface depth along the world z axis.
    pub fn depth_bounds(&self) -> (f64, f64) {
        let near = self.boxes.iter().map(|b| b.center[2] - b.size[2] / 2.0).fold(self.plane_depth, f64::min);
        (near, self.plane_depth)
    }
}

struct Hit {
    t: f64,
    color: [f64; 3],
}

fn shade(normal: [f64; 3]) -> f64 {
    let l = Vector3::from(LIGHT).normalize();
    let n = Vector3::from(normal);
    AMBIENT + (1.0 - AMBIENT) * n.dot(&l).max(0.0)
}

fn intersect(scene: &Scene, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    if d.z > 1e-12 {
        let t = (scene.plane_depth - o.z) / d.z;
        if t > 0.0 {
            let p = o + d * t;
            let s = shade([0.0, 0.0, -1.0]);
            let c = scene.plane_texture.rgb(p.x, p.y);
            best = Some(Hit { t, color: c.map(|v| v * s) });
        }
    }
    for b in &scene.boxes {
        // slab test, recording the entry axis
        let (mut t0, mut t1, mut axis, mut sign) = (f64::NEG_INFINITY, f64::INFINITY, 0usize, 1.0);
        let mut miss = false;
        for a in 0..3 {
            let lo = b.center[a] - b.size[a] / 2.0;
            let hi = b.center[a] + b.size[a] / 2.0;
            if d[a].abs() < 1e-12 {
                if o[a] < lo || o[a] > hi {
                    miss = true;
                    break;
                }
                continue;
            }
            let (mut ta, mut tb) = ((lo - o[a]) / d[a], (hi - o[a]) / d[a]);
            let mut s = -1.0;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
                s = 1.0;
            }
            if ta > t0 {
                t0 = ta;
                axis = a;
                sign = s;
            }
            t1 = t1.min(tb);
        }
        if miss || t0 > t1 || t0 <= 0.0 {
            continue;
        }
        if best.as_ref().is_none_or(|h| t0 < h.t) {
            let p = o + d * t0;
            let mut normal = [0.0; 3];
            normal[axis] = sign;
            let (u, v) = match axis {
                0 => (p.y, p.z),
                1 => (p.x, p.z),
                _ => (p.x, p.y),
            };
            let s = shade(normal);
            best = Some(Hit { t: t0, color: b.texture.rgb(u, v).map(|c| c * s) });
        }
    }
    best
}

/// Renders `[3, H, W]` color and `[H, W]` camera-z depth from camera pose
/// `camera_to_world`.
pub fn render_scene(
    scene: &Scene,
    camera_to_world: &RigidTransform,
    k: &CameraIntrinsics,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let (h, w) = (k.height, k.width);
    let mut image = Tensor::zeros(&[3, h, w]);
    let mut depth = Tensor::zeros(&[h, w]);
    let o = camera_to_world.translation;
    for y in 0..h {
        for x in 0..w {
            // camera ray with unit z, so the hit parameter is the camera depth
            let dc = k.ray(x as f64, y as f64);
            let d = camera_to_world.rotation * dc;
            let hit = intersect(scene, &o, &d).ok_or_else(|| {
                Error::Validation(format!("camera ray at pixel ({x}, {y}) misses the scene"))
            })?;
            depth.data_mut()[y * w + x] = hit.t as f32;
            for c in 0..3 {
                image.data_mut()[c * h * w + y * w + x] = hit.color[c].clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok((image, depth))
}

/// Constant-velocity camera motion with a slow sinusoidal wobble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    /// translation per frame, camera frame
    pub velocity: [f64; 3],
    /// axis-angle rotation per frame (radians)
    pub angular_velocity: [f64; 3],
    /// relative amplitude of the wobble on top of the constant velocity
    pub wobble: f64,
}

impl TrajectorySpec {
    pub fn stationary() -> Self {
        Self { velocity: [0.0; 3], angular_velocity: [0.0; 3], wobble: 0.0 }
    }

    /// Random smooth trajectory: per-step translation 0.8–1.8% of
    /// `mean_depth`, mostly lateral, rotation at most 1°.
    pub fn random(seed: u64, mean_depth: f64) -> Self {
        let mut rng = Xoshiro256::derived(seed, 0x7472_616a);
        let dir = Vector3::new(
            rng.uniform(0.5, 1.0) * if rng.uniform(0.0, 1.0) < 0.5 { -1.0 } else { 1.0 },
            rng.uniform(-0.3, 0.3),
            rng.uniform(-0.4, 0.8),
        )
        .normalize();
        let v = dir * rng.uniform(0.008, 0.018) * mean_depth;
        let max_rot = 1f64.to_radians();
        let rot = [rng.uniform(-0.3, 0.3) * max_rot, rng.uniform(-1.0, 1.0) * max_rot * 0.7, rng.uniform(-0.3, 0.3) * max_rot];
        Self { velocity: [v.x, v.y, v.z], angular_velocity: rot, wobble: 0.1 }
    }

    fn step(&self, i: usize) -> RigidTransform {
        let f = 1.0 + self.wobble * (0.7 * i as f64).sin();
        se3_from_axis_angle(Vector3::from(self.angular_velocity) * f, Vector3::from(self.velocity) * f)
    }

    /// Camera-to-world poses of `count` frames, the first at the origin.
    pub fn poses(&self, count: usize) -> Vec<RigidTransform> {
        let mut out = Vec::with_capacity(count);
        let mut cur = RigidTransform::identity();
        for i in 0..count {
            out.push(cur);
            cur = cur.compose(&self.step(i));
        }
        out
    }
}

/// One training/evaluation example around target frame `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    /// `[I_{t-1}, I_t, I_{t+1}]`, each `[3, H, W]`
    pub frames: [Tensor<f32>; 3],
    /// depth of `I_t`, `[H, W]`
    pub depth: Tensor<f32>,
    /// `T_{t→t-1}`, `T_{t→t+1}`
    pub poses: [RigidTransform; 2],
    pub k: CameraIntrinsics,
}

impl SceneSample {
    pub fn target(&self) -> &Tensor<f32> {
        &self.frames[1]
    }

    pub fn references(&self) -> [&Tensor<f32>; 2] {
        [&self.frames[0], &self.frames[2]]
    }
}

/// Renders `count` frames along `traj` and returns the `count - 2` sliding
/// triples.
pub fn generate_sequence(
    scene: &Scene,
    traj: &TrajectorySpec,
    k: &CameraIntrinsics,
    count: usize,
) -> Result<Vec<SceneSample>> {
    if count < 3 {
        return Err(Error::Validation(format!("need at least 3 frames, got {count}")));
    }
    let poses = traj.poses(count);
    let mut renders = Vec::with_capacity(count);
    for p in &poses {
        renders.push(render_scene(scene, p, k)?);
    }
    let mean_depth = renders[0].1.mean() as f64;
    for i in 0..count - 1 {
        let rel = poses[i].inverse().compose(&poses[i + 1]);
        if rel.translation.norm() > 0.02 * mean_depth + 1e-12 || rel.rotation_angle() > 2f64.to_radians() + 1e-12 {
            return Err(Error::Validation(format!(
                "trajectory step {i} moves {:.4} units / {:.3} deg; limits are {:.4} units / 2 deg",
                rel.translation.norm(),
                rel.rotation_angle().to_degrees(),
                0.02 * mean_depth
            )));
        }
    }
    let (near, far) = scene.depth_bounds();
    for (i, (_, d)) in renders.iter().enumerate() {
        let lo = d.data().iter().copied().fold(f32::INFINITY, f32::min) as f64;
        if !(lo > 1.0) || !d.is_finite() {
            return Err(Error::Validation(format!(
                "frame {i} sees a surface at depth {lo:.3} (scene spans {near:.2}..{far:.2})"
            )));
        }
    }
    Ok((1..count - 1)
        .map(|t| SceneSample {
            frames: [renders[t - 1].0.clone(), renders[t].0.clone(), renders[t + 1].0.clone()],
            depth: renders[t].1.clone(),
            poses: [poses[t - 1].inverse().compose(&poses[t]), poses[t + 1].inverse().compose(&poses[t])],
            k: *k,
        })
        .collect())
}

/// `count` triples, one per scene, from scenes derived from `seed`.
pub fn generate_dataset(seed: u64, count: usize, k: &CameraIntrinsics) -> Result<Vec<SceneSample>> {
    let per = FRAMES_PER_SCENE - 2;
    let mut out = Vec::with_capacity(count);
    let mut scene_idx = 0u64;
    while out.len() < count {
        let scene_seed = seed.wrapping_mul(1_000_003).wrapping_add(scene_idx);
        let scene = make_default_scene(scene_seed);
        let (near, far) = scene.depth_bounds();
        let traj = TrajectorySpec::random(scene_seed, 0.5 * (near + far));
        let samples = generate_sequence(&scene, &traj, k, FRAMES_PER_SCENE)?;
        out.extend(samples.into_iter().take(per.min(count - out.len())));
        scene_idx += 1;
    }
    Ok(out)
}

/// Pixels of the target that are visible in reference `which` (0 = t−1,
/// 1 = t+1), away from depth discontinuities, with the rendered reference
/// color resampled there: `(mask, warped)`.
pub fn covisible_warp(sample: &SceneSample, reference_depth: &Tensor<f32>, which: usize) -> (Vec<bool>, Tensor<f32>) {
    let k = &sample.k;
    let (h, w) = (k.height, k.width);
    let refimg = &sample.frames[if which == 0 { 0 } else { 2 }];
    let pose = &sample.poses[which];
    let mut mask = vec![false; h * w];
    let mut warped = Tensor::zeros(&[3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let d = sample.depth.data()[y * w + x] as f64;
            let p = pose.apply(&(k.ray(x as f64, y as f64) * d));
            let Some((u, v)) = project_point(k, &p) else { continue };
            if u < 0.0 || v < 0.0 || u > (w - 1) as f64 || v > (h - 1) as f64 {
                continue;
            }
            let (x0, y0) = ((u.floor() as usize).min(w - 2), (v.floor() as usize).min(h - 2));
            let (fx, fy) = (u - x0 as f64, v - y0 as f64);
            let corners = [(x0, y0), (x0 + 1, y0), (x0, y0 + 1), (x0 + 1, y0 + 1)];
            let consistent = corners.iter().all(|&(cx, cy)| {
                let rd = reference_depth.data()[cy * w + cx] as f64;
                (rd - p.z).abs() < 0.02 * p.z
            });
            // the target neighbourhood must be smooth too
            let smooth = [(x.saturating_sub(1), y), ((x + 1).min(w - 1), y), (x, y.saturating_sub(1)), (x, (y + 1).min(h - 1))]
                .iter()
                .all(|&(nx, ny)| ((sample.depth.data()[ny * w + nx] as f64) - d).abs() < 0.02 * d);
            if !(consistent && smooth) {
                continue;
            }
            mask[y * w + x] = true;
            let wts = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
            for c in 0..3 {
                let val: f64 = corners
                    .iter()
                    .zip(wts)
                    .map(|(&(cx, cy), wt)| wt * refimg.data()[c * h * w + cy * w + cx] as f64)
                    .sum();
                warped.data_mut()[c * h * w + y * w + x] = val as f32;
            }
        }
    }
    (mask, warped)
}

/// Mean absolute intensity difference between the target and the warped
/// reference over co-visible pixels, relative to the mean target intensity.
pub fn photometric_residual(sample: &SceneSample, reference_depth: &Tensor<f32>, which: usize) -> (f64, usize) {
    let (mask, warped) = covisible_warp(sample, reference_depth, which);
    let n = mask.len();
    let t = sample.target();
    let (mut err, mut cnt) = (0.0, 0usize);
    for (i, &m) in mask.iter().enumerate() {
        if m {
            for c in 0..3 {
                err += (t.data()[c * n + i] - warped.data()[c * n + i]).abs() as f64;
            }
            cnt += 1;
        }
    }
    let mean_intensity = t.mean() as f64;
    if cnt == 0 {
        return (0.0, 0);
    }
    (err / (3 * cnt) as f64 / mean_intensity, cnt)
}

/// One line of `manifest.jsonl`; paths are relative to the dataset root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub frames: [String; 3],
    pub depth: String,
    /// 3×3 row-major
    pub k: [f64; 9],
    pub width: usize,
    pub height: usize,
    /// `[R|t]` 3×4 row-major for `t→t-1` and `t→t+1`
    pub poses: [[f64; 12]; 2],
}

pub const MANIFEST: &str = "manifest.jsonl";

/// Writes frames as PPM, target depth as PFM and `manifest.jsonl`.
pub fn write_dataset(samples: &[SceneSample], dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut lines = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let names = ["prev", "target", "next"].map(|n| format!("{i:05}_{n}.ppm"));
        for (img, name) in s.frames.iter().zip(&names) {
            crate::io::write_ppm(&dir.join(name), img)?;
        }
        let depth = format!("{i:05}_depth.pfm");
        crate::io::write_pfm(&dir.join(&depth), &s.depth)?;
        let rec = ManifestRecord {
            frames: names,
            depth,
            k: s.k.matrix(),
            width: s.k.width,
            height: s.k.height,
            poses: [s.poses[0].to_rows(), s.poses[1].to_rows()],
        };
        lines.push(serde_json::to_string(&rec).expect("manifest record serializes"));
    }
    let path = dir.join(MANIFEST);
    let mut body = lines.join("\n");
    body.push('\n');
    crate::io::write_file(&path, body.as_bytes())?;
    Ok(path)
}

/// Reads a dataset written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Vec<SceneSample>> {
    let path = dir.join(MANIFEST);
    let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format { field: "manifest", detail: format!("line {}: {e}", n + 1) })?;
        let k = CameraIntrinsics::from_matrix(&rec.k, rec.width, rec.height)?;
        let frames = [0, 1, 2].map(|i| crate::io::read_ppm(&dir.join(&rec.frames[i])));
        let [a, b, c] = frames;
        let frames = [a?, b?, c?];
        for f in &frames {
            if f.shape() != [3, rec.height, rec.width] {
                return Err(Error::Validation(format!("line {}: frame shape {:?} disagrees with K", n + 1, f.shape())));
            }
        }
        let depth = crate::io::read_pfm(&dir.join(&rec.depth))?;
        out.push(SceneSample {
            frames,
            depth,
            poses: [RigidTransform::from_rows(&rec.poses[0]), RigidTransform::from_rows(&rec.poses[1])],
            k,
        });
    }
    if out.is_empty() {
        return Err(Error::Validation(format!("{} lists no samples", path.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::centered(100.0, 100.0, 128, 96).unwrap()
    }

    #[test]
    fn scenes_are_seeded() {
        assert_eq!(make_default_scene(3), make_default_scene(3));
        assert_ne!(make_default_scene(3).plane_texture, make_default_scene(4).plane_texture);
        for s in 0..50 {
            let sc = make_default_scene(s);
            let (near, far) = sc.depth_bounds();
            assert!(near > 0.1 && far < 100.0);
            assert!(sc.boxes.len() <= 4);
        }
    }

    #[test]
    fn plane_only_depth_is_constant() {
        let scene = Scene { plane_depth: 5.0, plane_texture: make_default_scene(0).plane_texture, boxes: vec![] };
        let (_, d) = render_scene(&scene, &RigidTransform::identity(), &k()).unwrap();
        assert!(d.data().iter().all(|&v| (v - 5.0).abs() < 1e-5));
    }

    #[test]
    fn box_occludes_plane() {
        let scene = Scene {
            plane_depth: 10.0,
            plane_texture: make_default_scene(0).plane_texture,
            boxes: vec![SceneBox { center: [0.0, 0.0, 4.0], size: [1.0, 1.0, 1.0], texture: make_default_scene(1).plane_texture }],
        };
        let (_, d) = render_scene(&scene, &RigidTransform::identity(), &k()).unwrap();
        assert!((d.at(&[48, 64]) - 3.5).abs() < 1e-5);
        assert!((d.at(&[0, 0]) - 10.0).abs() < 1e-5);
    }

    #[test]
    fn lateral_translation_displacement() {
        let kk = k();
        let t = 0.15;
        let pose = RigidTransform::translation(Vector3::new(-t, 0.0, 0.0));
        for d in [4.0, 9.0] {
            let p = pose.apply(&(kk.ray(40.0, 30.0) * d));
            let (u, v) = project_point(&kk, &p).unwrap();
            assert!((u - 40.0 + kk.fx * t / d).abs() < 1e-9);
            assert!((v - 30.0).abs() < 1e-9);
        }
    }

    #[test]
    fn stationary_trajectory_repeats_frames() {
        let samples = generate_sequence(&make_default_scene(2), &TrajectorySpec::stationary(), &k(), 5).unwrap();
        assert_eq!(samples.len(), 3);
        for s in &samples {
            assert_eq!(s.frames[0], s.frames[1]);
            assert_eq!(s.frames[2], s.frames[1]);
        }
    }

    #[test]
    fn sliding_window_count_and_limits() {
        let scene = make_default_scene(5);
        let traj = TrajectorySpec::random(5, 8.0);
        assert_eq!(generate_sequence(&scene, &traj, &k(), 10).unwrap().len(), 8);
        let fast = TrajectorySpec { velocity: [1.0, 0.0, 0.0], ..TrajectorySpec::stationary() };
        assert!(matches!(generate_sequence(&scene, &fast, &k(), 4), Err(Error::Validation(_))));
    }

    #[test]
    fn generated_samples_are_photometrically_consistent() {
        let kk = k();
        for seed in 0..4 {
            let scene = make_default_scene(seed);
            let (near, far) = scene.depth_bounds();
            let traj = TrajectorySpec::random(seed, 0.5 * (near + far));
            let poses = traj.poses(4);
            let samples = generate_sequence(&scene, &traj, &kk, 4).unwrap();
            for (t, s) in samples.iter().enumerate() {
                let t = t + 1;
                for which in 0..2 {
                    let ref_pose = &poses[if which == 0 { t - 1 } else { t + 1 }];
                    let (_, ref_depth) = render_scene(&scene, ref_pose, &kk).unwrap();
                    let (res, n) = photometric_residual(s, &ref_depth, which);
                    assert!(n > kk.width * kk.height / 2, "seed {seed}: only {n} co-visible pixels");
                    assert!(res < 0.02, "seed {seed} frame {t} ref {which}: residual {res}");
                }
            }
        }
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let kk = CameraIntrinsics::centered(40.0, 40.0, 32, 16).unwrap();
        let samples = generate_dataset(7, 10, &kk).unwrap();
        assert_eq!(samples.len(), 10);
        write_dataset(&samples, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 10);
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.depth, b.depth);
            assert!(a.frames[1].max_abs_diff(&b.frames[1]) <= 0.5 / 255.0 + 1e-6);
            assert_eq!(a.poses, b.poses);
        }
        assert_eq!(generate_dataset(7, 10, &kk).unwrap(), samples);
    }
}
