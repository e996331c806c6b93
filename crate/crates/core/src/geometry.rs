//! Pinhole camera, rigid poses, and differentiable view synthesis.
//!
//! Point clouds on the graph are laid out as `[N, 3]` (one row per pixel in
//! row-major pixel order); pose variables map points from the target camera
//! into the reference camera: `p' = R p + t`.

use nalgebra::{Matrix3, Vector3};

use crate::diffcore::gradcheck::{uniform_tensor, OpSpec};
use crate::diffcore::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

/// Depth below which projective division is clamped; such points are
/// reported as out of view.
pub const Z_CLAMP: f64 = 1e-3;

/// Raw pose-network outputs are multiplied by this before becoming an
/// axis-angle rotation and translation.
pub const POSE_SCALE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Principal point at the image centre.
    pub fn centered(fx: f64, fy: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(fx, fy, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid camera intrinsics {self:?}")))
        }
    }

    /// Row-major 3×3 matrix `K`.
    pub fn matrix(&self) -> [f64; 9] {
        [self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0]
    }

    pub fn from_matrix(k: &[f64; 9], width: usize, height: usize) -> Result<Self> {
        Self::new(k[0], k[4], k[2], k[5], width, height)
    }

    /// Intrinsics of the horizontally mirrored image.
    pub fn flipped_horizontal(&self) -> Self {
        Self { cx: self.width as f64 - 1.0 - self.cx, ..*self }
    }

    /// Unit-depth ray through pixel `(u, v)`.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// Rotation plus translation, `p ↦ R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `RᵀR = I` and `det R = 1` within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        ortho <= tol && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    pub fn rotation_angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    /// Row-major 3×4 `[R | t]`.
    pub fn to_rows(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 4 + c] = self.rotation[(r, c)];
            }
            out[r * 4 + 3] = self.translation[r];
        }
        out
    }

    pub fn from_rows(rows: &[f64; 12]) -> Self {
        let rotation = Matrix3::from_fn(|r, c| rows[r * 4 + c]);
        let translation = Vector3::new(rows[3], rows[7], rows[11]);
        Self { rotation, translation }
    }
}

/// Rodrigues' formula; continuous through `θ → 0`.
pub fn se3_from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> RigidTransform {
    let r = rodrigues_value([axis_angle.x, axis_angle.y, axis_angle.z]);
    RigidTransform { rotation: Matrix3::from_row_slice(&r), translation }
}

fn skew<T: Real>(w: [T; 3]) -> [T; 9] {
    let z = T::zero();
    [z, -w[2], w[1], w[2], z, -w[0], -w[1], w[0], z]
}

fn mat3_mul<T: Real>(a: &[T; 9], b: &[T; 9]) -> [T; 9] {
    let mut out = [T::zero(); 9];
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] = (0..3).map(|k| a[r * 3 + k] * b[k * 3 + c]).sum();
        }
    }
    out
}

/// `(A, B, A'/θ, B'/θ)` for `A = sin θ/θ`, `B = (1 − cos θ)/θ²`, switching to
/// Taylor series near zero.
fn rodrigues_coeffs<T: Real>(theta: T) -> (T, T, T, T) {
    let threshold = T::c(2.0) * T::epsilon().powf(T::c(1.0 / 6.0));
    if theta < threshold {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        let a = T::one() - t2 / T::c(6.0) + t4 / T::c(120.0);
        let b = T::c(0.5) - t2 / T::c(24.0) + t4 / T::c(720.0);
        let a1 = T::c(-1.0 / 3.0) + t2 / T::c(30.0) - t4 / T::c(840.0);
        let b1 = T::c(-1.0 / 12.0) + t2 / T::c(180.0) - t4 / T::c(6720.0);
        (a, b, a1, b1)
    } else {
        let (s, c) = (theta.sin(), theta.cos());
        let t2 = theta * theta;
        let a = s / theta;
        let b = (T::one() - c) / t2;
        let a1 = (theta * c - s) / (t2 * theta);
        let b1 = (theta * s - T::c(2.0) * (T::one() - c)) / (t2 * t2);
        (a, b, a1, b1)
    }
}

fn rodrigues_value<T: Real>(w: [T; 3]) -> [T; 9] {
    let theta = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    let (a, b, _, _) = rodrigues_coeffs(theta);
    let k = skew(w);
    let k2 = mat3_mul(&k, &k);
    let mut r = [T::zero(); 9];
    for i in 0..9 {
        r[i] = a * k[i] + b * k2[i];
    }
    r[0] += T::one();
    r[4] += T::one();
    r[8] += T::one();
    r
}

/// Graph version of pose construction.
#[derive(Clone, Copy, Debug)]
pub struct PoseVars {
    /// `[3, 3]`
    pub rotation: Var,
    /// `[3]`
    pub translation: Var,
}

impl PoseVars {
    pub fn constant<T: Real>(g: &Graph<T>, pose: &RigidTransform) -> Self {
        let r: Vec<T> = pose.to_rows().chunks(4).flat_map(|row| row[..3].to_vec()).map(T::c).collect();
        let t: Vec<T> = pose.translation.iter().map(|&v| T::c(v)).collect();
        Self {
            rotation: g.constant(Tensor::new(vec![3, 3], r).unwrap()),
            translation: g.constant(Tensor::new(vec![3], t).unwrap()),
        }
    }

    pub fn value<T: Real>(&self, g: &Graph<T>) -> RigidTransform {
        let r = g.value(self.rotation);
        let t = g.value(self.translation);
        RigidTransform {
            rotation: Matrix3::from_fn(|i, j| r.data()[i * 3 + j].f64()),
            translation: Vector3::new(t.data()[0].f64(), t.data()[1].f64(), t.data()[2].f64()),
        }
    }

    /// `(Rᵀ, −Rᵀt)`, differentiable.
    pub fn inverse<T: Real>(&self, g: &Graph<T>) -> Result<Self> {
        let rt = g.transpose(self.rotation)?;
        let t = g.reshape(self.translation, &[3, 1])?;
        let t = g.mul_scalar(g.matmul(rt, t)?, T::c(-1.0));
        Ok(Self { rotation: rt, translation: g.reshape(t, &[3])? })
    }

    /// From a `[6]` vector `(ω, t)` already in final units.
    pub fn from_six<T: Real>(g: &Graph<T>, six: Var) -> Result<Self> {
        if g.shape(six) != [6] {
            return Err(Error::dim(format!("pose vector must be [6], got {:?}", g.shape(six))));
        }
        let omega = g.narrow(six, 0, 0, 3)?;
        Ok(Self { rotation: rodrigues(g, omega)?, translation: g.narrow(six, 0, 3, 3)? })
    }
}

/// Differentiable Rodrigues map `ω: [3] -> R: [3, 3]`.
pub fn rodrigues<T: Real>(g: &Graph<T>, omega: Var) -> Result<Var> {
    let v = g.value(omega);
    if v.shape() != [3] {
        return Err(Error::dim(format!("axis-angle must be [3], got {:?}", v.shape())));
    }
    let w = [v.data()[0], v.data()[1], v.data()[2]];
    let out = Tensor::new(vec![3, 3], rodrigues_value(w).to_vec())?;
    Ok(g.push_op(out, &[omega], move |grad, _, _| {
        let theta = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
        let (a, b, a1, b1) = rodrigues_coeffs(theta);
        let k = skew(w);
        let k2 = mat3_mul(&k, &k);
        let gd = grad.data();
        let mut gw = [T::zero(); 3];
        for (m, gm) in gw.iter_mut().enumerate() {
            let mut e = [T::zero(); 3];
            e[m] = T::one();
            let km = skew(e);
            let kmk = mat3_mul(&km, &k);
            let kkm = mat3_mul(&k, &km);
            let mut acc = T::zero();
            for i in 0..9 {
                let d = a1 * w[m] * k[i] + a * km[i] + b1 * w[m] * k2[i] + b * (kmk[i] + kkm[i]);
                acc += gd[i] * d;
            }
            *gm = acc;
        }
        vec![Some(Tensor::from_parts(vec![3], gw.to_vec()))]
    }))
}

fn check_depth<T: Real>(depth: &Tensor<T>) -> Result<()> {
    if depth.data().iter().any(|&d| !(d > T::zero())) {
        return Err(Error::Domain("depth must be positive everywhere".into()));
    }
    Ok(())
}

/// Unit-depth rays for every pixel, as a `[3, H·W]` tensor.
fn ray_grid<T: Real>(k: &CameraIntrinsics, h: usize, w: usize) -> Tensor<T> {
    let n = h * w;
    Tensor::from_fn(&[3, n], |i| {
        let (row, p) = (i / n, i % n);
        let (u, v) = ((p % w) as f64, (p / w) as f64);
        T::c(match row {
            0 => (u - k.cx) / k.fx,
            1 => (v - k.cy) / k.fy,
            _ => 1.0,
        })
    })
}

/// Lifts a `[H, W]` depth map to camera-frame points `[H·W, 3]`:
/// `d(u, v) · ((u − cx)/fx, (v − cy)/fy, 1)`.
pub fn backproject<T: Real>(g: &Graph<T>, depth: Var, k: &CameraIntrinsics) -> Result<Var> {
    let dv = g.value(depth);
    if dv.ndim() != 2 {
        return Err(Error::dim(format!("depth must be [H, W], got {:?}", dv.shape())));
    }
    check_depth(&dv)?;
    let (h, w) = (dv.shape()[0], dv.shape()[1]);
    let rays = g.constant(ray_grid(k, h, w));
    let flat = g.reshape(depth, &[h * w])?;
    let pts = g.mul(rays, flat)?;
    g.transpose(pts)
}

/// `p R ᵀ + t` for points `[N, 3]`.
pub fn transform_points<T: Real>(g: &Graph<T>, points: Var, pose: &PoseVars) -> Result<Var> {
    let rt = g.transpose(pose.rotation)?;
    let rotated = g.matmul(points, rt)?;
    g.add(rotated, pose.translation)
}

/// Continuous pixel coordinates of projected points.
pub struct Projection<T: Real> {
    /// `[H, W]` column coordinate
    pub u: Var,
    /// `[H, W]` row coordinate
    pub v: Var,
    /// false where `Z ≤ Z_CLAMP` (behind or at the camera)
    pub in_front: Vec<bool>,
    _marker: std::marker::PhantomData<T>,
}

/// Projects `[H·W, 3]` points with `(fx X/Z + cx, fy Y/Z + cy)`; `Z` is clamped
/// below at [`Z_CLAMP`].
pub fn project<T: Real>(
    g: &Graph<T>,
    points: Var,
    k: &CameraIntrinsics,
    h: usize,
    w: usize,
) -> Result<Projection<T>> {
    if g.shape(points) != [h * w, 3] {
        return Err(Error::dim(format!("expected [{}, 3] points, got {:?}", h * w, g.shape(points))));
    }
    let x = g.narrow(points, 1, 0, 1)?;
    let y = g.narrow(points, 1, 1, 1)?;
    let z = g.narrow(points, 1, 2, 1)?;
    let in_front = g.value(z).data().iter().map(|&zv| zv > T::c(Z_CLAMP)).collect();
    let zc = g.clamp_min(z, T::c(Z_CLAMP));
    let u = g.add_scalar(g.mul_scalar(g.div(x, zc)?, T::c(k.fx)), T::c(k.cx));
    let v = g.add_scalar(g.mul_scalar(g.div(y, zc)?, T::c(k.fy)), T::c(k.cy));
    Ok(Projection {
        u: g.reshape(u, &[h, w])?,
        v: g.reshape(v, &[h, w])?,
        in_front,
        _marker: std::marker::PhantomData,
    })
}

/// Result of warping a reference frame into the target view.
pub struct Warped<T: Real> {
    /// `[C, H, W]`
    pub image: Var,
    /// 1 where the sample lies inside the reference image and in front of
    /// the camera, 0 elsewhere; `[H, W]`.
    pub mask: Tensor<T>,
}

/// Synthesizes the target view from `reference` using target depth and the
/// target→reference pose.
pub fn warp_frame<T: Real>(
    g: &Graph<T>,
    reference: Var,
    depth: Var,
    pose: &PoseVars,
    k: &CameraIntrinsics,
) -> Result<Warped<T>> {
    let ds = g.shape(depth);
    let rs = g.shape(reference);
    if ds.len() != 2 || rs.len() != 3 || rs[1..] != ds[..] {
        return Err(Error::dim(format!("reference {rs:?} and depth {ds:?} disagree")));
    }
    let (h, w) = (ds[0], ds[1]);
    let pts = backproject(g, depth, k)?;
    let moved = transform_points(g, pts, pose)?;
    let proj = project(g, moved, k, h, w)?;
    let (uv, vv) = (g.value(proj.u), g.value(proj.v));
    // sub-millipixel slack so round-off at the border does not flip the mask
    let tol = T::c(1e-3);
    let (wmax, hmax) = (T::c((w - 1) as f64) + tol, T::c((h - 1) as f64) + tol);
    let mask = Tensor::from_fn(&[h, w], |i| {
        let (u, v) = (uv.data()[i], vv.data()[i]);
        let inside = u >= -tol && u <= wmax && v >= -tol && v <= hmax;
        if inside && proj.in_front[i] {
            T::one()
        } else {
            T::zero()
        }
    });
    let image = g.bilinear_sample(reference, proj.u, proj.v)?;
    Ok(Warped { image, mask })
}

/// Eager pinhole projection; `None` when the point is not in front of the
/// camera.
pub fn project_point(k: &CameraIntrinsics, p: &Vector3<f64>) -> Option<(f64, f64)> {
    (p.z > Z_CLAMP).then(|| (k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

pub(crate) fn gradcheck_entries() -> Vec<OpSpec> {
    let k = CameraIntrinsics::new(6.0, 5.0, 2.6, 1.7, 6, 5).unwrap();
    vec![
        OpSpec::uniform("rodrigues", vec![vec![3]], -1.0, 1.0, |g, x| rodrigues(g, x[0])),
        OpSpec::uniform("rodrigues_small_angle", vec![vec![3]], -1e-3, 1e-3, |g, x| rodrigues(g, x[0])),
        OpSpec::uniform("backproject", vec![vec![5, 6]], 1.0, 4.0, move |g, x| backproject(g, x[0], &k)),
        OpSpec::new(
            "project",
            vec![vec![30, 3]],
            |rng, sh| {
                let mut p = uniform_tensor(rng, &sh[0], -1.0, 1.0);
                for r in 0..sh[0][0] {
                    let z = rng.uniform(1.0, 3.0);
                    p.data_mut()[r * 3 + 2] = z;
                }
                vec![p]
            },
            move |g, x| {
                let pr = project(g, x[0], &k, 5, 6)?;
                g.stack(&[pr.u, pr.v])
            },
        ),
        OpSpec::new(
            "warp_frame",
            vec![vec![3, 5, 6], vec![5, 6], vec![6]],
            |rng, sh| {
                vec![
                    uniform_tensor(rng, &sh[0], 0.0, 1.0),
                    uniform_tensor(rng, &sh[1], 2.0, 4.0),
                    uniform_tensor(rng, &sh[2], -0.05, 0.05),
                ]
            },
            move |g, x| {
                let pose = PoseVars::from_six(g, x[2])?;
                Ok(warp_frame(g, x[0], x[1], &pose, &k)?.image)
            },
        ),
    ]
}
