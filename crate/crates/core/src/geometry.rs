//! Rigid-body poses, pinhole cameras, rays, and Bézier camera trajectories.
//!
//! Conventions: poses are camera-to-world, right-handed, camera looking down
//! −z with +y up in camera space. Trajectories interpolate 2–4 control poses
//! with de Casteljau's scheme; rotations use slerp between successive levels.

use crate::error::{Error, Result};
use crate::rng::{self, phase};
use nalgebra::{Matrix4, Quaternion, Unit, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    /// `(a.compose(b))` applies `b` first, then `a`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn invert(&self) -> Pose {
        let rot_inv = self.rotation.inverse();
        Pose {
            rotation: rot_inv,
            translation: -(rot_inv * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotate_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Row-major 4×4 camera-to-world matrix.
    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.to_rotation_matrix().matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Rebuild a pose from a rigid 4×4 matrix. The rotation block is
    /// re-orthonormalized through the quaternion conversion; a matrix whose
    /// rotation block is far from orthonormal is rejected.
    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Pose> {
        let r = m.fixed_view::<3, 3>(0, 0).into_owned();
        let det = r.determinant();
        if !det.is_finite() || (det - 1.0).abs() > 1e-3 {
            return Err(Error::InvalidInput(format!(
                "rotation block determinant {det}, expected ~1"
            )));
        }
        let rot = UnitQuaternion::from_matrix(&r);
        Ok(Pose {
            rotation: rot,
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        })
    }

    /// Camera position / orientation for a camera looking at `target` from
    /// `eye` with the given up hint.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Pose {
        // Camera looks down -z, so +z points away from the target.
        let z = (eye - target).normalize();
        let x = up.cross(&z).normalize();
        let y = z.cross(&x);
        let r = nalgebra::Matrix3::from_columns(&[x, y, z]);
        Pose {
            rotation: UnitQuaternion::from_matrix(&r),
            translation: eye,
        }
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidInput("focal lengths must be positive".into()));
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64)
            || !(0.0 <= self.cy && self.cy < self.height as f64)
        {
            return Err(Error::InvalidInput(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(())
    }

    /// Direction through the center of pixel (x, y) in camera space
    /// (unnormalized, z = −1 plane).
    pub fn pixel_dir(&self, x: usize, y: usize) -> Vector3<f64> {
        Vector3::new(
            (x as f64 + 0.5 - self.cx) / self.fx,
            -(y as f64 + 0.5 - self.cy) / self.fy,
            -1.0,
        )
    }

    /// World-space primary ray through pixel (x, y) for a camera at `pose`.
    pub fn primary_ray(&self, pose: &Pose, x: usize, y: usize) -> Ray {
        let dir_world = pose.rotate_vector(&self.pixel_dir(x, y));
        Ray::new(pose.translation, dir_world)
    }
}

/// Half-line with unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl Ray {
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>) -> Ray {
        Ray {
            origin,
            direction: direction.normalize(),
        }
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

/// Bézier control poses for one exposure, parameterized over t ∈ [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    control_poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new(control_poses: Vec<Pose>) -> Result<Trajectory> {
        if !(2..=4).contains(&control_poses.len()) {
            return Err(Error::InvalidInput(format!(
                "trajectory needs 2..=4 control poses, got {}",
                control_poses.len()
            )));
        }
        Ok(Trajectory { control_poses })
    }

    /// Constant trajectory (static camera during the exposure).
    pub fn constant(pose: Pose) -> Trajectory {
        Trajectory {
            control_poses: vec![pose, pose],
        }
    }

    pub fn control_poses(&self) -> &[Pose] {
        &self.control_poses
    }
}

fn slerp(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, t: f64) -> UnitQuaternion<f64> {
    // Exactly equal endpoints must interpolate to themselves bit-for-bit;
    // the angle formula wobbles in the last ulp when the stored norm is not
    // exactly 1, which breaks the static-exposure bit-exactness contract.
    if a == b {
        return *a;
    }
    // try_slerp fails only for antipodal quaternions; trajectories cover
    // sub-quarter-turn perturbations, but fall back to nlerp anyway.
    a.try_slerp(b, t, 1e-12).unwrap_or_else(|| {
        let q = a.lerp(b, t);
        UnitQuaternion::from_quaternion(Quaternion::new(q.w, q.i, q.j, q.k))
    })
}

/// Pose on the trajectory at parameter `t` (de Casteljau; translations by
/// linear interpolation, rotations by slerp between successive levels).
pub fn bezier_pose(traj: &Trajectory, t: f64) -> Result<Pose> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("t={t} outside [0,1]")));
    }
    let mut level: Vec<Pose> = traj.control_poses().to_vec();
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len() - 1);
        for pair in level.windows(2) {
            // a + (b−a)t rather than (1−t)a + tb: exact when a == b, which
            // static exposures rely on.
            let a = pair[0].translation;
            let b = pair[1].translation;
            next.push(Pose {
                rotation: slerp(&pair[0].rotation, &pair[1].rotation, t),
                translation: a + (b - a) * t,
            });
        }
        level = next;
    }
    Ok(level[0])
}

/// `n ≥ 2` poses at t = i/(n−1).
pub fn sample_trajectory(traj: &Trajectory, n: usize) -> Result<Vec<Pose>> {
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 samples, got {n}"
        )));
    }
    (0..n)
        .map(|i| bezier_pose(traj, i as f64 / (n - 1) as f64))
        .collect()
}

/// Random exposure trajectory around a nominal pose.
///
/// The first control pose is pinned at `nominal` (the exposure starts at the
/// labeled viewpoint); the remaining controls perturb it by a translation
/// drawn uniformly from the ball of radius `translation_mag` and a rotation
/// about a uniform random axis by an angle uniform in [0, rotation_mag].
pub fn random_trajectory(
    seed: u64,
    nominal: &Pose,
    translation_mag: f64,
    rotation_mag: f64,
    n_controls: usize,
) -> Result<Trajectory> {
    if !(2..=4).contains(&n_controls) {
        return Err(Error::InvalidInput(format!(
            "n_controls must be in 2..=4, got {n_controls}"
        )));
    }
    if translation_mag < 0.0 || rotation_mag < 0.0 {
        return Err(Error::InvalidInput(
            "perturbation magnitudes must be nonnegative".into(),
        ));
    }
    let mut rng = rng::stream(seed, &[phase::TRAJECTORY]);
    let mut controls = Vec::with_capacity(n_controls);
    controls.push(*nominal);
    for _ in 1..n_controls {
        controls.push(perturb_pose(
            &mut rng,
            nominal,
            translation_mag,
            rotation_mag,
        ));
    }
    Trajectory::new(controls)
}

fn uniform_unit_vector(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen_range(-1.0f64..=1.0),
            rng.gen_range(-1.0f64..=1.0),
            rng.gen_range(-1.0f64..=1.0),
        );
        let n2 = v.norm_squared();
        if n2 > 1e-9 && n2 <= 1.0 {
            return v / n2.sqrt();
        }
    }
}

pub(crate) fn perturb_pose(
    rng: &mut impl Rng,
    nominal: &Pose,
    translation_mag: f64,
    rotation_mag: f64,
) -> Pose {
    let dir = uniform_unit_vector(rng);
    let radius = translation_mag * rng.gen_range(0.0..=1.0f64).cbrt();
    let axis = uniform_unit_vector(rng);
    let angle = rng.gen_range(0.0..=1.0) * rotation_mag;
    let dq = UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), angle);
    Pose {
        rotation: nominal.rotation * dq,
        translation: nominal.translation + dir * radius,
    }
}
