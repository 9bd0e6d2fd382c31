//! Procedural scenes and the deterministic reference ray tracer.
//!
//! Shading is single-bounce Lambertian with one directional light:
//! `radiance = emission + albedo * max(0, n·l)`, which is enough structure
//! for deblurring and radiance-field fitting while staying analytic and
//! reproducible. Supports pinhole and thin-lens (polygonal aperture)
//! rendering in linear radiance.

use crate::error::{Error, Result};
use crate::geometry::{Camera, Pose, Ray};
use crate::image::LinearImage;
use crate::rng::{self, phase};
use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
    /// Axis-aligned box.
    Box {
        min: Vector3<f64>,
        max: Vector3<f64>,
    },
    Plane {
        point: Vector3<f64>,
        normal: Vector3<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    /// Linear RGB reflectance, nonnegative.
    pub albedo: Vector3<f64>,
    /// Linear RGB emission; values above 1 produce clipped highlights
    /// downstream.
    pub emission: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    pub background: Vector3<f64>,
    /// Unit vector pointing from surfaces toward the light.
    pub light_direction: Vector3<f64>,
}

impl Scene {
    pub fn new(
        primitives: Vec<Primitive>,
        background: Vector3<f64>,
        light_direction: Vector3<f64>,
    ) -> Result<Scene> {
        for p in &primitives {
            match &p.shape {
                Shape::Sphere { radius, .. } => {
                    if *radius <= 0.0 {
                        return Err(Error::InvalidInput("sphere radius must be > 0".into()));
                    }
                }
                Shape::Box { min, max } => {
                    if !(min.x < max.x && min.y < max.y && min.z < max.z) {
                        return Err(Error::InvalidInput(
                            "box min must be < max componentwise".into(),
                        ));
                    }
                }
                Shape::Plane { normal, .. } => {
                    if normal.norm() < 1e-12 {
                        return Err(Error::InvalidInput("plane normal must be nonzero".into()));
                    }
                }
            }
            let ok = |v: &Vector3<f64>| v.iter().all(|&x| x.is_finite() && x >= 0.0);
            if !ok(&p.albedo) || !ok(&p.emission) {
                return Err(Error::InvalidInput(
                    "albedo/emission must be finite and nonnegative".into(),
                ));
            }
        }
        if light_direction.norm() < 1e-12 {
            return Err(Error::InvalidInput("light direction must be nonzero".into()));
        }
        Ok(Scene {
            primitives,
            background,
            light_direction: light_direction.normalize(),
        })
    }

    /// Bounds of all bounded primitives plus a margin; planes are ignored.
    /// Used to size the radiance-field grid for datasets of this scene.
    pub fn bounded_aabb(&self, margin: f64) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        let mut any = false;
        for p in &self.primitives {
            match &p.shape {
                Shape::Sphere { center, radius } => {
                    lo = lo.inf(&(center - Vector3::repeat(*radius)));
                    hi = hi.sup(&(center + Vector3::repeat(*radius)));
                    any = true;
                }
                Shape::Box { min, max } => {
                    lo = lo.inf(min);
                    hi = hi.sup(max);
                    any = true;
                }
                Shape::Plane { .. } => {}
            }
        }
        any.then(|| (lo - Vector3::repeat(margin), hi + Vector3::repeat(margin)))
    }
}

/// Thin-lens model: polygonal aperture of `blade_count` sides with the given
/// circumradius; `aperture_radius = 0` degenerates to the pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LensConfig {
    pub aperture_radius: f64,
    pub blade_count: u32,
    pub focal_distance: f64,
}

impl LensConfig {
    pub fn validate(&self) -> Result<()> {
        if self.aperture_radius < 0.0 {
            return Err(Error::InvalidInput("aperture radius must be >= 0".into()));
        }
        if self.aperture_radius > 0.0 && self.blade_count < 3 {
            return Err(Error::InvalidInput(
                "blade count must be >= 3 for a nonzero aperture".into(),
            ));
        }
        if self.focal_distance <= 0.0 {
            return Err(Error::InvalidInput("focal distance must be > 0".into()));
        }
        Ok(())
    }
}

struct Hit {
    t: f64,
    normal: Vector3<f64>,
    primitive: usize,
}

fn intersect_sphere(ray: &Ray, center: &Vector3<f64>, radius: f64) -> Option<f64> {
    let oc = ray.origin - center;
    let b = oc.dot(&ray.direction);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = -b - sq;
    if t0 > 1e-9 {
        return Some(t0);
    }
    let t1 = -b + sq;
    (t1 > 1e-9).then_some(t1)
}

fn intersect_box(ray: &Ray, min: &Vector3<f64>, max: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis_near = 0;
    for a in 0..3 {
        let inv = 1.0 / ray.direction[a];
        let mut t0 = (min[a] - ray.origin[a]) * inv;
        let mut t1 = (max[a] - ray.origin[a]) * inv;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_near {
            t_near = t0;
            axis_near = a;
        }
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    let t = if t_near > 1e-9 {
        t_near
    } else if t_far > 1e-9 {
        // Origin inside the box: report the exit face.
        let p = ray.at(t_far);
        let mut n = Vector3::zeros();
        let mut best = f64::INFINITY;
        for a in 0..3 {
            let d0 = (p[a] - min[a]).abs();
            let d1 = (p[a] - max[a]).abs();
            if d0 < best {
                best = d0;
                n = Vector3::zeros();
                n[a] = -1.0;
            }
            if d1 < best {
                best = d1;
                n = Vector3::zeros();
                n[a] = 1.0;
            }
        }
        return Some((t_far, n));
    } else {
        return None;
    };
    let mut n = Vector3::zeros();
    n[axis_near] = if ray.direction[axis_near] > 0.0 { -1.0 } else { 1.0 };
    Some((t, n))
}

fn intersect_plane(ray: &Ray, point: &Vector3<f64>, normal: &Vector3<f64>) -> Option<f64> {
    let denom = normal.dot(&ray.direction);
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = (point - ray.origin).dot(normal) / denom;
    (t > 1e-9).then_some(t)
}

fn nearest_hit(scene: &Scene, ray: &Ray) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for (i, prim) in scene.primitives.iter().enumerate() {
        let hit = match &prim.shape {
            Shape::Sphere { center, radius } => intersect_sphere(ray, center, *radius)
                .map(|t| (t, (ray.at(t) - center).normalize())),
            Shape::Box { min, max } => intersect_box(ray, min, max),
            Shape::Plane { point, normal } => {
                intersect_plane(ray, point, &normal.normalize()).map(|t| (t, normal.normalize()))
            }
        };
        if let Some((t, normal)) = hit {
            if best.as_ref().map_or(true, |b| t < b.t) {
                best = Some(Hit {
                    t,
                    normal,
                    primitive: i,
                });
            }
        }
    }
    best
}

/// Nearest-hit radiance and depth; a miss returns (background, +inf).
pub fn trace_ray(scene: &Scene, ray: &Ray) -> (Vector3<f64>, f64) {
    match nearest_hit(scene, ray) {
        None => (scene.background, f64::INFINITY),
        Some(hit) => {
            let prim = &scene.primitives[hit.primitive];
            // Two-sided shading: orient the normal toward the viewer.
            let mut n = hit.normal;
            if n.dot(&ray.direction) > 0.0 {
                n = -n;
            }
            let lambert = n.dot(&scene.light_direction).max(0.0);
            (prim.emission + prim.albedo * lambert, hit.t)
        }
    }
}

/// One primary ray per pixel center; deterministic.
pub fn render_pinhole(scene: &Scene, camera: &Camera, pose: &Pose) -> LinearImage {
    let rows: Vec<Vec<[f64; 3]>> = (0..camera.height)
        .into_par_iter()
        .map(|y| {
            (0..camera.width)
                .map(|x| {
                    let (c, _) = trace_ray(scene, &camera.primary_ray(pose, x, y));
                    [c.x, c.y, c.z]
                })
                .collect()
        })
        .collect();
    collect_rows(camera, rows)
}

/// Per-pixel depth of the nearest hit (+inf on miss). Feeds defocus tests and
/// the focal-distance heuristics; the reconstruction pipeline never uses it.
pub fn render_depth(scene: &Scene, camera: &Camera, pose: &Pose) -> Vec<f64> {
    let mut out = Vec::with_capacity(camera.width * camera.height);
    for y in 0..camera.height {
        for x in 0..camera.width {
            let (_, t) = trace_ray(scene, &camera.primary_ray(pose, x, y));
            out.push(t);
        }
    }
    out
}

fn collect_rows(camera: &Camera, rows: Vec<Vec<[f64; 3]>>) -> LinearImage {
    let mut img = LinearImage::new(camera.width, camera.height);
    for (y, row) in rows.into_iter().enumerate() {
        for (x, px) in row.into_iter().enumerate() {
            img.set(x, y, px);
        }
    }
    img
}

/// Sample a point uniformly inside the regular `n`-gon of circumradius `r`
/// (fan triangulation from the center; all fan triangles have equal area).
fn sample_polygon(rng: &mut impl Rng, n: u32, r: f64) -> (f64, f64) {
    let k = rng.gen_range(0..n);
    let a0 = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
    let a1 = 2.0 * std::f64::consts::PI * (k + 1) as f64 / n as f64;
    let (v1x, v1y) = (r * a0.cos(), r * a0.sin());
    let (v2x, v2y) = (r * a1.cos(), r * a1.sin());
    let (u, v): (f64, f64) = (rng.gen(), rng.gen());
    let su = u.sqrt();
    // Uniform in the triangle (0, v1, v2).
    let w1 = su * (1.0 - v);
    let w2 = su * v;
    (w1 * v1x + w2 * v2x, w1 * v1y + w2 * v2y)
}

/// Distributed ray tracing through a thin lens. Aperture points are sampled
/// uniformly inside the blade polygon; every sample ray passes through the
/// pixel's in-focus point on the plane z = −focal_distance (camera space).
/// Per-pixel RNG streams are keyed by (seed, pixel index), so the parallel
/// schedule cannot change the output.
pub fn render_thin_lens(
    scene: &Scene,
    camera: &Camera,
    pose: &Pose,
    lens: &LensConfig,
    samples_per_pixel: usize,
    seed: u64,
) -> Result<LinearImage> {
    lens.validate()?;
    if samples_per_pixel == 0 {
        return Err(Error::InvalidInput("samples_per_pixel must be >= 1".into()));
    }
    if lens.aperture_radius == 0.0 {
        return Ok(render_pinhole(scene, camera, pose));
    }
    let rows: Vec<Vec<[f64; 3]>> = (0..camera.height)
        .into_par_iter()
        .map(|y| {
            (0..camera.width)
                .map(|x| {
                    let pixel_index = (y * camera.width + x) as u64;
                    let mut rng = rng::stream(seed, &[phase::PIXEL, pixel_index]);
                    let focus_cam = camera.pixel_dir(x, y) * lens.focal_distance;
                    let mut acc = Vector3::zeros();
                    for _ in 0..samples_per_pixel {
                        let (ax, ay) =
                            sample_polygon(&mut rng, lens.blade_count, lens.aperture_radius);
                        let origin_cam = Vector3::new(ax, ay, 0.0);
                        let dir_cam = focus_cam - origin_cam;
                        let ray = Ray::new(
                            pose.transform_point(&origin_cam),
                            pose.rotate_vector(&dir_cam),
                        );
                        let (c, _) = trace_ray(scene, &ray);
                        acc += c;
                    }
                    let c = acc / samples_per_pixel as f64;
                    [c.x, c.y, c.z]
                })
                .collect()
        })
        .collect();
    Ok(collect_rows(camera, rows))
}
