//! Procedural scene generator.
//!
//! Builds a small "room": non-overlapping boxes on a floor plane, a ring of
//! downward-looking cameras, and per-view depth/feature maps rendered by
//! ray/box intersection. Feature vectors are fixed per-category prototypes
//! plus optional Gaussian pixel noise, so pooled object embeddings cluster
//! by category and a retrieval head has something to learn.
//!
//! The renderer here is intentionally independent of the back-projection
//! code: depths come from ray/slab intersection with the boxes, so the
//! geometry pipeline can be checked against the known box ownership of
//! every pixel.

use nalgebra::{DVector, Matrix3, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scene::{CameraParams, DepthMap, FeatureMap, SceneBundle, SceneObject, ViewData};

/// Rendered image side in pixels. Small enough to keep generation cheap,
/// large enough that every box catches multiple rays per view.
const IMAGE_SIZE: usize = 64;
/// Side of one floor slot in meters; each object's box stays inside its slot.
const SLOT_SIZE: f64 = 1.6;
/// Ray/box intersections thinner than this are treated as misses so that
/// midpoint sample points sit strictly inside their box.
const MIN_HIT_SPAN: f64 = 1e-6;

const CATEGORY_NAMES: &[&str] = &[
    "chair",
    "table",
    "sofa",
    "bed",
    "trash can",
    "bookshelf",
    "lamp",
    "cabinet",
    "desk",
    "door",
    "window",
    "coffee table",
    "monitor",
    "plant",
    "sink",
    "refrigerator",
];

/// Parameters for [`make_synthetic_scene`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_views: usize,
    pub num_objects: usize,
    pub feature_dim: usize,
    pub category_count: usize,
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be >= 1".into()));
        }
        if self.num_objects > 0 && self.category_count == 0 {
            return Err(Error::Config(
                "category_count must be >= 1 when objects are requested".into(),
            ));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::Config(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// The category label for a category index. Indices beyond the built-in
/// name list get a numeric suffix ("chair 2", ...), so any
/// `category_count` works.
pub fn category_name(index: usize) -> String {
    let base = CATEGORY_NAMES[index % CATEGORY_NAMES.len()];
    let round = index / CATEGORY_NAMES.len();
    if round == 0 {
        base.to_string()
    } else {
        format!("{base} {}", round + 1)
    }
}

/// The fixed feature prototype for a category. Depends only on the category
/// index and the feature dimension, never on the scene seed, so the same
/// category produces the same prototype in every generated scene. Entries
/// are Gaussian with standard deviation 3/dim, giving every prototype a
/// norm near 3/sqrt(dim): small enough that contrastive training on pooled
/// features stays well-conditioned at sharp temperatures, large enough that
/// squared-error regression separates the categories in a few thousand
/// full-batch steps.
pub fn category_prototype(index: usize, feature_dim: usize) -> DVector<f64> {
    let seed = 0x9e37_79b9_7f4a_7c15u64 ^ (index as u64);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let std = 3.0 / feature_dim as f64;
    DVector::from_fn(feature_dim, |_, _| {
        std * rng.sample::<f64, _>(StandardNormal)
    })
}

/// Generate a scene. Deterministic in `spec`: the same spec yields the same
/// bundle, bit for bit.
pub fn make_synthetic_scene(spec: &SyntheticSpec) -> Result<SceneBundle> {
    make_synthetic_scene_traced(spec).map(|(bundle, _)| bundle)
}

/// Like [`make_synthetic_scene`], but also returns, per view, the id of the
/// object owning each pixel (row-major, `None` for background). Tests use
/// the trace as ground truth for back-projection and pooling.
pub fn make_synthetic_scene_traced(
    spec: &SyntheticSpec,
) -> Result<(SceneBundle, Vec<Vec<Option<u32>>>)> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.rng_seed);

    let objects = place_objects(spec, &mut rng);
    let side = slot_grid_side(spec.num_objects);
    let extent = side as f64 * SLOT_SIZE;
    let target = Vector3::new(extent / 2.0, extent / 2.0, 0.5);

    let prototypes: Vec<DVector<f64>> = (0..spec.category_count)
        .map(|k| category_prototype(k, spec.feature_dim))
        .collect();
    let category_of: Vec<usize> = objects.iter().map(|(_, cat)| *cat).collect();
    let boxes: Vec<SceneObject> = objects.into_iter().map(|(o, _)| o).collect();

    let mut views = Vec::with_capacity(spec.num_views);
    let mut traces = Vec::with_capacity(spec.num_views);
    for view_index in 0..spec.num_views {
        let camera = ring_camera(view_index, spec.num_views, extent, target, &mut rng);
        let (view, trace) = render_view(camera, &boxes, &category_of, &prototypes, spec, &mut rng);
        views.push(view);
        traces.push(trace);
    }

    let bundle = SceneBundle {
        scene_id: format!("synthetic_{:016x}", spec.rng_seed),
        views,
        objects: boxes,
    };
    bundle.validate()?;
    Ok((bundle, traces))
}

/// All categories present in a scene with their member object ids, sorted
/// by category name; ids ascend within each group.
pub fn category_groups(bundle: &SceneBundle) -> Vec<(String, Vec<u32>)> {
    let mut groups: std::collections::BTreeMap<String, Vec<u32>> =
        std::collections::BTreeMap::new();
    for object in &bundle.objects {
        groups
            .entry(object.category.clone())
            .or_default()
            .push(object.id);
    }
    groups
        .into_iter()
        .map(|(name, mut ids)| {
            ids.sort_unstable();
            (name, ids)
        })
        .collect()
}

fn slot_grid_side(num_objects: usize) -> usize {
    (1..)
        .find(|side| side * side >= num_objects)
        .unwrap_or(1)
        .max(1)
}

/// One box per shuffled floor slot. Jitter and half-extents are bounded so
/// a box reaches at most 0.79 of the 0.8 m slot half-width: boxes from
/// different slots can never overlap or touch.
fn place_objects(spec: &SyntheticSpec, rng: &mut ChaCha20Rng) -> Vec<(SceneObject, usize)> {
    let side = slot_grid_side(spec.num_objects);
    let mut slots: Vec<(usize, usize)> = (0..side)
        .flat_map(|sx| (0..side).map(move |sy| (sx, sy)))
        .collect();
    slots.shuffle(rng);

    (0..spec.num_objects)
        .map(|i| {
            let (sx, sy) = slots[i];
            let category = rng.gen_range(0..spec.category_count);
            let cx = (sx as f64 + 0.5) * SLOT_SIZE + rng.gen_range(-0.29..0.29);
            let cy = (sy as f64 + 0.5) * SLOT_SIZE + rng.gen_range(-0.29..0.29);
            let hx = rng.gen_range(0.25..0.5);
            let hy = rng.gen_range(0.25..0.5);
            let height = rng.gen_range(0.5..1.5);
            let object = SceneObject {
                id: i as u32,
                category: category_name(category),
                aabb_min: Vector3::new(cx - hx, cy - hy, 0.0),
                aabb_max: Vector3::new(cx + hx, cy + hy, height),
            };
            (object, category)
        })
        .collect()
}

/// A camera on a ring above the scene, looking at `target`.
fn ring_camera(
    index: usize,
    count: usize,
    extent: f64,
    target: Vector3<f64>,
    rng: &mut ChaCha20Rng,
) -> CameraParams {
    let azimuth =
        2.0 * std::f64::consts::PI * index as f64 / count.max(1) as f64 + rng.gen_range(-0.1..0.1);
    let radius = 0.85 * extent + 0.5;
    let position = Vector3::new(
        target.x + radius * azimuth.cos(),
        target.y + radius * azimuth.sin(),
        extent + 1.2,
    );

    // Camera axes in world coordinates: z forward (toward the target),
    // x right, y completing a right-handed frame. Rows of R are the axes,
    // so R maps world directions into the camera frame.
    let z_axis = (target - position).normalize();
    let x_axis = z_axis.cross(&Vector3::z()).normalize();
    let y_axis = z_axis.cross(&x_axis);
    let rotation =
        Matrix3::from_rows(&[x_axis.transpose(), y_axis.transpose(), z_axis.transpose()]);
    let translation = -(rotation * position);

    let size = IMAGE_SIZE as f64;
    let focal = 0.7 * size;
    let center = (size - 1.0) / 2.0;
    CameraParams {
        intrinsics: Matrix3::new(focal, 0.0, center, 0.0, focal, center, 0.0, 0.0, 1.0),
        rotation,
        translation,
        width: IMAGE_SIZE as u32,
        height: IMAGE_SIZE as u32,
    }
}

fn render_view(
    camera: CameraParams,
    boxes: &[SceneObject],
    category_of: &[usize],
    prototypes: &[DVector<f64>],
    spec: &SyntheticSpec,
    rng: &mut ChaCha20Rng,
) -> (ViewData, Vec<Option<u32>>) {
    let (h, w, c) = (IMAGE_SIZE, IMAGE_SIZE, spec.feature_dim);
    let mut depth = vec![0.0; h * w];
    let mut features = vec![0.0; c * h * w];
    let mut trace = vec![None; h * w];

    // The renderer inverts its own camera analytically: R is orthonormal by
    // construction (transpose inverts it) and K is an axis-aligned pinhole.
    let r_inv = camera.rotation.transpose();
    let origin = -(r_inv * camera.translation);
    let focal = camera.intrinsics[(0, 0)];
    let (cx, cy) = (camera.intrinsics[(0, 2)], camera.intrinsics[(1, 2)]);

    for v in 0..h {
        for u in 0..w {
            let dir_cam = Vector3::new((u as f64 - cx) / focal, (v as f64 - cy) / focal, 1.0);
            let dir = r_inv * dir_cam;

            let mut best: Option<(f64, f64, usize)> = None;
            for (obj_index, object) in boxes.iter().enumerate() {
                if let Some((entry, exit)) = ray_box(&origin, &dir, object) {
                    if best.is_none_or(|(e, _, _)| entry < e) {
                        best = Some((entry, exit, obj_index));
                    }
                }
            }

            let pixel = v * w + u;
            if let Some((entry, exit, obj_index)) = best {
                // Midpoint of the traversal: strictly inside the box, and
                // the ray parameter equals camera-frame depth because the
                // camera-frame direction has z = 1.
                depth[pixel] = 0.5 * (entry + exit);
                trace[pixel] = Some(boxes[obj_index].id);
                let prototype = &prototypes[category_of[obj_index]];
                for ch in 0..c {
                    let noise: f64 = if spec.noise_sigma > 0.0 {
                        spec.noise_sigma * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        0.0
                    };
                    features[ch * h * w + pixel] = prototype[ch] + noise;
                }
            }
        }
    }

    let view = ViewData {
        camera,
        depth: DepthMap::new(h, w, depth).expect("sized above"),
        features: FeatureMap::new(c, h, w, features).expect("sized above"),
    };
    (view, trace)
}

/// Slab intersection of the ray `origin + t * dir` with an axis-aligned
/// box. Returns the `(entry, exit)` parameters of the traversed interval,
/// or `None` when the ray misses, only grazes (span below [`MIN_HIT_SPAN`]),
/// or the interval lies behind the origin.
fn ray_box(origin: &Vector3<f64>, dir: &Vector3<f64>, object: &SceneObject) -> Option<(f64, f64)> {
    let mut entry = f64::NEG_INFINITY;
    let mut exit = f64::INFINITY;
    for axis in 0..3 {
        let t0 = (object.aabb_min[axis] - origin[axis]) / dir[axis];
        let t1 = (object.aabb_max[axis] - origin[axis]) / dir[axis];
        entry = entry.max(t0.min(t1));
        exit = exit.min(t0.max(t1));
    }
    (exit - entry >= MIN_HIT_SPAN && entry > 0.0).then_some((entry, exit))
}
