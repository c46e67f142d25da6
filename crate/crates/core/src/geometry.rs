//! Back-projection of depth pixels into world space, multi-view
//! aggregation into a point-feature cloud, and average-pooled per-object
//! embeddings via point-in-box membership.

use nalgebra::{DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::scene::{CameraParams, ObjectEmbedding, SceneBundle, SceneObject, ViewData};

/// One back-projected pixel, borrowed from a [`PointFeatureCloud`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointFeature<'a> {
    /// World-frame position in meters.
    pub position: Vector3<f64>,
    /// The pixel's C-dim feature vector.
    pub feature: &'a [f64],
    /// Index of the view the pixel came from.
    pub source_view: usize,
}

/// A set of back-projected points with their features, stored
/// structure-of-arrays (features are one flat row-major `n x C` buffer).
#[derive(Debug, Clone, PartialEq)]
pub struct PointFeatureCloud {
    feature_dim: usize,
    positions: Vec<Vector3<f64>>,
    features: Vec<f64>,
    source_views: Vec<usize>,
}

impl PointFeatureCloud {
    pub fn new(feature_dim: usize) -> Self {
        PointFeatureCloud {
            feature_dim,
            positions: Vec::new(),
            features: Vec::new(),
            source_views: Vec::new(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(
        &mut self,
        position: Vector3<f64>,
        feature: &[f64],
        source_view: usize,
    ) -> Result<()> {
        if feature.len() != self.feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "point feature has length {}, cloud expects {}",
                feature.len(),
                self.feature_dim
            )));
        }
        self.positions.push(position);
        self.features.extend_from_slice(feature);
        self.source_views.push(source_view);
        Ok(())
    }

    pub fn point(&self, index: usize) -> PointFeature<'_> {
        let c = self.feature_dim;
        PointFeature {
            position: self.positions[index],
            feature: &self.features[index * c..(index + 1) * c],
            source_view: self.source_views[index],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = PointFeature<'_>> {
        (0..self.len()).map(|i| self.point(i))
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    /// Flat row-major `n x C` feature buffer.
    pub fn feature_values(&self) -> &[f64] {
        &self.features
    }
}

/// The shared Eq.-2 arithmetic: `R⁻¹ (d · K⁻¹ [u,v,1]ᵀ − t)`. Both the
/// scalar entry point and the per-view loop funnel through this function so
/// the two produce bit-identical positions.
fn backproject_inner(
    k_inv: &Matrix3<f64>,
    r_inv: &Matrix3<f64>,
    t: &Vector3<f64>,
    u: f64,
    v: f64,
    d: f64,
) -> Vector3<f64> {
    let ray = k_inv * Vector3::new(u, v, 1.0);
    r_inv * (d * ray - t)
}

fn inverses(camera: &CameraParams) -> Result<(Matrix3<f64>, Matrix3<f64>)> {
    let k_inv = camera
        .intrinsics
        .try_inverse()
        .ok_or_else(|| Error::IllConditionedCamera("intrinsics K is not invertible".into()))?;
    let r_inv = camera
        .rotation
        .try_inverse()
        .ok_or_else(|| Error::IllConditionedCamera("rotation R is not invertible".into()))?;
    Ok((k_inv, r_inv))
}

/// Lift pixel `(u, v)` with camera-frame depth `d` to its world point.
/// `(u, v)` are zero-based pixel-center coordinates (column, row).
pub fn backproject_pixel(camera: &CameraParams, u: f64, v: f64, d: f64) -> Result<Vector3<f64>> {
    if d.is_nan() || d <= 0.0 {
        return Err(Error::InvalidDepth(d));
    }
    let (k_inv, r_inv) = inverses(camera)?;
    Ok(backproject_inner(
        &k_inv,
        &r_inv,
        &camera.translation,
        u,
        v,
        d,
    ))
}

/// Project world point `p` into the image: returns `(u, v, d)` where `d` is
/// the camera-frame depth. Inverse of [`backproject_pixel`].
pub fn project_point(camera: &CameraParams, p: &Vector3<f64>) -> Result<(f64, f64, f64)> {
    let x_cam = camera.rotation * p + camera.translation;
    let d = x_cam.z;
    if d <= 0.0 {
        return Err(Error::BehindCamera(d));
    }
    let uvw = camera.intrinsics * x_cam;
    if uvw.z == 0.0 {
        return Err(Error::IllConditionedCamera(
            "projection has zero homogeneous coordinate".into(),
        ));
    }
    Ok((uvw.x / uvw.z, uvw.y / uvw.z, d))
}

fn backproject_view_into(
    cloud: &mut PointFeatureCloud,
    view: &ViewData,
    view_index: usize,
) -> Result<()> {
    let (k_inv, r_inv) = inverses(&view.camera)?;
    let t = &view.camera.translation;
    let mut feature = vec![0.0; view.features.channels()];
    for v in 0..view.depth.height() {
        for u in 0..view.depth.width() {
            let d = view.depth.get(v, u);
            if d <= 0.0 {
                continue;
            }
            let position = backproject_inner(&k_inv, &r_inv, t, u as f64, v as f64, d);
            let plane = view.features.height() * view.features.width();
            let offset = v * view.features.width() + u;
            for (c, slot) in feature.iter_mut().enumerate() {
                *slot = view.features.values()[c * plane + offset];
            }
            cloud.push(position, &feature, view_index)?;
        }
    }
    Ok(())
}

/// Back-project every pixel of one view with depth > 0, in row-major
/// `(v, u)` order. The resulting points carry `source_view = 0`; use
/// [`aggregate_views`] for multi-view indices.
pub fn backproject_view(view: &ViewData) -> Result<PointFeatureCloud> {
    view.validate()?;
    let mut cloud = PointFeatureCloud::new(view.features.channels());
    backproject_view_into(&mut cloud, view, 0)?;
    Ok(cloud)
}

/// Concatenate the back-projections of all views, in view order. Points are
/// never deduplicated: a surface seen by several views contributes one
/// point per observing pixel.
pub fn aggregate_views(bundle: &SceneBundle) -> Result<PointFeatureCloud> {
    bundle.validate()?;
    let mut cloud = PointFeatureCloud::new(bundle.feature_dim());
    for (view_index, view) in bundle.views.iter().enumerate() {
        backproject_view_into(&mut cloud, view, view_index)?;
    }
    Ok(cloud)
}

/// Inclusive axis-aligned containment: `aabb_min ≤ p ≤ aabb_max` on every
/// axis. Boundary points belong to every box whose face they touch.
pub fn point_in_box(p: &Vector3<f64>, object: &SceneObject) -> bool {
    (0..3).all(|axis| object.aabb_min[axis] <= p[axis] && p[axis] <= object.aabb_max[axis])
}

/// Average-pool the features of every cloud point inside the object's box.
/// With no member points the embedding is the all-zero sentinel
/// (`point_count = 0`).
pub fn object_embedding(cloud: &PointFeatureCloud, object: &SceneObject) -> ObjectEmbedding {
    let c = cloud.feature_dim();
    let mut sum = DVector::<f64>::zeros(c);
    let mut count = 0usize;
    for (index, position) in cloud.positions.iter().enumerate() {
        if point_in_box(position, object) {
            let feature = &cloud.features[index * c..(index + 1) * c];
            for (acc, &x) in sum.iter_mut().zip(feature) {
                *acc += x;
            }
            count += 1;
        }
    }
    if count > 0 {
        sum /= count as f64;
    }
    ObjectEmbedding {
        object_id: object.id,
        vector: sum,
        point_count: count,
    }
}

/// One embedding per scene object, in object-list order, pooled over the
/// aggregated multi-view cloud.
pub fn embed_all_objects(bundle: &SceneBundle) -> Result<Vec<ObjectEmbedding>> {
    let cloud = aggregate_views(bundle)?;
    Ok(bundle
        .objects
        .iter()
        .map(|object| object_embedding(&cloud, object))
        .collect())
}
