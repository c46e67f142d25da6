//! Scene domain types: calibrated views, depth and feature maps, objects
//! with axis-aligned bounding boxes, and the per-object embedding produced
//! by pooling back-projected features.

mod io;
mod synthetic;

pub use io::{load_scene, load_scene_map, save_scene, SCENE_FILE};
pub use synthetic::{
    category_groups, category_name, category_prototype, make_synthetic_scene,
    make_synthetic_scene_traced, SyntheticSpec,
};

use nalgebra::{DVector, Matrix3, Vector3};

use crate::error::{Error, Result};

/// Tolerance for the rotation orthonormality checks.
pub const ROTATION_TOL: f64 = 1e-6;

/// A calibrated pinhole camera.
///
/// `rotation` and `translation` map world points into the camera frame:
/// `x_cam = R * x_world + t`. `intrinsics` maps camera-frame points onto the
/// image plane; pixel coordinates are zero-based and `(u, v) = (column, row)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraParams {
    pub intrinsics: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub width: u32,
    pub height: u32,
}

impl CameraParams {
    pub fn validate(&self) -> Result<()> {
        for (name, m) in [("K", &self.intrinsics), ("R", &self.rotation)] {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::validation(format!(
                    "camera {name} has non-finite entries"
                )));
            }
        }
        if self.translation.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("camera t has non-finite entries"));
        }
        if self.intrinsics[(2, 2)] != 1.0 {
            return Err(Error::validation(format!(
                "intrinsics K[2][2] must be exactly 1, got {}",
                self.intrinsics[(2, 2)]
            )));
        }
        if self.intrinsics.try_inverse().is_none() {
            return Err(Error::validation("intrinsics K is singular"));
        }

        let gram = self.rotation.transpose() * self.rotation;
        let max_dev = (gram - Matrix3::identity()).abs().max();
        if max_dev > ROTATION_TOL {
            return Err(Error::validation(format!(
                "R is not orthonormal: max |R^T R - I| = {max_dev:.3e}"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::validation(format!(
                "rotation not proper: det(R) = {det} (must be +1)"
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::validation(
                "camera width and height must be positive",
            ));
        }
        Ok(())
    }

    /// World-space camera center `-R^-1 t`.
    pub fn center(&self) -> Result<Vector3<f64>> {
        let r_inv = self
            .rotation
            .try_inverse()
            .ok_or_else(|| Error::IllConditionedCamera("R is not invertible".into()))?;
        Ok(-(r_inv * self.translation))
    }
}

/// A dense per-pixel depth map, row-major. Depth is the camera-frame z of
/// the surface hit through the pixel; `0` marks pixels with no valid depth.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "depth map {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(DepthMap {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Depth at pixel row `v`, column `u`.
    pub fn get(&self, v: usize, u: usize) -> f64 {
        self.data[v * self.width + u]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    fn validate(&self) -> Result<()> {
        if let Some(bad) = self.data.iter().find(|d| !d.is_finite() || **d < 0.0) {
            return Err(Error::validation(format!(
                "depth values must be finite and >= 0, found {bad}"
            )));
        }
        Ok(())
    }
}

/// A dense per-pixel feature map with `channels` channels, stored
/// channel-major (`[c][v][u]` row-major), matching the tensor file layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// The feature vector at pixel row `v`, column `u`.
    pub fn feature_at(&self, v: usize, u: usize) -> DVector<f64> {
        let plane = self.height * self.width;
        let offset = v * self.width + u;
        DVector::from_fn(self.channels, |c, _| self.data[c * plane + offset])
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    fn validate(&self) -> Result<()> {
        if self.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("feature values must be finite"));
        }
        Ok(())
    }
}

/// One posed RGB-D view: camera plus its depth and feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewData {
    pub camera: CameraParams,
    pub depth: DepthMap,
    pub features: FeatureMap,
}

impl ViewData {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        self.depth.validate()?;
        self.features.validate()?;
        if self.depth.height != self.features.height || self.depth.width != self.features.width {
            return Err(Error::ShapeMismatch(format!(
                "depth map is {}x{} but feature map is {}x{}",
                self.depth.height, self.depth.width, self.features.height, self.features.width
            )));
        }
        Ok(())
    }
}

/// A scene object: id, category label, and world-frame axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub id: u32,
    pub category: String,
    pub aabb_min: Vector3<f64>,
    pub aabb_max: Vector3<f64>,
}

impl SceneObject {
    pub fn validate(&self) -> Result<()> {
        if self.category.is_empty() {
            return Err(Error::validation(format!(
                "object {} has an empty category",
                self.id
            )));
        }
        for v in [&self.aabb_min, &self.aabb_max] {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::validation(format!(
                    "object {} has a non-finite bounding box",
                    self.id
                )));
            }
        }
        for axis in 0..3 {
            if self.aabb_min[axis] > self.aabb_max[axis] {
                return Err(Error::validation(format!(
                    "object {}: aabb_min must be <= aabb_max on every axis",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// A full scene: its views and its objects.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub scene_id: String,
    pub views: Vec<ViewData>,
    pub objects: Vec<SceneObject>,
}

impl SceneBundle {
    pub fn validate(&self) -> Result<()> {
        for view in &self.views {
            view.validate()?;
        }
        if let Some(first) = self.views.first() {
            let dim = first.features.channels;
            for view in &self.views {
                if view.features.channels != dim {
                    return Err(Error::ShapeMismatch(format!(
                        "all views must share one feature channel count; found {} and {}",
                        dim, view.features.channels
                    )));
                }
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for object in &self.objects {
            object.validate()?;
            if !seen.insert(object.id) {
                return Err(Error::validation(format!(
                    "duplicate object id {} in scene",
                    object.id
                )));
            }
        }
        Ok(())
    }

    /// Feature channel count shared by all views (0 for a view-less scene).
    pub fn feature_dim(&self) -> usize {
        self.views.first().map(|v| v.features.channels).unwrap_or(0)
    }

    pub fn object_by_id(&self, id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }
}

/// The pooled feature vector for one object. `point_count` is the number of
/// back-projected points inside the object's box; when it is zero the
/// vector is the all-zero sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectEmbedding {
    pub object_id: u32,
    pub vector: DVector<f64>,
    pub point_count: usize,
}

impl ObjectEmbedding {
    /// True when no point landed in the object's box and the vector is the
    /// all-zero placeholder rather than a pooled feature.
    pub fn is_sentinel(&self) -> bool {
        self.point_count == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    pub(crate) fn simple_camera() -> CameraParams {
        CameraParams {
            intrinsics: Matrix3::new(100.0, 0.0, 32.0, 0.0, 100.0, 24.0, 0.0, 0.0, 1.0),
            rotation: Matrix3::identity(),
            translation: Vector3::new(0.0, 0.0, 0.0),
            width: 64,
            height: 48,
        }
    }

    #[test]
    fn valid_camera_passes() {
        simple_camera().validate().unwrap();
    }

    #[test]
    fn rejects_k22_not_one() {
        let mut cam = simple_camera();
        cam.intrinsics[(2, 2)] = 2.0;
        let err = cam.validate().unwrap_err();
        assert!(err.to_string().contains("K[2][2]"), "{err}");
    }

    #[test]
    fn rejects_singular_k() {
        let mut cam = simple_camera();
        cam.intrinsics[(0, 0)] = 0.0;
        cam.intrinsics[(0, 2)] = 0.0;
        let err = cam.validate().unwrap_err();
        assert!(err.to_string().contains("singular"), "{err}");
    }

    #[test]
    fn rejects_non_orthonormal_rotation() {
        let mut cam = simple_camera();
        cam.rotation[(0, 0)] = 1.1;
        let err = cam.validate().unwrap_err();
        assert!(err.to_string().contains("orthonormal"), "{err}");
    }

    #[test]
    fn rejects_reflection_as_improper_rotation() {
        let mut cam = simple_camera();
        // A reflection: orthonormal but det = -1.
        cam.rotation = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        let err = cam.validate().unwrap_err();
        assert!(err.to_string().contains("rotation not proper"), "{err}");
    }

    #[test]
    fn accepts_rotation_within_tolerance() {
        // A perturbation of eps on a diagonal entry moves |R^T R - I| by
        // about 2*eps, so 4e-7 stays inside the 1e-6 tolerance.
        let mut cam = simple_camera();
        cam.rotation[(0, 0)] = 1.0 + 4e-7;
        cam.validate().unwrap();
    }

    #[test]
    fn camera_center_is_minus_rinv_t() {
        let mut cam = simple_camera();
        cam.translation = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(cam.center().unwrap(), Vector3::new(-1.0, -2.0, -3.0));
    }

    #[test]
    fn depth_map_rejects_negative_values() {
        let depth = DepthMap::new(1, 2, vec![1.0, -0.5]).unwrap();
        assert!(depth.validate().is_err());
    }

    #[test]
    fn depth_map_rejects_nan() {
        let depth = DepthMap::new(1, 1, vec![f64::NAN]).unwrap();
        assert!(depth.validate().is_err());
    }

    #[test]
    fn feature_map_indexing_is_channel_major() {
        // channels=2, 2x2 image; plane 0 then plane 1.
        let fm =
            FeatureMap::new(2, 2, 2, vec![0.0, 1.0, 2.0, 3.0, 10.0, 11.0, 12.0, 13.0]).unwrap();
        assert_eq!(fm.feature_at(0, 1).as_slice(), &[1.0, 11.0]);
        assert_eq!(fm.feature_at(1, 0).as_slice(), &[2.0, 12.0]);
    }

    #[test]
    fn view_rejects_mismatched_depth_and_feature_dims() {
        let view = ViewData {
            camera: simple_camera(),
            depth: DepthMap::new(2, 2, vec![0.0; 4]).unwrap(),
            features: FeatureMap::new(1, 2, 3, vec![0.0; 6]).unwrap(),
        };
        assert!(view.validate().is_err());
    }

    #[test]
    fn object_rejects_inverted_box() {
        let object = SceneObject {
            id: 1,
            category: "chair".into(),
            aabb_min: Vector3::new(0.0, 0.0, 1.0),
            aabb_max: Vector3::new(1.0, 1.0, 0.0),
        };
        assert!(object.validate().is_err());
    }

    #[test]
    fn object_accepts_degenerate_box() {
        let object = SceneObject {
            id: 1,
            category: "chair".into(),
            aabb_min: Vector3::new(0.5, 0.5, 0.5),
            aabb_max: Vector3::new(0.5, 0.5, 0.5),
        };
        object.validate().unwrap();
    }

    #[test]
    fn bundle_rejects_duplicate_ids() {
        let object = SceneObject {
            id: 3,
            category: "chair".into(),
            aabb_min: Vector3::zeros(),
            aabb_max: Vector3::new(1.0, 1.0, 1.0),
        };
        let bundle = SceneBundle {
            scene_id: "s".into(),
            views: vec![],
            objects: vec![object.clone(), object],
        };
        let err = bundle.validate().unwrap_err();
        assert!(err.to_string().contains("duplicate object id 3"), "{err}");
    }
}
