//! Scene directory loading and saving.
//!
//! A scene lives in a directory containing `scene.json` plus one depth
//! tensor (2-dim: H x W) and one feature tensor (3-dim: C x H x W) per
//! view. Tensor paths in `scene.json` are relative to the directory.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{CameraParams, DepthMap, FeatureMap, SceneBundle, SceneObject, ViewData};
use crate::tensor::{read_tensor, write_tensor, Tensor};

pub const SCENE_FILE: &str = "scene.json";

#[derive(Serialize, Deserialize)]
struct SceneFile {
    scene_id: String,
    views: Vec<ViewRecord>,
    objects: Vec<ObjectRecord>,
}

#[derive(Serialize, Deserialize)]
struct ViewRecord {
    /// Intrinsics, 9 row-major entries.
    #[serde(rename = "K")]
    k: [f64; 9],
    /// World-to-camera rotation, 9 row-major entries.
    #[serde(rename = "R")]
    r: [f64; 9],
    /// World-to-camera translation.
    t: [f64; 3],
    width: u32,
    height: u32,
    depth_file: String,
    feature_file: String,
}

#[derive(Serialize, Deserialize)]
struct ObjectRecord {
    id: u32,
    category: String,
    aabb_min: [f64; 3],
    aabb_max: [f64; 3],
}

/// Load and validate the scene stored in `dir`.
pub fn load_scene(dir: &Path) -> Result<SceneBundle> {
    let json_path = dir.join(SCENE_FILE);
    let raw = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let mut de = serde_json::Deserializer::from_str(&raw);
    let file: SceneFile = serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Schema {
        path: format!("{}: {}", json_path.display(), e.path()),
        detail: e.inner().to_string(),
    })?;

    let mut views = Vec::with_capacity(file.views.len());
    for record in file.views {
        let depth_path = dir.join(&record.depth_file);
        let depth_tensor = read_tensor(&depth_path)?;
        if depth_tensor.dims.len() != 2 {
            return Err(Error::Format {
                path: depth_path,
                detail: format!(
                    "depth tensor must have 2 dims (H, W), got {:?}",
                    depth_tensor.dims
                ),
            });
        }
        let depth = DepthMap::new(
            depth_tensor.dims[0] as usize,
            depth_tensor.dims[1] as usize,
            depth_tensor.to_f64(),
        )?;

        let feature_path = dir.join(&record.feature_file);
        let feature_tensor = read_tensor(&feature_path)?;
        if feature_tensor.dims.len() != 3 {
            return Err(Error::Format {
                path: feature_path,
                detail: format!(
                    "feature tensor must have 3 dims (C, H, W), got {:?}",
                    feature_tensor.dims
                ),
            });
        }
        let features = FeatureMap::new(
            feature_tensor.dims[0] as usize,
            feature_tensor.dims[1] as usize,
            feature_tensor.dims[2] as usize,
            feature_tensor.to_f64(),
        )?;

        views.push(ViewData {
            camera: CameraParams {
                intrinsics: Matrix3::from_row_slice(&record.k),
                rotation: Matrix3::from_row_slice(&record.r),
                translation: Vector3::from_row_slice(&record.t),
                width: record.width,
                height: record.height,
            },
            depth,
            features,
        });
    }

    let objects = file
        .objects
        .into_iter()
        .map(|o| SceneObject {
            id: o.id,
            category: o.category,
            aabb_min: Vector3::from_row_slice(&o.aabb_min),
            aabb_max: Vector3::from_row_slice(&o.aabb_max),
        })
        .collect();

    let bundle = SceneBundle {
        scene_id: file.scene_id,
        views,
        objects,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Load each named scene once from `root/<scene_id>/`, keyed by scene id.
pub fn load_scene_map<I, S>(root: &Path, scene_ids: I) -> Result<BTreeMap<String, SceneBundle>>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let ids: std::collections::BTreeSet<String> = scene_ids
        .into_iter()
        .map(|s| s.as_ref().to_string())
        .collect();
    let mut scenes = BTreeMap::new();
    for id in ids {
        let bundle = load_scene(&root.join(&id))?;
        scenes.insert(id, bundle);
    }
    Ok(scenes)
}

/// Validate `bundle` and write it to `dir` (created if missing). Tensors are
/// stored as f64, so a save/load round trip reproduces the bundle exactly.
pub fn save_scene(bundle: &SceneBundle, dir: &Path) -> Result<()> {
    bundle.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut records = Vec::with_capacity(bundle.views.len());
    for (index, view) in bundle.views.iter().enumerate() {
        let depth_file = format!("depth_{index:03}.cvpt");
        let feature_file = format!("features_{index:03}.cvpt");
        let depth = &view.depth;
        write_tensor(
            &dir.join(&depth_file),
            &Tensor::from_f64(
                vec![depth.height() as u64, depth.width() as u64],
                depth.values().to_vec(),
            )?,
        )?;
        let features = &view.features;
        write_tensor(
            &dir.join(&feature_file),
            &Tensor::from_f64(
                vec![
                    features.channels() as u64,
                    features.height() as u64,
                    features.width() as u64,
                ],
                features.values().to_vec(),
            )?,
        )?;
        let cam = &view.camera;
        records.push(ViewRecord {
            k: cam.intrinsics.transpose().as_slice().try_into().unwrap(),
            r: cam.rotation.transpose().as_slice().try_into().unwrap(),
            t: [cam.translation.x, cam.translation.y, cam.translation.z],
            width: cam.width,
            height: cam.height,
            depth_file,
            feature_file,
        });
    }

    let file = SceneFile {
        scene_id: bundle.scene_id.clone(),
        views: records,
        objects: bundle
            .objects
            .iter()
            .map(|o| ObjectRecord {
                id: o.id,
                category: o.category.clone(),
                aabb_min: [o.aabb_min.x, o.aabb_min.y, o.aabb_min.z],
                aabb_max: [o.aabb_max.x, o.aabb_max.y, o.aabb_max.z],
            })
            .collect(),
    };
    let json_path = dir.join(SCENE_FILE);
    let mut text = serde_json::to_string_pretty(&file).expect("scene file serializes");
    text.push('\n');
    std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SyntheticSpec;

    fn sample_bundle() -> SceneBundle {
        crate::scene::make_synthetic_scene(&SyntheticSpec {
            num_views: 2,
            num_objects: 3,
            feature_dim: 4,
            category_count: 3,
            noise_sigma: 0.1,
            rng_seed: 7,
        })
        .unwrap()
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = sample_bundle();
        save_scene(&bundle, dir.path()).unwrap();
        let back = load_scene(dir.path()).unwrap();
        assert_eq!(back, bundle);
    }

    #[test]
    fn missing_scene_json_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_scene(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err}");
    }

    #[test]
    fn schema_error_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join(SCENE_FILE),
            r#"{"scene_id": "s", "views": [], "objects": [{"id": 1, "category": "chair", "aabb_min": [0,0,0], "aabb_max": "oops"}]}"#,
        )
        .unwrap();
        let err = load_scene(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("aabb_max"), "{msg}");
    }

    #[test]
    fn rejects_depth_tensor_with_wrong_rank() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = sample_bundle();
        save_scene(&bundle, dir.path()).unwrap();
        // Overwrite the first depth file with a 3-dim tensor.
        write_tensor(
            &dir.path().join("depth_000.cvpt"),
            &Tensor::from_f64(vec![1, 1, 1], vec![1.0]).unwrap(),
        )
        .unwrap();
        let err = load_scene(dir.path()).unwrap_err();
        assert!(err.to_string().contains("2 dims"), "{err}");
    }

    #[test]
    fn rejects_feature_tensor_with_mismatched_spatial_dims() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = sample_bundle();
        save_scene(&bundle, dir.path()).unwrap();
        write_tensor(
            &dir.path().join("features_000.cvpt"),
            &Tensor::from_f64(vec![4, 2, 2], vec![0.0; 16]).unwrap(),
        )
        .unwrap();
        let err = load_scene(dir.path()).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)), "{err}");
    }

    #[test]
    fn loads_f32_tensors_by_widening() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = sample_bundle();
        save_scene(&bundle, dir.path()).unwrap();
        // Re-encode the first depth map as f32.
        let depth = &bundle.views[0].depth;
        write_tensor(
            &dir.path().join("depth_000.cvpt"),
            &Tensor::from_f32(
                vec![depth.height() as u64, depth.width() as u64],
                depth.values().iter().map(|&d| d as f32).collect(),
            )
            .unwrap(),
        )
        .unwrap();
        let back = load_scene(dir.path()).unwrap();
        assert_eq!(back.views[0].depth.height(), depth.height());
    }

    #[test]
    fn rejects_invalid_camera_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = sample_bundle();
        save_scene(&bundle, dir.path()).unwrap();
        let raw = std::fs::read_to_string(dir.path().join(SCENE_FILE)).unwrap();
        let mut file: serde_json::Value = serde_json::from_str(&raw).unwrap();
        // Scale one rotation row: no longer orthonormal.
        file["views"][0]["R"][0] = serde_json::json!(2.0);
        file["views"][0]["R"][1] = serde_json::json!(0.0);
        file["views"][0]["R"][2] = serde_json::json!(0.0);
        std::fs::write(
            dir.path().join(SCENE_FILE),
            serde_json::to_string(&file).unwrap(),
        )
        .unwrap();
        let err = load_scene(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }
}
