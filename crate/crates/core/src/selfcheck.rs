//! An embedded invariant suite: fast, deterministic checks over the core
//! numerical properties of every module, runnable from a release binary via
//! `cvp selfcheck`. These are smaller cousins of the full test suite meant
//! to validate a build in seconds on the machine it will run on.

use std::collections::BTreeSet;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::affinity::{
    infonce_grad, infonce_loss, load_head, mlp_forward, save_head, Activation, AffinityHead,
    ContrastiveBatch, QueryState,
};
use crate::geometry::{backproject_pixel, embed_all_objects, project_point};
use crate::grid::{build_grid, serialize_grid, BevBounds, GridLayout, GridSpec, ABLATION_SIZES};
use crate::relevance::{
    build_target_set, DatasetKind, SupervisionVariant, TargetSet, TrainingSample,
};
use crate::scene::{
    category_prototype, make_synthetic_scene, CameraParams, ObjectEmbedding, SceneBundle,
    SceneObject, SyntheticSpec,
};
use crate::tensor::{read_tensor, write_tensor, Tensor};

/// Result of one named invariant check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Failure explanation; empty on success.
    pub detail: String,
}

/// A named check: returns `Ok` or a failure explanation.
type Check = (&'static str, fn() -> Result<(), String>);

/// Run every embedded check and report each outcome. Never panics on a
/// failing property; failures come back as `passed = false`.
pub fn run_selfcheck() -> Vec<CheckOutcome> {
    let checks: &[Check] = &[
        ("geometry-round-trip", check_geometry_round_trip),
        ("contrastive-oracle", check_contrastive_oracle),
        ("all-positive-zero-loss", check_all_positive_zero_loss),
        (
            "gradient-finite-difference",
            check_gradient_finite_difference,
        ),
        ("grid-conservation", check_grid_conservation),
        ("prompt-template", check_prompt_template),
        ("pooling-prototypes", check_pooling_prototypes),
        ("relevance-rules", check_relevance_rules),
        ("tensor-round-trip", check_tensor_round_trip),
        ("head-save-load", check_head_save_load),
    ];
    checks
        .iter()
        .map(|(name, run)| match run() {
            Ok(()) => CheckOutcome {
                name,
                passed: true,
                detail: String::new(),
            },
            Err(detail) => CheckOutcome {
                name,
                passed: false,
                detail,
            },
        })
        .collect()
}

fn random_camera(rng: &mut ChaCha20Rng) -> CameraParams {
    let axis = Unit::new_normalize(Vector3::new(
        rng.gen_range(-1.0..1.0f64),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    ));
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let fx = rng.gen_range(50.0..500.0);
    let fy = rng.gen_range(50.0..500.0);
    let skew = rng.gen_range(-5.0..5.0);
    let cx = rng.gen_range(10.0..100.0);
    let cy = rng.gen_range(10.0..100.0);
    CameraParams {
        intrinsics: Matrix3::new(fx, skew, cx, 0.0, fy, cy, 0.0, 0.0, 1.0),
        rotation: *Rotation3::from_axis_angle(&axis, angle).matrix(),
        translation: Vector3::new(
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
        ),
        width: 64,
        height: 64,
    }
}

fn check_geometry_round_trip() -> Result<(), String> {
    let mut rng = ChaCha20Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for trial in 0..2_000 {
        let camera = random_camera(&mut rng);
        let u = rng.gen_range(-50.0..114.0);
        let v = rng.gen_range(-50.0..114.0);
        let d = rng.gen_range(0.1..50.0);
        let p = backproject_pixel(&camera, u, v, d).map_err(|e| e.to_string())?;
        let (u2, v2, d2) = project_point(&camera, &p).map_err(|e| e.to_string())?;
        let err = (u - u2).abs().max((v - v2).abs()).max((d - d2).abs());
        worst = worst.max(err);
        if err >= 1e-9 {
            return Err(format!(
                "trial {trial}: round-trip error {err:.3e} exceeds 1e-9"
            ));
        }
    }
    log::debug!("geometry round-trip worst error {worst:.3e}");
    Ok(())
}

fn check_contrastive_oracle() -> Result<(), String> {
    let mut rng = ChaCha20Rng::seed_from_u64(202);
    for trial in 0..200 {
        let n = rng.gen_range(2..=8usize);
        let tau: f64 = rng.gen_range(0.05..1.5);
        let candidates: Vec<ObjectEmbedding> = (0..n)
            .map(|i| ObjectEmbedding {
                object_id: i as u32,
                vector: DVector::from_element(1, rng.gen_range(-30.0..30.0f64) * tau),
                point_count: 1,
            })
            .collect();
        let positive_ids: BTreeSet<u32> = {
            let count = rng.gen_range(1..=n);
            let mut ids: Vec<u32> = (0..n as u32).collect();
            for i in (1..ids.len()).rev() {
                ids.swap(i, rng.gen_range(0..=i));
            }
            ids.truncate(count);
            ids.into_iter().collect()
        };
        let q = DVector::from_element(1, 1.0);
        let batch = ContrastiveBatch {
            query: QueryState::from_vector(q.clone()),
            candidates,
            positive_ids,
            temperature: tau,
        };
        let got = infonce_loss(&batch, &q).map_err(|e| e.to_string())?;

        // Naive scalar oracle; |s| <= 30 keeps exp well inside f64 range.
        let sims: Vec<f64> = batch
            .candidates
            .iter()
            .map(|e| q.dot(&e.vector) / tau)
            .collect();
        let sum_all: f64 = sims.iter().map(|s| s.exp()).sum();
        let sum_pos: f64 = batch
            .candidates
            .iter()
            .zip(&sims)
            .filter(|(e, _)| batch.positive_ids.contains(&e.object_id))
            .map(|(_, s)| s.exp())
            .sum();
        let want = sum_all.ln() - sum_pos.ln();
        let diff = (got - want).abs();
        if diff >= 1e-11 * want.abs().max(1.0) {
            return Err(format!(
                "trial {trial}: loss {got} vs oracle {want} (diff {diff:.3e})"
            ));
        }
    }
    Ok(())
}

fn check_all_positive_zero_loss() -> Result<(), String> {
    let candidates: Vec<ObjectEmbedding> = (0..5)
        .map(|i| ObjectEmbedding {
            object_id: i,
            vector: DVector::from_vec(vec![i as f64, 1.0 - i as f64]),
            point_count: 1,
        })
        .collect();
    let q = DVector::from_vec(vec![0.3, -1.7]);
    let batch = ContrastiveBatch {
        query: QueryState::from_vector(q.clone()),
        positive_ids: candidates.iter().map(|c| c.object_id).collect(),
        candidates,
        temperature: 0.07,
    };
    let loss = infonce_loss(&batch, &q).map_err(|e| e.to_string())?;
    if loss != 0.0 {
        return Err(format!(
            "all-positive loss must be exactly 0.0, got {loss:e}"
        ));
    }
    Ok(())
}

/// Deterministic small head used by the gradient and save/load checks.
fn fixture_head() -> AffinityHead {
    let mut rng = ChaCha20Rng::seed_from_u64(42);
    let mut draw = |rows: usize, cols: usize, scale: f64| {
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let x: f64 = rng.sample(StandardNormal);
                m[(r, c)] = scale * x;
            }
        }
        m
    };
    AffinityHead {
        vocab: ["alpha", "beta", "delta", "epsilon", "gamma"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        word_table: draw(5, 4, 0.5),
        w1: draw(4, 4, 0.5),
        // Offsets keep pre-activations away from the ReLU kink so central
        // finite differences stay valid.
        b1: DVector::from_vec(vec![0.3, 0.5, 0.7, 0.9]),
        w2: draw(4, 4, 0.5),
        b2: DVector::from_vec(vec![0.1, -0.1, 0.2, -0.2]),
        activation: Activation::Relu,
    }
}

fn fixture_batch(head: &AffinityHead) -> ContrastiveBatch {
    let source_rows = vec![0usize, 2];
    let z = mean_rows(head, &source_rows);
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let candidates: Vec<ObjectEmbedding> = (0..3)
        .map(|i| ObjectEmbedding {
            object_id: i,
            vector: DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal)),
            point_count: 1,
        })
        .collect();
    ContrastiveBatch {
        query: QueryState {
            vector: z,
            source_rows,
        },
        candidates,
        positive_ids: BTreeSet::from([0]),
        temperature: 0.25,
    }
}

fn mean_rows(head: &AffinityHead, rows: &[usize]) -> DVector<f64> {
    let mut z = DVector::zeros(head.word_table.ncols());
    for &r in rows {
        z += head.word_table.row(r).transpose();
    }
    z / rows.len() as f64
}

fn check_gradient_finite_difference() -> Result<(), String> {
    let head = fixture_head();
    let batch = fixture_batch(&head);

    // The query vector is re-derived from the (possibly perturbed) table so
    // word-table differences flow through the loss.
    let loss_of = |head: &AffinityHead| -> Result<f64, String> {
        let mut batch = batch.clone();
        batch.query.vector = mean_rows(head, &batch.query.source_rows);
        let q = mlp_forward(head, &batch.query).map_err(|e| e.to_string())?;
        infonce_loss(&batch, &q).map_err(|e| e.to_string())
    };

    let pre = &head.w1 * &batch.query.vector + &head.b1;
    let margin = pre.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
    if margin <= 1e-3 {
        return Err(format!(
            "fixture sits near the activation kink (margin {margin:.3e})"
        ));
    }

    let report = infonce_grad(&batch, &head).map_err(|e| e.to_string())?;
    let h = 1e-5;
    let check = |label: &str, analytic: f64, perturb: &dyn Fn(&mut AffinityHead, f64)| {
        let mut plus = head.clone();
        perturb(&mut plus, h);
        let mut minus = head.clone();
        perturb(&mut minus, -h);
        let numeric = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * h);
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
        if rel >= 1e-5 {
            return Err(format!(
                "{label}: analytic {analytic:e} vs numeric {numeric:e} (rel {rel:.3e})"
            ));
        }
        Ok(())
    };

    for (i, j) in [(0usize, 0usize), (1, 3), (3, 1)] {
        check(
            &format!("w1[{i},{j}]"),
            report.gradients.w1[(i, j)],
            &move |h: &mut AffinityHead, eps: f64| h.w1[(i, j)] += eps,
        )?;
        check(
            &format!("w2[{i},{j}]"),
            report.gradients.w2[(i, j)],
            &move |h: &mut AffinityHead, eps: f64| h.w2[(i, j)] += eps,
        )?;
    }
    for i in 0..4usize {
        check(
            &format!("b1[{i}]"),
            report.gradients.b1[i],
            &move |h, eps| h.b1[i] += eps,
        )?;
        check(
            &format!("b2[{i}]"),
            report.gradients.b2[i],
            &move |h, eps| h.b2[i] += eps,
        )?;
    }
    for (r, c) in [(0usize, 1usize), (2, 3)] {
        check(
            &format!("word_table[{r},{c}]"),
            report.gradients.word_table[(r, c)],
            &move |h: &mut AffinityHead, eps: f64| h.word_table[(r, c)] += eps,
        )?;
    }
    // Rows the query never touched must have structurally zero gradient.
    for r in [1usize, 3, 4] {
        for c in 0..4 {
            if report.gradients.word_table[(r, c)] != 0.0 {
                return Err(format!("untouched table row {r} has nonzero gradient"));
            }
        }
    }
    Ok(())
}

fn check_grid_conservation() -> Result<(), String> {
    let spec = SyntheticSpec {
        num_views: 3,
        num_objects: 12,
        feature_dim: 4,
        category_count: 5,
        noise_sigma: 0.0,
        rng_seed: 9,
    };
    let bundle = make_synthetic_scene(&spec).map_err(|e| e.to_string())?;
    for &size in &ABLATION_SIZES {
        let (rows, cols) = (size, size);
        let grid = build_grid(&bundle.objects, GridLayout::Auto { rows, cols })
            .map_err(|e| e.to_string())?;
        if grid.object_count() != bundle.objects.len() {
            return Err(format!(
                "{rows}x{cols}: grid carries {} names for {} objects",
                grid.object_count(),
                bundle.objects.len()
            ));
        }
    }
    Ok(())
}

fn check_prompt_template() -> Result<(), String> {
    let objects = vec![SceneObject {
        id: 0,
        category: "chair".into(),
        aabb_min: Vector3::new(1.0, 2.0, 0.0),
        aabb_max: Vector3::new(2.0, 3.0, 1.0),
    }];
    let bounds = BevBounds {
        x_min: 0.0,
        x_max: 4.0,
        y_min: 0.0,
        y_max: 4.0,
    };
    let spec = GridSpec::new(4, 4, bounds).map_err(|e| e.to_string())?;
    let grid = build_grid(&objects, GridLayout::Explicit(spec)).map_err(|e| e.to_string())?;
    let got = serialize_grid(&grid);
    let want = "This is a top-down view of a scene divided into a 4 by 4 grid. Each cell\n\
                may contain multiple objects, and the objects are separated by commas. This is an\n\
                abstraction of the scene and might be incomplete.\n\
                At (row=1, col=2), there is: chair,\n";
    if got != want {
        return Err(format!(
            "prompt bytes diverge:\n--- got ---\n{got}\n--- want ---\n{want}"
        ));
    }
    Ok(())
}

fn check_pooling_prototypes() -> Result<(), String> {
    let spec = SyntheticSpec {
        num_views: 4,
        num_objects: 6,
        feature_dim: 8,
        category_count: 4,
        noise_sigma: 0.0,
        rng_seed: 3,
    };
    let bundle = make_synthetic_scene(&spec).map_err(|e| e.to_string())?;
    let embeddings = embed_all_objects(&bundle).map_err(|e| e.to_string())?;
    let mut seen = 0;
    for (embedding, object) in embeddings.iter().zip(&bundle.objects) {
        if embedding.point_count == 0 {
            continue;
        }
        seen += 1;
        let prototype = (0..spec.category_count)
            .map(|i| (crate::scene::category_name(i), i))
            .find(|(name, _)| *name == object.category)
            .map(|(_, i)| category_prototype(i, spec.feature_dim))
            .ok_or_else(|| format!("object category {} has no prototype", object.category))?;
        let err = (&embedding.vector - &prototype).amax();
        if err >= 1e-9 {
            return Err(format!(
                "object {}: pooled embedding off prototype by {err:.3e}",
                object.id
            ));
        }
    }
    if seen == 0 {
        return Err("no object had any pooled point".into());
    }
    Ok(())
}

fn check_relevance_rules() -> Result<(), String> {
    let scene = SceneBundle {
        scene_id: "selfcheck".into(),
        views: vec![],
        objects: ["chair", "chair", "table", "sofa"]
            .iter()
            .enumerate()
            .map(|(i, c)| SceneObject {
                id: i as u32,
                category: c.to_string(),
                aabb_min: Vector3::new(i as f64, 0.0, 0.0),
                aabb_max: Vector3::new(i as f64 + 0.5, 0.5, 0.5),
            })
            .collect(),
    };
    let sample = |kind, answer: Option<&str>, refs: &[(u32, &str)]| TrainingSample {
        dataset_kind: kind,
        question: "where is it".into(),
        answer: answer.map(String::from),
        referenced_object_ids: refs.iter().map(|r| r.0).collect(),
        referenced_object_names: refs.iter().map(|r| r.1.to_string()).collect(),
    };
    let cases: Vec<(TrainingSample, TargetSet)> = vec![
        (
            sample(DatasetKind::Scanrefer, None, &[(2, "table")]),
            TargetSet::positives(vec![2]),
        ),
        (
            sample(DatasetKind::Scan2cap, None, &[(3, "sofa")]),
            TargetSet::positives(vec![3]),
        ),
        (
            sample(
                DatasetKind::Multi3drefer,
                None,
                &[(0, "chair"), (1, "chair")],
            ),
            TargetSet::positives(vec![0, 1]),
        ),
        (
            sample(DatasetKind::Multi3drefer, None, &[]),
            TargetSet::positives(vec![]),
        ),
        (
            sample(
                DatasetKind::Scanqa,
                Some("chair"),
                &[(0, "chair"), (1, "chair")],
            ),
            TargetSet::positives(vec![0, 1]),
        ),
        (
            sample(
                DatasetKind::Scanqa,
                Some("chair"),
                &[(0, "chair"), (2, "table")],
            ),
            TargetSet::skip(),
        ),
        (
            sample(DatasetKind::Sqa3d, Some("kitchen"), &[(0, "chair")]),
            TargetSet::skip(),
        ),
    ];
    for (i, (sample, want)) in cases.iter().enumerate() {
        let got = build_target_set(sample, &scene, SupervisionVariant::GtBoxes)
            .map_err(|e| e.to_string())?;
        if got != *want {
            return Err(format!("case {i}: got {got:?}, want {want:?}"));
        }
        let all = build_target_set(sample, &scene, SupervisionVariant::AllRelatedBoxes)
            .map_err(|e| e.to_string())?;
        if !got.ids.iter().all(|id| all.ids.contains(id)) {
            return Err(format!("case {i}: all_related_boxes is not a superset"));
        }
    }
    // Mention widening: a chair question must pull in both chairs.
    let widened = build_target_set(
        &TrainingSample {
            dataset_kind: DatasetKind::Scanrefer,
            question: "the chair near the window".into(),
            answer: None,
            referenced_object_ids: vec![0],
            referenced_object_names: vec!["chair".into()],
        },
        &scene,
        SupervisionVariant::AllRelatedBoxes,
    )
    .map_err(|e| e.to_string())?;
    if widened.ids != vec![0, 1] {
        return Err(format!(
            "mention widening produced {:?}, want [0, 1]",
            widened.ids
        ));
    }
    Ok(())
}

fn scratch_dir(tag: &str) -> Result<PathBuf, String> {
    let dir = std::env::temp_dir().join(format!("cvp-selfcheck-{}-{tag}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    Ok(dir)
}

fn check_tensor_round_trip() -> Result<(), String> {
    let dir = scratch_dir("tensor")?;
    let path = dir.join("t.cvpt");
    let tensor = Tensor::from_f64(
        vec![2, 3],
        vec![1.0, -2.5, f64::MIN_POSITIVE, 0.0, 1e300, -0.1],
    )
    .map_err(|e| e.to_string())?;
    let result = (|| {
        write_tensor(&path, &tensor).map_err(|e| e.to_string())?;
        let back = read_tensor(&path).map_err(|e| e.to_string())?;
        if back != tensor {
            return Err("tensor changed across write/read".to_string());
        }
        Ok(())
    })();
    let _ = std::fs::remove_dir_all(&dir);
    result
}

fn check_head_save_load() -> Result<(), String> {
    let dir = scratch_dir("head")?;
    let head = fixture_head();
    let result = (|| {
        save_head(&head, &dir).map_err(|e| e.to_string())?;
        let back = load_head(&dir).map_err(|e| e.to_string())?;
        if back != head {
            return Err("head changed across save/load".to_string());
        }
        Ok(())
    })();
    let _ = std::fs::remove_dir_all(&dir);
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_embedded_check_passes() {
        let outcomes = run_selfcheck();
        assert_eq!(outcomes.len(), 10);
        for outcome in &outcomes {
            assert!(
                outcome.passed,
                "{} failed: {}",
                outcome.name, outcome.detail
            );
        }
    }

    #[test]
    fn outcomes_keep_a_stable_order() {
        let names: Vec<_> = run_selfcheck().iter().map(|o| o.name).collect();
        assert_eq!(names[0], "geometry-round-trip");
        assert_eq!(*names.last().unwrap(), "head-save-load");
    }
}
