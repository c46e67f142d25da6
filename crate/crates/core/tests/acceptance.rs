//! Acceptance suite: one test per release criterion, each printing a single
//! PASS/FAIL line (run with `--nocapture` to see the lines on success).
//!
//! 1. Back-projection/projection round trip at 1e-9 over 1e5 random triples.
//! 2. Contrastive loss vs. brute-force softmax oracle at 1e-12 relative.
//! 3. Analytic gradients vs. central finite differences at 1e-5 relative.
//! 4. Grid prompts byte-identical to committed golden files.
//! 5. Grid cell counts conserve the object count at every ablation size.
//! 6. End-to-end synthetic retrieval accuracy, contrastive and regression.
//! 7. Dataset target-set rules on a committed fixture file.
//! 8. Byte-identical CLI reruns (manifests compared without durations).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use cvp_core::affinity::{
    infonce_grad, infonce_loss, mlp_forward, retrieve_topk, train_affinity, Activation,
    AffinityHead, ContrastiveBatch, HeadGradients, LossKind, QueryState, TrainConfig, TrainSample,
};
use cvp_core::geometry::{backproject_pixel, embed_all_objects, project_point};
use cvp_core::grid::{build_grid, serialize_grid, BevBounds, GridLayout, GridSpec, ABLATION_SIZES};
use cvp_core::relevance::{build_target_set, SampleRecord, SupervisionVariant, TargetSet};
use cvp_core::scene::{
    category_groups, make_synthetic_scene, CameraParams, ObjectEmbedding, SceneBundle, SceneObject,
    SyntheticSpec,
};
use cvp_core::text::tokenize;

fn pass(n: usize, name: &str, detail: &str) {
    println!("acceptance criterion {n} ({name}): PASS — {detail}");
}

fn fail(n: usize, name: &str, detail: &str) -> ! {
    println!("acceptance criterion {n} ({name}): FAIL — {detail}");
    panic!("acceptance criterion {n} ({name}) failed: {detail}");
}

// --- criterion 1: geometry round trip -----------------------------------

fn random_camera(rng: &mut ChaCha20Rng) -> CameraParams {
    let axis = Unit::new_normalize(Vector3::new(
        rng.gen_range(-1.0..1.0f64),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    ));
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    CameraParams {
        intrinsics: Matrix3::new(
            rng.gen_range(50.0..500.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(10.0..100.0),
            0.0,
            rng.gen_range(50.0..500.0),
            rng.gen_range(10.0..100.0),
            0.0,
            0.0,
            1.0,
        ),
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

#[test]
fn criterion_1_geometry_round_trip() {
    const N: usize = 100_000;
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for trial in 0..N {
        let camera = random_camera(&mut rng);
        let u = rng.gen_range(-50.0..114.0);
        let v = rng.gen_range(-50.0..114.0);
        let d = rng.gen_range(0.1..50.0);
        let p = backproject_pixel(&camera, u, v, d).unwrap();
        let (u2, v2, d2) = project_point(&camera, &p).unwrap();
        let err = (u - u2).abs().max((v - v2).abs()).max((d - d2).abs());
        worst = worst.max(err);
        if err >= 1e-9 {
            fail(
                1,
                "geometry round trip",
                &format!("trial {trial}: error {err:.3e} exceeds 1e-9"),
            );
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 5.0 {
        fail(
            1,
            "geometry round trip",
            &format!("took {secs:.1}s, budget is 5s"),
        );
    }
    pass(
        1,
        "geometry round trip",
        &format!("max error {worst:.3e} over {N} random triples in {secs:.2}s"),
    );
}

// --- criterion 2: contrastive loss vs. scalar oracle ---------------------

fn unit_query(dim: usize, rng: &mut ChaCha20Rng) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_batch(
    rng: &mut ChaCha20Rng,
    n: usize,
    dim: usize,
    positives: &BTreeSet<u32>,
    temperature: f64,
) -> ContrastiveBatch {
    let candidates = (0..n)
        .map(|i| ObjectEmbedding {
            object_id: i as u32,
            vector: DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0)),
            point_count: 1,
        })
        .collect();
    ContrastiveBatch {
        query: QueryState::from_vector(DVector::zeros(dim)),
        candidates,
        positive_ids: positives.clone(),
        temperature,
    }
}

/// Direct softmax probability oracle: -ln(sum_pos e^s / sum_all e^s) with
/// plain exponentials. Valid while |s| stays well inside f64 exp range.
fn naive_oracle(batch: &ContrastiveBatch, q: &DVector<f64>) -> f64 {
    let mut sum_all = 0.0;
    let mut sum_pos = 0.0;
    for c in &batch.candidates {
        let e = (q.dot(&c.vector) / batch.temperature).exp();
        sum_all += e;
        if batch.positive_ids.contains(&c.object_id) {
            sum_pos += e;
        }
    }
    -(sum_pos / sum_all).ln()
}

/// Standard max-shifted softmax cross-entropy against one target index.
fn cross_entropy_oracle(batch: &ContrastiveBatch, q: &DVector<f64>, target: u32) -> f64 {
    let sims: Vec<f64> = batch
        .candidates
        .iter()
        .map(|c| q.dot(&c.vector) / batch.temperature)
        .collect();
    let target_sim = batch
        .candidates
        .iter()
        .zip(&sims)
        .find(|(c, _)| c.object_id == target)
        .map(|(_, s)| *s)
        .unwrap();
    let max = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + sims.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    lse - target_sim
}

#[test]
fn criterion_2_contrastive_oracle() {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let mut max_rel = 0.0f64;

    // General multi-positive batches against the plain-exponential oracle.
    // Batches whose loss is below 1e-2 are redrawn: near p = 1 the oracle's
    // own -ln(p) cancellation noise exceeds the 1e-12 comparison budget,
    // and the loss-zero regime is covered exactly by the all-positive check.
    let mut checked = 0;
    while checked < 1000 {
        let n = rng.gen_range(2..=8usize);
        let dim = rng.gen_range(2..=4usize);
        let tau = rng.gen_range(0.05..1.5);
        let n_pos = rng.gen_range(1..n);
        let mut ids: Vec<u32> = (0..n as u32).collect();
        for i in (1..ids.len()).rev() {
            ids.swap(i, rng.gen_range(0..=i));
        }
        let positives: BTreeSet<u32> = ids[..n_pos].iter().copied().collect();
        let batch = random_batch(&mut rng, n, dim, &positives, tau);
        let q = unit_query(dim, &mut rng);

        let want = naive_oracle(&batch, &q);
        if want < 1e-2 {
            continue;
        }
        let got = infonce_loss(&batch, &q).unwrap();
        let rel = (got - want).abs() / want.abs();
        max_rel = max_rel.max(rel);
        if rel >= 1e-12 {
            fail(
                2,
                "contrastive oracle",
                &format!("batch {checked}: loss {got} vs oracle {want}, rel {rel:.3e}"),
            );
        }
        checked += 1;
    }

    // Single-positive batches must equal standard softmax cross-entropy.
    let mut ce_checked = 0;
    let mut max_ce_rel = 0.0f64;
    while ce_checked < 300 {
        let n = rng.gen_range(2..=8usize);
        let dim = rng.gen_range(2..=4usize);
        let tau = rng.gen_range(0.05..1.5);
        let target = rng.gen_range(0..n) as u32;
        let positives = BTreeSet::from([target]);
        let batch = random_batch(&mut rng, n, dim, &positives, tau);
        let q = unit_query(dim, &mut rng);
        let want = cross_entropy_oracle(&batch, &q, target);
        if want < 1e-2 {
            continue;
        }
        let got = infonce_loss(&batch, &q).unwrap();
        let rel = (got - want).abs() / want.abs();
        max_ce_rel = max_ce_rel.max(rel);
        if rel >= 1e-12 {
            fail(
                2,
                "contrastive oracle",
                &format!("single-positive batch {ce_checked}: loss {got} vs cross-entropy {want}, rel {rel:.3e}"),
            );
        }
        ce_checked += 1;
    }

    // All-positive batches must produce exactly zero.
    for i in 0..100 {
        let n = rng.gen_range(1..=8usize);
        let dim = rng.gen_range(2..=4usize);
        let tau = rng.gen_range(0.05..1.5);
        let positives: BTreeSet<u32> = (0..n as u32).collect();
        let batch = random_batch(&mut rng, n, dim, &positives, tau);
        let q = unit_query(dim, &mut rng);
        let got = infonce_loss(&batch, &q).unwrap();
        if got != 0.0 {
            fail(
                2,
                "contrastive oracle",
                &format!("all-positive batch {i}: loss {got:e}, expected exactly 0"),
            );
        }
    }

    pass(
        2,
        "contrastive oracle",
        &format!(
            "1000 batches rel ≤ {max_rel:.3e}, 300 cross-entropy batches rel ≤ {max_ce_rel:.3e}, 100 all-positive losses exactly 0"
        ),
    );
}

// --- criterion 3: analytic gradients vs. finite differences --------------

#[derive(Clone, Copy)]
enum Slot {
    Table(usize, usize),
    W1(usize, usize),
    B1(usize),
    W2(usize, usize),
    B2(usize),
}

fn all_slots(head: &AffinityHead) -> Vec<Slot> {
    let mut slots = Vec::new();
    for r in 0..head.word_table.nrows() {
        for c in 0..head.word_table.ncols() {
            slots.push(Slot::Table(r, c));
        }
    }
    for r in 0..head.w1.nrows() {
        for c in 0..head.w1.ncols() {
            slots.push(Slot::W1(r, c));
        }
    }
    for i in 0..head.b1.len() {
        slots.push(Slot::B1(i));
    }
    for r in 0..head.w2.nrows() {
        for c in 0..head.w2.ncols() {
            slots.push(Slot::W2(r, c));
        }
    }
    for i in 0..head.b2.len() {
        slots.push(Slot::B2(i));
    }
    slots
}

fn slot_mut(head: &mut AffinityHead, slot: Slot) -> &mut f64 {
    match slot {
        Slot::Table(r, c) => &mut head.word_table[(r, c)],
        Slot::W1(r, c) => &mut head.w1[(r, c)],
        Slot::B1(i) => &mut head.b1[i],
        Slot::W2(r, c) => &mut head.w2[(r, c)],
        Slot::B2(i) => &mut head.b2[i],
    }
}

fn slot_grad(grads: &HeadGradients, slot: Slot) -> f64 {
    match slot {
        Slot::Table(r, c) => grads.word_table[(r, c)],
        Slot::W1(r, c) => grads.w1[(r, c)],
        Slot::B1(i) => grads.b1[i],
        Slot::W2(r, c) => grads.w2[(r, c)],
        Slot::B2(i) => grads.b2[i],
    }
}

fn random_head(rng: &mut ChaCha20Rng, activation: Activation) -> (AffinityHead, Vec<String>) {
    const WORDS: &[&str] = &[
        "box", "chair", "door", "lamp", "shelf", "sofa", "table", "vase",
    ];
    let input = rng.gen_range(3..=5usize);
    let hidden = rng.gen_range(3..=6usize);
    let output = rng.gen_range(3..=5usize);
    let vocab_len = rng.gen_range(3..=WORDS.len());
    let vocab: Vec<String> = WORDS[..vocab_len].iter().map(|w| w.to_string()).collect();
    let head = AffinityHead {
        word_table: DMatrix::from_fn(vocab_len, input, |_, _| rng.gen_range(-1.0..1.0)),
        vocab,
        w1: DMatrix::from_fn(hidden, input, |_, _| rng.gen_range(-0.8..0.8)),
        b1: DVector::from_fn(hidden, |_, _| rng.gen_range(-0.5..0.5)),
        w2: DMatrix::from_fn(output, hidden, |_, _| rng.gen_range(-0.8..0.8)),
        b2: DVector::from_fn(output, |_, _| rng.gen_range(-0.5..0.5)),
        activation,
    };
    let n_tokens = rng.gen_range(1..=3usize);
    let tokens: Vec<String> = (0..n_tokens)
        .map(|_| head.vocab[rng.gen_range(0..head.vocab.len())].clone())
        .collect();
    (head, tokens)
}

#[test]
fn criterion_3_gradient_fidelity() {
    const H: f64 = 1e-5;
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut max_rel = 0.0f64;
    let mut measured = 0usize;

    for trial in 0..100 {
        // Alternate activations; for the kinked one, resample until every
        // hidden pre-activation clears the kink by a margin far larger than
        // any H-sized parameter perturbation can move it.
        let activation = if trial % 2 == 0 {
            Activation::Relu
        } else {
            Activation::Identity
        };
        let (head, tokens, batch) = loop {
            let (head, tokens) = random_head(&mut rng, activation);
            let n = rng.gen_range(2..=8usize);
            let n_pos = rng.gen_range(1..=n);
            let positives: BTreeSet<u32> = (0..n_pos as u32).collect();
            let tau = rng.gen_range(0.5..1.5);
            let mut batch = random_batch(&mut rng, n, head.output_dim(), &positives, tau);
            let z = head.encode_query(&tokens).unwrap();
            let pre = &head.w1 * &z.vector + &head.b1;
            batch.query = z;
            if activation == Activation::Identity || pre.iter().all(|p| p.abs() > 1e-3) {
                break (head, tokens, batch);
            }
        };

        let report = infonce_grad(&batch, &head).unwrap();
        let loss_of = |head: &AffinityHead| -> f64 {
            let z = head.encode_query(&tokens).unwrap();
            let q = mlp_forward(head, &z).unwrap();
            infonce_loss(&batch, &q).unwrap()
        };

        for slot in all_slots(&head) {
            let mut plus = head.clone();
            *slot_mut(&mut plus, slot) += H;
            let mut minus = head.clone();
            *slot_mut(&mut minus, slot) -= H;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * H);
            let analytic = slot_grad(&report.gradients, slot);

            let denom = analytic.abs().max(fd.abs());
            if denom >= 1e-3 {
                let rel = (analytic - fd).abs() / denom;
                max_rel = max_rel.max(rel);
                measured += 1;
                if rel >= 1e-5 {
                    fail(
                        3,
                        "gradient fidelity",
                        &format!(
                            "trial {trial}: analytic {analytic:.9e} vs fd {fd:.9e}, rel {rel:.3e}"
                        ),
                    );
                }
            } else if (analytic - fd).abs() >= 1e-7 {
                // Near-zero slots (for instance behind an inactive hidden
                // unit): the difference must vanish to finite-difference
                // noise even though a ratio of two zeros is meaningless.
                fail(
                    3,
                    "gradient fidelity",
                    &format!(
                        "trial {trial}: near-zero slot analytic {analytic:.3e} vs fd {fd:.3e}"
                    ),
                );
            }
        }
    }

    let secs = start.elapsed().as_secs_f64();
    if secs >= 30.0 {
        fail(
            3,
            "gradient fidelity",
            &format!("took {secs:.1}s, budget is 30s"),
        );
    }
    pass(
        3,
        "gradient fidelity",
        &format!("max relative error {max_rel:.3e} over {measured} measurable slots in 100 trials ({secs:.1}s)"),
    );
}

// --- criterion 4: golden prompt files ------------------------------------

fn obj(id: u32, category: &str, min: [f64; 3], max: [f64; 3]) -> SceneObject {
    SceneObject {
        id,
        category: category.to_string(),
        aabb_min: Vector3::new(min[0], min[1], min[2]),
        aabb_max: Vector3::new(max[0], max[1], max[2]),
    }
}

fn golden_scenes() -> Vec<(&'static str, Vec<SceneObject>, GridLayout)> {
    let bounds_2 = BevBounds {
        x_min: 0.0,
        x_max: 1.0,
        y_min: 0.0,
        y_max: 1.0,
    };
    let bounds_4 = BevBounds {
        x_min: 0.0,
        x_max: 4.0,
        y_min: 0.0,
        y_max: 4.0,
    };
    let bounds_3 = BevBounds {
        x_min: 0.0,
        x_max: 3.0,
        y_min: 0.0,
        y_max: 3.0,
    };
    vec![
        (
            "empty_2x2.txt",
            vec![],
            GridLayout::Explicit(GridSpec::new(2, 2, bounds_2).unwrap()),
        ),
        (
            "single_4x4.txt",
            vec![obj(0, "chair", [2.0, 1.0, 0.0], [3.0, 2.0, 1.0])],
            GridLayout::Explicit(GridSpec::new(4, 4, bounds_4).unwrap()),
        ),
        (
            "crowded_3x3.txt",
            vec![
                obj(0, "bed", [2.8, 2.8, 0.0], [3.0, 3.0, 1.0]),
                obj(1, "chair", [0.1, 0.2, 0.0], [0.7, 1.0, 0.5]),
                obj(2, "sofa", [2.0, 0.0, 0.0], [3.0, 1.0, 1.0]),
                obj(3, "chair", [0.1, 0.05, 0.0], [0.3, 0.15, 0.4]),
                obj(4, "lamp", [1.4, 2.4, 0.0], [1.6, 2.6, 2.0]),
                obj(5, "table", [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]),
                // Center outside the bounds: clamps into the nearest edge cell.
                obj(6, "rug", [3.2, -0.5, 0.0], [3.8, 0.1, 0.05]),
            ],
            GridLayout::Explicit(GridSpec::new(3, 3, bounds_3).unwrap()),
        ),
    ]
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

#[test]
fn criterion_4_prompt_byte_exactness() {
    for (file, objects, layout) in golden_scenes() {
        let grid = build_grid(&objects, layout).unwrap();
        let got = serialize_grid(&grid);
        let want = std::fs::read_to_string(golden_dir().join(file)).unwrap();
        if got != want {
            fail(
                4,
                "prompt byte exactness",
                &format!("{file}: serialized prompt differs from golden file\n--- got ---\n{got}\n--- want ---\n{want}"),
            );
        }
    }
    pass(
        4,
        "prompt byte exactness",
        "3 golden prompts byte-identical (empty, single-object, multi-object-per-cell)",
    );
}

// --- criterion 5: grid conservation --------------------------------------

#[test]
fn criterion_5_grid_conservation() {
    let mut tested = 0;
    // The hand-built golden scenes keep their explicit bounds rescaled to
    // each ablation size; synthetic scenes use fitted bounds.
    for (_, objects, layout) in golden_scenes() {
        let bounds = match layout {
            GridLayout::Explicit(spec) => spec.bounds(),
            GridLayout::Auto { .. } => unreachable!(),
        };
        for &size in &ABLATION_SIZES {
            let spec = GridSpec::new(size, size, bounds).unwrap();
            let grid = build_grid(&objects, GridLayout::Explicit(spec)).unwrap();
            if grid.object_count() != objects.len() {
                fail(
                    5,
                    "grid conservation",
                    &format!(
                        "golden scene at {size}x{size}: {} names placed, {} objects",
                        grid.object_count(),
                        objects.len()
                    ),
                );
            }
            tested += 1;
        }
    }
    for i in 0..10 {
        let bundle = make_synthetic_scene(&SyntheticSpec {
            num_views: 1,
            num_objects: 5 + 3 * i,
            feature_dim: 4,
            category_count: 5,
            noise_sigma: 0.0,
            rng_seed: 900 + i as u64,
        })
        .unwrap();
        for &size in &ABLATION_SIZES {
            let grid = build_grid(
                &bundle.objects,
                GridLayout::Auto {
                    rows: size,
                    cols: size,
                },
            )
            .unwrap();
            if grid.object_count() != bundle.objects.len() {
                fail(
                    5,
                    "grid conservation",
                    &format!(
                        "scene {} at {size}x{size}: {} names placed, {} objects",
                        bundle.scene_id,
                        grid.object_count(),
                        bundle.objects.len()
                    ),
                );
            }
            tested += 1;
        }
    }
    pass(
        5,
        "grid conservation",
        &format!("object counts conserved across {tested} scene/size combinations"),
    );
}

// --- criterion 6: end-to-end synthetic retrieval --------------------------

fn suite_scene(seed: u64, index: usize) -> SceneBundle {
    make_synthetic_scene(&SyntheticSpec {
        num_views: 3,
        num_objects: 8 + (index % 17),
        feature_dim: 8,
        category_count: 6,
        noise_sigma: 0.05,
        rng_seed: seed,
    })
    .unwrap()
}

fn suite_samples(bundle: &SceneBundle) -> Vec<TrainSample<'_>> {
    category_groups(bundle)
        .into_iter()
        .map(|(category, ids)| TrainSample {
            query_tokens: tokenize(&category),
            scene: bundle,
            target: TargetSet::positives(ids),
        })
        .collect()
}

fn heldout_top1(head: &AffinityHead, scenes: &[SceneBundle]) -> f64 {
    let mut total = 0usize;
    let mut correct = 0usize;
    for scene in scenes {
        let embeddings = embed_all_objects(scene).unwrap();
        let candidates: Vec<ObjectEmbedding> = embeddings
            .into_iter()
            .filter(|e| !e.is_sentinel())
            .collect();
        for (category, _) in category_groups(scene) {
            let z = head.encode_query(&tokenize(&category)).unwrap();
            let q = mlp_forward(head, &z).unwrap();
            let top = retrieve_topk(&q, &candidates, 1).unwrap()[0].0;
            total += 1;
            if scene.objects.iter().find(|o| o.id == top).unwrap().category == category {
                correct += 1;
            }
        }
    }
    correct as f64 / total as f64
}

#[test]
fn criterion_6_synthetic_retrieval() {
    let start = Instant::now();
    let train_scenes: Vec<SceneBundle> =
        (0..50).map(|i| suite_scene(10_000 + i as u64, i)).collect();
    let test_scenes: Vec<SceneBundle> =
        (0..20).map(|i| suite_scene(50_000 + i as u64, i)).collect();
    let samples: Vec<TrainSample> = train_scenes.iter().flat_map(suite_samples).collect();

    let infonce_config = TrainConfig {
        lr: 0.05,
        steps: 2000,
        temperature: 0.07,
        seed: 0,
        loss_kind: LossKind::InfoNce,
    };
    let head = train_affinity(&samples, &infonce_config).unwrap();
    let accuracy = heldout_top1(&head, &test_scenes);

    let mse_config = TrainConfig {
        loss_kind: LossKind::Mse,
        ..infonce_config
    };
    let mse_head = train_affinity(&samples, &mse_config).unwrap();
    let mse_accuracy = heldout_top1(&mse_head, &test_scenes);

    let secs = start.elapsed().as_secs_f64();
    if accuracy < 0.95 {
        fail(
            6,
            "synthetic retrieval",
            &format!("contrastive top-1 {accuracy:.3} is below 0.95"),
        );
    }
    if mse_accuracy < 0.80 {
        fail(
            6,
            "synthetic retrieval",
            &format!("regression top-1 {mse_accuracy:.3} is below 0.80"),
        );
    }
    if secs >= 60.0 {
        fail(
            6,
            "synthetic retrieval",
            &format!("took {secs:.1}s, budget is 60s"),
        );
    }
    pass(
        6,
        "synthetic retrieval",
        &format!("contrastive top-1 {accuracy:.3} (≥ 0.95), regression top-1 {mse_accuracy:.3} (≥ 0.80), {secs:.1}s total"),
    );
}

// --- criterion 7: dataset target-set rules --------------------------------

#[test]
fn criterion_7_relevance_rules() {
    let scene = SceneBundle {
        scene_id: "fixture_scene".to_string(),
        views: vec![],
        objects: vec![
            obj(0, "chair", [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]),
            obj(1, "chair", [2.0, 0.0, 0.0], [3.0, 1.0, 1.0]),
            obj(2, "table", [0.0, 2.0, 0.0], [1.0, 3.0, 1.0]),
            obj(3, "sofa", [2.0, 2.0, 0.0], [3.0, 3.0, 1.0]),
            obj(4, "trash can", [4.0, 0.0, 0.0], [4.5, 0.5, 0.8]),
        ],
    };

    let text = std::fs::read_to_string(golden_dir().join("relevance_fixture.jsonl")).unwrap();
    let records: Vec<SampleRecord> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();

    let expected_gt = [
        TargetSet::positives(vec![0]),
        TargetSet::positives(vec![3]),
        TargetSet::positives(vec![0, 1]),
        TargetSet::positives(vec![]),
        TargetSet::positives(vec![2]),
        TargetSet::positives(vec![0, 1]),
        TargetSet::skip(),
        TargetSet::skip(),
    ];
    let expected_related = [
        TargetSet::positives(vec![0, 1, 2]),
        TargetSet::positives(vec![3]),
        TargetSet::positives(vec![0, 1, 4]),
        TargetSet::positives(vec![]),
        TargetSet::positives(vec![2]),
        TargetSet::positives(vec![0, 1]),
        TargetSet::skip(),
        TargetSet::skip(),
    ];
    if records.len() != expected_gt.len() {
        fail(
            7,
            "relevance rules",
            &format!(
                "fixture has {} samples, expected {}",
                records.len(),
                expected_gt.len()
            ),
        );
    }

    for (i, record) in records.iter().enumerate() {
        let gt = build_target_set(&record.sample, &scene, SupervisionVariant::GtBoxes).unwrap();
        let related =
            build_target_set(&record.sample, &scene, SupervisionVariant::AllRelatedBoxes).unwrap();
        if gt != expected_gt[i] {
            fail(
                7,
                "relevance rules",
                &format!(
                    "sample {i} ({:?}): gt_boxes {gt:?}, expected {:?}",
                    record.sample.dataset_kind, expected_gt[i]
                ),
            );
        }
        if related != expected_related[i] {
            fail(
                7,
                "relevance rules",
                &format!(
                    "sample {i} ({:?}): all_related_boxes {related:?}, expected {:?}",
                    record.sample.dataset_kind, expected_related[i]
                ),
            );
        }
        let superset = if gt.is_skip() {
            related.is_skip()
        } else {
            !related.is_skip() && gt.ids.iter().all(|id| related.ids.contains(id))
        };
        if !superset {
            fail(
                7,
                "relevance rules",
                &format!("sample {i}: all_related_boxes is not a superset of gt_boxes"),
            );
        }
    }
    pass(
        7,
        "relevance rules",
        &format!(
            "{} fixture samples resolve exactly; widened variant is a superset on each",
            records.len()
        ),
    );
}

// --- criterion 8: CLI determinism ------------------------------------------

fn run_cli(root: &Path, args: &[&str]) -> String {
    let output = Command::new(env!("CARGO_BIN_EXE_cvp"))
        .current_dir(root)
        .args(args)
        .output()
        .unwrap();
    if !output.status.success() {
        fail(
            8,
            "cli determinism",
            &format!(
                "`cvp {}` exited with {:?}: {}",
                args.join(" "),
                output.status.code(),
                String::from_utf8_lossy(&output.stderr)
            ),
        );
    }
    String::from_utf8(output.stdout).unwrap()
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(root, &path, out);
        } else {
            out.push(path.strip_prefix(root).unwrap().to_path_buf());
        }
    }
}

fn is_manifest(path: &Path) -> bool {
    let name = path.file_name().unwrap().to_string_lossy();
    name == "manifest.json" || name.ends_with(".manifest.json")
}

/// The run manifest's duration is wall-clock time and is the one field
/// allowed to differ between otherwise identical runs.
fn manifest_without_duration(bytes: &[u8]) -> serde_json::Value {
    let mut value: serde_json::Value = serde_json::from_slice(bytes).unwrap();
    value.as_object_mut().unwrap().remove("duration_seconds");
    value
}

#[test]
fn criterion_8_cli_determinism() {
    let scratch = tempfile::tempdir().unwrap();
    let root_a = scratch.path().join("a");
    let root_b = scratch.path().join("b");
    std::fs::create_dir_all(&root_a).unwrap();
    std::fs::create_dir_all(&root_b).unwrap();

    let scene = "data/synthetic_0000000000000005";
    let commands: Vec<Vec<&str>> = vec![
        vec![
            "gen-scene",
            "--out",
            "data",
            "--seed",
            "5",
            "--count",
            "3",
            "--objects",
            "9",
            "--categories",
            "4",
        ],
        vec!["backproject", "--scene", scene, "--out", "cloud"],
        vec!["embed-objects", "--scene", scene, "--out", "emb"],
        vec![
            "build-grid",
            "--scene",
            scene,
            "--rows",
            "6",
            "--cols",
            "6",
            "--out",
            "grid.txt",
        ],
        vec![
            "build-targets",
            "--samples",
            "data/samples.jsonl",
            "--scene-root",
            "data",
            "--variant",
            "all_related_boxes",
            "--out",
            "targets.jsonl",
        ],
        vec![
            "train-affinity",
            "--data",
            "data",
            "--steps",
            "200",
            "--seed",
            "0",
            "--out",
            "head",
        ],
        vec![
            "retrieve",
            "--scene",
            scene,
            "--head",
            "head",
            "--query",
            "chair",
            "--k",
            "3",
            "--csv",
            "ranking.csv",
        ],
        vec!["ablate-grid", "--scene", scene, "--out", "ablate"],
        vec!["selfcheck"],
    ];

    for args in &commands {
        let stdout_a = run_cli(&root_a, args);
        let stdout_b = run_cli(&root_b, args);
        if stdout_a != stdout_b {
            fail(
                8,
                "cli determinism",
                &format!("`cvp {}` stdout differs between runs:\n--- a ---\n{stdout_a}\n--- b ---\n{stdout_b}", args.join(" ")),
            );
        }
    }

    let mut files_a = Vec::new();
    let mut files_b = Vec::new();
    collect_files(&root_a, &root_a, &mut files_a);
    collect_files(&root_b, &root_b, &mut files_b);
    files_a.sort();
    files_b.sort();
    if files_a != files_b {
        fail(
            8,
            "cli determinism",
            &format!("file sets differ: {files_a:?} vs {files_b:?}"),
        );
    }

    let mut manifests = 0;
    for rel in &files_a {
        let bytes_a = std::fs::read(root_a.join(rel)).unwrap();
        let bytes_b = std::fs::read(root_b.join(rel)).unwrap();
        if is_manifest(rel) {
            manifests += 1;
            if manifest_without_duration(&bytes_a) != manifest_without_duration(&bytes_b) {
                fail(
                    8,
                    "cli determinism",
                    &format!("{} differs beyond duration_seconds", rel.display()),
                );
            }
        } else if bytes_a != bytes_b {
            fail(
                8,
                "cli determinism",
                &format!("{} differs between runs", rel.display()),
            );
        }
    }
    pass(
        8,
        "cli determinism",
        &format!(
            "{} commands rerun byte-identically across {} files ({} manifests compared without durations)",
            commands.len(),
            files_a.len(),
            manifests
        ),
    );
}
