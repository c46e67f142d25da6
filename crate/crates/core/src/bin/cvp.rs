//! `cvp` — command-line front end for the scene-understanding pipeline.
//!
//! Subcommands cover the full flow: generate synthetic scenes, lift views
//! into point clouds, pool per-object embeddings, render bird's-eye-view
//! text prompts, resolve per-sample target sets, train the target-affinity
//! head, and rank objects against a text query. Every command that writes
//! an artifact also writes a run manifest (command, config, input/output
//! hashes) next to it; set `CVP_LOG=debug|info|error` for verbosity.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use cvp_core::affinity::{
    load_head, mlp_forward, retrieve_topk, save_head, train_affinity_from_dir, LossKind,
    TrainConfig,
};
use cvp_core::geometry::{aggregate_views, embed_all_objects};
use cvp_core::grid::{
    build_grid, serialize_grid, AllocentricGrid, BevBounds, GridLayout, GridSpec, ABLATION_SIZES,
};
use cvp_core::manifest::{manifest_path_for, RunManifest};
use cvp_core::relevance::{
    build_target_set, read_sample_records, SampleRecord, SupervisionVariant, TargetRecord,
};
use cvp_core::scene::{
    load_scene, load_scene_map, make_synthetic_scene, save_scene, SceneBundle, SyntheticSpec,
};
use cvp_core::selfcheck::run_selfcheck;
use cvp_core::tensor::{write_tensor, Tensor};
use cvp_core::text::tokenize;
use cvp_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "cvp",
    version,
    about = "3D scene understanding toolkit: back-projection, BEV prompts, affinity training, retrieval"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scene directories (and a samples file for training)
    GenScene(GenSceneArgs),
    /// Back-project every view of a scene into a world-frame point cloud
    Backproject(BackprojectArgs),
    /// Pool per-object embeddings from a scene's back-projected features
    EmbedObjects(EmbedObjectsArgs),
    /// Render the bird's-eye-view grid prompt for a scene
    BuildGrid(BuildGridArgs),
    /// Resolve dataset samples into per-sample target object sets
    BuildTargets(BuildTargetsArgs),
    /// Train the target-affinity head on a generated data directory
    TrainAffinity(TrainAffinityArgs),
    /// Rank a scene's objects against a text query with a trained head
    Retrieve(RetrieveArgs),
    /// Sweep the grid resolution and emit one prompt plus token counts per size
    AblateGrid(AblateGridArgs),
    /// Run the embedded invariant suite and print pass/fail per property
    Selfcheck,
}

#[derive(Args)]
struct GenSceneArgs {
    /// Output directory (the scene directory itself, or the parent of one
    /// directory per scene with --count > 1)
    #[arg(long)]
    out: PathBuf,
    /// Base RNG seed; scene i uses seed + i
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of scenes to generate
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Camera views per scene
    #[arg(long, default_value_t = 3)]
    views: usize,
    /// Objects per scene
    #[arg(long, default_value_t = 8)]
    objects: usize,
    /// Feature channels per pixel
    #[arg(long, default_value_t = 8)]
    feature_dim: usize,
    /// Distinct object categories to draw from
    #[arg(long, default_value_t = 4)]
    categories: usize,
    /// Gaussian noise added to each feature channel
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
}

#[derive(Args)]
struct BackprojectArgs {
    /// Scene directory
    #[arg(long)]
    scene: PathBuf,
    /// Output directory for positions.cvpt (N x 3) and features.cvpt (N x C)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EmbedObjectsArgs {
    /// Scene directory
    #[arg(long)]
    scene: PathBuf,
    /// Output directory for embeddings.cvpt (K x C) and objects.json
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildGridArgs {
    /// Scene directory
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    /// Explicit BEV bounds as x_min,x_max,y_min,y_max (default: fitted to
    /// the scene's object centers)
    #[arg(long, value_name = "X0,X1,Y0,Y1", allow_hyphen_values = true)]
    bounds: Option<String>,
    /// Write the prompt here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildTargetsArgs {
    /// Samples file (JSON lines, one sample per line)
    #[arg(long)]
    samples: PathBuf,
    /// Directory containing one scene directory per scene_id
    #[arg(long)]
    scene_root: PathBuf,
    /// Which objects count as positives
    #[arg(long, default_value = "gt_boxes")]
    variant: String,
    /// Output targets file (JSON lines)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainAffinityArgs {
    /// Data directory: samples.jsonl plus one scene directory per scene_id
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0.07)]
    tau: f64,
    /// Loss to train with: infonce or mse
    #[arg(long, default_value = "infonce")]
    loss: String,
    /// Which objects count as positives when resolving targets
    #[arg(long, default_value = "gt_boxes")]
    variant: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output head directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RetrieveArgs {
    /// Scene directory
    #[arg(long)]
    scene: PathBuf,
    /// Trained head directory
    #[arg(long)]
    head: PathBuf,
    /// Query text
    #[arg(long)]
    query: String,
    /// How many results to print
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Also write the full ranking as CSV (rank,object_id,category,similarity)
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct AblateGridArgs {
    /// Scene directory
    #[arg(long)]
    scene: PathBuf,
    /// Output directory for prompt_{R}x{C}.txt files and token_counts.csv
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CVP_LOG", "error")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenScene(args) => gen_scene(args),
        Command::Backproject(args) => backproject(args),
        Command::EmbedObjects(args) => embed_objects(args),
        Command::BuildGrid(args) => build_grid_cmd(args),
        Command::BuildTargets(args) => build_targets(args),
        Command::TrainAffinity(args) => train_affinity_cmd(args),
        Command::Retrieve(args) => retrieve(args),
        Command::AblateGrid(args) => ablate_grid(args),
        Command::Selfcheck => selfcheck(),
    }
}

fn gen_scene(args: GenSceneArgs) -> Result<()> {
    let start = Instant::now();
    if args.count == 0 {
        return Err(Error::InvalidArgument("--count must be at least 1".into()));
    }
    let config = json!({
        "seed": args.seed,
        "count": args.count,
        "views": args.views,
        "objects": args.objects,
        "feature_dim": args.feature_dim,
        "categories": args.categories,
        "noise": args.noise,
    });
    let mut manifest = RunManifest::new("gen-scene", config);

    let spec_for = |seed: u64| SyntheticSpec {
        num_views: args.views,
        num_objects: args.objects,
        feature_dim: args.feature_dim,
        category_count: args.categories,
        noise_sigma: args.noise,
        rng_seed: seed,
    };

    if args.count == 1 {
        let bundle = make_synthetic_scene(&spec_for(args.seed))?;
        save_scene(&bundle, &args.out)?;
        log::info!("wrote scene {} to {}", bundle.scene_id, args.out.display());
    } else {
        let mut samples = String::new();
        for i in 0..args.count {
            let bundle = make_synthetic_scene(&spec_for(args.seed + i as u64))?;
            save_scene(&bundle, &args.out.join(&bundle.scene_id))?;
            for record in scene_sample_records(&bundle) {
                samples.push_str(
                    &serde_json::to_string(&record).map_err(|e| Error::Config(e.to_string()))?,
                );
                samples.push('\n');
            }
            log::info!("wrote scene {}", bundle.scene_id);
        }
        let samples_path = args.out.join("samples.jsonl");
        std::fs::write(&samples_path, samples).map_err(|e| Error::io(&samples_path, e))?;
    }
    manifest.add_output(&args.out)?;
    finish_manifest(manifest, start, &manifest_path_for(&args.out))
}

/// One retrieval-style sample per category group: the query names the
/// category, the positives are every object of that category.
fn scene_sample_records(bundle: &SceneBundle) -> Vec<SampleRecord> {
    use cvp_core::relevance::{DatasetKind, TrainingSample};
    cvp_core::scene::category_groups(bundle)
        .into_iter()
        .map(|(category, ids)| SampleRecord {
            scene_id: bundle.scene_id.clone(),
            sample: TrainingSample {
                dataset_kind: DatasetKind::Multi3drefer,
                question: category.clone(),
                answer: None,
                referenced_object_names: vec![category; ids.len()],
                referenced_object_ids: ids,
            },
        })
        .collect()
}

fn backproject(args: BackprojectArgs) -> Result<()> {
    let start = Instant::now();
    let mut manifest = RunManifest::new(
        "backproject",
        json!({"scene": args.scene.display().to_string()}),
    );
    manifest.add_input(&args.scene)?;

    let bundle = load_scene(&args.scene)?;
    let cloud = aggregate_views(&bundle)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let n = cloud.len();
    let mut positions = Vec::with_capacity(n * 3);
    for p in cloud.positions() {
        positions.extend_from_slice(&[p.x, p.y, p.z]);
    }
    write_tensor(
        &args.out.join("positions.cvpt"),
        &Tensor::from_f64(vec![n as u64, 3], positions)?,
    )?;
    write_tensor(
        &args.out.join("features.cvpt"),
        &Tensor::from_f64(
            vec![n as u64, cloud.feature_dim() as u64],
            cloud.feature_values().to_vec(),
        )?,
    )?;
    println!("{n} points from {} views", bundle.views.len());

    manifest.add_output(&args.out)?;
    finish_manifest(manifest, start, &manifest_path_for(&args.out))
}

fn embed_objects(args: EmbedObjectsArgs) -> Result<()> {
    let start = Instant::now();
    let mut manifest = RunManifest::new(
        "embed-objects",
        json!({"scene": args.scene.display().to_string()}),
    );
    manifest.add_input(&args.scene)?;

    let bundle = load_scene(&args.scene)?;
    let embeddings = embed_all_objects(&bundle)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let dim = bundle.feature_dim();
    let mut values = Vec::with_capacity(embeddings.len() * dim);
    for e in &embeddings {
        values.extend(e.vector.iter());
    }
    write_tensor(
        &args.out.join("embeddings.cvpt"),
        &Tensor::from_f64(vec![embeddings.len() as u64, dim as u64], values)?,
    )?;

    let meta: Vec<serde_json::Value> = embeddings
        .iter()
        .zip(&bundle.objects)
        .map(|(e, o)| {
            json!({
                "id": o.id,
                "category": o.category,
                "point_count": e.point_count,
            })
        })
        .collect();
    let meta_path = args.out.join("objects.json");
    let mut body = serde_json::to_string_pretty(&meta).map_err(|e| Error::Config(e.to_string()))?;
    body.push('\n');
    std::fs::write(&meta_path, body).map_err(|e| Error::io(&meta_path, e))?;
    println!(
        "{} objects embedded ({} observed in at least one view)",
        embeddings.len(),
        embeddings.iter().filter(|e| !e.is_sentinel()).count()
    );

    manifest.add_output(&args.out)?;
    finish_manifest(manifest, start, &manifest_path_for(&args.out))
}

fn parse_bounds(text: &str) -> Result<BevBounds> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| {
            p.trim().parse::<f64>().map_err(|_| {
                Error::InvalidArgument(format!("--bounds component `{p}` is not a number"))
            })
        })
        .collect::<Result<_>>()?;
    if parts.len() != 4 {
        return Err(Error::InvalidArgument(format!(
            "--bounds needs 4 comma-separated numbers (x_min,x_max,y_min,y_max), got {}",
            parts.len()
        )));
    }
    Ok(BevBounds {
        x_min: parts[0],
        x_max: parts[1],
        y_min: parts[2],
        y_max: parts[3],
    })
}

fn grid_for(
    scene_dir: &Path,
    rows: usize,
    cols: usize,
    bounds: Option<&str>,
) -> Result<(SceneBundle, AllocentricGrid)> {
    let bundle = load_scene(scene_dir)?;
    let layout = match bounds {
        Some(text) => GridLayout::Explicit(GridSpec::new(rows, cols, parse_bounds(text)?)?),
        None => GridLayout::Auto { rows, cols },
    };
    let grid = build_grid(&bundle.objects, layout)?;
    Ok((bundle, grid))
}

fn build_grid_cmd(args: BuildGridArgs) -> Result<()> {
    let start = Instant::now();
    let (_, grid) = grid_for(&args.scene, args.rows, args.cols, args.bounds.as_deref())?;
    let prompt = serialize_grid(&grid);
    match &args.out {
        None => {
            // Prompt bytes only; piping stdout into a file must equal --out.
            print!("{prompt}");
            Ok(())
        }
        Some(path) => {
            let mut manifest = RunManifest::new(
                "build-grid",
                json!({
                    "scene": args.scene.display().to_string(),
                    "rows": args.rows,
                    "cols": args.cols,
                    "bounds": args.bounds,
                }),
            );
            manifest.add_input(&args.scene)?;
            std::fs::write(path, &prompt).map_err(|e| Error::io(path, e))?;
            manifest.add_output(path)?;
            finish_manifest(manifest, start, &manifest_path_for(path))
        }
    }
}

fn build_targets(args: BuildTargetsArgs) -> Result<()> {
    let start = Instant::now();
    let variant = SupervisionVariant::from_tag(&args.variant)?;
    let mut manifest = RunManifest::new(
        "build-targets",
        json!({
            "samples": args.samples.display().to_string(),
            "scene_root": args.scene_root.display().to_string(),
            "variant": variant.tag(),
        }),
    );
    manifest.add_input(&args.samples)?;
    manifest.add_input(&args.scene_root)?;

    let records = read_sample_records(&args.samples)?;
    let scenes = load_scene_map(
        &args.scene_root,
        records.iter().map(|r| r.scene_id.as_str()),
    )?;

    let mut out = String::new();
    for record in &records {
        let scene = &scenes[&record.scene_id];
        let target = build_target_set(&record.sample, scene, variant)?;
        let line = TargetRecord {
            scene_id: record.scene_id.clone(),
            target,
        };
        out.push_str(&serde_json::to_string(&line).map_err(|e| Error::Config(e.to_string()))?);
        out.push('\n');
    }
    std::fs::write(&args.out, out).map_err(|e| Error::io(&args.out, e))?;
    println!(
        "{} targets written to {}",
        records.len(),
        args.out.display()
    );

    manifest.add_output(&args.out)?;
    finish_manifest(manifest, start, &manifest_path_for(&args.out))
}

fn train_affinity_cmd(args: TrainAffinityArgs) -> Result<()> {
    let start = Instant::now();
    let variant = SupervisionVariant::from_tag(&args.variant)?;
    let loss_kind = LossKind::from_tag(&args.loss)?;
    let mut manifest = RunManifest::new(
        "train-affinity",
        json!({
            "data": args.data.display().to_string(),
            "steps": args.steps,
            "lr": args.lr,
            "tau": args.tau,
            "loss": loss_kind.tag(),
            "variant": variant.tag(),
            "seed": args.seed,
        }),
    );
    manifest.add_input(&args.data)?;

    let config = TrainConfig {
        lr: args.lr,
        steps: args.steps,
        temperature: args.tau,
        seed: args.seed,
        loss_kind,
    };
    let head = train_affinity_from_dir(&args.data, variant, &config)?;
    save_head(&head, &args.out)?;
    println!(
        "trained {} head ({} query words) for {} steps -> {}",
        loss_kind.tag(),
        head.vocab.len(),
        args.steps,
        args.out.display()
    );

    manifest.add_output(&args.out)?;
    finish_manifest(manifest, start, &manifest_path_for(&args.out))
}

fn retrieve(args: RetrieveArgs) -> Result<()> {
    let start = Instant::now();
    if args.k == 0 {
        return Err(Error::InvalidArgument("--k must be at least 1".into()));
    }
    let bundle = load_scene(&args.scene)?;
    let head = load_head(&args.head)?;
    let embeddings = embed_all_objects(&bundle)?;
    let candidates: Vec<_> = embeddings
        .into_iter()
        .filter(|e| !e.is_sentinel())
        .collect();
    if candidates.is_empty() {
        return Err(Error::EmptyScene);
    }

    let z = head.encode_query(&tokenize(&args.query))?;
    let q = mlp_forward(&head, &z)?;
    let ranked = retrieve_topk(&q, &candidates, args.k)?;

    let category_of = |id: u32| {
        bundle
            .object_by_id(id)
            .map(|o| o.category.as_str())
            .unwrap_or("?")
    };
    for (rank, (id, similarity)) in ranked.iter().enumerate() {
        println!(
            "{}. object {} ({}) similarity {:.6}",
            rank + 1,
            id,
            category_of(*id),
            similarity
        );
    }

    if let Some(csv_path) = &args.csv {
        let mut manifest = RunManifest::new(
            "retrieve",
            json!({
                "scene": args.scene.display().to_string(),
                "head": args.head.display().to_string(),
                "query": args.query,
                "k": args.k,
            }),
        );
        manifest.add_input(&args.scene)?;
        manifest.add_input(&args.head)?;
        let mut csv = String::from("rank,object_id,category,similarity\n");
        for (rank, (id, similarity)) in ranked.iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                rank + 1,
                id,
                category_of(*id),
                similarity
            ));
        }
        std::fs::write(csv_path, csv).map_err(|e| Error::io(csv_path, e))?;
        manifest.add_output(csv_path)?;
        finish_manifest(manifest, start, &manifest_path_for(csv_path))?;
    }
    Ok(())
}

fn ablate_grid(args: AblateGridArgs) -> Result<()> {
    let start = Instant::now();
    let mut manifest = RunManifest::new(
        "ablate-grid",
        json!({"scene": args.scene.display().to_string(), "sizes": ABLATION_SIZES}),
    );
    manifest.add_input(&args.scene)?;

    let bundle = load_scene(&args.scene)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut csv = String::from("rows,cols,tokens,bytes\n");
    for &size in &ABLATION_SIZES {
        let grid = build_grid(
            &bundle.objects,
            GridLayout::Auto {
                rows: size,
                cols: size,
            },
        )?;
        let prompt = serialize_grid(&grid);
        let path = args.out.join(format!("prompt_{size}x{size}.txt"));
        std::fs::write(&path, &prompt).map_err(|e| Error::io(&path, e))?;
        csv.push_str(&format!(
            "{size},{size},{},{}\n",
            tokenize(&prompt).len(),
            prompt.len()
        ));
    }
    let csv_path = args.out.join("token_counts.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    println!(
        "wrote {} prompts and token_counts.csv to {}",
        ABLATION_SIZES.len(),
        args.out.display()
    );

    manifest.add_output(&args.out)?;
    finish_manifest(manifest, start, &manifest_path_for(&args.out))
}

fn selfcheck() -> Result<()> {
    let outcomes = run_selfcheck();
    let mut failed = 0;
    for outcome in &outcomes {
        if outcome.passed {
            println!("PASS {}", outcome.name);
        } else {
            println!("FAIL {}: {}", outcome.name, outcome.detail);
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Error::Validation(format!(
            "{failed} of {} properties failed",
            outcomes.len()
        )));
    }
    Ok(())
}

fn finish_manifest(mut manifest: RunManifest, start: Instant, path: &Path) -> Result<()> {
    manifest.duration_seconds = start.elapsed().as_secs_f64();
    manifest.write(path)
}
