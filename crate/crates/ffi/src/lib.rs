//! C ABI for the scene-understanding core.
//!
//! Conventions:
//! - Handles (`CvpScene`, `CvpEmbeddings`, `CvpHead`) are opaque pointers
//!   created and destroyed by this library; free each with its matching
//!   `*_free` function exactly once.
//! - Every fallible function returns a [`CvpStatus`]; on any status other
//!   than `Ok`, [`cvp_last_error`] returns a message describing the failure
//!   (thread-local, valid until the next failing call on the same thread).
//! - Strings returned through `char **` out-parameters are NUL-terminated,
//!   UTF-8, and owned by the caller; release them with [`cvp_string_free`].
//! - No function unwinds across the boundary: internal panics are caught
//!   and reported as `CvpStatus::Panic`.
//!
//! Pointer contract (the `# Safety` section of every function): a pointer
//! argument must be either NULL or valid — for a handle, one returned by
//! this library and not yet freed; for a string, NUL-terminated; for an
//! out-parameter, valid for writes. NULL itself is always safe: it is
//! reported as `CvpStatus::NullArgument` (or ignored by the `*_free`
//! functions), never dereferenced. What the functions cannot detect is a
//! dangling, unaligned, or already-freed pointer; passing one is undefined
//! behavior, which is why every pointer-taking function is `unsafe`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use cvp_core::affinity::{
    load_head, mlp_forward, retrieve_topk, save_head, train_affinity_from_dir, AffinityHead,
    LossKind, TrainConfig,
};
use cvp_core::geometry::embed_all_objects;
use cvp_core::grid::{build_grid, serialize_grid, GridLayout};
use cvp_core::relevance::SupervisionVariant;
use cvp_core::scene::{
    load_scene, make_synthetic_scene, save_scene, ObjectEmbedding, SceneBundle, SyntheticSpec,
};
use cvp_core::text::tokenize;
use cvp_core::Error;

/// Result code of every fallible call in this API.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvpStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Reading or writing a file failed.
    IoError = 3,
    /// An input file or in-memory structure is malformed or inconsistent.
    InvalidData = 4,
    /// A scalar argument or configuration value is out of range.
    InvalidArgument = 5,
    /// An internal invariant failed; the library caught a panic.
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap();
    });
}

fn status_of(err: &Error) -> CvpStatus {
    match err {
        Error::Io { .. } => CvpStatus::IoError,
        Error::Config(_) | Error::InvalidArgument(_) => CvpStatus::InvalidArgument,
        _ => CvpStatus::InvalidData,
    }
}

fn fail(err: &Error) -> CvpStatus {
    set_last_error(&err.to_string());
    status_of(err)
}

/// Message for the most recent failure on this thread. Never NULL; empty
/// before the first failure. The pointer stays valid until the next failing
/// call on the same thread.
#[no_mangle]
pub extern "C" fn cvp_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Run `body` with panic containment and NULL-checked out-parameter.
fn guarded<T>(out: *mut T, body: impl FnOnce() -> Result<T, CvpStatus>) -> CvpStatus {
    if out.is_null() {
        set_last_error("out-parameter is NULL");
        return CvpStatus::NullArgument;
    }
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(value)) => {
            unsafe { out.write(value) };
            CvpStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(panic) => {
            let detail = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_last_error(&format!("internal panic: {detail}"));
            CvpStatus::Panic
        }
    }
}

/// Run a `()`-returning `body` with panic containment.
fn guarded_unit(body: impl FnOnce() -> Result<(), CvpStatus>) -> CvpStatus {
    let mut unit = ();
    guarded(&mut unit as *mut (), body)
}

fn utf8_path<'a>(ptr: *const c_char, what: &str) -> Result<&'a Path, CvpStatus> {
    utf8_str(ptr, what).map(Path::new)
}

fn utf8_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, CvpStatus> {
    if ptr.is_null() {
        set_last_error(&format!("{what} is NULL"));
        return Err(CvpStatus::NullArgument);
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| {
        set_last_error(&format!("{what} is not valid UTF-8"));
        CvpStatus::InvalidUtf8
    })
}

fn deref<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, CvpStatus> {
    if ptr.is_null() {
        set_last_error(&format!("{what} is NULL"));
        return Err(CvpStatus::NullArgument);
    }
    Ok(unsafe { &*ptr })
}

fn owned_c_string(text: String) -> *mut c_char {
    CString::new(text.replace('\0', " ")).unwrap().into_raw()
}

// ---------------------------------------------------------------------------
// Scenes
// ---------------------------------------------------------------------------

/// A loaded scene: camera views with depth and feature maps, plus annotated
/// objects. Opaque; create with `cvp_scene_load` or `cvp_scene_generate`
/// and destroy with `cvp_scene_free`.
pub struct CvpScene {
    bundle: SceneBundle,
}

/// Parameters for `cvp_scene_generate`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CvpSceneSpec {
    /// Number of camera views.
    pub views: usize,
    /// Number of objects.
    pub objects: usize,
    /// Feature channels per pixel (embedding dimension).
    pub feature_dim: usize,
    /// Number of distinct object categories to draw from.
    pub categories: usize,
    /// Standard deviation of the per-channel feature noise.
    pub noise_sigma: f64,
    /// RNG seed; equal seeds give byte-identical scenes.
    pub seed: u64,
}

/// Fill `spec` with the default generation parameters.
///
/// # Safety
///
/// `spec` must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cvp_scene_spec_default(spec: *mut CvpSceneSpec) -> CvpStatus {
    guarded(spec, || {
        Ok(CvpSceneSpec {
            views: 3,
            objects: 8,
            feature_dim: 8,
            categories: 4,
            noise_sigma: 0.05,
            seed: 0,
        })
    })
}

/// Generate a synthetic scene. The result must be freed with
/// `cvp_scene_free`.
///
/// # Safety
///
/// `spec` must be NULL or point to a `CvpSceneSpec`; `out` must be NULL or
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cvp_scene_generate(
    spec: *const CvpSceneSpec,
    out: *mut *mut CvpScene,
) -> CvpStatus {
    guarded(out, || {
        let spec = deref(spec, "spec")?;
        let bundle = make_synthetic_scene(&SyntheticSpec {
            num_views: spec.views,
            num_objects: spec.objects,
            feature_dim: spec.feature_dim,
            category_count: spec.categories,
            noise_sigma: spec.noise_sigma,
            rng_seed: spec.seed,
        })
        .map_err(|e| fail(&e))?;
        Ok(Box::into_raw(Box::new(CvpScene { bundle })))
    })
}

/// Load a scene directory (`scene.json` plus tensor files). The result must
/// be freed with `cvp_scene_free`.
///
/// # Safety
///
/// `dir` must be NULL or a NUL-terminated string; `out` must be NULL or
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cvp_scene_load(dir: *const c_char, out: *mut *mut CvpScene) -> CvpStatus {
    guarded(out, || {
        let dir = utf8_path(dir, "dir")?;
        let bundle = load_scene(dir).map_err(|e| fail(&e))?;
        Ok(Box::into_raw(Box::new(CvpScene { bundle })))
    })
}

/// Write the scene to a directory, creating it if necessary.
///
/// # Safety
///
/// `scene` must be NULL or a live scene handle; `dir` must be NULL or a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cvp_scene_save(scene: *const CvpScene, dir: *const c_char) -> CvpStatus {
    guarded_unit(|| {
        let scene = deref(scene, "scene")?;
        let dir = utf8_path(dir, "dir")?;
        save_scene(&scene.bundle, dir).map_err(|e| fail(&e))
    })
}

/// Destroy a scene handle. NULL is ignored.
///
/// # Safety
///
/// `scene` must be NULL or an unfreed scene handle; it is invalid after the
/// call.
#[no_mangle]
pub unsafe extern "C" fn cvp_scene_free(scene: *mut CvpScene) {
    if !scene.is_null() {
        drop(unsafe { Box::from_raw(scene) });
    }
}

/// The scene's identifier as a caller-owned string (`cvp_string_free`).
///
/// # Safety
///
/// `scene` must be NULL or a live scene handle; `out` must be NULL or valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn cvp_scene_id(scene: *const CvpScene, out: *mut *mut c_char) -> CvpStatus {
    guarded(out, || {
        let scene = deref(scene, "scene")?;
        Ok(owned_c_string(scene.bundle.scene_id.clone()))
    })
}

/// Number of annotated objects in the scene.
///
/// # Safety
///
/// `scene` must be NULL or a live scene handle; `out` must be NULL or valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn cvp_scene_object_count(
    scene: *const CvpScene,
    out: *mut usize,
) -> CvpStatus {
    guarded(out, || Ok(deref(scene, "scene")?.bundle.objects.len()))
}

/// Category name of the object at `index` (insertion order), caller-owned.
///
/// # Safety
///
/// `scene` must be NULL or a live scene handle; `out` must be NULL or valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn cvp_scene_object_category(
    scene: *const CvpScene,
    index: usize,
    out: *mut *mut c_char,
) -> CvpStatus {
    guarded(out, || {
        let scene = deref(scene, "scene")?;
        let object = scene.bundle.objects.get(index).ok_or_else(|| {
            set_last_error(&format!(
                "object index {index} out of range ({} objects)",
                scene.bundle.objects.len()
            ));
            CvpStatus::InvalidArgument
        })?;
        Ok(owned_c_string(object.category.clone()))
    })
}

/// Release a string returned by this library. NULL is ignored.
///
/// # Safety
///
/// `s` must be NULL or a string returned by this library, freed at most
/// once.
#[no_mangle]
pub unsafe extern "C" fn cvp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

// ---------------------------------------------------------------------------
// Bird's-eye-view grid
// ---------------------------------------------------------------------------

/// Serialize the scene's bird's-eye-view occupancy grid into the text
/// prompt. Grid bounds are fitted to the object centers. The string is
/// caller-owned (`cvp_string_free`).
///
/// # Safety
///
/// `scene` must be NULL or a live scene handle; `out` must be NULL or valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn cvp_grid_prompt(
    scene: *const CvpScene,
    rows: usize,
    cols: usize,
    out: *mut *mut c_char,
) -> CvpStatus {
    guarded(out, || {
        let scene = deref(scene, "scene")?;
        let grid = build_grid(&scene.bundle.objects, GridLayout::Auto { rows, cols })
            .map_err(|e| fail(&e))?;
        Ok(owned_c_string(serialize_grid(&grid)))
    })
}

// ---------------------------------------------------------------------------
// Object embeddings
// ---------------------------------------------------------------------------

/// Per-object pooled embeddings. Opaque; create with `cvp_embed_objects`,
/// destroy with `cvp_embeddings_free`.
pub struct CvpEmbeddings {
    embeddings: Vec<ObjectEmbedding>,
    /// Row-major `count x dim` copy the accessors can hand out stably.
    values: Vec<f64>,
    dim: usize,
}

/// Back-project every view and pool a feature embedding per object.
/// Objects observed by no view carry an all-zero embedding with
/// `point_count == 0`.
///
/// # Safety
///
/// `scene` must be NULL or a live scene handle; `out` must be NULL or valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn cvp_embed_objects(
    scene: *const CvpScene,
    out: *mut *mut CvpEmbeddings,
) -> CvpStatus {
    guarded(out, || {
        let scene = deref(scene, "scene")?;
        let embeddings = embed_all_objects(&scene.bundle).map_err(|e| fail(&e))?;
        let dim = scene.bundle.feature_dim();
        let mut values = Vec::with_capacity(embeddings.len() * dim);
        for e in &embeddings {
            values.extend(e.vector.iter());
        }
        Ok(Box::into_raw(Box::new(CvpEmbeddings {
            embeddings,
            values,
            dim,
        })))
    })
}

/// Number of embedded objects. 0 if `embeddings` is NULL.
///
/// # Safety
///
/// `embeddings` must be NULL or a live embeddings handle.
#[no_mangle]
pub unsafe extern "C" fn cvp_embeddings_count(embeddings: *const CvpEmbeddings) -> usize {
    match deref(embeddings, "embeddings") {
        Ok(e) => e.embeddings.len(),
        Err(_) => 0,
    }
}

/// Embedding dimensionality (feature channels). 0 if `embeddings` is NULL.
///
/// # Safety
///
/// `embeddings` must be NULL or a live embeddings handle.
#[no_mangle]
pub unsafe extern "C" fn cvp_embeddings_dim(embeddings: *const CvpEmbeddings) -> usize {
    match deref(embeddings, "embeddings") {
        Ok(e) => e.dim,
        Err(_) => 0,
    }
}

/// Pointer to the row-major `count x dim` embedding matrix. Valid until the
/// handle is freed. NULL if `embeddings` is NULL.
///
/// # Safety
///
/// `embeddings` must be NULL or a live embeddings handle.
#[no_mangle]
pub unsafe extern "C" fn cvp_embeddings_values(embeddings: *const CvpEmbeddings) -> *const f64 {
    match deref(embeddings, "embeddings") {
        Ok(e) => e.values.as_ptr(),
        Err(_) => std::ptr::null(),
    }
}

/// Object id of row `index`.
///
/// # Safety
///
/// `embeddings` must be NULL or a live embeddings handle; `out` must be
/// NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cvp_embeddings_object_id(
    embeddings: *const CvpEmbeddings,
    index: usize,
    out: *mut u32,
) -> CvpStatus {
    guarded(out, || {
        let e = deref(embeddings, "embeddings")?;
        e.embeddings.get(index).map(|e| e.object_id).ok_or_else(|| {
            set_last_error(&format!(
                "index {index} out of range ({} rows)",
                e.embeddings.len()
            ));
            CvpStatus::InvalidArgument
        })
    })
}

/// Number of back-projected points pooled into row `index` (0 means the
/// object was never observed and its embedding is the zero sentinel).
///
/// # Safety
///
/// `embeddings` must be NULL or a live embeddings handle; `out` must be
/// NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cvp_embeddings_point_count(
    embeddings: *const CvpEmbeddings,
    index: usize,
    out: *mut usize,
) -> CvpStatus {
    guarded(out, || {
        let e = deref(embeddings, "embeddings")?;
        e.embeddings
            .get(index)
            .map(|e| e.point_count)
            .ok_or_else(|| {
                set_last_error(&format!(
                    "index {index} out of range ({} rows)",
                    e.embeddings.len()
                ));
                CvpStatus::InvalidArgument
            })
    })
}

/// Destroy an embeddings handle. NULL is ignored.
///
/// # Safety
///
/// `embeddings` must be NULL or an unfreed embeddings handle; it is invalid
/// after the call.
#[no_mangle]
pub unsafe extern "C" fn cvp_embeddings_free(embeddings: *mut CvpEmbeddings) {
    if !embeddings.is_null() {
        drop(unsafe { Box::from_raw(embeddings) });
    }
}

// ---------------------------------------------------------------------------
// Affinity head: training, persistence, retrieval
// ---------------------------------------------------------------------------

/// A trained target-affinity head. Opaque; create with `cvp_train_affinity`
/// or `cvp_head_load`, destroy with `cvp_head_free`.
pub struct CvpHead {
    head: AffinityHead,
}

/// Training objective.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvpLossKind {
    /// Multi-positive contrastive objective with temperature.
    InfoNce = 0,
    /// Mean-squared-error regression onto the mean positive embedding.
    Mse = 1,
}

/// Positive-set supervision variant.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvpVariant {
    /// Only each sample's annotated boxes are positive.
    GtBoxes = 0,
    /// Additionally every object whose category is mentioned in the text.
    AllRelatedBoxes = 1,
}

/// Parameters for `cvp_train_affinity`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CvpTrainOptions {
    /// Full-batch gradient-descent steps.
    pub steps: usize,
    /// Learning rate (> 0).
    pub lr: f64,
    /// Contrastive softmax temperature (> 0).
    pub temperature: f64,
    /// Head-initialization RNG seed.
    pub seed: u64,
    pub loss: CvpLossKind,
    pub variant: CvpVariant,
}

/// Fill `options` with the default training configuration.
///
/// # Safety
///
/// `options` must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cvp_train_options_default(options: *mut CvpTrainOptions) -> CvpStatus {
    guarded(options, || {
        let d = TrainConfig::default();
        Ok(CvpTrainOptions {
            steps: d.steps,
            lr: d.lr,
            temperature: d.temperature,
            seed: d.seed,
            loss: CvpLossKind::InfoNce,
            variant: CvpVariant::GtBoxes,
        })
    })
}

/// Train a head on a data directory laid out as `samples.jsonl` plus one
/// scene directory per referenced scene id. Deterministic for fixed inputs
/// and options. The result must be freed with `cvp_head_free`.
///
/// # Safety
///
/// `data_dir` must be NULL or a NUL-terminated string; `options` must be
/// NULL or point to a `CvpTrainOptions`; `out` must be NULL or valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn cvp_train_affinity(
    data_dir: *const c_char,
    options: *const CvpTrainOptions,
    out: *mut *mut CvpHead,
) -> CvpStatus {
    guarded(out, || {
        let data_dir = utf8_path(data_dir, "data_dir")?;
        let options = deref(options, "options")?;
        let config = TrainConfig {
            lr: options.lr,
            steps: options.steps,
            temperature: options.temperature,
            seed: options.seed,
            loss_kind: match options.loss {
                CvpLossKind::InfoNce => LossKind::InfoNce,
                CvpLossKind::Mse => LossKind::Mse,
            },
        };
        let variant = match options.variant {
            CvpVariant::GtBoxes => SupervisionVariant::GtBoxes,
            CvpVariant::AllRelatedBoxes => SupervisionVariant::AllRelatedBoxes,
        };
        let head = train_affinity_from_dir(data_dir, variant, &config).map_err(|e| fail(&e))?;
        Ok(Box::into_raw(Box::new(CvpHead { head })))
    })
}

/// Load a head directory written by `cvp_head_save` (or the CLI).
///
/// # Safety
///
/// `dir` must be NULL or a NUL-terminated string; `out` must be NULL or
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cvp_head_load(dir: *const c_char, out: *mut *mut CvpHead) -> CvpStatus {
    guarded(out, || {
        let dir = utf8_path(dir, "dir")?;
        let head = load_head(dir).map_err(|e| fail(&e))?;
        Ok(Box::into_raw(Box::new(CvpHead { head })))
    })
}

/// Write the head to a directory, creating it if necessary.
///
/// # Safety
///
/// `head` must be NULL or a live head handle; `dir` must be NULL or a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cvp_head_save(head: *const CvpHead, dir: *const c_char) -> CvpStatus {
    guarded_unit(|| {
        let head = deref(head, "head")?;
        let dir = utf8_path(dir, "dir")?;
        save_head(&head.head, dir).map_err(|e| fail(&e))
    })
}

/// Destroy a head handle. NULL is ignored.
///
/// # Safety
///
/// `head` must be NULL or an unfreed head handle; it is invalid after the
/// call.
#[no_mangle]
pub unsafe extern "C" fn cvp_head_free(head: *mut CvpHead) {
    if !head.is_null() {
        drop(unsafe { Box::from_raw(head) });
    }
}

/// Rank the scene's observed objects against a text query.
///
/// Writes up to `k` results into the caller-provided `ids` and
/// `similarities` arrays (each at least `k` long) in descending similarity
/// order and stores the number written in `out_count` (the scene may hold
/// fewer than `k` observed objects).
///
/// # Safety
///
/// `head` and `scene` must be NULL or live handles; `query` must be NULL or
/// a NUL-terminated string; `ids` and `similarities` must be NULL or valid
/// for writes of at least `k` elements; `out_count` must be NULL or valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn cvp_retrieve(
    head: *const CvpHead,
    scene: *const CvpScene,
    query: *const c_char,
    k: usize,
    ids: *mut u32,
    similarities: *mut f64,
    out_count: *mut usize,
) -> CvpStatus {
    guarded(out_count, || {
        let head = deref(head, "head")?;
        let scene = deref(scene, "scene")?;
        let query = utf8_str(query, "query")?;
        if ids.is_null() || similarities.is_null() {
            set_last_error("ids/similarities output arrays are NULL");
            return Err(CvpStatus::NullArgument);
        }

        let embeddings = embed_all_objects(&scene.bundle).map_err(|e| fail(&e))?;
        let candidates: Vec<ObjectEmbedding> = embeddings
            .into_iter()
            .filter(|e| !e.is_sentinel())
            .collect();
        if candidates.is_empty() {
            set_last_error("scene has no observed objects to rank");
            return Err(CvpStatus::InvalidData);
        }
        let z = head
            .head
            .encode_query(&tokenize(query))
            .map_err(|e| fail(&e))?;
        let q = mlp_forward(&head.head, &z).map_err(|e| fail(&e))?;
        let ranked = retrieve_topk(&q, &candidates, k).map_err(|e| fail(&e))?;
        for (i, (id, similarity)) in ranked.iter().enumerate() {
            unsafe {
                ids.add(i).write(*id);
                similarities.add(i).write(*similarity);
            }
        }
        Ok(ranked.len())
    })
}
