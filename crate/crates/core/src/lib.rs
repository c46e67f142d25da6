//! Multi-view 3D scene understanding toolkit.
//!
//! The pipeline, end to end:
//!
//! 1. [`scene`] — load or synthesize a scene: posed RGB-D views with dense
//!    feature maps, plus objects with axis-aligned bounding boxes.
//! 2. [`geometry`] — back-project every valid depth pixel into the shared
//!    world frame and pool the features that fall inside each object's box
//!    into one embedding per object.
//! 3. [`grid`] — flatten the scene into an allocentric top-down grid and
//!    serialize it as a text prompt.
//! 4. [`relevance`] — turn heterogeneous grounding/QA/captioning samples
//!    into per-sample positive target sets.
//! 5. [`affinity`] — train a small MLP head contrastively so query
//!    embeddings land near their positive object embeddings, and rank
//!    objects for a query.
//!
//! Everything is deterministic given explicit seeds, and all arithmetic is
//! plain `f64` on the CPU.

pub mod affinity;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod manifest;
pub mod relevance;
pub mod scene;
pub mod selfcheck;
pub mod tensor;
pub mod text;

pub use error::{Error, Result};
