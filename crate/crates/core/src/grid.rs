//! Allocentric bird's-eye-view grid: objects collapse to their BEV center
//! points, centers map to cells of a uniform top-down grid, and the grid
//! serializes to a fixed text prompt.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scene::SceneObject;

/// Padding added around the auto-fitted bounds so points on the max edge
/// land inside the last cell before clamping.
pub const AUTO_BOUNDS_PADDING: f64 = 1e-6;

/// Grid sizes swept by the resolution ablation.
pub const ABLATION_SIZES: [usize; 4] = [6, 10, 16, 24];

/// The world-frame rectangle covered by a grid, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl BevBounds {
    pub fn validate(&self) -> Result<()> {
        for v in [self.x_min, self.x_max, self.y_min, self.y_max] {
            if !v.is_finite() {
                return Err(Error::validation("grid bounds must be finite"));
            }
        }
        if self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::validation(format!(
                "grid bounds must satisfy x_min < x_max and y_min < y_max, got \
                 [{}, {}] x [{}, {}]",
                self.x_min, self.x_max, self.y_min, self.y_max
            )));
        }
        Ok(())
    }
}

/// Grid shape and extent: `rows x cols` cells over `bounds`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    rows: usize,
    cols: usize,
    bounds: BevBounds,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, bounds: BevBounds) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::validation(
                "grid must have at least 1 row and 1 column",
            ));
        }
        bounds.validate()?;
        Ok(GridSpec { rows, cols, bounds })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bounds(&self) -> BevBounds {
        self.bounds
    }
}

/// How to obtain the grid extent in [`build_grid`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridLayout {
    /// Use an explicit, already-validated spec.
    Explicit(GridSpec),
    /// Fit the bounds to the objects' BEV centers (see [`auto_bounds`]).
    Auto { rows: usize, cols: usize },
}

/// The populated grid: category names per nonempty cell. Keys iterate in
/// row-major order; empty cells are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocentricGrid {
    spec: GridSpec,
    cells: BTreeMap<(usize, usize), Vec<String>>,
}

impl AllocentricGrid {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn cells(&self) -> &BTreeMap<(usize, usize), Vec<String>> {
        &self.cells
    }

    /// Total number of placed names; equals the number of objects the grid
    /// was built from.
    pub fn object_count(&self) -> usize {
        self.cells.values().map(Vec::len).sum()
    }
}

/// An object's bird's-eye-view center: the box midpoint with z discarded.
pub fn bev_center(object: &SceneObject) -> (f64, f64) {
    (
        (object.aabb_min.x + object.aabb_max.x) / 2.0,
        (object.aabb_min.y + object.aabb_max.y) / 2.0,
    )
}

/// The cell containing point `(x, y)`. Out-of-bounds points clamp to the
/// nearest edge cell, so any finite point maps to a valid index. The
/// template's `row` axis follows the x coordinate and `col` follows y.
pub fn cell_index(x: f64, y: f64, spec: &GridSpec) -> (usize, usize) {
    let b = spec.bounds;
    let row = clamp_floor(
        (x - b.x_min) / ((b.x_max - b.x_min) / spec.rows as f64),
        spec.rows,
    );
    let col = clamp_floor(
        (y - b.y_min) / ((b.y_max - b.y_min) / spec.cols as f64),
        spec.cols,
    );
    (row, col)
}

fn clamp_floor(scaled: f64, count: usize) -> usize {
    let f = scaled.floor();
    if f < 0.0 {
        0
    } else if f >= count as f64 {
        count - 1
    } else {
        f as usize
    }
}

/// The BEV bounding rectangle of the objects' centers, padded by
/// [`AUTO_BOUNDS_PADDING`] on every side.
pub fn auto_bounds(objects: &[SceneObject]) -> Result<BevBounds> {
    if objects.is_empty() {
        return Err(Error::EmptyScene);
    }
    let centers: Vec<(f64, f64)> = objects.iter().map(bev_center).collect();
    let fold = |init: f64, f: fn(f64, f64) -> f64, pick: fn(&(f64, f64)) -> f64| {
        centers.iter().map(pick).fold(init, f)
    };
    Ok(BevBounds {
        x_min: fold(f64::INFINITY, f64::min, |c| c.0) - AUTO_BOUNDS_PADDING,
        x_max: fold(f64::NEG_INFINITY, f64::max, |c| c.0) + AUTO_BOUNDS_PADDING,
        y_min: fold(f64::INFINITY, f64::min, |c| c.1) - AUTO_BOUNDS_PADDING,
        y_max: fold(f64::NEG_INFINITY, f64::max, |c| c.1) + AUTO_BOUNDS_PADDING,
    })
}

/// Drop each object's category name into the cell containing its BEV
/// center. Within a cell, names are ordered by object id ascending;
/// duplicate names are kept.
pub fn build_grid(objects: &[SceneObject], layout: GridLayout) -> Result<AllocentricGrid> {
    let spec = match layout {
        GridLayout::Explicit(spec) => spec,
        GridLayout::Auto { rows, cols } => GridSpec::new(rows, cols, auto_bounds(objects)?)?,
    };
    for object in objects {
        object.validate()?;
    }

    let mut by_id: Vec<&SceneObject> = objects.iter().collect();
    by_id.sort_by_key(|o| o.id);

    let mut cells: BTreeMap<(usize, usize), Vec<String>> = BTreeMap::new();
    for object in by_id {
        let (x, y) = bev_center(object);
        cells
            .entry(cell_index(x, y, &spec))
            .or_default()
            .push(object.category.clone());
    }
    Ok(AllocentricGrid { spec, cells })
}

/// Serialize the grid into the prompt text: a fixed three-line header with
/// the grid shape substituted, then one line per nonempty cell in row-major
/// order. Every line, the last included, ends with `\n`.
pub fn serialize_grid(grid: &AllocentricGrid) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "This is a top-down view of a scene divided into a {} by {} grid. Each cell\n",
        grid.spec.rows, grid.spec.cols
    ));
    out.push_str(
        "may contain multiple objects, and the objects are separated by commas. This is an\n",
    );
    out.push_str("abstraction of the scene and might be incomplete.\n");
    for ((row, col), names) in &grid.cells {
        out.push_str(&format!(
            "At (row={}, col={}), there is: {},\n",
            row,
            col,
            names.join(", ")
        ));
    }
    out
}
