//! Uniform square tessellation and the inverted grid index.

mod index;
mod persist;
mod traversal;

pub use index::{build_index, GridIndex, IndexError};
pub use persist::{load_index, persist_index, read_index, write_index, PersistError, INDEX_MAGIC, INDEX_VERSION};
pub use traversal::{segment_rect_distance, traversal_grids};

use serde::{Deserialize, Serialize};

use crate::geometry::Coord;

/// Square grid shared by every federation participant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Coord,
    pub cell_side: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridId {
    pub ix: i64,
    pub iy: i64,
}

impl GridId {
    pub const fn new(ix: i64, iy: i64) -> Self {
        Self { ix, iy }
    }
}

/// Axis-aligned cell bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min: Coord,
    pub max: Coord,
}

impl GridSpec {
    pub fn new(origin: Coord, cell_side: f64) -> Self {
        assert!(cell_side > 0.0 && cell_side.is_finite(), "cell side must be positive");
        Self { origin, cell_side }
    }

    pub fn cell_of(&self, c: Coord) -> GridId {
        GridId {
            ix: ((c.x - self.origin.x) / self.cell_side).floor() as i64,
            iy: ((c.y - self.origin.y) / self.cell_side).floor() as i64,
        }
    }

    pub fn rect(&self, g: GridId) -> Rect {
        let l = self.cell_side;
        Rect {
            min: Coord::new(self.origin.x + g.ix as f64 * l, self.origin.y + g.iy as f64 * l),
            max: Coord::new(
                self.origin.x + (g.ix + 1) as f64 * l,
                self.origin.y + (g.iy + 1) as f64 * l,
            ),
        }
    }
}

impl Rect {
    pub fn distance_to(&self, p: Coord) -> f64 {
        let dx = (self.min.x - p.x).max(0.0).max(p.x - self.max.x);
        let dy = (self.min.y - p.y).max(0.0).max(p.y - self.max.y);
        dx.hypot(dy)
    }

    pub fn contains(&self, p: Coord) -> bool {
        self.min.x <= p.x && p.x <= self.max.x && self.min.y <= p.y && p.y <= self.max.y
    }
}
