//! Architectural constants and the tile-grid model of the target device.
//!
//! The defaults describe a VCK5000-class AI Engine array: an 8×50 grid of
//! compute tiles with 32 KiB of local data memory each, 312 PL→AIE and 234
//! AIE→PL stream interfaces at 4 GB/s apiece, and 512-bit vector units.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlatformError {
    #[error("platform field `{field}` is invalid: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("tile {coord} is outside the {rows}x{cols} grid")]
    OutOfBounds { coord: TileCoord, rows: usize, cols: usize },
}

/// Device description every budget is checked against.
///
/// Immutable once validated; cheap to clone and share between threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformConfig {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub local_memory_bytes_per_tile: u64,
    pub pl_to_aie_streams: usize,
    pub aie_to_pl_streams: usize,
    pub axi_bandwidth_bytes_per_sec: f64,
    pub aie_clock_hz: f64,
    pub max_vector_width_bits: u32,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        default_platform()
    }
}

pub fn default_platform() -> PlatformConfig {
    PlatformConfig {
        grid_rows: 8,
        grid_cols: 50,
        local_memory_bytes_per_tile: 32 * 1024,
        pl_to_aie_streams: 312,
        aie_to_pl_streams: 234,
        axi_bandwidth_bytes_per_sec: 4.0e9,
        aie_clock_hz: 1.0e9,
        max_vector_width_bits: 512,
    }
}

impl PlatformConfig {
    pub fn tile_count(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn validate(&self) -> Result<(), PlatformError> {
        let invalid = |field, reason: &str| {
            Err(PlatformError::Invalid {
                field,
                reason: reason.to_string(),
            })
        };
        if self.grid_rows == 0 {
            return invalid("grid_rows", "must be positive");
        }
        if self.grid_cols == 0 {
            return invalid("grid_cols", "must be positive");
        }
        if self.local_memory_bytes_per_tile == 0 {
            return invalid("local_memory_bytes_per_tile", "must be positive");
        }
        if self.pl_to_aie_streams == 0 {
            return invalid("pl_to_aie_streams", "must be positive");
        }
        if self.aie_to_pl_streams == 0 {
            return invalid("aie_to_pl_streams", "must be positive");
        }
        if !(self.axi_bandwidth_bytes_per_sec.is_finite() && self.axi_bandwidth_bytes_per_sec > 0.0) {
            return invalid("axi_bandwidth_bytes_per_sec", "must be a positive finite rate");
        }
        if !(self.aie_clock_hz.is_finite() && self.aie_clock_hz > 0.0) {
            return invalid("aie_clock_hz", "must be a positive finite frequency");
        }
        let w = self.max_vector_width_bits;
        if w < 32 || !w.is_power_of_two() {
            return invalid("max_vector_width_bits", "must be a power of two >= 32");
        }
        Ok(())
    }

    pub fn contains(&self, coord: TileCoord) -> bool {
        coord.row < self.grid_rows && coord.col < self.grid_cols
    }

    pub fn check_bounds(&self, coord: TileCoord) -> Result<(), PlatformError> {
        if self.contains(coord) {
            Ok(())
        } else {
            Err(PlatformError::OutOfBounds {
                coord,
                rows: self.grid_rows,
                cols: self.grid_cols,
            })
        }
    }

    /// True iff the two tiles share an edge (4-neighborhood).
    pub fn are_neighbors(&self, a: TileCoord, b: TileCoord) -> Result<bool, PlatformError> {
        self.check_bounds(a)?;
        self.check_bounds(b)?;
        Ok(a.manhattan(b) == 1)
    }

    /// In-bounds 4-neighbors of `coord` in row-major order (up, left, right, down).
    pub fn neighbors(&self, coord: TileCoord) -> Vec<TileCoord> {
        let mut out = Vec::with_capacity(4);
        if coord.row > 0 {
            out.push(TileCoord::new(coord.row - 1, coord.col));
        }
        if coord.col > 0 {
            out.push(TileCoord::new(coord.row, coord.col - 1));
        }
        if coord.col + 1 < self.grid_cols {
            out.push(TileCoord::new(coord.row, coord.col + 1));
        }
        if coord.row + 1 < self.grid_rows {
            out.push(TileCoord::new(coord.row + 1, coord.col));
        }
        out
    }

    /// All tiles in row-major order.
    pub fn tiles(&self) -> impl Iterator<Item = TileCoord> + '_ {
        (0..self.grid_rows).flat_map(move |row| (0..self.grid_cols).map(move |col| TileCoord::new(row, col)))
    }

    /// Overlays every field present in `overrides` on top of `self`.
    pub fn with_overrides(&self, overrides: &PlatformOverrides) -> PlatformConfig {
        let mut p = self.clone();
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = overrides.$f { p.$f = v; } )* };
        }
        take!(
            grid_rows,
            grid_cols,
            local_memory_bytes_per_tile,
            pl_to_aie_streams,
            aie_to_pl_streams,
            axi_bandwidth_bytes_per_sec,
            aie_clock_hz,
            max_vector_width_bits
        );
        p
    }
}

/// Partial platform description; every present field replaces the default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_cols: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_memory_bytes_per_tile: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pl_to_aie_streams: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aie_to_pl_streams: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axi_bandwidth_bytes_per_sec: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aie_clock_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_vector_width_bits: Option<u32>,
}

pub const PLATFORM_FIELDS: &[&str] = &[
    "grid_rows",
    "grid_cols",
    "local_memory_bytes_per_tile",
    "pl_to_aie_streams",
    "aie_to_pl_streams",
    "axi_bandwidth_bytes_per_sec",
    "aie_clock_hz",
    "max_vector_width_bits",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileCoord {
    pub row: usize,
    pub col: usize,
}

impl TileCoord {
    pub const fn new(row: usize, col: usize) -> Self {
        TileCoord { row, col }
    }

    pub fn manhattan(self, other: TileCoord) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

impl fmt::Display for TileCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}
