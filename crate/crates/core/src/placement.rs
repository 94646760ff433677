//! Assigning kernels to tiles.
//!
//! Hinted kernels are pinned first. The rest are placed breadth-first over the
//! kernel-connection graph: each kernel takes the first free 4-neighbor of an
//! already placed kernel it is connected to, otherwise the first free tile in
//! row-major order. Each new component starts from a lowest-degree kernel (a
//! path endpoint), which turns a linear pipeline into a snake walk that never
//! strands a stage away from its predecessor.
//!
//! Every window port of a kernel costs two windows of local memory (ping-pong
//! buffering); streams cost nothing.

use std::collections::{BTreeMap, BTreeSet};

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::graph::{bfs, DataflowGraph, NodeId};
use crate::platform::{PlatformConfig, TileCoord};
use crate::spec::{Diagnostic, DiagnosticCode, RoutineSpec};

pub const BUFFERING_FACTOR: u64 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlacementError {
    #[error("kernels `{first}` and `{second}` are both hinted to tile {tile}")]
    HintConflict {
        first: String,
        second: String,
        tile: TileCoord,
    },
    #[error("kernel `{kernel}` is hinted to {tile}, outside the {rows}x{cols} grid")]
    HintOutOfBounds {
        kernel: String,
        tile: TileCoord,
        rows: usize,
        cols: usize,
    },
    #[error("kernel `{kernel}` needs {needed} bytes of local memory, a tile has {available}")]
    MemoryBudgetExceeded {
        kernel: String,
        needed: u64,
        available: u64,
    },
    #[error("no free tile left for kernel `{kernel}` ({tiles} tiles)")]
    GridFull { kernel: String, tiles: usize },
}

impl PlacementError {
    pub fn to_diagnostic(&self) -> Diagnostic {
        let (kernel, code) = match self {
            PlacementError::HintConflict { second, .. } => (second, DiagnosticCode::HintConflict),
            PlacementError::HintOutOfBounds { kernel, .. } => (kernel, DiagnosticCode::HintOutOfBounds),
            PlacementError::MemoryBudgetExceeded { kernel, .. } => (kernel, DiagnosticCode::MemoryBudgetExceeded),
            PlacementError::GridFull { kernel, .. } => (kernel, DiagnosticCode::GridFull),
        };
        Diagnostic {
            kernel: Some(kernel.clone()),
            port: None,
            code,
            message: self.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelClass {
    /// Endpoints share memory through adjacent tiles.
    Neighbor,
    NocStream,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    /// Kernel node → tile, keyed by node id.
    pub assignment: BTreeMap<NodeId, TileCoord>,
    /// Kernel-to-kernel channel index → routing class.
    pub channel_class: BTreeMap<usize, ChannelClass>,
    kernel_names: BTreeMap<NodeId, String>,
}

impl Placement {
    pub fn tile_of(&self, node: NodeId) -> Option<TileCoord> {
        self.assignment.get(&node).copied()
    }

    pub fn class_of(&self, channel: usize) -> Option<ChannelClass> {
        self.channel_class.get(&channel).copied()
    }

    /// `kernel name → tile`, sorted by name.
    pub fn by_name(&self) -> BTreeMap<&str, TileCoord> {
        self.assignment
            .iter()
            .map(|(id, t)| (self.kernel_names[id].as_str(), *t))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("placement serialization is infallible")
    }
}

impl Serialize for Placement {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let named = self.by_name();
        let mut m = s.serialize_map(Some(named.len()))?;
        for (k, t) in named {
            m.serialize_entry(k, &t)?;
        }
        m.end()
    }
}

/// Local-memory bytes a kernel occupies on its tile.
pub fn kernel_footprint(spec: &RoutineSpec) -> u64 {
    let window_ports = spec
        .blas_routine
        .ports()
        .iter()
        .filter(|p| p.channel.is_window())
        .count() as u64;
    window_ports * BUFFERING_FACTOR * spec.window_size_bytes
}

pub fn place(graph: &DataflowGraph, platform: &PlatformConfig) -> Result<Placement, PlacementError> {
    let kernels: Vec<(NodeId, &RoutineSpec)> = graph.kernels().collect();

    for (_, spec) in &kernels {
        let needed = kernel_footprint(spec);
        if needed > platform.local_memory_bytes_per_tile {
            return Err(PlacementError::MemoryBudgetExceeded {
                kernel: spec.kernel_name.clone(),
                needed,
                available: platform.local_memory_bytes_per_tile,
            });
        }
    }

    let mut assignment: BTreeMap<NodeId, TileCoord> = BTreeMap::new();
    let mut occupied: BTreeMap<TileCoord, NodeId> = BTreeMap::new();
    for &(id, spec) in &kernels {
        let Some(tile) = spec.placement_hint else { continue };
        if !platform.contains(tile) {
            return Err(PlacementError::HintOutOfBounds {
                kernel: spec.kernel_name.clone(),
                tile,
                rows: platform.grid_rows,
                cols: platform.grid_cols,
            });
        }
        if let Some(&other) = occupied.get(&tile) {
            return Err(PlacementError::HintConflict {
                first: graph.node(other).name.clone(),
                second: spec.kernel_name.clone(),
                tile,
            });
        }
        occupied.insert(tile, id);
        assignment.insert(id, tile);
    }

    let adjacency = graph.kernel_adjacency();
    let mut visited = vec![false; graph.nodes.len()];
    let mut free: BTreeSet<TileCoord> = platform.tiles().filter(|t| !occupied.contains_key(t)).collect();

    // Grow outwards from the pinned kernels first, then one component at a time.
    let hinted: Vec<NodeId> = assignment.keys().copied().collect();
    let mut order = bfs(&adjacency, &hinted, &mut visited);
    while let Some(root) = component_root(graph, &adjacency, &visited) {
        order.extend(bfs(&adjacency, &[root], &mut visited));
    }

    for id in order {
        if assignment.contains_key(&id) {
            continue;
        }
        let near = adjacency[id]
            .iter()
            .filter_map(|n| assignment.get(n))
            .flat_map(|&t| platform.neighbors(t))
            .find(|t| free.contains(t));
        let tile = match near.or_else(|| free.first().copied()) {
            Some(t) => t,
            None => {
                return Err(PlacementError::GridFull {
                    kernel: graph.node(id).name.clone(),
                    tiles: platform.tile_count(),
                })
            }
        };
        free.remove(&tile);
        assignment.insert(id, tile);
    }

    let channel_class = graph
        .kernel_channels()
        .map(|(i, c)| {
            let a = assignment[&c.producer.node];
            let b = assignment[&c.consumer.node];
            let class = if a.manhattan(b) == 1 {
                ChannelClass::Neighbor
            } else {
                ChannelClass::NocStream
            };
            (i, class)
        })
        .collect();

    let kernel_names = kernels.iter().map(|(id, s)| (*id, s.kernel_name.clone())).collect();
    Ok(Placement {
        assignment,
        channel_class,
        kernel_names,
    })
}

/// Unvisited kernel of minimum degree, earliest in topological order.
fn component_root(graph: &DataflowGraph, adjacency: &[Vec<NodeId>], visited: &[bool]) -> Option<NodeId> {
    let first = *graph.topo_order.iter().find(|&&k| !visited[k])?;
    // Restrict to the component containing `first` so components are placed whole.
    let mut seen = visited.to_vec();
    let component = bfs(adjacency, &[first], &mut seen);
    let rank: BTreeMap<NodeId, usize> = graph.topo_order.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    component.into_iter().min_by_key(|&k| (adjacency[k].len(), rank[&k]))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TileFootprint {
    pub tile: TileCoord,
    pub kernel: String,
    pub bytes: u64,
    pub headroom: u64,
}

/// Occupied tiles in row-major order with their footprint and remaining memory.
pub fn memory_report(graph: &DataflowGraph, placement: &Placement, platform: &PlatformConfig) -> Vec<TileFootprint> {
    let mut rows: Vec<TileFootprint> = placement
        .assignment
        .iter()
        .map(|(&id, &tile)| {
            let spec = graph.node(id).kernel_spec().expect("placement holds kernels only");
            let bytes = kernel_footprint(spec);
            TileFootprint {
                tile,
                kernel: spec.kernel_name.clone(),
                bytes,
                headroom: platform.local_memory_bytes_per_tile.saturating_sub(bytes),
            }
        })
        .collect();
    rows.sort_by_key(|r| r.tile);
    rows
}
