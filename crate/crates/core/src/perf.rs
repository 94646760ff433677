//! Roofline-style time estimates.
//!
//! A kernel's time is the larger of its compute time
//! (`ceil(work / lanes) / clock`) and the slowest of its off-chip transfers
//! (`bytes / axi_bandwidth` per PL-mover port; each mover owns its own AXI
//! interface, so transfers of different ports overlap). Ports fed on-chip, by a
//! generator or another kernel, cost no AXI time.
//!
//! A design runs either pipelined (all kernels overlap; the slowest stage plus
//! one window of fill) or sequentially (stage times summed). Comparing the
//! pipelined composed design against the sequential DRAM round-trip design
//! measures the benefit of dataflow composition.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::catalog::{Direction, RoutineKind, Shape};
use crate::graph::{build_graph, DataflowGraph, GraphError, NodeId, NodeKind};
use crate::placement::{place, Placement, PlacementError};
use crate::platform::{PlatformConfig, TileCoord};
use crate::simulator::{port_shapes, Dims};
use crate::spec::{RoutineSpec, RoutineSpecSet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PerfError {
    #[error("problem size must be positive")]
    ZeroSize,
    #[error("design has no kernel-to-kernel connection to compare against a DRAM round trip")]
    NotAPipeline,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Placement(#[from] PlacementError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignVariant {
    /// Every unconnected port served by a PL mover.
    WithPlMovers,
    /// Every unconnected port generated or consumed on the array.
    OnChipGenerated,
    /// The design as specified, run pipelined.
    DataflowComposed,
    /// Connections cut; intermediates go through DRAM, stages run back to back.
    DramRoundtrip,
}

impl DesignVariant {
    pub const ALL: [DesignVariant; 4] = [
        DesignVariant::WithPlMovers,
        DesignVariant::OnChipGenerated,
        DesignVariant::DataflowComposed,
        DesignVariant::DramRoundtrip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DesignVariant::WithPlMovers => "with_pl_movers",
            DesignVariant::OnChipGenerated => "on_chip_generated",
            DesignVariant::DataflowComposed => "dataflow_composed",
            DesignVariant::DramRoundtrip => "dram_roundtrip",
        }
    }

    /// Rewrites `set` into this variant.
    pub fn apply(self, set: &RoutineSpecSet) -> RoutineSpecSet {
        let mut s = set.clone();
        match self {
            DesignVariant::WithPlMovers => {
                for r in &mut s.routines {
                    r.on_chip_generate.clear();
                }
            }
            DesignVariant::OnChipGenerated => {
                let consumed: Vec<(String, String)> = set
                    .routines
                    .iter()
                    .flat_map(|r| r.connections.iter())
                    .map(|c| (c.source.kernel.clone(), c.source.port.clone()))
                    .collect();
                for r in &mut s.routines {
                    let ports: Vec<&str> = r
                        .blas_routine
                        .ports()
                        .iter()
                        .filter(|p| match p.direction {
                            Direction::Input => !r.is_connected(p.name),
                            Direction::Output => !consumed.iter().any(|(k, q)| *k == r.kernel_name && q == p.name),
                        })
                        .map(|p| p.name)
                        .collect();
                    r.on_chip_generate = ports.into_iter().map(String::from).collect();
                }
            }
            DesignVariant::DataflowComposed => {}
            DesignVariant::DramRoundtrip => s = s.without_connections(),
        }
        s
    }

    /// Which end-to-end figure represents this variant.
    pub fn design_time(self, est: &PerfEstimate) -> f64 {
        match self {
            DesignVariant::DramRoundtrip => est.sequential_time,
            _ => est.pipelined_time,
        }
    }
}

impl fmt::Display for DesignVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DesignVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|v| v.name()).collect();
            format!("unknown variant `{s}` (expected one of {})", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeEstimate {
    pub name: String,
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tile: Option<TileCoord>,
    pub compute_time: f64,
    /// Slowest AXI transfer among the node's mover-served ports.
    pub transfer_time: f64,
    pub node_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerfEstimate {
    pub n: usize,
    pub nodes: Vec<NodeEstimate>,
    /// Kernel names in topological order.
    pub stages: Vec<String>,
    pub fill_overhead: f64,
    pub pipelined_time: f64,
    pub sequential_time: f64,
}

impl PerfEstimate {
    pub fn node(&self, name: &str) -> Option<&NodeEstimate> {
        self.nodes.iter().find(|n| n.name == name)
    }
}

/// Element counts a kernel touches for one problem instance.
struct KernelLoad {
    work: u64,
    /// (port, elements, crosses AXI)
    ports: Vec<(&'static str, u64, bool)>,
}

fn kernel_load(
    graph: &DataflowGraph,
    id: NodeId,
    spec: &RoutineSpec,
    shapes: &std::collections::BTreeMap<&'static str, Shape>,
) -> KernelLoad {
    let work = match spec.blas_routine {
        RoutineKind::Axpy | RoutineKind::Dot => shapes["x"].len(),
        RoutineKind::Gemv => shapes["A"].len(),
    } as u64;
    let ports = spec
        .blas_routine
        .ports()
        .iter()
        .map(|p| {
            let axi = match p.direction {
                Direction::Input => graph
                    .input_channel(id, p.name)
                    .map(|(_, c)| graph.node(c.producer.node).kind.is_pl_mover())
                    .unwrap_or(false),
                Direction::Output => graph
                    .outgoing(id)
                    .filter(|(_, c)| c.producer.port == p.name)
                    .any(|(_, c)| graph.node(c.consumer.node).kind.is_pl_mover()),
            };
            (p.name, shapes[p.name].len() as u64, axi)
        })
        .collect();
    KernelLoad { work, ports }
}

struct Timing {
    compute: f64,
    transfer: f64,
}

impl Timing {
    fn node_time(&self) -> f64 {
        self.compute.max(self.transfer)
    }
}

/// `cap` limits every element count, modelling a single window's worth of work.
fn kernel_timing(spec: &RoutineSpec, load: &KernelLoad, platform: &PlatformConfig, cap: Option<u64>) -> Timing {
    let limit = |v: u64| cap.map_or(v, |c| v.min(c));
    let lanes = u64::from(spec.lanes());
    let compute = limit(load.work).div_ceil(lanes) as f64 / platform.aie_clock_hz;
    let bytes = spec.data_type.bytes();
    let transfer = load
        .ports
        .iter()
        .filter(|(_, _, axi)| *axi)
        .map(|(_, elems, _)| (limit(*elems) * bytes) as f64 / platform.axi_bandwidth_bytes_per_sec)
        .fold(0.0, f64::max);
    Timing { compute, transfer }
}

/// Estimates every node and the whole design for problem size `n`
/// (vector length; gemv is `n x n`).
pub fn estimate(
    graph: &DataflowGraph,
    placement: &Placement,
    platform: &PlatformConfig,
    n: usize,
) -> Result<PerfEstimate, PerfError> {
    estimate_dims(graph, placement, platform, Dims::square(n))
}

pub fn estimate_dims(
    graph: &DataflowGraph,
    placement: &Placement,
    platform: &PlatformConfig,
    dims: Dims,
) -> Result<PerfEstimate, PerfError> {
    if dims.n == 0 || dims.rows == 0 || dims.cols == 0 {
        return Err(PerfError::ZeroSize);
    }
    let shapes = port_shapes(graph, dims);
    let mut nodes = Vec::with_capacity(graph.nodes.len());
    let mut stage_times = Vec::new();
    let mut fill: f64 = 0.0;

    for (id, node) in graph.nodes.iter().enumerate() {
        let est = match &node.kind {
            NodeKind::AieKernel(spec) => {
                let load = kernel_load(graph, id, spec, &shapes[&id]);
                let full = kernel_timing(spec, &load, platform, None);
                let window = kernel_timing(spec, &load, platform, Some(spec.window_elems() as u64));
                fill = fill.max(window.node_time());
                NodeEstimate {
                    name: node.name.clone(),
                    kind: node.kind.label(),
                    tile: placement.tile_of(id),
                    compute_time: full.compute,
                    transfer_time: full.transfer,
                    node_time: full.node_time(),
                }
            }
            kind => {
                let port = kind.served_port().expect("terminal");
                let k = graph.spec.routine_index(&port.kernel).expect("kernel");
                let spec = graph.node(k).kernel_spec().expect("kernel");
                let elems = shapes[&k][port.port.as_str()].len() as u64;
                let (compute, transfer) = if kind.is_pl_mover() {
                    let t = (elems * spec.data_type.bytes()) as f64 / platform.axi_bandwidth_bytes_per_sec;
                    (0.0, t)
                } else {
                    (
                        elems.div_ceil(u64::from(spec.lanes())) as f64 / platform.aie_clock_hz,
                        0.0,
                    )
                };
                NodeEstimate {
                    name: node.name.clone(),
                    kind: kind.label(),
                    tile: None,
                    compute_time: compute,
                    transfer_time: transfer,
                    node_time: compute.max(transfer),
                }
            }
        };
        nodes.push(est);
    }
    for &k in &graph.topo_order {
        stage_times.push(nodes[k].node_time);
    }

    let slowest = stage_times.iter().copied().fold(0.0, f64::max);
    let sequential_time: f64 = stage_times.iter().sum();
    let fill_overhead = if graph.kernel_channels().next().is_some() {
        fill
    } else {
        0.0
    };
    // Overlap can hide time but never add it.
    let pipelined_time = (slowest + fill_overhead).min(sequential_time);

    Ok(PerfEstimate {
        n: dims.n,
        stages: graph.topo_order.iter().map(|&k| graph.node(k).name.clone()).collect(),
        nodes,
        fill_overhead,
        pipelined_time,
        sequential_time,
    })
}

/// Builds, places and estimates `variant` of `set`.
pub fn estimate_variant(set: &RoutineSpecSet, variant: DesignVariant, n: usize) -> Result<PerfEstimate, PerfError> {
    let s = variant.apply(set);
    let g = build_graph(&s)?;
    let p = place(&g, &s.platform)?;
    estimate(&g, &p, &s.platform, n)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantComparison {
    pub n: usize,
    /// Composed design, pipelined.
    pub pipelined_time: f64,
    /// Connections cut, intermediates through DRAM, stages summed.
    pub sequential_time: f64,
    /// `pipelined_time / sequential_time`.
    pub ratio: f64,
}

pub fn compare_variants(
    set: &RoutineSpecSet,
    platform: &PlatformConfig,
    n: usize,
) -> Result<VariantComparison, PerfError> {
    let mut set = set.clone();
    set.platform = platform.clone();
    let composed = build_graph(&set)?;
    if composed.kernel_channels().next().is_none() {
        return Err(PerfError::NotAPipeline);
    }
    let placed = place(&composed, platform)?;
    let pipelined_time = estimate(&composed, &placed, platform, n)?.pipelined_time;
    let sequential_time =
        DesignVariant::DramRoundtrip.design_time(&estimate_variant(&set, DesignVariant::DramRoundtrip, n)?);
    Ok(VariantComparison {
        n,
        pipelined_time,
        sequential_time,
        ratio: pipelined_time / sequential_time,
    })
}
