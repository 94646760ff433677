//! Lowering a [`RoutineSpecSet`] to a dataflow graph.
//!
//! One compute node per routine. Every input port that is not fed by another
//! routine gets a PL mover (or an on-chip generator when the port is listed in
//! `on_chip_generate`); every output port nobody consumes gets an outbound
//! mover (or an on-chip sink). Terminal nodes are named `kernel.port`.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::catalog::{ChannelType, DataType, Direction};
use crate::platform::PlatformConfig;
use crate::spec::{validate_connections, Diagnostic, DiagnosticCode, PortRef, RoutineSpec, RoutineSpecSet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("connections are inconsistent ({} diagnostics)", .0.len())]
    InvalidConnections(Vec<Diagnostic>),
    #[error("kernel connections form a cycle through: {}", .kernels.join(", "))]
    CyclicComposition { kernels: Vec<String> },
    #[error("port `{port}` is both connected and marked on_chip_generate")]
    ConflictingGenerator { port: PortRef },
}

impl GraphError {
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        match self {
            GraphError::InvalidConnections(d) => d.clone(),
            GraphError::CyclicComposition { kernels } => vec![Diagnostic {
                kernel: kernels.first().cloned(),
                port: None,
                code: DiagnosticCode::CyclicComposition,
                message: self.to_string(),
            }],
            GraphError::ConflictingGenerator { port } => vec![Diagnostic {
                kernel: Some(port.kernel.clone()),
                port: Some(port.port.clone()),
                code: DiagnosticCode::ConflictingGenerator,
                message: self.to_string(),
            }],
        }
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    AieKernel(RoutineSpec),
    /// Loads one input port's data from off-chip memory.
    PlMoverIn(PortRef),
    /// Stores one output port's data to off-chip memory.
    PlMoverOut(PortRef),
    /// Synthesizes one input port's data on the array.
    OnChipGenerator(PortRef),
    /// Consumes one output port on the array.
    OnChipSink(PortRef),
}

impl NodeKind {
    pub fn label(&self) -> &'static str {
        match self {
            NodeKind::AieKernel(_) => "aie_kernel",
            NodeKind::PlMoverIn(_) => "pl_mover_in",
            NodeKind::PlMoverOut(_) => "pl_mover_out",
            NodeKind::OnChipGenerator(_) => "on_chip_generator",
            NodeKind::OnChipSink(_) => "on_chip_sink",
        }
    }

    /// The kernel port a terminal node serves.
    pub fn served_port(&self) -> Option<&PortRef> {
        match self {
            NodeKind::AieKernel(_) => None,
            NodeKind::PlMoverIn(p)
            | NodeKind::PlMoverOut(p)
            | NodeKind::OnChipGenerator(p)
            | NodeKind::OnChipSink(p) => Some(p),
        }
    }

    pub fn is_pl_mover(&self) -> bool {
        matches!(self, NodeKind::PlMoverIn(_) | NodeKind::PlMoverOut(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
}

impl Node {
    pub fn kernel_spec(&self) -> Option<&RoutineSpec> {
        match &self.kind {
            NodeKind::AieKernel(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_kernel(&self) -> bool {
        matches!(self.kind, NodeKind::AieKernel(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Endpoint {
    pub node: NodeId,
    pub port: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Window { bytes: u64 },
    Stream,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Channel {
    pub producer: Endpoint,
    pub consumer: Endpoint,
    pub kind: ChannelKind,
    pub shape: ChannelType,
    pub element: DataType,
}

impl Channel {
    pub fn window_elems(&self) -> Option<usize> {
        match self.kind {
            ChannelKind::Window { bytes } => Some((bytes / self.element.bytes()) as usize),
            ChannelKind::Stream => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataflowGraph {
    pub spec: RoutineSpecSet,
    pub nodes: Vec<Node>,
    pub channels: Vec<Channel>,
    /// Kernel nodes only; ties broken by declaration order.
    pub topo_order: Vec<NodeId>,
}

impl DataflowGraph {
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Kernel nodes in declaration order.
    pub fn kernels(&self) -> impl Iterator<Item = (NodeId, &RoutineSpec)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.kernel_spec().map(|s| (i, s)))
    }

    pub fn kernel_count(&self) -> usize {
        self.kernels().count()
    }

    pub fn incoming(&self, node: NodeId) -> impl Iterator<Item = (usize, &Channel)> {
        self.channels
            .iter()
            .enumerate()
            .filter(move |(_, c)| c.consumer.node == node)
    }

    pub fn outgoing(&self, node: NodeId) -> impl Iterator<Item = (usize, &Channel)> {
        self.channels
            .iter()
            .enumerate()
            .filter(move |(_, c)| c.producer.node == node)
    }

    /// The unique channel feeding `node.port`.
    pub fn input_channel(&self, node: NodeId, port: &str) -> Option<(usize, &Channel)> {
        self.incoming(node).find(|(_, c)| c.consumer.port == port)
    }

    pub fn is_kernel_to_kernel(&self, channel: &Channel) -> bool {
        self.nodes[channel.producer.node].is_kernel() && self.nodes[channel.consumer.node].is_kernel()
    }

    pub fn kernel_channels(&self) -> impl Iterator<Item = (usize, &Channel)> {
        self.channels
            .iter()
            .enumerate()
            .filter(|(_, c)| self.is_kernel_to_kernel(c))
    }

    pub fn terminals(&self) -> impl Iterator<Item = (NodeId, &Node)> {
        self.nodes.iter().enumerate().filter(|(_, n)| !n.is_kernel())
    }

    /// Kernel-to-kernel adjacency (undirected), neighbors in declaration order.
    pub fn kernel_adjacency(&self) -> Vec<Vec<NodeId>> {
        let mut adj: Vec<BTreeSet<NodeId>> = vec![BTreeSet::new(); self.nodes.len()];
        for (_, c) in self.kernel_channels() {
            adj[c.producer.node].insert(c.consumer.node);
            adj[c.consumer.node].insert(c.producer.node);
        }
        adj.into_iter().map(|s| s.into_iter().collect()).collect()
    }
}

pub fn build_graph(set: &RoutineSpecSet) -> Result<DataflowGraph, GraphError> {
    let diags = validate_connections(set);
    if !diags.is_empty() {
        return Err(GraphError::InvalidConnections(diags));
    }
    check_generators(set)?;
    let topo_order = topological_order(set)?;

    let mut nodes: Vec<Node> = set
        .routines
        .iter()
        .map(|r| Node {
            name: r.kernel_name.clone(),
            kind: NodeKind::AieKernel(r.clone()),
        })
        .collect();
    let mut channels = Vec::new();

    for (k, r) in set.routines.iter().enumerate() {
        for port in r.blas_routine.ports() {
            let pref = PortRef::new(&r.kernel_name, port.name);
            match port.direction {
                Direction::Input => {
                    let producer = match r.sources_of(port.name).next() {
                        Some(src) => Endpoint {
                            node: set.routine_index(&src.kernel).expect("resolved at parse"),
                            port: src.port.clone(),
                        },
                        None => {
                            let kind = if r.on_chip_generate.contains(port.name) {
                                NodeKind::OnChipGenerator(pref.clone())
                            } else {
                                NodeKind::PlMoverIn(pref.clone())
                            };
                            nodes.push(Node {
                                name: pref.to_string(),
                                kind,
                            });
                            Endpoint {
                                node: nodes.len() - 1,
                                port: port.name.to_string(),
                            }
                        }
                    };
                    channels.push(Channel {
                        producer,
                        consumer: Endpoint {
                            node: k,
                            port: port.name.to_string(),
                        },
                        kind: channel_kind(port.channel, r),
                        shape: port.channel,
                        element: r.data_type,
                    });
                }
                Direction::Output => {
                    if consumers_of(set, &pref).next().is_some() {
                        continue;
                    }
                    let kind = if r.on_chip_generate.contains(port.name) {
                        NodeKind::OnChipSink(pref.clone())
                    } else {
                        NodeKind::PlMoverOut(pref.clone())
                    };
                    nodes.push(Node {
                        name: pref.to_string(),
                        kind,
                    });
                    channels.push(Channel {
                        producer: Endpoint {
                            node: k,
                            port: port.name.to_string(),
                        },
                        consumer: Endpoint {
                            node: nodes.len() - 1,
                            port: port.name.to_string(),
                        },
                        kind: channel_kind(port.channel, r),
                        shape: port.channel,
                        element: r.data_type,
                    });
                }
            }
        }
    }

    Ok(DataflowGraph {
        spec: set.clone(),
        nodes,
        channels,
        topo_order,
    })
}

fn channel_kind(channel: ChannelType, window_owner: &RoutineSpec) -> ChannelKind {
    if channel.is_window() {
        ChannelKind::Window {
            bytes: window_owner.window_size_bytes,
        }
    } else {
        ChannelKind::Stream
    }
}

fn consumers_of<'a>(set: &'a RoutineSpecSet, output: &'a PortRef) -> impl Iterator<Item = &'a RoutineSpec> {
    set.routines
        .iter()
        .filter(move |r| r.connections.iter().any(|c| &c.source == output))
}

fn check_generators(set: &RoutineSpecSet) -> Result<(), GraphError> {
    for r in &set.routines {
        for port in &r.on_chip_generate {
            let pref = PortRef::new(&r.kernel_name, port.as_str());
            let connected = match r.blas_routine.port(port).map(|p| p.direction) {
                Some(Direction::Input) => r.is_connected(port),
                Some(Direction::Output) => consumers_of(set, &pref).next().is_some(),
                None => false,
            };
            if connected {
                return Err(GraphError::ConflictingGenerator { port: pref });
            }
        }
    }
    Ok(())
}

/// Kahn's algorithm over kernel indices; the smallest ready index goes first.
fn topological_order(set: &RoutineSpecSet) -> Result<Vec<NodeId>, GraphError> {
    let n = set.routines.len();
    let mut indegree = vec![0usize; n];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, r) in set.routines.iter().enumerate() {
        for c in &r.connections {
            let p = set.routine_index(&c.source.kernel).expect("resolved at parse");
            succ[p].push(k);
            indegree[k] += 1;
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&k| indegree[k] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(k) = ready.pop_first() {
        order.push(k);
        for &s in &succ[k] {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                ready.insert(s);
            }
        }
    }
    if order.len() < n {
        let kernels = (0..n)
            .filter(|&k| indegree[k] > 0)
            .map(|k| set.routines[k].kernel_name.clone())
            .collect();
        return Err(GraphError::CyclicComposition { kernels });
    }
    Ok(order)
}

// ---------------------------------------------------------------------------
// Interface budget
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BudgetReport {
    pub pl_to_aie: usize,
    pub aie_to_pl: usize,
    pub pl_to_aie_limit: usize,
    pub aie_to_pl_limit: usize,
}

impl BudgetReport {
    pub fn within_budget(&self) -> bool {
        self.pl_to_aie <= self.pl_to_aie_limit && self.aie_to_pl <= self.aie_to_pl_limit
    }

    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        for (used, limit, dir) in [
            (self.pl_to_aie, self.pl_to_aie_limit, "PL->AIE"),
            (self.aie_to_pl, self.aie_to_pl_limit, "AIE->PL"),
        ] {
            if used > limit {
                out.push(Diagnostic {
                    kernel: None,
                    port: None,
                    code: DiagnosticCode::InterfaceBudgetExceeded,
                    message: format!("design needs {used} {dir} interfaces, platform has {limit}"),
                });
            }
        }
        out
    }
}

pub fn interface_budget(graph: &DataflowGraph, platform: &PlatformConfig) -> BudgetReport {
    let count = |pred: fn(&NodeKind) -> bool| graph.nodes.iter().filter(|n| pred(&n.kind)).count();
    BudgetReport {
        pl_to_aie: count(|k| matches!(k, NodeKind::PlMoverIn(_))),
        aie_to_pl: count(|k| matches!(k, NodeKind::PlMoverOut(_))),
        pl_to_aie_limit: platform.pl_to_aie_streams,
        aie_to_pl_limit: platform.aie_to_pl_streams,
    }
}

// ---------------------------------------------------------------------------
// DOT
// ---------------------------------------------------------------------------

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// GraphViz rendering: kernels are boxes, movers ellipses (on-chip terminals
/// filled grey), windows solid edges labeled with their byte size, streams dashed.
pub fn to_dot(graph: &DataflowGraph) -> String {
    let mut out = String::new();
    out.push_str("digraph design {\n");
    out.push_str("  rankdir=LR;\n");
    for node in &graph.nodes {
        let name = dot_escape(&node.name);
        let attrs = match &node.kind {
            NodeKind::AieKernel(s) => format!("shape=box, label=\"{name}\\n{} {}\"", s.blas_routine, s.data_type),
            NodeKind::PlMoverIn(_) => format!("shape=ellipse, label=\"{name}\\nPL in\""),
            NodeKind::PlMoverOut(_) => format!("shape=ellipse, label=\"{name}\\nPL out\""),
            NodeKind::OnChipGenerator(_) => {
                format!("shape=ellipse, style=filled, fillcolor=lightgrey, label=\"{name}\\ngenerator\"")
            }
            NodeKind::OnChipSink(_) => {
                format!("shape=ellipse, style=filled, fillcolor=lightgrey, label=\"{name}\\nsink\"")
            }
        };
        let _ = writeln!(out, "  \"{name}\" [{attrs}];");
    }
    for c in &graph.channels {
        let from = dot_escape(&graph.nodes[c.producer.node].name);
        let to = dot_escape(&graph.nodes[c.consumer.node].name);
        let attrs = match c.kind {
            ChannelKind::Window { bytes } => format!(
                "style=solid, label=\"{}→{} {bytes}B\"",
                c.producer.port, c.consumer.port
            ),
            ChannelKind::Stream => {
                format!("style=dashed, label=\"{}→{}\"", c.producer.port, c.consumer.port)
            }
        };
        let _ = writeln!(out, "  \"{from}\" -> \"{to}\" [{attrs}];");
    }
    out.push_str("}\n");
    out
}

/// Breadth-first order over the undirected kernel graph starting at `roots`.
pub(crate) fn bfs(adjacency: &[Vec<NodeId>], roots: &[NodeId], visited: &mut [bool]) -> Vec<NodeId> {
    let mut order = Vec::new();
    let mut queue: VecDeque<NodeId> = VecDeque::new();
    for &r in roots {
        if !visited[r] {
            visited[r] = true;
            queue.push_back(r);
        }
    }
    while let Some(n) = queue.pop_front() {
        order.push(n);
        for &m in &adjacency[n] {
            if !visited[m] {
                visited[m] = true;
                queue.push_back(m);
            }
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::parse_spec;

    pub(crate) const AXPYDOT: &str = r#"{"routines":[
        {"blas_routine":"axpy","kernel_name":"a"},
        {"blas_routine":"dot","kernel_name":"d","connections":{"x":"a.z"}}]}"#;

    fn count(g: &DataflowGraph, f: fn(&NodeKind) -> bool) -> usize {
        g.nodes.iter().filter(|n| f(&n.kind)).count()
    }

    #[test]
    fn axpydot_counts() {
        let g = build_graph(&parse_spec(AXPYDOT).unwrap()).unwrap();
        // Oracle: ports per signature minus connected ones.
        let s = &g.spec;
        let unconnected_inputs: usize = s
            .routines
            .iter()
            .map(|r| r.blas_routine.inputs().filter(|p| !r.is_connected(p.name)).count())
            .sum();
        assert_eq!(unconnected_inputs, 4);
        assert_eq!(g.kernel_count(), 2);
        assert_eq!(count(&g, |k| matches!(k, NodeKind::PlMoverIn(_))), 4);
        assert_eq!(count(&g, |k| matches!(k, NodeKind::PlMoverOut(_))), 1);
        assert_eq!(g.kernel_channels().count(), 1);
        assert_eq!(g.nodes.len(), 7);
        assert_eq!(g.channels.len(), 6);
        let movers: Vec<_> = g.terminals().map(|(_, n)| n.name.as_str()).collect();
        assert_eq!(movers, ["a.alpha", "a.x", "a.y", "d.y", "d.result"]);
        assert_eq!(g.topo_order, vec![0, 1]);
    }

    #[test]
    fn single_dot() {
        let g =
            build_graph(&parse_spec(r#"{"routines":[{"blas_routine":"dot","kernel_name":"d"}]}"#).unwrap()).unwrap();
        assert_eq!(count(&g, |k| matches!(k, NodeKind::PlMoverIn(_))), 2);
        assert_eq!(count(&g, |k| matches!(k, NodeKind::PlMoverOut(_))), 1);
    }

    #[test]
    fn cycle_rejected() {
        let s = parse_spec(
            r#"{"routines":[
            {"blas_routine":"axpy","kernel_name":"a","connections":{"alpha":"d.result"}},
            {"blas_routine":"dot","kernel_name":"d","connections":{"x":"a.z"}}]}"#,
        )
        .unwrap();
        assert_eq!(
            build_graph(&s),
            Err(GraphError::CyclicComposition {
                kernels: vec!["a".into(), "d".into()]
            })
        );
        let s = parse_spec(r#"{"routines":[{"blas_routine":"axpy","kernel_name":"a","connections":{"x":"a.z"}}]}"#)
            .unwrap();
        assert!(matches!(build_graph(&s), Err(GraphError::CyclicComposition { .. })));
    }

    #[test]
    fn conflicting_generator() {
        let s = parse_spec(
            r#"{"routines":[
            {"blas_routine":"axpy","kernel_name":"a"},
            {"blas_routine":"dot","kernel_name":"d","connections":{"x":"a.z"},"on_chip_generate":["x"]}]}"#,
        )
        .unwrap();
        assert!(matches!(build_graph(&s), Err(GraphError::ConflictingGenerator { .. })));
        let s = parse_spec(
            r#"{"routines":[
            {"blas_routine":"axpy","kernel_name":"a","on_chip_generate":["z"]},
            {"blas_routine":"dot","kernel_name":"d","connections":{"x":"a.z"}}]}"#,
        )
        .unwrap();
        assert!(matches!(build_graph(&s), Err(GraphError::ConflictingGenerator { .. })));
    }

    #[test]
    fn invalid_connections_surface() {
        let s = parse_spec(
            r#"{"routines":[
            {"blas_routine":"dot","kernel_name":"d"},
            {"blas_routine":"gemv","kernel_name":"g","connections":{"A":"d.result"}}]}"#,
        )
        .unwrap();
        assert!(matches!(build_graph(&s), Err(GraphError::InvalidConnections(d)) if d.len() == 1));
    }

    #[test]
    fn fan_out_duplicates_channel() {
        let s = parse_spec(
            r#"{"routines":[
            {"blas_routine":"axpy","kernel_name":"a"},
            {"blas_routine":"dot","kernel_name":"d1","connections":{"x":"a.z"}},
            {"blas_routine":"dot","kernel_name":"d2","connections":{"y":"a.z"}}]}"#,
        )
        .unwrap();
        let g = build_graph(&s).unwrap();
        assert_eq!(g.outgoing(0).count(), 2);
        assert!(g.find("a.z").is_none());
    }

    #[test]
    fn channel_window_bytes_follow_consumer() {
        let s = parse_spec(
            r#"{"routines":[
            {"blas_routine":"axpy","kernel_name":"a","window_size_bytes":512},
            {"blas_routine":"dot","kernel_name":"d","window_size_bytes":2048,"connections":{"x":"a.z"}}]}"#,
        )
        .unwrap();
        let g = build_graph(&s).unwrap();
        let (_, c) = g.kernel_channels().next().unwrap();
        assert_eq!(c.kind, ChannelKind::Window { bytes: 2048 });
        let z = g.find("a.x").unwrap();
        assert_eq!(g.outgoing(z).next().unwrap().1.kind, ChannelKind::Window { bytes: 512 });
    }

    #[test]
    fn budget() {
        let p = PlatformConfig::default();
        let g = build_graph(&parse_spec(AXPYDOT).unwrap()).unwrap();
        let b = interface_budget(&g, &p);
        assert_eq!((b.pl_to_aie, b.aie_to_pl), (4, 1));
        assert!(b.within_budget());

        let gen_all = r#"{"routines":[
            {"blas_routine":"axpy","kernel_name":"a","on_chip_generate":["alpha","x","y","z"]}]}"#;
        let g = build_graph(&parse_spec(gen_all).unwrap()).unwrap();
        let b = interface_budget(&g, &p);
        assert_eq!((b.pl_to_aie, b.aie_to_pl), (0, 0));
    }

    fn many_axpys(n: usize) -> String {
        let r: Vec<String> = (0..n)
            .map(|i| format!(r#"{{"blas_routine":"axpy","kernel_name":"k{i}"}}"#))
            .collect();
        format!(r#"{{"routines":[{}]}}"#, r.join(","))
    }

    #[test]
    fn budget_boundary() {
        let p = PlatformConfig::default();
        // 104 axpys × 3 inputs = 312 inbound movers: exactly at the limit.
        let g = build_graph(&parse_spec(&many_axpys(104)).unwrap()).unwrap();
        assert!(interface_budget(&g, &p).within_budget());
        let g = build_graph(&parse_spec(&many_axpys(105)).unwrap()).unwrap();
        let b = interface_budget(&g, &p);
        assert_eq!(b.pl_to_aie, 315);
        assert!(!b.within_budget());
        assert_eq!(b.diagnostics()[0].code, DiagnosticCode::InterfaceBudgetExceeded);
    }

    #[test]
    fn dot_output() {
        let g = build_graph(&parse_spec(AXPYDOT).unwrap()).unwrap();
        let text = to_dot(&g);
        assert_eq!(text.lines().filter(|l| l.contains(" -> ")).count(), 6);
        assert_eq!(text.lines().filter(|l| l.contains(" [shape=")).count(), 7);
        assert_eq!(text.matches("shape=box").count(), 2);
        assert_eq!(text.matches("style=dashed").count(), 2);
        assert!(text.contains("\"a\" -> \"d\" [style=solid, label=\"z→x 1024B\"]"));
        assert_eq!(text, to_dot(&build_graph(&parse_spec(AXPYDOT).unwrap()).unwrap()));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        /// Random feed-forward spec: each routine may take window inputs from earlier ones.
        pub(crate) fn random_spec() -> impl Strategy<Value = String> {
            prop::collection::vec((0usize..3, any::<u64>(), any::<u8>()), 1..8).prop_map(|rs| {
                let kinds = ["axpy", "dot", "gemv"];
                let mut body = Vec::new();
                for (i, (k, pick, gen)) in rs.iter().enumerate() {
                    let kind = kinds[*k];
                    let mut conns = Vec::new();
                    if i > 0 && pick % 2 == 0 {
                        let src = (*pick as usize / 2) % i;
                        let src_kind = kinds[rs[src].0];
                        let port = if kind == "dot" { "y" } else { "x" };
                        if src_kind != "dot" {
                            conns.push(format!(r#""{port}":"k{src}.z""#));
                        } else if kind != "dot" {
                            conns.push(format!(r#""alpha":"k{src}.result""#));
                        }
                    }
                    let gen_port = if gen % 3 == 0 {
                        r#","on_chip_generate":["y"]"#
                    } else {
                        ""
                    };
                    let gen_port = if conns.iter().any(|c| c.starts_with("\"y\"")) {
                        ""
                    } else {
                        gen_port
                    };
                    body.push(format!(
                        r#"{{"blas_routine":"{kind}","kernel_name":"k{i}","connections":{{{}}}{gen_port}}}"#,
                        conns.join(",")
                    ));
                }
                format!(r#"{{"routines":[{}]}}"#, body.join(","))
            })
        }

        proptest! {
            #[test]
            fn mover_count_is_unconnected_ungenerated_ports(text in random_spec()) {
                let s = parse_spec(&text).unwrap();
                let g = build_graph(&s).unwrap();
                let mut expected = 0;
                for r in &s.routines {
                    for p in r.blas_routine.ports() {
                        let connected = match p.direction {
                            Direction::Input => r.is_connected(p.name),
                            Direction::Output => s.routines.iter().any(|c| c.connections.iter()
                                .any(|cn| cn.source == PortRef::new(&r.kernel_name, p.name))),
                        };
                        if !connected && !r.on_chip_generate.contains(p.name) {
                            expected += 1;
                        }
                    }
                }
                prop_assert_eq!(g.nodes.iter().filter(|n| n.kind.is_pl_mover()).count(), expected);
                // every kernel input has exactly one producer, every output at least one consumer
                for (id, spec) in g.kernels() {
                    for p in spec.blas_routine.ports() {
                        let n = match p.direction {
                            Direction::Input => g.incoming(id).filter(|(_, c)| c.consumer.port == p.name).count(),
                            Direction::Output => g.outgoing(id).filter(|(_, c)| c.producer.port == p.name).count(),
                        };
                        if p.direction == Direction::Input { prop_assert_eq!(n, 1); } else { prop_assert!(n >= 1); }
                    }
                }
                prop_assert_eq!(&g, &build_graph(&s).unwrap());
                let bare = build_graph(&s.without_connections()).unwrap();
                prop_assert_eq!(bare.kernel_channels().count(), 0);
            }
        }
    }
}
