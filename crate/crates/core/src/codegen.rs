//! Source generation for a placed design.
//!
//! Output tree:
//!
//! ```text
//! aie/<kernel>.src          one per compute kernel
//! aie/<kernel>.<port>.src   one per on-chip generator or sink
//! pl/<kernel>.<port>.src    one per PL mover
//! graph.def                 graph wiring and placement constraints
//! design.manifest.json      sources, placement, spec hash
//! ```
//!
//! Everything is rendered from the text templates under `templates/`, with
//! `{{name}}` placeholders. A placeholder without a binding is a generator bug
//! and fails loudly. Output depends only on the design, never on the host.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{ChannelType, Direction, RoutineKind, RAMP_MODULUS};
use crate::graph::{ChannelKind, DataflowGraph, NodeId, NodeKind};
use crate::placement::{ChannelClass, Placement};
use crate::platform::{PlatformConfig, TileCoord};
use crate::spec::RoutineSpec;

pub const GENERATOR_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const GRAPH_FILE: &str = "graph.def";
pub const MANIFEST_FILE: &str = "design.manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodegenError {
    #[error("template `{template}` has no binding for `{{{{{placeholder}}}}}`")]
    IncompleteBinding { template: String, placeholder: String },
    #[error("template `{template}` has an unterminated placeholder")]
    MalformedTemplate { template: String },
    #[error("output directory {} is not empty (use --force to overwrite)", .0.display())]
    NonEmptyOutputDir(PathBuf),
    #[error("I/O error on {}: {message}", .path.display())]
    Io { path: PathBuf, message: String },
}

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct Template {
    pub name: &'static str,
    pub text: &'static str,
}

macro_rules! template {
    ($name:literal) => {
        Template {
            name: $name,
            text: include_str!(concat!("../templates/", $name, ".tmpl")),
        }
    };
}

const KERNEL_HEADER: Template = template!("kernel_header");
const KERNEL_AXPY: Template = template!("kernel_axpy");
const KERNEL_DOT: Template = template!("kernel_dot");
const KERNEL_GEMV: Template = template!("kernel_gemv");
const MOVER_IN: Template = template!("mover_in");
const MOVER_OUT: Template = template!("mover_out");
const GENERATOR: Template = template!("generator");
const SINK: Template = template!("sink");
const GRAPH: Template = template!("graph");

pub fn kernel_body_template(kind: RoutineKind) -> Template {
    match kind {
        RoutineKind::Axpy => KERNEL_AXPY,
        RoutineKind::Dot => KERNEL_DOT,
        RoutineKind::Gemv => KERNEL_GEMV,
    }
}

pub type Bindings = BTreeMap<&'static str, String>;

impl Template {
    pub fn placeholders(&self) -> Result<Vec<&'static str>, CodegenError> {
        let mut out = Vec::new();
        let mut rest = self.text;
        while let Some(start) = rest.find("{{") {
            let after = &rest[start + 2..];
            let end = after.find("}}").ok_or_else(|| CodegenError::MalformedTemplate {
                template: self.name.to_string(),
            })?;
            out.push(&after[..end]);
            rest = &after[end + 2..];
        }
        Ok(out)
    }

    pub fn render(&self, bindings: &Bindings) -> Result<String, CodegenError> {
        let mut out = String::with_capacity(self.text.len() * 2);
        let mut rest = self.text;
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after.find("}}").ok_or_else(|| CodegenError::MalformedTemplate {
                template: self.name.to_string(),
            })?;
            let key = &after[..end];
            let value = bindings.get(key).ok_or_else(|| CodegenError::IncompleteBinding {
                template: self.name.to_string(),
                placeholder: key.to_string(),
            })?;
            out.push_str(value);
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Design
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedFile {
    pub path: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestKernel {
    pub name: String,
    pub routine: RoutineKind,
    pub source: String,
    pub tile: TileCoord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestTerminal {
    pub name: String,
    pub kind: &'static str,
    pub port: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub generator: &'static str,
    pub generator_version: &'static str,
    pub spec_sha256: String,
    pub graph: &'static str,
    pub kernels: Vec<ManifestKernel>,
    pub terminals: Vec<ManifestTerminal>,
    pub sources: Vec<String>,
    pub placement: BTreeMap<String, TileCoord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDesign {
    /// In emission order: kernels, terminals, graph, manifest.
    pub files: Vec<GeneratedFile>,
    pub manifest: Manifest,
}

impl GeneratedDesign {
    pub fn file(&self, path: &str) -> Option<&GeneratedFile> {
        self.files.iter().find(|f| f.path == path)
    }
}

pub fn source_path(graph: &DataflowGraph, id: NodeId) -> String {
    let node = graph.node(id);
    match node.kind {
        NodeKind::PlMoverIn(_) | NodeKind::PlMoverOut(_) => format!("pl/{}.src", node.name),
        _ => format!("aie/{}.src", node.name),
    }
}

/// C identifier for a node. Catalog port names contain no underscores, so
/// `kernel_port` cannot collide between distinct nodes.
fn symbol(graph: &DataflowGraph, id: NodeId) -> String {
    let node = graph.node(id);
    match &node.kind {
        NodeKind::AieKernel(_) => node.name.clone(),
        NodeKind::PlMoverIn(p) => format!("mm2s_{}_{}", p.kernel, p.port),
        NodeKind::PlMoverOut(p) => format!("s2mm_{}_{}", p.kernel, p.port),
        NodeKind::OnChipGenerator(p) => format!("gen_{}_{}", p.kernel, p.port),
        NodeKind::OnChipSink(p) => format!("sink_{}_{}", p.kernel, p.port),
    }
}

pub fn spec_hash(graph: &DataflowGraph) -> String {
    hex::encode(Sha256::digest(graph.spec.to_json().as_bytes()))
}

fn base_bindings() -> Bindings {
    let mut b = Bindings::new();
    b.insert("version", GENERATOR_VERSION.to_string());
    b
}

fn port_type(dir: Direction, channel: ChannelType, ctype: &str) -> String {
    match (dir, channel.is_window()) {
        (Direction::Input, true) => format!("input_window<{ctype}>*"),
        (Direction::Output, true) => format!("output_window<{ctype}>*"),
        (Direction::Input, false) => format!("input_stream<{ctype}>*"),
        (Direction::Output, false) => format!("output_stream<{ctype}>*"),
    }
}

fn render_kernel(spec: &RoutineSpec) -> Result<String, CodegenError> {
    let ctype = spec.data_type.c_type();
    let mut b = base_bindings();
    b.insert("kernel", spec.kernel_name.clone());
    b.insert("routine", spec.blas_routine.name().to_string());
    b.insert("dtype", spec.data_type.name().to_string());
    b.insert("ctype", ctype.to_string());
    b.insert("lanes", spec.lanes().to_string());
    b.insert("element_bits", spec.data_type.bits().to_string());
    b.insert("vector_bits", spec.vector_width_bits.to_string());
    b.insert("window_bytes", spec.window_size_bytes.to_string());
    b.insert("window_elems", spec.window_elems().to_string());
    let ports = spec.blas_routine.ports();
    let signature: Vec<String> = ports
        .iter()
        .map(|p| format!("    {} {}", port_type(p.direction, p.channel, ctype), p.name))
        .collect();
    b.insert("signature", signature.join(",\n"));
    let k = &spec.kernel_name;
    let params = match spec.blas_routine {
        RoutineKind::Axpy => "// no runtime parameters".to_string(),
        RoutineKind::Dot => format!("extern unsigned {k}_len; // runtime parameter: vector length"),
        RoutineKind::Gemv => format!(
            "extern unsigned {k}_cols; // runtime parameter: columns of A\n\
             extern unsigned {k}_x_local_fill;\n\
             extern {ctype} {k}_x_local[];"
        ),
    };
    b.insert("runtime_params", params);
    let mut out = KERNEL_HEADER.render(&b)?;
    out.push_str(&kernel_body_template(spec.blas_routine).render(&b)?);
    Ok(out)
}

fn shape_label(channel: ChannelType) -> &'static str {
    match channel {
        ChannelType::Stream => "scalar stream",
        ChannelType::VectorWindow => "vector window",
        ChannelType::MatrixWindow => "matrix window",
    }
}

fn render_terminal(graph: &DataflowGraph, id: NodeId) -> Result<String, CodegenError> {
    let node = graph.node(id);
    let port = node.kind.served_port().expect("terminal");
    let k = graph.spec.routine_index(&port.kernel).expect("kernel");
    let spec = graph.node(k).kernel_spec().expect("kernel");
    let channel = spec.blas_routine.port(&port.port).expect("catalog port").channel;
    let ctype = spec.data_type.c_type();
    let mut b = base_bindings();
    b.insert("node", node.name.clone());
    b.insert("symbol", symbol(graph, id));
    b.insert("kernel", port.kernel.clone());
    b.insert("port", port.port.clone());
    b.insert("dtype", spec.data_type.name().to_string());
    b.insert("ctype", ctype.to_string());
    b.insert("shape", shape_label(channel).to_string());
    let count = match channel {
        ChannelType::Stream => "1".to_string(),
        _ => spec.window_elems().to_string(),
    };
    let template = match node.kind {
        NodeKind::PlMoverIn(_) => MOVER_IN,
        NodeKind::PlMoverOut(_) => MOVER_OUT,
        NodeKind::OnChipGenerator(_) => {
            b.insert("ramp_modulus", RAMP_MODULUS.to_string());
            b.insert("count", count);
            b.insert("out_type", port_type(Direction::Output, channel, ctype));
            b.insert(
                "write",
                if channel.is_window() {
                    "window_writeincr"
                } else {
                    "writeincr"
                }
                .to_string(),
            );
            GENERATOR
        }
        NodeKind::OnChipSink(_) => {
            b.insert("count", count);
            b.insert("in_type", port_type(Direction::Input, channel, ctype));
            b.insert(
                "read",
                if channel.is_window() {
                    "window_readincr"
                } else {
                    "readincr"
                }
                .to_string(),
            );
            SINK
        }
        NodeKind::AieKernel(_) => unreachable!("kernels are rendered separately"),
    };
    template.render(&b)
}

fn render_graph(graph: &DataflowGraph, placement: &Placement) -> Result<String, CodegenError> {
    let mut b = base_bindings();
    let kernels: Vec<(NodeId, &RoutineSpec)> = graph.kernels().collect();
    let terminals: Vec<NodeId> = graph.terminals().map(|(id, _)| id).collect();
    b.insert("kernel_count", kernels.len().to_string());
    b.insert("terminal_count", terminals.len().to_string());
    b.insert("channel_count", graph.channels.len().to_string());

    let mut decls = String::new();
    let mut defs = String::new();
    let mut places = String::new();
    for &(id, spec) in &kernels {
        let _ = writeln!(decls, "    adf::kernel {};", spec.kernel_name);
        let _ = writeln!(
            defs,
            "        {k} = adf::kernel::create({k});\n        adf::source({k}) = \"{src}\";\n        adf::runtime<adf::ratio>({k}) = 0.9;",
            k = spec.kernel_name,
            src = source_path(graph, id)
        );
        let tile = placement.tile_of(id).expect("every kernel placed");
        let _ = writeln!(
            places,
            "        adf::location<adf::kernel>({}) = adf::tile({}, {});",
            spec.kernel_name, tile.col, tile.row
        );
    }

    let mut tdecls = String::new();
    let mut tdefs = String::new();
    for &id in &terminals {
        let sym = symbol(graph, id);
        let src = source_path(graph, id);
        match graph.node(id).kind {
            NodeKind::PlMoverIn(_) => {
                let _ = writeln!(tdecls, "    adf::input_plio {sym};");
                let _ = writeln!(
                    tdefs,
                    "        {sym} = adf::input_plio::create(\"{sym}\", adf::plio_32_bits, \"{src}\");"
                );
            }
            NodeKind::PlMoverOut(_) => {
                let _ = writeln!(tdecls, "    adf::output_plio {sym};");
                let _ = writeln!(
                    tdefs,
                    "        {sym} = adf::output_plio::create(\"{sym}\", adf::plio_32_bits, \"{src}\");"
                );
            }
            _ => {
                let _ = writeln!(tdecls, "    adf::kernel {sym};");
                let _ = writeln!(
                    tdefs,
                    "        {sym} = adf::kernel::create({sym});\n        adf::source({sym}) = \"{src}\";"
                );
            }
        }
    }

    let mut conns = String::new();
    for (ci, c) in graph.channels.iter().enumerate() {
        let end = |id: NodeId, port: &str, dir: Direction| -> String {
            let node = graph.node(id);
            let sym = symbol(graph, id);
            match &node.kind {
                NodeKind::AieKernel(spec) => {
                    let idx = spec
                        .blas_routine
                        .ports()
                        .iter()
                        .filter(|p| p.direction == dir)
                        .position(|p| p.name == port)
                        .expect("catalog port");
                    let side = if dir == Direction::Input { "in" } else { "out" };
                    format!("{sym}.{side}[{idx}]")
                }
                _ => format!(
                    "{sym}.{}",
                    match dir {
                        Direction::Output => "out[0]",
                        Direction::Input => "in[0]",
                    }
                ),
            }
        };
        let from = end(c.producer.node, &c.producer.port, Direction::Output);
        let to = end(c.consumer.node, &c.consumer.port, Direction::Input);
        let kind = match c.kind {
            ChannelKind::Window { bytes } => format!("adf::window<{bytes}>"),
            ChannelKind::Stream => "adf::stream".to_string(),
        };
        let route = match placement.class_of(ci) {
            Some(ChannelClass::Neighbor) => " // neighbor".to_string(),
            Some(ChannelClass::NocStream) => " // noc".to_string(),
            None => String::new(),
        };
        let _ = writeln!(conns, "        adf::connect<{kind}>({from}, {to});{route}");
    }

    b.insert("kernel_decls", decls.trim_end().to_string());
    b.insert("kernel_defs", defs.trim_end().to_string());
    b.insert("placements", places.trim_end().to_string());
    b.insert("terminal_decls", tdecls.trim_end().to_string());
    b.insert("terminal_defs", tdefs.trim_end().to_string());
    b.insert("connections", conns.trim_end().to_string());
    GRAPH.render(&b)
}

pub fn emit_design(
    graph: &DataflowGraph,
    placement: &Placement,
    platform: &PlatformConfig,
) -> Result<GeneratedDesign, CodegenError> {
    let _ = platform;
    let mut files = Vec::new();
    let mut kernels = Vec::new();
    let mut terminals = Vec::new();

    for (id, spec) in graph.kernels() {
        let path = source_path(graph, id);
        files.push(GeneratedFile {
            path: path.clone(),
            content: render_kernel(spec)?,
        });
        kernels.push(ManifestKernel {
            name: spec.kernel_name.clone(),
            routine: spec.blas_routine,
            source: path,
            tile: placement.tile_of(id).expect("every kernel placed"),
        });
    }
    for (id, node) in graph.terminals() {
        let path = source_path(graph, id);
        files.push(GeneratedFile {
            path: path.clone(),
            content: render_terminal(graph, id)?,
        });
        terminals.push(ManifestTerminal {
            name: node.name.clone(),
            kind: node.kind.label(),
            port: node.kind.served_port().expect("terminal").to_string(),
            source: path,
        });
    }
    files.push(GeneratedFile {
        path: GRAPH_FILE.to_string(),
        content: render_graph(graph, placement)?,
    });

    let manifest = Manifest {
        generator: "dbf",
        generator_version: GENERATOR_VERSION,
        spec_sha256: spec_hash(graph),
        graph: GRAPH_FILE,
        kernels,
        terminals,
        sources: files.iter().map(|f| f.path.clone()).collect(),
        placement: placement
            .by_name()
            .into_iter()
            .map(|(k, t)| (k.to_string(), t))
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    text.push('\n');
    files.push(GeneratedFile {
        path: MANIFEST_FILE.to_string(),
        content: text,
    });
    Ok(GeneratedDesign { files, manifest })
}

/// Writes every file under `out_dir`. Refuses a non-empty directory unless
/// `force`, in which case files are overwritten in place.
pub fn write_design(design: &GeneratedDesign, out_dir: &Path, force: bool) -> Result<usize, CodegenError> {
    let io = |path: &Path, e: std::io::Error| CodegenError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    if out_dir.exists() {
        if !out_dir.is_dir() {
            return Err(CodegenError::Io {
                path: out_dir.to_path_buf(),
                message: "not a directory".into(),
            });
        }
        let non_empty = fs::read_dir(out_dir).map_err(|e| io(out_dir, e))?.next().is_some();
        if non_empty && !force {
            return Err(CodegenError::NonEmptyOutputDir(out_dir.to_path_buf()));
        }
    }
    for f in &design.files {
        let path = out_dir.join(&f.path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
        }
        fs::write(&path, &f.content).map_err(|e| io(&path, e))?;
    }
    Ok(design.files.len())
}

/// Compares `design` with a tree on disk. Returns one line per missing,
/// differing or unexpected file; empty when the tree matches byte for byte.
pub fn diff_design(design: &GeneratedDesign, dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    for f in &design.files {
        match fs::read_to_string(dir.join(&f.path)) {
            Ok(text) if text == f.content => {}
            Ok(_) => out.push(format!("differs: {}", f.path)),
            Err(_) => out.push(format!("missing: {}", f.path)),
        }
    }
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(entries) = fs::read_dir(&d) else { continue };
        for e in entries.flatten() {
            let path = e.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path
                .strip_prefix(dir)
                .expect("under dir")
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            if design.file(&rel).is_none() {
                out.push(format!("unexpected: {rel}"));
            }
        }
    }
    out.sort();
    out
}
