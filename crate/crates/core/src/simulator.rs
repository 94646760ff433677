//! Functional execution of a dataflow graph at window granularity.
//!
//! Kernels run in topological order. Each one reads its window inputs one
//! window at a time (the tail window is zero-padded and masked), reads scalars
//! from streams, and writes its outputs in windows of its own size. Arithmetic
//! follows the catalog's reference order, so results do not depend on the
//! window size.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::catalog::{
    self, apply_reference, Buffer, CatalogError, ChannelType, DataType, Element, Elements, PortValues, RoutineKind,
    Shape,
};
use crate::graph::{Channel, DataflowGraph, NodeId, NodeKind};
use crate::placement::{ChannelClass, Placement};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("input `{node}` is not bound")]
    UnboundInput { node: String },
    #[error("cannot infer the size of generated input `{node}`; give \"n\" in the input data")]
    UnknownSize { node: String },
    #[error("binding `{name}` does not name an input mover")]
    UnknownBinding { name: String },
    #[error("shape mismatch at `{at}`: {detail}")]
    ShapeMismatch { at: String, detail: String },
    #[error("i32 overflow in kernel `{kernel}`")]
    Overflow { kernel: String },
    #[error("bad input data for `{at}`: {detail}")]
    BadData { at: String, detail: String },
}

/// Default problem dimensions for ports whose size cannot be inferred from
/// bound data (on-chip generated inputs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Dims {
    /// Vector length for axpy and dot.
    pub n: usize,
    /// gemv matrix rows.
    pub rows: usize,
    /// gemv matrix columns.
    pub cols: usize,
}

impl Dims {
    pub fn square(n: usize) -> Self {
        Dims { n, rows: n, cols: n }
    }
}

/// Host buffers keyed by input-mover node name (`kernel.port`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataBinding {
    pub values: BTreeMap<String, Buffer>,
    pub dims: Option<Dims>,
}

impl DataBinding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, node: &str, value: Buffer) -> Self {
        self.values.insert(node.to_string(), value);
        self
    }

    pub fn with_dims(mut self, dims: Dims) -> Self {
        self.dims = Some(dims);
        self
    }

    /// Parses `{"a.x": [..], "a.alpha": 2.0, "g.A": [[..],[..]], "n": 1024}`.
    ///
    /// Element types come from the graph; the optional `n` sets the length of
    /// on-chip generated vectors (and the side of generated matrices).
    pub fn from_json(graph: &DataflowGraph, text: &str) -> Result<Self, SimError> {
        let bad = |at: &str, detail: String| SimError::BadData {
            at: at.to_string(),
            detail,
        };
        let value: Value = serde_json::from_str(text).map_err(|e| bad("input", e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| bad("input", "expected a JSON object".into()))?;
        let mut out = DataBinding::new();
        for (name, v) in obj {
            if name == "n" {
                let n = v
                    .as_u64()
                    .ok_or_else(|| bad("n", "expected a non-negative integer".into()))?;
                out.dims = Some(Dims::square(n as usize));
                continue;
            }
            let id = graph
                .find(name)
                .filter(|&id| matches!(graph.node(id).kind, NodeKind::PlMoverIn(_)))
                .ok_or_else(|| SimError::UnknownBinding { name: name.clone() })?;
            let (_, ch) = graph.outgoing(id).next().expect("mover has one channel");
            let buf = match ch.element {
                DataType::F32 => json_to_buffer::<f32>(v, ch.shape, |x| x.as_f64().map(|f| f as f32)),
                DataType::I32 => json_to_buffer::<i32>(v, ch.shape, |x| x.as_i64().and_then(|i| i32::try_from(i).ok())),
            }
            .map_err(|d| bad(name, d))?;
            out.values.insert(name.clone(), buf);
        }
        Ok(out)
    }
}

fn json_to_buffer<T: Element>(
    v: &Value,
    channel: ChannelType,
    conv: impl Fn(&Value) -> Option<T>,
) -> Result<Buffer, String> {
    let elem = |x: &Value| conv(x).ok_or_else(|| format!("`{x}` is not a valid {}", T::DTYPE));
    match channel {
        ChannelType::Stream => {
            let x = match v {
                Value::Array(a) if a.len() == 1 => &a[0],
                other => other,
            };
            Ok(Buffer::scalar(elem(x)?))
        }
        ChannelType::VectorWindow => {
            let a = v.as_array().ok_or("expected an array")?;
            Ok(Buffer::vector(a.iter().map(elem).collect::<Result<Vec<_>, _>>()?))
        }
        ChannelType::MatrixWindow => {
            let rows = v.as_array().ok_or("expected an array of rows")?;
            let mut data = Vec::new();
            let mut cols = None;
            for r in rows {
                let r = r.as_array().ok_or("expected an array of rows")?;
                if *cols.get_or_insert(r.len()) != r.len() {
                    return Err("matrix rows have different lengths".into());
                }
                for x in r {
                    data.push(elem(x)?);
                }
            }
            Ok(Buffer::matrix(rows.len(), cols.unwrap_or(0), data))
        }
    }
}

/// Renders a buffer as JSON: scalar → number, vector → array, matrix → rows.
pub fn buffer_to_json(b: &Buffer) -> Value {
    fn conv<T: Element + Serialize>(b: &Buffer, data: &[T]) -> Value {
        match b.shape {
            Shape::Scalar => serde_json::json!(data[0]),
            Shape::Vector(_) => serde_json::json!(data),
            Shape::Matrix { cols, .. } => {
                Value::Array(data.chunks(cols.max(1)).map(|r| serde_json::json!(r)).collect())
            }
        }
    }
    match &b.elems {
        Elements::F32(v) => conv(b, v),
        Elements::I32(v) => conv(b, v),
    }
}

// ---------------------------------------------------------------------------
// Trace
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ChannelTrace {
    pub produced_elems: usize,
    pub consumed_elems: usize,
    /// Window transactions on the producer side (0 for streams).
    pub produced_windows: usize,
    pub consumed_windows: usize,
    pub class: Option<ChannelClass>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NodeTrace {
    pub window_transactions: usize,
    pub stream_elements: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SimTrace {
    pub channels: Vec<ChannelTrace>,
    pub nodes: BTreeMap<String, NodeTrace>,
}

impl SimTrace {
    /// Every channel delivered exactly what was put on it.
    pub fn conserved(&self) -> bool {
        self.channels.iter().all(|c| c.produced_elems == c.consumed_elems)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    /// Output mover / sink name → value.
    pub outputs: BTreeMap<String, Buffer>,
    pub trace: SimTrace,
}

// ---------------------------------------------------------------------------
// Window I/O
// ---------------------------------------------------------------------------

struct WindowReader<'a, T> {
    data: &'a [T],
    window: usize,
    pos: usize,
    transactions: usize,
    scratch: Vec<T>,
}

impl<'a, T: Element> WindowReader<'a, T> {
    fn new(data: &'a [T], window: usize) -> Self {
        WindowReader {
            data,
            window,
            pos: 0,
            transactions: 0,
            scratch: vec![T::zero(); window],
        }
    }

    /// Next window, padded to full size, with its count of valid elements.
    fn next(&mut self) -> Option<(&[T], usize)> {
        if self.pos >= self.data.len() {
            return None;
        }
        let valid = (self.data.len() - self.pos).min(self.window);
        self.scratch[..valid].copy_from_slice(&self.data[self.pos..self.pos + valid]);
        self.scratch[valid..].fill(T::zero());
        self.pos += valid;
        self.transactions += 1;
        Some((&self.scratch, valid))
    }

    fn consumed(&self) -> usize {
        self.pos
    }
}

struct WindowWriter<T> {
    window: usize,
    buf: Vec<T>,
    out: Vec<T>,
    transactions: usize,
}

impl<T: Element> WindowWriter<T> {
    fn new(window: usize, capacity: usize) -> Self {
        WindowWriter {
            window,
            buf: Vec::with_capacity(window),
            out: Vec::with_capacity(capacity),
            transactions: 0,
        }
    }

    fn push(&mut self, v: T) {
        self.buf.push(v);
        if self.buf.len() == self.window {
            self.flush();
        }
    }

    fn flush(&mut self) {
        if !self.buf.is_empty() {
            self.out.append(&mut self.buf);
            self.transactions += 1;
        }
    }

    fn finish(mut self) -> (Vec<T>, usize) {
        self.flush();
        (self.out, self.transactions)
    }
}

/// Per-port accounting reported by a kernel run.
#[derive(Default)]
struct PortIo {
    elems: usize,
    windows: usize,
}

struct KernelRun {
    outputs: PortValues,
    io: BTreeMap<&'static str, PortIo>,
}

struct KernelCtx<'a> {
    name: &'a str,
    kind: RoutineKind,
    /// Consumer-side window elements per input port.
    in_windows: BTreeMap<&'static str, usize>,
    /// Producer-side window elements for outputs.
    out_window: usize,
}

fn run_kernel<T: Element>(ctx: &KernelCtx, inputs: &PortValues) -> Result<KernelRun, SimError> {
    let overflow = || SimError::Overflow {
        kernel: ctx.name.to_string(),
    };
    let slice = |p: &str| inputs[p].as_slice::<T>().expect("type checked");
    let stream = |p: &str| inputs[p].scalar_value::<T>().expect("shape checked");
    let mut io: BTreeMap<&'static str, PortIo> = BTreeMap::new();
    let mut outputs = PortValues::new();
    for port in ctx.kind.ports().iter().filter(|p| !p.channel.is_window()) {
        if port.direction == catalog::Direction::Input {
            io.insert(port.name, PortIo { elems: 1, windows: 0 });
        }
    }

    match ctx.kind {
        RoutineKind::Axpy => {
            let alpha = stream("alpha");
            let (x, y) = (slice("x"), slice("y"));
            let mut rx = WindowReader::new(x, ctx.in_windows["x"]);
            let mut ry = WindowReader::new(y, ctx.in_windows["y"]);
            let mut wz = WindowWriter::new(ctx.out_window, x.len());
            let mut lanes_z = Vec::new();
            // x and y share the kernel's window size.
            while let Some((xw, valid)) = rx.next() {
                let xw = xw.to_vec();
                let (yw, _) = ry.next().expect("|x| == |y|");
                lanes_z.clear();
                for (&xi, &yi) in xw.iter().zip(yw) {
                    lanes_z.push(alpha.mul(xi).and_then(|p| p.add(yi)).ok_or_else(overflow)?);
                }
                for &v in &lanes_z[..valid] {
                    wz.push(v);
                }
            }
            io.insert(
                "x",
                PortIo {
                    elems: rx.consumed(),
                    windows: rx.transactions,
                },
            );
            io.insert(
                "y",
                PortIo {
                    elems: ry.consumed(),
                    windows: ry.transactions,
                },
            );
            let (z, tz) = wz.finish();
            io.insert(
                "z",
                PortIo {
                    elems: z.len(),
                    windows: tz,
                },
            );
            outputs.insert("z".into(), Buffer::vector(z));
        }
        RoutineKind::Dot => {
            let (x, y) = (slice("x"), slice("y"));
            let mut rx = WindowReader::new(x, ctx.in_windows["x"]);
            let mut ry = WindowReader::new(y, ctx.in_windows["y"]);
            let mut acc = T::zero();
            while let Some((xw, valid)) = rx.next() {
                let xw = xw.to_vec();
                let (yw, _) = ry.next().expect("|x| == |y|");
                for i in 0..valid {
                    acc = xw[i].mul(yw[i]).and_then(|p| acc.add(p)).ok_or_else(overflow)?;
                }
            }
            io.insert(
                "x",
                PortIo {
                    elems: rx.consumed(),
                    windows: rx.transactions,
                },
            );
            io.insert(
                "y",
                PortIo {
                    elems: ry.consumed(),
                    windows: ry.transactions,
                },
            );
            io.insert("result", PortIo { elems: 1, windows: 0 });
            outputs.insert("result".into(), Buffer::scalar(acc));
        }
        RoutineKind::Gemv => {
            let (alpha, beta) = (stream("alpha"), stream("beta"));
            let Shape::Matrix { rows, cols } = inputs["A"].shape else {
                unreachable!("shape checked")
            };
            // x is needed in full for every row; buffer it locally.
            let mut rx = WindowReader::new(slice("x"), ctx.in_windows["x"]);
            let mut x_local = Vec::with_capacity(cols);
            while let Some((w, valid)) = rx.next() {
                x_local.extend_from_slice(&w[..valid]);
            }
            let mut ra = WindowReader::new(slice("A"), ctx.in_windows["A"]);
            let mut ry = WindowReader::new(slice("y"), ctx.in_windows["y"]);
            let mut y_window: Vec<T> = Vec::new();
            let mut y_pos = 0usize;
            let mut wz = WindowWriter::new(ctx.out_window, rows);
            let mut finish_row = |acc: T, wz: &mut WindowWriter<T>| -> Result<(), SimError> {
                if y_pos == y_window.len() {
                    let (w, valid) = ry.next().expect("|y| == rows");
                    y_window = w[..valid].to_vec();
                    y_pos = 0;
                }
                let yi = y_window[y_pos];
                y_pos += 1;
                let z = alpha
                    .mul(acc)
                    .and_then(|l| beta.mul(yi).and_then(|r| l.add(r)))
                    .ok_or_else(overflow)?;
                wz.push(z);
                Ok(())
            };
            let mut acc = T::zero();
            let mut col = 0usize;
            let mut rows_done = 0usize;
            if cols == 0 {
                for _ in 0..rows {
                    finish_row(T::zero(), &mut wz)?;
                }
                rows_done = rows;
            }
            while let Some((aw, valid)) = ra.next() {
                for &a in &aw[..valid] {
                    acc = a.mul(x_local[col]).and_then(|p| acc.add(p)).ok_or_else(overflow)?;
                    col += 1;
                    if col == cols {
                        finish_row(acc, &mut wz)?;
                        rows_done += 1;
                        acc = T::zero();
                        col = 0;
                    }
                }
            }
            debug_assert_eq!(rows_done, rows);
            io.insert(
                "x",
                PortIo {
                    elems: rx.consumed(),
                    windows: rx.transactions,
                },
            );
            io.insert(
                "A",
                PortIo {
                    elems: ra.consumed(),
                    windows: ra.transactions,
                },
            );
            io.insert(
                "y",
                PortIo {
                    elems: ry.consumed(),
                    windows: ry.transactions,
                },
            );
            let (z, tz) = wz.finish();
            io.insert(
                "z",
                PortIo {
                    elems: z.len(),
                    windows: tz,
                },
            );
            outputs.insert("z".into(), Buffer::vector(z));
        }
    }
    Ok(KernelRun { outputs, io })
}

// ---------------------------------------------------------------------------
// Shape inference
// ---------------------------------------------------------------------------

/// Fills in shapes for the ports of `kind` not present in `known`, from the
/// known ones where the routine's shape rules allow, else from `fallback`.
pub fn resolve_shapes(
    kind: RoutineKind,
    known: &BTreeMap<&str, Shape>,
    fallback: Option<Dims>,
) -> Option<BTreeMap<&'static str, Shape>> {
    let vlen = |p: &str| match known.get(p) {
        Some(Shape::Vector(n)) => Some(*n),
        _ => None,
    };
    let mut out = BTreeMap::new();
    match kind {
        RoutineKind::Axpy | RoutineKind::Dot => {
            let n = vlen("x").or(vlen("y")).or(fallback.map(|d| d.n));
            for p in kind.inputs() {
                let shape = match p.channel {
                    ChannelType::Stream => Shape::Scalar,
                    _ => known.get(p.name).copied().or(n.map(Shape::Vector))?,
                };
                out.insert(p.name, shape);
            }
        }
        RoutineKind::Gemv => {
            let a = match known.get("A") {
                Some(Shape::Matrix { rows, cols }) => Some((*rows, *cols)),
                _ => None,
            };
            let rows = vlen("y").or(a.map(|a| a.0)).or(fallback.map(|d| d.rows));
            let cols = vlen("x").or(a.map(|a| a.1)).or(fallback.map(|d| d.cols));
            for p in kind.inputs() {
                let shape = match (p.channel, known.get(p.name)) {
                    (ChannelType::Stream, _) => Shape::Scalar,
                    (_, Some(s)) => *s,
                    (ChannelType::MatrixWindow, None) => Shape::Matrix {
                        rows: rows?,
                        cols: cols?,
                    },
                    (_, None) if p.name == "x" => Shape::Vector(cols?),
                    (_, None) => Shape::Vector(rows?),
                };
                out.insert(p.name, shape);
            }
        }
    }
    Some(out)
}

fn ramp_buffer(shape: Shape, dt: DataType) -> Buffer {
    fn fill<T: Element>(shape: Shape) -> Buffer {
        Buffer::from_vec(shape, (0..shape.len()).map(T::ramp).collect::<Vec<T>>()).expect("length")
    }
    match dt {
        DataType::F32 => fill::<f32>(shape),
        DataType::I32 => fill::<i32>(shape),
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub fn simulate(graph: &DataflowGraph, placement: &Placement, bindings: &DataBinding) -> Result<SimResult, SimError> {
    for name in bindings.values.keys() {
        let ok = graph
            .find(name)
            .is_some_and(|id| matches!(graph.node(id).kind, NodeKind::PlMoverIn(_)));
        if !ok {
            return Err(SimError::UnknownBinding { name: name.clone() });
        }
    }

    let mut channel_data: Vec<Option<Buffer>> = vec![None; graph.channels.len()];
    let mut trace = SimTrace {
        channels: graph
            .channels
            .iter()
            .enumerate()
            .map(|(i, _)| ChannelTrace {
                class: placement.class_of(i),
                ..Default::default()
            })
            .collect(),
        nodes: graph
            .nodes
            .iter()
            .map(|n| (n.name.clone(), NodeTrace::default()))
            .collect(),
    };

    for &k in &graph.topo_order {
        let node = graph.node(k);
        let spec = node.kernel_spec().expect("topo order holds kernels");
        let at = |port: &str| format!("{}.{}", spec.kernel_name, port);

        // Gather everything already known, then let generators fill the gaps.
        let mut inputs = PortValues::new();
        let mut generated: Vec<(&'static str, usize)> = Vec::new();
        for port in spec.blas_routine.inputs() {
            let (ci, ch) = graph.input_channel(k, port.name).expect("every input has a channel");
            let producer = graph.node(ch.producer.node);
            let buf = match &producer.kind {
                NodeKind::AieKernel(_) => channel_data[ci].clone().expect("producer ran earlier"),
                NodeKind::PlMoverIn(_) => {
                    let b = bindings
                        .values
                        .get(&producer.name)
                        .ok_or_else(|| SimError::UnboundInput {
                            node: producer.name.clone(),
                        })?;
                    let produced = bound_windows(b, ch);
                    let t = &mut trace.channels[ci];
                    t.produced_elems = b.shape.len();
                    t.produced_windows = produced;
                    b.clone()
                }
                NodeKind::OnChipGenerator(_) => {
                    generated.push((port.name, ci));
                    continue;
                }
                _ => unreachable!("outbound terminals never feed a kernel"),
            };
            if buf.data_type() != spec.data_type {
                return Err(SimError::ShapeMismatch {
                    at: at(port.name),
                    detail: format!("expected {} data, got {}", spec.data_type, buf.data_type()),
                });
            }
            if buf.shape.channel() != port.channel {
                return Err(SimError::ShapeMismatch {
                    at: at(port.name),
                    detail: format!("expected {}, got {}", port.channel, buf.shape),
                });
            }
            inputs.insert(port.name.to_string(), buf);
        }
        if !generated.is_empty() {
            let known: BTreeMap<&str, Shape> = inputs.iter().map(|(k, v)| (k.as_str(), v.shape)).collect();
            let shapes =
                resolve_shapes(spec.blas_routine, &known, bindings.dims).ok_or_else(|| SimError::UnknownSize {
                    node: at(generated[0].0),
                })?;
            for (port, ci) in generated {
                let buf = ramp_buffer(shapes[port], spec.data_type);
                let ch = &graph.channels[ci];
                let t = &mut trace.channels[ci];
                t.produced_elems = buf.shape.len();
                t.produced_windows = bound_windows(&buf, ch);
                inputs.insert(port.to_string(), buf);
            }
        }

        let shape_err = |e: CatalogError| SimError::ShapeMismatch {
            at: spec.kernel_name.clone(),
            detail: e.to_string(),
        };
        match spec.data_type {
            DataType::F32 => catalog::output_shape::<f32>(spec.blas_routine, &inputs).map_err(shape_err)?,
            DataType::I32 => catalog::output_shape::<i32>(spec.blas_routine, &inputs).map_err(shape_err)?,
        };

        let ctx = KernelCtx {
            name: &spec.kernel_name,
            kind: spec.blas_routine,
            in_windows: spec
                .blas_routine
                .inputs()
                .filter(|p| p.channel.is_window())
                .map(|p| {
                    let (_, ch) = graph.input_channel(k, p.name).expect("channel");
                    (p.name, ch.window_elems().expect("window channel"))
                })
                .collect(),
            out_window: spec.window_elems(),
        };
        let run = match spec.data_type {
            DataType::F32 => run_kernel::<f32>(&ctx, &inputs)?,
            DataType::I32 => run_kernel::<i32>(&ctx, &inputs)?,
        };

        let node_trace = trace.nodes.get_mut(&node.name).expect("node");
        for port in spec.blas_routine.ports() {
            let io = &run.io[port.name];
            if port.channel.is_window() {
                node_trace.window_transactions += io.windows;
            } else {
                node_trace.stream_elements += io.elems;
            }
            if port.direction == catalog::Direction::Input {
                let (ci, _) = graph.input_channel(k, port.name).expect("channel");
                trace.channels[ci].consumed_elems = io.elems;
                trace.channels[ci].consumed_windows = io.windows;
            }
        }
        for (ci, ch) in graph.outgoing(k) {
            let out = run.outputs[&ch.producer.port].clone();
            let io = &run.io[ch.producer.port.as_str()];
            let t = &mut trace.channels[ci];
            t.produced_elems = io.elems;
            t.produced_windows = io.windows;
            channel_data[ci] = Some(out);
        }
    }

    let mut outputs = BTreeMap::new();
    for (id, node) in graph.terminals() {
        if !matches!(node.kind, NodeKind::PlMoverOut(_) | NodeKind::OnChipSink(_)) {
            continue;
        }
        let (ci, ch) = graph.incoming(id).next().expect("terminal has one channel");
        let buf = channel_data[ci].clone().expect("producer ran");
        let t = &mut trace.channels[ci];
        t.consumed_elems = buf.shape.len();
        t.consumed_windows = bound_windows(&buf, ch);
        outputs.insert(node.name.clone(), buf);
    }
    for (ci, ch) in graph.channels.iter().enumerate() {
        let t = &trace.channels[ci];
        let (produced_windows, consumed_windows, produced, consumed) = (
            t.produced_windows,
            t.consumed_windows,
            t.produced_elems,
            t.consumed_elems,
        );
        for (id, windows, elems) in [
            (ch.producer.node, produced_windows, produced),
            (ch.consumer.node, consumed_windows, consumed),
        ] {
            let n = graph.node(id);
            if n.is_kernel() {
                continue;
            }
            let nt = trace.nodes.get_mut(&n.name).expect("node");
            if ch.shape.is_window() {
                nt.window_transactions += windows;
            } else {
                nt.stream_elements += elems;
            }
        }
    }

    Ok(SimResult { outputs, trace })
}

fn bound_windows(b: &Buffer, ch: &Channel) -> usize {
    ch.window_elems().map_or(0, |w| b.shape.len().div_ceil(w))
}

// ---------------------------------------------------------------------------
// Oracle harness
// ---------------------------------------------------------------------------

/// Evaluates the graph's kernels on whole buffers with the catalog reference,
/// wiring results along the declared connections.
pub fn reference_outputs(
    graph: &DataflowGraph,
    inputs: &BTreeMap<String, Buffer>,
) -> Result<BTreeMap<String, Buffer>, CatalogError> {
    let mut results: BTreeMap<String, PortValues> = BTreeMap::new();
    for &k in &graph.topo_order {
        let spec = graph.node(k).kernel_spec().expect("kernel");
        let mut bound = PortValues::new();
        for port in spec.blas_routine.inputs() {
            let value = match spec.sources_of(port.name).next() {
                Some(src) => results[&src.kernel][&src.port].clone(),
                None => inputs
                    .get(&format!("{}.{}", spec.kernel_name, port.name))
                    .cloned()
                    .ok_or_else(|| CatalogError::MissingInput {
                        routine: spec.blas_routine,
                        port: port.name.to_string(),
                    })?,
            };
            bound.insert(port.name.to_string(), value);
        }
        results.insert(spec.kernel_name.clone(), apply_reference(spec.blas_routine, &bound)?);
    }
    let mut out = BTreeMap::new();
    for (_, node) in graph.terminals() {
        if let NodeKind::PlMoverOut(p) | NodeKind::OnChipSink(p) = &node.kind {
            out.insert(node.name.clone(), results[&p.kernel][&p.port].clone());
        }
    }
    Ok(out)
}

/// Shapes of every kernel port (inputs and outputs) when unbound sizes come
/// from `dims`; connected ports inherit the producer's output shape.
pub fn port_shapes(graph: &DataflowGraph, dims: Dims) -> BTreeMap<NodeId, BTreeMap<&'static str, Shape>> {
    let mut out: BTreeMap<NodeId, BTreeMap<&'static str, Shape>> = BTreeMap::new();
    for &k in &graph.topo_order {
        let spec = graph.node(k).kernel_spec().expect("kernel");
        let mut known: BTreeMap<&str, Shape> = BTreeMap::new();
        for port in spec.blas_routine.inputs() {
            let (_, ch) = graph.input_channel(k, port.name).expect("channel");
            if let Some(s) = out
                .get(&ch.producer.node)
                .and_then(|m| m.get(ch.producer.port.as_str()))
            {
                known.insert(port.name, *s);
            }
        }
        let mut shapes = resolve_shapes(spec.blas_routine, &known, Some(dims)).expect("fallback dims");
        let out_shape = match spec.blas_routine {
            RoutineKind::Dot => Shape::Scalar,
            RoutineKind::Axpy => shapes["x"],
            RoutineKind::Gemv => shapes["y"],
        };
        for port in spec.blas_routine.outputs() {
            shapes.insert(port.name, out_shape);
        }
        out.insert(k, shapes);
    }
    out
}

/// Random data for every input terminal of `graph`: movers get uniform values
/// (f32 in [-1, 1], i32 in [-100, 100]); generators get the ramp. Returns the
/// full map (for the oracle) and the binding (movers only, for `simulate`).
pub fn random_inputs(
    graph: &DataflowGraph,
    dims: Dims,
    rng: &mut ChaCha8Rng,
) -> (BTreeMap<String, Buffer>, DataBinding) {
    let shapes = port_shapes(graph, dims);
    let mut all = BTreeMap::new();
    let mut binding = DataBinding::new().with_dims(dims);
    for &k in &graph.topo_order {
        let spec = graph.node(k).kernel_spec().expect("kernel");
        for port in spec.blas_routine.inputs() {
            let (_, ch) = graph.input_channel(k, port.name).expect("channel");
            let producer = graph.node(ch.producer.node);
            let shape = shapes[&k][port.name];
            match producer.kind {
                NodeKind::PlMoverIn(_) => {
                    let buf = random_buffer(shape, spec.data_type, rng);
                    binding.values.insert(producer.name.clone(), buf.clone());
                    all.insert(producer.name.clone(), buf);
                }
                NodeKind::OnChipGenerator(_) => {
                    all.insert(producer.name.clone(), ramp_buffer(shape, spec.data_type));
                }
                _ => {}
            }
        }
    }
    (all, binding)
}

fn random_buffer(shape: Shape, dt: DataType, rng: &mut ChaCha8Rng) -> Buffer {
    let n = shape.len();
    let elems = match dt {
        DataType::F32 => Elements::F32((0..n).map(|_| rng.random_range(-1.0f32..=1.0)).collect()),
        DataType::I32 => Elements::I32((0..n).map(|_| rng.random_range(-100i32..=100)).collect()),
    };
    Buffer::new(shape, elems).expect("length")
}

pub const F32_REL_TOLERANCE: f64 = 1e-5;

/// Largest relative error between two buffers (0 for exact agreement), or
/// `None` when shapes or types differ.
pub fn max_rel_error(actual: &Buffer, expected: &Buffer) -> Option<f64> {
    if actual.shape != expected.shape {
        return None;
    }
    match (&actual.elems, &expected.elems) {
        (Elements::F32(a), Elements::F32(e)) => Some(
            a.iter()
                .zip(e)
                .map(|(&x, &y)| {
                    let (x, y) = (f64::from(x), f64::from(y));
                    if x == y {
                        0.0
                    } else {
                        (x - y).abs() / x.abs().max(y.abs())
                    }
                })
                .fold(0.0, f64::max),
        ),
        (Elements::I32(a), Elements::I32(e)) => Some(if a == e { 0.0 } else { f64::INFINITY }),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleFailure {
    pub case: usize,
    pub output: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub cases: usize,
    pub passed: usize,
    pub max_rel_error: f64,
    pub failures: Vec<OracleFailure>,
}

impl OracleReport {
    pub fn all_passed(&self) -> bool {
        self.passed == self.cases
    }
}

/// Runs `cases` seeded random instances through `simulate` and the composed
/// catalog reference and compares them (f32 within 1e-5 relative, i32 exact).
pub fn check_against_oracle(
    graph: &DataflowGraph,
    placement: &Placement,
    dims: Dims,
    cases: usize,
    seed: u64,
) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = OracleReport {
        cases,
        passed: 0,
        max_rel_error: 0.0,
        failures: Vec::new(),
    };
    for case in 0..cases {
        let (all, binding) = random_inputs(graph, dims, &mut rng);
        let fail = |output: &str, detail: String| OracleFailure {
            case,
            output: output.to_string(),
            detail,
        };
        let sim = simulate(graph, placement, &binding);
        let oracle = reference_outputs(graph, &all);
        let mut ok = true;
        match (sim, oracle) {
            (Ok(sim), Ok(oracle)) => {
                for (name, expected) in &oracle {
                    let tol = match expected.data_type() {
                        DataType::F32 => F32_REL_TOLERANCE,
                        DataType::I32 => 0.0,
                    };
                    match sim.outputs.get(name).and_then(|a| max_rel_error(a, expected)) {
                        Some(err) => {
                            report.max_rel_error = report.max_rel_error.max(err);
                            if err > tol {
                                ok = false;
                                report.failures.push(fail(name, format!("relative error {err:e}")));
                            }
                        }
                        None => {
                            ok = false;
                            report.failures.push(fail(name, "missing or mis-shaped output".into()));
                        }
                    }
                }
                if !sim.trace.conserved() {
                    ok = false;
                    report
                        .failures
                        .push(fail("trace", "channel conservation violated".into()));
                }
            }
            (Err(e), _) => {
                ok = false;
                report.failures.push(fail("simulate", e.to_string()));
            }
            (_, Err(e)) => {
                ok = false;
                report.failures.push(fail("oracle", e.to_string()));
            }
        }
        if ok {
            report.passed += 1;
        }
    }
    report
}
