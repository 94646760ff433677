//! Supported BLAS routines: port signatures and reference semantics.
//!
//! Scalars travel on streams, vectors and matrices on windows. The catalog is
//! the single source of truth for both; the graph builder, simulator and code
//! generator all look ports up here.
//!
//! Reference kernels accumulate in ascending index order with no fused
//! multiply-add, so f32 results are reproducible bit for bit.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CatalogError {
    #[error("unknown BLAS routine `{0}` (known: axpy, dot, gemv)")]
    UnknownRoutine(String),
    #[error("{routine}: length mismatch: {detail}")]
    LengthMismatch { routine: RoutineKind, detail: String },
    #[error("{routine}: missing input `{port}`")]
    MissingInput { routine: RoutineKind, port: String },
    #[error("{routine}: port `{port}` expects {expected}, got {found}")]
    BadOperand {
        routine: RoutineKind,
        port: String,
        expected: String,
        found: String,
    },
    #[error("i32 overflow in {0}")]
    Overflow(RoutineKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoutineKind {
    Axpy,
    Dot,
    Gemv,
}

impl RoutineKind {
    pub const ALL: [RoutineKind; 3] = [RoutineKind::Axpy, RoutineKind::Dot, RoutineKind::Gemv];

    pub fn name(self) -> &'static str {
        match self {
            RoutineKind::Axpy => "axpy",
            RoutineKind::Dot => "dot",
            RoutineKind::Gemv => "gemv",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, CatalogError> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| CatalogError::UnknownRoutine(name.to_string()))
    }

    pub fn ports(self) -> &'static [PortDecl] {
        use ChannelType::*;
        use Direction::*;
        const fn p(name: &'static str, direction: Direction, channel: ChannelType) -> PortDecl {
            PortDecl {
                name,
                direction,
                channel,
            }
        }
        const AXPY: &[PortDecl] = &[
            p("alpha", Input, Stream),
            p("x", Input, VectorWindow),
            p("y", Input, VectorWindow),
            p("z", Output, VectorWindow),
        ];
        const DOT: &[PortDecl] = &[
            p("x", Input, VectorWindow),
            p("y", Input, VectorWindow),
            p("result", Output, Stream),
        ];
        const GEMV: &[PortDecl] = &[
            p("alpha", Input, Stream),
            p("A", Input, MatrixWindow),
            p("x", Input, VectorWindow),
            p("beta", Input, Stream),
            p("y", Input, VectorWindow),
            p("z", Output, VectorWindow),
        ];
        match self {
            RoutineKind::Axpy => AXPY,
            RoutineKind::Dot => DOT,
            RoutineKind::Gemv => GEMV,
        }
    }

    pub fn port(self, name: &str) -> Option<&'static PortDecl> {
        self.ports().iter().find(|p| p.name == name)
    }

    pub fn inputs(self) -> impl Iterator<Item = &'static PortDecl> {
        self.ports().iter().filter(|p| p.direction == Direction::Input)
    }

    pub fn outputs(self) -> impl Iterator<Item = &'static PortDecl> {
        self.ports().iter().filter(|p| p.direction == Direction::Output)
    }
}

impl fmt::Display for RoutineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    F32,
    I32,
}

impl DataType {
    pub fn bits(self) -> u32 {
        32
    }

    pub fn bytes(self) -> u64 {
        u64::from(self.bits() / 8)
    }

    pub fn name(self) -> &'static str {
        match self {
            DataType::F32 => "f32",
            DataType::I32 => "i32",
        }
    }

    /// Element type spelled the way the kernel dialect expects it.
    pub fn c_type(self) -> &'static str {
        match self {
            DataType::F32 => "float",
            DataType::I32 => "int32",
        }
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Input,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelType {
    /// Scalar, element by element.
    Stream,
    VectorWindow,
    /// Row-major matrix.
    MatrixWindow,
}

impl ChannelType {
    pub fn is_window(self) -> bool {
        !matches!(self, ChannelType::Stream)
    }
}

impl fmt::Display for ChannelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelType::Stream => "stream(scalar)",
            ChannelType::VectorWindow => "window(vector)",
            ChannelType::MatrixWindow => "window(matrix)",
        })
    }
}

/// Static port declaration, element type left open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PortDecl {
    pub name: &'static str,
    pub direction: Direction,
    pub channel: ChannelType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PortSignature {
    pub name: &'static str,
    pub direction: Direction,
    pub channel: ChannelType,
    pub element: DataType,
}

pub fn signature(kind: RoutineKind, element: DataType) -> Vec<PortSignature> {
    kind.ports()
        .iter()
        .map(|p| PortSignature {
            name: p.name,
            direction: p.direction,
            channel: p.channel,
            element,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Values
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix { rows: usize, cols: usize },
}

impl Shape {
    pub fn len(self) -> usize {
        match self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix { rows, cols } => rows * cols,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    pub fn channel(self) -> ChannelType {
        match self {
            Shape::Scalar => ChannelType::Stream,
            Shape::Vector(_) => ChannelType::VectorWindow,
            Shape::Matrix { .. } => ChannelType::MatrixWindow,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Scalar => f.write_str("scalar"),
            Shape::Vector(n) => write!(f, "vector[{n}]"),
            Shape::Matrix { rows, cols } => write!(f, "matrix[{rows}x{cols}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Elements {
    F32(Vec<f32>),
    I32(Vec<i32>),
}

impl Elements {
    pub fn data_type(&self) -> DataType {
        match self {
            Elements::F32(_) => DataType::F32,
            Elements::I32(_) => DataType::I32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Elements::F32(v) => v.len(),
            Elements::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A host-side value bound to a port: shape plus flat row-major data.
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    pub shape: Shape,
    pub elems: Elements,
}

impl Buffer {
    pub fn new(shape: Shape, elems: Elements) -> Option<Self> {
        (shape.len() == elems.len()).then_some(Buffer { shape, elems })
    }

    pub fn from_vec<T: Element>(shape: Shape, data: Vec<T>) -> Option<Self> {
        Buffer::new(shape, T::wrap(data))
    }

    pub fn scalar<T: Element>(v: T) -> Self {
        Buffer {
            shape: Shape::Scalar,
            elems: T::wrap(vec![v]),
        }
    }

    pub fn vector<T: Element>(v: Vec<T>) -> Self {
        Buffer {
            shape: Shape::Vector(v.len()),
            elems: T::wrap(v),
        }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn matrix<T: Element>(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Buffer {
            shape: Shape::Matrix { rows, cols },
            elems: T::wrap(data),
        }
    }

    pub fn data_type(&self) -> DataType {
        self.elems.data_type()
    }

    pub fn as_slice<T: Element>(&self) -> Option<&[T]> {
        T::unwrap(&self.elems)
    }

    /// First element of a scalar buffer.
    pub fn scalar_value<T: Element>(&self) -> Option<T> {
        match self.shape {
            Shape::Scalar => self.as_slice::<T>().map(|s| s[0]),
            _ => None,
        }
    }

    /// Bitwise equality; distinguishes `0.0` from `-0.0` and compares NaN payloads.
    pub fn bit_eq(&self, other: &Buffer) -> bool {
        if self.shape != other.shape {
            return false;
        }
        match (&self.elems, &other.elems) {
            (Elements::F32(a), Elements::F32(b)) => a.iter().map(|v| v.to_bits()).eq(b.iter().map(|v| v.to_bits())),
            (Elements::I32(a), Elements::I32(b)) => a == b,
            _ => false,
        }
    }
}

/// Arithmetic the kernels are generic over. i32 is checked: overflow is an
/// error rather than wrapping.
pub trait Element: Copy + PartialEq + fmt::Debug + Send + Sync + 'static {
    const DTYPE: DataType;
    fn zero() -> Self;
    fn add(self, rhs: Self) -> Option<Self>;
    fn mul(self, rhs: Self) -> Option<Self>;
    fn neg(self) -> Option<Self>;
    /// On-chip generator pattern: element `i` is `i mod 251`.
    fn ramp(i: usize) -> Self;
    fn wrap(v: Vec<Self>) -> Elements;
    fn unwrap(e: &Elements) -> Option<&[Self]>;
}

pub const RAMP_MODULUS: usize = 251;

impl Element for f32 {
    const DTYPE: DataType = DataType::F32;
    fn zero() -> Self {
        0.0
    }
    fn add(self, rhs: Self) -> Option<Self> {
        Some(self + rhs)
    }
    fn mul(self, rhs: Self) -> Option<Self> {
        Some(self * rhs)
    }
    fn neg(self) -> Option<Self> {
        Some(-self)
    }
    fn ramp(i: usize) -> Self {
        (i % RAMP_MODULUS) as f32
    }
    fn wrap(v: Vec<Self>) -> Elements {
        Elements::F32(v)
    }
    fn unwrap(e: &Elements) -> Option<&[Self]> {
        match e {
            Elements::F32(v) => Some(v),
            _ => None,
        }
    }
}

impl Element for i32 {
    const DTYPE: DataType = DataType::I32;
    fn zero() -> Self {
        0
    }
    fn add(self, rhs: Self) -> Option<Self> {
        self.checked_add(rhs)
    }
    fn mul(self, rhs: Self) -> Option<Self> {
        self.checked_mul(rhs)
    }
    fn neg(self) -> Option<Self> {
        self.checked_neg()
    }
    fn ramp(i: usize) -> Self {
        (i % RAMP_MODULUS) as i32
    }
    fn wrap(v: Vec<Self>) -> Elements {
        Elements::I32(v)
    }
    fn unwrap(e: &Elements) -> Option<&[Self]> {
        match e {
            Elements::I32(v) => Some(v),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Typed reference kernels
// ---------------------------------------------------------------------------

/// `z[i] = alpha * x[i] + y[i]`
pub fn axpy<T: Element>(alpha: T, x: &[T], y: &[T]) -> Result<Vec<T>, CatalogError> {
    if x.len() != y.len() {
        return Err(CatalogError::LengthMismatch {
            routine: RoutineKind::Axpy,
            detail: format!("|x| = {}, |y| = {}", x.len(), y.len()),
        });
    }
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| alpha.mul(xi).and_then(|p| p.add(yi)))
        .collect::<Option<Vec<_>>>()
        .ok_or(CatalogError::Overflow(RoutineKind::Axpy))
}

/// `sum_i x[i] * y[i]`, accumulated in ascending index order.
pub fn dot<T: Element>(x: &[T], y: &[T]) -> Result<T, CatalogError> {
    if x.len() != y.len() {
        return Err(CatalogError::LengthMismatch {
            routine: RoutineKind::Dot,
            detail: format!("|x| = {}, |y| = {}", x.len(), y.len()),
        });
    }
    x.iter()
        .zip(y)
        .try_fold(T::zero(), |acc, (&a, &b)| a.mul(b).and_then(|p| acc.add(p)))
        .ok_or(CatalogError::Overflow(RoutineKind::Dot))
}

/// `z = alpha * A x + beta * y` for row-major `A` of shape `rows x cols`.
pub fn gemv<T: Element>(
    alpha: T,
    a: &[T],
    rows: usize,
    cols: usize,
    x: &[T],
    beta: T,
    y: &[T],
) -> Result<Vec<T>, CatalogError> {
    if a.len() != rows * cols || x.len() != cols || y.len() != rows {
        return Err(CatalogError::LengthMismatch {
            routine: RoutineKind::Gemv,
            detail: format!(
                "A is {rows}x{cols} ({} elements), |x| = {}, |y| = {}",
                a.len(),
                x.len(),
                y.len()
            ),
        });
    }
    let overflow = || CatalogError::Overflow(RoutineKind::Gemv);
    let mut z = Vec::with_capacity(rows);
    for (i, row) in a.chunks(cols.max(1)).take(rows).enumerate() {
        let ax = dot(row, x).map_err(|_| overflow())?;
        let v = alpha
            .mul(ax)
            .and_then(|l| beta.mul(y[i]).and_then(|r| l.add(r)))
            .ok_or_else(overflow)?;
        z.push(v);
    }
    // cols == 0 leaves `a` empty; every row product is zero.
    while z.len() < rows {
        let i = z.len();
        z.push(
            alpha
                .mul(T::zero())
                .and_then(|l| beta.mul(y[i]).and_then(|r| l.add(r)))
                .ok_or_else(overflow)?,
        );
    }
    Ok(z)
}

/// `(w - alpha v)^T u`, evaluated as `dot(axpy(-alpha, v, w), u)`.
///
/// This is the oracle for the composed axpy→dot graph, not a kernel.
pub fn axpydot<T: Element>(alpha: T, w: &[T], v: &[T], u: &[T]) -> Result<T, CatalogError> {
    if w.len() != v.len() || w.len() != u.len() {
        return Err(CatalogError::LengthMismatch {
            routine: RoutineKind::Dot,
            detail: format!("|w| = {}, |v| = {}, |u| = {}", w.len(), v.len(), u.len()),
        });
    }
    let neg = alpha.neg().ok_or(CatalogError::Overflow(RoutineKind::Axpy))?;
    let z = axpy(neg, v, w)?;
    dot(&z, u)
}

// ---------------------------------------------------------------------------
// Dynamically typed entry points
// ---------------------------------------------------------------------------

pub type PortValues = BTreeMap<String, Buffer>;

/// Applies `kind` to the bound inputs and returns its outputs keyed by port.
pub fn apply_reference(kind: RoutineKind, inputs: &PortValues) -> Result<PortValues, CatalogError> {
    let first = kind
        .inputs()
        .next()
        .and_then(|p| inputs.get(p.name))
        .ok_or_else(|| CatalogError::MissingInput {
            routine: kind,
            port: kind.inputs().next().map(|p| p.name).unwrap_or("").to_string(),
        })?;
    match first.data_type() {
        DataType::F32 => apply_typed::<f32>(kind, inputs),
        DataType::I32 => apply_typed::<i32>(kind, inputs),
    }
}

/// Validates the inputs of `kind` for element type `T` and returns the output shape.
pub fn output_shape<T: Element>(kind: RoutineKind, inputs: &PortValues) -> Result<Shape, CatalogError> {
    let ops = Operands::<T>::bind(kind, inputs)?;
    ops.check_shapes()?;
    Ok(match kind {
        RoutineKind::Axpy => Shape::Vector(ops.vector("x")?.len()),
        RoutineKind::Dot => Shape::Scalar,
        RoutineKind::Gemv => Shape::Vector(ops.vector("y")?.len()),
    })
}

fn apply_typed<T: Element>(kind: RoutineKind, inputs: &PortValues) -> Result<PortValues, CatalogError> {
    let ops = Operands::<T>::bind(kind, inputs)?;
    ops.check_shapes()?;
    let mut out = PortValues::new();
    match kind {
        RoutineKind::Axpy => {
            let z = axpy(ops.scalar("alpha")?, ops.vector("x")?, ops.vector("y")?)?;
            out.insert("z".into(), Buffer::vector(z));
        }
        RoutineKind::Dot => {
            let r = dot(ops.vector("x")?, ops.vector("y")?)?;
            out.insert("result".into(), Buffer::scalar(r));
        }
        RoutineKind::Gemv => {
            let (a, rows, cols) = ops.matrix("A")?;
            let z = gemv(
                ops.scalar("alpha")?,
                a,
                rows,
                cols,
                ops.vector("x")?,
                ops.scalar("beta")?,
                ops.vector("y")?,
            )?;
            out.insert("z".into(), Buffer::vector(z));
        }
    }
    Ok(out)
}

struct Operands<'a, T> {
    kind: RoutineKind,
    values: BTreeMap<&'static str, (Shape, &'a [T])>,
}

impl<'a, T: Element> Operands<'a, T> {
    fn bind(kind: RoutineKind, inputs: &'a PortValues) -> Result<Self, CatalogError> {
        let mut values = BTreeMap::new();
        for port in kind.inputs() {
            let buf = inputs.get(port.name).ok_or_else(|| CatalogError::MissingInput {
                routine: kind,
                port: port.name.to_string(),
            })?;
            let bad = |found: String| CatalogError::BadOperand {
                routine: kind,
                port: port.name.to_string(),
                expected: format!("{} {}", T::DTYPE, port.channel),
                found,
            };
            let data = buf
                .as_slice::<T>()
                .ok_or_else(|| bad(format!("{} {}", buf.data_type(), buf.shape)))?;
            if buf.shape.channel() != port.channel {
                return Err(bad(format!("{} {}", buf.data_type(), buf.shape)));
            }
            values.insert(port.name, (buf.shape, data));
        }
        Ok(Operands { kind, values })
    }

    fn scalar(&self, name: &str) -> Result<T, CatalogError> {
        Ok(self.values[name].1[0])
    }

    fn vector(&self, name: &str) -> Result<&'a [T], CatalogError> {
        Ok(self.values[name].1)
    }

    fn matrix(&self, name: &str) -> Result<(&'a [T], usize, usize), CatalogError> {
        match self.values[name] {
            (Shape::Matrix { rows, cols }, data) => Ok((data, rows, cols)),
            _ => unreachable!("matrix port bound to non-matrix"),
        }
    }

    fn check_shapes(&self) -> Result<(), CatalogError> {
        let len = |n: &str| self.values[n].1.len();
        let mismatch = |detail: String| CatalogError::LengthMismatch {
            routine: self.kind,
            detail,
        };
        match self.kind {
            RoutineKind::Axpy | RoutineKind::Dot => {
                if len("x") != len("y") {
                    return Err(mismatch(format!("|x| = {}, |y| = {}", len("x"), len("y"))));
                }
            }
            RoutineKind::Gemv => {
                let (_, rows, cols) = self.matrix("A")?;
                if len("x") != cols || len("y") != rows {
                    return Err(mismatch(format!(
                        "A is {rows}x{cols}, |x| = {}, |y| = {}",
                        len("x"),
                        len("y")
                    )));
                }
            }
        }
        Ok(())
    }
}
