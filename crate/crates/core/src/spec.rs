//! The JSON design specification: parsing, defaulting and validation.
//!
//! ```json
//! {
//!   "platform": { "grid_rows": 8 },
//!   "routines": [
//!     { "blas_routine": "axpy", "kernel_name": "a" },
//!     { "blas_routine": "dot", "kernel_name": "d", "connections": { "x": "a.z" } }
//!   ]
//! }
//! ```
//!
//! Per routine: `blas_routine` and `kernel_name` are required; `data_type`
//! (f32), `vector_width_bits` (platform maximum), `window_size_bytes` (1024),
//! `placement_hint` (`{row, col}`), `connections` (input port → `"kernel.port"`)
//! and `on_chip_generate` (port list) are optional. Any other key is rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::{SerializeMap, SerializeStruct};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use crate::catalog::{ChannelType, DataType, Direction, RoutineKind};
use crate::platform::{PlatformConfig, PlatformOverrides, TileCoord, PLATFORM_FIELDS};

pub const DEFAULT_WINDOW_SIZE_BYTES: u64 = 1024;

const TOP_LEVEL_FIELDS: &[&str] = &["platform", "routines"];
const ROUTINE_FIELDS: &[&str] = &[
    "blas_routine",
    "kernel_name",
    "data_type",
    "vector_width_bits",
    "window_size_bytes",
    "placement_hint",
    "connections",
    "on_chip_generate",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("design declares no routines")]
    MissingRoutines,
    #[error("unknown field `{field}` in {location}")]
    UnknownField { location: String, field: String },
    #[error("routines[{index}]: unknown BLAS routine `{name}`")]
    UnknownRoutine { index: usize, name: String },
    #[error("{location}: {message}")]
    InvalidField { location: String, message: String },
    #[error("invalid kernel name `{name}`: must match [A-Za-z_][A-Za-z0-9_]*")]
    BadKernelName { name: String },
    #[error("duplicate kernel name `{name}` (routines[{first}] and routines[{second}])")]
    DuplicateName { name: String, first: usize, second: usize },
    #[error("kernel `{kernel}`: connection on port `{port}` is invalid: {reason}")]
    BadConnectionRef {
        kernel: String,
        port: String,
        reason: String,
    },
    #[error("kernel `{kernel}`: on_chip_generate names unknown port `{port}`")]
    UnknownPort { kernel: String, port: String },
    #[error("kernel `{kernel}`: vector_width_bits {bits} must divide {max} and be at least {element_bits}")]
    BadVectorWidth {
        kernel: String,
        bits: u32,
        max: u32,
        element_bits: u32,
    },
    #[error("kernel `{kernel}`: window_size_bytes {bytes} is not a positive multiple of {vector_bytes}")]
    BadWindowSize {
        kernel: String,
        bytes: u64,
        vector_bytes: u64,
    },
    #[error("invalid platform: {0}")]
    InvalidPlatform(String),
}

impl SpecError {
    pub fn code(&self) -> DiagnosticCode {
        use DiagnosticCode as C;
        match self {
            SpecError::Syntax { .. } => C::SyntaxError,
            SpecError::MissingRoutines => C::MissingRoutines,
            SpecError::UnknownField { .. } => C::UnknownField,
            SpecError::UnknownRoutine { .. } => C::UnknownRoutine,
            SpecError::InvalidField { .. } => C::InvalidField,
            SpecError::BadKernelName { .. } => C::BadKernelName,
            SpecError::DuplicateName { .. } => C::DuplicateName,
            SpecError::BadConnectionRef { .. } => C::BadConnectionRef,
            SpecError::UnknownPort { .. } => C::UnknownPort,
            SpecError::BadVectorWidth { .. } => C::BadVectorWidth,
            SpecError::BadWindowSize { .. } => C::BadWindowSize,
            SpecError::InvalidPlatform(_) => C::InvalidPlatform,
        }
    }

    pub fn to_diagnostic(&self) -> Diagnostic {
        let (kernel, port) = match self {
            SpecError::BadKernelName { name } | SpecError::DuplicateName { name, .. } => (Some(name.clone()), None),
            SpecError::BadConnectionRef { kernel, port, .. } | SpecError::UnknownPort { kernel, port } => {
                (Some(kernel.clone()), Some(port.clone()))
            }
            SpecError::BadVectorWidth { kernel, .. } | SpecError::BadWindowSize { kernel, .. } => {
                (Some(kernel.clone()), None)
            }
            _ => (None, None),
        };
        Diagnostic {
            kernel,
            port,
            code: self.code(),
            message: self.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DiagnosticCode {
    SyntaxError,
    MissingRoutines,
    UnknownField,
    UnknownRoutine,
    InvalidField,
    BadKernelName,
    DuplicateName,
    BadConnectionRef,
    UnknownPort,
    BadVectorWidth,
    BadWindowSize,
    InvalidPlatform,
    KindMismatch,
    TypeMismatch,
    MultipleProducers,
    CyclicComposition,
    ConflictingGenerator,
    InterfaceBudgetExceeded,
    HintConflict,
    HintOutOfBounds,
    MemoryBudgetExceeded,
    GridFull,
}

/// Structured finding about a design, addressed to a kernel and port.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kernel: Option<String>,
    pub port: Option<String>,
    pub code: DiagnosticCode,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.code)?;
        match (&self.kernel, &self.port) {
            (Some(k), Some(p)) => write!(f, " [{k}.{p}]")?,
            (Some(k), None) => write!(f, " [{k}]")?,
            _ => {}
        }
        write!(f, ": {}", self.message)
    }
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// `kernel.port`
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PortRef {
    pub kernel: String,
    pub port: String,
}

impl PortRef {
    pub fn new(kernel: impl Into<String>, port: impl Into<String>) -> Self {
        PortRef {
            kernel: kernel.into(),
            port: port.into(),
        }
    }

    pub fn parse(s: &str) -> Option<PortRef> {
        let (kernel, port) = s.split_once('.')?;
        (!kernel.is_empty() && !port.is_empty() && !port.contains('.')).then(|| PortRef::new(kernel, port))
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.kernel, self.port)
    }
}

/// One declared edge: the owning routine's `input` port is fed by `source`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Connection {
    pub input: String,
    pub source: PortRef,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutineSpec {
    pub blas_routine: RoutineKind,
    pub kernel_name: String,
    pub data_type: DataType,
    pub vector_width_bits: u32,
    pub window_size_bytes: u64,
    pub placement_hint: Option<TileCoord>,
    /// Declaration order; an input listed twice is kept so validation can report it.
    pub connections: Vec<Connection>,
    pub on_chip_generate: BTreeSet<String>,
}

impl RoutineSpec {
    /// Spec with every optional field at its default.
    pub fn new(kind: RoutineKind, name: impl Into<String>, platform: &PlatformConfig) -> Self {
        RoutineSpec {
            blas_routine: kind,
            kernel_name: name.into(),
            data_type: DataType::F32,
            vector_width_bits: platform.max_vector_width_bits,
            window_size_bytes: DEFAULT_WINDOW_SIZE_BYTES,
            placement_hint: None,
            connections: Vec::new(),
            on_chip_generate: BTreeSet::new(),
        }
    }

    pub fn lanes(&self) -> u32 {
        self.vector_width_bits / self.data_type.bits()
    }

    pub fn window_elems(&self) -> usize {
        (self.window_size_bytes / self.data_type.bytes()) as usize
    }

    pub fn sources_of<'a>(&'a self, input: &'a str) -> impl Iterator<Item = &'a PortRef> + 'a {
        self.connections
            .iter()
            .filter(move |c| c.input == input)
            .map(|c| &c.source)
    }

    pub fn is_connected(&self, input: &str) -> bool {
        self.sources_of(input).next().is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutineSpecSet {
    pub platform: PlatformConfig,
    pub routines: Vec<RoutineSpec>,
}

impl RoutineSpecSet {
    pub fn routine(&self, name: &str) -> Option<&RoutineSpec> {
        self.routines.iter().find(|r| r.kernel_name == name)
    }

    pub fn routine_index(&self, name: &str) -> Option<usize> {
        self.routines.iter().position(|r| r.kernel_name == name)
    }

    /// Canonical JSON in the input format with every default spelled out.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialization is infallible")
    }

    /// Same design with every kernel-to-kernel connection removed.
    pub fn without_connections(&self) -> RoutineSpecSet {
        let mut s = self.clone();
        for r in &mut s.routines {
            r.connections.clear();
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

pub fn parse_spec(json_text: &str) -> Result<RoutineSpecSet, SpecError> {
    parse_spec_with_platform(json_text, &PlatformConfig::default())
}

/// Parses `json_text`; its `platform` object, if any, overrides `base`.
pub fn parse_spec_with_platform(json_text: &str, base: &PlatformConfig) -> Result<RoutineSpecSet, SpecError> {
    let value: Value = serde_json::from_str(json_text).map_err(|e| SpecError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    check_shape(&value)?;

    let raw: RawSpec = serde_json::from_str(json_text).map_err(|e| SpecError::InvalidField {
        location: format!("line {}", e.line()),
        message: e.to_string(),
    })?;

    let platform = match &raw.platform {
        Some(o) => base.with_overrides(o),
        None => base.clone(),
    };
    platform
        .validate()
        .map_err(|e| SpecError::InvalidPlatform(e.to_string()))?;

    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    let mut routines = Vec::with_capacity(raw.routines.len());
    for (index, r) in raw.routines.iter().enumerate() {
        if !is_identifier(&r.kernel_name) {
            return Err(SpecError::BadKernelName {
                name: r.kernel_name.clone(),
            });
        }
        if let Some(&first) = seen.get(r.kernel_name.as_str()) {
            return Err(SpecError::DuplicateName {
                name: r.kernel_name.clone(),
                first,
                second: index,
            });
        }
        seen.insert(&r.kernel_name, index);
        routines.push(r.resolve(&platform)?);
    }

    let set = RoutineSpecSet { platform, routines };
    resolve_connections(&set)?;
    Ok(set)
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Structural checks that must happen before typed deserialization so that
/// unknown keys and routine names get their own error kinds.
fn check_shape(value: &Value) -> Result<(), SpecError> {
    let top = value.as_object().ok_or_else(|| SpecError::InvalidField {
        location: "top level".into(),
        message: "expected a JSON object".into(),
    })?;
    if let Some(k) = top.keys().find(|k| !TOP_LEVEL_FIELDS.contains(&k.as_str())) {
        return Err(SpecError::UnknownField {
            location: "top level".into(),
            field: k.clone(),
        });
    }
    if let Some(p) = top.get("platform") {
        let obj = p.as_object().ok_or_else(|| SpecError::InvalidField {
            location: "platform".into(),
            message: "expected an object".into(),
        })?;
        if let Some(k) = obj.keys().find(|k| !PLATFORM_FIELDS.contains(&k.as_str())) {
            return Err(SpecError::UnknownField {
                location: "platform".into(),
                field: k.clone(),
            });
        }
    }
    let routines = match top.get("routines") {
        None => return Err(SpecError::MissingRoutines),
        Some(Value::Array(a)) if a.is_empty() => return Err(SpecError::MissingRoutines),
        Some(Value::Array(a)) => a,
        Some(_) => {
            return Err(SpecError::InvalidField {
                location: "routines".into(),
                message: "expected an array".into(),
            })
        }
    };
    for (index, r) in routines.iter().enumerate() {
        let location = format!("routines[{index}]");
        let obj = r.as_object().ok_or_else(|| SpecError::InvalidField {
            location: location.clone(),
            message: "expected an object".into(),
        })?;
        if let Some(k) = obj.keys().find(|k| !ROUTINE_FIELDS.contains(&k.as_str())) {
            return Err(SpecError::UnknownField {
                location,
                field: k.clone(),
            });
        }
        match obj.get("blas_routine") {
            Some(Value::String(name)) => {
                RoutineKind::from_name(name).map_err(|_| SpecError::UnknownRoutine {
                    index,
                    name: name.clone(),
                })?;
            }
            Some(_) => {
                return Err(SpecError::InvalidField {
                    location,
                    message: "`blas_routine` must be a string".into(),
                })
            }
            None => {
                return Err(SpecError::InvalidField {
                    location,
                    message: "missing required field `blas_routine`".into(),
                })
            }
        }
        if let Some(Value::Object(hint)) = obj.get("placement_hint") {
            if let Some(k) = hint.keys().find(|k| *k != "row" && *k != "col") {
                return Err(SpecError::UnknownField {
                    location: format!("{location}.placement_hint"),
                    field: k.clone(),
                });
            }
        }
    }
    Ok(())
}

fn resolve_connections(set: &RoutineSpecSet) -> Result<(), SpecError> {
    for r in &set.routines {
        for c in &r.connections {
            let bad = |reason: String| SpecError::BadConnectionRef {
                kernel: r.kernel_name.clone(),
                port: c.input.clone(),
                reason,
            };
            match r.blas_routine.port(&c.input) {
                Some(p) if p.direction == Direction::Input => {}
                Some(_) => return Err(bad(format!("`{}` is an output port", c.input))),
                None => return Err(bad(format!("{} has no port `{}`", r.blas_routine, c.input))),
            }
            let producer = set
                .routine(&c.source.kernel)
                .ok_or_else(|| bad(format!("no kernel named `{}`", c.source.kernel)))?;
            match producer.blas_routine.port(&c.source.port) {
                Some(p) if p.direction == Direction::Output => {}
                Some(_) => return Err(bad(format!("`{}` is not an output port", c.source))),
                None => {
                    return Err(bad(format!(
                        "{} has no port `{}`",
                        producer.blas_routine, c.source.port
                    )))
                }
            }
        }
    }
    Ok(())
}

/// Checks every declared connection for kind, element-type and
/// single-producer consistency. An empty result means the wiring is sound.
pub fn validate_connections(set: &RoutineSpecSet) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for r in &set.routines {
        for port in r.blas_routine.inputs() {
            let sources: Vec<_> = r.sources_of(port.name).collect();
            if sources.len() > 1 {
                let list: Vec<String> = sources.iter().map(|s| s.to_string()).collect();
                out.push(Diagnostic {
                    kernel: Some(r.kernel_name.clone()),
                    port: Some(port.name.to_string()),
                    code: DiagnosticCode::MultipleProducers,
                    message: format!(
                        "input `{}.{}` has {} producers: {}",
                        r.kernel_name,
                        port.name,
                        sources.len(),
                        list.join(", ")
                    ),
                });
            }
        }
        for c in &r.connections {
            let Some(consumer_port) = r.blas_routine.port(&c.input) else {
                continue;
            };
            let Some(producer) = set.routine(&c.source.kernel) else {
                continue;
            };
            let Some(producer_port) = producer.blas_routine.port(&c.source.port) else {
                continue;
            };
            if producer_port.channel != consumer_port.channel {
                out.push(Diagnostic {
                    kernel: Some(r.kernel_name.clone()),
                    port: Some(c.input.clone()),
                    code: DiagnosticCode::KindMismatch,
                    message: format!(
                        "`{}` produces {} but `{}.{}` expects {}",
                        c.source, producer_port.channel, r.kernel_name, c.input, consumer_port.channel
                    ),
                });
            }
            if producer.data_type != r.data_type {
                out.push(Diagnostic {
                    kernel: Some(r.kernel_name.clone()),
                    port: Some(c.input.clone()),
                    code: DiagnosticCode::TypeMismatch,
                    message: format!(
                        "`{}` produces {} but `{}.{}` expects {}",
                        c.source, producer.data_type, r.kernel_name, c.input, r.data_type
                    ),
                });
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Raw (undefaulted) form
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    #[serde(default)]
    platform: Option<PlatformOverrides>,
    routines: Vec<RawRoutine>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRoutine {
    blas_routine: RoutineKind,
    kernel_name: String,
    #[serde(default)]
    data_type: Option<DataType>,
    #[serde(default)]
    vector_width_bits: Option<u32>,
    #[serde(default)]
    window_size_bytes: Option<u64>,
    #[serde(default)]
    placement_hint: Option<TileCoord>,
    #[serde(default)]
    connections: RawConnections,
    #[serde(default)]
    on_chip_generate: Vec<String>,
}

impl RawRoutine {
    fn resolve(&self, platform: &PlatformConfig) -> Result<RoutineSpec, SpecError> {
        let kernel = &self.kernel_name;
        let data_type = self.data_type.unwrap_or(DataType::F32);
        let max = platform.max_vector_width_bits;
        let bits = self.vector_width_bits.unwrap_or(max);
        if bits == 0 || !max.is_multiple_of(bits) || bits < data_type.bits() {
            return Err(SpecError::BadVectorWidth {
                kernel: kernel.clone(),
                bits,
                max,
                element_bits: data_type.bits(),
            });
        }
        let vector_bytes = u64::from(bits / 8);
        let window = self.window_size_bytes.unwrap_or(DEFAULT_WINDOW_SIZE_BYTES);
        if window == 0 || !window.is_multiple_of(vector_bytes) {
            return Err(SpecError::BadWindowSize {
                kernel: kernel.clone(),
                bytes: window,
                vector_bytes,
            });
        }
        let mut on_chip_generate = BTreeSet::new();
        for port in &self.on_chip_generate {
            if self.blas_routine.port(port).is_none() {
                return Err(SpecError::UnknownPort {
                    kernel: kernel.clone(),
                    port: port.clone(),
                });
            }
            on_chip_generate.insert(port.clone());
        }
        let mut connections = Vec::new();
        for (input, sources) in &self.connections.0 {
            for s in sources {
                let source = PortRef::parse(s).ok_or_else(|| SpecError::BadConnectionRef {
                    kernel: kernel.clone(),
                    port: input.clone(),
                    reason: format!("`{s}` is not of the form `kernel.port`"),
                })?;
                connections.push(Connection {
                    input: input.clone(),
                    source,
                });
            }
        }
        Ok(RoutineSpec {
            blas_routine: self.blas_routine,
            kernel_name: kernel.clone(),
            data_type,
            vector_width_bits: bits,
            window_size_bytes: window,
            placement_hint: self.placement_hint,
            connections,
            on_chip_generate,
        })
    }
}

/// Connection map that keeps duplicate keys; a value may be one source or a list.
#[derive(Default)]
struct RawConnections(Vec<(String, Vec<String>)>);

impl<'de> Deserialize<'de> for RawConnections {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = RawConnections;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from input port to \"kernel.port\"")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some(key) = map.next_key::<String>()? {
                    let v: OneOrMany = map.next_value()?;
                    out.push((key, v.0));
                }
                Ok(RawConnections(out))
            }
        }
        d.deserialize_map(V)
    }
}

struct OneOrMany(Vec<String>);

impl<'de> Deserialize<'de> for OneOrMany {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Either {
            One(String),
            Many(Vec<String>),
        }
        match Either::deserialize(d) {
            Ok(Either::One(s)) => Ok(OneOrMany(vec![s])),
            Ok(Either::Many(v)) => Ok(OneOrMany(v)),
            Err(_) => Err(de::Error::custom(
                "connection source must be \"kernel.port\" or a list of them",
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// Serialization back to the input format
// ---------------------------------------------------------------------------

impl Serialize for RoutineSpecSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("RoutineSpecSet", 2)?;
        st.serialize_field("platform", &self.platform)?;
        st.serialize_field("routines", &self.routines)?;
        st.end()
    }
}

impl Serialize for RoutineSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("RoutineSpec", 8)?;
        st.serialize_field("blas_routine", &self.blas_routine)?;
        st.serialize_field("kernel_name", &self.kernel_name)?;
        st.serialize_field("data_type", &self.data_type)?;
        st.serialize_field("vector_width_bits", &self.vector_width_bits)?;
        st.serialize_field("window_size_bytes", &self.window_size_bytes)?;
        if let Some(h) = &self.placement_hint {
            st.serialize_field("placement_hint", h)?;
        }
        st.serialize_field("connections", &ConnectionsOut(&self.connections))?;
        st.serialize_field("on_chip_generate", &self.on_chip_generate)?;
        st.end()
    }
}

struct ConnectionsOut<'a>(&'a [Connection]);

impl Serialize for ConnectionsOut<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for c in self.0 {
            m.serialize_entry(&c.input, &c.source.to_string())?;
        }
        m.end()
    }
}

/// Channel type of `kernel.port` in `set`, if both exist.
pub fn port_channel(set: &RoutineSpecSet, port: &PortRef) -> Option<ChannelType> {
    set.routine(&port.kernel)?
        .blas_routine
        .port(&port.port)
        .map(|p| p.channel)
}
