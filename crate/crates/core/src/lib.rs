//! Toolchain for BLAS dataflow designs on a grid of AI Engine tiles.
//!
//! The pipeline is: parse a JSON design ([`spec`]), build the dataflow graph
//! ([`graph`]), place kernels on tiles ([`placement`]), then either emit
//! sources ([`codegen`]), execute functionally ([`simulator`]) or estimate
//! run time ([`perf`]). [`compile`] runs the front half in one call.

pub mod catalog;
pub mod codegen;
pub mod graph;
pub mod perf;
pub mod placement;
pub mod platform;
pub mod simulator;
pub mod spec;

use thiserror::Error;

pub use catalog::{Buffer, DataType, Direction, Elements, RoutineKind, Shape};
pub use codegen::{emit_design, write_design, CodegenError, GeneratedDesign};
pub use graph::{build_graph, interface_budget, to_dot, DataflowGraph, GraphError, NodeId, NodeKind};
pub use perf::{compare_variants, estimate, DesignVariant, PerfError, PerfEstimate};
pub use placement::{place, Placement, PlacementError};
pub use platform::{default_platform, PlatformConfig, TileCoord};
pub use simulator::{simulate, DataBinding, Dims, SimError, SimResult};
pub use spec::{parse_spec, parse_spec_with_platform, Diagnostic, DiagnosticCode, RoutineSpec, RoutineSpecSet};

/// How a failure should be reported to a caller: bad input, environment
/// trouble, or a defect in the tool itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Validation,
    Io,
    Internal,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Validation => 1,
            ErrorCategory::Io => 2,
            ErrorCategory::Internal => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Spec(#[from] spec::SpecError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("interface budget exceeded")]
    Budget(Vec<Diagnostic>),
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error(transparent)]
    Codegen(#[from] CodegenError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Perf(#[from] PerfError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io { .. } | Error::Codegen(CodegenError::Io { .. }) => ErrorCategory::Io,
            Error::Codegen(CodegenError::NonEmptyOutputDir(_)) => ErrorCategory::Io,
            Error::Codegen(_) => ErrorCategory::Internal,
            _ => ErrorCategory::Validation,
        }
    }

    /// Structured findings, when the error has any.
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        match self {
            Error::Spec(e) => vec![e.to_diagnostic()],
            Error::Graph(e) => e.diagnostics(),
            Error::Budget(d) => d.clone(),
            Error::Placement(e) => vec![e.to_diagnostic()],
            Error::Perf(PerfError::Graph(e)) => e.diagnostics(),
            Error::Perf(PerfError::Placement(e)) => vec![e.to_diagnostic()],
            _ => Vec::new(),
        }
    }
}

/// A validated, placed design.
#[derive(Debug, Clone)]
pub struct CompiledDesign {
    pub graph: DataflowGraph,
    pub placement: Placement,
}

impl CompiledDesign {
    pub fn platform(&self) -> &PlatformConfig {
        &self.graph.spec.platform
    }
}

/// Builds the graph, checks the interface budget and places kernels.
pub fn compile(set: &RoutineSpecSet) -> Result<CompiledDesign, Error> {
    let graph = build_graph(set)?;
    let budget = interface_budget(&graph, &set.platform);
    if !budget.within_budget() {
        return Err(Error::Budget(budget.diagnostics()));
    }
    let placement = place(&graph, &set.platform)?;
    Ok(CompiledDesign { graph, placement })
}

/// Parses and compiles in one step.
pub fn compile_str(json_text: &str, base: &PlatformConfig) -> Result<CompiledDesign, Error> {
    let set = parse_spec_with_platform(json_text, base)?;
    compile(&set)
}
