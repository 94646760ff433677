use std::fs;
use std::io::Write as _;
use std::panic;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use dbf_core::perf::{estimate_variant, NodeEstimate};
use dbf_core::placement::memory_report;
use dbf_core::platform::PlatformOverrides;
use dbf_core::simulator::buffer_to_json;
use dbf_core::{
    compile, emit_design, parse_spec_with_platform, simulate, to_dot, write_design, CompiledDesign, DataBinding,
    DesignVariant, Diagnostic, Error, ErrorCategory, PerfEstimate, PlatformConfig, RoutineSpecSet,
};

#[derive(Parser, Debug)]
#[command(
    name = "dbf",
    version,
    about = "Validate, generate, simulate and estimate BLAS dataflow designs"
)]
struct Cli {
    /// Platform override file (JSON object with any platform fields).
    #[arg(long, env = "DBF_PLATFORM", global = true, value_name = "PATH")]
    platform: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct SpecArg {
    /// Design specification (JSON).
    #[arg(long, value_name = "PATH")]
    spec: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a design and report diagnostics.
    Validate {
        #[command(flatten)]
        spec: SpecArg,
        #[arg(long)]
        json: bool,
    },
    /// Emit kernel, mover and graph sources.
    Generate {
        #[command(flatten)]
        spec: SpecArg,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Overwrite files in a non-empty output directory.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        json: bool,
    },
    /// Run the design functionally on host data.
    Simulate {
        #[command(flatten)]
        spec: SpecArg,
        /// Input values keyed by mover name (`kernel.port`).
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
        /// Also print the channel trace.
        #[arg(long)]
        json: bool,
    },
    /// Estimate run time.
    Estimate {
        #[command(flatten)]
        spec: SpecArg,
        #[arg(long, default_value_t = 1 << 20)]
        n: usize,
        #[arg(long, value_name = "NAME")]
        variant: Option<DesignVariant>,
        /// Print the per-tile memory report instead.
        #[arg(long)]
        memory: bool,
        #[arg(long)]
        json: bool,
    },
    /// Print the dataflow graph.
    Graph {
        #[command(flatten)]
        spec: SpecArg,
        /// GraphViz output.
        #[arg(long)]
        dot: bool,
        #[arg(long)]
        json: bool,
    },
}

struct Failure {
    category: ErrorCategory,
    message: String,
    diagnostics: Vec<Diagnostic>,
}

impl Failure {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Failure {
            category: ErrorCategory::Io,
            message: format!("{}: {e}", path.display()),
            diagnostics: Vec::new(),
        }
    }

    fn validation(message: String) -> Self {
        Failure {
            category: ErrorCategory::Validation,
            message,
            diagnostics: Vec::new(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            category: e.category(),
            message: e.to_string(),
            diagnostics: e.diagnostics(),
        }
    }
}

type CliResult = Result<String, Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

fn load_platform(path: Option<&Path>) -> Result<PlatformConfig, Failure> {
    let base = PlatformConfig::default();
    let Some(path) = path else { return Ok(base) };
    let overrides: PlatformOverrides = serde_json::from_str(&read(path)?)
        .map_err(|e| Failure::validation(format!("{}: invalid platform overrides: {e}", path.display())))?;
    let platform = base.with_overrides(&overrides);
    platform
        .validate()
        .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    Ok(platform)
}

fn load_spec(cli_platform: Option<&Path>, spec: &SpecArg) -> Result<RoutineSpecSet, Failure> {
    let platform = load_platform(cli_platform)?;
    let text = read(&spec.spec)?;
    parse_spec_with_platform(&text, &platform).map_err(|e| Failure::from(Error::from(e)))
}

fn load_design(cli_platform: Option<&Path>, spec: &SpecArg) -> Result<CompiledDesign, Failure> {
    let set = load_spec(cli_platform, spec)?;
    Ok(compile(&set)?)
}

fn pretty(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn run(cli: &Cli) -> CliResult {
    let platform = cli.platform.as_deref();
    match &cli.command {
        Command::Validate { spec, json } => {
            let d = load_design(platform, spec)?;
            let kernels = d.graph.kernel_count();
            let movers = d.graph.nodes.iter().filter(|n| n.kind.is_pl_mover()).count();
            Ok(if *json {
                pretty(&json!({ "valid": true, "kernels": kernels, "pl_movers": movers, "diagnostics": [] }))
            } else {
                format!(
                    "{}: valid ({kernels} kernels, {movers} PL movers)\n",
                    spec.spec.display()
                )
            })
        }
        Command::Generate { spec, out, force, json } => {
            let d = load_design(platform, spec)?;
            let design = emit_design(&d.graph, &d.placement, d.platform()).map_err(Error::from)?;
            let n = write_design(&design, out, *force).map_err(Error::from)?;
            Ok(if *json {
                pretty(&json!({ "out": out, "files": design.manifest.sources, "written": n }))
            } else {
                format!("wrote {n} files to {}\n", out.display())
            })
        }
        Command::Simulate { spec, input, json } => {
            let d = load_design(platform, spec)?;
            let binding = match input {
                Some(path) => DataBinding::from_json(&d.graph, &read(path)?).map_err(Error::from)?,
                None => DataBinding::new(),
            };
            let result = simulate(&d.graph, &d.placement, &binding).map_err(Error::from)?;
            let outputs: serde_json::Map<String, serde_json::Value> = result
                .outputs
                .iter()
                .map(|(k, v)| (k.clone(), buffer_to_json(v)))
                .collect();
            Ok(if *json {
                pretty(&json!({ "outputs": outputs, "trace": result.trace }))
            } else {
                pretty(&outputs)
            })
        }
        Command::Estimate {
            spec,
            n,
            variant,
            memory,
            json,
        } => {
            let set = load_spec(platform, spec)?;
            if *memory {
                let d = compile(&set)?;
                let report = memory_report(&d.graph, &d.placement, &set.platform);
                return Ok(if *json {
                    pretty(&report)
                } else {
                    memory_table(&report, set.platform.local_memory_bytes_per_tile)
                });
            }
            // Surface spec errors (budget, placement) for the design as written.
            compile(&set)?;
            let variant = variant.unwrap_or(DesignVariant::DataflowComposed);
            let est = estimate_variant(&set, variant, *n).map_err(Error::from)?;
            Ok(if *json {
                pretty(&json!({
                    "variant": variant.name(),
                    "design_time": variant.design_time(&est),
                    "estimate": est,
                }))
            } else {
                estimate_table(variant, &est)
            })
        }
        Command::Graph { spec, dot, json } => {
            let d = load_design(platform, spec)?;
            if *dot {
                return Ok(to_dot(&d.graph));
            }
            let g = &d.graph;
            let nodes: Vec<_> = g
                .nodes
                .iter()
                .enumerate()
                .map(|(id, n)| {
                    json!({
                        "name": n.name,
                        "kind": n.kind.label(),
                        "tile": d.placement.tile_of(id),
                    })
                })
                .collect();
            let channels: Vec<_> = g
                .channels
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let end = |e: &dbf_core::graph::Endpoint| {
                        let node = g.node(e.node);
                        if node.is_kernel() {
                            format!("{}.{}", node.name, e.port)
                        } else {
                            format!("{}:{}", node.kind.label(), node.name)
                        }
                    };
                    json!({
                        "from": end(&c.producer),
                        "to": end(&c.consumer),
                        "kind": c.kind,
                        "class": d.placement.class_of(i),
                    })
                })
                .collect();
            if *json {
                return Ok(pretty(&json!({ "nodes": nodes, "channels": channels })));
            }
            let mut out = String::new();
            for (id, n) in g.nodes.iter().enumerate() {
                let tile = d.placement.tile_of(id).map(|t| format!(" @ {t}")).unwrap_or_default();
                out.push_str(&format!("node {} [{}]{tile}\n", n.name, n.kind.label()));
            }
            for c in &channels {
                out.push_str(&format!(
                    "edge {} -> {}\n",
                    c["from"].as_str().unwrap(),
                    c["to"].as_str().unwrap()
                ));
            }
            Ok(out)
        }
    }
}

fn seconds(t: f64) -> String {
    if t >= 1e-3 {
        format!("{:.3} ms", t * 1e3)
    } else {
        format!("{:.3} us", t * 1e6)
    }
}

fn estimate_table(variant: DesignVariant, est: &PerfEstimate) -> String {
    let rows: Vec<[String; 6]> = est
        .nodes
        .iter()
        .map(|n: &NodeEstimate| {
            [
                n.name.clone(),
                n.kind.to_string(),
                n.tile.map(|t| t.to_string()).unwrap_or_else(|| "-".into()),
                seconds(n.compute_time),
                seconds(n.transfer_time),
                seconds(n.node_time),
            ]
        })
        .collect();
    let header = ["node", "kind", "tile", "compute", "transfer", "node_time"];
    let mut widths = header.map(str::len);
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[&str]| -> String {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate() {
            if i < 3 {
                s.push_str(&format!("{:<w$}  ", c, w = widths[i]));
            } else {
                s.push_str(&format!("{:>w$}  ", c, w = widths[i]));
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = format!("variant {variant}, n = {}\n", est.n);
    out.push_str(&line(&header));
    for r in &rows {
        out.push_str(&line(&r.each_ref().map(String::as_str)));
    }
    out.push_str(&format!("fill overhead     {}\n", seconds(est.fill_overhead)));
    out.push_str(&format!("pipelined time    {}\n", seconds(est.pipelined_time)));
    out.push_str(&format!("sequential time   {}\n", seconds(est.sequential_time)));
    out.push_str(&format!("design time       {}\n", seconds(variant.design_time(est))));
    out
}

fn memory_table(report: &[dbf_core::placement::TileFootprint], capacity: u64) -> String {
    let mut out = format!("{:<10}  {:<16}  {:>8}  {:>8}\n", "tile", "kernel", "bytes", "free");
    for r in report {
        out.push_str(&format!(
            "{:<10}  {:<16}  {:>8}  {:>8}\n",
            r.tile.to_string(),
            r.kernel,
            r.bytes,
            r.headroom
        ));
    }
    out.push_str(&format!("capacity per tile: {capacity} bytes\n"));
    out
}

fn report(f: &Failure) {
    let mut err = std::io::stderr().lock();
    if f.diagnostics.is_empty() {
        let _ = writeln!(err, "error: {}", f.message);
    } else {
        for d in &f.diagnostics {
            let _ = writeln!(err, "error: {d}");
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    // A panic is a defect in the tool; report it as an internal error.
    panic::set_hook(Box::new(|info| {
        eprintln!("internal error: {info}");
    }));
    match panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(out)) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Ok(Err(f)) => {
            report(&f);
            ExitCode::from(f.category.exit_code() as u8)
        }
        Err(_) => ExitCode::from(ErrorCategory::Internal.exit_code() as u8),
    }
}
