//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//!  1  oracle equivalence for axpy, dot, gemv, axpydot (100 seeded cases each, < 10 s)
//!  2  window-size independence over 20 random specs
//!  3  dataflow composition roughly halves axpydot time
//!  4  on-chip generation beats PL movers for memory-bound routines
//!  5  memory and interface budgets hold over 500 random specs
//!  6  linear pipelines always land on neighboring tiles
//!  7  generated sources match the golden trees
//!  8  CLI exit codes

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use dbf_core::codegen::diff_design;
use dbf_core::graph::interface_budget;
use dbf_core::perf::{compare_variants, estimate_variant};
use dbf_core::placement::{kernel_footprint, memory_report, ChannelClass};
use dbf_core::simulator::{check_against_oracle, random_inputs};
use dbf_core::spec::{Connection, PortRef};
use dbf_core::{
    compile, emit_design, parse_spec, simulate, DataType, DesignVariant, DiagnosticCode, Dims, Error, PlatformConfig,
    RoutineKind, RoutineSpec, RoutineSpecSet,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn design_text(name: &str) -> String {
    fs::read_to_string(workspace().join("designs").join(format!("{name}.json"))).unwrap()
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------------------
// 1
// ---------------------------------------------------------------------------

fn oracle_equivalence() -> Outcome {
    const CASES: usize = 100;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0001);
    let routines = [
        (
            "axpy",
            r#"{"blas_routine":"axpy","kernel_name":"k","data_type":"DT"}"#.to_string(),
        ),
        (
            "dot",
            r#"{"blas_routine":"dot","kernel_name":"k","data_type":"DT"}"#.to_string(),
        ),
        (
            "gemv",
            r#"{"blas_routine":"gemv","kernel_name":"k","data_type":"DT"}"#.to_string(),
        ),
        (
            "axpydot",
            r#"{"blas_routine":"axpy","kernel_name":"a","data_type":"DT"},
               {"blas_routine":"dot","kernel_name":"d","data_type":"DT","connections":{"x":"a.z"}}"#
                .to_string(),
        ),
    ];
    let mut worst = 0.0f64;
    for (name, body) in &routines {
        for dt in ["f32", "i32"] {
            let text = format!(r#"{{"routines":[{}]}}"#, body.replace("DT", dt));
            let d = compile(&parse_spec(&text).unwrap()).map_err(|e| e.to_string())?;
            let mut passed = 0;
            for case in 0..CASES {
                let dims = if *name == "gemv" {
                    Dims {
                        n: 0,
                        rows: rng.random_range(1..=64),
                        cols: rng.random_range(1..=64),
                    }
                } else {
                    Dims::square(rng.random_range(1..=4096))
                };
                let report = check_against_oracle(&d.graph, &d.placement, dims, 1, rng.random());
                worst = worst.max(report.max_rel_error);
                if report.all_passed() {
                    passed += 1;
                } else {
                    return Err(format!("{name}/{dt} case {case}: {:?}", report.failures));
                }
            }
            check(passed == CASES, format!("{name}/{dt}: {passed}/{CASES}"))?;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    check(elapsed < 10.0, format!("took {elapsed:.2} s"))?;
    Ok(format!(
        "4 routines x 2 types x {CASES} cases, max rel err {worst:.1e}, {elapsed:.2} s"
    ))
}

// ---------------------------------------------------------------------------
// Random specs
// ---------------------------------------------------------------------------

const KINDS: [RoutineKind; 3] = [RoutineKind::Axpy, RoutineKind::Dot, RoutineKind::Gemv];

/// A random DAG of `kernels` routines sharing one element type.
/// Each routine may take inputs from earlier ones where channel kinds agree;
/// a random subset of the remaining ports is generated on chip.
fn random_spec(rng: &mut ChaCha8Rng, kernels: std::ops::RangeInclusive<usize>, windows: &[u64]) -> Value {
    let dt = if rng.random_bool(0.5) { "f32" } else { "i32" };
    let count = rng.random_range(kernels);
    let mut kinds: Vec<RoutineKind> = Vec::new();
    let mut routines = Vec::new();
    for i in 0..count {
        let kind = KINDS[rng.random_range(0..KINDS.len())];
        let mut conns = serde_json::Map::new();
        let mut connected = Vec::new();
        for port in kind.inputs() {
            if i == 0 || !rng.random_bool(0.4) {
                continue;
            }
            let src = rng.random_range(0..i);
            let out = kinds[src].outputs().next().unwrap();
            if out.channel == port.channel {
                conns.insert(port.name.into(), json!(format!("k{src}.{}", out.name)));
                connected.push(port.name);
            }
        }
        let gen: Vec<&str> = kind
            .ports()
            .iter()
            .map(|p| p.name)
            .filter(|p| !connected.contains(p) && rng.random_bool(0.3))
            .collect();
        let width = [128u32, 256, 512][rng.random_range(0..3)];
        routines.push(json!({
            "blas_routine": kind.name(),
            "kernel_name": format!("k{i}"),
            "data_type": dt,
            "vector_width_bits": width,
            "window_size_bytes": windows[rng.random_range(0..windows.len())],
            "connections": conns,
            "on_chip_generate": gen,
        }));
        kinds.push(kind);
    }
    // Outputs consumed downstream cannot also be marked generated.
    let consumed: Vec<String> = routines
        .iter()
        .flat_map(|r| r["connections"].as_object().unwrap().values())
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    for r in &mut routines {
        let k = r["kernel_name"].as_str().unwrap().to_string();
        let gen = r["on_chip_generate"].as_array_mut().unwrap();
        gen.retain(|p| !consumed.contains(&format!("{k}.{}", p.as_str().unwrap())));
    }
    json!({ "routines": routines })
}

fn with_window(spec: &Value, bytes: u64) -> Value {
    let mut s = spec.clone();
    for r in s["routines"].as_array_mut().unwrap() {
        r["window_size_bytes"] = json!(bytes);
    }
    s
}

// ---------------------------------------------------------------------------
// 2
// ---------------------------------------------------------------------------

fn window_independence() -> Outcome {
    const SPECS: usize = 20;
    const WINDOWS: [u64; 4] = [256, 512, 1024, 4096];
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0002);
    let (mut runs, mut ok_runs) = (0, 0);
    for case in 0..SPECS {
        let spec = random_spec(&mut rng, 1..=4, &[1024]);
        let has_gemv = spec.to_string().contains("gemv");
        let dims = Dims::square(if has_gemv {
            rng.random_range(1..=40)
        } else {
            rng.random_range(1..=3000)
        });
        let base = compile(&parse_spec(&spec.to_string()).unwrap()).map_err(|e| format!("case {case}: {e}"))?;
        let (_, binding) = random_inputs(&base.graph, dims, &mut rng);

        let mut reference: Option<Result<BTreeMap<String, dbf_core::Buffer>, String>> = None;
        for w in WINDOWS {
            let text = with_window(&spec, w).to_string();
            let d = compile(&parse_spec(&text).unwrap()).map_err(|e| format!("case {case} window {w}: {e}"))?;
            let out = simulate(&d.graph, &d.placement, &binding)
                .map(|r| r.outputs)
                .map_err(|e| e.to_string());
            runs += 1;
            ok_runs += usize::from(out.is_ok());
            match &reference {
                None => reference = Some(out),
                Some(expected) => {
                    let same = match (expected, &out) {
                        (Ok(a), Ok(b)) => {
                            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.0 == y.0 && x.1.bit_eq(y.1))
                        }
                        (Err(a), Err(b)) => a == b,
                        _ => false,
                    };
                    check(same, format!("case {case}: window {w} changed outputs\nspec: {text}"))?;
                }
            }
        }
    }
    check(
        ok_runs * 2 > runs,
        format!("only {ok_runs}/{runs} simulations produced outputs"),
    )?;
    Ok(format!(
        "{SPECS} specs x {} window sizes, {runs} simulations bit-identical ({ok_runs} with outputs)",
        WINDOWS.len()
    ))
}

// ---------------------------------------------------------------------------
// 3
// ---------------------------------------------------------------------------

fn dataflow_speedup() -> Outcome {
    let set = parse_spec(&design_text("axpydot")).unwrap();
    let c = compare_variants(&set, &set.platform, 1 << 20).map_err(|e| e.to_string())?;
    check(
        (0.4..=0.6).contains(&c.ratio),
        format!("ratio {:.4} outside [0.4, 0.6]", c.ratio),
    )?;
    Ok(format!(
        "axpydot n=2^20: pipelined {:.3} ms / sequential {:.3} ms = {:.3}",
        c.pipelined_time * 1e3,
        c.sequential_time * 1e3,
        c.ratio
    ))
}

// ---------------------------------------------------------------------------
// 4
// ---------------------------------------------------------------------------

fn no_pl_speedup() -> Outcome {
    let mut lines = Vec::new();
    for (name, kernel) in [("axpy", "axpy0"), ("gemv", "gemv0")] {
        let set = parse_spec(&design_text(name)).unwrap();
        for n in [1usize << 20, 1 << 22] {
            let pl = estimate_variant(&set, DesignVariant::WithPlMovers, n).map_err(|e| e.to_string())?;
            let chip = estimate_variant(&set, DesignVariant::OnChipGenerated, n).map_err(|e| e.to_string())?;
            let (tp, tc) = (pl.pipelined_time, chip.pipelined_time);
            check(tc < tp, format!("{name} n={n}: on-chip {tc} not below PL {tp}"))?;
            let node = pl.node(kernel).unwrap();
            let share = node.transfer_time / node.node_time;
            check(share >= 0.9, format!("{name} n={n}: transfer share {share:.3} < 0.9"))?;
            if n == 1 << 20 {
                lines.push(format!("{name} {:.3}x", tp / tc));
            }
        }
    }
    Ok(format!(
        "PL/on-chip time at n=2^20: {}; transfer-bound",
        lines.join(", ")
    ))
}

// ---------------------------------------------------------------------------
// 5
// ---------------------------------------------------------------------------

/// Independent count of PL movers a spec needs: every input neither
/// connected nor generated, every output neither consumed nor generated.
fn expected_movers(spec: &Value) -> (usize, usize) {
    let routines = spec["routines"].as_array().unwrap();
    let consumed: Vec<String> = routines
        .iter()
        .flat_map(|r| r["connections"].as_object().unwrap().values())
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let (mut ins, mut outs) = (0, 0);
    for r in routines {
        let kind = RoutineKind::from_name(r["blas_routine"].as_str().unwrap()).unwrap();
        let k = r["kernel_name"].as_str().unwrap();
        let gen: Vec<&str> = r["on_chip_generate"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap())
            .collect();
        let conns = r["connections"].as_object().unwrap();
        for p in kind.inputs() {
            if !conns.contains_key(p.name) && !gen.contains(&p.name) {
                ins += 1;
            }
        }
        for p in kind.outputs() {
            if !consumed.contains(&format!("{k}.{}", p.name)) && !gen.contains(&p.name) {
                outs += 1;
            }
        }
    }
    (ins, outs)
}

fn budget_invariants() -> Outcome {
    const CASES: usize = 500;
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0005);
    let platform = PlatformConfig::default();
    let (mut placed, mut mem_rejects, mut iface_rejects) = (0, 0, 0);
    for case in 0..CASES {
        // Mostly small designs, some wide enough to hit the interface limits,
        // some with windows too large for a tile.
        let kernels = match case % 4 {
            0 => 100..=200,
            _ => 1..=6,
        };
        let windows: &[u64] = if case % 3 == 0 {
            &[1024, 4096, 8192, 16384]
        } else {
            &[256, 1024, 4096]
        };
        let spec = random_spec(&mut rng, kernels, windows);
        let set = parse_spec(&spec.to_string()).map_err(|e| format!("case {case}: {e}"))?;
        let over_memory = set
            .routines
            .iter()
            .any(|r| kernel_footprint(r) > platform.local_memory_bytes_per_tile);
        let (ins, outs) = expected_movers(&spec);
        let over_iface = ins > platform.pl_to_aie_streams || outs > platform.aie_to_pl_streams;

        match compile(&set) {
            Ok(d) => {
                check(
                    !over_memory && !over_iface,
                    format!("case {case}: over budget but accepted"),
                )?;
                let b = interface_budget(&d.graph, &platform);
                check(
                    (b.pl_to_aie, b.aie_to_pl) == (ins, outs) && b.within_budget(),
                    format!("case {case}: interface counts {b:?}, expected ({ins}, {outs})"),
                )?;
                for row in memory_report(&d.graph, &d.placement, &platform) {
                    check(
                        row.bytes <= platform.local_memory_bytes_per_tile,
                        format!("case {case}: tile {} holds {} bytes", row.tile, row.bytes),
                    )?;
                }
                placed += 1;
            }
            Err(e) => {
                let codes: Vec<DiagnosticCode> = e.diagnostics().iter().map(|d| d.code).collect();
                match &e {
                    Error::Budget(_) if over_iface => iface_rejects += 1,
                    Error::Placement(_) if over_memory && codes == [DiagnosticCode::MemoryBudgetExceeded] => {
                        mem_rejects += 1
                    }
                    _ => return Err(format!("case {case}: unexpected rejection: {e} {codes:?}")),
                }
            }
        }
    }
    check(
        mem_rejects > 0 && iface_rejects > 0,
        "generator never exercised a limit",
    )?;
    Ok(format!(
        "{CASES} specs: {placed} placed within budget, {mem_rejects} MemoryBudgetExceeded, {iface_rejects} InterfaceBudgetExceeded"
    ))
}

// ---------------------------------------------------------------------------
// 6
// ---------------------------------------------------------------------------

/// Every chain of `len` vector-to-vector stages; the last may also be a dot.
fn chains(len: usize) -> Vec<Vec<RoutineKind>> {
    let mut out: Vec<Vec<RoutineKind>> = vec![Vec::new()];
    for i in 0..len {
        let choices: &[RoutineKind] = if i + 1 == len {
            &KINDS
        } else {
            &[RoutineKind::Axpy, RoutineKind::Gemv]
        };
        out = out
            .into_iter()
            .flat_map(|c| {
                choices.iter().map(move |&k| {
                    let mut c = c.clone();
                    c.push(k);
                    c
                })
            })
            .collect();
    }
    out
}

fn chain_spec(kinds: &[RoutineKind], platform: &PlatformConfig) -> RoutineSpecSet {
    let routines = kinds
        .iter()
        .enumerate()
        .map(|(i, &kind)| {
            let mut r = RoutineSpec::new(kind, format!("s{i}"), platform);
            r.data_type = DataType::F32;
            if i > 0 {
                r.connections.push(Connection {
                    input: "x".into(),
                    source: PortRef::new(format!("s{}", i - 1), "z"),
                });
            }
            r
        })
        .collect();
    RoutineSpecSet {
        platform: platform.clone(),
        routines,
    }
}

fn placement_adjacency() -> Outcome {
    let mut designs = 0;
    let mut grids = 0;
    let all_chains: Vec<Vec<RoutineKind>> = (1..=5).flat_map(chains).collect();
    for rows in 2..=8 {
        for cols in 3..=50 {
            grids += 1;
            let platform = PlatformConfig {
                grid_rows: rows,
                grid_cols: cols,
                ..PlatformConfig::default()
            };
            for kinds in &all_chains {
                let set = chain_spec(kinds, &platform);
                let d = compile(&set).map_err(|e| format!("{rows}x{cols} {kinds:?}: {e}"))?;
                let k2k = d.graph.kernel_channels().count();
                check(k2k == kinds.len() - 1, format!("{kinds:?}: {k2k} kernel channels"))?;
                for (ci, _) in d.graph.kernel_channels() {
                    check(
                        d.placement.class_of(ci) == Some(ChannelClass::Neighbor),
                        format!("{rows}x{cols} {kinds:?}: channel {ci} not neighbor"),
                    )?;
                }
                designs += 1;
            }
        }
    }
    Ok(format!(
        "{} chains of length 1-5 on {grids} grids (2x3..8x50): {designs} placements, all neighbor",
        all_chains.len()
    ))
}

// ---------------------------------------------------------------------------
// 7
// ---------------------------------------------------------------------------

const GOLDEN: &[&str] = &[
    "axpy",
    "dot",
    "gemv",
    "axpydot",
    "axpy_nopl",
    "gemv_nopl",
    "axpydot_nopl",
];

fn golden_files() -> Outcome {
    let golden = workspace().join("crates/core/tests/golden");
    let mut files = 0;
    for name in GOLDEN {
        let set = parse_spec(&design_text(name)).unwrap();
        let d = compile(&set).map_err(|e| e.to_string())?;
        let first = emit_design(&d.graph, &d.placement, &set.platform).map_err(|e| e.to_string())?;
        let second = emit_design(&d.graph, &d.placement, &set.platform).map_err(|e| e.to_string())?;
        check(first == second, format!("{name}: two emissions differ"))?;
        let diff = diff_design(&first, &golden.join(name));
        check(diff.is_empty(), format!("{name}: {}", diff.join(", ")))?;
        files += first.files.len();
    }
    Ok(format!(
        "{} designs, {files} files byte-identical to golden",
        GOLDEN.len()
    ))
}

// ---------------------------------------------------------------------------
// 8
// ---------------------------------------------------------------------------

fn dbf(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_dbf"))
        .args(args)
        .env_remove("DBF_PLATFORM")
        .output()
        .expect("run dbf");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn cli_contract() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t = tmp.path();
    let axpydot = workspace().join("designs/axpydot.json");
    let axpydot = axpydot.to_str().unwrap();
    let write = |name: &str, text: &str| {
        let p = t.join(name);
        fs::write(&p, text).unwrap();
        p.to_str().unwrap().to_string()
    };
    let dup = write(
        "bad_dup.json",
        r#"{"routines":[{"blas_routine":"axpy","kernel_name":"k"},{"blas_routine":"dot","kernel_name":"k"}]}"#,
    );
    let cyc = write(
        "cycle.json",
        r#"{"routines":[{"blas_routine":"axpy","kernel_name":"a","connections":{"alpha":"d.result"}},
                        {"blas_routine":"dot","kernel_name":"d","connections":{"x":"a.z"}}]}"#,
    );
    let syntax = write("syntax.json", r#"{"routines": ["#);
    let build = t.join("build");
    let build = build.to_str().unwrap();
    let file_as_dir = write("not_a_dir", "x");
    let missing = t.join("missing.json");
    let missing = missing.to_str().unwrap();

    let cases: Vec<(&str, Vec<&str>, i32)> = vec![
        ("validate ok", vec!["validate", "--spec", axpydot], 0),
        ("graph --dot", vec!["graph", "--spec", axpydot, "--dot"], 0),
        (
            "estimate",
            vec!["estimate", "--spec", axpydot, "--n", "1048576", "--json"],
            0,
        ),
        ("generate", vec!["generate", "--spec", axpydot, "--out", build], 0),
        ("duplicate names", vec!["validate", "--spec", &dup], 1),
        ("cycle", vec!["validate", "--spec", &cyc], 1),
        ("syntax error", vec!["validate", "--spec", &syntax], 1),
        ("missing spec", vec!["validate", "--spec", missing], 2),
        ("generate again", vec!["generate", "--spec", axpydot, "--out", build], 2),
        (
            "generate --force",
            vec!["generate", "--spec", axpydot, "--out", build, "--force"],
            0,
        ),
        (
            "out is a file",
            vec!["generate", "--spec", axpydot, "--out", &file_as_dir],
            2,
        ),
    ];
    for (label, args, expected) in &cases {
        let (code, stdout, stderr) = dbf(args);
        check(
            code == *expected,
            format!("{label}: exit {code}, expected {expected}; stderr: {}", stderr.trim()),
        )?;
        if code != 0 {
            check(stdout.is_empty(), format!("{label}: failure wrote to stdout"))?;
            check(!stderr.is_empty(), format!("{label}: failure without a diagnostic"))?;
        }
    }
    let (_, _, stderr) = dbf(&["validate", "--spec", &dup]);
    check(
        stderr.contains("routines[0]") && stderr.contains("routines[1]"),
        format!("duplicate diagnostic does not name both kernels: {stderr}"),
    )?;
    Ok(format!("{} invocations with expected exit codes 0/1/2", cases.len()))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("oracle equivalence", oracle_equivalence),
        ("window independence", window_independence),
        ("dataflow speedup", dataflow_speedup),
        ("no-PL speedup", no_pl_speedup),
        ("budget invariants", budget_invariants),
        ("placement adjacency", placement_adjacency),
        ("codegen determinism", golden_files),
        ("CLI contract", cli_contract),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = f();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {} PASS  {name}: {detail} [{secs:.2}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} FAIL  {name}: {why} [{secs:.2}s]", i + 1);
            }
        }
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
