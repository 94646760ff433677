//! Design builders shared by the benchmarks.

use dbf_core::RoutineKind;

/// JSON for a linear chain of `len` stages, each feeding `z` into the next `x`.
pub fn chain_json(kind: RoutineKind, len: usize) -> String {
    let routines: Vec<String> = (0..len)
        .map(|i| {
            let conn = if i == 0 {
                String::new()
            } else {
                format!(r#","connections":{{"x":"s{}.z"}}"#, i - 1)
            };
            format!(r#"{{"blas_routine":"{}","kernel_name":"s{i}"{conn}}}"#, kind.name())
        })
        .collect();
    format!(r#"{{"routines":[{}]}}"#, routines.join(","))
}

/// JSON for `count` independent axpy kernels, every port on a PL mover.
pub fn independent_json(count: usize) -> String {
    let routines: Vec<String> = (0..count)
        .map(|i| format!(r#"{{"blas_routine":"axpy","kernel_name":"k{i}"}}"#))
        .collect();
    format!(r#"{{"routines":[{}]}}"#, routines.join(","))
}
