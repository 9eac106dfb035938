//! Shared fixtures for the benchmarks.

use tabclean_core::harness::{Dependence, FdGroup};
use tabclean_core::{generate_synthetic, inject_errors, ErrorSpec, Table};

/// Two FD groups over `2 + 2·extra` columns, with 5% mixed errors.
pub fn dirty_fd_table(rows: usize, seed: u64) -> Table {
    let groups = vec![
        FdGroup::new(
            "zip",
            50,
            &[("city", Dependence::Injective), ("state", Dependence::Coarse(10))],
        ),
        FdGroup::new(
            "provider",
            50,
            &[("name", Dependence::Injective), ("kind", Dependence::Coarse(5))],
        ),
    ];
    let clean = generate_synthetic(rows, &groups, seed).expect("synthetic table");
    let r = 0.05 / 3.0;
    let spec = ErrorSpec {
        typo: r,
        missing: r,
        inconsistency: r,
        swap: 0.0,
        seed,
    };
    inject_errors(&clean, &spec).expect("injection").0
}
