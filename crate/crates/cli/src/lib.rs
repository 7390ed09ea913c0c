//! Command implementations behind the `mmpde` binary.

pub mod artifacts;
pub mod commands;
pub mod config;

/// Any failure not covered below: bad arguments, unreadable files, I/O.
pub const EXIT_ERROR: i32 = 1;
/// Training aborted by the divergence guard.
pub const EXIT_DIVERGED: i32 = 3;
/// A derivative check exceeded its tolerance.
pub const EXIT_CHECK_FAILED: i32 = 4;

/// Environment variable naming the parent of run directories.
pub const OUTPUT_DIR_ENV: &str = "MMPDE_OUTPUT_DIR";
