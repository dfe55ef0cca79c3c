//! Experiment runner behind the `federl` binary.

pub mod config;
pub mod corrupt;
pub mod generate;
pub mod report;
pub mod run;

use federl_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

/// Exit status for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config(_) | Error::UnknownFilter(_) | Error::UnknownAugOp(_) | Error::UnknownMode(_)) => EXIT_CONFIG,
        Some(Error::BudgetExhausted { .. }) => EXIT_BUDGET,
        _ => EXIT_RUNTIME,
    }
}
