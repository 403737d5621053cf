//! Library surface of the `cib` binary. The binary's entrypoint lives in
//! `main.rs`; everything else — per-subcommand key tables, config
//! resolution, and the command implementations — is exposed here so
//! integration tests can drive the same tables the binary uses.

pub mod commands;
pub mod config;
pub mod priors;

pub use config::{CliError, CommandSpec, Ctx, Key};

/// Environment variable naming the default output root.
pub const OUT_ROOT_VAR: &str = "CIB_OUT_ROOT";

/// All subcommand key tables, in dispatch order.
pub static SPECS: [&CommandSpec; 7] = [
    &commands::gen_tasks::SPEC,
    &commands::train::SPEC,
    &commands::eval::SPEC,
    &commands::sweep::SPEC,
    &commands::profile::SPEC,
    &commands::score::SPEC,
    &commands::mi_check::SPEC,
];
