//! One module per subcommand; each exposes a key table (`SPEC`) and a
//! `run(ctx, out_dir) -> Result<String, CliError>` returning its summary
//! line.

pub mod eval;
pub mod gen_tasks;
pub mod mi_check;
pub mod profile;
pub mod score;
pub mod sweep;
pub mod train;
