//! Configuration, caching and experiment runs behind the `defecthom` binary.

pub mod cache;
pub mod config;
pub mod manifest;
pub mod run;

pub use config::{ConfigError, ExperimentConfig, Kind};
pub use run::{run, Outcome, RunOptions};

/// Exit code for a run whose contracts all hold.
pub const EXIT_OK: u8 = 0;
/// Exit code for a violated contract or a solver fault.
pub const EXIT_CONTRACT: u8 = 1;
/// Exit code for usage and configuration errors.
pub const EXIT_CONFIG: u8 = 2;

/// Exit code for an error returned by [`run`] or config loading.
pub fn exit_code_for(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.downcast_ref::<ConfigError>().is_some()) {
        EXIT_CONFIG
    } else {
        EXIT_CONTRACT
    }
}
