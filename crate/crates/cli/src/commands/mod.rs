mod diagnose;
mod mfpt;
mod sweep;
mod train;

pub use diagnose::{cmd_diagnose, DiagnoseReport, DiagnosedRun};
pub use mfpt::{cmd_mfpt, MfptRow};
pub use sweep::{cmd_sweep, SweepPoint, SweepReport};
pub use train::{cmd_train, TrainReport};

use reset_opt::par::Execution;

/// Settings shared by every command.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub exec: Execution,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            exec: Execution::Parallel,
        }
    }
}
