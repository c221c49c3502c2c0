//! Configuration, datasets and the experiment commands behind the CLI.

pub mod config;
pub mod experiments;
pub mod oneshot;

pub use config::{ExperimentConfig, HoldoutPhase};
pub use experiments::{
    cmd_experiment1, cmd_experiment2, cmd_experiment3, cmd_phantom, cmd_project, experiment1, experiment2, experiment3, Dataset,
    Exp1Summary, Exp2Summary, Exp3Summary,
};
