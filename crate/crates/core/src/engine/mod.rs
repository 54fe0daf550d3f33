//! Configuration, game loop, Monte Carlo estimation, sweeps, verification suites and output.

pub mod config;
pub mod game;
pub mod output;
pub mod sweep;
pub mod verify;

use thiserror::Error;

use crate::analysts::AnalystError;
use crate::codes::CodeError;
use crate::curators::CuratorError;
use crate::models::ModelError;
use crate::partition::PartitionError;
use crate::queries::QueryError;

pub use config::{resolve, CodeSource, Condition, GameConfig, ModelSpec};
pub use game::{run_config, wilson_interval, Game, GameResult, MonteCarloSummary, TrialOutcome};
pub use sweep::{Axis, SweepConfig, SweepRow};
pub use verify::{verify, VerifyOptions, VerifyReport, SUITES};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("trial condition not met after {0} draws")]
    ConditionUnmet(usize),
    #[error("unknown verification suite {0:?}")]
    UnknownSuite(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Curator(#[from] CuratorError),
    #[error(transparent)]
    Analyst(#[from] AnalystError),
    #[error(transparent)]
    Code(#[from] CodeError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
