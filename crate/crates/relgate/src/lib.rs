//! Harness around `relgate-core`: dataset loaders, the training loop,
//! evaluation with micro-F1 reports, the threshold sweep, the gradient
//! check runner, and the CLI surface.

pub mod cli;
pub mod config;
pub mod dataio;
pub mod dump;
pub mod evalrun;
pub mod gradcheck;
pub mod sequences;
pub mod sweep;
pub mod train;

pub use config::RunConfig;
pub use dataio::Corpus;
pub use evalrun::EvalReport;
pub use gradcheck::GradCheckReport;
pub use train::TrainOutcome;
