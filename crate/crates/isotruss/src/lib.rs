//! File formats, scenario runner, command line and bridge service around
//! [`isotruss_core`].

pub mod bridge;
pub mod error;
pub mod report;
pub mod runlog;
pub mod runner;
pub mod scenario;

pub use error::{Error, Result, SchemaError, SchemaErrorKind, SchemaErrors};
pub use runlog::RunLog;
pub use runner::{run_scenario, WallClock};
pub use scenario::{parse_scenario, Scenario};
