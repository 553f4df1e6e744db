pub mod ballot;
pub mod canvass;
pub mod cli;
pub mod error;
pub mod geo;
pub mod ingest;
pub mod model;
pub mod policy;
pub mod revelation;
pub mod synth;
pub mod units;
pub mod voterfile;

pub use error::{Error, Result};
