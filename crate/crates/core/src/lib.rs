//! Co-scheduling of in situ analyses for ensembles of coupled simulations:
//! performance model, optimal allocation, integer rounding, partition
//! search and a flow-level simulator to check the model against.

pub mod coalloc;
pub mod model;
pub mod perf;
pub mod cosched;
pub mod rounding;
pub mod scenarios;
pub mod sim;
pub mod experiment;
