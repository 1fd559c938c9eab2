//! Operational front end for the bed turnaround twin: CSV ingestion,
//! configuration, the `bedtwin` command line and the HTTP job service.

pub mod api;
pub mod cli;
pub mod config;
pub mod ingest;
pub mod ops;
pub mod store;
