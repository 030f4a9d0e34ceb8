//! File formats, pipeline stages, checkpoints, the chat service and its
//! HTTP front end, built on `cheerbots-core`.

pub mod catalog_io;
pub mod checkpoint;
pub mod components;
pub mod ed_csv;
pub mod error;
pub mod io;
pub mod cli;
pub mod pipeline;
pub mod report;
pub mod server;
pub mod service;
