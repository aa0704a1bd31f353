//! Data directory, HTTP service and command-line front end for the planit
//! engine.

pub mod api;
pub mod cli;
pub mod store;
