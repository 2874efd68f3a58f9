//! HTTP service and command-line front end for the ticket search engine.

pub mod api;
pub mod app;
pub mod config;

pub use api::router;
pub use app::{build_state, AppState};
pub use config::ServiceConfig;
