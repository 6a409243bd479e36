//! IO, backends, project storage, the HTTP API and the command line for
//! the cuekit film-scoring pipeline.

pub mod api;
pub mod backends;
pub mod config;
pub mod demo;
pub mod io;
pub mod pipeline;
pub mod project;
