//! Files, processes and network around the core engine: the model HTTP
//! client, script recording, the session store, artifacts, the batch
//! runner, the terminal and HTTP front ends.

pub mod artifacts;
pub mod http;
pub mod render;
pub mod runner;
pub mod script;
pub mod store;
pub mod terminal;
pub mod service;
