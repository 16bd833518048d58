//! Control and frame-streaming server plus the headless CLI.

pub mod cli;
pub mod protocol;
pub mod server;
