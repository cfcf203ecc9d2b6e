//! Operator surface for the conversational model: the `ncm` command-line
//! tool and the HTTP chat and evaluation service.

pub mod cli;
pub mod engine;
pub mod error;
pub mod responder;
pub mod server;
pub mod session;

pub use engine::Engine;
pub use error::{exit_code, ExitCode};
