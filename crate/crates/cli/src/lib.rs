//! Library surface of the CLI: JSON schemas and the experiment harness,
//! shared between the binary and its integration tests.

pub mod experiment;
pub mod io;
