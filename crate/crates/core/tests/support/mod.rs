//! Checks shared between the focused suites and the acceptance run.
// Each test target uses a different subset.
#![allow(dead_code)]

pub mod determinism;
pub mod gradcheck;
pub mod oracles;
pub mod transforms;
