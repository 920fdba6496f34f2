//! Checks shared by the topic test files and the acceptance runner.

#![allow(dead_code)]

pub mod grad;
pub mod invariants;
pub mod oracle;
pub mod stats;
