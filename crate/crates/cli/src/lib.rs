//! Command-line workflows and the session server of the bellbench virtual
//! lab.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod error;
pub mod server;
