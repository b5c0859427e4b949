//! File formats, experiment pipeline and command line for `emulate-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod bundle;
pub mod commands;
pub mod config;
pub mod io;
pub mod pipeline;
