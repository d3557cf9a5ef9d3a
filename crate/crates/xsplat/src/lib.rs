//! File formats, experiment recipes and subcommands around `xsplat-core`.

pub mod commands;
pub mod formats;
pub mod recipe;
