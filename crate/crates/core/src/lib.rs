pub mod buffer;
pub mod cli;
pub mod config;
pub mod critic;
pub mod dynamics;
pub mod env;
pub mod eval;
pub mod numerics;
pub mod pipeline;
pub mod planner;
pub mod reanalysis;
pub mod policy;
