//! Command-line verbs and the review API of the closed loop.

pub mod api;
pub mod commands;
pub mod workspace;
