//! Command-line tool and review service for the harmoniser retrieval engine.

pub mod annotations;
pub mod cli;
pub mod config;
pub mod service;
