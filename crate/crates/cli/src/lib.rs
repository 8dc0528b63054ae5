//! Command-line surface for the atlas-to-DSA registration pipeline.

pub mod config;
pub mod phantom_case;
pub mod pipeline;
pub mod report;
