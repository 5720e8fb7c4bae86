pub mod backbone;
pub mod config;
pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod evalkit;
pub mod fixtures;
pub mod heuristic;
pub mod kmeans;
pub mod label;
pub mod oversample;
pub mod pipeline;
pub mod seed;
pub mod sffn;
pub mod stat_features;
