//! Simulation of the adaptive data analysis game between a curator holding samples
//! and an analyst issuing statistical queries.

pub mod codes;
pub mod f2_linalg;
pub mod seeds;
pub mod value;
pub mod models;
pub mod partition;
pub mod queries;
pub mod curators;
pub mod analysts;
pub mod engine;
