//! Multi-dimensional quality scoring for logged LLM outputs, reliability
//! auditing against a reference signal, composite calibration, and a
//! proof-of-quality consensus simulator.

pub mod audit;
pub mod cli;
pub mod composite;
pub mod config;
pub mod ingest;
pub mod model;
pub mod report;
pub mod scorers;
pub mod seed;
pub mod sim;
pub mod stats;
pub mod synth;
