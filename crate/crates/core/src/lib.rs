pub mod analytics;
pub mod channel;
pub mod engine;
pub mod experiment;
pub mod policy;
pub mod workload;
