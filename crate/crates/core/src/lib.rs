pub mod topology;
pub mod wire;
pub mod planner;
pub mod protocol;
pub mod adversary;
pub mod engine;
pub mod metrics;
pub mod scenario;
