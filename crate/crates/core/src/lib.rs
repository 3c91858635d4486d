pub mod rng;
pub mod zo;
pub mod curvature;
pub mod ledger;
pub mod tasks;
pub mod fedsim;
pub mod harness;
