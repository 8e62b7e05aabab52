pub mod error;
pub mod model;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod intensity;
pub mod features;
pub mod classify;
pub mod health;
pub mod bounds;
pub mod eval;
