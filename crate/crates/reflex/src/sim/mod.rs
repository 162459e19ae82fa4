//! Simulated benchmark: scene model, scenario generation, and the episode
//! harness with JSONL/CSV reporting.

mod episode;
mod generate;
mod scene;

pub use episode::*;
pub use generate::*;
pub use scene::*;
