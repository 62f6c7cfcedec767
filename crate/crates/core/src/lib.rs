pub mod checkpoint;
pub mod curriculum;
pub mod env;
pub mod error;
pub mod nn;
pub mod physics;
pub mod ppo;
pub mod randomize;
pub mod rollout;
pub mod rotation;
pub mod seeding;

pub use error::{Error, Result};
