pub mod config;
pub mod env;
pub mod error;
pub mod experiment;
pub mod numeric;
pub mod observation;
pub mod policy;
pub mod ppo;
pub mod skills;

pub use error::{Error, Result};
