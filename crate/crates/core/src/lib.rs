pub mod blocks;
pub mod bounds;
pub mod coherence;
pub mod control;
pub mod discrete;
pub mod error;
pub mod glauber;
pub mod krylov;
pub mod model;
pub mod optim;
pub mod solve;
pub mod superop;

pub use error::{Error, Result};
pub use model::{build_model, custom_model, phase_covariance_check, LaserModel};
