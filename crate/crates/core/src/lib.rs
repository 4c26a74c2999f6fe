pub mod copula;
pub mod detect;
pub mod error;
pub mod fit;
pub mod gof;
pub mod margins;
pub mod optim;
pub mod pseudo;
pub mod risk;
pub mod sim;
pub mod special;
pub mod stats;

pub use copula::{CopulaSpec, Family};
pub use error::{Error, Result};
pub use fit::{fit_copula, select_family, FitResult};
pub use pseudo::{pseudo_observations, PseudoSample};
