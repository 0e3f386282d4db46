pub mod cat_analysis;
pub mod classical;
pub mod collapse_mc;
pub mod drive;
pub mod error;
pub mod io;
pub mod observables;
pub mod ode;
pub mod params;
pub mod quantum;

pub use error::{Error, Result};
