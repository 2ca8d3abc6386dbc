pub mod arch;
pub mod dataio;
pub mod error;
pub mod landscape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
