pub mod eval;
pub mod inspect;
pub mod landscape;
pub mod params;
pub mod train;
