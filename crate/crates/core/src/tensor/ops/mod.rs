pub mod conv;
mod elementwise;
mod linalg;
mod loss;
pub mod norm;
mod pool;
