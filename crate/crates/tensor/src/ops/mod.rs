pub mod attention;
pub mod conv;
mod elementwise;
mod linalg;
pub mod norm;
mod reduce;
mod resize;
mod shape;
