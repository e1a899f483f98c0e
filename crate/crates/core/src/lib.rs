#![allow(clippy::needless_range_loop)]

pub mod bethe;
pub mod eigen;
pub mod error;
pub mod exec;
pub mod functions;
pub mod gauge;
pub mod lattice;
pub mod linalg;
pub mod params;
pub mod poly;
pub mod sov;
pub mod report;
