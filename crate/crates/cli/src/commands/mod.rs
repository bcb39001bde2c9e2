pub mod dnn;
pub mod gemm;
pub mod model;
pub mod report;
pub mod sweep;
pub mod trace;
