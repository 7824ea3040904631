pub mod quadrature;
pub mod measure;
pub mod subordination;
pub mod stats;
pub mod edge;
pub mod density;
pub mod rmt;
pub mod experiments;
pub mod cli;
