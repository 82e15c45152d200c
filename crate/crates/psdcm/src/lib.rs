//! Neural inversion of activation parameters from anatomy and ECG.

pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod loss;
pub mod model;
pub mod optim;
pub mod tape;
pub mod train;
