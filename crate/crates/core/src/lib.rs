//! Index computations for pseudodifferential operators with shifts on the circle.

pub mod chern_index;
pub mod error;
pub mod fredholm;
pub mod group_model;
pub mod index_engine;
pub mod linalg;
pub mod nc_forms;
pub mod shift_ops;
pub mod symbol_calc;
pub mod trig;
pub mod workbench;

pub use error::{Result, WorkbenchError};
