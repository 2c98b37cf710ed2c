//! Dense f64 tensors, hand-differentiated primitives, SGD and the
//! finite-difference harness used to check every backward pass.

mod checkpoint;
mod gradcheck;
pub mod ops;
mod sgd;
mod tensor;

pub use checkpoint::{Checkpoint, NamedTensor};
pub use gradcheck::{
    finite_difference_check, sample_coords, Coord, CoordCheck, GradCheckReport, ParamSet,
};
pub use sgd::{sgd_step, LrGroup, ParamSlot};
pub use tensor::Tensor;
