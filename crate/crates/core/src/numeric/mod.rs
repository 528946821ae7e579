//! Dense matrix arithmetic with reverse-mode gradient accumulation.

pub mod gradcheck;
pub mod matrix;
pub mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckEntry, GradCheckReport, FD_STEP};
pub use matrix::DenseMatrix;
pub use tape::{sigmoid, Gradients, NodeId, Tape};
