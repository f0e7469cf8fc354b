// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod corruption;
pub mod ebm;
pub mod evaluation;
pub mod pde;
pub mod trainer;
