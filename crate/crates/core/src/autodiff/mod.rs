//! Reverse-mode automatic differentiation.

mod gradcheck;
mod params;
mod tape;

pub use gradcheck::{
    check_param_gradients, finite_difference_grad, max_relative_error, relative_error, GradCheckReport,
    ParamCheck,
};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{Fault, Tape, Var};
