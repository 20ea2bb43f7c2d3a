//! Test harness for `hyperem`: finite-difference gradient checks,
//! brute-force reference implementations and seeded data generators.

pub mod contract;
pub mod gen;
pub mod gradcheck;
pub mod oracle;

pub use gen::{kink_safe_tensor, random_cube, random_map, random_tensor, test_wavelengths};
pub use gradcheck::{
    check_tensors, finite_diff_grad, relative_error, GradCheckReport, TensorCheck, GRAD_H, GRAD_TOLERANCE,
};
