//! Numerics for variable-exponent Lebesgue spaces and Stepanov `p(x)`-almost
//! periodic functions, together with the fractional-calculus machinery
//! (Mittag-Leffler and Wright functions, subordinated resolvent families,
//! convolution-type mild solutions) used to study them.

pub mod convolution;
pub mod exponents;
pub mod funcspec;
pub mod modular;
pub mod operators;
pub mod quad;
pub mod specfun;
pub mod stepanov;
mod tabulate;
