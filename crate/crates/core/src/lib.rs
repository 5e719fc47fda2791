pub mod algsim;
pub mod cli;
pub mod divisibility;
pub mod error;
pub mod instrument;
pub mod liouvillian;
pub mod propagator;
pub mod tensor;
pub mod trotter;
