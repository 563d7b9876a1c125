#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod feedback;
pub mod linalg;
pub mod lti;
pub mod lyapunov;
pub mod report;
pub mod scenario;
pub mod simulator;
pub mod supervisor;
