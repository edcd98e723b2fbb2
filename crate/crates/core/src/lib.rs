//! Two-stage distributed solver for consensus problems with continuous and
//! Boolean variables.
//!
//! Stage I runs consensus ALADIN on the continuous relaxation and yields a
//! relaxed solution (a lower bound for convex problems). Stage II starts there
//! and pushes the Boolean block to {0, 1} with a linearized complementarity
//! penalty whose weight grows geometrically. No mixed-integer solver is used
//! anywhere; agents only solve smooth unconstrained subproblems or evaluate
//! gradients.

pub mod admm;
pub mod boxqp;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod local_solver;
pub mod objectives;
pub mod stage1;
pub mod stage2;
pub mod types;

pub use error::{Error, Result};
pub use types::{gamma, is_boolean_feasible, AgentState, AlgoParams, MixedVector, ProblemInstance, StageTag, TraceRecord};
