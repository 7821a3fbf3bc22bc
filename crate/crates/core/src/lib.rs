//! Two-stage linear-quadratic control with a controlled switch time.
//!
//! A state `X1` runs on `[0, r)`; at the switch time `r` it is mapped into a
//! larger state `X(r) = K(r) X1(r-)` which runs to the horizon `T`. For a
//! fixed `r` the optimal control is a linear state feedback given by two
//! backward Riccati equations ([`riccati`]); the best switch time minimises
//! `r ↦ ⟨P1ʳ(0) x1, x1⟩` ([`dot`]). [`closed_form`] holds analytic
//! solutions used as oracles and [`simulate`] checks everything against
//! Monte Carlo simulation of the controlled SDE.

pub mod cli;
pub mod closed_form;
pub mod dot;
pub mod error;
pub mod model;
pub mod report;
pub mod riccati;
pub mod simulate;

pub use error::{Error, Result};
pub use model::{coeff_at, validate_spec, CoeffTable, ProblemSpec, TimeGrid, ValidationReport};
pub use riccati::{feedback_gain, solve_stage1, solve_stage2, value_at_zero, RiccatiSolution, Stage1Solution};
