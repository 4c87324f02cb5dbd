//! Worst-case verification of sequential convex programming (SCP)
//! algorithms on parametric non-convex quadratically-constrained quadratic
//! problems.
//!
//! The crate has three layers:
//!
//! * forward execution — run trust-region, penalized convex-concave,
//!   prox-linear, and relax-round-polish schedules on concrete parameter
//!   values ([`scprun`]), backed by an embedded convex QP solver
//!   ([`qpcore`]);
//! * compilation — encode a (problem, schedule, parameter set, metric)
//!   tuple into an explicit mixed-integer bilinear verification program
//!   ([`encoder`]);
//! * certification — solve that program globally at desk scale with a
//!   spatial branch-and-bound solver ([`globopt`]), producing worst-case
//!   suboptimality, constraint-violation, and subproblem-feasibility
//!   bounds over the whole parameter set.
//!
//! [`families`] generates the benchmark problem families; the `scpverify`
//! binary exposes the pipeline on the command line.

pub mod interval;
pub mod model;
pub mod qpcore;

pub mod cli;
pub mod par;
pub mod encoder;
pub mod families;
pub mod globopt;
pub mod scprun;
pub mod steps;
