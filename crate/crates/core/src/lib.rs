//! Distributed solution of `Ax = b` over randomly switching communication
//! graphs by a random Krasnoselskii–Mann iteration.
//!
//! Each of `m` agents privately knows a row block `A_i x = b_i` and keeps its
//! own estimate `x_i`. At every step a graph is drawn from a finite universe
//! of doubly stochastic weight matrices; agents mix their neighbours'
//! estimates and take a gradient step on their own equation. The iterates
//! converge almost surely, and in mean square, to the projection of the
//! initial state onto the set of consensus solutions, which [`oracle`]
//! computes directly.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`problem`] | partitioned system, step sizes, `Ã`/`b̃`, residuals |
//! | [`graph`] | weighted graphs, universe, stochasticity and connectivity checks |
//! | [`process`] | seeded graph processes, recurrence certificate |
//! | [`operators`] | `T`, `H`, `D`, `S`, `Q₁`, `Q₂` and property harnesses |
//! | [`engine`] | the iteration, trajectory records, Monte Carlo |
//! | [`oracle`] | closed-form limit point |

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod error;
pub mod graph;
pub mod instances;
pub mod linalg;
pub mod operators;
pub mod oracle;
pub mod problem;
pub mod process;

pub use error::{Error, Result};
