//! Principal eigenvalues, Dirichlet solvers and barrier certificates for the degenerate or
//! singular fully nonlinear operators `F(Du, D^2u) = |Du|^alpha M±_{a,A}(D^2u)`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod banded;
pub mod barrier;
pub mod cli;
pub mod config;
pub mod eigen;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod ode;
pub mod operator;
pub mod radial;
pub mod record;
pub mod scheme;
pub mod solver;

pub use analysis::{check_comparison, check_max_principle, measure_modulus, ModulusReport, PrincipleReport};
pub use barrier::{boundary_barrier, global_barrier, BarrierField, BarrierParams};
pub use config::{parse_config, parse_config_for, RunConfig};
pub use eigen::{estimate_lambda_bar, estimate_lambda_bar_with, verify_eigenpair, EigenOptions};
pub use error::{Error, Result};
pub use geometry::{DistanceProbe, DomainSpec, StarDomain};
pub use grid::{build_grid, Grid, NodeKind, ScalarField};
pub use operator::{eval_F, pucci_extremal, reflect_operator, verify_operator_axioms, OperatorSpec, Sign, SymmetricMatrix};
pub use radial::{radial_F, radial_supersolution_bound, shoot_eigen, EigenResult, Eigenfunction, RadialProfile};
pub use scheme::apply_F_discrete;
pub use solver::{monotone_iterate, solve_dirichlet, IterationTrace, TraceStatus};
