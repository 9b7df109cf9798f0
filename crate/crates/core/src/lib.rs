//! Fits of shape-restricted and regularized regression estimators written
//! as (perturbed) projections onto polyhedra, their divergence and degrees
//! of freedom, and tuning by Stein's unbiased risk estimate.
//!
//! ```
//! use nalgebra::DVector;
//! use polydf::{dof, qp, PartialOrder, SolverConfig};
//!
//! let sys = PartialOrder::chain(4).unwrap().to_constraint_system();
//! let y = DVector::from_vec(vec![1.0, 0.0, 2.0, 3.0]);
//! let fit = qp::project(&sys, &y, &SolverConfig::default()).unwrap();
//! assert_eq!(fit.theta_hat.as_slice(), &[0.5, 0.5, 2.0, 3.0]);
//! assert_eq!(dof::divergence_polyhedral(&sys, &fit).unwrap().value, 3.0);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod dof;
pub mod error;
pub mod geometry;
pub mod io;
pub mod isotonic;
pub mod problems;
pub mod qp;
pub mod rng;
pub mod sure;
pub mod union_find;

pub use dof::{DivergenceMethod, DivergenceReport};
pub use error::{Error, Result};
pub use geometry::{ActiveSet, ConstraintSystem, LiftedSystem, Perturbation, RowLabel};
pub use isotonic::{BoundedIsotonicSystem, PartialOrder};
pub use problems::{Dataset, Formulation, ProblemKind, ProblemSpec};
pub use qp::{FitResult, Method, SolverConfig, Status};
pub use sure::{SureCurve, SureRecord};
