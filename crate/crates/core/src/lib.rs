//! Finite-element simulator for the four-species Keller-Segel chemotaxis
//! system on polygonal (possibly nonconvex) domains with homogeneous Neumann
//! boundary conditions.
//!
//! The model couples cell density u, attractant v, enzyme p and complex w:
//!
//! ```text
//! u' - div(kappa(u,v) grad u) = div(sigma(u,v) grad v) + R1
//! v' - k_v lap v = R2 = -r1 v p + r_neg1 w + u f(v)
//! p' - k_p lap p = R3 = -r1 v p + (r_neg1 + r2) w + u g(v, p)
//! w' - k_w lap w = R4 =  r1 v p - (r_neg1 + r2) w
//! ```
//!
//! Space is discretized by P1 triangles, time by a first-order IMEX scheme
//! that mirrors the decoupled solution structure: the (v, p, w) subsystem is
//! advanced with u as a given stage function, then the quasilinear u equation
//! with lagged coefficients, optionally iterated (Picard). All linear systems
//! are symmetric positive definite and solved by preconditioned conjugate
//! gradients. Blow-up is detected through a sup-norm threshold with
//! tau-halving, the discrete stand-in for a finite maximal existence
//! interval.

pub mod checks;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod mesh;
pub mod operator;
pub mod reactions;
pub mod stepper;

pub use error::{Error, Result};
