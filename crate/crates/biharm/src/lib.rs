//! Symmetric interior penalty DG discretization of the two dimensional
//! clamped biharmonic problem on triangle meshes.
//!
//! The crate provides the discrete machinery end to end: conforming
//! triangulations with newest-vertex-bisection and red refinement,
//! orthonormal polynomial bases with derivatives up to third order,
//! assembly of the penalized bilinear form, the facet-jump lifting operator
//! and the generalized Hessian built from it, two a posteriori error
//! estimators (a stabilization-free one evaluated on the generalized
//! Hessian and the classical DG residual one), error measurement against
//! analytic solutions, and a Dörfler-marking adaptive loop.

pub mod adapt;
pub mod analysis;
pub mod basis;
pub mod dd;
pub mod driver;
pub mod estimators;
pub mod field;
pub mod forms;
pub mod jet;
pub mod linalg;
pub mod mesh;
pub mod problems;
pub mod quad;
pub mod verify;
