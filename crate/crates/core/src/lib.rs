//! Symbolic variational calculus for classical field theories.
//!
//! The crate derives, from a declared model — base manifold, background and
//! matter bundles, and a Lagrangian density — the Euler-Lagrange forms,
//! energy-momentum tensors, balance identities, Noether currents, and
//! canonical variational completions, and verifies every identity both
//! symbolically and by randomized numeric evaluation.
//!
//! The layers, bottom-up:
//! - [`rational`], [`atom`], [`expr`]: the exact expression kernel;
//! - [`model`]: manifolds, bundles, metric machinery;
//! - [`jet`]: total derivatives, prolongation, Euler-Lagrange operators,
//!   Poincaré-Cartan data, Noether currents;
//! - [`emt`]: canonical lifts, source forms, energy-momentum tensors and
//!   their balance laws;
//! - [`geom`] and [`graph`]: curvature, covariant calculus, and a fast
//!   numeric evaluation graph for high-dimensional checks;
//! - [`complete`]: homothety scaling and canonical variational completion;
//! - [`numcheck`]: randomized numeric verification of symbolic identities;
//! - [`render`]: model-aware text rendering of expressions.

pub mod atom;
pub mod complete;
pub mod emt;
pub mod expr;
pub mod geom;
pub mod graph;
pub mod jet;
pub mod model;
pub mod numcheck;
pub mod rational;
pub mod render;
