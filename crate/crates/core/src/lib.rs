//! Finite-element solver for the dynamic Monge–Kantorovich equations.
//!
//! The steady state of the dynamics gives the L1 optimal transport density
//! and the Wasserstein-1 distance; [`otmap`] extracts transport maps from it.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use std::path::PathBuf;

use thiserror::Error;

pub mod assembly;
pub mod cli;
pub mod diagnostics;
pub mod dynamics;
pub mod fem;
pub mod io;
pub mod linsolve;
pub mod mesh;
pub mod oracle;
pub mod otmap;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mesh(#[from] mesh::MeshError),
    #[error(transparent)]
    Fem(#[from] fem::FemError),
    #[error(transparent)]
    Assembly(#[from] assembly::AssemblyError),
    #[error(transparent)]
    Linsolve(#[from] linsolve::LinsolveError),
    #[error(transparent)]
    Oracle(#[from] oracle::OracleError),
    #[error(transparent)]
    Diagnostics(#[from] diagnostics::DiagnosticsError),
    #[error(transparent)]
    Dmk(#[from] dynamics::DmkError),
    #[error(transparent)]
    OtMap(#[from] otmap::OtMapError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("not converged: {0}")]
    NonConvergence(String),
}
