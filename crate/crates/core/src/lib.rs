//! Evidential deep learning laboratory core.
//!
//! Dirichlet meta-distributions, the family of evidential objectives built on
//! them, small feed-forward meta-models with hand-written backpropagation,
//! bootstrap/ensemble/dropout teacher banks with distillation, and the ranking
//! metrics used to evaluate the learned uncertainty.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, configuration
//! and the command-line front-end live in `edl-lab`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod dirichlet;
pub mod error;
pub mod eval;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod specialfn;
pub mod teachers;
pub mod uncertainty;

pub use data::{LabeledSet, MixtureSpec, OodSource, Points};
pub use dirichlet::{Dirichlet, ProbVector};
pub use error::{Error, Result};
pub use model::{Adam, Architecture, HeadSpec, History, MetaModel, Schedule};
pub use objectives::{LossKind, LossSpec, Target, TeacherSummary};
pub use teachers::{AnnealSchedule, TeacherBank, TeacherConfig, TeacherKind};
pub use uncertainty::UqReport;
