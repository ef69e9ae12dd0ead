//! Sequential importance sampling for coalescent sampling probabilities under
//! finite-alleles and infinite-sites mutation, with the large-sample limit
//! process of cost-weighted backward simulation.

pub mod error;
pub mod io;
pub mod ism;
pub mod limit;
pub mod model;
pub mod proposals;
pub mod sis;

pub use error::{Error, Result};
pub use model::{Move, MutationModel, TransitionDistribution, TypedSample};
pub use proposals::ProposalKind;
