//! Causal structure recovery from a crowd of imperfect informants.
//!
//! The crate covers the whole knowledge-driven pipeline: simulated experts
//! answer pairwise queries, single-expert models turn answers into edge
//! posteriors or latent orderings, crowd aggregation combines them into one
//! DAG, the design engine picks which pairs to ask next, and the `iv`
//! module shows how structural knowledge removes instrumental-variable bias.

pub mod aggregate;
pub mod design;
pub mod enumerate;
pub mod error;
pub mod expert;
pub mod graph;
pub mod inference;
pub mod iv;
pub mod metrics;
pub mod projection;

pub use error::{Error, Result};
pub use graph::{asia_fixture, shd, Dag, PairRelation};
