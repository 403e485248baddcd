//! Combining many experts' responses into one structure estimate.

pub mod mixture;
pub mod search;
pub mod vote;

pub use mixture::{
    em_fit, pair_geometry, responsibilities, EmFit, MixtureData, MixtureParams, RelationClass,
};
pub use search::{
    edge_penalty, ordering_graph, per_expert_graphs, query_level_aggregate, query_level_search,
    structure_search, CandidateState, FitReport, QueryLevelConfig, Scorer, SearchOutcome,
    DEFAULT_RESTARTS,
};
pub use vote::{aggregate_expert_level, vote_shares, ExpertEstimate};
