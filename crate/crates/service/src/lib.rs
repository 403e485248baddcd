//! Session service for live elicitation: picks the next pair to ask, takes
//! answers, and reports the current structure estimate over HTTP.

pub mod http;
pub mod session;
pub mod store;

pub use http::{router, serve, AppState};
pub use session::{EstimateSnapshot, Event, NextQuery, Session, SessionError, SessionSpec};
pub use store::SessionStore;
