//! Local HTTP service backing the browser elicitation client.

pub mod api;
pub mod store;

pub use api::{router, serve, AppState, ServiceConfig};
pub use store::{JournalEvent, SessionStore, StoredSession};
