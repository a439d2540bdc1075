//! Persistent observability service: record ingestion, content-addressed
//! blob storage, durable run state and the query/ETL HTTP API.

mod http;
mod store;

pub use http::{ObsServer, ServerConfig};
pub use store::{
    IngestError, IngestReport, RecordFilter, RunManifest, RunStatus, Store, StoreError,
};
