//! A self-contained observability stack for hybrid quantum-classical
//! workflows: a persistent telemetry server, a client instrumentation
//! library with disk spooling, an ETL/metric pipeline with a report
//! generator, and a desk-scale closed-loop SQD + differential-evolution
//! workload that exercises the whole stack end to end.

pub mod client;
pub mod config;
pub mod etl;
pub mod oracle;
pub mod sched;
pub mod server;
pub mod sqd;
pub mod telemetry;

pub mod verify;
