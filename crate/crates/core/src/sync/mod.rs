//! Cloud configuration service: signed, cacheable policy records and
//! per-user site configuration with compare-and-set updates.

pub mod client;
pub mod envelope;
pub mod records;
pub mod server;
pub mod store;

pub use client::SyncClient;
pub use envelope::{EnvelopeSigner, PinnedKey, SignedEnvelope};
pub use records::{AccessToken, PolicyRecord, UserRecord};
