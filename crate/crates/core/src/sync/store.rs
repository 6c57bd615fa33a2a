//! Server-side persistence behind a small storage interface.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::sync::records::{PolicyRecord, UserRecord};

pub trait Store: Send + Sync {
    fn policy(&self, domain: &str) -> Option<PolicyRecord>;
    fn put_policy(&self, record: PolicyRecord) -> Result<()>;
    fn login_hash(&self, user_id: &str) -> Option<[u8; 32]>;
    fn register_user(&self, user_id: &str, login_hash: [u8; 32]) -> Result<()>;
    /// Stored record, or an empty version-0 record for a registered user.
    fn user_record(&self, user_id: &str) -> Option<UserRecord>;
    /// Replaces the record iff the stored version equals `expected_version`;
    /// returns the new version.
    fn compare_and_set(&self, record: UserRecord, expected_version: u64) -> Result<u64>;
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct UserEntry {
    #[serde(with = "crate::b64")]
    login_hash: [u8; 32],
    record: Option<UserRecord>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct StoreData {
    policies: BTreeMap<String, PolicyRecord>,
    users: BTreeMap<String, UserEntry>,
}

/// Whole-file JSON store with the data indexed in memory. Every mutation
/// rewrites the file atomically. Without a path it is memory-only.
#[derive(Debug, Default)]
pub struct JsonFileStore {
    path: Option<PathBuf>,
    data: Mutex<StoreData>,
}

impl JsonFileStore {
    pub fn in_memory() -> Self {
        JsonFileStore::default()
    }

    /// Opens `path`, starting empty if the file does not exist yet.
    pub fn open(path: &Path) -> Result<Self> {
        let data = match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => StoreData::default(),
            Err(e) => return Err(e.into()),
        };
        Ok(JsonFileStore { path: Some(path.to_path_buf()), data: Mutex::new(data) })
    }

    fn mutate<T>(&self, f: impl FnOnce(&mut StoreData) -> Result<T>) -> Result<T> {
        let mut data = self.data.lock().expect("store mutex poisoned");
        let out = f(&mut data)?;
        if let Some(path) = &self.path {
            let text = serde_json::to_vec_pretty(&*data)?;
            fsutil::write_private(path, &text)?;
        }
        Ok(out)
    }
}

impl Store for JsonFileStore {
    fn policy(&self, domain: &str) -> Option<PolicyRecord> {
        self.data.lock().expect("store mutex poisoned").policies.get(domain).cloned()
    }

    fn put_policy(&self, record: PolicyRecord) -> Result<()> {
        record.policy.validate()?;
        self.mutate(|data| {
            data.policies.insert(record.domain.clone(), record);
            Ok(())
        })
    }

    fn login_hash(&self, user_id: &str) -> Option<[u8; 32]> {
        self.data.lock().expect("store mutex poisoned").users.get(user_id).map(|u| u.login_hash)
    }

    fn register_user(&self, user_id: &str, login_hash: [u8; 32]) -> Result<()> {
        self.mutate(|data| {
            data.users.entry(user_id.to_string()).or_default().login_hash = login_hash;
            Ok(())
        })
    }

    fn user_record(&self, user_id: &str) -> Option<UserRecord> {
        let data = self.data.lock().expect("store mutex poisoned");
        let entry = data.users.get(user_id)?;
        Some(entry.record.clone().unwrap_or_else(|| UserRecord::empty(user_id)))
    }

    fn compare_and_set(&self, mut record: UserRecord, expected_version: u64) -> Result<u64> {
        self.mutate(|data| {
            let entry = data
                .users
                .get_mut(&record.user_id)
                .ok_or_else(|| Error::NotFound(format!("user {:?}", record.user_id)))?;
            let current = entry.record.as_ref().map_or(0, |r| r.record_version);
            if current != expected_version {
                return Err(Error::VersionConflict { current });
            }
            record.record_version = current + 1;
            entry.record = Some(record);
            Ok(current + 1)
        })
    }
}
