//! On-disk location of the vault and the single-writer lock.

use std::fs::{File, OpenOptions, TryLockError};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::vault::Vault;

pub const VAULT_FILE: &str = "vault.json";
pub const LOCK_FILE: &str = "vault.lock";
const LOCK_TIMEOUT: Duration = Duration::from_secs(10);

/// Resolves `$AUTOPASS_HOME`, falling back to `$HOME/.autopass`.
pub fn default_home() -> PathBuf {
    if let Some(home) = std::env::var_os("AUTOPASS_HOME") {
        return PathBuf::from(home);
    }
    let base = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    base.join(".autopass")
}

#[derive(Clone, Debug)]
pub struct VaultStore {
    dir: PathBuf,
}

/// Exclusive advisory lock on `vault.lock`; released on drop.
#[derive(Debug)]
pub struct VaultLock {
    _file: File,
}

impl VaultStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        VaultStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn vault_path(&self) -> PathBuf {
        self.dir.join(VAULT_FILE)
    }

    pub fn exists(&self) -> bool {
        self.vault_path().exists()
    }

    pub fn lock(&self) -> Result<VaultLock> {
        std::fs::create_dir_all(&self.dir)?;
        let file = OpenOptions::new().create(true).truncate(false).write(true).open(self.dir.join(LOCK_FILE))?;
        let started = Instant::now();
        loop {
            match file.try_lock() {
                Ok(()) => return Ok(VaultLock { _file: file }),
                Err(TryLockError::WouldBlock) if started.elapsed() < LOCK_TIMEOUT => {
                    std::thread::sleep(Duration::from_millis(20));
                }
                Err(TryLockError::WouldBlock) => return Err(Error::Locked),
                Err(TryLockError::Error(e)) => return Err(e.into()),
            }
        }
    }

    pub fn load(&self) -> Result<Vault> {
        let path = self.vault_path();
        let text = match std::fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::VaultMissing(path)),
            Err(e) => return Err(e.into()),
        };
        Vault::from_json(&text)
    }

    /// Atomically replaces the vault file. Requires the writer lock.
    pub fn save(&self, vault: &Vault, _lock: &VaultLock) -> Result<()> {
        fsutil::write_private(&self.vault_path(), vault.to_json().as_bytes())
    }

    /// Writes a new vault, refusing to replace an existing one unless `force`.
    pub fn create(&self, vault: &Vault, force: bool, lock: &VaultLock) -> Result<()> {
        if self.exists() && !force {
            return Err(Error::VaultExists(self.vault_path()));
        }
        self.save(vault, lock)
    }
}
