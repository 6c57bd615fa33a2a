//! Blocking client for the cloud service. Verifies every envelope against
//! the pinned key and falls back to the vault's policy cache when the
//! service cannot be reached.

use std::time::Duration;

use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;

use crate::error::{Error, Result};
use crate::policy::PasswordPolicy;
use crate::sync::envelope::{PinnedKey, SignedEnvelope};
use crate::sync::records::{
    AccessToken, ErrorBody, LoginRequest, PolicyRecord, PutSitesRequest, PutSitesResponse, UserRecord,
};
use crate::vault::Vault;

const TIMEOUT: Duration = Duration::from_secs(5);

pub struct SyncClient {
    base_url: String,
    pinned: PinnedKey,
    http: Client,
}

fn unavailable(e: reqwest::Error) -> Error {
    Error::Unavailable(e.without_url().to_string())
}

fn error_body(response: Response) -> ErrorBody {
    let status = response.status();
    response.json::<ErrorBody>().unwrap_or(ErrorBody {
        code: status.as_str().to_string(),
        message: status.canonical_reason().unwrap_or("error").to_string(),
        current_version: None,
    })
}

fn status_error(response: Response) -> Error {
    let status = response.status();
    let body = error_body(response);
    match status {
        StatusCode::UNAUTHORIZED => Error::Unauthorized,
        StatusCode::FORBIDDEN => Error::Forbidden,
        StatusCode::NOT_FOUND => Error::NotFound(body.message),
        StatusCode::CONFLICT => Error::VersionConflict { current: body.current_version.unwrap_or(0) },
        s if s.is_server_error() => Error::Unavailable(format!("server error {s}")),
        s => Error::Protocol(format!("{s}: {}", body.message)),
    }
}

impl SyncClient {
    pub fn new(base_url: &str, pinned: PinnedKey) -> Result<Self> {
        let http = Client::builder()
            .timeout(TIMEOUT)
            .connect_timeout(TIMEOUT)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("http client: {e}")))?;
        Ok(SyncClient { base_url: base_url.trim_end_matches('/').to_string(), pinned, http })
    }

    pub fn pinned_key(&self) -> &PinnedKey {
        &self.pinned
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url, path)
    }

    fn get_policy_envelope(&self, domain: &str) -> Result<SignedEnvelope> {
        let response = self.http.get(self.url(&format!("/v1/policies/{domain}"))).send().map_err(unavailable)?;
        if !response.status().is_success() {
            return Err(status_error(response));
        }
        response.json().map_err(|e| Error::Protocol(e.to_string()))
    }

    fn open_policy(&self, domain: &str, envelope: &SignedEnvelope) -> Result<PasswordPolicy> {
        let record: PolicyRecord = self.pinned.open(envelope)?;
        if record.domain != domain {
            return Err(Error::SignatureInvalid);
        }
        record.policy.validate()?;
        Ok(record.policy)
    }

    /// Network first. A verified record refreshes the cache; a bad
    /// signature is reported and never masked by the cache; an unreachable
    /// service falls back to the cached envelope.
    pub fn fetch_policy(&self, vault: &mut Vault, domain: &str) -> Result<PasswordPolicy> {
        match self.get_policy_envelope(domain) {
            Ok(envelope) => {
                let policy = self.open_policy(domain, &envelope)?;
                vault.policy_cache.insert(domain.to_string(), envelope);
                Ok(policy)
            }
            Err(Error::Unavailable(reason)) => match vault.policy_cache.get(domain) {
                Some(cached) => {
                    log::warn!("policy service unavailable ({reason}); using cached policy for {domain}");
                    self.open_policy(domain, cached)
                }
                None => Err(Error::Unavailable(reason)),
            },
            Err(e) => Err(e),
        }
    }

    pub fn login(&self, user_id: &str, login_secret: &str) -> Result<AccessToken> {
        let response = self
            .http
            .post(self.url("/v1/login"))
            .json(&LoginRequest { user_id: user_id.into(), login_secret: login_secret.into() })
            .send()
            .map_err(unavailable)?;
        if !response.status().is_success() {
            return Err(status_error(response));
        }
        response.json().map_err(|e| Error::Protocol(e.to_string()))
    }

    pub fn get_user_record(&self, token: &AccessToken) -> Result<UserRecord> {
        let response = self
            .http
            .get(self.url(&format!("/v1/user/{}/sites", token.user_id)))
            .bearer_auth(&token.token)
            .send()
            .map_err(unavailable)?;
        if !response.status().is_success() {
            return Err(status_error(response));
        }
        let envelope: SignedEnvelope = response.json().map_err(|e| Error::Protocol(e.to_string()))?;
        let record: UserRecord = self.pinned.open(&envelope)?;
        if record.user_id != token.user_id {
            return Err(Error::SignatureInvalid);
        }
        Ok(record)
    }

    pub fn put_user_record(&self, token: &AccessToken, record: &UserRecord, expected_version: u64) -> Result<u64> {
        let response = self
            .http
            .put(self.url(&format!("/v1/user/{}/sites", token.user_id)))
            .bearer_auth(&token.token)
            .json(&PutSitesRequest { record: record.clone(), expected_version })
            .send()
            .map_err(unavailable)?;
        if !response.status().is_success() {
            return Err(status_error(response));
        }
        let body: PutSitesResponse = response.json().map_err(|e| Error::Protocol(e.to_string()))?;
        Ok(body.new_version)
    }

    /// Merges the server's sites into the vault.
    pub fn sync_pull(&self, vault: &mut Vault, token: &AccessToken) -> Result<()> {
        let record = self.get_user_record(token)?;
        merge_into(vault, &record)
    }

    /// Uploads the vault's sites with compare-and-set; on conflict pulls,
    /// merges and retries once. Returns the new server version.
    pub fn sync_push(&self, vault: &mut Vault, token: &AccessToken) -> Result<u64> {
        for attempt in 0..2 {
            let record = user_record_from(vault, &token.user_id);
            match self.put_user_record(token, &record, vault.sync_state.record_version) {
                Ok(version) => {
                    vault.sync_state.record_version = version;
                    return Ok(version);
                }
                Err(Error::VersionConflict { .. }) if attempt == 0 => {
                    self.sync_pull(vault, token)?;
                }
                Err(Error::VersionConflict { .. }) => return Err(Error::MergeConflictUnresolved),
                Err(e) => return Err(e),
            }
        }
        Err(Error::MergeConflictUnresolved)
    }
}

pub fn user_record_from(vault: &Vault, user_id: &str) -> UserRecord {
    UserRecord {
        user_id: user_id.to_string(),
        sites: vault.sites().clone(),
        record_version: vault.sync_state.record_version,
    }
}

/// Per site, the higher version wins; on a tie the server copy wins.
/// Sites only present locally are kept.
pub fn merge_into(vault: &mut Vault, record: &UserRecord) -> Result<()> {
    for (key, remote) in &record.sites {
        if key != &remote.site_key.value {
            return Err(Error::Malformed(format!("server site entry {key:?} has a mismatched key")));
        }
        remote.validate()?;
    }
    for remote in record.sites.values() {
        let take = match vault.sites().get(&remote.site_key.value) {
            Some(local) => remote.version >= local.version,
            None => true,
        };
        if take {
            vault.adopt_site(remote.clone());
        }
    }
    vault.sync_state.record_version = record.record_version;
    Ok(())
}
