//! Wire records exchanged with the cloud service.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::policy::PasswordPolicy;
use crate::vault::SiteConfig;

/// User-independent: one site's password policy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub domain: String,
    pub policy: PasswordPolicy,
    pub record_version: u64,
}

/// User-specific: the non-secret site configuration of one user.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub sites: BTreeMap<String, SiteConfig>,
    pub record_version: u64,
}

impl UserRecord {
    pub fn empty(user_id: &str) -> Self {
        UserRecord { user_id: user_id.to_string(), sites: BTreeMap::new(), record_version: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessToken {
    pub token: String,
    pub user_id: String,
    pub expires_at: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoginRequest {
    pub user_id: String,
    pub login_secret: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PutSitesRequest {
    pub record: UserRecord,
    pub expected_version: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PutSitesResponse {
    pub new_version: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_version: Option<u64>,
}
