//! Encrypted local store of global and per-site configuration, and the
//! end-to-end password generation pipeline built on top of it.

pub mod crypto;
pub mod store;

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{CryptoRng, Rng, RngCore};
use serde::{Deserialize, Serialize};
use zeroize::Zeroizing;

use crate::derivation::{
    self, digest_object, normalize_site_with, HashId, InputBundle, MasterSecret, SiteKey, SiteSource, UserConstant,
    UserPassword, DEFAULT_INNER_ITERATIONS, DEFAULT_SITE_LABELS,
};
use crate::error::{Error, Result};
use crate::policy::{self, effective_charset, Password, PasswordOffset, PasswordPolicy};
use crate::sync::envelope::SignedEnvelope;

pub use crypto::{KdfParams, SealedSecret, DEFAULT_KDF_ITERATIONS};
pub use store::{VaultLock, VaultStore};

pub const VAULT_MAGIC: &str = "autopass-vault";
pub const FORMAT_VERSION: u32 = 1;

/// Parameters chosen at vault creation.
#[derive(Clone, Debug)]
pub struct VaultParams {
    pub kdf_iterations: u32,
    pub inner_iterations: u32,
    pub user_constant: String,
    pub site_labels: usize,
}

impl Default for VaultParams {
    fn default() -> Self {
        VaultParams {
            kdf_iterations: DEFAULT_KDF_ITERATIONS,
            inner_iterations: DEFAULT_INNER_ITERATIONS,
            user_constant: String::new(),
            site_labels: DEFAULT_SITE_LABELS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalConfig {
    pub encrypted_master: SealedSecret,
    pub kdf_params: KdfParams,
    pub user_constant: UserConstant,
    pub hash_id: HashId,
    pub inner_iterations: u32,
    #[serde(default = "default_site_labels")]
    pub site_labels: usize,
}

fn default_site_labels() -> usize {
    DEFAULT_SITE_LABELS
}

/// Which inputs feed the outer hash for one site.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputParams {
    pub use_user_constant: bool,
    pub use_user_name: bool,
    pub use_object: bool,
    pub user_name: Option<String>,
    #[serde(default)]
    pub version_nonce: u64,
}

impl Default for InputParams {
    fn default() -> Self {
        InputParams {
            use_user_constant: true,
            use_user_name: false,
            use_object: false,
            user_name: None,
            version_nonce: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteConfig {
    pub site_key: SiteKey,
    pub policy: PasswordPolicy,
    pub offset: Option<PasswordOffset>,
    pub input_params: InputParams,
    pub reminder: Option<String>,
    pub version: u64,
    pub updated_at: i64,
}

impl SiteConfig {
    pub fn new(site_key: SiteKey, policy: PasswordPolicy) -> Self {
        SiteConfig {
            site_key,
            policy,
            offset: None,
            input_params: InputParams::default(),
            reminder: None,
            version: 0,
            updated_at: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let violation = |msg: &str| Err(Error::InvariantViolation(msg.into()));
        self.policy.validate()?;
        if let Some(offset) = &self.offset {
            if offset.len() != self.policy.output_len() {
                return violation("offset length does not match policy length");
            }
            if offset.modulus() as usize != effective_charset(&self.policy)?.len() {
                return violation("offset modulus does not match charset size");
            }
        }
        if self.input_params.use_user_name && self.input_params.user_name.is_none() {
            return violation("use_user_name is set but no user name is stored");
        }
        if self.site_key.value.trim().is_empty() {
            return violation("empty site key");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncState {
    /// Server record version this vault last agreed with.
    pub record_version: u64,
}

/// In-memory vault. Serializes to the on-disk JSON document.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vault {
    pub global: GlobalConfig,
    sites: BTreeMap<String, SiteConfig>,
    pub policy_cache: BTreeMap<String, SignedEnvelope>,
    pub sync_state: SyncState,
}

#[derive(Serialize, Deserialize)]
struct VaultFile {
    magic: String,
    format_version: u32,
    global: GlobalConfig,
    #[serde(default)]
    sites: BTreeMap<String, SiteConfig>,
    #[serde(default)]
    policy_cache: BTreeMap<String, SignedEnvelope>,
    #[serde(default)]
    sync: SyncState,
}

pub fn now_unix() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs() as i64).unwrap_or(0)
}

impl Vault {
    /// Creates a vault around a freshly generated master secret.
    pub fn init<R: RngCore + CryptoRng>(
        user_password: &UserPassword,
        params: &VaultParams,
        rng: &mut R,
    ) -> Result<Vault> {
        let master = MasterSecret::generate(rng);
        Vault::init_with_secret(&master, user_password, params, rng)
    }

    /// Creates a vault around an existing master secret (restore, tests).
    pub fn init_with_secret<R: RngCore + CryptoRng>(
        master: &MasterSecret,
        user_password: &UserPassword,
        params: &VaultParams,
        rng: &mut R,
    ) -> Result<Vault> {
        if params.inner_iterations == 0 {
            return Err(Error::InvalidParameter("inner iterations must be at least 1".into()));
        }
        if params.site_labels == 0 {
            return Err(Error::InvalidParameter("site label count must be at least 1".into()));
        }
        let kdf_params = KdfParams::generate(params.kdf_iterations, rng)?;
        let key = kdf_params.derive_key(user_password.as_bytes());
        let encrypted_master = SealedSecret::seal(&key, master.as_bytes(), rng);
        Ok(Vault {
            global: GlobalConfig {
                encrypted_master,
                kdf_params,
                user_constant: UserConstant(params.user_constant.clone()),
                hash_id: HashId::Sha256,
                inner_iterations: params.inner_iterations,
                site_labels: params.site_labels,
            },
            sites: BTreeMap::new(),
            policy_cache: BTreeMap::new(),
            sync_state: SyncState::default(),
        })
    }

    pub fn unlock(&self, user_password: &UserPassword) -> Result<MasterSecret> {
        let key = self.global.kdf_params.derive_key(user_password.as_bytes());
        let plain = self.global.encrypted_master.open(&key)?;
        MasterSecret::try_from_slice(&plain).map_err(|_| Error::AuthenticationFailed)
    }

    /// Inserts or replaces a site; the stored version becomes the previous
    /// version plus one (1 for a new site).
    pub fn upsert_site(&mut self, mut config: SiteConfig) -> Result<&SiteConfig> {
        config.validate()?;
        let key = config.site_key.value.clone();
        config.version = self.sites.get(&key).map_or(1, |old| old.version + 1);
        config.updated_at = now_unix();
        self.sites.insert(key.clone(), config);
        Ok(&self.sites[&key])
    }

    pub fn get_site(&self, site_key: &str) -> Result<&SiteConfig> {
        self.sites.get(site_key).ok_or_else(|| Error::NotFound(format!("site {site_key:?}")))
    }

    pub fn list_sites(&self) -> Vec<&SiteConfig> {
        self.sites.values().collect()
    }

    pub fn sites(&self) -> &BTreeMap<String, SiteConfig> {
        &self.sites
    }

    /// Replaces a site entry verbatim, keeping its version. Used by sync
    /// merges, which adopt the other side's version number.
    pub(crate) fn adopt_site(&mut self, config: SiteConfig) {
        self.sites.insert(config.site_key.value.clone(), config);
    }

    pub fn normalize(&self, raw: &str, mode: SiteSource) -> Result<SiteKey> {
        normalize_site_with(raw, mode, self.global.site_labels)
    }

    /// Maps raw user input to a site key: a registered user site name wins,
    /// otherwise the input is normalized as a URL.
    pub fn resolve_site(&self, raw: &str) -> Result<SiteKey> {
        if let Ok(name) = self.normalize(raw, SiteSource::UserSiteName) {
            if let Some(site) = self.sites.get(&name.value) {
                if site.site_key.source == SiteSource::UserSiteName {
                    return Ok(site.site_key.clone());
                }
            }
        }
        self.normalize(raw, SiteSource::Url)
    }

    pub fn generate_password(
        &self,
        user_password: &UserPassword,
        site: &str,
        object: Option<&[u8]>,
    ) -> Result<Password> {
        let master = self.unlock(user_password)?;
        self.generate_unlocked(&master, user_password, site, object)
    }

    /// Generation with an already unlocked master secret (daemon sessions).
    pub fn generate_unlocked(
        &self,
        master: &MasterSecret,
        user_password: &UserPassword,
        site: &str,
        object: Option<&[u8]>,
    ) -> Result<Password> {
        let config = self.get_site(self.resolve_site(site)?.as_str())?;
        derive_password(master, user_password, &self.global, config, object)
    }

    /// Stores the offset that makes `site` generate `desired`.
    pub fn pin_password(
        &mut self,
        user_password: &UserPassword,
        site: &str,
        desired: &Password,
        object: Option<&[u8]>,
    ) -> Result<()> {
        let master = self.unlock(user_password)?;
        self.pin_unlocked(&master, user_password, site, desired, object)
    }

    pub fn pin_unlocked(
        &mut self,
        master: &MasterSecret,
        user_password: &UserPassword,
        site: &str,
        desired: &Password,
        object: Option<&[u8]>,
    ) -> Result<()> {
        let key = self.resolve_site(site)?;
        let config = self.get_site(key.as_str())?;
        let base = base_password(master, user_password, &self.global, config, object)?;
        let charset = effective_charset(&config.policy)?;
        let offset = policy::compute_offset(&base, desired, &charset)?;
        self.set_offset(key.as_str(), offset)
    }

    /// Replaces the offset with a fresh random one.
    pub fn rotate_password<R: Rng + ?Sized>(
        &mut self,
        user_password: &UserPassword,
        site: &str,
        object: Option<&[u8]>,
        rng: &mut R,
    ) -> Result<()> {
        let master = self.unlock(user_password)?;
        self.rotate_unlocked(&master, user_password, site, object, rng)
    }

    pub fn rotate_unlocked<R: Rng + ?Sized>(
        &mut self,
        master: &MasterSecret,
        user_password: &UserPassword,
        site: &str,
        object: Option<&[u8]>,
        rng: &mut R,
    ) -> Result<()> {
        let key = self.resolve_site(site)?;
        let config = self.get_site(key.as_str())?;
        let base = base_password(master, user_password, &self.global, config, object)?;
        let offset = policy::random_offset(&base, &config.policy, rng)?;
        self.set_offset(key.as_str(), offset)
    }

    // Offset changes touch only the offset and version fields.
    fn set_offset(&mut self, site_key: &str, offset: PasswordOffset) -> Result<()> {
        let config = self.sites.get_mut(site_key).ok_or_else(|| Error::NotFound(format!("site {site_key:?}")))?;
        config.offset = Some(offset);
        config.version += 1;
        Ok(())
    }

    pub fn set_reminder(&mut self, site: &str, reminder: Option<String>) -> Result<&SiteConfig> {
        let key = self.resolve_site(site)?;
        let mut config = self.get_site(key.as_str())?.clone();
        config.reminder = reminder;
        self.upsert_site(config)
    }

    pub fn to_json(&self) -> String {
        let file = VaultFile {
            magic: VAULT_MAGIC.into(),
            format_version: FORMAT_VERSION,
            global: self.global.clone(),
            sites: self.sites.clone(),
            policy_cache: self.policy_cache.clone(),
            sync: self.sync_state.clone(),
        };
        serde_json::to_string_pretty(&file).expect("vault serializes")
    }

    pub fn from_json(text: &str) -> Result<Vault> {
        let file: VaultFile = serde_json::from_str(text)?;
        if file.magic != VAULT_MAGIC {
            return Err(Error::Malformed("not an autopass vault".into()));
        }
        if file.format_version != FORMAT_VERSION {
            return Err(Error::Malformed(format!("unsupported vault format version {}", file.format_version)));
        }
        for (key, site) in &file.sites {
            if key != &site.site_key.value {
                return Err(Error::Malformed(format!("site entry {key:?} has a mismatched key")));
            }
            site.validate()?;
        }
        Ok(Vault { global: file.global, sites: file.sites, policy_cache: file.policy_cache, sync_state: file.sync })
    }
}

/// Stage one and encoding, without the offset.
pub fn base_password(
    master: &MasterSecret,
    user_password: &UserPassword,
    global: &GlobalConfig,
    config: &SiteConfig,
    object: Option<&[u8]>,
) -> Result<Password> {
    let params = &config.input_params;
    let object_digest = match (params.use_object, object) {
        (true, Some(content)) => Some(digest_object(content)),
        (true, None) => return Err(Error::MissingObject),
        (false, Some(_)) => {
            return Err(Error::InvalidParameter("a digital object was supplied but this site does not use one".into()))
        }
        (false, None) => None,
    };
    let user_name = if params.use_user_name {
        Some(
            params
                .user_name
                .clone()
                .ok_or_else(|| Error::InvariantViolation("use_user_name is set but no user name is stored".into()))?,
        )
    } else {
        None
    };
    let stage_one: Zeroizing<Vec<u8>> = derivation::stage_one_input(master, user_password);
    let bundle = InputBundle {
        stretched_key: derivation::stretch(&stage_one, global.inner_iterations)?,
        site_key: config.site_key.clone(),
        user_constant: params.use_user_constant.then(|| global.user_constant.clone()),
        user_name,
        object_digest,
        version_nonce: params.version_nonce,
    };
    policy::encode(&derivation::derive_bits(&bundle), &config.policy, 0)
}

/// The full pipeline: base password, then the stored offset if any.
pub fn derive_password(
    master: &MasterSecret,
    user_password: &UserPassword,
    global: &GlobalConfig,
    config: &SiteConfig,
    object: Option<&[u8]>,
) -> Result<Password> {
    let base = base_password(master, user_password, global, config, object)?;
    match &config.offset {
        Some(offset) => policy::apply_offset(&base, offset, &effective_charset(&config.policy)?),
        None => Ok(base),
    }
}
