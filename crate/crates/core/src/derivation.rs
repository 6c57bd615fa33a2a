//! Stage one of password generation: input normalization and the
//! two-level hash.
//!
//! The long-term secret is stretched by iterating SHA-256, then the
//! stretched key is hashed once more together with the per-site inputs.
//! Everything here is a pure function of its arguments.

use std::fmt;

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use zeroize::{Zeroize, ZeroizeOnDrop, Zeroizing};

use crate::error::{Error, Result};

pub const DIGEST_LEN: usize = 32;

/// Domain-separation tag that prefixes every canonical bundle.
pub const BUNDLE_TAG: &[u8] = b"autopass.v1";

pub const DEFAULT_INNER_ITERATIONS: u32 = 100_000;

/// Host labels kept by URL normalization unless configured otherwise.
pub const DEFAULT_SITE_LABELS: usize = 2;

/// Hash function recorded in vault metadata.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum HashId {
    #[default]
    #[serde(rename = "sha256")]
    Sha256,
}

impl HashId {
    pub fn digest(self, data: &[u8]) -> [u8; DIGEST_LEN] {
        match self {
            HashId::Sha256 => Sha256::digest(data).into(),
        }
    }
}

/// The stored 32-byte long-term secret. Wiped on drop.
#[derive(Clone, PartialEq, Eq, Zeroize, ZeroizeOnDrop)]
pub struct MasterSecret([u8; DIGEST_LEN]);

impl MasterSecret {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut bytes = [0u8; DIGEST_LEN];
        rng.fill_bytes(&mut bytes);
        MasterSecret(bytes)
    }

    pub fn from_bytes(bytes: [u8; DIGEST_LEN]) -> Self {
        MasterSecret(bytes)
    }

    pub fn try_from_slice(bytes: &[u8]) -> Result<Self> {
        let arr: [u8; DIGEST_LEN] =
            bytes.try_into().map_err(|_| Error::InvalidParameter("master secret must be 32 bytes".into()))?;
        Ok(MasterSecret(arr))
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }
}

impl fmt::Debug for MasterSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("MasterSecret(<redacted>)")
    }
}

/// The password (or PIN) the user types. Never empty; wiped on drop.
#[derive(Clone, Zeroize, ZeroizeOnDrop)]
pub struct UserPassword(String);

impl UserPassword {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.is_empty() {
            return Err(Error::InvalidParameter("user password must not be empty".into()));
        }
        Ok(UserPassword(text))
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.0.as_bytes()
    }
}

impl fmt::Debug for UserPassword {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("UserPassword(<redacted>)")
    }
}

/// Non-secret per-user string shared by every site.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserConstant(pub String);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteSource {
    Url,
    UserSiteName,
}

/// Normalized site identity.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SiteKey {
    pub value: String,
    pub source: SiteSource,
}

impl SiteKey {
    pub fn as_str(&self) -> &str {
        &self.value
    }
}

impl fmt::Display for SiteKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.value)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectDigest(pub [u8; DIGEST_LEN]);

impl fmt::Debug for ObjectDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ObjectDigest({:02x}{:02x}..)", self.0[0], self.0[1])
    }
}

/// Output of the inner iterated hash.
#[derive(Clone, PartialEq, Eq, Zeroize, ZeroizeOnDrop)]
pub struct StretchedKey(pub [u8; DIGEST_LEN]);

impl fmt::Debug for StretchedKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("StretchedKey(<redacted>)")
    }
}

/// Output of the outer hash; input to policy encoding.
#[derive(Clone, PartialEq, Eq, Zeroize, ZeroizeOnDrop)]
pub struct DerivedBits(pub [u8; DIGEST_LEN]);

impl fmt::Debug for DerivedBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("DerivedBits(<redacted>)")
    }
}

/// Inputs to the outer hash. `None` and `Some("")` serialize differently.
#[derive(Clone, Debug)]
pub struct InputBundle {
    pub stretched_key: StretchedKey,
    pub site_key: SiteKey,
    pub user_constant: Option<UserConstant>,
    pub user_name: Option<String>,
    pub object_digest: Option<ObjectDigest>,
    pub version_nonce: u64,
}

/// Normalizes a site identifier with the default label count.
pub fn normalize_site(raw: &str, mode: SiteSource) -> Result<SiteKey> {
    normalize_site_with(raw, mode, DEFAULT_SITE_LABELS)
}

/// URL mode: take the host, lowercase it, drop one leading `www.` and the
/// port, then keep the last `labels` dot-separated labels. IP literals are
/// kept whole. Name mode: trim and lowercase.
pub fn normalize_site_with(raw: &str, mode: SiteSource, labels: usize) -> Result<SiteKey> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(Error::InvalidSite("empty site".into()));
    }
    let value = match mode {
        SiteSource::UserSiteName => trimmed.to_lowercase(),
        SiteSource::Url => {
            if labels == 0 {
                return Err(Error::InvalidParameter("label count must be at least 1".into()));
            }
            url_host_key(trimmed, labels)?
        }
    };
    Ok(SiteKey { value, source: mode })
}

fn url_host_key(raw: &str, labels: usize) -> Result<String> {
    let with_scheme;
    let candidate = if raw.contains("://") {
        raw
    } else {
        with_scheme = format!("http://{raw}");
        &with_scheme
    };
    let parsed = url::Url::parse(candidate).map_err(|e| Error::InvalidSite(format!("{raw:?}: {e}")))?;
    let host = parsed.host().ok_or_else(|| Error::InvalidSite(format!("{raw:?}: no host")))?;
    match host {
        url::Host::Domain(domain) => {
            let domain = domain.trim_end_matches('.').to_ascii_lowercase();
            let domain = domain.strip_prefix("www.").unwrap_or(&domain);
            let parts: Vec<&str> = domain.split('.').filter(|p| !p.is_empty()).collect();
            if parts.is_empty() {
                return Err(Error::InvalidSite(format!("{raw:?}: empty host")));
            }
            let keep = parts.len().saturating_sub(labels);
            Ok(parts[keep..].join("."))
        }
        url::Host::Ipv4(ip) => Ok(ip.to_string()),
        url::Host::Ipv6(ip) => Ok(ip.to_string()),
    }
}

pub fn digest_object(content: &[u8]) -> ObjectDigest {
    ObjectDigest(HashId::Sha256.digest(content))
}

/// Applies SHA-256 `iterations` times to `secret`.
pub fn stretch(secret: &[u8], iterations: u32) -> Result<StretchedKey> {
    if iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be at least 1".into()));
    }
    let mut state: [u8; DIGEST_LEN] = Sha256::digest(secret).into();
    for _ in 1..iterations {
        state = Sha256::digest(state).into();
    }
    let key = StretchedKey(state);
    state.zeroize();
    Ok(key)
}

/// Stage-one input: the stored secret and the typed password, each
/// length-prefixed so the pair splits unambiguously.
pub fn stage_one_input(master: &MasterSecret, password: &UserPassword) -> Zeroizing<Vec<u8>> {
    let mut out = Zeroizing::new(Vec::with_capacity(8 + DIGEST_LEN + password.as_bytes().len()));
    push_len_prefixed(&mut out, master.as_bytes());
    push_len_prefixed(&mut out, password.as_bytes());
    out
}

fn push_len_prefixed(out: &mut Vec<u8>, bytes: &[u8]) {
    let len = u32::try_from(bytes.len()).expect("field longer than 4 GiB");
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(bytes);
}

fn push_field(out: &mut Vec<u8>, bytes: Option<&[u8]>) {
    match bytes {
        Some(b) => {
            out.push(1);
            push_len_prefixed(out, b);
        }
        None => {
            out.push(0);
            out.extend_from_slice(&0u32.to_be_bytes());
        }
    }
}

/// Tag, then `[presence][u32 BE length][bytes]` per field in fixed order:
/// stretched key, site key, user constant, user name, object digest,
/// version nonce (u64 BE).
pub fn canonical_serialize(bundle: &InputBundle) -> Zeroizing<Vec<u8>> {
    let mut out = Zeroizing::new(Vec::with_capacity(160));
    out.extend_from_slice(BUNDLE_TAG);
    push_field(&mut out, Some(&bundle.stretched_key.0));
    push_field(&mut out, Some(bundle.site_key.value.as_bytes()));
    push_field(&mut out, bundle.user_constant.as_ref().map(|c| c.0.as_bytes()));
    push_field(&mut out, bundle.user_name.as_deref().map(str::as_bytes));
    push_field(&mut out, bundle.object_digest.as_ref().map(|d| &d.0[..]));
    push_field(&mut out, Some(&bundle.version_nonce.to_be_bytes()));
    out
}

pub fn derive_bits(bundle: &InputBundle) -> DerivedBits {
    DerivedBits(HashId::Sha256.digest(&canonical_serialize(bundle)))
}
