//! Signed transport for everything the cloud service hands out.
//!
//! The signature covers a domain tag, the length-prefixed key id, the
//! big-endian timestamp, and the payload bytes, so a change to any of the
//! three signed fields invalidates it.

use std::path::Path;

use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use zeroize::Zeroizing;

use crate::b64;
use crate::error::{Error, Result};

const ENVELOPE_TAG: &[u8] = b"autopass.envelope.v1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedEnvelope {
    #[serde(with = "crate::b64")]
    pub payload: Vec<u8>,
    pub key_id: String,
    pub timestamp: u64,
    #[serde(with = "crate::b64")]
    pub signature: Vec<u8>,
}

pub fn signed_bytes(key_id: &str, timestamp: u64, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(ENVELOPE_TAG.len() + 12 + key_id.len() + payload.len());
    out.extend_from_slice(ENVELOPE_TAG);
    out.extend_from_slice(&(key_id.len() as u32).to_be_bytes());
    out.extend_from_slice(key_id.as_bytes());
    out.extend_from_slice(&timestamp.to_be_bytes());
    out.extend_from_slice(payload);
    out
}

/// First 8 bytes of SHA-256 over the raw public key, hex encoded.
pub fn key_id_for(key: &VerifyingKey) -> String {
    Sha256::digest(key.as_bytes())[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// The service's Ed25519 signing key.
pub struct EnvelopeSigner {
    key: SigningKey,
    key_id: String,
}

impl EnvelopeSigner {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self::from_key(SigningKey::generate(rng))
    }

    pub fn from_seed(seed: [u8; 32]) -> Self {
        Self::from_key(SigningKey::from_bytes(&seed))
    }

    fn from_key(key: SigningKey) -> Self {
        let key_id = key_id_for(&key.verifying_key());
        EnvelopeSigner { key, key_id }
    }

    /// Reads a base64-encoded 32-byte seed.
    pub fn load(path: &Path) -> Result<Self> {
        let text = Zeroizing::new(std::fs::read_to_string(path)?);
        let seed =
            Zeroizing::new(b64::decode(&text).map_err(|_| Error::Malformed("signing key is not base64".into()))?);
        let seed: [u8; 32] =
            seed.as_slice().try_into().map_err(|_| Error::Malformed("signing key must be 32 bytes".into()))?;
        Ok(Self::from_seed(seed))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let encoded = Zeroizing::new(b64::encode(self.key.as_bytes()));
        crate::fsutil::write_private(path, encoded.as_bytes())
    }

    pub fn key_id(&self) -> &str {
        &self.key_id
    }

    pub fn public_key(&self) -> PinnedKey {
        PinnedKey::new(self.key.verifying_key())
    }

    pub fn sign(&self, payload: Vec<u8>, timestamp: u64) -> SignedEnvelope {
        let signature = self.key.sign(&signed_bytes(&self.key_id, timestamp, &payload));
        SignedEnvelope { payload, key_id: self.key_id.clone(), timestamp, signature: signature.to_bytes().to_vec() }
    }

    pub fn sign_json<T: Serialize>(&self, value: &T, timestamp: u64) -> SignedEnvelope {
        self.sign(serde_json::to_vec(value).expect("record serializes"), timestamp)
    }
}

/// The client's built-in copy of the service public key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PinnedKey {
    key: VerifyingKey,
    key_id: String,
}

impl PinnedKey {
    pub fn new(key: VerifyingKey) -> Self {
        PinnedKey { key_id: key_id_for(&key), key }
    }

    pub fn from_base64(text: &str) -> Result<Self> {
        let bytes = b64::decode(text).map_err(|_| Error::InvalidParameter("server public key is not base64".into()))?;
        let bytes: [u8; 32] = bytes
            .as_slice()
            .try_into()
            .map_err(|_| Error::InvalidParameter("server public key must be 32 bytes".into()))?;
        VerifyingKey::from_bytes(&bytes)
            .map(PinnedKey::new)
            .map_err(|_| Error::InvalidParameter("server public key is not a valid point".into()))
    }

    pub fn to_base64(&self) -> String {
        b64::encode(self.key.as_bytes())
    }

    pub fn key_id(&self) -> &str {
        &self.key_id
    }

    pub fn verify(&self, envelope: &SignedEnvelope) -> Result<()> {
        if envelope.key_id != self.key_id {
            return Err(Error::SignatureInvalid);
        }
        let signature = Signature::from_slice(&envelope.signature).map_err(|_| Error::SignatureInvalid)?;
        self.key
            .verify_strict(&signed_bytes(&envelope.key_id, envelope.timestamp, &envelope.payload), &signature)
            .map_err(|_| Error::SignatureInvalid)
    }

    /// Verifies, then parses the payload as JSON.
    pub fn open<T: DeserializeOwned>(&self, envelope: &SignedEnvelope) -> Result<T> {
        self.verify(envelope)?;
        Ok(serde_json::from_slice(&envelope.payload)?)
    }
}
