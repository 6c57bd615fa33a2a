//! Password-based encryption of the master secret.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use zeroize::Zeroizing;

use crate::error::{Error, Result};

pub const SALT_LEN: usize = 16;
pub const NONCE_LEN: usize = 12;
pub const DEFAULT_KDF_ITERATIONS: u32 = 100_000;

const ASSOCIATED_DATA: &[u8] = b"autopass-vault/1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum KdfId {
    #[default]
    #[serde(rename = "pbkdf2-hmac-sha256")]
    Pbkdf2HmacSha256,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum AeadId {
    #[default]
    #[serde(rename = "chacha20poly1305")]
    ChaCha20Poly1305,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KdfParams {
    pub algorithm: KdfId,
    #[serde(with = "crate::b64")]
    pub salt: [u8; SALT_LEN],
    pub iterations: u32,
}

impl KdfParams {
    pub fn generate<R: RngCore + CryptoRng>(iterations: u32, rng: &mut R) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::InvalidParameter("kdf iterations must be at least 1".into()));
        }
        let mut salt = [0u8; SALT_LEN];
        rng.fill_bytes(&mut salt);
        Ok(KdfParams { algorithm: KdfId::Pbkdf2HmacSha256, salt, iterations })
    }

    pub fn derive_key(&self, password: &[u8]) -> Zeroizing<[u8; 32]> {
        let mut key = Zeroizing::new([0u8; 32]);
        match self.algorithm {
            KdfId::Pbkdf2HmacSha256 => {
                pbkdf2::pbkdf2_hmac::<Sha256>(password, &self.salt, self.iterations, key.as_mut())
            }
        }
        key
    }
}

/// AEAD ciphertext plus the nonce it was sealed under.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedSecret {
    pub aead: AeadId,
    #[serde(with = "crate::b64")]
    pub nonce: [u8; NONCE_LEN],
    #[serde(with = "crate::b64")]
    pub ciphertext: Vec<u8>,
}

impl SealedSecret {
    pub fn seal<R: RngCore + CryptoRng>(key: &[u8; 32], plaintext: &[u8], rng: &mut R) -> Self {
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let cipher = ChaCha20Poly1305::new(Key::from_slice(key));
        let ciphertext = cipher
            .encrypt(Nonce::from_slice(&nonce), Payload { msg: plaintext, aad: ASSOCIATED_DATA })
            .expect("in-memory encryption cannot fail");
        SealedSecret { aead: AeadId::ChaCha20Poly1305, nonce, ciphertext }
    }

    /// Wrong key and tampered ciphertext both yield `AuthenticationFailed`.
    pub fn open(&self, key: &[u8; 32]) -> Result<Zeroizing<Vec<u8>>> {
        let cipher = ChaCha20Poly1305::new(Key::from_slice(key));
        cipher
            .decrypt(Nonce::from_slice(&self.nonce), Payload { msg: &self.ciphertext, aad: ASSOCIATED_DATA })
            .map(Zeroizing::new)
            .map_err(|_| Error::AuthenticationFailed)
    }
}
