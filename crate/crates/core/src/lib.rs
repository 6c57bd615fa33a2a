//! Deterministic site-specific password generation.
//!
//! A stored 32-byte master secret and a typed user password are stretched
//! by an iterated hash, combined with per-site inputs, and encoded under
//! the site's password policy. An optional per-site offset maps the output
//! onto a chosen or rotated password. Configuration lives in an encrypted
//! local vault and can be synchronized through a signed cloud service.
//!
//! ```
//! use autopass::derivation::{derive_bits, normalize_site, stretch, InputBundle, SiteSource};
//! use autopass::policy::{encode, PasswordPolicy};
//!
//! let bundle = InputBundle {
//!     stretched_key: stretch(b"secret material", 1_000).unwrap(),
//!     site_key: normalize_site("https://www.example.com/login", SiteSource::Url).unwrap(),
//!     user_constant: None,
//!     user_name: None,
//!     object_digest: None,
//!     version_nonce: 0,
//! };
//! let password = encode(&derive_bits(&bundle), &PasswordPolicy::default(), 0).unwrap();
//! assert_eq!(password.len(), 12);
//! ```

pub mod b64;
pub mod cli;
pub mod derivation;
pub mod error;
mod fsutil;
pub mod policy;
pub mod sync;
pub mod vault;

pub use derivation::{MasterSecret, SiteKey, SiteSource, UserPassword};
pub use error::{Error, Result};
pub use policy::{CharClass, Password, PasswordOffset, PasswordPolicy};
pub use vault::{SiteConfig, Vault, VaultParams, VaultStore};
