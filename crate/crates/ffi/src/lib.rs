//! C ABI over the `autopass` crate.
//!
//! Every function returns an [`AutopassStatus`]. On failure a message is
//! available from [`autopass_last_error`] on the same thread. Strings
//! returned through `out` parameters are owned by the caller and must be
//! released with [`autopass_string_free`], which also wipes them.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use autopass::derivation::{self, DerivedBits, SiteSource, UserPassword};
use autopass::{policy, Error, PasswordPolicy, Vault, VaultStore};
use zeroize::Zeroize;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AutopassStatus {
    Ok = 0,
    InvalidArgument = 1,
    InvalidSite = 2,
    UnsatisfiablePolicy = 3,
    PolicyViolation = 4,
    AuthenticationFailed = 5,
    NotFound = 6,
    MissingObject = 7,
    VaultMissing = 8,
    Locked = 9,
    Malformed = 10,
    Io = 11,
    Internal = 12,
    Panic = 13,
}

impl From<&Error> for AutopassStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidParameter(_) => AutopassStatus::InvalidArgument,
            Error::InvalidSite(_) => AutopassStatus::InvalidSite,
            Error::UnsatisfiablePolicy(_) => AutopassStatus::UnsatisfiablePolicy,
            Error::RetriesExhausted(_)
            | Error::LengthMismatch { .. }
            | Error::ModulusMismatch { .. }
            | Error::CharOutOfCharset(_)
            | Error::InvariantViolation(_) => AutopassStatus::PolicyViolation,
            Error::AuthenticationFailed => AutopassStatus::AuthenticationFailed,
            Error::NotFound(_) => AutopassStatus::NotFound,
            Error::MissingObject => AutopassStatus::MissingObject,
            Error::VaultMissing(_) => AutopassStatus::VaultMissing,
            Error::Locked => AutopassStatus::Locked,
            Error::Malformed(_) => AutopassStatus::Malformed,
            Error::Io(_) => AutopassStatus::Io,
            _ => AutopassStatus::Internal,
        }
    }
}

/// Opaque vault handle.
pub struct AutopassVault {
    vault: Vault,
}

/// Opaque password policy handle.
pub struct AutopassPolicy {
    policy: PasswordPolicy,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

struct Failure(AutopassStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(AutopassStatus::from(&e), e.to_string())
    }
}

fn invalid(message: &str) -> Failure {
    Failure(AutopassStatus::InvalidArgument, message.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AutopassStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            AutopassStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            AutopassStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(&format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(&format!("{name} is not UTF-8")))
}

unsafe fn bytes_arg<'a>(p: *const u8, len: usize, name: &str) -> Result<&'a [u8], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(invalid(&format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put_string(out: *mut *mut c_char, value: String) -> Result<(), Failure> {
    let c = CString::new(value).map_err(|_| invalid("string contains NUL"))?;
    *out = c.into_raw();
    Ok(())
}

fn check_out<T>(out: *mut T) -> Result<(), Failure> {
    if out.is_null() {
        Err(invalid("out is null"))
    } else {
        Ok(())
    }
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next call on the same thread.
#[no_mangle]
pub extern "C" fn autopass_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn autopass_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Wipes and frees a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn autopass_string_free(s: *mut c_char) {
    if !s.is_null() {
        let mut bytes = CString::from_raw(s).into_bytes();
        bytes.zeroize();
    }
}

/// Normalizes a URL (or a user-chosen name when `user_site_name` is true)
/// into a site key.
///
/// # Safety
/// `raw` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn autopass_normalize_site(
    raw: *const c_char,
    user_site_name: bool,
    out: *mut *mut c_char,
) -> AutopassStatus {
    guard(|| {
        check_out(out)?;
        let raw = str_arg(raw, "raw")?;
        let mode = if user_site_name { SiteSource::UserSiteName } else { SiteSource::Url };
        let key = derivation::normalize_site(raw, mode)?;
        put_string(out, key.value)
    })
}

/// Iterated SHA-256 of `data`; writes 32 bytes to `out`.
///
/// # Safety
/// `data` must point to `len` readable bytes; `out` to 32 writable bytes.
#[no_mangle]
pub unsafe extern "C" fn autopass_stretch(
    data: *const u8,
    len: usize,
    iterations: u32,
    out: *mut u8,
) -> AutopassStatus {
    guard(|| {
        check_out(out)?;
        let data = bytes_arg(data, len, "data")?;
        let key = derivation::stretch(data, iterations)?;
        ptr::copy_nonoverlapping(key.0.as_ptr(), out, key.0.len());
        Ok(())
    })
}

/// The default policy.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn autopass_policy_default(out: *mut *mut AutopassPolicy) -> AutopassStatus {
    guard(|| {
        check_out(out)?;
        *out = Box::into_raw(Box::new(AutopassPolicy { policy: PasswordPolicy::default() }));
        Ok(())
    })
}

/// Parses and validates a policy document.
///
/// # Safety
/// `json` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn autopass_policy_from_json(
    json: *const c_char,
    out: *mut *mut AutopassPolicy,
) -> AutopassStatus {
    guard(|| {
        check_out(out)?;
        let policy = PasswordPolicy::from_json(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(AutopassPolicy { policy }));
        Ok(())
    })
}

/// # Safety
/// `policy` must be a valid handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn autopass_policy_to_json(
    policy: *const AutopassPolicy,
    out: *mut *mut c_char,
) -> AutopassStatus {
    guard(|| {
        check_out(out)?;
        let policy = policy.as_ref().ok_or_else(|| invalid("policy is null"))?;
        put_string(out, policy.policy.to_json())
    })
}

/// # Safety
/// `policy` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn autopass_policy_free(policy: *mut AutopassPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Encodes 32 derived bytes into a password that satisfies `policy`.
///
/// # Safety
/// `bits` must point to 32 readable bytes; `policy` must be a valid handle;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn autopass_encode(
    bits: *const u8,
    policy: *const AutopassPolicy,
    out: *mut *mut c_char,
) -> AutopassStatus {
    guard(|| {
        check_out(out)?;
        let bits = bytes_arg(bits, 32, "bits")?;
        let policy = policy.as_ref().ok_or_else(|| invalid("policy is null"))?;
        let mut raw = [0u8; 32];
        raw.copy_from_slice(bits);
        let password = policy::encode(&DerivedBits(raw), &policy.policy, 0)?;
        raw.zeroize();
        put_string(out, password.as_str().to_string())
    })
}

/// Loads the vault stored in directory `home`.
///
/// # Safety
/// `home` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn autopass_vault_open(home: *const c_char, out: *mut *mut AutopassVault) -> AutopassStatus {
    guard(|| {
        check_out(out)?;
        let home = PathBuf::from(str_arg(home, "home")?);
        let vault = VaultStore::new(home).load()?;
        *out = Box::into_raw(Box::new(AutopassVault { vault }));
        Ok(())
    })
}

/// # Safety
/// `vault` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn autopass_vault_free(vault: *mut AutopassVault) {
    if !vault.is_null() {
        drop(Box::from_raw(vault));
    }
}

/// Registered sites as a JSON array of site keys.
///
/// # Safety
/// `vault` must be a valid handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn autopass_vault_sites_json(
    vault: *const AutopassVault,
    out: *mut *mut c_char,
) -> AutopassStatus {
    guard(|| {
        check_out(out)?;
        let vault = vault.as_ref().ok_or_else(|| invalid("vault is null"))?;
        let keys: Vec<&str> = vault.vault.list_sites().iter().map(|s| s.site_key.as_str()).collect();
        put_string(out, serde_json::to_string(&keys).map_err(|e| Failure(AutopassStatus::Internal, e.to_string()))?)
    })
}

/// Generates the password for a registered site. `object` may be NULL
/// when `object_len` is 0 and the site does not use a digital object.
///
/// # Safety
/// Pointers must be valid as described; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn autopass_vault_generate(
    vault: *const AutopassVault,
    user_password: *const c_char,
    site: *const c_char,
    object: *const u8,
    object_len: usize,
    out: *mut *mut c_char,
) -> AutopassStatus {
    guard(|| {
        check_out(out)?;
        let vault = vault.as_ref().ok_or_else(|| invalid("vault is null"))?;
        let password = UserPassword::new(str_arg(user_password, "user_password")?)?;
        let site = str_arg(site, "site")?;
        let object =
            if object.is_null() && object_len == 0 { None } else { Some(bytes_arg(object, object_len, "object")?) };
        let generated = vault.vault.generate_password(&password, site, object)?;
        put_string(out, generated.as_str().to_string())
    })
}
