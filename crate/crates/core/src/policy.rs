//! Stage two of password generation: policy-driven encoding of derived
//! bits, and password offsets.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use zeroize::{Zeroize, ZeroizeOnDrop};

use crate::derivation::DerivedBits;
use crate::error::{Error, Result};

pub const MAX_PASSWORD_LEN: u32 = 64;
pub const MAX_ENCODE_ATTEMPTS: u32 = 32;
pub const MAX_OFFSET_ATTEMPTS: u32 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CharClass {
    Lower,
    Upper,
    Digit,
    Symbol,
}

impl CharClass {
    pub const ALL: [CharClass; 4] = [CharClass::Lower, CharClass::Upper, CharClass::Digit, CharClass::Symbol];

    /// Symbols are the 32 printable ASCII characters that are not
    /// alphanumeric (space excluded).
    pub fn contains(self, c: char) -> bool {
        match self {
            CharClass::Lower => c.is_ascii_lowercase(),
            CharClass::Upper => c.is_ascii_uppercase(),
            CharClass::Digit => c.is_ascii_digit(),
            CharClass::Symbol => c.is_ascii_graphic() && !c.is_ascii_alphanumeric(),
        }
    }

    pub fn chars(self) -> impl Iterator<Item = char> {
        ('!'..='~').filter(move |&c| self.contains(c))
    }

    pub fn of(c: char) -> Option<CharClass> {
        CharClass::ALL.into_iter().find(|class| class.contains(c))
    }

    pub fn name(self) -> &'static str {
        match self {
            CharClass::Lower => "lower",
            CharClass::Upper => "upper",
            CharClass::Digit => "digit",
            CharClass::Symbol => "symbol",
        }
    }
}

impl std::str::FromStr for CharClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CharClass::ALL
            .into_iter()
            .find(|c| c.name() == s.trim())
            .ok_or_else(|| Error::InvalidParameter(format!("unknown character class {s:?}")))
    }
}

mod char_set_as_string {
    use std::collections::BTreeSet;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(set: &BTreeSet<char>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&set.iter().collect::<String>())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeSet<char>, D::Error> {
        Ok(String::deserialize(d)?.chars().collect())
    }
}

/// Site-specific constraints on the form of a password.
///
/// Serialized as a flat JSON object; `forbidden_chars` is a string.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PasswordPolicy {
    pub length_min: u32,
    pub length_max: u32,
    pub allowed_classes: BTreeSet<CharClass>,
    pub required_classes: BTreeSet<CharClass>,
    #[serde(with = "char_set_as_string", default)]
    pub forbidden_chars: BTreeSet<char>,
    #[serde(default)]
    pub policy_version: u64,
}

impl Default for PasswordPolicy {
    /// Policy used for sites registered without a synced record.
    fn default() -> Self {
        PasswordPolicy {
            length_min: 12,
            length_max: 12,
            allowed_classes: CharClass::ALL.into_iter().collect(),
            required_classes: [CharClass::Lower, CharClass::Digit].into_iter().collect(),
            forbidden_chars: BTreeSet::new(),
            policy_version: 0,
        }
    }
}

impl PasswordPolicy {
    pub fn new(
        length: u32,
        allowed: impl IntoIterator<Item = CharClass>,
        required: impl IntoIterator<Item = CharClass>,
    ) -> Self {
        PasswordPolicy {
            length_min: length,
            length_max: length,
            allowed_classes: allowed.into_iter().collect(),
            required_classes: required.into_iter().collect(),
            forbidden_chars: BTreeSet::new(),
            policy_version: 0,
        }
    }

    pub fn with_forbidden(mut self, chars: &str) -> Self {
        self.forbidden_chars.extend(chars.chars());
        self
    }

    /// The length every generated password has.
    pub fn output_len(&self) -> usize {
        self.length_min as usize
    }

    pub fn validate(&self) -> Result<()> {
        let unsat = |msg: String| Err(Error::UnsatisfiablePolicy(msg));
        if self.length_min < 1 || self.length_min > self.length_max {
            return unsat(format!("length bounds {}..={} are invalid", self.length_min, self.length_max));
        }
        if self.length_max > MAX_PASSWORD_LEN {
            return unsat(format!("length_max exceeds {MAX_PASSWORD_LEN}"));
        }
        if let Some(c) = self.required_classes.difference(&self.allowed_classes).next() {
            return unsat(format!("required class {} is not allowed", c.name()));
        }
        for class in &self.required_classes {
            if class.chars().all(|c| self.forbidden_chars.contains(&c)) {
                return unsat(format!("every {} character is forbidden", class.name()));
            }
        }
        if self.required_classes.len() > self.output_len() {
            return unsat("more required classes than password characters".into());
        }
        effective_charset(self).map(drop)
    }

    /// Probability that all `MAX_ENCODE_ATTEMPTS` encoding attempts miss a
    /// required class, computed exactly by inclusion-exclusion.
    pub fn exhaustion_probability(&self) -> Result<f64> {
        let charset = effective_charset(self)?;
        let n = charset.len() as f64;
        let counts: Vec<f64> = self
            .required_classes
            .iter()
            .map(|class| charset.chars().iter().filter(|&&c| class.contains(c)).count() as f64)
            .collect();
        let len = self.output_len() as i32;
        let mut success = 0.0;
        for mask in 0u32..(1 << counts.len()) {
            let excluded: f64 = counts.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, c)| c).sum();
            let term = ((n - excluded) / n).powi(len);
            if mask.count_ones() % 2 == 0 {
                success += term;
            } else {
                success -= term;
            }
        }
        Ok((1.0 - success.clamp(0.0, 1.0)).powi(MAX_ENCODE_ATTEMPTS as i32))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let policy: PasswordPolicy = serde_json::from_str(text)?;
        policy.validate()?;
        Ok(policy)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("policy serializes")
    }

    pub fn is_satisfied_by(&self, password: &Password) -> bool {
        let Ok(charset) = effective_charset(self) else {
            return false;
        };
        let text = password.as_str();
        text.chars().count() == self.output_len()
            && text.chars().all(|c| charset.index_of(c).is_some())
            && has_required_classes(text, &self.required_classes)
    }
}

fn has_required_classes(text: &str, required: &BTreeSet<CharClass>) -> bool {
    required.iter().all(|class| text.chars().any(|c| class.contains(c)))
}

/// Ordered symbol set; a character's index is its numeric value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Charset {
    chars: Vec<char>,
}

impl Charset {
    /// Sorts by code point and removes duplicates.
    pub fn new(chars: impl IntoIterator<Item = char>) -> Result<Self> {
        let set: BTreeSet<char> = chars.into_iter().collect();
        if set.is_empty() {
            return Err(Error::UnsatisfiablePolicy("empty charset".into()));
        }
        Ok(Charset { chars: set.into_iter().collect() })
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.chars.binary_search(&c).ok()
    }

    pub fn get(&self, index: usize) -> char {
        self.chars[index]
    }

    fn indices(&self, text: &str) -> Result<Vec<usize>> {
        text.chars().enumerate().map(|(pos, c)| self.index_of(c).ok_or(Error::CharOutOfCharset(pos))).collect()
    }
}

pub fn effective_charset(policy: &PasswordPolicy) -> Result<Charset> {
    Charset::new(
        policy.allowed_classes.iter().flat_map(|class| class.chars()).filter(|c| !policy.forbidden_chars.contains(c)),
    )
}

/// A generated or pinned password. Wiped on drop; `Debug` is redacted.
#[derive(Clone, PartialEq, Eq, Zeroize, ZeroizeOnDrop)]
pub struct Password(String);

impl Password {
    pub fn new(text: impl Into<String>) -> Self {
        Password(text.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.chars().count()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for Password {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Password(<{} chars>)", self.len())
    }
}

/// Per-character modular shift; `shifts[i] < modulus`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawOffset")]
pub struct PasswordOffset {
    shifts: Vec<u32>,
    modulus: u32,
}

#[derive(Deserialize)]
struct RawOffset {
    shifts: Vec<u32>,
    modulus: u32,
}

impl TryFrom<RawOffset> for PasswordOffset {
    type Error = Error;

    fn try_from(raw: RawOffset) -> Result<Self> {
        PasswordOffset::new(raw.shifts, raw.modulus)
    }
}

impl PasswordOffset {
    pub fn new(shifts: Vec<u32>, modulus: u32) -> Result<Self> {
        if modulus == 0 {
            return Err(Error::InvalidParameter("offset modulus must be positive".into()));
        }
        if shifts.iter().any(|&s| s >= modulus) {
            return Err(Error::InvalidParameter("offset shift out of range".into()));
        }
        Ok(PasswordOffset { shifts, modulus })
    }

    pub fn zero(len: usize, modulus: u32) -> Result<Self> {
        PasswordOffset::new(vec![0; len], modulus)
    }

    pub fn shifts(&self) -> &[u32] {
        &self.shifts
    }

    pub fn modulus(&self) -> u32 {
        self.modulus
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.shifts.iter().all(|&s| s == 0)
    }

    /// Character-wise sum modulo N: applying the result equals applying
    /// `self` then `other`.
    pub fn compose(&self, other: &PasswordOffset) -> Result<PasswordOffset> {
        if self.modulus != other.modulus {
            return Err(Error::ModulusMismatch { offset: other.modulus, charset: self.modulus as usize });
        }
        if self.len() != other.len() {
            return Err(Error::LengthMismatch { expected: self.len(), actual: other.len() });
        }
        let shifts = self.shifts.iter().zip(&other.shifts).map(|(a, b)| (a + b) % self.modulus).collect();
        PasswordOffset::new(shifts, self.modulus)
    }
}

/// Deterministic keystream: block `i` is `SHA-256(bits || nonce_be32 || i_be32)`.
struct ByteStream<'a> {
    bits: &'a DerivedBits,
    nonce: u32,
    block_index: u32,
    block: [u8; 32],
    pos: usize,
}

impl<'a> ByteStream<'a> {
    fn new(bits: &'a DerivedBits, nonce: u32) -> Self {
        ByteStream { bits, nonce, block_index: 0, block: [0; 32], pos: 32 }
    }
}

impl Iterator for ByteStream<'_> {
    type Item = u8;

    fn next(&mut self) -> Option<u8> {
        if self.pos == self.block.len() {
            let mut hasher = Sha256::new();
            hasher.update(self.bits.0);
            hasher.update(self.nonce.to_be_bytes());
            hasher.update(self.block_index.to_be_bytes());
            self.block = hasher.finalize().into();
            self.block_index = self.block_index.checked_add(1)?;
            self.pos = 0;
        }
        let b = self.block[self.pos];
        self.pos += 1;
        Some(b)
    }
}

impl Drop for ByteStream<'_> {
    fn drop(&mut self) {
        self.block.zeroize();
    }
}

fn encode_attempt(bits: &DerivedBits, charset: &Charset, len: usize, nonce: u32) -> Password {
    let n = charset.len();
    // bytes at or above `limit` would make `b % n` non-uniform
    let limit = 256 - (256 % n);
    let text: String = ByteStream::new(bits, nonce)
        .map(usize::from)
        .filter(|&b| b < limit)
        .take(len)
        .map(|b| charset.get(b % n))
        .collect();
    Password(text)
}

/// Maps derived bits to a policy-compliant password of length `length_min`.
pub fn encode(bits: &DerivedBits, policy: &PasswordPolicy, attempt_nonce: u32) -> Result<Password> {
    encode_counting(bits, policy, attempt_nonce).map(|(pw, _)| pw)
}

/// Like [`encode`], also returning how many attempts were used (1-based).
pub fn encode_counting(bits: &DerivedBits, policy: &PasswordPolicy, attempt_nonce: u32) -> Result<(Password, u32)> {
    policy.validate()?;
    let charset = effective_charset(policy)?;
    let len = policy.output_len();
    for attempt in 0..MAX_ENCODE_ATTEMPTS {
        let nonce = attempt_nonce
            .checked_add(attempt)
            .ok_or_else(|| Error::InvalidParameter("attempt nonce overflow".into()))?;
        let candidate = encode_attempt(bits, &charset, len, nonce);
        if has_required_classes(candidate.as_str(), &policy.required_classes) {
            return Ok((candidate, attempt + 1));
        }
    }
    Err(Error::RetriesExhausted(MAX_ENCODE_ATTEMPTS))
}

fn check_modulus(offset: &PasswordOffset, charset: &Charset) -> Result<()> {
    if offset.modulus as usize != charset.len() {
        return Err(Error::ModulusMismatch { offset: offset.modulus, charset: charset.len() });
    }
    Ok(())
}

/// `out[i] = charset[(index(base[i]) + shifts[i]) mod N]`
pub fn apply_offset(base: &Password, offset: &PasswordOffset, charset: &Charset) -> Result<Password> {
    if offset.len() != base.len() {
        return Err(Error::LengthMismatch { expected: base.len(), actual: offset.len() });
    }
    check_modulus(offset, charset)?;
    let n = charset.len();
    let mut indices = charset.indices(base.as_str())?;
    let text = indices.iter().zip(&offset.shifts).map(|(&i, &s)| charset.get((i + s as usize) % n)).collect();
    indices.zeroize();
    Ok(Password(text))
}

/// The offset that maps `base` onto `desired`.
pub fn compute_offset(base: &Password, desired: &Password, charset: &Charset) -> Result<PasswordOffset> {
    if base.len() != desired.len() {
        return Err(Error::LengthMismatch { expected: base.len(), actual: desired.len() });
    }
    let n = charset.len();
    let mut from = charset.indices(base.as_str())?;
    let mut to = charset.indices(desired.as_str())?;
    let shifts = from.iter().zip(&to).map(|(&b, &d)| ((d + n - b) % n) as u32).collect();
    from.zeroize();
    to.zeroize();
    PasswordOffset::new(shifts, n as u32)
}

/// Uniformly random offset whose application to `base` still satisfies the
/// policy's required classes.
pub fn random_offset<R: Rng + ?Sized>(base: &Password, policy: &PasswordPolicy, rng: &mut R) -> Result<PasswordOffset> {
    let charset = effective_charset(policy)?;
    let n = charset.len() as u32;
    for _ in 0..MAX_OFFSET_ATTEMPTS {
        let shifts = (0..base.len()).map(|_| rng.gen_range(0..n)).collect();
        let offset = PasswordOffset::new(shifts, n)?;
        let shifted = apply_offset(base, &offset, &charset)?;
        if has_required_classes(shifted.as_str(), &policy.required_classes) {
            return Ok(offset);
        }
    }
    Err(Error::RetriesExhausted(MAX_OFFSET_ATTEMPTS))
}
