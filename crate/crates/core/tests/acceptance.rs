//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if
//! any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Barrier, Mutex};
use std::time::{Duration, Instant};

use autopass::derivation::{stretch, DerivedBits, MasterSecret, SiteSource};
use autopass::policy::{
    apply_offset, compute_offset, effective_charset, encode, encode_counting, CharClass, Charset, Password,
    PasswordOffset, PasswordPolicy, MAX_ENCODE_ATTEMPTS,
};
use autopass::sync::records::PutSitesRequest;
use autopass::sync::{EnvelopeSigner, PolicyRecord, SyncClient, UserRecord};
use autopass::vault::{derive_password, InputParams, SiteConfig, Vault, VaultParams};
use autopass::{b64, Error, UserPassword, VaultStore};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Deserialize;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Check = fn() -> Outcome;

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn main() {
    let checks: [(&str, Check); 8] = [
        ("determinism", determinism),
        ("offset algebra", offset_algebra),
        ("policy compliance", policy_compliance),
        ("encoding unbiasedness", unbiasedness),
        ("stretch oracle", stretch_oracle),
        ("vault security", vault_security),
        ("sync properties", sync_properties),
        ("pin/rotate", pin_rotate),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let started = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.1}s]",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            started.elapsed().as_secs_f64()
        );
    }
    std::io::stdout().flush().unwrap();
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- helpers

fn random_policy(r: &mut impl Rng) -> PasswordPolicy {
    let allowed: Vec<CharClass> = loop {
        let picked: Vec<_> = CharClass::ALL.into_iter().filter(|_| r.gen_bool(0.6)).collect();
        if !picked.is_empty() {
            break picked;
        }
    };
    let required: Vec<_> = allowed.iter().copied().filter(|_| r.gen_bool(0.5)).collect();
    let mut policy = PasswordPolicy::new(r.gen_range(1..=64), allowed, required);
    let forbidden = r.gen_range(0..=12);
    for _ in 0..forbidden {
        policy.forbidden_chars.insert(r.gen_range(b'!'..=b'~') as char);
    }
    policy
}

/// Satisfiable: passes validation and the encoder's 32 attempts fail with
/// probability below 1e-12.
fn satisfiable_policy(r: &mut impl Rng) -> PasswordPolicy {
    loop {
        let p = random_policy(r);
        if p.validate().is_ok() && p.exhaustion_probability().is_ok_and(|e| e < 1e-12) {
            return p;
        }
    }
}

fn random_string(r: &mut impl Rng, min: usize, max: usize) -> String {
    let len = r.gen_range(min..=max);
    (0..len).map(|_| r.gen_range(b'!'..=b'~') as char).collect()
}

fn random_bits(r: &mut impl RngCore) -> DerivedBits {
    let mut b = [0u8; 32];
    r.fill_bytes(&mut b);
    DerivedBits(b)
}

fn compliant(pw: &Password, policy: &PasswordPolicy, charset: &Charset) -> bool {
    let text = pw.as_str();
    text.chars().count() == policy.output_len()
        && text.chars().all(|c| charset.index_of(c).is_some())
        && policy.required_classes.iter().all(|class| text.chars().any(|c| class.contains(c)))
}

fn charset_of_size(n: usize) -> Charset {
    let chars: Vec<char> = match n {
        2 => vec!['0', '1'],
        26 => ('a'..='z').collect(),
        62 => ('0'..='9').chain('A'..='Z').chain('a'..='z').collect(),
        94 => (b'!'..=b'~').map(char::from).collect(),
        _ => unreachable!(),
    };
    Charset::new(chars).unwrap()
}

fn random_password(r: &mut impl Rng, charset: &Charset, len: usize) -> Password {
    Password::new((0..len).map(|_| charset.get(r.gen_range(0..charset.len()))).collect::<String>())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(text: &str) -> Vec<u8> {
    (0..text.len()).step_by(2).map(|i| u8::from_str_radix(&text[i..i + 2], 16).unwrap()).collect()
}

// ------------------------------------------------------------ determinism

#[derive(Deserialize)]
struct Golden {
    fixed: GoldenFixed,
    vectors: Vec<GoldenVector>,
}

#[derive(Deserialize)]
struct GoldenFixed {
    encode_zero_bits_62_len8_nonce0: String,
    stretch_autopass_100000_hex: String,
}

#[derive(Deserialize)]
struct GoldenVector {
    master_secret_hex: String,
    user_password: String,
    user_constant: String,
    inner_iterations: u32,
    site: String,
    site_mode: SiteSource,
    input_params: InputParams,
    policy: PasswordPolicy,
    object: Option<String>,
    offset: Option<Vec<u32>>,
    expected_password: String,
}

fn golden_check() -> Result<usize, String> {
    let g: Golden = serde_json::from_str(include_str!("data/golden_vectors.json")).unwrap();
    let alnum = PasswordPolicy::new(8, [CharClass::Lower, CharClass::Upper, CharClass::Digit], []);
    if encode(&DerivedBits([0; 32]), &alnum, 0).unwrap().as_str() != g.fixed.encode_zero_bits_62_len8_nonce0 {
        return Err("fixed encode vector differs".into());
    }
    if hex(&stretch(b"autopass", 100_000).unwrap().0) != g.fixed.stretch_autopass_100000_hex {
        return Err("fixed stretch vector differs".into());
    }
    for (i, v) in g.vectors.iter().enumerate() {
        let master = MasterSecret::try_from_slice(&unhex(&v.master_secret_hex)).unwrap();
        let password = UserPassword::new(v.user_password.clone()).unwrap();
        let params = VaultParams {
            kdf_iterations: 1,
            inner_iterations: v.inner_iterations,
            user_constant: v.user_constant.clone(),
            ..Default::default()
        };
        let vault = Vault::init_with_secret(&master, &password, &params, &mut rng(i as u64)).unwrap();
        let mut config = SiteConfig::new(vault.normalize(&v.site, v.site_mode).unwrap(), v.policy.clone());
        config.input_params = v.input_params.clone();
        config.offset = v
            .offset
            .clone()
            .map(|s| PasswordOffset::new(s, effective_charset(&v.policy).unwrap().len() as u32).unwrap());
        let got = derive_password(&master, &password, &vault.global, &config, v.object.as_deref().map(str::as_bytes))
            .unwrap();
        if got.as_str() != v.expected_password {
            return Err(format!("golden vector {i} differs"));
        }
    }
    Ok(g.vectors.len() + 2)
}

fn determinism() -> Outcome {
    let started = Instant::now();
    let mut r = rng(1);
    let mut mismatches = 0;
    for case in 0..1000u64 {
        let password = UserPassword::new(random_string(&mut r, 1, 24)).unwrap();
        let params = VaultParams {
            kdf_iterations: 1,
            inner_iterations: r.gen_range(1..=256),
            user_constant: if r.gen_bool(0.5) { random_string(&mut r, 0, 12) } else { String::new() },
            site_labels: r.gen_range(1..=3),
        };
        let mut vault = Vault::init(&password, &params, &mut rng(10_000 + case)).unwrap();
        let (raw, mode) = if r.gen_bool(0.7) {
            let host: String = (0..r.gen_range(1..4))
                .map(|_| (0..r.gen_range(1..8)).map(|_| r.gen_range(b'a'..=b'z') as char).collect::<String>())
                .collect::<Vec<_>>()
                .join(".");
            (format!("https://www.{host}.com/path?q={}", r.gen::<u16>()), SiteSource::Url)
        } else {
            (random_string(&mut r, 1, 16).replace(' ', "_"), SiteSource::UserSiteName)
        };
        let key = vault.normalize(&raw, mode).unwrap();
        let mut config = SiteConfig::new(key, satisfiable_policy(&mut r));
        let use_object = r.gen_bool(0.3);
        config.input_params = InputParams {
            use_user_constant: r.gen_bool(0.5),
            use_user_name: r.gen_bool(0.5),
            use_object,
            user_name: Some(random_string(&mut r, 0, 12)),
            version_nonce: r.gen_range(0..4),
        };
        let object: Option<Vec<u8>> = use_object.then(|| (0..r.gen_range(0..64)).map(|_| r.gen()).collect());
        let site = config.site_key.value.clone();
        vault.upsert_site(config).unwrap();
        let a = vault.generate_password(&password, &site, object.as_deref()).unwrap();
        let b = vault.generate_password(&password, &site, object.as_deref()).unwrap();
        let reloaded = Vault::from_json(&vault.to_json()).unwrap();
        let c = reloaded.generate_password(&password, &site, object.as_deref()).unwrap();
        if a.as_str() != b.as_str() || a.as_str() != c.as_str() {
            mismatches += 1;
        }
    }
    let golden = golden_check();
    let elapsed = started.elapsed();
    let pass = mismatches == 0 && golden.is_ok() && elapsed < Duration::from_secs(120);
    outcome(
        pass,
        format!(
            "1000 cases, {mismatches} mismatches (twice + after reload); golden file {}; {:.1}s of 120s budget",
            match &golden {
                Ok(n) => format!("{n}/{n} vectors identical"),
                Err(e) => e.clone(),
            },
            elapsed.as_secs_f64()
        ),
    )
}

// --------------------------------------------------------- offset algebra

fn offset_algebra() -> Outcome {
    let mut r = rng(2);
    let mut cases = 0;
    let mut failures = Vec::new();
    for n in [2usize, 26, 62, 94] {
        let cs = charset_of_size(n);
        for _ in 0..2_600 {
            cases += 1;
            let len = r.gen_range(1..=64);
            let base = random_password(&mut r, &cs, len);
            let desired = random_password(&mut r, &cs, len);
            let off = compute_offset(&base, &desired, &cs).unwrap();
            if apply_offset(&base, &off, &cs).unwrap().as_str() != desired.as_str() {
                failures.push(format!("round trip n={n}"));
            }
            let zero = PasswordOffset::zero(len, n as u32).unwrap();
            if apply_offset(&base, &zero, &cs).unwrap().as_str() != base.as_str()
                || !compute_offset(&base, &base, &cs).unwrap().is_zero()
            {
                failures.push(format!("zero identity n={n}"));
            }
            // Wraparound: last character shifted by one is the first.
            let last = Password::new(cs.get(n - 1).to_string().repeat(len));
            let one = PasswordOffset::new(vec![1; len], n as u32).unwrap();
            if apply_offset(&last, &one, &cs).unwrap().as_str() != cs.get(0).to_string().repeat(len) {
                failures.push(format!("wraparound n={n}"));
            }
            let o1 = PasswordOffset::new((0..len).map(|_| r.gen_range(0..n as u32)).collect(), n as u32).unwrap();
            let o2 = PasswordOffset::new((0..len).map(|_| r.gen_range(0..n as u32)).collect(), n as u32).unwrap();
            let stepwise = apply_offset(&apply_offset(&base, &o1, &cs).unwrap(), &o2, &cs).unwrap();
            if apply_offset(&base, &o1.compose(&o2).unwrap(), &cs).unwrap().as_str() != stepwise.as_str() {
                failures.push(format!("composition n={n}"));
            }
        }
    }
    let alnum = effective_charset(&PasswordPolicy::new(8, [CharClass::Lower, CharClass::Upper, CharClass::Digit], []))
        .unwrap()
        .len();
    outcome(
        failures.is_empty() && cases >= 10_000 && alnum == 62,
        format!(
            "{cases} cases x 4 properties over sizes 2/26/62/94, {} failures; alphanumeric charset size {alnum}",
            failures.len()
        ),
    )
}

// ------------------------------------------------------ policy compliance

fn policy_compliance() -> Outcome {
    let mut r = rng(3);
    let mut violations = 0;
    let mut max_attempts = 0;
    let mut errors = 0;
    for _ in 0..10_000 {
        let policy = satisfiable_policy(&mut r);
        let cs = effective_charset(&policy).unwrap();
        match encode_counting(&random_bits(&mut r), &policy, r.gen_range(0..1000)) {
            Ok((pw, attempts)) => {
                max_attempts = max_attempts.max(attempts);
                if !compliant(&pw, &policy, &cs) {
                    violations += 1;
                }
            }
            Err(_) => errors += 1,
        }
    }
    // Context: policies that validate but are too tight for 32 attempts.
    let mut tight = 0;
    let mut tight_exhausted = 0;
    while tight < 2_000 {
        let p = random_policy(&mut r);
        if p.validate().is_ok() && p.exhaustion_probability().is_ok_and(|e| e >= 1e-12) {
            tight += 1;
            if matches!(encode_counting(&random_bits(&mut r), &p, 0), Err(Error::RetriesExhausted(_))) {
                tight_exhausted += 1;
            }
        }
    }
    outcome(
        violations == 0 && errors == 0 && max_attempts <= MAX_ENCODE_ATTEMPTS,
        format!(
            "10000 policies, {violations} violations, {errors} errors, max attempts {max_attempts} (cap {MAX_ENCODE_ATTEMPTS}); \
             info: {tight_exhausted}/{tight} over-tight policies exhausted retries"
        ),
    )
}

// --------------------------------------------------- encoding unbiasedness

fn unbiasedness() -> Outcome {
    const SAMPLES: usize = 100_000;
    const LEN: usize = 8;
    let policy = PasswordPolicy::new(LEN as u32, [CharClass::Lower, CharClass::Upper, CharClass::Digit], []);
    let cs = effective_charset(&policy).unwrap();
    let n = cs.len();
    let mut counts = vec![vec![0u64; n]; LEN];
    let mut r = rng(4);
    for _ in 0..SAMPLES {
        let pw = encode(&random_bits(&mut r), &policy, 0).unwrap();
        for (pos, c) in pw.as_str().chars().enumerate() {
            counts[pos][cs.index_of(c).unwrap()] += 1;
        }
    }
    let p = 1.0 / n as f64;
    let expected = SAMPLES as f64 * p;
    let cell_sigma = (SAMPLES as f64 * p * (1.0 - p)).sqrt();
    let df = (n - 1) as f64;
    let chi_sigma = (2.0 * df).sqrt();
    let mut worst_chi_z: f64 = 0.0;
    let mut outlying_cells = 0;
    let mut worst_cell_z: f64 = 0.0;
    for row in &counts {
        let chi: f64 = row.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        worst_chi_z = worst_chi_z.max((chi - df).abs() / chi_sigma);
        for &c in row {
            let z = (c as f64 - expected).abs() / cell_sigma;
            worst_cell_z = worst_cell_z.max(z);
            if z > 3.0 {
                outlying_cells += 1;
            }
        }
    }
    // Under exact uniformity each cell leaves 3 sigma with p = 0.0027.
    let cells = (LEN * n) as f64;
    let p3 = 0.0027;
    let expected_outliers = cells * p3;
    let outlier_limit = expected_outliers + 3.0 * (cells * p3 * (1.0 - p3)).sqrt();
    outcome(
        worst_chi_z <= 3.0 && (outlying_cells as f64) <= outlier_limit,
        format!(
            "{SAMPLES} encodes, {n}-charset, length {LEN}: worst per-position chi-square {worst_chi_z:.2} sigma from df={df}; \
             {outlying_cells}/{cells} cells beyond 3 sigma (uniform expects {expected_outliers:.2}, limit {outlier_limit:.2}); \
             worst cell {worst_cell_z:.2} sigma"
        ),
    )
}

// ---------------------------------------------------------- stretch oracle

/// Straight FIPS 180-4 SHA-256, written independently of the library.
mod oracle {
    const K: [u32; 64] = [
        0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5, 0xd807aa98,
        0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786,
        0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8,
        0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13,
        0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819,
        0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a,
        0x5b9cca4f, 0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
        0xc67178f2,
    ];

    pub fn sha256(msg: &[u8]) -> [u8; 32] {
        let mut h: [u32; 8] =
            [0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19];
        let mut data = msg.to_vec();
        let bit_len = (msg.len() as u64) * 8;
        data.push(0x80);
        while data.len() % 64 != 56 {
            data.push(0);
        }
        data.extend_from_slice(&bit_len.to_be_bytes());
        for block in data.chunks(64) {
            let mut w = [0u32; 64];
            for t in 0..16 {
                w[t] = u32::from_be_bytes([block[4 * t], block[4 * t + 1], block[4 * t + 2], block[4 * t + 3]]);
            }
            for t in 16..64 {
                let s0 = w[t - 15].rotate_right(7) ^ w[t - 15].rotate_right(18) ^ (w[t - 15] >> 3);
                let s1 = w[t - 2].rotate_right(17) ^ w[t - 2].rotate_right(19) ^ (w[t - 2] >> 10);
                w[t] = w[t - 16].wrapping_add(s0).wrapping_add(w[t - 7]).wrapping_add(s1);
            }
            let [mut a, mut b, mut c, mut d, mut e, mut f, mut g, mut hh] = h;
            for t in 0..64 {
                let s1 = e.rotate_right(6) ^ e.rotate_right(11) ^ e.rotate_right(25);
                let ch = (e & f) ^ (!e & g);
                let t1 = hh.wrapping_add(s1).wrapping_add(ch).wrapping_add(K[t]).wrapping_add(w[t]);
                let s0 = a.rotate_right(2) ^ a.rotate_right(13) ^ a.rotate_right(22);
                let maj = (a & b) ^ (a & c) ^ (b & c);
                let t2 = s0.wrapping_add(maj);
                hh = g;
                g = f;
                f = e;
                e = d.wrapping_add(t1);
                d = c;
                c = b;
                b = a;
                a = t1.wrapping_add(t2);
            }
            for (slot, v) in h.iter_mut().zip([a, b, c, d, e, f, g, hh]) {
                *slot = slot.wrapping_add(v);
            }
        }
        let mut out = [0u8; 32];
        for (i, word) in h.iter().enumerate() {
            out[4 * i..4 * i + 4].copy_from_slice(&word.to_be_bytes());
        }
        out
    }
}

fn stretch_oracle() -> Outcome {
    let abc = hex(&oracle::sha256(b"abc"));
    if abc != "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad" {
        return outcome(false, "oracle SHA-256 fails the FIPS 180-4 'abc' vector");
    }
    let mut r = rng(5);
    let mut agree = 0;
    for _ in 0..10 {
        let input: Vec<u8> = (0..r.gen_range(0..200)).map(|_| r.gen()).collect();
        let mut state = input.clone();
        for _ in 0..100_000 {
            state = oracle::sha256(&state).to_vec();
        }
        if stretch(&input, 100_000).unwrap().0.as_slice() == state.as_slice() {
            agree += 1;
        }
    }
    outcome(agree == 10, format!("{agree}/10 random inputs equal the straight-loop oracle at 100000 iterations"))
}

// ---------------------------------------------------------- vault security

fn vault_security() -> Outcome {
    let mut r = rng(6);
    let mut wrong_ok = 0;
    let mut flip_ok = 0;
    let mut leaks = 0;
    let dir = tempfile::tempdir().unwrap();
    for i in 0..100u64 {
        let pw_text = random_string(&mut r, 10, 24);
        let password = UserPassword::new(pw_text.clone()).unwrap();
        let params =
            VaultParams { kdf_iterations: r.gen_range(100..=2_000), inner_iterations: 16, ..Default::default() };
        let mut vault = Vault::init(&password, &params, &mut rng(20_000 + i)).unwrap();
        let mut generated = Vec::new();
        for s in 0..3 {
            let key = vault.normalize(&format!("site{s}-{i}.example"), SiteSource::UserSiteName).unwrap();
            let site = key.value.clone();
            vault.upsert_site(SiteConfig::new(key, PasswordPolicy::default())).unwrap();
            generated.push(vault.generate_password(&password, &site, None).unwrap().as_str().to_string());
        }
        let home = dir.path().join(format!("v{i}"));
        let store = VaultStore::new(&home);
        let lock = store.lock().unwrap();
        store.create(&vault, false, &lock).unwrap();
        drop(lock);

        let loaded = store.load().unwrap();
        let mut wrong = pw_text.clone();
        wrong.push('x');
        if matches!(loaded.unlock(&UserPassword::new(wrong).unwrap()), Err(Error::AuthenticationFailed)) {
            wrong_ok += 1;
        }

        // One flipped bit anywhere in nonce or ciphertext.
        let mut corrupted = loaded.clone();
        let sealed = &mut corrupted.global.encrypted_master;
        let total_bits = (sealed.nonce.len() + sealed.ciphertext.len()) * 8;
        let bit = r.gen_range(0..total_bits);
        let (byte, mask) = (bit / 8, 1u8 << (bit % 8));
        if byte < sealed.nonce.len() {
            sealed.nonce[byte] ^= mask;
        } else {
            sealed.ciphertext[byte - sealed.nonce.len()] ^= mask;
        }
        if matches!(corrupted.unlock(&password), Err(Error::AuthenticationFailed)) {
            flip_ok += 1;
        }

        let file = std::fs::read_to_string(store.vault_path()).unwrap();
        let master = loaded.unlock(&password).unwrap();
        let raw = master.as_bytes();
        let needles = [pw_text.clone(), hex(raw), b64::encode(raw)].into_iter().chain(generated).collect::<Vec<_>>();
        let bytes = std::fs::read(store.vault_path()).unwrap();
        if needles.iter().any(|n| file.contains(n.as_str())) || bytes.windows(raw.len()).any(|w| w == raw.as_slice()) {
            leaks += 1;
        }
    }
    outcome(
        wrong_ok == 100 && flip_ok == 100 && leaks == 0,
        format!("100 vaults: wrong password rejected {wrong_ok}/100, 1-bit corruption rejected {flip_ok}/100, {leaks} files leaking secrets"),
    )
}

// --------------------------------------------------------- sync properties

fn tamper_trials() -> (usize, usize) {
    use axum::routing::get;
    let signer = EnvelopeSigner::generate(&mut rand::rngs::OsRng);
    let served: Arc<Mutex<Vec<u8>>> = Arc::new(Mutex::new(Vec::new()));
    let body = served.clone();
    let server = common::spawn_router(axum::Router::new().route(
        "/v1/policies/{domain}",
        get(move || {
            let bytes = body.lock().unwrap().clone();
            async move { ([("content-type", "application/json")], bytes) }
        }),
    ));
    let client = SyncClient::new(&server.url(), signer.public_key()).unwrap();
    let mut r = rng(7);
    let mut vault = common::fast_vault(7);
    let mut rejected = 0;
    let mut trials = 0;
    for i in 0..1000u64 {
        let policy = satisfiable_policy(&mut r);
        let record = PolicyRecord { domain: "example.com".into(), policy, record_version: i };
        let wire = serde_json::to_vec(&signer.sign_json(&record, 1_700_000_000 + i)).unwrap();
        let mut flipped = wire.clone();
        let bit = r.gen_range(0..wire.len() * 8);
        flipped[bit / 8] ^= 1 << (bit % 8);
        *served.lock().unwrap() = flipped;
        let before = vault.policy_cache.clone();
        trials += 1;
        if client.fetch_policy(&mut vault, "example.com").is_err() && vault.policy_cache == before {
            rejected += 1;
        }
        // Sanity: the untouched envelope is accepted.
        if i % 100 == 0 {
            *served.lock().unwrap() = wire;
            assert!(client.fetch_policy(&mut vault, "example.com").is_ok());
        }
    }
    (rejected, trials)
}

fn cas_race() -> (usize, usize) {
    let svc = common::Service::start();
    let secret = svc.add_user("alice");
    let token = svc.client().login("alice", &secret).unwrap();
    let url = format!("{}/v1/user/alice/sites", svc.handle.url());
    let mut clean_races = 0;
    let rounds = 50;
    for round in 0..rounds as u64 {
        let barrier = Arc::new(Barrier::new(2));
        let writers: Vec<_> = (0..2)
            .map(|w| {
                let barrier = barrier.clone();
                let url = url.clone();
                let token = token.token.clone();
                let vault = common::fast_vault(w);
                std::thread::spawn(move || {
                    let mut record = UserRecord::empty("alice");
                    let site = SiteConfig::new(
                        vault.normalize(&format!("w{w}.com"), SiteSource::Url).unwrap(),
                        PasswordPolicy::default(),
                    );
                    record.sites.insert(site.site_key.value.clone(), site);
                    let body = PutSitesRequest { record, expected_version: round };
                    let http = reqwest::blocking::Client::new();
                    barrier.wait();
                    http.put(&url).bearer_auth(&token).json(&body).send().unwrap().status().as_u16()
                })
            })
            .collect();
        let mut statuses: Vec<u16> = writers.into_iter().map(|t| t.join().unwrap()).collect();
        statuses.sort();
        if statuses == [200, 409] {
            clean_races += 1;
        }
    }
    (clean_races, rounds)
}

fn convergence() -> bool {
    let svc = common::Service::start();
    let secret = svc.add_user("alice");
    let client = svc.client();
    let token = client.login("alice", &secret).unwrap();
    let mut vaults: Vec<Vault> = (0..3).map(common::fast_vault).collect();
    let mut union = BTreeSet::new();
    for (i, v) in vaults.iter_mut().enumerate() {
        for s in 0..4 {
            let key = v.normalize(&format!("c{i}-s{s}.org"), SiteSource::Url).unwrap();
            union.insert(key.value.clone());
            v.upsert_site(SiteConfig::new(key, PasswordPolicy::default())).unwrap();
        }
    }
    // All three start from version 0, so the second and third pushes
    // conflict and must merge.
    for v in vaults.iter_mut() {
        client.sync_push(v, &token).unwrap();
    }
    for v in vaults.iter_mut() {
        client.sync_pull(v, &token).unwrap();
    }
    let first: &BTreeMap<_, _> = vaults[0].sites();
    vaults.iter().all(|v| v.sites() == first && v.sites().keys().cloned().collect::<BTreeSet<_>>() == union)
}

struct Reaped(Child);

impl Drop for Reaped {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn killed_server_gen() -> Result<(), String> {
    let server_bin = env!("CARGO_BIN_EXE_autopass-server");
    let cli_bin = env!("CARGO_BIN_EXE_autopass");
    let dir = tempfile::tempdir().unwrap();
    let sdir = dir.path().join("server");
    std::fs::create_dir_all(&sdir).unwrap();
    let admin = |args: &[&str]| -> String {
        let out = Command::new(server_bin).args(args).current_dir(&sdir).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap().trim().to_string()
    };
    let pubkey = admin(&["keygen"]);
    let policy = sdir.join("p.json");
    std::fs::write(&policy, PasswordPolicy::new(24, CharClass::ALL, [CharClass::Symbol]).to_json()).unwrap();
    admin(&["put-policy", "example.com", policy.to_str().unwrap()]);
    let mut child = Command::new(server_bin)
        .args(["--listen", "127.0.0.1:0"])
        .current_dir(&sdir)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = format!("http://{}", line.trim().trim_start_matches("listening on "));
    let server = Reaped(child);

    let home = dir.path().join("home");
    let cli = |args: &[&str]| {
        let mut child = Command::new(cli_bin)
            .args(args)
            .env("AUTOPASS_HOME", &home)
            .env("AUTOPASS_SERVER_URL", &url)
            .env("AUTOPASS_SERVER_PUBKEY", &pubkey)
            .env("RUST_LOG", "warn")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        let _ = child.stdin.take().unwrap().write_all(b"pw\n");
        child.wait_with_output().unwrap()
    };
    if !cli(&["init", "--kdf-iterations", "64", "--inner-iterations", "64"]).status.success() {
        return Err("init failed".into());
    }
    if !cli(&["policy", "fetch", "example.com"]).status.success() {
        return Err("cache warm-up failed".into());
    }
    drop(server);
    let out = cli(&["gen", "https://example.com", "--stdout"]);
    if !out.status.success() {
        return Err(format!("gen failed: {}", String::from_utf8_lossy(&out.stderr).trim()));
    }
    let pw = String::from_utf8(out.stdout).unwrap();
    if pw.trim_end().chars().count() != 24 {
        return Err("gen ignored the cached policy".into());
    }
    Ok(())
}

fn sync_properties() -> Outcome {
    let (rejected, trials) = tamper_trials();
    let (races, rounds) = cas_race();
    let converged = convergence();
    let offline = killed_server_gen();
    outcome(
        rejected == trials && races == rounds && converged && offline.is_ok(),
        format!(
            "tampered envelopes rejected {rejected}/{trials}; 2-writer races ending 200+409 {races}/{rounds}; \
             3-client convergence {}; gen with server killed {}",
            if converged { "to the union" } else { "FAILED" },
            match offline {
                Ok(()) => "succeeded from cache".to_string(),
                Err(e) => e,
            }
        ),
    )
}

// -------------------------------------------------------------- pin/rotate

fn pin_rotate() -> Outcome {
    let mut r = rng(8);
    let password = common::password();
    let mut vault = common::fast_vault(8);
    let mut pins_ok = 0;
    let pin_cases = 200;
    for i in 0..pin_cases {
        let policy = satisfiable_policy(&mut r);
        let cs = effective_charset(&policy).unwrap();
        let key = vault.normalize(&format!("pin{i}"), SiteSource::UserSiteName).unwrap();
        let site = key.value.clone();
        vault.upsert_site(SiteConfig::new(key, policy.clone())).unwrap();
        let desired = random_password(&mut r, &cs, policy.output_len());
        vault.pin_password(&password, &site, &desired, None).unwrap();
        if vault.generate_password(&password, &site, None).unwrap().as_str() == desired.as_str() {
            pins_ok += 1;
        }
    }
    let mut changed = 0;
    let trials = 1000;
    for seed in 0..trials as u64 {
        let policy = if seed % 2 == 0 { PasswordPolicy::default() } else { satisfiable_policy(&mut r) };
        let key = vault.normalize(&format!("rot{seed}"), SiteSource::UserSiteName).unwrap();
        let site = key.value.clone();
        vault.upsert_site(SiteConfig::new(key, policy)).unwrap();
        let before = vault.generate_password(&password, &site, None).unwrap();
        vault.rotate_password(&password, &site, None, &mut rng(seed)).unwrap();
        let after = vault.generate_password(&password, &site, None).unwrap();
        if before.as_str() != after.as_str() {
            changed += 1;
        }
    }
    outcome(
        pins_ok == pin_cases && changed >= 999,
        format!(
            "pin then gen exact {pins_ok}/{pin_cases}; rotation changed the password {changed}/{trials} (need 999)"
        ),
    )
}
