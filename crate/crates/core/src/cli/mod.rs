//! `autopass` command-line front end.

pub mod clipboard;
pub mod daemon;
mod input;

use std::io::{IsTerminal, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;

use crate::derivation::{SiteKey, SiteSource};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::policy::{Password, PasswordPolicy};
use crate::sync::{AccessToken, PinnedKey, SyncClient};
use crate::vault::{store, InputParams, SiteConfig, Vault, VaultParams, VaultStore};

pub use input::Prompter;

const SESSION_FILE: &str = "session.json";

/// Runtime configuration shared by all subcommands.
#[derive(Clone, Debug)]
pub struct CliConfig {
    pub home: PathBuf,
    pub server_url: Option<String>,
    pub server_pubkey: Option<String>,
    pub clipboard_clear_seconds: u64,
}

impl CliConfig {
    pub fn store(&self) -> VaultStore {
        VaultStore::new(&self.home)
    }

    /// `None` when no server is configured.
    pub fn sync_client(&self) -> Result<Option<SyncClient>> {
        let Some(url) = &self.server_url else {
            return Ok(None);
        };
        let key = self.server_pubkey.as_deref().ok_or_else(|| {
            Error::InvalidParameter("AUTOPASS_SERVER_PUBKEY must be set when a server URL is configured".into())
        })?;
        SyncClient::new(url, PinnedKey::from_base64(key)?).map(Some)
    }

    fn session_path(&self) -> PathBuf {
        self.home.join(SESSION_FILE)
    }

    pub fn load_token(&self) -> Result<AccessToken> {
        let text = std::fs::read_to_string(self.session_path()).map_err(|_| Error::Unauthorized)?;
        Ok(serde_json::from_str(&text)?)
    }

    fn save_token(&self, token: &AccessToken) -> Result<()> {
        fsutil::write_private(&self.session_path(), serde_json::to_string(token)?.as_bytes())
    }
}

#[derive(Parser, Debug)]
#[command(name = "autopass", version, about = "Deterministic site-specific password generator")]
pub struct Cli {
    /// Vault directory.
    #[arg(long, env = "AUTOPASS_HOME", global = true)]
    home: Option<PathBuf>,

    /// Cloud configuration service base URL.
    #[arg(long, env = "AUTOPASS_SERVER_URL", global = true)]
    server_url: Option<String>,

    /// Pinned service public key (base64).
    #[arg(long, env = "AUTOPASS_SERVER_PUBKEY", global = true)]
    server_pubkey: Option<String>,

    /// Seconds before a copied password is cleared from the clipboard.
    #[arg(long, env = "AUTOPASS_CLIPBOARD_CLEAR_SECONDS", default_value_t = 60,
          value_parser = clap::value_parser!(u64).range(1..), global = true)]
    clear_after: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Create a new vault with a fresh master secret.
    Init(InitArgs),
    /// Register a site and its generation settings.
    Add(AddArgs),
    /// Generate the password for a site.
    Gen(GenArgs),
    /// Make a site generate an existing password of your choice.
    Pin(SiteArgs),
    /// Change a site's password by drawing a new random offset.
    Rotate(RotateArgs),
    /// Show or set a site's non-secret reminder.
    Reminder(ReminderArgs),
    /// List registered sites.
    List,
    /// Log in to the cloud service and store the access token.
    Login { user_id: String },
    /// Push or pull site configuration.
    Sync {
        #[command(subcommand)]
        direction: SyncDirection,
    },
    /// Policy records from the cloud service.
    Policy {
        #[command(subcommand)]
        action: PolicyAction,
    },
    /// Run the loopback JSON API used by the companion UI.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct InitArgs {
    /// Replace an existing vault.
    #[arg(long)]
    force: bool,
    #[arg(long, default_value_t = crate::vault::DEFAULT_KDF_ITERATIONS)]
    kdf_iterations: u32,
    #[arg(long, default_value_t = crate::derivation::DEFAULT_INNER_ITERATIONS)]
    inner_iterations: u32,
    #[arg(long, default_value = "")]
    user_constant: String,
    /// Host labels kept when normalizing URLs.
    #[arg(long, default_value_t = crate::derivation::DEFAULT_SITE_LABELS)]
    site_labels: usize,
}

#[derive(Args, Debug)]
struct AddArgs {
    site: String,
    /// Treat SITE as a user-chosen site name rather than a URL.
    #[arg(long)]
    petname: bool,
    /// Policy as JSON, or @FILE.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    use_object: bool,
    #[arg(long)]
    user_name: Option<String>,
    #[arg(long)]
    no_user_constant: bool,
    #[arg(long)]
    reminder: Option<String>,
    #[arg(long, default_value_t = 0)]
    nonce: u64,
    /// Overwrite an existing registration (drops its offset).
    #[arg(long)]
    replace: bool,
}

#[derive(Args, Debug)]
struct GenArgs {
    site: String,
    #[arg(long)]
    object: Option<PathBuf>,
    #[arg(long, conflicts_with = "clip")]
    stdout: bool,
    #[arg(long)]
    clip: bool,
}

#[derive(Args, Debug)]
struct SiteArgs {
    site: String,
    #[arg(long)]
    object: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RotateArgs {
    site: String,
    #[arg(long)]
    object: Option<PathBuf>,
    /// Seed the offset generator (reproducible rotation).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct ReminderArgs {
    site: String,
    #[arg(long, conflicts_with = "clear")]
    set: Option<String>,
    #[arg(long)]
    clear: bool,
}

#[derive(Subcommand, Debug)]
enum SyncDirection {
    Push,
    Pull,
}

#[derive(Subcommand, Debug)]
enum PolicyAction {
    Fetch { domain: String },
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7870")]
    listen: SocketAddr,
    /// Permit binding a non-loopback address.
    #[arg(long)]
    allow_remote: bool,
    #[arg(long, default_value_t = 600, hide = true)]
    idle_timeout_secs: u64,
}

/// Entry point for the binary; returns the process exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("autopass: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let config = CliConfig {
        home: cli.home.clone().unwrap_or_else(store::default_home),
        server_url: cli.server_url.clone().filter(|s| !s.is_empty()),
        server_pubkey: cli.server_pubkey.clone().filter(|s| !s.is_empty()),
        clipboard_clear_seconds: cli.clear_after,
    };
    let mut prompter = Prompter::from_stdin();
    match cli.command {
        Command::Init(args) => init(&config, &mut prompter, args),
        Command::Add(args) => add(&config, args),
        Command::Gen(args) => gen(&config, &mut prompter, args),
        Command::Pin(args) => pin(&config, &mut prompter, args),
        Command::Rotate(args) => rotate(&config, &mut prompter, args),
        Command::Reminder(args) => reminder(&config, args),
        Command::List => list(&config),
        Command::Login { user_id } => login(&config, &mut prompter, &user_id),
        Command::Sync { direction } => sync(&config, direction),
        Command::Policy { action: PolicyAction::Fetch { domain } } => policy_fetch(&config, &domain),
        Command::Serve(args) => serve(&config, &mut prompter, args),
    }
}

fn read_object(path: Option<&Path>) -> Result<Option<Vec<u8>>> {
    path.map(std::fs::read).transpose().map_err(Error::from)
}

fn parse_policy(spec: &str) -> Result<PasswordPolicy> {
    match spec.strip_prefix('@') {
        Some(path) => PasswordPolicy::from_json(&std::fs::read_to_string(path)?),
        None => PasswordPolicy::from_json(spec),
    }
}

/// Policy for a newly registered site: the synced record when the service
/// (or its cache) has one, otherwise the default. Signature failures are
/// always surfaced.
pub fn policy_for_new_site(config: &CliConfig, vault: &mut Vault, key: &SiteKey) -> Result<PasswordPolicy> {
    if key.source != SiteSource::Url {
        return Ok(PasswordPolicy::default());
    }
    let Some(client) = config.sync_client()? else {
        return Ok(PasswordPolicy::default());
    };
    match client.fetch_policy(vault, key.as_str()) {
        Ok(policy) => Ok(policy),
        Err(Error::NotFound(_)) => {
            log::info!("no published policy for {key}; using the default");
            Ok(PasswordPolicy::default())
        }
        Err(Error::Unavailable(reason)) => {
            log::warn!("policy service unavailable ({reason}); using the default policy for {key}");
            Ok(PasswordPolicy::default())
        }
        Err(e) => Err(e),
    }
}

/// Registers `raw` with the synced or default policy if it is unknown.
/// Returns true when the vault changed.
pub fn ensure_site(config: &CliConfig, vault: &mut Vault, raw: &str) -> Result<bool> {
    let key = vault.resolve_site(raw)?;
    if vault.get_site(key.as_str()).is_ok() {
        return Ok(false);
    }
    let policy = policy_for_new_site(config, vault, &key)?;
    log::info!("registering {key}");
    vault.upsert_site(SiteConfig::new(key, policy))?;
    Ok(true)
}

fn init(config: &CliConfig, prompter: &mut Prompter, args: InitArgs) -> Result<()> {
    let store = config.store();
    if store.exists() && !args.force {
        return Err(Error::VaultExists(store.vault_path()));
    }
    let password = prompter.new_password("Choose a user password: ", "Repeat user password: ")?;
    let params = VaultParams {
        kdf_iterations: args.kdf_iterations,
        inner_iterations: args.inner_iterations,
        user_constant: args.user_constant,
        site_labels: args.site_labels,
    };
    let vault = Vault::init(&password, &params, &mut rand::rngs::OsRng)?;
    let lock = store.lock()?;
    store.create(&vault, args.force, &lock)?;
    println!("created vault at {}", store.vault_path().display());
    Ok(())
}

fn add(config: &CliConfig, args: AddArgs) -> Result<()> {
    let store = config.store();
    let lock = store.lock()?;
    let mut vault = store.load()?;
    let mode = if args.petname { SiteSource::UserSiteName } else { SiteSource::Url };
    let key = vault.normalize(&args.site, mode)?;
    if vault.get_site(key.as_str()).is_ok() && !args.replace {
        return Err(Error::InvalidParameter(format!("{key} is already registered; pass --replace to overwrite it")));
    }
    let policy = match &args.policy {
        Some(spec) => parse_policy(spec)?,
        None => policy_for_new_site(config, &mut vault, &key)?,
    };
    let mut site = SiteConfig::new(key, policy);
    site.input_params = InputParams {
        use_user_constant: !args.no_user_constant,
        use_user_name: args.user_name.is_some(),
        use_object: args.use_object,
        user_name: args.user_name,
        version_nonce: args.nonce,
    };
    site.reminder = args.reminder;
    let stored = vault.upsert_site(site)?;
    println!("registered {} (version {})", stored.site_key, stored.version);
    store.save(&vault, &lock)
}

fn load_or_register(config: &CliConfig, site: &str) -> Result<Vault> {
    let store = config.store();
    let vault = store.load()?;
    let key = vault.resolve_site(site)?;
    if vault.get_site(key.as_str()).is_ok() {
        return Ok(vault);
    }
    let lock = store.lock()?;
    let mut vault = store.load()?;
    if ensure_site(config, &mut vault, site)? {
        store.save(&vault, &lock)?;
    }
    Ok(vault)
}

fn gen(config: &CliConfig, prompter: &mut Prompter, args: GenArgs) -> Result<()> {
    let vault = load_or_register(config, &args.site)?;
    let object = read_object(args.object.as_deref())?;
    let password = prompter.password("User password: ")?;
    let generated = vault.generate_password(&password, &args.site, object.as_deref())?;

    let to_clipboard = args.clip || (!args.stdout && std::io::stdout().is_terminal());
    if to_clipboard {
        let mut clipboard = clipboard::open()?;
        let wait = Duration::from_secs(config.clipboard_clear_seconds);
        eprintln!("copied to clipboard; clearing in {} seconds", config.clipboard_clear_seconds);
        clipboard::copy_and_clear(clipboard.as_mut(), generated.as_str(), wait)?;
        eprintln!("clipboard cleared");
    } else {
        if std::io::stdout().is_terminal() {
            eprintln!("warning: printing a password to the terminal");
        }
        let mut out = std::io::stdout().lock();
        writeln!(out, "{}", generated.as_str())?;
    }
    Ok(())
}

fn pin(config: &CliConfig, prompter: &mut Prompter, args: SiteArgs) -> Result<()> {
    let store = config.store();
    let lock = store.lock()?;
    let mut vault = store.load()?;
    let object = read_object(args.object.as_deref())?;
    let password = prompter.password("User password: ")?;
    let desired = Password::new(prompter.new_secret("Password to pin: ", "Repeat password to pin: ")?.as_str());
    vault.pin_password(&password, &args.site, &desired, object.as_deref())?;
    store.save(&vault, &lock)?;
    println!("pinned {}", vault.resolve_site(&args.site)?);
    Ok(())
}

fn rotate(config: &CliConfig, prompter: &mut Prompter, args: RotateArgs) -> Result<()> {
    let store = config.store();
    let lock = store.lock()?;
    let mut vault = store.load()?;
    let object = read_object(args.object.as_deref())?;
    let password = prompter.password("User password: ")?;
    match args.seed {
        Some(seed) => {
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            vault.rotate_password(&password, &args.site, object.as_deref(), &mut rng)?
        }
        None => vault.rotate_password(&password, &args.site, object.as_deref(), &mut rand::rngs::OsRng)?,
    }
    store.save(&vault, &lock)?;
    println!("rotated {}", vault.resolve_site(&args.site)?);
    Ok(())
}

fn reminder(config: &CliConfig, args: ReminderArgs) -> Result<()> {
    let store = config.store();
    if args.set.is_some() || args.clear {
        let lock = store.lock()?;
        let mut vault = store.load()?;
        vault.set_reminder(&args.site, args.set)?;
        return store.save(&vault, &lock);
    }
    let vault = store.load()?;
    let site = vault.get_site(vault.resolve_site(&args.site)?.as_str())?;
    match &site.reminder {
        Some(text) => println!("{text}"),
        None => println!("(no reminder set)"),
    }
    Ok(())
}

fn list(config: &CliConfig) -> Result<()> {
    let vault = config.store().load()?;
    for site in vault.list_sites() {
        println!(
            "{}\tv{}\tlength {}{}{}",
            site.site_key,
            site.version,
            site.policy.output_len(),
            if site.offset.is_some() { "\toffset" } else { "" },
            if site.reminder.is_some() { "\treminder" } else { "" },
        );
    }
    Ok(())
}

fn login(config: &CliConfig, prompter: &mut Prompter, user_id: &str) -> Result<()> {
    let client = config
        .sync_client()?
        .ok_or_else(|| Error::InvalidParameter("no server configured (AUTOPASS_SERVER_URL)".into()))?;
    let secret = prompter.secret("Login secret: ")?;
    let token = client.login(user_id, &secret)?;
    config.save_token(&token)?;
    println!("logged in as {user_id}");
    Ok(())
}

fn sync(config: &CliConfig, direction: SyncDirection) -> Result<()> {
    let client = config
        .sync_client()?
        .ok_or_else(|| Error::InvalidParameter("no server configured (AUTOPASS_SERVER_URL)".into()))?;
    let token = config.load_token()?;
    let store = config.store();
    let lock = store.lock()?;
    let mut vault = store.load()?;
    match direction {
        SyncDirection::Pull => {
            client.sync_pull(&mut vault, &token)?;
            println!("pulled; {} sites at server version {}", vault.sites().len(), vault.sync_state.record_version);
        }
        SyncDirection::Push => {
            let version = client.sync_push(&mut vault, &token)?;
            println!("pushed; server version {version}");
        }
    }
    store.save(&vault, &lock)
}

fn policy_fetch(config: &CliConfig, domain: &str) -> Result<()> {
    let client = config
        .sync_client()?
        .ok_or_else(|| Error::InvalidParameter("no server configured (AUTOPASS_SERVER_URL)".into()))?;
    let store = config.store();
    let lock = store.lock()?;
    let mut vault = store.load()?;
    let key = vault.normalize(domain, SiteSource::Url)?;
    let policy = client.fetch_policy(&mut vault, key.as_str())?;
    store.save(&vault, &lock)?;
    println!("{}", policy.to_json());
    Ok(())
}

fn serve(config: &CliConfig, _prompter: &mut Prompter, args: ServeArgs) -> Result<()> {
    let options = daemon::DaemonOptions {
        listen: args.listen,
        allow_remote: args.allow_remote,
        idle_timeout: Duration::from_secs(args.idle_timeout_secs),
    };
    daemon::run_blocking(config.clone(), options)
}
