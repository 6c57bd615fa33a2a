//! Cloud configuration service: signed policy records and per-user site
//! configuration with compare-and-set updates.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use autopass::sync::server::{self, ServiceState};
use autopass::sync::store::{JsonFileStore, Store};
use autopass::sync::{EnvelopeSigner, PolicyRecord};
use autopass::{Error, PasswordPolicy, Result};
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "autopass-server", version, about = "AutoPass configuration service")]
struct Args {
    #[arg(long, default_value = "127.0.0.1:7871", env = "AUTOPASS_SERVER_LISTEN")]
    listen: SocketAddr,
    /// JSON file holding policies, users and site records.
    #[arg(long, default_value = "autopass-server.json", env = "AUTOPASS_SERVER_STORE", global = true)]
    store: PathBuf,
    /// Ed25519 seed file (base64).
    #[arg(long, default_value = "autopass-server.key", env = "AUTOPASS_SERVER_KEY", global = true)]
    signing_key: PathBuf,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Create the signing key and print its public half.
    Keygen {
        #[arg(long)]
        force: bool,
    },
    /// Print the public key clients must pin.
    Pubkey,
    /// Register a user and print a fresh login secret.
    AddUser { user_id: String },
    /// Publish or replace the policy for a domain.
    PutPolicy { domain: String, policy: PathBuf },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let args = Args::parse();
    if let Err(e) = run(args) {
        eprintln!("autopass-server: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(args: Args) -> Result<()> {
    match args.command {
        Some(Command::Keygen { force }) => {
            if args.signing_key.exists() && !force {
                return Err(Error::InvalidParameter(format!(
                    "{} exists; pass --force to replace it",
                    args.signing_key.display()
                )));
            }
            let signer = EnvelopeSigner::generate(&mut rand::rngs::OsRng);
            signer.save(&args.signing_key)?;
            println!("{}", signer.public_key().to_base64());
        }
        Some(Command::Pubkey) => {
            println!("{}", EnvelopeSigner::load(&args.signing_key)?.public_key().to_base64());
        }
        Some(Command::AddUser { user_id }) => {
            let store = JsonFileStore::open(&args.store)?;
            let (secret, hash) = server::new_login_secret();
            store.register_user(&user_id, hash)?;
            println!("{secret}");
        }
        Some(Command::PutPolicy { domain, policy }) => {
            let store = JsonFileStore::open(&args.store)?;
            let domain = domain.trim().to_ascii_lowercase();
            let policy = PasswordPolicy::from_json(&std::fs::read_to_string(policy)?)?;
            let record_version = store.policy(&domain).map_or(1, |r| r.record_version + 1);
            store.put_policy(PolicyRecord { domain: domain.clone(), policy, record_version })?;
            println!("{domain} at version {record_version}");
        }
        None => serve(&args)?,
    }
    Ok(())
}

fn serve(args: &Args) -> Result<()> {
    let signer = EnvelopeSigner::load(&args.signing_key)?;
    let store: Arc<dyn Store> = Arc::new(JsonFileStore::open(&args.store)?);
    log::info!("signing key id {}", signer.key_id());
    let state = ServiceState::new(store, signer, server::system_clock());
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.listen).await?;
        println!("listening on {}", listener.local_addr()?);
        server::serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok(())
    })
}
