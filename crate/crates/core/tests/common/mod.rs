#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use autopass::sync::server::{self, ServerHandle, ServiceState};
use autopass::sync::store::{JsonFileStore, Store};
use autopass::sync::{EnvelopeSigner, PinnedKey, PolicyRecord, SyncClient};
use autopass::{PasswordPolicy, UserPassword, Vault, VaultParams};
use rand::SeedableRng;

pub const PASSWORD: &str = "correct horse";

pub fn fast_params() -> VaultParams {
    VaultParams { kdf_iterations: 16, inner_iterations: 16, ..Default::default() }
}

pub fn password() -> UserPassword {
    UserPassword::new(PASSWORD).unwrap()
}

pub fn fast_vault(seed: u64) -> Vault {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    Vault::init(&password(), &fast_params(), &mut rng).unwrap()
}

pub fn loopback() -> SocketAddr {
    "127.0.0.1:0".parse().unwrap()
}

/// A sync service on an ephemeral port with a settable clock.
pub struct Service {
    pub handle: ServerHandle,
    pub store: Arc<JsonFileStore>,
    pub pinned: PinnedKey,
    pub now: Arc<AtomicU64>,
}

impl Service {
    pub fn start() -> Service {
        Self::start_with(Arc::new(JsonFileStore::in_memory()))
    }

    pub fn start_with(store: Arc<JsonFileStore>) -> Service {
        let signer = EnvelopeSigner::generate(&mut rand::rngs::OsRng);
        let pinned = signer.public_key();
        let now = Arc::new(AtomicU64::new(1_700_000_000));
        let clock_now = now.clone();
        let clock: server::Clock = Arc::new(move || clock_now.load(Ordering::SeqCst));
        let state = ServiceState::new(store.clone() as Arc<dyn Store>, signer, clock);
        let handle = server::spawn(loopback(), state).unwrap();
        Service { handle, store, pinned, now }
    }

    pub fn client(&self) -> SyncClient {
        SyncClient::new(&self.handle.url(), self.pinned.clone()).unwrap()
    }

    pub fn add_user(&self, user_id: &str) -> String {
        let (secret, hash) = server::new_login_secret();
        self.store.register_user(user_id, hash).unwrap();
        secret
    }

    pub fn put_policy(&self, domain: &str, policy: PasswordPolicy) {
        self.store.put_policy(PolicyRecord { domain: domain.into(), policy, record_version: 1 }).unwrap();
    }

    pub fn advance(&self, seconds: u64) {
        self.now.fetch_add(seconds, Ordering::SeqCst);
    }
}

/// An address nothing listens on.
pub fn dead_url() -> String {
    let listener = std::net::TcpListener::bind(loopback()).unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}")
}

/// Serves an arbitrary router on its own runtime thread; stops on drop.
pub struct RouterHandle {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl RouterHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for RouterHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn spawn_router(router: axum::Router) -> RouterHandle {
    let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(1).enable_all().build().unwrap();
    let listener = runtime.block_on(tokio::net::TcpListener::bind(loopback())).unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        runtime.block_on(async move {
            axum::serve(listener, router)
                .with_graceful_shutdown(async move {
                    let _ = rx.await;
                })
                .await
                .unwrap();
        })
    });
    RouterHandle { addr, shutdown: Some(tx), thread: Some(thread) }
}
