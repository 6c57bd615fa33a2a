//! Loopback JSON API for the companion UI.
//!
//! One unlocked session at a time. The master secret and user password are
//! held in memory until the session has been idle for `idle_timeout`, then
//! dropped (and wiped).

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use zeroize::Zeroizing;

use crate::derivation::{MasterSecret, SiteSource, UserPassword};
use crate::error::{Error, Result};
use crate::policy::Password;
use crate::vault::Vault;

use super::{ensure_site, CliConfig};

#[derive(Clone, Debug)]
pub struct DaemonOptions {
    pub listen: SocketAddr,
    pub allow_remote: bool,
    pub idle_timeout: Duration,
}

struct Session {
    master: MasterSecret,
    password: UserPassword,
    last_used: Instant,
}

pub struct DaemonState {
    config: CliConfig,
    idle_timeout: Duration,
    session: Mutex<Option<Session>>,
}

impl DaemonState {
    pub fn new(config: CliConfig, idle_timeout: Duration) -> Arc<Self> {
        Arc::new(DaemonState { config, idle_timeout, session: Mutex::new(None) })
    }

    /// Drops the session if it has been idle too long.
    fn expire(&self) {
        let mut guard = self.session.lock().expect("session mutex poisoned");
        if guard.as_ref().is_some_and(|s| s.last_used.elapsed() >= self.idle_timeout) {
            log::info!("session expired");
            *guard = None;
        }
    }

    pub fn has_session(&self) -> bool {
        self.expire();
        self.session.lock().expect("session mutex poisoned").is_some()
    }

    fn credentials(&self) -> std::result::Result<(MasterSecret, UserPassword), ApiError> {
        self.expire();
        let mut guard = self.session.lock().expect("session mutex poisoned");
        let session = guard
            .as_mut()
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "no_session", "unlock with POST /session first"))?;
        session.last_used = Instant::now();
        Ok((session.master.clone(), session.password.clone()))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

#[derive(Serialize, Deserialize, Debug, PartialEq, Eq)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::AuthenticationFailed => (StatusCode::UNAUTHORIZED, "authentication_failed"),
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::VaultMissing(_) => (StatusCode::NOT_FOUND, "vault_missing"),
            Error::InvalidSite(_) => (StatusCode::BAD_REQUEST, "invalid_site"),
            Error::InvalidParameter(_) => (StatusCode::BAD_REQUEST, "invalid_parameter"),
            Error::MissingObject => (StatusCode::BAD_REQUEST, "missing_object"),
            Error::LengthMismatch { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "length_mismatch"),
            Error::CharOutOfCharset(_) => (StatusCode::UNPROCESSABLE_ENTITY, "char_out_of_charset"),
            Error::ModulusMismatch { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "modulus_mismatch"),
            Error::UnsatisfiablePolicy(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unsatisfiable_policy"),
            Error::RetriesExhausted(_) => (StatusCode::UNPROCESSABLE_ENTITY, "retries_exhausted"),
            Error::InvariantViolation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invariant_violation"),
            Error::SignatureInvalid => (StatusCode::BAD_GATEWAY, "signature_invalid"),
            Error::Unavailable(_) | Error::Protocol(_) => (StatusCode::BAD_GATEWAY, "unavailable"),
            Error::Locked => (StatusCode::CONFLICT, "locked"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("request failed: {e}");
        }
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { code: self.code.into(), message: self.message };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;
type Shared = State<Arc<DaemonState>>;

#[derive(Deserialize)]
pub struct SessionRequest {
    pub user_password: Zeroizing<String>,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct SessionResponse {
    pub idle_timeout_seconds: u64,
}

#[derive(Deserialize)]
pub struct GenerateRequest {
    pub site: String,
    #[serde(default)]
    pub object_path: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct GenerateResponse {
    pub site: String,
    pub password: String,
}

#[derive(Deserialize)]
pub struct PinRequest {
    pub site: String,
    pub desired: Zeroizing<String>,
}

#[derive(Deserialize)]
pub struct RotateRequest {
    pub site: String,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct SiteUpdated {
    pub site: String,
    pub version: u64,
}

#[derive(Serialize, Deserialize, Debug, PartialEq, Eq)]
pub struct SiteSummary {
    pub site: String,
    pub source: SiteSource,
    pub version: u64,
    pub length: usize,
    pub has_offset: bool,
    pub has_reminder: bool,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct ReminderResponse {
    pub site: String,
    pub reminder: Option<String>,
}

async fn blocking<T, F>(f: F) -> std::result::Result<T, ApiError>
where
    F: FnOnce() -> Result<T> + Send + 'static,
    T: Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(result) => result.map_err(ApiError::from),
        Err(e) => {
            log::error!("worker task failed: {e}");
            Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "internal error"))
        }
    }
}

async fn post_session(State(state): Shared, Json(req): Json<SessionRequest>) -> ApiResult<SessionResponse> {
    let worker = state.clone();
    blocking(move || {
        let password = UserPassword::new(req.user_password.as_str())?;
        let vault = worker.config.store().load()?;
        let master = vault.unlock(&password)?;
        *worker.session.lock().expect("session mutex poisoned") =
            Some(Session { master, password, last_used: Instant::now() });
        log::info!("session unlocked");
        Ok(())
    })
    .await?;
    Ok(Json(SessionResponse { idle_timeout_seconds: state.idle_timeout.as_secs() }))
}

fn mutate<T>(config: &CliConfig, f: impl FnOnce(&mut Vault) -> Result<T>) -> Result<T> {
    let store = config.store();
    let lock = store.lock()?;
    let mut vault = store.load()?;
    let out = f(&mut vault)?;
    store.save(&vault, &lock)?;
    Ok(out)
}

async fn post_generate(State(state): Shared, Json(req): Json<GenerateRequest>) -> ApiResult<GenerateResponse> {
    let (master, password) = state.credentials()?;
    blocking(move || {
        let config = &state.config;
        let mut vault = config.store().load()?;
        let key = vault.resolve_site(&req.site)?;
        if vault.get_site(key.as_str()).is_err() {
            vault = mutate(config, |v| {
                ensure_site(config, v, &req.site)?;
                Ok(v.clone())
            })?;
        }
        let object = req.object_path.as_deref().map(std::fs::read).transpose()?;
        let generated = vault.generate_unlocked(&master, &password, &req.site, object.as_deref())?;
        Ok(GenerateResponse { site: key.value, password: generated.as_str().to_string() })
    })
    .await
    .map(Json)
}

async fn post_pin(State(state): Shared, Json(req): Json<PinRequest>) -> ApiResult<SiteUpdated> {
    let (master, password) = state.credentials()?;
    blocking(move || {
        mutate(&state.config, |vault| {
            let desired = Password::new(req.desired.as_str());
            vault.pin_unlocked(&master, &password, &req.site, &desired, None)?;
            let key = vault.resolve_site(&req.site)?;
            Ok(SiteUpdated { version: vault.get_site(key.as_str())?.version, site: key.value })
        })
    })
    .await
    .map(Json)
}

async fn post_rotate(State(state): Shared, Json(req): Json<RotateRequest>) -> ApiResult<SiteUpdated> {
    let (master, password) = state.credentials()?;
    blocking(move || {
        mutate(&state.config, |vault| {
            vault.rotate_unlocked(&master, &password, &req.site, None, &mut rand::rngs::OsRng)?;
            let key = vault.resolve_site(&req.site)?;
            Ok(SiteUpdated { version: vault.get_site(key.as_str())?.version, site: key.value })
        })
    })
    .await
    .map(Json)
}

async fn get_sites(State(state): Shared) -> ApiResult<Vec<SiteSummary>> {
    state.credentials()?;
    blocking(move || {
        let vault = state.config.store().load()?;
        Ok(vault
            .list_sites()
            .into_iter()
            .map(|s| SiteSummary {
                site: s.site_key.value.clone(),
                source: s.site_key.source,
                version: s.version,
                length: s.policy.output_len(),
                has_offset: s.offset.is_some(),
                has_reminder: s.reminder.is_some(),
            })
            .collect())
    })
    .await
    .map(Json)
}

async fn get_reminder(State(state): Shared, Path(site): Path<String>) -> ApiResult<ReminderResponse> {
    state.credentials()?;
    blocking(move || {
        let vault = state.config.store().load()?;
        let key = vault.resolve_site(&site)?;
        let reminder = vault.get_site(key.as_str())?.reminder.clone();
        Ok(ReminderResponse { site: key.value, reminder })
    })
    .await
    .map(Json)
}

pub fn router(state: Arc<DaemonState>) -> Router {
    Router::new()
        .route("/session", post(post_session))
        .route("/generate", post(post_generate))
        .route("/pin", post(post_pin))
        .route("/rotate", post(post_rotate))
        .route("/sites", get(get_sites))
        .route("/reminder/{site}", get(get_reminder))
        .with_state(state)
}

pub fn check_bind(addr: &SocketAddr, allow_remote: bool) -> Result<()> {
    if addr.ip().is_loopback() || allow_remote {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("refusing to bind non-loopback address {addr} without --allow-remote")))
    }
}

async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<DaemonState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let reaper = state.clone();
    let period = (state.idle_timeout / 4).clamp(Duration::from_millis(50), Duration::from_secs(30));
    let sweep = tokio::spawn(async move {
        loop {
            tokio::time::sleep(period).await;
            reaper.expire();
        }
    });
    let result = axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await;
    sweep.abort();
    result
}

/// Runs the daemon until interrupted.
pub fn run_blocking(config: CliConfig, options: DaemonOptions) -> Result<()> {
    check_bind(&options.listen, options.allow_remote)?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(options.listen).await?;
        println!("listening on {}", listener.local_addr()?);
        let state = DaemonState::new(config, options.idle_timeout);
        serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok(())
    })
}

/// A daemon on its own runtime thread; stops on drop.
pub struct DaemonHandle {
    addr: SocketAddr,
    state: Arc<DaemonState>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl DaemonHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn state(&self) -> &Arc<DaemonState> {
        &self.state
    }
}

impl Drop for DaemonHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

pub fn spawn(config: CliConfig, options: DaemonOptions) -> Result<DaemonHandle> {
    check_bind(&options.listen, options.allow_remote)?;
    let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind(options.listen))?;
    let addr = listener.local_addr()?;
    let state = DaemonState::new(config, options.idle_timeout);
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let served = state.clone();
    let thread = std::thread::spawn(move || {
        runtime.block_on(async move {
            if let Err(e) = serve(listener, served, async move {
                let _ = rx.await;
            })
            .await
            {
                log::error!("daemon stopped: {e}");
            }
        });
    });
    Ok(DaemonHandle { addr, state, shutdown: Some(tx), thread: Some(thread) })
}
