//! HTTP front end of the cloud service.
//!
//! Policies are public. User records require a bearer token issued by
//! `/v1/login` for that same user. Everything returned as data is wrapped
//! in a [`SignedEnvelope`].

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::b64;
use crate::error::{Error, Result};
use crate::sync::envelope::{EnvelopeSigner, SignedEnvelope};
use crate::sync::records::{AccessToken, ErrorBody, LoginRequest, PutSitesRequest, PutSitesResponse, UserRecord};
use crate::sync::store::Store;

pub const TOKEN_TTL: Duration = Duration::from_secs(30 * 24 * 60 * 60);

/// Seconds since the Unix epoch; injectable so tests can move time.
pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| crate::vault::now_unix().max(0) as u64)
}

pub fn hash_login_secret(secret: &str) -> [u8; 32] {
    Sha256::digest(secret.as_bytes()).into()
}

/// Creates a random login secret and its stored hash.
pub fn new_login_secret() -> (String, [u8; 32]) {
    let mut raw = [0u8; 24];
    rand::rngs::OsRng.fill_bytes(&mut raw);
    let secret = b64::encode(raw);
    let hash = hash_login_secret(&secret);
    (secret, hash)
}

pub struct ServiceState {
    store: Arc<dyn Store>,
    signer: EnvelopeSigner,
    clock: Clock,
    tokens: Mutex<HashMap<String, AccessToken>>,
}

impl ServiceState {
    pub fn new(store: Arc<dyn Store>, signer: EnvelopeSigner, clock: Clock) -> Arc<Self> {
        Arc::new(ServiceState { store, signer, clock, tokens: Mutex::new(HashMap::new()) })
    }

    fn now(&self) -> u64 {
        (self.clock)()
    }

    fn sign<T: serde::Serialize>(&self, value: &T) -> SignedEnvelope {
        self.signer.sign_json(value, self.now())
    }

    fn issue_token(&self, user_id: &str) -> AccessToken {
        let mut raw = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut raw);
        let token = AccessToken {
            token: b64::encode(raw),
            user_id: user_id.to_string(),
            expires_at: self.now() + TOKEN_TTL.as_secs(),
        };
        self.tokens.lock().expect("token mutex poisoned").insert(token.token.clone(), token.clone());
        token
    }

    fn authorize(&self, headers: &HeaderMap, user_id: &str) -> Result<(), ApiError> {
        let bearer = headers
            .get(axum::http::header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or(ApiError::unauthorized())?;
        let mut tokens = self.tokens.lock().expect("token mutex poisoned");
        let token = tokens.get(bearer).cloned().ok_or(ApiError::unauthorized())?;
        if token.expires_at <= self.now() {
            tokens.remove(bearer);
            return Err(ApiError::unauthorized());
        }
        if token.user_id != user_id {
            return Err(ApiError::new(StatusCode::FORBIDDEN, "forbidden", "token belongs to another user"));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, body: ErrorBody { code: code.into(), message: message.into(), current_version: None } }
    }

    fn unauthorized() -> Self {
        ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing, unknown or expired token")
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::VersionConflict { current } => {
                let mut err = ApiError::new(StatusCode::CONFLICT, "version_conflict", e.to_string());
                err.body.current_version = Some(current);
                err
            }
            Error::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, "not_found", e.to_string()),
            Error::UnsatisfiablePolicy(_) | Error::InvariantViolation(_) | Error::Malformed(_) => {
                ApiError::new(StatusCode::BAD_REQUEST, "invalid_record", e.to_string())
            }
            other => {
                log::error!("request failed: {other}");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "internal error")
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type Shared = State<Arc<ServiceState>>;

async fn get_policy(State(state): Shared, Path(domain): Path<String>) -> Result<Json<SignedEnvelope>, ApiError> {
    let domain = domain.trim().to_ascii_lowercase();
    let record = state
        .store
        .policy(&domain)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", "unknown domain"))?;
    Ok(Json(state.sign(&record)))
}

async fn login(State(state): Shared, Json(request): Json<LoginRequest>) -> Result<Json<AccessToken>, ApiError> {
    let presented = hash_login_secret(&request.login_secret);
    match state.store.login_hash(&request.user_id) {
        Some(stored) if constant_time_eq(&stored, &presented) => {
            log::info!("login for user {}", request.user_id);
            Ok(Json(state.issue_token(&request.user_id)))
        }
        _ => Err(ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "bad credentials")),
    }
}

fn constant_time_eq(a: &[u8; 32], b: &[u8; 32]) -> bool {
    a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn get_sites(
    State(state): Shared,
    Path(user_id): Path<String>,
    headers: HeaderMap,
) -> Result<Json<SignedEnvelope>, ApiError> {
    state.authorize(&headers, &user_id)?;
    let record = state.store.user_record(&user_id).unwrap_or_else(|| UserRecord::empty(&user_id));
    Ok(Json(state.sign(&record)))
}

async fn put_sites(
    State(state): Shared,
    Path(user_id): Path<String>,
    headers: HeaderMap,
    Json(request): Json<PutSitesRequest>,
) -> Result<Json<PutSitesResponse>, ApiError> {
    state.authorize(&headers, &user_id)?;
    if request.record.user_id != user_id {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_record", "user id mismatch"));
    }
    for (key, site) in &request.record.sites {
        if key != &site.site_key.value {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_record", "site key mismatch"));
        }
        site.validate()?;
    }
    let new_version = state.store.compare_and_set(request.record, request.expected_version)?;
    log::info!("user {user_id} sites now at version {new_version}");
    Ok(Json(PutSitesResponse { new_version }))
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/v1/policies/{domain}", get(get_policy))
        .route("/v1/login", post(login))
        .route("/v1/user/{id}/sites", get(get_sites).put(put_sites))
        .with_state(state)
}

/// Runs the service on an already bound listener until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<ServiceState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// A service running on its own runtime thread; stops on drop.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

pub fn spawn(addr: SocketAddr, state: Arc<ServiceState>) -> Result<ServerHandle> {
    let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind(addr))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        runtime.block_on(async move {
            if let Err(e) = serve(listener, state, async move {
                let _ = rx.await;
            })
            .await
            {
                log::error!("sync service stopped: {e}");
            }
        });
    });
    Ok(ServerHandle { addr, shutdown: Some(tx), thread: Some(thread) })
}
