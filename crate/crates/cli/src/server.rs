//! Read-only HTTP API over a loaded [`Session`].
//!
//! Per-particle arrays are little-endian f32 bodies; structured results are
//! JSON. Malformed parameters give 400 and unknown particle indices or time
//! steps 404, both with a JSON `{"error": …}` body.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::str::FromStr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Query, State};
use axum::http::header::CONTENT_TYPE;
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use driftscope::{Direction, Error};
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::session::Session;

const OCTET_STREAM: &str = "application/octet-stream";
const JSON: &str = "application/json";

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, message: message.into() }
    }

    fn not_found(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::NOT_FOUND, message: message.into() }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Argument(_) | Error::Config(_) | Error::Validation(_) | Error::DegenerateNeighborhood { .. } => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError { status, message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

/// Query string as parsed key/value pairs with typed accessors.
struct Params(HashMap<String, String>);

impl Params {
    fn from(query: Result<Query<HashMap<String, String>>, QueryRejection>) -> Result<Self, ApiError> {
        query.map(|Query(q)| Params(q)).map_err(|e| ApiError::bad_request(e.body_text()))
    }

    fn opt<T: FromStr>(&self, name: &str) -> Result<Option<T>, ApiError> {
        match self.0.get(name) {
            None => Ok(None),
            Some(raw) => raw
                .trim()
                .parse()
                .map(Some)
                .map_err(|_| ApiError::bad_request(format!("invalid value '{raw}' for parameter '{name}'"))),
        }
    }

    fn req<T: FromStr>(&self, name: &str) -> Result<T, ApiError> {
        self.opt(name)?.ok_or_else(|| ApiError::bad_request(format!("missing parameter '{name}'")))
    }

    fn scale(&self, name: &str) -> Result<Option<f64>, ApiError> {
        match self.opt::<f64>(name)? {
            Some(s) if !(s.is_finite() && s >= 0.0) => {
                Err(ApiError::bad_request(format!("scale must be finite and non-negative, got {s}")))
            }
            other => Ok(other),
        }
    }

    fn indices(&self, name: &str) -> Result<Vec<usize>, ApiError> {
        let raw = self.0.get(name).ok_or_else(|| ApiError::bad_request(format!("missing parameter '{name}'")))?;
        let ids = raw
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| ApiError::bad_request(format!("'{name}' must be a comma-separated list of indices")))?;
        if ids.is_empty() {
            return Err(ApiError::bad_request(format!("'{name}' is empty")));
        }
        Ok(ids)
    }
}

fn binary(body: Bytes) -> Response {
    ([(CONTENT_TYPE, OCTET_STREAM)], body).into_response()
}

fn json(body: Bytes) -> Response {
    ([(CONTENT_TYPE, JSON)], body).into_response()
}

fn check_particles(session: &Session, ids: &[usize]) -> Result<(), ApiError> {
    let n = session.dataset().n();
    match ids.iter().find(|&&i| i >= n) {
        Some(bad) => Err(ApiError::not_found(format!("unknown particle {bad} (n={n})"))),
        None => Ok(()),
    }
}

fn check_step(session: &Session, step: usize) -> Result<(), ApiError> {
    let steps = session.dataset().steps();
    if step >= steps {
        return Err(ApiError::not_found(format!("unknown time step {step} (T={steps})")));
    }
    Ok(())
}

/// Runs an engine call off the async executor.
async fn blocking<F>(session: &Arc<Session>, f: F) -> Result<Bytes, ApiError>
where
    F: FnOnce(&Session) -> driftscope::Result<Bytes> + Send + 'static,
{
    let session = Arc::clone(session);
    tokio::task::spawn_blocking(move || f(&session))
        .await
        .map_err(|e| ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, message: e.to_string() })?
        .map_err(ApiError::from)
}

async fn meta(State(session): State<Arc<Session>>) -> Response {
    json(session.meta())
}

async fn positions(State(session): State<Arc<Session>>, q: Result<Query<HashMap<String, String>>, QueryRejection>) -> ApiResult {
    let p = Params::from(q)?;
    let step: usize = p.opt("t")?.unwrap_or(0);
    check_step(&session, step)?;
    Ok(binary(session.positions(step)))
}

async fn trajectories(
    State(session): State<Arc<Session>>,
    q: Result<Query<HashMap<String, String>>, QueryRejection>,
) -> ApiResult {
    let ids = Params::from(q)?.indices("ids")?;
    check_particles(&session, &ids)?;
    Ok(binary(session.trajectories(&ids)))
}

async fn separation(
    State(session): State<Arc<Session>>,
    q: Result<Query<HashMap<String, String>>, QueryRejection>,
) -> ApiResult {
    let p = Params::from(q)?;
    let scale = p.scale("s")?;
    let direction = match p.0.get("dir") {
        None => Direction::Forward,
        Some(raw) => raw.parse().map_err(|e: Error| ApiError::bad_request(e.to_string()))?,
    };
    let k: Option<usize> = p.opt("k")?;
    Ok(binary(blocking(&session, move |s| s.separation(scale, direction, k)).await?))
}

async fn density(State(session): State<Arc<Session>>, q: Result<Query<HashMap<String, String>>, QueryRejection>) -> ApiResult {
    let step: usize = Params::from(q)?.opt("t")?.unwrap_or(0);
    check_step(&session, step)?;
    Ok(binary(blocking(&session, move |s| s.density(step)).await?))
}

async fn field(State(session): State<Arc<Session>>, q: Result<Query<HashMap<String, String>>, QueryRejection>) -> ApiResult {
    let p = Params::from(q)?;
    let sources = p.indices("sources")?;
    check_particles(&session, &sources)?;
    let scale = p.scale("s")?.unwrap_or(0.0);
    let as_json = match p.0.get("format").map(String::as_str) {
        None | Some("binary") => false,
        Some("json") => true,
        Some(other) => return Err(ApiError::bad_request(format!("format must be binary or json, got '{other}'"))),
    };
    if as_json {
        Ok(json(blocking(&session, move |s| s.partition(&sources, scale)).await?))
    } else {
        Ok(binary(blocking(&session, move |s| s.field(&sources, scale)).await?))
    }
}

async fn neighborhood(
    State(session): State<Arc<Session>>,
    q: Result<Query<HashMap<String, String>>, QueryRejection>,
) -> ApiResult {
    let p = Params::from(q)?;
    let source: usize = p.req("source")?;
    check_particles(&session, &[source])?;
    let scale = p.scale("s")?.unwrap_or(0.0);
    let radius: f64 = p.req("radius")?;
    let max: usize = p.opt("max")?.unwrap_or(200);
    Ok(json(blocking(&session, move |s| s.neighborhood(source, scale, radius, max)).await?))
}

async fn clusters(State(session): State<Arc<Session>>, q: Result<Query<HashMap<String, String>>, QueryRejection>) -> ApiResult {
    let p = Params::from(q)?;
    let k: usize = p.req("k")?;
    let scale = p.scale("s")?.unwrap_or(0.0);
    Ok(json(blocking(&session, move |s| s.clusters(k, scale)).await?))
}

async fn unknown_route() -> ApiError {
    ApiError::not_found("no such endpoint")
}

/// The API router. `cors_origin` restricts CORS to one origin; `None`
/// allows any.
pub fn router(session: Arc<Session>, cors_origin: Option<HeaderValue>) -> Router {
    let origin = match cors_origin {
        Some(o) => AllowOrigin::list([o]),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new().allow_methods([Method::GET]).allow_origin(origin);
    Router::new()
        .route("/api/meta", get(meta))
        .route("/api/positions", get(positions))
        .route("/api/trajectories", get(trajectories))
        .route("/api/separation", get(separation))
        .route("/api/density", get(density))
        .route("/api/field", get(field))
        .route("/api/neighborhood", get(neighborhood))
        .route("/api/clusters", get(clusters))
        .fallback(unknown_route)
        .with_state(session)
        .layer(cors)
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(session: Arc<Session>, addr: SocketAddr, cors_origin: Option<HeaderValue>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    eprintln!("serving on http://{}", listener.local_addr()?);
    axum::serve(listener, router(session, cors_origin))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
