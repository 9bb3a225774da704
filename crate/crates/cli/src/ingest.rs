//! Upload endpoint for traces exported by the browser recorder.
//!
//! `PUT /traces/<id>` takes a trace document in the trace file format. A
//! valid trace becomes the next version of `<id>` in the repository layout
//! under the configured root (201); re-uploading the latest content is a
//! no-op (200). Validation errors give 422 with the findings, malformed JSON
//! gives 400. `GET /health` answers 200.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, put};
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::Mutex;

use tracer_core::repo::{cached_manifest, digest_of, publish, RepoError, TraceRef};
use tracer_core::trace::{parse_trace_lenient, validate_trace, Finding, Severity, TraceError};

#[derive(Clone)]
struct Ingest {
    root: Arc<PathBuf>,
    /// Publishing reads and rewrites the manifest.
    write: Arc<Mutex<()>>,
}

pub fn router(repo_root: PathBuf) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/traces/{id}", put(put_trace))
        .with_state(Ingest {
            root: Arc::new(repo_root),
            write: Arc::new(Mutex::new(())),
        })
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    repo_root: PathBuf,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(repo_root))
        .with_graceful_shutdown(shutdown)
        .await
}

pub async fn bind(addr: SocketAddr) -> std::io::Result<TcpListener> {
    TcpListener::bind(addr).await
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

fn error(field: &str, message: impl Into<String>) -> Finding {
    Finding {
        severity: Severity::Error,
        field: field.to_string(),
        message: message.into(),
    }
}

fn rejected(status: StatusCode, findings: Vec<Finding>) -> (StatusCode, Json<Value>) {
    (status, Json(json!({ "findings": findings })))
}

async fn put_trace(State(st): State<Ingest>, Path(id): Path<String>, body: Bytes) -> (StatusCode, Json<Value>) {
    let trace = match parse_trace_lenient(&body) {
        Ok(t) => t,
        Err(TraceError::Syntax(m)) => return rejected(StatusCode::BAD_REQUEST, vec![error("$", m)]),
        Err(TraceError::Schema { field, reason }) => {
            return rejected(StatusCode::UNPROCESSABLE_ENTITY, vec![error(&field, reason)])
        }
        Err(e @ TraceError::Version(_)) => {
            return rejected(StatusCode::UNPROCESSABLE_ENTITY, vec![error("trace_version", e.to_string())])
        }
    };
    let mut report = validate_trace(&trace);
    if trace.id != id {
        report
            .findings
            .push(error("id", format!("document id {:?} differs from upload path {id:?}", trace.id)));
    }
    if report.has_errors() {
        return rejected(StatusCode::UNPROCESSABLE_ENTITY, report.findings);
    }

    let _guard = st.write.lock().await;
    let root = st.root.clone();
    let stored = tokio::task::spawn_blocking(move || store(&root, &trace)).await;
    match stored {
        Ok(Ok((r, created))) => {
            let status = if created { StatusCode::CREATED } else { StatusCode::OK };
            (status, Json(json!({ "trace": r, "findings": report.findings })))
        }
        Ok(Err(RepoError::Layout(m))) => rejected(StatusCode::CONFLICT, vec![error("$", m)]),
        Ok(Err(e)) => rejected(StatusCode::INTERNAL_SERVER_ERROR, vec![error("$", e.to_string())]),
        Err(e) => rejected(StatusCode::INTERNAL_SERVER_ERROR, vec![error("$", e.to_string())]),
    }
}

fn store(root: &std::path::Path, trace: &tracer_core::trace::Trace) -> Result<(TraceRef, bool), RepoError> {
    let manifest = cached_manifest(root)?;
    let latest = manifest.traces.iter().filter(|r| r.id == trace.id).max_by_key(|r| r.version);
    if let Some(l) = latest {
        if l.digest == digest_of(trace) {
            return Ok((l.clone(), false));
        }
    }
    let next = latest.map_or(1, |l| l.version + 1);
    Ok((publish(root, trace, next)?, true))
}
