use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use chrono::{DateTime, SecondsFormat, Utc};
use seqlabel_core::fsutil;
use seqlabel_core::model::{load_manifest, DatasetManifest, IGNORE};
use seqlabel_core::pipeline::{
    check_annotation, evaluate_dir, propagate_to_workspace, sequence_status, sha256_hex,
    MetricsOptions, SequenceStatus,
};
use seqlabel_core::sequencer::{load_sequences, Sequence, SequenceSet};
use seqlabel_core::synthgen::class_color;
use seqlabel_core::workspace::Workspace;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::AppState;

type St = State<Arc<AppState>>;

const LEGEND_LINK: &str = "</api/v1/legend>; rel=\"describedby\"";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub id: String,
    pub size: usize,
    pub representative_id: String,
    pub status: SequenceStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceDetail {
    pub id: String,
    pub size: usize,
    pub representative_id: String,
    pub image_ids: Vec<String>,
    pub class_labels: BTreeSet<u8>,
    pub status: SequenceStatus,
    pub session: Option<AnnotationSession>,
}

/// Digest of one merged mask's report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDigest {
    pub image_id: String,
    pub pixels_from_sequence: u64,
    pub pixels_from_cam: u64,
    pub ignored_pixels: u64,
    pub report_sha256: String,
}

/// State of one sequence's annotation, stored under `reports/sessions/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSession {
    pub sequence_id: String,
    pub status: SequenceStatus,
    pub annotated_at: String,
    pub annotation_sha256: String,
    pub propagation_summary: Vec<ReportDigest>,
    pub warnings: Vec<String>,
    pub failures: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JobState {
    Running { sequence_id: String },
    Done { session: AnnotationSession },
    Failed { error: String, message: String },
}

fn load_context(ws: &Workspace) -> Result<(DatasetManifest, SequenceSet), ApiError> {
    let path = ws.sequences_path();
    if !path.exists() {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "no_sequences",
            "workspace has no sequences.json; run `seqlabel sequence` first",
        ));
    }
    let manifest = load_manifest(&ws.manifest_path())?;
    let seqs = load_sequences(&path, &manifest)?;
    Ok((manifest, seqs))
}

fn find_sequence(seqs: &SequenceSet, id: &str) -> Result<Sequence, ApiError> {
    seqs.get(id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("unknown sequence {id:?}")))
}

fn read_session(ws: &Workspace, id: &str) -> Option<AnnotationSession> {
    let bytes = std::fs::read(ws.session_path(id)).ok()?;
    serde_json::from_slice(&bytes).ok()
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

pub async fn list_sequences(State(st): St) -> Result<Json<Vec<SequenceEntry>>, ApiError> {
    blocking(move || {
        let (_, seqs) = load_context(&st.ws)?;
        Ok(Json(
            seqs.sequences
                .iter()
                .map(|s| SequenceEntry {
                    id: s.id.clone(),
                    size: s.len(),
                    representative_id: s.representative_id.clone(),
                    status: sequence_status(&st.ws, s),
                })
                .collect(),
        ))
    })
    .await
}

pub async fn get_sequence(
    State(st): St,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SequenceDetail>, ApiError> {
    blocking(move || {
        let (_, seqs) = load_context(&st.ws)?;
        let s = find_sequence(&seqs, &id)?;
        Ok(Json(SequenceDetail {
            size: s.len(),
            status: sequence_status(&st.ws, &s),
            session: read_session(&st.ws, &s.id),
            id: s.id,
            representative_id: s.representative_id,
            image_ids: s.image_ids,
            class_labels: s.class_labels,
        }))
    })
    .await
}

fn file_response(path: &Path, content_type: &'static str, legend: bool) -> Result<Response, ApiError> {
    let bytes = std::fs::read(path)
        .map_err(|_| ApiError::not_found(format!("{} not found", path.display())))?;
    let mut resp = ([(header::CONTENT_TYPE, content_type)], bytes).into_response();
    if legend {
        resp.headers_mut()
            .insert(header::LINK, HeaderValue::from_static(LEGEND_LINK));
    }
    Ok(resp)
}

/// Resolves `{id}/images/{image_id}`, insisting the image belongs to the sequence.
fn member(ws: &Workspace, id: &str, image_id: &str) -> Result<(DatasetManifest, String), ApiError> {
    let (manifest, seqs) = load_context(ws)?;
    let s = find_sequence(&seqs, id)?;
    if !s.contains(image_id) {
        return Err(ApiError::not_found(format!(
            "image {image_id:?} is not in sequence {id:?}"
        )));
    }
    Ok((manifest, image_id.to_string()))
}

pub async fn get_image(
    State(st): St,
    UrlPath((id, image_id)): UrlPath<(String, String)>,
) -> Result<Response, ApiError> {
    blocking(move || {
        let (manifest, image_id) = member(&st.ws, &id, &image_id)?;
        let rec = manifest
            .get(&image_id)
            .ok_or_else(|| ApiError::not_found(format!("unknown image {image_id:?}")))?;
        let ext = rec
            .image_path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        let ct = match ext.as_deref() {
            Some("jpg" | "jpeg") => "image/jpeg",
            Some("png") => "image/png",
            _ => "application/octet-stream",
        };
        file_response(&rec.image_path, ct, false)
    })
    .await
}

pub async fn get_campseudo(
    State(st): St,
    UrlPath((id, image_id)): UrlPath<(String, String)>,
) -> Result<Response, ApiError> {
    blocking(move || {
        let (_, image_id) = member(&st.ws, &id, &image_id)?;
        file_response(&st.ws.campseudo_path(&image_id), "image/png", true)
    })
    .await
}

pub async fn get_merged(
    State(st): St,
    UrlPath((id, image_id)): UrlPath<(String, String)>,
) -> Result<Response, ApiError> {
    blocking(move || {
        let (_, image_id) = member(&st.ws, &id, &image_id)?;
        file_response(&st.ws.merged_path(&image_id), "image/png", true)
    })
    .await
}

pub async fn get_annotation(
    State(st): St,
    UrlPath(id): UrlPath<String>,
) -> Result<Response, ApiError> {
    blocking(move || {
        let (_, seqs) = load_context(&st.ws)?;
        let s = find_sequence(&seqs, &id)?;
        file_response(&st.ws.annotation_path(&s.id), "image/png", true)
    })
    .await
}

#[derive(Serialize)]
struct LegendEntry {
    index: u8,
    name: String,
    color: String,
}

#[derive(Serialize)]
pub struct Legend {
    classes: Vec<LegendEntry>,
    ignore: LegendEntry,
}

fn hex_color(c: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

pub async fn legend(State(st): St) -> Result<Json<Legend>, ApiError> {
    blocking(move || {
        let manifest = load_manifest(&st.ws.manifest_path())?;
        let classes = manifest
            .classes
            .names()
            .iter()
            .enumerate()
            .map(|(i, name)| LegendEntry {
                index: i as u8,
                name: name.clone(),
                color: hex_color(class_color(i as u8)),
            })
            .collect();
        Ok(Json(Legend {
            classes,
            ignore: LegendEntry {
                index: IGNORE,
                name: "ignore".into(),
                color: "#ffffff".into(),
            },
        }))
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct MetricsQuery {
    against: Option<String>,
}

pub async fn metrics(State(st): St, Query(q): Query<MetricsQuery>) -> Result<Response, ApiError> {
    if let Some(a) = q.against.as_deref().filter(|a| *a != "gt") {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "bad_query",
            format!("unsupported comparison target {a:?}; only \"gt\" is available"),
        ));
    }
    blocking(move || {
        let manifest = load_manifest(&st.ws.manifest_path())?;
        let report = evaluate_dir(&manifest, &st.ws.merged_dir(), &MetricsOptions::default())?;
        let body = fsutil::to_json_bytes(&report);
        Ok(([(header::CONTENT_TYPE, "application/json")], body).into_response())
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct PutQuery {
    #[serde(rename = "async")]
    run_async: Option<String>,
}

impl PutQuery {
    fn is_async(&self) -> bool {
        matches!(self.run_async.as_deref(), Some("1" | "true"))
    }
}

/// Stores the annotation, propagates it and records the session. Runs with
/// both the in-process writer guard and the workspace lock held.
fn store_and_propagate(
    st: &AppState,
    manifest: &DatasetManifest,
    seq: &Sequence,
    bytes: &[u8],
) -> Result<AnnotationSession, ApiError> {
    let annotated_at: DateTime<Utc> = Utc::now();
    fsutil::write_atomic(&st.ws.annotation_path(&seq.id), bytes)?;
    let summary = propagate_to_workspace(&st.ws, manifest, seq, bytes, &st.propagate)?;
    let mut digests = Vec::with_capacity(summary.records.len());
    for r in &summary.records {
        digests.push(ReportDigest {
            image_id: r.image_id.clone(),
            pixels_from_sequence: r.report.pixels_from_sequence,
            pixels_from_cam: r.report.pixels_from_cam,
            ignored_pixels: r.report.ignored_pixels,
            report_sha256: sha256_hex(&fsutil::to_json_bytes(r)),
        });
    }
    let session = AnnotationSession {
        sequence_id: seq.id.clone(),
        status: sequence_status(&st.ws, seq),
        annotated_at: annotated_at.to_rfc3339_opts(SecondsFormat::Millis, true),
        annotation_sha256: sha256_hex(bytes),
        propagation_summary: digests,
        warnings: summary.warnings,
        failures: summary.failures,
    };
    fsutil::write_json(&st.ws.session_path(&seq.id), &session)?;
    Ok(session)
}

pub async fn put_annotation(
    State(st): St,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<PutQuery>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let ctx = {
        let st = st.clone();
        let body = body.clone();
        blocking(move || {
            let (manifest, seqs) = load_context(&st.ws)?;
            let seq = find_sequence(&seqs, &id)?;
            check_annotation(&manifest, &seq, &body)?;
            Ok((manifest, seq))
        })
        .await?
    };
    let (manifest, seq) = ctx;

    // Queue behind other uploads, then claim the workspace against other processes.
    let guard = st.writer.clone().lock_owned().await;
    let lock = st.ws.lock()?;

    if q.is_async() {
        let job = st.next_job.fetch_add(1, Ordering::SeqCst);
        st.jobs.lock().expect("job table").insert(
            job,
            JobState::Running {
                sequence_id: seq.id.clone(),
            },
        );
        let task_state = st.clone();
        tokio::spawn(async move {
            let s = task_state.clone();
            let result = blocking(move || {
                let out = store_and_propagate(&s, &manifest, &seq, &body);
                drop(lock);
                out
            })
            .await;
            drop(guard);
            let state = match result {
                Ok(session) => JobState::Done { session },
                Err(e) => JobState::Failed {
                    error: e.code,
                    message: e.message,
                },
            };
            task_state.jobs.lock().expect("job table").insert(job, state);
        });
        let poll = format!("/api/v1/jobs/{job}");
        let mut resp = (
            StatusCode::ACCEPTED,
            Json(serde_json::json!({ "job_id": job, "poll_url": poll })),
        )
            .into_response();
        resp.headers_mut().insert(
            header::LOCATION,
            HeaderValue::from_str(&poll).expect("ascii url"),
        );
        return Ok(resp);
    }

    let s = st.clone();
    let session = blocking(move || {
        let out = store_and_propagate(&s, &manifest, &seq, &body);
        drop(lock);
        out
    })
    .await;
    drop(guard);
    Ok(Json(session?).into_response())
}

pub async fn get_job(
    State(st): St,
    UrlPath(job_id): UrlPath<u64>,
) -> Result<Json<JobState>, ApiError> {
    st.jobs
        .lock()
        .expect("job table")
        .get(&job_id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown job {job_id}")))
}
