//! HTTP service for guided calibration against a virtual camera.
//!
//! Each session hides a camera sampled from its seed. Clients post board
//! poses; the service renders the detected corners, runs them through the
//! session state machine and answers with the guidance to draw next.
//!
//! Routes:
//!
//! | method | path | response |
//! |---|---|---|
//! | `POST` | `/v1/session` | `201` with id and image size; `400` on an invalid config |
//! | `GET` | `/v1/session/{id}` | current [`GuidanceSnapshot`] |
//! | `POST` | `/v1/session/{id}/board-pose` | snapshot after the frame; `422` if nothing is visible |
//! | `GET` | `/v1/session/{id}/events` | server-sent event per accepted frame |
//! | `GET` | `/v1/session/{id}/reveal` | truth and estimate; `409` before convergence |
//!
//! Unknown ids give `404`.

mod api;
mod rig;

pub use api::{router, ApiError, AppState, Created, PoseRequest};
pub use rig::{GuidanceSnapshot, Reveal, RigConfig, RigSession, VirtualRig, FRAME_STREAM};

/// Serve the API on `addr` until ctrl-c.
pub async fn serve(addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::default()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
