//! Gatekeeper organization server.
//!
//! [`service::AccessService`] holds the logic; [`http::router`] exposes it as
//! a REST API plus a newline-delimited JSON event feed.

pub mod feed;
pub mod http;
pub mod service;
pub mod storage;

use std::net::SocketAddr;
use std::sync::Arc;

pub use service::{AccessService, ServiceConfig, ServiceError};

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    service: Arc<AccessService>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, http::router(service))
        .with_graceful_shutdown(shutdown)
        .await
}

/// A server running on its own runtime thread, for embedding in tests and
/// tools. Dropping the handle shuts it down.
pub struct BackgroundServer {
    pub addr: SocketAddr,
    pub service: Arc<AccessService>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl BackgroundServer {
    /// Binds `127.0.0.1` on an ephemeral port.
    pub fn start(config: ServiceConfig) -> anyhow::Result<Self> {
        let service = Arc::new(AccessService::open(config)?);
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .build()?;
        let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let svc = service.clone();
        let thread = std::thread::Builder::new()
            .name("gatekeeper-server".into())
            .spawn(move || {
                runtime.block_on(serve(listener, svc, async {
                    let _ = rx.await;
                }))
            })?;
        Ok(Self {
            addr,
            service,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}
