use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::Parser;
use gatekeeper_server::{AccessService, ServiceConfig};

/// Gatekeeper organization server.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Address to listen on.
    #[arg(long, env = "GATEKEEPER_LISTEN", default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    /// Directory holding credentials, directory, event log and photos.
    #[arg(long, env = "GATEKEEPER_DATA_DIR", default_value = "gatekeeper-data")]
    data_dir: PathBuf,
    /// Admin bearer token. Generated and stored on first start if omitted.
    #[arg(long, env = "GATEKEEPER_ADMIN_TOKEN")]
    admin_token: Option<String>,
    /// Android package written to the Android Application Record.
    #[arg(long, env = "GATEKEEPER_APP_ID", default_value = gatekeeper_core::DEFAULT_ANDROID_APP_ID)]
    app_id: String,
    /// Universal link written to the tag's URI record.
    #[arg(long, env = "GATEKEEPER_UNIVERSAL_LINK", default_value = gatekeeper_core::DEFAULT_UNIVERSAL_LINK)]
    universal_link: String,
    /// Accept the virtual-time header on check-ins. Never enable in production.
    #[arg(long, env = "GATEKEEPER_TEST_MODE")]
    test_mode: bool,
    /// Seconds between feed heartbeat frames.
    #[arg(long, default_value_t = 15)]
    heartbeat_secs: u64,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let args = Args::parse();

    let mut config = ServiceConfig::new(&args.data_dir);
    config.admin_token = args.admin_token.clone();
    config.android_app_id = args.app_id;
    config.universal_link = args.universal_link;
    config.test_mode = args.test_mode;
    config.heartbeat = Duration::from_secs(args.heartbeat_secs.max(1));

    let service = tokio::task::spawn_blocking(move || AccessService::open(config)).await??;
    tracing::info!(server_guid = %service.server_guid(), data_dir = %args.data_dir.display(), "organization loaded");
    if args.admin_token.is_none() {
        tracing::info!(
            "admin token is stored in {}",
            args.data_dir.join("credentials.json").display()
        );
    }
    if args.test_mode {
        tracing::warn!("test mode: virtual time header accepted");
    }

    let listener = tokio::net::TcpListener::bind(args.listen).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    gatekeeper_server::serve(listener, Arc::new(service), async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    Ok(())
}
