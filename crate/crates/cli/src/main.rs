use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand};
use gatekeeper_cli::client::{read_photo, ApiClient, CheckIn};
use gatekeeper_cli::scenario::{self, Scenario};
use gatekeeper_cli::stress::{self, StressConfig};
use gatekeeper_cli::tagfile::{describe, load_chip, provision_chip, read_gate_payload, save_chip};
use gatekeeper_core::{TagStandard, UserId};

const EXIT_DENIED: u8 = 2;

#[derive(Parser)]
#[command(name = "gatekeeper", version, about = "Gate tag and phone simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Server {
    /// Base URL of the organization server.
    #[arg(long, env = "GATEKEEPER_SERVER", default_value = "http://127.0.0.1:8080")]
    server: String,
}

#[derive(clap::Args)]
struct Admin {
    #[command(flatten)]
    server: Server,
    #[arg(long, env = "GATEKEEPER_ADMIN_TOKEN")]
    admin_token: String,
}

#[derive(Subcommand)]
enum Command {
    /// Register a gate and write its tag image.
    ProvisionTag {
        #[command(flatten)]
        admin: Admin,
        #[arg(long)]
        name: String,
        #[arg(long, default_value = "")]
        location: String,
        /// ntag213 or ntag216.
        #[arg(long, default_value = "ntag213")]
        standard: TagStandard,
        #[arg(long)]
        out: PathBuf,
        /// Overwrite an existing image.
        #[arg(long)]
        force: bool,
    },
    /// Print the records and a hexdump of a tag image.
    DumpTag { tag: PathBuf },
    /// Register a user and print the device token.
    RegisterUser {
        #[command(flatten)]
        admin: Admin,
        #[arg(long)]
        first: String,
        #[arg(long)]
        last: String,
        #[arg(long)]
        photo: PathBuf,
    },
    /// Create or replace the policy for a user at a gate.
    SetPolicy {
        #[command(flatten)]
        admin: Admin,
        #[arg(long)]
        user: u64,
        #[arg(long)]
        gate: u32,
        #[arg(long)]
        disabled: bool,
        /// RFC 3339 expiry time.
        #[arg(long)]
        expires: DateTime<Utc>,
    },
    /// Tap a tag and submit a check-in. Exits 0 when granted, 2 when denied.
    Checkin {
        #[command(flatten)]
        server: Server,
        #[arg(long, env = "GATEKEEPER_DEVICE_TOKEN")]
        device_token: String,
        #[arg(long)]
        tag: PathBuf,
        #[arg(long)]
        photo: PathBuf,
        /// Decision time override; the server must run in test mode.
        #[arg(long)]
        at: Option<DateTime<Utc>>,
    },
    /// Replay a scenario file against a server in test mode.
    RunScenario {
        #[command(flatten)]
        admin: Admin,
        scenario: PathBuf,
    },
    /// Fire concurrent check-ins and audit the event sequence.
    Stress {
        #[command(flatten)]
        admin: Admin,
        #[arg(long, default_value_t = 10)]
        parallel: usize,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long)]
        photo: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::ProvisionTag {
            admin,
            name,
            location,
            standard,
            out,
            force,
        } => {
            if out.exists() && !force {
                anyhow::bail!("{} already exists; pass --force to overwrite", out.display());
            }
            let client = ApiClient::new(&admin.server.server)?;
            let reg = client.register_gate(&admin.admin_token, &name, &location)?;
            let chip = provision_chip(&reg.payload()?, standard, reg.password()?, None)?;
            save_chip(&chip, &out, force)?;
            println!("gate {} \"{}\" written to {}", reg.gate_id, reg.gate.name, out.display());
            print!("{}", describe(&chip)?);
        }
        Command::DumpTag { tag } => {
            print!("{}", describe(&load_chip(&tag)?)?);
        }
        Command::RegisterUser {
            admin,
            first,
            last,
            photo,
        } => {
            let bytes = read_photo(&photo).with_context(|| format!("photo {}", photo.display()))?;
            let client = ApiClient::new(&admin.server.server)?;
            let reg = client.register_user(&admin.admin_token, &first, &last, &bytes)?;
            println!("user_id {}", reg.user.user_id);
            println!("device_token {}", reg.device_token);
        }
        Command::SetPolicy {
            admin,
            user,
            gate,
            disabled,
            expires,
        } => {
            let client = ApiClient::new(&admin.server.server)?;
            let p = client.upsert_policy(&admin.admin_token, UserId(user), gate, !disabled, Some(expires))?;
            println!("{}", serde_json::to_string(&p)?);
        }
        Command::Checkin {
            server,
            device_token,
            tag,
            photo,
            at,
        } => {
            let bytes = read_photo(&photo).with_context(|| format!("photo {}", photo.display()))?;
            let payload = read_gate_payload(&load_chip(&tag)?)?;
            let client = ApiClient::new(&server.server)?;
            let resp = client.check_in(
                &device_token,
                &CheckIn {
                    guid: payload.server_guid.to_hex(),
                    gate_id: payload.gate_id,
                    photo: &bytes,
                    client_time: Some(Utc::now()),
                    virtual_time: at,
                },
            )?;
            println!("{} (event {})", resp.decision, resp.event_seq);
            if !resp.decision.is_granted() {
                return Ok(ExitCode::from(EXIT_DENIED));
            }
        }
        Command::RunScenario { admin, scenario } => {
            let parsed = Scenario::load(&scenario)?;
            let client = ApiClient::new(&admin.server.server)?;
            let run = scenario::run(&parsed, &client, &admin.admin_token, |r| println!("{r}"))?;
            println!("{}", run.summary());
            if !run.passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Stress {
            admin,
            parallel,
            count,
            photo,
        } => {
            let bytes = read_photo(&photo).with_context(|| format!("photo {}", photo.display()))?;
            let client = ApiClient::new(&admin.server.server)?;
            let cfg = StressConfig {
                parallel,
                count,
                photo: bytes,
                virtual_time: None,
            };
            let report = stress::run(&client, &admin.admin_token, &cfg)?;
            println!("{}", report.summary());
            for e in report.errors.iter().take(5) {
                println!("  {e}");
            }
            if !report.errors.is_empty() || !report.gap_free() {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
