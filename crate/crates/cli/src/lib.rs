//! `vdss` command-line tools and HTTP service.

pub mod http;

use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use vdss_core::agents::remote::{RemoteChatBackend, RemoteConfig};
use vdss_core::agents::{AgentBackend, AgentRuntime, FaultInjecting, RetryPolicy, ScriptedBackend};
use vdss_core::contracts::ModeRegistry;
use vdss_core::memory::LongTermLog;
use vdss_core::replay::clinician::ClinicianProfile;
use vdss_core::replay::study::{run_regret_study, Variant, DEFAULT_STUDY_CYCLES, DEFAULT_STUDY_SEED};
use vdss_core::replay::synth::synth_trajectories;
use vdss_core::replay::{load_trajectories, replay_next_step, write_csv, write_jsonl, ReplayOptions};
use vdss_core::schemas;
use vdss_core::service::{DatasetLoadRequest, Service};
use vdss_core::workflow::{Engine, EngineConfig};

#[derive(Debug, Parser)]
#[command(name = "vdss", version, about = "Ventilator decision-support engine tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic, non-clinical trajectory cohort (.jsonl or .csv).
    Synth {
        #[arg(long, default_value_t = 50)]
        encounters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Next-step replay of a trajectory file; writes metrics JSON.
    Replay {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        no_img: bool,
        #[arg(long)]
        no_pref: bool,
        #[command(flatten)]
        faults: FaultArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regret study with a simulated clinician; writes the series as CSV.
    Regret {
        #[arg(long, default_value_t = DEFAULT_STUDY_CYCLES)]
        cycles: usize,
        #[arg(long, default_value_t = DEFAULT_STUDY_SEED)]
        seed: u64,
        #[arg(long, default_value = "full", value_parser = clap::value_parser!(VariantArg))]
        variant: VariantArg,
        /// JSON clinician profile; the built-in conservative profile otherwise.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Audit log tools.
    Audit {
        #[command(subcommand)]
        command: AuditCommand,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Log file; in-memory when omitted.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Trajectory file to load at startup.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = BackendKind::Scripted)]
        backend: BackendKind,
        #[command(flatten)]
        faults: FaultArgs,
        /// Require this bearer token on every request.
        #[arg(long, env = "VDSS_API_TOKEN")]
        token: Option<String>,
    },
    /// Write the JSON Schemas of every contract and API payload.
    Schemas {
        #[arg(long, default_value = "schemas/v1")]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum AuditCommand {
    /// Export the hash-checked evidence trail of one encounter, or of all.
    Export {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        encounter: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, Args)]
pub struct FaultArgs {
    /// Probability that an agent output is corrupted.
    #[arg(long, default_value_t = 0.0)]
    pub fault_rate: f64,
    #[arg(long, default_value_t = RetryPolicy::default().max_retries)]
    pub retries: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Scripted,
    /// OpenAI-compatible chat endpoint from VDSS_REMOTE_* variables.
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariantArg(pub Variant);

impl std::str::FromStr for VariantArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.parse().map(VariantArg)
    }
}

fn runtime(kind: BackendKind, faults: FaultArgs, seed: u64) -> Result<AgentRuntime> {
    let registry = Arc::new(ModeRegistry::default());
    let mut backend: Arc<dyn AgentBackend> = match kind {
        BackendKind::Scripted => Arc::new(ScriptedBackend::new(registry.clone())),
        BackendKind::Remote => {
            let cfg = RemoteConfig::from_env().context("VDSS_REMOTE_ENDPOINT is not set")?;
            Arc::new(RemoteChatBackend::new(cfg)?)
        }
    };
    if faults.fault_rate > 0.0 {
        backend = Arc::new(FaultInjecting::new(backend, faults.fault_rate, seed)?);
    }
    Ok(AgentRuntime::new(backend, registry, RetryPolicy::new(faults.retries, 0)?))
}

fn create(path: &PathBuf) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json(path: &PathBuf, value: &impl serde::Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    let registry = ModeRegistry::default();
    match cli.command {
        Command::Synth { encounters, seed, out } => {
            let records = synth_trajectories(encounters, seed, &registry);
            let w = create(&out)?;
            if out.extension().is_some_and(|e| e == "csv") {
                write_csv(&records, w)?;
            } else {
                write_jsonl(&records, w)?;
            }
            println!("wrote {} records for {encounters} encounters to {}", records.len(), out.display());
        }
        Command::Replay {
            data,
            no_img,
            no_pref,
            faults,
            seed,
            out,
        } => {
            let ds = load_trajectories(&data, &registry).with_context(|| format!("loading {}", data.display()))?;
            for s in &ds.skipped {
                eprintln!("skipped line {}: {}", s.line, s.error);
            }
            let opts = ReplayOptions {
                no_img,
                no_pref,
                fault_rate: faults.fault_rate,
                retries: faults.retries,
                seed,
                ..ReplayOptions::default()
            };
            let report = replay_next_step(&ds, Arc::new(registry), &opts)?;
            write_json(&out, &report)?;
            println!(
                "pairs {} mse {:.4} mae {:.4} r2 {} completion failures {}/{} ({:.2}%)",
                report.metrics.n_pairs,
                report.metrics.mse,
                report.metrics.mae,
                report.metrics.r2.map_or("n/a".into(), |r| format!("{r:.4}")),
                report.completion_failures,
                report.pairs_attempted,
                100.0 * report.completion_failure_rate
            );
        }
        Command::Regret {
            cycles,
            seed,
            variant,
            profile,
            out,
        } => {
            let profile = match profile {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?).with_context(|| format!("parsing {}", p.display()))?,
                None => ClinicianProfile::conservative(0),
            };
            let series = run_regret_study(cycles, &profile, &EngineConfig::default(), variant.0, seed)?;
            std::fs::write(&out, series.to_csv()).with_context(|| format!("writing {}", out.display()))?;
            let w = (cycles / 5).max(1);
            println!(
                "{} cycles, variant {}: mean regret first {w} {:.3}, last {w} {:.3}",
                cycles,
                variant.0,
                series.early_mean(w).unwrap_or(f64::NAN),
                series.late_mean(w).unwrap_or(f64::NAN)
            );
        }
        Command::Audit {
            command: AuditCommand::Export { log, encounter, out },
        } => {
            if !log.exists() {
                bail!("no log at {}", log.display());
            }
            let log = LongTermLog::open(&log)?;
            let trails = match encounter {
                Some(e) => vec![log.audit_trail(&e)?],
                None => {
                    let mut ids: Vec<String> = log.cycle_records()?.into_iter().map(|r| r.encounter_id).collect();
                    ids.sort();
                    ids.dedup();
                    ids.iter().map(|e| log.audit_trail(e)).collect::<Result<_, _>>()?
                }
            };
            write_json(&out, &trails)?;
        }
        Command::Serve {
            addr,
            log,
            data,
            backend,
            faults,
            token,
        } => {
            let log = match &log {
                Some(p) => LongTermLog::open(p)?,
                None => LongTermLog::in_memory(),
            };
            let config = EngineConfig::default();
            let engine = Engine::new(Arc::new(runtime(backend, faults, config.seed)?), Arc::new(Mutex::new(log)), config)?;
            let service = Service::new(engine);
            if let Some(path) = data {
                let loaded = service.load_dataset(DatasetLoadRequest {
                    path: Some(path),
                    records: None,
                })?;
                tracing::info!(encounters = loaded.encounters.len(), skipped = loaded.skipped.len(), "dataset loaded");
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                tracing::info!(%addr, "listening");
                axum::serve(listener, http::router(service, token))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
            })?;
        }
        Command::Schemas { out } => {
            let n = schemas::write_all(&out)?;
            println!("wrote {n} schemas to {}", out.display());
        }
    }
    Ok(())
}
