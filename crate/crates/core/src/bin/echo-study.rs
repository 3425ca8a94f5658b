use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use chrono::Utc;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use echo_core::genai::{MockProvider, Provider, RemoteProvider};
use echo_core::reporting::ReportFormat;
use echo_core::service::{serve, AppState, ServiceSettings, DEFAULT_PORT};
use echo_core::study::{run_all, RunOptions, Study};
use echo_core::{Error, Result};

#[derive(Parser)]
#[command(name = "echo-study", version, about = "Stakeholder harm studies: vignettes, annotation, aggregation and inference")]
struct Cli {
    /// Study directory.
    #[arg(long, global = true, default_value = ".")]
    study: PathBuf,
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = ProviderKind::Mock)]
    provider: ProviderKind,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderKind {
    Mock,
    Remote,
}

#[derive(Subcommand)]
enum Command {
    /// Scaffold a study from a bundled config name or a config file.
    Init { template: String },
    #[command(subcommand)]
    Stakeholders(StakeholderCmd),
    #[command(subcommand)]
    Vignettes(VignetteCmd),
    #[command(subcommand)]
    Annotate(AnnotateCmd),
    /// Build the descriptive matrix from the annotation store.
    Aggregate {
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        tolerance: Option<u32>,
    },
    /// Run the homogeneity tests and build the inferential matrix.
    Analyze {
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        z: Option<f64>,
        /// Rebuild the descriptive matrix if the store changed since aggregate.
        #[arg(long)]
        refresh: bool,
    },
    Report {
        #[arg(long, default_value = "md")]
        format: String,
    },
    /// Serve the survey API (and a UI directory, if given).
    Serve {
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        /// Require this bearer token on results endpoints.
        #[arg(long, env = "ECHO_RESULTS_TOKEN")]
        results_token: Option<String>,
    },
    /// Whole pipeline into an empty study directory with fixture annotations.
    RunAll {
        #[arg(long, default_value = "diagnosis")]
        template: String,
        #[arg(long, default_value = "md")]
        format: String,
        /// Add one LLM annotation per vignette.
        #[arg(long)]
        with_llm: bool,
    },
}

#[derive(Subcommand)]
enum StakeholderCmd {
    Generate,
    Curate {
        /// Comma-separated candidate ids to keep, in order.
        #[arg(long, value_delimiter = ',', required = true)]
        keep: Vec<String>,
    },
}

#[derive(Subcommand)]
enum VignetteCmd {
    Build,
}

#[derive(Subcommand)]
enum AnnotateCmd {
    Llm,
    Import { csv: PathBuf },
    /// Load the bundled reference annotations for the study's domain.
    Fixtures,
    Export {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn provider(kind: ProviderKind, seed: u64, study: Option<&Study>) -> Result<Box<dyn Provider>> {
    match kind {
        ProviderKind::Mock => Ok(Box::new(MockProvider::new(seed))),
        ProviderKind::Remote => {
            let settings = study
                .and_then(|s| s.config.provider.as_ref())
                .ok_or_else(|| Error::Invalid {
                    field: "provider".into(),
                    rule: "study.json has no provider endpoint".into(),
                })?;
            Ok(Box::new(RemoteProvider::from_env(
                &settings.endpoint,
                &settings.model,
                settings.rate_limit_per_min,
            )?))
        }
    }
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let dir = cli.study.as_path();
    match cli.command {
        Command::Init { template } => {
            let s = Study::init(dir, &template)?;
            Ok(json!({ "study_id": s.config.study_id, "dir": dir.display().to_string() }))
        }
        Command::Stakeholders(StakeholderCmd::Generate) => {
            let s = Study::open(dir)?;
            let set = s.generate_stakeholders(provider(cli.provider, cli.seed, Some(&s))?.as_ref())?;
            Ok(json!({ "candidates": set.ids() }))
        }
        Command::Stakeholders(StakeholderCmd::Curate { keep }) => {
            let mut s = Study::open(dir)?;
            let keep: Vec<&str> = keep.iter().map(String::as_str).collect();
            s.curate(&keep)?;
            Ok(json!({ "stakeholders": keep }))
        }
        Command::Vignettes(VignetteCmd::Build) => {
            let s = Study::open(dir)?;
            match s.build_vignettes(provider(cli.provider, cli.seed, Some(&s))?.as_ref(), cli.seed)? {
                Ok(n) => Ok(json!({ "vignettes": n })),
                Err(failures) => Err(Error::CoverageGap(failures.into_iter().map(|f| f.vignette_id).collect())),
            }
        }
        Command::Annotate(cmd) => {
            let s = Study::open(dir)?;
            match cmd {
                AnnotateCmd::Llm => {
                    let p = provider(cli.provider, cli.seed, Some(&s))?;
                    let (added, failures) = s.annotate_llm(p.as_ref(), Utc::now())?;
                    Ok(json!({ "added": added, "failures": failures }))
                }
                AnnotateCmd::Import { csv } => Ok(serde_json::to_value(s.import_csv(&csv)?).expect("summary")),
                AnnotateCmd::Fixtures => Ok(json!({ "added": s.load_fixtures()? })),
                AnnotateCmd::Export { out } => {
                    let text = s.export_csv()?;
                    match out {
                        Some(path) => {
                            std::fs::write(&path, text).map_err(|e| Error::Io { path: path.clone(), source: e })?;
                            Ok(json!({ "written": path.display().to_string() }))
                        }
                        None => {
                            print!("{text}");
                            Ok(serde_json::Value::Null)
                        }
                    }
                }
            }
        }
        Command::Aggregate { tau, tolerance } => {
            let mut s = Study::open(dir)?;
            if tau.is_some() || tolerance.is_some() {
                s.config.params.tau = tau.unwrap_or(s.config.params.tau);
                s.config.params.tolerance_pp = tolerance.unwrap_or(s.config.params.tolerance_pp);
                s.save_config()?;
            }
            let dem = s.aggregate()?;
            Ok(json!({ "cells": dem.individual.len() + dem.representational.len(), "snapshot_digest": dem.snapshot_digest }))
        }
        Command::Analyze { alpha, z, refresh } => {
            let mut s = Study::open(dir)?;
            if alpha.is_some() || z.is_some() {
                s.config.params.alpha_omnibus = alpha.unwrap_or(s.config.params.alpha_omnibus);
                s.config.params.z_threshold = z.unwrap_or(s.config.params.z_threshold);
                s.save_config()?;
            }
            let (analysis, iem) = s.analyze(refresh)?;
            let omnibus: Vec<_> = analysis
                .stakeholders
                .iter()
                .map(|a| json!({ "stakeholder": a.omnibus.stakeholder_id, "chi2": a.omnibus.chi2, "dof": a.omnibus.dof, "p": a.omnibus.p_value, "cramers_v": a.omnibus.cramers_v }))
                .collect();
            Ok(json!({ "omnibus": omnibus, "significant": iem.significant_stakeholders, "snapshot_digest": analysis.snapshot_digest }))
        }
        Command::Report { format } => {
            let s = Study::open(dir)?;
            let docs = s.report(format.parse::<ReportFormat>()?)?;
            let files: Vec<_> = docs.iter().map(|d| d.path.display().to_string()).collect();
            Ok(json!({ "files": files }))
        }
        Command::Serve {
            port,
            host,
            static_dir,
            results_token,
        } => {
            let s = Study::open(dir)?;
            let settings = ServiceSettings {
                seed: cli.seed,
                static_dir,
                results_token,
                ..ServiceSettings::default()
            };
            let state = Arc::new(AppState::from_study(&s, settings)?);
            let addr: SocketAddr = format!("{host}:{port}").parse().map_err(|e| Error::Invalid {
                field: "host".into(),
                rule: format!("{e}"),
            })?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Io { path: "tokio".into(), source: e })?;
            rt.block_on(serve(state, addr))?;
            Ok(serde_json::Value::Null)
        }
        Command::RunAll {
            template,
            format,
            with_llm,
        } => {
            let format = format.parse::<ReportFormat>()?;
            let p = provider(cli.provider, cli.seed, None)?;
            let summary = run_all(
                dir,
                p.as_ref(),
                &RunOptions {
                    template: &template,
                    seed: cli.seed,
                    format,
                    with_llm,
                },
            )?;
            Ok(serde_json::to_value(summary).expect("summary"))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(serde_json::Value::Null) => ExitCode::SUCCESS,
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
