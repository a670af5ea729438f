use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use dvd_core::bench::{calibrated_rate, emit_report, run_benchmark, LoadSpec, ReportFormat, TIERS};
use dvd_core::rl::{read_fixtures, run_fixtures, run_loss_suite, LossSuiteReport, FD_STEP, GRAD_TOLERANCE};
use dvd_core::serving::{
    write_trace, DeployOptions, Engine, LanguageServer, MonolithServer, ServerHandle, ServingConfig, Topology,
    VisionServer, VisionServerOptions,
};
use dvd_core::vico::{fit_flash_router, router_accuracy, save_checkpoint, train_router, FlashConfig, RouterExample};

#[derive(Parser)]
#[command(name = "dvd", version, about = "Decoupled vision-language serving toolkit")]
struct Cli {
    /// TOML config; the DVD_CONFIG environment variable takes precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the vision server, streaming features to the language server.
    ServeVision {
        #[arg(long)]
        listen: Option<String>,
        /// Feature port of the language server.
        #[arg(long)]
        downstream: Option<String>,
        /// `dvd` keeps every tile at 1/4; `dvd_vir` routes per tile.
        #[arg(long)]
        topology: Option<Topology>,
    },
    /// Run the language server.
    ServeLang {
        #[arg(long)]
        feature_listen: Option<String>,
        #[arg(long)]
        client_listen: Option<String>,
    },
    /// Run the single-process baseline.
    ServeMonolith {
        #[arg(long)]
        listen: Option<String>,
    },
    /// Open-loop load against in-process deployments; writes a CSV report.
    Bench {
        /// Repeat or comma-separate; defaults to all three.
        #[arg(long, value_delimiter = ',')]
        topology: Vec<Topology>,
        #[arg(long, default_value_t = 896)]
        tier: u32,
        /// Requests per second; defaults to twice the measured monolith capacity.
        #[arg(long)]
        rate: Option<f64>,
        /// Seconds of offered load per topology.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSONL span trace; overrides `trace_path` from the config.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Fit a router on labeled examples and write a checkpoint.
    TrainRouter {
        /// JSONL of `{"features": [..], "label": 0|1}`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        epochs: usize,
        #[arg(long, default_value_t = 2.0)]
        lr: f64,
    },
    /// Write a router dataset labeled by the consistency-trained toy model.
    RouterData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    CheckLosses {
        /// JSONL fixtures; generated from `--seed` when absent.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = dvd_core::rl::DEFAULT_FIXTURES_PER_LOSS)]
        per_loss: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// `Ok(false)` means the command ran but a check failed.
fn run(cli: Cli) -> Result<bool> {
    let config = ServingConfig::resolve(cli.config.as_deref()).context("loading config")?;
    match cli.command {
        Command::ServeVision {
            listen,
            downstream,
            topology,
        } => {
            let topology = topology.unwrap_or(config.topology);
            if !topology.is_split() {
                bail!("serve-vision needs topology dvd or dvd_vir, got {topology}");
            }
            let model = Arc::new(config.build_model()?);
            let policy = config.rate_policy(topology, &model.vision)?;
            let options = VisionServerOptions {
                workers: config.vision.workers,
                batch_tiles: config.vision.batch_tiles,
                batch_window: Duration::from_secs_f64(config.vision.batch_window_ms / 1e3),
                window: config.transport.window,
                nodelay: config.transport.nodelay,
            };
            let handle = VisionServer::start(
                listen.unwrap_or(config.vision.listen.clone()),
                downstream.unwrap_or(config.language.feature_listen.clone()),
                Engine::new(model, config.profile),
                policy,
                options,
            )?;
            serve(handle)
        }
        Command::ServeLang {
            feature_listen,
            client_listen,
        } => {
            let model = Arc::new(config.build_model()?);
            let handle = LanguageServer::start(
                feature_listen.unwrap_or(config.language.feature_listen.clone()),
                client_listen.unwrap_or(config.language.client_listen.clone()),
                Engine::new(model, config.profile),
                config.transport.nodelay,
            )?;
            serve(handle)
        }
        Command::ServeMonolith { listen } => {
            let model = Arc::new(config.build_model()?);
            let handle = MonolithServer::start(
                listen.unwrap_or(config.monolith.listen.clone()),
                Engine::new(model, config.profile),
                config.transport.nodelay,
            )?;
            serve(handle)
        }
        Command::Bench {
            topology,
            tier,
            rate,
            duration,
            seed,
            out,
            trace,
        } => bench(&config, topology, tier, rate, duration, seed, out, trace),
        Command::TrainRouter { data, out, epochs, lr } => {
            let examples = read_examples(&data)?;
            let params = train_router(&examples, epochs, lr)?;
            let acc = router_accuracy(&params, &examples, config.router.threshold)?;
            save_checkpoint(&out, &params).with_context(|| format!("writing {}", out.display()))?;
            println!("trained on {} examples, accuracy {acc:.3}; wrote {}", examples.len(), out.display());
            Ok(true)
        }
        Command::RouterData { out } => {
            let vision = config.build_vision()?;
            let art = fit_flash_router(
                &vision,
                &FlashConfig {
                    seed: config.seed,
                    ..FlashConfig::default()
                },
            )?;
            let mut w = BufWriter::new(File::create(&out).with_context(|| format!("creating {}", out.display()))?);
            for e in &art.examples {
                serde_json::to_writer(&mut w, e)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
            println!("wrote {} examples (tau {:.4}) to {}", art.examples.len(), art.tau, out.display());
            Ok(true)
        }
        Command::CheckLosses {
            fixtures,
            seed,
            per_loss,
        } => {
            let report = match fixtures {
                Some(path) => {
                    let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
                    run_fixtures(&read_fixtures(BufReader::new(file))?, FD_STEP, GRAD_TOLERANCE)?
                }
                None => run_loss_suite(seed, per_loss)?,
            };
            Ok(print_losses(&report))
        }
    }
}

fn serve(handle: ServerHandle) -> Result<bool> {
    for addr in handle.addrs() {
        info!("listening on {addr}");
    }
    handle.wait();
    Ok(true)
}

fn read_examples(path: &Path) -> Result<Vec<RouterExample>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn print_losses(report: &LossSuiteReport) -> bool {
    for (loss, n, worst) in report.summary() {
        let verdict = if worst <= report.tolerance { "pass" } else { "FAIL" };
        println!("{verdict} {loss:<5} {n:>3} fixtures, max rel err {worst:.3e}");
    }
    let ok = report.passed();
    println!("{} (tolerance {:.0e})", if ok { "all passed" } else { "gradient check failed" }, report.tolerance);
    ok
}

#[allow(clippy::too_many_arguments)]
fn bench(
    config: &ServingConfig,
    topologies: Vec<Topology>,
    tier: u32,
    rate: Option<f64>,
    duration: f64,
    seed: u64,
    out: Option<PathBuf>,
    trace: Option<PathBuf>,
) -> Result<bool> {
    if !TIERS.contains(&tier) {
        bail!("--tier must be one of {TIERS:?}");
    }
    if !(duration > 0.0 && duration.is_finite()) {
        bail!("--duration must be positive");
    }
    let topologies = if topologies.is_empty() { Topology::ALL.to_vec() } else { topologies };
    let model = Arc::new(config.build_model()?);
    let rate = match rate {
        Some(r) => r,
        None => {
            let r = calibrated_rate(model.clone(), config.profile, tier)?;
            info!("calibrated offered load: {r:.2} req/s");
            r
        }
    };
    let options = topologies
        .iter()
        .map(|&t| Ok((t, DeployOptions::from_config(config, t, &model)?)))
        .collect::<Result<Vec<_>>>()?;
    let spec = LoadSpec::new(rate, Duration::from_secs_f64(duration), tier, seed);
    let runs = run_benchmark(&spec, &options, model)?;
    let reports: Vec<_> = runs.iter().map(|r| r.report.clone()).collect();
    print!("{}", emit_report(&reports, ReportFormat::Table)?);
    if let Some(path) = out {
        std::fs::write(&path, emit_report(&reports, ReportFormat::Csv)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = trace.or(config.trace_path.clone()) {
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        for run in &runs {
            write_trace(&mut w, &run.spans)?;
        }
        w.flush()?;
    }
    Ok(reports.iter().all(|r| r.is_valid()))
}
