//! `iotecs`: validate specs, run stress tests against clouds, serve the
//! baseline cloud, query the expected-sends oracle and render reports.
//!
//! Exit codes: 0 success, 1 validation failure, 2 runtime failure.

mod commands;

use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "iotecs", version, about = "Edge-to-cloud IoT load simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ProtocolArg {
    Udp,
    Tcp,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Check a spec and print its diagnostics.
    Validate {
        spec: PathBuf,
        /// Treat warnings, including unsupported protocols, as errors.
        #[arg(long)]
        strict: bool,
    },
    /// Run a stress test: one process per simulation node, repeated.
    Run {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        reps: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Receive window after the last step (default: two steps).
        #[arg(long, value_parser = commands::duration_arg)]
        drain: Option<u64>,
        /// Start a local baseline cloud for every cloud the topology uses.
        #[arg(long)]
        auto_cloud: bool,
        /// Compute time of auto-started clouds.
        #[arg(long, value_parser = commands::duration_or_zero_arg, default_value = "0")]
        compute: u64,
        /// Worker threads of auto-started clouds.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// UDP receive buffer of auto-started clouds, in bytes.
        #[arg(long)]
        udp_buf: Option<usize>,
        /// Control endpoint of a cloud, `NAME=PORT` (default: data port + 1).
        #[arg(long = "control-port", value_parser = commands::control_port_arg)]
        control_ports: Vec<(String, u16)>,
        /// Lead time between launching nodes and step 0.
        #[arg(long, value_parser = commands::duration_arg, default_value = "500ms")]
        start_delay: u64,
    },
    /// Serve the baseline echo cloud until STOP.
    Cloud {
        #[arg(long, value_enum, default_value = "udp")]
        protocol: ProtocolArg,
        #[arg(long)]
        port: u16,
        /// Default: data port + 1.
        #[arg(long)]
        control_port: Option<u16>,
        #[arg(long, value_parser = commands::duration_or_zero_arg, default_value = "0")]
        compute: u64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// UDP receive buffer size in bytes.
        #[arg(long)]
        udp_buf: Option<usize>,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
    },
    /// Print the packets each edge device is scheduled to send.
    Expected { spec: PathBuf },
    /// Largest step that divides every interval, e.g. `4s 6s` gives `2s`.
    RecommendStep {
        #[arg(required = true, num_args = 1.., value_parser = commands::duration_arg)]
        intervals: Vec<u64>,
    },
    /// Aggregate the run results under a directory.
    Report {
        dir: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Write per-node job files and Docker/VM/shell launch descriptors.
    Deploy {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run one simulation node from a job file (used by `run`).
    #[command(hide = true)]
    Node {
        #[arg(long)]
        job: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { spec, strict } => commands::validate(&spec, strict),
        Command::Run {
            spec,
            out,
            reps,
            seed,
            drain,
            auto_cloud,
            compute,
            workers,
            udp_buf,
            control_ports,
            start_delay,
        } => commands::run(commands::RunArgs {
            spec,
            out,
            reps,
            seed,
            drain,
            auto_cloud,
            compute,
            workers,
            udp_buf,
            control_ports,
            start_delay,
        }),
        Command::Cloud {
            protocol,
            port,
            control_port,
            compute,
            workers,
            udp_buf,
            bind,
        } => commands::cloud(
            protocol,
            port,
            control_port,
            compute,
            workers,
            udp_buf,
            bind,
        ),
        Command::Expected { spec } => commands::expected(&spec),
        Command::RecommendStep { intervals } => commands::recommend_step(&intervals),
        Command::Report { dir, format } => commands::report(&dir, format),
        Command::Deploy { spec, out, seed } => commands::deploy(&spec, &out, seed),
        Command::Node { job, out } => commands::node(&job, &out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
