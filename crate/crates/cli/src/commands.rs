use std::collections::BTreeMap;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use iotecs_core::cloud::{self, CloudConfig, CloudHandle};
use iotecs_core::dsl::units::{format_nanos, parse_duration_or_zero};
use iotecs_core::dsl::{parse, parse_duration_ns, DiagCode, Diagnostic, Protocol, Severity};
use iotecs_core::orchestrator::{
    emit_deploy_descriptors, load_results, render_csv, render_json, run_simulation, Launcher,
    RunError, RunOptions,
};
use iotecs_core::runtime::run_node_job;
use iotecs_core::topology::{self, expected_sends, expected_sends_json, ResolvedTopology};

use crate::{Format, ProtocolArg};

pub fn duration_arg(s: &str) -> Result<u64, String> {
    parse_duration_ns(s).map_err(|e| e.to_string())
}

pub fn duration_or_zero_arg(s: &str) -> Result<u64, String> {
    parse_duration_or_zero(s)
        .map(|d| d.as_nanos())
        .map_err(|e| e.to_string())
}

pub fn control_port_arg(s: &str) -> Result<(String, u16), String> {
    let (name, port) = s.split_once('=').ok_or("expected NAME=PORT")?;
    let port = port.parse().map_err(|_| format!("bad port `{port}`"))?;
    Ok((name.to_string(), port))
}

/// How MQTT edges are treated.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    /// `validate`: unsupported protocol is only a warning.
    Lenient,
    /// `validate --strict`: every warning is an error.
    Strict,
    /// Anything that executes the topology.
    Execute,
}

struct Checked {
    topo: Option<ResolvedTopology>,
    diags: Vec<Diagnostic>,
}

impl Checked {
    fn failed(&self) -> bool {
        self.topo.is_none() || self.diags.iter().any(Diagnostic::is_error)
    }
}

fn check(path: &Path, mode: Mode) -> Result<Checked> {
    let src =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let ast = match parse(&src) {
        Ok(a) => a,
        Err(diags) => return Ok(Checked { topo: None, diags }),
    };
    let topo = match topology::resolve(&ast) {
        Ok(t) => t,
        Err(diags) => return Ok(Checked { topo: None, diags }),
    };
    let mut diags = topology::validate(&topo);
    for d in &mut diags {
        match mode {
            Mode::Lenient if d.code == DiagCode::UnsupportedProtocol => {
                d.severity = Severity::Warning
            }
            Mode::Strict => d.severity = Severity::Error,
            _ => {}
        }
    }
    Ok(Checked {
        topo: Some(topo),
        diags,
    })
}

fn print_diags(path: &Path, diags: &[Diagnostic]) {
    let file = path.display().to_string();
    for d in diags {
        eprintln!("{}", d.render(&file));
    }
}

/// Parses, resolves and validates; `Err(code)` when the file is unusable.
fn load(path: &Path, mode: Mode) -> Result<std::result::Result<ResolvedTopology, ExitCode>> {
    let c = check(path, mode)?;
    print_diags(path, &c.diags);
    if c.failed() {
        return Ok(Err(ExitCode::from(1)));
    }
    Ok(Ok(c.topo.expect("checked")))
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

pub fn validate(spec: &Path, strict: bool) -> Result<ExitCode> {
    let c = check(spec, if strict { Mode::Strict } else { Mode::Lenient })?;
    print_diags(spec, &c.diags);
    let mut summary = serde_json::json!({
        "ok": !c.failed(),
        "errors": c.diags.iter().filter(|d| d.is_error()).count(),
        "warnings": c.diags.iter().filter(|d| !d.is_error()).count(),
    });
    if let Some(t) = &c.topo {
        summary["nodes"] = t.nodes.len().into();
        summary["edge_devices"] = t.edge_count().into();
        summary["devices"] = t.device_count().into();
        summary["step_count"] = t.step_count.into();
        summary["digest"] = t.digest().into();
    }
    print_json(&summary)?;
    Ok(if c.failed() {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

pub struct RunArgs {
    pub spec: PathBuf,
    pub out: PathBuf,
    pub reps: u32,
    pub seed: u64,
    pub drain: Option<u64>,
    pub auto_cloud: bool,
    pub compute: u64,
    pub workers: usize,
    pub udp_buf: Option<usize>,
    pub control_ports: Vec<(String, u16)>,
    pub start_delay: u64,
}

fn start_clouds(
    topo: &ResolvedTopology,
    args: &RunArgs,
    control: &BTreeMap<String, SocketAddr>,
) -> Result<Vec<CloudHandle>> {
    let mut protocols: BTreeMap<&str, (&iotecs_core::dsl::CloudSpec, Protocol)> = BTreeMap::new();
    for (_, e) in topo.edges() {
        let entry = protocols
            .entry(e.cloud.name.as_str())
            .or_insert((&e.cloud, e.protocol));
        if entry.1 != e.protocol {
            bail!(
                "cloud `{}` is used over both {} and {}; start it manually",
                e.cloud.name,
                entry.1,
                e.protocol
            );
        }
    }
    let mut handles = Vec::new();
    for (name, (spec, protocol)) in protocols {
        let mut cfg = CloudConfig::new(protocol, spec.port);
        cfg.bind = IpAddr::V4(spec.ip);
        if let Some(addr) = control.get(name) {
            cfg.control_port = addr.port();
        }
        cfg.compute_ns = args.compute;
        cfg.workers = args.workers;
        cfg.udp_recv_buf = args.udp_buf;
        let h = cloud::start(&cfg).with_context(|| format!("starting cloud `{name}`"))?;
        eprintln!(
            "cloud `{name}`: {protocol} on {}, control {}",
            h.data_addr(),
            h.control_addr()
        );
        handles.push(h);
    }
    Ok(handles)
}

pub fn run(args: RunArgs) -> Result<ExitCode> {
    let topo = match load(&args.spec, Mode::Execute)? {
        Ok(t) => t,
        Err(code) => return Ok(code),
    };
    let mut control = BTreeMap::new();
    for (name, port) in &args.control_ports {
        let Some(c) = topo.clouds.iter().find(|c| &c.name == name) else {
            bail!("--control-port names unknown cloud `{name}`");
        };
        control.insert(name.clone(), SocketAddr::from((c.ip, *port)));
    }
    let clouds = if args.auto_cloud {
        start_clouds(&topo, &args, &control)?
    } else {
        Vec::new()
    };

    let program = std::env::current_exe().context("locating the iotecs binary")?;
    let mut opts = RunOptions::new(
        &args.out,
        Launcher::Process {
            program,
            args: vec!["node".into()],
        },
    );
    opts.repetitions = args.reps;
    opts.drain_ns = args.drain;
    opts.seed = args.seed;
    opts.control_addrs = control;
    opts.start_delay = Duration::from_nanos(args.start_delay);

    let result = run_simulation(&topo, &opts);
    for c in clouds {
        c.shutdown();
    }
    let report = match result {
        Ok(r) => r,
        Err(e @ RunError::ControlUnreachable { .. }) => {
            return Err(anyhow::Error::new(e).context(
                "cloud control channel unreachable; start the cloud with `iotecs cloud` or pass --auto-cloud",
            ))
        }
        Err(e) => return Err(e.into()),
    };
    let reports = [report];
    std::fs::write(args.out.join("report.json"), render_json(&reports))
        .context("writing report.json")?;
    std::fs::write(args.out.join("report.csv"), render_csv(&reports))
        .context("writing report.csv")?;
    let [report] = reports;
    print_json(&serde_json::json!({
        "out": args.out,
        "repetitions": report.repetitions,
        "failed_repetitions": report.failed_repetitions,
        "sim_drop": report.sim_drop,
        "cloud_drop": report.cloud_drop,
        "trans_time_mean_ns": report.trans_time_mean_ns,
        "trans_time_mode": report.trans_time_mode,
    }))?;
    if report.failed_repetitions > 0 {
        for f in &report.failures {
            eprintln!("failed repetition: {f}");
        }
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

pub fn cloud(
    protocol: ProtocolArg,
    port: u16,
    control_port: Option<u16>,
    compute: u64,
    workers: usize,
    udp_buf: Option<usize>,
    bind: IpAddr,
) -> Result<ExitCode> {
    let protocol = match protocol {
        ProtocolArg::Udp => Protocol::Udp,
        ProtocolArg::Tcp => Protocol::Tcp,
    };
    let mut cfg = CloudConfig::new(protocol, port);
    cfg.bind = bind;
    if let Some(c) = control_port {
        cfg.control_port = c;
    }
    cfg.compute_ns = compute;
    cfg.workers = workers;
    cfg.udp_recv_buf = udp_buf;
    let handle = cloud::start(&cfg)?;
    // one compact line so supervisors can read it as a readiness signal
    println!(
        "{}",
        serde_json::json!({
        "protocol": protocol,
        "data": handle.data_addr().to_string(),
        "control": handle.control_addr().to_string(),
        "compute_ns": compute,
        "workers": workers,
        "udp_recv_buf": handle.udp_recv_buf(),
        })
    );
    handle.wait();
    Ok(ExitCode::SUCCESS)
}

pub fn expected(spec: &Path) -> Result<ExitCode> {
    let topo = match load(spec, Mode::Lenient)? {
        Ok(t) => t,
        Err(code) => return Ok(code),
    };
    print_json(&expected_sends_json(&expected_sends(&topo)))?;
    Ok(ExitCode::SUCCESS)
}

pub fn recommend_step(intervals: &[u64]) -> Result<ExitCode> {
    let step = topology::recommend_step(intervals)?;
    println!("{}", format_nanos(step));
    Ok(ExitCode::SUCCESS)
}

pub fn report(dir: &Path, format: Format) -> Result<ExitCode> {
    let reports = load_results(dir)?;
    let text = match format {
        Format::Json => render_json(&reports),
        Format::Csv => render_csv(&reports),
    };
    print!("{text}");
    if !text.ends_with('\n') {
        println!();
    }
    Ok(ExitCode::SUCCESS)
}

pub fn deploy(spec: &Path, out: &Path, seed: u64) -> Result<ExitCode> {
    let topo = match load(spec, Mode::Lenient)? {
        Ok(t) => t,
        Err(code) => return Ok(code),
    };
    let files = emit_deploy_descriptors(&topo, out, seed).context("writing descriptors")?;
    print_json(&serde_json::json!(files))?;
    Ok(ExitCode::SUCCESS)
}

pub fn node(job: &Path, out: &Path) -> Result<ExitCode> {
    let ledger = run_node_job(job, out)?;
    for (id, e) in &ledger.edges {
        if let Some(f) = &e.failure {
            eprintln!("node {} edge {id}: {f}", ledger.node_id);
        }
    }
    Ok(ExitCode::SUCCESS)
}
