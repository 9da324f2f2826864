use std::fmt::Write;

use super::ast::*;

/// Renders an AST in canonical form: fixed block order (clouds, simulator,
/// simulation nodes, platforms, edge devices, devices), fixed field order,
/// tab indentation. The output parses back to an equal AST.
pub fn pretty_print(ast: &SpecAst) -> String {
    let mut out = String::new();
    for c in &ast.clouds {
        let _ = writeln!(out, "Cloud: {} {{", c.name);
        let _ = writeln!(out, "\tIP:{}", c.ip);
        let _ = writeln!(out, "\tport:{}", c.port);
        out.push_str("}\n");
    }

    let sim = &ast.simulator;
    match &sim.name {
        Some(name) => {
            let _ = writeln!(out, "Simulator: {name} {{");
        }
        None => out.push_str("Simulator: {\n"),
    }
    let _ = writeln!(out, "\tduration:{}", sim.duration);
    let _ = writeln!(out, "\tstep:{}", sim.step);
    let _ = writeln!(out, "\tsimulationNodes:{}", list(&sim.simulation_nodes));
    out.push_str("}\n");

    for n in &ast.simulation_nodes {
        let _ = writeln!(out, "SimulationNode: {} {{", n.name);
        let _ = writeln!(out, "\tplatform:{}", n.platform);
        let _ = writeln!(out, "\tEdgeDevices:{}", list(&n.edge_devices));
        out.push_str("}\n");
    }

    for p in &ast.platforms {
        let _ = writeln!(out, "Platform: {} {{", p.name);
        let _ = writeln!(out, "\ttype: {}", p.kind);
        if let Some(ip) = p.ip {
            let _ = writeln!(out, "\tIP: {ip}");
        }
        if let Some(u) = &p.username {
            let _ = writeln!(out, "\tusername: {}", text(u));
        }
        if let Some(pw) = &p.password {
            let _ = writeln!(out, "\tpassword: {}", text(pw));
        }
        if let Some(cpu) = p.cpu {
            let _ = writeln!(out, "\tCPU: {cpu}");
        }
        if let Some(mem) = p.memory {
            let _ = writeln!(out, "\tmemory: {mem}");
        }
        out.push_str("}\n");
    }

    for e in &ast.edge_devices {
        let _ = writeln!(out, "EdgeDevice: {} {{", e.name);
        let _ = writeln!(out, "\tprotocol:{}", e.protocol);
        let _ = writeln!(out, "\tspeed:{}", e.speed);
        let _ = writeln!(out, "\tcloud:{}", e.cloud);
        let _ = writeln!(out, "\tdevices:{}", list(&e.devices));
        if let Some(w) = e.workload {
            let _ = writeln!(out, "\tworkload:{w}");
        }
        out.push_str("}\n");
    }

    for d in &ast.devices {
        let _ = writeln!(out, "Device: {} {{", d.name);
        let _ = writeln!(out, "\tperiod:{}", d.period);
        match &d.payload {
            Payload::Literal(bytes) => {
                let _ = writeln!(out, "\tpayload:{}", quote(bytes));
            }
            Payload::Size(size) => {
                let _ = writeln!(out, "\tpayload:{size}");
            }
        }
        out.push_str("}\n");
    }
    out
}

fn list(items: &[Multiplicity]) -> String {
    let inner: Vec<String> = items
        .iter()
        .map(|m| format!("{}[{}]", m.name, m.count))
        .collect();
    format!("{{{}}}", inner.join(","))
}

/// Bare word when it lexes back as one atom, quoted otherwise.
fn text(s: &str) -> String {
    let bare = !s.is_empty()
        && !s.contains("//")
        && s.chars()
            .all(|c| c.is_ascii_graphic() && !matches!(c, ':' | '{' | '}' | '[' | ']' | ',' | '"'));
    if bare {
        s.to_string()
    } else {
        quote(s.as_bytes())
    }
}

/// Double-quoted literal; anything outside printable ASCII is `\xHH`.
pub(crate) fn quote(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() + 2);
    out.push('"');
    for &b in bytes {
        match b {
            b'"' => out.push_str("\\\""),
            b'\\' => out.push_str("\\\\"),
            b'\n' => out.push_str("\\n"),
            b'\t' => out.push_str("\\t"),
            b'\r' => out.push_str("\\r"),
            0x20..=0x7e => out.push(b as char),
            _ => {
                let _ = write!(out, "\\x{b:02x}");
            }
        }
    }
    out.push('"');
    out
}
