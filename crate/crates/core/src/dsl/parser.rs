use std::collections::HashSet;
use std::net::Ipv4Addr;

use super::ast::*;
use super::diag::{DiagCode, Diagnostic, Span};
use super::lexer::{tokenize, Token, TokenKind};
use super::units::{self, DurationLit, UnitError};

/// Parses an `.iotecs` document.
///
/// Returns the AST, or every diagnostic found (errors first in source
/// order). Never panics on malformed input.
pub fn parse(source: &str) -> Result<SpecAst, Vec<Diagnostic>> {
    let (tokens, mut diags) = tokenize(source);
    let mut p = Parser {
        tokens,
        pos: 0,
        diags: Vec::new(),
        doc: Draft::default(),
    };
    p.document();
    diags.append(&mut p.diags);
    let end = p.tokens.last().map(|t| t.span).unwrap_or_default();
    let ast = finish(p.doc, end, &mut diags);
    if diags.is_empty() {
        Ok(ast.expect("document complete when no diagnostics"))
    } else {
        diags.sort_by_key(|d| (d.line, d.column));
        Err(diags)
    }
}

#[derive(Default)]
struct Draft {
    clouds: Vec<CloudSpec>,
    devices: Vec<DeviceSpec>,
    edge_devices: Vec<EdgeDeviceSpec>,
    platforms: Vec<PlatformSpec>,
    simulation_nodes: Vec<SimNodeSpec>,
    simulators: Vec<SimulatorSpec>,
    saw_simulator: bool,
}

fn finish(doc: Draft, end: Span, diags: &mut Vec<Diagnostic>) -> Option<SpecAst> {
    check_unique(doc.clouds.iter().map(|c| (&c.name, c.span)), "Cloud", diags);
    check_unique(
        doc.devices.iter().map(|c| (&c.name, c.span)),
        "Device",
        diags,
    );
    check_unique(
        doc.edge_devices.iter().map(|c| (&c.name, c.span)),
        "EdgeDevice",
        diags,
    );
    check_unique(
        doc.platforms.iter().map(|c| (&c.name, c.span)),
        "Platform",
        diags,
    );
    check_unique(
        doc.simulation_nodes.iter().map(|c| (&c.name, c.span)),
        "SimulationNode",
        diags,
    );

    let mut sims = doc.simulators.into_iter();
    let simulator = match sims.next() {
        Some(s) => s,
        None => {
            // a malformed Simulator block has already been reported
            if !doc.saw_simulator {
                diags.push(Diagnostic::error(
                    if end.line == 0 { Span::new(1, 1) } else { end },
                    DiagCode::MissingSimulator,
                    "no Simulator block",
                ));
            }
            return None;
        }
    };
    for extra in sims {
        diags.push(Diagnostic::error(
            extra.span,
            DiagCode::DuplicateName,
            "duplicate Simulator block (exactly one allowed)",
        ));
    }
    Some(SpecAst {
        clouds: doc.clouds,
        devices: doc.devices,
        edge_devices: doc.edge_devices,
        platforms: doc.platforms,
        simulation_nodes: doc.simulation_nodes,
        simulator,
    })
}

fn check_unique<'a>(
    items: impl Iterator<Item = (&'a String, Span)>,
    kind: &str,
    diags: &mut Vec<Diagnostic>,
) {
    let mut seen = HashSet::new();
    for (name, span) in items {
        if !seen.insert(name.as_str()) {
            diags.push(Diagnostic::error(
                span,
                DiagCode::DuplicateName,
                format!("duplicate {kind} name `{name}`"),
            ));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockKind {
    Cloud,
    Device,
    EdgeDevice,
    Platform,
    SimulationNode,
    Simulator,
}

impl BlockKind {
    fn from_keyword(word: &str) -> Option<Self> {
        Some(match word.to_ascii_lowercase().as_str() {
            "cloud" => BlockKind::Cloud,
            "device" => BlockKind::Device,
            "edgedevice" => BlockKind::EdgeDevice,
            "platform" => BlockKind::Platform,
            "simulationnode" => BlockKind::SimulationNode,
            "simulator" => BlockKind::Simulator,
            _ => return None,
        })
    }

    fn keyword(self) -> &'static str {
        match self {
            BlockKind::Cloud => "Cloud",
            BlockKind::Device => "Device",
            BlockKind::EdgeDevice => "EdgeDevice",
            BlockKind::Platform => "Platform",
            BlockKind::SimulationNode => "SimulationNode",
            BlockKind::Simulator => "Simulator",
        }
    }

    fn fields(self) -> &'static [&'static str] {
        match self {
            BlockKind::Cloud => &["IP", "port"],
            BlockKind::Device => &["period", "payload"],
            BlockKind::EdgeDevice => &["protocol", "speed", "cloud", "devices", "workload"],
            BlockKind::Platform => &["type", "IP", "username", "password", "CPU", "memory"],
            BlockKind::SimulationNode => &["platform", "EdgeDevices"],
            BlockKind::Simulator => &["duration", "step", "simulationNodes"],
        }
    }
}

/// A field value as written, before interpretation.
#[derive(Debug, Clone)]
enum Value {
    Atom(String, Span),
    Str(Vec<u8>, Span),
    List(Vec<Multiplicity>),
}

struct Field {
    /// Canonical field name from [`BlockKind::fields`].
    name: &'static str,
    span: Span,
    value: Value,
}

/// Marker for a syntax error already recorded; the caller resynchronises.
struct Bail;

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    diags: Vec<Diagnostic>,
    doc: Draft,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos.min(self.tokens.len() - 1)]
    }

    fn next(&mut self) -> Token {
        let tok = self.peek().clone();
        if tok.kind != TokenKind::Eof {
            self.pos += 1;
        }
        tok
    }

    fn unexpected(&mut self, tok: &Token, expected: &str) -> Bail {
        self.diags.push(Diagnostic::error(
            tok.span,
            DiagCode::Syntax,
            format!("expected {expected}, found {}", tok.kind.describe()),
        ));
        Bail
    }

    fn expect(&mut self, kind: TokenKind, what: &str) -> Result<Token, Bail> {
        let tok = self.next();
        if tok.kind == kind {
            Ok(tok)
        } else {
            Err(self.unexpected(&tok, what))
        }
    }

    fn document(&mut self) {
        loop {
            let tok = self.peek().clone();
            match &tok.kind {
                TokenKind::Eof => return,
                TokenKind::Atom(word) => match BlockKind::from_keyword(word) {
                    Some(kind) => {
                        self.next();
                        self.doc.saw_simulator |= kind == BlockKind::Simulator;
                        if self.block(kind, tok.span).is_err() {
                            self.recover_block();
                        }
                    }
                    None => {
                        self.next();
                        self.diags.push(Diagnostic::error(
                            tok.span,
                            DiagCode::Syntax,
                            format!(
                                "expected a block keyword (Cloud, Device, EdgeDevice, Platform, \
                                 SimulationNode, Simulator), found `{word}`"
                            ),
                        ));
                        self.recover_block();
                    }
                },
                _ => {
                    self.next();
                    self.unexpected(&tok, "a block keyword");
                    self.recover_block();
                }
            }
        }
    }

    /// Skips to just past the closing brace of the current block, or to the
    /// next block keyword if no brace was opened.
    fn recover_block(&mut self) {
        let mut depth = 0usize;
        loop {
            let tok = self.peek().clone();
            match &tok.kind {
                TokenKind::Eof => return,
                TokenKind::LBrace => depth += 1,
                TokenKind::RBrace => {
                    if depth <= 1 {
                        self.next();
                        return;
                    }
                    depth -= 1;
                }
                TokenKind::Atom(w) if BlockKind::from_keyword(w).is_some() => {
                    // a keyword followed by `:` starts a new block
                    let next_is_colon = self
                        .tokens
                        .get(self.pos + 1)
                        .is_some_and(|t| t.kind == TokenKind::Colon);
                    let after = self.tokens.get(self.pos + 2).map(|t| &t.kind);
                    let looks_like_block = next_is_colon
                        && matches!(after, Some(TokenKind::Atom(_)) | Some(TokenKind::LBrace))
                        && !matches!(after, Some(TokenKind::Atom(a)) if a.parse::<u64>().is_ok());
                    if looks_like_block && depth <= 1 {
                        return;
                    }
                }
                _ => {}
            }
            self.next();
        }
    }

    fn block(&mut self, kind: BlockKind, span: Span) -> Result<(), Bail> {
        self.expect(TokenKind::Colon, "`:` after block keyword")?;
        let name = match self.peek().kind.clone() {
            TokenKind::Atom(name) => {
                self.next();
                Some(name)
            }
            _ => None,
        };
        if name.is_none() && kind != BlockKind::Simulator {
            let tok = self.peek().clone();
            return Err(self.unexpected(&tok, &format!("a name for the {} block", kind.keyword())));
        }
        if let Some(n) = &name {
            self.check_identifier(n, span);
        }
        self.expect(TokenKind::LBrace, "`{`")?;

        let mut fields: Vec<Field> = Vec::new();
        loop {
            let tok = self.next();
            let word = match &tok.kind {
                TokenKind::RBrace => break,
                TokenKind::Atom(w) => w.clone(),
                _ => return Err(self.unexpected(&tok, "a field name or `}`")),
            };
            let Some(field) = kind
                .fields()
                .iter()
                .copied()
                .find(|f| f.eq_ignore_ascii_case(&word))
            else {
                self.diags.push(Diagnostic::error(
                    tok.span,
                    DiagCode::UnknownField,
                    format!(
                        "unknown field `{word}` in {} block (expected one of: {})",
                        kind.keyword(),
                        kind.fields().join(", ")
                    ),
                ));
                return Err(Bail);
            };
            self.expect(TokenKind::Colon, "`:` after field name")?;
            let value = self.value()?;
            if fields.iter().any(|f| f.name == field) {
                self.diags.push(Diagnostic::error(
                    tok.span,
                    DiagCode::DuplicateField,
                    format!("field `{field}` given more than once"),
                ));
                continue;
            }
            fields.push(Field {
                name: field,
                span: tok.span,
                value,
            });
        }

        let before = self.diags.len();
        let mut b = BlockFields {
            kind,
            span,
            fields,
            diags: &mut self.diags,
        };
        let name = name.unwrap_or_default();
        match kind {
            BlockKind::Cloud => {
                let cloud = b.cloud(name);
                if let Some(c) = cloud.filter(|_| self.diags.len() == before) {
                    self.doc.clouds.push(c);
                }
            }
            BlockKind::Device => {
                if let Some(d) = b.device(name).filter(|_| self.diags.len() == before) {
                    self.doc.devices.push(d);
                }
            }
            BlockKind::EdgeDevice => {
                if let Some(e) = b.edge_device(name).filter(|_| self.diags.len() == before) {
                    self.doc.edge_devices.push(e);
                }
            }
            BlockKind::Platform => {
                if let Some(p) = b.platform(name).filter(|_| self.diags.len() == before) {
                    self.doc.platforms.push(p);
                }
            }
            BlockKind::SimulationNode => {
                if let Some(n) = b.sim_node(name).filter(|_| self.diags.len() == before) {
                    self.doc.simulation_nodes.push(n);
                }
            }
            BlockKind::Simulator => {
                let label = (!name.is_empty()).then_some(name);
                if let Some(s) = b.simulator(label) {
                    self.doc.simulators.push(s);
                }
            }
        }
        Ok(())
    }

    fn check_identifier(&mut self, name: &str, span: Span) {
        let ok = name
            .chars()
            .next()
            .is_some_and(|c| c.is_alphabetic() || c == '_')
            && name
                .chars()
                .all(|c| c.is_alphanumeric() || c == '_' || c == '-');
        if !ok {
            self.diags.push(Diagnostic::error(
                span,
                DiagCode::Syntax,
                format!("`{name}` is not a valid name"),
            ));
        }
    }

    fn value(&mut self) -> Result<Value, Bail> {
        let tok = self.next();
        match tok.kind {
            TokenKind::Atom(a) => Ok(Value::Atom(a, tok.span)),
            TokenKind::Str(s) => Ok(Value::Str(s, tok.span)),
            TokenKind::LBrace => self.list().map(Value::List),
            _ => Err(self.unexpected(&tok, "a value")),
        }
    }

    /// `{A[3], B[1], C}` after the opening brace.
    fn list(&mut self) -> Result<Vec<Multiplicity>, Bail> {
        let mut items = Vec::new();
        if self.peek().kind == TokenKind::RBrace {
            self.next();
            return Ok(items);
        }
        loop {
            let tok = self.next();
            let TokenKind::Atom(name) = tok.kind.clone() else {
                return Err(self.unexpected(&tok, "a name"));
            };
            self.check_identifier(&name, tok.span);
            let mut count = 1;
            if self.peek().kind == TokenKind::LBracket {
                self.next();
                let num = self.next();
                count = match &num.kind {
                    TokenKind::Atom(n) => match n.parse::<u32>() {
                        Ok(0) => {
                            self.diags.push(Diagnostic::error(
                                num.span,
                                DiagCode::InvalidValue,
                                "instance count must be at least 1",
                            ));
                            1
                        }
                        Ok(c) => c,
                        Err(_) => {
                            self.diags.push(Diagnostic::error(
                                num.span,
                                DiagCode::InvalidValue,
                                format!("instance count `{n}` is not a positive integer"),
                            ));
                            1
                        }
                    },
                    _ => return Err(self.unexpected(&num, "an instance count")),
                };
                self.expect(TokenKind::RBracket, "`]`")?;
            }
            items.push(Multiplicity {
                name,
                count,
                span: tok.span,
            });
            let sep = self.next();
            match sep.kind {
                TokenKind::Comma => continue,
                TokenKind::RBrace => return Ok(items),
                _ => return Err(self.unexpected(&sep, "`,` or `}`")),
            }
        }
    }
}

struct BlockFields<'a> {
    kind: BlockKind,
    span: Span,
    fields: Vec<Field>,
    diags: &'a mut Vec<Diagnostic>,
}

impl BlockFields<'_> {
    fn take(&mut self, name: &str) -> Option<Field> {
        let idx = self.fields.iter().position(|f| f.name == name)?;
        Some(self.fields.remove(idx))
    }

    fn require(&mut self, name: &str) -> Option<Field> {
        let field = self.take(name);
        if field.is_none() {
            self.diags.push(Diagnostic::error(
                self.span,
                DiagCode::MissingField,
                format!(
                    "{} block is missing required field `{name}`",
                    self.kind.keyword()
                ),
            ));
        }
        field
    }

    fn err(&mut self, span: Span, code: DiagCode, msg: String) {
        self.diags.push(Diagnostic::error(span, code, msg));
    }

    fn atom(&mut self, field: Field) -> Option<(String, Span)> {
        match field.value {
            Value::Atom(a, span) => Some((a, span)),
            Value::Str(_, span) => {
                self.err(
                    span,
                    DiagCode::InvalidValue,
                    format!("field `{}` does not take a string literal", field.name),
                );
                None
            }
            Value::List(_) => {
                self.err(
                    field.span,
                    DiagCode::InvalidValue,
                    format!("field `{}` does not take a list", field.name),
                );
                None
            }
        }
    }

    fn text(&mut self, field: Field) -> Option<String> {
        match field.value {
            Value::Atom(a, _) => Some(a),
            Value::Str(bytes, span) => match String::from_utf8(bytes) {
                Ok(s) => Some(s),
                Err(_) => {
                    self.err(
                        span,
                        DiagCode::InvalidValue,
                        "string is not valid UTF-8".into(),
                    );
                    None
                }
            },
            Value::List(_) => {
                self.err(
                    field.span,
                    DiagCode::InvalidValue,
                    format!("field `{}` does not take a list", field.name),
                );
                None
            }
        }
    }

    fn list(&mut self, field: Field) -> Option<Vec<Multiplicity>> {
        match field.value {
            Value::List(items) => Some(items),
            Value::Atom(_, span) | Value::Str(_, span) => {
                self.err(
                    span,
                    DiagCode::InvalidValue,
                    format!("field `{}` expects a list like {{A[2],B[1]}}", field.name),
                );
                None
            }
        }
    }

    fn reference(&mut self, field: Field) -> Option<String> {
        let (name, span) = self.atom(field)?;
        let valid = name
            .chars()
            .next()
            .is_some_and(|c| c.is_alphabetic() || c == '_');
        if !valid {
            self.err(
                span,
                DiagCode::InvalidValue,
                format!("`{name}` is not a valid name"),
            );
            return None;
        }
        Some(name)
    }

    fn ip(&mut self, field: Field) -> Option<Ipv4Addr> {
        let (text, span) = self.atom(field)?;
        match text.parse::<Ipv4Addr>() {
            Ok(ip) => Some(ip),
            Err(_) => {
                self.err(
                    span,
                    DiagCode::InvalidValue,
                    format!("`{text}` is not a valid IPv4 address"),
                );
                None
            }
        }
    }

    fn positive(&mut self, field: Field, max: u64) -> Option<u64> {
        let name = field.name;
        let (text, span) = self.atom(field)?;
        match text.parse::<u64>() {
            Ok(v) if (1..=max).contains(&v) => Some(v),
            _ => {
                self.err(
                    span,
                    DiagCode::InvalidValue,
                    format!("`{name}` must be an integer between 1 and {max}, found `{text}`"),
                );
                None
            }
        }
    }

    fn unit<T>(&mut self, field: Field, f: fn(&str) -> Result<T, UnitError>) -> Option<T> {
        let name = field.name;
        let (text, span) = self.atom(field)?;
        match f(&text) {
            Ok(v) => Some(v),
            Err(e) => {
                let code = match e {
                    UnitError::UnknownUnit { .. } => DiagCode::UnknownUnit,
                    _ => DiagCode::InvalidValue,
                };
                self.err(span, code, format!("invalid `{name}` value `{text}`: {e}"));
                None
            }
        }
    }

    fn cloud(&mut self, name: String) -> Option<CloudSpec> {
        let ip = self.require("IP").and_then(|f| self.ip(f));
        let port = self.require("port").and_then(|f| self.positive(f, 65535));
        Some(CloudSpec {
            name,
            ip: ip?,
            port: port? as u16,
            span: self.span,
        })
    }

    fn device(&mut self, name: String) -> Option<DeviceSpec> {
        let period = self
            .require("period")
            .and_then(|f| self.positive(f, u32::MAX as u64));
        let payload = self.require("payload").and_then(|f| match f.value {
            Value::Str(bytes, _) => Some(Payload::Literal(bytes)),
            _ => self.unit(f, units::parse_payload_size).map(Payload::Size),
        });
        Some(DeviceSpec {
            name,
            period: period? as u32,
            payload: payload?,
            span: self.span,
        })
    }

    fn edge_device(&mut self, name: String) -> Option<EdgeDeviceSpec> {
        let protocol = self.require("protocol").and_then(|f| {
            let (text, span) = self.atom(f)?;
            match text.to_ascii_uppercase().as_str() {
                "UDP" => Some(Protocol::Udp),
                "TCP" => Some(Protocol::Tcp),
                "MQTT" => Some(Protocol::Mqtt),
                _ => {
                    self.err(
                        span,
                        DiagCode::InvalidValue,
                        format!("unknown protocol `{text}` (expected UDP, TCP or MQTT)"),
                    );
                    None
                }
            }
        });
        let speed = self.require("speed").and_then(|f| {
            if matches!(&f.value, Value::Atom(a, _) if a.eq_ignore_ascii_case("MAX")) {
                Some(Speed::Max)
            } else {
                self.positive(f, u32::MAX as u64)
                    .map(|v| Speed::PerStep(v as u32))
            }
        });
        let cloud = self.require("cloud").and_then(|f| self.reference(f));
        let devices = self.require("devices").and_then(|f| self.list(f));
        let workload = match self.take("workload") {
            Some(f) => Some(self.unit(f, units::parse_duration_or_zero)?),
            None => None,
        };
        Some(EdgeDeviceSpec {
            name,
            protocol: protocol?,
            speed: speed?,
            cloud: cloud?,
            devices: devices?,
            workload,
            span: self.span,
        })
    }

    fn platform(&mut self, name: String) -> Option<PlatformSpec> {
        let kind = self.require("type").and_then(|f| {
            let (text, span) = self.atom(f)?;
            match text.to_ascii_lowercase().as_str() {
                "native" => Some(PlatformKind::Native),
                "vm" => Some(PlatformKind::Vm),
                "docker" => Some(PlatformKind::Docker),
                _ => {
                    self.err(
                        span,
                        DiagCode::InvalidValue,
                        format!("unknown platform type `{text}` (expected Native, VM or Docker)"),
                    );
                    None
                }
            }
        });
        let ip = self.take("IP").map(|f| self.ip(f));
        let username = self.take("username").map(|f| self.text(f));
        let password = self.take("password").map(|f| self.text(f));
        let cpu = self.take("CPU").map(|f| self.positive(f, u32::MAX as u64));
        let memory = self
            .take("memory")
            .map(|f| self.unit(f, units::parse_memory));
        Some(PlatformSpec {
            name,
            kind: kind?,
            ip: ip.map_or(Some(None), |v| v.map(Some))?,
            username: username.map_or(Some(None), |v| v.map(Some))?,
            password: password.map_or(Some(None), |v| v.map(Some))?,
            cpu: cpu.map_or(Some(None), |v| v.map(|c| Some(c as u32)))?,
            memory: memory.map_or(Some(None), |v| v.map(Some))?,
            span: self.span,
        })
    }

    fn sim_node(&mut self, name: String) -> Option<SimNodeSpec> {
        let platform = self.require("platform").and_then(|f| self.reference(f));
        let edges = self.require("EdgeDevices").and_then(|f| self.list(f));
        Some(SimNodeSpec {
            name,
            platform: platform?,
            edge_devices: edges?,
            span: self.span,
        })
    }

    fn simulator(&mut self, name: Option<String>) -> Option<SimulatorSpec> {
        let duration: Option<DurationLit> = self
            .require("duration")
            .and_then(|f| self.unit(f, units::parse_duration));
        let step = self
            .require("step")
            .and_then(|f| self.unit(f, units::parse_duration));
        let nodes = self.require("simulationNodes").and_then(|f| self.list(f));
        Some(SimulatorSpec {
            name,
            duration: duration?,
            step: step?,
            simulation_nodes: nodes?,
            span: self.span,
        })
    }
}
