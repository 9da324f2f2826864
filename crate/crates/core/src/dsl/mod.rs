//! Lexer, parser and canonical printer for `.iotecs` documents.
//!
//! The language is a sequence of keyword blocks:
//!
//! ```text
//! Cloud: C1 { IP:127.0.0.1 port:1883 }
//! Simulator: { duration:2s step:500ms simulationNodes:{SN1[2]} }
//! SimulationNode: SN1 { platform:P1 EdgeDevices:{E1[10]} }
//! Platform: P1 { type: Native }
//! EdgeDevice: E1 { protocol:UDP speed:250 cloud:C1 devices:{D1[100]} workload:0 }
//! Device: D1 { period:1 payload:8B }
//! ```
//!
//! Field order inside a block is free and each field may appear once.
//! `//` starts a comment.

pub mod ast;
pub mod diag;
pub mod lexer;
mod parser;
mod printer;
pub mod units;

pub use ast::*;
pub use diag::{has_errors, DiagCode, Diagnostic, Severity, Span};
pub use parser::parse;
pub use printer::pretty_print;
pub use units::{parse_duration, parse_duration_ns, parse_payload_size};
