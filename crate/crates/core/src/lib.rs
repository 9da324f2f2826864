//! Compiler and runtime for `.iotecs` edge-to-cloud simulation specs.
//!
//! A spec describes clouds under test, IoT device types, edge devices that
//! aggregate them, simulation nodes grouping edge devices onto platforms, and
//! one simulator block fixing duration and step. This crate parses and
//! resolves specs ([`dsl`], [`topology`]), runs simulation nodes against
//! cloud applications with paced sends ([`runtime`]), ships a baseline
//! echo cloud ([`cloud`]), and orchestrates repetitions into drop and
//! transmission-time reports ([`orchestrator`]).

pub mod cloud;
pub mod dsl;
pub mod orchestrator;
pub mod par;
pub mod runtime;
pub mod time;
pub mod topology;
pub mod wire;
