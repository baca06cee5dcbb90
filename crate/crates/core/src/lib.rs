//! Human-in-the-loop ventilator decision-support engine.
//!
//! Agents exchange closed, schema-validated messages ([`contracts`]); the
//! [`workflow`] engine drives one adjustment cycle at a time through
//! detection, gating, planning, deterministic [`safety`] checks and clinician
//! review, and closes accepted cycles with a single update of the clinician's
//! [`bandit`] preference state. Everything is persisted to the append-only
//! [`memory`] log.

pub mod contracts;
pub mod bandit;
pub mod safety;
pub mod memory;
pub mod agents;
pub mod workflow;
pub mod replay;
pub mod service;
pub mod schemas;
