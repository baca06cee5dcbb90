//! Uniform invocation layer for the agent roles.
//!
//! Every call goes through [`AgentRuntime::invoke`]: the input is checked
//! against the role's input schema, the backend is asked for a raw JSON
//! answer, and the answer is decoded against the role's output schema.
//! Malformed answers are retried up to [`RetryPolicy::max_retries`] times;
//! a value that reaches the caller always satisfies the output contract.

pub mod config;
pub mod remote;
pub mod scripted;
pub mod waveform;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::contracts::{
    check_value, validate, AgentRole, BranchDecision, CandidateSet, Contract, DetectionRequest, GateRequest,
    ModeDecision, ModeRegistry, ModeRequest, NoteOutput, NoteRequest, PhaseGoals, PhaseRequest, PlanRequest,
    ReflectRequest, RevisionDirective, StateSummary, StrategyChoice, StrategyRequest, ValidationContext,
    ValidationErrors, WaveformCues, WaveformSegment,
};
use crate::workflow::rules::{close_cycle, gate_decision, reflect_route};

use config::{DetectionRules, PlannerConfig, ReflectConfig};
use scripted::{scripted_detection, scripted_mode_select, scripted_parameter_plan, scripted_phase_goals, scripted_strategy};
use waveform::scripted_waveform_cues;

pub use remote::{RemoteChatBackend, RemoteConfig};

/// Hard ceiling on configured retries.
pub const MAX_RETRIES_CEILING: u32 = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    /// The role has no admissible answer for this input (for example every
    /// strategy is forbidden).
    #[error("no feasible answer: {0}")]
    Infeasible(String),
    /// The backend answered, but not with JSON of the expected shape.
    #[error("malformed answer: {0}")]
    Malformed(String),
}

/// Something that can answer a role's request with raw JSON.
pub trait AgentBackend: Send + Sync {
    fn name(&self) -> &str;

    /// `attempt` counts from 0 within one [`AgentRuntime::invoke`] call.
    fn invoke(&self, role: AgentRole, input: &Value, attempt: u32) -> Result<Value, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// Sleep before retry `n` is `backoff_ms * n`.
    #[serde(default)]
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 2,
            backoff_ms: 0,
        }
    }
}

impl RetryPolicy {
    pub fn new(max_retries: u32, backoff_ms: u64) -> Result<Self, AgentError> {
        if max_retries > MAX_RETRIES_CEILING {
            return Err(AgentError::Config(format!(
                "max_retries {max_retries} exceeds ceiling {MAX_RETRIES_CEILING}"
            )));
        }
        Ok(RetryPolicy { max_retries, backoff_ms })
    }

    pub fn attempts(&self) -> u32 {
        self.max_retries + 1
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleStats {
    pub calls: u64,
    pub attempts: u64,
    pub malformed_outputs: u64,
    pub failures_after_retry: u64,
    pub unavailable: u64,
    pub infeasible: u64,
}

impl RoleStats {
    fn add(&mut self, o: &RoleStats) {
        self.calls += o.calls;
        self.attempts += o.attempts;
        self.malformed_outputs += o.malformed_outputs;
        self.failures_after_retry += o.failures_after_retry;
        self.unavailable += o.unavailable;
        self.infeasible += o.infeasible;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationStats {
    pub per_role: BTreeMap<AgentRole, RoleStats>,
}

impl InvocationStats {
    pub fn role(&self, role: AgentRole) -> RoleStats {
        self.per_role.get(&role).copied().unwrap_or_default()
    }

    pub fn total(&self) -> RoleStats {
        let mut t = RoleStats::default();
        for s in self.per_role.values() {
            t.add(s);
        }
        t
    }

    pub fn calls(&self, role: AgentRole) -> u64 {
        self.role(role).calls
    }

    /// Share of calls that ended in [`AgentError::RoleFailure`].
    pub fn failure_rate(&self) -> f64 {
        let t = self.total();
        if t.calls == 0 {
            0.0
        } else {
            t.failures_after_retry as f64 / t.calls as f64
        }
    }

    pub fn merge(&mut self, other: &InvocationStats) {
        for (role, s) in &other.per_role {
            self.per_role.entry(*role).or_default().add(s);
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error("{role} produced no valid output in {attempts} attempts: {last_error}")]
    RoleFailure {
        role: AgentRole,
        attempts: u32,
        last_error: String,
    },
    #[error("{role}: {message}")]
    BackendUnavailable { role: AgentRole, message: String },
    #[error("{role}: {message}")]
    Infeasible { role: AgentRole, message: String },
    #[error("{role} input rejected: {errors}")]
    InvalidInput { role: AgentRole, errors: ValidationErrors },
    #[error("{0}")]
    Config(String),
}

/// Binds a request type to its role and output type.
pub trait RoleCall: Contract {
    const ROLE: AgentRole;
    type Output: Contract;
}

macro_rules! role_calls {
    ($( $input:ty => $role:ident => $output:ty ),* $(,)?) => {
        $( impl RoleCall for $input {
            const ROLE: AgentRole = AgentRole::$role;
            type Output = $output;
        } )*
    };
}

role_calls! {
    WaveformSegment => WaveformAnalyzer => WaveformCues,
    DetectionRequest => Detection => StateSummary,
    PhaseRequest => PhaseGoalManager => PhaseGoals,
    GateRequest => Gate => BranchDecision,
    StrategyRequest => StrategySelector => StrategyChoice,
    ModeRequest => ModeSelect => ModeDecision,
    PlanRequest => ParameterPlanner => CandidateSet,
    ReflectRequest => Reflect => RevisionDirective,
    NoteRequest => NoteGenerator => NoteOutput,
}

/// Validating, retrying front end to a backend, with call accounting.
pub struct AgentRuntime {
    backend: Arc<dyn AgentBackend>,
    registry: Arc<ModeRegistry>,
    policy: RetryPolicy,
    max_updates: usize,
    stats: Mutex<InvocationStats>,
}

impl AgentRuntime {
    pub fn new(backend: Arc<dyn AgentBackend>, registry: Arc<ModeRegistry>, policy: RetryPolicy) -> Self {
        AgentRuntime {
            backend,
            registry,
            policy,
            max_updates: PlannerConfig::default().max_updates_per_proposal,
            stats: Mutex::new(InvocationStats::default()),
        }
    }

    /// Runtime over the scripted backend with default tables.
    pub fn scripted() -> Self {
        let registry = Arc::new(ModeRegistry::default());
        let backend = Arc::new(ScriptedBackend::new(registry.clone()));
        AgentRuntime::new(backend, registry, RetryPolicy::default())
    }

    pub fn registry(&self) -> &ModeRegistry {
        &self.registry
    }

    pub fn registry_arc(&self) -> Arc<ModeRegistry> {
        self.registry.clone()
    }

    pub fn policy(&self) -> RetryPolicy {
        self.policy
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn stats(&self) -> InvocationStats {
        self.stats.lock().expect("stats lock").clone()
    }

    pub fn reset_stats(&self) {
        *self.stats.lock().expect("stats lock") = InvocationStats::default();
    }

    fn ctx(&self) -> ValidationContext<'_> {
        ValidationContext {
            registry: Some(&self.registry),
            max_updates: self.max_updates,
            k_max: None,
        }
    }

    fn record(&self, role: AgentRole, f: impl FnOnce(&mut RoleStats)) {
        let mut stats = self.stats.lock().expect("stats lock");
        f(stats.per_role.entry(role).or_default());
    }

    pub fn invoke<I: RoleCall>(&self, input: &I) -> Result<I::Output, AgentError> {
        let role = I::ROLE;
        let ctx = self.ctx();
        if let Err(errors) = check_value(input, ctx) {
            return Err(AgentError::InvalidInput { role, errors });
        }
        let payload = serde_json::to_value(input).expect("contract types serialize");
        self.invoke_value::<I::Output>(role, &payload)
    }

    /// Invoke with an already serialized input; the output is decoded as `O`.
    pub fn invoke_value<O: Contract>(&self, role: AgentRole, payload: &Value) -> Result<O, AgentError> {
        let ctx = self.ctx();
        self.record(role, |s| s.calls += 1);
        let mut last_error = String::new();
        for attempt in 0..self.policy.attempts() {
            if attempt > 0 && self.policy.backoff_ms > 0 {
                std::thread::sleep(Duration::from_millis(self.policy.backoff_ms * attempt as u64));
            }
            self.record(role, |s| s.attempts += 1);
            match self.backend.invoke(role, payload, attempt) {
                Ok(raw) => match validate::<O>(&raw, ctx) {
                    Ok(out) => return Ok(out),
                    Err(errors) => last_error = errors.to_string(),
                },
                Err(BackendError::Malformed(m)) => last_error = m,
                Err(BackendError::Unavailable(message)) => {
                    self.record(role, |s| s.unavailable += 1);
                    return Err(AgentError::BackendUnavailable { role, message });
                }
                Err(BackendError::Infeasible(message)) => {
                    self.record(role, |s| s.infeasible += 1);
                    return Err(AgentError::Infeasible { role, message });
                }
            }
            self.record(role, |s| s.malformed_outputs += 1);
            tracing::debug!(%role, attempt, error = %last_error, "malformed agent output");
        }
        self.record(role, |s| s.failures_after_retry += 1);
        Err(AgentError::RoleFailure {
            role,
            attempts: self.policy.attempts(),
            last_error,
        })
    }
}

fn decode<T: DeserializeOwned>(input: &Value) -> Result<T, BackendError> {
    serde_json::from_value(input.clone()).map_err(|e| BackendError::Malformed(format!("input: {e}")))
}

fn encode<T: Serialize>(value: &T) -> Result<Value, BackendError> {
    serde_json::to_value(value).map_err(|e| BackendError::Malformed(e.to_string()))
}

/// Deterministic rule-table agents for every role.
pub struct ScriptedBackend {
    registry: Arc<ModeRegistry>,
    detection: DetectionRules,
    planner: PlannerConfig,
    reflect: ReflectConfig,
}

impl ScriptedBackend {
    pub fn new(registry: Arc<ModeRegistry>) -> Self {
        ScriptedBackend::with_tables(
            registry,
            DetectionRules::default(),
            PlannerConfig::default(),
            ReflectConfig::default(),
        )
    }

    pub fn with_tables(
        registry: Arc<ModeRegistry>,
        detection: DetectionRules,
        planner: PlannerConfig,
        reflect: ReflectConfig,
    ) -> Self {
        ScriptedBackend {
            registry,
            detection,
            planner,
            reflect,
        }
    }
}

impl AgentBackend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn invoke(&self, role: AgentRole, input: &Value, _attempt: u32) -> Result<Value, BackendError> {
        match role {
            AgentRole::WaveformAnalyzer => encode(&scripted_waveform_cues(&decode(input)?)),
            AgentRole::Detection => {
                let req: DetectionRequest = decode(input)?;
                encode(&scripted_detection(&self.detection, &req.state, req.cues.as_ref()))
            }
            AgentRole::PhaseGoalManager => encode(&scripted_phase_goals(&self.planner, &self.registry, &decode(input)?)),
            AgentRole::Gate => {
                let req: GateRequest = decode(input)?;
                encode(&gate_decision(&req.summary, &req.goals))
            }
            AgentRole::StrategySelector => match scripted_strategy(&self.planner, &decode(input)?) {
                Some(choice) => encode(&choice),
                None => Err(BackendError::Infeasible("every strategy is forbidden".into())),
            },
            AgentRole::ModeSelect => match scripted_mode_select(&self.planner, &self.registry, &decode(input)?) {
                Some(decision) => encode(&decision),
                None => Err(BackendError::Infeasible("every mode is forbidden".into())),
            },
            AgentRole::ParameterPlanner => {
                match scripted_parameter_plan(&self.planner, &self.registry, &decode(input)?) {
                    Ok(candidates) => encode(&CandidateSet { candidates }),
                    Err(e) => Err(BackendError::Infeasible(e.to_string())),
                }
            }
            AgentRole::Reflect => {
                let req: ReflectRequest = decode(input)?;
                reflect_route(&self.reflect, &self.registry, &req.feedback, &req.rejected, &req.current_settings)
                    .map_err(|e| BackendError::Malformed(e.to_string()))
                    .and_then(|d| encode(&d))
            }
            AgentRole::NoteGenerator => encode(&close_cycle(&decode(input)?)),
        }
    }
}

/// Per-role backend selection with a default.
pub struct RoutedBackend {
    default: Arc<dyn AgentBackend>,
    routes: BTreeMap<AgentRole, Arc<dyn AgentBackend>>,
}

impl RoutedBackend {
    pub fn new(default: Arc<dyn AgentBackend>) -> Self {
        RoutedBackend {
            default,
            routes: BTreeMap::new(),
        }
    }

    pub fn route(mut self, role: AgentRole, backend: Arc<dyn AgentBackend>) -> Self {
        self.routes.insert(role, backend);
        self
    }
}

impl AgentBackend for RoutedBackend {
    fn name(&self) -> &str {
        "routed"
    }

    fn invoke(&self, role: AgentRole, input: &Value, attempt: u32) -> Result<Value, BackendError> {
        self.routes.get(&role).unwrap_or(&self.default).invoke(role, input, attempt)
    }
}

/// Wraps a backend and corrupts each answer with probability `p`.
pub struct FaultInjecting {
    inner: Arc<dyn AgentBackend>,
    p: f64,
    rng: Mutex<ChaCha8Rng>,
}

impl FaultInjecting {
    pub fn new(inner: Arc<dyn AgentBackend>, p: f64, seed: u64) -> Result<Self, AgentError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(AgentError::Config(format!("fault rate {p} outside [0, 1]")));
        }
        Ok(FaultInjecting {
            inner,
            p,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        })
    }
}

impl AgentBackend for FaultInjecting {
    fn name(&self) -> &str {
        "fault-injecting"
    }

    fn invoke(&self, role: AgentRole, input: &Value, attempt: u32) -> Result<Value, BackendError> {
        let out = self.inner.invoke(role, input, attempt)?;
        let mut rng = self.rng.lock().expect("rng lock");
        if !rng.gen_bool(self.p) {
            return Ok(out);
        }
        Ok(match (out, rng.gen_bool(0.5)) {
            (Value::Object(mut map), true) => {
                map.insert("unexpected_field".into(), Value::Bool(true));
                Value::Object(map)
            }
            _ => Value::String("I think the settings look fine.".into()),
        })
    }
}
