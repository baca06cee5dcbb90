//! Domain types and the closed-schema validation layer governing every
//! inter-agent message and persisted record.

mod messages;
mod registry;
mod types;
mod validate;

pub use messages::*;
pub use registry::{mask_settings, Bounds, ModeRegistry, ModeSpec, ParameterLimits, SafetyLimits};
pub use types::*;
pub use validate::{
    check_value, json_schema, validate, validate_message, validate_schema, Checker, Contract, FieldError, Message,
    SchemaId, ValidationContext, ValidationErrors,
};

#[derive(Debug, thiserror::Error)]
pub enum ContractError {
    #[error("unknown schema `{0}`")]
    UnknownSchema(String),
    #[error("unknown mode `{0}`")]
    UnknownMode(ModeId),
    #[error("validation failed: {0}")]
    Invalid(ValidationErrors),
    #[error("invalid configuration: {0}")]
    Config(String),
}
