use thiserror::Error;

use crate::engine::EngineError;
use crate::multicast::McastError;
use crate::scenario::ScenarioError;
use crate::trace::TraceError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("unknown sweep parameter `{0}`")]
    UnknownParam(String),
    #[error("bad sweep value `{value}` for `{param}`: {msg}")]
    BadValue {
        param: String,
        value: String,
        msg: String,
    },
    #[error(transparent)]
    Multicast(#[from] McastError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

impl SimError {
    /// True for problems with the user's input rather than the run itself.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            SimError::Scenario(_) | SimError::UnknownParam(_) | SimError::BadValue { .. }
        )
    }
}
