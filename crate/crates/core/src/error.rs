use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes don't combine under the attempted operation.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// An intermediate value stopped being finite; `node` is the first
    /// offending tape node so the failure can be traced to an operation.
    #[error("non-finite value produced by `{op}` at tape node {node}")]
    NonFinite { op: &'static str, node: usize },

    /// Bad argument or configuration, caught before any compute.
    #[error("{0}")]
    Invalid(String),

    /// Factorization or solve failure (singular system, Cholesky breakdown
    /// after jitter escalation, all-zero information matrix).
    #[error("linear algebra failure: {0}")]
    Linalg(String),

    /// State left the finite range during integration.
    #[error("integration blow-up at t = {t}")]
    Blowup { t: f64 },

    /// Blow-up inside one window of a batched integration.
    #[error("integration blow-up in window {window} at t = {t}")]
    BlowupInWindow { window: usize, t: f64 },

    /// Optimization produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    /// Dense Hessian assembly refused above the configured size cap.
    #[error("parameter count {n} exceeds the dense-Hessian cap of {cap}")]
    HessianCap { n: usize, cap: usize },

    /// Parameter initialization could not reach the target coefficient
    /// window within the attempt budget.
    #[error("initialization rejected after {attempts} attempts: expanded coefficient spread exceeds the representable window")]
    InitRejection { attempts: usize },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
