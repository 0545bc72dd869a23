use crate::cluster::Action;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("trace parse error at line {line}: {msg}")]
    TraceParse { line: usize, msg: String },

    #[error("trace data error: {0}")]
    TraceData(String),

    #[error("action {action:?} infeasible for vm {vm_id} at tick {tick}")]
    InfeasibleAction { action: Action, vm_id: usize, tick: u64 },

    #[error("vm {vm_id} can never be placed on this cluster")]
    Unschedulable { vm_id: usize },

    #[error("resource accounting violated: {0}")]
    Accounting(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("network built for {expected} machines, observation has {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error(
        "instance too large for exact search: {requests} requests on {pms} machines \
         (limits: {max_requests} requests, {max_pms} machines)"
    )]
    OracleLimits { requests: usize, pms: usize, max_requests: usize, max_pms: usize },

    #[error("solution import error: {0}")]
    SolutionImport(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("internal error: {0}")]
    Internal(String),
}
