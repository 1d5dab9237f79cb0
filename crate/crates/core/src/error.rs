use std::io;

use thiserror::Error;

use crate::types::{FiveTuple, Vip};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown VIP {0}")]
    UnknownVip(Vip),

    #[error("consistency violation for {tuple}: {detail}")]
    ConsistencyViolation { tuple: FiveTuple, detail: String },

    #[error("invalid queue {0}")]
    InvalidQueue(usize),

    #[error("invalid operation kind `{0}`")]
    InvalidOp(String),

    #[error("utilization window is empty (REF = 0)")]
    UndefinedWindow,

    #[error("invalid workload: {0}")]
    InvalidSpec(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: arrival time {arrival_ns} ns precedes previous record at {previous_ns} ns")]
    TraceOrder {
        line: usize,
        arrival_ns: u64,
        previous_ns: u64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("search range error: {0}")]
    SearchRange(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
