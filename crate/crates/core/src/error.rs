use thiserror::Error;

/// Errors shared by all toolkit operations.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum Error {
    #[error("unknown operation `{0}`")]
    UnknownOperation(String),

    #[error("operation `{op}` expects {expected} arguments, got {got}")]
    ArityMismatch {
        op: String,
        expected: usize,
        got: usize,
    },

    #[error("element {element} out of range for universe of size {size}")]
    ElementOutOfRange { element: usize, size: usize },

    #[error("component algebras do not share a common operation signature")]
    SignatureMismatch,

    #[error("closure budget of {budget} tuples exceeded")]
    BudgetExceeded { budget: usize },

    #[error("partition is not a congruence: operation `{op}` applied to block-related arguments separates {lhs} and {rhs}")]
    NotACongruence { op: String, lhs: usize, rhs: usize },

    #[error("subset is not closed: `{op}`({args:?}) = {result} leaves the subset")]
    NotClosed {
        op: String,
        args: Vec<usize>,
        result: usize,
    },

    #[error("no term satisfying the requested conditions exists within the search bounds")]
    NotFound,

    #[error("relation between variables {v} and {w} is not aligned with the given congruences: pairs {pair_a:?} and {pair_b:?} violate the biconditional")]
    NotAligned {
        v: usize,
        w: usize,
        pair_a: (usize, usize),
        pair_b: (usize, usize),
    },

    #[error("projection of a constraint produced an empty relation (instance is unsatisfiable)")]
    EmptyRelationInProjection,

    #[error("retraction verification failed: {0}")]
    InconsistentRetraction(String),

    #[error("recursion budget exceeded (depth {depth} > cap {cap}); this signals an implementation bug or non-conforming input")]
    RecursionBudgetExceeded { depth: usize, cap: usize },

    #[error("unsupported solver mode `{0}`")]
    UnsupportedMode(String),

    #[error("internal inconsistency: {0}")]
    InternalInconsistency(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
