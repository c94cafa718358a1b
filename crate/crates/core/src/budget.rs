/// Resource limits for closure computations and search.
///
/// Closures in finite powers can blow up combinatorially. Every operation
/// that enumerates tuples takes a budget and aborts with
/// [`Error::BudgetExceeded`](crate::Error::BudgetExceeded) instead of
/// exhausting memory. The default cap is deliberately generous for desk-scale
/// inputs (algebras of size at most ~12).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    /// Maximum number of tuples any single closure may hold.
    pub max_tuples: usize,
}

pub const DEFAULT_TUPLE_BUDGET: usize = 2_000_000;

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_tuples: DEFAULT_TUPLE_BUDGET,
        }
    }
}

impl Budget {
    pub fn new(max_tuples: usize) -> Self {
        Budget { max_tuples }
    }

    /// Reads `CSPLAB_BUDGET` from the environment, falling back to the default.
    pub fn from_env() -> Self {
        match std::env::var("CSPLAB_BUDGET") {
            Ok(s) => match s.trim().parse::<usize>() {
                Ok(n) if n > 0 => Budget::new(n),
                _ => Budget::default(),
            },
            Err(_) => Budget::default(),
        }
    }
}
