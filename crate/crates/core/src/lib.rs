//! Finite universal algebra toolkit and nonuniform CSP solver.
//!
//! The crate implements the operational core of the CSP dichotomy machinery
//! for finite idempotent algebras: closure computations in finite powers,
//! congruence lattices, term search over indicator powers, quasi-centralizers
//! and separation of prime intervals, local consistency engines, and the
//! recursive solver built on block-minimality and retractions, together with
//! a brute-force oracle for differential verification at desk scale.

pub mod algebra;
pub mod budget;
pub mod congruence;
pub mod error;
pub mod analysis;
pub mod consistency;
pub mod instance;
pub mod oracle;
pub mod relation;
pub mod separation;
pub mod solver;
pub mod terms;
pub mod testkit;

pub use algebra::{Element, FiniteAlgebra, OperationTable};
pub use budget::Budget;
pub use congruence::{cg_generate, con_lattice, monolith, Congruence, CongruenceLattice, PrimeInterval};
pub use error::{Error, Result};
pub use relation::{sg_closure, sg_generate, Closure, TupleSet};
