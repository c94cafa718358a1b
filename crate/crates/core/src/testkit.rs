//! Canonical small algebras used throughout the test suite, the examples and
//! the differential harness.

use std::sync::Arc;

use crate::algebra::{Element, FiniteAlgebra, OperationTable};

/// Two-element meet semilattice `({0,1}, ∧)`.
pub fn a2semi() -> Arc<FiniteAlgebra> {
    FiniteAlgebra::new(
        "a2semi",
        2,
        vec![OperationTable::from_fn("meet", 2, 2, |a| a[0] & a[1])],
    )
    .unwrap()
}

/// Two-element join semilattice `({0,1}, ∨)`.
pub fn a2or() -> Arc<FiniteAlgebra> {
    FiniteAlgebra::new(
        "a2or",
        2,
        vec![OperationTable::from_fn("join", 2, 2, |a| a[0] | a[1])],
    )
    .unwrap()
}

/// Two-element majority algebra.
pub fn a2maj() -> Arc<FiniteAlgebra> {
    FiniteAlgebra::new(
        "a2maj",
        2,
        vec![OperationTable::from_fn("maj", 3, 2, |a| {
            (a[0] & a[1]) | (a[0] & a[2]) | (a[1] & a[2])
        })],
    )
    .unwrap()
}

/// Two-element affine (minority) algebra.
pub fn a2aff() -> Arc<FiniteAlgebra> {
    FiniteAlgebra::new(
        "a2aff",
        2,
        vec![OperationTable::from_fn("min3", 3, 2, |a| a[0] ^ a[1] ^ a[2])],
    )
    .unwrap()
}

/// Two-element algebra with no basic operations (clone of projections).
pub fn a2proj() -> Arc<FiniteAlgebra> {
    FiniteAlgebra::new("a2proj", 2, vec![]).unwrap()
}

/// Three-element affine algebra `({0,1,2}, x - y + z mod 3)`.
pub fn z3aff() -> Arc<FiniteAlgebra> {
    FiniteAlgebra::new(
        "z3aff",
        3,
        vec![OperationTable::from_fn("mal", 3, 3, |a| {
            ((a[0] as i16 - a[1] as i16 + a[2] as i16).rem_euclid(3)) as Element
        })],
    )
    .unwrap()
}

/// Four-element meet semilattice: the square of the two-element one,
/// `({0,1}^2, ∧)` with `(a,b)` encoded as `2a + b`. Not subdirectly
/// irreducible.
pub fn s2s2() -> Arc<FiniteAlgebra> {
    FiniteAlgebra::new(
        "s2s2",
        4,
        vec![OperationTable::from_fn("meet", 2, 4, |a| a[0] & a[1])],
    )
    .unwrap()
}

/// Four-element mixed algebra: a two-block semilattice of Z2 modules.
///
/// Element `2b + v` has block index `b` and value `v`. The binary operation
/// joins blocks and keeps the left value; the ternary operation joins blocks
/// and acts affinely on values with a block-dependent shift that kills the
/// value-kernel congruence. The congruence lattice is the chain
/// `0 < {01|23} < 1`, the blocks of the monolith carry affine structure, the
/// pairs `(v, 2+v)` are thin semilattice edges, and the quasi-centralizer of
/// the monolith is full.
pub fn m4mix() -> Arc<FiniteAlgebra> {
    let block = |x: Element| x >> 1;
    let val = |x: Element| x & 1;
    FiniteAlgebra::new(
        "m4mix",
        4,
        vec![
            OperationTable::from_fn("f", 2, 4, |a| {
                let b = block(a[0]) | block(a[1]);
                (b << 1) | val(a[0])
            }),
            OperationTable::from_fn("h", 3, 4, |a| {
                let bor = block(a[0]) | block(a[1]) | block(a[2]);
                let band = block(a[0]) & block(a[1]) & block(a[2]);
                let v = val(a[0]) ^ val(a[1]) ^ val(a[2]) ^ bor ^ band;
                (bor << 1) | v
            }),
        ],
    )
    .unwrap()
}

/// Product of the two-element meet semilattice and the two-element affine
/// algebra over a shared `{f/2, h/3}` signature. Not subdirectly irreducible;
/// its meet-irreducible decomposition splits it into the two factors.
pub fn p4semiaff() -> Arc<FiniteAlgebra> {
    let s = |x: Element| x >> 1;
    let z = |x: Element| x & 1;
    FiniteAlgebra::new(
        "p4semiaff",
        4,
        vec![
            OperationTable::from_fn("f", 2, 4, |a| {
                ((s(a[0]) & s(a[1])) << 1) | z(a[0])
            }),
            OperationTable::from_fn("h", 3, 4, |a| {
                (s(a[0]) << 1) | (z(a[0]) ^ z(a[1]) ^ z(a[2]))
            }),
        ],
    )
    .unwrap()
}

/// The nine-element direct square of [`z3aff`].
pub fn z3sq() -> Arc<FiniteAlgebra> {
    let z3 = z3aff();
    z3.product(&z3, "z3sq").unwrap()
}
