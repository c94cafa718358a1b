//! Finite idempotent algebras with explicit operation tables.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::congruence::Congruence;
use crate::error::{Error, Result};

/// Index of a universe element. Universes are dense `0..n` with `n <= 256`,
/// which comfortably covers desk scale and keeps tuple storage compact.
pub type Element = u8;

/// Largest supported universe.
pub const MAX_UNIVERSE: usize = 256;

/// A basic operation given by its full table.
///
/// The table is row-major with the last argument fastest, i.e. the value of
/// `f(a_1, .., a_k)` is `table[((a_1 * n + a_2) * n + ..) * n + a_k]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OperationTable {
    pub name: String,
    pub arity: usize,
    pub table: Vec<Element>,
}

impl OperationTable {
    pub fn new(name: impl Into<String>, arity: usize, table: Vec<Element>) -> Self {
        OperationTable {
            name: name.into(),
            arity,
            table,
        }
    }

    /// Table of the `i`-th projection of the given arity.
    pub fn projection(name: impl Into<String>, arity: usize, coord: usize, size: usize) -> Self {
        assert!(coord < arity);
        let mut table = Vec::with_capacity(size.pow(arity as u32));
        let mut args = vec![0usize; arity];
        loop {
            table.push(args[coord] as Element);
            // odometer over arguments, last fastest
            let mut i = arity;
            loop {
                if i == 0 {
                    return OperationTable {
                        name: name.into(),
                        arity,
                        table,
                    };
                }
                i -= 1;
                args[i] += 1;
                if args[i] < size {
                    break;
                }
                args[i] = 0;
            }
        }
    }

    #[inline]
    pub fn apply(&self, size: usize, args: &[Element]) -> Element {
        debug_assert_eq!(args.len(), self.arity);
        let mut idx = 0usize;
        for &a in args {
            idx = idx * size + a as usize;
        }
        self.table[idx]
    }

    /// Builds a table from a closure over argument tuples.
    pub fn from_fn(
        name: impl Into<String>,
        arity: usize,
        size: usize,
        f: impl Fn(&[Element]) -> Element,
    ) -> Self {
        let mut table = Vec::with_capacity(size.pow(arity as u32));
        let mut args = vec![0 as Element; arity];
        loop {
            table.push(f(&args));
            let mut i = arity;
            loop {
                if i == 0 {
                    return OperationTable {
                        name: name.into(),
                        arity,
                        table,
                    };
                }
                i -= 1;
                if (args[i] as usize) + 1 < size {
                    args[i] += 1;
                    break;
                }
                args[i] = 0;
            }
        }
    }
}

/// A finite idempotent algebra: a universe `0..size` together with named
/// operation tables. Non-idempotent operations are rejected at construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FiniteAlgebra {
    pub id: String,
    pub size: usize,
    pub operations: Vec<OperationTable>,
}

impl FiniteAlgebra {
    pub fn new(
        id: impl Into<String>,
        size: usize,
        operations: Vec<OperationTable>,
    ) -> Result<Arc<Self>> {
        let id = id.into();
        if size == 0 {
            return Err(Error::InvalidInput(format!("algebra `{id}` has empty universe")));
        }
        if size > MAX_UNIVERSE {
            return Err(Error::InvalidInput(format!(
                "algebra `{id}` has {size} elements; at most {MAX_UNIVERSE} are supported"
            )));
        }
        let mut names: Vec<&str> = operations.iter().map(|o| o.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != operations.len() {
            return Err(Error::InvalidInput(format!(
                "algebra `{id}` has duplicate operation names"
            )));
        }
        for op in &operations {
            if op.arity == 0 {
                return Err(Error::InvalidInput(format!(
                    "operation `{}` has arity 0; arities must be >= 1",
                    op.name
                )));
            }
            let expected = size
                .checked_pow(op.arity as u32)
                .ok_or_else(|| Error::InvalidInput("operation table too large".into()))?;
            if op.table.len() != expected {
                return Err(Error::InvalidInput(format!(
                    "operation `{}` table has {} entries, expected {}",
                    op.name,
                    op.table.len(),
                    expected
                )));
            }
            for &v in &op.table {
                if v as usize >= size {
                    return Err(Error::ElementOutOfRange {
                        element: v as usize,
                        size,
                    });
                }
            }
            // idempotency: f(x,..,x) = x
            for x in 0..size {
                let args = vec![x as Element; op.arity];
                if op.apply(size, &args) != x as Element {
                    return Err(Error::InvalidInput(format!(
                        "operation `{}` is not idempotent at {x}",
                        op.name
                    )));
                }
            }
        }
        Ok(Arc::new(FiniteAlgebra {
            id,
            size,
            operations,
        }))
    }

    pub fn elements(&self) -> impl Iterator<Item = Element> {
        (0..self.size).map(|e| e as Element)
    }

    /// `(name, arity)` pairs in declaration order.
    pub fn signature(&self) -> Vec<(String, usize)> {
        self.operations
            .iter()
            .map(|o| (o.name.clone(), o.arity))
            .collect()
    }

    pub fn same_signature(&self, other: &FiniteAlgebra) -> bool {
        self.operations.len() == other.operations.len()
            && self
                .operations
                .iter()
                .zip(&other.operations)
                .all(|(a, b)| a.name == b.name && a.arity == b.arity)
    }

    pub fn op_index(&self, name: &str) -> Option<usize> {
        self.operations.iter().position(|o| o.name == name)
    }

    #[inline]
    pub fn apply(&self, op: usize, args: &[Element]) -> Element {
        self.operations[op].apply(self.size, args)
    }

    /// Looks up an operation by name and applies it, with full validation.
    pub fn apply_op(&self, op: &str, args: &[Element]) -> Result<Element> {
        let idx = self
            .op_index(op)
            .ok_or_else(|| Error::UnknownOperation(op.to_string()))?;
        let table = &self.operations[idx];
        if args.len() != table.arity {
            return Err(Error::ArityMismatch {
                op: op.to_string(),
                expected: table.arity,
                got: args.len(),
            });
        }
        for &a in args {
            if a as usize >= self.size {
                return Err(Error::ElementOutOfRange {
                    element: a as usize,
                    size: self.size,
                });
            }
        }
        Ok(table.apply(self.size, args))
    }

    /// Direct product, with pair `(a, b)` encoded as `a * other.size + b`.
    pub fn product(self: &Arc<Self>, other: &Arc<FiniteAlgebra>, id: impl Into<String>) -> Result<Arc<FiniteAlgebra>> {
        if !self.same_signature(other) {
            return Err(Error::SignatureMismatch);
        }
        let n = self.size * other.size;
        let m = other.size;
        let ops = self
            .operations
            .iter()
            .zip(&other.operations)
            .map(|(f, g)| {
                OperationTable::from_fn(f.name.clone(), f.arity, n, |args| {
                    let left: Vec<Element> = args.iter().map(|&p| (p as usize / m) as Element).collect();
                    let right: Vec<Element> = args.iter().map(|&p| (p as usize % m) as Element).collect();
                    let a = f.apply(self.size, &left) as usize;
                    let b = g.apply(other.size, &right) as usize;
                    (a * m + b) as Element
                })
            })
            .collect();
        FiniteAlgebra::new(id, n, ops)
    }

    /// The subalgebra on `subset`, re-indexed densely, together with the
    /// translation `new index -> old element`. Fails with a witness if the
    /// subset is not closed.
    pub fn restrict(self: &Arc<Self>, subset: &[Element]) -> Result<(Arc<FiniteAlgebra>, Vec<Element>)> {
        if subset.is_empty() {
            return Err(Error::InvalidInput("cannot restrict to the empty set".into()));
        }
        let mut sorted: Vec<Element> = subset.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        for &e in &sorted {
            if e as usize >= self.size {
                return Err(Error::ElementOutOfRange {
                    element: e as usize,
                    size: self.size,
                });
            }
        }
        let mut old_to_new = vec![None; self.size];
        for (i, &e) in sorted.iter().enumerate() {
            old_to_new[e as usize] = Some(i as Element);
        }
        let k = sorted.len();
        let mut ops = Vec::with_capacity(self.operations.len());
        for op in &self.operations {
            let mut table = Vec::with_capacity(k.pow(op.arity as u32));
            let mut args_new = vec![0usize; op.arity];
            'outer: loop {
                let args_old: Vec<Element> = args_new.iter().map(|&i| sorted[i]).collect();
                let v = op.apply(self.size, &args_old);
                match old_to_new[v as usize] {
                    Some(nv) => table.push(nv),
                    None => {
                        return Err(Error::NotClosed {
                            op: op.name.clone(),
                            args: args_old.iter().map(|&a| a as usize).collect(),
                            result: v as usize,
                        })
                    }
                }
                let mut i = op.arity;
                loop {
                    if i == 0 {
                        break 'outer;
                    }
                    i -= 1;
                    args_new[i] += 1;
                    if args_new[i] < k {
                        break;
                    }
                    args_new[i] = 0;
                }
            }
            ops.push(OperationTable {
                name: op.name.clone(),
                arity: op.arity,
                table,
            });
        }
        let id = if k == self.size {
            self.id.clone()
        } else {
            format!("{}|{:?}", self.id, sorted.iter().map(|&e| e as usize).collect::<Vec<_>>())
        };
        let alg = FiniteAlgebra::new(id, k, ops)?;
        Ok((alg, sorted))
    }

    /// Quotient modulo a verified congruence. Blocks are indexed canonically
    /// by least member; the returned vector is the natural map
    /// `old element -> block index`.
    pub fn quotient(self: &Arc<Self>, theta: &Congruence) -> Result<(Arc<FiniteAlgebra>, Vec<Element>)> {
        if theta.algebra().size != self.size {
            return Err(Error::InvalidInput(
                "congruence belongs to a different algebra".into(),
            ));
        }
        theta.verify_on(self)?;
        let reps = theta.block_reps(); // least members, ascending
        let mut rep_to_block = vec![0 as Element; self.size];
        for (i, &r) in reps.iter().enumerate() {
            rep_to_block[r as usize] = i as Element;
        }
        let nat: Vec<Element> = (0..self.size)
            .map(|e| rep_to_block[theta.rep(e as Element) as usize])
            .collect();
        let k = reps.len();
        let ops = self
            .operations
            .iter()
            .map(|op| {
                OperationTable::from_fn(op.name.clone(), op.arity, k, |args| {
                    let lifted: Vec<Element> =
                        args.iter().map(|&b| reps[b as usize]).collect();
                    nat[op.apply(self.size, &lifted) as usize]
                })
            })
            .collect();
        let id = if k == self.size {
            self.id.clone()
        } else {
            format!("{}/{}", self.id, theta.render_blocks())
        };
        let alg = FiniteAlgebra::new(id, k, ops)?;
        Ok((alg, nat))
    }
}

impl fmt::Display for FiniteAlgebra {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (size {})", self.id, self.size)
    }
}

// ---------------------------------------------------------------------------
// JSON file format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct OperationDto {
    name: String,
    arity: usize,
    table: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct AlgebraDto {
    id: String,
    size: usize,
    operations: Vec<OperationDto>,
}

pub fn algebra_to_json(alg: &FiniteAlgebra) -> String {
    let dto = AlgebraDto {
        id: alg.id.clone(),
        size: alg.size,
        operations: alg
            .operations
            .iter()
            .map(|o| OperationDto {
                name: o.name.clone(),
                arity: o.arity,
                table: o.table.iter().map(|&v| v as usize).collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&dto).expect("algebra serialization cannot fail")
}

pub fn algebra_from_json(text: &str) -> Result<Arc<FiniteAlgebra>> {
    let dto: AlgebraDto =
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("bad algebra JSON: {e}")))?;
    let mut ops = Vec::with_capacity(dto.operations.len());
    for o in dto.operations {
        let mut table = Vec::with_capacity(o.table.len());
        for v in o.table {
            if v >= dto.size {
                return Err(Error::ElementOutOfRange {
                    element: v,
                    size: dto.size,
                });
            }
            table.push(v as Element);
        }
        ops.push(OperationTable::new(o.name, o.arity, table));
    }
    FiniteAlgebra::new(dto.id, dto.size, ops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit;

    #[test]
    fn apply_op_semilattice_and_affine() {
        let a2 = testkit::a2semi();
        assert_eq!(a2.apply_op("meet", &[1, 0]).unwrap(), 0);
        let z3 = testkit::z3aff();
        // m(x,y,y) = x
        assert_eq!(z3.apply_op("mal", &[2, 1, 1]).unwrap(), 2);
        // direct arithmetic: 0 - 1 + 2 mod 3
        assert_eq!(z3.apply_op("mal", &[0, 1, 2]).unwrap(), 1);
    }

    #[test]
    fn apply_op_errors() {
        let a2 = testkit::a2semi();
        assert!(matches!(
            a2.apply_op("join", &[0, 0]),
            Err(Error::UnknownOperation(_))
        ));
        assert!(matches!(
            a2.apply_op("meet", &[0]),
            Err(Error::ArityMismatch { .. })
        ));
        assert!(matches!(
            a2.apply_op("meet", &[0, 7]),
            Err(Error::ElementOutOfRange { .. })
        ));
    }

    #[test]
    fn non_idempotent_rejected() {
        // binary constant-0 operation on {0,1} is not idempotent at 1
        let bad = OperationTable::new("zero", 2, vec![0, 0, 0, 0]);
        assert!(FiniteAlgebra::new("bad", 2, vec![bad]).is_err());
    }

    #[test]
    fn restrict_to_singleton_and_full() {
        let a2 = testkit::a2semi();
        let (one, tr) = a2.restrict(&[0]).unwrap();
        assert_eq!(one.size, 1);
        assert_eq!(tr, vec![0]);
        let (same, tr) = a2.restrict(&[0, 1]).unwrap();
        assert_eq!(same.size, 2);
        assert_eq!(tr, vec![0, 1]);
        assert_eq!(same.operations, a2.operations);
    }

    #[test]
    fn restrict_not_closed_witness() {
        let z3 = testkit::z3aff();
        let err = z3.restrict(&[0, 1]).unwrap_err();
        match err {
            Error::NotClosed { op, args, result } => {
                assert_eq!(op, "mal");
                // single table scan: m(0,1,0) = 2 leaves {0,1}
                assert_eq!(z3.apply_op("mal", &args.iter().map(|&a| a as Element).collect::<Vec<_>>()).unwrap(), result as Element);
                assert_eq!(result, 2);
            }
            other => panic!("expected NotClosed, got {other:?}"),
        }
    }

    #[test]
    fn product_encoding() {
        let z3 = testkit::z3aff();
        let p = z3.product(&z3, "z3xz3").unwrap();
        assert_eq!(p.size, 9);
        // m((0,1),(0,0),(1,1)) = (0-0+1, 1-0+1) = (1,2) -> 1*3+2 = 5
        assert_eq!(p.apply_op("mal", &[1, 0, 4]).unwrap(), 5);
    }

    #[test]
    fn json_round_trip_is_lossless_and_stable() {
        let z3 = testkit::z3aff();
        let text = algebra_to_json(&z3);
        let back = algebra_from_json(&text).unwrap();
        assert_eq!(*back, *z3);
        assert_eq!(algebra_to_json(&back), text);
    }
}
