//! Relations over finite algebras and subalgebra generation in powers.
//!
//! The closure kernel deduplicates identical coordinate columns before
//! generating: positions whose component algebras are equal and whose
//! generator values agree stay equal in every generated tuple, so the closure
//! runs in the reduced power and tuples are expanded on demand.

use std::collections::HashMap;
use std::sync::Arc;

use crate::algebra::{Element, FiniteAlgebra};
use crate::budget::Budget;
use crate::error::{Error, Result};

/// Marker for generator provenance.
const GEN: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Prov {
    /// Operation index, or `GEN` for a generator.
    op: u32,
    /// Parent tuple indices; for a generator, the single generator ordinal.
    args: Vec<u32>,
}

/// A finite relation over one algebra per coordinate. All component algebras
/// must share one operation signature. Tuples are stored in insertion
/// (discovery) order; `sorted_tuples` gives the canonical enumeration.
#[derive(Debug, Clone)]
pub struct TupleSet {
    components: Vec<Arc<FiniteAlgebra>>,
    arity: usize,
    /// full position -> reduced column
    col_map: Vec<u32>,
    /// one representative full position per reduced column
    col_rep: Vec<u32>,
    rarity: usize,
    /// reduced tuples, `rarity`-strided, discovery order
    data: Vec<Element>,
    index: HashMap<Vec<Element>, u32>,
}

impl TupleSet {
    /// Builds a relation from explicit tuples (deduplicated, order kept).
    pub fn from_tuples(
        components: Vec<Arc<FiniteAlgebra>>,
        tuples: impl IntoIterator<Item = Vec<Element>>,
    ) -> Result<Self> {
        check_signatures(&components)?;
        let arity = components.len();
        let mut set = TupleSet {
            col_map: (0..arity as u32).collect(),
            col_rep: (0..arity as u32).collect(),
            rarity: arity,
            components,
            arity,
            data: Vec::new(),
            index: HashMap::new(),
        };
        for t in tuples {
            if t.len() != arity {
                return Err(Error::InvalidInput(format!(
                    "tuple of length {} in relation of arity {}",
                    t.len(),
                    arity
                )));
            }
            for (p, &e) in t.iter().enumerate() {
                if e as usize >= set.components[p].size {
                    return Err(Error::ElementOutOfRange {
                        element: e as usize,
                        size: set.components[p].size,
                    });
                }
            }
            set.insert_reduced(t);
        }
        Ok(set)
    }

    /// The full relation `A_1 x .. x A_k`.
    pub fn full(components: Vec<Arc<FiniteAlgebra>>) -> Result<Self> {
        check_signatures(&components)?;
        let sizes: Vec<usize> = components.iter().map(|c| c.size).collect();
        let mut tuples = Vec::new();
        let mut t = vec![0 as Element; components.len()];
        loop {
            tuples.push(t.clone());
            let mut i = t.len();
            loop {
                if i == 0 {
                    return TupleSet::from_tuples(components, tuples);
                }
                i -= 1;
                if (t[i] as usize) + 1 < sizes[i] {
                    t[i] += 1;
                    break;
                }
                t[i] = 0;
            }
        }
    }

    fn insert_reduced(&mut self, full: Vec<Element>) -> u32 {
        let reduced: Vec<Element> = self
            .col_rep
            .iter()
            .map(|&p| full[p as usize])
            .collect();
        self.insert_raw(reduced)
    }

    fn insert_raw(&mut self, reduced: Vec<Element>) -> u32 {
        if let Some(&i) = self.index.get(&reduced) {
            return i;
        }
        let i = (self.data.len() / self.rarity.max(1)) as u32;
        self.data.extend_from_slice(&reduced);
        self.index.insert(reduced, i);
        i
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn components(&self) -> &[Arc<FiniteAlgebra>] {
        &self.components
    }

    pub fn len(&self) -> usize {
        if self.rarity == 0 {
            // arity-0 relation: either empty or the single empty tuple
            self.index.len()
        } else {
            self.data.len() / self.rarity
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The `i`-th tuple in discovery order, expanded to full arity.
    pub fn tuple(&self, i: usize) -> Vec<Element> {
        let row = &self.data[i * self.rarity..(i + 1) * self.rarity];
        self.col_map.iter().map(|&c| row[c as usize]).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = Vec<Element>> + '_ {
        (0..self.len()).map(|i| self.tuple(i))
    }

    /// Canonical lexicographic enumeration.
    pub fn sorted_tuples(&self) -> Vec<Vec<Element>> {
        let mut v: Vec<Vec<Element>> = self.iter().collect();
        v.sort_unstable();
        v
    }

    pub fn contains(&self, t: &[Element]) -> bool {
        if t.len() != self.arity {
            return false;
        }
        if self.rarity == 0 {
            return !self.index.is_empty();
        }
        // positions sharing a reduced column must agree
        let mut reduced = vec![0 as Element; self.rarity];
        let mut seen = vec![false; self.rarity];
        for (p, &e) in t.iter().enumerate() {
            let c = self.col_map[p] as usize;
            if seen[c] {
                if reduced[c] != e {
                    return false;
                }
            } else {
                reduced[c] = e;
                seen[c] = true;
            }
        }
        self.index.contains_key(&reduced)
    }

    /// Set equality on tuples.
    pub fn set_eq(&self, other: &TupleSet) -> bool {
        self.arity == other.arity
            && self.len() == other.len()
            && self.iter().all(|t| other.contains(&t))
    }

    /// Projection onto the given positions (in the given order).
    pub fn project(&self, positions: &[usize]) -> Result<TupleSet> {
        for &p in positions {
            if p >= self.arity {
                return Err(Error::InvalidInput(format!(
                    "projection position {p} out of range for arity {}",
                    self.arity
                )));
            }
        }
        let comps: Vec<Arc<FiniteAlgebra>> = positions
            .iter()
            .map(|&p| Arc::clone(&self.components[p]))
            .collect();
        let tuples = self
            .iter()
            .map(|t| positions.iter().map(|&p| t[p]).collect::<Vec<_>>());
        TupleSet::from_tuples(comps, tuples)
    }

    /// True iff every unary projection is the full component universe.
    pub fn is_subdirect(&self) -> bool {
        for p in 0..self.arity {
            let mut seen = vec![false; self.components[p].size];
            for t in self.iter() {
                seen[t[p] as usize] = true;
            }
            if !seen.iter().all(|&b| b) {
                return false;
            }
        }
        true
    }

    /// One closure pass: verifies invariance under every signature operation.
    pub fn is_closed(&self) -> bool {
        if self.is_empty() {
            return true;
        }
        let n = self.len();
        let sig_len = self.components[0].operations.len();
        for op in 0..sig_len {
            let m = self.components[0].operations[op].arity;
            let mut args = vec![0usize; m];
            loop {
                let mut result = vec![0 as Element; self.rarity];
                for (c, &p) in self.col_rep.iter().enumerate() {
                    let alg = &self.components[p as usize];
                    let vals: Vec<Element> = args
                        .iter()
                        .map(|&j| self.data[j * self.rarity + c])
                        .collect();
                    result[c] = alg.operations[op].apply(alg.size, &vals);
                }
                if !self.index.contains_key(&result) {
                    return false;
                }
                let mut i = m;
                let mut done = true;
                while i > 0 {
                    i -= 1;
                    args[i] += 1;
                    if args[i] < n {
                        done = false;
                        break;
                    }
                    args[i] = 0;
                }
                if done {
                    break;
                }
            }
        }
        true
    }
}

fn check_signatures(components: &[Arc<FiniteAlgebra>]) -> Result<()> {
    if components.is_empty() {
        return Ok(());
    }
    let first = &components[0];
    for c in &components[1..] {
        if !first.same_signature(c) {
            return Err(Error::SignatureMismatch);
        }
    }
    Ok(())
}

/// The result of a subalgebra generation run: the generated set together with
/// the derivation of every tuple (producing operation and parent tuples).
#[derive(Debug, Clone)]
pub struct Closure {
    set: TupleSet,
    prov: Vec<Prov>,
    gen_count: usize,
}

impl Closure {
    pub fn set(&self) -> &TupleSet {
        &self.set
    }

    pub fn into_set(self) -> TupleSet {
        self.set
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    pub fn generator_count(&self) -> usize {
        self.gen_count
    }

    /// `(op_index, parents)` of tuple `i`, or `None` if it is the `k`-th
    /// generator, in which case `generator_ordinal` applies.
    pub fn derivation(&self, i: usize) -> Option<(usize, &[u32])> {
        let p = &self.prov[i];
        if p.op == GEN {
            None
        } else {
            Some((p.op as usize, &p.args))
        }
    }

    pub fn generator_ordinal(&self, i: usize) -> Option<usize> {
        let p = &self.prov[i];
        if p.op == GEN {
            Some(p.args[0] as usize)
        } else {
            None
        }
    }
}

/// Generates the least closed relation containing `generators` inside the
/// product of `components`.
///
/// Deterministic: tuples are discovered with a first-new-argument sweep in
/// round order, operations in declaration order, argument indices
/// lexicographically. Every discovered tuple records its derivation.
pub fn sg_closure(
    components: Vec<Arc<FiniteAlgebra>>,
    generators: &[Vec<Element>],
    budget: &Budget,
) -> Result<Closure> {
    check_signatures(&components)?;
    if generators.is_empty() {
        return Err(Error::InvalidInput("generator set must be nonempty".into()));
    }
    let arity = components.len();
    for g in generators {
        if g.len() != arity {
            return Err(Error::InvalidInput(format!(
                "generator of length {} in power of arity {arity}",
                g.len()
            )));
        }
        for (p, &e) in g.iter().enumerate() {
            if e as usize >= components[p].size {
                return Err(Error::ElementOutOfRange {
                    element: e as usize,
                    size: components[p].size,
                });
            }
        }
    }

    // Column dedup: positions with structurally equal component algebras and
    // identical generator columns coincide in every generated tuple.
    let mut col_map = vec![0u32; arity];
    let mut col_rep: Vec<u32> = Vec::new();
    {
        let mut keys: Vec<(usize, Vec<Element>)> = Vec::new();
        'pos: for p in 0..arity {
            let col: Vec<Element> = generators.iter().map(|g| g[p]).collect();
            for (c, (q, qcol)) in keys.iter().enumerate() {
                if *qcol == col && components[*q] == components[p] {
                    col_map[p] = c as u32;
                    continue 'pos;
                }
            }
            col_map[p] = keys.len() as u32;
            col_rep.push(p as u32);
            keys.push((p, col));
        }
    }
    let rarity = col_rep.len();
    let col_algs: Vec<Arc<FiniteAlgebra>> = col_rep
        .iter()
        .map(|&p| Arc::clone(&components[p as usize]))
        .collect();

    let mut set = TupleSet {
        components,
        arity,
        col_map,
        col_rep,
        rarity,
        data: Vec::new(),
        index: HashMap::new(),
    };
    let mut prov: Vec<Prov> = Vec::new();
    for (k, g) in generators.iter().enumerate() {
        let before = set.len();
        let idx = set.insert_reduced(g.clone());
        if set.len() > before {
            debug_assert_eq!(idx as usize, before);
            prov.push(Prov {
                op: GEN,
                args: vec![k as u32],
            });
        }
    }

    let signature: Vec<usize> = set.components[0]
        .operations
        .iter()
        .map(|o| o.arity)
        .collect();
    let mut scratch_args: Vec<usize> = Vec::new();
    let mut scratch_vals: Vec<Element> = Vec::new();
    let mut lo = 0usize;
    while lo < set.len() {
        let hi = set.len();
        for (op_idx, &m) in signature.iter().enumerate() {
            // All argument tuples over [0, hi) with at least one index >= lo,
            // visited once each: position t holds the first "new" index.
            for t in 0..m {
                if t > 0 && lo == 0 {
                    // positions before t range over [0, lo), which is empty
                    continue;
                }
                scratch_args.clear();
                scratch_args.resize(m, 0);
                scratch_args[t] = lo;
                loop {
                    // evaluate coordinatewise on reduced columns
                    scratch_vals.clear();
                    let mut reduced = vec![0 as Element; rarity];
                    for c in 0..rarity {
                        let alg = &col_algs[c];
                        scratch_vals.clear();
                        for &j in scratch_args.iter() {
                            scratch_vals.push(set.data[j * rarity + c]);
                        }
                        reduced[c] = alg.operations[op_idx].apply(alg.size, &scratch_vals);
                    }
                    let before = set.len();
                    set.insert_raw(reduced);
                    if set.len() > before {
                        prov.push(Prov {
                            op: op_idx as u32,
                            args: scratch_args.iter().map(|&a| a as u32).collect(),
                        });
                        if set.len() > budget.max_tuples {
                            return Err(Error::BudgetExceeded {
                                budget: budget.max_tuples,
                            });
                        }
                    }
                    // odometer: coords < t over [0, lo), coord t over [lo, hi),
                    // coords > t over [0, hi)
                    let mut i = m;
                    let mut done = true;
                    while i > 0 {
                        i -= 1;
                        scratch_args[i] += 1;
                        let limit = if i < t {
                            lo
                        } else {
                            hi
                        };
                        if scratch_args[i] < limit {
                            done = false;
                            break;
                        }
                        scratch_args[i] = if i == t { lo } else { 0 };
                    }
                    if done {
                        break;
                    }
                }
            }
        }
        lo = hi;
    }

    Ok(Closure {
        gen_count: generators.len(),
        set,
        prov,
    })
}

/// Subalgebra generation: the least closed `TupleSet` containing `generators`.
pub fn sg_generate(
    components: Vec<Arc<FiniteAlgebra>>,
    generators: &[Vec<Element>],
    budget: &Budget,
) -> Result<TupleSet> {
    Ok(sg_closure(components, generators, budget)?.into_set())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit;

    fn power(alg: &Arc<FiniteAlgebra>, k: usize) -> Vec<Arc<FiniteAlgebra>> {
        (0..k).map(|_| Arc::clone(alg)).collect()
    }

    #[test]
    fn sg_semilattice_binary_clone() {
        let a2 = testkit::a2semi();
        let set = sg_generate(
            power(&a2, 4),
            &[vec![0, 0, 1, 1], vec![0, 1, 0, 1]],
            &Budget::default(),
        )
        .unwrap();
        assert_eq!(
            set.sorted_tuples(),
            vec![vec![0, 0, 0, 1], vec![0, 0, 1, 1], vec![0, 1, 0, 1]]
        );
    }

    #[test]
    fn sg_diagonal_is_fixed() {
        let z3 = testkit::z3aff();
        let set = sg_generate(power(&z3, 3), &[vec![1, 1, 1]], &Budget::default()).unwrap();
        assert_eq!(set.sorted_tuples(), vec![vec![1, 1, 1]]);
    }

    #[test]
    fn sg_affine_line() {
        // The affine line through (0,1) and (1,2) in Z3^2 is the coset
        // {(0,1),(1,2),(2,0)} of the diagonal.
        let z3 = testkit::z3aff();
        let set = sg_generate(
            power(&z3, 2),
            &[vec![0, 1], vec![1, 2]],
            &Budget::default(),
        )
        .unwrap();
        assert_eq!(
            set.sorted_tuples(),
            vec![vec![0, 1], vec![1, 2], vec![2, 0]]
        );
        // a single generator is already closed by idempotency
        let single = sg_generate(power(&z3, 2), &[vec![0, 1]], &Budget::default()).unwrap();
        assert_eq!(single.sorted_tuples(), vec![vec![0, 1]]);
    }

    #[test]
    fn closure_result_is_closed_and_minimal() {
        let a2 = testkit::a2semi();
        let set = sg_generate(
            power(&a2, 4),
            &[vec![0, 0, 1, 1], vec![0, 1, 0, 1]],
            &Budget::default(),
        )
        .unwrap();
        assert!(set.is_closed());
        // no proper closed subset contains the generators (brute force over
        // subsets containing them)
        let tuples = set.sorted_tuples();
        let k = tuples.len();
        for mask in 0..(1u32 << k) {
            let subset: Vec<Vec<Element>> = (0..k)
                .filter(|&i| mask & (1 << i) != 0)
                .map(|i| tuples[i].clone())
                .collect();
            if subset.len() == k || subset.len() < 2 {
                continue;
            }
            if !subset.contains(&vec![0, 0, 1, 1]) || !subset.contains(&vec![0, 1, 0, 1]) {
                continue;
            }
            let sub = TupleSet::from_tuples(power(&a2, 4), subset).unwrap();
            assert!(!sub.is_closed(), "found a smaller closed superset of the generators");
        }
    }

    #[test]
    fn budget_exceeded_signals() {
        let z3 = testkit::z3aff();
        let res = sg_generate(
            power(&z3, 4),
            &[
                vec![0, 0, 0, 1],
                vec![0, 1, 0, 0],
                vec![1, 0, 0, 0],
            ],
            &Budget::new(3),
        );
        assert!(matches!(res, Err(Error::BudgetExceeded { .. })));
    }

    #[test]
    fn column_dedup_expands_correctly() {
        let a2 = testkit::a2semi();
        // columns 0 and 2 are identical in all generators
        let set = sg_generate(
            power(&a2, 3),
            &[vec![0, 1, 0], vec![1, 1, 1]],
            &Budget::default(),
        )
        .unwrap();
        for t in set.iter() {
            assert_eq!(t[0], t[2]);
        }
        assert!(set.contains(&[0, 1, 0]));
        assert!(!set.contains(&[0, 1, 1]));
    }

    #[test]
    fn projection_and_subdirect() {
        let z3 = testkit::z3aff();
        let set = sg_generate(
            power(&z3, 2),
            &[vec![0, 1], vec![1, 2]],
            &Budget::default(),
        )
        .unwrap();
        assert!(set.is_subdirect());
        let pr = set.project(&[0]).unwrap();
        assert_eq!(pr.sorted_tuples(), vec![vec![0], vec![1], vec![2]]);
    }
}
