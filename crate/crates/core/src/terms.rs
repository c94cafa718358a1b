//! Term search over indicator powers: pattern-constrained term discovery,
//! weak near-unanimity detection, dichotomy classification, semilattice edge
//! scanning, the dot operation, and unary polynomial orbits.

use std::collections::HashMap;
use std::sync::Arc;

use crate::algebra::{Element, FiniteAlgebra};
use crate::budget::Budget;
use crate::congruence::{con_lattice, Congruence};
use crate::error::{Error, Result};
use crate::relation::{sg_closure, sg_generate, Closure, TupleSet};

/// A replayable derivation of a term operation from basic operations.
///
/// Step indices refer to earlier entries of `derivation`; operations are
/// referenced by name so a witness found in one algebra evaluates in any
/// algebra of the same signature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermWitness {
    pub arity: usize,
    pub derivation: Vec<Step>,
    pub root: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Var(usize),
    Apply(String, Vec<usize>),
}

impl TermWitness {
    /// The `i`-th projection of the given arity.
    pub fn projection(arity: usize, i: usize) -> Self {
        assert!(i < arity);
        TermWitness {
            arity,
            derivation: vec![Step::Var(i)],
            root: 0,
        }
    }

    /// Evaluates the term on elements of `alg`.
    pub fn eval(&self, alg: &FiniteAlgebra, args: &[Element]) -> Result<Element> {
        if args.len() != self.arity {
            return Err(Error::ArityMismatch {
                op: "<term>".into(),
                expected: self.arity,
                got: args.len(),
            });
        }
        let mut values: Vec<Element> = Vec::with_capacity(self.derivation.len());
        for step in &self.derivation {
            let v = match step {
                Step::Var(i) => args[*i],
                Step::Apply(op, parents) => {
                    let vals: Vec<Element> = parents.iter().map(|&p| values[p]).collect();
                    alg.apply_op(op, &vals)?
                }
            };
            values.push(v);
        }
        Ok(values[self.root])
    }

    /// Full value table of the term on `alg`, row-major, last argument fastest.
    pub fn table(&self, alg: &FiniteAlgebra) -> Result<Vec<Element>> {
        let n = alg.size;
        let mut out = Vec::with_capacity(n.pow(self.arity as u32));
        let mut args = vec![0 as Element; self.arity];
        loop {
            out.push(self.eval(alg, &args)?);
            let mut i = self.arity;
            loop {
                if i == 0 {
                    return Ok(out);
                }
                i -= 1;
                if (args[i] as usize) + 1 < n {
                    args[i] += 1;
                    break;
                }
                args[i] = 0;
            }
        }
    }

    /// S-expression rendering, e.g. `(meet (meet x0 x1) x2)`.
    pub fn to_sexpr(&self) -> String {
        fn render(w: &TermWitness, i: usize, out: &mut String) {
            match &w.derivation[i] {
                Step::Var(v) => out.push_str(&format!("x{v}")),
                Step::Apply(op, parents) => {
                    out.push('(');
                    out.push_str(op);
                    for &p in parents {
                        out.push(' ');
                        render(w, p, out);
                    }
                    out.push(')');
                }
            }
        }
        let mut s = String::new();
        render(self, self.root, &mut s);
        s
    }
}

/// Extracts the derivation of tuple `idx` of a closure as a term witness over
/// `arity` variables (generator ordinal = variable index).
pub fn witness_from_closure(closure: &Closure, idx: usize, arity: usize) -> TermWitness {
    let mut memo: HashMap<usize, usize> = HashMap::new();
    let mut derivation: Vec<Step> = Vec::new();
    fn walk(
        closure: &Closure,
        idx: usize,
        memo: &mut HashMap<usize, usize>,
        derivation: &mut Vec<Step>,
    ) -> usize {
        if let Some(&s) = memo.get(&idx) {
            return s;
        }
        let step = if let Some(g) = closure.generator_ordinal(idx) {
            Step::Var(g)
        } else {
            let (op, parents) = closure.derivation(idx).expect("tuple has a derivation");
            let parents: Vec<u32> = parents.to_vec();
            let children: Vec<usize> = parents
                .iter()
                .map(|&p| walk(closure, p as usize, memo, derivation))
                .collect();
            let name = closure.set().components()[0].operations[op].name.clone();
            Step::Apply(name, children)
        };
        derivation.push(step);
        let s = derivation.len() - 1;
        memo.insert(idx, s);
        s
    }
    let root = walk(closure, idx, &mut memo, &mut derivation);
    TermWitness {
        arity,
        derivation,
        root,
    }
}

/// One row of a term-search pattern: the arguments the sought `k`-ary term is
/// applied to, and what the output must satisfy.
#[derive(Debug, Clone)]
pub struct PatternRow {
    pub args: Vec<Element>,
    pub target: RowTarget,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowTarget {
    /// Output must equal this element.
    Exact(Element),
    /// Outputs of all rows sharing a group id must be equal.
    Group(usize),
}

/// Searches the `k`-ary clone for a term matching the pattern.
///
/// Builds one generator tuple per term variable in the power `A^rows`, closes
/// under the basic operations, and scans the closure in discovery order for a
/// tuple matching all row targets. Exhaustive at desk scale, so `None` proves
/// non-existence within the clone.
pub fn find_term_by_pattern(
    alg: &Arc<FiniteAlgebra>,
    arity: usize,
    rows: &[PatternRow],
    budget: &Budget,
) -> Result<Option<TermWitness>> {
    if rows.is_empty() || arity == 0 {
        return Err(Error::InvalidInput("pattern must have rows and arity >= 1".into()));
    }
    for row in rows {
        if row.args.len() != arity {
            return Err(Error::InvalidInput(format!(
                "pattern row has {} arguments, term arity is {arity}",
                row.args.len()
            )));
        }
    }
    let components: Vec<Arc<FiniteAlgebra>> = (0..rows.len()).map(|_| Arc::clone(alg)).collect();
    let generators: Vec<Vec<Element>> = (0..arity)
        .map(|i| rows.iter().map(|r| r.args[i]).collect())
        .collect();
    let closure = sg_closure(components, &generators, budget)?;
    for idx in 0..closure.len() {
        let t = closure.set().tuple(idx);
        if matches_pattern(&t, rows) {
            return Ok(Some(witness_from_closure(&closure, idx, arity)));
        }
    }
    Ok(None)
}

fn matches_pattern(t: &[Element], rows: &[PatternRow]) -> bool {
    let mut group_val: HashMap<usize, Element> = HashMap::new();
    for (r, row) in rows.iter().enumerate() {
        match &row.target {
            RowTarget::Exact(e) => {
                if t[r] != *e {
                    return false;
                }
            }
            RowTarget::Group(g) => match group_val.get(g) {
                Some(&v) => {
                    if t[r] != v {
                        return false;
                    }
                }
                None => {
                    group_val.insert(*g, t[r]);
                }
            },
        }
    }
    true
}

/// Searches for a `k`-ary weak near-unanimity term:
/// `w(y,x,..,x) = w(x,y,x,..,x) = .. = w(x,..,x,y)` for all `x, y`.
/// Idempotency is automatic in an idempotent algebra.
pub fn wnu_exists(
    alg: &Arc<FiniteAlgebra>,
    k: usize,
    budget: &Budget,
) -> Result<Option<TermWitness>> {
    if k < 3 {
        return Err(Error::InvalidInput("weak near-unanimity arity must be >= 3".into()));
    }
    let n = alg.size;
    let mut rows = Vec::new();
    let mut group = 0usize;
    for x in 0..n {
        for y in 0..n {
            if x == y {
                continue;
            }
            for j in 0..k {
                let mut args = vec![x as Element; k];
                args[j] = y as Element;
                rows.push(PatternRow {
                    args,
                    target: RowTarget::Group(group),
                });
            }
            group += 1;
        }
    }
    find_term_by_pattern(alg, k, &rows, budget)
}

/// Outcome of the dichotomy classification.
#[derive(Debug, Clone)]
pub enum Classification {
    /// A weak near-unanimity term of the given arity exists.
    Tractable { witness: TermWitness, arity: usize },
    /// No witness up to the searched arity bound; deliberately non-committal
    /// about larger arities.
    NoWitnessUpTo(usize),
}

/// Default classification search bound.
pub fn default_max_wnu_arity(alg: &FiniteAlgebra) -> usize {
    4.max(alg.size + 1)
}

/// Classifies by searching for the least-arity weak near-unanimity term in
/// `[3, max_arity]`.
pub fn classify_dichotomy(
    alg: &Arc<FiniteAlgebra>,
    max_arity: usize,
    budget: &Budget,
) -> Result<Classification> {
    for k in 3..=max_arity.max(3) {
        if let Some(witness) = wnu_exists(alg, k, budget)? {
            return Ok(Classification::Tractable { witness, arity: k });
        }
    }
    Ok(Classification::NoWitnessUpTo(max_arity))
}

/// Kind of a certified edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Semilattice,
    ThinSemilattice,
}

/// Certificate for a semilattice edge `(a, b)` of an algebra, with the `b`
/// side absorbing: the witness term `f` satisfies `f(a,a) = a` and
/// `f(a,b) = f(b,a) = f(b,b) = b` modulo the witness congruence of
/// `Sg{a, b}`. Thin certificates have the equality congruence as witness, so
/// the equations hold exactly.
#[derive(Debug, Clone)]
pub struct EdgeCert {
    pub a: Element,
    pub b: Element,
    pub sub: Arc<FiniteAlgebra>,
    /// subalgebra index -> element of the ambient algebra
    pub embedding: Vec<Element>,
    pub a_sub: Element,
    pub b_sub: Element,
    pub witness_congruence: Congruence,
    pub witness_term: TermWitness,
    pub kind: EdgeKind,
}

impl EdgeCert {
    /// Replays the witness term and re-checks the defining equations.
    pub fn verify(&self) -> Result<()> {
        let f = &self.witness_term;
        let th = &self.witness_congruence;
        let (a, b) = (self.a_sub, self.b_sub);
        let checks = [
            (f.eval(&self.sub, &[a, a])?, a),
            (f.eval(&self.sub, &[a, b])?, b),
            (f.eval(&self.sub, &[b, a])?, b),
            (f.eval(&self.sub, &[b, b])?, b),
        ];
        for (got, want) in checks {
            let ok = match self.kind {
                EdgeKind::ThinSemilattice => got == want,
                EdgeKind::Semilattice => th.related(got, want),
            };
            if !ok {
                return Err(Error::InternalInconsistency(format!(
                    "edge certificate ({}, {}) fails replay",
                    self.a, self.b
                )));
            }
        }
        Ok(())
    }
}

/// The subalgebra generated by a set of elements, as (algebra, embedding).
pub fn generated_subalgebra(
    alg: &Arc<FiniteAlgebra>,
    gens: &[Element],
    budget: &Budget,
) -> Result<(Arc<FiniteAlgebra>, Vec<Element>)> {
    let universe = sg_generate(
        vec![Arc::clone(alg)],
        &gens.iter().map(|&g| vec![g]).collect::<Vec<_>>(),
        budget,
    )?;
    let elems: Vec<Element> = universe.sorted_tuples().into_iter().map(|t| t[0]).collect();
    alg.restrict(&elems)
}

/// Scans all ordered pairs for semilattice edges.
///
/// For each pair `(a, b)`, `a != b`, and each congruence θ of `Sg{a,b}` that
/// is either maximal separating `a, b` or the equality relation, searches the
/// binary clone for a term that is a semilattice operation on `{a^θ, b^θ}`
/// with the `b` side absorbing. Scanning ordered pairs covers both
/// orientations of every edge.
pub fn scan_semilattice_edges(
    alg: &Arc<FiniteAlgebra>,
    budget: &Budget,
) -> Result<(Vec<EdgeCert>, bool)> {
    let n = alg.size;
    let mut certs = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let (a, b) = (a as Element, b as Element);
            let (sub, embedding) = generated_subalgebra(alg, &[a, b], budget)?;
            let a_sub = embedding.iter().position(|&e| e == a).unwrap() as Element;
            let b_sub = embedding.iter().position(|&e| e == b).unwrap() as Element;
            let lattice = con_lattice(&sub)?;
            let mut thetas: Vec<Congruence> = Vec::new();
            for i in lattice.coatoms() {
                let th = &lattice.congruences()[i];
                if !th.related(a_sub, b_sub) {
                    thetas.push(th.clone());
                }
            }
            let zero = Congruence::zero(&sub);
            if !thetas.contains(&zero) {
                thetas.push(zero);
            }
            for theta in thetas {
                let (quot, nat) = sub.quotient(&theta)?;
                let (aq, bq) = (nat[a_sub as usize], nat[b_sub as usize]);
                let rows = vec![
                    PatternRow {
                        args: vec![aq, bq],
                        target: RowTarget::Exact(bq),
                    },
                    PatternRow {
                        args: vec![bq, aq],
                        target: RowTarget::Exact(bq),
                    },
                ];
                if let Some(witness) = find_term_by_pattern(&quot, 2, &rows, budget)? {
                    let kind = if theta.is_zero() {
                        EdgeKind::ThinSemilattice
                    } else {
                        EdgeKind::Semilattice
                    };
                    let cert = EdgeCert {
                        a,
                        b,
                        sub: Arc::clone(&sub),
                        embedding: embedding.clone(),
                        a_sub,
                        b_sub,
                        witness_congruence: theta.clone(),
                        witness_term: witness,
                        kind,
                    };
                    cert.verify()?;
                    certs.push(cert);
                }
            }
        }
    }
    let free = certs.is_empty();
    Ok((certs, free))
}

/// Tests whether `(a, c)` is a thin semilattice edge: some binary term `g`
/// has `g(a,a) = a` and `g(a,c) = g(c,a) = g(c,c) = c`.
pub fn is_thin_semilattice_edge(
    alg: &Arc<FiniteAlgebra>,
    a: Element,
    c: Element,
    budget: &Budget,
) -> Result<bool> {
    if a == c {
        return Ok(false);
    }
    let rows = vec![
        PatternRow {
            args: vec![a, c],
            target: RowTarget::Exact(c),
        },
        PatternRow {
            args: vec![c, a],
            target: RowTarget::Exact(c),
        },
    ];
    Ok(find_term_by_pattern(alg, 2, &rows, budget)?.is_some())
}

/// Searches the binary clone, in closure discovery order, for an operation
/// that is a semilattice operation on every certified semilattice edge and
/// satisfies: for all `a, b`, either `f(a,b) = a` or `(a, f(a,b))` is a thin
/// semilattice edge. The first witness wins; orientation is whatever the
/// witness induces per edge.
pub fn find_dot_operation(
    alg: &Arc<FiniteAlgebra>,
    edges: &[EdgeCert],
    budget: &Budget,
) -> Result<TermWitness> {
    find_shared_dot_operation(&[(Arc::clone(alg), edges.to_vec())], budget)
}

/// Like [`find_dot_operation`], but the term must satisfy the dot conditions
/// on every listed algebra simultaneously (they share one signature). One
/// shared term is what relation invariance requires when a retraction is
/// applied coordinatewise across heterogeneous domains.
pub fn find_shared_dot_operation(
    algebras: &[(Arc<FiniteAlgebra>, Vec<EdgeCert>)],
    budget: &Budget,
) -> Result<TermWitness> {
    if algebras.is_empty() {
        return Err(Error::InvalidInput("need at least one algebra".into()));
    }
    // concatenated binary clone: one block of n*n positions per algebra, so
    // each closure tuple is a term's full table on every algebra at once
    let mut components: Vec<Arc<FiniteAlgebra>> = Vec::new();
    let mut g1: Vec<Element> = Vec::new();
    let mut g2: Vec<Element> = Vec::new();
    let mut offsets = Vec::with_capacity(algebras.len());
    for (alg, _) in algebras {
        offsets.push(components.len());
        let n = alg.size;
        for x in 0..n {
            for y in 0..n {
                components.push(Arc::clone(alg));
                g1.push(x as Element);
                g2.push(y as Element);
            }
        }
    }
    let closure = sg_closure(components, &[g1, g2], budget)?;
    let mut thin_cache: HashMap<(usize, Element, Element), bool> = HashMap::new();
    'tuples: for idx in 0..closure.len() {
        let table = closure.set().tuple(idx);
        for (k, (alg, edges)) in algebras.iter().enumerate() {
            let n = alg.size;
            let off = offsets[k];
            let f = |x: Element, y: Element| table[off + x as usize * n + y as usize];
            // (i) semilattice on every certified edge, modulo its witness
            // congruence
            for cert in edges {
                let pos =
                    |e: Element| cert.embedding.iter().position(|&x| x == e).unwrap() as Element;
                let th = &cert.witness_congruence;
                let (a, b) = (cert.a, cert.b);
                let u = pos(f(a, b));
                let v = pos(f(b, a));
                let (asub, bsub) = (cert.a_sub, cert.b_sub);
                if !th.related(u, v) {
                    continue 'tuples;
                }
                if !(th.related(u, asub) || th.related(u, bsub)) {
                    continue 'tuples;
                }
            }
            // (ii) f(a,b) = a or (a, f(a,b)) is a thin semilattice edge
            for a in 0..n {
                for b in 0..n {
                    let (a, b) = (a as Element, b as Element);
                    let c = f(a, b);
                    if c == a {
                        continue;
                    }
                    let thin = match thin_cache.get(&(k, a, c)) {
                        Some(&v) => v,
                        None => {
                            let v = is_thin_semilattice_edge(alg, a, c, budget)?;
                            thin_cache.insert((k, a, c), v);
                            v
                        }
                    };
                    if !thin {
                        continue 'tuples;
                    }
                }
            }
        }
        return Ok(witness_from_closure(&closure, idx, 2));
    }
    Err(Error::NotFound)
}

/// The orbit of designated elements under all unary polynomials of `R`.
///
/// `tracked` lists `(component index, element)` per tracked slot. The result
/// is the subpower generated by the tracked tuple together with, for every
/// `r ∈ R`, the tuple repeating `r`'s coordinate values into the matching
/// tracked slots; this equals the set of images of `tracked` under all unary
/// polynomials of `R` (constants included).
pub fn unary_poly_orbit(
    relation: &TupleSet,
    tracked: &[(usize, Element)],
    budget: &Budget,
) -> Result<TupleSet> {
    if tracked.is_empty() {
        return Err(Error::InvalidInput("tracked slot list must be nonempty".into()));
    }
    for &(c, e) in tracked {
        if c >= relation.arity() {
            return Err(Error::InvalidInput(format!(
                "tracked slot refers to component {c} of a relation of arity {}",
                relation.arity()
            )));
        }
        if e as usize >= relation.components()[c].size {
            return Err(Error::ElementOutOfRange {
                element: e as usize,
                size: relation.components()[c].size,
            });
        }
    }
    let components: Vec<Arc<FiniteAlgebra>> = tracked
        .iter()
        .map(|&(c, _)| Arc::clone(&relation.components()[c]))
        .collect();
    let mut generators: Vec<Vec<Element>> = Vec::with_capacity(relation.len() + 1);
    generators.push(tracked.iter().map(|&(_, e)| e).collect());
    for r in relation.iter() {
        generators.push(tracked.iter().map(|&(c, _)| r[c]).collect());
    }
    sg_generate(components, &generators, budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit;

    fn b() -> Budget {
        Budget::default()
    }

    #[test]
    fn semilattice_pattern_finds_meet() {
        let a2 = testkit::a2semi();
        let rows = vec![
            PatternRow { args: vec![1, 1], target: RowTarget::Exact(1) },
            PatternRow { args: vec![1, 0], target: RowTarget::Exact(0) },
            PatternRow { args: vec![0, 1], target: RowTarget::Exact(0) },
            PatternRow { args: vec![0, 0], target: RowTarget::Exact(0) },
        ];
        let w = find_term_by_pattern(&a2, 2, &rows, &b()).unwrap().unwrap();
        assert_eq!(w.table(&a2).unwrap(), vec![0, 0, 0, 1]);
    }

    #[test]
    fn maltsev_pattern_finds_generator() {
        let z3 = testkit::z3aff();
        let mut rows = Vec::new();
        for x in 0..3u8 {
            for y in 0..3u8 {
                rows.push(PatternRow { args: vec![x, y, y], target: RowTarget::Exact(x) });
                rows.push(PatternRow { args: vec![y, y, x], target: RowTarget::Exact(x) });
            }
        }
        let w = find_term_by_pattern(&z3, 3, &rows, &b()).unwrap().unwrap();
        for x in 0..3u8 {
            for y in 0..3u8 {
                assert_eq!(w.eval(&z3, &[x, y, y]).unwrap(), x);
                assert_eq!(w.eval(&z3, &[y, y, x]).unwrap(), x);
            }
        }
    }

    #[test]
    fn majority_pattern_fails_on_z3aff() {
        let z3 = testkit::z3aff();
        let mut rows = Vec::new();
        for x in 0..3u8 {
            for y in 0..3u8 {
                if x == y {
                    continue;
                }
                rows.push(PatternRow { args: vec![y, x, x], target: RowTarget::Exact(x) });
                rows.push(PatternRow { args: vec![x, y, x], target: RowTarget::Exact(x) });
                rows.push(PatternRow { args: vec![x, x, y], target: RowTarget::Exact(x) });
            }
        }
        assert!(find_term_by_pattern(&z3, 3, &rows, &b()).unwrap().is_none());
    }

    #[test]
    fn wnu_results_match_classical_facts() {
        for alg in [testkit::a2semi(), testkit::a2or(), testkit::a2maj(), testkit::a2aff()] {
            let w = wnu_exists(&alg, 3, &b()).unwrap();
            let w = w.unwrap_or_else(|| panic!("{} should have a ternary wnu", alg.id));
            verify_wnu(&alg, &w, 3);
        }
        let z3 = testkit::z3aff();
        assert!(wnu_exists(&z3, 3, &b()).unwrap().is_none());
        let w4 = wnu_exists(&z3, 4, &b()).unwrap().unwrap();
        verify_wnu(&z3, &w4, 4);
        assert!(wnu_exists(&testkit::a2proj(), 3, &b()).unwrap().is_none());
        assert!(wnu_exists(&testkit::a2proj(), 4, &b()).unwrap().is_none());
    }

    fn verify_wnu(alg: &Arc<FiniteAlgebra>, w: &TermWitness, k: usize) {
        for x in alg.elements() {
            let diag = vec![x; k];
            assert_eq!(w.eval(alg, &diag).unwrap(), x);
            for y in alg.elements() {
                let mut vals = Vec::new();
                for j in 0..k {
                    let mut args = vec![x; k];
                    args[j] = y;
                    vals.push(w.eval(alg, &args).unwrap());
                }
                vals.dedup();
                assert_eq!(vals.len(), 1, "wnu equations fail at ({x},{y})");
            }
        }
    }

    #[test]
    fn classification_bounds() {
        match classify_dichotomy(&testkit::a2semi(), 4, &b()).unwrap() {
            Classification::Tractable { arity, .. } => assert_eq!(arity, 3),
            _ => panic!("a2semi is tractable"),
        }
        match classify_dichotomy(&testkit::z3aff(), 4, &b()).unwrap() {
            Classification::Tractable { arity, witness } => {
                assert_eq!(arity, 4);
                verify_wnu(&testkit::z3aff(), &witness, 4);
            }
            _ => panic!("z3aff is tractable"),
        }
        match classify_dichotomy(&testkit::a2proj(), 4, &b()).unwrap() {
            Classification::NoWitnessUpTo(4) => {}
            _ => panic!("projection algebra has no wnu"),
        }
    }

    #[test]
    fn edge_scan_basics() {
        let (certs, free) = scan_semilattice_edges(&testkit::a2semi(), &b()).unwrap();
        assert!(!free);
        assert!(certs
            .iter()
            .any(|c| c.a == 1 && c.b == 0 && c.kind == EdgeKind::ThinSemilattice));

        let (_, free) = scan_semilattice_edges(&testkit::z3aff(), &b()).unwrap();
        assert!(free);
        let (_, free) = scan_semilattice_edges(&testkit::a2maj(), &b()).unwrap();
        assert!(free);
        let (_, free) = scan_semilattice_edges(&testkit::a2aff(), &b()).unwrap();
        assert!(free);
    }

    #[test]
    fn m4mix_has_cross_block_edges() {
        let m = testkit::m4mix();
        let (certs, free) = scan_semilattice_edges(&m, &b()).unwrap();
        assert!(!free);
        // (0, 2) and (1, 3) are thin semilattice edges via f
        for (a, bb) in [(0u8, 2u8), (1, 3)] {
            assert!(
                certs
                    .iter()
                    .any(|c| c.a == a && c.b == bb && c.kind == EdgeKind::ThinSemilattice),
                "missing thin edge ({a},{bb})"
            );
        }
    }

    #[test]
    fn dot_operation_choices() {
        let a2 = testkit::a2semi();
        let (certs, _) = scan_semilattice_edges(&a2, &b()).unwrap();
        let dot = find_dot_operation(&a2, &certs, &b()).unwrap();
        assert_eq!(dot.table(&a2).unwrap(), vec![0, 0, 0, 1]);

        // no edges: the first projection passes vacuously
        let z3 = testkit::z3aff();
        let dot = find_dot_operation(&z3, &[], &b()).unwrap();
        for x in 0..3u8 {
            for y in 0..3u8 {
                assert_eq!(dot.eval(&z3, &[x, y]).unwrap(), x);
            }
        }
        let maj = testkit::a2maj();
        let dot = find_dot_operation(&maj, &[], &b()).unwrap();
        for x in 0..2u8 {
            for y in 0..2u8 {
                assert_eq!(dot.eval(&maj, &[x, y]).unwrap(), x);
            }
        }
    }

    #[test]
    fn orbit_matches_qab() {
        // Q_{01} over z3aff is all of Z3^2: x -> cx + d realizes every pair
        let z3 = testkit::z3aff();
        let r = TupleSet::from_tuples(
            vec![Arc::clone(&z3)],
            (0..3).map(|e| vec![e as Element]),
        )
        .unwrap();
        let orbit = unary_poly_orbit(&r, &[(0, 0), (0, 1)], &b()).unwrap();
        assert_eq!(orbit.len(), 9);

        // over the semilattice: identity, constant 0, constant 1
        let a2 = testkit::a2semi();
        let r = TupleSet::from_tuples(
            vec![Arc::clone(&a2)],
            (0..2).map(|e| vec![e as Element]),
        )
        .unwrap();
        let orbit = unary_poly_orbit(&r, &[(0, 0), (0, 1)], &b()).unwrap();
        assert_eq!(
            orbit.sorted_tuples(),
            vec![vec![0, 0], vec![0, 1], vec![1, 1]]
        );
    }

    #[test]
    fn orbit_of_diagonal_stays_diagonal() {
        let z3 = testkit::z3aff();
        let r = TupleSet::from_tuples(
            vec![Arc::clone(&z3)],
            (0..3).map(|e| vec![e as Element]),
        )
        .unwrap();
        let orbit = unary_poly_orbit(&r, &[(0, 2), (0, 2)], &b()).unwrap();
        for t in orbit.iter() {
            assert_eq!(t[0], t[1]);
        }
    }

    #[test]
    fn witness_replay_reproduces_tuple() {
        let a2 = testkit::a2semi();
        let components: Vec<_> = (0..4).map(|_| Arc::clone(&a2)).collect();
        let gens = vec![vec![0, 0, 1, 1], vec![0, 1, 0, 1]];
        let closure = sg_closure(components, &gens, &b()).unwrap();
        for idx in 0..closure.len() {
            let w = witness_from_closure(&closure, idx, 2);
            let expect = closure.set().tuple(idx);
            for (pos, &want) in expect.iter().enumerate() {
                let args: Vec<Element> = gens.iter().map(|g| g[pos]).collect();
                assert_eq!(w.eval(&a2, &args).unwrap(), want);
            }
        }
    }

    #[test]
    fn sexpr_rendering() {
        let a2 = testkit::a2semi();
        let w3 = wnu_exists(&a2, 3, &b()).unwrap().unwrap();
        let s = w3.to_sexpr();
        assert!(s.contains("meet"));
        assert!(s.contains("x0"));
    }
}
