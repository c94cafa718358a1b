//! Congruences, the congruence lattice, prime intervals and
//! meet-irreducible decompositions.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::algebra::{Element, FiniteAlgebra};
use crate::error::{Error, Result};

/// A congruence in canonical form: `rep[e]` is the least element of the block
/// of `e`. Equality of congruences is equality of rep vectors.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Congruence {
    algebra: Arc<FiniteAlgebra>,
    rep: Vec<Element>,
}

impl Congruence {
    /// The equality relation `0_A`.
    pub fn zero(algebra: &Arc<FiniteAlgebra>) -> Self {
        Congruence {
            algebra: Arc::clone(algebra),
            rep: (0..algebra.size).map(|e| e as Element).collect(),
        }
    }

    /// The full relation `1_A`.
    pub fn one(algebra: &Arc<FiniteAlgebra>) -> Self {
        Congruence {
            algebra: Arc::clone(algebra),
            rep: vec![0; algebra.size],
        }
    }

    /// Builds the equivalence generated by `pairs` (no operation closure;
    /// use [`cg_generate`] for the least congruence).
    pub fn from_pairs(algebra: &Arc<FiniteAlgebra>, pairs: &[(Element, Element)]) -> Result<Self> {
        let n = algebra.size;
        let mut uf = UnionFind::new(n);
        for &(a, b) in pairs {
            if a as usize >= n || b as usize >= n {
                return Err(Error::ElementOutOfRange {
                    element: a.max(b) as usize,
                    size: n,
                });
            }
            uf.union(a as usize, b as usize);
        }
        Ok(Congruence {
            algebra: Arc::clone(algebra),
            rep: uf.canonical_reps(),
        })
    }

    /// Builds a congruence from explicit blocks, e.g. parsed from `[[0,1],[2]]`.
    /// Elements not mentioned form singleton blocks.
    pub fn from_blocks(algebra: &Arc<FiniteAlgebra>, blocks: &[Vec<Element>]) -> Result<Self> {
        let mut pairs = Vec::new();
        for block in blocks {
            for w in block.windows(2) {
                pairs.push((w[0], w[1]));
            }
        }
        Self::from_pairs(algebra, &pairs)
    }

    pub fn algebra(&self) -> &Arc<FiniteAlgebra> {
        &self.algebra
    }

    #[inline]
    pub fn rep(&self, e: Element) -> Element {
        self.rep[e as usize]
    }

    #[inline]
    pub fn related(&self, a: Element, b: Element) -> bool {
        self.rep[a as usize] == self.rep[b as usize]
    }

    pub fn rep_vector(&self) -> &[Element] {
        &self.rep
    }

    pub fn is_zero(&self) -> bool {
        self.rep.iter().enumerate().all(|(i, &r)| r as usize == i)
    }

    pub fn is_one(&self) -> bool {
        self.rep.iter().all(|&r| r == 0)
    }

    /// Least members of the blocks, ascending.
    pub fn block_reps(&self) -> Vec<Element> {
        let mut reps: Vec<Element> = self.rep.clone();
        reps.sort_unstable();
        reps.dedup();
        reps
    }

    pub fn num_blocks(&self) -> usize {
        self.block_reps().len()
    }

    pub fn block_of(&self, e: Element) -> Vec<Element> {
        let r = self.rep(e);
        (0..self.algebra.size as u16)
            .map(|x| x as Element)
            .filter(|&x| self.rep(x) == r)
            .collect()
    }

    /// Blocks as sorted element lists, sorted by least member.
    pub fn blocks(&self) -> Vec<Vec<Element>> {
        self.block_reps()
            .into_iter()
            .map(|r| self.block_of(r))
            .collect()
    }

    /// All related pairs `(a, b)` with `a < b`.
    pub fn pairs(&self) -> Vec<(Element, Element)> {
        let n = self.algebra.size;
        let mut out = Vec::new();
        for a in 0..n {
            for b in (a + 1)..n {
                if self.rep[a] == self.rep[b] {
                    out.push((a as Element, b as Element));
                }
            }
        }
        out
    }

    /// Refinement order: `self <= other` iff every block of `self` lies in a
    /// block of `other`.
    pub fn leq(&self, other: &Congruence) -> bool {
        let n = self.algebra.size;
        (0..n).all(|e| other.rep[e] == other.rep[self.rep[e] as usize])
    }

    /// Meet is intersection of partitions (always a congruence when both are).
    pub fn meet(&self, other: &Congruence) -> Congruence {
        let n = self.algebra.size;
        let mut uf = UnionFind::new(n);
        for a in 0..n {
            let ra = (self.rep[a], other.rep[a]);
            for b in 0..a {
                if (self.rep[b], other.rep[b]) == ra {
                    uf.union(a, b);
                    break;
                }
            }
        }
        Congruence {
            algebra: Arc::clone(&self.algebra),
            rep: uf.canonical_reps(),
        }
    }

    /// Join in the congruence lattice, computed as the congruence generated by
    /// the union of the two partitions' pairs.
    pub fn join(&self, other: &Congruence) -> Congruence {
        let mut pairs = self.pairs();
        pairs.extend(other.pairs());
        cg_generate(&self.algebra, &pairs).expect("join of valid congruences cannot fail")
    }

    /// Checks that the partition is preserved by every operation of `alg`
    /// (equivalently by every unary polynomial). Returns a witness on failure.
    pub fn verify_on(&self, alg: &Arc<FiniteAlgebra>) -> Result<()> {
        let n = alg.size;
        for op in &alg.operations {
            let m = op.arity;
            let mut args = vec![0 as Element; m];
            'outer: loop {
                let v = op.apply(n, &args);
                for i in 0..m {
                    let orig = args[i];
                    for b in 0..n as u16 {
                        let b = b as Element;
                        if b != orig && self.related(orig, b) {
                            args[i] = b;
                            let u = op.apply(n, &args);
                            args[i] = orig;
                            if !self.related(v, u) {
                                return Err(Error::NotACongruence {
                                    op: op.name.clone(),
                                    lhs: v as usize,
                                    rhs: u as usize,
                                });
                            }
                        }
                    }
                }
                let mut i = m;
                loop {
                    if i == 0 {
                        break 'outer;
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
        Ok(())
    }

    /// Textual block rendering, e.g. `[[0,1],[2]]`.
    pub fn render_blocks(&self) -> String {
        let blocks = self.blocks();
        let mut s = String::from("[");
        for (i, b) in blocks.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push('[');
            for (j, e) in b.iter().enumerate() {
                if j > 0 {
                    s.push(',');
                }
                s.push_str(&e.to_string());
            }
            s.push(']');
        }
        s.push(']');
        s
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let r = self.find(self.parent[x]);
            self.parent[x] = r;
        }
        self.parent[x]
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        // keep the smaller root so canonical reps are least members
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi] = lo;
        true
    }

    fn canonical_reps(&mut self) -> Vec<Element> {
        (0..self.parent.len())
            .map(|e| self.find(e) as Element)
            .collect()
    }
}

/// Least congruence containing `pairs`: union-find seeded with the pairs,
/// closed under applying every operation to argument tuples that differ in a
/// single coordinate by a related pair, iterated to fixpoint.
pub fn cg_generate(
    algebra: &Arc<FiniteAlgebra>,
    pairs: &[(Element, Element)],
) -> Result<Congruence> {
    let n = algebra.size;
    let mut uf = UnionFind::new(n);
    let mut queue: VecDeque<(usize, usize)> = VecDeque::new();
    for &(a, b) in pairs {
        if a as usize >= n || b as usize >= n {
            return Err(Error::ElementOutOfRange {
                element: a.max(b) as usize,
                size: n,
            });
        }
        if uf.union(a as usize, b as usize) {
            queue.push_back((a as usize, b as usize));
        }
    }
    // Propagate: whenever a and b become related, so must f(..a..) and
    // f(..b..) for every operation and every choice of the other arguments.
    // Merging only the freshly related pair suffices because previously
    // related pairs were already propagated and relatedness is transitive
    // through the union-find.
    while let Some((a, b)) = queue.pop_front() {
        for op in &algebra.operations {
            let m = op.arity;
            for i in 0..m {
                let rest = m - 1;
                let mut others = vec![0usize; rest];
                loop {
                    let mut args_a = Vec::with_capacity(m);
                    let mut args_b = Vec::with_capacity(m);
                    let mut k = 0;
                    for j in 0..m {
                        if j == i {
                            args_a.push(a as Element);
                            args_b.push(b as Element);
                        } else {
                            args_a.push(others[k] as Element);
                            args_b.push(others[k] as Element);
                            k += 1;
                        }
                    }
                    let u = op.apply(n, &args_a) as usize;
                    let v = op.apply(n, &args_b) as usize;
                    if uf.union(u, v) {
                        queue.push_back((u, v));
                    }
                    let mut t = rest;
                    let mut done = true;
                    while t > 0 {
                        t -= 1;
                        others[t] += 1;
                        if others[t] < n {
                            done = false;
                            break;
                        }
                        others[t] = 0;
                    }
                    if done {
                        break;
                    }
                }
            }
        }
    }
    Ok(Congruence {
        algebra: Arc::clone(algebra),
        rep: uf.canonical_reps(),
    })
}

/// A covering pair `lower ≺ upper` in the congruence lattice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrimeInterval {
    pub lower: Congruence,
    pub upper: Congruence,
}

/// The congruence lattice of an algebra.
///
/// Congruences are sorted by a refinement-compatible total order: block count
/// descending (so `0_A` first, `1_A` last), then rep vector lexicographically.
#[derive(Debug, Clone)]
pub struct CongruenceLattice {
    algebra: Arc<FiniteAlgebra>,
    congruences: Vec<Congruence>,
    leq: Vec<Vec<bool>>,
    covers: Vec<(usize, usize)>,
}

/// Safety cap on the number of congruences enumerated during join closure.
const MAX_CONGRUENCES: usize = 1 << 16;

/// Computes `Con(A)` as the join closure of all principal congruences plus
/// `0_A`. Every member is verified against all operations.
pub fn con_lattice(algebra: &Arc<FiniteAlgebra>) -> Result<CongruenceLattice> {
    let n = algebra.size;
    let mut found: Vec<Congruence> = vec![Congruence::zero(algebra)];
    let mut seen: std::collections::HashSet<Vec<Element>> =
        found.iter().map(|c| c.rep.clone()).collect();
    for a in 0..n {
        for b in (a + 1)..n {
            let c = cg_generate(algebra, &[(a as Element, b as Element)])?;
            if seen.insert(c.rep.clone()) {
                found.push(c);
            }
        }
    }
    // join closure
    let mut frontier = 0;
    while frontier < found.len() {
        let hi = found.len();
        for i in frontier..hi {
            for j in 0..=i {
                let joined = found[i].join(&found[j]);
                if seen.insert(joined.rep.clone()) {
                    found.push(joined);
                    if found.len() > MAX_CONGRUENCES {
                        return Err(Error::BudgetExceeded {
                            budget: MAX_CONGRUENCES,
                        });
                    }
                }
            }
        }
        frontier = hi;
    }
    if !seen.contains(Congruence::one(algebra).rep_vector()) {
        found.push(Congruence::one(algebra));
    }
    for c in &found {
        c.verify_on(algebra)?;
    }
    found.sort_by(|a, b| {
        b.num_blocks()
            .cmp(&a.num_blocks())
            .then_with(|| a.rep.cmp(&b.rep))
    });
    let k = found.len();
    let mut leq = vec![vec![false; k]; k];
    for i in 0..k {
        for j in 0..k {
            leq[i][j] = found[i].leq(&found[j]);
        }
    }
    let mut covers = Vec::new();
    for i in 0..k {
        for j in 0..k {
            if i != j && leq[i][j] {
                let strictly_between = (0..k)
                    .any(|g| g != i && g != j && leq[i][g] && leq[g][j]);
                if !strictly_between {
                    covers.push((i, j));
                }
            }
        }
    }
    Ok(CongruenceLattice {
        algebra: Arc::clone(algebra),
        congruences: found,
        leq,
        covers,
    })
}

impl CongruenceLattice {
    pub fn algebra(&self) -> &Arc<FiniteAlgebra> {
        &self.algebra
    }

    pub fn congruences(&self) -> &[Congruence] {
        &self.congruences
    }

    pub fn len(&self) -> usize {
        self.congruences.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index_of(&self, c: &Congruence) -> Option<usize> {
        self.congruences.iter().position(|x| x == c)
    }

    pub fn zero_index(&self) -> usize {
        0
    }

    pub fn one_index(&self) -> usize {
        self.congruences.len() - 1
    }

    pub fn leq_idx(&self, i: usize, j: usize) -> bool {
        self.leq[i][j]
    }

    pub fn covers(&self) -> &[(usize, usize)] {
        &self.covers
    }

    /// All prime intervals `(α, β)` with `α ≺ β`, in lattice order.
    pub fn prime_intervals(&self) -> Vec<PrimeInterval> {
        self.covers
            .iter()
            .map(|&(i, j)| PrimeInterval {
                lower: self.congruences[i].clone(),
                upper: self.congruences[j].clone(),
            })
            .collect()
    }

    /// Indices of atoms (covers of `0_A`).
    pub fn atoms(&self) -> Vec<usize> {
        self.covers
            .iter()
            .filter(|&&(i, _)| i == self.zero_index())
            .map(|&(_, j)| j)
            .collect()
    }

    /// Indices of maximal congruences (covered by `1_A`).
    pub fn coatoms(&self) -> Vec<usize> {
        self.covers
            .iter()
            .filter(|&&(_, j)| j == self.one_index())
            .map(|&(i, _)| i)
            .collect()
    }

    /// A congruence is meet-irreducible iff it has exactly one upper cover.
    pub fn is_meet_irreducible(&self, i: usize) -> bool {
        self.covers.iter().filter(|&&(a, _)| a == i).count() == 1
    }

    /// Verifies that `(α, β)` is a prime interval of this lattice.
    pub fn verify_prime(&self, interval: &PrimeInterval) -> bool {
        match (
            self.index_of(&interval.lower),
            self.index_of(&interval.upper),
        ) {
            (Some(i), Some(j)) => self.covers.contains(&(i, j)),
            _ => false,
        }
    }
}

/// Subdirect irreducibility and the monolith.
///
/// `A` is subdirectly irreducible iff the meet of all its nontrivial
/// congruences is nontrivial; that meet is the monolith. One-element algebras
/// are treated as subdirectly irreducible with the unique congruence as
/// monolith.
pub fn monolith(lattice: &CongruenceLattice) -> (bool, Option<Congruence>) {
    if lattice.algebra().size == 1 {
        return (true, Some(lattice.congruences()[0].clone()));
    }
    let atoms = lattice.atoms();
    if atoms.len() == 1 {
        (true, Some(lattice.congruences()[atoms[0]].clone()))
    } else {
        (false, None)
    }
}

/// A minimal-length list of meet-irreducible congruences with meet `0_A`.
/// Ties are broken by preferring coarser congruences (fewer blocks), then
/// lexicographic rep order; subsets of equal size are tried in lexicographic
/// order over that ranking.
pub fn meet_irreducible_decomposition(lattice: &CongruenceLattice) -> Result<Vec<Congruence>> {
    let zero = lattice.zero_index();
    if lattice.algebra().size == 1 {
        return Ok(vec![lattice.congruences()[zero].clone()]);
    }
    let mut mi: Vec<usize> = (0..lattice.len())
        .filter(|&i| lattice.is_meet_irreducible(i))
        .collect();
    mi.sort_by(|&a, &b| {
        let ca = &lattice.congruences()[a];
        let cb = &lattice.congruences()[b];
        ca.num_blocks()
            .cmp(&cb.num_blocks())
            .then_with(|| ca.rep_vector().cmp(cb.rep_vector()))
    });
    for size in 1..=mi.len() {
        if let Some(subset) = first_subset_with_zero_meet(lattice, &mi, size) {
            let result: Vec<Congruence> = subset
                .iter()
                .map(|&i| lattice.congruences()[i].clone())
                .collect();
            for theta in &result {
                let (quot, _) = lattice.algebra().quotient(theta)?;
                let sub_lattice = con_lattice(&quot)?;
                let (is_si, _) = monolith(&sub_lattice);
                if !is_si {
                    return Err(Error::InternalInconsistency(format!(
                        "quotient by meet-irreducible {} is not subdirectly irreducible",
                        theta.render_blocks()
                    )));
                }
            }
            return Ok(result);
        }
    }
    Err(Error::InternalInconsistency(
        "meet of all meet-irreducible congruences is not zero".into(),
    ))
}

fn first_subset_with_zero_meet(
    lattice: &CongruenceLattice,
    ranked: &[usize],
    size: usize,
) -> Option<Vec<usize>> {
    let mut chosen = Vec::with_capacity(size);
    subset_search(lattice, ranked, 0, size, &mut chosen)
}

fn subset_search(
    lattice: &CongruenceLattice,
    ranked: &[usize],
    start: usize,
    remaining: usize,
    chosen: &mut Vec<usize>,
) -> Option<Vec<usize>> {
    if remaining == 0 {
        let mut meet = Congruence::one(lattice.algebra());
        for &i in chosen.iter() {
            meet = meet.meet(&lattice.congruences()[i]);
        }
        if meet.is_zero() {
            return Some(chosen.clone());
        }
        return None;
    }
    for pos in start..=ranked.len().saturating_sub(remaining) {
        chosen.push(ranked[pos]);
        if let Some(found) = subset_search(lattice, ranked, pos + 1, remaining - 1, chosen) {
            return Some(found);
        }
        chosen.pop();
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit;

    #[test]
    fn cg_two_element_full() {
        let a2 = testkit::a2semi();
        let c = cg_generate(&a2, &[(0, 1)]).unwrap();
        assert!(c.is_one());
    }

    #[test]
    fn cg_z3_translations_generate_full() {
        let z3 = testkit::z3aff();
        let c = cg_generate(&z3, &[(0, 1)]).unwrap();
        assert!(c.is_one());
    }

    #[test]
    fn cg_product_kernel() {
        let z3 = testkit::z3aff();
        let p = z3.product(&z3, "z3xz3").unwrap();
        // (0,0) = 0 and (1,0) = 3; their principal congruence is ker(pr2)
        let c = cg_generate(&p, &[(0, 3)]).unwrap();
        for a in 0..9u8 {
            for b in 0..9u8 {
                assert_eq!(c.related(a, b), a % 3 == b % 3, "{a} {b}");
            }
        }
    }

    #[test]
    fn con_lattice_small() {
        let a2 = testkit::a2semi();
        assert_eq!(con_lattice(&a2).unwrap().len(), 2);
        let z3 = testkit::z3aff();
        assert_eq!(con_lattice(&z3).unwrap().len(), 2);
        let p = z3.product(&z3, "z3xz3").unwrap();
        let lat = con_lattice(&p).unwrap();
        // 0, 1, and the kernels of the 4 one-dimensional quotient maps
        assert_eq!(lat.len(), 6);
        assert_eq!(lat.atoms().len(), 4);
    }

    #[test]
    fn monolith_simple_and_product() {
        let z3 = testkit::z3aff();
        let lat = con_lattice(&z3).unwrap();
        let (si, mu) = monolith(&lat);
        assert!(si);
        assert!(mu.unwrap().is_one());

        let p = z3.product(&z3, "z3xz3").unwrap();
        let lat = con_lattice(&p).unwrap();
        let (si, mu) = monolith(&lat);
        assert!(!si);
        assert!(mu.is_none());
    }

    #[test]
    fn decomposition_product_is_two_kernels() {
        let z3 = testkit::z3aff();
        let p = z3.product(&z3, "z3xz3").unwrap();
        let lat = con_lattice(&p).unwrap();
        let dec = meet_irreducible_decomposition(&lat).unwrap();
        assert_eq!(dec.len(), 2);
        let mut meet = Congruence::one(&p);
        for c in &dec {
            assert_eq!(c.num_blocks(), 3);
            meet = meet.meet(c);
        }
        assert!(meet.is_zero());
    }

    #[test]
    fn decomposition_si_is_zero() {
        let z3 = testkit::z3aff();
        let lat = con_lattice(&z3).unwrap();
        let dec = meet_irreducible_decomposition(&lat).unwrap();
        assert_eq!(dec.len(), 1);
        assert!(dec[0].is_zero());
    }

    #[test]
    fn quotient_by_zero_and_one() {
        let z3 = testkit::z3aff();
        let (q0, nat0) = z3.quotient(&Congruence::zero(&z3)).unwrap();
        assert_eq!(q0.size, 3);
        assert_eq!(nat0, vec![0, 1, 2]);
        let (q1, nat1) = z3.quotient(&Congruence::one(&z3)).unwrap();
        assert_eq!(q1.size, 1);
        assert_eq!(nat1, vec![0, 0, 0]);
    }

    #[test]
    fn quotient_of_product_is_factor() {
        let z3 = testkit::z3aff();
        let p = z3.product(&z3, "z3xz3").unwrap();
        let ker2 = cg_generate(&p, &[(0, 3)]).unwrap();
        let (q, nat) = p.quotient(&ker2).unwrap();
        assert_eq!(q.size, 3);
        // the quotient is isomorphic to z3aff via the natural map
        for a in 0..9u8 {
            for b in 0..9u8 {
                for c in 0..9u8 {
                    let lhs = nat[p.apply_op("mal", &[a, b, c]).unwrap() as usize];
                    let rhs = q
                        .apply_op("mal", &[nat[a as usize], nat[b as usize], nat[c as usize]])
                        .unwrap();
                    assert_eq!(lhs, rhs);
                }
            }
        }
    }

    #[test]
    fn prime_intervals_have_nothing_between() {
        let z3 = testkit::z3aff();
        let p = z3.product(&z3, "z3xz3").unwrap();
        let lat = con_lattice(&p).unwrap();
        for pi in lat.prime_intervals() {
            assert!(pi.lower.leq(&pi.upper));
            assert_ne!(pi.lower, pi.upper);
            for c in lat.congruences() {
                if pi.lower.leq(c) && c.leq(&pi.upper) {
                    assert!(c == &pi.lower || c == &pi.upper);
                }
            }
        }
    }
}
