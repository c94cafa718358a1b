//! Separation of prime intervals by unary polynomials, quasi-centralizers,
//! alignment, coupling sets and centralizer-induced instance decomposition.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use crate::algebra::{Element, FiniteAlgebra};
use crate::analysis::analyze;
use crate::budget::Budget;
use crate::congruence::{Congruence, PrimeInterval};
use crate::consistency::Strategy23;
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::relation::{sg_closure, TupleSet};
use crate::terms::unary_poly_orbit;

/// Outcome of a separation test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeparationResult {
    pub separable: bool,
    /// Orbit element certifying `f(β) ⊄ α` and `f(δ) ⊆ γ`: the tracked
    /// `(b1, b2)` pair images followed by the tracked `δ∖γ` pair images.
    pub witness_orbit_tuple: Option<Vec<Element>>,
}

fn pairs_off(lower: &Congruence, upper: &Congruence) -> Vec<(Element, Element)> {
    let n = lower.algebra().size;
    let mut out = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            let (a, b) = (a as Element, b as Element);
            if upper.related(a, b) && !lower.related(a, b) {
                out.push((a, b));
            }
        }
    }
    out
}

/// The diagonal of `A^2`, used to treat two intervals of one algebra as
/// intervals of a binary relation.
pub fn diagonal_relation(alg: &Arc<FiniteAlgebra>) -> TupleSet {
    TupleSet::from_tuples(
        vec![Arc::clone(alg), Arc::clone(alg)],
        alg.elements().map(|e| vec![e, e]),
    )
    .expect("diagonal is a valid relation")
}

/// Decides whether the prime interval `(α, β)` on component `side_i` of `r`
/// can be separated from `(γ, δ)` on component `side_j`: some unary
/// polynomial `f` of `r` has `f(β) ⊄ α` but `f(δ) ⊆ γ`.
///
/// For each pair in `β∖α`, the orbit of that pair together with all pairs of
/// `δ∖γ` under the unary polynomials of `r` is generated; a separating
/// element has the first pair outside `α` and all remaining pairs inside `γ`.
pub fn can_separate(
    r: &TupleSet,
    side_i: usize,
    int_i: &PrimeInterval,
    side_j: usize,
    int_j: &PrimeInterval,
    budget: &Budget,
) -> Result<SeparationResult> {
    if side_i >= r.arity() || side_j >= r.arity() {
        return Err(Error::InvalidInput("separation sides out of range".into()));
    }
    if let Some(cached) = sep_cache_get(r, side_i, int_i, side_j, int_j) {
        return Ok(cached);
    }
    let beta_pairs = pairs_off(&int_i.lower, &int_i.upper);
    let delta_pairs = pairs_off(&int_j.lower, &int_j.upper);
    let alpha = &int_i.lower;
    let gamma = &int_j.lower;
    let mut found: Option<Vec<Element>> = None;
    'outer: for &(b1, b2) in &beta_pairs {
        let mut tracked = vec![(side_i, b1), (side_i, b2)];
        for &(d1, d2) in &delta_pairs {
            tracked.push((side_j, d1));
            tracked.push((side_j, d2));
        }
        let orbit = unary_poly_orbit(r, &tracked, budget)?;
        for t in orbit.iter() {
            if alpha.related(t[0], t[1]) {
                continue;
            }
            let collapses_all = (0..delta_pairs.len())
                .all(|k| gamma.related(t[2 + 2 * k], t[3 + 2 * k]));
            if collapses_all {
                found = Some(t);
                break 'outer;
            }
        }
    }
    let result = SeparationResult {
        separable: found.is_some(),
        witness_orbit_tuple: found,
    };
    sep_cache_put(r, side_i, int_i, side_j, int_j, result.clone());
    Ok(result)
}

/// Symmetrized inseparability: neither interval separates from the other.
pub fn two_way_inseparable(
    r: &TupleSet,
    int_left: &PrimeInterval,
    int_right: &PrimeInterval,
    budget: &Budget,
) -> Result<bool> {
    Ok(!can_separate(r, 0, int_left, 1, int_right, budget)?.separable
        && !can_separate(r, 1, int_right, 0, int_left, budget)?.separable)
}

// Process-wide memo for separation tests; relations over small algebras
// repeat heavily across instances.
type SepKey = (
    Vec<Vec<Element>>,
    Vec<(usize, Vec<(String, usize, Vec<Element>)>)>,
    usize,
    Vec<Element>,
    Vec<Element>,
    usize,
    Vec<Element>,
    Vec<Element>,
);

fn sep_key(
    r: &TupleSet,
    side_i: usize,
    int_i: &PrimeInterval,
    side_j: usize,
    int_j: &PrimeInterval,
) -> SepKey {
    let comps = r
        .components()
        .iter()
        .map(|a| {
            (
                a.size,
                a.operations
                    .iter()
                    .map(|o| (o.name.clone(), o.arity, o.table.clone()))
                    .collect(),
            )
        })
        .collect();
    (
        r.sorted_tuples(),
        comps,
        side_i,
        int_i.lower.rep_vector().to_vec(),
        int_i.upper.rep_vector().to_vec(),
        side_j,
        int_j.lower.rep_vector().to_vec(),
        int_j.upper.rep_vector().to_vec(),
    )
}

fn sep_cache() -> &'static Mutex<HashMap<SepKey, SeparationResult>> {
    static CACHE: OnceLock<Mutex<HashMap<SepKey, SeparationResult>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn sep_cache_get(
    r: &TupleSet,
    side_i: usize,
    int_i: &PrimeInterval,
    side_j: usize,
    int_j: &PrimeInterval,
) -> Option<SeparationResult> {
    sep_cache()
        .lock()
        .unwrap()
        .get(&sep_key(r, side_i, int_i, side_j, int_j))
        .cloned()
}

fn sep_cache_put(
    r: &TupleSet,
    side_i: usize,
    int_i: &PrimeInterval,
    side_j: usize,
    int_j: &PrimeInterval,
    result: SeparationResult,
) {
    sep_cache()
        .lock()
        .unwrap()
        .insert(sep_key(r, side_i, int_i, side_j, int_j), result);
}

/// The quasi-centralizer `ζ(α, β)`: the greatest congruence such that
/// replacing polynomial parameters within its blocks never changes whether
/// the polynomial collapses `β` into `α`.
///
/// Membership of `(a, b)` is decided by the single-differing-slot criterion:
/// generate, in a doubled power tracking all `β∖α` pairs on both sides, the
/// orbit of [pairs | pairs] under terms applied to the pair generator, the
/// parameter generator `[a.. | b..]` and all constants; `(a, b) ∉ ζ` iff some
/// element collapses all tracked pairs into `α` on one side only.
pub fn quasi_centralizer(
    alg: &Arc<FiniteAlgebra>,
    alpha: &Congruence,
    beta: &Congruence,
    budget: &Budget,
) -> Result<Congruence> {
    if !alpha.leq(beta) {
        return Err(Error::InvalidInput("quasi-centralizer requires α ≤ β".into()));
    }
    let tracked = pairs_off(alpha, beta);
    if tracked.is_empty() {
        return Ok(Congruence::one(alg));
    }
    let n = alg.size;
    let s = tracked.len();
    let width = 4 * s;
    let components: Vec<Arc<FiniteAlgebra>> = (0..width).map(|_| Arc::clone(alg)).collect();

    let mut decided = vec![vec![true; n]; n];
    for a in 0..n {
        for b in (a + 1)..n {
            let mut gens: Vec<Vec<Element>> = Vec::with_capacity(2 + n);
            let mut g_x = Vec::with_capacity(width);
            for &(p, q) in &tracked {
                g_x.push(p);
                g_x.push(q);
            }
            let left = g_x.clone();
            g_x.extend(left);
            gens.push(g_x);
            let mut g_param = vec![a as Element; 2 * s];
            g_param.extend(vec![b as Element; 2 * s]);
            gens.push(g_param);
            for c in 0..n {
                gens.push(vec![c as Element; width]);
            }
            let closure = sg_closure(components.clone(), &gens, budget)?;
            let mut in_zeta = true;
            for idx in 0..closure.len() {
                let t = closure.set().tuple(idx);
                let left_collapses =
                    (0..s).all(|k| alpha.related(t[2 * k], t[2 * k + 1]));
                let right_collapses =
                    (0..s).all(|k| alpha.related(t[2 * s + 2 * k], t[2 * s + 2 * k + 1]));
                if left_collapses != right_collapses {
                    in_zeta = false;
                    break;
                }
            }
            decided[a][b] = in_zeta;
            decided[b][a] = in_zeta;
        }
    }

    let mut pairs = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            if decided[a][b] {
                pairs.push((a as Element, b as Element));
            }
        }
    }
    let zeta = Congruence::from_pairs(alg, &pairs)?;
    // the decided relation must already be transitive, and a congruence
    for a in 0..n {
        for b in (a + 1)..n {
            if zeta.related(a as Element, b as Element) != decided[a][b] {
                return Err(Error::InternalInconsistency(
                    "quasi-centralizer relation is not transitive".into(),
                ));
            }
        }
    }
    zeta.verify_on(alg).map_err(|e| {
        Error::InternalInconsistency(format!("quasi-centralizer failed congruence check: {e}"))
    })?;
    Ok(zeta)
}

/// Alignment test: for all `(a,c), (b,d) ∈ r`, `(a,b) ∈ α₁ ⟺ (c,d) ∈ α₂`.
pub fn check_aligned(r: &TupleSet, alpha1: &Congruence, alpha2: &Congruence) -> bool {
    let tuples: Vec<Vec<Element>> = r.iter().collect();
    for s in &tuples {
        for t in &tuples {
            if alpha1.related(s[0], t[0]) != alpha2.related(s[1], t[1]) {
                return false;
            }
        }
    }
    true
}

/// The coupling set `W` of a variable and prime interval: all variables
/// carrying a prime interval that is two-way inseparable from it across the
/// strategy relation, with the first qualifying interval recorded per member
/// in lattice order.
#[derive(Debug, Clone)]
pub struct CouplingSet {
    pub v: usize,
    pub interval: PrimeInterval,
    pub members: BTreeMap<usize, PrimeInterval>,
}

impl CouplingSet {
    pub fn variables(&self) -> Vec<usize> {
        self.members.keys().copied().collect()
    }
}

/// Builds the strategy relation as a `TupleSet` oriented `(v, w)`.
pub fn oriented_strategy_relation(
    instance: &Instance,
    strategy: &Strategy23,
    v: usize,
    w: usize,
) -> Result<TupleSet> {
    let rel = strategy
        .get(v, w)
        .ok_or_else(|| Error::InvalidInput(format!("no strategy relation for ({v},{w})")))?;
    if v < w {
        return Ok(rel.clone());
    }
    TupleSet::from_tuples(
        vec![Arc::clone(instance.domain(v)), Arc::clone(instance.domain(w))],
        rel.iter().map(|t| vec![t[1], t[0]]),
    )
}

/// Computes `W_{v,αβ}` over a (2,3)-minimal instance with its strategy.
pub fn compute_w(
    instance: &Instance,
    strategy: &Strategy23,
    v: usize,
    interval: &PrimeInterval,
    budget: &Budget,
) -> Result<CouplingSet> {
    let mut members = BTreeMap::new();
    members.insert(v, interval.clone());
    for w in 0..instance.num_vars() {
        if w == v {
            continue;
        }
        let r_vw = oriented_strategy_relation(instance, strategy, v, w)?;
        let analysis = analyze(instance.domain(w), budget)?;
        for cand in analysis.lattice.prime_intervals() {
            if two_way_inseparable(&r_vw, interval, &cand, budget)? {
                members.insert(w, cand);
                break;
            }
        }
    }
    Ok(CouplingSet {
        v,
        interval: interval.clone(),
        members,
    })
}

/// One component of a centralizer decomposition: the restricted instance and
/// the per-variable translation back to the parent restriction `P_W`.
#[derive(Debug, Clone)]
pub struct DecompositionComponent {
    pub instance: Instance,
    pub embed: Vec<Vec<Element>>,
}

/// Decomposes `P_W` into one instance per consistent family of
/// quasi-centralizer blocks, matched through the alignment bijections of the
/// strategy relations. Returns the restriction `P_W` and the components;
/// empty components are pruned silently. The union of the components'
/// solution sets equals the solution set of `P_W`.
pub fn decompose_by_centralizer(
    instance: &Instance,
    strategy: &Strategy23,
    wset: &CouplingSet,
    zeta_map: &BTreeMap<usize, Congruence>,
) -> Result<(Instance, Vec<DecompositionComponent>)> {
    let vars = wset.variables();
    for &w in &vars {
        if !zeta_map.contains_key(&w) {
            return Err(Error::InvalidInput(format!(
                "no quasi-centralizer given for member variable {w}"
            )));
        }
    }
    // alignment of every strategy relation inside W
    for (ia, &u) in vars.iter().enumerate() {
        for &w in vars.iter().skip(ia + 1) {
            let r = oriented_strategy_relation(instance, strategy, u, w)?;
            if !check_aligned(&r, &zeta_map[&u], &zeta_map[&w]) {
                let tuples: Vec<Vec<Element>> = r.iter().collect();
                let mut bad = ((0, 0), (0, 0));
                'search: for s in &tuples {
                    for t in &tuples {
                        if zeta_map[&u].related(s[0], t[0]) != zeta_map[&w].related(s[1], t[1]) {
                            bad = (
                                (s[0] as usize, t[0] as usize),
                                (s[1] as usize, t[1] as usize),
                            );
                            break 'search;
                        }
                    }
                }
                return Err(Error::NotAligned {
                    v: u,
                    w,
                    pair_a: bad.0,
                    pair_b: bad.1,
                });
            }
        }
    }

    let restricted = instance.restrict_to(&vars)?;
    // variable positions in the restricted instance follow sorted order
    let anchor = vars[0];
    let anchor_zeta = &zeta_map[&anchor];
    let mut components = Vec::new();
    'block: for anchor_rep in anchor_zeta.block_reps() {
        // propagate the block choice through the alignment bijections
        let mut blocks: Vec<Vec<Element>> = Vec::with_capacity(vars.len());
        for &w in &vars {
            if w == anchor {
                blocks.push(anchor_zeta.block_of(anchor_rep));
                continue;
            }
            let r = oriented_strategy_relation(instance, strategy, anchor, w)?;
            let mut target: Option<Element> = None;
            for t in r.iter() {
                if anchor_zeta.related(t[0], anchor_rep) {
                    target = Some(zeta_map[&w].rep(t[1]));
                    break;
                }
            }
            match target {
                Some(rep) => blocks.push(zeta_map[&w].block_of(rep)),
                None => continue 'block, // empty component
            }
        }
        match restricted.rebuild_restricted(&blocks) {
            Ok((sub, embed)) => {
                if sub.has_empty_relation() {
                    continue 'block;
                }
                components.push(DecompositionComponent {
                    instance: sub,
                    embed,
                });
            }
            // a block family that misses the relations entirely
            Err(Error::NotClosed { .. }) | Err(Error::InvalidInput(_)) => continue 'block,
            Err(e) => return Err(e),
        }
    }
    Ok((restricted, components))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::congruence::con_lattice;
    use crate::testkit;

    fn b() -> Budget {
        Budget::default()
    }

    fn interval01(alg: &Arc<FiniteAlgebra>) -> PrimeInterval {
        PrimeInterval {
            lower: Congruence::zero(alg),
            upper: Congruence::one(alg),
        }
    }

    #[test]
    fn interval_never_separates_from_itself() {
        let a2 = testkit::a2semi();
        let d = diagonal_relation(&a2);
        let i = interval01(&a2);
        let r = can_separate(&d, 0, &i, 0, &i, &b()).unwrap();
        assert!(!r.separable);
    }

    #[test]
    fn equality_relation_is_inseparable() {
        let z3 = testkit::z3aff();
        let d = diagonal_relation(&z3);
        let i = interval01(&z3);
        assert!(two_way_inseparable(&d, &i, &i, &b()).unwrap());
    }

    #[test]
    fn full_product_separates() {
        let a2 = testkit::a2semi();
        let full = TupleSet::full(vec![Arc::clone(&a2), Arc::clone(&a2)]).unwrap();
        let i = interval01(&a2);
        let r = can_separate(&full, 0, &i, 1, &i, &b()).unwrap();
        assert!(r.separable);
        let w = r.witness_orbit_tuple.unwrap();
        // side-1 pair separated, side-2 pair collapsed
        assert_ne!(w[0], w[1]);
        assert_eq!(w[2], w[3]);
    }

    #[test]
    fn zeta_of_equal_congruences_is_full() {
        let a2 = testkit::a2semi();
        let zero = Congruence::zero(&a2);
        let z = quasi_centralizer(&a2, &zero, &zero, &b()).unwrap();
        assert!(z.is_one());
    }

    #[test]
    fn zeta_values_on_small_algebras() {
        // affine: collapsing is parameter independent
        let z3 = testkit::z3aff();
        let z = quasi_centralizer(
            &z3,
            &Congruence::zero(&z3),
            &Congruence::one(&z3),
            &b(),
        )
        .unwrap();
        assert!(z.is_one());

        // semilattice: x ∧ y collapses with parameter 0 but not 1
        let a2 = testkit::a2semi();
        let z = quasi_centralizer(
            &a2,
            &Congruence::zero(&a2),
            &Congruence::one(&a2),
            &b(),
        )
        .unwrap();
        assert!(z.is_zero());
    }

    #[test]
    fn zeta_of_m4mix_monolith_is_full() {
        let m = testkit::m4mix();
        let lat = con_lattice(&m).unwrap();
        let (si, mu) = crate::congruence::monolith(&lat);
        assert!(si, "m4mix must be subdirectly irreducible");
        let mu = mu.unwrap();
        assert_eq!(mu.render_blocks(), "[[0],[1],[2,3]]");
        let z = quasi_centralizer(&m, &Congruence::zero(&m), &mu, &b()).unwrap();
        assert!(z.is_one(), "got {}", z.render_blocks());
        // the block congruence also has a full quasi-centralizer
        let blocks = Congruence::from_blocks(&m, &[vec![0, 1], vec![2, 3]]).unwrap();
        blocks.verify_on(&m).unwrap();
        let z2 = quasi_centralizer(&m, &Congruence::zero(&m), &blocks, &b()).unwrap();
        assert!(z2.is_one(), "got {}", z2.render_blocks());
    }

    #[test]
    fn alignment_checks() {
        let a2 = testkit::a2semi();
        // graph of the identity bijection
        let d = diagonal_relation(&a2);
        assert!(check_aligned(
            &d,
            &Congruence::zero(&a2),
            &Congruence::zero(&a2)
        ));
        let full = TupleSet::full(vec![Arc::clone(&a2), Arc::clone(&a2)]).unwrap();
        assert!(check_aligned(
            &full,
            &Congruence::one(&a2),
            &Congruence::one(&a2)
        ));
        assert!(!check_aligned(
            &full,
            &Congruence::zero(&a2),
            &Congruence::zero(&a2)
        ));
    }
}
