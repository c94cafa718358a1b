//! Constraint propagation engines: 1-minimality, the generic
//! (k,k+1)-minimality engine whose k = 2 case yields the (2,3)-strategy, and
//! global minimality via a solver callback.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use itertools::Itertools;

use crate::algebra::Element;
use crate::error::Result;
use crate::instance::{Constraint, Instance};
use crate::relation::TupleSet;

/// Composes per-variable translations: `outer[v][inner[v][e]]`.
fn compose_embeds(outer: &[Vec<Element>], inner: &[Vec<Element>]) -> Vec<Vec<Element>> {
    outer
        .iter()
        .zip(inner)
        .map(|(o, i)| i.iter().map(|&e| o[e as usize]).collect())
        .collect()
}

fn identity_embeds(instance: &Instance) -> Vec<Vec<Element>> {
    instance
        .domains()
        .iter()
        .map(|d| d.elements().collect())
        .collect()
}

/// Shrinks every domain to the intersection of the unary projections of its
/// incident constraints and prunes constraint tuples outside the allowed
/// sets, to fixpoint. Returns `None` when a domain empties, otherwise the
/// tightened instance and the translation `new element -> old element`.
pub fn enforce_1_minimality(instance: &Instance) -> Result<Option<(Instance, Vec<Vec<Element>>)>> {
    let mut cur = instance.clone();
    let mut embed = identity_embeds(instance);
    loop {
        let mut allowed: Vec<BTreeSet<Element>> = cur
            .domains()
            .iter()
            .map(|d| d.elements().collect())
            .collect();
        for c in cur.constraints() {
            for (i, &v) in c.scope.iter().enumerate() {
                let proj: BTreeSet<Element> = c.relation.iter().map(|t| t[i]).collect();
                allowed[v] = allowed[v].intersection(&proj).copied().collect();
                if allowed[v].is_empty() {
                    return Ok(None);
                }
            }
            if c.scope.is_empty() && c.relation.is_empty() {
                return Ok(None);
            }
        }
        let full = allowed
            .iter()
            .enumerate()
            .all(|(v, a)| a.len() == cur.domain(v).size);
        if full {
            return Ok(Some((cur, embed)));
        }
        let sets: Vec<Vec<Element>> = allowed.into_iter().map(|s| s.into_iter().collect()).collect();
        let (next, step) = cur.rebuild_restricted(&sets)?;
        embed = compose_embeds(&embed, &step);
        cur = next;
    }
}

/// A (2,3)-strategy: the relation of supported pairs for every 2-element
/// variable set, keyed by `(u, v)` with `u < v` and scope order `(u, v)`.
#[derive(Debug, Clone)]
pub struct Strategy23 {
    pub relations: BTreeMap<(usize, usize), TupleSet>,
}

impl Strategy23 {
    pub fn get(&self, u: usize, v: usize) -> Option<&TupleSet> {
        self.relations.get(&(u.min(v), u.max(v)))
    }

    /// The relation as seen from `(u, v)` order: pairs `(a_u, a_v)`.
    pub fn pairs_oriented(&self, u: usize, v: usize) -> Option<Vec<(Element, Element)>> {
        let r = self.get(u, v)?;
        let swap = u > v;
        Some(
            r.iter()
                .map(|t| if swap { (t[1], t[0]) } else { (t[0], t[1]) })
                .collect(),
        )
    }
}

/// Result of a propagation run.
pub struct Minimality {
    pub instance: Instance,
    /// new element -> element of the input instance, per variable
    pub embed: Vec<Vec<Element>>,
    /// present when k = 2
    pub strategy: Option<Strategy23>,
}

/// Generic (k,k+1)-minimality.
///
/// Maintains the relation of partial solutions for every k-set of variables,
/// iterates the (k+1)-extension condition and constraint compatibility to
/// fixpoint, and prunes constraint tuples that are not strategy-compatible.
/// For k = 2 the strategy relations are installed as constraints `C^X` and
/// returned. Returns `None` iff some relation empties. The propagation never
/// removes a global solution.
pub fn enforce_k_minimality(instance: &Instance, k: usize) -> Result<Option<Minimality>> {
    assert!(k >= 2, "k-minimality requires k >= 2");
    let mut cur = instance.clone();
    let mut embed = identity_embeds(instance);

    'outer: loop {
        match enforce_1_minimality(&cur)? {
            None => return Ok(None),
            Some((next, step)) => {
                embed = compose_embeds(&embed, &step);
                cur = next;
            }
        }
        let n = cur.num_vars();
        let keff = k.min(n);
        if keff == 0 {
            // no variables: satisfiable iff no empty relation survived
            return Ok(Some(Minimality {
                instance: cur,
                embed,
                strategy: Some(Strategy23 {
                    relations: BTreeMap::new(),
                }),
            }));
        }

        // all k-sets, ascending
        let xsets: Vec<Vec<usize>> = (0..n).combinations(keff).collect();
        let xindex: BTreeMap<Vec<usize>, usize> =
            xsets.iter().cloned().enumerate().map(|(i, x)| (x, i)).collect();

        // init: tuples over the k-set domains consistent with every constraint
        let mut rels: Vec<BTreeSet<Vec<Element>>> = Vec::with_capacity(xsets.len());
        for x in &xsets {
            let mut tuples = BTreeSet::new();
            let sizes: Vec<usize> = x.iter().map(|&v| cur.domain(v).size).collect();
            let mut t = vec![0 as Element; keff];
            'enumerate: loop {
                let ok = cur.constraints().iter().all(|c| {
                    let common: Vec<usize> = (0..c.scope.len())
                        .filter(|&i| x.contains(&c.scope[i]))
                        .collect();
                    if common.is_empty() {
                        return true;
                    }
                    c.relation.iter().any(|rt| {
                        common
                            .iter()
                            .all(|&i| rt[i] == t[x.iter().position(|&v| v == c.scope[i]).unwrap()])
                    })
                });
                if ok {
                    tuples.insert(t.clone());
                }
                let mut i = keff;
                loop {
                    if i == 0 {
                        break 'enumerate;
                    }
                    i -= 1;
                    if (t[i] as usize) + 1 < sizes[i] {
                        t[i] += 1;
                        break;
                    }
                    t[i] = 0;
                }
            }
            if tuples.is_empty() {
                return Ok(None);
            }
            rels.push(tuples);
        }

        // extension fixpoint: every tuple extends to every (k+1)-th variable
        loop {
            let mut changed = false;
            for (xi, x) in xsets.iter().enumerate() {
                let tuples: Vec<Vec<Element>> = rels[xi].iter().cloned().collect();
                for t in tuples {
                    let mut supported = true;
                    for w in 0..n {
                        if x.contains(&w) {
                            continue;
                        }
                        let mut extended = false;
                        'cands: for c in cur.domain(w).elements() {
                            // all k-subsets of X ∪ {w} containing w
                            for drop in 0..keff {
                                let mut z: Vec<usize> = x
                                    .iter()
                                    .enumerate()
                                    .filter(|&(i, _)| i != drop)
                                    .map(|(_, &v)| v)
                                    .collect();
                                z.push(w);
                                z.sort_unstable();
                                let zi = xindex[&z];
                                let zt: Vec<Element> = z
                                    .iter()
                                    .map(|&v| if v == w { c } else { t[x.iter().position(|&u| u == v).unwrap()] })
                                    .collect();
                                if !rels[zi].contains(&zt) {
                                    continue 'cands;
                                }
                            }
                            extended = true;
                            break;
                        }
                        if !extended {
                            supported = false;
                            break;
                        }
                    }
                    if !supported {
                        rels[xi].remove(&t);
                        changed = true;
                        if rels[xi].is_empty() {
                            return Ok(None);
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }

        // prune constraint tuples that are not strategy-compatible
        let mut tightened = false;
        let mut new_constraints = Vec::with_capacity(cur.constraints().len());
        for c in cur.constraints() {
            let mut kept = Vec::new();
            'tuple: for t in c.relation.iter() {
                if c.scope.len() >= keff {
                    for combo in (0..c.scope.len()).combinations(keff) {
                        let mut z: Vec<(usize, Element)> =
                            combo.iter().map(|&i| (c.scope[i], t[i])).collect();
                        z.sort_unstable_by_key(|&(v, _)| v);
                        let zvars: Vec<usize> = z.iter().map(|&(v, _)| v).collect();
                        let zt: Vec<Element> = z.iter().map(|&(_, e)| e).collect();
                        if !rels[xindex[&zvars]].contains(&zt) {
                            tightened = true;
                            continue 'tuple;
                        }
                    }
                }
                kept.push(t);
            }
            if kept.is_empty() {
                return Ok(None);
            }
            let relation = TupleSet::from_tuples(c.relation.components().to_vec(), kept)?;
            new_constraints.push(Constraint {
                scope: c.scope.clone(),
                relation,
            });
        }
        if tightened {
            cur = Instance::new(
                cur.names().to_vec(),
                cur.domains().to_vec(),
                new_constraints,
            )?;
            continue 'outer;
        }

        // domains might shrink below the strategy projections
        let mut allowed: Vec<BTreeSet<Element>> = cur
            .domains()
            .iter()
            .map(|d| d.elements().collect())
            .collect();
        for (xi, x) in xsets.iter().enumerate() {
            for (pos, &v) in x.iter().enumerate() {
                let proj: BTreeSet<Element> = rels[xi].iter().map(|t| t[pos]).collect();
                allowed[v] = allowed[v].intersection(&proj).copied().collect();
                if allowed[v].is_empty() {
                    return Ok(None);
                }
            }
        }
        if allowed
            .iter()
            .enumerate()
            .any(|(v, a)| a.len() < cur.domain(v).size)
        {
            let sets: Vec<Vec<Element>> =
                allowed.into_iter().map(|s| s.into_iter().collect()).collect();
            let (next, step) = cur.rebuild_restricted(&sets)?;
            embed = compose_embeds(&embed, &step);
            cur = next;
            continue 'outer;
        }

        // fixpoint reached; for k = 2, install the strategy constraints C^X
        let strategy = if keff == 2 {
            let mut relations = BTreeMap::new();
            let mut to_add: Vec<Constraint> = Vec::new();
            for (xi, x) in xsets.iter().enumerate() {
                let comps: Vec<Arc<crate::algebra::FiniteAlgebra>> =
                    x.iter().map(|&v| Arc::clone(cur.domain(v))).collect();
                let rel = TupleSet::from_tuples(comps, rels[xi].iter().cloned())?;
                let exists = cur.constraints().iter().any(|c| {
                    c.scope.len() == 2
                        && c.scope[0] == x[0]
                        && c.scope[1] == x[1]
                        && c.relation.set_eq(&rel)
                });
                if !exists {
                    to_add.push(Constraint {
                        scope: x.clone(),
                        relation: rel.clone(),
                    });
                }
                relations.insert((x[0], x[1]), rel);
            }
            if !to_add.is_empty() {
                let mut constraints = cur.constraints().to_vec();
                constraints.extend(to_add);
                cur = Instance::new(cur.names().to_vec(), cur.domains().to_vec(), constraints)?;
            }
            Some(Strategy23 { relations })
        } else {
            None
        };
        return Ok(Some(Minimality {
            instance: cur,
            embed,
            strategy,
        }));
    }
}

/// Outcome of a global-minimality pass.
pub enum MinimalityOutcome {
    /// Every constraint tuple extends to a solution.
    Minimal,
    /// Unsupported tuples were removed; the instance was re-1-minimalized.
    Tightened(Instance),
    /// Tightening emptied the instance.
    Empty,
}

/// Checks global minimality with a decision procedure: every constraint
/// tuple is pinned and solved; unsupported tuples are removed.
pub fn check_global_minimality(
    instance: &Instance,
    solve: &mut dyn FnMut(&Instance) -> Result<bool>,
) -> Result<MinimalityOutcome> {
    let mut removed_any = false;
    let mut constraints = Vec::with_capacity(instance.constraints().len());
    for (ci, c) in instance.constraints().iter().enumerate() {
        let mut kept = Vec::new();
        for t in c.relation.iter() {
            let mut pinned = instance.clone();
            for (i, &v) in c.scope.iter().enumerate() {
                pinned = pinned.pinned(v, t[i])?;
            }
            if solve(&pinned)? {
                kept.push(t);
            } else {
                removed_any = true;
            }
        }
        let _ = ci;
        let relation = TupleSet::from_tuples(c.relation.components().to_vec(), kept)?;
        constraints.push(Constraint {
            scope: c.scope.clone(),
            relation,
        });
    }
    if !removed_any {
        return Ok(MinimalityOutcome::Minimal);
    }
    if constraints.iter().any(|c| c.relation.is_empty()) {
        return Ok(MinimalityOutcome::Empty);
    }
    let tightened = Instance::new(
        instance.names().to_vec(),
        instance.domains().to_vec(),
        constraints,
    )?;
    match enforce_1_minimality(&tightened)? {
        None => Ok(MinimalityOutcome::Empty),
        Some((inst, _)) => Ok(MinimalityOutcome::Tightened(inst)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit;

    fn diseq(domains: &[Arc<crate::algebra::FiniteAlgebra>], u: usize, v: usize) -> Constraint {
        let alg = &domains[u];
        let tuples: Vec<Vec<Element>> = alg
            .elements()
            .flat_map(|a| {
                alg.elements()
                    .filter(move |&b| b != a)
                    .map(move |b| vec![a, b])
            })
            .collect();
        Constraint {
            scope: vec![u, v],
            relation: TupleSet::from_tuples(
                vec![Arc::clone(alg), Arc::clone(&domains[v])],
                tuples,
            )
            .unwrap(),
        }
    }

    fn coloring(edges: &[(usize, usize)], n: usize) -> Instance {
        let maj = testkit::a2maj();
        let domains: Vec<_> = (0..n).map(|_| Arc::clone(&maj)).collect();
        let names = (0..n).map(|i| format!("v{i}")).collect();
        let constraints = edges.iter().map(|&(u, v)| diseq(&domains, u, v)).collect();
        Instance::new(names, domains, constraints).unwrap()
    }

    fn pin_constraint(
        domains: &[Arc<crate::algebra::FiniteAlgebra>],
        v: usize,
        e: Element,
    ) -> Constraint {
        Constraint {
            scope: vec![v],
            relation: TupleSet::from_tuples(vec![Arc::clone(&domains[v])], [vec![e]]).unwrap(),
        }
    }

    #[test]
    fn contradictory_unary_is_empty() {
        let a2 = testkit::a2semi();
        let domains = vec![Arc::clone(&a2)];
        let constraints = vec![
            pin_constraint(&domains, 0, 0),
            pin_constraint(&domains, 0, 1),
        ];
        let inst = Instance::new(vec!["x".into()], domains, constraints).unwrap();
        assert!(enforce_1_minimality(&inst).unwrap().is_none());
    }

    #[test]
    fn one_minimality_is_idempotent() {
        let inst = coloring(&[(0, 1), (1, 2)], 3);
        let (fixed, embed) = enforce_1_minimality(&inst).unwrap().unwrap();
        assert!(embed.iter().all(|e| e == &vec![0, 1]));
        let (again, _) = enforce_1_minimality(&fixed).unwrap().unwrap();
        assert_eq!(again.constraints().len(), fixed.constraints().len());
    }

    #[test]
    fn equality_chain_propagates_pin() {
        let z3 = testkit::z3aff();
        let domains: Vec<_> = (0..4).map(|_| Arc::clone(&z3)).collect();
        let names = (0..4).map(|i| format!("x{i}")).collect();
        let eq = |u: usize, v: usize| {
            let tuples: Vec<Vec<Element>> = (0..3u8).map(|e| vec![e, e]).collect();
            Constraint {
                scope: vec![u, v],
                relation: TupleSet::from_tuples(
                    vec![Arc::clone(&domains[u]), Arc::clone(&domains[v])],
                    tuples,
                )
                .unwrap(),
            }
        };
        let mut constraints = vec![eq(0, 1), eq(1, 2), eq(2, 3)];
        constraints.push(pin_constraint(&domains, 0, 2));
        let inst = Instance::new(names, domains, constraints).unwrap();
        let (fixed, embed) = enforce_1_minimality(&inst).unwrap().unwrap();
        for v in 0..4 {
            assert_eq!(fixed.domain(v).size, 1);
            assert_eq!(embed[v], vec![2]);
        }
    }

    #[test]
    fn triangle_two_coloring_fails_23() {
        let inst = coloring(&[(0, 1), (1, 2), (0, 2)], 3);
        assert!(enforce_k_minimality(&inst, 2).unwrap().is_none());
    }

    #[test]
    fn path_two_coloring_has_strategy() {
        let inst = coloring(&[(0, 1), (1, 2)], 3);
        let out = enforce_k_minimality(&inst, 2).unwrap().unwrap();
        let strategy = out.strategy.unwrap();
        let r01 = strategy.get(0, 1).unwrap();
        assert_eq!(r01.sorted_tuples(), vec![vec![0, 1], vec![1, 0]]);
        // the strategy relation for the non-edge {0,2} is equality
        let r02 = strategy.get(0, 2).unwrap();
        assert_eq!(r02.sorted_tuples(), vec![vec![0, 0], vec![1, 1]]);
        // every pair has a C^X constraint carrying its strategy relation
        // (tightened originals already serve for the two edges)
        assert_eq!(out.instance.constraints().len(), 3);
        for (&(u, v), rel) in &strategy.relations {
            assert!(out
                .instance
                .constraints()
                .iter()
                .any(|c| c.scope == vec![u, v] && c.relation.set_eq(rel)));
        }
    }

    #[test]
    fn k_equal_nvars_solves() {
        let inst = coloring(&[(0, 1), (1, 2)], 3);
        let out = enforce_k_minimality(&inst, 3).unwrap().unwrap();
        // relations for the full variable set equal the solution set
        assert_eq!(out.instance.num_vars(), 3);
        // spot check: pinning is consistent with the two proper colorings
        assert!(out.instance.is_solution(&[0, 1, 0]));
        assert!(out.instance.is_solution(&[1, 0, 1]));
        assert!(!out.instance.is_solution(&[0, 0, 1]));
    }

    #[test]
    fn global_minimality_with_oracle() {
        let inst = coloring(&[(0, 1), (1, 2)], 3);
        let mut solve = |p: &Instance| -> Result<bool> {
            // tiny exhaustive check
            let sizes: Vec<usize> = p.domains().iter().map(|d| d.size).collect();
            let mut asn = vec![0 as Element; p.num_vars()];
            loop {
                if p.is_solution(&asn) {
                    return Ok(true);
                }
                let mut i = p.num_vars();
                loop {
                    if i == 0 {
                        return Ok(false);
                    }
                    i -= 1;
                    if (asn[i] as usize) + 1 < sizes[i] {
                        asn[i] += 1;
                        break;
                    }
                    asn[i] = 0;
                }
            }
        };
        match check_global_minimality(&inst, &mut solve).unwrap() {
            MinimalityOutcome::Minimal => {}
            _ => panic!("path coloring is already minimal"),
        }

        // an unsupported tuple gets removed
        let a2 = testkit::a2maj();
        let domains = vec![Arc::clone(&a2), Arc::clone(&a2)];
        let full = Constraint {
            scope: vec![0, 1],
            relation: TupleSet::full(domains.clone()).unwrap(),
        };
        let constraints = vec![full, diseq(&domains, 0, 1), pin_constraint(&domains, 0, 0)];
        let inst = Instance::new(vec!["x".into(), "y".into()], domains, constraints).unwrap();
        match check_global_minimality(&inst, &mut solve).unwrap() {
            MinimalityOutcome::Tightened(t) => {
                // only (0,1) survives in the full constraint
                assert_eq!(t.constraints()[0].relation.len(), 1);
            }
            _ => panic!("expected tightening"),
        }
    }
}
