//! The recursive solver: size/MAX/Center computation, block-minimality,
//! Maroti retractions, the flagged-value loop and the semilattice-free
//! fallback.

use std::cell::{Cell, RefCell};
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::Serialize;

use crate::algebra::{Element, FiniteAlgebra, OperationTable};
use crate::analysis::{analyze, AlgebraAnalysis};
use crate::budget::Budget;
use crate::congruence::Congruence;
use crate::consistency::{enforce_1_minimality, enforce_k_minimality, Strategy23};
use crate::error::{Error, Result};
use crate::instance::{BackChain, BackStep, Constraint, Instance};
use crate::relation::TupleSet;
use crate::separation::{compute_w, decompose_by_centralizer, oriented_strategy_relation};
use crate::terms::{find_shared_dot_operation, is_thin_semilattice_edge, TermWitness};

/// Verdict of a solve, with the assignment in the input instance's
/// coordinates. Sat assignments are verified against every constraint before
/// being returned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Sat(Vec<Element>),
    Unsat,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceEvent {
    pub depth: usize,
    pub event: String,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub verdict: Verdict,
    pub trace: Vec<TraceEvent>,
}

/// Branch selectors of the solver at one pipeline level.
#[derive(Debug, Clone)]
pub struct SolveContext {
    /// `size(P)`: maximal size of the non-semilattice-free domains (0 if none).
    pub size: usize,
    /// Variables attaining `size` with a non-semilattice-free domain.
    pub max_vars: Vec<usize>,
    /// Variables whose monolith has a full quasi-centralizer.
    pub center_vars: Vec<usize>,
    /// Monolith on `MAX ∩ Center`, equality elsewhere.
    pub mu_star: Vec<Congruence>,
    /// Shared dot term for the current domains, when computed.
    pub dot: Option<TermWitness>,
    pub recursion_depth: usize,
}

/// Computes size, MAX, Center and μ* for an instance whose domains are
/// subdirectly irreducible.
pub fn compute_context(instance: &Instance, budget: &Budget, depth: usize) -> Result<SolveContext> {
    let n = instance.num_vars();
    let mut analyses = Vec::with_capacity(n);
    for v in 0..n {
        analyses.push(analyze(instance.domain(v), budget)?);
    }
    let size = analyses
        .iter()
        .filter(|a| !a.semilattice_free)
        .map(|a| a.algebra.size)
        .max()
        .unwrap_or(0);
    let max_vars: Vec<usize> = (0..n)
        .filter(|&v| {
            !analyses[v].semilattice_free && analyses[v].algebra.size == size && size > 0
        })
        .collect();
    let mut center_vars = Vec::new();
    for v in 0..n {
        if analyses[v].is_si && analyses[v].has_central_monolith(budget)? {
            center_vars.push(v);
        }
    }
    let mut mu_star = Vec::with_capacity(n);
    for v in 0..n {
        if max_vars.contains(&v) && center_vars.contains(&v) {
            let mu = analyses[v].monolith.clone().ok_or_else(|| {
                Error::InternalInconsistency(format!("variable {v} has no monolith"))
            })?;
            mu_star.push(mu);
        } else {
            mu_star.push(Congruence::zero(instance.domain(v)));
        }
    }
    Ok(SolveContext {
        size,
        max_vars,
        center_vars,
        mu_star,
        dot: None,
        recursion_depth: depth,
    })
}

/// `size(P)` alone.
pub fn instance_size(instance: &Instance, budget: &Budget) -> Result<usize> {
    let mut size = 0;
    for v in 0..instance.num_vars() {
        let a = analyze(instance.domain(v), budget)?;
        if !a.semilattice_free {
            size = size.max(a.algebra.size);
        }
    }
    Ok(size)
}

// ---------------------------------------------------------------------------
// Semilattice-free fallback
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FallbackMode {
    /// Propagation-driven backtracking (the default stand-in; correctness is
    /// the contract, not the few-subpowers complexity bound).
    Brute,
    /// Reserved extension point for a real few-subpowers implementation.
    External,
}

/// Solves an instance whose domains are all semilattice-free. The verdict
/// contract is identical to [`solve_csp`].
pub fn semilattice_free_solve(
    instance: &Instance,
    mode: FallbackMode,
    budget: &Budget,
) -> Result<SolveOutcome> {
    match mode {
        FallbackMode::External => Err(Error::UnsupportedMode("external".into())),
        FallbackMode::Brute => {
            for v in 0..instance.num_vars() {
                let a = analyze(instance.domain(v), budget)?;
                if !a.semilattice_free {
                    return Err(Error::InvalidInput(format!(
                        "domain of variable {v} has semilattice edges",
                    )));
                }
            }
            let verdict = match propagate_backtrack(instance)? {
                Some(asn) => {
                    if !instance.is_solution(&asn) {
                        return Err(Error::InternalInconsistency(
                            "fallback produced a non-solution".into(),
                        ));
                    }
                    Verdict::Sat(asn)
                }
                None => Verdict::Unsat,
            };
            Ok(SolveOutcome {
                verdict,
                trace: vec![TraceEvent {
                    depth: 0,
                    event: "semilattice-free fallback".into(),
                }],
            })
        }
    }
}

/// Backtracking with full 1-minimality propagation at every node. Variable
/// order: smallest current domain, ties by index; values ascending.
/// Deliberately distinct from the oracle's forward-checking search.
fn propagate_backtrack(instance: &Instance) -> Result<Option<Vec<Element>>> {
    let (fixed, embed) = match enforce_1_minimality(instance)? {
        None => return Ok(None),
        Some(x) => x,
    };
    let n = fixed.num_vars();
    if n == 0 {
        return Ok(Some(vec![]));
    }
    if (0..n).all(|v| fixed.domain(v).size == 1) {
        let asn: Vec<Element> = vec![0; n];
        if fixed.is_solution(&asn) {
            return Ok(Some(back_translate(&embed, &asn)));
        }
        return Ok(None);
    }
    let v = (0..n)
        .filter(|&v| fixed.domain(v).size > 1)
        .min_by_key(|&v| (fixed.domain(v).size, v))
        .unwrap();
    for a in fixed.domain(v).elements() {
        let pinned = fixed.pinned(v, a)?;
        if let Some(sub) = propagate_backtrack(&pinned)? {
            return Ok(Some(back_translate(&embed, &sub)));
        }
    }
    Ok(None)
}

fn back_translate(embed: &[Vec<Element>], asn: &[Element]) -> Vec<Element> {
    asn.iter()
        .enumerate()
        .map(|(v, &e)| embed[v][e as usize])
        .collect()
}

// ---------------------------------------------------------------------------
// Maroti retraction
// ---------------------------------------------------------------------------

/// Builds the per-variable maps `q_v(x) = dot(x, b_v)` for a solution `phi`
/// of `P/μ̄*`, with `b_v` the least element of the block `phi(v)`, verifying
/// that the choice of `b_v` within the block does not matter.
fn maroti_maps(
    instance: &Instance,
    nats: &[Vec<Element>],
    dot: &TermWitness,
    phi: &[Element],
) -> Result<Vec<Vec<Element>>> {
    let n = instance.num_vars();
    let mut maps = Vec::with_capacity(n);
    for v in 0..n {
        let dom = instance.domain(v);
        let block: Vec<Element> = dom
            .elements()
            .filter(|&e| nats[v][e as usize] == phi[v])
            .collect();
        let b = *block.first().ok_or_else(|| {
            Error::InconsistentRetraction(format!("phi({v}) is not a block of the quotient"))
        })?;
        let mut table = Vec::with_capacity(dom.size);
        for e in dom.elements() {
            table.push(dot.eval(dom, &[e, b])?);
        }
        // well-definedness within the block
        for &b2 in &block[1..] {
            for e in dom.elements() {
                if dot.eval(dom, &[e, b2])? != table[e as usize] {
                    return Err(Error::InconsistentRetraction(format!(
                        "dot image depends on the representative of phi({v})"
                    )));
                }
            }
        }
        maps.push(table);
    }
    Ok(maps)
}

/// Raises a family of self-maps to the least power that is idempotent for
/// every variable simultaneously.
fn idempotent_power(maps: &[Vec<Element>]) -> Result<Vec<Vec<Element>>> {
    let mut current: Vec<Vec<Element>> = maps.to_vec();
    for _k in 1..=4096 {
        let idempotent = current
            .iter()
            .all(|m| m.iter().all(|&e| m[m[e as usize] as usize] == m[e as usize]));
        if idempotent {
            return Ok(current);
        }
        current = current
            .iter()
            .zip(maps)
            .map(|(c, q)| c.iter().map(|&e| q[e as usize]).collect())
            .collect();
    }
    Err(Error::InconsistentRetraction(
        "no idempotent power found".into(),
    ))
}

/// Checks that every constraint relation is closed under the map family.
fn verify_consistent(instance: &Instance, maps: &[Vec<Element>]) -> Result<()> {
    for (ci, c) in instance.constraints().iter().enumerate() {
        for t in c.relation.iter() {
            let mapped: Vec<Element> = t
                .iter()
                .enumerate()
                .map(|(i, &e)| maps[c.scope[i]][e as usize])
                .collect();
            if !c.relation.contains(&mapped) {
                return Err(Error::InconsistentRetraction(format!(
                    "constraint {ci} is not closed under the retraction"
                )));
            }
        }
    }
    Ok(())
}

/// Applies consistent idempotent maps: domains become the images carrying the
/// retract operations `x̄ ↦ p(f(x̄))`, relations become pointwise images.
/// Returns the retracted instance and the per-variable translation
/// `new element -> old element`.
fn apply_retraction(
    instance: &Instance,
    maps: &[Vec<Element>],
) -> Result<(Instance, Vec<Vec<Element>>)> {
    let n = instance.num_vars();
    let mut new_domains = Vec::with_capacity(n);
    let mut embeds = Vec::with_capacity(n);
    let mut old_to_new: Vec<HashMap<Element, Element>> = Vec::with_capacity(n);
    for v in 0..n {
        let dom = instance.domain(v);
        let mut image: Vec<Element> = maps[v].clone();
        image.sort_unstable();
        image.dedup();
        let inv: HashMap<Element, Element> = image
            .iter()
            .enumerate()
            .map(|(i, &e)| (e, i as Element))
            .collect();
        let k = image.len();
        let ops: Vec<OperationTable> = dom
            .operations
            .iter()
            .map(|op| {
                OperationTable::from_fn(op.name.clone(), op.arity, k, |args| {
                    let lifted: Vec<Element> =
                        args.iter().map(|&i| image[i as usize]).collect();
                    let value = op.apply(dom.size, &lifted);
                    inv[&maps[v][value as usize]]
                })
            })
            .collect();
        let id = if k == dom.size {
            dom.id.clone()
        } else {
            format!("{}.r{}", dom.id, k)
        };
        new_domains.push(FiniteAlgebra::new(id, k, ops)?);
        embeds.push(image);
        old_to_new.push(inv);
    }
    let mut constraints = Vec::with_capacity(instance.constraints().len());
    for c in instance.constraints() {
        let comps: Vec<_> = c.scope.iter().map(|&v| Arc::clone(&new_domains[v])).collect();
        let tuples: Vec<Vec<Element>> = c
            .relation
            .iter()
            .map(|t| {
                t.iter()
                    .enumerate()
                    .map(|(i, &e)| old_to_new[c.scope[i]][&maps[c.scope[i]][e as usize]])
                    .collect()
            })
            .collect();
        constraints.push(Constraint {
            scope: c.scope.clone(),
            relation: TupleSet::from_tuples(comps, tuples)?,
        });
    }
    let inst = Instance::new(instance.names().to_vec(), new_domains, constraints)?;
    Ok((inst, embeds))
}

/// The Maroti retraction `p(P)` for one solution `phi` of `P/μ̄*`:
/// `q_v(x) = dot(x, b_v)` raised to the least uniformly idempotent power.
/// Consistency of the maps and well-definedness of the `b_v` choice are
/// verified. Returns the retracted instance and the translation back.
pub fn maroti_retraction(
    instance: &Instance,
    ctx: &SolveContext,
    phi: &[Element],
    budget: &Budget,
) -> Result<(Instance, Vec<Vec<Element>>)> {
    let (_, nats) = instance.quotient(&ctx.mu_star)?;
    let dot = match &ctx.dot {
        Some(d) => d.clone(),
        None => shared_dot(instance, budget)?,
    };
    let q = maroti_maps(instance, &nats, &dot, phi)?;
    let p = idempotent_power(&q)?;
    verify_consistent(instance, &p)?;
    apply_retraction(instance, &p)
}

/// A single dot term valid for every distinct domain algebra of the
/// instance, memoized process-wide on the set of algebras.
fn shared_dot(instance: &Instance, budget: &Budget) -> Result<TermWitness> {
    use std::sync::{Mutex, OnceLock};
    type Key = Vec<(usize, Vec<(String, usize, Vec<Element>)>)>;
    static CACHE: OnceLock<Mutex<HashMap<Key, TermWitness>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));

    let mut distinct: Vec<Arc<FiniteAlgebra>> = Vec::new();
    for dom in instance.domains() {
        if !distinct.iter().any(|d| **d == **dom) {
            distinct.push(Arc::clone(dom));
        }
    }
    distinct.sort_by_key(|a| {
        (
            a.size,
            a.operations
                .iter()
                .map(|o| o.table.clone())
                .collect::<Vec<_>>(),
        )
    });
    let key: Key = distinct
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
    if let Some(w) = cache.lock().unwrap().get(&key) {
        return Ok(w.clone());
    }
    let mut with_edges = Vec::with_capacity(distinct.len());
    for alg in &distinct {
        let a = analyze(alg, budget)?;
        with_edges.push((Arc::clone(alg), a.edges.clone()));
    }
    let w = find_shared_dot_operation(&with_edges, budget)?;
    cache.lock().unwrap().insert(key, w.clone());
    Ok(w)
}

// ---------------------------------------------------------------------------
// Block-minimality
// ---------------------------------------------------------------------------

enum BmPass {
    Unchanged,
    Tightened(Instance),
    Empty,
}

type Decide<'d> = dyn FnMut(&Instance, usize) -> Result<bool> + 'd;

/// 1-minimalizes a subproblem, asserts it is strictly smaller than the
/// parent, and hands it to the decision procedure.
fn decide_strictly_smaller(
    instance: &Instance,
    parent_size: usize,
    budget: &Budget,
    depth: usize,
    decide: &mut Decide,
) -> Result<bool> {
    let reduced = match enforce_1_minimality(instance)? {
        None => return Ok(false),
        Some((p, _)) => p,
    };
    let sz = instance_size(&reduced, budget)?;
    if sz >= parent_size {
        return Err(Error::InternalInconsistency(format!(
            "block-minimality subproblem has size {sz}, parent {parent_size}"
        )));
    }
    decide(&reduced, depth + 1)
}

/// One block-minimality pass over a (2,3)-minimal instance with its
/// strategy: for every variable, prime interval and constraint, the pinned
/// block subproblems of (BM1)/(BM2) are solved on strictly smaller instances
/// and unsupported tuples removed.
fn bm_pass(
    inst: &Instance,
    strategy: &Strategy23,
    budget: &Budget,
    depth: usize,
    decide: &mut Decide,
) -> Result<BmPass> {
    let n = inst.num_vars();
    let mut analyses: Vec<Arc<AlgebraAnalysis>> = Vec::with_capacity(n);
    for v in 0..n {
        analyses.push(analyze(inst.domain(v), budget)?);
    }
    let size = analyses
        .iter()
        .filter(|a| !a.semilattice_free)
        .map(|a| a.algebra.size)
        .max()
        .unwrap_or(0);
    if size == 0 {
        return Ok(BmPass::Unchanged);
    }
    let max_vars: Vec<usize> = (0..n)
        .filter(|&v| !analyses[v].semilattice_free && analyses[v].algebra.size == size)
        .collect();

    let mut alive: Vec<Vec<bool>> = inst
        .constraints()
        .iter()
        .map(|c| vec![true; c.relation.len()])
        .collect();
    let mut changed = false;

    // all triples (v, α ≺ β), taking β_v = 1_v
    for v in 0..n {
        for interval in analyses[v].lattice.prime_intervals() {
            let wset = compute_w(inst, strategy, v, &interval, budget)?;
            let zeta_v = analyses[v].zeta(&interval.lower, &interval.upper, budget)?;
            let wvars = wset.variables();
            let pos_in_w: BTreeMap<usize, usize> =
                wvars.iter().enumerate().map(|(i, &u)| (u, i)).collect();

            if !zeta_v.is_one() {
                // (BM1), decomposable case: P_W splits into block instances
                let mut zeta_map = BTreeMap::new();
                for (&u, iu) in &wset.members {
                    zeta_map.insert(u, analyses[u].zeta(&iu.lower, &iu.upper, budget)?);
                }
                let (_pw, comps) = decompose_by_centralizer(inst, strategy, &wset, &zeta_map)?;
                for (ci, c) in inst.constraints().iter().enumerate() {
                    let pins: Vec<(usize, usize)> = c
                        .scope
                        .iter()
                        .enumerate()
                        .filter_map(|(i, u)| pos_in_w.get(u).map(|&p| (i, p)))
                        .collect();
                    for (ti, t) in c.relation.iter().enumerate() {
                        if !alive[ci][ti] {
                            continue;
                        }
                        let mut sat = false;
                        'comps: for comp in &comps {
                            let mut pinned = comp.instance.clone();
                            for &(i, p) in &pins {
                                let want = t[i];
                                match comp.embed[p].iter().position(|&e| e == want) {
                                    Some(ce) => {
                                        pinned = pinned.pinned(p, ce as Element)?;
                                    }
                                    None => continue 'comps,
                                }
                            }
                            if decide_strictly_smaller(&pinned, size, budget, depth, decide)? {
                                sat = true;
                                break;
                            }
                        }
                        if !sat {
                            alive[ci][ti] = false;
                            changed = true;
                        }
                    }
                }
            } else {
                // (BM1), central case: quotient MAX-variables off the scope
                for (ci, c) in inst.constraints().iter().enumerate() {
                    let base = inst.restrict_to(&wvars)?;
                    let quots: Vec<Congruence> = wvars
                        .iter()
                        .map(|&u| {
                            if max_vars.contains(&u) && !c.scope.contains(&u) {
                                analyses[u].monolith.clone().ok_or_else(|| {
                                    Error::InternalInconsistency(format!(
                                        "variable {u} has no monolith"
                                    ))
                                })
                            } else {
                                Ok(Congruence::zero(inst.domain(u)))
                            }
                        })
                        .collect::<Result<_>>()?;
                    let (qbase, qnats) = base.quotient(&quots)?;
                    let pins: Vec<(usize, usize)> = c
                        .scope
                        .iter()
                        .enumerate()
                        .filter_map(|(i, u)| pos_in_w.get(u).map(|&p| (i, p)))
                        .collect();
                    for (ti, t) in c.relation.iter().enumerate() {
                        if !alive[ci][ti] {
                            continue;
                        }
                        let mut pinned = qbase.clone();
                        for &(i, p) in &pins {
                            pinned = pinned.pinned(p, qnats[p][t[i] as usize])?;
                        }
                        if !decide_strictly_smaller(&pinned, size, budget, depth, decide)? {
                            alive[ci][ti] = false;
                            changed = true;
                        }
                    }
                }
                // (BM2): branch over the blocks of every non-central triple
                for w2 in 0..n {
                    for int2 in analyses[w2].lattice.prime_intervals() {
                        let zeta_w2 = analyses[w2].zeta(&int2.lower, &int2.upper, budget)?;
                        if zeta_w2.is_one() {
                            continue;
                        }
                        let wset2 = compute_w(inst, strategy, w2, &int2, budget)?;
                        let cap: Vec<usize> = wvars
                            .iter()
                            .copied()
                            .filter(|u| wset2.members.contains_key(u))
                            .collect();
                        let mut zeta2 = BTreeMap::new();
                        for &u in &cap {
                            let iu = &wset2.members[&u];
                            zeta2.insert(u, analyses[u].zeta(&iu.lower, &iu.upper, budget)?);
                        }
                        for (ci, c) in inst.constraints().iter().enumerate() {
                            let base = inst.restrict_to(&wvars)?;
                            let quots: Vec<Congruence> = wvars
                                .iter()
                                .map(|&u| {
                                    if max_vars.contains(&u) && !cap.contains(&u) {
                                        analyses[u].monolith.clone().ok_or_else(|| {
                                            Error::InternalInconsistency(format!(
                                                "variable {u} has no monolith"
                                            ))
                                        })
                                    } else {
                                        Ok(Congruence::zero(inst.domain(u)))
                                    }
                                })
                                .collect::<Result<_>>()?;
                            let (qbase, qnats) = base.quotient(&quots)?;
                            let pins: Vec<(usize, usize)> = c
                                .scope
                                .iter()
                                .enumerate()
                                .filter_map(|(i, u)| {
                                    if cap.contains(u) {
                                        pos_in_w.get(u).map(|&p| (i, p))
                                    } else {
                                        None
                                    }
                                })
                                .collect();
                            for (ti, t) in c.relation.iter().enumerate() {
                                if !alive[ci][ti] {
                                    continue;
                                }
                                let mut pinned = qbase.clone();
                                for &(i, p) in &pins {
                                    pinned = pinned.pinned(p, qnats[p][t[i] as usize])?;
                                }
                                let sat = bm2_branches(
                                    inst, strategy, &pinned, &wvars, &cap, &zeta2, size,
                                    budget, depth, decide,
                                )?;
                                if !sat {
                                    alive[ci][ti] = false;
                                    changed = true;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    if !changed {
        return Ok(BmPass::Unchanged);
    }
    let mut constraints = Vec::with_capacity(inst.constraints().len());
    for (ci, c) in inst.constraints().iter().enumerate() {
        let kept: Vec<Vec<Element>> = c
            .relation
            .iter()
            .enumerate()
            .filter(|&(ti, _)| alive[ci][ti])
            .map(|(_, t)| t)
            .collect();
        if kept.is_empty() {
            return Ok(BmPass::Empty);
        }
        constraints.push(Constraint {
            scope: c.scope.clone(),
            relation: TupleSet::from_tuples(c.relation.components().to_vec(), kept)?,
        });
    }
    Ok(BmPass::Tightened(Instance::new(
        inst.names().to_vec(),
        inst.domains().to_vec(),
        constraints,
    )?))
}

/// Branches a pinned quotiented subproblem over consistent block families of
/// the variables in `cap`; satisfiable iff some branch is.
#[allow(clippy::too_many_arguments)]
fn bm2_branches(
    inst: &Instance,
    strategy: &Strategy23,
    pinned: &Instance,
    wvars: &[usize],
    cap: &[usize],
    zeta2: &BTreeMap<usize, Congruence>,
    parent_size: usize,
    budget: &Budget,
    depth: usize,
    decide: &mut Decide,
) -> Result<bool> {
    if cap.is_empty() {
        return decide_strictly_smaller(pinned, parent_size, budget, depth, decide);
    }
    let anchor = cap[0];
    let anchor_zeta = &zeta2[&anchor];
    'family: for rep in anchor_zeta.block_reps() {
        let mut allowed: Vec<Vec<Element>> = (0..pinned.num_vars())
            .map(|p| pinned.domain(p).elements().collect())
            .collect();
        for &u in cap {
            let block = if u == anchor {
                anchor_zeta.block_of(rep)
            } else {
                let r = oriented_strategy_relation(inst, strategy, anchor, u)?;
                let mut target = None;
                for t in r.iter() {
                    if anchor_zeta.related(t[0], rep) {
                        target = Some(zeta2[&u].rep(t[1]));
                        break;
                    }
                }
                match target {
                    Some(t) => zeta2[&u].block_of(t),
                    None => continue 'family,
                }
            };
            let p = wvars.iter().position(|&x| x == u).unwrap();
            allowed[p] = block;
        }
        let branch = match pinned.rebuild_restricted(&allowed) {
            Ok((b, _)) => b,
            Err(Error::NotClosed { .. }) | Err(Error::InvalidInput(_)) => continue 'family,
            Err(e) => return Err(e),
        };
        if decide_strictly_smaller(&branch, parent_size, budget, depth, decide)? {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Establishes block-minimality, re-running (2,3)-minimality after every
/// tightening, with the pinned block subproblems decided through `recurse`.
/// Returns `None` when the instance empties.
pub fn establish_block_minimality(
    instance: &Instance,
    budget: &Budget,
    recurse: &mut dyn FnMut(&Instance) -> Result<bool>,
) -> Result<Option<Instance>> {
    let mut cur = instance.clone();
    loop {
        let m = match enforce_k_minimality(&cur, 2)? {
            None => return Ok(None),
            Some(m) => m,
        };
        let strategy = m.strategy.expect("k = 2 yields a strategy");
        cur = m.instance;
        let mut decide = |p: &Instance, _d: usize| recurse(p);
        match bm_pass(&cur, &strategy, budget, 0, &mut decide)? {
            BmPass::Empty => return Ok(None),
            BmPass::Unchanged => return Ok(Some(cur)),
            BmPass::Tightened(p) => {
                cur = p;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// The main engine
// ---------------------------------------------------------------------------

struct Engine<'a> {
    budget: &'a Budget,
    trace: RefCell<Vec<TraceEvent>>,
    calls: Cell<usize>,
    size_cap: usize,
}

const CALL_GUARD: usize = 1_000_000;

impl<'a> Engine<'a> {
    fn new(budget: &'a Budget, size_cap: usize) -> Self {
        Engine {
            budget,
            trace: RefCell::new(Vec::new()),
            calls: Cell::new(0),
            size_cap,
        }
    }

    fn note(&self, depth: usize, event: impl Into<String>) {
        let mut t = self.trace.borrow_mut();
        if t.len() < 10_000 {
            t.push(TraceEvent {
                depth,
                event: event.into(),
            });
        }
    }

    fn bump(&self) -> Result<()> {
        let c = self.calls.get() + 1;
        self.calls.set(c);
        if c > CALL_GUARD {
            return Err(Error::RecursionBudgetExceeded {
                depth: c,
                cap: CALL_GUARD,
            });
        }
        Ok(())
    }

    fn check_depth(&self, depth: usize) -> Result<()> {
        if depth > self.size_cap {
            return Err(Error::RecursionBudgetExceeded {
                depth,
                cap: self.size_cap,
            });
        }
        Ok(())
    }

    fn decide(&self, instance: &Instance, depth: usize) -> Result<bool> {
        Ok(self.solve_rec(instance, depth)?.is_some())
    }

    fn run_bm(&self, inst: &Instance, strategy: &Strategy23, depth: usize) -> Result<BmPass> {
        let mut decide = |p: &Instance, d: usize| {
            self.check_depth(d)?;
            self.decide(p, d)
        };
        bm_pass(inst, strategy, self.budget, depth, &mut decide)
    }

    /// The full pipeline on one instance. Returns an assignment in the input
    /// instance's coordinates.
    fn solve_rec(&self, input: &Instance, depth: usize) -> Result<Option<Vec<Element>>> {
        self.bump()?;
        let mut chain = BackChain::default();
        let mut cur = input.clone();

        'restart: loop {
            // 1-minimality
            match enforce_1_minimality(&cur)? {
                None => return Ok(None),
                Some((p, e)) => {
                    chain.push(BackStep::Translate(e));
                    cur = p;
                }
            }
            let n = cur.num_vars();
            if n == 0 {
                return Ok(Some(vec![]));
            }
            if cur.constraints().is_empty() {
                let asn = vec![0 as Element; n];
                return Ok(Some(chain.back(&asn)?));
            }
            if (0..n).all(|v| cur.domain(v).size == 1) {
                let asn = vec![0 as Element; n];
                if cur.is_solution(&asn) {
                    return Ok(Some(chain.back(&asn)?));
                }
                return Ok(None);
            }
            // semilattice-free fast path
            let mut all_free = true;
            for v in 0..n {
                if !analyze(cur.domain(v), self.budget)?.semilattice_free {
                    all_free = false;
                    break;
                }
            }
            if all_free {
                self.note(depth, "semilattice-free fallback");
                match propagate_backtrack(&cur)? {
                    Some(asn) => return Ok(Some(chain.back(&asn)?)),
                    None => return Ok(None),
                }
            }

            // SI + (2,3)-minimal + block-minimal, to a simultaneous fixpoint
            let strategy;
            loop {
                match crate::instance::normalize_si(&cur, self.budget)? {
                    None => return Ok(None),
                    Some((p, c2)) => {
                        chain.append(c2);
                        cur = p;
                    }
                }
                let m = match enforce_k_minimality(&cur, 2)? {
                    None => return Ok(None),
                    Some(m) => m,
                };
                let domains_changed = m
                    .embed
                    .iter()
                    .enumerate()
                    .any(|(v, e)| e.len() != cur.domain(v).size);
                let st = m.strategy.expect("k = 2 yields a strategy");
                chain.push(BackStep::Translate(m.embed));
                cur = m.instance;
                if domains_changed {
                    // domains shrank: re-establish irreducibility first
                    continue;
                }
                match self.run_bm(&cur, &st, depth)? {
                    BmPass::Empty => return Ok(None),
                    BmPass::Tightened(p) => {
                        cur = p;
                        continue;
                    }
                    BmPass::Unchanged => {
                        strategy = st;
                        break;
                    }
                }
            }
            let _ = &strategy;
            let n = cur.num_vars();
            if (0..n).all(|v| cur.domain(v).size == 1) {
                let asn = vec![0 as Element; n];
                if cur.is_solution(&asn) {
                    return Ok(Some(chain.back(&asn)?));
                }
                return Ok(None);
            }

            let mut ctx = compute_context(&cur, self.budget, depth)?;
            let max_center: Vec<usize> = ctx
                .max_vars
                .iter()
                .copied()
                .filter(|v| ctx.center_vars.contains(v))
                .collect();

            if max_center.is_empty() {
                // subdirectly irreducible + (2,3)-minimal + block-minimal +
                // MAX ∩ Center empty: a solution exists; extract by pinning
                self.note(depth, format!("non-central branch (size {})", ctx.size));
                let v = (0..cur.num_vars())
                    .find(|&v| cur.domain(v).size > 1)
                    .expect("non-singleton variable exists");
                for a in cur.domain(v).elements() {
                    self.bump()?;
                    let pinned = cur.pinned(v, a)?;
                    if let Some(sub) = self.solve_rec(&pinned, depth)? {
                        return Ok(Some(chain.back(&sub)?));
                    }
                }
                return Err(Error::InternalInconsistency(
                    "block-minimal non-central instance has no extendable value".into(),
                ));
            }

            // central branch
            self.note(depth, format!("central branch (size {})", ctx.size));
            let (pstar, nats) = cur.quotient(&ctx.mu_star)?;
            // flagged-value loop: strong 1-minimality of P*
            let mut flagged: Vec<Vec<Element>> = vec![Vec::new(); cur.num_vars()];
            let mut any_flag = false;
            for v in 0..pstar.num_vars() {
                for a in pstar.domain(v).elements() {
                    self.bump()?;
                    let pinned = pstar.pinned(v, a)?;
                    if !self.decide_pinned_quotient(&pinned, ctx.size, depth)? {
                        flagged[v].push(a);
                        any_flag = true;
                    }
                }
            }
            if any_flag {
                self.note(depth, "flagged values removed, restarting");
                // the unflagged set must be a subuniverse of the quotient
                for v in 0..pstar.num_vars() {
                    if flagged[v].is_empty() {
                        continue;
                    }
                    let keep: Vec<Element> = pstar
                        .domain(v)
                        .elements()
                        .filter(|e| !flagged[v].contains(e))
                        .collect();
                    if keep.is_empty() {
                        return Ok(None);
                    }
                    if let Err(e) = pstar.domain(v).restrict(&keep) {
                        return Err(Error::InternalInconsistency(format!(
                            "unflagged set of variable {v} is not a subuniverse: {e}"
                        )));
                    }
                }
                let allowed: Vec<Vec<Element>> = (0..cur.num_vars())
                    .map(|v| {
                        cur.domain(v)
                            .elements()
                            .filter(|&e| !flagged[v].contains(&nats[v][e as usize]))
                            .collect()
                    })
                    .collect();
                if allowed.iter().any(|a| a.is_empty()) {
                    return Ok(None);
                }
                let (t, emb) = cur.rebuild_restricted(&allowed)?;
                chain.push(BackStep::Translate(emb));
                cur = t;
                continue 'restart;
            }

            // P* is strongly 1-minimal; compose retractions over V* and
            // reduce to a strictly smaller instance
            let dot = shared_dot(&cur, self.budget)?;
            ctx.dot = Some(dot.clone());
            let mut vstar = Vec::new();
            for v in 0..pstar.num_vars() {
                if !analyze(pstar.domain(v), self.budget)?.semilattice_free {
                    vstar.push(v);
                }
            }
            for v in &ctx.max_vars {
                if !vstar.contains(v) {
                    return Err(Error::InternalInconsistency(format!(
                        "MAX variable {v} quotients to a semilattice-free domain"
                    )));
                }
            }
            let mut composite: Vec<Vec<Element>> = (0..cur.num_vars())
                .map(|v| cur.domain(v).elements().collect())
                .collect();
            for &v in &vstar {
                let target = self.retraction_block(pstar.domain(v))?;
                self.bump()?;
                let phi = self
                    .solve_rec(&pstar.pinned(v, target)?, depth)?
                    .ok_or_else(|| {
                        Error::InternalInconsistency(
                            "supported quotient value has no solution".into(),
                        )
                    })?;
                let q = maroti_maps(&cur, &nats, &dot, &phi)?;
                composite = composite
                    .iter()
                    .zip(&q)
                    .map(|(old, step)| old.iter().map(|&e| step[e as usize]).collect())
                    .collect();
            }
            let p = idempotent_power(&composite)?;
            verify_consistent(&cur, &p)?;
            for &v in &vstar {
                let mut image: Vec<Element> = p[v].clone();
                image.sort_unstable();
                image.dedup();
                if image.len() >= cur.domain(v).size {
                    return Err(Error::InternalInconsistency(format!(
                        "retraction did not shrink variable {v}"
                    )));
                }
            }
            let (retracted, emb) = apply_retraction(&cur, &p)?;
            let new_size = instance_size(&retracted, self.budget)?;
            if new_size >= ctx.size {
                return Err(Error::InternalInconsistency(format!(
                    "retracted instance has size {new_size}, parent {}",
                    ctx.size
                )));
            }
            self.note(depth, format!("retraction to size {new_size}"));
            self.check_depth(depth + 1)?;
            chain.push(BackStep::Translate(emb));
            return match self.solve_rec(&retracted, depth + 1)? {
                Some(asn) => Ok(Some(chain.back(&asn)?)),
                None => Ok(None),
            };
        }
    }

    /// Decides a pinned `P*` subproblem: re-normalized, recursed when
    /// strictly smaller, else settled by block-minimality and the
    /// non-central existence theorem.
    fn decide_pinned_quotient(
        &self,
        pinned: &Instance,
        parent_size: usize,
        depth: usize,
    ) -> Result<bool> {
        let mut cur = match enforce_1_minimality(pinned)? {
            None => return Ok(false),
            Some((p, _)) => p,
        };
        loop {
            match crate::instance::normalize_si(&cur, self.budget)? {
                None => return Ok(false),
                Some((p, _)) => cur = p,
            }
            let m = match enforce_k_minimality(&cur, 2)? {
                None => return Ok(false),
                Some(m) => m,
            };
            let domains_changed = m
                .embed
                .iter()
                .enumerate()
                .any(|(v, e)| e.len() != cur.domain(v).size);
            let strategy = m.strategy.expect("k = 2 yields a strategy");
            cur = m.instance;
            if domains_changed {
                continue;
            }
            let sz = instance_size(&cur, self.budget)?;
            if sz < parent_size {
                self.check_depth(depth + 1)?;
                return self.decide(&cur, depth + 1);
            }
            match self.run_bm(&cur, &strategy, depth)? {
                BmPass::Empty => return Ok(false),
                BmPass::Tightened(p) => {
                    cur = p;
                    continue;
                }
                BmPass::Unchanged => {
                    // same size: the existence theorem applies because the
                    // quotient cannot keep a central MAX variable
                    let ctx = compute_context(&cur, self.budget, depth)?;
                    let clash = ctx
                        .max_vars
                        .iter()
                        .any(|v| ctx.center_vars.contains(v));
                    if clash {
                        return Err(Error::InternalInconsistency(
                            "pinned quotient kept a central MAX variable".into(),
                        ));
                    }
                    return Ok(true);
                }
            }
        }
    }

    /// Chooses a target quotient element for the retraction of one variable:
    /// the absorbing end of a thin semilattice edge of the quotient domain.
    fn retraction_block(&self, quotient_domain: &Arc<FiniteAlgebra>) -> Result<Element> {
        let n = quotient_domain.size;
        for q in 0..n {
            for p in 0..n {
                if p == q {
                    continue;
                }
                if is_thin_semilattice_edge(
                    quotient_domain,
                    p as Element,
                    q as Element,
                    self.budget,
                )? {
                    return Ok(q as Element);
                }
            }
        }
        Err(Error::InternalInconsistency(
            "no thin semilattice edge in a non-semilattice-free quotient".into(),
        ))
    }
}

/// Solves a CSP instance with the full pipeline. Sat assignments are
/// verified against every original constraint before being returned.
pub fn solve_csp(instance: &Instance, budget: &Budget) -> Result<SolveOutcome> {
    let size_cap = instance
        .domains()
        .iter()
        .map(|d| d.size)
        .max()
        .unwrap_or(0)
        + 2;
    let engine = Engine::new(budget, size_cap);
    let verdict = match engine.solve_rec(instance, 0)? {
        Some(asn) => {
            if !instance.is_solution(&asn) {
                return Err(Error::InternalInconsistency(
                    "solver returned a non-solution".into(),
                ));
            }
            Verdict::Sat(asn)
        }
        None => Verdict::Unsat,
    };
    Ok(SolveOutcome {
        verdict,
        trace: engine.trace.into_inner(),
    })
}
