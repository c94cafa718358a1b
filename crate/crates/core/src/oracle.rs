//! Ground-truth brute-force solving, seeded random instance generation, the
//! known-language corpus, and the differential harness.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::algebra::{Element, FiniteAlgebra};
use crate::budget::Budget;
use crate::error::{Error, Result};
use crate::instance::{Constraint, Instance};
use crate::relation::{sg_generate, TupleSet};
use crate::solver::{solve_csp, Verdict};
use crate::testkit;

/// Search-space cap for the brute-force solver.
pub const DEFAULT_SEARCH_BUDGET: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BruteOutcome {
    Unsat,
    Sat(Vec<Element>),
    Solutions(Vec<Vec<Element>>),
}

impl BruteOutcome {
    pub fn is_sat(&self) -> bool {
        match self {
            BruteOutcome::Unsat => false,
            BruteOutcome::Sat(_) => true,
            BruteOutcome::Solutions(s) => !s.is_empty(),
        }
    }
}

/// Exact backtracking search with forward checking. Deterministic: variables
/// in index order, values ascending. With `enumerate_all`, returns the full
/// solution set.
pub fn brute_force_solve(instance: &Instance, enumerate_all: bool) -> Result<BruteOutcome> {
    brute_force_solve_with_budget(instance, enumerate_all, DEFAULT_SEARCH_BUDGET)
}

pub fn brute_force_solve_with_budget(
    instance: &Instance,
    enumerate_all: bool,
    max_space: usize,
) -> Result<BruteOutcome> {
    let n = instance.num_vars();
    let mut space: usize = 1;
    for d in instance.domains() {
        space = space.saturating_mul(d.size);
        if space > max_space {
            return Err(Error::BudgetExceeded { budget: max_space });
        }
    }
    if instance.has_empty_relation() {
        return Ok(if enumerate_all {
            BruteOutcome::Solutions(vec![])
        } else {
            BruteOutcome::Unsat
        });
    }
    // live tuples per constraint, filtered as variables get assigned
    let mut live: Vec<Vec<Vec<Element>>> = instance
        .constraints()
        .iter()
        .map(|c| c.relation.iter().collect())
        .collect();
    let mut domains: Vec<Vec<Element>> = instance
        .domains()
        .iter()
        .map(|d| d.elements().collect())
        .collect();
    let mut assignment: Vec<Option<Element>> = vec![None; n];
    let mut solutions = Vec::new();

    fn propagate(
        instance: &Instance,
        live: &[Vec<Vec<Element>>],
        domains: &[Vec<Element>],
        v: usize,
        value: Element,
    ) -> Option<(Vec<Vec<Vec<Element>>>, Vec<Vec<Element>>)> {
        let mut new_live = Vec::with_capacity(live.len());
        let mut new_domains: Vec<Vec<Element>> = domains.to_vec();
        new_domains[v] = vec![value];
        for (c, tuples) in instance.constraints().iter().zip(live) {
            if let Some(pos) = c.scope.iter().position(|&u| u == v) {
                let kept: Vec<Vec<Element>> =
                    tuples.iter().filter(|t| t[pos] == value).cloned().collect();
                if kept.is_empty() {
                    return None;
                }
                // forward check: prune unassigned scope domains to projections
                for (i, &u) in c.scope.iter().enumerate() {
                    let proj: Vec<Element> = new_domains[u]
                        .iter()
                        .copied()
                        .filter(|&e| kept.iter().any(|t| t[i] == e))
                        .collect();
                    if proj.is_empty() {
                        return None;
                    }
                    new_domains[u] = proj;
                }
                new_live.push(kept);
            } else {
                new_live.push(tuples.clone());
            }
        }
        Some((new_live, new_domains))
    }

    fn search(
        instance: &Instance,
        live: &[Vec<Vec<Element>>],
        domains: &[Vec<Element>],
        assignment: &mut Vec<Option<Element>>,
        v: usize,
        enumerate_all: bool,
        solutions: &mut Vec<Vec<Element>>,
    ) -> bool {
        let n = instance.num_vars();
        if v == n {
            let asn: Vec<Element> = assignment.iter().map(|a| a.unwrap()).collect();
            if instance.is_solution(&asn) {
                solutions.push(asn);
                return !enumerate_all;
            }
            return false;
        }
        for &value in &domains[v] {
            if let Some((nl, nd)) = propagate(instance, live, domains, v, value) {
                assignment[v] = Some(value);
                if search(instance, &nl, &nd, assignment, v + 1, enumerate_all, solutions) {
                    return true;
                }
                assignment[v] = None;
            }
        }
        false
    }

    search(
        instance,
        &live,
        &domains,
        &mut assignment,
        0,
        enumerate_all,
        &mut solutions,
    );
    let _ = &mut live;
    if enumerate_all {
        Ok(BruteOutcome::Solutions(solutions))
    } else {
        match solutions.into_iter().next() {
            Some(s) => Ok(BruteOutcome::Sat(s)),
            None => Ok(BruteOutcome::Unsat),
        }
    }
}

/// Parameters for random instance generation.
#[derive(Debug, Clone, Copy)]
pub struct GenParams {
    pub n_vars: usize,
    pub n_constraints: usize,
    pub max_arity: usize,
}

/// Generates a random instance over `alg`: random scopes, relations are
/// random subpowers (closures of 1..=3 random tuples), so every relation is
/// invariant. Identical seeds give identical instances.
pub fn gen_random_instance(
    alg: &Arc<FiniteAlgebra>,
    params: GenParams,
    seed: u64,
    budget: &Budget,
) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.n_vars.max(1);
    let names = (0..n).map(|i| format!("x{i}")).collect();
    let domains: Vec<_> = (0..n).map(|_| Arc::clone(alg)).collect();
    let mut constraints = Vec::new();
    for _ in 0..params.n_constraints {
        let arity = rng.gen_range(1..=params.max_arity.min(n).max(1));
        // sample a scope of distinct variables
        let mut pool: Vec<usize> = (0..n).collect();
        let mut scope = Vec::with_capacity(arity);
        for _ in 0..arity {
            let i = rng.gen_range(0..pool.len());
            scope.push(pool.swap_remove(i));
        }
        let n_gens = rng.gen_range(1..=3);
        let gens: Vec<Vec<Element>> = (0..n_gens)
            .map(|_| {
                (0..arity)
                    .map(|_| rng.gen_range(0..alg.size) as Element)
                    .collect()
            })
            .collect();
        let comps: Vec<_> = scope.iter().map(|&v| Arc::clone(&domains[v])).collect();
        let relation = sg_generate(comps, &gens, budget)?;
        constraints.push(Constraint { scope, relation });
    }
    Instance::new(names, domains, constraints)
}

// ---------------------------------------------------------------------------
// Corpus
// ---------------------------------------------------------------------------

/// A named constraint language: an algebra, its expected classification per
/// the classical results, and a few invariant relations for instance
/// building.
pub struct CorpusEntry {
    pub name: &'static str,
    pub algebra: Arc<FiniteAlgebra>,
    /// expected dichotomy side (`true` = tractable), when classically known
    pub tractable: Option<bool>,
    pub relations: Vec<(String, TupleSet)>,
}

fn binary(alg: &Arc<FiniteAlgebra>, pred: impl Fn(Element, Element) -> bool) -> TupleSet {
    let tuples: Vec<Vec<Element>> = alg
        .elements()
        .flat_map(|a| {
            alg.elements()
                .filter(|&b| pred(a, b))
                .map(move |b| vec![a, b])
                .collect::<Vec<_>>()
        })
        .collect();
    TupleSet::from_tuples(vec![Arc::clone(alg), Arc::clone(alg)], tuples).unwrap()
}

/// The standard corpus used by the differential and acceptance suites.
pub fn corpus() -> Vec<CorpusEntry> {
    let a2semi = testkit::a2semi();
    let a2or = testkit::a2or();
    let a2maj = testkit::a2maj();
    let a2aff = testkit::a2aff();
    let a2proj = testkit::a2proj();
    let z3aff = testkit::z3aff();
    let s2s2 = testkit::s2s2();
    let p4 = testkit::p4semiaff();
    let m4 = testkit::m4mix();
    vec![
        CorpusEntry {
            name: "a2semi",
            relations: vec![
                ("eq".into(), binary(&a2semi, |a, b| a == b)),
                ("leq".into(), binary(&a2semi, |a, b| a <= b)),
            ],
            algebra: a2semi,
            tractable: Some(true),
        },
        CorpusEntry {
            name: "a2or",
            relations: vec![("eq".into(), binary(&a2or, |a, b| a == b))],
            algebra: a2or,
            tractable: Some(true),
        },
        CorpusEntry {
            name: "a2maj",
            relations: vec![
                ("eq".into(), binary(&a2maj, |a, b| a == b)),
                // two-coloring language
                ("neq".into(), binary(&a2maj, |a, b| a != b)),
            ],
            algebra: a2maj,
            tractable: Some(true),
        },
        CorpusEntry {
            name: "a2aff",
            relations: vec![
                ("eq".into(), binary(&a2aff, |a, b| a == b)),
                ("neq".into(), binary(&a2aff, |a, b| a != b)),
            ],
            algebra: a2aff,
            tractable: Some(true),
        },
        CorpusEntry {
            name: "a2proj",
            relations: vec![("eq".into(), binary(&a2proj, |a, b| a == b))],
            algebra: a2proj,
            tractable: Some(false),
        },
        CorpusEntry {
            name: "z3aff",
            relations: vec![
                ("eq".into(), binary(&z3aff, |a, b| a == b)),
                ("shift1".into(), binary(&z3aff, |a, b| (a + 1) % 3 == b)),
            ],
            algebra: z3aff,
            tractable: Some(true),
        },
        CorpusEntry {
            name: "s2s2",
            relations: vec![("eq".into(), binary(&s2s2, |a, b| a == b))],
            algebra: s2s2,
            tractable: Some(true),
        },
        CorpusEntry {
            name: "p4semiaff",
            relations: vec![("eq".into(), binary(&p4, |a, b| a == b))],
            algebra: p4,
            tractable: Some(true),
        },
        CorpusEntry {
            name: "m4mix",
            relations: vec![("eq".into(), binary(&m4, |a, b| a == b))],
            algebra: m4,
            tractable: Some(true),
        },
    ]
}

pub fn corpus_entry(name: &str) -> Option<CorpusEntry> {
    corpus().into_iter().find(|e| e.name == name)
}

// ---------------------------------------------------------------------------
// Differential harness
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct Disagreement {
    pub algebra: String,
    pub seed: u64,
    pub solver: String,
    pub oracle: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AlgebraReport {
    pub algebra: String,
    pub instances: usize,
    pub sat: usize,
    pub unsat: usize,
    pub solver_ms_p50: u128,
    pub solver_ms_max: u128,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct DiffReport {
    pub total: usize,
    pub disagreements: Vec<Disagreement>,
    pub per_algebra: Vec<AlgebraReport>,
}

/// Runs the pipeline solver against the brute-force oracle on a seeded random
/// corpus. Any disagreement is a hard failure for the caller (nonzero exit).
pub fn differential_run(
    algebras: &[(String, Arc<FiniteAlgebra>)],
    count: usize,
    seed: u64,
    budget: &Budget,
) -> Result<DiffReport> {
    let mut report = DiffReport::default();
    for (name, alg) in algebras {
        let mut times: Vec<u128> = Vec::with_capacity(count);
        let (mut sat, mut unsat) = (0usize, 0usize);
        for i in 0..count {
            let inst_seed = seed
                .wrapping_mul(0x9e3779b97f4a7c15)
                .wrapping_add(i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(inst_seed);
            let params = GenParams {
                n_vars: rng.gen_range(3..=8),
                n_constraints: rng.gen_range(2..=6),
                max_arity: 3,
            };
            let instance = gen_random_instance(alg, params, inst_seed, budget)?;
            let started = Instant::now();
            let outcome = solve_csp(&instance, budget)?;
            times.push(started.elapsed().as_millis());
            let oracle = brute_force_solve(&instance, false)?;
            let solver_sat = matches!(outcome.verdict, Verdict::Sat(_));
            if solver_sat {
                sat += 1;
            } else {
                unsat += 1;
            }
            if solver_sat != oracle.is_sat() {
                report.disagreements.push(Disagreement {
                    algebra: name.clone(),
                    seed: inst_seed,
                    solver: if solver_sat { "sat" } else { "unsat" }.into(),
                    oracle: if oracle.is_sat() { "sat" } else { "unsat" }.into(),
                });
            }
            report.total += 1;
        }
        times.sort_unstable();
        report.per_algebra.push(AlgebraReport {
            algebra: name.clone(),
            instances: count,
            sat,
            unsat,
            solver_ms_p50: times.get(count / 2).copied().unwrap_or(0),
            solver_ms_max: times.last().copied().unwrap_or(0),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coloring(edges: &[(usize, usize)], n: usize) -> Instance {
        let entry = corpus_entry("a2maj").unwrap();
        let neq = entry
            .relations
            .iter()
            .find(|(n, _)| n == "neq")
            .unwrap()
            .1
            .clone();
        let domains: Vec<_> = (0..n).map(|_| Arc::clone(&entry.algebra)).collect();
        let names = (0..n).map(|i| format!("v{i}")).collect();
        let constraints = edges
            .iter()
            .map(|&(u, v)| Constraint {
                scope: vec![u, v],
                relation: neq.clone(),
            })
            .collect();
        Instance::new(names, domains, constraints).unwrap()
    }

    #[test]
    fn triangle_unsat_path_two_solutions() {
        let tri = coloring(&[(0, 1), (1, 2), (0, 2)], 3);
        assert_eq!(brute_force_solve(&tri, false).unwrap(), BruteOutcome::Unsat);
        let path = coloring(&[(0, 1), (1, 2)], 3);
        match brute_force_solve(&path, true).unwrap() {
            BruteOutcome::Solutions(s) => assert_eq!(s.len(), 2),
            _ => panic!(),
        }
    }

    #[test]
    fn empty_instance_is_sat() {
        let a2 = testkit::a2semi();
        let inst = Instance::new(vec!["x".into()], vec![a2], vec![]).unwrap();
        assert!(brute_force_solve(&inst, false).unwrap().is_sat());
    }

    #[test]
    fn generation_is_deterministic_and_closed() {
        let z3 = testkit::z3aff();
        let params = GenParams {
            n_vars: 5,
            n_constraints: 4,
            max_arity: 3,
        };
        let a = gen_random_instance(&z3, params, 42, &Budget::default()).unwrap();
        let b = gen_random_instance(&z3, params, 42, &Budget::default()).unwrap();
        assert_eq!(
            crate::instance::instance_to_json(&a),
            crate::instance::instance_to_json(&b)
        );
        for c in a.constraints() {
            assert!(c.relation.is_closed());
        }
    }

    #[test]
    fn corpus_relations_are_invariant() {
        for entry in corpus() {
            for (name, rel) in &entry.relations {
                assert!(
                    rel.is_closed(),
                    "{}.{name} is not invariant under the operations",
                    entry.name
                );
            }
        }
    }
}
