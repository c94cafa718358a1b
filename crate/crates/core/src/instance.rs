//! CSP instances and the instance-level transformations: restriction,
//! quotients, pinning, subdirect-irreducibility normalization, and the JSON
//! file format.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::algebra::{algebra_from_json, Element, FiniteAlgebra};
use crate::budget::Budget;
use crate::congruence::{con_lattice, meet_irreducible_decomposition, monolith, Congruence};
use crate::error::{Error, Result};
use crate::relation::TupleSet;

/// A constraint `⟨scope, relation⟩`. Scope variables are distinct; the
/// relation's components are the scope variables' domain algebras.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub scope: Vec<usize>,
    pub relation: TupleSet,
}

/// A CSP instance. Domains are materialized algebras (subalgebras or
/// quotients of the loaded ones); variables are dense indices with external
/// names kept for I/O.
#[derive(Debug, Clone)]
pub struct Instance {
    names: Vec<String>,
    domains: Vec<Arc<FiniteAlgebra>>,
    constraints: Vec<Constraint>,
}

impl Instance {
    pub fn new(
        names: Vec<String>,
        domains: Vec<Arc<FiniteAlgebra>>,
        constraints: Vec<Constraint>,
    ) -> Result<Self> {
        if names.len() != domains.len() {
            return Err(Error::InvalidInput("one domain per variable required".into()));
        }
        {
            let mut sorted = names.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != names.len() {
                return Err(Error::InvalidInput("variable names must be unique".into()));
            }
        }
        let inst = Instance {
            names,
            domains,
            constraints,
        };
        inst.validate()?;
        Ok(inst)
    }

    fn validate(&self) -> Result<()> {
        for c in &self.constraints {
            let mut seen = std::collections::HashSet::new();
            for &v in &c.scope {
                if v >= self.names.len() {
                    return Err(Error::InvalidInput(format!("scope variable {v} out of range")));
                }
                if !seen.insert(v) {
                    return Err(Error::InvalidInput(
                        "constraint scopes must not repeat variables".into(),
                    ));
                }
            }
            if c.relation.arity() != c.scope.len() {
                return Err(Error::InvalidInput(
                    "constraint relation arity must match scope length".into(),
                ));
            }
            for (i, &v) in c.scope.iter().enumerate() {
                if *c.relation.components()[i] != *self.domains[v] {
                    return Err(Error::InvalidInput(format!(
                        "constraint component {i} does not match the domain of variable {}",
                        self.names[v]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn domains(&self) -> &[Arc<FiniteAlgebra>] {
        &self.domains
    }

    pub fn domain(&self, v: usize) -> &Arc<FiniteAlgebra> {
        &self.domains[v]
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn push_constraint(&mut self, c: Constraint) -> Result<()> {
        self.constraints.push(c);
        self.validate()
    }

    /// True iff some constraint relation is empty (trivially unsatisfiable).
    pub fn has_empty_relation(&self) -> bool {
        self.constraints.iter().any(|c| c.relation.is_empty())
    }

    /// Checks a full assignment against every constraint.
    pub fn is_solution(&self, assignment: &[Element]) -> bool {
        if assignment.len() != self.num_vars() {
            return false;
        }
        for (v, &a) in assignment.iter().enumerate() {
            if a as usize >= self.domains[v].size {
                return false;
            }
        }
        self.constraints.iter().all(|c| {
            let t: Vec<Element> = c.scope.iter().map(|&v| assignment[v]).collect();
            c.relation.contains(&t)
        })
    }

    /// Adds the unary constraint `⟨(v), {value}⟩`.
    pub fn pinned(&self, v: usize, value: Element) -> Result<Instance> {
        let relation = TupleSet::from_tuples(vec![Arc::clone(&self.domains[v])], [vec![value]])?;
        let mut inst = self.clone();
        inst.constraints.push(Constraint {
            scope: vec![v],
            relation,
        });
        Ok(inst)
    }

    /// Restriction onto a variable subset `W` (paper notation `P_W`):
    /// constraints are projected onto `scope ∩ W`; projections with empty
    /// scope are dropped when their relation is nonempty and raise
    /// `EmptyRelationInProjection` otherwise.
    pub fn restrict_to(&self, w: &[usize]) -> Result<Instance> {
        let mut keep: Vec<usize> = w.to_vec();
        keep.sort_unstable();
        keep.dedup();
        for &v in &keep {
            if v >= self.num_vars() {
                return Err(Error::InvalidInput(format!("variable {v} out of range")));
            }
        }
        let mut old_to_new = vec![usize::MAX; self.num_vars()];
        for (i, &v) in keep.iter().enumerate() {
            old_to_new[v] = i;
        }
        let names = keep.iter().map(|&v| self.names[v].clone()).collect();
        let domains: Vec<_> = keep.iter().map(|&v| Arc::clone(&self.domains[v])).collect();
        let mut constraints = Vec::new();
        for c in &self.constraints {
            let positions: Vec<usize> = (0..c.scope.len())
                .filter(|&i| old_to_new[c.scope[i]] != usize::MAX)
                .collect();
            if positions.is_empty() {
                if c.relation.is_empty() {
                    return Err(Error::EmptyRelationInProjection);
                }
                continue;
            }
            let relation = c.relation.project(&positions)?;
            let scope: Vec<usize> = positions.iter().map(|&i| old_to_new[c.scope[i]]).collect();
            constraints.push(Constraint { scope, relation });
        }
        Instance::new(names, domains, constraints)
    }

    /// Quotient `P/ᾱ`: domains become quotient algebras, relations blockwise
    /// images. Returns the instance and the per-variable natural maps.
    pub fn quotient(&self, alphas: &[Congruence]) -> Result<(Instance, Vec<Vec<Element>>)> {
        if alphas.len() != self.num_vars() {
            return Err(Error::InvalidInput("one congruence per variable required".into()));
        }
        let mut new_domains = Vec::with_capacity(self.num_vars());
        let mut nats = Vec::with_capacity(self.num_vars());
        for (v, alpha) in alphas.iter().enumerate() {
            if alpha.algebra().size != self.domains[v].size {
                return Err(Error::InvalidInput(format!(
                    "congruence for variable {} has wrong universe",
                    self.names[v]
                )));
            }
            let (q, nat) = self.domains[v].quotient(alpha)?;
            new_domains.push(q);
            nats.push(nat);
        }
        let mut constraints = Vec::with_capacity(self.constraints.len());
        for c in &self.constraints {
            let comps: Vec<_> = c.scope.iter().map(|&v| Arc::clone(&new_domains[v])).collect();
            let tuples = c.relation.iter().map(|t| {
                t.iter()
                    .enumerate()
                    .map(|(i, &e)| nats[c.scope[i]][e as usize])
                    .collect::<Vec<_>>()
            });
            constraints.push(Constraint {
                scope: c.scope.clone(),
                relation: TupleSet::from_tuples(comps, tuples)?,
            });
        }
        let inst = Instance::new(self.names.clone(), new_domains, constraints)?;
        Ok((inst, nats))
    }

    /// Rebuilds every domain as the subalgebra on `allowed[v]`, re-encoding
    /// all constraints, and returns the per-variable translation
    /// `new element -> old element`. `allowed` sets must be nonempty and
    /// closed.
    pub fn rebuild_restricted(&self, allowed: &[Vec<Element>]) -> Result<(Instance, Vec<Vec<Element>>)> {
        let mut new_domains = Vec::with_capacity(self.num_vars());
        let mut embeds: Vec<Vec<Element>> = Vec::with_capacity(self.num_vars());
        let mut old_to_new: Vec<HashMap<Element, Element>> = Vec::with_capacity(self.num_vars());
        for (v, set) in allowed.iter().enumerate() {
            let (alg, embed) = self.domains[v].restrict(set)?;
            let inv: HashMap<Element, Element> = embed
                .iter()
                .enumerate()
                .map(|(i, &e)| (e, i as Element))
                .collect();
            new_domains.push(alg);
            embeds.push(embed);
            old_to_new.push(inv);
        }
        let mut constraints = Vec::with_capacity(self.constraints.len());
        for c in &self.constraints {
            let comps: Vec<_> = c.scope.iter().map(|&v| Arc::clone(&new_domains[v])).collect();
            let mut tuples = Vec::new();
            'tuple: for t in c.relation.iter() {
                let mut nt = Vec::with_capacity(t.len());
                for (i, &e) in t.iter().enumerate() {
                    match old_to_new[c.scope[i]].get(&e) {
                        Some(&ne) => nt.push(ne),
                        None => continue 'tuple,
                    }
                }
                tuples.push(nt);
            }
            constraints.push(Constraint {
                scope: c.scope.clone(),
                relation: TupleSet::from_tuples(comps, tuples)?,
            });
        }
        let inst = Instance::new(self.names.clone(), new_domains, constraints)?;
        Ok((inst, embeds))
    }
}

// ---------------------------------------------------------------------------
// Solution back-translation
// ---------------------------------------------------------------------------

/// Decoder for one subdirect-irreducibility split.
#[derive(Debug, Clone)]
pub struct SiSplit {
    /// old variable -> new variable indices carrying its quotient coordinates
    pub groups: Vec<Vec<usize>>,
    /// old variable -> map from quotient-coordinate tuples to the old element
    pub decode: Vec<HashMap<Vec<Element>, Element>>,
}

impl SiSplit {
    pub fn back(&self, new_assignment: &[Element]) -> Result<Vec<Element>> {
        let mut out = Vec::with_capacity(self.groups.len());
        for (v, group) in self.groups.iter().enumerate() {
            let key: Vec<Element> = group.iter().map(|&j| new_assignment[j]).collect();
            match self.decode[v].get(&key) {
                Some(&e) => out.push(e),
                None => {
                    return Err(Error::InternalInconsistency(format!(
                        "irreducibility split decode failed for variable {v}"
                    )))
                }
            }
        }
        Ok(out)
    }
}

/// One reversible step of a normalization pipeline.
#[derive(Debug, Clone)]
pub enum BackStep {
    /// Same variables; translate values through `map[var][new] = old`.
    Translate(Vec<Vec<Element>>),
    Split(SiSplit),
}

/// A chain of back-translation steps, applied last-to-first.
#[derive(Debug, Clone, Default)]
pub struct BackChain(pub Vec<BackStep>);

impl BackChain {
    pub fn push(&mut self, step: BackStep) {
        self.0.push(step);
    }

    pub fn append(&mut self, mut other: BackChain) {
        self.0.append(&mut other.0);
    }

    pub fn back(&self, assignment: &[Element]) -> Result<Vec<Element>> {
        let mut cur = assignment.to_vec();
        for step in self.0.iter().rev() {
            cur = match step {
                BackStep::Translate(map) => cur
                    .iter()
                    .enumerate()
                    .map(|(v, &e)| map[v][e as usize])
                    .collect(),
                BackStep::Split(split) => split.back(&cur)?,
            };
        }
        Ok(cur)
    }
}

// ---------------------------------------------------------------------------
// Subdirect irreducibility normalization
// ---------------------------------------------------------------------------

/// Replaces every variable whose domain is not subdirectly irreducible by one
/// variable per member of a meet-irreducible decomposition, re-encoding all
/// constraints losslessly. The result has all domains subdirectly
/// irreducible. Does not run 1-minimality; callers enforce it around this.
pub fn split_si(instance: &Instance) -> Result<(Instance, Option<SiSplit>)> {
    let mut needs_split = false;
    let mut decomps: Vec<Vec<Congruence>> = Vec::with_capacity(instance.num_vars());
    for dom in instance.domains() {
        let lattice = con_lattice(dom)?;
        let (is_si, _) = monolith(&lattice);
        if is_si {
            decomps.push(vec![Congruence::zero(dom)]);
        } else {
            let d = meet_irreducible_decomposition(&lattice)?;
            needs_split = true;
            decomps.push(d);
        }
    }
    if !needs_split {
        return Ok((instance.clone(), None));
    }

    let mut names = Vec::new();
    let mut domains = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::with_capacity(instance.num_vars());
    let mut nats: Vec<Vec<Vec<Element>>> = Vec::with_capacity(instance.num_vars());
    let mut decode: Vec<HashMap<Vec<Element>, Element>> = Vec::with_capacity(instance.num_vars());
    for (v, decomp) in decomps.iter().enumerate() {
        let single = decomp.len() == 1 && decomp[0].is_zero();
        let mut group = Vec::new();
        let mut vnats = Vec::new();
        for (i, theta) in decomp.iter().enumerate() {
            let (q, nat) = instance.domain(v).quotient(theta)?;
            let name = if single {
                instance.names()[v].clone()
            } else {
                format!("{}/{}", instance.names()[v], i)
            };
            group.push(domains.len());
            names.push(name);
            domains.push(q);
            vnats.push(nat);
        }
        let mut dec = HashMap::new();
        for e in instance.domain(v).elements() {
            let key: Vec<Element> = vnats.iter().map(|nat| nat[e as usize]).collect();
            dec.insert(key, e);
        }
        groups.push(group);
        nats.push(vnats);
        decode.push(dec);
    }

    let mut constraints = Vec::new();
    for c in instance.constraints() {
        let mut scope = Vec::new();
        for &v in &c.scope {
            scope.extend(groups[v].iter().copied());
        }
        let comps: Vec<_> = scope.iter().map(|&j| Arc::clone(&domains[j])).collect();
        let scope_len = scope.len();
        let tuples: Vec<Vec<Element>> = c
            .relation
            .iter()
            .map(|t| {
                let mut nt = Vec::with_capacity(scope_len);
                for (i, &e) in t.iter().enumerate() {
                    for nat in &nats[c.scope[i]] {
                        nt.push(nat[e as usize]);
                    }
                }
                nt
            })
            .collect();
        constraints.push(Constraint {
            scope,
            relation: TupleSet::from_tuples(comps, tuples)?,
        });
    }
    let inst = Instance::new(names, domains, constraints)?;
    Ok((inst, Some(SiSplit { groups, decode })))
}

/// Reduces the instance to an equivalent one in which every domain is
/// subdirectly irreducible and the instance is 1-minimal. Returns the
/// back-translation chain; solutions correspond bijectively.
pub fn normalize_si(instance: &Instance, budget: &Budget) -> Result<Option<(Instance, BackChain)>> {
    let mut chain = BackChain::default();
    let mut cur = instance.clone();
    loop {
        match crate::consistency::enforce_1_minimality(&cur)? {
            None => return Ok(None),
            Some((next, embed)) => {
                chain.push(BackStep::Translate(embed));
                cur = next;
            }
        }
        let (next, split) = split_si(&cur)?;
        match split {
            None => {
                let _ = budget;
                return Ok(Some((next, chain)));
            }
            Some(s) => {
                chain.push(BackStep::Split(s));
                cur = next;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// JSON file format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct DomainDto {
    algebra: String,
    allowed: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ConstraintDto {
    scope: Vec<String>,
    tuples: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct InstanceDto {
    algebras: Vec<serde_json::Value>,
    variables: Vec<String>,
    domains: BTreeMap<String, DomainDto>,
    constraints: Vec<ConstraintDto>,
}

/// Parses the instance file format. Allowed sets are materialized as
/// subalgebras immediately; they must be closed.
pub fn instance_from_json(text: &str) -> Result<Instance> {
    let dto: InstanceDto = serde_json::from_str(text)
        .map_err(|e| Error::InvalidInput(format!("bad instance JSON: {e}")))?;
    let mut algebras: HashMap<String, Arc<FiniteAlgebra>> = HashMap::new();
    for entry in &dto.algebras {
        let alg = algebra_from_json(&entry.to_string())?;
        algebras.insert(alg.id.clone(), alg);
    }
    let mut domains = Vec::new();
    for name in &dto.variables {
        let dom = dto
            .domains
            .get(name)
            .ok_or_else(|| Error::InvalidInput(format!("variable `{name}` has no domain")))?;
        let alg = algebras
            .get(&dom.algebra)
            .ok_or_else(|| Error::InvalidInput(format!("unknown algebra `{}`", dom.algebra)))?;
        if dom.allowed.is_empty() {
            return Err(Error::InvalidInput(format!(
                "variable `{name}` has an empty allowed set"
            )));
        }
        let allowed: Vec<Element> = dom.allowed.iter().map(|&e| e as Element).collect();
        let full = allowed.len() == alg.size && (0..alg.size).all(|i| allowed.contains(&(i as Element)));
        if full {
            domains.push(Arc::clone(alg));
        } else {
            let (sub, _) = alg.restrict(&allowed)?;
            domains.push(sub);
        }
    }
    let var_index: HashMap<&str, usize> = dto
        .variables
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut constraints = Vec::new();
    for c in &dto.constraints {
        let mut scope = Vec::new();
        for nm in &c.scope {
            let &v = var_index
                .get(nm.as_str())
                .ok_or_else(|| Error::InvalidInput(format!("unknown variable `{nm}` in scope")))?;
            scope.push(v);
        }
        let comps: Vec<_> = scope.iter().map(|&v| Arc::clone(&domains[v])).collect();
        let tuples: Vec<Vec<Element>> = c
            .tuples
            .iter()
            .map(|t| t.iter().map(|&e| e as Element).collect())
            .collect();
        constraints.push(Constraint {
            scope,
            relation: TupleSet::from_tuples(comps, tuples)?,
        });
    }
    Instance::new(dto.variables, domains, constraints)
}

/// Serializes an instance. Domain algebras are emitted inline with full
/// allowed sets (domains are materialized algebras).
pub fn instance_to_json(instance: &Instance) -> String {
    let mut by_id: BTreeMap<String, &Arc<FiniteAlgebra>> = BTreeMap::new();
    for dom in instance.domains() {
        by_id.entry(dom.id.clone()).or_insert(dom);
    }
    let algebras: Vec<serde_json::Value> = by_id
        .values()
        .map(|a| serde_json::from_str(&crate::algebra::algebra_to_json(a)).unwrap())
        .collect();
    let mut domains = BTreeMap::new();
    for (v, name) in instance.names().iter().enumerate() {
        let alg = instance.domain(v);
        domains.insert(
            name.clone(),
            DomainDto {
                algebra: alg.id.clone(),
                allowed: (0..alg.size).collect(),
            },
        );
    }
    let constraints = instance
        .constraints()
        .iter()
        .map(|c| ConstraintDto {
            scope: c.scope.iter().map(|&v| instance.names()[v].clone()).collect(),
            tuples: c
                .relation
                .sorted_tuples()
                .into_iter()
                .map(|t| t.into_iter().map(|e| e as usize).collect())
                .collect(),
        })
        .collect();
    let dto = InstanceDto {
        algebras,
        variables: instance.names().to_vec(),
        domains,
        constraints,
    };
    serde_json::to_string_pretty(&dto).expect("instance serialization cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit;

    fn eq_constraint(domains: &[Arc<FiniteAlgebra>], u: usize, v: usize) -> Constraint {
        let alg = &domains[u];
        let tuples: Vec<Vec<Element>> = alg.elements().map(|e| vec![e, e]).collect();
        Constraint {
            scope: vec![u, v],
            relation: TupleSet::from_tuples(vec![Arc::clone(alg), Arc::clone(&domains[v])], tuples)
                .unwrap(),
        }
    }

    fn z3_chain(n: usize) -> Instance {
        let z3 = testkit::z3aff();
        let domains: Vec<_> = (0..n).map(|_| Arc::clone(&z3)).collect();
        let names = (0..n).map(|i| format!("x{i}")).collect();
        let constraints = (0..n - 1).map(|i| eq_constraint(&domains, i, i + 1)).collect();
        Instance::new(names, domains, constraints).unwrap()
    }

    #[test]
    fn restrict_projects_constraints() {
        let inst = z3_chain(3);
        let r = inst.restrict_to(&[0, 1]).unwrap();
        assert_eq!(r.num_vars(), 2);
        assert_eq!(r.constraints().len(), 2);
        // the (1,2)-equality became a unary full constraint on new var 1
        assert_eq!(r.constraints()[1].scope, vec![1]);
        assert_eq!(r.constraints()[1].relation.len(), 3);
        // restriction to everything is a no-op up to projections
        let all = inst.restrict_to(&[0, 1, 2]).unwrap();
        assert_eq!(all.constraints().len(), 2);
        // empty W drops satisfiable constraints entirely
        let none = inst.restrict_to(&[]).unwrap();
        assert_eq!(none.num_vars(), 0);
        assert_eq!(none.constraints().len(), 0);
    }

    #[test]
    fn restrict_flags_empty_relation() {
        let z3 = testkit::z3aff();
        let empty = Constraint {
            scope: vec![0],
            relation: TupleSet::from_tuples(vec![Arc::clone(&z3)], Vec::<Vec<Element>>::new())
                .unwrap(),
        };
        let inst = Instance::new(vec!["x".into()], vec![z3], vec![empty]).unwrap();
        assert!(matches!(
            inst.restrict_to(&[]),
            Err(Error::EmptyRelationInProjection)
        ));
    }

    #[test]
    fn quotient_by_one_collapses() {
        let inst = z3_chain(2);
        let ones: Vec<Congruence> = inst.domains().iter().map(Congruence::one).collect();
        let (q, nats) = inst.quotient(&ones).unwrap();
        assert!(q.domains().iter().all(|d| d.size == 1));
        assert_eq!(nats[0], vec![0, 0, 0]);
        assert!(q.is_solution(&[0, 0]));
    }

    #[test]
    fn quotient_maps_solutions() {
        // solutions of P map to solutions of P/alpha
        let inst = z3_chain(3);
        let alphas: Vec<Congruence> = inst.domains().iter().map(Congruence::one).collect();
        let (q, nats) = inst.quotient(&alphas).unwrap();
        for sol in [[0u8, 0, 0], [1, 1, 1], [2, 2, 2]] {
            assert!(inst.is_solution(&sol));
            let image: Vec<Element> = sol
                .iter()
                .enumerate()
                .map(|(v, &e)| nats[v][e as usize])
                .collect();
            assert!(q.is_solution(&image));
        }
    }

    #[test]
    fn si_split_product_domain() {
        let p = testkit::z3sq();
        let names = vec!["x".into(), "y".into()];
        let domains = vec![Arc::clone(&p), Arc::clone(&p)];
        let constraints = vec![eq_constraint(&domains, 0, 1)];
        let inst = Instance::new(names, domains, constraints).unwrap();
        let (split, si) = split_si(&inst).unwrap();
        let si = si.unwrap();
        assert_eq!(split.num_vars(), 4);
        assert!(split.domains().iter().all(|d| d.size == 3));
        // solutions are in bijection through the decoder
        for t in split.constraints()[0].relation.iter() {
            // the constraint spans all four variables here
            let asn = t;
            let back = si.back(&asn).unwrap();
            assert!(inst.is_solution(&back));
        }
    }

    #[test]
    fn si_split_keeps_si_domains() {
        let inst = z3_chain(2);
        let (same, si) = split_si(&inst).unwrap();
        assert!(si.is_none());
        assert_eq!(same.num_vars(), 2);
    }

    #[test]
    fn json_round_trip() {
        let inst = z3_chain(3);
        let text = instance_to_json(&inst);
        let back = instance_from_json(&text).unwrap();
        assert_eq!(back.num_vars(), 3);
        assert_eq!(back.constraints().len(), 2);
        assert_eq!(instance_to_json(&back), text);
    }
}
