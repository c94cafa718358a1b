//! Process-wide memoized per-algebra analysis: congruence lattice, monolith,
//! semilattice edges, dot operation and quasi-centralizers. Domain algebras
//! recur constantly across instances and pipeline stages, so everything
//! derived from an algebra alone is computed once per structural identity.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::algebra::{Element, FiniteAlgebra};
use crate::budget::Budget;
use crate::congruence::{con_lattice, monolith, Congruence, CongruenceLattice};
use crate::error::{Error, Result};
use crate::terms::{find_dot_operation, scan_semilattice_edges, EdgeCert, TermWitness};

pub struct AlgebraAnalysis {
    pub algebra: Arc<FiniteAlgebra>,
    pub lattice: CongruenceLattice,
    pub is_si: bool,
    pub monolith: Option<Congruence>,
    pub edges: Vec<EdgeCert>,
    pub semilattice_free: bool,
    dot: OnceLock<std::result::Result<TermWitness, Error>>,
    zeta: Mutex<HashMap<(Vec<Element>, Vec<Element>), Congruence>>,
}

impl AlgebraAnalysis {
    /// The dot operation, computed on first use.
    pub fn dot(&self, budget: &Budget) -> Result<TermWitness> {
        self.dot
            .get_or_init(|| find_dot_operation(&self.algebra, &self.edges, budget))
            .clone()
    }

    /// Memoized quasi-centralizer `ζ(α, β)`.
    pub fn zeta(&self, alpha: &Congruence, beta: &Congruence, budget: &Budget) -> Result<Congruence> {
        let key = (
            alpha.rep_vector().to_vec(),
            beta.rep_vector().to_vec(),
        );
        if let Some(z) = self.zeta.lock().unwrap().get(&key) {
            return Ok(z.clone());
        }
        let z = crate::separation::quasi_centralizer(&self.algebra, alpha, beta, budget)?;
        self.zeta.lock().unwrap().insert(key, z.clone());
        Ok(z)
    }

    /// `ζ(0, μ)` is the full relation (only defined for SI algebras).
    pub fn has_central_monolith(&self, budget: &Budget) -> Result<bool> {
        match &self.monolith {
            None => Ok(false),
            Some(mu) => {
                let z = self.zeta(&Congruence::zero(&self.algebra), mu, budget)?;
                Ok(z.is_one())
            }
        }
    }
}

type Key = (usize, Vec<(String, usize, Vec<Element>)>);

fn key_of(alg: &FiniteAlgebra) -> Key {
    (
        alg.size,
        alg.operations
            .iter()
            .map(|o| (o.name.clone(), o.arity, o.table.clone()))
            .collect(),
    )
}

fn cache() -> &'static Mutex<HashMap<Key, Arc<AlgebraAnalysis>>> {
    static CACHE: OnceLock<Mutex<HashMap<Key, Arc<AlgebraAnalysis>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Analyzes an algebra, memoized process-wide by structural identity
/// (operation names, arities and tables; the id is ignored).
pub fn analyze(alg: &Arc<FiniteAlgebra>, budget: &Budget) -> Result<Arc<AlgebraAnalysis>> {
    let key = key_of(alg);
    if let Some(a) = cache().lock().unwrap().get(&key) {
        return Ok(Arc::clone(a));
    }
    let lattice = con_lattice(alg)?;
    let (is_si, mono) = monolith(&lattice);
    let (edges, semilattice_free) = scan_semilattice_edges(alg, budget)?;
    let analysis = Arc::new(AlgebraAnalysis {
        algebra: Arc::clone(alg),
        lattice,
        is_si,
        monolith: mono,
        edges,
        semilattice_free,
        dot: OnceLock::new(),
        zeta: Mutex::new(HashMap::new()),
    });
    cache()
        .lock()
        .unwrap()
        .insert(key, Arc::clone(&analysis));
    Ok(analysis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit;

    #[test]
    fn analysis_is_cached_structurally() {
        let b = Budget::default();
        let a1 = analyze(&testkit::a2semi(), &b).unwrap();
        // structurally identical algebra under a different id hits the cache
        let alg2 = crate::algebra::FiniteAlgebra::new(
            "renamed",
            2,
            vec![crate::algebra::OperationTable::from_fn("meet", 2, 2, |a| {
                a[0] & a[1]
            })],
        )
        .unwrap();
        let a2 = analyze(&alg2, &b).unwrap();
        assert!(Arc::ptr_eq(&a1, &a2));
        assert!(!a1.semilattice_free);
        assert!(a1.is_si);
    }

    #[test]
    fn central_monolith_flags() {
        let b = Budget::default();
        assert!(!analyze(&testkit::a2semi(), &b)
            .unwrap()
            .has_central_monolith(&b)
            .unwrap());
        assert!(analyze(&testkit::z3aff(), &b)
            .unwrap()
            .has_central_monolith(&b)
            .unwrap());
        assert!(analyze(&testkit::m4mix(), &b)
            .unwrap()
            .has_central_monolith(&b)
            .unwrap());
    }
}
