//! Prefiltered groups, Host-Kra cube groups, and polynomial-map checks.
//!
//! A prefiltration is a nested chain of subgroups G_0 >= G_1 >= ... that
//! eventually hits the trivial group; a filtration additionally has
//! G_0 = G_1. The degree-k Host-Kra group HK^k is generated inside
//! G^{2^k} by cubes that place an element of G_{|omega_0|} on the upper
//! set of a corner omega_0. A map into a prefiltered target is polynomial
//! when its iterated difference of order k always lands in the target's
//! level-k subgroup.

use std::collections::HashMap;

use num::Zero;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::budget::Budget;
use crate::group::{GroupElement, GroupSpec};
use crate::lift::subgroup_generators;
use crate::torus::TorusValue;
use crate::{Error, Result};

/// Nested subgroup chain on a finite group model.
#[derive(Debug, Clone)]
pub struct Prefiltration {
    group: GroupSpec,
    /// Sorted element indices of each level; levels beyond the chain are
    /// trivial.
    chain: Vec<Vec<usize>>,
    degree: usize,
}

impl Prefiltration {
    pub fn new(group: GroupSpec, levels: Vec<Vec<GroupElement>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Precondition("a prefiltration needs a level 0".into()));
        }
        let mut chain = Vec::with_capacity(levels.len());
        for (i, elems) in levels.iter().enumerate() {
            let mut idx: Vec<usize> = elems.iter().map(|e| group.index_of(e)).collect();
            idx.sort_unstable();
            idx.dedup();
            // Subgroup check: contains 0, closed under addition (negation
            // follows in a finite group).
            let zero = group.index_of(&group.zero());
            if idx.binary_search(&zero).is_err() {
                return Err(Error::Precondition(format!(
                    "level {i} does not contain the identity"
                )));
            }
            for &a in &idx {
                for &b in &idx {
                    let s = group.add(&group.element_at(a), &group.element_at(b));
                    if idx.binary_search(&group.index_of(&s)).is_err() {
                        return Err(Error::Precondition(format!(
                            "level {i} is not closed under addition"
                        )));
                    }
                }
            }
            chain.push(idx);
        }
        for i in 1..chain.len() {
            if !chain[i].iter().all(|x| chain[i - 1].binary_search(x).is_ok()) {
                return Err(Error::Precondition(format!(
                    "level {i} is not contained in level {}",
                    i - 1
                )));
            }
        }
        let degree = chain
            .iter()
            .rposition(|level| level.len() > 1)
            .unwrap_or(0);
        Ok(Prefiltration { group, chain, degree })
    }

    /// G_0 = G_1 = G, trivial beyond.
    pub fn abelian(group: GroupSpec) -> Self {
        let all: Vec<GroupElement> = group.iter_elements().collect();
        Prefiltration::new(group, vec![all.clone(), all]).expect("whole group is a subgroup")
    }

    pub fn group(&self) -> &GroupSpec {
        &self.group
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn is_filtration(&self) -> bool {
        match self.chain.len() {
            0 => false,
            1 => self.chain[0].len() == 1,
            _ => self.chain[0] == self.chain[1],
        }
    }

    fn is_abelian_filtration(&self) -> bool {
        self.is_filtration()
            && self.degree <= 1
            && self.chain[0].len() as u128 == self.group.cardinality()
    }

    pub fn level_elements(&self, i: usize) -> Vec<GroupElement> {
        match self.chain.get(i) {
            Some(idx) => idx.iter().map(|&x| self.group.element_at(x)).collect(),
            None => vec![self.group.zero()],
        }
    }

    pub fn contains(&self, level: usize, e: &GroupElement) -> bool {
        match self.chain.get(level) {
            Some(idx) => idx.binary_search(&self.group.index_of(e)).is_ok(),
            None => *e == self.group.zero(),
        }
    }

    pub fn level_generators(&self, i: usize) -> Vec<GroupElement> {
        subgroup_generators(&self.group, &self.level_elements(i))
    }
}

/// Element of G^{2^k}; entry omega is indexed by its bitmask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CubePoint {
    pub dimension: usize,
    pub entries: Vec<GroupElement>,
}

impl CubePoint {
    pub fn new(dimension: usize, entries: Vec<GroupElement>) -> Result<Self> {
        if entries.len() != 1 << dimension {
            return Err(Error::DimensionMismatch {
                expected: 1 << dimension,
                got: entries.len(),
            });
        }
        Ok(CubePoint { dimension, entries })
    }

    pub fn constant(dimension: usize, e: GroupElement) -> Self {
        CubePoint {
            dimension,
            entries: vec![e; 1 << dimension],
        }
    }

    fn key(&self, g: &GroupSpec) -> Vec<usize> {
        self.entries.iter().map(|e| g.index_of(e)).collect()
    }

    pub fn mul(&self, other: &CubePoint, g: &GroupSpec) -> Result<CubePoint> {
        if self.dimension != other.dimension {
            return Err(Error::DimensionMismatch {
                expected: 1 << self.dimension,
                got: 1 << other.dimension,
            });
        }
        Ok(CubePoint {
            dimension: self.dimension,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| g.add(a, b))
                .collect(),
        })
    }

    pub fn inv(&self, g: &GroupSpec) -> CubePoint {
        CubePoint {
            dimension: self.dimension,
            entries: self.entries.iter().map(|e| g.neg(e)).collect(),
        }
    }
}

/// Maximum cube dimension for generator and closure work.
pub const MAX_CUBE_DIMENSION: usize = 4;

/// Generators of HK^k: for each corner omega_0 and each generator of the
/// level-|omega_0| subgroup, the cube carrying that generator on the upper
/// set of omega_0 and the identity elsewhere.
pub fn hk_generators(filt: &Prefiltration, k: usize) -> Result<Vec<CubePoint>> {
    if k > MAX_CUBE_DIMENSION {
        return Err(Error::Precondition(format!(
            "cube dimension {k} exceeds supported maximum {MAX_CUBE_DIMENSION}"
        )));
    }
    let g = filt.group();
    let zero = g.zero();
    let mut out = Vec::new();
    for omega0 in 0..(1usize << k) {
        let level = omega0.count_ones() as usize;
        for gen in filt.level_generators(level) {
            let entries = (0..(1usize << k))
                .map(|omega| {
                    if omega & omega0 == omega0 {
                        gen.clone()
                    } else {
                        zero.clone()
                    }
                })
                .collect();
            out.push(CubePoint {
                dimension: k,
                entries,
            });
        }
    }
    Ok(out)
}

/// Deterministic breadth-first closure of the generated subgroup.
pub fn hk_closure(
    gens: &[CubePoint],
    dimension: usize,
    g: &GroupSpec,
    budget: &Budget,
) -> Result<Vec<CubePoint>> {
    for c in gens {
        if c.dimension != dimension {
            return Err(Error::DimensionMismatch {
                expected: 1 << dimension,
                got: 1 << c.dimension,
            });
        }
    }
    let identity = CubePoint::constant(dimension, g.zero());
    let mut seen: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut out = vec![identity.clone()];
    seen.insert(identity.key(g), 0);
    let mut frontier = vec![identity];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for cube in &frontier {
            for gen in gens {
                let prod = cube.mul(gen, g)?;
                let key = prod.key(g);
                if !seen.contains_key(&key) {
                    budget.check_enumeration(out.len() as u128 + 1)?;
                    seen.insert(key, out.len());
                    out.push(prod.clone());
                    next.push(prod);
                }
            }
        }
        frontier = next;
    }
    Ok(out)
}

/// All parallelepipeds (x + omega . h)_omega; these are exactly the
/// degree-k cubes of the abelian filtration.
pub fn parallelepipeds(g: &GroupSpec, k: usize, budget: &Budget) -> Result<Vec<CubePoint>> {
    let n = g.cardinality();
    budget.check_enumeration(n.pow(k as u32 + 1))?;
    let mut out = Vec::new();
    let elems: Vec<GroupElement> = g.iter_elements().collect();
    let mut idx = vec![0usize; k + 1];
    loop {
        let x = &elems[idx[0]];
        let entries = (0..(1usize << k))
            .map(|omega| {
                let mut e = x.clone();
                for (i, h_idx) in idx[1..].iter().enumerate() {
                    if omega & (1 << i) != 0 {
                        e = g.add(&e, &elems[*h_idx]);
                    }
                }
                e
            })
            .collect();
        out.push(CubePoint {
            dimension: k,
            entries,
        });
        let mut pos = 0;
        while pos <= k {
            idx[pos] += 1;
            if idx[pos] < elems.len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
        if pos > k {
            break;
        }
    }
    Ok(out)
}

/// HK^k of a prefiltration: generators, closure, and for the abelian
/// filtration an assertion that the result is the parallelepiped set.
pub fn hk_group(filt: &Prefiltration, k: usize, budget: &Budget) -> Result<Vec<CubePoint>> {
    let gens = hk_generators(filt, k)?;
    let closure = hk_closure(&gens, k, filt.group(), budget)?;
    if filt.is_abelian_filtration() {
        let g = filt.group();
        let expected: std::collections::HashSet<Vec<usize>> = parallelepipeds(g, k, budget)?
            .iter()
            .map(|c| c.key(g))
            .collect();
        let got: std::collections::HashSet<Vec<usize>> =
            closure.iter().map(|c| c.key(g)).collect();
        if expected != got {
            return Err(Error::GuaranteeViolated(
                "abelian cube group differs from the parallelepiped set".into(),
            ));
        }
    }
    Ok(closure)
}

/// Target model for polynomial-map checks: a group with a prefiltration,
/// possibly infinite, possibly a quotient.
pub trait PolyTarget {
    type Elem: Clone;

    /// a . b^{-1} in the target group.
    fn diff(&self, a: &Self::Elem, b: &Self::Elem) -> Self::Elem;

    /// Membership of e in the level subgroup, within tol for inexact
    /// models.
    fn in_level(&self, level: usize, e: &Self::Elem, tol: f64) -> bool;

    fn degree(&self) -> usize;
}

/// R/Z with the length-`degree` filtration: full at every level up to the
/// degree, trivial after.
#[derive(Debug, Clone, Copy)]
pub struct TorusPolyTarget {
    pub degree: usize,
}

impl PolyTarget for TorusPolyTarget {
    type Elem = TorusValue;

    fn diff(&self, a: &TorusValue, b: &TorusValue) -> TorusValue {
        a - b
    }

    fn in_level(&self, level: usize, e: &TorusValue, tol: f64) -> bool {
        if level <= self.degree {
            return true;
        }
        match e {
            TorusValue::Exact(r) if tol == 0.0 => r.is_zero(),
            _ => {
                let v = e.as_f64();
                v.min(1.0 - v) <= tol
            }
        }
    }

    fn degree(&self) -> usize {
        self.degree
    }
}

/// A finite group model carrying an explicit prefiltration.
#[derive(Debug, Clone)]
pub struct FinitePolyTarget {
    pub filtration: Prefiltration,
}

impl PolyTarget for FinitePolyTarget {
    type Elem = GroupElement;

    fn diff(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        self.filtration.group().sub(a, b)
    }

    fn in_level(&self, level: usize, e: &GroupElement, _tol: f64) -> bool {
        self.filtration.contains(level, e)
    }

    fn degree(&self) -> usize {
        self.filtration.degree()
    }
}

/// Dense table of a map from a finite source into a prefiltered target.
#[derive(Debug, Clone)]
pub struct PolynomialMapTable<T: PolyTarget> {
    source: GroupSpec,
    target: T,
    values: Vec<T::Elem>,
}

impl<T: PolyTarget> PolynomialMapTable<T> {
    pub fn new(source: GroupSpec, target: T, values: Vec<T::Elem>) -> Result<Self> {
        if values.len() as u128 != source.cardinality() {
            return Err(Error::DimensionMismatch {
                expected: source.cardinality() as usize,
                got: values.len(),
            });
        }
        Ok(PolynomialMapTable {
            source,
            target,
            values,
        })
    }

    pub fn source(&self) -> &GroupSpec {
        &self.source
    }

    pub fn target(&self) -> &T {
        &self.target
    }

    pub fn value(&self, x: &GroupElement) -> &T::Elem {
        &self.values[self.source.index_of(x)]
    }

    /// Iterated difference of order hs.len() at x.
    pub fn derivative(&self, x: &GroupElement, hs: &[GroupElement]) -> T::Elem {
        match hs.split_last() {
            None => self.value(x).clone(),
            Some((h, rest)) => {
                let shifted = self.derivative(&self.source.add(x, h), rest);
                let base = self.derivative(x, rest);
                self.target.diff(&shifted, &base)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct PolyCheckConfig {
    pub tol: f64,
    pub samples: u64,
    pub seed: u64,
    pub force_exhaustive: bool,
}

impl Default for PolyCheckConfig {
    fn default() -> Self {
        PolyCheckConfig {
            tol: 1e-9,
            samples: 100_000,
            seed: 0,
            force_exhaustive: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PolyWitness {
    pub order: usize,
    pub x: GroupElement,
    pub hs: Vec<GroupElement>,
}

#[derive(Debug, Clone)]
pub struct PolyCheckOutcome {
    pub polynomial: bool,
    pub witness: Option<PolyWitness>,
    pub sampled: bool,
    pub tuples_checked: u128,
}

/// Verify the derivative criterion for all orders up to depth: the order-k
/// difference must lie in the target's level-k subgroup. Exhaustive when
/// the tuple count fits the work budget, otherwise sampled (flagged).
pub fn is_polynomial<T: PolyTarget>(
    m: &PolynomialMapTable<T>,
    depth: usize,
    cfg: &PolyCheckConfig,
    budget: &Budget,
) -> Result<PolyCheckOutcome> {
    if depth < m.target.degree() + 1 {
        return Err(Error::Precondition(format!(
            "depth {depth} does not exceed the target degree {}",
            m.target.degree()
        )));
    }
    let n = m.source.cardinality();
    let mut exhaustive_cost: u128 = 0;
    for k in 0..=depth {
        exhaustive_cost = exhaustive_cost
            .saturating_add(n.saturating_pow(k as u32 + 1).saturating_mul(1 << k));
    }
    let exhaustive = budget.check_work(exhaustive_cost).is_ok();
    if !exhaustive && cfg.force_exhaustive {
        return Err(Error::WorkCapExceeded {
            needed: exhaustive_cost,
            cap: budget.work_cap,
        });
    }

    let mut tuples_checked: u128 = 0;
    if exhaustive {
        let elems: Vec<GroupElement> = m.source.iter_elements().collect();
        for k in 0..=depth {
            let mut idx = vec![0usize; k + 1];
            loop {
                let x = &elems[idx[0]];
                let hs: Vec<GroupElement> =
                    idx[1..].iter().map(|&i| elems[i].clone()).collect();
                let d = m.derivative(x, &hs);
                tuples_checked += 1;
                if !m.target.in_level(k, &d, cfg.tol) {
                    return Ok(PolyCheckOutcome {
                        polynomial: false,
                        witness: Some(PolyWitness {
                            order: k,
                            x: x.clone(),
                            hs,
                        }),
                        sampled: false,
                        tuples_checked,
                    });
                }
                let mut pos = 0;
                while pos <= k {
                    idx[pos] += 1;
                    if idx[pos] < elems.len() {
                        break;
                    }
                    idx[pos] = 0;
                    pos += 1;
                }
                if pos > k {
                    break;
                }
            }
        }
        return Ok(PolyCheckOutcome {
            polynomial: true,
            witness: None,
            sampled: false,
            tuples_checked,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let elems: Vec<GroupElement> = m.source.iter_elements().collect();
    for k in 0..=depth {
        for _ in 0..cfg.samples {
            let x = elems[rng.random_range(0..elems.len())].clone();
            let hs: Vec<GroupElement> = (0..k)
                .map(|_| elems[rng.random_range(0..elems.len())].clone())
                .collect();
            let d = m.derivative(&x, &hs);
            tuples_checked += 1;
            if !m.target.in_level(k, &d, cfg.tol) {
                return Ok(PolyCheckOutcome {
                    polynomial: false,
                    witness: Some(PolyWitness { order: k, x, hs }),
                    sampled: true,
                    tuples_checked,
                });
            }
        }
    }
    Ok(PolyCheckOutcome {
        polynomial: true,
        witness: None,
        sampled: true,
        tuples_checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::pairing;
    use std::collections::HashSet;

    fn b() -> Budget {
        Budget::default()
    }

    fn keys(cubes: &[CubePoint], g: &GroupSpec) -> HashSet<Vec<usize>> {
        cubes.iter().map(|c| c.key(g)).collect()
    }

    fn even_chain(g: &GroupSpec, step: u64) -> Vec<GroupElement> {
        g.iter_elements()
            .filter(|e| e.coords[0] % step == 0)
            .collect()
    }

    #[test]
    fn abelian_filtration_shape() {
        let filt = Prefiltration::abelian(GroupSpec::parse("Z/6").unwrap());
        assert_eq!(filt.degree(), 1);
        assert!(filt.is_filtration());
        assert_eq!(filt.level_elements(0).len(), 6);
        assert_eq!(filt.level_elements(1).len(), 6);
        assert_eq!(filt.level_elements(2).len(), 1);
        assert!(filt.contains(5, &filt.group().zero()));
    }

    #[test]
    fn prefiltration_validation_rejects_bad_chains() {
        let g = GroupSpec::parse("Z/4").unwrap();
        // Not a subgroup: {0, 1}.
        let bad = vec![g.iter_elements().collect(), vec![g.zero(), g.element(vec![1]).unwrap()]];
        assert!(Prefiltration::new(g.clone(), bad).is_err());
        // Not nested: level 1 larger than level 0.
        let bad2 = vec![even_chain(&g, 2), g.iter_elements().collect()];
        assert!(Prefiltration::new(g, bad2).is_err());
    }

    #[test]
    fn generators_at_low_dimension_match_closed_form() {
        let g = GroupSpec::parse("Z/5").unwrap();
        let filt = Prefiltration::abelian(g.clone());
        let g0 = hk_generators(&filt, 0).unwrap();
        assert_eq!(g0.len(), 1);
        assert_eq!(g0[0].entries.len(), 1);

        let g1 = hk_generators(&filt, 1).unwrap();
        // Corner (0): (g, g); corner (1): (0, h).
        assert_eq!(g1.len(), 2);
        assert_eq!(g1[0].entries[0], g1[0].entries[1]);
        assert_eq!(g1[1].entries[0], g.zero());
        assert_ne!(g1[1].entries[1], g.zero());
    }

    #[test]
    fn generator_count_sums_level_generator_counts() {
        let g = GroupSpec::parse("Z/4").unwrap();
        let all: Vec<GroupElement> = g.iter_elements().collect();
        let filt = Prefiltration::new(
            g.clone(),
            vec![all.clone(), all, even_chain(&g, 2)],
        )
        .unwrap();
        assert_eq!(filt.degree(), 2);
        let gens = hk_generators(&filt, 2).unwrap();
        let expected: usize = (0..4usize)
            .map(|omega0| filt.level_generators(omega0.count_ones() as usize).len())
            .sum();
        assert_eq!(gens.len(), expected);
    }

    #[test]
    fn abelian_closure_is_the_parallelepiped_set() {
        let g = GroupSpec::parse("Z/2").unwrap();
        let filt = Prefiltration::abelian(g.clone());
        let cubes = hk_group(&filt, 2, &b()).unwrap();
        assert_eq!(cubes.len(), 8);
        let oracle = parallelepipeds(&g, 2, &b()).unwrap();
        assert_eq!(keys(&cubes, &g), keys(&oracle, &g));
    }

    #[test]
    fn trivial_group_has_one_cube() {
        let g = GroupSpec::parse("Z/1").unwrap();
        let filt = Prefiltration::abelian(g.clone());
        let cubes = hk_group(&filt, 2, &b()).unwrap();
        assert_eq!(cubes.len(), 1);
    }

    #[test]
    fn dimension_one_cubes_are_pair_products() {
        // G_0 = G_1 = 2Z/8 inside Z/8: HK^1 = {(g, g+h)}.
        let g = GroupSpec::parse("Z/8").unwrap();
        let sub = even_chain(&g, 2);
        let filt = Prefiltration::new(g.clone(), vec![sub.clone(), sub.clone()]).unwrap();
        let cubes = hk_group(&filt, 1, &b()).unwrap();
        let mut expected = HashSet::new();
        for x in &sub {
            for h in &sub {
                expected.insert(vec![g.index_of(x), g.index_of(&g.add(x, h))]);
            }
        }
        assert_eq!(keys(&cubes, &g), expected);
    }

    #[test]
    fn degree_two_closure_adds_top_corner_correction() {
        let g = GroupSpec::parse("Z/8").unwrap();
        let sub = even_chain(&g, 2);
        let filt = Prefiltration::new(
            g.clone(),
            vec![sub.clone(), sub.clone(), even_chain(&g, 4)],
        )
        .unwrap();
        let cubes = hk_group(&filt, 2, &b()).unwrap();
        let mut expected = HashSet::new();
        for x in &sub {
            for h1 in &sub {
                for h2 in &sub {
                    for c in even_chain(&g, 4) {
                        let top = g.add(&g.add(&g.add(x, h1), h2), &c);
                        expected.insert(vec![
                            g.index_of(x),
                            g.index_of(&g.add(x, h1)),
                            g.index_of(&g.add(x, h2)),
                            g.index_of(&top),
                        ]);
                    }
                }
            }
        }
        assert_eq!(keys(&cubes, &g), expected);
    }

    #[test]
    fn closure_is_a_group() {
        let g = GroupSpec::parse("Z/8").unwrap();
        let sub = even_chain(&g, 2);
        let filt = Prefiltration::new(g.clone(), vec![sub.clone(), sub]).unwrap();
        let cubes = hk_group(&filt, 1, &b()).unwrap();
        let set = keys(&cubes, &g);
        for a in &cubes {
            assert!(set.contains(&a.inv(&g).key(&g)));
            for c in &cubes {
                assert!(set.contains(&a.mul(c, &g).unwrap().key(&g)));
            }
        }
    }

    #[test]
    fn subgroup_cubes_are_ambient_cubes_with_subgroup_entries() {
        let g = GroupSpec::parse("Z/8").unwrap();
        let sub = even_chain(&g, 2);
        let sub_set: HashSet<usize> = sub.iter().map(|e| g.index_of(e)).collect();
        let ambient = hk_group(&Prefiltration::abelian(g.clone()), 2, &b()).unwrap();
        let restricted = hk_group(
            &Prefiltration::new(g.clone(), vec![sub.clone(), sub]).unwrap(),
            2,
            &b(),
        )
        .unwrap();
        let ambient_cut: HashSet<Vec<usize>> = keys(&ambient, &g)
            .into_iter()
            .filter(|key| key.iter().all(|i| sub_set.contains(i)))
            .collect();
        assert_eq!(keys(&restricted, &g), ambient_cut);
    }

    fn torus_table(spec: &str, f: impl Fn(u64) -> TorusValue) -> (GroupSpec, Vec<TorusValue>) {
        let g = GroupSpec::parse(spec).unwrap();
        let values = g.iter_elements().map(|e| f(e.coords[0])).collect();
        (g, values)
    }

    #[test]
    fn linear_phase_is_polynomial_of_degree_one() {
        let g = GroupSpec::parse("Z/7").unwrap();
        let xi = g.frequency(vec![3]).unwrap();
        let values: Vec<TorusValue> = g.iter_elements().map(|x| pairing(&g, &xi, &x)).collect();
        let table =
            PolynomialMapTable::new(g, TorusPolyTarget { degree: 1 }, values).unwrap();
        let out = is_polynomial(&table, 2, &PolyCheckConfig::default(), &b()).unwrap();
        assert!(out.polynomial && !out.sampled);
    }

    #[test]
    fn order_two_phase_needs_the_deeper_filtration() {
        // The half-integer square phase on Z/2: 0 -> 0, 1 -> 3/4.
        let (g, values) = torus_table("Z/2", |x| {
            if x == 0 {
                TorusValue::zero()
            } else {
                TorusValue::from_ratio(3, 4)
            }
        });
        let deep = PolynomialMapTable::new(
            g.clone(),
            TorusPolyTarget { degree: 2 },
            values.clone(),
        )
        .unwrap();
        let out = is_polynomial(&deep, 3, &PolyCheckConfig::default(), &b()).unwrap();
        assert!(out.polynomial);

        let shallow =
            PolynomialMapTable::new(g.clone(), TorusPolyTarget { degree: 1 }, values).unwrap();
        let out = is_polynomial(&shallow, 2, &PolyCheckConfig::default(), &b()).unwrap();
        assert!(!out.polynomial);
        let w = out.witness.unwrap();
        assert_eq!(w.order, 2);
        // The witness really is a failing tuple.
        let d = shallow.derivative(&w.x, &w.hs);
        assert!(!shallow.target().in_level(2, &d, 0.0));
    }

    #[test]
    fn polynomiality_survives_target_translation() {
        let (g, values) = torus_table("Z/9", |x| {
            TorusValue::from_ratio((x * x) as i64, 9)
        });
        let shift = TorusValue::from_ratio(2, 7);
        let shifted: Vec<TorusValue> = values.iter().map(|v| v + &shift).collect();
        for vals in [values, shifted] {
            let t = PolynomialMapTable::new(g.clone(), TorusPolyTarget { degree: 2 }, vals)
                .unwrap();
            let out = is_polynomial(&t, 3, &PolyCheckConfig::default(), &b()).unwrap();
            assert!(out.polynomial);
        }
    }

    #[test]
    fn finite_target_sees_square_map_as_degree_two() {
        let g = GroupSpec::parse("Z/4").unwrap();
        let values: Vec<GroupElement> = g
            .iter_elements()
            .map(|x| g.element(vec![(x.coords[0] * x.coords[0]) % 4]).unwrap())
            .collect();
        let all: Vec<GroupElement> = g.iter_elements().collect();
        let deep = FinitePolyTarget {
            filtration: Prefiltration::new(
                g.clone(),
                vec![all.clone(), all.clone(), even_chain(&g, 2)],
            )
            .unwrap(),
        };
        let t = PolynomialMapTable::new(g.clone(), deep, values.clone()).unwrap();
        let out = is_polynomial(&t, 3, &PolyCheckConfig::default(), &b()).unwrap();
        assert!(out.polynomial);

        let shallow = FinitePolyTarget {
            filtration: Prefiltration::new(g.clone(), vec![all.clone(), all]).unwrap(),
        };
        let t = PolynomialMapTable::new(g.clone(), shallow, values).unwrap();
        let out = is_polynomial(&t, 2, &PolyCheckConfig::default(), &b()).unwrap();
        assert!(!out.polynomial && out.witness.is_some());
    }

    #[test]
    fn sampled_mode_engages_under_tight_budget_and_agrees() {
        let (g, values) = torus_table("Z/64", |x| {
            TorusValue::from_ratio((x * x) as i64, 64)
        });
        let t = PolynomialMapTable::new(g, TorusPolyTarget { degree: 2 }, values).unwrap();
        let tight = Budget {
            work_cap: 10_000,
            ..Budget::default()
        };
        let cfg = PolyCheckConfig {
            samples: 2_000,
            ..PolyCheckConfig::default()
        };
        let out = is_polynomial(&t, 3, &cfg, &tight).unwrap();
        assert!(out.sampled && out.polynomial);

        let forced = PolyCheckConfig {
            force_exhaustive: true,
            ..PolyCheckConfig::default()
        };
        assert!(matches!(
            is_polynomial(&t, 3, &forced, &tight),
            Err(Error::WorkCapExceeded { .. })
        ));
    }

    #[test]
    fn depth_precondition_is_enforced() {
        let (g, values) = torus_table("Z/3", |_| TorusValue::zero());
        let t = PolynomialMapTable::new(g, TorusPolyTarget { degree: 2 }, values).unwrap();
        assert!(is_polynomial(&t, 2, &PolyCheckConfig::default(), &b()).is_err());
    }
}
