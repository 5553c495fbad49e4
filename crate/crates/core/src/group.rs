use num::bigint::BigInt;
use num::rational::BigRational;
use num::traits::Zero;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::budget::Budget;
use crate::torus::TorusValue;
use crate::{Error, Result};

/// A finite abelian group presented as Z/N_1 x ... x Z/N_k.
///
/// The textual form is "Z/4xZ/6" (case-insensitive, 'x' separates factors).
/// Elements and frequencies are coordinate vectors with 0 <= a_i < N_i;
/// the dual group is identified with the group itself through the pairing
/// xi . x = sum_i xi_i x_i / N_i mod 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupSpec {
    orders: Vec<u64>,
}

/// Element of a `GroupSpec`, stored as reduced coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupElement {
    pub coords: Vec<u64>,
}

/// Character index vector for the dual group; same coordinate conventions
/// as `GroupElement`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Frequency {
    pub coords: Vec<u64>,
}

impl GroupSpec {
    pub fn new(orders: Vec<u64>) -> Result<Self> {
        if orders.is_empty() {
            return Err(Error::ParseGroup("empty factor list".into()));
        }
        for &n in &orders {
            if n == 0 {
                return Err(Error::ParseGroup("factor of order 0".into()));
            }
        }
        Ok(GroupSpec { orders })
    }

    pub fn cyclic(n: u64) -> Self {
        GroupSpec::new(vec![n]).expect("positive order")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut orders = Vec::new();
        for part in text.split(['x', 'X']) {
            let part = part.trim();
            let body = part
                .strip_prefix("Z/")
                .or_else(|| part.strip_prefix("z/"))
                .ok_or_else(|| Error::ParseGroup(text.to_string()))?;
            let n: u64 = body
                .trim()
                .parse()
                .map_err(|_| Error::ParseGroup(text.to_string()))?;
            if n == 0 {
                return Err(Error::ParseGroup(text.to_string()));
            }
            orders.push(n);
        }
        GroupSpec::new(orders)
    }

    pub fn orders(&self) -> &[u64] {
        &self.orders
    }

    pub fn rank(&self) -> usize {
        self.orders.len()
    }

    pub fn cardinality(&self) -> u128 {
        self.orders.iter().map(|&n| n as u128).product()
    }

    /// Cardinality as usize, for dense tables. Callers check the budget first.
    pub fn len(&self) -> usize {
        self.cardinality() as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lcm_exponent(&self) -> u64 {
        self.orders.iter().fold(1u64, |a, &b| num::integer::lcm(a, b))
    }

    pub fn zero(&self) -> GroupElement {
        GroupElement {
            coords: vec![0; self.orders.len()],
        }
    }

    pub fn zero_frequency(&self) -> Frequency {
        Frequency {
            coords: vec![0; self.orders.len()],
        }
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.orders.len() {
            return Err(Error::DimensionMismatch {
                expected: self.orders.len(),
                got,
            });
        }
        Ok(())
    }

    pub fn element(&self, coords: Vec<u64>) -> Result<GroupElement> {
        self.check_len(coords.len())?;
        for (&c, &n) in coords.iter().zip(&self.orders) {
            if c >= n {
                return Err(Error::CoordinateOutOfRange { value: c, order: n });
            }
        }
        Ok(GroupElement { coords })
    }

    /// Element from arbitrary (possibly negative) integer coordinates.
    pub fn element_mod(&self, coords: &[i128]) -> GroupElement {
        assert_eq!(coords.len(), self.orders.len());
        GroupElement {
            coords: coords
                .iter()
                .zip(&self.orders)
                .map(|(&c, &n)| c.rem_euclid(n as i128) as u64)
                .collect(),
        }
    }

    pub fn frequency(&self, coords: Vec<u64>) -> Result<Frequency> {
        self.check_len(coords.len())?;
        for (&c, &n) in coords.iter().zip(&self.orders) {
            if c >= n {
                return Err(Error::CoordinateOutOfRange { value: c, order: n });
            }
        }
        Ok(Frequency { coords })
    }

    pub fn frequency_mod(&self, coords: &[i128]) -> Frequency {
        assert_eq!(coords.len(), self.orders.len());
        Frequency {
            coords: coords
                .iter()
                .zip(&self.orders)
                .map(|(&c, &n)| c.rem_euclid(n as i128) as u64)
                .collect(),
        }
    }

    pub fn add(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        GroupElement {
            coords: a
                .coords
                .iter()
                .zip(&b.coords)
                .zip(&self.orders)
                .map(|((&x, &y), &n)| (x + y) % n)
                .collect(),
        }
    }

    pub fn neg(&self, a: &GroupElement) -> GroupElement {
        GroupElement {
            coords: a
                .coords
                .iter()
                .zip(&self.orders)
                .map(|(&x, &n)| if x == 0 { 0 } else { n - x })
                .collect(),
        }
    }

    pub fn sub(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        self.add(a, &self.neg(b))
    }

    pub fn scalar_mul(&self, n: i128, a: &GroupElement) -> GroupElement {
        let coords: Vec<i128> = a.coords.iter().map(|&x| n * x as i128).collect();
        self.element_mod(&coords)
    }

    pub fn add_freq(&self, a: &Frequency, b: &Frequency) -> Frequency {
        Frequency {
            coords: a
                .coords
                .iter()
                .zip(&b.coords)
                .zip(&self.orders)
                .map(|((&x, &y), &n)| (x + y) % n)
                .collect(),
        }
    }

    pub fn neg_freq(&self, a: &Frequency) -> Frequency {
        Frequency {
            coords: a
                .coords
                .iter()
                .zip(&self.orders)
                .map(|(&x, &n)| if x == 0 { 0 } else { n - x })
                .collect(),
        }
    }

    pub fn sub_freq(&self, a: &Frequency, b: &Frequency) -> Frequency {
        self.add_freq(a, &self.neg_freq(b))
    }

    /// Mixed-radix index of an element in lexicographic enumeration order
    /// (first coordinate most significant).
    pub fn index_of(&self, a: &GroupElement) -> usize {
        let mut idx: u128 = 0;
        for (&c, &n) in a.coords.iter().zip(&self.orders) {
            idx = idx * n as u128 + c as u128;
        }
        idx as usize
    }

    pub fn element_at(&self, mut idx: usize) -> GroupElement {
        let mut coords = vec![0u64; self.orders.len()];
        for i in (0..self.orders.len()).rev() {
            let n = self.orders[i] as usize;
            coords[i] = (idx % n) as u64;
            idx /= n;
        }
        GroupElement { coords }
    }

    pub fn index_of_freq(&self, a: &Frequency) -> usize {
        let mut idx: u128 = 0;
        for (&c, &n) in a.coords.iter().zip(&self.orders) {
            idx = idx * n as u128 + c as u128;
        }
        idx as usize
    }

    pub fn frequency_at(&self, mut idx: usize) -> Frequency {
        let mut coords = vec![0u64; self.orders.len()];
        for i in (0..self.orders.len()).rev() {
            let n = self.orders[i] as usize;
            coords[i] = (idx % n) as u64;
            idx /= n;
        }
        Frequency { coords }
    }

    /// Iterator over all elements in enumeration order. Does not allocate
    /// the full list; use `enumerate_group` for a budget-checked vector.
    pub fn iter_elements(&self) -> impl Iterator<Item = GroupElement> + '_ {
        let total = self.cardinality();
        (0..total).map(move |i| self.element_at(i as usize))
    }

    pub fn iter_frequencies(&self) -> impl Iterator<Item = Frequency> + '_ {
        let total = self.cardinality();
        (0..total).map(move |i| self.frequency_at(i as usize))
    }

    /// Unit generator of the i-th cyclic factor.
    pub fn unit(&self, i: usize) -> GroupElement {
        let mut coords = vec![0u64; self.orders.len()];
        if self.orders[i] > 1 {
            coords[i] = 1;
        }
        GroupElement { coords }
    }
}

impl fmt::Display for GroupSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.orders.iter().map(|n| format!("Z/{n}")).collect();
        write!(f, "{}", parts.join("x"))
    }
}

/// xi . x = sum_i xi_i x_i / N_i mod 1, exactly.
pub fn pairing(g: &GroupSpec, xi: &Frequency, x: &GroupElement) -> TorusValue {
    assert_eq!(xi.coords.len(), g.rank(), "frequency rank mismatch");
    assert_eq!(x.coords.len(), g.rank(), "element rank mismatch");
    let mut acc = BigRational::zero();
    for ((&a, &v), &n) in xi.coords.iter().zip(&x.coords).zip(g.orders()) {
        acc += BigRational::new(BigInt::from(a as i128 * v as i128), BigInt::from(n));
    }
    TorusValue::from_rational(acc)
}

/// All elements in enumeration order, subject to the enumeration cap.
pub fn enumerate_group(g: &GroupSpec, budget: &Budget) -> Result<Vec<GroupElement>> {
    budget.check_enumeration(g.cardinality())?;
    Ok(g.iter_elements().collect())
}

/// Elements y with xi . y = 0 for every xi in `s`. This is the common
/// kernel of the characters of `s`, always a subgroup.
pub fn character_kernel(s: &[Frequency], g: &GroupSpec, budget: &Budget) -> Result<Vec<GroupElement>> {
    budget.check_enumeration(g.cardinality())?;
    let mut out = Vec::new();
    'outer: for x in g.iter_elements() {
        for xi in s {
            if !pairing(g, xi, &x).is_zero() {
                continue 'outer;
            }
        }
        out.push(x);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b() -> Budget {
        Budget::default()
    }

    #[test]
    fn parse_and_display() {
        let g = GroupSpec::parse("Z/4xZ/6").unwrap();
        assert_eq!(g.orders(), &[4, 6]);
        assert_eq!(g.to_string(), "Z/4xZ/6");
        let g2 = GroupSpec::parse("z/4Xz/6").unwrap();
        assert_eq!(g, g2);
        assert!(GroupSpec::parse("Z/0").is_err());
        assert!(GroupSpec::parse("4x6").is_err());
        assert!(GroupSpec::parse("").is_err());
    }

    #[test]
    fn enumeration_order_is_mixed_radix_lex() {
        let g = GroupSpec::parse("Z/2xZ/3").unwrap();
        let elems = enumerate_group(&g, &b()).unwrap();
        let coords: Vec<Vec<u64>> = elems.iter().map(|e| e.coords.clone()).collect();
        assert_eq!(
            coords,
            vec![
                vec![0, 0],
                vec![0, 1],
                vec![0, 2],
                vec![1, 0],
                vec![1, 1],
                vec![1, 2]
            ]
        );
        for (i, e) in elems.iter().enumerate() {
            assert_eq!(g.index_of(e), i);
            assert_eq!(&g.element_at(i), e);
        }
    }

    #[test]
    fn enumeration_cap_enforced() {
        let g = GroupSpec::parse("Z/1024xZ/1024xZ/2").unwrap();
        assert!(matches!(
            enumerate_group(&g, &b()),
            Err(Error::EnumerationCapExceeded { .. })
        ));
    }

    #[test]
    fn pairing_example_z4z6() {
        // (1,1) . (2,3) = 2/4 + 3/6 = 1/2 + 1/2 = 0 mod 1.
        let g = GroupSpec::parse("Z/4xZ/6").unwrap();
        let xi = g.frequency(vec![1, 1]).unwrap();
        let x = g.element(vec![2, 3]).unwrap();
        assert!(pairing(&g, &xi, &x).is_zero());
    }

    #[test]
    fn pairing_is_bilinear_on_small_group() {
        let g = GroupSpec::parse("Z/3xZ/4").unwrap();
        for xi in g.iter_frequencies() {
            for x in g.iter_elements() {
                for y in g.iter_elements() {
                    let lhs = pairing(&g, &xi, &g.add(&x, &y));
                    let rhs = &pairing(&g, &xi, &x) + &pairing(&g, &xi, &y);
                    assert_eq!(lhs, rhs);
                }
            }
        }
    }

    #[test]
    fn pairing_denominator_divides_lcm() {
        let g = GroupSpec::parse("Z/4xZ/6").unwrap();
        let l = num::BigInt::from(g.lcm_exponent());
        for xi in g.iter_frequencies() {
            for x in g.iter_elements() {
                let t = pairing(&g, &xi, &x);
                let r = t.rational();
                assert!(
                    (&l % r.denom()).is_zero(),
                    "denominator {} does not divide {}",
                    r.denom(),
                    l
                );
            }
        }
    }

    #[test]
    fn kernel_of_zero_frequency_is_whole_group() {
        let g = GroupSpec::parse("Z/5").unwrap();
        let s = vec![g.zero_frequency()];
        let k = character_kernel(&s, &g, &b()).unwrap();
        assert_eq!(k.len(), 5);
    }

    #[test]
    fn kernel_size_divides_group_order() {
        let g = GroupSpec::parse("Z/4xZ/6").unwrap();
        for xi in g.iter_frequencies() {
            let k = character_kernel(std::slice::from_ref(&xi), &g, &b()).unwrap();
            assert_eq!(g.len() % k.len(), 0, "Lagrange fails for xi = {xi:?}");
        }
    }

    #[test]
    fn kernel_of_faithful_character_is_trivial() {
        let g = GroupSpec::parse("Z/7").unwrap();
        let xi = g.frequency(vec![1]).unwrap();
        let k = character_kernel(&[xi], &g, &b()).unwrap();
        assert_eq!(k, vec![g.zero()]);
    }

    #[test]
    fn scalar_mul_matches_repeated_add() {
        let g = GroupSpec::parse("Z/4xZ/6").unwrap();
        let x = g.element(vec![3, 5]).unwrap();
        let mut acc = g.zero();
        for n in 0..=10i128 {
            assert_eq!(g.scalar_mul(n, &x), acc, "n = {n}");
            acc = g.add(&acc, &x);
        }
        assert_eq!(g.scalar_mul(-1, &x), g.neg(&x));
    }

    #[test]
    fn order_one_factors_are_degenerate() {
        let g = GroupSpec::parse("Z/1xZ/3").unwrap();
        assert_eq!(g.cardinality(), 3);
        let elems = enumerate_group(&g, &b()).unwrap();
        assert_eq!(elems.len(), 3);
        assert!(elems.iter().all(|e| e.coords[0] == 0));
    }
}
