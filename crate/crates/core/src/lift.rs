//! The lifted group G_S, globalisation of locally bilinear forms, and exact
//! integration of symmetric bilinear forms into quadratic phases.
//!
//! For a frequency set S on G, the lift G_S consists of pairs (x, theta)
//! with theta in R^S congruent to the pairing vector of x mod Z^S. The
//! theta-projection image is a lattice Gamma between Z^S and (1/D) Z^S; a
//! reduced basis of Gamma together with the common character kernel K
//! splits G_S as K + Z w_1 + ... + Z w_s, which is what lets local data on
//! a Bohr set extend to global data on a finitely generated group.

use std::collections::HashMap;

use num::{BigInt, BigRational, Integer as _, One, Signed, ToPrimitive, Zero};

use crate::bohr::{bohr_enumerate, bohr_seminorm, BohrSet, FrequencySet};
use crate::budget::Budget;
use crate::group::{character_kernel, pairing, GroupElement, GroupSpec};
use crate::linalg::{hnf, left_kernel, lll_reduce, rat_inverse, snf, IMatrix, QMatrix};
use crate::torus::TorusValue;
use crate::{Error, Result};

fn sup_norm(v: &[BigRational]) -> BigRational {
    let mut best = BigRational::zero();
    for c in v {
        let a = c.abs();
        if a > best {
            best = a;
        }
    }
    best
}

/// Representative of r mod 1 in (-1/2, 1/2].
fn centered_rep(r: &BigRational) -> BigRational {
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    let shifted = (r + &half).fract();
    let shifted = if shifted.is_negative() {
        shifted + BigRational::one()
    } else {
        shifted
    };
    // shifted = r + 1/2 mod 1 in [0, 1); map 0 to 1 so the result lands
    // in (-1/2, 1/2].
    if shifted.is_zero() {
        half
    } else {
        shifted - half
    }
}

/// An element (x, theta) of G_S; theta_xi = xi . x mod 1, exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiftedElement {
    pub x: GroupElement,
    pub theta: Vec<BigRational>,
}

impl LiftedElement {
    pub fn norm(&self) -> BigRational {
        sup_norm(&self.theta)
    }
}

/// A point of the presentation K x Z^s: y in K plus integer coordinates
/// along the lifted generators v_i.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FgPoint {
    pub y: GroupElement,
    pub n: Vec<BigInt>,
}

/// Cyclic decomposition of the kernel K, computed from the Smith normal
/// form of its relation lattice.
#[derive(Debug, Clone)]
pub struct KernelDecomposition {
    /// Independent generators; generator a has order `orders[a]` > 1.
    pub generators: Vec<GroupElement>,
    pub orders: Vec<u64>,
    /// Cyclic coordinates of each kernel element, indexed by kernel position.
    coords: Vec<Vec<u64>>,
}

impl KernelDecomposition {
    pub fn coords_of(&self, kernel_pos: usize) -> &[u64] {
        &self.coords[kernel_pos]
    }
}

#[derive(Debug, Clone)]
pub struct LiftStructure {
    s: FrequencySet,
    kernel: Vec<GroupElement>,
    kernel_pos: HashMap<usize, usize>,
    decomp: KernelDecomposition,
    /// Reduced basis rows w_i of Gamma, sup norms ascending.
    basis: QMatrix,
    /// Direction weights N_i = 1 / (|S| sup|w_i|), descending.
    weights: Vec<BigRational>,
    /// Group elements g_i with pairing vector congruent to w_i mod Z^S.
    gens: Vec<GroupElement>,
    basis_inv: QMatrix,
    /// Certified sandwich constant c: every theta in Gamma with
    /// sup|theta| < c t has coordinates |n_i| < t N_i.
    john_constant: BigRational,
}

impl LiftStructure {
    pub fn frequency_set(&self) -> &FrequencySet {
        &self.s
    }

    pub fn group(&self) -> &GroupSpec {
        self.s.group()
    }

    pub fn kernel(&self) -> &[GroupElement] {
        &self.kernel
    }

    pub fn kernel_position(&self, y: &GroupElement) -> Option<usize> {
        self.kernel_pos.get(&self.group().index_of(y)).copied()
    }

    pub fn decomposition(&self) -> &KernelDecomposition {
        &self.decomp
    }

    pub fn basis(&self) -> &QMatrix {
        &self.basis
    }

    pub fn weights(&self) -> &[BigRational] {
        &self.weights
    }

    pub fn lifted_generators(&self) -> Vec<LiftedElement> {
        self.gens
            .iter()
            .zip(&self.basis)
            .map(|(g, w)| LiftedElement {
                x: g.clone(),
                theta: w.clone(),
            })
            .collect()
    }

    pub fn john_constant(&self) -> &BigRational {
        &self.john_constant
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    /// The unique lift of x with all coordinates in (-1/2, 1/2].
    pub fn canonical_lift(&self, x: &GroupElement) -> LiftedElement {
        let theta = self
            .s
            .freqs()
            .iter()
            .map(|xi| centered_rep(pairing(self.group(), xi, x).rational()))
            .collect();
        LiftedElement { x: x.clone(), theta }
    }

    /// Validated construction of (x, theta).
    pub fn lift_with(&self, x: GroupElement, theta: Vec<BigRational>) -> Result<LiftedElement> {
        if theta.len() != self.s.len() {
            return Err(Error::DimensionMismatch {
                expected: self.s.len(),
                got: theta.len(),
            });
        }
        for (xi, t) in self.s.freqs().iter().zip(&theta) {
            let diff = t - pairing(self.group(), xi, &x).rational();
            if !diff.is_integer() {
                return Err(Error::Malformed(format!(
                    "theta component {t} is not congruent to the pairing of {x:?}"
                )));
            }
        }
        Ok(LiftedElement { x, theta })
    }

    fn theta_of(&self, n: &[BigInt]) -> Vec<BigRational> {
        let s = self.s.len();
        let mut theta = vec![BigRational::zero(); s];
        for (i, ni) in n.iter().enumerate() {
            let nr = BigRational::from(ni.clone());
            for c in 0..s {
                let d = &nr * &self.basis[i][c];
                theta[c] += d;
            }
        }
        theta
    }

    /// (y, 0) + sum n_i v_i.
    pub fn compose(&self, p: &FgPoint) -> LiftedElement {
        let g = self.group();
        let mut x = p.y.clone();
        for (ni, gi) in p.n.iter().zip(&self.gens) {
            let k = reduce_coeff(ni, g.lcm_exponent());
            x = g.add(&x, &g.scalar_mul(k, gi));
        }
        LiftedElement {
            x,
            theta: self.theta_of(&p.n),
        }
    }

    /// Unique decomposition (x, theta) = (y, 0) + sum n_i v_i with y in K.
    pub fn decompose(&self, p: &LiftedElement) -> Result<FgPoint> {
        let s = self.s.len();
        let mut n = Vec::with_capacity(s);
        for i in 0..s {
            let mut acc = BigRational::zero();
            for j in 0..s {
                let d = &p.theta[j] * &self.basis_inv[j][i];
                acc += d;
            }
            if !acc.is_integer() {
                return Err(Error::Malformed(format!(
                    "theta is not in the lattice: coordinate {i} = {acc}"
                )));
            }
            n.push(acc.to_integer());
        }
        let g = self.group();
        let mut y = p.x.clone();
        for (ni, gi) in n.iter().zip(&self.gens) {
            let k = reduce_coeff(ni, g.lcm_exponent());
            y = g.sub(&y, &g.scalar_mul(k, gi));
        }
        if self.kernel_position(&y).is_none() {
            return Err(Error::GuaranteeViolated(format!(
                "decomposition residual {y:?} is not in the kernel"
            )));
        }
        Ok(FgPoint { y, n })
    }

    pub fn add_points(&self, p: &FgPoint, q: &FgPoint) -> FgPoint {
        FgPoint {
            y: self.group().add(&p.y, &q.y),
            n: p.n.iter().zip(&q.n).map(|(a, b)| a + b).collect(),
        }
    }

    /// All lattice coordinate vectors n with sup|sum n_i w_i| < bound,
    /// paired with theta and its norm. Sorted by norm, then by coordinates.
    pub fn small_lattice_points(
        &self,
        bound: &BigRational,
        budget: &Budget,
    ) -> Result<Vec<(Vec<BigInt>, Vec<BigRational>, BigRational)>> {
        let s = self.s.len();
        if s == 0 {
            return Ok(vec![(Vec::new(), Vec::new(), BigRational::zero())]);
        }
        // |n_i| <= bound * l1 norm of column i of the basis inverse.
        let mut caps = Vec::with_capacity(s);
        let mut total: u128 = 1;
        for i in 0..s {
            let col_l1: BigRational = (0..s).map(|j| self.basis_inv[j][i].abs()).sum();
            let cap = (bound * col_l1).floor().to_integer();
            let cap = cap.to_i64().ok_or_else(|| Error::Precondition(
                "lattice enumeration box is unreasonably large".into(),
            ))?;
            let cap = cap.max(0);
            total = total.saturating_mul(2 * cap as u128 + 1);
            caps.push(cap);
        }
        budget.check_enumeration(total)?;
        let mut out = Vec::new();
        let mut n = caps.iter().map(|&c| -c).collect::<Vec<i64>>();
        loop {
            let nb: Vec<BigInt> = n.iter().map(|&v| BigInt::from(v)).collect();
            let theta = self.theta_of(&nb);
            let norm = sup_norm(&theta);
            if norm < *bound {
                out.push((nb, theta, norm));
            }
            let mut k = 0;
            while k < s {
                n[k] += 1;
                if n[k] <= caps[k] {
                    break;
                }
                n[k] = -caps[k];
                k += 1;
            }
            if k == s {
                break;
            }
        }
        out.sort_by(|a, b| a.2.cmp(&b.2).then_with(|| a.0.cmp(&b.0)));
        Ok(out)
    }
}

fn reduce_coeff(n: &BigInt, exponent: u64) -> i128 {
    let m = n.mod_floor(&BigInt::from(exponent));
    m.to_i128().expect("reduced coefficient fits")
}

/// Greedy generating set for a subgroup given as an element list.
pub(crate) fn subgroup_generators(g: &GroupSpec, elems: &[GroupElement]) -> Vec<GroupElement> {
    let mut gens: Vec<GroupElement> = Vec::new();
    let mut span: Vec<usize> = vec![g.index_of(&g.zero())];
    for e in elems {
        let idx = g.index_of(e);
        if span.contains(&idx) {
            continue;
        }
        gens.push(e.clone());
        // Extend the span by all multiples of the new generator.
        let mut new_span = Vec::new();
        for &s_idx in &span {
            let base = g.element_at(s_idx);
            let mut cur = base.clone();
            loop {
                let ci = g.index_of(&cur);
                if !new_span.contains(&ci) {
                    new_span.push(ci);
                }
                cur = g.add(&cur, e);
                if cur == base {
                    break;
                }
            }
        }
        new_span.sort_unstable();
        span = new_span;
    }
    gens
}

fn kernel_decomposition(
    g: &GroupSpec,
    kernel: &[GroupElement],
    kernel_pos: &HashMap<usize, usize>,
) -> Result<KernelDecomposition> {
    let gens = subgroup_generators(g, kernel);
    let m = gens.len();
    if m == 0 {
        return Ok(KernelDecomposition {
            generators: Vec::new(),
            orders: Vec::new(),
            coords: vec![Vec::new(); kernel.len()],
        });
    }
    // Relations: n . M = 0 mod the factor orders, found as the left kernel
    // of M stacked over diag(orders), projected to the first m coordinates.
    let rank = g.rank();
    let mut stacked: IMatrix = Vec::with_capacity(m + rank);
    for gen in &gens {
        stacked.push(gen.coords.iter().map(|&c| BigInt::from(c)).collect());
    }
    for (f, &order) in g.orders().iter().enumerate() {
        let mut row = vec![BigInt::zero(); rank];
        row[f] = BigInt::from(order);
        stacked.push(row);
    }
    let kern = left_kernel(&stacked);
    let relations: IMatrix = kern.into_iter().map(|row| row[..m].to_vec()).collect();
    let smith = snf(&relations);
    if smith.d.len() != m || smith.d.iter().any(Zero::is_zero) {
        return Err(Error::GuaranteeViolated(
            "relation lattice of the kernel generators is not full rank".into(),
        ));
    }

    // New generator i is the row-i combination of the inverse column
    // transform applied to the old generators; its order is d_i.
    let mut new_gens = Vec::with_capacity(m);
    for i in 0..m {
        let mut acc = g.zero();
        for j in 0..m {
            let k = reduce_coeff(&smith.v_inv[i][j], g.lcm_exponent());
            acc = g.add(&acc, &g.scalar_mul(k, &gens[j]));
        }
        new_gens.push(acc);
    }
    let mut generators = Vec::new();
    let mut orders = Vec::new();
    for (gen, d) in new_gens.into_iter().zip(&smith.d) {
        let d = d.to_u64().ok_or_else(|| {
            Error::GuaranteeViolated("kernel invariant factor overflows u64".into())
        })?;
        if d > 1 {
            generators.push(gen);
            orders.push(d);
        }
    }

    // The coordinate map must be a bijection onto K; enumerate and check.
    let expect: u128 = orders.iter().map(|&d| d as u128).product();
    if expect != kernel.len() as u128 {
        return Err(Error::GuaranteeViolated(format!(
            "invariant factors enumerate {expect} elements, kernel has {}",
            kernel.len()
        )));
    }
    let mut coords = vec![None; kernel.len()];
    let mut idx = vec![0u64; orders.len()];
    let mut seen = 0usize;
    loop {
        let mut e = g.zero();
        for (&x, gen) in idx.iter().zip(&generators) {
            e = g.add(&e, &g.scalar_mul(x as i128, gen));
        }
        let pos = kernel_pos
            .get(&g.index_of(&e))
            .copied()
            .ok_or_else(|| Error::GuaranteeViolated("generated element leaves the kernel".into()))?;
        if coords[pos].is_some() {
            return Err(Error::GuaranteeViolated(
                "cyclic coordinates are not injective".into(),
            ));
        }
        coords[pos] = Some(idx.clone());
        seen += 1;
        let mut k = 0;
        while k < orders.len() {
            idx[k] += 1;
            if idx[k] < orders[k] {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if orders.is_empty() || k == orders.len() {
            break;
        }
    }
    if seen != kernel.len() {
        return Err(Error::GuaranteeViolated(
            "cyclic coordinates do not cover the kernel".into(),
        ));
    }
    Ok(KernelDecomposition {
        generators,
        orders,
        coords: coords.into_iter().map(Option::unwrap).collect(),
    })
}

/// Maximum frequency-set size for lattice work.
pub const MAX_LIFT_RANK: usize = 6;

pub fn build_lift(s: &FrequencySet, budget: &Budget) -> Result<LiftStructure> {
    let rank = s.len();
    if rank > MAX_LIFT_RANK {
        return Err(Error::Precondition(format!(
            "frequency set size {rank} exceeds supported maximum {MAX_LIFT_RANK}"
        )));
    }
    let g = s.group().clone();
    let kernel = character_kernel(s.freqs(), &g, budget)?;
    let kernel_pos: HashMap<usize, usize> = kernel
        .iter()
        .enumerate()
        .map(|(pos, e)| (g.index_of(e), pos))
        .collect();
    let decomp = kernel_decomposition(&g, &kernel, &kernel_pos)?;

    if rank == 0 {
        return Ok(LiftStructure {
            s: s.clone(),
            kernel,
            kernel_pos,
            decomp,
            basis: Vec::new(),
            weights: Vec::new(),
            gens: Vec::new(),
            basis_inv: Vec::new(),
            john_constant: BigRational::one(),
        });
    }

    // Gamma is generated by Z^S and the pairing vectors of the factor
    // units; scale by the exponent D to work over Z, then Hermite-reduce.
    let d_exp = BigInt::from(g.lcm_exponent());
    let mut rows: IMatrix = Vec::new();
    for i in 0..rank {
        let mut row = vec![BigInt::zero(); rank];
        row[i] = d_exp.clone();
        rows.push(row);
    }
    for f in 0..g.rank() {
        let unit = g.unit(f);
        let row: Vec<BigInt> = s
            .freqs()
            .iter()
            .map(|xi| {
                let v = pairing(&g, xi, &unit).rational() * BigRational::from(d_exp.clone());
                debug_assert!(v.is_integer());
                v.to_integer()
            })
            .collect();
        rows.push(row);
    }
    let h = hnf(&rows);
    if h.len() != rank {
        return Err(Error::GuaranteeViolated(
            "theta lattice does not have full rank".into(),
        ));
    }
    let d_rat = BigRational::from(d_exp);
    let scaled: QMatrix = h
        .iter()
        .map(|row| row.iter().map(|v| BigRational::from(v.clone()) / &d_rat).collect())
        .collect();
    let mut basis = lll_reduce(&scaled)?;
    basis.sort_by(|a, b| sup_norm(a).cmp(&sup_norm(b)));

    let s_rat = BigRational::from(BigInt::from(rank as i64));
    let weights: Vec<BigRational> = basis
        .iter()
        .map(|w| (&s_rat * sup_norm(w)).recip())
        .collect();

    // Find group elements whose pairing vector matches each basis row mod
    // Z^S; existence is guaranteed by the construction of Gamma.
    let mut gens = Vec::with_capacity(rank);
    for w in &basis {
        let mut found = None;
        'scan: for x in g.iter_elements() {
            for (xi, wc) in s.freqs().iter().zip(w) {
                let diff = wc - pairing(&g, xi, &x).rational();
                if !diff.is_integer() {
                    continue 'scan;
                }
            }
            found = Some(x);
            break;
        }
        let Some(x) = found else {
            return Err(Error::GuaranteeViolated(format!(
                "no group element lifts basis vector {w:?}"
            )));
        };
        gens.push(x);
    }

    let basis_inv = rat_inverse(&basis).ok_or_else(|| {
        Error::GuaranteeViolated("reduced basis is singular".into())
    })?;

    // c = min_i N_i / ||column_i of W^{-1}||_1 makes the sandwich
    // { |theta| < c t } subset { |n_i| < t N_i } hold for every t.
    let mut john = None;
    for i in 0..rank {
        let col_l1: BigRational = (0..rank).map(|j| basis_inv[j][i].abs()).sum();
        let c = &weights[i] / col_l1;
        if john.as_ref().is_none_or(|j| c < *j) {
            john = Some(c);
        }
    }

    Ok(LiftStructure {
        s: s.clone(),
        kernel,
        kernel_pos,
        decomp,
        basis,
        weights,
        gens,
        basis_inv,
        john_constant: john.unwrap(),
    })
}

/// A bilinear form given by a value table on a Bohr set.
#[derive(Debug, Clone)]
pub struct LocalBilinearForm {
    domain: BohrSet,
    /// Indexed by member positions.
    table: Vec<Vec<TorusValue>>,
    symmetric: bool,
}

impl LocalBilinearForm {
    pub fn new(domain: BohrSet, table: Vec<Vec<TorusValue>>) -> Result<Self> {
        let n = domain.cardinality();
        if table.len() != n || table.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: table.len(),
            });
        }
        let mut symmetric = true;
        'sym: for i in 0..n {
            for j in 0..i {
                if table[i][j] != table[j][i] {
                    symmetric = false;
                    break 'sym;
                }
            }
        }
        Ok(LocalBilinearForm {
            domain,
            table,
            symmetric,
        })
    }

    pub fn domain(&self) -> &BohrSet {
        &self.domain
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn value_at(&self, i: usize, j: usize) -> &TorusValue {
        &self.table[i][j]
    }

    fn member_pos(&self, x: &GroupElement) -> Option<usize> {
        let idx = self.domain.group().index_of(x);
        self.domain.member_indices().binary_search(&idx).ok()
    }

    pub fn value(&self, x: &GroupElement, y: &GroupElement) -> Option<&TorusValue> {
        Some(&self.table[self.member_pos(x)?][self.member_pos(y)?])
    }

    /// Exhaustive additivity check in both slots; errors with a witness.
    pub fn verify_locally_bilinear(&self, budget: &Budget) -> Result<()> {
        let members = self.domain.members();
        let n = members.len();
        budget.check_work((n as u128).pow(3) * 2)?;
        let g = self.domain.group();
        for i1 in 0..n {
            for i2 in 0..n {
                let sum = g.add(&members[i1], &members[i2]);
                let Some(is) = self.member_pos(&sum) else { continue };
                for j in 0..n {
                    let left = &self.table[is][j];
                    let parts = &self.table[i1][j] + &self.table[i2][j];
                    if *left != parts {
                        return Err(Error::NotLocallyBilinear(format!(
                            "B({:?}+{:?},{:?}) != B({:?},{:?}) + B({:?},{:?})",
                            members[i1], members[i2], members[j],
                            members[i1], members[j], members[i2], members[j]
                        )));
                    }
                    let right = &self.table[j][is];
                    let rparts = &self.table[j][i1] + &self.table[j][i2];
                    if *right != rparts {
                        return Err(Error::NotLocallyBilinear(format!(
                            "B({:?},{:?}+{:?}) != B({:?},{:?}) + B({:?},{:?})",
                            members[j], members[i1], members[i2],
                            members[j], members[i1], members[j], members[i2]
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Bilinear form on the presentation K x Z^s, stored on generator blocks.
#[derive(Debug, Clone)]
pub struct GlobalBilinearForm {
    lift: LiftStructure,
    /// Kernel-by-kernel values, dense over kernel positions.
    kk: Vec<Vec<TorusValue>>,
    /// Kernel-by-generator and generator-by-kernel blocks.
    kv: Vec<Vec<TorusValue>>,
    vk: Vec<Vec<TorusValue>>,
    /// Generator-by-generator block.
    vv: Vec<Vec<TorusValue>>,
    active: Vec<bool>,
    symmetric: bool,
    /// Largest lattice-norm shell on which agreement with the source local
    /// form was verified exhaustively.
    certified_radius: BigRational,
    source_rho: BigRational,
}

impl GlobalBilinearForm {
    pub fn lift(&self) -> &LiftStructure {
        &self.lift
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    /// Agreement with the source local form holds for all lifted pairs
    /// with both norms at most this radius.
    pub fn certified_radius(&self) -> &BigRational {
        &self.certified_radius
    }

    pub fn source_rho(&self) -> &BigRational {
        &self.source_rho
    }

    pub fn value(&self, p: &FgPoint, q: &FgPoint) -> Result<TorusValue> {
        let yp = self.lift.kernel_position(&p.y).ok_or_else(|| {
            Error::Precondition("first argument is not reduced to the kernel".into())
        })?;
        let yq = self.lift.kernel_position(&q.y).ok_or_else(|| {
            Error::Precondition("second argument is not reduced to the kernel".into())
        })?;
        let mut acc = self.kk[yp][yq].clone();
        for (j, mj) in q.n.iter().enumerate() {
            acc = &acc + &self.kv[yp][j].mul_bigint(mj);
        }
        for (i, ni) in p.n.iter().enumerate() {
            acc = &acc + &self.vk[i][yq].mul_bigint(ni);
        }
        for (i, ni) in p.n.iter().enumerate() {
            for (j, mj) in q.n.iter().enumerate() {
                acc = &acc + &self.vv[i][j].mul_bigint(ni).mul_bigint(mj);
            }
        }
        Ok(acc)
    }

    pub fn value_on_lifted(&self, a: &LiftedElement, b: &LiftedElement) -> Result<TorusValue> {
        let p = self.lift.decompose(a)?;
        let q = self.lift.decompose(b)?;
        self.value(&p, &q)
    }
}

/// Extend a locally bilinear form on Bohr(S, rho) to a global bilinear
/// form on K x Z^s.
///
/// Generator values are read off the local form: kernel pairs directly
/// (kernel elements have seminorm 0), and lifted generators v_i through
/// their group parts g_i, but only for active directions (N_i > 1 and
/// sup|w_i| < rho); inactive directions carry no bilinear data. The
/// returned form is globally bilinear by construction; the radius on which
/// it provably reproduces the input is certified by exhaustive comparison
/// and reported.
pub fn globalize_bilinear(
    b: &LocalBilinearForm,
    lift: &LiftStructure,
    budget: &Budget,
) -> Result<GlobalBilinearForm> {
    b.verify_locally_bilinear(budget)?;
    let rho = b.domain().rho().clone();
    let s = lift.rank();
    let one = BigRational::one();

    let active: Vec<bool> = (0..s)
        .map(|i| lift.weights[i] > one && sup_norm(&lift.basis[i]) < rho)
        .collect();

    let kpos_of = |y: &GroupElement| -> usize {
        b.member_pos(y).expect("kernel elements have seminorm 0 < rho")
    };
    let kk: Vec<Vec<TorusValue>> = lift
        .kernel
        .iter()
        .map(|y1| {
            let p1 = kpos_of(y1);
            lift.kernel
                .iter()
                .map(|y2| b.value_at(p1, kpos_of(y2)).clone())
                .collect()
        })
        .collect();
    let zero = TorusValue::zero();
    let kv: Vec<Vec<TorusValue>> = lift
        .kernel
        .iter()
        .map(|y| {
            (0..s)
                .map(|i| {
                    if active[i] {
                        b.value(y, &lift.gens[i]).cloned().unwrap_or_else(|| zero.clone())
                    } else {
                        zero.clone()
                    }
                })
                .collect()
        })
        .collect();
    let vk: Vec<Vec<TorusValue>> = (0..s)
        .map(|i| {
            lift.kernel
                .iter()
                .map(|y| {
                    if active[i] {
                        b.value(&lift.gens[i], y).cloned().unwrap_or_else(|| zero.clone())
                    } else {
                        zero.clone()
                    }
                })
                .collect()
        })
        .collect();
    let vv: Vec<Vec<TorusValue>> = (0..s)
        .map(|i| {
            (0..s)
                .map(|j| {
                    if active[i] && active[j] {
                        b.value(&lift.gens[i], &lift.gens[j])
                            .cloned()
                            .unwrap_or_else(|| zero.clone())
                    } else {
                        zero.clone()
                    }
                })
                .collect()
        })
        .collect();

    let mut out = GlobalBilinearForm {
        lift: lift.clone(),
        kk,
        kv,
        vk,
        vv,
        active,
        symmetric: b.is_symmetric(),
        certified_radius: BigRational::zero(),
        source_rho: rho.clone(),
    };

    // Certify the agreement radius shell by shell. Points are all lifted
    // elements (y + sum n_i g_i, theta(n)) with norm below rho; kernel
    // pairs (the norm-0 shell) agree by definition, so the certificate is
    // never empty.
    let lattice = lift.small_lattice_points(&rho, budget)?;
    let mut points: Vec<(FgPoint, usize, BigRational)> = Vec::new();
    for (n, _theta, norm) in &lattice {
        for y in &lift.kernel {
            let p = FgPoint {
                y: y.clone(),
                n: n.clone(),
            };
            let x = lift.compose(&p).x;
            let pos = b.member_pos(&x).ok_or_else(|| {
                Error::GuaranteeViolated("lifted point left the Bohr set".into())
            })?;
            points.push((p, pos, norm.clone()));
        }
    }
    budget.check_work((points.len() as u128).pow(2))?;
    let mut norms: Vec<BigRational> = points.iter().map(|(_, _, n)| n.clone()).collect();
    norms.sort();
    norms.dedup();
    let mut certified = BigRational::zero();
    'shells: for shell in &norms {
        let in_shell: Vec<&(FgPoint, usize, BigRational)> =
            points.iter().filter(|(_, _, n)| n <= shell).collect();
        for (p, pi, _) in &in_shell {
            for (q, qi, _) in &in_shell {
                let global = out.value(p, q)?;
                let local = b.value_at(*pi, *qi);
                if global != *local {
                    break 'shells;
                }
            }
        }
        certified = shell.clone();
    }
    out.certified_radius = certified;
    Ok(out)
}

/// Quadratic phase on the presentation K x Z^s, in closed form.
#[derive(Debug, Clone)]
pub struct GlobalQuadraticPhase {
    lift: LiftStructure,
    /// Self coefficients m_a of the finite generators: beta_aa = m_a / d_a.
    finite_m: Vec<BigInt>,
    /// Self coefficients of the infinite generators (any representative).
    infinite_self: Vec<TorusValue>,
    /// Symmetric cross-term table over all generators, finite ones first.
    cross: Vec<Vec<TorusValue>>,
}

impl GlobalQuadraticPhase {
    pub fn lift(&self) -> &LiftStructure {
        &self.lift
    }

    /// phi(y + sum n_i v_i), exact when all inputs are exact.
    pub fn eval(&self, p: &FgPoint) -> Result<TorusValue> {
        let pos = self.lift.kernel_position(&p.y).ok_or_else(|| {
            Error::Precondition("point is not reduced to the kernel".into())
        })?;
        let coords = self.lift.decomp.coords_of(pos);
        let orders = &self.lift.decomp.orders;
        let pcount = orders.len();
        let mut acc = TorusValue::zero();

        // Finite factors: m binom(x,2)/d - m x binom(d,2)/d^2, the
        // d-periodic integral of B(x, y) = m x y / d.
        for (a, (&x, &d)) in coords.iter().zip(orders).enumerate() {
            let m = &self.finite_m[a];
            let x = BigInt::from(x);
            let d_big = BigInt::from(d);
            let binom_x = &x * (&x - BigInt::one()) / BigInt::from(2);
            let binom_d = &d_big * (&d_big - BigInt::one()) / BigInt::from(2);
            let t1 = BigRational::new(m * binom_x, d_big.clone());
            let t2 = BigRational::new(m * &x * binom_d, &d_big * &d_big);
            acc = &acc + &TorusValue::from_rational(t1 - t2);
        }
        // Infinite factors: beta n^2 / 2. Division by 2 is not defined on
        // the torus, so the stored representative is used directly.
        for (i, ni) in p.n.iter().enumerate() {
            let sq = ni * ni;
            let term = match &self.infinite_self[i] {
                TorusValue::Exact(r) => {
                    TorusValue::from_rational(r * BigRational::new(sq, BigInt::from(2)))
                }
                TorusValue::Real(v) => {
                    TorusValue::from_f64(v * sq.to_f64().unwrap_or(f64::NAN) / 2.0)
                }
            };
            acc = &acc + &term;
        }
        // Cross terms x_a x_b beta_ab over distinct generator pairs.
        let coord_int = |k: usize| -> BigInt {
            if k < pcount {
                BigInt::from(coords[k])
            } else {
                p.n[k - pcount].clone()
            }
        };
        let total = pcount + p.n.len();
        for a in 0..total {
            for bidx in a + 1..total {
                let prod = coord_int(a) * coord_int(bidx);
                acc = &acc + &self.cross[a][bidx].mul_bigint(&prod);
            }
        }
        Ok(acc)
    }

    pub fn eval_lifted(&self, a: &LiftedElement) -> Result<TorusValue> {
        self.eval(&self.lift.decompose(a)?)
    }
}

/// Integrate a symmetric global bilinear form: produce phi with
/// phi(p + q) = phi(p) + phi(q) + B(p, q) identically.
pub fn integrate_global(bform: &GlobalBilinearForm) -> Result<GlobalQuadraticPhase> {
    let lift = &bform.lift;
    let kn = lift.kernel.len();
    let s = lift.rank();
    // Symmetry is a hard precondition; verify it on the stored tables.
    for i in 0..kn {
        for j in 0..i {
            if bform.kk[i][j] != bform.kk[j][i] {
                return Err(Error::NotSymmetric { i, j });
            }
        }
    }
    for y in 0..kn {
        for i in 0..s {
            if bform.kv[y][i] != bform.vk[i][y] {
                return Err(Error::NotSymmetric { i: y, j: i });
            }
        }
    }
    for i in 0..s {
        for j in 0..i {
            if bform.vv[i][j] != bform.vv[j][i] {
                return Err(Error::NotSymmetric { i, j });
            }
        }
    }

    let gens = &lift.decomp.generators;
    let orders = &lift.decomp.orders;
    let pcount = gens.len();
    let gen_pos: Vec<usize> = gens
        .iter()
        .map(|c| lift.kernel_position(c).expect("generators lie in the kernel"))
        .collect();

    let require_exact = |v: &TorusValue, what: &str| -> Result<BigRational> {
        match v {
            TorusValue::Exact(r) => Ok(r.clone()),
            TorusValue::Real(_) => Err(Error::Precondition(format!(
                "integration over a torsion generator needs exact values ({what})"
            ))),
        }
    };

    // beta_aa = m_a / d_a; the torsion condition d_a beta_aa = 0 mod 1 is
    // forced by bilinearity and is re-checked here.
    let mut finite_m = Vec::with_capacity(pcount);
    for a in 0..pcount {
        let beta = &bform.kk[gen_pos[a]][gen_pos[a]];
        let r = require_exact(beta, "kernel self term")?;
        let scaled = r * BigRational::from(BigInt::from(orders[a]));
        if !scaled.is_integer() {
            return Err(Error::TorsionIncompatible(format!(
                "order {} times self coefficient is not integral",
                orders[a]
            )));
        }
        finite_m.push(scaled.to_integer().mod_floor(&BigInt::from(orders[a])));
    }
    let infinite_self: Vec<TorusValue> = (0..s).map(|i| bform.vv[i][i].clone()).collect();

    // Cross table over all generators; torsion checks for every pair that
    // involves a finite generator.
    let total = pcount + s;
    let mut cross = vec![vec![TorusValue::zero(); total]; total];
    let entry = |a: usize, bidx: usize| -> TorusValue {
        match (a < pcount, bidx < pcount) {
            (true, true) => bform.kk[gen_pos[a]][gen_pos[bidx]].clone(),
            (true, false) => bform.kv[gen_pos[a]][bidx - pcount].clone(),
            (false, true) => bform.vk[a - pcount][gen_pos[bidx]].clone(),
            (false, false) => bform.vv[a - pcount][bidx - pcount].clone(),
        }
    };
    for a in 0..total {
        for bidx in a + 1..total {
            let beta = entry(a, bidx);
            if a < pcount || bidx < pcount {
                let r = require_exact(&beta, "cross term with a torsion generator")?;
                for idx in [a, bidx] {
                    if idx < pcount {
                        let scaled = &r * BigRational::from(BigInt::from(orders[idx]));
                        if !scaled.is_integer() {
                            return Err(Error::TorsionIncompatible(format!(
                                "order {} times cross coefficient {r} is not integral",
                                orders[idx]
                            )));
                        }
                    }
                }
            }
            cross[a][bidx] = beta.clone();
            cross[bidx][a] = beta;
        }
    }

    Ok(GlobalQuadraticPhase {
        lift: lift.clone(),
        finite_m,
        infinite_self,
        cross,
    })
}

/// A phase table on a Bohr set.
#[derive(Debug, Clone)]
pub struct LocalPhase {
    domain: BohrSet,
    values: Vec<TorusValue>,
}

impl LocalPhase {
    pub fn new(domain: BohrSet, values: Vec<TorusValue>) -> Result<Self> {
        if values.len() != domain.cardinality() {
            return Err(Error::DimensionMismatch {
                expected: domain.cardinality(),
                got: values.len(),
            });
        }
        Ok(LocalPhase { domain, values })
    }

    pub fn domain(&self) -> &BohrSet {
        &self.domain
    }

    pub fn value(&self, x: &GroupElement) -> Option<&TorusValue> {
        let idx = self.domain.group().index_of(x);
        let pos = self.domain.member_indices().binary_search(&idx).ok()?;
        Some(&self.values[pos])
    }

    pub fn values(&self) -> &[TorusValue] {
        &self.values
    }
}

/// Output of local integration.
#[derive(Debug, Clone)]
pub struct LocalQuadraticData {
    /// Largest certified radius: the cocycle identity holds exhaustively
    /// on Bohr(S, rho'/2), and the global phase restricts to `phase` on
    /// all lifts with norm below rho'.
    pub rho_prime: BigRational,
    pub phase: LocalPhase,
    pub global: GlobalQuadraticPhase,
    pub bilinear: GlobalBilinearForm,
}

/// Integrate a symmetric locally bilinear form on Bohr(S, rho): globalise,
/// integrate globally, and restrict back to the largest radius rho' whose
/// cocycle identity passes an exhaustive check.
pub fn integrate_local(
    b: &LocalBilinearForm,
    lift: &LiftStructure,
    budget: &Budget,
) -> Result<LocalQuadraticData> {
    if !b.is_symmetric() {
        return Err(Error::Precondition(
            "local integration requires a symmetric form".into(),
        ));
    }
    let bform = globalize_bilinear(b, lift, budget)?;
    let global = integrate_global(&bform)?;
    let g = lift.group();
    let rho = b.domain().rho().clone();

    // Candidate radii: rho itself, then 2 * (each distinct seminorm value)
    // so that Bohr(r/2) runs through every possible member set, and the
    // smallest positive seminorm as a floor (kernel pairs always pass).
    let mut seminorms: Vec<BigRational> =
        g.iter_elements().map(|x| bohr_seminorm(lift.frequency_set(), &x)).collect();
    seminorms.sort();
    seminorms.dedup();
    let two = BigRational::from(BigInt::from(2));
    let mut candidates: Vec<BigRational> = vec![rho.clone()];
    for v in &seminorms {
        if v.is_zero() {
            continue;
        }
        let r = v * &two;
        if r < rho && !r.is_zero() {
            candidates.push(r);
        }
    }
    if let Some(min_pos) = seminorms.iter().find(|v| !v.is_zero()) {
        if *min_pos < rho {
            candidates.push(min_pos.clone());
        }
    }
    candidates.sort();
    candidates.dedup();
    candidates.reverse();

    let phi_of = |x: &GroupElement| -> Result<TorusValue> {
        global.eval_lifted(&lift.canonical_lift(x))
    };

    let mut chosen: Option<(BigRational, BohrSet)> = None;
    for r in &candidates {
        let half_r = r / &two;
        if half_r.is_zero() {
            continue;
        }
        let inner = bohr_enumerate(lift.frequency_set(), &half_r, budget)?;
        let m = inner.cardinality();
        budget.check_work((m as u128).pow(2))?;
        let mut ok = true;
        'pairs: for x in inner.members() {
            let px = phi_of(x)?;
            for y in inner.members() {
                let sum = g.add(x, y);
                let lhs = phi_of(&sum)?;
                let rhs = &(&px + &phi_of(y)?)
                    + b.value(x, y).ok_or_else(|| {
                        Error::GuaranteeViolated("cocycle pair left the source domain".into())
                    })?;
                if lhs != rhs {
                    ok = false;
                    break 'pairs;
                }
            }
        }
        if ok {
            let dom = bohr_enumerate(lift.frequency_set(), r, budget)?;
            chosen = Some((r.clone(), dom));
            break;
        }
    }
    let Some((rho_prime, dom)) = chosen else {
        return Err(Error::SearchExhausted(
            "no candidate radius passed the cocycle check".into(),
        ));
    };

    let values: Result<Vec<TorusValue>> = dom.members().iter().map(|x| phi_of(x)).collect();
    let phase = LocalPhase::new(dom, values?)?;
    Ok(LocalQuadraticData {
        rho_prime,
        phase,
        global,
        bilinear: bform,
    })
}

/// Witness of a failing third-derivative check.
#[derive(Debug, Clone)]
pub struct QuadWitness {
    pub x: GroupElement,
    pub h: GroupElement,
    pub k: GroupElement,
    pub l: GroupElement,
}

/// Check that all third additive derivatives of the phase vanish on every
/// tuple whose eight evaluation points stay inside the domain. Returns a
/// witness tuple when some derivative is nonzero.
pub fn verify_local_quadratic(
    phase: &LocalPhase,
    budget: &Budget,
) -> Result<Option<QuadWitness>> {
    let g = phase.domain().group();
    let members = phase.domain().members();
    let n = g.len();
    budget.check_work((members.len() as u128) * (n as u128).pow(3))?;
    for x in members {
        for h in g.iter_elements() {
            if phase.value(&g.add(x, &h)).is_none() {
                continue;
            }
            for k in g.iter_elements() {
                if phase.value(&g.add(x, &k)).is_none()
                    || phase.value(&g.add(&g.add(x, &h), &k)).is_none()
                {
                    continue;
                }
                'l_loop: for l in g.iter_elements() {
                    let mut acc = TorusValue::zero();
                    for mask in 0..8u32 {
                        let mut pt = x.clone();
                        if mask & 1 != 0 {
                            pt = g.add(&pt, &h);
                        }
                        if mask & 2 != 0 {
                            pt = g.add(&pt, &k);
                        }
                        if mask & 4 != 0 {
                            pt = g.add(&pt, &l);
                        }
                        let Some(v) = phase.value(&pt) else { continue 'l_loop };
                        if mask.count_ones() % 2 == 0 {
                            acc = &acc + v;
                        } else {
                            acc = &acc - v;
                        }
                    }
                    if !acc.is_zero() {
                        return Ok(Some(QuadWitness {
                            x: x.clone(),
                            h: h.clone(),
                            k: k.clone(),
                            l: l.clone(),
                        }));
                    }
                }
            }
        }
    }
    Ok(None)
}
